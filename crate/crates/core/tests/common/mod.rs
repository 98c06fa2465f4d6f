//! Test-only generators and brute-force oracles. Nothing here calls into the
//! code paths it is used to check.

#![allow(dead_code)]

use nalgebra::DMatrix;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random::<f64>())
}

pub fn centered(len: usize, rng: &mut ChaCha8Rng) -> Array1<f64> {
    Array1::from_shape_fn(len, |_| rng.random::<f64>() * 2.0 - 1.0)
}

pub fn max_abs(xs: impl IntoIterator<Item = f64>) -> f64 {
    xs.into_iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Least-squares coefficients via the SVD pseudo-inverse: `alpha = pinv(P^T) v`.
pub fn pinv_coefficients(prototypes: &Array2<f64>, v: &Array1<f64>) -> Vec<f64> {
    let (k, d) = prototypes.dim();
    let pt = DMatrix::from_fn(d, k, |i, j| prototypes[[j, i]]);
    let pinv = pt.pseudo_inverse(1e-12).expect("svd converges");
    let vv = DMatrix::from_fn(d, 1, |i, _| v[i]);
    let a = pinv * vv;
    a.iter().copied().collect()
}

/// Min-max normalization written out with explicit loops.
pub fn norm_loop(h: &[f64]) -> Vec<f64> {
    let mut lo = h[0];
    let mut hi = h[0];
    for &x in h {
        if x < lo {
            lo = x;
        }
        if x > hi {
            hi = x;
        }
    }
    h.iter().map(|&x| (x - lo) / (hi - lo + 1e-8)).collect()
}

/// Heatmap-alignment objective `sum_i ||Norm(F p_i) - Norm(F r_i)||^2`, by loops.
pub fn refine_objective_loop(f: &Array2<f64>, p: &Array2<f64>, r: &Array2<f64>) -> f64 {
    let (rows, d) = f.dim();
    let mut total = 0.0;
    for i in 0..p.nrows() {
        let mut hp = vec![0.0; rows];
        let mut hr = vec![0.0; rows];
        for n in 0..rows {
            for c in 0..d {
                hp[n] += f[[n, c]] * p[[i, c]];
                hr[n] += f[[n, c]] * r[[i, c]];
            }
        }
        let (a, b) = (norm_loop(&hp), norm_loop(&hr));
        total += a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    }
    total
}

/// `Avg(x w^T)` as a double loop.
pub fn logit_loop(x: &Array2<f64>, w: &[f64]) -> f64 {
    let mut sum = 0.0;
    for j in 0..x.nrows() {
        let mut dot = 0.0;
        for d in 0..x.ncols() {
            dot += x[[j, d]] * w[d];
        }
        sum += dot;
    }
    sum / x.nrows() as f64
}

/// Bilinear resampling via the tent kernel: every source pixel contributes
/// `max(0, 1 - |dy|) * max(0, 1 - |dx|)` at the corner-aligned source position.
pub fn bilinear_tent(src: &Array2<f64>, out_h: usize, out_w: usize) -> Array2<f64> {
    let (h, w) = src.dim();
    let pos = |i: usize, out: usize, n: usize| {
        if out == 1 || n == 1 {
            0.0
        } else {
            i as f64 * (n - 1) as f64 / (out - 1) as f64
        }
    };
    Array2::from_shape_fn((out_h, out_w), |(i, j)| {
        let sy = pos(i, out_h, h);
        let sx = pos(j, out_w, w);
        let mut acc = 0.0;
        for r in 0..h {
            for c in 0..w {
                let wy = (1.0 - (sy - r as f64).abs()).max(0.0);
                let wx = (1.0 - (sx - c as f64).abs()).max(0.0);
                acc += wy * wx * src[[r, c]];
            }
        }
        acc
    })
}

/// Brute-force region test for one prototype on one image: `None` when the
/// upsampled map has no positive maximum, otherwise the set of visible parts
/// whose keypoint pixel clears `frac * max`.
pub fn region_parts(
    rows: ndarray::ArrayView2<f64>,
    grid: (usize, usize),
    prototype: ndarray::ArrayView1<f64>,
    ann: &pppn_core::KeypointAnnotation,
    frac: f64,
) -> Option<Vec<u32>> {
    let (h, w) = grid;
    let (ih, iw) = (ann.image_height as usize, ann.image_width as usize);
    let mut small = Array2::zeros((h, w));
    for n in 0..h * w {
        let mut dot = 0.0;
        for c in 0..prototype.len() {
            dot += rows[[n, c]] * prototype[c];
        }
        small[[n / w, n % w]] = dot;
    }
    let up = pppn_core::explain::upsample_bilinear(small.view(), ih, iw).expect("valid grid");
    let max = up.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max.is_nan() || max <= 0.0 {
        return None;
    }
    let mut parts = Vec::new();
    for kp in &ann.keypoints {
        if !kp.visible {
            continue;
        }
        let r = ((kp.y * ih as f64 / ih as f64).floor() as usize).min(ih - 1);
        let c = ((kp.x * iw as f64 / iw as f64).floor() as usize).min(iw - 1);
        if up[[r, c]] >= frac * max && !parts.contains(&kp.part_id) {
            parts.push(kp.part_id);
        }
    }
    parts.sort_unstable();
    Some(parts)
}

/// Recounted `(images, best_count)` for prototype `j` of a class.
pub fn recount_consistency(
    dec: &pppn_core::ClassDecomposition,
    stack: &pppn_core::FeatureStack,
    anns: &std::collections::BTreeMap<String, pppn_core::KeypointAnnotation>,
    j: usize,
    frac: f64,
) -> (usize, usize) {
    let mut counts = std::collections::BTreeMap::<u32, usize>::new();
    let mut images = 0;
    for i in 0..stack.n {
        let Some(ann) = anns.get(&stack.image_ids[i]) else { continue };
        let Some(parts) = region_parts(stack.image_rows(i), (stack.height, stack.width), dec.refined.row(j), ann, frac)
        else {
            continue;
        };
        images += 1;
        for p in parts {
            *counts.entry(p).or_default() += 1;
        }
    }
    (images, counts.values().copied().max().unwrap_or(0))
}

/// Recounted `(images, matches)` for prototype `j` under perturbation.
pub fn recount_stability(
    dec: &pppn_core::ClassDecomposition,
    clean: &pppn_core::FeatureStack,
    perturbed: &pppn_core::FeatureStack,
    anns: &std::collections::BTreeMap<String, pppn_core::KeypointAnnotation>,
    j: usize,
    frac: f64,
) -> (usize, usize) {
    let (mut images, mut matches) = (0, 0);
    for i in 0..clean.n {
        let Some(ann) = anns.get(&clean.image_ids[i]) else { continue };
        let grid = (clean.height, clean.width);
        let Some(a) = region_parts(clean.image_rows(i), grid, dec.refined.row(j), ann, frac) else { continue };
        images += 1;
        if region_parts(perturbed.image_rows(i), grid, dec.refined.row(j), ann, frac) == Some(a) {
            matches += 1;
        }
    }
    (images, matches)
}
