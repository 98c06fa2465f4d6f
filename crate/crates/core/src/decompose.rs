//! Decomposition of a class head vector into `k` part-prototypes.
//!
//! The pipeline for one class is: NMF on the class's features gives initial
//! prototypes `P`; least squares gives scales `alpha`; the residual
//! `R = v - sum(alpha_i p_i)` is split into parts `r_i` (naively, or by the
//! heatmap-preserving simplex refinement); and the refined prototypes
//! `p~_i = alpha_i p_i + r_i` sum back to `v`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{load_feature_stack, ClassHead, DatasetError, DatasetManifest};
use crate::linalg::{least_squares_rows, SolveMethod};
use crate::nmf::{factorize, NmfConfig, NmfError};
use crate::simplex::{minimize, NelderMeadConfig, SimplexError};

/// Added to the min-max range so constant columns normalize to zero.
pub const NORM_EPS: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum DecomposeError {
    #[error("k must be at least 1")]
    ZeroK,
    #[error("non-finite values in {0}")]
    NonFinite(&'static str),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("coefficients sum to zero; residual cannot be split proportionally")]
    DegenerateCoefficients,
    #[error("refinement: {0}")]
    Refinement(#[from] SimplexError),
    #[error("nmf: {0}")]
    Nmf(#[from] NmfError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RefinementMode {
    Naive,
    #[default]
    Dynamic,
}

impl std::fmt::Display for RefinementMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RefinementMode::Naive => "naive",
            RefinementMode::Dynamic => "dynamic",
        })
    }
}

impl std::str::FromStr for RefinementMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "naive" => Ok(RefinementMode::Naive),
            "dynamic" => Ok(RefinementMode::Dynamic),
            other => Err(format!("unknown mode '{other}' (expected naive|dynamic)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NormMode {
    /// `(h - min) / (max - min + eps)` over the whole column.
    #[default]
    MinmaxGlobal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefineConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub norm_mode: NormMode,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            tol: 1e-6,
            max_iter: 100,
            norm_mode: NormMode::MinmaxGlobal,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct DecomposeConfig {
    pub nmf: NmfConfig,
    pub refine: RefineConfig,
    pub mode: RefinementMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NmfSummary {
    pub iterations: usize,
    pub converged: bool,
    pub error_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassDecomposition {
    pub class_id: usize,
    pub k: usize,
    /// Initial prototypes `P` (k x D).
    pub prototypes: Array2<f64>,
    pub alpha: Array1<f64>,
    pub residual: Array1<f64>,
    /// Residual parts `r_i` (k x D).
    pub residual_parts: Array2<f64>,
    /// Refined prototypes `p~_i` (k x D).
    pub refined: Array2<f64>,
    pub mode: RefinementMode,
    pub objective_trace: Vec<f64>,
    pub refine_iterations: usize,
    pub refine_converged: bool,
    /// Set when the coefficients summed to zero and the residual was split uniformly.
    pub uniform_fallback: bool,
    pub solve_method: SolveMethod,
    pub nmf: NmfSummary,
}

impl ClassDecomposition {
    /// `sum_i p~_i`, which equals the class head vector.
    pub fn head(&self) -> Array1<f64> {
        self.refined.sum_axis(Axis(0))
    }

    /// `max |v - sum p~_i|`.
    pub fn reconstruction_error(&self, v: ArrayView1<f64>) -> f64 {
        (&v - &self.head()).iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// `max |sum r_i - R|`.
    pub fn constraint_violation(&self) -> f64 {
        (&self.residual_parts.sum_axis(Axis(0)) - &self.residual)
            .iter()
            .fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn initial_objective(&self) -> f64 {
        self.objective_trace[0]
    }

    pub fn final_objective(&self) -> f64 {
        *self.objective_trace.last().expect("non-empty trace")
    }
}

fn check_finite<'a>(
    xs: impl IntoIterator<Item = &'a f64>,
    what: &'static str,
) -> Result<(), DecomposeError> {
    if xs.into_iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(DecomposeError::NonFinite(what))
    }
}

/// Least-squares scales for the prototypes: minimizes `||v - sum alpha_i p_i||^2`.
pub fn scale_prototypes(
    v: ArrayView1<f64>,
    prototypes: ArrayView2<f64>,
) -> Result<Array1<f64>, DecomposeError> {
    scale_with_method(v, prototypes).map(|(a, _)| a)
}

fn scale_with_method(
    v: ArrayView1<f64>,
    prototypes: ArrayView2<f64>,
) -> Result<(Array1<f64>, SolveMethod), DecomposeError> {
    if prototypes.nrows() == 0 {
        return Err(DecomposeError::ZeroK);
    }
    if prototypes.ncols() != v.len() {
        return Err(DecomposeError::ShapeMismatch(format!(
            "prototypes have {} channels, head has {}",
            prototypes.ncols(),
            v.len()
        )));
    }
    check_finite(v.iter(), "head vector")?;
    check_finite(prototypes.iter(), "prototypes")?;
    Ok(least_squares_rows(prototypes, v))
}

/// `R = v - sum alpha_i p_i`.
pub fn compute_residual(
    v: ArrayView1<f64>,
    prototypes: ArrayView2<f64>,
    alpha: ArrayView1<f64>,
) -> Result<Array1<f64>, DecomposeError> {
    if prototypes.nrows() != alpha.len() || prototypes.ncols() != v.len() {
        return Err(DecomposeError::ShapeMismatch(format!(
            "P is {:?}, alpha has {}, v has {}",
            prototypes.dim(),
            alpha.len(),
            v.len()
        )));
    }
    Ok(&v - &prototypes.t().dot(&alpha))
}

/// Replaces the last row so that the rows sum to `residual` exactly up to
/// one pass of floating-point addition.
fn close_constraint(parts: &mut Array2<f64>, residual: ArrayView1<f64>) {
    let k = parts.nrows();
    let mut last = residual.to_owned();
    for i in 0..k - 1 {
        last -= &parts.row(i);
    }
    parts.row_mut(k - 1).assign(&last);
}

/// Proportional split `r_i = alpha_i R / sum(alpha)`.
pub fn naive_distribute(
    residual: ArrayView1<f64>,
    alpha: ArrayView1<f64>,
) -> Result<Array2<f64>, DecomposeError> {
    let k = alpha.len();
    if k == 0 {
        return Err(DecomposeError::ZeroK);
    }
    let sum: f64 = alpha.sum();
    let abs_sum: f64 = alpha.iter().map(|a| a.abs()).sum();
    if abs_sum == 0.0 || sum.abs() <= 1e-12 * abs_sum {
        return Err(DecomposeError::DegenerateCoefficients);
    }
    let mut parts = Array2::from_shape_fn((k, residual.len()), |(i, d)| alpha[i] * residual[d] / sum);
    close_constraint(&mut parts, residual);
    Ok(parts)
}

/// Equal split `r_i = R / k`, the fallback for degenerate coefficients.
pub fn uniform_distribute(residual: ArrayView1<f64>, k: usize) -> Array2<f64> {
    let mut parts = Array2::from_shape_fn((k, residual.len()), |(_, d)| residual[d] / k as f64);
    close_constraint(&mut parts, residual);
    parts
}

fn naive_or_uniform(residual: ArrayView1<f64>, alpha: ArrayView1<f64>) -> (Array2<f64>, bool) {
    match naive_distribute(residual, alpha) {
        Ok(parts) => (parts, false),
        Err(_) => (uniform_distribute(residual, alpha.len()), true),
    }
}

/// Min-max normalization of one spatial activation column.
pub fn spatial_norm(h: ArrayView1<f64>) -> Array1<f64> {
    let (min, max) = min_max(h);
    let range = max - min + NORM_EPS;
    h.mapv(|x| (x - min) / range)
}

fn min_max(h: ArrayView1<f64>) -> (f64, f64) {
    h.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

fn norm_distance(target: ArrayView1<f64>, h: ArrayView1<f64>) -> f64 {
    let (min, max) = min_max(h);
    let range = max - min + NORM_EPS;
    target
        .iter()
        .zip(h.iter())
        .map(|(t, x)| {
            let d = t - (x - min) / range;
            d * d
        })
        .sum()
}

/// `sum_i ||Norm(F p_i) - Norm(F r_i)||^2` for full residual parts (k x D).
pub fn refinement_objective(
    features: ArrayView2<f64>,
    prototypes: ArrayView2<f64>,
    parts: ArrayView2<f64>,
) -> f64 {
    let targets = features.dot(&prototypes.t());
    let acts = features.dot(&parts.t());
    (0..prototypes.nrows())
        .map(|i| norm_distance(spatial_norm(targets.column(i)).view(), acts.column(i)))
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Refinement {
    pub parts: Array2<f64>,
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub uniform_fallback: bool,
}

/// Splits `R` into parts whose heatmaps over `F` match those of the initial
/// prototypes, subject to `sum r_i = R`.
///
/// Only the first `k - 1` parts are free; the last is `R - sum(others)`.
/// The simplex starts from the naive split, so the result is never worse
/// than it.
pub fn refine_prototypes(
    features: ArrayView2<f64>,
    prototypes: ArrayView2<f64>,
    alpha: ArrayView1<f64>,
    residual: ArrayView1<f64>,
    cfg: &RefineConfig,
) -> Result<Refinement, DecomposeError> {
    let k = prototypes.nrows();
    if k == 0 {
        return Err(DecomposeError::ZeroK);
    }
    let d = prototypes.ncols();
    if features.ncols() != d || residual.len() != d || alpha.len() != k {
        return Err(DecomposeError::ShapeMismatch(format!(
            "F is {:?}, P is {:?}, alpha has {}, R has {}",
            features.dim(),
            prototypes.dim(),
            alpha.len(),
            residual.len()
        )));
    }
    check_finite(features.iter(), "features")?;
    check_finite(residual.iter(), "residual")?;

    let (init, uniform_fallback) = naive_or_uniform(residual, alpha);
    let targets: Vec<Array1<f64>> = {
        let acts = features.dot(&prototypes.t());
        (0..k).map(|i| spatial_norm(acts.column(i))).collect()
    };
    let residual_act = features.dot(&residual);

    let free = k - 1;
    let objective = |x: &[f64]| -> f64 {
        let mut total = 0.0;
        let mut last = residual_act.clone();
        if free > 0 {
            let parts = ArrayView2::from_shape((free, d), x).expect("length (k-1)*D");
            let acts = features.dot(&parts.t());
            for (target, col) in targets.iter().zip(acts.columns()) {
                last -= &col;
                total += norm_distance(target.view(), col);
            }
        }
        total + norm_distance(targets[k - 1].view(), last.view())
    };

    let x0: Vec<f64> = init.slice(ndarray::s![..free, ..]).iter().copied().collect();
    let nm_cfg = NelderMeadConfig {
        tol_x: cfg.tol,
        tol_f: cfg.tol,
        max_iter: cfg.max_iter,
        ..Default::default()
    };
    let result = minimize(objective, &x0, &nm_cfg)?;

    let mut parts = Array2::<f64>::zeros((k, d));
    if free > 0 {
        let best = ArrayView2::from_shape((free, d), &result.x).expect("length (k-1)*D");
        parts.slice_mut(ndarray::s![..free, ..]).assign(&best);
    }
    close_constraint(&mut parts, residual);

    Ok(Refinement {
        parts,
        objective_trace: result.trace,
        iterations: result.iterations,
        converged: result.converged,
        uniform_fallback,
    })
}

/// `p~_i = alpha_i p_i + r_i`.
pub fn assemble(
    prototypes: ArrayView2<f64>,
    alpha: ArrayView1<f64>,
    parts: ArrayView2<f64>,
) -> Result<Array2<f64>, DecomposeError> {
    if prototypes.dim() != parts.dim() || alpha.len() != prototypes.nrows() {
        return Err(DecomposeError::ShapeMismatch(format!(
            "P is {:?}, r is {:?}, alpha has {}",
            prototypes.dim(),
            parts.dim(),
            alpha.len()
        )));
    }
    let mut out = parts.to_owned();
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        row.scaled_add(alpha[i], &prototypes.row(i));
    }
    Ok(out)
}

/// Runs the whole pipeline for one class.
pub fn decompose_class(
    class_id: usize,
    features: ArrayView2<f64>,
    v: ArrayView1<f64>,
    cfg: &DecomposeConfig,
) -> Result<ClassDecomposition, DecomposeError> {
    if cfg.nmf.k == 0 {
        return Err(DecomposeError::ZeroK);
    }
    if features.ncols() != v.len() {
        return Err(DecomposeError::ShapeMismatch(format!(
            "features have {} channels, head has {}",
            features.ncols(),
            v.len()
        )));
    }
    let nmf = factorize(features, &cfg.nmf)?;
    let prototypes = nmf.prototypes;
    let (alpha, solve_method) = scale_with_method(v, prototypes.view())?;
    let residual = compute_residual(v, prototypes.view(), alpha.view())?;

    let (parts, trace, iterations, converged, uniform_fallback) = match cfg.mode {
        RefinementMode::Naive => {
            let (parts, fallback) = naive_or_uniform(residual.view(), alpha.view());
            let obj = refinement_objective(features, prototypes.view(), parts.view());
            (parts, vec![obj], 0, true, fallback)
        }
        RefinementMode::Dynamic => {
            let r = refine_prototypes(
                features,
                prototypes.view(),
                alpha.view(),
                residual.view(),
                &cfg.refine,
            )?;
            (r.parts, r.objective_trace, r.iterations, r.converged, r.uniform_fallback)
        }
    };
    let refined = assemble(prototypes.view(), alpha.view(), parts.view())?;
    tracing::debug!(
        class_id,
        objective = trace.last().copied().unwrap_or_default(),
        "class decomposed"
    );

    Ok(ClassDecomposition {
        class_id,
        k: cfg.nmf.k,
        prototypes,
        alpha,
        residual,
        residual_parts: parts,
        refined,
        mode: cfg.mode,
        objective_trace: trace,
        refine_iterations: iterations,
        refine_converged: converged,
        uniform_fallback,
        solve_method,
        nmf: NmfSummary {
            iterations: nmf.iterations,
            converged: nmf.converged,
            error_trace: nmf.error_trace,
        },
    })
}

#[derive(Debug)]
pub struct ClassFailure {
    pub class_id: usize,
    pub error: DecomposeError,
}

#[derive(Debug, Default)]
pub struct HeadDecomposition {
    pub classes: Vec<ClassDecomposition>,
    pub failures: Vec<ClassFailure>,
}

/// Decomposes every class listed in the manifest, in parallel. Per-class
/// failures are collected and do not stop the run. Output is ordered by
/// `class_id`.
pub fn decompose_head(
    manifest: &DatasetManifest,
    head: &ClassHead,
    cfg: &DecomposeConfig,
    clamp: bool,
) -> HeadDecomposition {
    let mut ids: Vec<usize> = manifest.classes.iter().map(|c| c.class_id).collect();
    ids.sort_unstable();
    let results: Vec<(usize, Result<ClassDecomposition, DecomposeError>)> = ids
        .par_iter()
        .map(|&class_id| {
            let run = || -> Result<ClassDecomposition, DecomposeError> {
                let v = head.row(class_id)?;
                let stack = load_feature_stack(manifest, class_id, clamp)?;
                decompose_class(class_id, stack.data.view(), v, cfg)
            };
            (class_id, run())
        })
        .collect();

    let mut out = HeadDecomposition::default();
    for (class_id, r) in results {
        match r {
            Ok(d) => out.classes.push(d),
            Err(error) => {
                tracing::warn!(class_id, %error, "class decomposition failed");
                out.failures.push(ClassFailure { class_id, error });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.random::<f64>())
    }

    #[test]
    fn scale_single_prototype() {
        let a = scale_prototypes(array![2.0, 0.0].view(), array![[1.0, 0.0]].view()).unwrap();
        assert!((a[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn scale_orthonormal() {
        let a = scale_prototypes(array![1.0, 1.0].view(), array![[1.0, 0.0], [0.0, 1.0]].view())
            .unwrap();
        assert!((a[0] - 1.0).abs() < 1e-15 && (a[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn scale_rejects_non_finite() {
        assert!(matches!(
            scale_prototypes(array![f64::NAN, 0.0].view(), array![[1.0, 0.0]].view()),
            Err(DecomposeError::NonFinite(_))
        ));
    }

    #[test]
    fn residual_cases() {
        let p = array![[1.0, 2.0, 0.0], [0.0, 1.0, 1.0]];
        let v = array![2.0, 7.0, 3.0]; // 2 p0 + 3 p1
        let a = scale_prototypes(v.view(), p.view()).unwrap();
        let r = compute_residual(v.view(), p.view(), a.view()).unwrap();
        assert!(r.iter().all(|x| x.abs() <= 1e-9));

        let p = array![[0.0, 1.0]];
        let v = array![1.0, 0.0];
        let a = scale_prototypes(v.view(), p.view()).unwrap();
        assert_eq!(a[0], 0.0);
        let r = compute_residual(v.view(), p.view(), a.view()).unwrap();
        assert_eq!(r, array![1.0, 0.0]);
    }

    #[test]
    fn naive_examples() {
        let r = array![4.0, 0.0, -1.0];
        let one = naive_distribute(r.view(), array![0.7].view()).unwrap();
        assert_eq!(one.row(0), r);

        let two = naive_distribute(r.view(), array![1.0, 1.0].view()).unwrap();
        assert_eq!(two.row(0), array![2.0, 0.0, -0.5]);
        assert_eq!(two.row(1), array![2.0, 0.0, -0.5]);

        let r = array![4.0, 0.0, 0.0, 0.0];
        let three = naive_distribute(r.view(), array![2.0, 1.0, 1.0].view()).unwrap();
        assert_eq!(three.row(0), array![2.0, 0.0, 0.0, 0.0]);
        assert_eq!(three.row(1), array![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(three.row(2), array![1.0, 0.0, 0.0, 0.0]);

        assert!(matches!(
            naive_distribute(r.view(), array![1.0, -1.0].view()),
            Err(DecomposeError::DegenerateCoefficients)
        ));
    }

    #[test]
    fn spatial_norm_cases() {
        let c = spatial_norm(array![3.0, 3.0, 3.0].view());
        assert!(c.iter().all(|&x| x == 0.0));
        let t = spatial_norm(array![0.0, 1.0].view());
        assert_eq!(t[0], 0.0);
        assert!((t[1] - 1.0).abs() < 1e-7);
    }

    #[test]
    fn refine_k1_has_no_free_variables() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = random(8, 4, &mut rng);
        let p = random(1, 4, &mut rng);
        let r = array![0.1, -0.2, 0.3, 0.0];
        let out =
            refine_prototypes(f.view(), p.view(), array![1.0].view(), r.view(), &RefineConfig::default())
                .unwrap();
        assert_eq!(out.parts.row(0), r);
        assert_eq!(out.objective_trace.len(), 1);
        assert_eq!(out.iterations, 0);
    }

    #[test]
    fn refine_zero_iterations_is_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = random(12, 5, &mut rng);
        let p = random(3, 5, &mut rng);
        let alpha = array![1.0, 2.0, 0.5];
        let r = array![0.3, -0.1, 0.2, 0.0, 0.4];
        let cfg = RefineConfig { max_iter: 0, ..Default::default() };
        let out = refine_prototypes(f.view(), p.view(), alpha.view(), r.view(), &cfg).unwrap();
        let naive = naive_distribute(r.view(), alpha.view()).unwrap();
        assert_eq!(out.parts, naive);
    }

    #[test]
    fn refine_errors() {
        let f = Array2::<f64>::ones((4, 2));
        let p = Array2::<f64>::ones((0, 2));
        assert!(matches!(
            refine_prototypes(f.view(), p.view(), array![].view(), array![0.0, 0.0].view(), &RefineConfig::default()),
            Err(DecomposeError::ZeroK)
        ));
    }

    #[test]
    fn assemble_cases() {
        let p = array![[1.0, 0.0], [0.0, 1.0]];
        let alpha = array![2.0, 3.0];
        let zero = Array2::<f64>::zeros((2, 2));
        let out = assemble(p.view(), alpha.view(), zero.view()).unwrap();
        assert_eq!(out, array![[2.0, 0.0], [0.0, 3.0]]);
        assert!(assemble(p.view(), alpha.view(), Array2::zeros((1, 2)).view()).is_err());
    }

    #[test]
    fn single_prototype_reconstructs_head_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let f = random(20, 6, &mut rng);
        let v = Array1::from_shape_fn(6, |_| rng.random::<f64>() - 0.5);
        let cfg = DecomposeConfig { nmf: NmfConfig::with_k(1), ..Default::default() };
        let d = decompose_class(0, f.view(), v.view(), &cfg).unwrap();
        assert!(d.reconstruction_error(v.view()) <= 1e-12);
    }

    #[test]
    fn zero_head() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = random(20, 6, &mut rng);
        let v = Array1::<f64>::zeros(6);
        let cfg = DecomposeConfig { nmf: NmfConfig::with_k(3), ..Default::default() };
        let d = decompose_class(0, f.view(), v.view(), &cfg).unwrap();
        assert!(d.alpha.iter().all(|&a| a == 0.0));
        assert!(d.head().iter().all(|&x| x.abs() <= 1e-15));
        assert!(d.uniform_fallback);
    }

    #[test]
    fn modes_share_stages_before_split() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = random(24, 6, &mut rng);
        let v = Array1::from_shape_fn(6, |_| rng.random::<f64>() - 0.3);
        let mut cfg = DecomposeConfig { nmf: NmfConfig { k: 2, seed: 7, ..Default::default() }, ..Default::default() };
        cfg.mode = RefinementMode::Naive;
        let naive = decompose_class(0, f.view(), v.view(), &cfg).unwrap();
        cfg.mode = RefinementMode::Dynamic;
        let dynamic = decompose_class(0, f.view(), v.view(), &cfg).unwrap();
        assert_eq!(naive.prototypes, dynamic.prototypes);
        assert_eq!(naive.alpha, dynamic.alpha);
        assert_eq!(naive.residual, dynamic.residual);
        assert_ne!(naive.residual_parts, dynamic.residual_parts);
        assert!(dynamic.final_objective() <= naive.final_objective());
    }
}
