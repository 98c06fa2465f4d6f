//! Inference-time explanations: logits, per-prototype contributions,
//! heatmaps and test-time intervention.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decompose::ClassDecomposition;

#[derive(Debug, Error, PartialEq)]
pub enum ExplainError {
    #[error("feature map has {found} channels, expected {expected}")]
    ChannelMismatch { expected: usize, found: usize },
    #[error("feature map has {rows} rows for a {height}x{width} grid")]
    BadFeatureMap { rows: usize, height: usize, width: usize },
    #[error("no decompositions to predict with")]
    EmptyDecompositions,
    #[error("mask shape mismatch: {0}")]
    MaskShape(String),
    #[error("target size must be at least 1x1, got {0}x{1}")]
    ZeroTarget(usize, usize),
    #[error("empty grid")]
    EmptyGrid,
}

/// Spatial features of one image, flattened row-major to `(H*W) x D`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub image_id: String,
    pub height: usize,
    pub width: usize,
    pub x: Array2<f64>,
}

impl FeatureMap {
    pub fn new(image_id: impl Into<String>, height: usize, width: usize, x: Array2<f64>) -> Result<Self, ExplainError> {
        if x.nrows() != height * width || x.nrows() == 0 {
            return Err(ExplainError::BadFeatureMap {
                rows: x.nrows(),
                height,
                width,
            });
        }
        Ok(FeatureMap {
            image_id: image_id.into(),
            height,
            width,
            x,
        })
    }

    pub fn channels(&self) -> usize {
        self.x.ncols()
    }

    fn check_channels(&self, d: usize) -> Result<(), ExplainError> {
        if self.channels() != d {
            return Err(ExplainError::ChannelMismatch {
                expected: d,
                found: self.channels(),
            });
        }
        Ok(())
    }
}

/// `Avg(x v^T)`: the mean over positions of `x_j . v`.
pub fn class_logit(x: &FeatureMap, v: ArrayView1<f64>) -> Result<f64, ExplainError> {
    x.check_channels(v.len())?;
    Ok(x.x.dot(&v).mean().expect("non-empty map"))
}

/// `c_i = Avg(x p~_i^T)` for each refined prototype of a class.
pub fn contributions(x: &FeatureMap, dec: &ClassDecomposition) -> Result<Array1<f64>, ExplainError> {
    prototype_contributions(x, dec.refined.view())
}

pub fn prototype_contributions(
    x: &FeatureMap,
    prototypes: ArrayView2<f64>,
) -> Result<Array1<f64>, ExplainError> {
    x.check_channels(prototypes.ncols())?;
    Ok(x.x.dot(&prototypes.t()).mean_axis(Axis(0)).expect("non-empty map"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub image_id: String,
    pub prototype_index: usize,
    pub height: usize,
    pub width: usize,
    /// `x_j . p` for each position `j`, row-major.
    pub values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upsampled: Option<Grid>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl Grid {
    pub fn array(&self) -> Array2<f64> {
        Array2::from_shape_vec((self.height, self.width), self.values.clone()).expect("consistent grid")
    }
}

impl Heatmap {
    pub fn grid(&self) -> Array2<f64> {
        Array2::from_shape_vec((self.height, self.width), self.values.clone()).expect("consistent heatmap")
    }

    pub fn with_upsampled(mut self, height: usize, width: usize) -> Result<Self, ExplainError> {
        let up = upsample_bilinear(self.grid().view(), height, width)?;
        self.upsampled = Some(Grid {
            height,
            width,
            values: up.into_iter().collect(),
        });
        Ok(self)
    }
}

pub fn heatmap(x: &FeatureMap, p: ArrayView1<f64>, prototype_index: usize) -> Result<Heatmap, ExplainError> {
    x.check_channels(p.len())?;
    Ok(Heatmap {
        image_id: x.image_id.clone(),
        prototype_index,
        height: x.height,
        width: x.width,
        values: x.x.dot(&p).to_vec(),
        upsampled: None,
    })
}

/// Heatmaps of every refined prototype of a class.
pub fn class_heatmaps(x: &FeatureMap, dec: &ClassDecomposition) -> Result<Vec<Heatmap>, ExplainError> {
    dec.refined
        .rows()
        .into_iter()
        .enumerate()
        .map(|(i, p)| heatmap(x, p, i))
        .collect()
}

/// Corner-aligned bilinear resampling: output corners coincide with input corners.
pub fn upsample_bilinear(
    map: ArrayView2<f64>,
    height: usize,
    width: usize,
) -> Result<Array2<f64>, ExplainError> {
    if height == 0 || width == 0 {
        return Err(ExplainError::ZeroTarget(height, width));
    }
    let (h, w) = map.dim();
    if h == 0 || w == 0 {
        return Err(ExplainError::EmptyGrid);
    }
    let coord = |i: usize, out: usize, src: usize| -> (usize, usize, f64) {
        if out == 1 || src == 1 {
            return (0, 0, 0.0);
        }
        let pos = i as f64 * (src - 1) as f64 / (out - 1) as f64;
        let lo = (pos.floor() as usize).min(src - 2);
        (lo, lo + 1, pos - lo as f64)
    };
    let cols: Vec<_> = (0..width).map(|j| coord(j, width, w)).collect();
    let mut out = Array2::<f64>::zeros((height, width));
    for i in 0..height {
        let (y0, y1, ty) = coord(i, height, h);
        for (j, &(x0, x1, tx)) in cols.iter().enumerate() {
            let top = map[[y0, x0]] * (1.0 - tx) + map[[y0, x1]] * tx;
            let bottom = map[[y1, x0]] * (1.0 - tx) + map[[y1, x1]] * tx;
            out[[i, j]] = top * (1.0 - ty) + bottom * ty;
        }
    }
    Ok(out)
}

/// Binary PGM (P5) with values min-max scaled to 0..=255. Constant grids map to 0.
pub fn to_pgm(grid: ArrayView2<f64>) -> Vec<u8> {
    let (h, w) = grid.dim();
    let (lo, hi) = grid
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    let range = hi - lo;
    out.extend(grid.iter().map(|&x| {
        if range > 0.0 {
            ((x - lo) / range * 255.0).round().clamp(0.0, 255.0) as u8
        } else {
            0
        }
    }));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub image_id: String,
    /// Class ids in the order of `logits` and `contributions`.
    pub class_ids: Vec<usize>,
    pub logits: Vec<f64>,
    pub contributions: Vec<Vec<f64>>,
    pub predicted_class: usize,
    pub intervention_mask: Vec<Vec<bool>>,
}

impl Explanation {
    fn recompute(&mut self) {
        self.logits = self
            .contributions
            .iter()
            .zip(&self.intervention_mask)
            .map(|(c, m)| c.iter().zip(m).filter(|(_, &on)| on).map(|(x, _)| x).sum())
            .collect();
        self.predicted_class = self.class_ids[argmax_lowest(&self.logits)];
    }
}

/// Index of the maximum; ties go to the lowest index.
pub fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Logits for every class as sums of prototype contributions.
///
/// Decompositions are ordered by class id, so argmax ties resolve to the
/// lowest class id.
pub fn predict(x: &FeatureMap, decompositions: &[ClassDecomposition]) -> Result<Explanation, ExplainError> {
    if decompositions.is_empty() {
        return Err(ExplainError::EmptyDecompositions);
    }
    let mut order: Vec<&ClassDecomposition> = decompositions.iter().collect();
    order.sort_by_key(|d| d.class_id);
    let contributions = order
        .iter()
        .map(|d| contributions(x, d).map(|c| c.to_vec()))
        .collect::<Result<Vec<_>, _>>()?;
    let mask = contributions.iter().map(|c| vec![true; c.len()]).collect();
    let mut e = Explanation {
        image_id: x.image_id.clone(),
        class_ids: order.iter().map(|d| d.class_id).collect(),
        logits: Vec::new(),
        contributions,
        predicted_class: 0,
        intervention_mask: mask,
    };
    e.recompute();
    Ok(e)
}

/// Returns a copy of `e` with logits recomputed from unmasked contributions only.
pub fn intervene(e: &Explanation, mask: &[Vec<bool>]) -> Result<Explanation, ExplainError> {
    if mask.len() != e.contributions.len() {
        return Err(ExplainError::MaskShape(format!(
            "{} mask rows for {} classes",
            mask.len(),
            e.contributions.len()
        )));
    }
    for (i, (m, c)) in mask.iter().zip(&e.contributions).enumerate() {
        if m.len() != c.len() {
            return Err(ExplainError::MaskShape(format!(
                "class row {i}: {} mask entries for {} prototypes",
                m.len(),
                c.len()
            )));
        }
    }
    let mut out = e.clone();
    out.intervention_mask = mask.to_vec();
    out.recompute();
    Ok(out)
}
