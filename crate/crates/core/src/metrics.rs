//! Consistency and stability scores for part-prototypes.
//!
//! For each image a prototype's heatmap is upsampled to image resolution and
//! thresholded at `threshold_frac * max` to get its activation region. A part
//! is present when its visible keypoint falls inside the region.
//!
//! * A prototype is *consistent* when one part is present in at least
//!   `tau_share` of the images where its region is non-empty.
//! * A prototype is *stable* when its present-part set is unchanged under
//!   input noise in at least `tau_match` of the images where its clean region
//!   is non-empty. An empty perturbed region never matches.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{
    keypoints_by_image, load_feature_stack, load_keypoints, load_perturbed_stack, DatasetError,
    DatasetManifest, FeatureStack, KeypointAnnotation,
};
use crate::decompose::ClassDecomposition;
use crate::explain::{upsample_bilinear, ExplainError};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("empty activation map")]
    EmptyMap,
    #[error("threshold_frac must lie in (0, 1), got {0}")]
    InvalidThreshold(f64),
    #[error("class {0}: no annotated images to evaluate")]
    NoAnnotatedImages(usize),
    #[error("class {class_id}: perturbed stack does not match clean stack ({reason})")]
    PerturbedMismatch { class_id: usize, reason: String },
    #[error("class {class_id}: features have {found} channels, prototypes {expected}")]
    ChannelMismatch {
        class_id: usize,
        expected: usize,
        found: usize,
    },
    #[error("inputs unavailable: {0}")]
    Unavailable(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Explain(#[from] ExplainError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub threshold_frac: f64,
    pub tau_share: f64,
    pub tau_match: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            threshold_frac: 0.5,
            tau_share: 0.8,
            tau_match: 0.8,
        }
    }
}

/// `value >= threshold_frac * max(value)`. Maps whose maximum is not positive
/// have an empty region.
pub fn activation_region(map: ArrayView2<f64>, threshold_frac: f64) -> Result<Array2<bool>, MetricsError> {
    if map.is_empty() {
        return Err(MetricsError::EmptyMap);
    }
    if !(threshold_frac > 0.0 && threshold_frac < 1.0) {
        return Err(MetricsError::InvalidThreshold(threshold_frac));
    }
    let max = map.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max.is_nan() || max <= 0.0 {
        return Ok(Array2::from_elem(map.dim(), false));
    }
    let cut = threshold_frac * max;
    Ok(map.mapv(|v| v >= cut))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartPresence {
    pub image_id: String,
    pub prototype_index: usize,
    pub present_parts: BTreeSet<u32>,
}

/// Pixel of the mask containing image coordinate `(x, y)`. Coordinates on
/// the far edge belong to the last pixel.
fn keypoint_pixel(mask_dim: (usize, usize), ann: &KeypointAnnotation, x: f64, y: f64) -> (usize, usize) {
    let (h, w) = mask_dim;
    let col = (x * w as f64 / ann.image_width as f64).floor() as usize;
    let row = (y * h as f64 / ann.image_height as f64).floor() as usize;
    (row.min(h - 1), col.min(w - 1))
}

/// Parts whose visible keypoints lie inside `mask`.
pub fn part_presence(mask: ArrayView2<bool>, ann: &KeypointAnnotation, prototype_index: usize) -> PartPresence {
    let present_parts = ann
        .keypoints
        .iter()
        .filter(|kp| kp.visible)
        .filter(|kp| mask[keypoint_pixel(mask.dim(), ann, kp.x, kp.y)])
        .map(|kp| kp.part_id)
        .collect();
    PartPresence {
        image_id: ann.image_id.clone(),
        prototype_index,
        present_parts,
    }
}

/// Region test of one prototype on one image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Observation {
    pub empty: bool,
    pub parts: BTreeSet<u32>,
}

fn observe(
    rows: ArrayView2<f64>,
    stack: &FeatureStack,
    prototype: ArrayView1<f64>,
    ann: &KeypointAnnotation,
    threshold_frac: f64,
) -> Result<Observation, MetricsError> {
    let values = rows.dot(&prototype);
    let grid = values
        .into_shape_with_order((stack.height, stack.width))
        .expect("rows == H*W");
    let up = upsample_bilinear(grid.view(), ann.image_height as usize, ann.image_width as usize)?;
    let mask = activation_region(up.view(), threshold_frac)?;
    let empty = !mask.iter().any(|&b| b);
    Ok(Observation {
        empty,
        parts: part_presence(mask.view(), ann, 0).present_parts,
    })
}

/// Observations `[image][prototype]` for every annotated image of a stack.
pub fn observe_stack(
    dec: &ClassDecomposition,
    stack: &FeatureStack,
    annotations: &BTreeMap<String, KeypointAnnotation>,
    threshold_frac: f64,
) -> Result<Vec<(String, Vec<Observation>)>, MetricsError> {
    if stack.channels != dec.refined.ncols() {
        return Err(MetricsError::ChannelMismatch {
            class_id: dec.class_id,
            expected: dec.refined.ncols(),
            found: stack.channels,
        });
    }
    let mut out = Vec::new();
    for i in 0..stack.n {
        let id = &stack.image_ids[i];
        let Some(ann) = annotations.get(id) else { continue };
        let rows = stack.image_rows(i);
        let obs = dec
            .refined
            .rows()
            .into_iter()
            .map(|p| observe(rows, stack, p, ann, threshold_frac))
            .collect::<Result<Vec<_>, _>>()?;
        out.push((id.clone(), obs));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyVerdict {
    pub prototype_index: usize,
    pub consistent: bool,
    pub best_part: Option<u32>,
    pub share: f64,
    pub images: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassConsistency {
    pub score: f64,
    pub verdicts: Vec<ConsistencyVerdict>,
}

pub fn consistency_from_observations(
    k: usize,
    observations: &[(String, Vec<Observation>)],
    tau_share: f64,
) -> ClassConsistency {
    let verdicts: Vec<ConsistencyVerdict> = (0..k)
        .map(|j| {
            let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
            let mut images = 0;
            for (_, obs) in observations {
                let o = &obs[j];
                if o.empty {
                    continue;
                }
                images += 1;
                for &p in &o.parts {
                    *counts.entry(p).or_default() += 1;
                }
            }
            // Highest count, lowest part id on ties.
            let best = counts
                .iter()
                .fold(None, |best: Option<(u32, usize)>, (&p, &c)| match best {
                    Some((_, bc)) if bc >= c => best,
                    _ => Some((p, c)),
                });
            let share = match (best, images) {
                (Some((_, c)), n) if n > 0 => c as f64 / n as f64,
                _ => 0.0,
            };
            ConsistencyVerdict {
                prototype_index: j,
                consistent: images > 0 && share >= tau_share,
                best_part: best.map(|(p, _)| p),
                share,
                images,
            }
        })
        .collect();
    let score = percent(verdicts.iter().filter(|v| v.consistent).count(), k);
    ClassConsistency { score, verdicts }
}

fn percent(hits: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * hits as f64 / total as f64
    }
}

pub fn consistency_score(
    dec: &ClassDecomposition,
    stack: &FeatureStack,
    annotations: &BTreeMap<String, KeypointAnnotation>,
    cfg: &MetricConfig,
) -> Result<ClassConsistency, MetricsError> {
    let obs = observe_stack(dec, stack, annotations, cfg.threshold_frac)?;
    if obs.is_empty() {
        return Err(MetricsError::NoAnnotatedImages(dec.class_id));
    }
    Ok(consistency_from_observations(dec.k, &obs, cfg.tau_share))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityVerdict {
    pub prototype_index: usize,
    pub stable: bool,
    pub share: f64,
    pub images: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStability {
    pub score: f64,
    pub verdicts: Vec<StabilityVerdict>,
}

pub fn stability_from_observations(
    k: usize,
    clean: &[(String, Vec<Observation>)],
    perturbed: &[(String, Vec<Observation>)],
    tau_match: f64,
) -> ClassStability {
    let verdicts: Vec<StabilityVerdict> = (0..k)
        .map(|j| {
            let mut images = 0;
            let mut matches = 0;
            for ((_, c), (_, p)) in clean.iter().zip(perturbed) {
                if c[j].empty {
                    continue;
                }
                images += 1;
                if !p[j].empty && p[j].parts == c[j].parts {
                    matches += 1;
                }
            }
            let share = if images > 0 { matches as f64 / images as f64 } else { 0.0 };
            StabilityVerdict {
                prototype_index: j,
                stable: images > 0 && share >= tau_match,
                share,
                images,
            }
        })
        .collect();
    let score = percent(verdicts.iter().filter(|v| v.stable).count(), k);
    ClassStability { score, verdicts }
}

pub fn stability_score(
    dec: &ClassDecomposition,
    clean: &FeatureStack,
    perturbed: &FeatureStack,
    annotations: &BTreeMap<String, KeypointAnnotation>,
    cfg: &MetricConfig,
) -> Result<ClassStability, MetricsError> {
    if clean.image_ids != perturbed.image_ids
        || (clean.n, clean.height, clean.width, clean.channels)
            != (perturbed.n, perturbed.height, perturbed.width, perturbed.channels)
    {
        return Err(MetricsError::PerturbedMismatch {
            class_id: dec.class_id,
            reason: "shape or image ids differ".into(),
        });
    }
    let c = observe_stack(dec, clean, annotations, cfg.threshold_frac)?;
    if c.is_empty() {
        return Err(MetricsError::NoAnnotatedImages(dec.class_id));
    }
    let p = observe_stack(dec, perturbed, annotations, cfg.threshold_frac)?;
    Ok(stability_from_observations(dec.k, &c, &p, cfg.tau_match))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeVerdict {
    pub class_id: usize,
    pub prototype_index: usize,
    pub consistent: Option<bool>,
    pub consistency_share: Option<f64>,
    pub best_part: Option<u32>,
    pub stable: Option<bool>,
    pub stability_share: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class_id: usize,
    pub consistency: Option<f64>,
    pub stability: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedMetric {
    pub class_id: usize,
    pub metric: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub classes: Vec<ClassMetrics>,
    pub aggregate_consistency: Option<f64>,
    pub aggregate_stability: Option<f64>,
    pub prototypes: Vec<PrototypeVerdict>,
    pub skipped: Vec<SkippedMetric>,
    pub config: MetricConfig,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Per-class scoring outcome: `(class_id, k, consistency, stability)`.
/// Stability is `None` when the class has no perturbed features.
pub type ClassOutcome = (
    usize,
    usize,
    Result<ClassConsistency, MetricsError>,
    Option<Result<ClassStability, MetricsError>>,
);

impl MetricReport {
    pub fn from_classes(
        results: Vec<ClassOutcome>,
        config: MetricConfig,
    ) -> Self {
        let mut classes = Vec::new();
        let mut prototypes = Vec::new();
        let mut skipped = Vec::new();
        for (class_id, k, con, sta) in results {
            let con = match con {
                Ok(c) => Some(c),
                Err(e) => {
                    skipped.push(SkippedMetric { class_id, metric: "consistency".into(), reason: e.to_string() });
                    None
                }
            };
            let sta = match sta {
                Some(Ok(s)) => Some(s),
                Some(Err(e)) => {
                    skipped.push(SkippedMetric { class_id, metric: "stability".into(), reason: e.to_string() });
                    None
                }
                None => {
                    skipped.push(SkippedMetric {
                        class_id,
                        metric: "stability".into(),
                        reason: "no perturbed_feature_file".into(),
                    });
                    None
                }
            };
            for j in 0..k {
                let cv = con.as_ref().map(|c| &c.verdicts[j]);
                let sv = sta.as_ref().map(|s| &s.verdicts[j]);
                prototypes.push(PrototypeVerdict {
                    class_id,
                    prototype_index: j,
                    consistent: cv.map(|v| v.consistent),
                    consistency_share: cv.map(|v| v.share),
                    best_part: cv.and_then(|v| v.best_part),
                    stable: sv.map(|v| v.stable),
                    stability_share: sv.map(|v| v.share),
                });
            }
            classes.push(ClassMetrics {
                class_id,
                consistency: con.map(|c| c.score),
                stability: sta.map(|s| s.score),
            });
        }
        MetricReport {
            aggregate_consistency: mean(classes.iter().filter_map(|c| c.consistency)),
            aggregate_stability: mean(classes.iter().filter_map(|c| c.stability)),
            classes,
            prototypes,
            skipped,
            config,
        }
    }

    /// One row per (class, prototype).
    pub fn to_csv(&self) -> String {
        fn opt<T: ToString>(x: Option<T>) -> String {
            x.map(|v| v.to_string()).unwrap_or_default()
        }
        let mut out = String::from(
            "class_id,prototype_index,consistent,consistency_share,best_part,stable,stability_share\n",
        );
        for p in &self.prototypes {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                p.class_id,
                p.prototype_index,
                opt(p.consistent),
                opt(p.consistency_share),
                opt(p.best_part),
                opt(p.stable),
                opt(p.stability_share)
            ));
        }
        out
    }
}

/// Scores every decomposed class against the manifest's annotations.
pub fn evaluate(
    manifest: &DatasetManifest,
    decompositions: &[ClassDecomposition],
    cfg: &MetricConfig,
    clamp: bool,
) -> MetricReport {
    let mut decs: Vec<&ClassDecomposition> = decompositions.iter().collect();
    decs.sort_by_key(|d| d.class_id);
    let results = decs
        .iter()
        .map(|dec| {
            let cid = dec.class_id;
            let loaded = load_feature_stack(manifest, cid, clamp)
                .and_then(|s| load_keypoints(manifest, cid).map(|a| (s, keypoints_by_image(a))));
            let (stack, anns) = match loaded {
                Ok(x) => x,
                Err(e) => {
                    let sta = Some(Err(MetricsError::Unavailable(e.to_string())));
                    return (cid, dec.k, Err(MetricsError::Dataset(e)), sta);
                }
            };
            let con = consistency_score(dec, &stack, &anns, cfg);
            let has_perturbed = manifest
                .entry(cid)
                .map(|e| e.perturbed_feature_file.is_some())
                .unwrap_or(false);
            let sta = has_perturbed.then(|| {
                load_perturbed_stack(manifest, cid, clamp)
                    .map_err(MetricsError::from)
                    .and_then(|p| stability_score(dec, &stack, &p, &anns, cfg))
            });
            (cid, dec.k, con, sta)
        })
        .collect();
    MetricReport::from_classes(results, *cfg)
}
