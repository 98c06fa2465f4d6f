//! Synthetic datasets with planted part structure.
//!
//! Every class owns `parts` non-negative channel patterns on disjoint channel
//! blocks. In each image, each part occupies one distinct grid cell; all
//! other cells carry weak background noise. Keypoints sit on the pixel that
//! the part's cell maps to under corner-aligned upsampling, so a prototype
//! that tracks a part has that part's keypoint at its heatmap peak.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::{
    ClassEntry, ClassHead, DatasetError, DatasetManifest, FeatureStack, Keypoint,
    KeypointAnnotation, Part,
};
use crate::tensor::{write_tensor, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticConfig {
    pub classes: usize,
    pub images: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub parts: usize,
    pub image_size: u32,
    /// Upper bound of uniform background activations.
    pub background: f64,
    /// Std-dev of the Gaussian part of each head row outside the part span.
    pub head_noise: f64,
    /// Std-dev of the additive feature noise in the perturbed stacks.
    pub perturb_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            classes: 5,
            images: 50,
            height: 7,
            width: 7,
            channels: 24,
            parts: 3,
            image_size: 64,
            background: 0.05,
            head_noise: 0.01,
            perturb_sigma: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticClass {
    pub class_id: usize,
    pub label: String,
    pub stack: FeatureStack,
    pub perturbed: FeatureStack,
    pub annotations: Vec<KeypointAnnotation>,
    /// Planted part patterns (parts x D).
    pub patterns: Array2<f64>,
    /// Planted head weights per part.
    pub weights: Vec<f64>,
    /// Grid cell `(row, col)` of each part, per image.
    pub cells: Vec<Vec<(usize, usize)>>,
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub config: SyntheticConfig,
    pub classes: Vec<SyntheticClass>,
    pub head: ClassHead,
    pub parts: Vec<Part>,
}

/// Pixel coordinate of grid index `i` under corner-aligned upsampling.
pub fn cell_to_pixel(i: usize, grid: usize, pixels: u32) -> f64 {
    if grid <= 1 || pixels <= 1 {
        0.0
    } else {
        i as f64 * (pixels - 1) as f64 / (grid - 1) as f64
    }
}

pub fn generate(cfg: &SyntheticConfig) -> SyntheticDataset {
    assert!(cfg.parts >= 1 && cfg.parts <= cfg.channels, "need 1 <= parts <= channels");
    assert!(cfg.parts <= cfg.height * cfg.width, "more parts than grid cells");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let hw = cfg.height * cfg.width;
    let block = cfg.channels / cfg.parts;
    let noise = Normal::new(0.0, 1.0).expect("unit normal");

    let parts: Vec<Part> = (0..cfg.parts)
        .map(|j| Part { id: j as u32, name: format!("part_{j}") })
        .collect();
    let mut head = Array2::<f64>::zeros((cfg.classes, cfg.channels));
    let mut classes = Vec::with_capacity(cfg.classes);

    for c in 0..cfg.classes {
        let mut patterns = Array2::<f64>::zeros((cfg.parts, cfg.channels));
        for j in 0..cfg.parts {
            let end = if j + 1 == cfg.parts { cfg.channels } else { (j + 1) * block };
            // Each class lights up its own subset of the block, at least one channel.
            let keep = rng.random_range(j * block..end);
            for d in j * block..end {
                if d == keep || rng.random::<f64>() < 0.3 {
                    patterns[[j, d]] = rng.random_range(0.5..1.5);
                }
            }
        }
        let mut weights: Vec<f64> = (0..cfg.parts).map(|_| rng.random_range(0.5..2.0)).collect();
        // Equal head norms keep any one class from dominating the logits.
        let raw = weights
            .iter()
            .enumerate()
            .fold(Array1::<f64>::zeros(cfg.channels), |acc, (j, &w)| acc + &patterns.row(j) * w);
        let scale = cfg.parts as f64 / raw.dot(&raw).sqrt();
        weights.iter_mut().for_each(|w| *w *= scale);
        for (w, p) in weights.iter().zip(patterns.rows()) {
            head.row_mut(c).scaled_add(*w, &p);
        }
        for d in 0..cfg.channels {
            head[[c, d]] += cfg.head_noise * noise.sample(&mut rng);
        }

        let rows = cfg.images * hw;
        let mut data = Array2::<f64>::zeros((rows, cfg.channels));
        let mut perturbed = Array2::<f64>::zeros((rows, cfg.channels));
        let mut annotations = Vec::with_capacity(cfg.images);
        let mut cells_all = Vec::with_capacity(cfg.images);
        let mut all_cells: Vec<usize> = (0..hw).collect();
        for i in 0..cfg.images {
            for r in 0..hw {
                for d in 0..cfg.channels {
                    data[[i * hw + r, d]] = cfg.background * rng.random::<f64>();
                }
            }
            all_cells.shuffle(&mut rng);
            let mut cells = Vec::with_capacity(cfg.parts);
            let mut keypoints = Vec::with_capacity(cfg.parts);
            for (j, &cell) in all_cells.iter().take(cfg.parts).enumerate() {
                let amp = rng.random_range(0.8..1.2);
                data.row_mut(i * hw + cell).scaled_add(amp, &patterns.row(j));
                let (row, col) = (cell / cfg.width, cell % cfg.width);
                cells.push((row, col));
                keypoints.push(Keypoint {
                    part_id: j as u32,
                    x: cell_to_pixel(col, cfg.width, cfg.image_size),
                    y: cell_to_pixel(row, cfg.height, cfg.image_size),
                    visible: true,
                });
            }
            annotations.push(KeypointAnnotation {
                image_id: format!("c{c}_img{i:03}"),
                image_width: cfg.image_size,
                image_height: cfg.image_size,
                keypoints,
            });
            cells_all.push(cells);
        }
        for (p, &x) in perturbed.iter_mut().zip(data.iter()) {
            let y = x + cfg.perturb_sigma * noise.sample(&mut rng);
            *p = if cfg.perturb_sigma > 0.0 { y.max(0.0) } else { x };
        }

        let image_ids: Vec<String> = annotations.iter().map(|a| a.image_id.clone()).collect();
        let mk = |data: Array2<f64>| FeatureStack {
            class_id: c,
            n: cfg.images,
            height: cfg.height,
            width: cfg.width,
            channels: cfg.channels,
            data,
            image_ids: image_ids.clone(),
        };
        classes.push(SyntheticClass {
            class_id: c,
            label: format!("class_{c}"),
            stack: mk(data),
            perturbed: mk(perturbed),
            annotations,
            patterns,
            weights,
            cells: cells_all,
        });
    }

    let labels = classes.iter().map(|c| c.label.clone()).collect();
    SyntheticDataset {
        config: *cfg,
        classes,
        head: ClassHead { weights: head, labels },
        parts,
    }
}

fn f32_tensor(shape: Vec<usize>, data: impl Iterator<Item = f64>) -> Tensor {
    Tensor::from_f32(shape, data.map(|x| x as f32).collect()).expect("valid synthetic shape")
}

fn row_tensor(v: ArrayView1<f64>) -> Vec<f64> {
    v.to_vec()
}

impl SyntheticDataset {
    /// Writes `manifest.json`, `head.pptn` and per-class feature, perturbed
    /// and keypoint files (f32 storage).
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<DatasetManifest, DatasetError> {
        let dir = dir.as_ref();
        let io = |p: &Path, e: std::io::Error| DatasetError::Io { path: p.display().to_string(), source: e };
        fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        let tensor_err = |p: &Path, e| DatasetError::Tensor { path: p.display().to_string(), source: e };

        let head_path = dir.join("head.pptn");
        let head_data: Vec<f64> = self.head.weights.rows().into_iter().flat_map(row_tensor).collect();
        let head = f32_tensor(vec![self.head.num_classes(), self.head.channels()], head_data.into_iter());
        write_tensor(&head, &head_path).map_err(|e| tensor_err(&head_path, e))?;

        let mut entries = Vec::new();
        for c in &self.classes {
            let features = format!("class_{:02}_features.pptn", c.class_id);
            let perturbed = format!("class_{:02}_perturbed.pptn", c.class_id);
            let keypoints = format!("class_{:02}_keypoints.json", c.class_id);
            for (name, stack) in [(&features, &c.stack), (&perturbed, &c.perturbed)] {
                let p = dir.join(name);
                let t = f32_tensor(
                    vec![stack.n, stack.height, stack.width, stack.channels],
                    stack.data.iter().copied(),
                );
                write_tensor(&t, &p).map_err(|e| tensor_err(&p, e))?;
            }
            let kp_path = dir.join(&keypoints);
            let text = serde_json::to_string_pretty(&c.annotations).expect("annotations serialize");
            fs::write(&kp_path, text).map_err(|e| io(&kp_path, e))?;
            entries.push(ClassEntry {
                class_id: c.class_id,
                label: c.label.clone(),
                feature_file: features.into(),
                perturbed_feature_file: Some(perturbed.into()),
                image_files: None,
                image_ids: Some(c.stack.image_ids.clone()),
                keypoint_file: Some(keypoints.into()),
            });
        }
        let manifest = DatasetManifest {
            name: "synthetic".into(),
            classes: entries,
            part_vocabulary: self.parts.clone(),
            base_dir: dir.to_path_buf(),
        };
        manifest.save(dir.join("manifest.json"))?;
        Ok(manifest)
    }
}
