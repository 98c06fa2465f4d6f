//! Dataset manifests, feature stacks, classifier heads and keypoint annotations.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::explain::FeatureMap;
use crate::tensor::{read_tensor, read_tensor_header, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed json in {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("tensor file {path}: {source}")]
    Tensor {
        path: String,
        #[source]
        source: TensorError,
    },
    #[error("duplicate class_id {0} in manifest")]
    DuplicateClassId(usize),
    #[error("duplicate part id {0} in part vocabulary")]
    DuplicatePartId(u32),
    #[error("class_id {0} not present in manifest")]
    UnknownClass(usize),
    #[error("{path}: expected rank {expected} tensor, found shape {found:?}")]
    RankMismatch {
        path: String,
        expected: usize,
        found: Vec<usize>,
    },
    #[error("class {class_id}: no {what} file in manifest")]
    MissingEntry { class_id: usize, what: &'static str },
    #[error("class {class_id}: {ids} image ids for {n} images")]
    ImageCountMismatch { class_id: usize, ids: usize, n: usize },
    #[error("{path}: perturbed stack shape {perturbed:?} differs from clean shape {clean:?}")]
    PerturbedShapeMismatch {
        path: String,
        clean: Vec<usize>,
        perturbed: Vec<usize>,
    },
    #[error("image {image_id}: keypoint ({x}, {y}) outside {width}x{height} image")]
    KeypointOutOfBounds {
        image_id: String,
        x: f64,
        y: f64,
        width: u32,
        height: u32,
    },
    #[error("image {image_id}: malformed annotation: {reason}")]
    MalformedAnnotation { image_id: String, reason: String },
    #[error("image {image_id}: part_id {part_id} not in part vocabulary")]
    UnknownPart { image_id: String, part_id: u32 },
    #[error("head has {rows} rows; class_id {class_id} out of range")]
    HeadClassOutOfRange { class_id: usize, rows: usize },
    #[error("{0} contains non-finite values")]
    NonFinite(String),
}

fn io_err(path: &Path, source: std::io::Error) -> DatasetError {
    DatasetError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn tensor_err(path: &Path, source: TensorError) -> DatasetError {
    DatasetError::Tensor {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Part {
    pub id: u32,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub class_id: usize,
    pub label: String,
    pub feature_file: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbed_feature_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_files: Option<Vec<PathBuf>>,
    /// Explicit image identifiers; takes precedence over `image_files` stems.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ids: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keypoint_file: Option<PathBuf>,
}

/// `manifest.json`. Relative paths are resolved against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub classes: Vec<ClassEntry>,
    #[serde(default)]
    pub part_vocabulary: Vec<Part>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    /// Parses and checks structural invariants. Does not touch referenced files;
    /// see [`DatasetManifest::validate_files`].
    pub fn load(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let mut manifest: DatasetManifest =
            serde_json::from_str(&text).map_err(|source| DatasetError::Json {
                path: path.display().to_string(),
                source,
            })?;
        manifest.base_dir = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        manifest.check_ids()?;
        Ok(manifest)
    }

    pub fn check_ids(&self) -> Result<(), DatasetError> {
        let mut seen = HashSet::new();
        for c in &self.classes {
            if !seen.insert(c.class_id) {
                return Err(DatasetError::DuplicateClassId(c.class_id));
            }
        }
        let mut parts = HashSet::new();
        for p in &self.part_vocabulary {
            if !parts.insert(p.id) {
                return Err(DatasetError::DuplicatePartId(p.id));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DatasetError> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text).map_err(|e| io_err(path, e))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn entry(&self, class_id: usize) -> Result<&ClassEntry, DatasetError> {
        self.classes
            .iter()
            .find(|c| c.class_id == class_id)
            .ok_or(DatasetError::UnknownClass(class_id))
    }

    pub fn label(&self, class_id: usize) -> Option<&str> {
        self.entry(class_id).ok().map(|c| c.label.as_str())
    }

    /// Full check: every referenced file exists and passes its own format checks.
    pub fn validate_files(&self) -> Result<(), DatasetError> {
        self.check_ids()?;
        for c in &self.classes {
            let clean = self.check_feature_file(&c.feature_file)?;
            if let Some(p) = &c.perturbed_feature_file {
                let perturbed = self.check_feature_file(p)?;
                if perturbed != clean {
                    return Err(DatasetError::PerturbedShapeMismatch {
                        path: self.resolve(p).display().to_string(),
                        clean,
                        perturbed,
                    });
                }
            }
            if let Some(files) = &c.image_files {
                for f in files {
                    let p = self.resolve(f);
                    fs::metadata(&p).map_err(|e| io_err(&p, e))?;
                }
            }
            if c.keypoint_file.is_some() {
                load_keypoints(self, c.class_id)?;
            }
        }
        Ok(())
    }

    fn check_feature_file(&self, rel: &Path) -> Result<Vec<usize>, DatasetError> {
        let path = self.resolve(rel);
        let header = read_tensor_header(&path).map_err(|e| tensor_err(&path, e))?;
        if header.shape.len() != 4 {
            return Err(DatasetError::RankMismatch {
                path: path.display().to_string(),
                expected: 4,
                found: header.shape,
            });
        }
        Ok(header.shape)
    }

    /// Image identifiers for a class, in stack order.
    pub fn image_ids(&self, entry: &ClassEntry, n: usize) -> Result<Vec<String>, DatasetError> {
        let ids: Vec<String> = if let Some(ids) = &entry.image_ids {
            ids.clone()
        } else if let Some(files) = &entry.image_files {
            files
                .iter()
                .map(|f| {
                    f.file_stem()
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_else(|| f.display().to_string())
                })
                .collect()
        } else {
            (0..n).map(|i| format!("c{}_{}", entry.class_id, i)).collect()
        };
        if ids.len() != n {
            return Err(DatasetError::ImageCountMismatch {
                class_id: entry.class_id,
                ids: ids.len(),
                n,
            });
        }
        Ok(ids)
    }
}

/// Feature maps of `n` images of one class, flattened to `(n*H*W) x D`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack {
    pub class_id: usize,
    pub n: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Array2<f64>,
    pub image_ids: Vec<String>,
}

impl FeatureStack {
    /// Builds a stack from an `[n, H, W, D]` tensor.
    pub fn from_tensor(
        class_id: usize,
        t: &Tensor,
        image_ids: Vec<String>,
        clamp: bool,
    ) -> Result<Self, DatasetError> {
        let shape = t.shape();
        if shape.len() != 4 {
            return Err(DatasetError::RankMismatch {
                path: format!("class {class_id} features"),
                expected: 4,
                found: shape.to_vec(),
            });
        }
        let (n, height, width, channels) = (shape[0], shape[1], shape[2], shape[3]);
        if image_ids.len() != n {
            return Err(DatasetError::ImageCountMismatch {
                class_id,
                ids: image_ids.len(),
                n,
            });
        }
        let mut data = t.to_matrix();
        if data.iter().any(|x| !x.is_finite()) {
            return Err(DatasetError::NonFinite(format!("class {class_id} features")));
        }
        if clamp {
            clamp_negative(&mut data);
        }
        Ok(FeatureStack {
            class_id,
            n,
            height,
            width,
            channels,
            data,
            image_ids,
        })
    }

    pub fn positions(&self) -> usize {
        self.height * self.width
    }

    /// Rows belonging to image `i`.
    pub fn image_rows(&self, i: usize) -> ArrayView2<'_, f64> {
        let hw = self.positions();
        self.data.slice(ndarray::s![i * hw..(i + 1) * hw, ..])
    }

    pub fn feature_map(&self, i: usize) -> FeatureMap {
        FeatureMap {
            image_id: self.image_ids[i].clone(),
            height: self.height,
            width: self.width,
            x: self.image_rows(i).to_owned(),
        }
    }

    pub fn feature_maps(&self) -> impl Iterator<Item = FeatureMap> + '_ {
        (0..self.n).map(|i| self.feature_map(i))
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_f64(
            vec![self.n, self.height, self.width, self.channels],
            self.data.iter().copied().collect(),
        )
        .expect("stack dims are non-zero")
    }
}

/// Replaces negative entries by zero.
pub fn clamp_negative(m: &mut Array2<f64>) {
    m.mapv_inplace(|x| if x < 0.0 { 0.0 } else { x });
}

fn load_stack_file(
    manifest: &DatasetManifest,
    entry: &ClassEntry,
    rel: &Path,
    clamp: bool,
) -> Result<FeatureStack, DatasetError> {
    let path = manifest.resolve(rel);
    let t = read_tensor(&path).map_err(|e| tensor_err(&path, e))?;
    if t.rank() != 4 {
        return Err(DatasetError::RankMismatch {
            path: path.display().to_string(),
            expected: 4,
            found: t.shape().to_vec(),
        });
    }
    let ids = manifest.image_ids(entry, t.shape()[0])?;
    FeatureStack::from_tensor(entry.class_id, &t, ids, clamp)
}

pub fn load_feature_stack(
    manifest: &DatasetManifest,
    class_id: usize,
    clamp: bool,
) -> Result<FeatureStack, DatasetError> {
    let entry = manifest.entry(class_id)?;
    load_stack_file(manifest, entry, &entry.feature_file, clamp)
}

/// Loads the noise-perturbed counterpart of a class's feature stack.
pub fn load_perturbed_stack(
    manifest: &DatasetManifest,
    class_id: usize,
    clamp: bool,
) -> Result<FeatureStack, DatasetError> {
    let entry = manifest.entry(class_id)?;
    let rel = entry
        .perturbed_feature_file
        .as_ref()
        .ok_or(DatasetError::MissingEntry {
            class_id,
            what: "perturbed_feature_file",
        })?;
    load_stack_file(manifest, entry, rel, clamp)
}

/// Classifier weight matrix `V` (C x D) with class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassHead {
    pub weights: Array2<f64>,
    pub labels: Vec<String>,
}

impl ClassHead {
    pub fn num_classes(&self) -> usize {
        self.weights.nrows()
    }

    pub fn channels(&self) -> usize {
        self.weights.ncols()
    }

    pub fn row(&self, class_id: usize) -> Result<ndarray::ArrayView1<'_, f64>, DatasetError> {
        if class_id >= self.num_classes() {
            return Err(DatasetError::HeadClassOutOfRange {
                class_id,
                rows: self.num_classes(),
            });
        }
        Ok(self.weights.row(class_id))
    }
}

/// Loads a `C x D` head tensor. Row `i` is the head of `class_id == i`; labels
/// come from the manifest when it names the class.
pub fn load_head(
    path: impl AsRef<Path>,
    manifest: Option<&DatasetManifest>,
) -> Result<ClassHead, DatasetError> {
    let path = path.as_ref();
    let t = read_tensor(path).map_err(|e| tensor_err(path, e))?;
    if t.rank() != 2 {
        return Err(DatasetError::RankMismatch {
            path: path.display().to_string(),
            expected: 2,
            found: t.shape().to_vec(),
        });
    }
    let weights = t.to_matrix();
    if weights.iter().any(|x| !x.is_finite()) {
        return Err(DatasetError::NonFinite(path.display().to_string()));
    }
    let labels = (0..weights.nrows())
        .map(|i| {
            manifest
                .and_then(|m| m.label(i))
                .map(str::to_owned)
                .unwrap_or_else(|| format!("class_{i}"))
        })
        .collect();
    Ok(ClassHead { weights, labels })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub part_id: u32,
    pub x: f64,
    pub y: f64,
    pub visible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeypointAnnotation {
    pub image_id: String,
    pub image_width: u32,
    pub image_height: u32,
    #[serde(default)]
    pub keypoints: Vec<Keypoint>,
}

impl KeypointAnnotation {
    /// Checks coordinate bounds (closed intervals) and part ids.
    pub fn validate(&self, vocabulary: &[Part]) -> Result<(), DatasetError> {
        if self.image_width == 0 || self.image_height == 0 {
            return Err(DatasetError::MalformedAnnotation {
                image_id: self.image_id.clone(),
                reason: "zero image size".into(),
            });
        }
        for kp in &self.keypoints {
            if !kp.x.is_finite() || !kp.y.is_finite() {
                return Err(DatasetError::MalformedAnnotation {
                    image_id: self.image_id.clone(),
                    reason: "non-finite coordinate".into(),
                });
            }
            if kp.x < 0.0
                || kp.y < 0.0
                || kp.x > self.image_width as f64
                || kp.y > self.image_height as f64
            {
                return Err(DatasetError::KeypointOutOfBounds {
                    image_id: self.image_id.clone(),
                    x: kp.x,
                    y: kp.y,
                    width: self.image_width,
                    height: self.image_height,
                });
            }
            if !vocabulary.is_empty() && !vocabulary.iter().any(|p| p.id == kp.part_id) {
                return Err(DatasetError::UnknownPart {
                    image_id: self.image_id.clone(),
                    part_id: kp.part_id,
                });
            }
        }
        Ok(())
    }
}

/// Parses a `keypoints.json` document and validates each record.
pub fn parse_keypoints(
    text: &str,
    source: &str,
    vocabulary: &[Part],
) -> Result<Vec<KeypointAnnotation>, DatasetError> {
    let anns: Vec<KeypointAnnotation> =
        serde_json::from_str(text).map_err(|e| DatasetError::Json {
            path: source.to_string(),
            source: e,
        })?;
    for a in &anns {
        a.validate(vocabulary)?;
    }
    Ok(anns)
}

pub fn load_keypoints(
    manifest: &DatasetManifest,
    class_id: usize,
) -> Result<Vec<KeypointAnnotation>, DatasetError> {
    let entry = manifest.entry(class_id)?;
    let rel = entry.keypoint_file.as_ref().ok_or(DatasetError::MissingEntry {
        class_id,
        what: "keypoint_file",
    })?;
    let path = manifest.resolve(rel);
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    parse_keypoints(&text, &path.display().to_string(), &manifest.part_vocabulary)
}

/// Annotations keyed by image id.
pub fn keypoints_by_image(anns: Vec<KeypointAnnotation>) -> BTreeMap<String, KeypointAnnotation> {
    anns.into_iter().map(|a| (a.image_id.clone(), a)).collect()
}
