//! On-disk decomposition archive.
//!
//! ```text
//! DIR/decomposition.json
//! DIR/class_0000/{prototypes,alpha,residual,residual_parts,refined}.pptn
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::ClassHead;
use crate::decompose::{ClassDecomposition, ClassFailure, DecomposeConfig, NmfSummary, RefinementMode};
use crate::linalg::SolveMethod;
use crate::tensor::{read_tensor, write_tensor, Tensor, TensorError};

pub const FORMAT: &str = "pppn-archive/1";
pub const INDEX_FILE: &str = "decomposition.json";

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("tensor {path}: {source}")]
    Tensor {
        path: String,
        #[source]
        source: TensorError,
    },
    #[error("unsupported archive format '{0}'")]
    Format(String),
    #[error("class {class_id}: {field} has shape {found:?}, expected {expected:?}")]
    Shape {
        class_id: usize,
        field: &'static str,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementRecord {
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRecord {
    pub class_id: usize,
    pub label: String,
    pub k: usize,
    pub mode: RefinementMode,
    pub alpha: Vec<f64>,
    pub solve_method: SolveMethod,
    pub uniform_fallback: bool,
    pub nmf: NmfSummary,
    pub refinement: RefinementRecord,
    /// `max |v - sum p~_i|`, when the head was available at write time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reconstruction_error: Option<f64>,
    pub dir: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub class_id: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveIndex {
    pub format: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head: Option<String>,
    pub clamp: bool,
    pub config: DecomposeConfig,
    pub classes: Vec<ClassRecord>,
    #[serde(default)]
    pub failures: Vec<FailureRecord>,
}

/// Run-level information recorded alongside the decompositions.
#[derive(Debug, Clone, Default)]
pub struct ArchiveInfo {
    pub manifest: Option<String>,
    pub head: Option<String>,
    pub clamp: bool,
    pub config: DecomposeConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Archive {
    pub index: ArchiveIndex,
    pub classes: Vec<ClassDecomposition>,
}

impl Archive {
    pub fn class(&self, class_id: usize) -> Option<&ClassDecomposition> {
        self.classes.iter().find(|d| d.class_id == class_id)
    }

    pub fn label(&self, class_id: usize) -> Option<&str> {
        self.index
            .classes
            .iter()
            .find(|c| c.class_id == class_id)
            .map(|c| c.label.as_str())
    }
}

fn io_err(path: &Path, source: std::io::Error) -> ArchiveError {
    ArchiveError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn put(path: PathBuf, t: Tensor) -> Result<(), ArchiveError> {
    write_tensor(&t, &path).map_err(|source| ArchiveError::Tensor {
        path: path.display().to_string(),
        source,
    })
}

fn get(path: PathBuf) -> Result<Tensor, ArchiveError> {
    read_tensor(&path).map_err(|source| ArchiveError::Tensor {
        path: path.display().to_string(),
        source,
    })
}

fn vector_tensor(v: &Array1<f64>) -> Tensor {
    Tensor::from_f64(vec![v.len()], v.to_vec()).expect("non-empty vector")
}

fn matrix_tensor(m: &Array2<f64>) -> Tensor {
    Tensor::from_matrix(m).expect("non-empty matrix")
}

impl From<&ClassFailure> for FailureRecord {
    fn from(f: &ClassFailure) -> Self {
        FailureRecord {
            class_id: f.class_id,
            error: f.error.to_string(),
        }
    }
}

fn class_dir(class_id: usize) -> String {
    format!("class_{class_id:04}")
}

/// Writes the archive. Output bytes depend only on the arguments.
pub fn write_archive(
    dir: impl AsRef<Path>,
    info: &ArchiveInfo,
    decompositions: &[ClassDecomposition],
    failures: &[FailureRecord],
    head: Option<&ClassHead>,
) -> Result<ArchiveIndex, ArchiveError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut decs: Vec<&ClassDecomposition> = decompositions.iter().collect();
    decs.sort_by_key(|d| d.class_id);

    let mut classes = Vec::with_capacity(decs.len());
    for d in decs {
        let sub = class_dir(d.class_id);
        let cdir = dir.join(&sub);
        fs::create_dir_all(&cdir).map_err(|e| io_err(&cdir, e))?;
        put(cdir.join("prototypes.pptn"), matrix_tensor(&d.prototypes))?;
        put(cdir.join("alpha.pptn"), vector_tensor(&d.alpha))?;
        put(cdir.join("residual.pptn"), vector_tensor(&d.residual))?;
        put(cdir.join("residual_parts.pptn"), matrix_tensor(&d.residual_parts))?;
        put(cdir.join("refined.pptn"), matrix_tensor(&d.refined))?;

        let label = head
            .and_then(|h| h.labels.get(d.class_id).cloned())
            .unwrap_or_else(|| format!("class_{}", d.class_id));
        let reconstruction_error = head
            .and_then(|h| h.row(d.class_id).ok())
            .map(|v| d.reconstruction_error(v));
        classes.push(ClassRecord {
            class_id: d.class_id,
            label,
            k: d.k,
            mode: d.mode,
            alpha: d.alpha.to_vec(),
            solve_method: d.solve_method,
            uniform_fallback: d.uniform_fallback,
            nmf: d.nmf.clone(),
            refinement: RefinementRecord {
                objective_trace: d.objective_trace.clone(),
                iterations: d.refine_iterations,
                converged: d.refine_converged,
            },
            reconstruction_error,
            dir: sub,
        });
    }
    let mut failures = failures.to_vec();
    failures.sort_by_key(|f| f.class_id);

    let index = ArchiveIndex {
        format: FORMAT.to_string(),
        manifest: info.manifest.clone(),
        head: info.head.clone(),
        clamp: info.clamp,
        config: info.config,
        classes,
        failures,
    };
    let path = dir.join(INDEX_FILE);
    let mut text = serde_json::to_string_pretty(&index).expect("index serializes");
    text.push('\n');
    fs::write(&path, text).map_err(|e| io_err(&path, e))?;
    Ok(index)
}

fn check_shape(class_id: usize, field: &'static str, t: &Tensor, expected: &[usize]) -> Result<(), ArchiveError> {
    if t.shape() != expected {
        return Err(ArchiveError::Shape {
            class_id,
            field,
            expected: expected.to_vec(),
            found: t.shape().to_vec(),
        });
    }
    Ok(())
}

pub fn read_archive(dir: impl AsRef<Path>) -> Result<Archive, ArchiveError> {
    let dir = dir.as_ref();
    let path = dir.join(INDEX_FILE);
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    let index: ArchiveIndex = serde_json::from_str(&text).map_err(|source| ArchiveError::Json {
        path: path.display().to_string(),
        source,
    })?;
    if index.format != FORMAT {
        return Err(ArchiveError::Format(index.format));
    }

    let mut classes = Vec::with_capacity(index.classes.len());
    for rec in &index.classes {
        let cdir = dir.join(&rec.dir);
        let prototypes = get(cdir.join("prototypes.pptn"))?;
        let d = *prototypes.shape().last().unwrap_or(&0);
        let (k, id) = (rec.k, rec.class_id);
        check_shape(id, "prototypes", &prototypes, &[k, d])?;
        let alpha = get(cdir.join("alpha.pptn"))?;
        check_shape(id, "alpha", &alpha, &[k])?;
        let residual = get(cdir.join("residual.pptn"))?;
        check_shape(id, "residual", &residual, &[d])?;
        let parts = get(cdir.join("residual_parts.pptn"))?;
        check_shape(id, "residual_parts", &parts, &[k, d])?;
        let refined = get(cdir.join("refined.pptn"))?;
        check_shape(id, "refined", &refined, &[k, d])?;
        classes.push(ClassDecomposition {
            class_id: id,
            k,
            prototypes: prototypes.to_matrix(),
            alpha: Array1::from(alpha.to_f64_vec()),
            residual: Array1::from(residual.to_f64_vec()),
            residual_parts: parts.to_matrix(),
            refined: refined.to_matrix(),
            mode: rec.mode,
            objective_trace: rec.refinement.objective_trace.clone(),
            refine_iterations: rec.refinement.iterations,
            refine_converged: rec.refinement.converged,
            uniform_fallback: rec.uniform_fallback,
            solve_method: rec.solve_method,
            nmf: rec.nmf.clone(),
        });
    }
    Ok(Archive { index, classes })
}
