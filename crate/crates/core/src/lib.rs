//! Post-hoc part-prototype decomposition of linear classification heads.
//!
//! A trained head row `v` is split into `k` prototypes `p~_1..p~_k` with
//! `sum p~_i = v`, so the class logit `Avg(x v^T)` becomes a sum of
//! per-prototype contributions `Avg(x p~_i^T)` whose heatmaps show where
//! each part was found. Prediction is unchanged by construction.
//!
//! Modules, bottom-up:
//!
//! * [`tensor`]: the PPTN1 binary tensor format.
//! * [`dataset`]: manifests, feature stacks, heads, keypoint annotations.
//! * [`nmf`]: non-negative matrix factorization for initial prototypes.
//! * [`linalg`] and [`simplex`]: least-squares and Nelder-Mead solvers.
//! * [`decompose`]: scaling, residual split and refinement per class.
//! * [`explain`]: logits, contributions, heatmaps, intervention.
//! * [`metrics`]: consistency and stability scores.
//! * [`archive`]: the on-disk decomposition archive.
//! * [`synthetic`]: planted-structure datasets for tests and demos.

pub mod archive;
pub mod dataset;
pub mod decompose;
pub mod explain;
pub mod linalg;
pub mod metrics;
pub mod nmf;
pub mod simplex;
pub mod synthetic;
pub mod tensor;

pub use archive::{read_archive, write_archive, Archive, ArchiveError, ArchiveInfo};
pub use dataset::{
    load_feature_stack, load_head, load_keypoints, ClassHead, DatasetError, DatasetManifest,
    FeatureStack, KeypointAnnotation,
};
pub use decompose::{
    decompose_class, decompose_head, ClassDecomposition, DecomposeConfig, DecomposeError,
    RefineConfig, RefinementMode,
};
pub use explain::{intervene, predict, Explanation, FeatureMap, Heatmap};
pub use metrics::{MetricConfig, MetricReport};
pub use nmf::{NmfConfig, NmfResult};
pub use tensor::{read_tensor, write_tensor, Tensor};
