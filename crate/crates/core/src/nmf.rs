//! Non-negative matrix factorization `F ~ E P` with multiplicative updates.
//!
//! `E` (rows x k) says how strongly each prototype is present at each spatial
//! position; `P` (k x channels) holds the prototypes themselves.

use ndarray::{Array2, ArrayView2, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NmfError {
    #[error("k = {k} out of range 1..={max}")]
    InvalidK { k: usize, max: usize },
    #[error("rel_tol must be positive, got {0}")]
    InvalidTolerance(f64),
    #[error("input contains non-finite values")]
    NonFinite,
    #[error("input contains negative values (min {0})")]
    Negative(f64),
    #[error("shape mismatch: E {e:?}, P {p:?}, F {f:?}")]
    ShapeMismatch {
        e: (usize, usize),
        p: (usize, usize),
        f: (usize, usize),
    },
    #[error("empty input matrix")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NmfConfig {
    pub k: usize,
    pub max_iter: usize,
    pub rel_tol: f64,
    pub seed: u64,
    pub epsilon_guard: f64,
}

impl Default for NmfConfig {
    fn default() -> Self {
        NmfConfig {
            k: 3,
            max_iter: 200,
            rel_tol: 1e-4,
            seed: 0,
            epsilon_guard: 1e-12,
        }
    }
}

impl NmfConfig {
    pub fn with_k(k: usize) -> Self {
        NmfConfig { k, ..Default::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NmfResult {
    pub encoding: Array2<f64>,
    pub prototypes: Array2<f64>,
    /// `||F - E P||_F^2`, starting with the value at initialization.
    pub error_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl NmfResult {
    pub fn final_error(&self) -> f64 {
        *self.error_trace.last().expect("trace holds the initial error")
    }

    /// `||F - E P||_F / ||F||_F` for the final factors.
    pub fn relative_error(&self, features: ArrayView2<f64>) -> f64 {
        let norm = features.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return self.final_error().sqrt();
        }
        self.final_error().sqrt() / norm
    }
}

/// Squared Frobenius reconstruction error.
pub fn objective(features: ArrayView2<f64>, e: &Array2<f64>, p: &Array2<f64>) -> f64 {
    let recon = e.dot(p);
    Zip::from(features)
        .and(&recon)
        .fold(0.0, |acc, &f, &r| acc + (f - r) * (f - r))
}

/// One pass of the Lee-Seung rules for the Frobenius objective: `P` first, then
/// `E` using the updated `P`. `eps` is added to every denominator.
pub fn multiplicative_update(
    e: &Array2<f64>,
    p: &Array2<f64>,
    features: ArrayView2<f64>,
    eps: f64,
) -> Result<(Array2<f64>, Array2<f64>), NmfError> {
    let (rows, k) = e.dim();
    let (kp, cols) = p.dim();
    if k != kp || features.dim() != (rows, cols) {
        return Err(NmfError::ShapeMismatch {
            e: e.dim(),
            p: p.dim(),
            f: features.dim(),
        });
    }

    let numer = e.t().dot(&features);
    let denom = e.t().dot(e).dot(p);
    let mut p_new = p.clone();
    Zip::from(&mut p_new)
        .and(&numer)
        .and(&denom)
        .for_each(|x, &n, &d| *x *= n / (d + eps));

    let numer = features.dot(&p_new.t());
    let denom = e.dot(&p_new.dot(&p_new.t()));
    let mut e_new = e.clone();
    Zip::from(&mut e_new)
        .and(&numer)
        .and(&denom)
        .for_each(|x, &n, &d| *x *= n / (d + eps));

    Ok((e_new, p_new))
}

/// Seeded initialization: i.i.d. uniform on (0, 1] scaled by `sqrt(mean(F) / k)`.
pub fn initialize(
    rows: usize,
    cols: usize,
    k: usize,
    mean: f64,
    seed: u64,
) -> (Array2<f64>, Array2<f64>) {
    let scale = (mean / k as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |_| (1.0 - rng.random::<f64>()) * scale;
    let e = Array2::from_shape_fn((rows, k), &mut draw);
    let p = Array2::from_shape_fn((k, cols), &mut draw);
    (e, p)
}

/// Factorizes a non-negative matrix into `k` parts.
///
/// Iteration stops once `(err[t-1] - err[t]) / err[0] < rel_tol` or after
/// `max_iter` updates.
pub fn factorize(features: ArrayView2<f64>, cfg: &NmfConfig) -> Result<NmfResult, NmfError> {
    let (rows, cols) = features.dim();
    if rows == 0 || cols == 0 {
        return Err(NmfError::Empty);
    }
    let max_k = rows.min(cols);
    if cfg.k == 0 || cfg.k > max_k {
        return Err(NmfError::InvalidK { k: cfg.k, max: max_k });
    }
    if cfg.rel_tol.is_nan() || cfg.rel_tol <= 0.0 {
        return Err(NmfError::InvalidTolerance(cfg.rel_tol));
    }
    let mut min = f64::INFINITY;
    for &x in features.iter() {
        if !x.is_finite() {
            return Err(NmfError::NonFinite);
        }
        min = min.min(x);
    }
    if min < 0.0 {
        return Err(NmfError::Negative(min));
    }

    let mean = features.sum() / (rows * cols) as f64;
    let (mut e, mut p) = initialize(rows, cols, cfg.k, mean, cfg.seed);
    let initial = objective(features, &e, &p);
    let mut trace = vec![initial];

    if initial == 0.0 {
        return Ok(NmfResult {
            encoding: e,
            prototypes: p,
            error_trace: trace,
            iterations: 0,
            converged: true,
        });
    }

    let mut converged = false;
    let mut iterations = 0;
    for t in 1..=cfg.max_iter {
        (e, p) = multiplicative_update(&e, &p, features, cfg.epsilon_guard)?;
        let err = objective(features, &e, &p);
        let prev = trace[t - 1];
        trace.push(err);
        iterations = t;
        if (prev - err) / initial < cfg.rel_tol {
            converged = true;
            break;
        }
    }
    tracing::debug!(iterations, converged, error = trace[iterations], "nmf finished");

    Ok(NmfResult {
        encoding: e,
        prototypes: p,
        error_trace: trace,
        iterations,
        converged,
    })
}
