//! Nelder-Mead downhill simplex minimization.

use serde::{Deserialize, Serialize};
use thiserror::Error;

const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum SimplexError {
    #[error("objective returned a non-finite value at iteration {iteration}")]
    NonFinite { iteration: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NelderMeadConfig {
    /// Convergence threshold on the max-abs distance of every vertex from the best one.
    pub tol_x: f64,
    /// Convergence threshold on the spread of objective values.
    pub tol_f: f64,
    pub max_iter: usize,
    /// Initial simplex step along coordinate `j` is `step * (1 + |x0[j]|)`.
    pub step: f64,
}

impl Default for NelderMeadConfig {
    fn default() -> Self {
        NelderMeadConfig {
            tol_x: 1e-6,
            tol_f: 1e-6,
            max_iter: 100,
            step: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    /// Objective at `x0`, then the best value after every iteration.
    pub trace: Vec<f64>,
}

struct Simplex {
    points: Vec<Vec<f64>>,
    values: Vec<f64>,
}

impl Simplex {
    fn sort(&mut self) {
        let mut order: Vec<usize> = (0..self.values.len()).collect();
        order.sort_by(|&a, &b| self.values[a].total_cmp(&self.values[b]));
        self.points = order.iter().map(|&i| std::mem::take(&mut self.points[i])).collect();
        self.values = order.iter().map(|&i| self.values[i]).collect();
    }

    fn spread_x(&self) -> f64 {
        let best = &self.points[0];
        self.points[1..]
            .iter()
            .flat_map(|p| p.iter().zip(best).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max)
    }

    fn spread_f(&self) -> f64 {
        let best = self.values[0];
        self.values[1..].iter().map(|v| (v - best).abs()).fold(0.0, f64::max)
    }
}

/// `centroid + coef * (centroid - worst)`.
fn along(centroid: &[f64], worst: &[f64], coef: f64) -> Vec<f64> {
    centroid
        .iter()
        .zip(worst)
        .map(|(c, w)| c + coef * (c - w))
        .collect()
}

/// Minimizes `objective` starting from `x0`.
///
/// Never returns a point worse than `x0`: the best vertex is kept throughout.
pub fn minimize<F>(
    mut objective: F,
    x0: &[f64],
    cfg: &NelderMeadConfig,
) -> Result<NelderMeadResult, SimplexError>
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let mut evaluations = 0usize;
    let mut eval = |x: &[f64], iteration: usize| {
        evaluations += 1;
        let v = objective(x);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(SimplexError::NonFinite { iteration })
        }
    };

    let f0 = eval(x0, 0)?;
    if n == 0 || cfg.max_iter == 0 {
        return Ok(NelderMeadResult {
            x: x0.to_vec(),
            value: f0,
            iterations: 0,
            evaluations,
            converged: n == 0,
            trace: vec![f0],
        });
    }

    let mut points = Vec::with_capacity(n + 1);
    let mut values = Vec::with_capacity(n + 1);
    points.push(x0.to_vec());
    values.push(f0);
    for j in 0..n {
        let mut p = x0.to_vec();
        p[j] += cfg.step * (1.0 + x0[j].abs());
        values.push(eval(&p, 0)?);
        points.push(p);
    }
    let mut s = Simplex { points, values };
    s.sort();

    let mut trace = vec![f0];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iter {
        if s.spread_x() <= cfg.tol_x && s.spread_f() <= cfg.tol_f {
            converged = true;
            break;
        }
        iterations += 1;

        let mut centroid = vec![0.0; n];
        for p in &s.points[..n] {
            for (c, x) in centroid.iter_mut().zip(p) {
                *c += x;
            }
        }
        centroid.iter_mut().for_each(|c| *c /= n as f64);

        let worst = s.points[n].clone();
        let xr = along(&centroid, &worst, REFLECT);
        let fr = eval(&xr, iterations)?;

        let mut shrink = false;
        if fr < s.values[0] {
            let xe = along(&centroid, &worst, REFLECT * EXPAND);
            let fe = eval(&xe, iterations)?;
            if fe < fr {
                s.points[n] = xe;
                s.values[n] = fe;
            } else {
                s.points[n] = xr;
                s.values[n] = fr;
            }
        } else if fr < s.values[n - 1] {
            s.points[n] = xr;
            s.values[n] = fr;
        } else if fr < s.values[n] {
            let xc = along(&centroid, &worst, CONTRACT * REFLECT);
            let fc = eval(&xc, iterations)?;
            if fc <= fr {
                s.points[n] = xc;
                s.values[n] = fc;
            } else {
                shrink = true;
            }
        } else {
            let xcc = along(&centroid, &worst, -CONTRACT);
            let fcc = eval(&xcc, iterations)?;
            if fcc < s.values[n] {
                s.points[n] = xcc;
                s.values[n] = fcc;
            } else {
                shrink = true;
            }
        }

        if shrink {
            let best = s.points[0].clone();
            for j in 1..=n {
                for (x, b) in s.points[j].iter_mut().zip(&best) {
                    *x = b + SHRINK * (*x - b);
                }
                s.values[j] = eval(&s.points[j], iterations)?;
            }
        }
        s.sort();
        trace.push(s.values[0]);
    }
    if !converged {
        converged = s.spread_x() <= cfg.tol_x && s.spread_f() <= cfg.tol_f;
    }

    Ok(NelderMeadResult {
        x: std::mem::take(&mut s.points[0]),
        value: s.values[0],
        iterations,
        evaluations,
        converged,
        trace,
    })
}
