//! Small dense solvers for the prototype scaling step.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

/// Cholesky factor `L` of a symmetric positive definite matrix, or `None` when
/// a pivot falls below `rel_pivot * max(diag)`.
pub fn cholesky(a: &Array2<f64>, rel_pivot: f64) -> Option<Array2<f64>> {
    let n = a.nrows();
    let max_diag = a.diag().iter().fold(0.0f64, |m, &x| m.max(x));
    if max_diag.is_nan() || max_diag <= 0.0 {
        return None;
    }
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= l[[j, k]] * l[[j, k]];
        }
        if d.is_nan() || d <= rel_pivot * max_diag {
            return None;
        }
        let d = d.sqrt();
        l[[j, j]] = d;
        for i in j + 1..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / d;
        }
    }
    Some(l)
}

pub fn cholesky_solve(l: &Array2<f64>, b: ArrayView1<f64>) -> Array1<f64> {
    let n = l.nrows();
    let mut y = Array1::<f64>::zeros(n);
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[[i, k]] * y[k];
        }
        y[i] = s / l[[i, i]];
    }
    let mut x = Array1::<f64>::zeros(n);
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[[k, i]] * x[k];
        }
        x[i] = s / l[[i, i]];
    }
    x
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues and eigenvectors (as columns).
pub fn symmetric_eigen(a: &Array2<f64>) -> (Array1<f64>, Array2<f64>) {
    let n = a.nrows();
    let mut m = a.clone();
    let mut v = Array2::<f64>::eye(n);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[[i, j]] * m[[i, j]])
            .sum();
        let total: f64 = m.iter().map(|x| x * x).sum();
        if off <= 1e-30 * total || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[[p, q]];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    (m.diag().to_owned(), v)
}

/// Minimum-norm solution of `A x = b` for symmetric positive semi-definite `A`,
/// discarding eigenvalues below `n * eps * max eigenvalue`.
pub fn min_norm_solve(a: &Array2<f64>, b: ArrayView1<f64>) -> Array1<f64> {
    let n = a.nrows();
    let (vals, vecs) = symmetric_eigen(a);
    let max = vals.iter().fold(0.0f64, |m, &x| m.max(x));
    let cutoff = max * n as f64 * f64::EPSILON;
    let mut x = Array1::<f64>::zeros(n);
    for j in 0..n {
        if vals[j] > cutoff {
            let u = vecs.column(j);
            let coef = u.dot(&b) / vals[j];
            x.scaled_add(coef, &u);
        }
    }
    x
}

/// How the normal equations were solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveMethod {
    Cholesky,
    MinNorm,
}

/// Least-squares coefficients `alpha` minimizing `||target - alpha^T rows||^2`,
/// via the normal equations `(R R^T) alpha = R target`.
///
/// Uses Cholesky when the Gram matrix is comfortably non-singular and the
/// minimum-norm eigen solution otherwise. One step of iterative refinement
/// is applied to the result.
pub fn least_squares_rows(
    rows: ArrayView2<f64>,
    target: ArrayView1<f64>,
) -> (Array1<f64>, SolveMethod) {
    let gram = rows.dot(&rows.t());
    let rhs = rows.dot(&target);
    let chol = cholesky(&gram, 1e-10);
    let solve = |b: ArrayView1<f64>| match &chol {
        Some(l) => cholesky_solve(l, b),
        None => min_norm_solve(&gram, b),
    };
    let mut x = solve(rhs.view());
    let resid = &target - &rows.t().dot(&x);
    let correction = solve(rows.dot(&resid).view());
    x += &correction;
    let method = if chol.is_some() {
        SolveMethod::Cholesky
    } else {
        SolveMethod::MinNorm
    };
    (x, method)
}
