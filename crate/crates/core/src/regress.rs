//! Least squares with an intercept.
//!
//! The intercept is absorbed by centering, then the centered design is
//! factored with column-pivoted Householder QR. Pivots below `1e-10` times the
//! largest one are treated as zero; in that case the minimum-norm solution is
//! returned and the fit is flagged rank deficient.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsFit {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub residuals: Vec<f64>,
    pub rank: usize,
    pub rank_deficient: bool,
}

impl OlsFit {
    pub fn rss(&self) -> f64 {
        self.residuals.iter().map(|r| r * r).sum()
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Regresses `y` on the given columns plus an intercept.
pub fn ols(columns: &[&[f64]], y: &[f64]) -> Result<OlsFit> {
    let n = y.len();
    let p = columns.len();
    if n <= p + 1 {
        return Err(Error::Underdetermined { rows: n, params: p + 1 });
    }
    if let Some(bad) = columns.iter().position(|c| c.len() != n) {
        return Err(Error::InvalidParameter(format!(
            "regressor {bad} has {} rows, target has {n}",
            columns[bad].len()
        )));
    }

    let y_mean = mean(y);
    let yc: Vec<f64> = y.iter().map(|v| v - y_mean).collect();
    let x_means: Vec<f64> = columns.iter().map(|c| mean(c)).collect();
    let centered: Vec<Vec<f64>> = columns
        .iter()
        .zip(&x_means)
        .map(|(c, m)| c.iter().map(|v| v - m).collect())
        .collect();

    let (coefficients, rank) = if p == 0 {
        (Vec::new(), 0)
    } else {
        solve_centered(&centered, &yc)
    };

    let intercept = y_mean - coefficients.iter().zip(&x_means).map(|(b, m)| b * m).sum::<f64>();
    let mut residuals = yc;
    for (col, &b) in centered.iter().zip(&coefficients) {
        if b != 0.0 {
            residuals.iter_mut().zip(col).for_each(|(r, x)| *r -= b * x);
        }
    }
    Ok(OlsFit {
        intercept,
        coefficients,
        residuals,
        rank,
        rank_deficient: rank < p,
    })
}

/// Minimum-norm least squares for centered data; returns `(β, rank)`.
fn solve_centered(columns: &[Vec<f64>], y: &[f64]) -> (Vec<f64>, usize) {
    let n = y.len();
    let p = columns.len();
    let mut a: Vec<Vec<f64>> = columns.to_vec();
    let mut qty = y.to_vec();
    let mut perm: Vec<usize> = (0..p).collect();
    let mut first_pivot = 0.0;
    let mut rank = 0;

    for j in 0..p {
        let (pivot, norm2) = (j..p)
            .map(|c| (c, a[c][j..].iter().map(|v| v * v).sum::<f64>()))
            .fold((j, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        a.swap(j, pivot);
        perm.swap(j, pivot);

        let norm = norm2.sqrt();
        if j == 0 {
            first_pivot = norm;
        }
        if norm == 0.0 || norm <= RANK_TOL * first_pivot {
            break;
        }
        let alpha = if a[j][j] > 0.0 { -norm } else { norm };
        let mut v = a[j][j..].to_vec();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 > 0.0 {
            let reflect = |target: &mut [f64]| {
                let dot: f64 = v.iter().zip(target.iter()).map(|(a, b)| a * b).sum();
                let s = 2.0 * dot / vnorm2;
                target.iter_mut().zip(&v).for_each(|(t, vi)| *t -= s * vi);
            };
            for col in a.iter_mut().skip(j + 1) {
                reflect(&mut col[j..n]);
            }
            reflect(&mut qty[j..n]);
        }
        a[j][j] = alpha;
        rank = j + 1;
    }

    // r[i][j] = a[j][i] for i <= j, i < rank
    let c1 = &qty[..rank];
    let beta_perm = if rank == p {
        back_substitute(&a, c1)
    } else {
        min_norm_trapezoid(&a, c1, rank, p)
    };
    let mut beta = vec![0.0; p];
    for (j, &b) in beta_perm.iter().enumerate() {
        beta[perm[j]] = b;
    }
    (beta, rank)
}

fn back_substitute(r: &[Vec<f64>], c: &[f64]) -> Vec<f64> {
    let k = c.len();
    let mut x = vec![0.0; k];
    for i in (0..k).rev() {
        let s: f64 = (i + 1..k).map(|j| r[j][i] * x[j]).sum();
        x[i] = (c[i] - s) / r[i][i];
    }
    x
}

/// Minimum-norm solution of `[R11 R12] x = c` (full row rank `r`), via a QR
/// factorization of the transpose.
fn min_norm_trapezoid(a: &[Vec<f64>], c: &[f64], r: usize, p: usize) -> Vec<f64> {
    if r == 0 {
        return vec![0.0; p];
    }
    // Rows of T are columns of Tᵀ: tt[i] is T's i-th row, length p.
    let mut tt: Vec<Vec<f64>> = (0..r)
        .map(|i| (0..p).map(|j| if j >= i { a[j][i] } else { 0.0 }).collect())
        .collect();
    let mut reflectors: Vec<(Vec<f64>, f64)> = Vec::with_capacity(r);
    for j in 0..r {
        let norm = tt[j][j..].iter().map(|v| v * v).sum::<f64>().sqrt();
        let alpha = if tt[j][j] > 0.0 { -norm } else { norm };
        let mut v = tt[j][j..].to_vec();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 > 0.0 {
            for col in tt.iter_mut().skip(j + 1) {
                let dot: f64 = v.iter().zip(&col[j..]).map(|(a, b)| a * b).sum();
                let s = 2.0 * dot / vnorm2;
                col[j..].iter_mut().zip(&v).for_each(|(t, vi)| *t -= s * vi);
            }
        }
        tt[j][j] = alpha;
        reflectors.push((v, vnorm2));
    }
    // Tᵀ = Q R2, so T = R2ᵀ Qᵀ; solve R2ᵀ w = c, then x = Q [w; 0].
    let mut w = vec![0.0; r];
    for i in 0..r {
        let s: f64 = (0..i).map(|j| tt[i][j] * w[j]).sum();
        w[i] = (c[i] - s) / tt[i][i];
    }
    let mut x = vec![0.0; p];
    x[..r].copy_from_slice(&w);
    for (j, (v, vnorm2)) in reflectors.iter().enumerate().rev() {
        if *vnorm2 > 0.0 {
            let dot: f64 = v.iter().zip(&x[j..]).map(|(a, b)| a * b).sum();
            let s = 2.0 * dot / vnorm2;
            x[j..].iter_mut().zip(v).for_each(|(t, vi)| *t -= s * vi);
        }
    }
    x
}
