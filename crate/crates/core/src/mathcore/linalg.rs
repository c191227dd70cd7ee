//! Symmetric eigendecomposition (cyclic Jacobi), the PSD square root built
//! on it, and one-sided Jacobi singular values.

use super::matrix::{dot, Matrix};
use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-8;
const NEGATIVE_EIGEN_TOL: f64 = 1e-10;
const MAX_SWEEPS: usize = 100;

/// Eigenvalues (ascending) and matching unit eigenvectors stored as columns.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

fn check_symmetric(a: &Matrix) -> Result<()> {
    if a.rows() != a.cols() {
        return Err(Error::Dimension {
            context: "square matrix".into(),
            expected: a.rows(),
            actual: a.cols(),
        });
    }
    if !a.is_finite() {
        return Err(Error::NonFinite("symmetric matrix".into()));
    }
    let asym = a.max_asymmetry();
    if asym > SYMMETRY_TOL * a.max_abs().max(1.0) {
        return Err(Error::NotSymmetric(asym));
    }
    Ok(())
}

pub fn symmetric_eigen(a: &Matrix) -> Result<SymmetricEigen> {
    check_symmetric(a)?;
    let n = a.rows();
    let mut m = a.add(&a.transpose()).scaled(0.5);
    let mut v = Matrix::identity(n);
    let scale = m.frobenius_norm();

    for _ in 0..MAX_SWEEPS {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += m.get(p, q) * m.get(p, q);
            }
        }
        if off.sqrt() <= 1e-15 * scale || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m.get(p, q);
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (m.get(q, q) - m.get(p, p)) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                rotate(&mut m, &mut v, p, q, c, s);
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m.get(i, i).total_cmp(&m.get(j, j)));
    let values = order.iter().map(|&i| m.get(i, i)).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        for r in 0..n {
            vectors.set(r, dst, v.get(r, src));
        }
    }
    Ok(SymmetricEigen { values, vectors })
}

fn rotate(m: &mut Matrix, v: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    let n = m.rows();
    for k in 0..n {
        let (akp, akq) = (m.get(k, p), m.get(k, q));
        m.set(k, p, c * akp - s * akq);
        m.set(k, q, s * akp + c * akq);
    }
    for k in 0..n {
        let (apk, aqk) = (m.get(p, k), m.get(q, k));
        m.set(p, k, c * apk - s * aqk);
        m.set(q, k, s * apk + c * aqk);
    }
    m.set(p, q, 0.0);
    m.set(q, p, 0.0);
    for k in 0..n {
        let (vkp, vkq) = (v.get(k, p), v.get(k, q));
        v.set(k, p, c * vkp - s * vkq);
        v.set(k, q, s * vkp + c * vkq);
    }
}

/// Principal square root of a symmetric positive semidefinite matrix.
///
/// Eigenvalues down to `-1e-10` (scaled by the matrix magnitude) are treated
/// as zero; anything more negative is rejected.
pub fn sym_matrix_sqrt(a: &Matrix) -> Result<Matrix> {
    let eig = symmetric_eigen(a)?;
    let floor = -NEGATIVE_EIGEN_TOL * a.max_abs().max(1.0);
    let roots = eig
        .values
        .iter()
        .map(|&l| {
            if l < floor {
                Err(Error::NotPsd(l))
            } else {
                Ok(l.max(0.0).sqrt())
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let n = a.rows();
    let mut out = Matrix::zeros(n, n);
    for k in 0..n {
        if roots[k] == 0.0 {
            continue;
        }
        for i in 0..n {
            let vik = eig.vectors.get(i, k) * roots[k];
            for j in i..n {
                let val = out.get(i, j) + vik * eig.vectors.get(j, k);
                out.set(i, j, val);
            }
        }
    }
    for i in 0..n {
        for j in 0..i {
            out.set(i, j, out.get(j, i));
        }
    }
    Ok(out)
}

/// Singular values in descending order (one-sided Jacobi on the columns).
pub fn singular_values(a: &Matrix) -> Vec<f64> {
    let mut cols: Vec<Vec<f64>> = (0..a.cols())
        .map(|c| (0..a.rows()).map(|r| a.get(r, c)).collect())
        .collect();
    let n = cols.len();
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = dot(&cols[p], &cols[p]);
                let beta = dot(&cols[q], &cols[q]);
                let gamma = dot(&cols[p], &cols[q]);
                if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (lo, hi) = cols.split_at_mut(q);
                let (cp, cq) = (&mut lo[p], &mut hi[0]);
                for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
                    let (xp, yq) = (*x, *y);
                    *x = c * xp - s * yq;
                    *y = s * xp + c * yq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sv: Vec<f64> = cols.iter().map(|c| dot(c, c).sqrt()).collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}
