//! Dense linear-algebra helpers: log-scaled determinants, norms and
//! power iteration.

use nalgebra::{DMatrix, DVector};

/// Determinant stored as a sign and the natural log of its magnitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogDet {
    /// `1.0`, `-1.0`, or `0.0` for a singular matrix.
    pub sign: f64,
    /// `ln |det|`; `-inf` when singular.
    pub log_abs: f64,
}

impl LogDet {
    /// The determinant as a plain float (may under- or overflow).
    pub fn value(&self) -> f64 {
        if self.sign == 0.0 {
            0.0
        } else {
            self.sign * self.log_abs.exp()
        }
    }

    /// True when the determinant is exactly zero or its log is `-inf`.
    pub fn is_zero(&self) -> bool {
        self.sign == 0.0 || self.log_abs == f64::NEG_INFINITY
    }

    /// Signed ratio `self / other`, computed in log space.
    pub fn ratio(&self, other: &LogDet) -> f64 {
        if self.is_zero() {
            return 0.0;
        }
        self.sign * other.sign * (self.log_abs - other.log_abs).exp()
    }
}

/// Determinant of a square matrix together with the determinant of its
/// row-equilibrated version.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetParts {
    /// Determinant of the input matrix.
    pub det: LogDet,
    /// `ln |det|` after dividing every row by its largest magnitude.
    pub log_abs_equilibrated: f64,
}

/// Determinant via partial-pivot LU on the row-equilibrated matrix,
/// accumulating the log-magnitude and sign separately.
pub fn log_det_parts(a: &DMatrix<f64>) -> DetParts {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "determinant of a non-square matrix");
    let singular = DetParts {
        det: LogDet { sign: 0.0, log_abs: f64::NEG_INFINITY },
        log_abs_equilibrated: f64::NEG_INFINITY,
    };
    if n == 0 {
        return DetParts { det: LogDet { sign: 1.0, log_abs: 0.0 }, log_abs_equilibrated: 0.0 };
    }
    let mut m = a.clone();
    let mut log_scale = 0.0;
    for i in 0..n {
        let s = m.row(i).iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        if s == 0.0 || !s.is_finite() {
            return singular;
        }
        log_scale += s.ln();
        for j in 0..n {
            m[(i, j)] /= s;
        }
    }
    let mut sign = 1.0;
    let mut log_abs = 0.0;
    for col in 0..n {
        let mut piv = col;
        let mut best = m[(col, col)].abs();
        for r in col + 1..n {
            let v = m[(r, col)].abs();
            if v > best {
                best = v;
                piv = r;
            }
        }
        if best == 0.0 {
            return singular;
        }
        if piv != col {
            m.swap_rows(piv, col);
            sign = -sign;
        }
        let p = m[(col, col)];
        if p < 0.0 {
            sign = -sign;
        }
        log_abs += p.abs().ln();
        for r in col + 1..n {
            let f = m[(r, col)] / p;
            if f != 0.0 {
                for c in col + 1..n {
                    let v = m[(col, c)];
                    m[(r, c)] -= f * v;
                }
            }
        }
    }
    DetParts {
        det: LogDet { sign, log_abs: log_abs + log_scale },
        log_abs_equilibrated: log_abs,
    }
}

/// Determinant of a square matrix in log form.
pub fn log_det(a: &DMatrix<f64>) -> LogDet {
    log_det_parts(a).det
}

/// Maximum absolute row sum.
pub fn inf_norm(a: &DMatrix<f64>) -> f64 {
    (0..a.nrows())
        .map(|i| a.row(i).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Estimate of `‖A⁻¹‖₂` by power iteration on `A⁻¹A⁻ᵀ`.
///
/// Returns `None` when `A` is singular.
pub fn inverse_spectral_norm(a: &DMatrix<f64>, iterations: usize, tol: f64) -> Option<f64> {
    let n = a.nrows();
    let lu = a.clone().lu();
    let lu_t = a.transpose().lu();
    let mut v = DVector::from_fn(n, |i, _| 1.0 + 0.1 * i as f64);
    v /= v.norm();
    let mut est = 0.0;
    for _ in 0..iterations.max(1) {
        let w = lu_t.solve(&v)?;
        let u = lu.solve(&w)?;
        let nu = u.norm();
        if nu == 0.0 || !nu.is_finite() {
            return None;
        }
        let next = nu.sqrt();
        v = u / nu;
        let done = (next - est).abs() <= tol * next;
        est = next;
        if done {
            break;
        }
    }
    Some(est)
}

/// True when `a` is symmetric positive definite (Cholesky succeeds).
pub fn cholesky_succeeds(a: &DMatrix<f64>) -> bool {
    nalgebra::Cholesky::new(a.clone()).is_some()
}
