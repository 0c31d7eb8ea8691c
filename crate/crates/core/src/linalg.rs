//! Small dense least-squares helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative singular-value cutoff for rank decisions.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct OlsFit {
    /// `p × k` coefficients for `p` regressors and `k` targets.
    pub beta: DMatrix<f64>,
    pub residuals: DMatrix<f64>,
    pub sse: f64,
    /// True when the design was rank deficient and a ridge penalty was used.
    pub ridged: bool,
}

/// Numerical rank of `x` from its singular values.
pub fn rank(x: &DMatrix<f64>) -> usize {
    if x.is_empty() {
        return 0;
    }
    let sv = x.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > max * RANK_TOL).count()
}

/// Least squares of every column of `y` on `x`.
///
/// A full-rank design is solved exactly via Cholesky on the normal equations.
/// A rank-deficient design is solved with `ridge · I` added when `ridge > 0`
/// and rejected otherwise.
pub fn ols(x: &DMatrix<f64>, y: &DMatrix<f64>, ridge: f64) -> Result<OlsFit> {
    if x.nrows() != y.nrows() {
        return Err(Error::Numerical(format!(
            "design has {} rows, target has {}",
            x.nrows(),
            y.nrows()
        )));
    }
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(Error::InsufficientData("empty design".into()));
    }
    let deficient = rank(x) < x.ncols();
    if deficient && ridge <= 0.0 {
        return Err(Error::Numerical("rank-deficient design".into()));
    }
    let xt = x.transpose();
    let mut gram = &xt * x;
    if deficient {
        for i in 0..gram.nrows() {
            gram[(i, i)] += ridge;
        }
    }
    let rhs = &xt * y;
    let beta = match gram.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => gram
            .svd(true, true)
            .solve(&rhs, RANK_TOL)
            .map_err(|e| Error::Numerical(e.to_string()))?,
    };
    let residuals = y - x * &beta;
    let sse = residuals.iter().map(|r| r * r).sum();
    Ok(OlsFit {
        beta,
        residuals,
        sse,
        ridged: deficient,
    })
}

/// Single-target convenience wrapper around [`ols`].
pub fn ols_vec(x: &DMatrix<f64>, y: &DVector<f64>, ridge: f64) -> Result<OlsFit> {
    let y = DMatrix::from_column_slice(y.len(), 1, y.as_slice());
    ols(x, &y, ridge)
}

/// Largest eigenvalue modulus of a square matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}
