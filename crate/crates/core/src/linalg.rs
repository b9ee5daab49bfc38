//! Cholesky factorization with escalating diagonal jitter.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Largest jitter tried, relative to the mean diagonal.
pub const MAX_RELATIVE_JITTER: f64 = 1e-2;
/// First nonzero jitter tried when the configured one is zero.
pub const MIN_RELATIVE_JITTER: f64 = 1e-8;

/// Lower-triangular factor of `C + jitter·I`.
#[derive(Debug, Clone)]
pub struct Factor {
    chol: Cholesky<f64, Dyn>,
    /// Absolute jitter that was added to the diagonal.
    pub jitter: f64,
}

impl Factor {
    /// Factorizes `c + j·I` starting at `j = relative_jitter · trace(c)/N`
    /// and escalating tenfold up to [`MAX_RELATIVE_JITTER`].
    pub fn new(c: &DMatrix<f64>, relative_jitter: f64) -> Result<Self> {
        let n = c.nrows();
        let trace = c.trace();
        let scale = if n > 0 && trace.is_finite() && trace > 0.0 {
            trace / n as f64
        } else {
            1.0
        };
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::NotPositiveDefinite { jitter: 0.0 });
        }
        let mut rel = relative_jitter.max(0.0);
        loop {
            let jitter = rel * scale;
            let mut m = c.clone();
            for i in 0..n {
                m[(i, i)] += jitter;
            }
            if let Some(chol) = Cholesky::new(m) {
                if chol
                    .l_dirty()
                    .diagonal()
                    .iter()
                    .all(|d| *d > 0.0 && d.is_finite())
                {
                    return Ok(Factor { chol, jitter });
                }
            }
            rel = if rel == 0.0 {
                MIN_RELATIVE_JITTER
            } else {
                rel * 10.0
            };
            if rel > MAX_RELATIVE_JITTER * (1.0 + 1e-9) {
                return Err(Error::NotPositiveDefinite { jitter });
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    pub fn l(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    /// `L⁻¹ b`.
    pub fn solve_lower(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = b.clone();
        self.chol.l_dirty().solve_lower_triangular_mut(&mut x);
        x
    }

    pub fn solve_lower_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = b.clone();
        self.chol.l_dirty().solve_lower_triangular_mut(&mut x);
        x
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    pub fn ln_determinant(&self) -> f64 {
        self.chol.ln_determinant()
    }
}
