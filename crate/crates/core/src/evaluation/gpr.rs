//! Single-output GP regression on point locations, used as the naive baseline.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::Factor;
use crate::optim::{self, LbfgsSettings};

const LN_VARIANCE_BOUNDS: (f64, f64) = (-9.210_340_371_976_184, 4.605_170_185_988_092);
const LN_NOISE_BOUNDS: (f64, f64) = (-13.815_510_557_964_274, 4.605_170_185_988_092);

/// Squared-exponential GP with homoscedastic noise on continuous points.
#[derive(Debug, Clone)]
pub struct PointGp {
    pub points: Vec<[f64; 2]>,
    pub variance: f64,
    pub lengthscale: f64,
    pub noise: f64,
    factor: Factor,
    alpha: DVector<f64>,
}

fn d2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

fn gram(points: &[[f64; 2]], variance: f64, lengthscale: f64, noise: f64) -> DMatrix<f64> {
    let n = points.len();
    DMatrix::from_fn(n, n, |i, j| {
        let k = variance * (-d2(points[i], points[j]) / (2.0 * lengthscale * lengthscale)).exp();
        if i == j {
            k + noise
        } else {
            k
        }
    })
}

fn neg_log_likelihood(
    points: &[[f64; 2]],
    y: &DVector<f64>,
    theta: &[f64],
) -> Option<(f64, Vec<f64>)> {
    let (variance, lengthscale, noise) = (theta[0].exp(), theta[1].exp(), theta[2].exp());
    let k = gram(points, variance, lengthscale, noise);
    let factor = Factor::new(&k, 0.0).ok()?;
    let alpha = factor.solve(y);
    let n = y.len() as f64;
    let ll = -0.5 * y.dot(&alpha)
        - 0.5 * factor.ln_determinant()
        - 0.5 * n * (2.0 * std::f64::consts::PI).ln();
    let m = &alpha * alpha.transpose() - factor.inverse();
    let mut g = [0.0; 3];
    for i in 0..points.len() {
        for j in 0..points.len() {
            let r2 = d2(points[i], points[j]) / (lengthscale * lengthscale);
            let kf = variance * (-0.5 * r2).exp();
            g[0] += m[(i, j)] * kf;
            g[1] += m[(i, j)] * kf * r2;
            if i == j {
                g[2] += m[(i, j)] * noise;
            }
        }
    }
    ll.is_finite()
        .then(|| (-ll, g.iter().map(|v| -0.5 * v).collect()))
}

impl PointGp {
    /// Conditions on `y` at fixed hyperparameters.
    pub fn new(
        points: Vec<[f64; 2]>,
        y: &[f64],
        variance: f64,
        lengthscale: f64,
        noise: f64,
    ) -> Result<Self> {
        if points.len() != y.len() {
            return Err(Error::LengthMismatch(points.len(), y.len()));
        }
        if points.is_empty() {
            return Err(Error::InvalidData("no training points".into()));
        }
        if !(variance > 0.0 && lengthscale > 0.0 && noise >= 0.0) {
            return Err(Error::InvalidParams(format!(
                "variance {variance}, length-scale {lengthscale}, noise {noise}"
            )));
        }
        let factor = Factor::new(&gram(&points, variance, lengthscale, noise), 0.0)?;
        let alpha = factor.solve(&DVector::from_column_slice(y));
        Ok(PointGp {
            points,
            variance,
            lengthscale,
            noise,
            factor,
            alpha,
        })
    }

    /// Maximum-likelihood fit of variance, length-scale and noise, starting
    /// from each of `lengthscales` and keeping the best.
    pub fn fit(
        points: Vec<[f64; 2]>,
        y: &[f64],
        lengthscales: &[f64],
        lengthscale_bounds: (f64, f64),
    ) -> Result<Self> {
        if points.len() != y.len() {
            return Err(Error::LengthMismatch(points.len(), y.len()));
        }
        let yv = DVector::from_column_slice(y);
        let lower = [
            LN_VARIANCE_BOUNDS.0,
            lengthscale_bounds.0.ln(),
            LN_NOISE_BOUNDS.0,
        ];
        let upper = [
            LN_VARIANCE_BOUNDS.1,
            lengthscale_bounds.1.ln(),
            LN_NOISE_BOUNDS.1,
        ];
        let settings = LbfgsSettings::default();
        let mut best: Option<(f64, Vec<f64>)> = None;
        for &ls in lengthscales {
            let x0 = [0.0, ls.ln().clamp(lower[1], upper[1]), (0.1f64).ln()];
            let f = |t: &[f64]| neg_log_likelihood(&points, &yv, t);
            if let Some(r) = optim::minimize(f, &x0, &lower, &upper, &settings) {
                if best.as_ref().is_none_or(|(bf, _)| r.f < *bf) {
                    best = Some((r.f, r.x));
                }
            }
        }
        let (_, t) = best.ok_or_else(|| {
            Error::OptimizerDiverged("point GP fit failed from every start".into())
        })?;
        PointGp::new(points, y, t[0].exp(), t[1].exp(), t[2].exp())
    }

    fn kvec(&self, x: [f64; 2]) -> DVector<f64> {
        DVector::from_iterator(
            self.points.len(),
            self.points.iter().map(|&p| {
                self.variance * (-d2(p, x) / (2.0 * self.lengthscale * self.lengthscale)).exp()
            }),
        )
    }

    /// Posterior mean and latent (noise-free) variance at `x`.
    pub fn predict(&self, x: [f64; 2]) -> (f64, f64) {
        let k = self.kvec(x);
        let v = self.factor.solve_lower(&k);
        (
            k.dot(&self.alpha),
            (self.variance - v.norm_squared()).max(0.0),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn interpolates_a_single_point() {
        let gp = PointGp::new(vec![[1.0, 2.0]], &[0.7], 1.3, 2.0, 0.0).unwrap();
        let (m, v) = gp.predict([1.0, 2.0]);
        assert_abs_diff_eq!(m, 0.7, epsilon = 1e-12);
        assert_abs_diff_eq!(v, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn far_predictions_revert_to_zero() {
        let gp = PointGp::new(vec![[0.0, 0.0], [1.0, 0.0]], &[1.5, -0.5], 1.0, 1.0, 0.01).unwrap();
        let (m, v) = gp.predict([10.0, 0.0]);
        assert!(m.abs() < 1e-3);
        assert_abs_diff_eq!(v, 1.0, epsilon = 1e-3);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let pts = vec![[0.0, 0.0], [1.0, 0.5], [2.0, 2.0], [0.5, 3.0]];
        let y = DVector::from_vec(vec![0.3, -0.2, 1.1, 0.4]);
        let theta = [0.2, 0.4, -1.5];
        let (_, g) = neg_log_likelihood(&pts, &y, &theta).unwrap();
        for k in 0..3 {
            let mut tp = theta;
            let mut tm = theta;
            tp[k] += 1e-5;
            tm[k] -= 1e-5;
            let fd = (neg_log_likelihood(&pts, &y, &tp).unwrap().0
                - neg_log_likelihood(&pts, &y, &tm).unwrap().0)
                / 2e-5;
            assert!(
                (fd - g[k]).abs() <= 1e-6 * fd.abs().max(1.0),
                "{k}: {fd} vs {}",
                g[k]
            );
        }
    }

    #[test]
    fn fit_improves_on_start() {
        let pts: Vec<[f64; 2]> = (0..8).map(|i| [i as f64, (i % 3) as f64]).collect();
        let y: Vec<f64> = pts.iter().map(|p| (p[0] * 0.6).sin()).collect();
        let yv = DVector::from_vec(y.clone());
        let gp = PointGp::fit(pts.clone(), &y, &[2.0], (0.1, 100.0)).unwrap();
        let fitted = neg_log_likelihood(
            &pts,
            &yv,
            &[gp.variance.ln(), gp.lengthscale.ln(), gp.noise.ln()],
        )
        .unwrap()
        .0;
        let start = neg_log_likelihood(&pts, &yv, &[0.0, 2f64.ln(), 0.1f64.ln()])
            .unwrap()
            .0;
        assert!(fitted <= start);
    }
}
