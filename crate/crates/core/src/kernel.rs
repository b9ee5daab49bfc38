//! Latent squared-exponential kernels, mixing weights and noise terms.
//!
//! Output `s` is `f_s(x) = Σ_l w_{s,l} g_l(x) + n_s(x)` where the `g_l` are
//! independent unit-variance SE processes and `n_s` is white noise with
//! amplitude `λ_s`. White noise is discretized per grid point: it contributes
//! `λ_s²` only when both arguments are the same grid point.

use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Squared-exponential latent covariance with unit signal variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatentKernel {
    pub beta: f64,
}

impl LatentKernel {
    /// Signal variance; fixed because column scaling of `W` already carries it.
    pub const ALPHA2: f64 = 1.0;

    pub fn new(beta: f64) -> Result<Self> {
        if !(beta.is_finite() && beta > 0.0) {
            return Err(Error::InvalidParams(format!(
                "length-scale must be positive, got {beta}"
            )));
        }
        Ok(LatentKernel { beta })
    }

    #[inline]
    pub fn eval(&self, d2: f64) -> f64 {
        Self::ALPHA2 * (-d2 / (2.0 * self.beta * self.beta)).exp()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    /// White-noise amplitudes `λ_s`; the process variance per grid point is `λ_s²`.
    pub lambda: Vec<f64>,
    /// Observation noise variances `σ_s²`.
    pub sigma2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixingWeights(pub DMatrix<f64>);

impl MixingWeights {
    pub fn outputs(&self) -> usize {
        self.0.nrows()
    }

    pub fn latents(&self) -> usize {
        self.0.ncols()
    }
}

/// All learnable quantities of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperParams {
    pub weights: MixingWeights,
    pub kernels: Vec<LatentKernel>,
    pub noise: NoiseSpec,
}

impl HyperParams {
    pub fn new(
        w: DMatrix<f64>,
        beta: Vec<f64>,
        lambda: Vec<f64>,
        sigma2: Vec<f64>,
    ) -> Result<Self> {
        let kernels = beta
            .into_iter()
            .map(LatentKernel::new)
            .collect::<Result<Vec<_>>>()?;
        let params = HyperParams {
            weights: MixingWeights(w),
            kernels,
            noise: NoiseSpec { lambda, sigma2 },
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.weights.outputs();
        let l = self.weights.latents();
        if l == 0 || s == 0 {
            return Err(Error::InvalidParams(format!("W is {s}x{l}")));
        }
        if self.kernels.len() != l {
            return Err(Error::InvalidParams(format!(
                "W has {l} columns but {} kernels were given",
                self.kernels.len()
            )));
        }
        if self.noise.lambda.len() != s || self.noise.sigma2.len() != s {
            return Err(Error::InvalidParams(format!(
                "noise vectors must have {s} entries (lambda {}, sigma2 {})",
                self.noise.lambda.len(),
                self.noise.sigma2.len()
            )));
        }
        if self.weights.0.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("W has non-finite entries".into()));
        }
        if self
            .noise
            .lambda
            .iter()
            .chain(&self.noise.sigma2)
            .any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return Err(Error::InvalidParams(
                "noise terms must be finite and nonnegative".into(),
            ));
        }
        for k in &self.kernels {
            LatentKernel::new(k.beta)?;
        }
        Ok(())
    }

    pub fn num_outputs(&self) -> usize {
        self.weights.outputs()
    }

    pub fn num_latents(&self) -> usize {
        self.weights.latents()
    }

    pub fn w(&self, s: usize, l: usize) -> f64 {
        self.weights.0[(s, l)]
    }

    pub fn beta(&self, l: usize) -> f64 {
        self.kernels[l].beta
    }

    pub fn lambda2(&self, s: usize) -> f64 {
        self.noise.lambda[s] * self.noise.lambda[s]
    }

    pub fn sigma2(&self, s: usize) -> f64 {
        self.noise.sigma2[s]
    }

    /// `γ_l` at squared distance `d2`.
    pub fn gamma(&self, l: usize, d2: f64) -> f64 {
        self.kernels[l].eval(d2)
    }

    /// `Σ_l w_{s,l} w_{s2,l} γ_l(d2)`, plus `λ_s²` when `s == s2` at the same grid point.
    pub fn cross_cov(&self, s: usize, s2: usize, d2: f64, same_point: bool) -> f64 {
        let mut k = 0.0;
        for l in 0..self.num_latents() {
            k += self.w(s, l) * self.w(s2, l) * self.gamma(l, d2);
        }
        if s == s2 && same_point {
            k += self.lambda2(s);
        }
        k
    }

    /// Prior covariance `K(x, x)` between all outputs at one grid point.
    pub fn point_cov(&self) -> DMatrix<f64> {
        let s = self.num_outputs();
        DMatrix::from_fn(s, s, |a, b| self.cross_cov(a, b, 0.0, true))
    }

    /// Length of the unconstrained parameter vector.
    pub fn num_free(s: usize, l: usize) -> usize {
        s * l + l + 2 * s
    }

    /// Layout: `W` row-major, `ln β_l`, `ln λ_s`, `ln σ_s`.
    pub fn to_unconstrained(&self) -> Vec<f64> {
        let s = self.num_outputs();
        let l = self.num_latents();
        let mut out = Vec::with_capacity(Self::num_free(s, l));
        for i in 0..s {
            for j in 0..l {
                out.push(self.w(i, j));
            }
        }
        out.extend(self.kernels.iter().map(|k| k.beta.ln()));
        out.extend(self.noise.lambda.iter().map(|v| v.ln()));
        out.extend(self.noise.sigma2.iter().map(|v| 0.5 * v.ln()));
        out
    }

    pub fn from_unconstrained(s: usize, l: usize, theta: &[f64]) -> Result<Self> {
        if theta.len() != Self::num_free(s, l) {
            return Err(Error::LengthMismatch(theta.len(), Self::num_free(s, l)));
        }
        let w = DMatrix::from_fn(s, l, |i, j| theta[i * l + j]);
        let off = s * l;
        let beta = theta[off..off + l].iter().map(|v| v.exp()).collect();
        let lambda = theta[off + l..off + l + s]
            .iter()
            .map(|v| v.exp())
            .collect();
        let sigma2 = theta[off + l + s..]
            .iter()
            .map(|v| (2.0 * v).exp())
            .collect();
        HyperParams::new(w, beta, lambda, sigma2)
    }

    /// Flat text form: one `key = value` line per parameter, in a fixed order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for s in 0..self.num_outputs() {
            for l in 0..self.num_latents() {
                let _ = writeln!(out, "W[{s}][{l}] = {}", self.w(s, l));
            }
        }
        for (l, k) in self.kernels.iter().enumerate() {
            let _ = writeln!(out, "beta[{l}] = {}", k.beta);
        }
        for (s, v) in self.noise.lambda.iter().enumerate() {
            let _ = writeln!(out, "lambda[{s}] = {v}");
        }
        for (s, v) in self.noise.sigma2.iter().enumerate() {
            let _ = writeln!(out, "sigma2[{s}] = {v}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut w: Vec<(usize, usize, f64)> = Vec::new();
        let mut beta: Vec<(usize, f64)> = Vec::new();
        let mut lambda: Vec<(usize, f64)> = Vec::new();
        let mut sigma2: Vec<(usize, f64)> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |msg: &str| Error::parse(format!("line {}", lineno + 1), msg.to_string());
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad("expected `key = value`"))?;
            let value: f64 = value
                .trim()
                .parse()
                .map_err(|_| bad("value is not a number"))?;
            let key = key.trim();
            let (name, rest) = key.split_once('[').ok_or_else(|| bad("missing index"))?;
            let idx: Vec<usize> = rest
                .split('[')
                .map(|p| p.trim_end_matches(']').parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad("bad index"))?;
            match (name, idx.as_slice()) {
                ("W", [s, l]) => w.push((*s, *l, value)),
                ("beta", [l]) => beta.push((*l, value)),
                ("lambda", [s]) => lambda.push((*s, value)),
                ("sigma2", [s]) => sigma2.push((*s, value)),
                _ => return Err(bad("unknown key")),
            }
        }
        let s = lambda.len();
        let l = beta.len();
        if w.len() != s * l || sigma2.len() != s {
            return Err(Error::parse(
                "hyperparameters",
                format!(
                    "inconsistent counts: {} W entries, {l} betas, {s} lambdas, {} sigma2s",
                    w.len(),
                    sigma2.len()
                ),
            ));
        }
        let mut wm = DMatrix::from_element(s, l, f64::NAN);
        for (i, j, v) in w {
            if i >= s || j >= l {
                return Err(Error::parse(
                    "hyperparameters",
                    format!("W[{i}][{j}] out of range"),
                ));
            }
            wm[(i, j)] = v;
        }
        let dense = |mut items: Vec<(usize, f64)>, what: &str| -> Result<Vec<f64>> {
            items.sort_by_key(|e| e.0);
            if items.iter().enumerate().any(|(k, e)| e.0 != k) {
                return Err(Error::parse(
                    "hyperparameters",
                    format!("{what} indices not contiguous"),
                ));
            }
            Ok(items.into_iter().map(|e| e.1).collect())
        };
        HyperParams::new(
            wm,
            dense(beta, "beta")?,
            dense(lambda, "lambda")?,
            dense(sigma2, "sigma2")?,
        )
    }
}
