//! Log marginal likelihood of areal observations and its gradient.
//!
//! For one domain `ℓ = -½ yᵀC⁻¹y - ½ ln|C| - (N/2) ln 2π` with zero mean.
//! Domains are conditionally independent given the shared latents, so
//! multi-domain likelihoods add up.
//!
//! The gradient uses `∂ℓ/∂θ = ½ tr((ααᵀ - C⁻¹) ∂C/∂θ)` with `α = C⁻¹y`, over
//! the unconstrained layout of [`HyperParams::to_unconstrained`].

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::aggregation::AggregationPlan;
use crate::error::{Error, Result};
use crate::kernel::HyperParams;
use crate::linalg::Factor;
use crate::model::DomainData;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// A domain prepared for repeated likelihood evaluation.
#[derive(Debug, Clone)]
pub struct PreparedDomain {
    pub plan: AggregationPlan,
    pub y: DVector<f64>,
}

impl PreparedDomain {
    pub fn new(domain: &DomainData) -> Result<Self> {
        Ok(PreparedDomain {
            plan: AggregationPlan::new(domain)?,
            y: DVector::from_vec(domain.stacked_values()),
        })
    }
}

/// Likelihood over a fixed set of domains; geometry is precomputed once.
#[derive(Debug, Clone)]
pub struct Objective {
    domains: Vec<PreparedDomain>,
    num_outputs: usize,
    jitter: f64,
}

impl Objective {
    pub fn new(domains: &[DomainData], jitter: f64) -> Result<Self> {
        let num_outputs = check_domains(domains)?;
        let prepared = domains
            .iter()
            .map(PreparedDomain::new)
            .collect::<Result<Vec<_>>>()?;
        Ok(Objective {
            domains: prepared,
            num_outputs,
            jitter,
        })
    }

    pub fn num_outputs(&self) -> usize {
        self.num_outputs
    }

    pub fn domains(&self) -> &[PreparedDomain] {
        &self.domains
    }

    pub fn value(&self, params: &HyperParams) -> Result<f64> {
        self.check_params(params)?;
        let parts = self
            .domains
            .par_iter()
            .map(|d| domain_value(d, params, self.jitter))
            .collect::<Result<Vec<_>>>()?;
        Ok(parts.into_iter().sum())
    }

    pub fn value_and_gradient(&self, params: &HyperParams) -> Result<(f64, Vec<f64>)> {
        self.check_params(params)?;
        let parts = self
            .domains
            .par_iter()
            .map(|d| domain_value_and_gradient(d, params, self.jitter))
            .collect::<Result<Vec<_>>>()?;
        let mut total = 0.0;
        let mut grad = vec![0.0; HyperParams::num_free(params.num_outputs(), params.num_latents())];
        for (v, g) in parts {
            total += v;
            for (a, b) in grad.iter_mut().zip(g) {
                *a += b;
            }
        }
        Ok((total, grad))
    }

    fn check_params(&self, params: &HyperParams) -> Result<()> {
        if params.num_outputs() != self.num_outputs {
            return Err(Error::InvalidParams(format!(
                "parameters describe {} outputs, data has {}",
                params.num_outputs(),
                self.num_outputs
            )));
        }
        Ok(())
    }
}

/// All domains must list the same datasets in the same order. Returns `S`.
pub(crate) fn check_domains(domains: &[DomainData]) -> Result<usize> {
    let first = domains
        .first()
        .ok_or_else(|| Error::InvalidData("no domains supplied".into()))?;
    for d in &domains[1..] {
        let same = d.datasets.len() == first.datasets.len()
            && d.datasets
                .iter()
                .zip(&first.datasets)
                .all(|(a, b)| a.id == b.id);
        if !same {
            return Err(Error::InvalidData(format!(
                "domain `{}` does not list the same datasets as `{}`",
                d.id, first.id
            )));
        }
    }
    Ok(first.datasets.len())
}

fn domain_value(d: &PreparedDomain, params: &HyperParams, jitter: f64) -> Result<f64> {
    let n = d.plan.len();
    if n == 0 {
        return Ok(0.0);
    }
    let c = d.plan.moments(params).c;
    let factor = Factor::new(&c, jitter)?;
    let z = factor.solve_lower(&d.y);
    Ok(-0.5 * z.norm_squared() - 0.5 * factor.ln_determinant() - 0.5 * n as f64 * LN_2PI)
}

fn domain_value_and_gradient(
    d: &PreparedDomain,
    params: &HyperParams,
    jitter: f64,
) -> Result<(f64, Vec<f64>)> {
    let s_count = params.num_outputs();
    let l_count = params.num_latents();
    let mut grad = vec![0.0; HyperParams::num_free(s_count, l_count)];
    let n = d.plan.len();
    if n == 0 {
        return Ok((0.0, grad));
    }
    let integrals = d.plan.latent_integrals(params, true);
    let c = d.plan.covariance(&integrals, params);
    let factor = Factor::new(&c, jitter)?;
    let alpha = factor.solve(&d.y);
    let value = -0.5 * d.y.dot(&alpha) - 0.5 * factor.ln_determinant() - 0.5 * n as f64 * LN_2PI;

    // M = ααᵀ - C⁻¹
    let mut m: DMatrix<f64> = factor.inverse();
    m.neg_mut();
    m.ger(1.0, &alpha, &alpha, 1.0);

    let index = d.plan.index();
    let ds = |p: usize| index[p].0;

    let w_off = 0;
    let beta_off = s_count * l_count;
    let lambda_off = beta_off + l_count;
    let sigma_off = lambda_off + s_count;

    for l in 0..l_count {
        let gam = &integrals.gamma[l];
        let dgam = &integrals.dgamma[l];
        let mut dbeta = 0.0;
        for p in 0..n {
            let sp = ds(p);
            let mut row = 0.0;
            for q in 0..n {
                let sq = ds(q);
                let mg = m[(p, q)] * gam[(p, q)];
                row += mg * params.w(sq, l);
                dbeta += m[(p, q)] * params.w(sp, l) * params.w(sq, l) * dgam[(p, q)];
            }
            grad[w_off + sp * l_count + l] += row;
        }
        grad[beta_off + l] = 0.5 * dbeta;
    }

    for p in 0..n {
        let sp = ds(p);
        grad[sigma_off + sp] += params.sigma2(sp) * m[(p, p)];
        let l2 = params.lambda2(sp);
        if l2 > 0.0 {
            for q in 0..n {
                if ds(q) == sp {
                    let ov = d.plan.overlap(p, q);
                    if ov != 0.0 {
                        grad[lambda_off + sp] += l2 * m[(p, q)] * ov;
                    }
                }
            }
        }
    }
    Ok((value, grad))
}

/// `Σ_v ln N(y_v | 0, C_v)` at shared hyperparameters.
pub fn log_marginal_likelihood(
    params: &HyperParams,
    domains: &[DomainData],
    jitter: f64,
) -> Result<f64> {
    Objective::new(domains, jitter)?.value(params)
}

/// Gradient of [`log_marginal_likelihood`] over the unconstrained parameters.
pub fn gradient(params: &HyperParams, domains: &[DomainData], jitter: f64) -> Result<Vec<f64>> {
    Ok(Objective::new(domains, jitter)?
        .value_and_gradient(params)?
        .1)
}
