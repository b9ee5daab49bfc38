//! Posterior process given areal observations.
//!
//! `m*(x) = H(x)ᵀ C⁻¹ y` and `K*(x, x') = K(x, x') - H(x)ᵀ C⁻¹ H(x')`, where
//! `H(x)` holds the point-to-region covariances. Region-level predictions
//! integrate both against the target weights without forming `K*`.

use nalgebra::{DMatrix, DVector};

use crate::aggregation::WeightedRegion;
use crate::error::{Error, Result};
use crate::geometry::{AggregationScheme, Partition};
use crate::model::fit::{FittedDomain, FittedModel};

/// Clamping threshold below which a negative variance is reported.
pub const NEGATIVE_VARIANCE_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct RegionPrediction {
    pub region_id: String,
    pub mean: f64,
    pub variance: f64,
}

/// Per-output grid values, indexed `[s][cell]`.
pub type Fields = Vec<Vec<f64>>;

/// Posterior view of one fitted domain. Outputs are in normalized units.
#[derive(Debug, Clone, Copy)]
pub struct PosteriorGP<'a> {
    model: &'a FittedModel,
    domain: &'a FittedDomain,
}

fn clamp_variance(v: f64, what: &str) -> f64 {
    if v < 0.0 {
        if v < -NEGATIVE_VARIANCE_TOLERANCE {
            log::warn!("clamping negative posterior variance {v:e} for {what}");
        }
        0.0
    } else {
        v
    }
}

impl<'a> PosteriorGP<'a> {
    pub fn new(model: &'a FittedModel, domain_id: &str) -> Result<Self> {
        Ok(PosteriorGP {
            model,
            domain: model.domain(domain_id)?,
        })
    }

    pub fn num_outputs(&self) -> usize {
        self.model.params.num_outputs()
    }

    fn check_cell(&self, x: usize) -> Result<()> {
        let g = &self.domain.data.grid;
        if g.contains_cell(x) {
            Ok(())
        } else {
            Err(Error::GridMismatch {
                region: format!("point {x}"),
                cell: x,
                nx: g.nx,
                ny: g.ny,
            })
        }
    }

    /// `H(x)`, one column per output.
    pub fn h_matrix(&self, x: usize) -> Result<DMatrix<f64>> {
        self.check_cell(x)?;
        let plan = &self.domain.plan;
        let params = &self.model.params;
        let target = WeightedRegion::point(0, x, plan.grid());
        let (phi, overlap) = plan.target_integrals(&target, params);
        let cols: Vec<DVector<f64>> = (0..self.num_outputs())
            .map(|s| plan.combine_target(&phi, &overlap, s, params))
            .collect();
        Ok(DMatrix::from_columns(&cols))
    }

    /// Posterior mean (all outputs) and covariance at grid point `x`.
    pub fn point(&self, x: usize) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let prior = self.model.params.point_cov();
        let Some(factor) = &self.domain.factor else {
            self.check_cell(x)?;
            return Ok((DVector::zeros(self.num_outputs()), prior));
        };
        let h = self.h_matrix(x)?;
        let mean = h.tr_mul(&self.domain.alpha);
        let v = factor.solve_lower_mat(&h);
        let cov = prior - v.tr_mul(&v);
        Ok((mean, cov))
    }

    /// Mean and variance of output `s` aggregated over each region of `target`.
    pub fn predict_region(
        &self,
        s: usize,
        target: &Partition,
        scheme: AggregationScheme,
    ) -> Result<Vec<RegionPrediction>> {
        if s >= self.num_outputs() {
            return Err(Error::InvalidData(format!("output index {s} out of range")));
        }
        let plan = &self.domain.plan;
        let params = &self.model.params;
        target
            .regions
            .iter()
            .map(|r| {
                let wr = WeightedRegion::new(s, r, scheme, plan.grid())?;
                let prior = plan.target_prior_var(&wr, s, params);
                let (mean, variance) = match &self.domain.factor {
                    None => (0.0, prior),
                    Some(factor) => {
                        let h = plan.target_cov(&wr, s, params);
                        let v = factor.solve_lower(&h);
                        (h.dot(&self.domain.alpha), prior - v.norm_squared())
                    }
                };
                Ok(RegionPrediction {
                    region_id: r.id().to_string(),
                    mean,
                    variance: clamp_variance(variance, r.id()),
                })
            })
            .collect()
    }

    /// Prior variance of output `s` aggregated over each region.
    pub fn prior_region_variance(
        &self,
        s: usize,
        target: &Partition,
        scheme: AggregationScheme,
    ) -> Result<Vec<f64>> {
        let plan = &self.domain.plan;
        target
            .regions
            .iter()
            .map(|r| {
                let wr = WeightedRegion::new(s, r, scheme, plan.grid())?;
                Ok(plan.target_prior_var(&wr, s, &self.model.params))
            })
            .collect()
    }

    /// Posterior mean and variance of every output at every grid cell,
    /// indexed `[s][cell]`.
    pub fn raster(&self) -> Result<(Fields, Fields)> {
        let n_cells = self.domain.data.grid.len();
        let s_count = self.num_outputs();
        let mut means = vec![vec![0.0; n_cells]; s_count];
        let mut vars = vec![vec![0.0; n_cells]; s_count];
        for x in 0..n_cells {
            let (m, c) = self.point(x)?;
            for s in 0..s_count {
                means[s][x] = m[s];
                vars[s][x] = clamp_variance(c[(s, s)], "grid cell");
            }
        }
        Ok((means, vars))
    }
}

/// Posterior mean and covariance of all outputs at grid point `x`.
pub fn posterior_point(
    model: &FittedModel,
    domain_id: &str,
    x: usize,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    PosteriorGP::new(model, domain_id)?.point(x)
}

/// Region means and variances of output `s` over `target`.
pub fn predict_region(
    model: &FittedModel,
    domain_id: &str,
    s: usize,
    target: &Partition,
    scheme: AggregationScheme,
) -> Result<Vec<RegionPrediction>> {
    PosteriorGP::new(model, domain_id)?.predict_region(s, target, scheme)
}
