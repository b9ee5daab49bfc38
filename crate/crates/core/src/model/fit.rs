//! Hyperparameter learning by maximizing the log marginal likelihood.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::aggregation::AggregationPlan;
use crate::error::{Error, Result};
use crate::kernel::HyperParams;
use crate::linalg::Factor;
use crate::model::likelihood::{check_domains, Objective};
use crate::model::DomainData;
use crate::optim::{self, LbfgsSettings, Termination};

/// Bounds on the log-scale parameters, as `(lower, upper)`.
const LN_LAMBDA_BOUNDS: (f64, f64) = (-9.210_340_371_976_184, 4.605_170_185_988_092); // 1e-4 .. 1e2
const LN_SIGMA_BOUNDS: (f64, f64) = (-9.210_340_371_976_184, 4.605_170_185_988_092);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitStrategy {
    /// Random `W` scaled by `1/√L`, length-scales spread around the median
    /// inter-region distance.
    #[default]
    Default,
    /// Same length-scales and noise, but `W = 0`.
    ZeroWeights,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub latents: usize,
    /// Relative diagonal jitter (multiplied by `trace(C)/N`) tried first.
    pub jitter: f64,
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub restarts: usize,
    pub seed: u64,
    pub init: InitStrategy,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            latents: 1,
            jitter: 1e-8,
            max_iterations: 200,
            gradient_tolerance: 1e-5,
            restarts: 5,
            seed: 0,
            init: InitStrategy::Default,
        }
    }
}

impl ModelConfig {
    pub fn with_latents(latents: usize) -> Self {
        ModelConfig {
            latents,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RestartReport {
    pub restart: usize,
    pub initial_log_likelihood: Option<f64>,
    pub final_log_likelihood: Option<f64>,
    pub iterations: usize,
    pub termination: Option<Termination>,
    /// Log likelihood after each accepted optimizer step.
    pub trace: Vec<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitDiagnostics {
    pub log_likelihood: f64,
    pub iterations: usize,
    pub best_restart: usize,
    /// Max-norm of the projected gradient at the optimum.
    pub gradient_norm: f64,
    pub restarts: Vec<RestartReport>,
}

/// Per-domain state needed for posterior prediction.
#[derive(Debug, Clone)]
pub struct FittedDomain {
    pub data: DomainData,
    pub plan: AggregationPlan,
    pub factor: Option<Factor>,
    /// `C⁻¹ y`.
    pub alpha: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct FittedModel {
    pub params: HyperParams,
    pub domains: Vec<FittedDomain>,
    pub jitter: f64,
    pub diagnostics: Option<FitDiagnostics>,
}

impl FittedModel {
    /// Conditions the model on `domains` at fixed hyperparameters.
    pub fn condition(params: HyperParams, domains: &[DomainData], jitter: f64) -> Result<Self> {
        let s = check_domains(domains)?;
        if params.num_outputs() != s {
            return Err(Error::InvalidParams(format!(
                "parameters describe {} outputs, data has {s}",
                params.num_outputs()
            )));
        }
        let fitted = domains
            .iter()
            .map(|d| {
                let plan = AggregationPlan::new(d)?;
                if plan.is_empty() {
                    return Ok(FittedDomain {
                        data: d.clone(),
                        plan,
                        factor: None,
                        alpha: DVector::zeros(0),
                    });
                }
                let c = plan.moments(&params).c;
                let factor = Factor::new(&c, jitter)?;
                let alpha = factor.solve(&DVector::from_vec(d.stacked_values()));
                Ok(FittedDomain {
                    data: d.clone(),
                    plan,
                    factor: Some(factor),
                    alpha,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FittedModel {
            params,
            domains: fitted,
            jitter,
            diagnostics: None,
        })
    }

    pub fn domain(&self, id: &str) -> Result<&FittedDomain> {
        self.domains
            .iter()
            .find(|d| d.data.id == id)
            .ok_or_else(|| Error::UnknownDomain(id.to_string()))
    }

    pub fn log_likelihood(&self) -> Option<f64> {
        self.diagnostics.as_ref().map(|d| d.log_likelihood)
    }
}

/// Median distance between region centroids over all domains, falling back to
/// a quarter of the largest grid extent.
fn median_centroid_distance(domains: &[DomainData]) -> f64 {
    let mut dists = Vec::new();
    let mut extent = 0.0f64;
    for d in domains {
        extent = extent.max(d.grid.nx.max(d.grid.ny) as f64 * d.grid.cell_size);
        let cs: Vec<[f64; 2]> = d
            .datasets
            .iter()
            .flat_map(|ds| ds.partition.regions.iter().map(|r| r.centroid(&d.grid)))
            .collect();
        for i in 0..cs.len() {
            for j in i + 1..cs.len() {
                let dd = ((cs[i][0] - cs[j][0]).powi(2) + (cs[i][1] - cs[j][1]).powi(2)).sqrt();
                if dd > 0.0 {
                    dists.push(dd);
                }
            }
        }
    }
    if dists.is_empty() {
        return (extent / 4.0).max(f64::MIN_POSITIVE);
    }
    dists.sort_by(|a, b| a.total_cmp(b));
    let m = dists.len();
    if m % 2 == 1 {
        dists[m / 2]
    } else {
        0.5 * (dists[m / 2 - 1] + dists[m / 2])
    }
}

fn restart_seed(seed: u64, restart: usize) -> u64 {
    seed ^ (restart as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Initial hyperparameters for one restart. Restart 0 keeps the nominal
/// length-scales; later restarts perturb them log-normally.
pub fn initial_params(
    domains: &[DomainData],
    config: &ModelConfig,
    restart: usize,
) -> Result<HyperParams> {
    let s = check_domains(domains)?;
    let l = config.latents;
    if l == 0 {
        return Err(Error::InvalidParams(
            "at least one latent process is required".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(restart_seed(config.seed, restart));
    let scale = 1.0 / (l as f64).sqrt();
    let w = match config.init {
        InitStrategy::Default => DMatrix::from_fn(s, l, |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * scale
        }),
        InitStrategy::ZeroWeights => DMatrix::zeros(s, l),
    };
    let base = median_centroid_distance(domains);
    let center = (l as f64 - 1.0) / 2.0;
    let beta = (0..l)
        .map(|k| {
            let nominal = base * 2f64.powf(k as f64 - center);
            if restart == 0 {
                nominal
            } else {
                let z: f64 = StandardNormal.sample(&mut rng);
                nominal * (0.5 * z).exp()
            }
        })
        .collect();
    HyperParams::new(w, beta, vec![0.1; s], vec![0.01; s])
}

/// Box bounds on the unconstrained parameter vector.
pub fn parameter_bounds(domains: &[DomainData], s: usize, l: usize) -> (Vec<f64>, Vec<f64>) {
    let min_cell = domains
        .iter()
        .map(|d| d.grid.cell_size)
        .fold(f64::INFINITY, f64::min);
    let max_extent = domains
        .iter()
        .map(|d| d.grid.nx.max(d.grid.ny) as f64 * d.grid.cell_size)
        .fold(0.0, f64::max);
    let mut lo = vec![f64::NEG_INFINITY; s * l];
    let mut hi = vec![f64::INFINITY; s * l];
    lo.extend(std::iter::repeat_n(min_cell.ln(), l));
    hi.extend(std::iter::repeat_n((100.0 * max_extent).ln(), l));
    lo.extend(std::iter::repeat_n(LN_LAMBDA_BOUNDS.0, s));
    hi.extend(std::iter::repeat_n(LN_LAMBDA_BOUNDS.1, s));
    lo.extend(std::iter::repeat_n(LN_SIGMA_BOUNDS.0, s));
    hi.extend(std::iter::repeat_n(LN_SIGMA_BOUNDS.1, s));
    (lo, hi)
}

/// Fits from the given starting point only.
pub fn fit_from(
    domains: &[DomainData],
    config: &ModelConfig,
    start: &HyperParams,
) -> Result<FittedModel> {
    let objective = Objective::new(domains, config.jitter)?;
    let (report, params) = run_restart(&objective, domains, config, 0, start.clone());
    finish(domains, config, vec![(report, params)])
}

/// Maximizes the log marginal likelihood over `config.restarts` starting
/// points and keeps the best. Deterministic for a given seed.
pub fn fit(domains: &[DomainData], config: &ModelConfig) -> Result<FittedModel> {
    let s = check_domains(domains)?;
    if domains.iter().all(|d| d.num_obs() == 0) {
        return Err(Error::InvalidData("no observations to fit".into()));
    }
    if config.latents > s {
        log::warn!(
            "{} latent processes for {s} datasets; fewer latents than datasets is usual",
            config.latents
        );
    }
    let objective = Objective::new(domains, config.jitter)?;
    let restarts = config.restarts.max(1);
    let runs: Vec<(RestartReport, Option<HyperParams>)> = (0..restarts)
        .into_par_iter()
        .map(|r| match initial_params(domains, config, r) {
            Ok(start) => run_restart(&objective, domains, config, r, start),
            Err(e) => (failed_report(r, e.to_string()), None),
        })
        .collect();
    finish(domains, config, runs)
}

fn failed_report(restart: usize, error: String) -> RestartReport {
    RestartReport {
        restart,
        initial_log_likelihood: None,
        final_log_likelihood: None,
        iterations: 0,
        termination: None,
        trace: Vec::new(),
        error: Some(error),
    }
}

fn run_restart(
    objective: &Objective,
    domains: &[DomainData],
    config: &ModelConfig,
    restart: usize,
    start: HyperParams,
) -> (RestartReport, Option<HyperParams>) {
    let s = start.num_outputs();
    let l = start.num_latents();
    let (lower, upper) = parameter_bounds(domains, s, l);
    let eval = |theta: &[f64]| -> Option<(f64, Vec<f64>)> {
        let p = HyperParams::from_unconstrained(s, l, theta).ok()?;
        let (v, g) = objective.value_and_gradient(&p).ok()?;
        Some((-v, g.into_iter().map(|x| -x).collect()))
    };
    let settings = LbfgsSettings {
        max_iterations: config.max_iterations,
        gradient_tolerance: config.gradient_tolerance,
        ..Default::default()
    };
    let theta0 = start.to_unconstrained();
    let Some(result) = optim::minimize(eval, &theta0, &lower, &upper, &settings) else {
        return (
            failed_report(restart, "objective undefined at the initial point".into()),
            None,
        );
    };
    let params = HyperParams::from_unconstrained(s, l, &result.x).ok();
    let report = RestartReport {
        restart,
        initial_log_likelihood: result.trace.first().map(|v| -v),
        final_log_likelihood: Some(-result.f),
        iterations: result.iterations,
        termination: Some(result.termination),
        trace: result.trace.iter().map(|v| -v).collect(),
        error: None,
    };
    (report, params)
}

fn finish(
    domains: &[DomainData],
    config: &ModelConfig,
    runs: Vec<(RestartReport, Option<HyperParams>)>,
) -> Result<FittedModel> {
    let best = runs
        .iter()
        .enumerate()
        .filter_map(|(k, (rep, p))| match (rep.final_log_likelihood, p) {
            (Some(v), Some(_)) if v.is_finite() => Some((k, v)),
            _ => None,
        })
        .fold(None, |acc: Option<(usize, f64)>, (k, v)| match acc {
            Some((_, bv)) if bv >= v => acc,
            _ => Some((k, v)),
        });
    let Some((k, ll)) = best else {
        let reasons: Vec<String> = runs
            .iter()
            .map(|(r, _)| {
                format!(
                    "restart {}: {}",
                    r.restart,
                    r.error.clone().unwrap_or_default()
                )
            })
            .collect();
        return Err(Error::OptimizerDiverged(reasons.join("; ")));
    };
    let params = runs[k].1.clone().expect("selected restart has parameters");
    let mut model = FittedModel::condition(params.clone(), domains, config.jitter)?;
    let s = params.num_outputs();
    let l = params.num_latents();
    let (lower, upper) = parameter_bounds(domains, s, l);
    let objective = Objective::new(domains, config.jitter)?;
    let gradient_norm = objective
        .value_and_gradient(&params)
        .map(|(_, g)| {
            let x = params.to_unconstrained();
            x.iter()
                .zip(&g)
                .zip(lower.iter().zip(&upper))
                .map(|((&xi, &gi), (&lo, &hi))| {
                    // maximizing: ascent pushes past the upper bound when gi > 0
                    if (xi <= lo && gi < 0.0) || (xi >= hi && gi > 0.0) {
                        0.0
                    } else {
                        gi.abs()
                    }
                })
                .fold(0.0, f64::max)
        })
        .unwrap_or(f64::NAN);
    model.diagnostics = Some(FitDiagnostics {
        log_likelihood: ll,
        iterations: runs[k].0.iterations,
        best_restart: k,
        gradient_norm,
        restarts: runs.into_iter().map(|(r, _)| r).collect(),
    });
    Ok(model)
}
