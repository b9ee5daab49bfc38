//! Refinement protocol: scoring, model selection and the centroid baselines.

mod gpr;

use rayon::prelude::*;

pub use gpr::PointGp;

use crate::error::{Error, Result};
use crate::geometry::{AggregationScheme, Partition};
use crate::model::{fit, predict_region, DomainData, FittedModel, ModelConfig, RegionPrediction};

/// Mean absolute percentage error on raw values.
pub fn mape(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    if y_true.len() != y_pred.len() {
        return Err(Error::LengthMismatch(y_true.len(), y_pred.len()));
    }
    if y_true.is_empty() {
        return Err(Error::InvalidData("no values to score".into()));
    }
    if let Some(k) = y_true.iter().position(|&v| v == 0.0) {
        return Err(Error::ZeroTruthValue(k));
    }
    let total: f64 = y_true
        .iter()
        .zip(y_pred)
        .map(|(t, p)| ((t - p) / t).abs())
        .sum();
    Ok(total / y_true.len() as f64)
}

/// Predict the fine-grained version of one target dataset from its coarse
/// observations (and any other datasets). The fine values are held privately
/// and only reachable through [`RefinementTask::score`].
#[derive(Debug, Clone)]
pub struct RefinementTask {
    pub id: String,
    pub domain_id: String,
    pub target: String,
    pub fine: Partition,
    pub fine_scheme: AggregationScheme,
    truth: Option<Vec<f64>>,
}

impl RefinementTask {
    pub fn new(
        id: impl Into<String>,
        domain_id: impl Into<String>,
        target: impl Into<String>,
        fine: Partition,
        fine_scheme: AggregationScheme,
        truth: Option<Vec<f64>>,
    ) -> Result<Self> {
        if let Some(t) = &truth {
            if t.len() != fine.len() {
                return Err(Error::LengthMismatch(fine.len(), t.len()));
            }
        }
        Ok(RefinementTask {
            id: id.into(),
            domain_id: domain_id.into(),
            target: target.into(),
            fine,
            fine_scheme,
            truth,
        })
    }

    pub fn has_truth(&self) -> bool {
        self.truth.is_some()
    }

    /// MAPE of raw-unit predictions against the held-out fine values.
    pub fn score(&self, predicted: &[f64]) -> Result<f64> {
        let truth = self
            .truth
            .as_ref()
            .ok_or_else(|| Error::InvalidData(format!("task `{}` has no ground truth", self.id)))?;
        mape(truth, predicted)
    }

    fn locate<'a>(&self, domains: &'a [DomainData]) -> Result<(usize, &'a DomainData, usize)> {
        let v = domains
            .iter()
            .position(|d| d.id == self.domain_id)
            .ok_or_else(|| Error::UnknownDomain(self.domain_id.clone()))?;
        let s = domains[v].dataset_index(&self.target)?;
        Ok((v, &domains[v], s))
    }
}

/// Fine-region predictions of a fitted model in raw units.
pub fn predict_fine(model: &FittedModel, task: &RefinementTask) -> Result<Vec<RegionPrediction>> {
    let domain = &model.domain(&task.domain_id)?.data;
    let s = domain.dataset_index(&task.target)?;
    let stats = domain.datasets[s].stats;
    Ok(
        predict_region(model, &task.domain_id, s, &task.fine, task.fine_scheme)?
            .into_iter()
            .map(|r| RegionPrediction {
                mean: stats.denormalize(r.mean),
                variance: r.variance * stats.std * stats.std,
                ..r
            })
            .collect(),
    )
}

/// Fits on `domains` and predicts the fine target regions (raw units).
pub fn refine_sagp(
    domains: &[DomainData],
    task: &RefinementTask,
    config: &ModelConfig,
) -> Result<(FittedModel, Vec<RegionPrediction>)> {
    task.locate(domains)?;
    let model = fit(domains, config)?;
    let pred = predict_fine(&model, task)?;
    Ok((model, pred))
}

/// The same model with every region, training and target, collapsed to its
/// centroid cell.
pub fn baseline_slfm(
    task: &RefinementTask,
    domains: &[DomainData],
    config: &ModelConfig,
) -> Result<Vec<RegionPrediction>> {
    let (_, domain, _) = task.locate(domains)?;
    let collapsed: Vec<DomainData> = domains
        .iter()
        .map(DomainData::collapse_to_centroids)
        .collect();
    let point_task = RefinementTask {
        fine: task.fine.collapse_to_centroids(&domain.grid),
        fine_scheme: AggregationScheme::Average,
        truth: None,
        ..task.clone()
    };
    Ok(refine_sagp(&collapsed, &point_task, config)?.1)
}

/// Single-output GP on the coarse target observations placed at region
/// centroids; each fine region is predicted at its centroid. Raw units.
pub fn baseline_gpr(task: &RefinementTask, domain: &DomainData) -> Result<Vec<f64>> {
    let s = domain.dataset_index(&task.target)?;
    let ds = &domain.datasets[s];
    if ds.is_empty() {
        return Err(Error::InvalidData(format!(
            "dataset `{}` has no coarse observations",
            ds.id
        )));
    }
    let grid = &domain.grid;
    let points: Vec<[f64; 2]> = ds
        .partition
        .regions
        .iter()
        .map(|r| r.centroid(grid))
        .collect();
    let mut dists: Vec<f64> = Vec::new();
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            dists.push(
                ((points[i][0] - points[j][0]).powi(2) + (points[i][1] - points[j][1]).powi(2))
                    .sqrt(),
            );
        }
    }
    let extent = grid.nx.max(grid.ny) as f64 * grid.cell_size;
    dists.sort_by(f64::total_cmp);
    let base = dists
        .get(dists.len() / 2)
        .copied()
        .filter(|d| *d > 0.0)
        .unwrap_or(extent / 4.0);
    let gp = PointGp::fit(
        points,
        &ds.values,
        &[base / 2.0, base, 2.0 * base],
        (grid.cell_size / 4.0, 100.0 * extent),
    )?;
    Ok(task
        .fine
        .regions
        .iter()
        .map(|r| ds.stats.denormalize(gp.predict(r.centroid(grid)).0))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldOutcome {
    pub region_id: String,
    /// `None` when the fold's fit or prediction failed.
    pub abs_pct_err: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateError {
    pub latents: usize,
    pub mean_error: f64,
    pub folds: Vec<FoldOutcome>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CVResult {
    pub candidates: Vec<CandidateError>,
    pub selected: usize,
}

/// Minimum fraction of folds that must succeed for a candidate.
pub const MIN_FOLD_SUCCESS: f64 = 0.8;

/// Leave-one-out over the coarse target regions: each fold refits without
/// one observation and predicts it back.
#[allow(non_snake_case)]
pub fn loocv_select_L(
    domains: &[DomainData],
    task: &RefinementTask,
    candidates: &[usize],
    config: &ModelConfig,
) -> Result<CVResult> {
    if candidates.is_empty() {
        return Err(Error::InvalidParams("no candidate latent counts".into()));
    }
    let (v, domain, s) = task.locate(domains)?;
    let target = &domain.datasets[s];
    if target.len() < 2 {
        return Err(Error::CvFailed(format!(
            "dataset `{}` needs at least two coarse regions",
            target.id
        )));
    }
    let raw = target.raw_values();
    let mut results = Vec::with_capacity(candidates.len());
    for &l in candidates {
        let cfg = ModelConfig {
            latents: l,
            ..config.clone()
        };
        let folds: Vec<FoldOutcome> = (0..target.len())
            .into_par_iter()
            .map(|n| {
                let region = &target.partition.regions[n];
                let outcome = (|| -> Result<f64> {
                    let mut train = domains.to_vec();
                    train[v].datasets[s] = target.without_region(n)?;
                    let model = fit(&train, &cfg)?;
                    let held = Partition::new("held-out", vec![region.clone()]);
                    let pred = predict_region(&model, &domain.id, s, &held, target.scheme)?;
                    let value = train[v].datasets[s].stats.denormalize(pred[0].mean);
                    mape(&[raw[n]], &[value])
                })();
                if let Err(e) = &outcome {
                    log::warn!("L={l}: fold `{}` failed: {e}", region.id());
                }
                FoldOutcome {
                    region_id: region.id().to_string(),
                    abs_pct_err: outcome.ok(),
                }
            })
            .collect();
        let ok: Vec<f64> = folds.iter().filter_map(|f| f.abs_pct_err).collect();
        if (ok.len() as f64) < MIN_FOLD_SUCCESS * folds.len() as f64 {
            return Err(Error::CvFailed(format!(
                "L={l}: only {} of {} folds succeeded",
                ok.len(),
                folds.len()
            )));
        }
        results.push(CandidateError {
            latents: l,
            mean_error: ok.iter().sum::<f64>() / ok.len() as f64,
            folds,
        });
    }
    let selected = results
        .iter()
        .fold(None::<&CandidateError>, |best, c| match best {
            Some(b)
                if b.mean_error < c.mean_error
                    || (b.mean_error == c.mean_error && b.latents <= c.latents) =>
            {
                Some(b)
            }
            _ => Some(c),
        })
        .map(|c| c.latents)
        .unwrap_or(candidates[0]);
    Ok(CVResult {
        candidates: results,
        selected,
    })
}
