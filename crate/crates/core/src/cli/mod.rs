//! Command-line runs: fit, refine, cv, synth and predict.
//!
//! Every run reads one TOML configuration, echoes it verbatim into the output
//! directory and writes its results next to it. Flags only override the seed,
//! the output directory and the jitter.

pub mod config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::evaluation::{
    baseline_gpr, baseline_slfm, loocv_select_L, predict_fine, RefinementTask,
};
use crate::geometry::{AggregationScheme, GridSpec, Partition};
use crate::io::{self, FoldRow, MetricRow, PredictionRow};
use crate::kernel::HyperParams;
use crate::model::{fit, DomainData, FittedModel, ModelConfig, PosteriorGP};
use crate::synth::{sample_ground_truth, SynthSpec};

use config::{DatasetSection, DomainSection, GridSection, LoadedConfig, RunConfig, TaskSection};

pub const HYPERPARAMS_FILE: &str = "hyperparams.txt";
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const FIT_LOG_FILE: &str = "fit_log.txt";
pub const CONFIG_ECHO_FILE: &str = "run_config.toml";

#[derive(Debug, Parser)]
#[command(
    name = "sagp",
    version,
    about = "Spatially aggregated Gaussian processes"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit hyperparameters and save the model.
    Fit(RunArgs),
    /// Predict a fine target partition, fitting first unless a saved model is given.
    Refine(RunArgs),
    /// Select the number of latent processes by leave-one-out cross-validation.
    Cv(RunArgs),
    /// Generate synthetic datasets and a matching configuration.
    Synth(RunArgs),
    /// Predict with a saved model.
    Predict(RunArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Relative diagonal jitter.
    #[arg(long)]
    pub jitter: Option<f64>,
}

/// Parses `args` and runs the command, returning the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Fit(a) => cmd_fit(&Run::prepare(a)?).map(|_| ()),
        Command::Refine(a) => cmd_refine(&Run::prepare(a)?, false),
        Command::Cv(a) => cmd_cv(&Run::prepare(a)?),
        Command::Synth(a) => cmd_synth(&Run::prepare(a)?),
        Command::Predict(a) => cmd_refine(&Run::prepare(a)?, true),
    }
}

/// A loaded configuration with command-line overrides applied.
pub struct Run {
    pub loaded: LoadedConfig,
    pub out: PathBuf,
    pub model: ModelConfig,
}

impl Run {
    pub fn prepare(args: &RunArgs) -> Result<Self> {
        let mut loaded = LoadedConfig::load(&args.config)?;
        if let Some(seed) = args.seed {
            loaded.config.model.seed = seed;
        }
        if let Some(j) = args.jitter {
            if !(j.is_finite() && j >= 0.0) {
                return Err(Error::InvalidParams(format!(
                    "jitter must be nonnegative, got {j}"
                )));
            }
            loaded.config.model.jitter = j;
        }
        let out = match (&args.out, &loaded.config.output) {
            (Some(o), _) => o.clone(),
            (None, Some(o)) => loaded.resolve(o),
            (None, None) => PathBuf::from("sagp-out"),
        };
        let model = loaded.config.model.model_config();
        let run = Run { loaded, out, model };
        io::write_text(&run.out.join(CONFIG_ECHO_FILE), &run.loaded.text)?;
        Ok(run)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn config_hash(&self) -> String {
        Sha256::digest(self.loaded.text.as_bytes())
            .iter()
            .fold(String::new(), |mut s, b| {
                let _ = write!(s, "{b:02x}");
                s
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestDataset {
    pub id: String,
    pub regions: usize,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestDomain {
    pub id: String,
    pub grid: GridSection,
    pub datasets: Vec<ManifestDataset>,
}

/// Describes a saved model next to its hyperparameter file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub latents: usize,
    pub outputs: usize,
    pub seed: u64,
    pub jitter: f64,
    pub config_hash: String,
    pub log_likelihood: Option<f64>,
    pub hyperparams: String,
    pub domains: Vec<ManifestDomain>,
}

impl Manifest {
    fn new(run: &Run, model: &FittedModel) -> Self {
        Manifest {
            latents: model.params.num_latents(),
            outputs: model.params.num_outputs(),
            seed: run.model.seed,
            jitter: model.jitter,
            config_hash: run.config_hash(),
            log_likelihood: model.log_likelihood(),
            hyperparams: HYPERPARAMS_FILE.into(),
            domains: model
                .domains
                .iter()
                .map(|d| ManifestDomain {
                    id: d.data.id.clone(),
                    grid: GridSection::from_spec(&d.data.grid),
                    datasets: d
                        .data
                        .datasets
                        .iter()
                        .map(|ds| ManifestDataset {
                            id: ds.id.clone(),
                            regions: ds.len(),
                            mean: ds.stats.mean,
                            std: ds.stats.std,
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}

pub fn save_model(dir: &Path, manifest: &Manifest, params: &HyperParams) -> Result<()> {
    io::write_text(&dir.join(HYPERPARAMS_FILE), &params.to_text())?;
    let text = toml::to_string(manifest)
        .map_err(|e| Error::InvalidData(format!("cannot serialize manifest: {e}")))?;
    io::write_text(&dir.join(MANIFEST_FILE), &text)
}

/// Reloads a saved model and conditions it on `domains`.
pub fn load_model(dir: &Path, domains: &[DomainData], jitter: f64) -> Result<FittedModel> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest: Manifest = toml::from_str(&io::read_text(&manifest_path)?)
        .map_err(|e| Error::parse(manifest_path.display().to_string(), e.message().to_string()))?;
    let hp_path = dir.join(&manifest.hyperparams);
    let params = HyperParams::from_text(&io::read_text(&hp_path)?).map_err(|e| match e {
        Error::Parse { path, message } => {
            Error::parse(format!("{} ({path})", hp_path.display()), message)
        }
        other => other,
    })?;
    for d in domains {
        let Some(saved) = manifest.domains.iter().find(|m| m.id == d.id) else {
            continue;
        };
        let config_grid = GridSection::from_spec(&d.grid);
        if saved.grid != config_grid {
            return Err(Error::ModelGridMismatch {
                model: format!("{:?}", saved.grid),
                config: format!("{config_grid:?}"),
            });
        }
        let saved_ids: Vec<&str> = saved.datasets.iter().map(|x| x.id.as_str()).collect();
        let ids: Vec<&str> = d.datasets.iter().map(|x| x.id.as_str()).collect();
        if saved_ids != ids {
            return Err(Error::InvalidData(format!(
                "saved model lists datasets {saved_ids:?} for domain `{}`, configuration has {ids:?}",
                d.id
            )));
        }
    }
    FittedModel::condition(params, domains, jitter)
}

fn fit_log(model: &FittedModel) -> String {
    let mut out = String::new();
    let Some(diag) = &model.diagnostics else {
        return out;
    };
    for r in &diag.restarts {
        match (&r.error, r.final_log_likelihood) {
            (Some(e), _) => {
                let _ = writeln!(out, "restart {}: failed: {e}", r.restart);
            }
            (None, Some(ll)) => {
                let _ = writeln!(
                    out,
                    "restart {}: initial {} final {ll} iterations {} termination {}",
                    r.restart,
                    r.initial_log_likelihood.unwrap_or(f64::NAN),
                    r.iterations,
                    r.termination
                        .map_or("none".to_string(), |t| format!("{t:?}"))
                );
                let trace: Vec<String> = r.trace.iter().map(|v| v.to_string()).collect();
                let _ = writeln!(out, "  trace {}", trace.join(" "));
            }
            (None, None) => {
                let _ = writeln!(out, "restart {}: no result", r.restart);
            }
        }
    }
    let _ = writeln!(
        out,
        "best restart {}: log likelihood {} projected gradient {:e}",
        diag.best_restart, diag.log_likelihood, diag.gradient_norm
    );
    out
}

fn fit_and_save(run: &Run, domains: &[DomainData]) -> Result<FittedModel> {
    let model = fit(domains, &run.model)?;
    save_model(&run.out, &Manifest::new(run, &model), &model.params)?;
    io::write_text(&run.path(FIT_LOG_FILE), &fit_log(&model))?;
    Ok(model)
}

fn moment_labels(d: &DomainData) -> Vec<String> {
    d.datasets
        .iter()
        .flat_map(|ds| {
            ds.partition
                .regions
                .iter()
                .map(move |r| format!("{}:{}", ds.id, r.id()))
        })
        .collect()
}

pub fn cmd_fit(run: &Run) -> Result<FittedModel> {
    let domains = run.loaded.load_domains()?;
    let model = fit_and_save(run, &domains)?;
    if run
        .loaded
        .config
        .task
        .as_ref()
        .is_some_and(|t| t.dump_moments)
    {
        for d in &model.domains {
            let m = d.plan.moments(&model.params);
            io::write_moments(
                &run.path(&format!("moments_{}.csv", d.data.id)),
                &m,
                &moment_labels(&d.data),
            )?;
        }
    }
    println!(
        "fitted L={} on {} domain(s): log likelihood {}",
        model.params.num_latents(),
        domains.len(),
        model.log_likelihood().unwrap_or(f64::NAN)
    );
    Ok(model)
}

fn task_domain<'a>(task: &TaskSection, domains: &'a [DomainData]) -> Result<&'a DomainData> {
    match &task.domain {
        Some(id) => domains
            .iter()
            .find(|d| &d.id == id)
            .ok_or_else(|| Error::UnknownDomain(id.clone())),
        None => Ok(&domains[0]),
    }
}

fn task_target(task: &TaskSection) -> Result<&str> {
    task.target
        .as_deref()
        .ok_or_else(|| Error::InvalidData("[task] needs a `target` dataset".into()))
}

fn fine_partition(
    run: &Run,
    task: &TaskSection,
    target: &str,
    grid: &GridSpec,
) -> Result<Option<Partition>> {
    if task.fine_membership.is_none() && task.fine_polygons.is_none() {
        return Ok(None);
    }
    run.loaded
        .load_partition(
            target,
            task.fine_membership.as_deref(),
            task.fine_polygons.as_deref(),
            grid,
        )
        .map(Some)
}

/// Writes the posterior raster of every dataset (raw units) and optional heatmaps.
fn write_raster(run: &Run, model: &FittedModel, domain: &DomainData, heatmaps: bool) -> Result<()> {
    let (means, vars) = PosteriorGP::new(model, &domain.id)?.raster()?;
    let mut rows = Vec::new();
    for (s, ds) in domain.datasets.iter().enumerate() {
        let st = ds.stats;
        let raw: Vec<f64> = means[s].iter().map(|&m| st.denormalize(m)).collect();
        for (c, (&m, &v)) in raw.iter().zip(&vars[s]).enumerate() {
            rows.push(PredictionRow {
                dataset_id: ds.id.clone(),
                key: c.to_string(),
                mean: m,
                variance: v * st.std * st.std,
            });
        }
        if heatmaps {
            io::write_pgm(
                &run.path(&format!("heatmap_{}.pgm", ds.id)),
                &domain.grid,
                &raw,
            )?;
        }
    }
    io::write_grid_raster(&run.path("raster.csv"), &rows)
}

pub fn cmd_refine(run: &Run, require_model: bool) -> Result<()> {
    let task = run.loaded.task()?;
    let domains = run.loaded.load_domains()?;
    let domain = task_domain(task, &domains)?;
    let model = match &task.model {
        Some(dir) => load_model(&run.loaded.resolve(dir), &domains, run.model.jitter)?,
        None if require_model => {
            return Err(Error::InvalidData("predict needs `model` in [task]".into()));
        }
        None => fit_and_save(run, &domains)?,
    };
    let target = task.target.as_deref();
    let fine = match target {
        Some(t) => fine_partition(run, task, t, &domain.grid)?,
        None => None,
    };
    write_raster(run, &model, domain, task.heatmaps)?;
    let (Some(target), Some(fine)) = (target, fine) else {
        println!("no target partition declared; wrote the posterior raster only");
        return Ok(());
    };
    let truth = match &task.truth {
        Some(p) => Some(config::read_truth(
            &run.loaded.resolve(p),
            &domain.id,
            target,
            &fine,
        )?),
        None => None,
    };
    let rtask = RefinementTask::new(
        format!("{}:{target}", domain.id),
        domain.id.clone(),
        target,
        fine,
        task.fine_scheme,
        truth,
    )?;
    let pred = predict_fine(&model, &rtask)?;
    let rows: Vec<PredictionRow> = pred
        .iter()
        .map(|r| PredictionRow {
            dataset_id: target.to_string(),
            key: r.region_id.clone(),
            mean: r.mean,
            variance: r.variance,
        })
        .collect();
    io::write_region_predictions(&run.path("predictions.csv"), &rows)?;
    if !rtask.has_truth() {
        log::info!("no truth supplied; skipping metrics");
        println!(
            "wrote {} region predictions; no truth supplied, metrics skipped",
            rows.len()
        );
        return Ok(());
    }
    let means: Vec<f64> = pred.iter().map(|r| r.mean).collect();
    let metric = |method: &str, values: &[f64]| -> Result<MetricRow> {
        Ok(MetricRow {
            task_id: rtask.id.clone(),
            method: method.into(),
            latents: model.params.num_latents(),
            seed: run.model.seed,
            mape: rtask.score(values)?,
        })
    };
    let mut metrics = vec![metric("sagp", &means)?];
    if task.baselines {
        let gpr = baseline_gpr(&rtask, domain)?;
        metrics.push(metric("gpr", &gpr)?);
        let slfm: Vec<f64> = baseline_slfm(&rtask, &domains, &run.model)?
            .iter()
            .map(|r| r.mean)
            .collect();
        metrics.push(metric("slfm", &slfm)?);
    }
    io::write_metrics(&run.path("metrics.csv"), &metrics)?;
    for m in &metrics {
        println!("{} {}: MAPE {}", m.task_id, m.method, m.mape);
    }
    Ok(())
}

pub fn cmd_cv(run: &Run) -> Result<()> {
    let task = run.loaded.task()?;
    let target = task_target(task)?;
    let domains = run.loaded.load_domains()?;
    let domain = task_domain(task, &domains)?;
    let s_count = domain.num_datasets();
    let candidates = run
        .loaded
        .config
        .model
        .candidates
        .clone()
        .unwrap_or_else(|| (1..=s_count).collect());
    let rtask = RefinementTask::new(
        format!("{}:{target}", domain.id),
        domain.id.clone(),
        target,
        Partition::new("none", Vec::new()),
        AggregationScheme::Average,
        None,
    )?;
    let cv = loocv_select_L(&domains, &rtask, &candidates, &run.model)?;
    let mut report = String::from("L,mean_abs_pct_err,folds_ok\n");
    let mut folds = Vec::new();
    for c in &cv.candidates {
        let ok = c.folds.iter().filter(|f| f.abs_pct_err.is_some()).count();
        let _ = writeln!(report, "{},{},{ok}", c.latents, c.mean_error);
        folds.extend(c.folds.iter().filter_map(|f| {
            f.abs_pct_err.map(|e| FoldRow {
                task_id: rtask.id.clone(),
                latents: c.latents,
                fold_region_id: f.region_id.clone(),
                abs_pct_err: e,
            })
        }));
    }
    let _ = writeln!(report, "selected_L = {}", cv.selected);
    io::write_text(&run.path("cv_report.txt"), &report)?;
    io::write_folds(&run.path("folds.csv"), &folds)?;
    print!("{report}");
    Ok(())
}

pub fn cmd_synth(run: &Run) -> Result<()> {
    let cfg = &run.loaded.config;
    let sy = cfg
        .synth
        .as_ref()
        .ok_or_else(|| Error::InvalidData("configuration lacks a [synth] section".into()))?;
    let grid = run.loaded.global_grid()?;
    let s_count = sy.datasets.len();
    let l_count = sy.beta.len();
    let seed = run.model.seed;
    let w = match &sy.weights {
        Some(rows) => {
            if rows.len() != s_count || rows.iter().any(|r| r.len() != l_count) {
                return Err(Error::InvalidParams(format!(
                    "synth weights must be {s_count}x{l_count}"
                )));
            }
            DMatrix::from_fn(s_count, l_count, |s, l| rows[s][l])
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(u64::MAX);
            let scale = 1.0 / (l_count.max(1) as f64).sqrt();
            DMatrix::from_fn(s_count, l_count, |_, _| {
                let z: f64 = StandardNormal.sample(&mut rng);
                scale * z
            })
        }
    };
    let params = HyperParams::new(
        w,
        sy.beta.clone(),
        vec![sy.lambda; s_count],
        vec![sy.sigma2; s_count],
    )?;
    let mut spec = SynthSpec::new(grid, params.clone(), sy.datasets.clone(), seed);
    spec.domains = sy.domains;
    spec.mixing = sy.mixing;
    spec.offset = sy.offset;
    spec.scale = sy.scale;
    let out = sample_ground_truth(&spec)?;
    let ids: Vec<String> = sy.datasets.iter().map(|d| d.id.clone()).collect();
    if let Some(sparse) = &sy.sparse {
        if let Some(bad) = sparse.iter().find(|s| !ids.contains(s)) {
            return Err(Error::UnknownDataset(bad.clone()));
        }
    }
    let observed = |v: usize, id: &str| {
        v == 0
            || sy
                .sparse
                .as_ref()
                .is_none_or(|sp| sp.iter().any(|s| s == id))
    };

    let mut obs = Vec::new();
    for (v, d) in out.domains.iter().enumerate() {
        obs.extend(
            d.observation_rows()
                .into_iter()
                .filter(|r| observed(v, &r.dataset_id)),
        );
        io::write_truth_grid(&run.path(&format!("truth_{}.csv", d.id)), &d.truth_fields())?;
    }
    io::write_observations(&run.path("observations.csv"), &obs)?;
    io::write_membership(&run.path("membership.csv"), &out.domains[0].membership())?;
    io::write_text(&run.path("generating_hyperparams.txt"), &params.to_text())?;

    let task = match &sy.refine {
        Some(r) => {
            let s = ids
                .iter()
                .position(|i| *i == r.target)
                .ok_or_else(|| Error::UnknownDataset(r.target.clone()))?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(u64::MAX - 1);
            let fine = r
                .fine
                .build(&format!("{}_fine", r.target), &grid, &mut rng)?;
            let last = out.domains.last().expect("at least one domain");
            let truth = last.truth(s, &fine, AggregationScheme::Average)?;
            io::write_membership(
                &run.path("fine_membership.csv"),
                &[(r.target.clone(), fine.regions.clone())],
            )?;
            let truth_rows: Vec<io::ObservationRow> = fine
                .regions
                .iter()
                .zip(truth)
                .map(|(reg, value)| io::ObservationRow {
                    domain_id: last.id.clone(),
                    dataset_id: r.target.clone(),
                    region_id: reg.id().to_string(),
                    value,
                })
                .collect();
            io::write_observations(&run.path("fine_truth.csv"), &truth_rows)?;
            Some(TaskSection {
                domain: Some(last.id.clone()),
                target: Some(r.target.clone()),
                fine_membership: Some("fine_membership.csv".into()),
                fine_polygons: None,
                fine_scheme: AggregationScheme::Average,
                truth: Some("fine_truth.csv".into()),
                model: None,
                heatmaps: true,
                baselines: false,
                dump_moments: false,
            })
        }
        None => None,
    };
    let generated = RunConfig {
        output: None,
        grid: Some(GridSection::from_spec(&grid)),
        model: cfg.model.clone(),
        domains: out
            .domains
            .iter()
            .enumerate()
            .map(|(v, d)| DomainSection {
                id: d.id.clone(),
                grid: None,
                observations: "observations.csv".into(),
                membership: Some("membership.csv".into()),
                datasets: sy
                    .datasets
                    .iter()
                    .filter(|ds| observed(v, &ds.id))
                    .map(|ds| DatasetSection {
                        id: ds.id.clone(),
                        scheme: ds.scheme,
                        polygons: None,
                        snap_to_nearest: false,
                    })
                    .collect(),
            })
            .collect(),
        task,
        synth: None,
    };
    let text = toml::to_string(&generated)
        .map_err(|e| Error::InvalidData(format!("cannot serialize generated config: {e}")))?;
    io::write_text(&run.path("generated.toml"), &text)?;
    println!(
        "generated {} observations over {} domain(s) in {}",
        obs.len(),
        out.domains.len(),
        run.out.display()
    );
    Ok(())
}
