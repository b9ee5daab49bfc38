//! Run configuration and the data it points at.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    rasterize_with, validate_partition, AggregationScheme, GridSpec, Partition, RasterOptions,
    Region,
};
use crate::io::{self, ObservationRow};
use crate::model::{Dataset, DomainData, InitStrategy, ModelConfig};
use crate::synth::{DatasetSpec, MixingMode, PartitionRecipe};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(default)]
    pub origin: [f64; 2],
    pub cell_size: f64,
    pub nx: usize,
    pub ny: usize,
}

impl GridSection {
    pub fn spec(&self) -> Result<GridSpec> {
        GridSpec::new(self.origin, self.cell_size, self.nx, self.ny)
    }

    pub fn from_spec(g: &GridSpec) -> Self {
        GridSection {
            origin: g.origin,
            cell_size: g.cell_size,
            nx: g.nx,
            ny: g.ny,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitName {
    #[default]
    Default,
    ZeroWeights,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "one")]
    pub latents: usize,
    /// Latent counts tried by cross-validation.
    pub candidates: Option<Vec<usize>>,
    #[serde(default = "default_jitter")]
    pub jitter: f64,
    #[serde(default = "default_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_tolerance")]
    pub gradient_tolerance: f64,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub init: InitName,
}

fn one() -> usize {
    1
}
fn default_jitter() -> f64 {
    1e-8
}
fn default_iterations() -> usize {
    200
}
fn default_tolerance() -> f64 {
    1e-5
}
fn default_restarts() -> usize {
    5
}
fn yes() -> bool {
    true
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            latents: 1,
            candidates: None,
            jitter: default_jitter(),
            max_iterations: default_iterations(),
            gradient_tolerance: default_tolerance(),
            restarts: default_restarts(),
            seed: 0,
            init: InitName::Default,
        }
    }
}

impl ModelSection {
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            latents: self.latents,
            jitter: self.jitter,
            max_iterations: self.max_iterations,
            gradient_tolerance: self.gradient_tolerance,
            restarts: self.restarts,
            seed: self.seed,
            init: match self.init {
                InitName::Default => InitStrategy::Default,
                InitName::ZeroWeights => InitStrategy::ZeroWeights,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub id: String,
    #[serde(default)]
    pub scheme: AggregationScheme,
    /// Polygon CSV for this dataset; otherwise regions come from the domain's
    /// membership CSV.
    pub polygons: Option<PathBuf>,
    #[serde(default)]
    pub snap_to_nearest: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSection {
    pub id: String,
    pub grid: Option<GridSection>,
    pub observations: PathBuf,
    pub membership: Option<PathBuf>,
    #[serde(default)]
    pub datasets: Vec<DatasetSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSection {
    pub domain: Option<String>,
    pub target: Option<String>,
    /// Membership CSV of the fine target partition (rows of any dataset id).
    pub fine_membership: Option<PathBuf>,
    pub fine_polygons: Option<PathBuf>,
    #[serde(default)]
    pub fine_scheme: AggregationScheme,
    /// Fine-region truth in the observations format.
    pub truth: Option<PathBuf>,
    /// Directory of a saved model to predict with instead of fitting.
    pub model: Option<PathBuf>,
    #[serde(default = "yes")]
    pub heatmaps: bool,
    #[serde(default)]
    pub baselines: bool,
    #[serde(default)]
    pub dump_moments: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthRefine {
    pub target: String,
    pub fine: PartitionRecipe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    #[serde(default = "one")]
    pub domains: usize,
    #[serde(default)]
    pub mixing: MixingMode,
    pub beta: Vec<f64>,
    /// `S × L` mixing matrix by rows; drawn from the seed when absent.
    pub weights: Option<Vec<Vec<f64>>>,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_sigma2")]
    pub sigma2: f64,
    #[serde(default = "default_offset")]
    pub offset: f64,
    #[serde(default = "default_scale")]
    pub scale: f64,
    pub datasets: Vec<DatasetSpec>,
    /// Datasets observed in domains after the first; all when absent.
    pub sparse: Option<Vec<String>>,
    pub refine: Option<SynthRefine>,
}

fn default_lambda() -> f64 {
    0.05
}
fn default_sigma2() -> f64 {
    1e-3
}
fn default_offset() -> f64 {
    10.0
}
fn default_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub output: Option<PathBuf>,
    pub grid: Option<GridSection>,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub domains: Vec<DomainSection>,
    pub task: Option<TaskSection>,
    pub synth: Option<SynthSection>,
}

/// A parsed configuration together with its verbatim text and location.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub text: String,
    pub path: PathBuf,
    base: PathBuf,
}

impl LoadedConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = io::read_text(path)?;
        Self::from_text(text, path)
    }

    pub fn from_text(text: String, path: &Path) -> Result<Self> {
        let config: RunConfig = toml::from_str(&text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start.min(text.len())].lines().count().max(1));
            let msg = e.message().to_string();
            Error::parse(
                path.display().to_string(),
                match line {
                    Some(l) => format!("line {l}: {msg}"),
                    None => msg,
                },
            )
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(LoadedConfig {
            config,
            text,
            path: path.to_path_buf(),
            base,
        })
    }

    /// Resolves `p` against the configuration file's directory.
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn grid_for(&self, domain: &DomainSection) -> Result<GridSpec> {
        domain
            .grid
            .as_ref()
            .or(self.config.grid.as_ref())
            .ok_or_else(|| Error::InvalidData(format!("no grid given for domain `{}`", domain.id)))?
            .spec()
    }

    pub fn global_grid(&self) -> Result<GridSpec> {
        self.config
            .grid
            .as_ref()
            .ok_or_else(|| Error::InvalidData("configuration lacks a [grid] section".into()))?
            .spec()
    }

    pub fn task(&self) -> Result<&TaskSection> {
        self.config
            .task
            .as_ref()
            .ok_or_else(|| Error::InvalidData("configuration lacks a [task] section".into()))
    }

    /// Reads every domain. Datasets missing from a domain become empty so
    /// that all domains list the same datasets in the same order.
    pub fn load_domains(&self) -> Result<Vec<DomainData>> {
        if self.config.domains.is_empty() {
            return Err(Error::InvalidData(
                "configuration declares no [[domains]]".into(),
            ));
        }
        let mut order: Vec<String> = Vec::new();
        for d in &self.config.domains {
            for ds in &d.datasets {
                if !order.contains(&ds.id) {
                    order.push(ds.id.clone());
                }
            }
        }
        let mut obs_cache: HashMap<PathBuf, Vec<ObservationRow>> = HashMap::new();
        self.config
            .domains
            .iter()
            .map(|d| self.load_domain(d, &order, &mut obs_cache))
            .collect()
    }

    fn load_domain(
        &self,
        d: &DomainSection,
        order: &[String],
        obs_cache: &mut HashMap<PathBuf, Vec<ObservationRow>>,
    ) -> Result<DomainData> {
        let grid = self.grid_for(d)?;
        let obs_path = self.resolve(&d.observations);
        if !obs_cache.contains_key(&obs_path) {
            let rows = io::read_observations(&obs_path)?;
            obs_cache.insert(obs_path.clone(), rows);
        }
        let rows: Vec<&ObservationRow> = obs_cache[&obs_path]
            .iter()
            .filter(|r| r.domain_id == d.id)
            .collect();
        let membership = match &d.membership {
            Some(p) => io::read_membership(&self.resolve(p), &grid)?,
            None => Vec::new(),
        };
        for (k, ds) in d.datasets.iter().enumerate() {
            if d.datasets[..k].iter().any(|o| o.id == ds.id) {
                return Err(Error::InvalidData(format!(
                    "dataset id `{}` declared twice in domain `{}`",
                    ds.id, d.id
                )));
            }
        }
        if let Some(r) = rows
            .iter()
            .find(|r| !d.datasets.iter().any(|ds| ds.id == r.dataset_id))
        {
            return Err(Error::parse(
                obs_path.display().to_string(),
                format!(
                    "dataset `{}` is not declared for domain `{}`",
                    r.dataset_id, d.id
                ),
            ));
        }
        let datasets = order
            .iter()
            .map(|id| match d.datasets.iter().find(|ds| &ds.id == id) {
                None => Ok(Dataset::empty(id.clone())),
                Some(section) => {
                    let partition = self.partition_for(section, &membership, &grid, d)?;
                    let ds_rows: Vec<&&ObservationRow> =
                        rows.iter().filter(|r| &r.dataset_id == id).collect();
                    observed_dataset(section, partition, &ds_rows, &obs_path)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        DomainData::new(d.id.clone(), grid, datasets)
    }

    fn partition_for(
        &self,
        section: &DatasetSection,
        membership: &[(String, Vec<Region>)],
        grid: &GridSpec,
        d: &DomainSection,
    ) -> Result<Partition> {
        let regions = match &section.polygons {
            Some(p) => {
                let opts = RasterOptions {
                    snap_to_nearest: section.snap_to_nearest,
                };
                io::read_polygons(&self.resolve(p))?
                    .iter()
                    .map(|poly| rasterize_with(poly, grid, opts))
                    .collect::<Result<Vec<_>>>()?
            }
            None => membership
                .iter()
                .find(|(id, _)| *id == section.id)
                .map(|(_, rs)| rs.clone())
                .ok_or_else(|| {
                    Error::InvalidData(format!(
                        "dataset `{}` of domain `{}` has neither polygons nor membership rows",
                        section.id, d.id
                    ))
                })?,
        };
        let partition = Partition::new(section.id.clone(), regions);
        for w in validate_partition(&partition, grid)?.warnings {
            log::info!("{w}");
        }
        Ok(partition)
    }

    /// Reads a partition given as membership rows or polygons.
    pub fn load_partition(
        &self,
        id: &str,
        membership: Option<&Path>,
        polygons: Option<&Path>,
        grid: &GridSpec,
    ) -> Result<Partition> {
        let regions = match (membership, polygons) {
            (Some(m), None) => io::read_membership(&self.resolve(m), grid)?
                .into_iter()
                .flat_map(|(_, rs)| rs)
                .collect(),
            (None, Some(p)) => io::read_polygons(&self.resolve(p))?
                .iter()
                .map(|poly| rasterize_with(poly, grid, RasterOptions::default()))
                .collect::<Result<Vec<_>>>()?,
            _ => {
                return Err(Error::InvalidData(format!(
                    "partition `{id}` needs exactly one of a membership or a polygon file"
                )))
            }
        };
        let partition = Partition::new(id, regions);
        validate_partition(&partition, grid)?;
        Ok(partition)
    }
}

fn observed_dataset(
    section: &DatasetSection,
    partition: Partition,
    rows: &[&&ObservationRow],
    obs_path: &Path,
) -> Result<Dataset> {
    if rows.is_empty() {
        log::warn!("dataset `{}` has no observations", section.id);
        return Ok(Dataset::empty(section.id.clone()));
    }
    let mut values: Vec<Option<f64>> = vec![None; partition.len()];
    for r in rows {
        let k = partition.position(&r.region_id).ok_or_else(|| {
            Error::parse(
                obs_path.display().to_string(),
                format!(
                    "region `{}` of dataset `{}` is not in its partition",
                    r.region_id, section.id
                ),
            )
        })?;
        if values[k].replace(r.value).is_some() {
            return Err(Error::parse(
                obs_path.display().to_string(),
                format!(
                    "region `{}` of dataset `{}` is observed twice",
                    r.region_id, section.id
                ),
            ));
        }
    }
    let mut regions = Vec::new();
    let mut raw = Vec::new();
    for (region, v) in partition.regions.into_iter().zip(values) {
        match v {
            Some(v) => {
                regions.push(region);
                raw.push(v);
            }
            None => log::warn!(
                "region `{}` of dataset `{}` has no observation and is ignored",
                region.id(),
                section.id
            ),
        }
    }
    Dataset::from_raw(
        section.id.clone(),
        Partition::new(partition.id, regions),
        section.scheme,
        raw,
    )
}

/// Fine-region truth for `target` in `domain` from an observations-format CSV,
/// aligned with `fine`.
pub fn read_truth(path: &Path, domain: &str, target: &str, fine: &Partition) -> Result<Vec<f64>> {
    let rows = io::read_observations(path)?;
    let mut values = vec![None; fine.len()];
    for r in rows
        .iter()
        .filter(|r| r.domain_id == domain && r.dataset_id == target)
    {
        if let Some(k) = fine.position(&r.region_id) {
            values[k] = Some(r.value);
        }
    }
    values
        .into_iter()
        .zip(&fine.regions)
        .map(|(v, region)| {
            v.ok_or_else(|| {
                Error::parse(
                    path.display().to_string(),
                    format!("no truth value for fine region `{}`", region.id()),
                )
            })
        })
        .collect()
}
