use crate::error::{Error, Result};
use crate::geometry::{AggregationScheme, GridSpec, Partition};

/// Per-dataset z-score statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

impl NormStats {
    pub const IDENTITY: NormStats = NormStats {
        mean: 0.0,
        std: 1.0,
    };

    /// Population mean and standard deviation. A zero spread (including a
    /// single value) falls back to unit scale.
    pub fn from_values(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::IDENTITY;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        NormStats {
            mean,
            std: if std > 0.0 && std.is_finite() {
                std
            } else {
                1.0
            },
        }
    }

    pub fn normalize(&self, raw: f64) -> f64 {
        (raw - self.mean) / self.std
    }

    pub fn denormalize(&self, value: f64) -> f64 {
        value * self.std + self.mean
    }
}

/// One areal dataset: a partition and one (normalized) observation per region.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub id: String,
    pub partition: Partition,
    pub scheme: AggregationScheme,
    /// Observations in normalized units, aligned with `partition.regions`.
    pub values: Vec<f64>,
    pub stats: NormStats,
}

impl Dataset {
    /// Normalizes `raw` with statistics computed from `raw` itself.
    pub fn from_raw(
        id: impl Into<String>,
        partition: Partition,
        scheme: AggregationScheme,
        raw: Vec<f64>,
    ) -> Result<Self> {
        let stats = NormStats::from_values(&raw);
        Self::with_stats(id, partition, scheme, raw, stats)
    }

    /// Normalizes `raw` with the given statistics.
    pub fn with_stats(
        id: impl Into<String>,
        partition: Partition,
        scheme: AggregationScheme,
        raw: Vec<f64>,
        stats: NormStats,
    ) -> Result<Self> {
        let values = raw.iter().map(|&v| stats.normalize(v)).collect();
        let ds = Dataset {
            id: id.into(),
            partition,
            scheme,
            values,
            stats,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Takes `values` as already normalized (identity statistics).
    pub fn normalized(
        id: impl Into<String>,
        partition: Partition,
        scheme: AggregationScheme,
        values: Vec<f64>,
    ) -> Result<Self> {
        Self::with_stats(id, partition, scheme, values, NormStats::IDENTITY)
    }

    /// A placeholder for a dataset that has no observations in some domain.
    pub fn empty(id: impl Into<String>) -> Self {
        let id = id.into();
        Dataset {
            partition: Partition::new(id.clone(), Vec::new()),
            id,
            scheme: AggregationScheme::Average,
            values: Vec::new(),
            stats: NormStats::IDENTITY,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.values.len() != self.partition.len() {
            return Err(Error::InvalidData(format!(
                "dataset `{}` has {} observations for {} regions",
                self.id,
                self.values.len(),
                self.partition.len()
            )));
        }
        if let Some(k) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!(
                "dataset `{}` has a non-finite observation for region `{}`",
                self.id,
                self.partition.regions[k].id()
            )));
        }
        Ok(())
    }

    pub fn raw_values(&self) -> Vec<f64> {
        self.values
            .iter()
            .map(|&v| self.stats.denormalize(v))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// A copy without region `n`, re-normalized from the remaining raw values.
    pub fn without_region(&self, n: usize) -> Result<Self> {
        let mut raw = self.raw_values();
        let mut regions = self.partition.regions.clone();
        raw.remove(n);
        regions.remove(n);
        Dataset::from_raw(
            self.id.clone(),
            Partition::new(self.partition.id.clone(), regions),
            self.scheme,
            raw,
        )
    }
}

/// All areal datasets of one domain on a shared grid.
#[derive(Debug, Clone)]
pub struct DomainData {
    pub id: String,
    pub grid: GridSpec,
    pub datasets: Vec<Dataset>,
}

impl DomainData {
    pub fn new(id: impl Into<String>, grid: GridSpec, datasets: Vec<Dataset>) -> Result<Self> {
        grid.validate()?;
        let d = DomainData {
            id: id.into(),
            grid,
            datasets,
        };
        for ds in &d.datasets {
            ds.validate()?;
            for r in &ds.partition.regions {
                r.check_grid(&grid)?;
            }
        }
        for (k, ds) in d.datasets.iter().enumerate() {
            if d.datasets[..k].iter().any(|o| o.id == ds.id) {
                return Err(Error::InvalidData(format!(
                    "dataset id `{}` appears twice in domain `{}`",
                    ds.id, d.id
                )));
            }
        }
        Ok(d)
    }

    /// Total number of areal observations `N`.
    pub fn num_obs(&self) -> usize {
        self.datasets.iter().map(Dataset::len).sum()
    }

    pub fn num_datasets(&self) -> usize {
        self.datasets.len()
    }

    pub fn dataset_index(&self, id: &str) -> Result<usize> {
        self.datasets
            .iter()
            .position(|d| d.id == id)
            .ok_or_else(|| Error::UnknownDataset(id.to_string()))
    }

    /// Observations stacked dataset by dataset.
    pub fn stacked_values(&self) -> Vec<f64> {
        self.datasets
            .iter()
            .flat_map(|d| d.values.iter().copied())
            .collect()
    }

    /// Same domain with every region replaced by its centroid cell.
    pub fn collapse_to_centroids(&self) -> Self {
        let datasets = self
            .datasets
            .iter()
            .map(|d| Dataset {
                partition: d.partition.collapse_to_centroids(&self.grid),
                scheme: AggregationScheme::Average,
                ..d.clone()
            })
            .collect();
        DomainData {
            datasets,
            ..self.clone()
        }
    }
}

/// Maps normalized values of `dataset_id` back to raw units.
pub fn denormalize(domain: &DomainData, dataset_id: &str, values: &[f64]) -> Result<Vec<f64>> {
    let s = domain.dataset_index(dataset_id)?;
    let stats = domain.datasets[s].stats;
    Ok(values.iter().map(|&v| stats.denormalize(v)).collect())
}
