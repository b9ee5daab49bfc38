//! Synthetic ground truth drawn from the generative model.
//!
//! Latent processes are sampled exactly on the grid. The squared-exponential
//! kernel factorizes over the two axes, so each latent draw is
//! `G = F_y Z F_xᵀ` with `F F ᵀ` the one-dimensional kernel matrices.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{aggregation_weights, AggregationScheme, GridSpec, Partition, Region};
use crate::io::ObservationRow;
use crate::kernel::HyperParams;
use crate::model::{Dataset, DomainData};

/// Largest grid sampled exactly.
pub const MAX_SAMPLING_CELLS: usize = 262_144;

/// Minimum bounding-box aspect ratio of strip regions.
pub const MIN_STRIP_ASPECT: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Orientation {
    /// Strips spanning the full grid height.
    Vertical,
    /// Strips spanning the full grid width.
    Horizontal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum PartitionRecipe {
    /// `bx × by` rectangular blocks of near-equal size.
    Blocks { bx: usize, by: usize },
    /// Every cell joins its nearest of `regions` randomly placed seed cells.
    Voronoi { regions: usize },
    /// `count` full-length strips of near-equal width.
    EvenStrips {
        orientation: Orientation,
        count: usize,
    },
    /// Full-length strips of the given widths (in cells), which must tile the
    /// grid across the strips.
    Strips {
        orientation: Orientation,
        widths: Vec<usize>,
    },
}

impl PartitionRecipe {
    /// `count` strips of near-equal width.
    pub fn even_strips(orientation: Orientation, count: usize, grid: &GridSpec) -> Self {
        let across = match orientation {
            Orientation::Vertical => grid.nx,
            Orientation::Horizontal => grid.ny,
        };
        PartitionRecipe::Strips {
            orientation,
            widths: split(across, count),
        }
    }

    pub fn build(&self, id: &str, grid: &GridSpec, rng: &mut ChaCha8Rng) -> Result<Partition> {
        let region = |name: String, cells: Vec<usize>| Region::new(name, cells);
        let regions = match self {
            PartitionRecipe::EvenStrips { orientation, count } => {
                return PartitionRecipe::even_strips(*orientation, *count, grid)
                    .build(id, grid, rng);
            }
            PartitionRecipe::Blocks { bx, by } => {
                if *bx == 0 || *by == 0 || *bx > grid.nx || *by > grid.ny {
                    return Err(Error::InvalidParams(format!(
                        "cannot split a {}x{} grid into {bx}x{by} blocks",
                        grid.nx, grid.ny
                    )));
                }
                let xs = offsets(&split(grid.nx, *bx));
                let ys = offsets(&split(grid.ny, *by));
                let mut out = Vec::with_capacity(bx * by);
                for j in 0..*by {
                    for i in 0..*bx {
                        let cells = (ys[j]..ys[j + 1])
                            .flat_map(|r| (xs[i]..xs[i + 1]).map(move |c| (c, r)))
                            .map(|(c, r)| grid.cell_index(c, r))
                            .collect();
                        out.push(region(format!("{id}_b{}", j * bx + i), cells)?);
                    }
                }
                out
            }
            PartitionRecipe::Voronoi { regions } => {
                let k = *regions;
                if k == 0 || k > grid.len() {
                    return Err(Error::InvalidParams(format!(
                        "cannot place {k} Voronoi seeds on {} cells",
                        grid.len()
                    )));
                }
                let seeds = rand::seq::index::sample(rng, grid.len(), k).into_vec();
                let mut members = vec![Vec::new(); k];
                for c in 0..grid.len() {
                    let nearest = (0..k)
                        .min_by_key(|&j| (grid.lattice_d2(c, seeds[j]), j))
                        .unwrap_or(0);
                    members[nearest].push(c);
                }
                members
                    .into_iter()
                    .enumerate()
                    .map(|(j, cells)| region(format!("{id}_v{j}"), cells))
                    .collect::<Result<_>>()?
            }
            PartitionRecipe::Strips {
                orientation,
                widths,
            } => {
                let (across, along) = match orientation {
                    Orientation::Vertical => (grid.nx, grid.ny),
                    Orientation::Horizontal => (grid.ny, grid.nx),
                };
                if widths.iter().sum::<usize>() != across || widths.contains(&0) {
                    return Err(Error::InvalidParams(format!(
                        "strip widths {widths:?} do not tile {across} cells"
                    )));
                }
                let widest = *widths.iter().max().unwrap_or(&0);
                if (along as f64) < MIN_STRIP_ASPECT * widest as f64 {
                    return Err(Error::InvalidParams(format!(
                        "strips of width {widest} over length {along} are not elongated enough"
                    )));
                }
                let o = offsets(widths);
                (0..widths.len())
                    .map(|k| {
                        let cells = (o[k]..o[k + 1])
                            .flat_map(|a| (0..along).map(move |b| (a, b)))
                            .map(|(a, b)| match orientation {
                                Orientation::Vertical => grid.cell_index(a, b),
                                Orientation::Horizontal => grid.cell_index(b, a),
                            })
                            .collect();
                        region(format!("{id}_s{k}"), cells)
                    })
                    .collect::<Result<_>>()?
            }
        };
        Ok(Partition::new(id, regions))
    }
}

fn split(n: usize, parts: usize) -> Vec<usize> {
    (0..parts)
        .map(|k| n / parts + usize::from(k < n % parts))
        .collect()
}

fn offsets(widths: &[usize]) -> Vec<usize> {
    let mut o = vec![0];
    for w in widths {
        o.push(o.last().unwrap() + w);
    }
    o
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub id: String,
    pub recipe: PartitionRecipe,
    #[serde(default)]
    pub scheme: AggregationScheme,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MixingMode {
    /// Every domain mixes with the generating `W`.
    Shared,
    /// Domains after the first draw their own `W` with i.i.d. `N(0, 1/L)` entries.
    #[default]
    PerDomain,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub grid: GridSpec,
    /// Generating parameters; `S` and `L` come from its shape.
    pub params: HyperParams,
    pub datasets: Vec<DatasetSpec>,
    /// Number of domains `V`.
    pub domains: usize,
    pub mixing: MixingMode,
    /// Raw values are `offset + scale · f`, keeping them away from zero.
    pub offset: f64,
    pub scale: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(grid: GridSpec, params: HyperParams, datasets: Vec<DatasetSpec>, seed: u64) -> Self {
        SynthSpec {
            grid,
            params,
            datasets,
            domains: 1,
            mixing: MixingMode::default(),
            offset: 10.0,
            scale: 1.0,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.params.validate()?;
        if self.datasets.len() != self.params.num_outputs() {
            return Err(Error::InvalidParams(format!(
                "{} dataset recipes for {} outputs",
                self.datasets.len(),
                self.params.num_outputs()
            )));
        }
        if self.domains == 0 {
            return Err(Error::InvalidParams(
                "at least one domain is required".into(),
            ));
        }
        if self.grid.len() > MAX_SAMPLING_CELLS {
            return Err(Error::GridTooLarge(self.grid.len()));
        }
        Ok(())
    }
}

/// Exact sampler for independent latent fields on a grid.
#[derive(Debug, Clone)]
pub struct LatentSampler {
    nx: usize,
    ny: usize,
    /// Per latent, the `(F_x, F_y)` factors.
    factors: Vec<(DMatrix<f64>, DMatrix<f64>)>,
}

fn axis_factor(n: usize, cell: f64, beta: f64) -> DMatrix<f64> {
    let k = DMatrix::from_fn(n, n, |i, j| {
        let d = (i as f64 - j as f64) * cell;
        (-d * d / (2.0 * beta * beta)).exp()
    });
    let eig = SymmetricEigen::new(k);
    let mut f = eig.eigenvectors;
    for (mut col, ev) in f.column_iter_mut().zip(eig.eigenvalues.iter()) {
        col *= ev.max(0.0).sqrt();
    }
    f
}

impl LatentSampler {
    pub fn new(grid: &GridSpec, betas: &[f64]) -> Result<Self> {
        if grid.len() > MAX_SAMPLING_CELLS {
            return Err(Error::GridTooLarge(grid.len()));
        }
        let factors = betas
            .iter()
            .map(|&b| {
                (
                    axis_factor(grid.nx, grid.cell_size, b),
                    axis_factor(grid.ny, grid.cell_size, b),
                )
            })
            .collect();
        Ok(LatentSampler {
            nx: grid.nx,
            ny: grid.ny,
            factors,
        })
    }

    /// One draw of every latent field, each indexed by cell.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Vec<f64>> {
        self.factors
            .iter()
            .map(|(fx, fy)| {
                let z = DMatrix::from_fn(self.ny, self.nx, |_, _| StandardNormal.sample(rng));
                let g = fy * z * fx.transpose();
                // row-major cell order: cell = row * nx + col
                g.transpose().as_slice().to_vec()
            })
            .collect()
    }
}

/// Output fields `f_s = Σ_l W_sl g_l + λ_s ε_s`, indexed `[s][cell]`.
pub fn mix_outputs<R: Rng + ?Sized>(
    latents: &[Vec<f64>],
    w: &DMatrix<f64>,
    lambda: &[f64],
    rng: &mut R,
) -> Vec<Vec<f64>> {
    let n = latents.first().map_or(0, Vec::len);
    (0..w.nrows())
        .map(|s| {
            (0..n)
                .map(|i| {
                    let mixed: f64 = (0..w.ncols()).map(|l| w[(s, l)] * latents[l][i]).sum();
                    let e: f64 = StandardNormal.sample(rng);
                    mixed + lambda[s] * e
                })
                .collect()
        })
        .collect()
}

/// Aggregates a cell field over every region of `partition`.
pub fn aggregate(
    field: &[f64],
    partition: &Partition,
    scheme: AggregationScheme,
    grid: &GridSpec,
) -> Result<Vec<f64>> {
    partition
        .regions
        .iter()
        .map(|r| {
            let w = aggregation_weights(r, scheme, grid)?;
            Ok(r.cells().iter().zip(&w).map(|(&c, &a)| a * field[c]).sum())
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct SynthDomain {
    pub id: String,
    pub grid: GridSpec,
    /// Mixing weights used for this domain.
    pub weights: DMatrix<f64>,
    /// Latent fields `[l][cell]`.
    pub latents: Vec<Vec<f64>>,
    /// Output fields `[s][cell]` in raw units.
    pub fields: Vec<Vec<f64>>,
    pub partitions: Vec<Partition>,
    pub schemes: Vec<AggregationScheme>,
    /// Noisy areal observations `[s][region]` in raw units.
    pub observations: Vec<Vec<f64>>,
    dataset_ids: Vec<String>,
}

impl SynthDomain {
    pub fn dataset_ids(&self) -> &[String] {
        &self.dataset_ids
    }

    /// Noise-free aggregate of output `s` over `partition`, in raw units.
    pub fn truth(
        &self,
        s: usize,
        partition: &Partition,
        scheme: AggregationScheme,
    ) -> Result<Vec<f64>> {
        aggregate(&self.fields[s], partition, scheme, &self.grid)
    }

    /// Model input holding the datasets flagged in `include`; the rest are
    /// present but empty.
    pub fn to_domain_data(&self, include: &[bool]) -> Result<DomainData> {
        let datasets = self
            .dataset_ids
            .iter()
            .enumerate()
            .map(|(s, id)| {
                if include.get(s).copied().unwrap_or(true) {
                    Dataset::from_raw(
                        id.clone(),
                        self.partitions[s].clone(),
                        self.schemes[s],
                        self.observations[s].clone(),
                    )
                } else {
                    Ok(Dataset::empty(id.clone()))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        DomainData::new(self.id.clone(), self.grid, datasets)
    }

    pub fn observation_rows(&self) -> Vec<ObservationRow> {
        self.dataset_ids
            .iter()
            .enumerate()
            .flat_map(|(s, id)| {
                self.partitions[s]
                    .regions
                    .iter()
                    .zip(&self.observations[s])
                    .map(move |(r, &value)| ObservationRow {
                        domain_id: self.id.clone(),
                        dataset_id: id.clone(),
                        region_id: r.id().to_string(),
                        value,
                    })
            })
            .collect()
    }

    pub fn membership(&self) -> Vec<(String, Vec<Region>)> {
        self.dataset_ids
            .iter()
            .cloned()
            .zip(self.partitions.iter().map(|p| p.regions.clone()))
            .collect()
    }

    pub fn truth_fields(&self) -> Vec<(String, Vec<f64>)> {
        self.dataset_ids
            .iter()
            .cloned()
            .zip(self.fields.iter().cloned())
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub domains: Vec<SynthDomain>,
}

fn stream(seed: u64, k: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k);
    rng
}

/// Draws fields and observations for every domain. Partitions are shared by
/// all domains; latent draws and noise are independent per domain.
pub fn sample_ground_truth(spec: &SynthSpec) -> Result<SynthOutput> {
    spec.validate()?;
    let p = &spec.params;
    let (s_count, l_count) = (p.num_outputs(), p.num_latents());
    let partitions = spec
        .datasets
        .iter()
        .enumerate()
        .map(|(s, d)| {
            d.recipe
                .build(&d.id, &spec.grid, &mut stream(spec.seed, s as u64))
        })
        .collect::<Result<Vec<_>>>()?;
    let schemes: Vec<AggregationScheme> = spec.datasets.iter().map(|d| d.scheme).collect();
    let betas: Vec<f64> = (0..l_count).map(|l| p.beta(l)).collect();
    let sampler = LatentSampler::new(&spec.grid, &betas)?;
    let lambda: Vec<f64> = p.noise.lambda.clone();

    let domains = (0..spec.domains)
        .map(|v| {
            let mut rng = stream(spec.seed, 1_000 + v as u64);
            let weights = if v == 0 || spec.mixing == MixingMode::Shared {
                p.weights.0.clone()
            } else {
                let scale = 1.0 / (l_count as f64).sqrt();
                DMatrix::from_fn(s_count, l_count, |_, _| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    scale * z
                })
            };
            let latents = sampler.sample(&mut rng);
            let fields: Vec<Vec<f64>> = mix_outputs(&latents, &weights, &lambda, &mut rng)
                .into_iter()
                .map(|f| {
                    f.into_iter()
                        .map(|x| spec.offset + spec.scale * x)
                        .collect()
                })
                .collect();
            let observations = (0..s_count)
                .map(|s| {
                    let clean = aggregate(&fields[s], &partitions[s], schemes[s], &spec.grid)?;
                    let sd = spec.scale * p.sigma2(s).sqrt();
                    Ok(clean
                        .into_iter()
                        .map(|y| {
                            let e: f64 = StandardNormal.sample(&mut rng);
                            y + sd * e
                        })
                        .collect())
                })
                .collect::<Result<Vec<Vec<f64>>>>()?;
            Ok(SynthDomain {
                id: format!("domain{}", v + 1),
                grid: spec.grid,
                weights,
                latents,
                fields,
                partitions: partitions.clone(),
                schemes: schemes.clone(),
                observations,
                dataset_ids: spec.datasets.iter().map(|d| d.id.clone()).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SynthOutput { domains })
}

/// Two domains with shared latent kernels. Domain 2 keeps only the datasets
/// listed in `sparse` (at most three); the others appear as empty datasets.
#[derive(Debug, Clone)]
pub struct TransferScenario {
    pub output: SynthOutput,
    pub rich: DomainData,
    pub sparse: DomainData,
}

pub fn make_transfer_scenario(spec: &SynthSpec, sparse: &[usize]) -> Result<TransferScenario> {
    if spec.domains != 2 {
        return Err(Error::InvalidParams(format!(
            "a transfer scenario needs two domains, got {}",
            spec.domains
        )));
    }
    if sparse.is_empty() || sparse.len() > 3 || sparse.iter().any(|&s| s >= spec.datasets.len()) {
        return Err(Error::InvalidParams(format!(
            "domain 2 must hold between one and three valid datasets, got {sparse:?}"
        )));
    }
    let output = sample_ground_truth(spec)?;
    let rich = output.domains[0].to_domain_data(&[])?;
    let include: Vec<bool> = (0..spec.datasets.len())
        .map(|s| sparse.contains(&s))
        .collect();
    let sparse = output.domains[1].to_domain_data(&include)?;
    Ok(TransferScenario {
        output,
        rich,
        sparse,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn params(
        w: &[f64],
        s: usize,
        l: usize,
        beta: &[f64],
        lambda: f64,
        sigma2: f64,
    ) -> HyperParams {
        HyperParams::new(
            DMatrix::from_row_slice(s, l, w),
            beta.to_vec(),
            vec![lambda; s],
            vec![sigma2; s],
        )
        .unwrap()
    }

    fn blocks(id: &str) -> DatasetSpec {
        DatasetSpec {
            id: id.into(),
            recipe: PartitionRecipe::Blocks { bx: 3, by: 2 },
            scheme: AggregationScheme::Average,
        }
    }

    #[test]
    fn recipes_partition_the_grid() {
        let g = GridSpec::new([0.0, 0.0], 1.0, 24, 24).unwrap();
        let mut rng = stream(3, 0);
        for recipe in [
            PartitionRecipe::Blocks { bx: 5, by: 3 },
            PartitionRecipe::Voronoi { regions: 9 },
            PartitionRecipe::even_strips(Orientation::Vertical, 8, &g),
            PartitionRecipe::even_strips(Orientation::Horizontal, 12, &g),
        ] {
            let p = recipe.build("x", &g, &mut rng).unwrap();
            let mut seen = vec![0; g.len()];
            for r in &p.regions {
                for &c in r.cells() {
                    seen[c] += 1;
                }
            }
            assert!(seen.iter().all(|&k| k == 1), "{recipe:?}");
        }
    }

    #[test]
    fn strips_are_elongated() {
        let g = GridSpec::new([0.0, 0.0], 1.0, 24, 24).unwrap();
        let mut rng = stream(0, 0);
        let recipe = PartitionRecipe::Strips {
            orientation: Orientation::Vertical,
            widths: [1, 2].repeat(8),
        };
        let p = recipe.build("s", &g, &mut rng).unwrap();
        assert_eq!(p.len(), 16);
        for r in &p.regions {
            let (w, h) = r.bbox_cells(&g);
            assert!(h as f64 / w as f64 >= MIN_STRIP_ASPECT);
        }
        let wide = PartitionRecipe::even_strips(Orientation::Vertical, 4, &g);
        assert!(wide.build("s", &g, &mut rng).is_err());
    }

    #[test]
    fn zero_mixing_gives_zero_observations() {
        let g = GridSpec::new([0.0, 0.0], 1.0, 6, 6).unwrap();
        let mut spec = SynthSpec::new(
            g,
            params(&[0.0, 0.0], 2, 1, &[2.0], 0.0, 0.0),
            vec![blocks("a"), blocks("b")],
            1,
        );
        spec.offset = 0.0;
        let out = sample_ground_truth(&spec).unwrap();
        assert!(out.domains[0]
            .observations
            .iter()
            .flatten()
            .all(|&y| y == 0.0));
    }

    #[test]
    fn noiseless_observations_are_field_aggregates() {
        let g = GridSpec::new([0.0, 0.0], 0.5, 8, 6).unwrap();
        let spec = SynthSpec::new(
            g,
            params(&[1.0, -0.5], 1, 2, &[1.0, 3.0], 0.2, 0.0),
            vec![blocks("a")],
            4,
        );
        let out = sample_ground_truth(&spec).unwrap();
        let d = &out.domains[0];
        let agg = d
            .truth(0, &d.partitions[0], AggregationScheme::Average)
            .unwrap();
        for (a, b) in agg.iter().zip(&d.observations[0]) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let g = GridSpec::new([0.0, 0.0], 1.0, 10, 10).unwrap();
        let mut spec = SynthSpec::new(
            g,
            params(&[1.0, 0.2, 0.3, 0.9], 2, 2, &[1.5, 4.0], 0.1, 0.01),
            vec![
                blocks("a"),
                DatasetSpec {
                    id: "b".into(),
                    recipe: PartitionRecipe::Voronoi { regions: 7 },
                    scheme: AggregationScheme::Average,
                },
            ],
            11,
        );
        spec.domains = 2;
        let a = sample_ground_truth(&spec).unwrap();
        let b = sample_ground_truth(&spec).unwrap();
        for (x, y) in a.domains.iter().zip(&b.domains) {
            assert_eq!(x.observations, y.observations);
            assert_eq!(x.fields, y.fields);
            assert_eq!(x.partitions, y.partitions);
        }
        assert_ne!(a.domains[0].weights, a.domains[1].weights);
        spec.seed = 12;
        let c = sample_ground_truth(&spec).unwrap();
        assert_ne!(a.domains[0].observations, c.domains[0].observations);
    }

    #[test]
    fn empirical_covariance_matches_kernel() {
        let g = GridSpec::new([0.0, 0.0], 1.0, 6, 5).unwrap();
        let p = params(&[1.0, 0.5, -0.7, 0.8], 2, 2, &[1.0, 2.5], 0.3, 0.0);
        let sampler = LatentSampler::new(&g, &[p.beta(0), p.beta(1)]).unwrap();
        let mut rng = stream(5, 9);
        let pts = [0usize, 7, 20];
        let n = 10_000;
        // variables: (s, point) pairs
        let vars: Vec<(usize, usize)> = (0..2)
            .flat_map(|s| pts.iter().map(move |&x| (s, x)))
            .collect();
        let mut samples = vec![Vec::with_capacity(n); vars.len()];
        for _ in 0..n {
            let lat = sampler.sample(&mut rng);
            let f = mix_outputs(&lat, &p.weights.0, &p.noise.lambda, &mut rng);
            for (k, &(s, x)) in vars.iter().enumerate() {
                samples[k].push(f[s][x]);
            }
        }
        for (a, &(s, x)) in vars.iter().enumerate() {
            for (b, &(s2, x2)) in vars.iter().enumerate() {
                let prod: Vec<f64> = samples[a]
                    .iter()
                    .zip(&samples[b])
                    .map(|(u, v)| u * v)
                    .collect();
                let mean = prod.iter().sum::<f64>() / n as f64;
                let var = prod.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
                let se = (var / n as f64).sqrt();
                let expected = p.cross_cov(s, s2, g.d2(x, x2), x == x2);
                assert!(
                    (mean - expected).abs() <= 3.0 * se + 1e-12,
                    "({a},{b}) {mean} vs {expected} se {se}"
                );
            }
        }
    }

    #[test]
    fn too_large_grid_is_refused() {
        let g = GridSpec::new([0.0, 0.0], 1.0, 1000, 1000).unwrap();
        assert!(matches!(
            LatentSampler::new(&g, &[1.0]),
            Err(Error::GridTooLarge(1_000_000))
        ));
    }

    #[test]
    fn transfer_scenario_structure() {
        let g = GridSpec::new([0.0, 0.0], 1.0, 8, 8).unwrap();
        let mut spec = SynthSpec::new(
            g,
            params(&[1.0, 0.5, 0.2], 3, 1, &[2.0], 0.1, 0.01),
            vec![blocks("a"), blocks("b"), blocks("c")],
            2,
        );
        assert!(make_transfer_scenario(&spec, &[0]).is_err());
        spec.domains = 2;
        let t = make_transfer_scenario(&spec, &[0, 2]).unwrap();
        assert_eq!(t.rich.num_obs(), 18);
        assert_eq!(t.sparse.num_obs(), 12);
        assert!(t.sparse.datasets[1].is_empty());
        assert!(make_transfer_scenario(&spec, &[0, 1, 2, 0]).is_err());
    }
}
