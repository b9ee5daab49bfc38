//! Region-level covariances on the grid.
//!
//! On a regular grid the kernel between two cells depends only on the lattice
//! offset `dc² + dr²`. For each pair of regions we therefore reduce the double
//! sum over cells to a weighted histogram over the distinct squared distances,
//! once per geometry, and re-evaluate covariances for new hyperparameters with
//! one dot product per latent kernel.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{aggregation_weights, AggregationScheme, GridSpec, Partition, Region};
use crate::kernel::HyperParams;
use crate::model::DomainData;

/// Distinct squared distances realizable on a grid, with cached kernel values.
#[derive(Debug, Clone)]
pub struct DistanceCache {
    grid: GridSpec,
    /// Distinct lattice distances `dc² + dr²`, ascending. `keys[0] == 0`.
    keys: Vec<usize>,
    /// Lattice distance -> slot in `keys`, `u32::MAX` when not realizable.
    slot: Vec<u32>,
    d2: Vec<f64>,
    /// `values[l][k] = γ_l(d2[k])`.
    values: Vec<Vec<f64>>,
}

const NO_SLOT: u32 = u32::MAX;

impl DistanceCache {
    /// The distinct-distance set of `grid` with no kernel values attached.
    pub fn lattice(grid: &GridSpec) -> Self {
        let max_key = (grid.nx - 1).pow(2) + (grid.ny - 1).pow(2);
        let mut present = vec![false; max_key + 1];
        for dc in 0..grid.nx {
            for dr in 0..grid.ny {
                present[dc * dc + dr * dr] = true;
            }
        }
        let mut slot = vec![NO_SLOT; max_key + 1];
        let mut keys = Vec::new();
        for (k, _) in present.iter().enumerate().filter(|(_, p)| **p) {
            slot[k] = keys.len() as u32;
            keys.push(k);
        }
        let h2 = grid.cell_area();
        let d2 = keys.iter().map(|&k| k as f64 * h2).collect();
        DistanceCache {
            grid: *grid,
            keys,
            slot,
            d2,
            values: Vec::new(),
        }
    }

    /// Replaces the cached kernel values with those of `params`.
    pub fn set_params(&mut self, params: &HyperParams) {
        self.values = (0..params.num_latents())
            .map(|l| self.d2.iter().map(|&d| params.gamma(l, d)).collect())
            .collect();
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// Number of distinct squared distances `|D|`.
    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// Physical squared distances, ascending.
    pub fn distances(&self) -> &[f64] {
        &self.d2
    }

    pub fn num_latents(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn slot_of(&self, lattice_d2: usize) -> usize {
        self.slot[lattice_d2] as usize
    }

    /// Cached `γ_l` at a lattice squared distance.
    #[inline]
    pub fn gamma(&self, l: usize, lattice_d2: usize) -> f64 {
        self.values[l][self.slot_of(lattice_d2)]
    }

    pub fn values(&self, l: usize) -> &[f64] {
        &self.values[l]
    }
}

/// Caches `γ_l` for every distinct squared distance of `grid`.
pub fn build_distance_cache(grid: &GridSpec, params: &HyperParams) -> DistanceCache {
    let mut cache = DistanceCache::lattice(grid);
    cache.set_params(params);
    cache
}

/// A region with its aggregation weights resolved.
#[derive(Debug, Clone)]
pub struct WeightedRegion {
    pub dataset: usize,
    pub cells: Vec<usize>,
    coords: Vec<(u32, u32)>,
    pub weights: Vec<f64>,
    /// Common weight when all cells weigh the same.
    uniform: Option<f64>,
}

impl WeightedRegion {
    pub fn new(
        dataset: usize,
        region: &Region,
        scheme: AggregationScheme,
        grid: &GridSpec,
    ) -> Result<Self> {
        region.check_grid(grid)?;
        let weights = aggregation_weights(region, scheme, grid)?;
        Ok(Self::from_parts(
            dataset,
            region.cells().to_vec(),
            weights,
            grid,
        ))
    }

    /// A single grid point with unit weight.
    pub fn point(dataset: usize, cell: usize, grid: &GridSpec) -> Self {
        Self::from_parts(dataset, vec![cell], vec![1.0], grid)
    }

    fn from_parts(dataset: usize, cells: Vec<usize>, weights: Vec<f64>, grid: &GridSpec) -> Self {
        let coords = cells
            .iter()
            .map(|&c| {
                let (col, row) = grid.col_row(c);
                (col as u32, row as u32)
            })
            .collect();
        let uniform = weights
            .iter()
            .all(|w| *w == weights[0])
            .then_some(weights[0]);
        WeightedRegion {
            dataset,
            cells,
            coords,
            weights,
            uniform,
        }
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

/// Sparse histogram `slot -> Σ w_i w_j` over cell pairs at that distance.
#[derive(Debug, Clone, Default)]
pub struct PairHistogram {
    entries: Vec<(u32, f64)>,
}

impl PairHistogram {
    pub fn build(cache: &DistanceCache, a: &WeightedRegion, b: &WeightedRegion) -> Self {
        let lat = |p: (u32, u32), q: (u32, u32)| -> usize {
            let dc = p.0.abs_diff(q.0) as usize;
            let dr = p.1.abs_diff(q.1) as usize;
            dc * dc + dr * dr
        };
        let entries = match (a.uniform, b.uniform) {
            (Some(wa), Some(wb)) => {
                // integer pair counts keep the sum exact before the single scaling
                let mut counts = vec![0u64; cache.len()];
                for &p in &a.coords {
                    for &q in &b.coords {
                        counts[cache.slot_of(lat(p, q))] += 1;
                    }
                }
                let scale = wa * wb;
                counts
                    .iter()
                    .enumerate()
                    .filter(|(_, c)| **c > 0)
                    .map(|(k, &c)| (k as u32, c as f64 * scale))
                    .collect()
            }
            _ => {
                let mut acc = vec![0.0f64; cache.len()];
                let mut hit = vec![false; cache.len()];
                for (&p, &wp) in a.coords.iter().zip(&a.weights) {
                    for (&q, &wq) in b.coords.iter().zip(&b.weights) {
                        let k = cache.slot_of(lat(p, q));
                        acc[k] += wp * wq;
                        hit[k] = true;
                    }
                }
                acc.iter()
                    .enumerate()
                    .filter(|(k, _)| hit[*k])
                    .map(|(k, &v)| (k as u32, v))
                    .collect()
            }
        };
        PairHistogram { entries }
    }

    /// `Σ_k h_k γ_l(d_k)`.
    #[inline]
    pub fn dot(&self, values: &[f64]) -> f64 {
        self.entries
            .iter()
            .map(|&(k, h)| h * values[k as usize])
            .sum()
    }

    /// `Σ_k h_k γ_l(d_k) d_k / β²`, the derivative of [`dot`](Self::dot) in `ln β`.
    #[inline]
    pub fn dot_dlog_beta(&self, values: &[f64], d2: &[f64], beta: f64) -> f64 {
        let inv = 1.0 / (beta * beta);
        self.entries
            .iter()
            .map(|&(k, h)| h * values[k as usize] * d2[k as usize] * inv)
            .sum()
    }

    /// Weight mass at distance zero, i.e. over shared cells.
    pub fn overlap(&self) -> f64 {
        match self.entries.first() {
            Some(&(0, h)) => h,
            _ => 0.0,
        }
    }
}

/// Per-domain geometry: resolved observation regions and their pair histograms.
///
/// Depends only on the grid and partitions, so it is built once and reused for
/// every hyperparameter evaluation.
#[derive(Debug, Clone)]
pub struct AggregationPlan {
    cache: DistanceCache,
    regions: Vec<WeightedRegion>,
    /// `(dataset, region)` for each flat row.
    index: Vec<(usize, usize)>,
    /// Upper triangle, row-major: pair `(p, q)` with `p <= q`.
    pairs: Vec<PairHistogram>,
}

#[inline]
fn tri_index(n: usize, p: usize, q: usize) -> usize {
    debug_assert!(p <= q);
    p * n - p * (p + 1) / 2 + q
}

/// Region-pair kernel integrals for each latent, optionally with `ln β` derivatives.
#[derive(Debug, Clone)]
pub struct LatentIntegrals {
    pub gamma: Vec<DMatrix<f64>>,
    pub dgamma: Vec<DMatrix<f64>>,
}

impl AggregationPlan {
    pub fn new(domain: &DomainData) -> Result<Self> {
        let grid = domain.grid;
        let mut regions = Vec::new();
        let mut index = Vec::new();
        for (s, ds) in domain.datasets.iter().enumerate() {
            for (n, region) in ds.partition.regions.iter().enumerate() {
                regions.push(WeightedRegion::new(s, region, ds.scheme, &grid)?);
                index.push((s, n));
            }
        }
        Ok(Self::from_regions(
            DistanceCache::lattice(&grid),
            regions,
            index,
        ))
    }

    fn from_regions(
        cache: DistanceCache,
        regions: Vec<WeightedRegion>,
        index: Vec<(usize, usize)>,
    ) -> Self {
        let n = regions.len();
        let pairs = (0..n)
            .into_par_iter()
            .flat_map_iter(|p| (p..n).map(move |q| (p, q)))
            .map(|(p, q)| PairHistogram::build(&cache, &regions[p], &regions[q]))
            .collect();
        AggregationPlan {
            cache,
            regions,
            index,
            pairs,
        }
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn index(&self) -> &[(usize, usize)] {
        &self.index
    }

    pub fn regions(&self) -> &[WeightedRegion] {
        &self.regions
    }

    pub fn grid(&self) -> &GridSpec {
        self.cache.grid()
    }

    pub fn distance_cache(&self) -> &DistanceCache {
        &self.cache
    }

    fn pair(&self, p: usize, q: usize) -> &PairHistogram {
        let (p, q) = if p <= q { (p, q) } else { (q, p) };
        &self.pairs[tri_index(self.len(), p, q)]
    }

    fn kernel_values(&self, params: &HyperParams) -> Vec<Vec<f64>> {
        let d2 = self.cache.distances();
        (0..params.num_latents())
            .map(|l| d2.iter().map(|&d| params.gamma(l, d)).collect())
            .collect()
    }

    /// `Γ_l[p, q] = Σ_i Σ_j w_i w_j γ_l(i, j)` for every latent, mirrored from the upper triangle.
    pub fn latent_integrals(&self, params: &HyperParams, derivatives: bool) -> LatentIntegrals {
        let n = self.len();
        let values = self.kernel_values(params);
        let d2 = self.cache.distances();
        let l_count = params.num_latents();
        let per_pair: Vec<(Vec<f64>, Vec<f64>)> = self
            .pairs
            .par_iter()
            .map(|h| {
                let g = values.iter().map(|v| h.dot(v)).collect();
                let dg = if derivatives {
                    (0..l_count)
                        .map(|l| h.dot_dlog_beta(&values[l], d2, params.beta(l)))
                        .collect()
                } else {
                    Vec::new()
                };
                (g, dg)
            })
            .collect();
        let mut gamma = vec![DMatrix::zeros(n, n); l_count];
        let mut dgamma = if derivatives {
            vec![DMatrix::zeros(n, n); l_count]
        } else {
            Vec::new()
        };
        for p in 0..n {
            for q in p..n {
                let (g, dg) = &per_pair[tri_index(n, p, q)];
                for l in 0..l_count {
                    gamma[l][(p, q)] = g[l];
                    gamma[l][(q, p)] = g[l];
                    if derivatives {
                        dgamma[l][(p, q)] = dg[l];
                        dgamma[l][(q, p)] = dg[l];
                    }
                }
            }
        }
        LatentIntegrals { gamma, dgamma }
    }

    /// Weight overlap between two observation regions (nonzero only when they share cells).
    pub fn overlap(&self, p: usize, q: usize) -> f64 {
        self.pair(p, q).overlap()
    }

    /// Assembles `C` from precomputed integrals. Only the upper triangle is
    /// computed; the lower one is a bitwise copy.
    pub fn covariance(&self, integrals: &LatentIntegrals, params: &HyperParams) -> DMatrix<f64> {
        let n = self.len();
        let mut c = DMatrix::zeros(n, n);
        for p in 0..n {
            let sp = self.index[p].0;
            for q in p..n {
                let sq = self.index[q].0;
                let mut v = 0.0;
                for (l, g) in integrals.gamma.iter().enumerate() {
                    v += params.w(sp, l) * params.w(sq, l) * g[(p, q)];
                }
                if sp == sq {
                    v += params.lambda2(sp) * self.overlap(p, q);
                    if p == q {
                        v += params.sigma2(sp);
                    }
                }
                c[(p, q)] = v;
                c[(q, p)] = v;
            }
        }
        c
    }

    pub fn moments(&self, params: &HyperParams) -> MarginalMoments {
        let integrals = self.latent_integrals(params, false);
        MarginalMoments {
            mu: DVector::zeros(self.len()),
            c: self.covariance(&integrals, params),
            index: self.index.clone(),
        }
    }

    /// Per-latent integrals and weight overlap between every observation region and `target`.
    pub fn target_integrals(
        &self,
        target: &WeightedRegion,
        params: &HyperParams,
    ) -> (Vec<Vec<f64>>, Vec<f64>) {
        let values = self.kernel_values(params);
        let hists: Vec<PairHistogram> = self
            .regions
            .par_iter()
            .map(|r| PairHistogram::build(&self.cache, r, target))
            .collect();
        let phi = values
            .iter()
            .map(|v| hists.iter().map(|h| h.dot(v)).collect())
            .collect();
        let overlap = hists.iter().map(|h| h.overlap()).collect();
        (phi, overlap)
    }

    /// Covariance between every observation and the output `s_target` aggregated over `target`.
    pub fn target_cov(
        &self,
        target: &WeightedRegion,
        s_target: usize,
        params: &HyperParams,
    ) -> DVector<f64> {
        let (phi, overlap) = self.target_integrals(target, params);
        self.combine_target(&phi, &overlap, s_target, params)
    }

    pub(crate) fn combine_target(
        &self,
        phi: &[Vec<f64>],
        overlap: &[f64],
        s_target: usize,
        params: &HyperParams,
    ) -> DVector<f64> {
        DVector::from_fn(self.len(), |p, _| {
            let sp = self.index[p].0;
            let mut v = 0.0;
            for (l, row) in phi.iter().enumerate() {
                v += params.w(sp, l) * params.w(s_target, l) * row[p];
            }
            if sp == s_target {
                v += params.lambda2(sp) * overlap[p];
            }
            v
        })
    }

    /// Prior variance of output `s` aggregated over `target`.
    pub fn target_prior_var(&self, target: &WeightedRegion, s: usize, params: &HyperParams) -> f64 {
        let h = PairHistogram::build(&self.cache, target, target);
        let mut v = 0.0;
        for l in 0..params.num_latents() {
            let vals: Vec<f64> = self
                .cache
                .distances()
                .iter()
                .map(|&d| params.gamma(l, d))
                .collect();
            v += params.w(s, l) * params.w(s, l) * h.dot(&vals);
        }
        v + params.lambda2(s) * h.overlap()
    }
}

/// Mean vector and covariance of all areal observations of one domain.
#[derive(Debug, Clone)]
pub struct MarginalMoments {
    pub mu: DVector<f64>,
    pub c: DMatrix<f64>,
    /// `(dataset, region)` for each row.
    pub index: Vec<(usize, usize)>,
}

/// Covariance block between the regions of two partitions.
///
/// Entry `(n, n2)` is `Σ_i Σ_j w_i w_j k_{s,s2}(i, j)`, plus `σ_s²` when
/// `s == s2` and `n == n2`.
#[allow(clippy::too_many_arguments)]
pub fn region_cov_block(
    s: usize,
    s2: usize,
    p: &Partition,
    p2: &Partition,
    scheme: AggregationScheme,
    scheme2: AggregationScheme,
    cache: &DistanceCache,
    params: &HyperParams,
) -> Result<DMatrix<f64>> {
    if cache.num_latents() != params.num_latents() {
        return Err(Error::InvalidParams(
            "distance cache was built for different hyperparameters".into(),
        ));
    }
    let grid = cache.grid();
    let left = p
        .regions
        .iter()
        .map(|r| WeightedRegion::new(s, r, scheme, grid))
        .collect::<Result<Vec<_>>>()?;
    let right = p2
        .regions
        .iter()
        .map(|r| WeightedRegion::new(s2, r, scheme2, grid))
        .collect::<Result<Vec<_>>>()?;
    let mut block = DMatrix::zeros(left.len(), right.len());
    for (n, a) in left.iter().enumerate() {
        for (n2, b) in right.iter().enumerate() {
            let h = PairHistogram::build(cache, a, b);
            let mut v = 0.0;
            for l in 0..params.num_latents() {
                v += params.w(s, l) * params.w(s2, l) * h.dot(cache.values(l));
            }
            if s == s2 {
                v += params.lambda2(s) * h.overlap();
                if n == n2 {
                    v += params.sigma2(s);
                }
            }
            block[(n, n2)] = v;
        }
    }
    Ok(block)
}

/// `μ` and `C` for one domain.
pub fn assemble_moments(
    domain: &DomainData,
    cache: &DistanceCache,
    params: &HyperParams,
) -> Result<MarginalMoments> {
    if cache.grid() != &domain.grid {
        return Err(Error::InvalidGrid(
            "distance cache was built for a different grid".into(),
        ));
    }
    Ok(AggregationPlan::new(domain)?.moments(params))
}

/// Column `s_target` of `H(x)`: covariance between the process at grid point
/// `x` and every observation of the domain. Observation noise is excluded.
pub fn point_to_region_cov(
    x: usize,
    s_target: usize,
    domain: &DomainData,
    cache: &DistanceCache,
    params: &HyperParams,
) -> Result<DVector<f64>> {
    let grid = cache.grid();
    if !grid.contains_cell(x) {
        return Err(Error::GridMismatch {
            region: format!("point {x}"),
            cell: x,
            nx: grid.nx,
            ny: grid.ny,
        });
    }
    let plan = AggregationPlan::new(domain)?;
    Ok(plan.target_cov(&WeightedRegion::point(s_target, x, grid), s_target, params))
}
