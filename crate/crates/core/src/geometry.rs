//! Regular grids, regions and their rasterization.
//!
//! The input space is discretized into square cells. Cell `i` is addressed as
//! `row * nx + col` and represented by its center point. Regions are sets of
//! cell indices; they may be supplied directly or rasterized from polygons.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A regular square grid over the plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin: [f64; 2],
    pub cell_size: f64,
    pub nx: usize,
    pub ny: usize,
}

impl GridSpec {
    pub fn new(origin: [f64; 2], cell_size: f64, nx: usize, ny: usize) -> Result<Self> {
        let grid = GridSpec {
            origin,
            cell_size,
            nx,
            ny,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cell_size.is_finite() && self.cell_size > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "cell_size must be positive, got {}",
                self.cell_size
            )));
        }
        if self.nx == 0 || self.ny == 0 {
            return Err(Error::InvalidGrid(format!(
                "grid needs at least one cell, got {}x{}",
                self.nx, self.ny
            )));
        }
        if !(self.origin[0].is_finite() && self.origin[1].is_finite()) {
            return Err(Error::InvalidGrid("origin must be finite".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_area(&self) -> f64 {
        self.cell_size * self.cell_size
    }

    /// `(col, row)` of a cell index.
    pub fn col_row(&self, cell: usize) -> (usize, usize) {
        (cell % self.nx, cell / self.nx)
    }

    pub fn cell_index(&self, col: usize, row: usize) -> usize {
        row * self.nx + col
    }

    pub fn center(&self, cell: usize) -> [f64; 2] {
        let (col, row) = self.col_row(cell);
        [
            self.origin[0] + (col as f64 + 0.5) * self.cell_size,
            self.origin[1] + (row as f64 + 0.5) * self.cell_size,
        ]
    }

    /// Squared distance between two cell centers in lattice units (`dc² + dr²`).
    pub fn lattice_d2(&self, a: usize, b: usize) -> usize {
        let (ca, ra) = self.col_row(a);
        let (cb, rb) = self.col_row(b);
        let dc = ca.abs_diff(cb);
        let dr = ra.abs_diff(rb);
        dc * dc + dr * dr
    }

    /// Squared Euclidean distance between two cell centers.
    pub fn d2(&self, a: usize, b: usize) -> f64 {
        self.lattice_d2(a, b) as f64 * self.cell_area()
    }

    /// Index of the cell whose center is closest to `p`, clamped to the grid.
    pub fn nearest_cell(&self, p: [f64; 2]) -> usize {
        let clamp = |v: f64, n: usize| -> usize {
            let idx = ((v / self.cell_size) - 0.5).round();
            if idx <= 0.0 {
                0
            } else {
                (idx as usize).min(n - 1)
            }
        };
        let col = clamp(p[0] - self.origin[0], self.nx);
        let row = clamp(p[1] - self.origin[1], self.ny);
        self.cell_index(col, row)
    }

    pub fn contains_cell(&self, cell: usize) -> bool {
        cell < self.len()
    }
}

/// A set of grid cells, optionally carrying per-cell aggregation weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    id: String,
    cells: Vec<usize>,
    cell_weights: Option<Vec<f64>>,
}

impl Region {
    /// Builds a region from cell indices. Cells are sorted; duplicates are rejected.
    pub fn new(id: impl Into<String>, cells: Vec<usize>) -> Result<Self> {
        Self::build(id.into(), cells.into_iter().map(|c| (c, None)).collect())
    }

    /// Builds a region whose cells carry nonnegative weights.
    pub fn with_weights(
        id: impl Into<String>,
        cells: Vec<usize>,
        weights: Vec<f64>,
    ) -> Result<Self> {
        let id = id.into();
        if cells.len() != weights.len() {
            return Err(Error::InvalidRegion {
                region: id,
                reason: format!("{} cells but {} weights", cells.len(), weights.len()),
            });
        }
        Self::build(
            id,
            cells
                .into_iter()
                .zip(weights)
                .map(|(c, w)| (c, Some(w)))
                .collect(),
        )
    }

    fn build(id: String, mut entries: Vec<(usize, Option<f64>)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::EmptyRegion(id));
        }
        entries.sort_by_key(|e| e.0);
        if let Some(w) = entries.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidRegion {
                region: id,
                reason: format!("duplicate cell {}", w[0].0),
            });
        }
        let weighted = entries[0].1.is_some();
        let cells = entries.iter().map(|e| e.0).collect();
        let cell_weights = if weighted {
            let ws: Vec<f64> = entries.iter().map(|e| e.1.unwrap_or(0.0)).collect();
            if ws.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
                return Err(Error::InvalidRegion {
                    region: id,
                    reason: "cell weights must be finite and nonnegative".into(),
                });
            }
            if ws.iter().sum::<f64>() <= 0.0 {
                return Err(Error::InvalidRegion {
                    region: id,
                    reason: "cell weights sum to zero".into(),
                });
            }
            Some(ws)
        } else {
            None
        };
        Ok(Region {
            id,
            cells,
            cell_weights,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells
    }

    pub fn cell_weights(&self) -> Option<&[f64]> {
        self.cell_weights.as_deref()
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Arithmetic mean of the member cell centers.
    pub fn centroid(&self, grid: &GridSpec) -> [f64; 2] {
        let n = self.cells.len() as f64;
        let (sx, sy) = self.cells.iter().fold((0.0, 0.0), |(sx, sy), &c| {
            let p = grid.center(c);
            (sx + p[0], sy + p[1])
        });
        [sx / n, sy / n]
    }

    /// Bounding box extent in cells, `(columns, rows)`.
    pub fn bbox_cells(&self, grid: &GridSpec) -> (usize, usize) {
        let mut cmin = usize::MAX;
        let mut cmax = 0;
        let mut rmin = usize::MAX;
        let mut rmax = 0;
        for &c in &self.cells {
            let (col, row) = grid.col_row(c);
            cmin = cmin.min(col);
            cmax = cmax.max(col);
            rmin = rmin.min(row);
            rmax = rmax.max(row);
        }
        (cmax - cmin + 1, rmax - rmin + 1)
    }

    pub fn check_grid(&self, grid: &GridSpec) -> Result<()> {
        match self.cells.iter().find(|&&c| !grid.contains_cell(c)) {
            Some(&cell) => Err(Error::GridMismatch {
                region: self.id.clone(),
                cell,
                nx: grid.nx,
                ny: grid.ny,
            }),
            None => Ok(()),
        }
    }

    /// Same region translated by whole cells. Returns `None` if any cell leaves the grid.
    pub fn shifted(&self, grid: &GridSpec, dcol: i64, drow: i64) -> Option<Region> {
        let mut cells = Vec::with_capacity(self.cells.len());
        for &c in &self.cells {
            let (col, row) = grid.col_row(c);
            let col = col as i64 + dcol;
            let row = row as i64 + drow;
            if col < 0 || row < 0 || col >= grid.nx as i64 || row >= grid.ny as i64 {
                return None;
            }
            cells.push(grid.cell_index(col as usize, row as usize));
        }
        Some(Region {
            id: self.id.clone(),
            cells,
            cell_weights: self.cell_weights.clone(),
        })
    }
}

/// A disjoint collection of regions used by one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub id: String,
    pub regions: Vec<Region>,
}

impl Partition {
    pub fn new(id: impl Into<String>, regions: Vec<Region>) -> Self {
        Partition {
            id: id.into(),
            regions,
        }
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn position(&self, region_id: &str) -> Option<usize> {
        self.regions.iter().position(|r| r.id() == region_id)
    }

    /// Replaces every region by the single cell nearest to its centroid.
    pub fn collapse_to_centroids(&self, grid: &GridSpec) -> Partition {
        let regions = self
            .regions
            .iter()
            .map(|r| Region {
                id: r.id.clone(),
                cells: vec![grid.nearest_cell(r.centroid(grid))],
                cell_weights: None,
            })
            .collect();
        Partition {
            id: self.id.clone(),
            regions,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggregationScheme {
    /// Region average, `1/|G|` per cell.
    #[default]
    Average,
    /// Plain integral: cell area per cell.
    Sum,
    /// Cell weights normalized to sum one.
    WeightedAverage,
}

impl std::str::FromStr for AggregationScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "average" => Ok(AggregationScheme::Average),
            "sum" => Ok(AggregationScheme::Sum),
            "weighted-average" => Ok(AggregationScheme::WeightedAverage),
            other => Err(Error::InvalidData(format!(
                "unknown aggregation scheme `{other}`"
            ))),
        }
    }
}

/// Discrete aggregation weights for the cells of `region`, aligned with `region.cells()`.
pub fn aggregation_weights(
    region: &Region,
    scheme: AggregationScheme,
    grid: &GridSpec,
) -> Result<Vec<f64>> {
    let n = region.len();
    match scheme {
        AggregationScheme::Average => Ok(vec![1.0 / n as f64; n]),
        AggregationScheme::Sum => Ok(vec![grid.cell_area(); n]),
        AggregationScheme::WeightedAverage => {
            let ws = region
                .cell_weights()
                .ok_or_else(|| Error::MissingWeights(region.id().to_string()))?;
            let total: f64 = ws.iter().sum();
            Ok(ws.iter().map(|w| w / total).collect())
        }
    }
}

/// A polygon (with optional holes) given as closed rings.
#[derive(Debug, Clone, PartialEq)]
pub struct PolygonGeometry {
    pub region_id: String,
    pub rings: Vec<Vec<[f64; 2]>>,
}

impl PolygonGeometry {
    /// Builds a polygon, closing each ring if its last vertex differs from the first.
    pub fn new(region_id: impl Into<String>, rings: Vec<Vec<[f64; 2]>>) -> Result<Self> {
        let region_id = region_id.into();
        if rings.is_empty() {
            return Err(Error::InvalidPolygon {
                region: region_id,
                reason: "no rings".into(),
            });
        }
        let mut closed = Vec::with_capacity(rings.len());
        for (k, mut ring) in rings.into_iter().enumerate() {
            if ring.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::InvalidPolygon {
                    region: region_id,
                    reason: format!("ring {k} has non-finite vertices"),
                });
            }
            if ring.first() != ring.last() {
                let first = ring[0];
                ring.push(first);
            }
            // closed ring with n distinct vertices has n + 1 entries
            if ring.len() < 4 {
                return Err(Error::InvalidPolygon {
                    region: region_id,
                    reason: format!("ring {k} has fewer than 3 vertices"),
                });
            }
            closed.push(ring);
        }
        Ok(PolygonGeometry {
            region_id,
            rings: closed,
        })
    }

    /// Even-odd membership with half-open edges: points on lower/left edges are inside.
    pub fn contains(&self, p: [f64; 2]) -> bool {
        let mut inside = false;
        for ring in &self.rings {
            for e in ring.windows(2) {
                let (a, b) = (e[0], e[1]);
                if (a[1] > p[1]) != (b[1] > p[1]) {
                    let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
                    if p[0] < x {
                        inside = !inside;
                    }
                }
            }
        }
        inside
    }

    fn bbox(&self) -> ([f64; 2], [f64; 2]) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for v in self.rings.iter().flatten() {
            for k in 0..2 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        (lo, hi)
    }

    /// Area centroid of the outer ring, falling back to the vertex mean for degenerate rings.
    pub fn centroid(&self) -> [f64; 2] {
        let ring = &self.rings[0];
        let mut a2 = 0.0;
        let mut cx = 0.0;
        let mut cy = 0.0;
        for e in ring.windows(2) {
            let cross = e[0][0] * e[1][1] - e[1][0] * e[0][1];
            a2 += cross;
            cx += (e[0][0] + e[1][0]) * cross;
            cy += (e[0][1] + e[1][1]) * cross;
        }
        if a2.abs() > f64::EPSILON {
            [cx / (3.0 * a2), cy / (3.0 * a2)]
        } else {
            let n = (ring.len() - 1) as f64;
            let (sx, sy) = ring[..ring.len() - 1]
                .iter()
                .fold((0.0, 0.0), |(sx, sy), v| (sx + v[0], sy + v[1]));
            [sx / n, sy / n]
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RasterOptions {
    /// When no center falls inside, take the cell nearest the polygon centroid.
    pub snap_to_nearest: bool,
}

/// Cells whose centers lie inside `poly`.
pub fn rasterize(poly: &PolygonGeometry, grid: &GridSpec) -> Result<Region> {
    rasterize_with(poly, grid, RasterOptions::default())
}

pub fn rasterize_with(
    poly: &PolygonGeometry,
    grid: &GridSpec,
    opts: RasterOptions,
) -> Result<Region> {
    grid.validate()?;
    let (lo, hi) = poly.bbox();
    let h = grid.cell_size;
    let range = |lo: f64, hi: f64, origin: f64, n: usize| -> (usize, usize) {
        let first = ((lo - origin) / h - 0.5).floor().max(0.0) as usize;
        let last = ((hi - origin) / h - 0.5).ceil().max(0.0) as usize;
        (first.min(n), (last + 1).min(n))
    };
    let (c0, c1) = range(lo[0], hi[0], grid.origin[0], grid.nx);
    let (r0, r1) = range(lo[1], hi[1], grid.origin[1], grid.ny);

    let mut cells = Vec::new();
    for row in r0..r1 {
        for col in c0..c1 {
            let cell = grid.cell_index(col, row);
            if poly.contains(grid.center(cell)) {
                cells.push(cell);
            }
        }
    }
    if cells.is_empty() {
        if opts.snap_to_nearest {
            cells.push(grid.nearest_cell(poly.centroid()));
        } else {
            return Err(Error::EmptyRegion(poly.region_id.clone()));
        }
    }
    Region::new(poly.region_id.clone(), cells)
}

/// Result of [`validate_partition`].
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionDiagnostics {
    /// Fraction of grid cells claimed by some region.
    pub coverage: f64,
    pub warnings: Vec<String>,
}

/// Checks disjointness and grid bounds; incomplete coverage is only a warning.
pub fn validate_partition(p: &Partition, grid: &GridSpec) -> Result<PartitionDiagnostics> {
    let mut owner: HashMap<usize, usize> = HashMap::new();
    for (k, region) in p.regions.iter().enumerate() {
        region.check_grid(grid)?;
        for &c in region.cells() {
            if let Some(&prev) = owner.get(&c) {
                return Err(Error::OverlappingRegions {
                    first: p.regions[prev].id().to_string(),
                    second: region.id().to_string(),
                    cell: c,
                });
            }
            owner.insert(c, k);
        }
    }
    let coverage = owner.len() as f64 / grid.len() as f64;
    let mut warnings = Vec::new();
    if owner.len() < grid.len() {
        warnings.push(format!(
            "partition `{}` covers {} of {} cells (coverage={})",
            p.id,
            owner.len(),
            grid.len(),
            coverage
        ));
    }
    Ok(PartitionDiagnostics { coverage, warnings })
}
