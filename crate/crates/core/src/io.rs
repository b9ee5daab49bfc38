//! CSV ingestion and the output file formats.
//!
//! | file | header |
//! |------|--------|
//! | observations | `domain_id,dataset_id,region_id,value` |
//! | membership | `dataset_id,region_id,cell_id[,weight]` |
//! | polygons | `region_id,ring_index,vertex_index,x,y` |
//! | ground truth grid | `dataset_id,cell_id,value` |
//! | region predictions | `dataset_id,region_id,mean,variance` |
//! | grid raster | `dataset_id,cell_id,mean,variance` |
//! | metrics | `task_id,method,L,seed,mape` |
//! | folds | `task_id,L,fold_region_id,abs_pct_err` |

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::aggregation::MarginalMoments;
use crate::error::{Error, Result};
use crate::geometry::{GridSpec, PolygonGeometry, Region};

fn path_str(path: &Path) -> String {
    path.display().to_string()
}

fn open_csv(path: &Path, expected: &[&str], optional: &[&str]) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path_str(path), e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(false)
        .from_reader(file);
    let headers = rdr
        .headers()
        .map_err(|e| Error::parse(path_str(path), format!("line 1: {e}")))?
        .clone();
    let got: Vec<&str> = headers.iter().collect();
    let ok = got.len() >= expected.len()
        && got[..expected.len()] == *expected
        && got[expected.len()..]
            .iter()
            .zip(optional)
            .all(|(a, b)| a == b)
        && got.len() <= expected.len() + optional.len();
    if !ok {
        return Err(Error::parse(
            path_str(path),
            format!(
                "line 1: expected header `{}`, found `{}`",
                expected.join(","),
                got.join(",")
            ),
        ));
    }
    Ok(rdr)
}

fn records(
    path: &Path,
    rdr: &mut csv::Reader<fs::File>,
) -> Result<Vec<(usize, csv::StringRecord)>> {
    rdr.records()
        .enumerate()
        .map(|(k, r)| {
            r.map(|rec| (k + 2, rec))
                .map_err(|e| Error::parse(path_str(path), format!("line {}: {e}", k + 2)))
        })
        .collect()
}

fn field<T: std::str::FromStr>(
    path: &Path,
    line: usize,
    rec: &csv::StringRecord,
    k: usize,
    name: &str,
) -> Result<T> {
    rec.get(k).and_then(|v| v.parse().ok()).ok_or_else(|| {
        Error::parse(
            path_str(path),
            format!(
                "line {line}: bad `{name}` value `{}`",
                rec.get(k).unwrap_or("")
            ),
        )
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationRow {
    pub domain_id: String,
    pub dataset_id: String,
    pub region_id: String,
    pub value: f64,
}

pub fn read_observations(path: &Path) -> Result<Vec<ObservationRow>> {
    let mut rdr = open_csv(
        path,
        &["domain_id", "dataset_id", "region_id", "value"],
        &[],
    )?;
    records(path, &mut rdr)?
        .into_iter()
        .map(|(line, rec)| {
            let value: f64 = field(path, line, &rec, 3, "value")?;
            if !value.is_finite() {
                return Err(Error::parse(
                    path_str(path),
                    format!("line {line}: non-finite value"),
                ));
            }
            Ok(ObservationRow {
                domain_id: rec[0].to_string(),
                dataset_id: rec[1].to_string(),
                region_id: rec[2].to_string(),
                value,
            })
        })
        .collect()
}

pub fn write_observations(path: &Path, rows: &[ObservationRow]) -> Result<()> {
    let mut out = String::from("domain_id,dataset_id,region_id,value\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.domain_id, r.dataset_id, r.region_id, r.value
        );
    }
    write_text(path, &out)
}

/// Regions per dataset id, both in order of first appearance.
pub type Membership = Vec<(String, Vec<Region>)>;

pub fn read_membership(path: &Path, grid: &GridSpec) -> Result<Membership> {
    let mut rdr = open_csv(path, &["dataset_id", "region_id", "cell_id"], &["weight"])?;
    let weighted = rdr.headers().map(|h| h.len() == 4).unwrap_or(false);
    type Cells = Vec<(usize, f64)>;
    let mut order: Vec<(String, Vec<(String, Cells)>)> = Vec::new();
    for (line, rec) in records(path, &mut rdr)? {
        let cell: usize = field(path, line, &rec, 2, "cell_id")?;
        if !grid.contains_cell(cell) {
            return Err(Error::GridMismatch {
                region: rec[1].to_string(),
                cell,
                nx: grid.nx,
                ny: grid.ny,
            });
        }
        let w: f64 = if weighted {
            field(path, line, &rec, 3, "weight")?
        } else {
            1.0
        };
        let ds = match order.iter_mut().find(|(d, _)| d == &rec[0]) {
            Some(e) => e,
            None => {
                order.push((rec[0].to_string(), Vec::new()));
                order.last_mut().unwrap()
            }
        };
        match ds.1.iter_mut().find(|(r, _)| r == &rec[1]) {
            Some(r) => r.1.push((cell, w)),
            None => ds.1.push((rec[1].to_string(), vec![(cell, w)])),
        }
    }
    order
        .into_iter()
        .map(|(ds, regions)| {
            let regions = regions
                .into_iter()
                .map(|(id, cells)| {
                    let (c, w): (Vec<usize>, Vec<f64>) = cells.into_iter().unzip();
                    if weighted {
                        Region::with_weights(id, c, w)
                    } else {
                        Region::new(id, c)
                    }
                })
                .collect::<Result<Vec<_>>>()
                .map_err(|e| Error::parse(path_str(path), e.to_string()))?;
            Ok((ds, regions))
        })
        .collect()
}

pub fn write_membership(path: &Path, membership: &[(String, Vec<Region>)]) -> Result<()> {
    let weighted = membership
        .iter()
        .flat_map(|(_, rs)| rs)
        .any(|r| r.cell_weights().is_some());
    let mut out = String::from(if weighted {
        "dataset_id,region_id,cell_id,weight\n"
    } else {
        "dataset_id,region_id,cell_id\n"
    });
    for (ds, regions) in membership {
        for r in regions {
            for (k, c) in r.cells().iter().enumerate() {
                if weighted {
                    let w = r.cell_weights().map_or(1.0, |w| w[k]);
                    let _ = writeln!(out, "{ds},{},{c},{w}", r.id());
                } else {
                    let _ = writeln!(out, "{ds},{},{c}", r.id());
                }
            }
        }
    }
    write_text(path, &out)
}

/// Polygons in file order; vertices ordered by ring then vertex index.
pub fn read_polygons(path: &Path) -> Result<Vec<PolygonGeometry>> {
    let mut rdr = open_csv(
        path,
        &["region_id", "ring_index", "vertex_index", "x", "y"],
        &[],
    )?;
    let mut order: Vec<String> = Vec::new();
    type Ring = Vec<(usize, [f64; 2])>;
    let mut rings: BTreeMap<(usize, usize), Ring> = BTreeMap::new();
    for (line, rec) in records(path, &mut rdr)? {
        let id = rec[0].to_string();
        let pos = order.iter().position(|o| *o == id).unwrap_or_else(|| {
            order.push(id);
            order.len() - 1
        });
        let ring: usize = field(path, line, &rec, 1, "ring_index")?;
        let vertex: usize = field(path, line, &rec, 2, "vertex_index")?;
        let x: f64 = field(path, line, &rec, 3, "x")?;
        let y: f64 = field(path, line, &rec, 4, "y")?;
        rings.entry((pos, ring)).or_default().push((vertex, [x, y]));
    }
    order
        .into_iter()
        .enumerate()
        .map(|(pos, id)| {
            let rs: Vec<Vec<[f64; 2]>> = rings
                .range((pos, 0)..(pos + 1, 0))
                .map(|(_, verts)| {
                    let mut v = verts.clone();
                    v.sort_by_key(|e| e.0);
                    v.into_iter().map(|e| e.1).collect()
                })
                .collect();
            PolygonGeometry::new(id, rs).map_err(|e| Error::parse(path_str(path), e.to_string()))
        })
        .collect()
}

pub fn write_truth_grid(path: &Path, fields: &[(String, Vec<f64>)]) -> Result<()> {
    let mut out = String::from("dataset_id,cell_id,value\n");
    for (ds, values) in fields {
        for (c, v) in values.iter().enumerate() {
            let _ = writeln!(out, "{ds},{c},{v}");
        }
    }
    write_text(path, &out)
}

pub fn read_truth_grid(path: &Path) -> Result<Vec<(String, Vec<f64>)>> {
    let mut rdr = open_csv(path, &["dataset_id", "cell_id", "value"], &[])?;
    let mut out: Vec<(String, Vec<(usize, f64)>)> = Vec::new();
    for (line, rec) in records(path, &mut rdr)? {
        let c: usize = field(path, line, &rec, 1, "cell_id")?;
        let v: f64 = field(path, line, &rec, 2, "value")?;
        match out.iter_mut().find(|(d, _)| d == &rec[0]) {
            Some(e) => e.1.push((c, v)),
            None => out.push((rec[0].to_string(), vec![(c, v)])),
        }
    }
    Ok(out
        .into_iter()
        .map(|(d, mut cells)| {
            cells.sort_by_key(|e| e.0);
            (d, cells.into_iter().map(|e| e.1).collect())
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub dataset_id: String,
    /// Region id or cell id.
    pub key: String,
    pub mean: f64,
    pub variance: f64,
}

pub fn write_region_predictions(path: &Path, rows: &[PredictionRow]) -> Result<()> {
    write_predictions(path, "dataset_id,region_id,mean,variance", rows)
}

pub fn write_grid_raster(path: &Path, rows: &[PredictionRow]) -> Result<()> {
    write_predictions(path, "dataset_id,cell_id,mean,variance", rows)
}

fn write_predictions(path: &Path, header: &str, rows: &[PredictionRow]) -> Result<()> {
    let mut out = format!("{header}\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.dataset_id, r.key, r.mean, r.variance);
    }
    write_text(path, &out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub task_id: String,
    pub method: String,
    pub latents: usize,
    pub seed: u64,
    pub mape: f64,
}

pub fn write_metrics(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let mut out = String::from("task_id,method,L,seed,mape\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.task_id, r.method, r.latents, r.seed, r.mape
        );
    }
    write_text(path, &out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldRow {
    pub task_id: String,
    pub latents: usize,
    pub fold_region_id: String,
    pub abs_pct_err: f64,
}

pub fn write_folds(path: &Path, rows: &[FoldRow]) -> Result<()> {
    let mut out = String::from("task_id,L,fold_region_id,abs_pct_err\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.task_id, r.latents, r.fold_region_id, r.abs_pct_err
        );
    }
    write_text(path, &out)
}

/// `μ` and `C` row-major; the header names each row by `dataset:region`.
pub fn write_moments(path: &Path, moments: &MarginalMoments, labels: &[String]) -> Result<()> {
    let mut out = String::from("row,mu");
    for l in labels {
        let _ = write!(out, ",{l}");
    }
    out.push('\n');
    for (i, label) in labels.iter().enumerate() {
        let _ = write!(out, "{label},{}", moments.mu[i]);
        for j in 0..labels.len() {
            let _ = write!(out, ",{}", moments.c[(i, j)]);
        }
        out.push('\n');
    }
    write_text(path, &out)
}

/// Binary 8-bit PGM, min-max scaled, with row 0 of the grid at the bottom.
pub fn write_pgm(path: &Path, grid: &GridSpec, values: &[f64]) -> Result<()> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(*v), hi.max(*v))
        });
    let span = hi - lo;
    let mut bytes = format!("P5\n{} {}\n255\n", grid.nx, grid.ny).into_bytes();
    for row in (0..grid.ny).rev() {
        for col in 0..grid.nx {
            let v = values[grid.cell_index(col, row)];
            let t = if span > 0.0 { (v - lo) / span } else { 0.0 };
            bytes.push((t * 255.0).round().clamp(0.0, 255.0) as u8);
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path_str(path), e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(path_str(dir), e))?;
        }
    }
    fs::write(path, text).map_err(|e| Error::io(path_str(path), e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path_str(path), e))
}
