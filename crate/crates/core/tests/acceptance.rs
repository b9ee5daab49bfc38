//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the process exits nonzero if any criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use sagp::aggregation::{build_distance_cache, region_cov_block, AggregationPlan};
use sagp::evaluation::{baseline_gpr, baseline_slfm, loocv_select_L, refine_sagp, RefinementTask};
use sagp::linalg::Factor;
use sagp::model::{
    gradient, log_marginal_likelihood, posterior_point, predict_region, Dataset, RegionPrediction,
};
use sagp::synth::{
    make_transfer_scenario, sample_ground_truth, DatasetSpec, MixingMode, Orientation,
    PartitionRecipe, SynthSpec,
};
use sagp::{
    AggregationScheme, DomainData, FittedModel, GridSpec, HyperParams, ModelConfig, Partition,
    Region,
};

type Outcome = (bool, String);

fn se(beta: f64, d2: f64) -> f64 {
    (-d2 / (2.0 * beta * beta)).exp()
}

fn center(g: &GridSpec, cell: usize) -> [f64; 2] {
    let (col, row) = (cell % g.nx, cell / g.nx);
    [
        g.origin[0] + (col as f64 + 0.5) * g.cell_size,
        g.origin[1] + (row as f64 + 0.5) * g.cell_size,
    ]
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// Prior covariance between output `s` at `a` and output `s2` at `b`, written
/// out from the model definition.
fn point_kernel(p: &HyperParams, s: usize, a: [f64; 2], s2: usize, b: [f64; 2], same: bool) -> f64 {
    let mut k = 0.0;
    for l in 0..p.num_latents() {
        k += p.weights.0[(s, l)] * p.weights.0[(s2, l)] * se(p.kernels[l].beta, dist2(a, b));
    }
    if s == s2 && same {
        k += p.noise.lambda[s].powi(2);
    }
    k
}

fn gaussian_log_density(k: DMatrix<f64>, y: &DVector<f64>) -> f64 {
    let n = y.len() as f64;
    let chol = k
        .cholesky()
        .expect("oracle covariance is positive definite");
    let alpha = chol.solve(y);
    let log_det: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
    -0.5 * y.dot(&alpha) - 0.5 * log_det - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
}

fn random_params(rng: &mut ChaCha8Rng, s: usize, l: usize, cell: f64) -> HyperParams {
    HyperParams::new(
        DMatrix::from_fn(s, l, |_, _| rng.random_range(-1.5..1.5)),
        (0..l).map(|_| cell * rng.random_range(0.6..4.0)).collect(),
        (0..s).map(|_| rng.random_range(0.0..0.4)).collect(),
        (0..s).map(|_| rng.random_range(0.02..0.3)).collect(),
    )
    .unwrap()
}

fn random_grid(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> GridSpec {
    GridSpec::new(
        [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)],
        rng.random_range(0.5..2.0),
        rng.random_range(lo..=hi),
        rng.random_range(lo..=hi),
    )
    .unwrap()
}

/// `k` regions over a random subset of the grid, with random cell weights
/// for the weighted scheme. Returns the partition and the explicit `(cell, weight)`
/// lists the oracle works from.
fn random_partition(
    rng: &mut ChaCha8Rng,
    g: &GridSpec,
    k: usize,
    tag: &str,
    scheme: AggregationScheme,
) -> (Partition, Vec<Vec<(usize, f64)>>) {
    let mut owner: Vec<usize> = (0..g.len()).map(|_| rng.random_range(0..=k)).collect();
    let mut order: Vec<usize> = (0..g.len()).collect();
    order.shuffle(rng);
    for (r, &c) in order.iter().take(k).enumerate() {
        owner[c] = r;
    }
    let mut regions = Vec::new();
    let mut explicit = Vec::new();
    for r in 0..k {
        let cells: Vec<usize> = (0..g.len()).filter(|c| owner[*c] == r).collect();
        let raw: Vec<f64> = cells.iter().map(|_| rng.random_range(0.1..2.0)).collect();
        let region = match scheme {
            AggregationScheme::WeightedAverage => {
                Region::with_weights(format!("{tag}{r}"), cells.clone(), raw.clone()).unwrap()
            }
            _ => Region::new(format!("{tag}{r}"), cells.clone()).unwrap(),
        };
        let weights: Vec<f64> = match scheme {
            AggregationScheme::Average => vec![1.0 / cells.len() as f64; cells.len()],
            AggregationScheme::Sum => vec![g.cell_size * g.cell_size; cells.len()],
            AggregationScheme::WeightedAverage => {
                let total: f64 = raw.iter().sum();
                raw.iter().map(|w| w / total).collect()
            }
        };
        regions.push(region);
        explicit.push(cells.into_iter().zip(weights).collect());
    }
    (Partition::new(tag, regions), explicit)
}

fn random_scheme(rng: &mut ChaCha8Rng) -> AggregationScheme {
    [
        AggregationScheme::Average,
        AggregationScheme::Sum,
        AggregationScheme::WeightedAverage,
    ][rng.random_range(0..3)]
}

struct Instance {
    params: HyperParams,
    domains: Vec<DomainData>,
}

fn covariances(instances: &[Instance]) -> Vec<DMatrix<f64>> {
    instances
        .iter()
        .flat_map(|inst| {
            inst.domains
                .iter()
                .filter(|d| d.num_obs() > 0)
                .map(|d| AggregationPlan::new(d).unwrap().moments(&inst.params).c)
                .collect::<Vec<_>>()
        })
        .collect()
}

fn slfm_degeneracy(pool: &mut Vec<Instance>) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    let instances = 25;
    for i in 0..instances {
        let g = random_grid(&mut rng, 4, 9);
        let s_count = rng.random_range(1..=4);
        let l_count = rng.random_range(1..=3);
        let params = random_params(&mut rng, s_count, l_count, g.cell_size);
        let mut points: Vec<(usize, usize)> = Vec::new();
        let mut datasets = Vec::new();
        for s in 0..s_count {
            let m = rng.random_range(1..=(30 / s_count).min(g.len()));
            let mut cells: Vec<usize> = (0..g.len()).collect();
            cells.shuffle(&mut rng);
            cells.truncate(m);
            let scheme = if i % 2 == 0 {
                AggregationScheme::Average
            } else {
                AggregationScheme::WeightedAverage
            };
            let regions: Vec<Region> = cells
                .iter()
                .map(|&c| match scheme {
                    AggregationScheme::WeightedAverage => Region::with_weights(
                        format!("p{c}"),
                        vec![c],
                        vec![rng.random_range(0.5..3.0)],
                    )
                    .unwrap(),
                    _ => Region::new(format!("p{c}"), vec![c]).unwrap(),
                })
                .collect();
            let values: Vec<f64> = (0..m).map(|_| StandardNormal.sample(&mut rng)).collect();
            points.extend(cells.iter().map(|&c| (s, c)));
            datasets.push(
                Dataset::normalized(
                    format!("d{s}"),
                    Partition::new(format!("d{s}"), regions),
                    scheme,
                    values,
                )
                .unwrap(),
            );
        }
        let domain = DomainData::new("v", g, datasets).unwrap();
        let y = DVector::from_vec(domain.stacked_values());
        let k = DMatrix::from_fn(points.len(), points.len(), |a, b| {
            let (sa, ca) = points[a];
            let (sb, cb) = points[b];
            let mut v = point_kernel(&params, sa, center(&g, ca), sb, center(&g, cb), ca == cb);
            if a == b {
                v += params.noise.sigma2[sa];
            }
            v
        });
        let oracle = gaussian_log_density(k, &y);
        let ours = log_marginal_likelihood(&params, std::slice::from_ref(&domain), 0.0).unwrap();
        worst = worst.max((ours - oracle).abs() / oracle.abs());
        pool.push(Instance {
            params,
            domains: vec![domain],
        });
    }
    (
        worst <= 1e-8,
        format!("{instances} instances, max relative error {worst:.2e} (tol 1e-8)"),
    )
}

fn posterior_oracle(pool: &mut Vec<Instance>) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst: f64 = 0.0;
    let instances = 25;
    for _ in 0..instances {
        let g = random_grid(&mut rng, 3, 6);
        let s_count = rng.random_range(1..=3);
        let l_count = rng.random_range(1..=2);
        let params = random_params(&mut rng, s_count, l_count, g.cell_size);
        let n_grid = g.len();
        let mut rows: Vec<(usize, Vec<(usize, f64)>)> = Vec::new();
        let mut datasets = Vec::new();
        for s in 0..s_count {
            let k = rng.random_range(1..=3);
            let scheme = random_scheme(&mut rng);
            let (part, explicit) = random_partition(&mut rng, &g, k, &format!("d{s}_"), scheme);
            let values: Vec<f64> = (0..k).map(|_| StandardNormal.sample(&mut rng)).collect();
            rows.extend(explicit.into_iter().map(|w| (s, w)));
            datasets.push(Dataset::normalized(format!("d{s}"), part, scheme, values).unwrap());
        }
        let domain = DomainData::new("v", g, datasets).unwrap();
        let y = DVector::from_vec(domain.stacked_values());

        // Joint Gaussian over every output at every grid point.
        let nf = s_count * n_grid;
        let kff = DMatrix::from_fn(nf, nf, |a, b| {
            let (sa, ca) = (a / n_grid, a % n_grid);
            let (sb, cb) = (b / n_grid, b % n_grid);
            point_kernel(&params, sa, center(&g, ca), sb, center(&g, cb), ca == cb)
        });
        let mut a_mat = DMatrix::zeros(rows.len(), nf);
        for (n, (s, ws)) in rows.iter().enumerate() {
            for &(c, w) in ws {
                a_mat[(n, s * n_grid + c)] = w;
            }
        }
        let kfy = &kff * a_mat.transpose();
        let mut kyy = &a_mat * &kfy;
        for (n, (s, _)) in rows.iter().enumerate() {
            kyy[(n, n)] += params.noise.sigma2[*s];
        }
        let chol = kyy.cholesky().unwrap();
        let post_mean = &kfy * chol.solve(&y);
        let post_cov = &kff - &kfy * chol.solve(&kfy.transpose());

        let model =
            FittedModel::condition(params.clone(), std::slice::from_ref(&domain), 0.0).unwrap();
        for x in 0..n_grid {
            let (m, c) = posterior_point(&model, "v", x).unwrap();
            for s in 0..s_count {
                let om = post_mean[s * n_grid + x];
                worst = worst.max((m[s] - om).abs());
                for s2 in 0..s_count {
                    let oc = post_cov[(s * n_grid + x, s2 * n_grid + x)];
                    worst = worst.max((c[(s, s2)] - oc).abs());
                }
            }
        }
        pool.push(Instance {
            params,
            domains: vec![domain],
        });
    }
    (
        worst <= 1e-6,
        format!("{instances} instances, max absolute error {worst:.2e} (tol 1e-6)"),
    )
}

fn gradient_check(pool: &mut Vec<Instance>) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut worst: f64 = 0.0;
    let instances = 12;
    for i in 0..instances {
        let g = random_grid(&mut rng, 4, 7);
        let s_count = rng.random_range(1..=3);
        let l_count = rng.random_range(1..=2);
        let params = random_params(&mut rng, s_count, l_count, g.cell_size);
        let n_domains = if i % 3 == 0 { 2 } else { 1 };
        let domains: Vec<DomainData> = (0..n_domains)
            .map(|v| {
                let datasets = (0..s_count)
                    .map(|s| {
                        let k = rng.random_range(1..=4);
                        let scheme = random_scheme(&mut rng);
                        let (part, _) =
                            random_partition(&mut rng, &g, k, &format!("v{v}d{s}_"), scheme);
                        let values = (0..k).map(|_| StandardNormal.sample(&mut rng)).collect();
                        Dataset::normalized(format!("d{s}"), part, scheme, values).unwrap()
                    })
                    .collect();
                DomainData::new(format!("v{v}"), g, datasets).unwrap()
            })
            .collect();
        let analytic = gradient(&params, &domains, 0.0).unwrap();
        let theta = params.to_unconstrained();
        let h = 1e-5;
        for k in 0..theta.len() {
            let eval = |delta: f64| {
                let mut t = theta.clone();
                t[k] += delta;
                let p = HyperParams::from_unconstrained(s_count, l_count, &t).unwrap();
                log_marginal_likelihood(&p, &domains, 0.0).unwrap()
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let denom = fd.abs().max(analytic[k].abs()).max(f64::MIN_POSITIVE);
            worst = worst.max((analytic[k] - fd).abs() / denom);
        }
        pool.push(Instance { params, domains });
    }
    (
        worst <= 1e-4,
        format!("{instances} instances, max relative error {worst:.2e} (tol 1e-4)"),
    )
}

fn hard_instances() -> Vec<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    (0..10)
        .map(|i| {
            let g = random_grid(&mut rng, 6, 12);
            let s_count = rng.random_range(2..=4);
            let l_count = 1 + i % 2;
            let w_row: Vec<f64> = (0..l_count).map(|_| rng.random_range(-1.0..1.0)).collect();
            // Proportional rows of W, no point noise and almost no region noise.
            let params = HyperParams::new(
                DMatrix::from_fn(s_count, l_count, |s, l| w_row[l] * (1.0 + s as f64)),
                (0..l_count)
                    .map(|_| g.cell_size * rng.random_range(2.0..8.0))
                    .collect(),
                vec![0.0; s_count],
                vec![1e-10; s_count],
            )
            .unwrap();
            let (shared, _) = random_partition(&mut rng, &g, 6, "p", AggregationScheme::Average);
            let datasets = (0..s_count)
                .map(|s| {
                    let values = (0..shared.len())
                        .map(|_| StandardNormal.sample(&mut rng))
                        .collect();
                    Dataset::normalized(
                        format!("d{s}"),
                        shared.clone(),
                        AggregationScheme::Average,
                        values,
                    )
                    .unwrap()
                })
                .collect();
            Instance {
                params,
                domains: vec![DomainData::new("v", g, datasets).unwrap()],
            }
        })
        .collect()
}

fn symmetric_and_factorable(pool: &[Instance]) -> Outcome {
    let mats = covariances(pool);
    let jitter = ModelConfig::default().jitter;
    let mut asymmetric = 0;
    let mut failed = 0;
    let mut worst_rel: f64 = 0.0;
    for c in &mats {
        let n = c.nrows();
        for i in 0..n {
            for j in 0..i {
                if c[(i, j)].to_bits() != c[(j, i)].to_bits() {
                    asymmetric += 1;
                }
            }
        }
        let scale = c.trace() / n as f64;
        match Factor::new(c, jitter) {
            Ok(f) => {
                worst_rel = worst_rel.max(f.jitter / scale);
                if f.jitter > 1e-6 * scale {
                    failed += 1;
                }
            }
            Err(_) => failed += 1,
        }
    }
    (
        asymmetric == 0 && failed == 0,
        format!(
            "{} matrices, {asymmetric} asymmetric entries, {failed} factorization failures, max relative jitter {worst_rel:.1e} (tol 1e-6)",
            mats.len()
        ),
    )
}

fn integral_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let g = GridSpec::new([0.0, 0.0], 0.05, 80, 80).unwrap();
    let samples = 100_000;
    let instances = 12;
    let mut passed = 0;
    let mut worst_z: f64 = 0.0;
    for i in 0..instances {
        let l_count = rng.random_range(1..=2);
        let params = HyperParams::new(
            DMatrix::from_fn(2, l_count, |_, _| rng.random_range(-1.5..1.5)),
            (0..l_count).map(|_| rng.random_range(0.5..1.5)).collect(),
            vec![0.0; 2],
            vec![0.0; 2],
        )
        .unwrap();
        let rect = |rng: &mut ChaCha8Rng| {
            let w = rng.random_range(12..=40);
            let h = rng.random_range(12..=40);
            let c0 = rng.random_range(0..=g.nx - w);
            let r0 = rng.random_range(0..=g.ny - h);
            let cells: Vec<usize> = (r0..r0 + h)
                .flat_map(|r| (c0..c0 + w).map(move |c| r * g.nx + c))
                .collect();
            let bounds = [
                g.origin[0] + c0 as f64 * g.cell_size,
                g.origin[0] + (c0 + w) as f64 * g.cell_size,
                g.origin[1] + r0 as f64 * g.cell_size,
                g.origin[1] + (r0 + h) as f64 * g.cell_size,
            ];
            (cells, bounds)
        };
        let (ca, ba) = rect(&mut rng);
        let (cb, bb) = rect(&mut rng);
        let (s, s2) = (i % 2, (i / 2) % 2);
        let scheme = if i % 4 == 3 {
            AggregationScheme::Sum
        } else {
            AggregationScheme::Average
        };
        let pa = Partition::new("a", vec![Region::new("a", ca).unwrap()]);
        let pb = Partition::new("b", vec![Region::new("b", cb).unwrap()]);
        let cache = build_distance_cache(&g, &params);
        let block =
            region_cov_block(s, s2, &pa, &pb, scheme, scheme, &cache, &params).unwrap()[(0, 0)];

        let area = |b: [f64; 4]| (b[1] - b[0]) * (b[3] - b[2]);
        let factor = match scheme {
            AggregationScheme::Sum => area(ba) * area(bb),
            _ => 1.0,
        };
        let (mut sum, mut sum2) = (0.0, 0.0);
        for _ in 0..samples {
            let x = [
                rng.random_range(ba[0]..ba[1]),
                rng.random_range(ba[2]..ba[3]),
            ];
            let z = [
                rng.random_range(bb[0]..bb[1]),
                rng.random_range(bb[2]..bb[3]),
            ];
            let v = factor * point_kernel(&params, s, x, s2, z, false);
            sum += v;
            sum2 += v * v;
        }
        let n = samples as f64;
        let mean = sum / n;
        let stderr = ((sum2 / n - mean * mean).max(0.0) / (n - 1.0)).sqrt();
        let z = (block - mean).abs() / stderr;
        worst_z = worst_z.max(z);
        if z <= 3.0 {
            passed += 1;
        }
    }
    (
        passed == instances,
        format!("{passed}/{instances} rectangle pairs within 3 SE at {samples} samples, worst {worst_z:.2} SE"),
    )
}

fn training_reproduction() -> Outcome {
    let g = GridSpec::new([0.0, 0.0], 1.0, 12, 12).unwrap();
    let recipes = [
        vec![
            PartitionRecipe::Blocks { bx: 3, by: 2 },
            PartitionRecipe::Voronoi { regions: 9 },
        ],
        vec![
            PartitionRecipe::Voronoi { regions: 7 },
            PartitionRecipe::even_strips(Orientation::Vertical, 12, &g),
            PartitionRecipe::even_strips(Orientation::Horizontal, 12, &g),
        ],
        vec![
            PartitionRecipe::Blocks { bx: 4, by: 4 },
            PartitionRecipe::Blocks { bx: 2, by: 3 },
        ],
        vec![
            PartitionRecipe::Voronoi { regions: 12 },
            PartitionRecipe::Voronoi { regions: 5 },
            PartitionRecipe::Blocks { bx: 6, by: 1 },
        ],
        vec![
            PartitionRecipe::Blocks { bx: 1, by: 4 },
            PartitionRecipe::even_strips(Orientation::Vertical, 12, &g),
        ],
    ];
    let mut worst: f64 = 0.0;
    for (i, recipe) in recipes.iter().enumerate() {
        let s_count = recipe.len();
        let l_count = 1 + i % 2;
        let mut rng = ChaCha8Rng::seed_from_u64(16 + i as u64);
        let params = HyperParams::new(
            DMatrix::from_fn(s_count, l_count, |_, _| rng.random_range(-1.5..1.5)),
            (0..l_count).map(|_| rng.random_range(1.5..5.0)).collect(),
            vec![0.05; s_count],
            vec![1e-10; s_count],
        )
        .unwrap();
        let datasets = recipe
            .iter()
            .enumerate()
            .map(|(s, r)| DatasetSpec {
                id: format!("d{s}"),
                recipe: r.clone(),
                scheme: AggregationScheme::Average,
            })
            .collect();
        let spec = SynthSpec::new(g, params.clone(), datasets, 100 + i as u64);
        let out = sample_ground_truth(&spec).unwrap();
        let synth = &out.domains[0];
        let data = synth.to_domain_data(&[]).unwrap();
        let sd: Vec<f64> = data.datasets.iter().map(|d| d.stats.std).collect();
        let normalized = HyperParams::new(
            DMatrix::from_fn(s_count, l_count, |s, l| params.weights.0[(s, l)] / sd[s]),
            params.kernels.iter().map(|k| k.beta).collect(),
            (0..s_count)
                .map(|s| params.noise.lambda[s] / sd[s])
                .collect(),
            (0..s_count)
                .map(|s| params.noise.sigma2[s] / (sd[s] * sd[s]))
                .collect(),
        )
        .unwrap();
        let model = FittedModel::condition(normalized, std::slice::from_ref(&data), 0.0).unwrap();
        for (s, ds) in data.datasets.iter().enumerate() {
            let pred = predict_region(&model, &data.id, s, &ds.partition, ds.scheme).unwrap();
            let raw: Vec<f64> = pred.iter().map(|p| ds.stats.denormalize(p.mean)).collect();
            worst = worst.max(sagp::evaluation::mape(&synth.observations[s], &raw).unwrap());
        }
    }
    (
        worst <= 1e-4,
        format!(
            "{} instances, max MAPE {worst:.2e} (tol 1e-4)",
            recipes.len()
        ),
    )
}

fn demo_params() -> HyperParams {
    HyperParams::new(
        DMatrix::from_row_slice(3, 2, &[1.0, 0.3, 0.9, 0.2, 0.2, 1.0]),
        vec![2.0, 6.0],
        vec![0.05; 3],
        vec![1e-3; 3],
    )
    .unwrap()
}

fn demo_datasets(g: &GridSpec) -> Vec<DatasetSpec> {
    vec![
        DatasetSpec {
            id: "t".into(),
            recipe: PartitionRecipe::Blocks { bx: 4, by: 1 },
            scheme: AggregationScheme::Average,
        },
        DatasetSpec {
            id: "a".into(),
            recipe: PartitionRecipe::even_strips(Orientation::Vertical, g.nx, g),
            scheme: AggregationScheme::Average,
        },
        DatasetSpec {
            id: "b".into(),
            recipe: PartitionRecipe::even_strips(Orientation::Horizontal, g.ny, g),
            scheme: AggregationScheme::Average,
        },
    ]
}

fn fine_strips(g: &GridSpec) -> Partition {
    PartitionRecipe::Strips {
        orientation: Orientation::Vertical,
        widths: [1, 2].repeat(g.nx / 3),
    }
    .build("fine", g, &mut ChaCha8Rng::seed_from_u64(0))
    .unwrap()
}

fn score(task: &RefinementTask, pred: &[RegionPrediction]) -> f64 {
    task.score(&pred.iter().map(|r| r.mean).collect::<Vec<_>>())
        .unwrap()
}

fn refinement_ordering() -> Outcome {
    let g = GridSpec::new([0.0, 0.0], 1.0, 24, 24).unwrap();
    let fine = fine_strips(&g);
    let (mut vs_gpr, mut vs_slfm) = (0, 0);
    let seeds = 10;
    for seed in 0..seeds {
        let spec = SynthSpec::new(g, demo_params(), demo_datasets(&g), seed);
        let out = sample_ground_truth(&spec).unwrap();
        let synth = &out.domains[0];
        let truth = synth.truth(0, &fine, AggregationScheme::Average).unwrap();
        let data = vec![synth.to_domain_data(&[]).unwrap()];
        let task = RefinementTask::new(
            "t",
            &data[0].id,
            "t",
            fine.clone(),
            AggregationScheme::Average,
            Some(truth),
        )
        .unwrap();
        let cfg = ModelConfig {
            latents: 2,
            seed,
            ..Default::default()
        };
        let ours = score(&task, &refine_sagp(&data, &task, &cfg).unwrap().1);
        let slfm = score(&task, &baseline_slfm(&task, &data, &cfg).unwrap());
        let gpr = task.score(&baseline_gpr(&task, &data[0]).unwrap()).unwrap();
        vs_slfm += (ours <= slfm) as usize;
        vs_gpr += (ours <= gpr) as usize;
    }
    (
        vs_gpr >= 8 && vs_slfm >= 8,
        format!("beats GPR on {vs_gpr}/{seeds}, SLFM on {vs_slfm}/{seeds} (need 8)"),
    )
}

fn transfer_ordering() -> Outcome {
    let g = GridSpec::new([0.0, 0.0], 1.0, 24, 24).unwrap();
    let fine = fine_strips(&g);
    let mut wins = 0;
    let seeds = 10;
    for seed in 0..seeds {
        let mut spec = SynthSpec::new(g, demo_params(), demo_datasets(&g), seed);
        spec.domains = 2;
        spec.mixing = MixingMode::Shared;
        let sc = make_transfer_scenario(&spec, &[0]).unwrap();
        let truth = sc.output.domains[1]
            .truth(0, &fine, AggregationScheme::Average)
            .unwrap();
        let task = RefinementTask::new(
            "t",
            &sc.sparse.id,
            "t",
            fine.clone(),
            AggregationScheme::Average,
            Some(truth),
        )
        .unwrap();
        let cfg = ModelConfig {
            latents: 2,
            seed,
            ..Default::default()
        };
        let solo = score(
            &task,
            &refine_sagp(std::slice::from_ref(&sc.sparse), &task, &cfg)
                .unwrap()
                .1,
        );
        let joint = score(
            &task,
            &refine_sagp(&[sc.rich.clone(), sc.sparse.clone()], &task, &cfg)
                .unwrap()
                .1,
        );
        wins += (joint <= solo) as usize;
    }
    (
        wins >= 7,
        format!("two-domain fit wins on {wins}/{seeds} (need 7)"),
    )
}

fn loocv_sanity() -> Outcome {
    let g = GridSpec::new([0.0, 0.0], 1.0, 12, 12).unwrap();
    let fine = PartitionRecipe::even_strips(Orientation::Vertical, g.nx, &g)
        .build("fine", &g, &mut ChaCha8Rng::seed_from_u64(0))
        .unwrap();
    let mut ok = 0;
    let mut selected = Vec::new();
    let seeds = 10;
    for seed in 0..seeds {
        let mut datasets = demo_datasets(&g);
        datasets[0].recipe = PartitionRecipe::Voronoi { regions: 6 };
        let spec = SynthSpec::new(g, demo_params(), datasets, 500 + seed);
        let out = sample_ground_truth(&spec).unwrap();
        let data = vec![out.domains[0].to_domain_data(&[]).unwrap()];
        let task = RefinementTask::new(
            "t",
            &data[0].id,
            "t",
            fine.clone(),
            AggregationScheme::Average,
            None,
        )
        .unwrap();
        let cfg = ModelConfig {
            latents: 2,
            seed,
            restarts: 3,
            ..Default::default()
        };
        match loocv_select_L(&data, &task, &[1, 2, 3], &cfg) {
            Ok(cv) => {
                let err = |l: usize| {
                    cv.candidates
                        .iter()
                        .find(|c| c.latents == l)
                        .map(|c| c.mean_error)
                };
                if let (Some(best), Some(one)) = (err(cv.selected), err(1)) {
                    ok += (best <= one) as usize;
                }
                selected.push(cv.selected);
            }
            Err(_) => selected.push(0),
        }
    }
    (
        ok >= 8,
        format!("selected L no worse than L=1 on {ok}/{seeds} (need 8), selections {selected:?}"),
    )
}

const DETERMINISM_CONFIG: &str = r#"
[grid]
origin = [0.0, 0.0]
cell_size = 1.0
nx = 10
ny = 10

[model]
latents = 2
restarts = 4
seed = 3

[synth]
beta = [1.5, 4.0]
weights = [[1.0, 0.3], [0.6, -0.8]]
lambda = 0.05
sigma2 = 0.001

[[synth.datasets]]
id = "x"
recipe = { kind = "blocks", bx = 2, by = 5 }

[[synth.datasets]]
id = "y"
recipe = { kind = "voronoi", regions = 12 }
"#;

fn run_cli(args: &[String]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_sagp"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(String::from_utf8_lossy(&out.stderr).into_owned())
    }
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let path = |p: &str| root.join(p).to_string_lossy().into_owned();
    std::fs::write(root.join("synth.toml"), DETERMINISM_CONFIG).unwrap();
    let generated = path("data/generated.toml");
    let mut steps = vec![vec![
        "synth".to_string(),
        "--config".into(),
        path("synth.toml"),
        "--out".into(),
        path("data"),
    ]];
    for out in ["fit1", "fit2", "fit3"] {
        steps.push(vec![
            "fit".into(),
            "--config".into(),
            generated.clone(),
            "--out".into(),
            path(out),
        ]);
    }
    for step in &steps {
        if let Err(e) = run_cli(step) {
            return (false, format!("`sagp {}` failed: {e}", step[0]));
        }
    }
    let read = |d: &str| std::fs::read(Path::new(&path(d)).join("hyperparams.txt")).unwrap();
    let first = read("fit1");
    let same = [read("fit2"), read("fit3")].iter().all(|b| *b == first);
    (
        same && !first.is_empty(),
        format!("3 fits, hyperparams files byte-identical: {same}"),
    )
}

fn main() {
    let mut pool = Vec::new();
    let mut results: Vec<bool> = Vec::new();
    let mut run = |name: &str, limit: Option<u64>, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let (ok, detail) = f();
        let elapsed = t.elapsed();
        let in_time = limit.is_none_or(|secs| elapsed < Duration::from_secs(secs));
        let limit_note = limit.map_or(String::new(), |secs| format!(", limit {secs}s"));
        println!(
            "[{}] {name} : {detail} [{elapsed:.1?}{limit_note}]",
            if ok && in_time { "PASS" } else { "FAIL" },
        );
        results.push(ok && in_time);
    };
    run("1 slfm degeneracy", Some(10), &mut || {
        slfm_degeneracy(&mut pool)
    });
    run("2 posterior oracle", Some(30), &mut || {
        posterior_oracle(&mut pool)
    });
    run("3 gradient check", Some(30), &mut || {
        gradient_check(&mut pool)
    });
    pool.extend(hard_instances());
    run("4 symmetry and factorization", None, &mut || {
        symmetric_and_factorable(&pool)
    });
    run("5 region integral oracle", Some(60), &mut integral_oracle);
    run("6 training reproduction", None, &mut training_reproduction);
    run("7 refinement ordering", Some(600), &mut refinement_ordering);
    run("8 transfer ordering", Some(900), &mut transfer_ordering);
    run("9 cross-validation sanity", None, &mut loocv_sanity);
    run("10 fit determinism", None, &mut determinism);
    let failed = results.iter().filter(|ok| !**ok).count();
    println!(
        "acceptance: {} passed, {failed} failed",
        results.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
