//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.
//!
//! Criterion 9 runs only when `TRAFFICCTX_TRIPS_CSV` names a trip CSV
//! covering at least 14 days.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use chrono::{DateTime, TimeZone, Utc};
use ndarray::{Array1, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trafficctx::augmentation::{
    augment_adjacency, augment_adjacency_links, augment_features, project_context, AuxLink, AuxNodeSpec, ProjectionStack,
};
use trafficctx::context::ContextScope;
use trafficctx::experiment::config::LossKind;
use trafficctx::experiment::data::SampleContext;
use trafficctx::experiment::report::rows_from_csv;
use trafficctx::experiment::train::{aux_slots, batch_loss, batch_loss_grad, flat_params, Batch};
use trafficctx::experiment::{make_embedder, run_comparison, synth_generate, Dataset, ExperimentConfig, PreparedSample, Variant};
use trafficctx::flow::{FlowSeries, GridGeometry};
use trafficctx::ingestion::{aggregate_flows, aggregate_flows_parallel, build_adjacency, AdjacencyScheme, Period, TripInput, TripRecord};
use trafficctx::metrics::{mae, rmse};
use trafficctx::models::gradcheck::{check, sample_entries};
use trafficctx::models::tape::Activation;
use trafficctx::models::{normalized_adjacency, Architecture, Forecaster, Hyperparameters, ModelDims};
use trafficctx::reduction::fit_pca;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn random_adjacency(rng: &mut ChaCha8Rng, n: usize) -> Array2<f64> {
    let p = rng.random_range(0.0..1.0);
    let mut a = Array2::zeros((n, n));
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(p) {
                a[[i, j]] = 1.0;
                a[[j, i]] = 1.0;
            }
        }
    }
    a
}

fn c1_graph_augmentation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut failures = Vec::new();
    for trial in 0..1000 {
        let n = rng.random_range(2..=30);
        let a = random_adjacency(&mut rng, n);
        let k = rng.random_range(1..=4);
        let links: Vec<AuxLink> = (0..k)
            .map(|_| {
                if rng.random_bool(0.4) {
                    AuxLink::All
                } else {
                    AuxLink::Single(rng.random_range(0..n))
                }
            })
            .collect();
        // Half the trials go through the spec-level entry point.
        let ae = if trial % 2 == 0 {
            augment_adjacency_links(a.view(), &links).unwrap()
        } else {
            let specs: Vec<AuxNodeSpec> = links
                .iter()
                .map(|l| AuxNodeSpec {
                    scope: if *l == AuxLink::All {
                        ContextScope::City
                    } else {
                        ContextScope::Node
                    },
                    target_grid: match l {
                        AuxLink::Single(g) => Some(*g),
                        AuxLink::All => None,
                    },
                    projection: ProjectionStack::zeros(6, 2, 3, Activation::Tanh),
                    context_vector: Array1::zeros(3),
                })
                .collect();
            augment_adjacency(a.view(), &specs).unwrap()
        };
        let m = n + k;
        let mut ok = ae.dim() == (m, m);
        for i in 0..m {
            for j in 0..m {
                ok &= ae[[i, j]] == ae[[j, i]];
                if i < n && j < n {
                    ok &= ae[[i, j]] == a[[i, j]];
                }
                if i >= n && j >= n {
                    ok &= ae[[i, j]] == 0.0;
                }
            }
        }
        for (q, link) in links.iter().enumerate() {
            let row = ae.row(n + q);
            match *link {
                AuxLink::All => ok &= (0..n).all(|v| row[v] == 1.0),
                AuxLink::Single(g) => ok &= (0..n).all(|v| row[v] == if v == g { 1.0 } else { 0.0 }),
            }
        }
        if !ok {
            failures.push(trial);
        }
    }
    outcome(failures.is_empty(), format!("1000 trials, {} violations", failures.len()))
}

fn act(a: Activation, x: f64) -> f64 {
    match a {
        Activation::Tanh => (x.exp() - (-x).exp()) / (x.exp() + (-x).exp()),
        Activation::Relu => {
            if x > 0.0 {
                x
            } else {
                0.0
            }
        }
        Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        Activation::Identity => x,
    }
}

fn c2_projection() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let acts = [Activation::Tanh, Activation::Relu, Activation::Sigmoid, Activation::Identity];
    let mut worst: f64 = 0.0;
    let mut shape_ok = true;
    for s in 0..100 {
        let (t1, d, dc) = (rng.random_range(1..=12), rng.random_range(1..=4), rng.random_range(1..=20));
        let activation = acts[s % 4];
        let weights: Vec<Array2<f64>> = (0..t1)
            .map(|_| Array2::from_shape_fn((d, dc), |_| rng.random_range(-1.0..1.0)))
            .collect();
        let biases: Vec<Array1<f64>> = (0..t1).map(|_| Array1::from_shape_fn(d, |_| rng.random_range(-1.0..1.0))).collect();
        let c = Array1::from_shape_fn(dc, |_| rng.random_range(-2.0..2.0));
        let stack = ProjectionStack::new(weights.clone(), biases.clone(), activation).unwrap();
        let block = project_context(c.view(), &stack).unwrap();
        shape_ok &= block.dim() == (d, t1);
        for i in 0..t1 {
            for f in 0..d {
                let mut z = biases[i][f];
                for j in 0..dc {
                    z += weights[i][[f, j]] * c[j];
                }
                worst = worst.max((act(activation, z) - block[[f, i]]).abs());
            }
        }
        let n = rng.random_range(1..=5);
        let x = Array3::from_shape_fn((n, d, t1), |_| rng.random_range(0.0..5.0));
        let xe = augment_features(x.view(), std::slice::from_ref(&block)).unwrap();
        shape_ok &= xe.dim() == (n + 1, d, t1);
        shape_ok &= xe.index_axis(ndarray::Axis(0), n) == block;
    }
    outcome(
        worst <= 1e-12 && shape_ok,
        format!(
            "100 stacks, max |diff| {worst:.2e}, shapes {}",
            if shape_ok { "exact" } else { "WRONG" }
        ),
    )
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns
/// eigenvalues and eigenvectors as columns.
fn jacobi_eigen(mut a: Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let n = a.nrows();
    let mut v = Array2::<f64>::eye(n);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[[i, j]].powi(2))
            .sum();
        let scale: f64 = a.iter().map(|x| x * x).sum();
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[[p, q]].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * a[[p, q]]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[[k, p]], a[[k, q]]);
                    a[[k, p]] = c * akp - s * akq;
                    a[[k, q]] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[[p, k]], a[[q, k]]);
                    a[[p, k]] = c * apk - s * aqk;
                    a[[q, k]] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[[k, p]], v[[k, q]]);
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[[i, i]]).collect(), v)
}

fn c3_pca() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst_val: f64 = 0.0;
    let mut worst_vec: f64 = 0.0;
    let mut variance_ok = true;
    for _ in 0..20 {
        let d = rng.random_range(2..=64);
        let m = rng.random_range(d + 1..=200.max(d + 1));
        // Decaying column scales give a spread spectrum.
        let scales: Vec<f64> = (0..d).map(|j| 3.0 * 0.85f64.powi(j as i32) + 0.01).collect();
        let x = Array2::from_shape_fn((m, d), |(_, j)| rng.random_range(-1.0..1.0) * scales[j] + 0.3 * j as f64);
        let model = fit_pca(x.view(), 0.95).unwrap();

        let mean = x.mean_axis(ndarray::Axis(0)).unwrap();
        let xc = &x - &mean;
        let cov = xc.t().dot(&xc) / (m as f64 - 1.0);
        let (vals, vecs) = jacobi_eigen(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]));
        let total: f64 = vals.iter().map(|v| v.max(0.0)).sum();

        let k = model.dim();
        let cum: f64 = order[..k].iter().map(|&i| vals[i]).sum::<f64>() / total;
        let cum_before: f64 = order[..k - 1].iter().map(|&i| vals[i]).sum::<f64>() / total;
        variance_ok &= cum >= 0.95 && cum_before < 0.95 && model.explained_variance_ratio().sum() >= 0.95;
        for (r, &i) in order[..k].iter().enumerate() {
            worst_val = worst_val.max((model.explained_variance()[r] - vals[i]).abs());
            let ours = model.components().row(r);
            let theirs = vecs.column(i);
            let sign = if ours.dot(&theirs) < 0.0 { -1.0 } else { 1.0 };
            for j in 0..d {
                worst_vec = worst_vec.max((ours[j] - sign * theirs[j]).abs());
            }
        }
    }
    outcome(
        worst_val <= 1e-8 && worst_vec <= 1e-8 && variance_ok,
        format!(
            "20 matrices, eigenvalue diff {worst_val:.2e}, component diff {worst_vec:.2e}, 95% rule {}",
            if variance_ok { "held" } else { "VIOLATED" }
        ),
    )
}

fn gradcheck_arch(arch: Architecture, rng: &mut ChaCha8Rng) -> (usize, usize, usize, f64, bool) {
    let dims = ModelDims { d: 2, t1: 6, t2: 1 };
    let geometry = GridGeometry {
        n_rows: 2,
        n_cols: 2,
        ..GridGeometry::default()
    };
    let adjacency = build_adjacency(&geometry, AdjacencyScheme::Rook4);
    let n = 4;
    let mut model = Forecaster::new(arch, Hyperparameters { hidden: 4, kernel_size: 3 }, dims, 17).unwrap();
    model.norm.mean = vec![3.0, 2.5];
    model.norm.std = vec![2.0, 1.5];
    let slots = aux_slots(Variant::CityNode, true, &[1]);
    let (dc_city, dc_node) = (3, 2);
    let stacks: Vec<ProjectionStack> = [dc_city, dc_node]
        .iter()
        .map(|&dc| {
            let mut s = ProjectionStack::init(dims.t1, dims.d, dc, Activation::Tanh, rng);
            for b in &mut s.biases {
                b.mapv_inplace(|_| rng.random_range(-0.5..0.5));
            }
            s
        })
        .collect();
    let t0: DateTime<Utc> = Utc.with_ymd_and_hms(2023, 6, 1, 6, 0, 0).unwrap();
    let samples: Vec<PreparedSample> = (0..3)
        .map(|b| PreparedSample {
            x: Array3::from_shape_fn((n, dims.d, dims.t1), |_| rng.random_range(0.0..8.0)),
            y: Array3::from_shape_fn((n, dims.d, dims.t2), |_| rng.random_range(0.0..8.0)),
            anchor: t0 + chrono::Duration::hours(b),
            context: SampleContext {
                city: Some(Array1::from_shape_fn(dc_city, |_| rng.random_range(-1.0..1.0))),
                node: vec![Array1::from_shape_fn(dc_node, |_| rng.random_range(-1.0..1.0))],
            },
        })
        .collect();
    let refs: Vec<&PreparedSample> = samples.iter().collect();
    let batch = Batch::new(&model, &slots, &refs).unwrap();
    let links: Vec<AuxLink> = slots.iter().map(|s| s.link).collect();
    let a_hat = normalized_adjacency(augment_adjacency_links(adjacency.view(), &links).unwrap().view()).unwrap();
    let flat = flat_params(&model, &stacks);
    let (_, grads) = batch_loss_grad(&model, &stacks, &flat, &batch, &a_hat, LossKind::Mae);
    let shapes: Vec<(usize, usize)> = flat.iter().map(|p| p.dim()).collect();
    let picks = sample_entries(&shapes, 4, rng);
    let entries = check(&flat, &grads, &picks, 1e-6, |p| {
        batch_loss(&model, &stacks, p, &batch, &a_hat, LossKind::Mae)
    });
    let n_model = model.params.len();
    let covered: BTreeSet<usize> = entries.iter().map(|e| e.tensor).collect();
    let all_tensors = covered.len() == flat.len();
    let stack_entries = entries.iter().filter(|e| e.tensor >= n_model).count();
    let worst = entries.iter().map(|e| e.relative_error()).fold(0.0, f64::max);
    (entries.len(), stack_entries, covered.len(), worst, all_tensors)
}

fn c4_gradcheck() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut pass = true;
    let mut parts = Vec::new();
    for arch in [Architecture::Gcrnn, Architecture::Stconv] {
        let (count, stack_entries, tensors, worst, all) = gradcheck_arch(arch, &mut rng);
        pass &= count >= 50 && stack_entries >= 5 && all && worst <= 1e-4;
        parts.push(format!(
            "{arch}: {count} params over {tensors} tensors, {stack_entries} projection entries, max rel err {worst:.2e}"
        ));
    }
    outcome(pass, parts.join("; "))
}

const EARTH_RADIUS_M: f64 = 6_371_008.8;

fn c5_ingestion() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let grid = GridGeometry {
        origin_lat: 40.70,
        origin_lng: -74.00,
        cell_size_m: 500.0,
        n_rows: 5,
        n_cols: 6,
    };
    let start = Utc.with_ymd_and_hms(2023, 6, 1, 0, 0, 0).unwrap();
    let hours = 72usize;
    let period = Period::new(start, start + chrono::Duration::hours(hours as i64)).unwrap();
    let to_latlng = |x: f64, y: f64| {
        let lat = grid.origin_lat + (y / EARTH_RADIUS_M).to_degrees();
        let lng = grid.origin_lng + (x / (EARTH_RADIUS_M * grid.origin_lat.to_radians().cos())).to_degrees();
        (lat, lng)
    };
    // Each leg is drawn inside a known cell (away from its edges) or outside
    // the grid, so the expected cell is known without projecting back.
    let draw_leg = |rng: &mut ChaCha8Rng| -> (Option<usize>, f64, f64) {
        if rng.random_bool(0.1) {
            let (x, y) = (rng.random_range(-2000.0..-10.0), rng.random_range(0.0..2500.0));
            let (lat, lng) = to_latlng(x, y);
            return (None, lat, lng);
        }
        let (r, c) = (rng.random_range(0..grid.n_rows), rng.random_range(0..grid.n_cols));
        let x = (c as f64 + rng.random_range(0.02..0.98)) * grid.cell_size_m;
        let y = (r as f64 + rng.random_range(0.02..0.98)) * grid.cell_size_m;
        let (lat, lng) = to_latlng(x, y);
        (Some(r * grid.n_cols + c), lat, lng)
    };
    let mut trips: Vec<TripInput> = Vec::new();
    let mut expected = Array3::<f64>::zeros((grid.n_cells(), 2, hours));
    let (mut kept, mut unparseable) = (0usize, 0usize);
    for _ in 0..1000 {
        if rng.random_bool(0.02) {
            trips.push(Err("garbled row".into()));
            unparseable += 1;
            continue;
        }
        let t_start = start + chrono::Duration::seconds(rng.random_range(-6 * 3600..(hours as i64 + 6) * 3600));
        let t_end = t_start + chrono::Duration::seconds(rng.random_range(0..5400));
        let (g0, lat0, lng0) = draw_leg(&mut rng);
        let (g1, lat1, lng1) = draw_leg(&mut rng);
        let mut counted = false;
        for (f, g, t) in [(0, g0, t_start), (1, g1, t_end)] {
            let secs = (t - start).num_seconds();
            if let Some(g) = g {
                if secs >= 0 && secs < hours as i64 * 3600 {
                    expected[[g, f, (secs / 3600) as usize]] += 1.0;
                    counted = true;
                }
            }
        }
        kept += counted as usize;
        trips.push(Ok(TripRecord {
            started_at: t_start,
            ended_at: t_end,
            start_lat: lat0,
            start_lng: lng0,
            end_lat: lat1,
            end_lng: lng1,
        }));
    }
    let (series, report) = aggregate_flows(trips.clone(), &grid, period).unwrap();
    let (par, par_report) = aggregate_flows_parallel(&trips, &grid, period).unwrap();
    let v = series.values();
    let exact = *v == expected;
    let conserved = v.index_axis(ndarray::Axis(1), 0).sum() == report.pickups as f64
        && v.index_axis(ndarray::Axis(1), 1).sum() == report.dropoffs as f64
        && report.kept == kept
        && report.unparseable == unparseable
        && report.total == 1000;
    let parallel_same = par.values() == v && par_report == report;
    outcome(
        exact && conserved && parallel_same,
        format!(
            "1000 trips, kept {}, tensor {}, conservation {}, sharded {}",
            report.kept,
            if exact { "exact" } else { "DIFFERS" },
            if conserved { "held" } else { "VIOLATED" },
            if parallel_same { "identical" } else { "DIFFERS" }
        ),
    )
}

fn c6_metrics() -> Outcome {
    // Three nodes, two features, one horizon; absolute errors 2,0 / 2,0 / 0,2.
    let truth = Array3::from_elem((3, 2, 1), 1.0);
    let pred = Array3::from_shape_vec((3, 2, 1), vec![3.0, 1.0, -1.0, 1.0, 1.0, 3.0]).unwrap();
    let mut fixed = mae(truth.view(), pred.view(), None).unwrap() == 1.0 && rmse(truth.view(), pred.view(), None).unwrap() == 2f64.sqrt();
    fixed &=
        mae(truth.view(), pred.view(), Some(&[2])).unwrap() == 1.0 && rmse(truth.view(), pred.view(), Some(&[2])).unwrap() == 2f64.sqrt();
    fixed &= mae(truth.view(), truth.view(), None).unwrap() == 0.0 && rmse(truth.view(), truth.view(), None).unwrap() == 0.0;

    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let (n, d, t) = (rng.random_range(1..=12), rng.random_range(1..=3), rng.random_range(1..=4));
        let a = Array3::from_shape_fn((n, d, t), |_| rng.random_range(-10.0..10.0));
        let b = Array3::from_shape_fn((n, d, t), |_| rng.random_range(-10.0..10.0));
        let mask: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.5)).collect();
        let mask = if mask.is_empty() { vec![0] } else { mask };
        for sel in [None, Some(mask.as_slice())] {
            let nodes: Vec<usize> = sel.map_or((0..n).collect(), |m| m.to_vec());
            let (mut s1, mut s2, mut cnt) = (0.0f64, 0.0f64, 0.0f64);
            for &g in &nodes {
                for f in 0..d {
                    for h in 0..t {
                        let e: f64 = a[[g, f, h]] - b[[g, f, h]];
                        s1 += e.abs();
                        s2 += e * e;
                        cnt += 1.0;
                    }
                }
            }
            worst = worst.max((mae(a.view(), b.view(), sel).unwrap() - s1 / cnt).abs());
            worst = worst.max((rmse(a.view(), b.view(), sel).unwrap() - (s2 / cnt).sqrt()).abs());
        }
    }
    outcome(
        fixed && worst <= 1e-12,
        format!("fixtures {}, random max |diff| {worst:.2e}", if fixed { "exact" } else { "WRONG" }),
    )
}

fn c7_directional() -> Outcome {
    let start = Instant::now();
    let mut wins = 0;
    let mut worst_ratio: f64 = 0.0;
    let mut lines = Vec::new();
    for seed in 0..5u64 {
        let cfg = ExperimentConfig::synthetic_benchmark(seed);
        let ds = Dataset::from_synth(synth_generate(cfg.synth.as_ref().unwrap()).unwrap());
        let embedder = make_embedder(&cfg.embedding).unwrap();
        let c = run_comparison(&cfg, &ds, &embedder).unwrap();
        let row = |v: &str| c.report.rows.iter().find(|r| r.variant == v).unwrap().clone();
        let (orig, node) = (row("original"), row("node"));
        let (eo, en) = (orig.mae_event_days.unwrap(), node.mae_event_days.unwrap());
        let ratio = node.mae_non_event_days.unwrap() / orig.mae_non_event_days.unwrap();
        wins += (en < eo) as usize;
        worst_ratio = worst_ratio.max(ratio);
        lines.push(format!(
            "seed {seed}: event-day grid MAE {eo:.3} -> {en:.3}, non-event ratio {ratio:.3}"
        ));
    }
    let elapsed = start.elapsed();
    for l in &lines {
        println!("      {l}");
    }
    outcome(
        wins >= 4 && worst_ratio <= 1.05 && elapsed <= Duration::from_secs(600),
        format!(
            "node beats original in {wins}/5 seeds, worst non-event ratio {worst_ratio:.3}, {:.0} s",
            elapsed.as_secs_f64()
        ),
    )
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_trafficctx")
}

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn run_cli(args: &[&str]) -> std::process::Output {
    Command::new(bin())
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn trafficctx")
}

fn c8_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let config = repo_root().join("configs/synth.toml");
    let mut csvs = Vec::new();
    let start = Instant::now();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let o = run_cli(&[
            "compare",
            "--config",
            config.to_str().unwrap(),
            "--synth",
            "--out-dir",
            out.to_str().unwrap(),
        ]);
        if !o.status.success() {
            return outcome(false, format!("compare failed: {}", String::from_utf8_lossy(&o.stderr)));
        }
        csvs.push((
            std::fs::read(out.join("report.csv")).unwrap(),
            std::fs::read(out.join("report.json")).unwrap(),
        ));
    }
    let same = csvs[0] == csvs[1];
    outcome(
        same,
        format!(
            "two compare --synth runs, report.csv and report.json {}, {:.0} s",
            if same { "byte-identical" } else { "DIFFER" },
            start.elapsed().as_secs_f64()
        ),
    )
}

/// `None` when the external trip file is not configured.
fn c9_real_data() -> Option<Outcome> {
    let trips = std::env::var_os("TRAFFICCTX_TRIPS_CSV")?;
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap().to_string();
    let o = run_cli(&["ingest", "--trips", trips.to_str().unwrap(), "--out-dir", &out]);
    if !o.status.success() {
        return Some(outcome(false, format!("ingest failed: {}", String::from_utf8_lossy(&o.stderr))));
    }
    let (series, _) = FlowSeries::read_dir(&dir.path().join("flows")).unwrap();
    let days = series.n_hours() / 24;
    if days < 14 {
        return Some(outcome(false, format!("trip file covers {days} days, need at least 14")));
    }
    let totals = series.values().sum_axis(ndarray::Axis(2)).sum_axis(ndarray::Axis(1));
    let busiest = (0..totals.len()).max_by(|&a, &b| totals[a].total_cmp(&totals[b])).unwrap();
    let config = dir.path().join("smoke.toml");
    std::fs::write(
        &config,
        format!(
            "designated_grid = {busiest}\n[data]\nflows_dir = {flows:?}\n[split]\ntrain_days = {train}\nval_days = 2\ntest_days = 2\n\
             [model]\narchitectures = [\"persistence\", \"gcrnn\"]\nhidden = 16\n[optimizer]\nmax_epochs = 3\n",
            flows = dir.path().join("flows"),
            train = days - 4
        ),
    )
    .unwrap();
    for cmd in ["embed", "reduce", "compare"] {
        let o = run_cli(&[cmd, "--config", config.to_str().unwrap(), "--backend", "offline", "--out-dir", &out]);
        if !o.status.success() {
            return Some(outcome(false, format!("{cmd} failed: {}", String::from_utf8_lossy(&o.stderr))));
        }
    }
    let rows = rows_from_csv(&std::fs::read_to_string(dir.path().join("report.csv")).unwrap()).unwrap();
    let finite = rows.len() == 8
        && rows
            .iter()
            .all(|r| [r.mae_all, r.rmse_all, r.mae_grid, r.rmse_grid].iter().all(|v| v.is_finite()));
    Some(outcome(
        finite,
        format!(
            "{days} days ingested, {} report rows, metrics {}",
            rows.len(),
            if finite { "finite" } else { "NOT FINITE" }
        ),
    ))
}

fn main() {
    type Criterion = (u32, &'static str, Duration, fn() -> Outcome);
    let criteria: [Criterion; 8] = [
        (1, "graph augmentation", Duration::from_secs(10), c1_graph_augmentation),
        (2, "context projection", Duration::from_secs(10), c2_projection),
        (3, "PCA oracle", Duration::from_secs(30), c3_pca),
        (4, "gradient check", Duration::from_secs(120), c4_gradcheck),
        (5, "ingestion oracle", Duration::from_secs(5), c5_ingestion),
        (6, "metric oracle", Duration::from_secs(5), c6_metrics),
        (7, "directional synthetic experiment", Duration::from_secs(600), c7_directional),
        (8, "determinism", Duration::from_secs(1200), c8_determinism),
    ];
    let mut failed = 0;
    for (id, name, budget, f) in criteria {
        let t = Instant::now();
        let o = f();
        let elapsed = t.elapsed();
        let pass = o.pass && elapsed <= budget;
        failed += !pass as usize;
        println!(
            "[{}] {id}. {name}: {} ({:.2} s, budget {} s)",
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    }
    match c9_real_data() {
        Some(o) => {
            failed += !o.pass as usize;
            println!("[{}] 9. real-data smoke: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        }
        None => println!("[SKIP] 9. real-data smoke: TRAFFICCTX_TRIPS_CSV not set"),
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
