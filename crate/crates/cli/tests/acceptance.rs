//! Acceptance criteria, one PASS/FAIL line each. Exits nonzero when any fails.

use std::error::Error as StdError;
use std::fs;
use std::time::Instant;

use qndmt::bootstrap::{bootstrap_run, replicate_seed, resample, BootstrapConfig};
use qndmt::channels::{adjoint_apply, ideal_measurement, QndMeasurement};
use qndmt::circuits::{batch_bound, build_schedule, build_schedule_with, DeviceGraph, Target};
use qndmt::counts::CountsTable;
use qndmt::linalg::{frobenius_distance, operator_norm, CMatrix};
use qndmt::mle::{
    plan_problems, run_protocol, run_protocol_with, ChoiConstraint, ChoiProblem, EstimateSet, GstEstimate, GstProblem,
    OptimizerConfig, PovmProblem, ProtocolOptions,
};
use qndmt::optimize::Problem;
use qndmt::quantifiers::{
    choi_correlation, destructiveness, flip_probability, povm_correlation, QualityReport,
};
use qndmt::simulator::{bell_measurement, execute, random_measurement, thermal_decay, DeviceModel, NoiseParams};
use qndmt_cli::pipeline::{BARS_FILE, CHOI_AVERAGE_FILE, CORRELATIONS_FILE, FLIPS_FILE, REPORT_FILE};
use qndmt_cli::report::strip_metadata;
use qndmt_cli::{Pipeline, RunConfig, Variant};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

type Outcome = Result<(bool, String), Box<dyn StdError>>;

const FIG1E_EDGES: [(usize, usize); 6] = [(0, 1), (1, 2), (1, 3), (3, 5), (4, 5), (5, 6)];

fn simulate(model: &DeviceModel, shots: u64, seed: u64, reset: bool) -> qndmt::Result<CountsTable> {
    execute(model, &build_schedule_with(&model.graph, reset), shots, seed)
}

fn circuit_accounting() -> Outcome {
    let graph = DeviceGraph::new(7, &FIG1E_EDGES)?;
    let s = build_schedule(&graph);
    let bound = batch_bound(4);
    let pass = s.color_groups.len() == 3 && s.len() == 64 + 18 + 3 * 324 && s.len() == 1054 && bound == 1378;
    Ok((pass, format!("{} color groups, {} batches, bound {bound}", s.color_groups.len(), s.len())))
}

fn problem_accounting() -> Outcome {
    let graph = DeviceGraph::new(7, &FIG1E_EDGES)?;
    let planned = plan_problems(&graph).len();
    let model = DeviceModel::uniform(graph.clone(), NoiseParams::default(), 1)?;
    let est = run_protocol(&simulate(&model, 1000, 1, false)?, &graph, &OptimizerConfig::default())?;
    let pass = planned == 51 && est.logs.len() == 51;
    Ok((pass, format!("{planned} planned, {} solved", est.logs.len())))
}

fn analytic_constants() -> Outcome {
    let bell = bell_measurement();
    let z = ideal_measurement(2)?;
    let cp = povm_correlation(&bell.povm(), &z.povm(), &z.povm())?;
    let cc = choi_correlation(&bell, &z, &z)?;
    let (ep, ec) = ((cp - 6f64.sqrt() / 8.0).abs(), (cc - 7f64.sqrt() / 32.0).abs());
    Ok((ep <= 1e-9 && ec <= 1e-9, format!("C[Π] = {cp:.12} (err {ep:.1e}), C[Υ] = {cc:.12} (err {ec:.1e})")))
}

fn decay_arithmetic() -> Outcome {
    let expected = 1.0 - (-0.05f64).exp();
    let direct = thermal_decay(5.0, 100.0);
    let default = NoiseParams::default().effective_p_decay();
    let err = (direct - expected).abs().max((default - expected).abs());
    Ok((err <= 1e-12, format!("p_decay = {default:.15} (err {err:.1e})")))
}

fn ideal_round_trip() -> Outcome {
    let graph = DeviceGraph::new(2, &[(0, 1)])?;
    let model = DeviceModel::uniform(graph.clone(), NoiseParams::ideal(), 2)?;
    let est = run_protocol(&simulate(&model, 100_000, 2, false)?, &graph, &OptimizerConfig::default())?;
    let mut pass = true;
    let mut parts = Vec::new();
    for t in [Target::Qubit(0), Target::Qubit(1), Target::Edge(0, 1)] {
        let r = QualityReport::from_measurement(est.measurement(t).ok_or("missing target")?)?;
        pass &= r.fidelity >= 0.995 && r.qndness >= 0.995 && r.destructiveness <= 0.005;
        parts.push(format!("{t}: F {:.4} Q {:.4} D {:.4}", r.fidelity, r.qndness, r.destructiveness));
    }
    Ok((pass, parts.join("; ")))
}

fn noisy_round_trip() -> Outcome {
    let graph = DeviceGraph::new(1, &[])?;
    let model = DeviceModel::uniform(graph.clone(), NoiseParams::with_errors(0.05, 0.0, 0.02), 3)?;
    let est = run_protocol(&simulate(&model, 100_000, 3, false)?, &graph, &OptimizerConfig::default())?;
    let truth = model.detector(Target::Qubit(0), false)?;
    let got = &est.qubits[&0];
    let dist: Vec<f64> = (0..2)
        .map(|n| frobenius_distance(got.outcome(n).psd_form(), truth.outcome(n).psd_form()))
        .collect::<qndmt::Result<_>>()?;
    let flip = flip_probability(got, 1, 1, 0)?;
    let pass = dist.iter().all(|&d| d <= 0.03) && (flip - 0.05).abs() <= 0.02;
    Ok((pass, format!("block distances {:.4} {:.4}, p_1(1→0) = {flip:.4}", dist[0], dist[1])))
}

/// Reconstructed Choi correlation of one edge and its bootstrap deviation.
fn edge_correlation(strength: f64, seed: u64) -> Result<(f64, f64, f64), Box<dyn StdError>> {
    let graph = DeviceGraph::new(2, &[(0, 1)])?;
    let noise = NoiseParams { crosstalk_strength: strength, ..NoiseParams::default() };
    let model = DeviceModel::uniform(graph.clone(), noise, seed)?;
    let truth = choi_correlation(
        &model.detector(Target::Edge(0, 1), false)?,
        &model.detector(Target::Qubit(0), false)?,
        &model.detector(Target::Qubit(1), false)?,
    )?;
    let counts = simulate(&model, 100_000, seed, false)?;
    let opts = ProtocolOptions::default();
    let est = run_protocol_with(&counts, &graph, &opts)?;
    let cfg = BootstrapConfig { n_resamples: 200, seed, rerun_gst: false };
    let boot = bootstrap_run(&counts, &graph, &est, &opts, &cfg)?;
    let c = boot.quantities["e0-1/choi_correlation"].point;
    let sd = boot.sd(Target::Edge(0, 1), "choi_correlation").ok_or("no deviation")?;
    Ok((truth, c, sd))
}

fn crosstalk_detection() -> Outcome {
    let (truth, c, sd) = edge_correlation(0.115, 4)?;
    let (_, c0, sd0) = edge_correlation(0.0, 5)?;
    let pass = (truth - 5e-3).abs() <= 1e-3 && c > sd && c0 < 2.0 * sd0;
    Ok((
        pass,
        format!("truth {truth:.2e}: C = {c:.2e} vs σ = {sd:.2e}; control C = {c0:.2e} vs 2σ = {:.2e}", 2.0 * sd0),
    ))
}

/// Element-wise bootstrap deviation of the reconstructed qubit POVM.
fn povm_deviation(counts: &CountsTable, graph: &DeviceGraph, point: &EstimateSet, n: usize) -> qndmt::Result<Vec<f64>> {
    let opts = ProtocolOptions { warm_start: Some(point.clone()), ..Default::default() };
    let samples: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let est = run_protocol_with(&resample(counts, replicate_seed(17, i)), graph, &opts)?;
            Ok(povm_entries(&est.qubits[&0]))
        })
        .collect::<qndmt::Result<_>>()?;
    let k = samples[0].len();
    Ok((0..k)
        .map(|j| {
            let mean = samples.iter().map(|s| s[j]).sum::<f64>() / n as f64;
            (samples.iter().map(|s| (s[j] - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        })
        .collect())
}

fn povm_entries(m: &QndMeasurement) -> Vec<f64> {
    m.povm().elements().iter().flat_map(|e| e.as_slice().iter().flat_map(|z| [z.re, z.im]).collect::<Vec<_>>()).collect()
}

fn measure_and_reset() -> Outcome {
    let graph = DeviceGraph::new(1, &[])?;
    let mut pass = true;
    let mut parts = Vec::new();
    for (i, noise) in [NoiseParams::with_errors(0.05, 0.0, 0.02), NoiseParams::with_errors(0.08, 0.02, 0.04)].into_iter().enumerate() {
        let mut model = DeviceModel::uniform(graph.clone(), noise, 6)?;
        model.reset_fidelity = 1.0;
        let seed = 60 + 2 * i as u64;
        let direct_counts = simulate(&model, 100_000, seed, false)?;
        let reset_counts = simulate(&model, 100_000, seed + 1, true)?;
        let direct = run_protocol(&direct_counts, &graph, &OptimizerConfig::default())?;
        let reset = run_protocol(&reset_counts, &graph, &OptimizerConfig::default())?;
        let sd_d = povm_deviation(&direct_counts, &graph, &direct, 40)?;
        let sd_r = povm_deviation(&reset_counts, &graph, &reset, 40)?;
        let (a, b) = (povm_entries(&direct.qubits[&0]), povm_entries(&reset.qubits[&0]));
        let z = (0..a.len())
            .filter(|&j| sd_d[j] + sd_r[j] > 0.0)
            .map(|j| (a[j] - b[j]).abs() / (sd_d[j].powi(2) + sd_r[j].powi(2)).sqrt())
            .fold(0.0f64, f64::max);
        let f = QualityReport::from_measurement(&direct.qubits[&0])?.fidelity;
        let q = QualityReport::from_measurement(&reset.qubits[&0])?.qndness;
        pass &= z <= 3.0 && (q - f).abs() <= 0.01;
        parts.push(format!("channel {i}: max POVM z = {z:.2}, F_direct {f:.4}, Q_reset {q:.4}"));
    }
    Ok((pass, parts.join("; ")))
}

fn grid_destructiveness(m: &QndMeasurement, per_axis: usize) -> qndmt::Result<f64> {
    let d = m.dim();
    let axis: Vec<f64> = (0..per_axis).map(|i| -1.0 + 2.0 * i as f64 / (per_axis - 1) as f64).collect();
    let mut best = 0.0f64;
    for idx in 0..per_axis.pow(d as u32) {
        let v: Vec<f64> = (0..d).map(|k| axis[(idx / per_axis.pow(k as u32)) % per_axis]).collect();
        let o = CMatrix::diag_real(&v);
        best = best.max(0.5 * operator_norm(&(&o - &adjoint_apply(m, &o)?))?);
    }
    Ok(best)
}

fn destructiveness_exactness() -> Outcome {
    let mut rng = StdRng::seed_from_u64(9);
    let mut worst = 0.0f64;
    for i in 0..20 {
        let (dim, per_axis) = if i < 10 { (2, 100) } else { (4, 10) };
        let m = random_measurement(&mut rng, dim)?;
        worst = worst.max((destructiveness(&m) - grid_destructiveness(&m, per_axis)?).abs());
    }
    Ok((worst <= 1e-6, format!("largest difference {worst:.2e} over 20 channels")))
}

fn bootstrap_scaling() -> Outcome {
    let graph = DeviceGraph::new(1, &[])?;
    let model = DeviceModel::uniform(graph.clone(), NoiseParams::with_errors(0.05, 0.0, 0.02), 10)?;
    let mut sds: Vec<Vec<f64>> = Vec::new();
    for shots in [2_500, 10_000, 40_000] {
        let counts = simulate(&model, shots, 10, false)?;
        let opts = ProtocolOptions::default();
        let est = run_protocol_with(&counts, &graph, &opts)?;
        let cfg = BootstrapConfig { n_resamples: 100, seed: 10, rerun_gst: true };
        let b = bootstrap_run(&counts, &graph, &est, &opts, &cfg)?;
        let t = Target::Qubit(0);
        let mut v: Vec<f64> = ["fidelity", "qndness", "destructiveness"]
            .iter()
            .map(|n| b.sd(t, n).ok_or("missing quantity"))
            .collect::<Result<_, _>>()?;
        for n in 0..2 {
            v.push(b.choi_deviation(t, n).ok_or("missing Choi deviation")?.as_matrix().frobenius_norm());
        }
        sds.push(v);
    }
    let names = ["F", "Q", "D", "Υ_0", "Υ_1"];
    let mut pass = true;
    let mut parts = Vec::new();
    for (k, name) in names.iter().enumerate() {
        let r1 = sds[0][k] / sds[1][k];
        let r2 = sds[1][k] / sds[2][k];
        pass &= (1.0..=4.0).contains(&r1) && (1.0..=4.0).contains(&r2);
        parts.push(format!("{name} {r1:.2}/{r2:.2}"));
    }
    Ok((pass, format!("sd ratios per 4x shots: {}", parts.join(", "))))
}

fn numeric_gradient(p: &dyn Problem, x: &[f64]) -> Vec<f64> {
    let mut scratch = vec![0.0; x.len()];
    let mut y = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = 1e-6 * (1.0 + x[i].abs());
            y[i] = x[i] + h;
            let up = p.value_grad(&y, &mut scratch);
            y[i] = x[i] - h;
            let down = p.value_grad(&y, &mut scratch);
            y[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn relative_gradient_error(p: &dyn Problem, x: &[f64]) -> f64 {
    let mut g = vec![0.0; x.len()];
    p.value_grad(x, &mut g);
    let num = numeric_gradient(p, x);
    let err = g.iter().zip(&num).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    err / num.iter().map(|b| b * b).sum::<f64>().sqrt()
}

fn gradient_check() -> Outcome {
    let graph = DeviceGraph::new(2, &[(0, 1)])?;
    let model = DeviceModel::uniform(graph.clone(), NoiseParams::with_errors(0.03, 0.01, 0.02), 11)?;
    let counts = simulate(&model, 8192, 11, false)?;
    let est = run_protocol(&counts, &graph, &OptimizerConfig::default())?;
    let gst = GstProblem::from_counts(&counts, 0)?;
    let gsts = [&est.gst[&0], &est.gst[&1]];
    let block = counts.block_data(Target::Edge(0, 1))?;
    let povm = PovmProblem::from_block(&block, &gsts)?;
    let choi = ChoiProblem::from_block(&block, &gsts, &est.edge_povms[&(0, 1)], 1, ChoiConstraint::Elimination)?;

    let mut rng = StdRng::seed_from_u64(12);
    let mut worst = [0.0f64; 3];
    for _ in 0..10 {
        let mut jitter = |x: Vec<f64>| -> Vec<f64> { x.into_iter().map(|v| v + rng.random_range(-0.1..0.1)).collect() };
        let xg = jitter(GstProblem::initial_point(&GstEstimate::ideal()));
        let xp = jitter(povm.initial_point(&est.edge_povms[&(0, 1)]));
        let xc = jitter(choi.initial_point(None));
        worst[0] = worst[0].max(relative_gradient_error(&gst, &xg));
        worst[1] = worst[1].max(relative_gradient_error(&povm, &xp));
        worst[2] = worst[2].max(relative_gradient_error(&choi, &xc));
    }
    Ok((
        worst.iter().all(|&e| e <= 1e-5),
        format!("worst relative error GST {:.1e}, POVM {:.1e}, Choi {:.1e}", worst[0], worst[1], worst[2]),
    ))
}

fn determinism() -> Outcome {
    let root = tempfile::tempdir()?;
    let mut bodies = Vec::new();
    for (name, jobs) in [("first", 1), ("second", 4)] {
        let mut cfg = RunConfig::default();
        cfg.run.shots = 4000;
        cfg.run.bootstrap = 20;
        cfg.run.seed = 13;
        cfg.run.jobs = jobs;
        cfg.output.directory = root.path().join(name);
        let p = Pipeline::new(cfg)?;
        p.all()?;
        let dir = p.dir(Variant::Direct);
        let mut files = vec![strip_metadata(&fs::read_to_string(dir.join(REPORT_FILE))?).to_string()];
        for f in [BARS_FILE, FLIPS_FILE, CORRELATIONS_FILE, CHOI_AVERAGE_FILE] {
            files.push(fs::read_to_string(dir.join(f))?);
        }
        bodies.push(files);
    }
    let same = bodies[0] == bodies[1];
    Ok((same, format!("report and {} CSVs {}", bodies[0].len() - 1, if same { "identical" } else { "differ" })))
}

fn main() {
    let criteria: [(&str, f64, fn() -> Outcome); 12] = [
        ("circuit accounting", 1.0, circuit_accounting),
        ("problem accounting", 60.0, problem_accounting),
        ("analytic constants", 1.0, analytic_constants),
        ("decay arithmetic", 1.0, decay_arithmetic),
        ("ideal round trip", 300.0, ideal_round_trip),
        ("noisy round trip", 300.0, noisy_round_trip),
        ("cross-talk detection", 1200.0, crosstalk_detection),
        ("measurement and reset", 300.0, measure_and_reset),
        ("destructiveness exactness", 60.0, destructiveness_exactness),
        ("bootstrap scaling", 600.0, bootstrap_scaling),
        ("gradient check", 60.0, gradient_check),
        ("determinism", 600.0, determinism),
    ];
    let mut failed = 0;
    for (i, (name, budget, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = run();
        let secs = start.elapsed().as_secs_f64();
        let (pass, detail) = match result {
            Ok((pass, detail)) => (pass && secs <= *budget, detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failed += 1;
        }
        println!("{} {:>2} {name}: {detail} ({secs:.2} s of {budget} s)", if pass { "PASS" } else { "FAIL" }, i + 1);
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
