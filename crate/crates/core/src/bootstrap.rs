//! Nonparametric bootstrap: resample every circuit's counts from its
//! empirical frequencies and repeat the reconstruction.

use std::collections::BTreeMap;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channels::outcome_label;
use crate::circuits::{DeviceGraph, Target};
use crate::counts::{keyed_rng, sample_multinomial, CountsTable};
use crate::error::{Error, Result};
use crate::linalg::CMatrix;
use crate::mle::{run_protocol_with, EstimateSet, ProtocolOptions};
use crate::quantifiers::{
    assess, choi_differences, povm_differences, quantity_id, CHOI_CORRELATION_SCALE, POVM_CORRELATION_SCALE,
};

pub const DEFAULT_RESAMPLES: usize = 1000;
/// Fraction of failed replicates above which a result is flagged.
pub const FAILURE_FRACTION: f64 = 0.01;
const KEPT_FAILURE_MESSAGES: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapConfig {
    pub n_resamples: usize,
    pub seed: u64,
    /// Re-run GST on every replicate instead of reusing the point estimate's
    /// gate sets.
    pub rerun_gst: bool,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self { n_resamples: DEFAULT_RESAMPLES, seed: 0, rerun_gst: false }
    }
}

/// Seed of replicate `index`, independent across indices.
pub fn replicate_seed(master: u64, index: usize) -> u64 {
    let mut rng = ChaCha20Rng::seed_from_u64(master);
    rng.set_stream(index as u64);
    rng.next_u64()
}

/// Redraws each circuit's total from its observed frequencies.
pub fn resample(counts: &CountsTable, seed: u64) -> CountsTable {
    counts.map_counts(|key, oc| {
        let total = oc.total();
        if total == 0 {
            return oc.counts.clone();
        }
        let probs: Vec<f64> = oc.counts.iter().map(|&c| c as f64 / total as f64).collect();
        let mut rng = keyed_rng(seed, key.batch, key.target);
        sample_multinomial(&mut rng, total, &probs)
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantityStats {
    pub point: f64,
    pub mean: f64,
    /// Reported deviation. For correlations this is the norm of the
    /// element-wise deviations of the difference blocks, see
    /// [`BootstrapResult`].
    pub sd: f64,
    /// Plain standard deviation of the replicate values.
    pub replicate_sd: f64,
}

/// Element-wise deviation of one Choi block, row-major in PSD ordering; each
/// entry is `(Var Re + Var Im)^{1/2}` over the replicates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChoiDeviation {
    pub target: Target,
    pub outcome: String,
    pub dim: usize,
    pub sd: Vec<f64>,
}

impl ChoiDeviation {
    pub fn as_matrix(&self) -> CMatrix {
        let n = self.dim * self.dim;
        CMatrix::from_fn(n, n, |r, c| self.sd[r * n + c].into())
    }
}

/// Bootstrap deviations of every quantifier and Choi coefficient.
///
/// A correlation is a norm of difference blocks and is biased upward by
/// noise, so the spread of its replicate values understates how far it sits
/// from zero by chance. Its reported `sd` is instead the same scaled norm
/// applied to the element-wise deviations of the difference blocks, i.e. the
/// correlation that pure statistical noise of the observed size would show.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub n_resamples: usize,
    pub n_failed: usize,
    pub failures_flagged: bool,
    pub rerun_gst: bool,
    pub failure_messages: Vec<String>,
    pub quantities: BTreeMap<String, QuantityStats>,
    pub choi_sd: Vec<ChoiDeviation>,
}

impl BootstrapResult {
    pub fn sd(&self, target: Target, name: &str) -> Option<f64> {
        self.quantities.get(&quantity_id(target, name)).map(|q| q.sd)
    }

    pub fn choi_deviation(&self, target: Target, outcome: usize) -> Option<&ChoiDeviation> {
        let label = outcome_label(outcome, target_bits(target));
        self.choi_sd.iter().find(|c| c.target == target && c.outcome == label)
    }
}

fn target_bits(t: Target) -> usize {
    match t {
        Target::Qubit(_) => 1,
        Target::Edge(..) => 2,
    }
}

/// What one reconstruction contributes to the statistics.
struct Summary {
    values: BTreeMap<String, f64>,
    blocks: Vec<CMatrix>,
    povm_diffs: Vec<Vec<CMatrix>>,
    choi_diffs: Vec<Vec<CMatrix>>,
}

fn summarize(est: &EstimateSet) -> Result<Summary> {
    let mut values = BTreeMap::new();
    for q in assess(est)? {
        for (name, v) in q.values() {
            values.insert(quantity_id(q.target, &name), v);
        }
    }
    let blocks = est
        .qubits
        .values()
        .chain(est.edges.values())
        .flat_map(|m| m.outcomes().iter().map(|c| c.psd_form().clone()))
        .collect();
    let mut povm_diffs = Vec::new();
    let mut choi_diffs = Vec::new();
    for (&(a, b), m) in &est.edges {
        let (ma, mb) = (&est.qubits[&a], &est.qubits[&b]);
        let joint = est.edge_povms.get(&(a, b)).cloned().unwrap_or_else(|| m.povm());
        povm_diffs.push(povm_differences(&joint, &ma.povm(), &mb.povm())?);
        choi_diffs.push(choi_differences(m, ma, mb)?);
    }
    Ok(Summary { values, blocks, povm_diffs, choi_diffs })
}

/// `(Var Re + Var Im)^{1/2}` of each entry across the samples.
fn elementwise_sd(samples: &[&CMatrix]) -> CMatrix {
    let n = samples.len() as f64;
    let (r, c) = (samples[0].rows(), samples[0].cols());
    let mut mean = CMatrix::zeros(r, c);
    for s in samples {
        mean.add_scaled(s, 1.0 / n);
    }
    let mut var = vec![0.0; r * c];
    for s in samples {
        for (v, (x, m)) in var.iter_mut().zip(s.as_slice().iter().zip(mean.as_slice())) {
            *v += (x - m).norm_sqr();
        }
    }
    CMatrix::from_vec(r, c, var.into_iter().map(|v| (v / (n - 1.0)).sqrt().into()).collect())
        .expect("shape preserved")
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Re-runs the reconstruction on `cfg.n_resamples` resampled tables, warm
/// started from `point`. Failed replicates are skipped and counted.
pub fn bootstrap_run(
    counts: &CountsTable,
    graph: &DeviceGraph,
    point: &EstimateSet,
    protocol: &ProtocolOptions,
    cfg: &BootstrapConfig,
) -> Result<BootstrapResult> {
    if cfg.n_resamples < 2 {
        return Err(Error::InvalidParameter(format!("bootstrap needs at least 2 resamples, got {}", cfg.n_resamples)));
    }
    let reference = summarize(point)?;
    let mut opts = protocol.clone();
    opts.warm_start = Some(point.clone());
    if !cfg.rerun_gst {
        opts.fixed_gst = Some(point.gst.clone());
    }
    let runs: Vec<Result<Summary>> = (0..cfg.n_resamples)
        .into_par_iter()
        .map(|r| {
            let table = resample(counts, replicate_seed(cfg.seed, r));
            run_protocol_with(&table, graph, &opts).and_then(|est| summarize(&est))
        })
        .collect();
    let mut ok = Vec::with_capacity(runs.len());
    let mut failure_messages = Vec::new();
    let mut n_failed = 0;
    for (r, run) in runs.into_iter().enumerate() {
        match run {
            Ok(s) => ok.push(s),
            Err(e) => {
                n_failed += 1;
                if failure_messages.len() < KEPT_FAILURE_MESSAGES {
                    failure_messages.push(format!("replicate {r}: {e}"));
                }
            }
        }
    }
    if ok.len() < 2 {
        return Err(Error::NotConverged(format!(
            "only {} of {} bootstrap replicates succeeded",
            ok.len(),
            cfg.n_resamples
        )));
    }

    let mut quantities = BTreeMap::new();
    for (id, &point_value) in &reference.values {
        let xs: Vec<f64> = ok.iter().filter_map(|s| s.values.get(id).copied()).collect();
        let (mean, replicate_sd) = mean_sd(&xs);
        quantities.insert(id.clone(), QuantityStats { point: point_value, mean, sd: replicate_sd, replicate_sd });
    }
    let edges: Vec<(usize, usize)> = point.edges.keys().copied().collect();
    for (k, &(a, b)) in edges.iter().enumerate() {
        let target = Target::Edge(a, b);
        for (name, scale, pick) in [
            ("povm_correlation", POVM_CORRELATION_SCALE, (|s: &Summary, k: usize| &s.povm_diffs[k]) as fn(&Summary, usize) -> &Vec<CMatrix>),
            ("choi_correlation", CHOI_CORRELATION_SCALE, |s: &Summary, k: usize| &s.choi_diffs[k]),
        ] {
            let n_blocks = pick(&reference, k).len();
            let floor_sq: f64 = (0..n_blocks)
                .map(|nm| {
                    let samples: Vec<&CMatrix> = ok.iter().map(|s| &pick(s, k)[nm]).collect();
                    elementwise_sd(&samples).frobenius_norm().powi(2)
                })
                .sum();
            if let Some(q) = quantities.get_mut(&quantity_id(target, name)) {
                q.sd = scale * floor_sq.sqrt();
            }
        }
    }

    let mut labels: Vec<(Target, usize, usize)> = Vec::new();
    for (&q, m) in &point.qubits {
        labels.extend((0..m.dim()).map(|n| (Target::Qubit(q), n, m.dim())));
    }
    for (&(a, b), m) in &point.edges {
        labels.extend((0..m.dim()).map(|n| (Target::Edge(a, b), n, m.dim())));
    }
    let choi_sd = labels
        .iter()
        .enumerate()
        .map(|(i, &(target, n, dim))| {
            let samples: Vec<&CMatrix> = ok.iter().map(|s| &s.blocks[i]).collect();
            let sd = elementwise_sd(&samples);
            ChoiDeviation {
                target,
                outcome: outcome_label(n, target_bits(target)),
                dim,
                sd: sd.as_slice().iter().map(|z| z.re).collect(),
            }
        })
        .collect();

    Ok(BootstrapResult {
        n_resamples: cfg.n_resamples,
        n_failed,
        failures_flagged: n_failed as f64 > FAILURE_FRACTION * cfg.n_resamples as f64,
        rerun_gst: cfg.rerun_gst,
        failure_messages,
        quantities,
        choi_sd,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuits::build_schedule;
    use crate::counts::{CircuitKey, OutcomeCounts};
    use crate::mle::OptimizerConfig;
    use crate::simulator::{execute, DeviceModel, NoiseParams};

    fn table(counts: Vec<Vec<u64>>) -> CountsTable {
        let shots = counts[0].iter().sum();
        let mut t = CountsTable::new(shots).unwrap();
        for (i, c) in counts.into_iter().enumerate() {
            let key = CircuitKey { batch: i, target: Target::Qubit(0), prep: "p".into(), rotation: "r".into() };
            t.insert(key, OutcomeCounts { n_first: c.len(), n_second: 1, counts: c }).unwrap();
        }
        t
    }

    #[test]
    fn concentrated_counts_are_unchanged() {
        let t = table(vec![vec![0, 500, 0], vec![500, 0, 0]]);
        assert_eq!(resample(&t, 3), t);
    }

    #[test]
    fn resampling_is_deterministic_and_preserves_totals() {
        let t = table(vec![vec![100, 200, 300], vec![10, 580, 10]]);
        let a = resample(&t, 11);
        assert_eq!(a, resample(&t, 11));
        assert_ne!(a, resample(&t, 12));
        for ((_, x), (_, y)) in a.iter().zip(t.iter()) {
            assert_eq!(x.total(), y.total());
        }
        assert_ne!(replicate_seed(5, 0), replicate_seed(5, 1));
        assert_eq!(replicate_seed(5, 1), replicate_seed(5, 1));
    }

    #[test]
    fn uniform_counts_stay_within_multinomial_bands() {
        let shots = 1_000_000u64;
        let t = table((0..20).map(|_| vec![shots / 4; 4]).collect());
        let r = resample(&t, 7);
        let p = 0.25;
        let sigma = (shots as f64 * p * (1.0 - p)).sqrt();
        let mut z_sq = 0.0;
        let mut n = 0.0;
        for (_, oc) in r.iter() {
            for &c in &oc.counts {
                let z = (c as f64 - shots as f64 * p) / sigma;
                assert!(z.abs() < 5.0, "{z}");
                z_sq += z * z;
                n += 1.0;
            }
        }
        // Cell variance is (1 − p) of the binomial one after conditioning
        // on the total, so the mean z² is 1 up to sampling noise.
        assert!((z_sq / n - 1.0).abs() < 0.5, "{}", z_sq / n);
    }

    #[test]
    fn deviation_helpers() {
        let (m, s) = mean_sd(&[1.0, 2.0, 3.0]);
        assert!((m - 2.0).abs() < 1e-15 && (s - 1.0).abs() < 1e-15);
        let a = CMatrix::from_real_rows(&[&[1.0, 0.0]]);
        let b = CMatrix::from_real_rows(&[&[3.0, 0.0]]);
        let sd = elementwise_sd(&[&a, &b]);
        assert!((sd[(0, 0)].re - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(sd[(0, 1)].re, 0.0);
    }

    #[test]
    fn smoke_run_with_two_replicates() {
        let graph = DeviceGraph::new(1, &[]).unwrap();
        let model = DeviceModel::uniform(graph.clone(), NoiseParams::with_errors(0.05, 0.0, 0.02), 1).unwrap();
        let counts = execute(&model, &build_schedule(&graph), 2000, 9).unwrap();
        let opts = ProtocolOptions { optimizer: OptimizerConfig::default(), ..Default::default() };
        let point = run_protocol_with(&counts, &graph, &opts).unwrap();
        let cfg = BootstrapConfig { n_resamples: 2, seed: 4, rerun_gst: true };
        let res = bootstrap_run(&counts, &graph, &point, &opts, &cfg).unwrap();
        assert_eq!(res.n_resamples, 2);
        assert_eq!(res.n_failed, 0);
        assert!(!res.failures_flagged);
        assert!(res.sd(Target::Qubit(0), "qndness").unwrap() > 0.0);
        assert!(res.sd(Target::Qubit(0), "fidelity").unwrap() > 0.0);
        assert!(res.quantities.values().all(|q| q.sd >= 0.0 && q.replicate_sd >= 0.0));
        let dev = res.choi_deviation(Target::Qubit(0), 1).unwrap();
        assert_eq!(dev.sd.len(), 16);
        assert!(dev.sd.iter().all(|&x| x >= 0.0) && dev.sd.iter().any(|&x| x > 0.0));
        assert!(bootstrap_run(&counts, &graph, &point, &opts, &BootstrapConfig { n_resamples: 1, ..cfg }).is_err());
    }
}
