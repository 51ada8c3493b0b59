use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use qndmt::bootstrap::{bootstrap_run, BootstrapConfig, BootstrapResult};
use qndmt::circuits::{batch_bound, build_schedule_with, CircuitKind, DeviceGraph, Schedule};
use qndmt::counts::{CountsDocument, CountsTable};
use qndmt::mle::{plan_problems, run_protocol_with, EstimateSet, EstimateSetDocument, ProblemLog};
use qndmt::quantifiers::{assess, QualityRow, TargetQuality};
use qndmt::simulator::execute;
use serde::{Deserialize, Serialize};

use crate::artifacts::*;
use crate::config::{Format, Mode, RunConfig, Variant};
use crate::error::{CliError, Result};
use crate::report::{self, NO_BOOTSTRAP_WARNING};

pub const REPORT_FILE: &str = "report.md";
pub const BARS_FILE: &str = "bars.csv";
pub const FLIPS_FILE: &str = "flips.csv";
pub const CORRELATIONS_FILE: &str = "correlations.csv";
pub const CHOI_AVERAGE_FILE: &str = "choi_average.csv";
pub const COMPARISON_MD: &str = "comparison.md";
pub const COMPARISON_CSV: &str = "comparison.csv";

/// Quantifiers of one variant, with bootstrap deviations when available.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QualityBundle {
    pub qualities: Vec<TargetQuality>,
    pub bootstrap: Option<BootstrapResult>,
}

/// Batch accounting of one generated schedule.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScheduleSummary {
    pub variant: Variant,
    pub color_groups: usize,
    pub batches: usize,
    pub gst_batches: usize,
    pub qubit_batches: usize,
    pub edge_batches: usize,
    pub bound: usize,
    pub problems: usize,
}

impl ScheduleSummary {
    pub fn of(schedule: &Schedule, graph: &DeviceGraph, variant: Variant) -> Self {
        let count = |k: CircuitKind| schedule.batches.iter().filter(|b| b.circuit.kind == k).count();
        Self {
            variant,
            color_groups: schedule.color_groups.len(),
            batches: schedule.len(),
            gst_batches: count(CircuitKind::Gst),
            qubit_batches: count(CircuitKind::Qndmt1q),
            edge_batches: count(CircuitKind::Qndmt2q),
            bound: batch_bound(4),
            problems: plan_problems(graph).len(),
        }
    }
}

fn manifest(summary: &ScheduleSummary, schedule: &Schedule) -> String {
    let g = &schedule.graph;
    let mut s = String::new();
    let _ = writeln!(s, "variant: {}", summary.variant);
    let _ = writeln!(s, "qubits: {}", g.n_qubits());
    let _ = writeln!(s, "edges: {}", g.edges().len());
    let _ = writeln!(s, "color groups: {}", summary.color_groups);
    for (i, grp) in schedule.color_groups.iter().enumerate() {
        let edges: Vec<String> = grp.iter().map(|(a, b)| format!("({a},{b})")).collect();
        let _ = writeln!(s, "  group {i}: {}", edges.join(" "));
    }
    let _ = writeln!(s, "batches: {}", summary.batches);
    let _ = writeln!(s, "  GST: {}", summary.gst_batches);
    let _ = writeln!(s, "  QNDMT-1Q: {}", summary.qubit_batches);
    let _ = writeln!(s, "  QNDMT-2Q: {}", summary.edge_batches);
    let _ = writeln!(s, "planar bound (4 groups): {}", summary.bound);
    let _ = writeln!(s, "optimization problems: {}", summary.problems);
    s
}

#[derive(Serialize)]
struct ConvergenceRow<'a> {
    problem: &'a str,
    iterations: usize,
    log_likelihood: f64,
    residual: f64,
    converged: bool,
}

impl<'a> From<&'a ProblemLog> for ConvergenceRow<'a> {
    fn from(l: &'a ProblemLog) -> Self {
        Self {
            problem: &l.problem,
            iterations: l.iterations,
            log_likelihood: l.log_likelihood,
            residual: l.residual,
            converged: l.converged,
        }
    }
}

/// Stage runner bound to one validated config.
pub struct Pipeline {
    cfg: RunConfig,
    hash: String,
    pool: rayon::ThreadPool,
}

impl Pipeline {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.run.jobs)
            .build()
            .map_err(|e| CliError::Config(format!("run.jobs: {e}")))?;
        let hash = cfg.hash();
        Ok(Self { cfg, hash, pool })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn config_hash(&self) -> &str {
        &self.hash
    }

    pub fn root(&self) -> &Path {
        &self.cfg.output.directory
    }

    pub fn dir(&self, variant: Variant) -> PathBuf {
        variant_dir(self.root(), variant)
    }

    fn variants(&self) -> Vec<Variant> {
        self.cfg.mode.variants()
    }

    pub fn generate(&self) -> Result<Vec<ScheduleSummary>> {
        let graph = self.cfg.graph()?;
        let mut out = Vec::new();
        for v in self.variants() {
            let dir = self.dir(v);
            create_dir(&dir)?;
            let schedule = build_schedule_with(&graph, v.is_reset());
            let summary = ScheduleSummary::of(&schedule, &graph, v);
            write_artifact(&dir.join(SCHEDULE_FILE), &self.hash, v, &schedule)?;
            write_text(&dir.join(MANIFEST_FILE), &manifest(&summary, &schedule))?;
            out.push(summary);
        }
        Ok(out)
    }

    pub fn simulate(&self) -> Result<()> {
        let model = self.cfg.device_model()?;
        for v in self.variants() {
            let dir = self.dir(v);
            let schedule: Schedule = read_artifact(&dir.join(SCHEDULE_FILE), &self.hash, v)?;
            let seed = self.cfg.sampling_seed(v);
            let counts = self
                .pool
                .install(|| execute(&model, &schedule, self.cfg.run.shots, seed))
                .map_err(|e| CliError::malformed(dir.join(SCHEDULE_FILE), e))?;
            for f in &self.cfg.output.formats {
                match f {
                    Format::Json => {
                        write_artifact(&dir.join(COUNTS_JSON), &self.hash, v, &CountsDocument::from(&counts))?
                    }
                    Format::Csv => write_counts_csv(&dir.join(COUNTS_CSV), &self.hash, v, &counts)?,
                }
            }
        }
        Ok(())
    }

    pub fn load_counts(&self, v: Variant) -> Result<CountsTable> {
        let dir = self.dir(v);
        if self.cfg.output.formats.contains(&Format::Json) {
            let path = dir.join(COUNTS_JSON);
            let doc: CountsDocument = read_artifact(&path, &self.hash, v)?;
            CountsTable::try_from(&doc).map_err(|e| CliError::malformed(&path, e))
        } else {
            read_counts_csv(&dir.join(COUNTS_CSV), &self.hash, v)
        }
    }

    pub fn reconstruct(&self) -> Result<Vec<(Variant, EstimateSet)>> {
        let graph = self.cfg.graph()?;
        let opts = self.cfg.protocol_options();
        let mut out = Vec::new();
        for v in self.variants() {
            let dir = self.dir(v);
            let counts = self.load_counts(v)?;
            let est = self.pool.install(|| run_protocol_with(&counts, &graph, &opts)).map_err(CliError::Solver)?;
            for l in est.logs.iter().filter(|l| !l.converged) {
                eprintln!("warning: {v}: problem {} did not converge after {} iterations", l.problem, l.iterations);
            }
            write_artifact(&dir.join(ESTIMATES_FILE), &self.hash, v, &EstimateSetDocument::from(&est))?;
            let rows: Vec<ConvergenceRow> = est.logs.iter().map(ConvergenceRow::from).collect();
            write_csv(&dir.join(CONVERGENCE_FILE), &[("config_hash", self.hash.clone())], &rows)?;
            out.push((v, est));
        }
        Ok(out)
    }

    pub fn load_estimates(&self, v: Variant) -> Result<EstimateSet> {
        let path = self.dir(v).join(ESTIMATES_FILE);
        let doc: EstimateSetDocument = read_artifact(&path, &self.hash, v)?;
        EstimateSet::try_from(&doc).map_err(|e| CliError::malformed(&path, e))
    }

    pub fn quantify(&self) -> Result<Vec<(Variant, QualityBundle)>> {
        let graph = self.cfg.graph()?;
        let mut out = Vec::new();
        for v in self.variants() {
            let dir = self.dir(v);
            let est = self.load_estimates(v)?;
            let qualities = assess(&est).map_err(CliError::Solver)?;
            let bootstrap = if self.cfg.run.bootstrap == 0 {
                None
            } else {
                let counts = self.load_counts(v)?;
                let cfg = BootstrapConfig {
                    n_resamples: self.cfg.run.bootstrap,
                    seed: self.cfg.run.seed,
                    rerun_gst: self.cfg.run.rerun_gst,
                };
                let opts = self.cfg.protocol_options();
                let b = self
                    .pool
                    .install(|| bootstrap_run(&counts, &graph, &est, &opts, &cfg))
                    .map_err(CliError::Solver)?;
                if b.failures_flagged {
                    eprintln!("warning: {v}: {} of {} bootstrap replicates failed", b.n_failed, b.n_resamples);
                }
                Some(b)
            };
            let bundle = QualityBundle { qualities, bootstrap };
            write_artifact(&dir.join(QUALITY_JSON), &self.hash, v, &bundle)?;
            let rows: Vec<QualityRow> = bundle.qualities.iter().map(QualityRow::from).collect();
            write_csv(&dir.join(QUALITY_CSV), &[("config_hash", self.hash.clone())], &rows)?;
            out.push((v, bundle));
        }
        Ok(out)
    }

    pub fn report(&self) -> Result<()> {
        let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        let header = [("config_hash", self.hash.clone())];
        let mut bars = Vec::new();
        for v in self.variants() {
            let dir = self.dir(v);
            let est = self.load_estimates(v)?;
            let bundle: QualityBundle = read_artifact(&dir.join(QUALITY_JSON), &self.hash, v)?;
            if bundle.bootstrap.is_none() {
                eprintln!("warning: {v}: {NO_BOOTSTRAP_WARNING}");
            }
            let r = report::build(v, &bundle.qualities, bundle.bootstrap.as_ref(), &est);
            write_text(&dir.join(REPORT_FILE), &report::with_metadata(&r.markdown, &self.hash, stamp))?;
            write_csv(&dir.join(BARS_FILE), &header, &r.bars)?;
            write_csv(&dir.join(FLIPS_FILE), &header, &r.flips)?;
            write_csv(&dir.join(CORRELATIONS_FILE), &header, &r.correlations)?;
            write_csv(&dir.join(CHOI_AVERAGE_FILE), &header, &r.choi_average)?;
            bars.push(r.bars);
        }
        if self.cfg.mode == Mode::Both {
            let rows = report::comparison_rows(&bars[0], &bars[1]);
            let md = report::comparison_markdown(&rows);
            write_text(&self.root().join(COMPARISON_MD), &report::with_metadata(&md, &self.hash, stamp))?;
            write_csv(&self.root().join(COMPARISON_CSV), &header, &rows)?;
        }
        Ok(())
    }

    pub fn all(&self) -> Result<Vec<ScheduleSummary>> {
        let summary = self.generate()?;
        self.simulate()?;
        self.reconstruct()?;
        self.quantify()?;
        self.report()?;
        Ok(summary)
    }
}
