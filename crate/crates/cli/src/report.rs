use std::fmt::Write as _;

use qndmt::bootstrap::BootstrapResult;
use qndmt::channels::outcome_label;
use qndmt::circuits::Target;
use qndmt::mle::EstimateSet;
use qndmt::quantifiers::{flip_name, TargetQuality};
use serde::{Deserialize, Serialize};

use crate::config::Variant;

/// Warning shown when quantities have no bootstrap section.
pub const NO_BOOTSTRAP_WARNING: &str = "no bootstrap results; values are point estimates without error bars";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BarRow {
    pub target: String,
    pub fidelity: f64,
    pub fidelity_sd: Option<f64>,
    pub qndness: f64,
    pub qndness_sd: Option<f64>,
    pub one_minus_destructiveness: f64,
    pub one_minus_destructiveness_sd: Option<f64>,
    pub arithmetic_mean: f64,
    pub arithmetic_mean_sd: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlipRow {
    pub target: String,
    pub outcome: String,
    pub from: String,
    pub to: String,
    pub value: f64,
    pub sd: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub target: String,
    pub povm_correlation: f64,
    pub povm_correlation_sd: Option<f64>,
    pub choi_correlation: f64,
    pub choi_correlation_sd: Option<f64>,
}

/// Element-wise magnitude `|⟨ij|Υ_n|kl⟩|` averaged over all qubits or all
/// edges; `row = i·d + j`, `col = k·d + l`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChoiAverageRow {
    pub block: String,
    pub outcome: String,
    pub row: usize,
    pub col: usize,
    pub magnitude: f64,
    pub sd: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub target: String,
    pub fidelity_direct: f64,
    pub fidelity_direct_sd: Option<f64>,
    pub fidelity_reset: f64,
    pub fidelity_reset_sd: Option<f64>,
    pub qndness_direct: f64,
    pub qndness_direct_sd: Option<f64>,
    pub qndness_reset: f64,
    pub qndness_reset_sd: Option<f64>,
    pub one_minus_destructiveness_direct: f64,
    pub one_minus_destructiveness_direct_sd: Option<f64>,
    pub one_minus_destructiveness_reset: f64,
    pub one_minus_destructiveness_reset_sd: Option<f64>,
}

/// Everything derived from one variant's quality bundle.
#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub markdown: String,
    pub bars: Vec<BarRow>,
    pub flips: Vec<FlipRow>,
    pub correlations: Vec<CorrelationRow>,
    pub choi_average: Vec<ChoiAverageRow>,
}

fn sd_of(boot: Option<&BootstrapResult>, target: Target, name: &str) -> Option<f64> {
    boot.and_then(|b| b.sd(target, name))
}

fn cell(value: f64, sd: Option<f64>) -> String {
    match sd {
        Some(s) => format!("{value:.5} ± {s:.5}"),
        None => format!("{value:.5}"),
    }
}

fn bar_row(q: &TargetQuality, boot: Option<&BootstrapResult>) -> BarRow {
    let r = &q.report;
    let t = q.target;
    BarRow {
        target: t.to_string(),
        fidelity: r.fidelity,
        fidelity_sd: sd_of(boot, t, "fidelity"),
        qndness: r.qndness,
        qndness_sd: sd_of(boot, t, "qndness"),
        one_minus_destructiveness: 1.0 - r.destructiveness,
        one_minus_destructiveness_sd: sd_of(boot, t, "destructiveness"),
        arithmetic_mean: r.arithmetic_mean,
        arithmetic_mean_sd: sd_of(boot, t, "arithmetic_mean"),
    }
}

fn target_dim(t: Target) -> usize {
    match t {
        Target::Qubit(_) => 2,
        Target::Edge(..) => 4,
    }
}

fn choi_average(est: &EstimateSet, boot: Option<&BootstrapResult>) -> Vec<ChoiAverageRow> {
    let mut rows = Vec::new();
    let groups: [(&str, Vec<Target>); 2] = [
        ("qubit", est.qubits.keys().map(|&q| Target::Qubit(q)).collect()),
        ("edge", est.edges.keys().map(|&(a, b)| Target::Edge(a, b)).collect()),
    ];
    for (block, targets) in groups {
        let Some(&first) = targets.first() else { continue };
        let d = target_dim(first);
        let bits = d.trailing_zeros() as usize;
        let count = targets.len() as f64;
        for n in 0..d {
            let blocks: Vec<_> =
                targets.iter().map(|&t| est.measurement(t).expect("target from estimate").outcome(n).element_form()).collect();
            let deviations: Option<Vec<_>> = targets.iter().map(|&t| boot.and_then(|b| b.choi_deviation(t, n))).collect();
            for row in 0..d * d {
                for col in 0..d * d {
                    let magnitude = blocks.iter().map(|p| p[(row, col)].norm()).sum::<f64>() / count;
                    // Element ⟨ij|Υ|kl⟩ sits at PSD position (i·d+k, j·d+l).
                    let (i, j, k, l) = (row / d, row % d, col / d, col % d);
                    let psd_index = (i * d + k) * d * d + (j * d + l);
                    let sd = deviations
                        .as_ref()
                        .map(|devs| devs.iter().map(|c| c.sd[psd_index].powi(2)).sum::<f64>().sqrt() / count);
                    rows.push(ChoiAverageRow { block: block.into(), outcome: outcome_label(n, bits), row, col, magnitude, sd });
                }
            }
        }
    }
    rows
}

pub fn build(variant: Variant, qualities: &[TargetQuality], boot: Option<&BootstrapResult>, est: &EstimateSet) -> Report {
    let bars: Vec<BarRow> = qualities.iter().map(|q| bar_row(q, boot)).collect();
    let mut flips = Vec::new();
    for q in qualities {
        for f in &q.report.flip_probabilities {
            flips.push(FlipRow {
                target: q.target.to_string(),
                outcome: f.outcome.clone(),
                from: f.from.clone(),
                to: f.to.clone(),
                value: f.value,
                sd: sd_of(boot, q.target, &flip_name(&f.outcome, &f.from, &f.to)),
            });
        }
    }
    let correlations: Vec<CorrelationRow> = qualities
        .iter()
        .filter_map(|q| {
            Some(CorrelationRow {
                target: q.target.to_string(),
                povm_correlation: q.povm_correlation?,
                povm_correlation_sd: sd_of(boot, q.target, "povm_correlation"),
                choi_correlation: q.choi_correlation?,
                choi_correlation_sd: sd_of(boot, q.target, "choi_correlation"),
            })
        })
        .collect();
    let choi_average = choi_average(est, boot);
    let markdown = markdown(variant, qualities, boot, est, &bars, &flips, &correlations);
    Report { markdown, bars, flips, correlations, choi_average }
}

fn markdown(
    variant: Variant,
    qualities: &[TargetQuality],
    boot: Option<&BootstrapResult>,
    est: &EstimateSet,
    bars: &[BarRow],
    flips: &[FlipRow],
    correlations: &[CorrelationRow],
) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# QND measurement report ({variant})\n");
    match boot {
        None => {
            let _ = writeln!(s, "> warning: {NO_BOOTSTRAP_WARNING}\n");
        }
        Some(b) => {
            let gst = if b.rerun_gst { "refit per replicate" } else { "held at the point estimate" };
            let _ = writeln!(
                s,
                "Error bars: one standard deviation over {} bootstrap resamples ({} failed), gate sets {gst}.\n",
                b.n_resamples, b.n_failed
            );
            if b.failures_flagged {
                let _ = writeln!(s, "> warning: more than 1% of the bootstrap replicates failed\n");
            }
        }
    }
    let unconverged: Vec<&str> = est.logs.iter().filter(|l| !l.converged).map(|l| l.problem.as_str()).collect();
    let _ = writeln!(s, "Reconstruction: {} optimization problems, {} unconverged.", est.logs.len(), unconverged.len());
    if !unconverged.is_empty() {
        let _ = writeln!(s, "> warning: unconverged problems: {}", unconverged.join(", "));
    }
    s.push('\n');

    for (title, is_edge) in [("Qubits", false), ("Edges", true)] {
        let rows: Vec<&BarRow> = bars
            .iter()
            .zip(qualities)
            .filter(|(_, q)| matches!(q.target, Target::Edge(..)) == is_edge)
            .map(|(b, _)| b)
            .collect();
        if rows.is_empty() {
            continue;
        }
        let _ = writeln!(s, "## {title}\n");
        let _ = writeln!(s, "| target | F | Q | 1 - D | mean |");
        let _ = writeln!(s, "|---|---|---|---|---|");
        for b in rows {
            let _ = writeln!(
                s,
                "| {} | {} | {} | {} | {} |",
                b.target,
                cell(b.fidelity, b.fidelity_sd),
                cell(b.qndness, b.qndness_sd),
                cell(b.one_minus_destructiveness, b.one_minus_destructiveness_sd),
                cell(b.arithmetic_mean, b.arithmetic_mean_sd)
            );
        }
        s.push('\n');
    }

    if !correlations.is_empty() {
        let _ = writeln!(s, "## Correlations\n");
        let _ = writeln!(s, "| edge | C[Π] | C[Υ] |");
        let _ = writeln!(s, "|---|---|---|");
        for c in correlations {
            let _ = writeln!(
                s,
                "| {} | {} | {} |",
                c.target,
                cell(c.povm_correlation, c.povm_correlation_sd),
                cell(c.choi_correlation, c.choi_correlation_sd)
            );
        }
        s.push('\n');
    }

    let _ = writeln!(s, "## Flip probabilities\n");
    let _ = writeln!(s, "Entry (a, b) of the table for outcome n is the probability p_n^(a→b) of reading n and leaving b when a was prepared.\n");
    for q in qualities {
        let target = q.target.to_string();
        let d = target_dim(q.target);
        let bits = d.trailing_zeros() as usize;
        let labels: Vec<String> = (0..d).map(|n| outcome_label(n, bits)).collect();
        for n in &labels {
            let _ = writeln!(s, "### {target}, outcome {n}\n");
            let _ = writeln!(s, "| a \\ b | {} |", labels.join(" | "));
            let _ = writeln!(s, "|---|{}", "---|".repeat(d));
            for a in &labels {
                let cells: Vec<String> = labels
                    .iter()
                    .map(|b| {
                        let f = flips
                            .iter()
                            .find(|f| f.target == target && &f.outcome == n && &f.from == a && &f.to == b)
                            .expect("every flip is listed");
                        cell(f.value, f.sd)
                    })
                    .collect();
                let _ = writeln!(s, "| {a} | {} |", cells.join(" | "));
            }
            s.push('\n');
        }
    }
    s
}

pub fn comparison_rows(direct: &[BarRow], reset: &[BarRow]) -> Vec<ComparisonRow> {
    direct
        .iter()
        .filter_map(|d| {
            let r = reset.iter().find(|r| r.target == d.target)?;
            Some(ComparisonRow {
                target: d.target.clone(),
                fidelity_direct: d.fidelity,
                fidelity_direct_sd: d.fidelity_sd,
                fidelity_reset: r.fidelity,
                fidelity_reset_sd: r.fidelity_sd,
                qndness_direct: d.qndness,
                qndness_direct_sd: d.qndness_sd,
                qndness_reset: r.qndness,
                qndness_reset_sd: r.qndness_sd,
                one_minus_destructiveness_direct: d.one_minus_destructiveness,
                one_minus_destructiveness_direct_sd: d.one_minus_destructiveness_sd,
                one_minus_destructiveness_reset: r.one_minus_destructiveness,
                one_minus_destructiveness_reset_sd: r.one_minus_destructiveness_sd,
            })
        })
        .collect()
}

pub fn comparison_markdown(rows: &[ComparisonRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# Direct readout versus measurement and reset\n");
    let _ = writeln!(s, "| target | F direct | F reset | Q direct | Q reset | 1 - D direct | 1 - D reset |");
    let _ = writeln!(s, "|---|---|---|---|---|---|---|");
    for r in rows {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} | {} | {} |",
            r.target,
            cell(r.fidelity_direct, r.fidelity_direct_sd),
            cell(r.fidelity_reset, r.fidelity_reset_sd),
            cell(r.qndness_direct, r.qndness_direct_sd),
            cell(r.qndness_reset, r.qndness_reset_sd),
            cell(r.one_minus_destructiveness_direct, r.one_minus_destructiveness_direct_sd),
            cell(r.one_minus_destructiveness_reset, r.one_minus_destructiveness_reset_sd)
        );
    }
    s
}

/// Prepends the metadata header that holds everything run-specific.
pub fn with_metadata(body: &str, config_hash: &str, generated_unix: u64) -> String {
    format!("<!-- generated_unix: {generated_unix} -->\n<!-- config_hash: {config_hash} -->\n\n{body}")
}

/// The report without its metadata header.
pub fn strip_metadata(text: &str) -> &str {
    let mut rest = text;
    while rest.starts_with("<!--") {
        rest = rest.split_once('\n').map_or("", |(_, r)| r);
    }
    rest.trim_start_matches('\n')
}
