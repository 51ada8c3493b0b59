//! Figures of merit of a reconstructed QND measurement and cross-talk
//! diagnostics between simultaneous single-qubit readouts.

use serde::{Deserialize, Serialize};

use crate::channels::{adjoint_apply, outcome_label, superop_tensor, Povm, QndMeasurement};
use crate::circuits::Target;
use crate::error::{Error, Result};
use crate::linalg::{kron, operator_norm, CMatrix};
use crate::mle::EstimateSet;

/// Largest imaginary part tolerated in a Choi element read as a probability.
pub const IMAG_TOL: f64 = 1e-6;

/// Average probability of identifying a prepared basis state.
pub fn fidelity(p: &Povm) -> f64 {
    let d = p.dim();
    (0..d).map(|n| p.element(n)[(n, n)].re).sum::<f64>() / d as f64
}

/// Average probability that a basis state is identified and left unchanged.
pub fn qndness(m: &QndMeasurement) -> f64 {
    let d = m.dim();
    (0..d).map(|n| m.outcome(n).element(n, n, n, n).re).sum::<f64>() / d as f64
}

/// Largest change of an observable diagonal in the readout basis, for the
/// readout observable `Σ n|n⟩⟨n|`.
pub fn destructiveness(m: &QndMeasurement) -> f64 {
    let d = m.dim();
    // The objective is convex in O_c, so the maximum over the unit cube of
    // diagonals sits at a vertex; fixing the first sign removes the ±O_c pairs.
    let mut best: f64 = 0.0;
    for mask in 0..(1usize << (d - 1)) {
        let signs: Vec<f64> =
            (0..d).map(|i| if i > 0 && (mask >> (i - 1)) & 1 == 1 { -1.0 } else { 1.0 }).collect();
        best = best.max(diagonal_change(m, &signs));
    }
    best
}

/// Destructiveness for a readout observable with the given eigenvalues on
/// the computational basis. The value only depends on the eigenbasis, but a
/// degenerate spectrum enlarges the set of compatible observables and is
/// rejected.
pub fn destructiveness_for(m: &QndMeasurement, eigenvalues: &[f64]) -> Result<f64> {
    if eigenvalues.len() != m.dim() {
        return Err(Error::DimensionMismatch(format!(
            "{} eigenvalues for dimension {}",
            eigenvalues.len(),
            m.dim()
        )));
    }
    for (i, a) in eigenvalues.iter().enumerate() {
        if eigenvalues[..i].iter().any(|b| (a - b).abs() < 1e-12) {
            return Err(Error::DegenerateObservable);
        }
    }
    Ok(destructiveness(m))
}

/// `½‖O_c − 𝓔†(O_c)‖` for `O_c = diag(values)`.
pub fn diagonal_change(m: &QndMeasurement, values: &[f64]) -> f64 {
    let oc = CMatrix::diag_real(values);
    let moved = adjoint_apply(m, &oc).expect("diagonal has the process dimension");
    0.5 * operator_norm(&(&oc - &moved)).expect("square")
}

/// `⟨b̄b̄|Υ_n̄|āā⟩`: probability that basis state `ā` ends in `b̄` when outcome
/// `n̄` is reported.
pub fn flip_probability(m: &QndMeasurement, n: usize, a: usize, b: usize) -> Result<f64> {
    let d = m.dim();
    if n >= d || a >= d || b >= d {
        return Err(Error::OutOfRange(format!("flip ({n}: {a} -> {b}) in dimension {d}")));
    }
    let v = m.outcome(n).element(b, b, a, a);
    if v.im.abs() > IMAG_TOL {
        return Err(Error::Malformed(format!("flip element ({n}: {a} -> {b}) has imaginary part {:e}", v.im)));
    }
    Ok(v.re)
}

fn check_pair(what: &str, joint: usize, a: usize, b: usize) -> Result<()> {
    if joint != 4 || a != 2 || b != 2 {
        return Err(Error::DimensionMismatch(format!(
            "{what} correlation needs dimensions 4, 2, 2; got {joint}, {a}, {b}"
        )));
    }
    Ok(())
}

/// `Π_n^a⊗Π_m^b − Π_nm` for the four joint outcomes `nm`.
pub fn povm_differences(joint: &Povm, a: &Povm, b: &Povm) -> Result<Vec<CMatrix>> {
    check_pair("POVM", joint.dim(), a.dim(), b.dim())?;
    Ok((0..4).map(|nm| &kron(a.element(nm / 2), b.element(nm % 2)) - joint.element(nm)).collect())
}

/// `Υ_n^a⊗̄Υ_m^b − Υ_nm` in PSD ordering for the four joint outcomes `nm`.
pub fn choi_differences(joint: &QndMeasurement, a: &QndMeasurement, b: &QndMeasurement) -> Result<Vec<CMatrix>> {
    check_pair("Choi", joint.dim(), a.dim(), b.dim())?;
    (0..4)
        .map(|nm| {
            let product = superop_tensor(a.outcome(nm / 2), b.outcome(nm % 2))?;
            Ok(product.psd_form() - joint.outcome(nm).psd_form())
        })
        .collect()
}

/// `(Σ_k ‖D_k‖_F²)^{1/2}` of a family of difference blocks.
pub fn stacked_norm(blocks: &[CMatrix]) -> f64 {
    blocks.iter().map(|d| d.frobenius_norm().powi(2)).sum::<f64>().sqrt()
}

pub const POVM_CORRELATION_SCALE: f64 = 1.0 / 8.0;
pub const CHOI_CORRELATION_SCALE: f64 = 1.0 / 32.0;

/// Deviation of a joint two-qubit POVM from the product of single-qubit
/// POVMs: `(1/8)·(Σ_nm ‖Π_n^a⊗Π_m^b − Π_nm‖²)^{1/2}` in the Frobenius norm.
pub fn povm_correlation(joint: &Povm, a: &Povm, b: &Povm) -> Result<f64> {
    Ok(POVM_CORRELATION_SCALE * stacked_norm(&povm_differences(joint, a, b)?))
}

/// Deviation of a joint two-qubit measurement from the superoperator product
/// of single-qubit ones: `(1/32)·(Σ_nm ‖Υ_n^a⊗̄Υ_m^b − Υ_nm‖²)^{1/2}`.
pub fn choi_correlation(joint: &QndMeasurement, a: &QndMeasurement, b: &QndMeasurement) -> Result<f64> {
    Ok(CHOI_CORRELATION_SCALE * stacked_norm(&choi_differences(joint, a, b)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlipProbability {
    pub outcome: String,
    pub from: String,
    pub to: String,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub fidelity: f64,
    pub qndness: f64,
    pub destructiveness: f64,
    pub flip_probabilities: Vec<FlipProbability>,
    pub arithmetic_mean: f64,
}

impl QualityReport {
    pub fn from_measurement(m: &QndMeasurement) -> Result<Self> {
        let d = m.dim();
        let bits = m.n_qubits();
        let fidelity = fidelity(&m.povm());
        let qndness = qndness(m);
        let destructiveness = destructiveness(m);
        let mut flip_probabilities = Vec::with_capacity(d * d * d);
        for n in 0..d {
            for a in 0..d {
                for b in 0..d {
                    flip_probabilities.push(FlipProbability {
                        outcome: outcome_label(n, bits),
                        from: outcome_label(a, bits),
                        to: outcome_label(b, bits),
                        value: flip_probability(m, n, a, b)?,
                    });
                }
            }
        }
        Ok(Self {
            fidelity,
            qndness,
            destructiveness,
            flip_probabilities,
            arithmetic_mean: (fidelity + qndness + 1.0 - destructiveness) / 3.0,
        })
    }

    pub fn flip(&self, outcome: &str, from: &str, to: &str) -> Option<f64> {
        self.flip_probabilities
            .iter()
            .find(|f| f.outcome == outcome && f.from == from && f.to == to)
            .map(|f| f.value)
    }
}

/// Quality of one qubit or edge; correlations are present for edges only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetQuality {
    pub target: Target,
    pub report: QualityReport,
    pub povm_correlation: Option<f64>,
    pub choi_correlation: Option<f64>,
}

impl TargetQuality {
    /// Named scalar values, used as bootstrap quantity ids under the target.
    pub fn values(&self) -> Vec<(String, f64)> {
        let r = &self.report;
        let mut out = vec![
            ("fidelity".to_string(), r.fidelity),
            ("qndness".to_string(), r.qndness),
            ("destructiveness".to_string(), r.destructiveness),
            ("arithmetic_mean".to_string(), r.arithmetic_mean),
        ];
        if let Some(c) = self.povm_correlation {
            out.push(("povm_correlation".to_string(), c));
        }
        if let Some(c) = self.choi_correlation {
            out.push(("choi_correlation".to_string(), c));
        }
        out.extend(r.flip_probabilities.iter().map(|f| (flip_name(&f.outcome, &f.from, &f.to), f.value)));
        out
    }
}

/// Quantity name of `p_n^{a→b}`.
pub fn flip_name(outcome: &str, from: &str, to: &str) -> String {
    format!("flip_{outcome}_{from}_{to}")
}

/// Id of a named quantity of a target, e.g. `q3/qndness`.
pub fn quantity_id(target: Target, name: &str) -> String {
    format!("{target}/{name}")
}

/// One flat CSV row of a [`TargetQuality`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityRow {
    pub target: String,
    pub fidelity: f64,
    pub qndness: f64,
    pub destructiveness: f64,
    pub arithmetic_mean: f64,
    pub povm_correlation: Option<f64>,
    pub choi_correlation: Option<f64>,
}

impl From<&TargetQuality> for QualityRow {
    fn from(q: &TargetQuality) -> Self {
        Self {
            target: q.target.to_string(),
            fidelity: q.report.fidelity,
            qndness: q.report.qndness,
            destructiveness: q.report.destructiveness,
            arithmetic_mean: q.report.arithmetic_mean,
            povm_correlation: q.povm_correlation,
            choi_correlation: q.choi_correlation,
        }
    }
}

/// Quality of every qubit and edge of an estimate set, qubits first.
pub fn assess(est: &EstimateSet) -> Result<Vec<TargetQuality>> {
    let mut out = Vec::with_capacity(est.qubits.len() + est.edges.len());
    for (&q, m) in &est.qubits {
        out.push(TargetQuality {
            target: Target::Qubit(q),
            report: QualityReport::from_measurement(m)?,
            povm_correlation: None,
            choi_correlation: None,
        });
    }
    for (&(a, b), m) in &est.edges {
        let target = Target::Edge(a, b);
        let missing = |q: usize| Error::MissingCircuits {
            target: target.to_string(),
            detail: format!("no single-qubit estimate for qubit {q}"),
        };
        let ma = est.qubits.get(&a).ok_or_else(|| missing(a))?;
        let mb = est.qubits.get(&b).ok_or_else(|| missing(b))?;
        let joint_povm = est.edge_povms.get(&(a, b)).cloned().unwrap_or_else(|| m.povm());
        out.push(TargetQuality {
            target,
            report: QualityReport::from_measurement(m)?,
            povm_correlation: Some(povm_correlation(&joint_povm, &ma.povm(), &mb.povm())?),
            choi_correlation: Some(choi_correlation(m, ma, mb)?),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::{ideal_measurement, ChoiMatrix};
    use crate::linalg::test_util::*;
    use crate::simulator::{
        bell_measurement, build_decay_channel, build_edge_channel, random_measurement as random_instrument,
        wrap_measure_and_reset, NoiseParams,
    };
    use proptest::prelude::*;

    fn decay(p: f64) -> QndMeasurement {
        build_decay_channel(&NoiseParams::with_errors(p, 0.0, 0.0)).unwrap()
    }

    /// Exhaustive search over a grid of diagonal observables scaled onto the
    /// unit sphere of the operator norm.
    fn grid_destructiveness(m: &QndMeasurement, per_axis: usize) -> f64 {
        let d = m.dim();
        let axis: Vec<f64> = (0..per_axis).map(|i| -1.0 + 2.0 * i as f64 / (per_axis - 1) as f64).collect();
        let mut best: f64 = 0.0;
        for idx in 0..per_axis.pow(d as u32) {
            let v: Vec<f64> = (0..d).map(|k| axis[(idx / per_axis.pow(k as u32)) % per_axis]).collect();
            let scale = v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
            if scale > 0.0 {
                best = best.max(diagonal_change(m, &v.iter().map(|x| x / scale).collect::<Vec<_>>()));
            }
        }
        best
    }

    #[test]
    fn fidelity_examples() {
        assert!((fidelity(&Povm::ideal(2)) - 1.0).abs() < 1e-12);
        let eps = 0.02;
        let p = Povm::new(vec![
            CMatrix::diag_real(&[1.0 - eps, eps]),
            CMatrix::diag_real(&[eps, 1.0 - eps]),
        ])
        .unwrap();
        assert!((fidelity(&p) - 0.98).abs() < 1e-12);
        let half = CMatrix::identity(2).scale_real(0.5);
        assert!((fidelity(&Povm::new(vec![half.clone(), half]).unwrap()) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn qndness_examples() {
        assert!((qndness(&ideal_measurement(2).unwrap()) - 1.0).abs() < 1e-12);
        assert!((qndness(&ideal_measurement(4).unwrap()) - 1.0).abs() < 1e-12);
        assert!((qndness(&decay(0.05)) - 0.975).abs() < 1e-12);
    }

    #[test]
    fn reset_wrap_turns_fidelity_into_qndness() {
        let mut r = rng(61);
        for _ in 0..5 {
            let m = random_instrument(&mut r, 2).unwrap();
            let w = wrap_measure_and_reset(&m, 1.0).unwrap();
            assert!((qndness(&w) - fidelity(&m.povm())).abs() < 1e-12);
        }
    }

    #[test]
    fn destructiveness_examples() {
        assert!(destructiveness(&ideal_measurement(2).unwrap()).abs() < 1e-12);
        assert!(destructiveness(&ideal_measurement(4).unwrap()).abs() < 1e-12);
        // Full process replaces every state by I/2.
        let half = CMatrix::identity(2).scale_real(0.5);
        let blocks = (0..2)
            .map(|n| ChoiMatrix::from_map(2, n, |rho| half.scale_real(0.5 * rho.trace().re)).unwrap())
            .collect();
        let dep = QndMeasurement::new(blocks).unwrap();
        assert!((destructiveness(&dep) - 0.5).abs() < 1e-12);
        // Readout followed by a bit flip maps σ_z to −σ_z.
        let x = crate::linalg::pauli_x();
        let blocks = (0..2)
            .map(|n| {
                let p = crate::linalg::basis_projector(2, n);
                ChoiMatrix::from_map(2, n, |rho| &(&(&x * &p) * rho) * &(&p * &x)).unwrap()
            })
            .collect();
        let flip = QndMeasurement::new(blocks).unwrap();
        assert!((destructiveness(&flip) - 1.0).abs() < 1e-12);
        let m = decay(0.05);
        assert!((destructiveness(&m) - grid_destructiveness(&m, 201)).abs() < 1e-6);
    }

    #[test]
    fn destructiveness_matches_grid_on_random_channels() {
        let mut r = rng(62);
        for d in [2, 4] {
            for _ in 0..3 {
                let m = random_instrument(&mut r, d).unwrap();
                let per_axis = if d == 2 { 101 } else { 11 };
                let exact = destructiveness(&m);
                let grid = grid_destructiveness(&m, per_axis);
                assert!((exact - grid).abs() < 1e-9, "{exact} vs {grid}");
            }
        }
    }

    #[test]
    fn destructiveness_depends_only_on_eigenbasis() {
        let m = decay(0.1);
        let base = destructiveness(&m);
        assert_eq!(destructiveness_for(&m, &[0.0, 1.0]).unwrap(), base);
        assert_eq!(destructiveness_for(&m, &[3.0, -2.0]).unwrap(), base);
        assert!(matches!(destructiveness_for(&m, &[1.0, 1.0]), Err(Error::DegenerateObservable)));
        assert!(destructiveness_for(&m, &[1.0]).is_err());
    }

    #[test]
    fn flip_probability_examples() {
        let ideal = ideal_measurement(2).unwrap();
        for a in 0..2 {
            assert!((flip_probability(&ideal, a, a, a).unwrap() - 1.0).abs() < 1e-12);
        }
        assert!(flip_probability(&ideal, 0, 1, 0).unwrap().abs() < 1e-12);
        let m = decay(0.08);
        assert!((flip_probability(&m, 1, 1, 0).unwrap() - 0.08).abs() < 1e-12);
        assert!(flip_probability(&m, 2, 0, 0).is_err());
    }

    #[test]
    fn bell_measurement_correlations() {
        let bell = bell_measurement();
        let z = ideal_measurement(2).unwrap();
        let c_povm = povm_correlation(&bell.povm(), &z.povm(), &z.povm()).unwrap();
        let c_choi = choi_correlation(&bell, &z, &z).unwrap();
        assert!((c_povm - 6f64.sqrt() / 8.0).abs() < 1e-12);
        assert!((c_choi - 7f64.sqrt() / 32.0).abs() < 1e-12);
    }

    #[test]
    fn correlations_vanish_on_products() {
        let a = decay(0.05);
        let b = build_decay_channel(&NoiseParams::with_errors(0.03, 0.01, 0.02)).unwrap();
        let joint = build_edge_channel(&a, &b, 0.0).unwrap();
        assert!(choi_correlation(&joint, &a, &b).unwrap() < 1e-12);
        assert!(povm_correlation(&joint.povm(), &a.povm(), &b.povm()).unwrap() < 1e-12);
        let noisy = build_edge_channel(&a, &b, 0.01).unwrap();
        let c = choi_correlation(&noisy, &a, &b).unwrap();
        assert!(c > 1e-4 && c < 1e-2, "{c}");
        assert!(povm_correlation(&Povm::ideal(2), &Povm::ideal(2), &Povm::ideal(2)).is_err());
    }

    #[test]
    fn report_of_ideal_measurement() {
        let r = QualityReport::from_measurement(&ideal_measurement(4).unwrap()).unwrap();
        assert_eq!(r.flip_probabilities.len(), 64);
        assert!((r.arithmetic_mean - 1.0).abs() < 1e-12);
        assert_eq!(r.flip("11", "11", "11"), Some(1.0));
        let back: QualityReport = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn quantifiers_are_bounded(seed in 0u64..10_000, two in any::<bool>()) {
            let d = if two { 4 } else { 2 };
            let m = random_instrument(&mut rng(seed), d).unwrap();
            let r = QualityReport::from_measurement(&m).unwrap();
            for v in [r.fidelity, r.qndness, r.destructiveness] {
                prop_assert!((-1e-9..=1.0 + 1e-9).contains(&v));
            }
            prop_assert!(r.qndness <= r.fidelity + 1e-9);
            for f in &r.flip_probabilities {
                prop_assert!((-1e-9..=1.0 + 1e-9).contains(&f.value));
            }
        }

        #[test]
        fn correlations_are_nonnegative_and_vanish_on_products(seed in 0u64..10_000) {
            let mut r = rng(seed);
            let a = random_instrument(&mut r, 2).unwrap();
            let b = random_instrument(&mut r, 2).unwrap();
            let joint = random_instrument(&mut r, 4).unwrap();
            prop_assert!(choi_correlation(&joint, &a, &b).unwrap() >= 0.0);
            prop_assert!(povm_correlation(&joint.povm(), &a.povm(), &b.povm()).unwrap() >= 0.0);
            let product = crate::channels::measurement_tensor(&a, &b).unwrap();
            prop_assert!(choi_correlation(&product, &a, &b).unwrap() < 1e-10);
            prop_assert!(povm_correlation(&product.povm(), &a.povm(), &b.povm()).unwrap() < 1e-10);
        }
    }
}
