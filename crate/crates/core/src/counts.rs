//! Outcome counts per circuit and the keyed random streams used to draw them.

use std::collections::{BTreeMap, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::channels::{outcome_label, parse_outcome_label};
use crate::circuits::{gst_circuits, gst_label, qndmt_settings, Setting, Target, GATE_SET};
use crate::error::{Error, Result};

/// Largest shot count whose frequencies are exact in `f64`.
pub const MAX_SHOTS: u64 = 1 << 53;

/// Identifies one circuit executed on one target.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CircuitKey {
    pub batch: usize,
    pub target: Target,
    pub prep: String,
    pub rotation: String,
}

/// Counts of one circuit, row-major over (first outcome, second outcome).
/// Circuits with a single measurement have one column.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeCounts {
    pub n_first: usize,
    pub n_second: usize,
    pub counts: Vec<u64>,
}

impl OutcomeCounts {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn get(&self, first: usize, second: usize) -> u64 {
        self.counts[first * self.n_second + second]
    }

    pub fn has_second(&self) -> bool {
        self.n_second > 1
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CountsTable {
    shots_per_circuit: u64,
    entries: BTreeMap<CircuitKey, OutcomeCounts>,
}

/// Flat row of the tabular interchange format.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountRow {
    pub batch: usize,
    pub target: Target,
    pub prep: String,
    pub rotation: String,
    pub outcome1: String,
    pub outcome2: String,
    pub count: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CountsDocument {
    pub shots_per_circuit: u64,
    pub rows: Vec<CountRow>,
}

/// Single-measurement statistics of the 64 GST circuits of one qubit, in
/// [`gst_circuits`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct GstData {
    pub counts: Vec<[u64; 2]>,
}

/// Two-measurement statistics of a QND-MT block, in [`qndmt_settings`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockData {
    pub dim: usize,
    pub circuits: Vec<BlockCircuit>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockCircuit {
    pub preps: Vec<usize>,
    pub rotations: Vec<usize>,
    /// `counts[n * dim + m]`: first outcome `n`, second outcome `m`.
    pub counts: Vec<u64>,
}

impl CountsTable {
    pub fn new(shots_per_circuit: u64) -> Result<Self> {
        check_shots(shots_per_circuit)?;
        Ok(Self { shots_per_circuit, entries: BTreeMap::new() })
    }

    pub fn shots_per_circuit(&self) -> u64 {
        self.shots_per_circuit
    }

    pub fn insert(&mut self, key: CircuitKey, counts: OutcomeCounts) -> Result<()> {
        if counts.counts.len() != counts.n_first * counts.n_second {
            return Err(Error::Malformed(format!("count vector length for {}", key.target)));
        }
        if counts.total() != self.shots_per_circuit {
            return Err(Error::Malformed(format!(
                "circuit {} on {} has {} shots, expected {}",
                key.batch,
                key.target,
                counts.total(),
                self.shots_per_circuit
            )));
        }
        self.entries.insert(key, counts);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&CircuitKey, &OutcomeCounts)> {
        self.entries.iter()
    }

    pub fn targets(&self) -> Vec<Target> {
        let mut t: Vec<Target> = self.entries.keys().map(|k| k.target).collect();
        t.sort_unstable();
        t.dedup();
        t
    }

    /// Replaces every count vector through `f`, keeping keys and shape.
    pub fn map_counts(&self, mut f: impl FnMut(&CircuitKey, &OutcomeCounts) -> Vec<u64>) -> CountsTable {
        let entries = self
            .entries
            .iter()
            .map(|(k, v)| {
                let counts = f(k, v);
                debug_assert_eq!(counts.len(), v.counts.len());
                (k.clone(), OutcomeCounts { counts, ..v.clone() })
            })
            .collect();
        CountsTable { shots_per_circuit: self.shots_per_circuit, entries }
    }

    fn index_for(&self, target: Target) -> HashMap<(&str, &str), Vec<&OutcomeCounts>> {
        let mut idx: HashMap<(&str, &str), Vec<&OutcomeCounts>> = HashMap::new();
        for (k, v) in self.entries.iter().filter(|(k, _)| k.target == target) {
            idx.entry((k.prep.as_str(), k.rotation.as_str())).or_default().push(v);
        }
        idx
    }

    pub fn gst_data(&self, qubit: usize) -> Result<GstData> {
        let target = Target::Qubit(qubit);
        let idx = self.index_for(target);
        let mut counts = Vec::with_capacity(64);
        let mut missing = Vec::new();
        for triple in gst_circuits() {
            let label = gst_label(&triple);
            match idx.get(&(label.as_str(), "-")) {
                Some(found) => {
                    let mut c = [0u64; 2];
                    for oc in found {
                        if oc.n_first != 2 || oc.n_second != 1 {
                            return Err(Error::Malformed(format!("GST circuit {label} on {target} has wrong shape")));
                        }
                        c[0] += oc.counts[0];
                        c[1] += oc.counts[1];
                    }
                    counts.push(c);
                }
                None => missing.push(label),
            }
        }
        if !missing.is_empty() {
            return Err(missing_error(target, "GST", &missing));
        }
        debug_assert_eq!(GATE_SET.len().pow(3), counts.len());
        Ok(GstData { counts })
    }

    pub fn block_data(&self, target: Target) -> Result<BlockData> {
        let (n_qubits, kind) = match target {
            Target::Qubit(_) => (1, "single-qubit QND-MT"),
            Target::Edge(..) => (2, "two-qubit QND-MT"),
        };
        let dim = 1 << n_qubits;
        let idx = self.index_for(target);
        let mut circuits = Vec::new();
        let mut missing = Vec::new();
        for setting in qndmt_settings(n_qubits)? {
            let Setting::Block { preps, rotations } = &setting else { unreachable!("block settings") };
            let key = (setting.prep_label(), setting.rotation_label());
            match idx.get(&(key.0.as_str(), key.1.as_str())) {
                Some(found) => {
                    let mut c = vec![0u64; dim * dim];
                    for oc in found {
                        if oc.n_first != dim || oc.n_second != dim {
                            return Err(Error::Malformed(format!("{kind} circuit on {target} has wrong shape")));
                        }
                        for (acc, x) in c.iter_mut().zip(&oc.counts) {
                            *acc += x;
                        }
                    }
                    circuits.push(BlockCircuit { preps: preps.clone(), rotations: rotations.clone(), counts: c });
                }
                None => missing.push(format!("{}/{}", key.0, key.1)),
            }
        }
        if !missing.is_empty() {
            return Err(missing_error(target, kind, &missing));
        }
        Ok(BlockData { dim, circuits })
    }

    pub fn rows(&self) -> Vec<CountRow> {
        let mut rows = Vec::new();
        for (k, v) in &self.entries {
            let bits1 = v.n_first.trailing_zeros() as usize;
            let bits2 = v.n_second.trailing_zeros() as usize;
            for n in 0..v.n_first {
                for m in 0..v.n_second {
                    rows.push(CountRow {
                        batch: k.batch,
                        target: k.target,
                        prep: k.prep.clone(),
                        rotation: k.rotation.clone(),
                        outcome1: outcome_label(n, bits1),
                        outcome2: if v.has_second() { outcome_label(m, bits2) } else { "-".into() },
                        count: v.get(n, m),
                    });
                }
            }
        }
        rows
    }

    pub fn from_rows(shots_per_circuit: u64, rows: &[CountRow]) -> Result<Self> {
        let mut grouped: BTreeMap<CircuitKey, Vec<(usize, Option<usize>, u64)>> = BTreeMap::new();
        for r in rows {
            let key = CircuitKey { batch: r.batch, target: r.target, prep: r.prep.clone(), rotation: r.rotation.clone() };
            let o1 = parse_outcome_label(&r.outcome1)?;
            let o2 = if r.outcome2 == "-" { None } else { Some(parse_outcome_label(&r.outcome2)?) };
            grouped.entry(key).or_default().push((o1, o2, r.count));
        }
        let mut table = CountsTable::new(shots_per_circuit)?;
        for (key, cells) in grouped {
            let dim = match key.target {
                Target::Qubit(_) => 2,
                Target::Edge(..) => 4,
            };
            let single = cells.iter().all(|c| c.1.is_none());
            let n_second = if single { 1 } else { dim };
            let mut counts = vec![0u64; dim * n_second];
            for (o1, o2, c) in cells {
                let second = match (single, o2) {
                    (true, _) => 0,
                    (false, Some(m)) => m,
                    (false, None) => return Err(Error::Malformed(format!("mixed outcome shapes on {}", key.target))),
                };
                if o1 >= dim || second >= n_second {
                    return Err(Error::Malformed(format!("outcome out of range on {}", key.target)));
                }
                counts[o1 * n_second + second] += c;
            }
            table.insert(key, OutcomeCounts { n_first: dim, n_second, counts })?;
        }
        Ok(table)
    }
}

impl From<&CountsTable> for CountsDocument {
    fn from(t: &CountsTable) -> Self {
        Self { shots_per_circuit: t.shots_per_circuit, rows: t.rows() }
    }
}

impl TryFrom<&CountsDocument> for CountsTable {
    type Error = Error;
    fn try_from(doc: &CountsDocument) -> Result<Self> {
        CountsTable::from_rows(doc.shots_per_circuit, &doc.rows)
    }
}

fn missing_error(target: Target, kind: &str, missing: &[String]) -> Error {
    let preview: Vec<&str> = missing.iter().take(3).map(String::as_str).collect();
    Error::MissingCircuits {
        target: target.to_string(),
        detail: format!("{} {kind} circuit(s) absent, e.g. {}", missing.len(), preview.join(", ")),
    }
}

pub fn check_shots(shots: u64) -> Result<()> {
    if shots == 0 {
        return Err(Error::InvalidParameter("shots must be at least 1".into()));
    }
    if shots > MAX_SHOTS {
        return Err(Error::ShotOverflow(shots));
    }
    Ok(())
}

fn target_code(t: Target) -> u64 {
    match t {
        Target::Qubit(q) => q as u64,
        Target::Edge(a, b) => (1 << 31) | ((a as u64) << 15) | b as u64,
    }
}

/// Independent stream for one (batch, target) under `seed`. The draws do not
/// depend on the order in which streams are consumed.
pub fn keyed_rng(seed: u64, batch: usize, target: Target) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(((batch as u64) << 32) ^ target_code(target));
    rng
}

/// Multinomial draw by sequential conditional binomials.
pub fn sample_multinomial(rng: &mut impl rand::Rng, shots: u64, probs: &[f64]) -> Vec<u64> {
    let mut out = vec![0u64; probs.len()];
    let mut remaining = shots;
    let mut mass: f64 = probs.iter().map(|p| p.max(0.0)).sum();
    for (i, &p) in probs.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        let p = p.max(0.0);
        if i + 1 == probs.len() || mass <= 0.0 {
            out[i] = remaining;
            break;
        }
        let q = (p / mass).clamp(0.0, 1.0);
        let k = if q >= 1.0 {
            remaining
        } else if q <= 0.0 {
            0
        } else {
            Binomial::new(remaining, q).expect("valid binomial").sample(rng)
        };
        out[i] = k;
        remaining -= k;
        mass -= p;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn multinomial_degenerate_and_total() {
        let mut r = keyed_rng(1, 0, Target::Qubit(0));
        assert_eq!(sample_multinomial(&mut r, 100, &[0.0, 1.0, 0.0]), vec![0, 100, 0]);
        assert_eq!(sample_multinomial(&mut r, 100, &[1.0, 0.0]), vec![100, 0]);
        let s = sample_multinomial(&mut r, 12345, &[0.1, 0.2, 0.3, 0.4]);
        assert_eq!(s.iter().sum::<u64>(), 12345);
    }

    #[test]
    fn multinomial_frequencies_within_bands() {
        let mut r = keyed_rng(2, 7, Target::Edge(0, 1));
        let p = [0.25, 0.25, 0.25, 0.25];
        let n = 100_000u64;
        let s = sample_multinomial(&mut r, n, &p);
        for (c, pi) in s.iter().zip(p) {
            let sigma = (n as f64 * pi * (1.0 - pi)).sqrt();
            assert!((*c as f64 - n as f64 * pi).abs() < 4.0 * sigma);
        }
    }

    #[test]
    fn keyed_streams_independent_of_order() {
        let a: u64 = keyed_rng(9, 3, Target::Qubit(1)).random();
        let _ = keyed_rng(9, 4, Target::Qubit(1)).random::<u64>();
        let b: u64 = keyed_rng(9, 3, Target::Qubit(1)).random();
        assert_eq!(a, b);
        let c: u64 = keyed_rng(9, 3, Target::Qubit(2)).random();
        assert_ne!(a, c);
        let d: u64 = keyed_rng(9, 3, Target::Edge(0, 1)).random();
        assert_ne!(a, d);
    }

    #[test]
    fn rows_round_trip() {
        let mut t = CountsTable::new(10).unwrap();
        t.insert(
            CircuitKey { batch: 0, target: Target::Qubit(0), prep: "I.I.I".into(), rotation: "-".into() },
            OutcomeCounts { n_first: 2, n_second: 1, counts: vec![7, 3] },
        )
        .unwrap();
        t.insert(
            CircuitKey { batch: 5, target: Target::Edge(0, 1), prep: "I,X".into(), rotation: "I,I".into() },
            OutcomeCounts { n_first: 4, n_second: 4, counts: (0..16).map(|i| if i == 5 { 10 } else { 0 }).collect() },
        )
        .unwrap();
        let rows = t.rows();
        assert_eq!(rows.len(), 2 + 16);
        assert_eq!(rows[2 + 5].outcome1, "01");
        assert_eq!(rows[2 + 5].outcome2, "01");
        let back = CountsTable::from_rows(10, &rows).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn shot_checks() {
        assert!(CountsTable::new(0).is_err());
        assert!(matches!(CountsTable::new(MAX_SHOTS + 1), Err(Error::ShotOverflow(_))));
        let mut t = CountsTable::new(10).unwrap();
        let bad = t.insert(
            CircuitKey { batch: 0, target: Target::Qubit(0), prep: "I.I.I".into(), rotation: "-".into() },
            OutcomeCounts { n_first: 2, n_second: 1, counts: vec![7, 4] },
        );
        assert!(bad.is_err());
    }

    #[test]
    fn missing_circuits_reported() {
        let t = CountsTable::new(10).unwrap();
        match t.gst_data(0) {
            Err(Error::MissingCircuits { target, .. }) => assert_eq!(target, "q0"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(t.block_data(Target::Edge(0, 1)).is_err());
    }
}
