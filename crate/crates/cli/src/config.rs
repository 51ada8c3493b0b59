use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use qndmt::bootstrap::DEFAULT_RESAMPLES;
use qndmt::circuits::DeviceGraph;
use qndmt::counts::check_shots;
use qndmt::mle::{ChoiConstraint, OptimizerConfig, ProtocolOptions};
use qndmt::simulator::{DeviceModel, NoiseParams, DEFAULT_SHOTS};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

/// Which readout implementation the pipeline characterizes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Direct,
    #[serde(alias = "reset")]
    MeasureAndReset,
    Both,
}

impl Mode {
    pub fn variants(self) -> Vec<Variant> {
        match self {
            Mode::Direct => vec![Variant::Direct],
            Mode::MeasureAndReset => vec![Variant::Reset],
            Mode::Both => vec![Variant::Direct, Variant::Reset],
        }
    }
}

/// One concrete pipeline: direct readout or readout followed by reset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Direct,
    Reset,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Direct => "direct",
            Variant::Reset => "reset",
        }
    }

    pub fn is_reset(self) -> bool {
        self == Variant::Reset
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviceConfig {
    pub n_qubits: usize,
    pub edges: Vec<(usize, usize)>,
    /// Noise applied to every qubit without an entry in `qubits`.
    pub noise: NoiseParams,
    /// Per-qubit overrides keyed by qubit index.
    pub qubits: BTreeMap<String, NoiseParams>,
    /// Overrides every qubit's `crosstalk_strength` when set.
    pub crosstalk_strength: Option<f64>,
    pub reset_fidelity: f64,
}

impl Default for DeviceConfig {
    fn default() -> Self {
        Self {
            n_qubits: 2,
            edges: vec![(0, 1)],
            noise: NoiseParams::default(),
            qubits: BTreeMap::new(),
            crosstalk_strength: None,
            reset_fidelity: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub shots: u64,
    pub seed: u64,
    /// Bootstrap resamples; 0 skips the bootstrap.
    pub bootstrap: usize,
    pub rerun_gst: bool,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
    pub require_convergence: bool,
    pub constraint: ChoiConstraint,
    pub optimizer: OptimizerConfig,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            shots: DEFAULT_SHOTS,
            seed: 0,
            bootstrap: DEFAULT_RESAMPLES,
            rerun_gst: false,
            jobs: 0,
            require_convergence: false,
            constraint: ChoiConstraint::default(),
            optimizer: OptimizerConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: PathBuf,
    /// Formats of the counts tables.
    pub formats: Vec<Format>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { directory: PathBuf::from("qndmt-out"), formats: vec![Format::Json, Format::Csv] }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub device: DeviceConfig,
    pub run: RunSection,
    pub output: OutputConfig,
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub shots: Option<u64>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub mode: Option<Mode>,
    pub bootstrap: Option<usize>,
}

fn field_error(path: &str, msg: impl fmt::Display) -> CliError {
    CliError::Config(format!("{path}: {msg}"))
}

fn check_probability(path: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(field_error(path, format!("{p} is not in [0, 1]")))
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let cfg: RunConfig =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(out) = &o.out {
            self.output.directory = out.clone();
        }
        if let Some(v) = o.shots {
            self.run.shots = v;
        }
        if let Some(v) = o.seed {
            self.run.seed = v;
        }
        if let Some(v) = o.jobs {
            self.run.jobs = v;
        }
        if let Some(v) = o.mode {
            self.mode = v;
        }
        if let Some(v) = o.bootstrap {
            self.run.bootstrap = v;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.device;
        if d.n_qubits == 0 {
            return Err(field_error("device.n_qubits", "must be at least 1"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for (i, &(a, b)) in d.edges.iter().enumerate() {
            let path = format!("device.edges[{i}]");
            for q in [a, b] {
                if q >= d.n_qubits {
                    return Err(field_error(&path, format!("qubit {q} does not exist on a {}-qubit device", d.n_qubits)));
                }
            }
            if a == b {
                return Err(field_error(&path, format!("({a}, {b}) is a self-loop")));
            }
            if !seen.insert((a.min(b), a.max(b))) {
                return Err(field_error(&path, format!("({a}, {b}) is listed twice")));
            }
        }
        d.noise.validate().map_err(|e| field_error("device.noise", e))?;
        for (key, noise) in &d.qubits {
            let path = format!("device.qubits.{key}");
            let q: usize = key.parse().map_err(|_| field_error(&path, "key is not a qubit index"))?;
            if q >= d.n_qubits {
                return Err(field_error(&path, format!("qubit {q} does not exist on a {}-qubit device", d.n_qubits)));
            }
            noise.validate().map_err(|e| field_error(&path, e))?;
        }
        if let Some(s) = d.crosstalk_strength {
            check_probability("device.crosstalk_strength", s)?;
        }
        check_probability("device.reset_fidelity", d.reset_fidelity)?;
        check_shots(self.run.shots).map_err(|e| field_error("run.shots", e))?;
        if self.run.bootstrap == 1 {
            return Err(field_error("run.bootstrap", "needs 0 (skip) or at least 2 resamples"));
        }
        self.run.optimizer.validate().map_err(|e| field_error("run.optimizer", e))?;
        if self.output.formats.is_empty() {
            return Err(field_error("output.formats", "at least one format is required"));
        }
        Ok(())
    }

    /// Hash of everything that determines the results. The output location
    /// and the worker count are excluded.
    pub fn hash(&self) -> String {
        let mut view = self.clone();
        view.output = OutputConfig::default();
        view.run.jobs = 0;
        let bytes = serde_json::to_vec(&view).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn graph(&self) -> Result<DeviceGraph> {
        DeviceGraph::new(self.device.n_qubits, &self.device.edges).map_err(|e| field_error("device.edges", e))
    }

    pub fn qubit_noise(&self) -> Vec<NoiseParams> {
        (0..self.device.n_qubits)
            .map(|q| {
                let mut p = self.device.qubits.get(&q.to_string()).unwrap_or(&self.device.noise).clone();
                if let Some(s) = self.device.crosstalk_strength {
                    p.crosstalk_strength = s;
                }
                p
            })
            .collect()
    }

    pub fn device_model(&self) -> Result<DeviceModel> {
        let mut model =
            DeviceModel::new(self.graph()?, self.qubit_noise(), self.run.seed).map_err(|e| field_error("device", e))?;
        model.reset_fidelity = self.device.reset_fidelity;
        Ok(model)
    }

    pub fn protocol_options(&self) -> ProtocolOptions {
        ProtocolOptions {
            optimizer: self.run.optimizer.clone(),
            constraint: self.run.constraint,
            require_convergence: self.run.require_convergence,
            ..Default::default()
        }
    }

    /// Sampling seed of one variant; the reset pipeline draws its own shots.
    pub fn sampling_seed(&self, variant: Variant) -> u64 {
        match variant {
            Variant::Direct => self.run.seed,
            Variant::Reset => self.run.seed.wrapping_add(1),
        }
    }
}
