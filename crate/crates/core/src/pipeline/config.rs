use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use std::path::Path;

use crate::contrib::{Algorithm, BaselineSpec, ContribMethod, RiemannRule, TargetSpec};
use crate::error::{CodecError, Result};
use crate::inputmap::MapAlgorithm;
use crate::metrics::SignMode;
use crate::perturb::PerturbKind;
use crate::sae::SaeConfig;
use crate::zoo::{DatasetSpec, RetinaConfig, ToyCnnConfig, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    /// Shape classifier.
    Shapes,
    /// Stimulus → firing-rate regressor.
    Retina,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineChoice {
    ZeroInput,
    ZeroHidden,
}

impl BaselineChoice {
    pub fn spec(&self) -> BaselineSpec {
        match self {
            BaselineChoice::ZeroInput => BaselineSpec::ZeroInput,
            BaselineChoice::ZeroHidden => BaselineSpec::ZeroHidden,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContribConfig {
    pub tap: String,
    pub algorithm: Algorithm,
    pub steps: usize,
    pub baseline: BaselineChoice,
    pub rule: RiemannRule,
    /// A surprisal target with an empty mean is estimated from the model's
    /// outputs on the dataset.
    pub target: TargetSpec,
    /// Sign mode of the matrix the SAE is trained on.
    pub sae_input: SignMode,
}

impl Default for ContribConfig {
    fn default() -> Self {
        ContribConfig {
            tap: "res_out".into(),
            algorithm: Algorithm::HiddenIg,
            steps: 10,
            baseline: BaselineChoice::ZeroInput,
            rule: RiemannRule::Increment,
            target: TargetSpec::top1(),
            sae_input: SignMode::Positive,
        }
    }
}

impl ContribConfig {
    pub fn method(&self) -> ContribMethod {
        ContribMethod {
            algorithm: self.algorithm,
            steps: if self.algorithm == Algorithm::HiddenIg { self.steps } else { 1 },
            baseline: self.baseline.spec(),
            rule: self.rule,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorrelateConfig {
    /// |r| above which a mode counts as class-selective in the summary.
    pub threshold: f64,
    /// Candidate cluster counts for cells (regression runs).
    pub k_candidates: Vec<usize>,
}

impl Default for CorrelateConfig {
    fn default() -> Self {
        CorrelateConfig {
            threshold: 0.3,
            k_candidates: vec![2, 3, 4],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbConfig {
    /// `None` sweeps every class.
    pub class: Option<usize>,
    pub fractions: Vec<f64>,
    pub kind: PerturbKind,
    pub n_top_modes: usize,
    pub seed: u64,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        PerturbConfig {
            class: None,
            fractions: (1..=10).map(|i| i as f64 / 20.0).collect(),
            kind: PerturbKind::Ablate,
            n_top_modes: 1,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InputMapConfig {
    pub algorithm: MapAlgorithm,
    pub steps: usize,
    pub index: usize,
    /// SAE mode whose channels are mapped; takes precedence over `channels`.
    pub mode: Option<usize>,
    /// Explicit channel set; all channels when neither is given.
    pub channels: Option<Vec<usize>>,
    /// A mode covers the channels whose dictionary weight is at least this
    /// fraction of the column maximum.
    pub mode_channel_fraction: f64,
    /// Maps are computed on the softmax of the target output.
    pub softmax: bool,
    pub net: bool,
}

impl Default for InputMapConfig {
    fn default() -> Self {
        InputMapConfig {
            algorithm: MapAlgorithm::InputGrad,
            steps: 32,
            index: 0,
            mode: None,
            channels: None,
            mode_channel_fraction: 0.5,
            softmax: true,
            net: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// When set, replaces every per-stage seed with a value derived from it.
    pub seed: Option<u64>,
    pub task: Task,
    pub dataset: DatasetSpec,
    pub toy_cnn: ToyCnnConfig,
    pub retina: RetinaConfig,
    pub train: TrainConfig,
    pub contrib: ContribConfig,
    pub sae: SaeConfig,
    pub correlate: CorrelateConfig,
    pub perturb: PerturbConfig,
    pub inputmap: InputMapConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: None,
            task: Task::Shapes,
            dataset: DatasetSpec::shapes(512, 6, 3),
            toy_cnn: ToyCnnConfig::default(),
            retina: RetinaConfig::default(),
            train: TrainConfig::default(),
            contrib: ContribConfig::default(),
            sae: SaeConfig::default(),
            correlate: CorrelateConfig::default(),
            perturb: PerturbConfig::default(),
            inputmap: InputMapConfig::default(),
        }
    }
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}

/// Sets `a.b.c` to `raw`, parsed as JSON when possible and as a string
/// otherwise.
pub fn apply_override(config: &mut Value, key: &str, raw: &str) -> Result<()> {
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut slot = config;
    for part in key.split('.') {
        if part.is_empty() {
            return Err(CodecError::Config(format!("bad override key `{key}`")));
        }
        let obj = slot
            .as_object_mut()
            .ok_or_else(|| CodecError::Config(format!("`{key}`: `{part}` is not inside an object")))?;
        slot = obj.entry(part.to_string()).or_insert(Value::Null);
    }
    *slot = value;
    Ok(())
}

impl RunConfig {
    /// Defaults for a task: the shape classifier, or the retina regressor
    /// analysed at its second layer with an estimated surprisal target.
    pub fn preset(task: Task) -> Self {
        match task {
            Task::Shapes => RunConfig::default(),
            Task::Retina => RunConfig {
                task,
                dataset: DatasetSpec::stimulus(1024, 8, 3),
                contrib: ContribConfig {
                    tap: "layer2".into(),
                    target: TargetSpec::new(crate::contrib::TargetKind::Surprisal {
                        mean: Vec::new(),
                        covariance: Vec::new(),
                    }),
                    ..ContribConfig::default()
                },
                inputmap: InputMapConfig {
                    softmax: false,
                    ..InputMapConfig::default()
                },
                ..RunConfig::default()
            },
        }
    }

    /// Defaults, then the JSON document (if any), then `key=value` overrides.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        Self::load_from(RunConfig::default(), path, overrides)
    }

    /// As [`RunConfig::load`] with `base` in place of the defaults.
    pub fn load_from(base: RunConfig, path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut value = serde_json::to_value(base)?;
        if let Some(path) = path {
            let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
                std::io::ErrorKind::NotFound => CodecError::MissingArtifact(path.display().to_string()),
                _ => CodecError::Io(e),
            })?;
            let doc: Value = serde_json::from_str(&text).map_err(|e| CodecError::Config(format!("{}: {e}", path.display())))?;
            if !doc.is_object() {
                return Err(CodecError::Config("config must be a JSON object".into()));
            }
            merge(&mut value, doc);
        }
        for (k, v) in overrides {
            apply_override(&mut value, k, v)?;
        }
        let known = serde_json::to_value(RunConfig::default())?;
        for key in value.as_object().expect("object").keys() {
            if known.get(key).is_none() {
                return Err(CodecError::Config(format!("unknown config section `{key}`")));
            }
        }
        let mut cfg: RunConfig = serde_json::from_value(value).map_err(|e| CodecError::Config(e.to_string()))?;
        cfg.apply_seed();
        Ok(cfg)
    }

    fn apply_seed(&mut self) {
        if let Some(s) = self.seed {
            self.dataset.seed = s;
            self.toy_cnn.seed = s.wrapping_add(1);
            self.retina.seed = s.wrapping_add(1);
            self.train.seed = s.wrapping_add(2);
            self.sae.seed = s.wrapping_add(3);
            self.perturb.seed = s.wrapping_add(4);
        }
    }

    /// SHA-256 of the canonical JSON serialization.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn effective_seed(&self) -> u64 {
        self.seed.unwrap_or(self.dataset.seed)
    }
}
