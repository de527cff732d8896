//! Run configuration: a single TOML document with a fixed schema, validated
//! before any compute. Unknown fields and unknown protocols are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fairness::Criterion;
use crate::model::Activation;
use crate::train::{FairnessLoss, Lrs, TrainConfig};
use crate::trigger::{TriggerGeometry, TriggerPosition};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    GenData,
    Base,
    Advin,
    Advpost,
    Reprogram,
    Sweep,
    LimitedData,
    Transfer,
    Theory,
    Probe,
}

impl Protocol {
    pub fn name(&self) -> &'static str {
        match self {
            Protocol::GenData => "gen-data",
            Protocol::Base => "base",
            Protocol::Advin => "advin",
            Protocol::Advpost => "advpost",
            Protocol::Reprogram => "reprogram",
            Protocol::Sweep => "sweep",
            Protocol::LimitedData => "limited-data",
            Protocol::Transfer => "transfer",
            Protocol::Theory => "theory",
            Protocol::Probe => "probe",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataCfg {
    /// `synth` or a CSV path.
    pub source: String,
    pub n: usize,
    pub d: usize,
    pub bias: f64,
    pub seed: u64,
    pub signal: f64,
    pub noise: f64,
}

impl Default for DataCfg {
    fn default() -> Self {
        DataCfg { source: "synth".into(), n: 2000, d: 20, bias: 0.8, seed: 7, signal: 0.4, noise: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelCfg {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for ModelCfg {
    fn default() -> Self {
        ModelCfg { hidden: vec![64, 64], activation: Activation::Relu }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub lambda: f64,
    pub criterion: Criterion,
    pub fairness_loss: FairnessLoss,
    /// Epochs for the debiasing phase (triggers, adversarial fine-tuning).
    pub epochs: usize,
    /// Epochs for base-model training.
    pub base_epochs: usize,
    pub batch: usize,
    pub lrs: Lrs,
    pub disc_steps: usize,
    pub seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            lambda: 10.0,
            criterion: Criterion::Eo,
            fairness_loss: FairnessLoss::Adversarial,
            epochs: 30,
            base_epochs: 50,
            batch: 128,
            lrs: Lrs::default(),
            disc_steps: 1,
            seed: 0,
        }
    }
}

impl TrainSection {
    /// The per-run training config at this section's lambda and seed.
    pub fn to_train_config(&self) -> TrainConfig {
        TrainConfig {
            lambda: self.lambda,
            criterion: self.criterion,
            fairness_loss: self.fairness_loss,
            epochs: self.epochs,
            batch: self.batch,
            lrs: self.lrs,
            disc_steps: self.disc_steps,
            seed: self.seed,
        }
    }

    /// Config for base-model training: utility only, `base_epochs`.
    pub fn base_config(&self, seed: u64) -> TrainConfig {
        TrainConfig { lambda: 0.0, epochs: self.base_epochs, seed, ..self.to_train_config() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TriggerKind {
    Additive,
    Concat,
    Border,
    Patch,
    Soft,
    Hard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TriggerCfg {
    pub kind: TriggerKind,
    /// Trigger width: slot count for concat/soft/hard, ring width for
    /// border, patch side for patch. `0` picks the kind's default.
    pub size: usize,
    pub position: TriggerPosition,
    /// Vocabulary and embedding width for soft/hard triggers.
    pub vocab: usize,
    pub embed: usize,
}

impl Default for TriggerCfg {
    fn default() -> Self {
        TriggerCfg { kind: TriggerKind::Concat, size: 0, position: TriggerPosition::Prefix, vocab: 16, embed: 4 }
    }
}

impl TriggerCfg {
    /// Resolves the geometry against a dataset of raw feature width `d`.
    /// Image triggers require `d` to be a perfect square and default their
    /// size to the reference fractions of the side (20/224 for the border
    /// ring, 80/224 for the patch).
    pub fn geometry(&self, d: usize) -> Result<TriggerGeometry> {
        let side = || -> Result<usize> {
            let s = (d as f64).sqrt().round() as usize;
            if s * s != d {
                return Err(Error::Config(format!(
                    "{:?} trigger needs square images; feature width {d} is not a perfect square",
                    self.kind
                )));
            }
            Ok(s)
        };
        Ok(match self.kind {
            TriggerKind::Additive => TriggerGeometry::Additive { dim: d },
            TriggerKind::Concat => TriggerGeometry::Concat {
                dim: d,
                width: if self.size == 0 { 5 } else { self.size },
                position: self.position,
            },
            TriggerKind::Border => {
                let s = side()?;
                let width = if self.size == 0 {
                    ((s as f64 * 20.0 / 224.0).round() as usize).max(1)
                } else {
                    self.size
                };
                TriggerGeometry::Border { side: s, width }
            }
            TriggerKind::Patch => {
                let s = side()?;
                let patch = if self.size == 0 {
                    ((s as f64 * 80.0 / 224.0).round() as usize).max(1)
                } else {
                    self.size
                };
                TriggerGeometry::Patch { side: s, patch, anchor: (0, 0) }
            }
            TriggerKind::Soft => TriggerGeometry::Soft {
                dim: d,
                slots: if self.size == 0 { 5 } else { self.size },
                vocab: self.vocab,
                embed: self.embed,
                position: self.position,
            },
            TriggerKind::Hard => TriggerGeometry::Hard {
                dim: d,
                slots: if self.size == 0 { 5 } else { self.size },
                vocab: self.vocab,
                embed: self.embed,
                position: self.position,
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputCfg {
    pub dir: PathBuf,
}

impl Default for OutputCfg {
    fn default() -> Self {
        OutputCfg { dir: PathBuf::from("out") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepCfg {
    pub lambdas: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl Default for SweepCfg {
    fn default() -> Self {
        SweepCfg { lambdas: vec![0.0, 0.5, 2.0, 10.0, 50.0], seeds: vec![0, 1] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LimitedCfg {
    pub ratios: Vec<f64>,
}

impl Default for LimitedCfg {
    fn default() -> Self {
        LimitedCfg { ratios: vec![1.0, 0.5, 0.2, 0.1, 0.01] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransferCfg {
    pub source_seed: u64,
    pub target_seed: u64,
}

impl Default for TransferCfg {
    fn default() -> Self {
        TransferCfg { source_seed: 0, target_seed: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TheoryCfg {
    pub target: usize,
    pub strengths: Vec<f64>,
    pub sigmas: Vec<f64>,
}

impl Default for TheoryCfg {
    fn default() -> Self {
        TheoryCfg {
            target: 0,
            strengths: vec![0.5, 0.9, 0.99, 0.999, 1.0 - 1e-6, 1.0],
            sigmas: vec![0.0, 0.001, 0.01, 0.1, 0.5, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlackboxCfg {
    /// Two-point queries per gradient estimate; the reference setting is 30.
    pub queries: usize,
    pub smoothing: f64,
    pub enabled: bool,
}

impl Default for BlackboxCfg {
    fn default() -> Self {
        BlackboxCfg { queries: 30, smoothing: 1e-3, enabled: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub protocol: Protocol,
    #[serde(default)]
    pub data: DataCfg,
    #[serde(default)]
    pub model: ModelCfg,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub trigger: TriggerCfg,
    #[serde(default)]
    pub output: OutputCfg,
    #[serde(default)]
    pub sweep: SweepCfg,
    #[serde(default)]
    pub limited: LimitedCfg,
    #[serde(default)]
    pub transfer: TransferCfg,
    #[serde(default)]
    pub theory: TheoryCfg,
    #[serde(default)]
    pub blackbox: BlackboxCfg,
}

impl RunConfig {
    pub fn new(protocol: Protocol) -> Self {
        RunConfig {
            protocol,
            data: DataCfg::default(),
            model: ModelCfg::default(),
            train: TrainSection::default(),
            trigger: TriggerCfg::default(),
            output: OutputCfg::default(),
            sweep: SweepCfg::default(),
            limited: LimitedCfg::default(),
            transfer: TransferCfg::default(),
            theory: TheoryCfg::default(),
            blackbox: BlackboxCfg::default(),
        }
    }

    /// Rejects invalid values before any compute.
    pub fn validate(&self) -> Result<()> {
        if self.data.source == "synth" {
            if self.data.n == 0 || self.data.d == 0 {
                return Err(Error::Config("data.n and data.d must be positive".into()));
            }
            if !(0.0..=1.0).contains(&self.data.bias) {
                return Err(Error::Config(format!("data.bias must be in [0, 1], got {}", self.data.bias)));
            }
        }
        if self.model.hidden.is_empty() || self.model.hidden.contains(&0) {
            return Err(Error::Config(format!("model.hidden must be nonempty positive widths, got {:?}", self.model.hidden)));
        }
        if self.train.lambda < 0.0 {
            return Err(Error::Config(format!("train.lambda must be >= 0, got {}", self.train.lambda)));
        }
        if self.train.batch == 0 || self.train.disc_steps == 0 {
            return Err(Error::Config("train.batch and train.disc_steps must be positive".into()));
        }
        if self.sweep.lambdas.is_empty() || self.sweep.seeds.is_empty() {
            return Err(Error::Config("sweep.lambdas and sweep.seeds must be nonempty".into()));
        }
        if self.limited.ratios.iter().any(|&r| !(r > 0.0 && r <= 1.0)) {
            return Err(Error::Config(format!("limited.ratios must lie in (0, 1], got {:?}", self.limited.ratios)));
        }
        if self.theory.strengths.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Config("theory.strengths must be sorted ascending".into()));
        }
        if self.theory.strengths.iter().any(|&s| !(s > 0.0 && s <= 1.0)) {
            return Err(Error::Config(format!("theory.strengths must lie in (0, 1], got {:?}", self.theory.strengths)));
        }
        if self.blackbox.queries == 0 {
            return Err(Error::Config("blackbox.queries must be positive".into()));
        }
        if !(self.blackbox.smoothing > 0.0) {
            return Err(Error::Config("blackbox.smoothing must be positive".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_toml() {
        let cfg = RunConfig::new(Protocol::Sweep);
        let text = cfg.to_toml();
        let back = RunConfig::from_toml(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn minimal_document_uses_defaults() {
        let cfg = RunConfig::from_toml("protocol = \"theory\"\n").unwrap();
        assert_eq!(cfg.protocol, Protocol::Theory);
        assert_eq!(cfg.data.n, 2000);
        assert_eq!(cfg.sweep.lambdas, vec![0.0, 0.5, 2.0, 10.0, 50.0]);
    }

    #[test]
    fn unknown_protocol_is_rejected() {
        assert!(RunConfig::from_toml("protocol = \"mystery\"\n").is_err());
    }

    #[test]
    fn unknown_field_is_rejected() {
        let err = RunConfig::from_toml("protocol = \"base\"\nturbo = true\n").unwrap_err().to_string();
        assert!(err.contains("turbo"), "{err}");
    }

    #[test]
    fn invalid_values_are_rejected_before_compute() {
        let text = "protocol = \"base\"\n[data]\nbias = 1.5\n";
        assert!(RunConfig::from_toml(text).is_err());
        let text = "protocol = \"sweep\"\n[sweep]\nlambdas = []\n";
        assert!(RunConfig::from_toml(text).is_err());
        let text = "protocol = \"theory\"\n[theory]\nstrengths = [0.9, 0.5]\n";
        assert!(RunConfig::from_toml(text).is_err());
    }

    #[test]
    fn geometry_resolution_per_kind() {
        let mut cfg = TriggerCfg::default();
        assert_eq!(
            cfg.geometry(20).unwrap(),
            TriggerGeometry::Concat { dim: 20, width: 5, position: TriggerPosition::Prefix }
        );
        cfg.kind = TriggerKind::Border;
        assert!(cfg.geometry(20).is_err());
        let geo = cfg.geometry(64).unwrap();
        assert_eq!(geo, TriggerGeometry::Border { side: 8, width: 1 });
        cfg.kind = TriggerKind::Patch;
        cfg.size = 3;
        assert_eq!(cfg.geometry(64).unwrap(), TriggerGeometry::Patch { side: 8, patch: 3, anchor: (0, 0) });
    }
}
