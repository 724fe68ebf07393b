//! Run configuration: a TOML file plus command-line overrides.

use std::fs;
use std::path::{Path, PathBuf};

use astpn_core::data::{synth::SynthSpec, SplitMode};
use astpn_core::layers::{RnnOutput, SppConfig};
use astpn_core::loss::LossConfig;
use astpn_core::model::{FeatureBranch, ModelConfig, Variant};
use astpn_core::optim::LrSchedule;
use astpn_core::train::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{AppError, AppResult};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepDecay {
    pub every: usize,
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub ids: usize,
    pub cams: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub signal_frames: Option<usize>,
}

impl Default for SynthSection {
    fn default() -> Self {
        let s = SynthSpec::default();
        Self {
            ids: s.n_ids,
            cams: s.n_cams,
            frames: s.frames,
            height: s.height,
            width: s.width,
            signal_frames: s.signal_frames,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub out: PathBuf,
    pub trials: usize,
    pub seed: u64,
    /// Training subsequence length.
    pub k: usize,
    pub margin: f64,
    pub feature_dim: usize,
    pub lr: f64,
    pub lr_decay: Option<StepDecay>,
    pub epochs: usize,
    /// Write a checkpoint every this many epochs; 0 writes only the final one.
    pub save_every: usize,
    pub variant: String,
    /// `pre_tanh` or `post_tanh`.
    pub rnn_output: String,
    pub use_identity_loss: bool,
    /// `(m_w, m_h)` per pyramid level.
    pub spp_bins: Vec<[usize; 2]>,
    /// `half` or `overfit`.
    pub split: String,
    /// `probe`, `gallery` or `mean`.
    pub feature_branch: String,
    pub single_shot: bool,
    pub cross_dataset: Option<PathBuf>,
    pub cross_fraction: f64,
    pub synth: SynthSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            out: PathBuf::from("runs"),
            trials: 10,
            seed: 0,
            k: 16,
            margin: 3.0,
            feature_dim: 128,
            lr: 0.001,
            lr_decay: None,
            epochs: 700,
            save_every: 0,
            variant: "astpn".into(),
            rnn_output: "pre_tanh".into(),
            use_identity_loss: true,
            spp_bins: vec![[8, 8], [4, 4], [2, 2], [1, 1]],
            split: "half".into(),
            feature_branch: "probe".into(),
            single_shot: false,
            cross_dataset: None,
            cross_fraction: 0.5,
            synth: SynthSection::default(),
        }
    }
}

fn bad(msg: impl Into<String>) -> AppError {
    AppError::Config(msg.into())
}

impl RunConfig {
    pub fn from_toml(text: &str) -> AppResult<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| bad(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> AppResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            AppError::Config(m) => bad(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// SHA-256 of the resolved TOML, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn write(&self, path: &Path) -> AppResult<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
        }
        fs::write(path, self.to_toml()).map_err(|e| AppError::io(path, e))
    }

    pub fn validate(&self) -> AppResult<()> {
        if self.trials == 0 {
            return Err(bad("trials must be at least 1"));
        }
        if self.k == 0 {
            return Err(bad("k must be at least 1"));
        }
        if self.feature_dim == 0 {
            return Err(bad("feature_dim must be at least 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(bad("lr must be positive"));
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return Err(bad("margin must be non-negative"));
        }
        if !(self.cross_fraction > 0.0 && self.cross_fraction <= 1.0) {
            return Err(bad("cross_fraction must lie in (0, 1]"));
        }
        self.model()?;
        self.split_mode()?;
        Ok(())
    }

    pub fn variant(&self) -> AppResult<Variant> {
        self.variant.parse().map_err(|_| {
            let names: Vec<_> = Variant::ALL.iter().map(|v| v.name()).collect();
            bad(format!("unknown variant `{}` (expected one of {})", self.variant, names.join(", ")))
        })
    }

    pub fn split_mode(&self) -> AppResult<SplitMode> {
        match self.split.as_str() {
            "half" => Ok(SplitMode::Half),
            "overfit" => Ok(SplitMode::Overfit),
            s => Err(bad(format!("unknown split `{s}` (expected half or overfit)"))),
        }
    }

    pub fn model(&self) -> AppResult<ModelConfig> {
        let rnn_output = match self.rnn_output.as_str() {
            "pre_tanh" => RnnOutput::PreTanh,
            "post_tanh" => RnnOutput::PostTanh,
            s => return Err(bad(format!("unknown rnn_output `{s}` (expected pre_tanh or post_tanh)"))),
        };
        let feature_branch = match self.feature_branch.as_str() {
            "probe" => FeatureBranch::Probe,
            "gallery" => FeatureBranch::Gallery,
            "mean" => FeatureBranch::Mean,
            s => return Err(bad(format!("unknown feature_branch `{s}`"))),
        };
        let spp = SppConfig::new(self.spp_bins.iter().map(|b| (b[0], b[1])).collect()).map_err(|e| bad(e.to_string()))?;
        Ok(ModelConfig {
            variant: self.variant()?,
            rnn_output,
            spp,
            feature_dim: self.feature_dim,
            feature_branch,
        })
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            lr: LrSchedule {
                base: self.lr,
                decay: self.lr_decay.map(|d| (d.every, d.factor)),
            },
            k: self.k,
            seed: self.seed,
            loss: LossConfig {
                margin: self.margin,
                use_identity_loss: self.use_identity_loss,
            },
        }
    }

    pub fn synth_spec(&self) -> SynthSpec {
        let s = &self.synth;
        SynthSpec {
            n_ids: s.ids,
            n_cams: s.cams,
            frames: s.frames,
            height: s.height,
            width: s.width,
            seed: self.seed,
            signal_frames: s.signal_frames,
        }
    }

    /// Frames per test sequence: one in single-shot mode, else all.
    pub fn eval_frames(&self) -> Option<usize> {
        self.single_shot.then_some(1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_protocol() {
        let c = RunConfig::default();
        assert_eq!((c.trials, c.k, c.feature_dim, c.epochs), (10, 16, 128, 700));
        assert_eq!((c.margin, c.lr), (3.0, 0.001));
        assert_eq!(c.model().unwrap().spp.output_len(32), 2720);
        c.validate().unwrap();
    }

    #[test]
    fn toml_round_trip() {
        let mut c = RunConfig {
            dataset: Some("data/x".into()),
            lr_decay: Some(StepDecay { every: 10, factor: 0.5 }),
            ..Default::default()
        };
        c.synth.signal_frames = Some(2);
        let back = RunConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn partial_file_uses_defaults() {
        let c = RunConfig::from_toml("epochs = 5\nvariant = \"mean_pool\"\n").unwrap();
        assert_eq!(c.epochs, 5);
        assert_eq!(c.k, 16);
        assert_eq!(c.variant().unwrap(), Variant::MeanPool);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(RunConfig::from_toml("variant = \"nope\"").is_err());
        assert!(RunConfig::from_toml("bogus = 1").is_err());
        assert!(RunConfig::from_toml("trials = 0").is_err());
        assert!(RunConfig::from_toml("spp_bins = []").is_err());
    }
}
