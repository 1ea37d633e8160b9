use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use speech_simclr::alteration::AlterationConfig;
use speech_simclr::augment::{AugmentConfig, Frontend};
use speech_simclr::features::{CmvnMode, FbankConfig};
use speech_simclr::nn::EncoderConfig;
use speech_simclr::trainer::TrainConfig;
use speech_simclr::{Error, Result};

use crate::probe::ProbeConfig;
use crate::synth::SynthConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrontendConfig {
    pub sample_rate_hz: u32,
    pub fbank: FbankConfig,
    /// Per-speaker statistics need speaker ids; corpora without them use
    /// per-utterance normalization.
    pub cmvn: CmvnMode,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        Self {
            sample_rate_hz: 16000,
            fbank: FbankConfig::default(),
            cmvn: CmvnMode::PerUtterance,
        }
    }
}

impl FrontendConfig {
    pub fn build(&self) -> Result<Frontend> {
        Frontend::new(self.fbank.clone(), self.sample_rate_hz, self.cmvn)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub data_dir: Option<PathBuf>,
    pub noise_dir: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

/// Every setting of a run in one strict JSON document.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub augment: AugmentConfig,
    pub frontend: FrontendConfig,
    pub alteration: AlterationConfig,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub probe: ProbeConfig,
    pub synth: SynthConfig,
    pub paths: PathsConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.augment.validate()?;
        self.alteration.validate()?;
        self.encoder.validate()?;
        self.train.validate()?;
        self.probe.validate()?;
        self.synth.validate()?;
        self.frontend.fbank.stft.validate(self.frontend.sample_rate_hz)?;
        if self.encoder.input_dim != self.frontend.fbank.n_mels {
            return Err(Error::Config(format!(
                "encoder input_dim {} differs from the FBANK size {}",
                self.encoder.input_dim, self.frontend.fbank.n_mels
            )));
        }
        if self.alteration.channel_max_width >= self.frontend.fbank.n_mels {
            return Err(Error::Config("alteration channel width must be below the FBANK size".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let d = RunConfig::default();
        assert_eq!(RunConfig::from_json(&d.to_json()).unwrap(), d);
    }

    #[test]
    fn partial_documents_fill_defaults() {
        let c = RunConfig::from_json(r#"{"train": {"batch_size": 8}, "encoder": {"num_layers": 2}}"#).unwrap();
        assert_eq!(c.train.batch_size, 8);
        assert_eq!(c.encoder.num_layers, 2);
        assert_eq!(c.encoder.d_model, 768);
    }

    #[test]
    fn unknown_keys_rejected_at_every_level() {
        for doc in [
            r#"{"bogus": 1}"#,
            r#"{"train": {"batchsize": 8}}"#,
            r#"{"frontend": {"fbank": {"stft": {"window": "hann", "extra": 0}}}}"#,
            r#"{"augment": {"enabled": {"chorus": true}}}"#,
        ] {
            assert!(matches!(RunConfig::from_json(doc), Err(Error::Config(_))), "{doc}");
        }
    }

    #[test]
    fn cross_field_checks() {
        assert!(RunConfig::from_json(r#"{"encoder": {"input_dim": 40}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"train": {"epochs": 0}}"#).is_err());
    }
}
