//! Run configuration: one TOML file with sections, overridable field by field.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attention::{ConvShape, Normalizer, NormalizerConfig};
use crate::data::SynthTaskConfig;
use crate::decoding::BeamConfig;
use crate::error::{Error, Result};
use crate::model::ModelDims;
use crate::training::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AttentionMode {
    #[serde(rename = "content")]
    Content,
    #[serde(rename = "conv")]
    Conv,
    #[serde(rename = "conv+smoothing")]
    ConvSmoothing,
}

impl AttentionMode {
    pub fn uses_conv(self) -> bool {
        self != AttentionMode::Content
    }

    pub fn smoothing(self) -> bool {
        self == AttentionMode::ConvSmoothing
    }

    pub const ALL: [AttentionMode; 3] = [AttentionMode::Content, AttentionMode::Conv, AttentionMode::ConvSmoothing];
}

impl fmt::Display for AttentionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttentionMode::Content => "content",
            AttentionMode::Conv => "conv",
            AttentionMode::ConvSmoothing => "conv+smoothing",
        })
    }
}

impl FromStr for AttentionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AttentionMode::ALL
            .into_iter()
            .find(|m| m.to_string() == s)
            .ok_or_else(|| Error::Config(format!("unknown attention mode {s:?} (content, conv, conv+smoothing)")))
    }
}

/// Network sizes; input width and vocabulary come from the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub enc_hidden: usize,
    pub enc_layers: usize,
    pub n_att: usize,
    pub gen_hidden: usize,
    pub d_emb: usize,
    pub maxout_units: usize,
    pub maxout_pool: usize,
    /// Number of location filters.
    pub conv_k: usize,
    /// Filter width (odd).
    pub conv_r: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            enc_hidden: 16,
            enc_layers: 1,
            n_att: 16,
            gen_hidden: 24,
            d_emb: 8,
            maxout_units: 16,
            maxout_pool: 2,
            conv_k: 4,
            conv_r: 21,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    /// Append first-order temporal differences.
    pub deltas: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            n_train: 400,
            n_dev: 40,
            n_test: 40,
            deltas: false,
        }
    }
}

/// Decoding-time changes to the attention normalizer. `beta` and `top_k`
/// both replace the normalizer and so exclude each other; `window` combines
/// with either.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sharpening {
    pub beta: Option<f64>,
    pub top_k: Option<usize>,
    pub window: Option<usize>,
}

impl Sharpening {
    /// The normalizer for a model trained with `base`.
    pub fn apply(&self, base: Normalizer) -> Result<NormalizerConfig> {
        let mode = match (self.beta, self.top_k) {
            (Some(_), Some(_)) => return Err(Error::Config("beta and top-k sharpening are mutually exclusive".into())),
            (None, None) => base,
            _ if base == Normalizer::Smoothing => {
                return Err(Error::Config("beta and top-k sharpening do not apply to a smoothing model".into()))
            }
            (Some(b), None) => Normalizer::Temperature(b),
            (None, Some(k)) => Normalizer::TopK(k),
        };
        let cfg = NormalizerConfig::new(mode).with_window(self.window);
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    pub beam: BeamConfig,
    pub sharpening: Sharpening,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Frames added on each side of a segment when judging an alignment.
    pub slack: usize,
    /// Fraction of attention weight that must fall inside the window.
    pub mass: f64,
    pub max_concat: usize,
    /// Pause frames inserted between concatenated utterances.
    pub pause_frames: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            slack: 20,
            mass: 0.9,
            max_concat: 15,
            pause_frames: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub attention: AttentionMode,
    /// Hard cap on updates across all training stages.
    pub max_total_updates: usize,
    pub model: ModelConfig,
    pub synth: SynthTaskConfig,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub decode: DecodeConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            attention: AttentionMode::Conv,
            max_total_updates: 20_000,
            model: ModelConfig::default(),
            synth: SynthTaskConfig::default(),
            data: DataConfig::default(),
            train: TrainConfig::default(),
            decode: DecodeConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.set_seed(cfg.seed);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is serializable")
    }

    /// Sets the run seed and the section seeds derived from it.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.synth.seed = seed;
        self.train.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.train.validate()?;
        self.decode.beam.validate()?;
        let m = &self.model;
        if self.attention.uses_conv() && (m.conv_k == 0 || m.conv_r == 0 || m.conv_r % 2 == 0) {
            return Err(Error::Config("convolutional attention needs conv_k ≥ 1 and an odd conv_r".into()));
        }
        if !(self.eval.mass > 0.0 && self.eval.mass <= 1.0) {
            return Err(Error::Config("alignment mass must lie in (0, 1]".into()));
        }
        if self.data.n_train == 0 || self.data.n_dev == 0 {
            return Err(Error::Config("n_train and n_dev must be positive".into()));
        }
        Ok(())
    }

    pub fn conv(&self) -> Option<ConvShape> {
        self.attention.uses_conv().then_some(ConvShape {
            k: self.model.conv_k,
            r: self.model.conv_r,
        })
    }

    pub fn dims(&self, d_in: usize, vocab: usize, eos: usize) -> Result<ModelDims> {
        let m = &self.model;
        let dims = ModelDims {
            d_in,
            enc_hidden: m.enc_hidden,
            enc_layers: m.enc_layers,
            n_att: m.n_att,
            conv: self.conv(),
            gen_hidden: m.gen_hidden,
            d_emb: m.d_emb,
            maxout_units: m.maxout_units,
            maxout_pool: m.maxout_pool,
            vocab,
            eos,
        };
        dims.validate()?;
        Ok(dims)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
    }

    #[test]
    fn sections_and_seed() {
        let cfg = RunConfig::parse(
            "seed = 7\nattention = \"conv+smoothing\"\n[model]\nconv_r = 11\n[decode.beam]\ninitial_width = 2\nmax_width = 8\n",
        )
        .unwrap();
        assert_eq!(cfg.attention, AttentionMode::ConvSmoothing);
        assert_eq!(cfg.model.conv_r, 11);
        assert_eq!(cfg.decode.beam.schedule(), vec![2, 4, 8]);
        assert_eq!((cfg.synth.seed, cfg.train.seed), (7, 7));
        assert_eq!(RunConfig::parse(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(RunConfig::parse("bogus = 1").is_err());
        assert!(RunConfig::parse("[model]\nconv_r = 4").is_err());
        assert!(RunConfig::parse("attention = \"content\"\n[model]\nconv_r = 4").is_ok());
        assert!(RunConfig::parse("[train]\nrho = 1.0").is_err());
    }

    #[test]
    fn sharpening_rules() {
        let s = Sharpening { beta: Some(2.0), top_k: Some(3), window: None };
        assert!(s.apply(Normalizer::Softmax).is_err());
        let s = Sharpening { top_k: Some(1), window: Some(5), ..Default::default() };
        assert_eq!(s.apply(Normalizer::Softmax).unwrap(), NormalizerConfig::new(Normalizer::TopK(1)).with_window(Some(5)));
        assert!(s.apply(Normalizer::Smoothing).is_err());
        let w = Sharpening { window: Some(3), ..Default::default() };
        assert_eq!(w.apply(Normalizer::Smoothing).unwrap().mode, Normalizer::Smoothing);
    }

    #[test]
    fn mode_names_round_trip() {
        for m in AttentionMode::ALL {
            assert_eq!(m.to_string().parse::<AttentionMode>().unwrap(), m);
        }
    }
}
