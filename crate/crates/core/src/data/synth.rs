use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Segment, SymbolTable, Utterance};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A toy transduction task: each symbol emits a run of noisy copies of its
/// prototype vector.
///
/// Task symbols are the pause plus `symbols − 1` content symbols; in the
/// symbol table they follow `eos` and `sos`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthTaskConfig {
    /// Task symbols including the pause.
    pub symbols: usize,
    pub dim: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    pub noise_std: f64,
    pub prototype_std: f64,
    pub min_len: usize,
    pub max_len: usize,
    /// Set from the run seed, not from config files.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for SynthTaskConfig {
    fn default() -> Self {
        SynthTaskConfig {
            symbols: 10,
            dim: 8,
            min_frames: 2,
            max_frames: 5,
            noise_std: 0.5,
            prototype_std: 1.0,
            min_len: 5,
            max_len: 15,
            seed: 1,
        }
    }
}

impl SynthTaskConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(Error::Config(m.to_string()));
        if self.symbols < 2 {
            return err("the task needs a pause and at least one content symbol");
        }
        if self.dim == 0 {
            return err("feature dimension must be positive");
        }
        if self.min_frames == 0 || self.min_frames > self.max_frames {
            return err("frames per symbol must satisfy 1 ≤ min ≤ max");
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return err("symbols per utterance must satisfy 1 ≤ min ≤ max");
        }
        if self.symbols == 2 && self.max_len > 1 {
            return err("a single content symbol cannot form sequences without immediate repeats");
        }
        if !(self.noise_std >= 0.0) || !(self.prototype_std > 0.0) {
            return err("noise std must be nonnegative and prototype std positive");
        }
        Ok(())
    }

    pub fn symbol_table(&self) -> SymbolTable {
        SymbolTable::synthetic(self.symbols - 1)
    }

    /// Symbol-table id of the pause.
    pub fn pause_id(&self) -> usize {
        2
    }

    /// Average frames per emitted symbol.
    pub fn mean_frames(&self) -> f64 {
        (self.min_frames + self.max_frames) as f64 / 2.0
    }
}

/// Prototype vector per symbol-table id; `eos` and `sos` have none.
#[derive(Clone, Debug, PartialEq)]
pub struct Prototypes {
    pub vectors: Vec<Option<Vec<f64>>>,
}

impl Prototypes {
    /// Draws prototypes from the task seed.
    pub fn from_config(cfg: &SynthTaskConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let normal = Normal::new(0.0, cfg.prototype_std).expect("validated std");
        let mut vectors = vec![None, None];
        for _ in 0..cfg.symbols {
            vectors.push(Some((0..cfg.dim).map(|_| normal.sample(&mut rng)).collect()));
        }
        Prototypes { vectors }
    }

    pub fn get(&self, id: usize) -> Option<&[f64]> {
        self.vectors.get(id).and_then(|v| v.as_deref())
    }
}

/// Generates `n` utterances with prototypes drawn from the task seed.
pub fn synth_generate(cfg: &SynthTaskConfig, n: usize, prefix: &str, rng: &mut impl Rng) -> Result<Vec<Utterance>> {
    cfg.validate()?;
    synth_generate_with(cfg, &Prototypes::from_config(cfg), n, prefix, rng)
}

/// Generates `n` utterances with given prototypes.
///
/// Symbol sequences have no immediate repeats and start and end with a content
/// symbol; the pause may occur inside.
pub fn synth_generate_with(
    cfg: &SynthTaskConfig,
    protos: &Prototypes,
    n: usize,
    prefix: &str,
    rng: &mut impl Rng,
) -> Result<Vec<Utterance>> {
    cfg.validate()?;
    let pause = cfg.pause_id();
    let first = pause;
    let last = pause + cfg.symbols - 1;
    for id in first..=last {
        match protos.get(id) {
            Some(v) if v.len() == cfg.dim => {}
            _ => return Err(Error::Config(format!("missing or misshapen prototype for symbol {id}"))),
        }
    }
    let noise = Normal::new(0.0, cfg.noise_std.max(f64::MIN_POSITIVE)).expect("validated std");
    let mut out = Vec::with_capacity(n);
    for u in 0..n {
        let len = rng.random_range(cfg.min_len..=cfg.max_len);
        let mut targets: Vec<usize> = Vec::with_capacity(len);
        for i in 0..len {
            let edge = i == 0 || i + 1 == len;
            loop {
                let s = rng.random_range(first..=last);
                if (edge && s == pause) || targets.last() == Some(&s) {
                    continue;
                }
                targets.push(s);
                break;
            }
        }
        let mut data = Vec::new();
        let mut segments = Vec::with_capacity(len);
        let mut frame = 0;
        for &s in &targets {
            let dur = rng.random_range(cfg.min_frames..=cfg.max_frames);
            let proto = protos.get(s).expect("checked above");
            for _ in 0..dur {
                for &p in proto {
                    let e = if cfg.noise_std > 0.0 { noise.sample(rng) } else { 0.0 };
                    data.push(p + e);
                }
            }
            segments.push(Segment {
                symbol: s,
                start: frame,
                end: frame + dur - 1,
            });
            frame += dur;
        }
        out.push(Utterance {
            id: format!("{prefix}{u:05}"),
            features: Tensor::new(vec![frame, cfg.dim], data)?,
            targets,
            segments: Some(segments),
        });
    }
    Ok(out)
}

/// Train, dev and test splits drawn from one seeded stream, plus the raw
/// pause prototype.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpus {
    pub train: Vec<Utterance>,
    pub dev: Vec<Utterance>,
    pub test: Vec<Utterance>,
    pub pause: Vec<f64>,
}

pub fn synth_corpus(cfg: &SynthTaskConfig, n_train: usize, n_dev: usize, n_test: usize) -> Result<SynthCorpus> {
    cfg.validate()?;
    let protos = Prototypes::from_config(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    Ok(SynthCorpus {
        train: synth_generate_with(cfg, &protos, n_train, "train", &mut rng)?,
        dev: synth_generate_with(cfg, &protos, n_dev, "dev", &mut rng)?,
        test: synth_generate_with(cfg, &protos, n_test, "test", &mut rng)?,
        pause: protos.get(cfg.pause_id()).expect("pause prototype").to_vec(),
    })
}
