//! Self-describing model files: parameters plus the dimensions, attention
//! normalizer and feature pipeline needed to use them.
//!
//! Metadata rides in the same ARSGCKPT container as ordinary tensors under
//! `meta.` names, so any checkpoint reader can list it.

use std::path::Path;

use crate::attention::{ConvShape, Normalizer};
use crate::data::{FeaturePipeline, NormStats};
use crate::error::{Error, Result};
use crate::model::{Arsg, ModelDims};
use crate::params::ParamSet;
use crate::tensor::Tensor;

const META_DIMS: &str = "meta.dims";
const META_SMOOTHING: &str = "meta.smoothing";
const META_DELTAS: &str = "meta.norm.deltas";
const META_MEAN: &str = "meta.norm.mean";
const META_STD: &str = "meta.norm.std";
const META_PAUSE: &str = "meta.pause";

/// A trained model as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    pub model: Arsg,
    /// Whether the attention normalizer is sigmoid smoothing instead of softmax.
    pub smoothing: bool,
    pub pipeline: Option<FeaturePipeline>,
}

fn dims_to_vec(d: &ModelDims) -> Vec<f64> {
    let (k, r) = d.conv.map_or((0, 0), |c| (c.k, c.r));
    [
        d.d_in,
        d.enc_hidden,
        d.enc_layers,
        d.n_att,
        k,
        r,
        d.gen_hidden,
        d.d_emb,
        d.maxout_units,
        d.maxout_pool,
        d.vocab,
        d.eos,
    ]
    .iter()
    .map(|&v| v as f64)
    .collect()
}

fn dims_from_vec(v: &[f64]) -> Result<ModelDims> {
    if v.len() != 12 || v.iter().any(|x| x.fract() != 0.0 || *x < 0.0) {
        return Err(Error::Config("malformed model dimensions in checkpoint".into()));
    }
    let u: Vec<usize> = v.iter().map(|&x| x as usize).collect();
    Ok(ModelDims {
        d_in: u[0],
        enc_hidden: u[1],
        enc_layers: u[2],
        n_att: u[3],
        conv: (u[4] > 0).then_some(ConvShape { k: u[4], r: u[5] }),
        gen_hidden: u[6],
        d_emb: u[7],
        maxout_units: u[8],
        maxout_pool: u[9],
        vocab: u[10],
        eos: u[11],
    })
}

impl ModelBundle {
    pub fn normalizer(&self) -> Normalizer {
        if self.smoothing {
            Normalizer::Smoothing
        } else {
            Normalizer::Softmax
        }
    }

    /// Metadata entries only.
    pub fn meta(&self) -> Result<ParamSet> {
        let mut set = ParamSet::new();
        set.insert(META_DIMS, Tensor::vector(dims_to_vec(&self.model.dims)))?;
        set.insert(META_SMOOTHING, Tensor::scalar(f64::from(u8::from(self.smoothing))))?;
        if let Some(p) = &self.pipeline {
            set.insert(META_DELTAS, Tensor::scalar(f64::from(u8::from(p.deltas))))?;
            set.insert(META_MEAN, Tensor::vector(p.stats.mean.clone()))?;
            set.insert(META_STD, Tensor::vector(p.stats.std.clone()))?;
            if let Some(pause) = &p.pause {
                set.insert(META_PAUSE, Tensor::vector(pause.clone()))?;
            }
        }
        Ok(set)
    }

    /// Metadata followed by the model parameters.
    pub fn to_param_set(&self) -> Result<ParamSet> {
        let mut set = self.meta()?;
        for p in self.model.params.iter() {
            set.insert(p.name.clone(), p.value.clone())?;
        }
        Ok(set)
    }

    /// Reads a bundle from a checkpoint; entries under other prefixes
    /// (optimizer and trainer state) are ignored.
    pub fn from_param_set(set: &ParamSet) -> Result<Self> {
        let dims = dims_from_vec(
            set.value(META_DIMS)
                .map_err(|_| Error::Config("checkpoint has no model dimensions".into()))?
                .data(),
        )?;
        let smoothing = set.value(META_SMOOTHING).map(|t| t.data()[0] != 0.0).unwrap_or(false);
        let pipeline = match (set.value(META_MEAN), set.value(META_STD)) {
            (Ok(mean), Ok(std)) => Some(FeaturePipeline {
                deltas: set.value(META_DELTAS).map(|t| t.data()[0] != 0.0).unwrap_or(false),
                stats: NormStats {
                    mean: mean.data().to_vec(),
                    std: std.data().to_vec(),
                },
                pause: set.value(META_PAUSE).ok().map(|t| t.data().to_vec()),
            }),
            _ => None,
        };
        let params = set.filtered(|n| !n.starts_with("meta.") && !n.starts_with("opt.") && !n.starts_with("train.") && !n.starts_with("best."));
        Ok(ModelBundle {
            model: Arsg::from_params(dims, params)?,
            smoothing,
            pipeline,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_param_set()?.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_param_set(&ParamSet::load(path)?)
    }
}
