//! Initialization, AdaDelta, norm constraints, weight noise and the staged
//! training schedule.
//!
//! The schedule has three stages:
//!
//! * **A**: column-norm constrained AdaDelta (`ε = 1e-8`), stopped early on
//!   development NLL;
//! * **B**: weight noise on, norm constraint off, again stopped on dev NLL;
//! * **C**: fine-tuning with `ε = 1e-10`, stopped after `per_patience`
//!   updates without a greedy dev error-rate improvement.
//!
//! Each stage ends by restoring its best parameters. Updates use one
//! utterance at a time and the whole loop is deterministic under the seed.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attention::NormalizerConfig;
use crate::checkpoint::ModelBundle;
use crate::data::Utterance;
use crate::decoding::{decode_features, BeamConfig};
use crate::error::{Error, Result};
use crate::eval::{score_utterance, SymbolMap};
use crate::model::{Arsg, ModelDims, ParamKind};
use crate::params::{Gradients, ParamSet};
use crate::tensor::Tensor;

/// Draws a parameter set: weights ~ N(0, std²), square recurrent matrices
/// orthogonal, biases and initial states zero.
pub fn init_params(dims: &ModelDims, std: f64, seed: u64) -> Result<ParamSet> {
    let mut set = dims.declare()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, std).map_err(|e| Error::Config(format!("init std: {e}")))?;
    for p in set.iter_mut() {
        match dims.kind_of(&p.name) {
            ParamKind::Weight => {
                for v in p.value.data_mut() {
                    *v = normal.sample(&mut rng);
                }
            }
            ParamKind::Recurrent => p.value = random_orthogonal(p.value.rows(), &mut rng),
            ParamKind::Bias | ParamKind::InitialState => {}
        }
    }
    Ok(set)
}

/// Q factor of a standard Gaussian matrix, with columns signed so that R
/// has a positive diagonal.
pub fn random_orthogonal(n: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let m = DMatrix::from_fn(n, n, |_, _| std.sample(rng));
    let qr = m.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let data = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| q[(i, j)]).collect();
    Tensor::from_parts(vec![n, n], data)
}

/// AdaDelta accumulators and hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaDelta {
    pub rho: f64,
    pub eps: f64,
    pub sq_grad: IndexMap<String, Vec<f64>>,
    pub sq_delta: IndexMap<String, Vec<f64>>,
}

impl AdaDelta {
    pub fn new(params: &ParamSet, rho: f64, eps: f64) -> Result<Self> {
        if !(rho > 0.0 && rho < 1.0) || !(eps > 0.0) {
            return Err(Error::Config(format!("AdaDelta needs 0 < ρ < 1 and ε > 0, got ρ={rho} ε={eps}")));
        }
        let zeros = || params.iter().map(|p| (p.name.clone(), vec![0.0; p.value.len()])).collect();
        Ok(AdaDelta {
            rho,
            eps,
            sq_grad: zeros(),
            sq_delta: zeros(),
        })
    }

    /// Applies one update in place. A non-finite gradient skips the update
    /// and returns `false`.
    pub fn update(&mut self, params: &mut ParamSet, grads: &Gradients) -> Result<bool> {
        if !grads.is_finite() {
            log::warn!("non-finite gradient, update skipped");
            return Ok(false);
        }
        let (rho, eps) = (self.rho, self.eps);
        for (name, g) in grads.iter() {
            let (Some(eg), Some(ed)) = (self.sq_grad.get_mut(name), self.sq_delta.get_mut(name)) else {
                return Err(Error::contract(format!("optimizer has no state for {name}")));
            };
            let value = params.value_mut(name)?;
            for (((x, &gi), a), b) in value.data_mut().iter_mut().zip(g.data()).zip(eg.iter_mut()).zip(ed.iter_mut()) {
                *a = rho * *a + (1.0 - rho) * gi * gi;
                let dx = -((*b + eps).sqrt() / (*a + eps).sqrt()) * gi;
                *b = rho * *b + (1.0 - rho) * dx * dx;
                *x += dx;
            }
        }
        Ok(true)
    }

    fn to_params(&self, set: &mut ParamSet) -> Result<()> {
        for (name, v) in &self.sq_grad {
            set.insert(format!("opt.g2.{name}"), Tensor::vector(v.clone()))?;
        }
        for (name, v) in &self.sq_delta {
            set.insert(format!("opt.dx2.{name}"), Tensor::vector(v.clone()))?;
        }
        Ok(())
    }

    fn load_from(&mut self, set: &ParamSet) -> Result<()> {
        for (prefix, map) in [("opt.g2.", &mut self.sq_grad), ("opt.dx2.", &mut self.sq_delta)] {
            for (name, v) in map.iter_mut() {
                let t = set.value(&format!("{prefix}{name}"))?;
                if t.len() != v.len() {
                    return Err(Error::Config(format!("optimizer state for {name} has the wrong size")));
                }
                v.copy_from_slice(t.data());
            }
        }
        Ok(())
    }
}

/// Rescales every matrix column whose norm exceeds `max_norm` to `max_norm`.
/// Rank-1 parameters are exempt.
pub fn clip_column_norms(params: &mut ParamSet, max_norm: f64) {
    for p in params.iter_mut() {
        if p.value.rank() != 2 {
            continue;
        }
        let (rows, cols) = (p.value.rows(), p.value.cols());
        let data = p.value.data_mut();
        for c in 0..cols {
            let norm = (0..rows).map(|r| data[r * cols + c].powi(2)).sum::<f64>().sqrt();
            if norm > max_norm + 1e-12 {
                let f = max_norm / norm;
                for r in 0..rows {
                    data[r * cols + c] *= f;
                }
            }
        }
    }
}

/// Scales gradients down to global norm `max_norm` if larger; returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut Gradients, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}

/// A copy of `params` with fresh N(0, σ²) noise on every value.
pub fn add_weight_noise(params: &ParamSet, std: f64, rng: &mut ChaCha8Rng) -> ParamSet {
    let mut noisy = params.clone();
    if std == 0.0 {
        return noisy;
    }
    let normal = Normal::new(0.0, std).expect("nonnegative std");
    for p in noisy.iter_mut() {
        for v in p.value.data_mut() {
            *v += normal.sample(rng);
        }
    }
    noisy
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub rho: f64,
    pub eps: f64,
    pub eps_finetune: f64,
    /// Column-norm limit in stage A; `None` disables it.
    pub max_column_norm: Option<f64>,
    pub weight_noise: f64,
    pub grad_clip: f64,
    pub init_std: f64,
    /// Set from the run seed, not from config files.
    #[serde(skip)]
    pub seed: u64,
    /// Updates between log records and dev evaluations.
    pub eval_every: usize,
    /// Dev evaluations without NLL improvement that end stages A and B.
    pub nll_patience: usize,
    /// Updates without dev error-rate improvement that end stage C.
    pub per_patience: usize,
    /// Update caps per stage.
    pub max_updates: [usize; 3],
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            rho: 0.95,
            eps: 1e-8,
            eps_finetune: 1e-10,
            max_column_norm: Some(1.0),
            weight_noise: 0.01,
            grad_clip: 50.0,
            init_std: 0.01,
            seed: 1,
            eval_every: 1000,
            nll_patience: 3,
            per_patience: 100_000,
            max_updates: [1_000_000_000; 3],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho < 1.0) || !(self.eps > 0.0) || !(self.eps_finetune > 0.0) {
            return Err(Error::Config("AdaDelta needs 0 < ρ < 1 and ε > 0".into()));
        }
        if self.eval_every == 0 || self.nll_patience == 0 {
            return Err(Error::Config("eval_every and nll_patience must be positive".into()));
        }
        if !(self.weight_noise >= 0.0) || !(self.init_std > 0.0) || !(self.grad_clip > 0.0) {
            return Err(Error::Config("weight noise must be ≥ 0; init std and gradient clip > 0".into()));
        }
        if matches!(self.max_column_norm, Some(m) if !(m > 0.0)) {
            return Err(Error::Config("max column norm must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stage {
    A,
    B,
    C,
}

impl Stage {
    fn index(self) -> usize {
        self as usize
    }

    fn from_index(i: usize) -> Result<Stage> {
        [Stage::A, Stage::B, Stage::C]
            .get(i)
            .copied()
            .ok_or_else(|| Error::Config(format!("bad stage index {i}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub updates: usize,
    pub stage: Stage,
    pub train_nll: f64,
    pub dev_nll: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dev_per: Option<f64>,
}

/// Counters that together with parameters and optimizer state make a run
/// resumable.
#[derive(Clone, Debug, PartialEq)]
struct Progress {
    updates: usize,
    stage: Stage,
    stage_updates: usize,
    best_nll: f64,
    best_per: f64,
    /// Evaluations (A, B) or updates (C) since the last improvement.
    since_best: usize,
    epoch: usize,
    cursor: usize,
    window_loss: f64,
    window_count: usize,
    done: bool,
}

impl Progress {
    fn to_vec(&self) -> Vec<f64> {
        vec![
            self.updates as f64,
            self.stage.index() as f64,
            self.stage_updates as f64,
            self.best_nll,
            self.best_per,
            self.since_best as f64,
            self.epoch as f64,
            self.cursor as f64,
            self.window_loss,
            self.window_count as f64,
            f64::from(u8::from(self.done)),
        ]
    }

    fn from_vec(v: &[f64]) -> Result<Self> {
        if v.len() != 11 {
            return Err(Error::Config("malformed trainer state".into()));
        }
        Ok(Progress {
            updates: v[0] as usize,
            stage: Stage::from_index(v[1] as usize)?,
            stage_updates: v[2] as usize,
            best_nll: v[3],
            best_per: v[4],
            since_best: v[5] as usize,
            epoch: v[6] as usize,
            cursor: v[7] as usize,
            window_loss: v[8],
            window_count: v[9] as usize,
            done: v[10] != 0.0,
        })
    }
}

/// Files written during training.
pub const LOG_FILE: &str = "train.jsonl";
pub const LATEST_CKPT: &str = "latest.ckpt";
pub const BEST_CKPT: &str = "best.ckpt";
pub const FINAL_CKPT: &str = "model.ckpt";
pub const DIAGNOSTIC_CKPT: &str = "diagnostic.ckpt";

/// The staged training loop over processed utterances (features standardized
/// with end frame, targets without eos).
pub struct Trainer<'a> {
    pub bundle: ModelBundle,
    cfg: TrainConfig,
    train: &'a [Utterance],
    dev: &'a [Utterance],
    beam: BeamConfig,
    opt: AdaDelta,
    best: ParamSet,
    progress: Progress,
    log: Vec<LogRecord>,
    out_dir: Option<PathBuf>,
}

impl<'a> Trainer<'a> {
    /// Starts a run from freshly initialized parameters.
    pub fn new(mut bundle: ModelBundle, cfg: TrainConfig, train: &'a [Utterance], dev: &'a [Utterance]) -> Result<Self> {
        cfg.validate()?;
        if train.is_empty() || dev.is_empty() {
            return Err(Error::contract("training and development sets must be nonempty"));
        }
        bundle.model.params = init_params(&bundle.model.dims, cfg.init_std, cfg.seed)?;
        let opt = AdaDelta::new(&bundle.model.params, cfg.rho, cfg.eps)?;
        Ok(Trainer {
            best: bundle.model.params.clone(),
            bundle,
            cfg,
            train,
            dev,
            beam: BeamConfig::fixed(1),
            opt,
            progress: Progress {
                updates: 0,
                stage: Stage::A,
                stage_updates: 0,
                best_nll: f64::INFINITY,
                best_per: f64::INFINITY,
                since_best: 0,
                epoch: 0,
                cursor: 0,
                window_loss: 0.0,
                window_count: 0,
                done: false,
            },
            log: Vec::new(),
            out_dir: None,
        })
    }

    /// Continues a run from a `latest.ckpt` written by an earlier trainer.
    pub fn resume(path: impl AsRef<Path>, cfg: TrainConfig, train: &'a [Utterance], dev: &'a [Utterance]) -> Result<Self> {
        let set = ParamSet::load(path)?;
        let bundle = ModelBundle::from_param_set(&set)?;
        let mut t = Trainer::new(bundle.clone(), cfg, train, dev)?;
        t.bundle = bundle;
        t.opt = AdaDelta::new(&t.bundle.model.params, t.cfg.rho, t.cfg.eps)?;
        t.opt.load_from(&set)?;
        t.progress = Progress::from_vec(set.value("train.progress")?.data())?;
        if t.progress.stage == Stage::C {
            t.opt.eps = t.cfg.eps_finetune;
        }
        let best = set.filtered(|n| n.starts_with("best."));
        t.best = t.bundle.model.params.clone();
        for p in t.best.iter_mut() {
            p.value = best.value(&format!("best.{}", p.name))?.clone();
        }
        Ok(t)
    }

    /// Writes log records and checkpoints under `dir`.
    pub fn with_output(mut self, dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::file(&dir, e))?;
        self.out_dir = Some(dir);
        Ok(self)
    }

    /// Beam settings for the greedy dev error rate (width is forced to 1).
    pub fn with_dev_beam(mut self, beam: BeamConfig) -> Self {
        self.beam = BeamConfig {
            initial_width: 1,
            max_width: 1,
            ..beam
        };
        self
    }

    pub fn log(&self) -> &[LogRecord] {
        &self.log
    }

    pub fn updates(&self) -> usize {
        self.progress.updates
    }

    pub fn stage(&self) -> Stage {
        self.progress.stage
    }

    pub fn is_done(&self) -> bool {
        self.progress.done
    }

    fn norm(&self) -> NormalizerConfig {
        NormalizerConfig::new(self.bundle.normalizer())
    }

    fn eos(&self) -> usize {
        self.bundle.model.dims.eos
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(stream);
        rng
    }

    fn order(&self, epoch: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.train.len()).collect();
        idx.shuffle(&mut self.rng(2 * epoch as u64 + 2));
        idx
    }

    /// Mean per-utterance dev NLL of `params`.
    pub fn dev_nll(&self, params: &ParamSet) -> Result<f64> {
        let model = &self.bundle.model;
        let norm = self.norm();
        let eos = self.eos();
        let losses: Vec<f64> = self
            .dev
            .par_iter()
            .map(|u| model.nll_with(params, &u.features, &u.targets_with_eos(eos), &norm))
            .collect::<Result<_>>()?;
        Ok(losses.iter().sum::<f64>() / losses.len() as f64)
    }

    /// Greedy dev error rate of `params`; failed decodes count as wrong.
    pub fn dev_per(&self, params: &ParamSet) -> Result<f64> {
        let model = Arsg {
            dims: self.bundle.model.dims.clone(),
            params: params.clone(),
        };
        let map = SymbolMap::identity(self.eos());
        let norm = self.norm();
        let counts: Vec<(usize, usize)> = self
            .dev
            .par_iter()
            .map(|u| {
                let hyp = match decode_features(&model, &u.features, norm, &self.beam) {
                    Ok(d) => Some(d.symbols),
                    Err(Error::NoEos { .. }) => None,
                    Err(e) => return Err(e),
                };
                let e = score_utterance(&u.targets, hyp.as_deref(), &map)?;
                Ok((e.errors, e.ref_len))
            })
            .collect::<Result<_>>()?;
        let (err, total) = counts.iter().fold((0, 0), |(a, b), (e, n)| (a + e, b + n));
        Ok(err as f64 / total as f64)
    }

    /// One update. Returns `false` once the schedule has finished.
    pub fn step(&mut self) -> Result<bool> {
        if self.progress.done {
            return Ok(false);
        }
        let order = self.order(self.progress.epoch);
        let utt = &self.train[order[self.progress.cursor]];
        self.progress.cursor += 1;
        if self.progress.cursor == order.len() {
            self.progress.cursor = 0;
            self.progress.epoch += 1;
        }

        let noisy = self.progress.stage != Stage::A && self.cfg.weight_noise > 0.0;
        let params = if noisy {
            let mut rng = self.rng(2 * self.progress.updates as u64 + 1);
            add_weight_noise(&self.bundle.model.params, self.cfg.weight_noise, &mut rng)
        } else {
            self.bundle.model.params.clone()
        };
        let y = utt.targets_with_eos(self.eos());
        let result = self.bundle.model.loss_and_grads(&params, &utt.features, &y, &self.norm());
        let (loss, mut grads) = match result {
            Ok(r) if r.0.is_finite() => r,
            Ok((loss, _)) => return self.abort(Error::NumericFault { op: format!("training loss {loss}") }),
            Err(e @ Error::NumericFault { .. }) => return self.abort(e),
            Err(e) => return Err(e),
        };
        clip_global_norm(&mut grads, self.cfg.grad_clip);
        self.opt.update(&mut self.bundle.model.params, &grads)?;
        if self.progress.stage == Stage::A {
            if let Some(m) = self.cfg.max_column_norm {
                clip_column_norms(&mut self.bundle.model.params, m);
            }
        }
        self.progress.updates += 1;
        self.progress.stage_updates += 1;
        self.progress.window_loss += loss;
        self.progress.window_count += 1;

        if self.progress.updates % self.cfg.eval_every == 0 {
            self.evaluate(true)?;
        }
        Ok(!self.progress.done)
    }

    fn abort<T>(&self, err: Error) -> Result<T> {
        if let Some(dir) = &self.out_dir {
            let path = dir.join(DIAGNOSTIC_CKPT);
            log::error!("{err}; writing {}", path.display());
            self.bundle.save(&path)?;
        }
        Err(err)
    }

    /// Dev evaluation, log record, checkpoints and stage transitions.
    fn evaluate(&mut self, transitions: bool) -> Result<()> {
        let params = self.bundle.model.params.clone();
        let dev_nll = self.dev_nll(&params)?;
        let stage = self.progress.stage;
        let mut dev_per = None;
        let cap = self.cfg.max_updates[stage.index()];
        let mut finish_stage = match stage {
            Stage::A | Stage::B => {
                if dev_nll < self.progress.best_nll {
                    self.progress.best_nll = dev_nll;
                    self.progress.since_best = 0;
                    self.new_best()?;
                } else {
                    self.progress.since_best += 1;
                }
                self.progress.since_best >= self.cfg.nll_patience
            }
            Stage::C => {
                let per = self.dev_per(&params)?;
                dev_per = Some(per);
                if per < self.progress.best_per {
                    self.progress.best_per = per;
                    self.progress.since_best = 0;
                    self.new_best()?;
                } else {
                    self.progress.since_best += self.progress.window_count;
                }
                self.progress.since_best >= self.cfg.per_patience
            }
        };
        finish_stage |= self.progress.stage_updates >= cap;
        finish_stage &= transitions;

        let record = LogRecord {
            updates: self.progress.updates,
            stage,
            train_nll: self.progress.window_loss / self.progress.window_count.max(1) as f64,
            dev_nll,
            dev_per,
        };
        log::info!(
            "update {} stage {:?} train {:.4} dev {:.4}{}",
            record.updates,
            record.stage,
            record.train_nll,
            record.dev_nll,
            record.dev_per.map(|p| format!(" per {p:.4}")).unwrap_or_default()
        );
        self.progress.window_loss = 0.0;
        self.progress.window_count = 0;
        if let Some(dir) = &self.out_dir {
            let path = dir.join(LOG_FILE);
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .map_err(|e| Error::file(&path, e))?;
            writeln!(f, "{}", serde_json::to_string(&record)?).map_err(|e| Error::file(&path, e))?;
        }
        self.log.push(record);

        if finish_stage {
            self.bundle.model.params = self.best.clone();
            self.progress.stage_updates = 0;
            self.progress.since_best = 0;
            match stage {
                Stage::A => self.progress.stage = Stage::B,
                Stage::B => {
                    self.progress.stage = Stage::C;
                    self.opt.eps = self.cfg.eps_finetune;
                    self.progress.best_per = self.dev_per(&self.best)?;
                }
                Stage::C => self.finish()?,
            }
        }
        self.save_latest()
    }

    fn new_best(&mut self) -> Result<()> {
        self.best = self.bundle.model.params.clone();
        if let Some(dir) = &self.out_dir {
            self.bundle.save(dir.join(BEST_CKPT))?;
        }
        Ok(())
    }

    fn finish(&mut self) -> Result<()> {
        self.progress.done = true;
        if let Some(dir) = &self.out_dir {
            self.bundle.save(dir.join(FINAL_CKPT))?;
        }
        Ok(())
    }

    /// Full resumable state.
    pub fn state_param_set(&self) -> Result<ParamSet> {
        let mut set = self.bundle.to_param_set()?;
        self.opt.to_params(&mut set)?;
        for p in self.best.iter() {
            set.insert(format!("best.{}", p.name), p.value.clone())?;
        }
        set.insert("train.progress", Tensor::vector(self.progress.to_vec()))?;
        Ok(set)
    }

    fn save_latest(&self) -> Result<()> {
        if let Some(dir) = &self.out_dir {
            self.state_param_set()?.save(dir.join(LATEST_CKPT))?;
        }
        Ok(())
    }

    /// Runs until the schedule finishes or `limit` total updates are reached.
    /// A final partial log window is flushed when the schedule ends early on
    /// the limit.
    pub fn run_until(&mut self, limit: usize) -> Result<()> {
        while self.progress.updates < limit && self.step()? {}
        Ok(())
    }

    /// Runs the full schedule, with a hard cap on total updates.
    pub fn run(&mut self, max_total: usize) -> Result<()> {
        self.run_until(max_total)?;
        if !self.progress.done {
            if self.progress.window_count > 0 {
                self.evaluate(false)?;
            }
            self.bundle.model.params = self.best.clone();
            self.finish()?;
            self.save_latest()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orthogonal_recurrent_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [1, 3, 16] {
            let q = random_orthogonal(n, &mut rng);
            for i in 0..n {
                for j in 0..n {
                    let dot: f64 = (0..n).map(|k| q.at(k, i) * q.at(k, j)).sum();
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((dot - want).abs() < 1e-10);
                }
            }
        }
    }

    fn dims() -> ModelDims {
        ModelDims {
            d_in: 3,
            enc_hidden: 4,
            enc_layers: 1,
            n_att: 4,
            conv: None,
            gen_hidden: 256,
            d_emb: 2,
            maxout_units: 2,
            maxout_pool: 2,
            vocab: 4,
            eos: 0,
        }
    }

    #[test]
    fn init_is_seeded_and_structured() {
        let d = dims();
        let a = init_params(&d, 0.01, 5).unwrap();
        assert_eq!(a, init_params(&d, 0.01, 5).unwrap());
        assert_ne!(a, init_params(&d, 0.01, 6).unwrap());
        assert!(a.value("gen.gru.b_z").unwrap().data().iter().all(|v| *v == 0.0));
        assert!(a.value("gen.s0").unwrap().data().iter().all(|v| *v == 0.0));
        let w = a.value("gen.gru.W_z").unwrap();
        assert!(w.data().iter().any(|v| *v != 0.0));
    }

    #[test]
    fn init_std_of_a_large_block() {
        // 256×256 recurrent blocks are orthogonal; att.W is n_att×256, so use
        // the generator input weights of a model wide enough to give 65536
        // draws from one non-recurrent block.
        let d = ModelDims { d_emb: 256 - 8, ..dims() };
        let p = init_params(&d, 0.01, 11).unwrap();
        let w = p.value("gen.gru.W_c").unwrap();
        assert_eq!(w.shape(), &[256, 256]);
        let n = w.len() as f64;
        let mean = w.data().iter().sum::<f64>() / n;
        let sd = (w.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!((sd - 0.01).abs() < 0.002, "{sd}");
    }

    fn one_param(v: Vec<f64>) -> ParamSet {
        let mut s = ParamSet::new();
        s.insert("x", Tensor::vector(v)).unwrap();
        s
    }

    fn grads(set: &ParamSet, g: Vec<f64>) -> Gradients {
        let mut gr = Gradients::zeros_like(set);
        gr.get_mut("x").unwrap().data_mut().copy_from_slice(&g);
        gr
    }

    #[test]
    fn adadelta_examples() {
        let mut p = one_param(vec![0.3, -1.5]);
        let before = p.clone();
        let mut opt = AdaDelta::new(&p, 0.95, 1e-8).unwrap();
        assert!(opt.update(&mut p, &grads(&before, vec![0.0, 0.0])).unwrap());
        assert_eq!(p, before);
        assert!(opt.sq_grad["x"].iter().all(|v| *v == 0.0));

        let mut p = one_param(vec![0.0]);
        let mut opt = AdaDelta::new(&p, 0.95, 1e-8).unwrap();
        opt.update(&mut p, &grads(&one_param(vec![0.0]), vec![1.0])).unwrap();
        let dx = p.value("x").unwrap().data()[0];
        let want = -(1e-8f64).sqrt() / (0.05f64 + 1e-8).sqrt();
        assert!((dx - want).abs() < 1e-15);
        assert!((dx + 4.4721e-4).abs() < 1e-8);

        let mut q = one_param(vec![0.0]);
        let mut opt = AdaDelta::new(&q, 0.95, 1e-8).unwrap();
        opt.update(&mut q, &grads(&one_param(vec![0.0]), vec![10.0])).unwrap();
        let dx10 = q.value("x").unwrap().data()[0];
        assert!(((dx10 - dx) / dx).abs() < 0.01);
    }

    #[test]
    fn adadelta_skips_non_finite_gradients() {
        let mut p = one_param(vec![1.0]);
        let before = p.clone();
        let mut opt = AdaDelta::new(&p, 0.95, 1e-8).unwrap();
        assert!(!opt.update(&mut p, &grads(&before, vec![f64::NAN])).unwrap());
        assert_eq!(p, before);
    }

    #[test]
    fn column_norm_examples() {
        let mut s = ParamSet::new();
        s.insert("W", Tensor::matrix(2, 2, vec![3.0, 0.1, 4.0, 0.1]).unwrap()).unwrap();
        s.insert("b", Tensor::vector(vec![30.0, 40.0])).unwrap();
        clip_column_norms(&mut s, 1.0);
        let w = s.value("W").unwrap();
        assert!((w.at(0, 0) - 0.6).abs() < 1e-15 && (w.at(1, 0) - 0.8).abs() < 1e-15);
        assert_eq!((w.at(0, 1), w.at(1, 1)), (0.1, 0.1));
        assert_eq!(s.value("b").unwrap().data(), &[30.0, 40.0]);
        let once = s.clone();
        clip_column_norms(&mut s, 1.0);
        assert_eq!(s, once);
    }

    #[test]
    fn weight_noise_examples() {
        let p = one_param(vec![0.5, -0.25, 1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(add_weight_noise(&p, 0.0, &mut rng), p);
        let a = add_weight_noise(&p, 0.1, &mut ChaCha8Rng::seed_from_u64(2));
        let b = add_weight_noise(&p, 0.1, &mut ChaCha8Rng::seed_from_u64(2));
        assert_eq!(a, b);
        assert_ne!(a, p);

        let f = |s: &ParamSet| s.value("x").unwrap().data().iter().map(|v| v * v).sum::<f64>();
        let clean = f(&p);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mean = (0..1000).map(|_| f(&add_weight_noise(&p, 0.1, &mut rng))).sum::<f64>() / 1000.0;
        assert!(mean >= clean);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn column_norms_bounded(vals in proptest::collection::vec(-10.0f64..10.0, 12), max in 0.1f64..5.0) {
                let mut s = ParamSet::new();
                s.insert("W", Tensor::matrix(3, 4, vals).unwrap()).unwrap();
                clip_column_norms(&mut s, max);
                let w = s.value("W").unwrap();
                for c in 0..4 {
                    let n = (0..3).map(|r| w.at(r, c).powi(2)).sum::<f64>().sqrt();
                    prop_assert!(n <= max + 1e-12);
                }
            }
        }
    }
}
