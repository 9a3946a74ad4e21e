//! The attention-based recurrent sequence generator.
//!
//! One output step, from state `(s_{i−1}, α_{i−1})`:
//!
//! ```text
//! α_i = Attend(s_{i−1}, α_{i−1}, h)
//! g_i = Σ_j α_{i,j} h_j
//! y_i ∼ softmax(O · maxout(s_{i−1} ‖ g_i) + o)
//! s_i = GRU(s_{i−1}, E[y_i] ‖ g_i)
//! ```
//!
//! The recurrency consumes the symbol emitted at the same step, so the
//! distribution at step `i` sees `y_{i−1}` only through `s_{i−1}`. `s_0` is a
//! learned vector and `α_0` is uniform.

use serde::{Deserialize, Serialize};

use crate::attention::{AlignmentVector, AttentionLayout, AttentionVars, ConvShape, NormalizerConfig};
use crate::cells::{EncoderLayout, GruLayout, GruVars, MaxoutLayout, MaxoutVars};
use crate::error::{Error, Result};
use crate::params::{Gradients, ParamSet};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const EMBEDDING: &str = "gen.emb";
pub const INITIAL_STATE: &str = "gen.s0";
pub const OUT_W: &str = "gen.out.W";
pub const OUT_B: &str = "gen.out.b";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDims {
    /// Input feature width.
    pub d_in: usize,
    /// Units per direction per encoder layer.
    pub enc_hidden: usize,
    pub enc_layers: usize,
    pub n_att: usize,
    /// Convolutional location features; `None` for content-based attention.
    pub conv: Option<ConvShape>,
    pub gen_hidden: usize,
    pub d_emb: usize,
    pub maxout_units: usize,
    pub maxout_pool: usize,
    pub vocab: usize,
    pub eos: usize,
}

impl ModelDims {
    /// The full-size network: 3×256 BiGRU encoder, 512 attention units,
    /// 256 generator units, 64 maxout units, `k = 10`, `r = 201`.
    pub fn full_scale(d_in: usize, vocab: usize, eos: usize) -> Self {
        ModelDims {
            d_in,
            enc_hidden: 256,
            enc_layers: 3,
            n_att: 512,
            conv: Some(ConvShape { k: 10, r: 201 }),
            gen_hidden: 256,
            d_emb: 64,
            maxout_units: 64,
            maxout_pool: 2,
            vocab,
            eos,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_in", self.d_in),
            ("enc_hidden", self.enc_hidden),
            ("enc_layers", self.enc_layers),
            ("n_att", self.n_att),
            ("gen_hidden", self.gen_hidden),
            ("d_emb", self.d_emb),
            ("maxout_units", self.maxout_units),
            ("maxout_pool", self.maxout_pool),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.vocab < 2 || self.eos >= self.vocab {
            return Err(Error::Config(format!(
                "vocabulary of {} cannot hold end-of-sequence id {}",
                self.vocab, self.eos
            )));
        }
        if let Some(c) = self.conv {
            if c.k == 0 || c.r % 2 == 0 {
                return Err(Error::Config(format!("conv features need k ≥ 1 and odd r, got k={} r={}", c.k, c.r)));
            }
        }
        Ok(())
    }

    pub fn d_h(&self) -> usize {
        2 * self.enc_hidden
    }

    pub fn encoder(&self) -> EncoderLayout {
        EncoderLayout::new(self.d_in, self.enc_hidden, self.enc_layers)
    }

    pub fn attention(&self) -> AttentionLayout {
        AttentionLayout {
            d_s: self.gen_hidden,
            d_h: self.d_h(),
            n_att: self.n_att,
            conv: self.conv,
        }
    }

    pub fn recurrency(&self) -> GruLayout {
        GruLayout::new("gen.gru", self.d_emb + self.d_h(), self.gen_hidden)
    }

    pub fn output_maxout(&self) -> MaxoutLayout {
        MaxoutLayout {
            prefix: "gen.maxout".into(),
            d_in: self.gen_hidden + self.d_h(),
            units: self.maxout_units,
            pool: self.maxout_pool,
        }
    }

    /// A zero-valued parameter set with every name and shape of the model.
    pub fn declare(&self) -> Result<ParamSet> {
        self.validate()?;
        let mut set = ParamSet::new();
        self.encoder().declare(&mut set)?;
        self.attention().declare(&mut set)?;
        self.recurrency().declare(&mut set)?;
        self.output_maxout().declare(&mut set)?;
        set.insert(OUT_W, Tensor::zeros(&[self.vocab, self.maxout_units]))?;
        set.insert(OUT_B, Tensor::zeros(&[self.vocab]))?;
        set.insert(EMBEDDING, Tensor::zeros(&[self.vocab, self.d_emb]))?;
        set.insert(INITIAL_STATE, Tensor::zeros(&[self.gen_hidden]))?;
        Ok(set)
    }

    /// Role of a parameter for initialization.
    pub fn kind_of(&self, name: &str) -> ParamKind {
        let field = name.rsplit('.').next().unwrap_or(name);
        if field == "s0" {
            ParamKind::InitialState
        } else if field.starts_with("U_") {
            ParamKind::Recurrent
        } else if field == "b" || field.starts_with("b_") {
            ParamKind::Bias
        } else {
            ParamKind::Weight
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    /// Square recurrent matrix.
    Recurrent,
    Bias,
    InitialState,
}

/// Recurrent state carried between output steps.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorState {
    pub s: Tensor,
    pub alpha: AlignmentVector,
    /// Symbols consumed so far.
    pub step: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutput {
    pub alpha: AlignmentVector,
    pub glimpse: Tensor,
    pub dist: Vec<f64>,
    pub next_state: GeneratorState,
    pub scores_evaluated: usize,
}

/// Parameters of the generator placed on one tape.
#[derive(Clone, Copy, Debug)]
pub struct GeneratorVars {
    pub att: AttentionVars,
    pub gru: GruVars,
    pub maxout: MaxoutVars,
    pub out_w: Var,
    pub out_b: Var,
    pub emb: Var,
    pub s0: Var,
}

/// Model dimensions plus parameter values.
#[derive(Clone, Debug, PartialEq)]
pub struct Arsg {
    pub dims: ModelDims,
    pub params: ParamSet,
}

impl Arsg {
    /// A model with every parameter zero.
    pub fn zeros(dims: ModelDims) -> Result<Self> {
        let params = dims.declare()?;
        Ok(Arsg { dims, params })
    }

    /// Wraps existing values, checking names and shapes.
    pub fn from_params(dims: ModelDims, params: ParamSet) -> Result<Self> {
        let expected = dims.declare()?;
        for p in expected.iter() {
            let v = params
                .value(&p.name)
                .map_err(|_| Error::Config(format!("checkpoint lacks parameter {}", p.name)))?;
            if v.shape() != p.value.shape() {
                return Err(Error::Config(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    p.name,
                    v.shape(),
                    p.value.shape()
                )));
            }
        }
        let params = params.filtered(|n| expected.contains(n));
        Ok(Arsg { dims, params })
    }

    pub fn bind(&self, tape: &mut Tape, params: &ParamSet) -> Result<GeneratorVars> {
        Ok(GeneratorVars {
            att: self.dims.attention().bind(tape, params)?,
            gru: self.dims.recurrency().bind(tape, params)?,
            maxout: self.dims.output_maxout().bind(tape, params)?,
            out_w: tape.param(params, OUT_W)?,
            out_b: tape.param(params, OUT_B)?,
            emb: tape.param(params, EMBEDDING)?,
            s0: tape.param(params, INITIAL_STATE)?,
        })
    }

    fn check_symbol(&self, y: usize) -> Result<()> {
        if y >= self.dims.vocab {
            return Err(Error::contract(format!("symbol {y} outside vocabulary of {}", self.dims.vocab)));
        }
        Ok(())
    }

    fn check_targets(&self, y: &[usize]) -> Result<()> {
        match y.last() {
            Some(&last) if last == self.dims.eos => {}
            _ => return Err(Error::contract("target sequence must end with end-of-sequence")),
        }
        y.iter().try_for_each(|&s| self.check_symbol(s))
    }

    fn check_features(&self, x: &Tensor) -> Result<()> {
        if x.rank() != 2 || x.cols() != self.dims.d_in || x.rows() == 0 {
            return Err(Error::Shape {
                op: "features",
                shapes: vec![x.shape().to_vec(), vec![0, self.dims.d_in]],
            });
        }
        Ok(())
    }

    /// Unnormalized output scores from `s_{i−1}` and `g_i`.
    pub fn logits_on_tape(&self, tape: &mut Tape, vars: &GeneratorVars, s_prev: Var, g: Var) -> Result<Var> {
        let sg = tape.concat(&[s_prev, g])?;
        let hidden = vars.maxout.apply(tape, sg)?;
        let o = tape.matmul(vars.out_w, hidden)?;
        tape.add(o, vars.out_b)
    }

    pub fn recurrency_on_tape(&self, tape: &mut Tape, vars: &GeneratorVars, s_prev: Var, g: Var, y: usize) -> Result<Var> {
        self.check_symbol(y)?;
        let e = tape.row(vars.emb, y)?;
        let x = tape.concat(&[e, g])?;
        vars.gru.step(tape, s_prev, x)
    }

    /// Encodes features and precomputes the attention projection of every frame.
    pub fn encode_on_tape(&self, tape: &mut Tape, params: &ParamSet, vars: &GeneratorVars, x: Var) -> Result<(Var, Var)> {
        let h = self.dims.encoder().encode(tape, params, x)?;
        let vh = vars.att.project_frames(tape, h)?;
        Ok((h, vh))
    }

    /// Teacher-forced negative log-likelihood of `y` (ending in eos) on a tape.
    pub fn nll_on_tape(&self, tape: &mut Tape, params: &ParamSet, x: &Tensor, y: &[usize], cfg: &NormalizerConfig) -> Result<Var> {
        self.check_features(x)?;
        self.check_targets(y)?;
        let vars = self.bind(tape, params)?;
        let xv = tape.constant(x.clone());
        let (h, vh) = self.encode_on_tape(tape, params, &vars, xv)?;
        let len = x.rows();
        let mut alpha = tape.constant(AlignmentVector::uniform(len).as_tensor().clone());
        let mut s = vars.s0;
        let mut picks = Vec::with_capacity(y.len());
        for (i, &sym) in y.iter().enumerate() {
            let att = vars.att.attend(tape, s, alpha, h, vh, cfg, i == 0)?;
            let logits = self.logits_on_tape(tape, &vars, s, att.glimpse)?;
            let logp = tape.log_softmax(logits)?;
            picks.push(tape.pick(logp, sym)?);
            if i + 1 < y.len() {
                s = self.recurrency_on_tape(tape, &vars, s, att.glimpse, sym)?;
                alpha = att.alpha;
            }
        }
        let all = tape.concat(&picks)?;
        let total = tape.sum(all)?;
        tape.scale(total, -1.0)
    }

    pub fn nll(&self, x: &Tensor, y: &[usize], cfg: &NormalizerConfig) -> Result<f64> {
        self.nll_with(&self.params, x, y, cfg)
    }

    pub fn nll_with(&self, params: &ParamSet, x: &Tensor, y: &[usize], cfg: &NormalizerConfig) -> Result<f64> {
        let mut tape = Tape::new();
        let loss = self.nll_on_tape(&mut tape, params, x, y, cfg)?;
        tape.value(loss).to_scalar()
    }

    /// Loss and gradients at `params`, which may differ from the stored
    /// values (weight noise evaluates at a perturbed copy).
    pub fn loss_and_grads(&self, params: &ParamSet, x: &Tensor, y: &[usize], cfg: &NormalizerConfig) -> Result<(f64, Gradients)> {
        let mut tape = Tape::new();
        let loss = self.nll_on_tape(&mut tape, params, x, y, cfg)?;
        let value = tape.value(loss).to_scalar()?;
        Ok((value, tape.backward(loss, params)?))
    }

    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        self.check_features(x)?;
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let h = self.dims.encoder().encode(&mut tape, &self.params, xv)?;
        Ok(tape.value(h).clone())
    }

    pub fn initial_state(&self, len: usize) -> Result<GeneratorState> {
        if len == 0 {
            return Err(Error::contract("cannot attend over zero frames"));
        }
        Ok(GeneratorState {
            s: self.params.value(INITIAL_STATE)?.clone(),
            alpha: AlignmentVector::uniform(len),
            step: 0,
        })
    }

    /// `softmax(O · maxout(s_prev ‖ g) + o)`.
    pub fn generate_dist(&self, s_prev: &Tensor, g: &Tensor) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, &self.params)?;
        let s = tape.constant(s_prev.clone());
        let gv = tape.constant(g.clone());
        let logits = self.logits_on_tape(&mut tape, &vars, s, gv)?;
        let lp = tape.log_softmax(logits)?;
        Ok(tape.value(lp).data().iter().map(|v| v.exp()).collect())
    }

    pub fn recurrency(&self, s_prev: &Tensor, g: &Tensor, y: usize) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, &self.params)?;
        let s = tape.constant(s_prev.clone());
        let gv = tape.constant(g.clone());
        let out = self.recurrency_on_tape(&mut tape, &vars, s, gv, y)?;
        Ok(tape.value(out).clone())
    }

    /// Starts step-by-step inference over an encoded sequence.
    pub fn session(&self, h: Tensor, cfg: NormalizerConfig) -> Result<Session<'_>> {
        cfg.validate()?;
        if h.rank() != 2 || h.cols() != self.dims.d_h() || h.rows() == 0 {
            return Err(Error::Shape {
                op: "session",
                shapes: vec![h.shape().to_vec()],
            });
        }
        let vt = self.params.value(crate::attention::V)?;
        let mut tape = Tape::new();
        let hv = tape.constant(h.clone());
        let v = tape.constant(vt.clone());
        let v_t = tape.transpose(v)?;
        let vh = tape.matmul(hv, v_t)?;
        let vh = tape.value(vh).clone();
        Ok(Session { model: self, h, vh, cfg })
    }

    pub fn step(&self, state: &GeneratorState, h: &Tensor, y_fed: usize, cfg: &NormalizerConfig) -> Result<StepOutput> {
        self.session(h.clone(), *cfg)?.step(state, y_fed)
    }

    /// Alignment matrix `[T, L]` while feeding the ground-truth symbols `y`
    /// (ending in eos).
    pub fn forced_align(&self, x: &Tensor, y: &[usize], cfg: &NormalizerConfig) -> Result<Tensor> {
        self.check_targets(y)?;
        let h = self.encode(x)?;
        let session = self.session(h, *cfg)?;
        let mut state = session.initial_state()?;
        let mut rows = Vec::with_capacity(y.len());
        for &sym in y {
            let (pending, _) = session.attend(&state)?;
            rows.push(pending.alpha.weights().to_vec());
            state = session.advance(&state, &pending, sym)?;
        }
        Tensor::from_rows(&rows)
    }
}

/// Attention result of one step, waiting for the emitted symbol.
#[derive(Clone, Debug, PartialEq)]
pub struct Pending {
    pub alpha: AlignmentVector,
    pub glimpse: Tensor,
    pub scores_evaluated: usize,
}

/// Inference over one encoded sequence with per-step tapes.
#[derive(Clone, Debug)]
pub struct Session<'a> {
    pub model: &'a Arsg,
    h: Tensor,
    vh: Tensor,
    pub cfg: NormalizerConfig,
}

impl Session<'_> {
    pub fn len(&self) -> usize {
        self.h.rows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn encoded(&self) -> &Tensor {
        &self.h
    }

    pub fn initial_state(&self) -> Result<GeneratorState> {
        self.model.initial_state(self.len())
    }

    /// Attends from `state` and returns log-probabilities of the next symbol.
    pub fn attend(&self, state: &GeneratorState) -> Result<(Pending, Vec<f64>)> {
        let m = self.model;
        let mut tape = Tape::new();
        let vars = m.bind(&mut tape, &m.params)?;
        let h = tape.constant(self.h.clone());
        let vh = tape.constant(self.vh.clone());
        let s = tape.constant(state.s.clone());
        let a = tape.constant(state.alpha.as_tensor().clone());
        let att = vars.att.attend(&mut tape, s, a, h, vh, &self.cfg, state.step == 0)?;
        let logits = m.logits_on_tape(&mut tape, &vars, s, att.glimpse)?;
        let lp = tape.log_softmax(logits)?;
        let pending = Pending {
            alpha: AlignmentVector::from_tensor(tape.value(att.alpha).clone())?,
            glimpse: tape.value(att.glimpse).clone(),
            scores_evaluated: att.scores_evaluated,
        };
        Ok((pending, tape.value(lp).data().to_vec()))
    }

    /// Consumes the symbol emitted at the pending step.
    pub fn advance(&self, state: &GeneratorState, pending: &Pending, y: usize) -> Result<GeneratorState> {
        Ok(GeneratorState {
            s: self.model.recurrency(&state.s, &pending.glimpse, y)?,
            alpha: pending.alpha.clone(),
            step: state.step + 1,
        })
    }

    pub fn step(&self, state: &GeneratorState, y_fed: usize) -> Result<StepOutput> {
        if state.alpha.len() != self.len() {
            return Err(Error::contract("state alignment length differs from the encoded sequence"));
        }
        let (pending, logp) = self.attend(state)?;
        let next_state = self.advance(state, &pending, y_fed)?;
        Ok(StepOutput {
            alpha: pending.alpha,
            glimpse: pending.glimpse,
            dist: logp.iter().map(|v| v.exp()).collect(),
            next_state,
            scores_evaluated: pending.scores_evaluated,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::{self, Normalizer};
    use crate::gradcheck::finite_diff_check;
    use crate::testutil::{random_matrix, randomize};

    fn tiny_dims(conv: Option<ConvShape>, vocab: usize) -> ModelDims {
        ModelDims {
            d_in: 3,
            enc_hidden: 2,
            enc_layers: 1,
            n_att: 3,
            conv,
            gen_hidden: 3,
            d_emb: 2,
            maxout_units: 2,
            maxout_pool: 2,
            vocab,
            eos: 0,
        }
    }

    fn random_model(conv: Option<ConvShape>, vocab: usize, seed: u64, std: f64) -> Arsg {
        let mut m = Arsg::zeros(tiny_dims(conv, vocab)).unwrap();
        randomize(&mut m.params, seed, std);
        m
    }

    #[test]
    fn initial_state_examples() {
        let mut m = Arsg::zeros(tiny_dims(None, 4)).unwrap();
        m.params.set_value(INITIAL_STATE, Tensor::vector(vec![0.1, -0.2, 0.3])).unwrap();
        let st = m.initial_state(4).unwrap();
        assert_eq!(st.alpha.weights(), &[0.25; 4]);
        assert_eq!(st.s.data(), &[0.1, -0.2, 0.3]);
        assert_eq!(m.initial_state(1).unwrap().alpha.weights(), &[1.0]);
        assert!(m.initial_state(0).is_err());
    }

    #[test]
    fn generate_dist_examples() {
        let mut m = Arsg::zeros(tiny_dims(None, 4)).unwrap();
        let s = Tensor::vector(vec![0.3, 0.1, -0.4]);
        let g = Tensor::vector(vec![1.0, 2.0, -1.0, 0.5]);
        assert_eq!(m.generate_dist(&s, &g).unwrap(), vec![0.25; 4]);

        let mut two = Arsg::zeros(tiny_dims(None, 2)).unwrap();
        two.params.set_value(OUT_B, Tensor::vector(vec![3f64.ln(), 0.0])).unwrap();
        let d = two.generate_dist(&s, &g).unwrap();
        assert!((d[0] - 0.75).abs() < 1e-15 && (d[1] - 0.25).abs() < 1e-15);

        randomize(&mut m.params, 5, 3.0);
        let d = m.generate_dist(&s, &g).unwrap();
        assert!(d.iter().all(|p| *p > 0.0));
        assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn recurrency_examples() {
        let mut m = Arsg::zeros(tiny_dims(None, 4)).unwrap();
        let s = Tensor::vector(vec![0.4, -0.6, 1.0]);
        let g = Tensor::vector(vec![1.0, 2.0, -1.0, 0.5]);
        assert_eq!(m.recurrency(&s, &g, 2).unwrap().data(), &[0.2, -0.3, 0.5]);
        assert!(m.recurrency(&s, &g, 4).is_err());

        randomize(&mut m.params, 8, 0.5);
        let mut emb = m.params.value(EMBEDDING).unwrap().clone();
        let row1 = emb.row(1).to_vec();
        emb.data_mut()[4..6].copy_from_slice(&row1);
        m.params.set_value(EMBEDDING, emb).unwrap();
        assert_eq!(m.recurrency(&s, &g, 1).unwrap(), m.recurrency(&s, &g, 2).unwrap());
    }

    #[test]
    fn recurrency_embedding_gradient() {
        let m = random_model(None, 4, 21, 0.6);
        let s = Tensor::vector(vec![0.4, -0.6, 1.0]);
        let g = Tensor::vector(vec![1.0, 2.0, -1.0, 0.5]);
        let f = |tape: &mut Tape, p: &ParamSet| {
            let vars = m.bind(tape, p)?;
            let sv = tape.constant(s.clone());
            let gv = tape.constant(g.clone());
            let out = m.recurrency_on_tape(tape, &vars, sv, gv, 3)?;
            let sq = tape.mul(out, out)?;
            tape.sum(sq)
        };
        let r = finite_diff_check(f, &m.params, 1e-5, 1e-4).unwrap();
        let emb = r.params.iter().find(|c| c.name == EMBEDDING).unwrap();
        assert_eq!(emb.violations, 0);
        assert!(r.passed());
    }

    #[test]
    fn step_is_the_composition_of_its_parts() {
        let conv = Some(ConvShape { k: 2, r: 3 });
        let m = random_model(conv, 4, 2, 0.7);
        let h = random_matrix(5, 4, 3, 1.0);
        let cfg = NormalizerConfig::default();
        let state = GeneratorState {
            s: Tensor::vector(vec![0.1, 0.2, -0.3]),
            alpha: AlignmentVector::new(vec![0.1, 0.4, 0.3, 0.1, 0.1]).unwrap(),
            step: 1,
        };
        let out = m.step(&state, &h, 2, &cfg).unwrap();
        let (alpha, n) = attention::attend(&m.dims.attention(), &m.params, &state.s, &state.alpha, &h, &cfg).unwrap();
        let g = attention::glimpse(&alpha, &h).unwrap();
        assert_eq!(n, 5);
        assert!(out.alpha.as_tensor().max_abs_diff(alpha.as_tensor()) < 1e-14);
        assert!(out.glimpse.max_abs_diff(&g) < 1e-14);
        let dist = m.generate_dist(&state.s, &g).unwrap();
        for (a, b) in out.dist.iter().zip(&dist) {
            assert!((a - b).abs() < 1e-14);
        }
        let s = m.recurrency(&state.s, &g, 2).unwrap();
        assert!(out.next_state.s.max_abs_diff(&s) < 1e-14);
        assert_eq!(out.next_state.alpha, out.alpha);
    }

    #[test]
    fn zero_model_step_is_uniform() {
        let m = Arsg::zeros(tiny_dims(Some(ConvShape { k: 1, r: 3 }), 5)).unwrap();
        let h = random_matrix(4, 4, 1, 1.0);
        let st = m.initial_state(4).unwrap();
        let out = m.step(&st, &h, 1, &NormalizerConfig::default()).unwrap();
        assert_eq!(out.alpha.weights(), &[0.25; 4]);
        assert!(out.dist.iter().all(|p| (p - 0.2).abs() < 1e-15));
    }

    #[test]
    fn content_step_ignores_previous_alignment() {
        let m = random_model(None, 4, 11, 0.8);
        let h = random_matrix(5, 4, 12, 1.0);
        let cfg = NormalizerConfig::default();
        let s = Tensor::vector(vec![0.5, -0.1, 0.2]);
        let a = GeneratorState { s: s.clone(), alpha: AlignmentVector::uniform(5), step: 1 };
        let b = GeneratorState { s, alpha: AlignmentVector::one_hot(5, 4), step: 1 };
        assert_eq!(m.step(&a, &h, 1, &cfg).unwrap(), m.step(&b, &h, 1, &cfg).unwrap());
    }

    #[test]
    fn first_window_starts_at_frame_zero() {
        let m = random_model(Some(ConvShape { k: 2, r: 3 }), 4, 11, 0.8);
        let x = random_matrix(20, 3, 5, 1.0);
        let cfg = NormalizerConfig::default().with_window(Some(2));
        let session = m.session(m.encode(&x).unwrap(), cfg).unwrap();
        let support = |st: &GeneratorState| {
            let (p, _) = session.attend(st).unwrap();
            let w = p.alpha.weights().to_vec();
            (w.iter().position(|&v| v > 0.0).unwrap(), w.iter().rposition(|&v| v > 0.0).unwrap())
        };
        let s0 = session.initial_state().unwrap();
        assert_eq!(s0.step, 0);
        let (lo, hi) = support(&s0);
        assert!(lo == 0 && hi <= 2, "{lo}..{hi}");
        let later = GeneratorState { alpha: AlignmentVector::one_hot(20, 10), step: 1, ..s0 };
        let (lo, hi) = support(&later);
        assert!(lo >= 8 && hi <= 12, "{lo}..{hi}");
    }

    #[test]
    fn zero_model_nll_is_t_ln_v() {
        for (vocab, t) in [(4usize, 3usize), (7, 5), (2, 1)] {
            let m = Arsg::zeros(tiny_dims(None, vocab)).unwrap();
            let x = random_matrix(6, 3, 4, 1.0);
            let mut y: Vec<usize> = (0..t - 1).map(|i| 1 + i % (vocab - 1)).collect();
            y.push(0);
            let nll = m.nll(&x, &y, &NormalizerConfig::default()).unwrap();
            assert!((nll - t as f64 * (vocab as f64).ln()).abs() < 1e-9);
        }
    }

    #[test]
    fn nll_rejects_missing_eos_and_is_deterministic() {
        let m = random_model(Some(ConvShape { k: 2, r: 3 }), 4, 6, 0.5);
        let x = random_matrix(4, 3, 7, 1.0);
        let cfg = NormalizerConfig::default();
        assert!(m.nll(&x, &[1, 2], &cfg).is_err());
        assert!(m.nll(&x, &[], &cfg).is_err());
        let a = m.nll(&x, &[1, 2, 0], &cfg).unwrap();
        let b = m.nll(&x, &[1, 2, 0], &cfg).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert!(a >= 0.0);
    }

    #[test]
    fn nll_gradients_for_every_parameter_group() {
        let x = random_matrix(4, 3, 40, 1.0);
        let y = [2, 1, 0];
        for (conv, mode) in [
            (None, Normalizer::Softmax),
            (Some(ConvShape { k: 2, r: 3 }), Normalizer::Softmax),
            (Some(ConvShape { k: 2, r: 3 }), Normalizer::Smoothing),
        ] {
            let m = random_model(conv, 3, 41, 0.9);
            let cfg = NormalizerConfig::new(mode);
            let f = |tape: &mut Tape, p: &ParamSet| m.nll_on_tape(tape, p, &x, &y, &cfg);
            let r = finite_diff_check(f, &m.params, 1e-5, 1e-4).unwrap();
            assert_eq!(r.params.len(), m.params.len());
            assert!(r.passed(), "{mode:?}: {:?}", r.failures().collect::<Vec<_>>());
        }
    }

    #[test]
    fn forced_align_shapes_and_rows() {
        let m = random_model(Some(ConvShape { k: 2, r: 3 }), 4, 14, 0.8);
        let x = random_matrix(6, 3, 15, 1.0);
        let a = m.forced_align(&x, &[1, 3, 2, 0], &NormalizerConfig::default()).unwrap();
        assert_eq!(a.shape(), &[4, 6]);
        for i in 0..4 {
            assert!((a.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        let z = Arsg::zeros(tiny_dims(None, 4)).unwrap();
        let a = z.forced_align(&x, &[1, 0], &NormalizerConfig::default()).unwrap();
        assert!(a.data().iter().all(|v| (v - 1.0 / 6.0).abs() < 1e-15));
    }

    #[test]
    fn session_log_probs_match_teacher_forced_nll() {
        let m = random_model(Some(ConvShape { k: 2, r: 3 }), 4, 30, 0.8);
        let x = random_matrix(7, 3, 31, 1.0);
        let y = [3, 1, 2, 0];
        let cfg = NormalizerConfig::default().with_window(Some(2));
        let session = m.session(m.encode(&x).unwrap(), cfg).unwrap();
        let mut st = session.initial_state().unwrap();
        let mut total = 0.0;
        for &sym in &y {
            let (p, lp) = session.attend(&st).unwrap();
            total += lp[sym];
            st = session.advance(&st, &p, sym).unwrap();
        }
        let nll = m.nll(&x, &y, &cfg).unwrap();
        assert!((nll + total).abs() < 1e-12);
    }

    #[test]
    fn from_params_checks_shapes() {
        let m = Arsg::zeros(tiny_dims(None, 4)).unwrap();
        let bigger = tiny_dims(None, 5);
        assert!(Arsg::from_params(bigger, m.params.clone()).is_err());
        assert!(Arsg::from_params(m.dims.clone(), m.params.clone()).is_ok());
    }

    #[test]
    fn kinds() {
        let d = tiny_dims(None, 4);
        assert_eq!(d.kind_of("enc.l0.fwd.U_z"), ParamKind::Recurrent);
        assert_eq!(d.kind_of("enc.l0.fwd.s0"), ParamKind::InitialState);
        assert_eq!(d.kind_of("gen.s0"), ParamKind::InitialState);
        assert_eq!(d.kind_of("att.b"), ParamKind::Bias);
        assert_eq!(d.kind_of("gen.gru.b_c"), ParamKind::Bias);
        assert_eq!(d.kind_of("att.w"), ParamKind::Weight);
        assert_eq!(d.kind_of("att.U"), ParamKind::Weight);
    }
}
