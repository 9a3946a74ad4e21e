//! GRU cell, stacked bidirectional GRU encoder, and maxout layer.
//!
//! Layouts only describe parameter names and shapes; values live in a
//! [`ParamSet`]. `bind` places the parameters on a tape for one forward pass.

use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Names and dimensions of one GRU.
///
/// `s = (1 − z) ⊙ s_prev + z ⊙ c` with update gate `z`, reset gate `r` and
/// candidate `c = tanh(W_c x + U_c (r ⊙ s_prev) + b_c)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GruLayout {
    pub prefix: String,
    pub d_in: usize,
    pub d_out: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct GruVars {
    pub w_z: Var,
    pub w_r: Var,
    pub w_c: Var,
    pub u_z: Var,
    pub u_r: Var,
    pub u_c: Var,
    pub b_z: Var,
    pub b_r: Var,
    pub b_c: Var,
}

/// Input-side pre-activations `W x + b` for the three gates.
#[derive(Clone, Copy, Debug)]
pub struct GruInputs {
    pub z: Var,
    pub r: Var,
    pub c: Var,
}

impl GruLayout {
    pub fn new(prefix: impl Into<String>, d_in: usize, d_out: usize) -> Self {
        GruLayout {
            prefix: prefix.into(),
            d_in,
            d_out,
        }
    }

    pub fn name(&self, field: &str) -> String {
        format!("{}.{}", self.prefix, field)
    }

    pub fn input_weights(&self) -> [String; 3] {
        [self.name("W_z"), self.name("W_r"), self.name("W_c")]
    }

    pub fn recurrent_weights(&self) -> [String; 3] {
        [self.name("U_z"), self.name("U_r"), self.name("U_c")]
    }

    pub fn biases(&self) -> [String; 3] {
        [self.name("b_z"), self.name("b_r"), self.name("b_c")]
    }

    pub fn declare(&self, set: &mut ParamSet) -> Result<()> {
        for n in self.input_weights() {
            set.insert(n, Tensor::zeros(&[self.d_out, self.d_in]))?;
        }
        for n in self.recurrent_weights() {
            set.insert(n, Tensor::zeros(&[self.d_out, self.d_out]))?;
        }
        for n in self.biases() {
            set.insert(n, Tensor::zeros(&[self.d_out]))?;
        }
        Ok(())
    }

    pub fn bind(&self, tape: &mut Tape, set: &ParamSet) -> Result<GruVars> {
        let [wz, wr, wc] = self.input_weights();
        let [uz, ur, uc] = self.recurrent_weights();
        let [bz, br, bc] = self.biases();
        Ok(GruVars {
            w_z: tape.param(set, &wz)?,
            w_r: tape.param(set, &wr)?,
            w_c: tape.param(set, &wc)?,
            u_z: tape.param(set, &uz)?,
            u_r: tape.param(set, &ur)?,
            u_c: tape.param(set, &uc)?,
            b_z: tape.param(set, &bz)?,
            b_r: tape.param(set, &br)?,
            b_c: tape.param(set, &bc)?,
        })
    }
}

impl GruVars {
    /// Input pre-activations for a single input vector.
    pub fn project(&self, tape: &mut Tape, x: Var) -> Result<GruInputs> {
        let mut gate = |w: Var, b: Var| -> Result<Var> {
            let wx = tape.matmul(w, x)?;
            tape.add(wx, b)
        };
        Ok(GruInputs {
            z: gate(self.w_z, self.b_z)?,
            r: gate(self.w_r, self.b_r)?,
            c: gate(self.w_c, self.b_c)?,
        })
    }

    /// Input pre-activations for every row of `xs` (`[L, d_in]`), each `[L, d_out]`.
    pub fn project_rows(&self, tape: &mut Tape, xs: Var) -> Result<(Var, Var, Var)> {
        let mut gate = |w: Var, b: Var| -> Result<Var> {
            let wt = tape.transpose(w)?;
            let xw = tape.matmul(xs, wt)?;
            tape.add(xw, b)
        };
        Ok((gate(self.w_z, self.b_z)?, gate(self.w_r, self.b_r)?, gate(self.w_c, self.b_c)?))
    }

    /// One recurrent update given precomputed input pre-activations.
    pub fn step_projected(&self, tape: &mut Tape, s_prev: Var, inp: GruInputs) -> Result<Var> {
        let uz = tape.matmul(self.u_z, s_prev)?;
        let z_pre = tape.add(inp.z, uz)?;
        let z = tape.sigmoid(z_pre)?;
        let ur = tape.matmul(self.u_r, s_prev)?;
        let r_pre = tape.add(inp.r, ur)?;
        let r = tape.sigmoid(r_pre)?;
        let rs = tape.mul(r, s_prev)?;
        let uc = tape.matmul(self.u_c, rs)?;
        let c_pre = tape.add(inp.c, uc)?;
        let c = tape.tanh(c_pre)?;
        let diff = tape.sub(c, s_prev)?;
        let upd = tape.mul(z, diff)?;
        tape.add(s_prev, upd)
    }

    pub fn step(&self, tape: &mut Tape, s_prev: Var, x: Var) -> Result<Var> {
        let inp = self.project(tape, x)?;
        self.step_projected(tape, s_prev, inp)
    }
}

/// One GRU update evaluated outside of any training graph.
pub fn gru_step(layout: &GruLayout, set: &ParamSet, s_prev: &Tensor, x: &Tensor) -> Result<Tensor> {
    if s_prev.shape() != [layout.d_out] || x.shape() != [layout.d_in] {
        return Err(Error::Shape {
            op: "gru_step",
            shapes: vec![s_prev.shape().to_vec(), x.shape().to_vec()],
        });
    }
    let mut tape = Tape::new();
    let vars = layout.bind(&mut tape, set)?;
    let s = tape.constant(s_prev.clone());
    let xv = tape.constant(x.clone());
    let out = vars.step(&mut tape, s, xv)?;
    Ok(tape.value(out).clone())
}

/// Stacked bidirectional GRU encoder with learned initial states.
///
/// Layer `ℓ > 0` consumes the concatenated forward‖backward outputs of layer
/// `ℓ − 1`; the top-layer concatenation is the encoded sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLayout {
    pub d_in: usize,
    pub hidden: usize,
    pub layers: Vec<(GruLayout, GruLayout)>,
}

impl EncoderLayout {
    pub fn new(d_in: usize, hidden: usize, n_layers: usize) -> Self {
        let layers = (0..n_layers)
            .map(|l| {
                let din = if l == 0 { d_in } else { 2 * hidden };
                (
                    GruLayout::new(format!("enc.l{l}.fwd"), din, hidden),
                    GruLayout::new(format!("enc.l{l}.bwd"), din, hidden),
                )
            })
            .collect();
        EncoderLayout { d_in, hidden, layers }
    }

    pub fn d_out(&self) -> usize {
        2 * self.hidden
    }

    pub fn initial_state_name(gru: &GruLayout) -> String {
        gru.name("s0")
    }

    pub fn declare(&self, set: &mut ParamSet) -> Result<()> {
        for (f, b) in &self.layers {
            f.declare(set)?;
            b.declare(set)?;
            set.insert(Self::initial_state_name(f), Tensor::zeros(&[self.hidden]))?;
            set.insert(Self::initial_state_name(b), Tensor::zeros(&[self.hidden]))?;
        }
        Ok(())
    }

    /// Encodes `x` (`[L′, d_in]`) into `[L′, 2·hidden]`.
    pub fn encode(&self, tape: &mut Tape, set: &ParamSet, x: Var) -> Result<Var> {
        let shape = tape.value(x).shape().to_vec();
        if shape.len() != 2 || shape[1] != self.d_in {
            return Err(Error::Shape {
                op: "birnn_encode",
                shapes: vec![shape],
            });
        }
        let len = shape[0];
        let mut input = x;
        for (fwd, bwd) in &self.layers {
            let f_out = run_direction(tape, set, fwd, input, len, false)?;
            let b_out = run_direction(tape, set, bwd, input, len, true)?;
            let mut rows = Vec::with_capacity(len);
            for t in 0..len {
                rows.push(tape.concat(&[f_out[t], b_out[t]])?);
            }
            input = tape.stack(&rows)?;
        }
        Ok(input)
    }
}

fn run_direction(
    tape: &mut Tape,
    set: &ParamSet,
    gru: &GruLayout,
    input: Var,
    len: usize,
    reverse: bool,
) -> Result<Vec<Var>> {
    let vars = gru.bind(tape, set)?;
    let (pz, pr, pc) = vars.project_rows(tape, input)?;
    let mut s = tape.param(set, &EncoderLayout::initial_state_name(gru))?;
    let mut out = vec![s; len];
    let order: Box<dyn Iterator<Item = usize>> = if reverse {
        Box::new((0..len).rev())
    } else {
        Box::new(0..len)
    };
    for t in order {
        let inp = GruInputs {
            z: tape.row(pz, t)?,
            r: tape.row(pr, t)?,
            c: tape.row(pc, t)?,
        };
        s = vars.step_projected(tape, s, inp)?;
        out[t] = s;
    }
    Ok(out)
}

/// Encodes a feature matrix outside of any training graph.
pub fn birnn_encode(layout: &EncoderLayout, set: &ParamSet, x: &Tensor) -> Result<Tensor> {
    if x.rank() != 2 || x.rows() == 0 {
        return Err(Error::contract("encoder input must be a non-empty matrix"));
    }
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let h = layout.encode(&mut tape, set, xv)?;
    Ok(tape.value(h).clone())
}

/// Linear map to `units × pool` pre-activations followed by a max over each
/// consecutive group of `pool`.
#[derive(Clone, Debug, PartialEq)]
pub struct MaxoutLayout {
    pub prefix: String,
    pub d_in: usize,
    pub units: usize,
    pub pool: usize,
}

impl MaxoutLayout {
    pub fn weight_name(&self) -> String {
        format!("{}.W", self.prefix)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.b", self.prefix)
    }

    pub fn declare(&self, set: &mut ParamSet) -> Result<()> {
        if self.pool == 0 {
            return Err(Error::contract("maxout pool size must be positive"));
        }
        set.insert(self.weight_name(), Tensor::zeros(&[self.units * self.pool, self.d_in]))?;
        set.insert(self.bias_name(), Tensor::zeros(&[self.units * self.pool]))
    }

    pub fn bind(&self, tape: &mut Tape, set: &ParamSet) -> Result<MaxoutVars> {
        Ok(MaxoutVars {
            w: tape.param(set, &self.weight_name())?,
            b: tape.param(set, &self.bias_name())?,
            pool: self.pool,
        })
    }

    pub fn apply(&self, tape: &mut Tape, set: &ParamSet, v: Var) -> Result<Var> {
        self.bind(tape, set)?.apply(tape, v)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct MaxoutVars {
    pub w: Var,
    pub b: Var,
    pub pool: usize,
}

impl MaxoutVars {
    pub fn apply(&self, tape: &mut Tape, v: Var) -> Result<Var> {
        let wv = tape.matmul(self.w, v)?;
        let pre = tape.add(wv, self.b)?;
        tape.max_pool(pre, self.pool)
    }
}

pub fn maxout(layout: &MaxoutLayout, set: &ParamSet, v: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let vv = tape.constant(v.clone());
    let out = layout.apply(&mut tape, set, vv)?;
    Ok(tape.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::finite_diff_check;
    use crate::testutil::randomize;

    fn gru_set(d_in: usize, d_out: usize) -> (GruLayout, ParamSet) {
        let layout = GruLayout::new("g", d_in, d_out);
        let mut set = ParamSet::new();
        layout.declare(&mut set).unwrap();
        (layout, set)
    }

    #[test]
    fn zero_gru_halves_the_state() {
        let (layout, set) = gru_set(2, 3);
        let s = Tensor::vector(vec![0.4, -1.2, 2.0]);
        let out = gru_step(&layout, &set, &s, &Tensor::vector(vec![5.0, -3.0])).unwrap();
        assert_eq!(out.data(), &[0.2, -0.6, 1.0]);
        let zero = gru_step(&layout, &set, &Tensor::zeros(&[3]), &Tensor::vector(vec![1.0, 1.0])).unwrap();
        assert_eq!(zero.data(), &[0.0; 3]);
    }

    #[test]
    fn saturated_update_gate_freezes_state() {
        let (layout, mut set) = gru_set(2, 2);
        randomize(&mut set, 7, 0.5);
        set.set_value("g.b_z", Tensor::vector(vec![-50.0, -50.0])).unwrap();
        set.set_value("g.W_z", Tensor::zeros(&[2, 2])).unwrap();
        set.set_value("g.U_z", Tensor::zeros(&[2, 2])).unwrap();
        let s = Tensor::vector(vec![0.3, -0.9]);
        let out = gru_step(&layout, &set, &s, &Tensor::vector(vec![1.0, 2.0])).unwrap();
        assert!(out.max_abs_diff(&s) < 1e-15);
    }

    #[test]
    fn gru_rejects_wrong_dims() {
        let (layout, set) = gru_set(2, 3);
        assert!(gru_step(&layout, &set, &Tensor::zeros(&[2]), &Tensor::zeros(&[2])).is_err());
    }

    #[test]
    fn zero_encoder_gives_zeros_with_one_row_per_frame() {
        let layout = EncoderLayout::new(3, 4, 2);
        let mut set = ParamSet::new();
        layout.declare(&mut set).unwrap();
        let x = Tensor::new(vec![7, 3], (0..21).map(|i| i as f64 * 0.1).collect()).unwrap();
        let h = birnn_encode(&layout, &set, &x).unwrap();
        assert_eq!(h.shape(), &[7, 8]);
        assert!(h.data().iter().all(|&v| v == 0.0));
    }

    /// Swaps forward/backward roles. Upper layers also get their input
    /// columns permuted, because their input halves swap along with the roles.
    fn mirrored(layout: &EncoderLayout, set: &ParamSet) -> ParamSet {
        let mut out = set.clone();
        let h = layout.hidden;
        for (l, (f, b)) in layout.layers.iter().enumerate() {
            for (src, dst) in [(f, b), (b, f)] {
                for field in ["W_z", "W_r", "W_c", "U_z", "U_r", "U_c", "b_z", "b_r", "b_c", "s0"] {
                    let mut v = set.value(&src.name(field)).unwrap().clone();
                    if l > 0 && field.starts_with('W') {
                        let (rows, cols) = (v.shape()[0], v.shape()[1]);
                        let old = v.data().to_vec();
                        let d = v.data_mut();
                        for r in 0..rows {
                            for c in 0..cols {
                                let from = if c < h { c + h } else { c - h };
                                d[r * cols + c] = old[r * cols + from];
                            }
                        }
                    }
                    out.set_value(&dst.name(field), v).unwrap();
                }
            }
        }
        out
    }

    #[test]
    fn reversal_symmetry() {
        for n_layers in [1, 2] {
            let layout = EncoderLayout::new(3, 2, n_layers);
            let mut set = ParamSet::new();
            layout.declare(&mut set).unwrap();
            randomize(&mut set, 11, 0.6);
            let x = crate::testutil::random_matrix(5, 3, 3, 1.0);
            let rev_rows: Vec<Vec<f64>> = (0..5).rev().map(|t| x.row(t).to_vec()).collect();
            let xr = Tensor::from_rows(&rev_rows).unwrap();

            let h = birnn_encode(&layout, &set, &x).unwrap();
            let hr = birnn_encode(&layout, &mirrored(&layout, &set), &xr).unwrap();
            for t in 0..5 {
                let a = h.row(4 - t);
                let b = hr.row(t);
                // halves swap places along with the roles
                for i in 0..2 {
                    assert!((a[i] - b[i + 2]).abs() < 1e-14);
                    assert!((a[i + 2] - b[i]).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn encoder_gradients_match_finite_differences() {
        let layout = EncoderLayout::new(3, 3, 2);
        let mut set = ParamSet::new();
        layout.declare(&mut set).unwrap();
        randomize(&mut set, 5, 0.5);
        let x = crate::testutil::random_matrix(4, 3, 9, 1.0);
        let proj = crate::testutil::random_matrix(4, 6, 10, 1.0);
        let f = |tape: &mut Tape, p: &ParamSet| {
            let xv = tape.constant(x.clone());
            let h = layout.encode(tape, p, xv)?;
            let w = tape.constant(proj.clone());
            let hw = tape.mul(h, w)?;
            tape.sum(hw)
        };
        let report = finite_diff_check(f, &set, 1e-5, 1e-4).unwrap();
        assert!(report.passed(), "{:?}", report.failures().collect::<Vec<_>>());
        assert_eq!(report.params.len(), set.len());
    }

    fn maxout_layout() -> MaxoutLayout {
        MaxoutLayout {
            prefix: "mo".into(),
            d_in: 2,
            units: 2,
            pool: 2,
        }
    }

    #[test]
    fn maxout_pairwise_and_zero() {
        let layout = maxout_layout();
        let mut set = ParamSet::new();
        layout.declare(&mut set).unwrap();
        let v = Tensor::vector(vec![1.0, -1.0]);
        assert_eq!(maxout(&layout, &set, &v).unwrap().data(), &[0.0, 0.0]);
        // pre-activations (1,3),(−2,−5) via the bias alone
        set.set_value("mo.b", Tensor::vector(vec![1.0, 3.0, -2.0, -5.0])).unwrap();
        assert_eq!(maxout(&layout, &set, &v).unwrap().data(), &[3.0, -2.0]);
    }

    #[test]
    fn maxout_invariant_to_within_pool_row_swap() {
        let layout = maxout_layout();
        let mut set = ParamSet::new();
        layout.declare(&mut set).unwrap();
        randomize(&mut set, 3, 1.0);
        let v = Tensor::vector(vec![0.7, -0.2]);
        let before = maxout(&layout, &set, &v).unwrap();
        let w = set.value("mo.W").unwrap().data().to_vec();
        let b = set.value("mo.b").unwrap().data().to_vec();
        let swapped_w = [&w[2..4], &w[0..2], &w[6..8], &w[4..6]].concat();
        let swapped_b = vec![b[1], b[0], b[3], b[2]];
        set.set_value("mo.W", Tensor::matrix(4, 2, swapped_w).unwrap()).unwrap();
        set.set_value("mo.b", Tensor::vector(swapped_b)).unwrap();
        assert_eq!(maxout(&layout, &set, &v).unwrap(), before);
    }

    #[test]
    fn maxout_subgradient_matches_where_argmax_unique() {
        let layout = maxout_layout();
        let mut set = ParamSet::new();
        layout.declare(&mut set).unwrap();
        randomize(&mut set, 21, 1.0);
        let v = Tensor::vector(vec![0.9, -0.4]);
        let f = |tape: &mut Tape, p: &ParamSet| {
            let vv = tape.constant(v.clone());
            let m = layout.apply(tape, p, vv)?;
            let t = tape.tanh(m)?;
            tape.sum(t)
        };
        assert!(finite_diff_check(f, &set, 1e-5, 1e-4).unwrap().passed());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn gru_output_is_bounded(seed in 0u64..1000, s in proptest::collection::vec(-3.0f64..3.0, 3)) {
                let (layout, mut set) = gru_set(2, 3);
                randomize(&mut set, seed, 1.0);
                let x = Tensor::vector(vec![0.5, -1.5]);
                let out = gru_step(&layout, &set, &Tensor::vector(s.clone()), &x).unwrap();
                for (o, sp) in out.data().iter().zip(&s) {
                    prop_assert!(*o >= sp.min(-1.0) - 1e-12 && *o <= sp.max(1.0) + 1e-12);
                }
            }
        }
    }
}
