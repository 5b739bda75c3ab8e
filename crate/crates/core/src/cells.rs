//! Parameterized building blocks shared by every model: affine maps, the
//! LSTM cell, the per-element reader MLP and attention scorers.
//!
//! All operations are batched along the leading axis and record onto a
//! [`Session`]; the parameter tensors themselves live in a [`ParamSet`].

use rand::Rng;

use crate::diffcore::{ParamId, ParamSet, Session, Tensor, Var};
use crate::error::{ModelError, Result};

fn expect_last(s: &Session, v: Var, what: &'static str, expected: usize) -> Result<()> {
    let got = s.value(v).shape().last();
    if got != expected {
        return Err(ModelError::Dimension { what, expected, got });
    }
    Ok(())
}

/// `x W + b` with `W: [d_in, d_out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    /// Uniform init in `[-1/sqrt(d_in), 1/sqrt(d_in)]` for weights and bias.
    pub fn new(ps: &mut ParamSet, name: &str, d_in: usize, d_out: usize, rng: &mut impl Rng) -> Result<Self> {
        let r = 1.0 / (d_in.max(1) as f64).sqrt();
        Ok(Linear {
            w: ps.add_uniform(format!("{name}.w"), &[d_in, d_out], r, rng)?,
            b: ps.add_uniform(format!("{name}.b"), &[d_out], r, rng)?,
            d_in,
            d_out,
        })
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        expect_last(s, x, "linear input", self.d_in)?;
        let (w, b) = (s.param(self.w), s.param(self.b));
        let y = s.matmul(x, w)?;
        Ok(s.add_bias(y, b)?)
    }
}

/// LSTM gate parameters. Gates are packed `[input, forget, output, candidate]`
/// along the columns of a single `[(d_in + d_h), 4 d_h]` matrix; the input
/// rows come first. `d_in == 0` is the input-free variant.
#[derive(Clone, Debug)]
pub struct LstmParams {
    pub w: ParamId,
    pub b: ParamId,
    pub d_in: usize,
    pub d_h: usize,
}

/// Batched recurrent state; `h` and `c` are `[B, d_h]`.
#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl LstmParams {
    /// Uniform init with bound `1/sqrt(d_in + d_h)`; forget-gate bias starts at 1.
    pub fn new(ps: &mut ParamSet, name: &str, d_in: usize, d_h: usize, rng: &mut impl Rng) -> Result<Self> {
        let r = 1.0 / ((d_in + d_h) as f64).sqrt();
        let w = ps.add_uniform(format!("{name}.w"), &[d_in + d_h, 4 * d_h], r, rng)?;
        let b = ps.add_uniform(format!("{name}.b"), &[4 * d_h], r, rng)?;
        for v in &mut ps.get_mut(b).data_mut()[d_h..2 * d_h] {
            *v = 1.0;
        }
        Ok(LstmParams { w, b, d_in, d_h })
    }

    /// All-zero parameters (used by closed-form checks).
    pub fn zeros(ps: &mut ParamSet, name: &str, d_in: usize, d_h: usize) -> Result<Self> {
        let w = ps.add(format!("{name}.w"), Tensor::zeros(&[d_in + d_h, 4 * d_h])?);
        let b = ps.add(format!("{name}.b"), Tensor::zeros(&[4 * d_h])?);
        Ok(LstmParams { w, b, d_in, d_h })
    }

    pub fn zero_state(&self, s: &mut Session, batch: usize) -> Result<LstmState> {
        let h = s.constant(Tensor::zeros(&[batch, self.d_h])?);
        let c = s.constant(Tensor::zeros(&[batch, self.d_h])?);
        Ok(LstmState { h, c })
    }

    /// One step of the standard LSTM recurrence (no peepholes).
    pub fn step(&self, s: &mut Session, state: LstmState, input: Option<Var>) -> Result<LstmState> {
        expect_last(s, state.h, "lstm hidden", self.d_h)?;
        expect_last(s, state.c, "lstm cell", self.d_h)?;
        let z = match (input, self.d_in) {
            (None, 0) => state.h,
            (Some(x), d) if d > 0 => {
                expect_last(s, x, "lstm input", d)?;
                s.concat(&[x, state.h])?
            }
            (None, d) => return Err(ModelError::Dimension { what: "lstm input", expected: d, got: 0 }),
            (Some(x), _) => {
                let got = s.value(x).shape().last();
                return Err(ModelError::Dimension { what: "lstm input", expected: 0, got });
            }
        };
        let (w, b) = (s.param(self.w), s.param(self.b));
        let pre = s.matmul(z, w)?;
        let pre = s.add_bias(pre, b)?;
        let d = self.d_h;
        let i = s.slice(pre, 0, d)?;
        let f = s.slice(pre, d, d)?;
        let o = s.slice(pre, 2 * d, d)?;
        let g = s.slice(pre, 3 * d, d)?;
        let i = s.sigmoid(i)?;
        let f = s.sigmoid(f)?;
        let o = s.sigmoid(o)?;
        let g = s.tanh(g)?;
        let keep = s.mul(f, state.c)?;
        let write = s.mul(i, g)?;
        let c = s.add(keep, write)?;
        let tc = s.tanh(c)?;
        let h = s.mul(o, tc)?;
        Ok(LstmState { h, c })
    }
}

/// Per-element reader: affine layers with `tanh` after every layer.
#[derive(Clone, Debug)]
pub struct MlpParams {
    pub layers: Vec<Linear>,
}

impl MlpParams {
    /// `sizes` lists every layer width including input and output, e.g. `[1, 32, 64]`.
    pub fn new(ps: &mut ParamSet, name: &str, sizes: &[usize], rng: &mut impl Rng) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(ModelError::Invalid("an MLP needs at least input and output sizes".into()));
        }
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(k, w)| Linear::new(ps, &format!("{name}.{k}"), w[0], w[1], rng))
            .collect::<Result<_>>()?;
        Ok(MlpParams { layers })
    }

    pub fn d_in(&self) -> usize {
        self.layers[0].d_in
    }

    pub fn d_out(&self) -> usize {
        self.layers.last().map_or(0, |l| l.d_out)
    }

    /// Embeds each row of `x: [rows, d_in]`.
    pub fn embed(&self, s: &mut Session, x: Var) -> Result<Var> {
        let mut h = x;
        for layer in &self.layers {
            let a = layer.forward(s, h)?;
            h = s.tanh(a)?;
        }
        Ok(h)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ScoreMode {
    #[default]
    Dot,
    Additive,
}

/// Scalar compatibility `f(m, q)` between a memory and a query.
#[derive(Clone, Debug)]
pub enum Scorer {
    /// `<m, q>`; requires equal lengths.
    Dot,
    /// `v^T tanh(W_m m + W_q q)`.
    Additive {
        w_mem: ParamId,
        w_query: ParamId,
        v: ParamId,
        d_mem: usize,
        d_query: usize,
        d_att: usize,
    },
}

/// Memories prepared for repeated scoring against different queries.
#[derive(Clone, Copy, Debug)]
pub struct Keys {
    mem: Var,
    proj: Option<Var>,
    batch: usize,
    n: usize,
}

impl Keys {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }
}

impl Scorer {
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        mode: ScoreMode,
        d_mem: usize,
        d_query: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        match mode {
            ScoreMode::Dot => {
                if d_mem != d_query {
                    return Err(ModelError::Dimension { what: "dot scorer query", expected: d_mem, got: d_query });
                }
                Ok(Scorer::Dot)
            }
            ScoreMode::Additive => {
                let d_att = d_mem.max(d_query);
                let rm = 1.0 / (d_mem as f64).sqrt();
                let rq = 1.0 / (d_query as f64).sqrt();
                let ra = 1.0 / (d_att as f64).sqrt();
                Ok(Scorer::Additive {
                    w_mem: ps.add_uniform(format!("{name}.w_mem"), &[d_mem, d_att], rm, rng)?,
                    w_query: ps.add_uniform(format!("{name}.w_query"), &[d_query, d_att], rq, rng)?,
                    v: ps.add_uniform(format!("{name}.v"), &[d_att, 1], ra, rng)?,
                    d_mem,
                    d_query,
                    d_att,
                })
            }
        }
    }

    /// Prepares `mem: [B, N, d_m]`.
    pub fn keys(&self, s: &mut Session, mem: Var) -> Result<Keys> {
        let dims = s.value(mem).dims().to_vec();
        if dims.len() != 3 {
            return Err(ModelError::Invalid(format!("memories must be [B, N, d], got {dims:?}")));
        }
        let (batch, n, d) = (dims[0], dims[1], dims[2]);
        let proj = match self {
            Scorer::Dot => None,
            Scorer::Additive { w_mem, d_mem, d_att, .. } => {
                if d != *d_mem {
                    return Err(ModelError::Dimension { what: "scorer memory", expected: *d_mem, got: d });
                }
                let flat = s.reshape(mem, &[batch * n, d])?;
                let w = s.param(*w_mem);
                let p = s.matmul(flat, w)?;
                Some(s.reshape(p, &[batch, n, *d_att])?)
            }
        };
        Ok(Keys { mem, proj, batch, n })
    }

    /// Scores `[B, N]` of every memory against `q: [B, d_q]`.
    pub fn scores(&self, s: &mut Session, keys: &Keys, q: Var) -> Result<Var> {
        match self {
            Scorer::Dot => {
                let d = s.value(keys.mem).shape().last();
                expect_last(s, q, "dot scorer query", d)?;
                Ok(s.batch_matvec(keys.mem, q)?)
            }
            Scorer::Additive { w_query, v, d_query, d_att, .. } => {
                expect_last(s, q, "additive scorer query", *d_query)?;
                let wq = s.param(*w_query);
                let qp = s.matmul(q, wq)?;
                let sum = s.add_expand(keys.proj.expect("additive keys"), qp)?;
                let act = s.tanh(sum)?;
                let flat = s.reshape(act, &[keys.batch * keys.n, *d_att])?;
                let vv = s.param(*v);
                let e = s.matmul(flat, vv)?;
                Ok(s.reshape(e, &[keys.batch, keys.n])?)
            }
        }
    }

    /// Score of a single memory vector against a single query vector.
    pub fn score(&self, s: &mut Session, m: Var, q: Var) -> Result<Var> {
        let dm = s.value(m).numel();
        let dq = s.value(q).numel();
        let mem = s.reshape(m, &[1, 1, dm])?;
        let q = s.reshape(q, &[1, dq])?;
        let keys = self.keys(s, mem)?;
        let e = self.scores(s, &keys, q)?;
        Ok(s.reshape(e, &[])?)
    }
}

/// Probability vector `softmax(g W + b)` over a vocabulary; `mask` marks
/// admissible outcomes.
pub fn affine_softmax(s: &mut Session, head: &Linear, g: Var, mask: Option<&[bool]>) -> Result<Var> {
    let logits = head.forward(s, g)?;
    Ok(s.softmax(logits, mask)?)
}
