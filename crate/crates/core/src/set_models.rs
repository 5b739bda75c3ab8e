//! Read-Process-and-Write: a shared reader embeds every element, an
//! input-free LSTM attends over the embeddings for a fixed number of
//! processing steps, and a pointer decoder (optionally with glimpses) emits
//! positions into the input set. The LSTM sequence encoder used as the
//! pointer-network baseline lives here too.

use rand::Rng;

use crate::cells::{Linear, LstmParams, LstmState, MlpParams, ScoreMode, Scorer};
use crate::diffcore::{ParamId, ParamSet, Session, Tensor, Var};
use crate::error::{ModelError, Result};

/// Embedded set elements, batched as `[B, N, d_m]`.
///
/// Row order is bookkeeping only: every consumer is required to be
/// equivariant (pointer outputs) or invariant (set embeddings) under it.
#[derive(Clone, Debug)]
pub struct MemorySet {
    pub mem: Var,
    pub payloads: Tensor,
    pub batch: usize,
    pub n: usize,
    pub d: usize,
}

/// `q*_t = [q_t; r_t]` plus the process LSTM's cell.
#[derive(Clone, Copy, Debug)]
pub struct ProcessState {
    pub q: Var,
    pub r: Var,
    pub c: Var,
    pub t: usize,
}

impl ProcessState {
    /// `[q; r]`, shape `[B, d_h + d_m]`.
    pub fn q_star(&self, s: &mut Session) -> Result<Var> {
        Ok(s.concat(&[self.q, self.r])?)
    }
}

/// Output of the write block.
#[derive(Clone, Debug)]
pub struct PointerTrace {
    /// Emitted positions, `indices[b][step]`.
    pub indices: Vec<Vec<usize>>,
    /// Pointer distribution `[B, N]` at every output step.
    pub step_distributions: Vec<Var>,
    /// Attention weights `[B, N]` of every glimpse, step-major.
    pub glimpse_weights: Vec<Var>,
    pub glimpse_count: usize,
    /// Mean over the batch of the summed target NLL (teacher forcing only).
    pub loss: Option<Var>,
}

/// What the decoder consumes after its first step.
#[derive(Clone, Copy, Debug)]
pub enum Feed<'a> {
    /// Previous *target* index, `targets[b][step]`.
    Teacher(&'a [Vec<usize>]),
    /// Previous argmax.
    Greedy,
}

/// Embeds `payloads: [B, N, d_x]` with one shared reader.
pub fn read_block(s: &mut Session, payloads: &Tensor, reader: &MlpParams) -> Result<MemorySet> {
    let dims = payloads.dims();
    if dims.len() != 3 {
        return Err(ModelError::Invalid(format!("set payloads must be [B, N, d_x], got {dims:?}")));
    }
    let (batch, n, dx) = (dims[0], dims[1], dims[2]);
    if dx != reader.d_in() {
        return Err(ModelError::Dimension { what: "reader input", expected: reader.d_in(), got: dx });
    }
    let x = s.constant(Tensor::new(&[batch * n, dx], payloads.data().to_vec())?);
    let m = reader.embed(s, x)?;
    let d = reader.d_out();
    let mem = s.reshape(m, &[batch, n, d])?;
    Ok(MemorySet { mem, payloads: payloads.clone(), batch, n, d })
}

/// Packs a single set of raw elements into a `[1, N, d_x]` payload tensor.
pub fn pack_set(elements: &[Vec<f64>]) -> Result<Tensor> {
    let first = elements.first().ok_or(ModelError::EmptySet)?;
    let dx = first.len();
    if dx == 0 || elements.iter().any(|e| e.len() != dx) {
        return Err(ModelError::Heterogeneous);
    }
    let data = elements.iter().flatten().copied().collect();
    Ok(Tensor::new(&[1, elements.len(), dx], data)?)
}

/// Packs equally sized sets of scalars into `[B, N, 1]`.
pub fn pack_scalar_sets(sets: &[&[f64]]) -> Result<Tensor> {
    let n = sets.first().ok_or(ModelError::EmptyBatch)?.len();
    if n == 0 {
        return Err(ModelError::EmptySet);
    }
    if sets.iter().any(|x| x.len() != n) {
        return Err(ModelError::Heterogeneous);
    }
    let data = sets.iter().flat_map(|x| x.iter().copied()).collect();
    Ok(Tensor::new(&[sets.len(), n, 1], data)?)
}

/// Attention-driven, input-free LSTM evolving `q*` over a memory set.
#[derive(Clone, Debug)]
pub struct ProcessBlock {
    pub lstm: LstmParams,
    pub scorer: Scorer,
    /// Reset the LSTM cell every step, so `q*` is the only recurrent state.
    pub stateless: bool,
}

impl ProcessBlock {
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        d_m: usize,
        d_h: usize,
        mode: ScoreMode,
        stateless: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        // The recurrent input is q*_{t-1} = [q_{t-1}; r_{t-1}]; q is the
        // hidden half, r enters through the input rows.
        let lstm = LstmParams::new(ps, &format!("{name}.lstm"), d_m, d_h, rng)?;
        let scorer = Scorer::new(ps, &format!("{name}.att"), mode, d_m, d_h, rng)?;
        Ok(ProcessBlock { lstm, scorer, stateless })
    }

    pub fn zero_state(&self, s: &mut Session, batch: usize, d_m: usize) -> Result<ProcessState> {
        let q = s.constant(Tensor::zeros(&[batch, self.lstm.d_h])?);
        let c = s.constant(Tensor::zeros(&[batch, self.lstm.d_h])?);
        let r = s.constant(Tensor::zeros(&[batch, d_m])?);
        Ok(ProcessState { q, r, c, t: 0 })
    }

    /// Runs `steps` rounds of
    /// `q_t = LSTM(q*_{t-1})`, `a_t = softmax_i f(m_i, q_t)`,
    /// `r_t = sum_i a_{i,t} m_i`, `q*_t = [q_t; r_t]`, starting from `q*_0 = 0`.
    pub fn run(&self, s: &mut Session, mem: &MemorySet, steps: usize) -> Result<(ProcessState, Vec<Var>)> {
        if mem.d != self.lstm.d_in {
            return Err(ModelError::Dimension { what: "process memory", expected: self.lstm.d_in, got: mem.d });
        }
        let mut st = self.zero_state(s, mem.batch, mem.d)?;
        let keys = self.scorer.keys(s, mem.mem)?;
        let mut weights = Vec::with_capacity(steps);
        for t in 1..=steps {
            let c = if self.stateless {
                s.constant(Tensor::zeros(&[mem.batch, self.lstm.d_h])?)
            } else {
                st.c
            };
            let next = self.lstm.step(s, LstmState { h: st.q, c }, Some(st.r))?;
            let e = self.scorer.scores(s, &keys, next.h)?;
            let a = s.softmax(e, None)?;
            let r = s.batch_vecmat(a, mem.mem)?;
            weights.push(a);
            st = ProcessState { q: next.h, r, c: next.c, t };
        }
        Ok((st, weights))
    }
}

/// Left-to-right LSTM over the embedded elements, in list order.
pub fn encode_sequence_baseline(s: &mut Session, mem: &MemorySet, lstm: &LstmParams) -> Result<LstmState> {
    if mem.n == 0 {
        return Err(ModelError::EmptySet);
    }
    let mut st = lstm.zero_state(s, mem.batch)?;
    for i in 0..mem.n {
        let x = s.gather_set(mem.mem, &vec![i; mem.batch])?;
        st = lstm.step(s, st, Some(x))?;
    }
    Ok(st)
}

/// Pointer-network decoder with optional glimpses.
#[derive(Clone, Debug)]
pub struct WriteBlock {
    /// `q*_T -> [h_0 ; c_0]`.
    pub init: Linear,
    pub lstm: LstmParams,
    /// Learned first decoder input, `[1, d_m]`.
    pub start: ParamId,
    /// `[query; readout] -> query` after each glimpse.
    pub glimpse: Linear,
    pub glimpse_scorer: Scorer,
    pub pointer_scorer: Scorer,
}

impl WriteBlock {
    pub fn new(ps: &mut ParamSet, name: &str, d_m: usize, d_h: usize, mode: ScoreMode, rng: &mut impl Rng) -> Result<Self> {
        let r = 1.0 / (d_m as f64).sqrt();
        Ok(WriteBlock {
            init: Linear::new(ps, &format!("{name}.init"), d_h + d_m, 2 * d_h, rng)?,
            lstm: LstmParams::new(ps, &format!("{name}.lstm"), d_m, d_h, rng)?,
            start: ps.add_uniform(format!("{name}.start"), &[1, d_m], r, rng)?,
            glimpse: Linear::new(ps, &format!("{name}.glimpse"), d_h + d_m, d_h, rng)?,
            glimpse_scorer: Scorer::new(ps, &format!("{name}.glimpse_att"), mode, d_m, d_h, rng)?,
            pointer_scorer: Scorer::new(ps, &format!("{name}.pointer_att"), mode, d_m, d_h, rng)?,
        })
    }

    /// Decoder input for `step`: the learned start vector first, then the
    /// embedding of the element pointed at on the previous step.
    pub fn decoder_input(&self, s: &mut Session, mem: &MemorySet, previous: Option<&[usize]>) -> Result<Var> {
        match previous {
            None => {
                let start = s.param(self.start);
                Ok(s.gather_rows(start, &vec![0; mem.batch])?)
            }
            Some(idx) => Ok(s.gather_set(mem.mem, idx)?),
        }
    }

    fn initial_state(&self, s: &mut Session, ctx: &ProcessState) -> Result<LstmState> {
        let q_star = ctx.q_star(s)?;
        let hc = self.init.forward(s, q_star)?;
        let d = self.lstm.d_h;
        let h = s.slice(hc, 0, d)?;
        let h = s.tanh(h)?;
        let c = s.slice(hc, d, d)?;
        Ok(LstmState { h, c })
    }

    /// Emits `steps` pointer distributions over the memories.
    #[allow(clippy::too_many_arguments)]
    pub fn run(
        &self,
        s: &mut Session,
        ctx: &ProcessState,
        mem: &MemorySet,
        steps: usize,
        glimpses: usize,
        mask_visited: bool,
        feed: Feed,
    ) -> Result<PointerTrace> {
        if mem.n == 0 {
            return Err(ModelError::EmptySet);
        }
        if mask_visited && steps > mem.n {
            return Err(ModelError::TooManySteps { steps, n: mem.n });
        }
        if let Feed::Teacher(t) = feed {
            if t.len() != mem.batch || t.iter().any(|row| row.len() < steps) {
                return Err(ModelError::Invalid("teacher targets do not cover every step".into()));
            }
            if t.iter().flatten().any(|&i| i >= mem.n) {
                return Err(ModelError::Invalid("teacher target outside the set".into()));
            }
        }
        let (b, n) = (mem.batch, mem.n);
        let mut st = self.initial_state(s, ctx)?;
        let glimpse_keys = self.glimpse_scorer.keys(s, mem.mem)?;
        let pointer_keys = self.pointer_scorer.keys(s, mem.mem)?;
        let mut allowed = vec![true; b * n];
        let mut indices = vec![Vec::with_capacity(steps); b];
        let mut dists = Vec::with_capacity(steps);
        let mut gweights = Vec::with_capacity(steps * glimpses);
        let mut picked = Vec::with_capacity(steps);
        let mut prev: Option<Vec<usize>> = None;

        for step in 0..steps {
            let x = self.decoder_input(s, mem, prev.as_deref())?;
            st = self.lstm.step(s, st, Some(x))?;
            let mut query = st.h;
            for _ in 0..glimpses {
                let e = self.glimpse_scorer.scores(s, &glimpse_keys, query)?;
                let a = s.softmax(e, None)?;
                let r = s.batch_vecmat(a, mem.mem)?;
                gweights.push(a);
                let cat = s.concat(&[query, r])?;
                let z = self.glimpse.forward(s, cat)?;
                query = s.tanh(z)?;
            }
            let logits = self.pointer_scorer.scores(s, &pointer_keys, query)?;
            let p = s.softmax(logits, mask_visited.then_some(allowed.as_slice()))?;
            let probs = s.value(p).data().to_vec();
            let argmax: Vec<usize> = probs
                .chunks(n)
                .map(|row| {
                    row.iter()
                        .enumerate()
                        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                        .0
                })
                .collect();
            let chosen: Vec<usize> = match feed {
                Feed::Teacher(t) => {
                    let tgt: Vec<usize> = t.iter().map(|row| row[step]).collect();
                    let pk = s.pick(p, &tgt)?;
                    picked.push(s.log(pk)?);
                    tgt
                }
                Feed::Greedy => argmax.clone(),
            };
            for (bi, &i) in argmax.iter().enumerate() {
                indices[bi].push(i);
            }
            for (bi, &i) in chosen.iter().enumerate() {
                allowed[bi * n + i] = false;
            }
            dists.push(p);
            prev = Some(chosen);
        }

        let loss = if picked.is_empty() {
            None
        } else {
            let all = s.concat(&picked)?;
            let total = s.sum(all)?;
            Some(s.scale(total, -1.0 / b as f64)?)
        };
        Ok(PointerTrace {
            indices,
            step_distributions: dists,
            glimpse_weights: gweights,
            glimpse_count: glimpses,
            loss,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    /// LSTM sequence encoder feeding the pointer decoder.
    PtrNetBaseline,
    ReadProcessWrite,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::PtrNetBaseline => "ptr-net-baseline",
            ModelKind::ReadProcessWrite => "read-process-write",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "ptr-net-baseline" | "ptr-net" | "baseline" => Ok(ModelKind::PtrNetBaseline),
            "read-process-write" | "rpw" => Ok(ModelKind::ReadProcessWrite),
            other => Err(format!("unknown model {other:?}")),
        }
    }
}

/// Architecture hyper-parameters of a set-to-pointer model.
#[derive(Clone, Debug, PartialEq)]
pub struct SetModelConfig {
    pub kind: ModelKind,
    /// Reader layer widths, input first, memory dimension last.
    pub reader_sizes: Vec<usize>,
    pub d_h: usize,
    pub process_steps: usize,
    pub glimpses: usize,
    pub score_mode: ScoreMode,
    /// Mask already-pointed elements in the training loss. Decoding always
    /// masks. Off by default: with masking a monotone score alone sorts.
    pub mask_visited: bool,
    pub stateless_process: bool,
}

impl Default for SetModelConfig {
    fn default() -> Self {
        SetModelConfig {
            kind: ModelKind::ReadProcessWrite,
            reader_sizes: vec![1, 32, 64],
            d_h: 64,
            process_steps: 5,
            glimpses: 1,
            score_mode: ScoreMode::Dot,
            mask_visited: false,
            stateless_process: false,
        }
    }
}

impl SetModelConfig {
    pub fn d_m(&self) -> usize {
        *self.reader_sizes.last().unwrap_or(&0)
    }
}

#[derive(Clone, Debug)]
enum Encoder {
    Process(ProcessBlock),
    Sequence(LstmParams),
}

/// Reader + encoder + pointer writer, with its own parameters.
#[derive(Clone, Debug)]
pub struct SetPointerModel {
    pub config: SetModelConfig,
    pub params: ParamSet,
    pub reader: MlpParams,
    encoder: Encoder,
    pub writer: WriteBlock,
}

impl SetPointerModel {
    pub fn new(config: SetModelConfig, rng: &mut impl Rng) -> Result<Self> {
        let mut ps = ParamSet::new();
        let d_m = config.d_m();
        let reader = MlpParams::new(&mut ps, "reader", &config.reader_sizes, rng)?;
        let encoder = match config.kind {
            ModelKind::ReadProcessWrite => Encoder::Process(ProcessBlock::new(
                &mut ps,
                "process",
                d_m,
                config.d_h,
                config.score_mode,
                config.stateless_process,
                rng,
            )?),
            ModelKind::PtrNetBaseline => {
                Encoder::Sequence(LstmParams::new(&mut ps, "encoder", d_m, config.d_h, rng)?)
            }
        };
        let writer = WriteBlock::new(&mut ps, "writer", d_m, config.d_h, config.score_mode, rng)?;
        Ok(SetPointerModel { config, params: ps, reader, encoder, writer })
    }

    /// Set embedding handed to the writer.
    pub fn encode(&self, s: &mut Session, mem: &MemorySet) -> Result<ProcessState> {
        match &self.encoder {
            Encoder::Process(p) => Ok(p.run(s, mem, self.config.process_steps)?.0),
            Encoder::Sequence(lstm) => {
                let st = encode_sequence_baseline(s, mem, lstm)?;
                let r = s.constant(Tensor::zeros(&[mem.batch, mem.d])?);
                Ok(ProcessState { q: st.h, r, c: st.c, t: mem.n })
            }
        }
    }

    pub fn process_block(&self) -> Option<&ProcessBlock> {
        match &self.encoder {
            Encoder::Process(p) => Some(p),
            Encoder::Sequence(_) => None,
        }
    }

    /// Full forward pass over a batch `[B, N, d_x]`.
    pub fn forward(&self, s: &mut Session, payloads: &Tensor, feed: Feed, mask: bool) -> Result<PointerTrace> {
        let mem = read_block(s, payloads, &self.reader)?;
        let ctx = self.encode(s, &mem)?;
        self.writer.run(s, &ctx, &mem, mem.n, self.config.glimpses, mask, feed)
    }

    /// Teacher-forced NLL of target permutations, averaged over the batch.
    pub fn loss(&self, s: &mut Session, payloads: &Tensor, targets: &[Vec<usize>]) -> Result<Var> {
        let trace = self.forward(s, payloads, Feed::Teacher(targets), self.config.mask_visited)?;
        Ok(trace.loss.expect("teacher forcing yields a loss"))
    }

    /// Greedy masked decoding of every set in the batch.
    pub fn decode(&self, payloads: &Tensor) -> Result<Vec<Vec<usize>>> {
        let mut s = Session::frozen(&self.params);
        Ok(self.forward(&mut s, payloads, Feed::Greedy, true)?.indices)
    }
}
