//! Chain-rule models of symbol sequences, and of sequences recast as sets
//! of (symbol, position) tokens that can be serialized in any order.

use std::sync::atomic::{AtomicUsize, Ordering as AtomicOrdering};

use rand::{Rng, SeedableRng};

use crate::cells::{affine_softmax, Linear, LstmParams, LstmState};
use crate::diffcore::{ParamId, ParamSet, Session, Tensor, Var};
use crate::error::{ModelError, Result};
use crate::order_search::Ordering;

/// Ordered vocabulary ids with every id below `vocab`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SymbolSequence {
    ids: Vec<usize>,
    vocab: usize,
}

impl SymbolSequence {
    pub fn new(ids: Vec<usize>, vocab: usize) -> Result<Self> {
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(ModelError::OutOfVocabulary { symbol: bad, vocab });
        }
        Ok(SymbolSequence { ids, vocab })
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// A symbol tagged with its original 1-based position.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PositionedToken {
    pub symbol: usize,
    pub position: usize,
}

/// `[a, b, c]` becomes `{(a,1), (b,2), (c,3)}`.
pub fn sequence_to_positioned_set(y: &SymbolSequence, capacity: usize) -> Result<Vec<PositionedToken>> {
    if y.len() > capacity {
        return Err(ModelError::Capacity { len: y.len(), capacity });
    }
    Ok(y.ids().iter().enumerate().map(|(i, &symbol)| PositionedToken { symbol, position: i + 1 }).collect())
}

/// Sorts tokens by position and drops the positions.
pub fn positioned_set_to_sequence(tokens: &[PositionedToken], vocab: usize) -> Result<SymbolSequence> {
    let mut t = tokens.to_vec();
    t.sort_by_key(|t| t.position);
    if t.iter().enumerate().any(|(i, t)| t.position != i + 1) {
        return Err(ModelError::Invalid("positions must be exactly 1..=n".into()));
    }
    SymbolSequence::new(t.iter().map(|t| t.symbol).collect(), vocab)
}

/// Serializes `tokens` so that the k-th emitted token is `tokens[pi[k]]`.
pub fn apply_ordering(tokens: &[PositionedToken], pi: &Ordering) -> Result<Vec<PositionedToken>> {
    if pi.len() != tokens.len() {
        return Err(ModelError::NotAPermutation(tokens.len()));
    }
    Ok(pi.indices().iter().map(|&i| tokens[i]).collect())
}

/// Reverses each consecutive block of `block` symbols, padding the final
/// block with `pad` first when the length is not a multiple of `block`.
pub fn block_reverse(ids: &[usize], block: usize, pad: usize) -> Vec<usize> {
    assert!(block > 0);
    let mut padded = ids.to_vec();
    while !padded.len().is_multiple_of(block) {
        padded.push(pad);
    }
    padded.chunks(block).flat_map(|c| c.iter().rev().copied()).collect()
}

/// Decoder hyper-parameters. With `position_capacity` set the model
/// emits (symbol, position) pairs, predicting the position from a second
/// head conditioned on the emitted symbol.
#[derive(Clone, Debug, PartialEq)]
pub struct SeqModelConfig {
    pub vocab: usize,
    pub d_emb: usize,
    pub d_h: usize,
    pub position_capacity: Option<usize>,
}

impl SeqModelConfig {
    pub fn plain(vocab: usize) -> Self {
        SeqModelConfig { vocab, d_emb: 32, d_h: 64, position_capacity: None }
    }

    pub fn positioned(vocab: usize) -> Self {
        SeqModelConfig { position_capacity: Some(8), ..Self::plain(vocab) }
    }

    fn d_pos(&self) -> usize {
        self.position_capacity.unwrap_or(0)
    }
}

/// LSTM decoder over embedded previous tokens with softmax heads.
/// Symbol id `vocab` is the internal start token.
#[derive(Debug)]
pub struct SeqModel {
    pub config: SeqModelConfig,
    pub params: ParamSet,
    embed: ParamId,
    lstm: LstmParams,
    symbol_head: Linear,
    position_head: Option<Linear>,
    passes: AtomicUsize,
}

impl Clone for SeqModel {
    fn clone(&self) -> Self {
        SeqModel {
            config: self.config.clone(),
            params: self.params.clone(),
            embed: self.embed,
            lstm: self.lstm.clone(),
            symbol_head: self.symbol_head.clone(),
            position_head: self.position_head.clone(),
            passes: AtomicUsize::new(self.decoder_passes()),
        }
    }
}

/// Recurrent state after consuming a prefix, plus the bookkeeping needed to
/// mask positions that are already taken.
#[derive(Clone, Debug)]
pub struct DecoderState {
    pub lstm: LstmState,
    used: Vec<Vec<bool>>,
    lengths: Vec<usize>,
}

impl DecoderState {
    /// State restricted to (possibly repeated) batch rows; `lstm` must hold
    /// those rows already.
    pub fn select_rows(&self, rows: &[usize], lstm: LstmState) -> DecoderState {
        DecoderState {
            lstm,
            used: rows.iter().map(|&r| self.used[r].clone()).collect(),
            lengths: rows.iter().map(|&r| self.lengths[r]).collect(),
        }
    }
}

impl SeqModel {
    pub fn new(config: SeqModelConfig, rng: &mut impl Rng) -> Result<Self> {
        if config.vocab == 0 || config.d_h == 0 || config.d_emb == 0 {
            return Err(ModelError::Invalid("sequence model sizes must be positive".into()));
        }
        let mut ps = ParamSet::new();
        let embed = ps.add_uniform("seq.embed", &[config.vocab + 1, config.d_emb], 0.1, rng)?;
        let lstm = LstmParams::new(&mut ps, "seq.lstm", config.d_emb + config.d_pos(), config.d_h, rng)?;
        let symbol_head = Linear::new(&mut ps, "seq.symbol_head", config.d_h, config.vocab, rng)?;
        let position_head = match config.position_capacity {
            Some(cap) => Some(Linear::new(&mut ps, "seq.position_head", config.d_h + config.d_emb, cap, rng)?),
            None => None,
        };
        Ok(SeqModel { config, params: ps, embed, lstm, symbol_head, position_head, passes: AtomicUsize::new(0) })
    }

    /// A model whose every parameter is zero: uniform over symbols and over
    /// the admissible positions at every step.
    pub fn uniform(config: SeqModelConfig) -> Result<Self> {
        let mut m = SeqModel::new(config, &mut rand_chacha::ChaCha8Rng::seed_from_u64(0))?;
        for p in m.params.values_mut() {
            p.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        Ok(m)
    }

    pub fn vocab(&self) -> usize {
        self.config.vocab
    }

    pub fn is_positioned(&self) -> bool {
        self.position_head.is_some()
    }

    /// Decoder passes started so far (one per sequence).
    pub fn decoder_passes(&self) -> usize {
        self.passes.load(AtomicOrdering::Relaxed)
    }

    pub fn reset_decoder_passes(&self) {
        self.passes.store(0, AtomicOrdering::Relaxed);
    }

    fn check_tokens(&self, seqs: &[Vec<PositionedToken>]) -> Result<usize> {
        let first = seqs.first().ok_or(ModelError::EmptyBatch)?;
        let len = first.len();
        if len == 0 {
            return Err(ModelError::Invalid("cannot model an empty sequence".into()));
        }
        for seq in seqs {
            if seq.len() != len {
                return Err(ModelError::Dimension { what: "sequence length in batch", expected: len, got: seq.len() });
            }
            for t in seq {
                if t.symbol >= self.config.vocab {
                    return Err(ModelError::OutOfVocabulary { symbol: t.symbol, vocab: self.config.vocab });
                }
                if let Some(cap) = self.config.position_capacity {
                    if len > cap {
                        return Err(ModelError::Capacity { len, capacity: cap });
                    }
                    if t.position == 0 || t.position > len {
                        return Err(ModelError::Invalid(format!("position {} outside 1..={len}", t.position)));
                    }
                }
            }
        }
        Ok(len)
    }

    /// Initial state for a batch; `context` (if any) is the starting hidden
    /// vector `[B, d_h]`.
    pub fn start(&self, s: &mut Session, lengths: &[usize], context: Option<Var>) -> Result<DecoderState> {
        let batch = lengths.len();
        if batch == 0 {
            return Err(ModelError::EmptyBatch);
        }
        self.passes.fetch_add(batch, AtomicOrdering::Relaxed);
        let mut lstm = self.lstm.zero_state(s, batch)?;
        if let Some(h) = context {
            let dims = s.value(h).dims().to_vec();
            if dims != [batch, self.config.d_h] {
                return Err(ModelError::Dimension { what: "context", expected: self.config.d_h, got: *dims.last().unwrap_or(&0) });
            }
            lstm.h = h;
        }
        let cap = self.config.d_pos();
        let used = vec![vec![false; cap]; batch];
        let start = vec![PositionedToken { symbol: self.config.vocab, position: 0 }; batch];
        let mut state = DecoderState { lstm, used, lengths: lengths.to_vec() };
        self.feed(s, &mut state, &start)?;
        Ok(state)
    }

    /// Consumes one token per batch row (the start token uses position 0).
    fn feed(&self, s: &mut Session, state: &mut DecoderState, tokens: &[PositionedToken]) -> Result<()> {
        let table = s.param(self.embed);
        let ids: Vec<usize> = tokens.iter().map(|t| t.symbol).collect();
        let mut x = s.gather_rows(table, &ids)?;
        if let Some(cap) = self.config.position_capacity {
            let mut onehot = vec![0.0; tokens.len() * cap];
            for (b, t) in tokens.iter().enumerate() {
                if t.position > 0 {
                    onehot[b * cap + t.position - 1] = 1.0;
                    state.used[b][t.position - 1] = true;
                }
            }
            let pos = s.constant(Tensor::new(&[tokens.len(), cap], onehot)?);
            x = s.concat(&[x, pos])?;
        }
        state.lstm = self.lstm.step(s, state.lstm, Some(x))?;
        Ok(())
    }

    /// Advances every row by the token it emitted.
    pub fn advance(&self, s: &mut Session, state: &mut DecoderState, tokens: &[PositionedToken]) -> Result<()> {
        if tokens.len() != state.lengths.len() {
            return Err(ModelError::Dimension { what: "tokens per step", expected: state.lengths.len(), got: tokens.len() });
        }
        self.feed(s, state, tokens)
    }

    /// Next-symbol distribution `[B, V]`.
    pub fn symbol_probs(&self, s: &mut Session, state: &DecoderState) -> Result<Var> {
        affine_softmax(s, &self.symbol_head, state.lstm.h, None)
    }

    /// Position distribution `[B, cap]` given the symbol each row emits;
    /// taken positions and positions beyond each row's length are masked.
    pub fn position_probs(&self, s: &mut Session, state: &DecoderState, symbols: &[usize]) -> Result<Var> {
        let head = self.position_head.as_ref().ok_or_else(|| ModelError::Invalid("model has no position head".into()))?;
        let cap = self.config.d_pos();
        let table = s.param(self.embed);
        let e = s.gather_rows(table, symbols)?;
        let g = s.concat(&[state.lstm.h, e])?;
        let mut mask = Vec::with_capacity(symbols.len() * cap);
        for (used, &len) in state.used.iter().zip(&state.lengths) {
            mask.extend((0..cap).map(|p| p < len && !used[p]));
        }
        affine_softmax(s, head, g, Some(&mask))
    }

    /// Per-row log-probability `[B]` of a batch of equal-length token
    /// sequences in their serialized order, teacher forced. Positions are
    /// ignored by a plain model.
    pub fn sequence_log_probs_var(&self, s: &mut Session, seqs: &[Vec<PositionedToken>], context: Option<Var>) -> Result<Var> {
        let len = self.check_tokens(seqs)?;
        let batch = seqs.len();
        let mut state = self.start(s, &vec![len; batch], context)?;
        let mut total: Option<Var> = None;
        for t in 0..len {
            let step: Vec<PositionedToken> = seqs.iter().map(|q| q[t]).collect();
            let symbols: Vec<usize> = step.iter().map(|t| t.symbol).collect();
            let p = self.symbol_probs(s, &state)?;
            let p = s.pick(p, &symbols)?;
            let mut lp = s.log(p)?;
            if self.is_positioned() {
                let pp = self.position_probs(s, &state, &symbols)?;
                let positions: Vec<usize> = step.iter().map(|t| t.position - 1).collect();
                let pp = s.pick(pp, &positions)?;
                let lpp = s.log(pp)?;
                lp = s.add(lp, lpp)?;
            }
            total = Some(match total {
                Some(acc) => s.add(acc, lp)?,
                None => lp,
            });
            if t + 1 < len {
                self.advance(s, &mut state, &step)?;
            }
        }
        Ok(total.expect("sequences are nonempty"))
    }

    /// Mean over the batch of the per-sequence NLL.
    pub fn batch_nll(&self, s: &mut Session, seqs: &[Vec<PositionedToken>], context: Option<Var>) -> Result<Var> {
        let lp = self.sequence_log_probs_var(s, seqs, context)?;
        let total = s.sum(lp)?;
        Ok(s.scale(total, -1.0 / seqs.len() as f64)?)
    }

    /// Log-probabilities of sequences of any lengths, evaluated without
    /// gradients. Rows of equal length share a batch.
    pub fn sequence_log_probs(&self, seqs: &[Vec<PositionedToken>]) -> Result<Vec<f64>> {
        let mut lengths: Vec<usize> = seqs.iter().map(Vec::len).collect();
        lengths.sort_unstable();
        lengths.dedup();
        let mut chunks: Vec<Vec<usize>> = Vec::new();
        for len in lengths {
            let rows: Vec<usize> = (0..seqs.len()).filter(|&i| seqs[i].len() == len).collect();
            chunks.extend(rows.chunks(1024).map(<[usize]>::to_vec));
        }
        let scored = crate::par::try_map(chunks, |chunk| {
            let group: Vec<Vec<PositionedToken>> = chunk.iter().map(|&i| seqs[i].clone()).collect();
            let mut s = Session::frozen(&self.params);
            let lp = self.sequence_log_probs_var(&mut s, &group, None)?;
            Ok::<_, ModelError>((chunk, s.value(lp).data().to_vec()))
        })?;
        let mut out = vec![0.0; seqs.len()];
        for (chunk, lp) in scored {
            for (i, v) in chunk.into_iter().zip(lp) {
                out[i] = v;
            }
        }
        Ok(out)
    }
}

/// Plain sequences as tokens in natural order.
pub fn natural_tokens(y: &SymbolSequence) -> Vec<PositionedToken> {
    y.ids().iter().enumerate().map(|(i, &symbol)| PositionedToken { symbol, position: i + 1 }).collect()
}

/// `-log p(Y)` under the chain rule, `Y` taken in its natural order.
pub fn chain_rule_nll(model: &SeqModel, y: &SymbolSequence) -> Result<f64> {
    if y.is_empty() {
        return Err(ModelError::Invalid("cannot model an empty sequence".into()));
    }
    if y.vocab() != model.vocab() {
        return Err(ModelError::Dimension { what: "vocabulary", expected: model.vocab(), got: y.vocab() });
    }
    Ok(-model.sequence_log_probs(&[natural_tokens(y)])?[0])
}

/// `exp(total NLL / total tokens)` over serialized token sequences.
pub fn perplexity(model: &SeqModel, data: &[Vec<PositionedToken>]) -> Result<f64> {
    if data.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let lp = model.sequence_log_probs(data)?;
    let tokens: usize = data.iter().map(Vec::len).sum();
    Ok((-lp.iter().sum::<f64>() / tokens as f64).exp())
}
