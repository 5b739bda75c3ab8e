//! Evaluation of trained models against the task oracles.

use rand::Rng;

use crate::diffcore::Session;
use crate::error::{ModelError, Result};
use crate::order_search::Ordering;
use crate::par;
use crate::seq_models::{apply_ordering, natural_tokens, PositionedToken, SeqModel};
use crate::set_models::{pack_scalar_sets, SetPointerModel};
use crate::tasks::{ordering_views, stable_argsort, star_exact_logprob, SortingInstance, StarAssignment, StarModel, ViewMode};

const EVAL_CHUNK: usize = 500;

/// Anything that maps unordered scalar sets to output permutations.
pub trait Sorter: Sync {
    fn sort_batch(&self, sets: &[&[f64]]) -> Result<Vec<Vec<usize>>>;
}

impl Sorter for SetPointerModel {
    fn sort_batch(&self, sets: &[&[f64]]) -> Result<Vec<Vec<usize>>> {
        self.decode(&pack_scalar_sets(sets)?)
    }
}

/// Returns the reference argsort; the upper bound for any sorter.
#[derive(Clone, Copy, Debug, Default)]
pub struct OracleSorter;

impl Sorter for OracleSorter {
    fn sort_batch(&self, sets: &[&[f64]]) -> Result<Vec<Vec<usize>>> {
        Ok(sets.iter().map(|v| stable_argsort(v)).collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SortAccuracy {
    /// Fraction of instances whose whole permutation is correct.
    pub exact: f64,
    /// Fraction correct at each output position.
    pub per_position: Vec<f64>,
    pub count: usize,
}

pub fn eval_sort_accuracy(sorter: &impl Sorter, data: &[SortingInstance]) -> Result<SortAccuracy> {
    let n = data.first().ok_or(ModelError::EmptyBatch)?.values.len();
    if data.iter().any(|d| d.values.len() != n) {
        return Err(ModelError::Heterogeneous);
    }
    let chunks: Vec<&[SortingInstance]> = data.chunks(EVAL_CHUNK).collect();
    let decoded = par::try_map(chunks, |chunk| {
        let sets: Vec<&[f64]> = chunk.iter().map(|d| d.values.as_slice()).collect();
        sorter.sort_batch(&sets)
    })?;
    let mut exact = 0usize;
    let mut hits = vec![0usize; n];
    for (pred, inst) in decoded.iter().flatten().zip(data) {
        let mut all = pred.len() == n;
        for (k, hit) in hits.iter_mut().enumerate() {
            if pred.get(k) == Some(&inst.target[k]) {
                *hit += 1;
            } else {
                all = false;
            }
        }
        exact += all as usize;
    }
    let m = data.len() as f64;
    Ok(SortAccuracy {
        exact: exact as f64 / m,
        per_position: hits.iter().map(|&h| h as f64 / m).collect(),
        count: data.len(),
    })
}

/// Mean teacher-forced NLL of the target permutations.
pub fn sort_nll(model: &SetPointerModel, data: &[SortingInstance]) -> Result<f64> {
    if data.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let chunks: Vec<&[SortingInstance]> = data.chunks(EVAL_CHUNK).collect();
    let sums = par::try_map(chunks, |chunk| {
        let sets: Vec<&[f64]> = chunk.iter().map(|d| d.values.as_slice()).collect();
        let targets: Vec<Vec<usize>> = chunk.iter().map(|d| d.target.clone()).collect();
        let mut s = Session::frozen(&model.params);
        let l = model.loss(&mut s, &pack_scalar_sets(&sets)?, &targets)?;
        Ok::<_, ModelError>(s.value(l).item() * chunk.len() as f64)
    })?;
    Ok(sums.iter().sum::<f64>() / data.len() as f64)
}

/// Model and oracle NLL on star samples, in nats per example.
#[derive(Clone, Debug, PartialEq)]
pub struct StarEval {
    pub mean_nll: f64,
    pub oracle_nll: f64,
    /// `mean_nll - oracle_nll`.
    pub gap: f64,
    /// Standard error of the gap over examples.
    pub gap_se: f64,
    pub count: usize,
}

pub fn star_views(data: &[StarAssignment], vocab: usize, view: ViewMode, rng: &mut impl Rng) -> Vec<Vec<PositionedToken>> {
    data.iter().map(|a| natural_tokens(&ordering_views(a, vocab, view, rng))).collect()
}

pub fn eval_star_nll(model: &SeqModel, star: &StarModel, data: &[StarAssignment], views: &[Vec<PositionedToken>]) -> Result<StarEval> {
    if data.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    if views.len() != data.len() {
        return Err(ModelError::Dimension { what: "star views", expected: data.len(), got: views.len() });
    }
    let lp = model.sequence_log_probs(views)?;
    let oracle = data.iter().map(|a| star_exact_logprob(star, a)).collect::<Result<Vec<_>>>()?;
    let gaps: Vec<f64> = lp.iter().zip(&oracle).map(|(m, o)| o - m).collect();
    let n = data.len() as f64;
    let mean_nll = -lp.iter().sum::<f64>() / n;
    let oracle_nll = -oracle.iter().sum::<f64>() / n;
    let gap = gaps.iter().sum::<f64>() / n;
    let var = if data.len() > 1 { gaps.iter().map(|g| (g - gap).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    Ok(StarEval { mean_nll, oracle_nll, gap, gap_se: (var / n).sqrt(), count: data.len() })
}

/// `log sum_pi p(Y_pi)` for every token set: the probability the model
/// assigns to the set, whatever order it is written in.
pub fn set_log_probs(model: &SeqModel, sets: &[Vec<PositionedToken>], orderings: &[Ordering]) -> Result<Vec<f64>> {
    let k = orderings.len();
    if k == 0 {
        return Err(ModelError::Invalid("no orderings to sum over".into()));
    }
    let mut seqs = Vec::with_capacity(sets.len() * k);
    for t in sets {
        for o in orderings {
            seqs.push(apply_ordering(t, o)?);
        }
    }
    let lp = model.sequence_log_probs(&seqs)?;
    Ok(lp
        .chunks(k)
        .map(|row| {
            let hi = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if hi == f64::NEG_INFINITY {
                hi
            } else {
                hi + row.iter().map(|l| (l - hi).exp()).sum::<f64>().ln()
            }
        })
        .collect())
}

/// Perplexities of a language model over unordered grams.
#[derive(Clone, Debug, PartialEq)]
pub struct LmEval {
    /// From the set probability summed over all orderings; `None` when
    /// there are too many orderings to enumerate.
    pub set_perplexity: Option<f64>,
    /// Every gram serialized under `ordering`.
    pub ordered_perplexity: f64,
    pub ordering: Ordering,
    /// `exp` of the true per-token entropy of naturally ordered grams.
    pub floor: f64,
    pub count: usize,
}

pub fn eval_perplexity_run(
    model: &SeqModel,
    grams: &[Vec<PositionedToken>],
    ordering: &Ordering,
    all_orderings: Option<&[Ordering]>,
    floor: f64,
) -> Result<LmEval> {
    if grams.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let tokens: usize = grams.iter().map(Vec::len).sum();
    let ordered = grams.iter().map(|g| apply_ordering(g, ordering)).collect::<Result<Vec<_>>>()?;
    let ordered_lp: f64 = model.sequence_log_probs(&ordered)?.iter().sum();
    let set_perplexity = match all_orderings {
        Some(all) => Some((-set_log_probs(model, grams, all)?.iter().sum::<f64>() / tokens as f64).exp()),
        None => None,
    };
    Ok(LmEval {
        set_perplexity,
        ordered_perplexity: (-ordered_lp / tokens as f64).exp(),
        ordering: ordering.clone(),
        floor,
        count: grams.len(),
    })
}
