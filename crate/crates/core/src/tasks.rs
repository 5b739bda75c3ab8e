//! Synthetic data for the three experiments, with exact oracles:
//! sorting sets of uniform reals, star-shaped graphical models, and
//! fixed-length grams drawn from a Markov chain.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{ModelError, Result};
use crate::seq_models::SymbolSequence;

/// A set of reals and the stable argsort that orders it.
#[derive(Clone, Debug, PartialEq)]
pub struct SortingInstance {
    pub values: Vec<f64>,
    pub target: Vec<usize>,
}

/// Indices ordering `values` ascending; ties keep original index order.
pub fn stable_argsort(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    idx
}

impl SortingInstance {
    pub fn from_values(values: Vec<f64>) -> Self {
        let target = stable_argsort(&values);
        SortingInstance { values, target }
    }
}

/// `n` reals uniform on `[0, 1)` with their sorting permutation.
pub fn gen_sorting_instance(n: usize, rng: &mut impl Rng) -> SortingInstance {
    assert!(n >= 1, "a sorting instance needs at least one value");
    SortingInstance::from_values((0..n).map(|_| rng.random::<f64>()).collect())
}

/// Draws from Dirichlet(alpha, ..., alpha) in log space, so very small
/// concentrations still give a normalized (if nearly one-hot) vector.
pub fn sample_dirichlet(k: usize, alpha: f64, rng: &mut impl Rng) -> Vec<f64> {
    assert!(alpha > 0.0 && k > 0);
    // Gamma(a) = Gamma(a + 1) * U^(1/a)
    let boosted = Gamma::new(alpha + 1.0, 1.0).expect("valid gamma");
    let logs: Vec<f64> = (0..k)
        .map(|_| {
            let g: f64 = boosted.sample(rng);
            let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
            g.ln() + u.ln() / alpha
        })
        .collect();
    let hi = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logs.iter().map(|l| (l - hi).exp()).collect();
    let z: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= z);
    p
}

/// Index drawn from a categorical distribution.
pub fn sample_categorical(p: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random::<f64>() * p.iter().sum::<f64>();
    let mut acc = 0.0;
    for (i, &v) in p.iter().enumerate() {
        acc += v;
        if u < acc {
            return i;
        }
    }
    // rounding at the top end: last index with nonzero mass
    p.iter().rposition(|&v| v > 0.0).unwrap_or(p.len() - 1)
}

fn entropy(p: &[f64]) -> f64 {
    p.iter().filter(|&&v| v > 0.0).map(|&v| -v * v.ln()).sum()
}

/// One head variable with an unconditional distribution and children that
/// are conditionally independent given the head.
#[derive(Clone, Debug, PartialEq)]
pub struct StarModel {
    pub vocab: usize,
    pub head_marginal: Vec<f64>,
    /// `child_conditionals[child][head][value]`.
    pub child_conditionals: Vec<Vec<Vec<f64>>>,
    pub peakiness: f64,
}

/// A joint draw of the head and every child.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StarAssignment {
    pub head: usize,
    pub children: Vec<usize>,
}

impl StarModel {
    pub fn num_children(&self) -> usize {
        self.child_conditionals.len()
    }

    pub fn num_variables(&self) -> usize {
        self.num_children() + 1
    }

    /// Exact joint entropy in nats.
    pub fn entropy(&self) -> f64 {
        let mut h = entropy(&self.head_marginal);
        for child in &self.child_conditionals {
            for (ph, row) in self.head_marginal.iter().zip(child) {
                h += ph * entropy(row);
            }
        }
        h
    }

    pub fn validate(&self) -> Result<()> {
        let ok_row = |r: &[f64]| {
            r.len() == self.vocab && r.iter().all(|&v| v >= 0.0) && (r.iter().sum::<f64>() - 1.0).abs() < 1e-12
        };
        if !ok_row(&self.head_marginal) || !self.child_conditionals.iter().flatten().all(|r| ok_row(r)) {
            return Err(ModelError::Invalid("star model rows must be distributions over the vocabulary".into()));
        }
        if self.child_conditionals.iter().any(|c| c.len() != self.vocab) {
            return Err(ModelError::Invalid("each child needs one row per head value".into()));
        }
        Ok(())
    }

    /// Plain-text form: a `star-model` line, `vocab`, `children` and
    /// `peakiness` lines, a `head` line with the marginal, then one
    /// `child <c> <h>` line per conditional row. Reals are written in
    /// shortest round-trip form.
    pub fn to_text(&self) -> String {
        let mut out = String::from("star-model v1\n");
        let row = |r: &[f64]| r.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(" ");
        let _ = writeln!(out, "vocab {}", self.vocab);
        let _ = writeln!(out, "children {}", self.num_children());
        let _ = writeln!(out, "peakiness {:?}", self.peakiness);
        let _ = writeln!(out, "head {}", row(&self.head_marginal));
        for (c, child) in self.child_conditionals.iter().enumerate() {
            for (h, r) in child.iter().enumerate() {
                let _ = writeln!(out, "child {c} {h} {}", row(r));
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |m: &str| ModelError::Invalid(format!("star model text: {m}"));
        let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
        if lines.next().map(str::trim) != Some("star-model v1") {
            return Err(bad("missing header"));
        }
        let mut field = |key: &str| -> Result<String> {
            let l = lines.next().ok_or_else(|| bad("truncated"))?;
            let rest = l.strip_prefix(key).ok_or_else(|| bad(&format!("expected {key}")))?;
            Ok(rest.trim().to_string())
        };
        let vocab: usize = field("vocab")?.parse().map_err(|_| bad("vocab"))?;
        let children: usize = field("children")?.parse().map_err(|_| bad("children"))?;
        let peakiness: f64 = field("peakiness")?.parse().map_err(|_| bad("peakiness"))?;
        let parse_row = |s: &str| -> Result<Vec<f64>> {
            s.split_whitespace().map(|t| t.parse::<f64>().map_err(|_| bad("probability"))).collect()
        };
        let head_marginal = parse_row(&field("head")?)?;
        let mut child_conditionals = vec![vec![Vec::new(); vocab]; children];
        for _ in 0..children * vocab {
            let rest = field("child")?;
            let mut it = rest.splitn(3, ' ');
            let c: usize = it.next().and_then(|t| t.parse().ok()).ok_or_else(|| bad("child index"))?;
            let h: usize = it.next().and_then(|t| t.parse().ok()).ok_or_else(|| bad("head index"))?;
            if c >= children || h >= vocab {
                return Err(bad("index out of range"));
            }
            child_conditionals[c][h] = parse_row(it.next().unwrap_or(""))?;
        }
        let m = StarModel { vocab, head_marginal, child_conditionals, peakiness };
        m.validate()?;
        Ok(m)
    }
}

/// Star model over `vocab` symbols whose head marginal and conditional rows
/// are independent Dirichlet(`peakiness`) draws. Smaller means peakier.
pub fn gen_star_model_with_vocab(vocab: usize, num_children: usize, peakiness: f64, rng: &mut impl Rng) -> StarModel {
    assert!(num_children >= 1 && peakiness > 0.0);
    let head_marginal = sample_dirichlet(vocab, peakiness, rng);
    let child_conditionals = (0..num_children)
        .map(|_| (0..vocab).map(|_| sample_dirichlet(vocab, peakiness, rng)).collect())
        .collect();
    StarModel { vocab, head_marginal, child_conditionals, peakiness }
}

/// Ten-symbol star model.
pub fn gen_star_model(num_children: usize, peakiness: f64, rng: &mut impl Rng) -> StarModel {
    gen_star_model_with_vocab(10, num_children, peakiness, rng)
}

pub fn sample_star(model: &StarModel, rng: &mut impl Rng) -> StarAssignment {
    let head = sample_categorical(&model.head_marginal, rng);
    let children = model.child_conditionals.iter().map(|c| sample_categorical(&c[head], rng)).collect();
    StarAssignment { head, children }
}

/// Exact log-probability of an assignment. Returns `-inf` when any factor
/// has zero probability.
pub fn star_exact_logprob(model: &StarModel, a: &StarAssignment) -> Result<f64> {
    if a.children.len() != model.num_children() {
        return Err(ModelError::Dimension {
            what: "star assignment children",
            expected: model.num_children(),
            got: a.children.len(),
        });
    }
    let check = |v: usize| {
        if v < model.vocab {
            Ok(())
        } else {
            Err(ModelError::OutOfVocabulary { symbol: v, vocab: model.vocab })
        }
    };
    check(a.head)?;
    let mut lp = model.head_marginal[a.head].ln();
    for (c, &v) in a.children.iter().enumerate() {
        check(v)?;
        lp += model.child_conditionals[c][a.head][v].ln();
    }
    Ok(lp)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ViewMode {
    HeadFirst,
    HeadLast,
    /// All variables, head included, in a uniformly random order.
    Random,
}

impl std::str::FromStr for ViewMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "head-first" | "head_first" => Ok(ViewMode::HeadFirst),
            "head-last" | "head_last" => Ok(ViewMode::HeadLast),
            "random" => Ok(ViewMode::Random),
            other => Err(format!("unknown view {other:?}")),
        }
    }
}

/// Serializes an assignment; children keep their canonical (id) order.
pub fn ordering_views(a: &StarAssignment, vocab: usize, mode: ViewMode, rng: &mut impl Rng) -> SymbolSequence {
    let ids = match mode {
        ViewMode::HeadFirst => std::iter::once(a.head).chain(a.children.iter().copied()).collect(),
        ViewMode::HeadLast => a.children.iter().copied().chain(std::iter::once(a.head)).collect(),
        ViewMode::Random => {
            let mut all: Vec<usize> = std::iter::once(a.head).chain(a.children.iter().copied()).collect();
            all.shuffle(rng);
            all
        }
    };
    SymbolSequence::new(ids, vocab).expect("assignment symbols lie in the vocabulary")
}

/// Chain over `vocab` symbols emitting fixed-length grams.
#[derive(Clone, Debug, PartialEq)]
pub struct MarkovCorpusSpec {
    pub vocab: usize,
    /// Row-stochastic `transitions[prev][next]`.
    pub transitions: Vec<Vec<f64>>,
    pub gram_len: usize,
    pub train_size: usize,
    pub valid_size: usize,
}

/// Sampled grams plus the exact entropy they were drawn with.
#[derive(Clone, Debug)]
pub struct MarkovCorpus {
    pub train: Vec<Vec<usize>>,
    pub valid: Vec<Vec<usize>>,
    /// `H(next | prev)` under the stationary distribution, nats.
    pub conditional_entropy: f64,
    /// Exact entropy of one gram (stationary start), nats.
    pub gram_entropy: f64,
}

impl MarkovCorpus {
    /// Lowest achievable per-token perplexity on grams from this chain.
    pub fn perplexity_floor(&self, gram_len: usize) -> f64 {
        (self.gram_entropy / gram_len as f64).exp()
    }
}

impl MarkovCorpusSpec {
    /// Rows drawn from Dirichlet(`concentration`).
    pub fn random(vocab: usize, concentration: f64, gram_len: usize, train: usize, valid: usize, rng: &mut impl Rng) -> Self {
        let transitions = (0..vocab).map(|_| sample_dirichlet(vocab, concentration, rng)).collect();
        MarkovCorpusSpec { vocab, transitions, gram_len, train_size: train, valid_size: valid }
    }

    /// `i -> i + 1 (mod vocab)` with probability one.
    pub fn cycle(vocab: usize, gram_len: usize, train: usize, valid: usize) -> Self {
        let transitions = (0..vocab)
            .map(|i| (0..vocab).map(|j| if j == (i + 1) % vocab { 1.0 } else { 0.0 }).collect())
            .collect();
        MarkovCorpusSpec { vocab, transitions, gram_len, train_size: train, valid_size: valid }
    }

    pub fn uniform(vocab: usize, gram_len: usize, train: usize, valid: usize) -> Self {
        let transitions = vec![vec![1.0 / vocab as f64; vocab]; vocab];
        MarkovCorpusSpec { vocab, transitions, gram_len, train_size: train, valid_size: valid }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab == 0 || self.gram_len == 0 {
            return Err(ModelError::Invalid("markov corpus needs a vocabulary and gram length".into()));
        }
        let ok = self.transitions.len() == self.vocab
            && self.transitions.iter().all(|r| {
                r.len() == self.vocab && r.iter().all(|&v| v >= 0.0) && (r.iter().sum::<f64>() - 1.0).abs() < 1e-9
            });
        if ok {
            Ok(())
        } else {
            Err(ModelError::Invalid("transition rows must be distributions".into()))
        }
    }

    /// Stationary distribution by power iteration from uniform, averaged
    /// over a period so periodic chains converge too.
    pub fn stationary(&self) -> Vec<f64> {
        let v = self.vocab;
        let mut p = vec![1.0 / v as f64; v];
        let mut avg = vec![0.0; v];
        let iters = 2000;
        for it in 0..iters {
            let mut next = vec![0.0; v];
            for (i, &pi) in p.iter().enumerate() {
                for (j, &t) in self.transitions[i].iter().enumerate() {
                    next[j] += pi * t;
                }
            }
            p = next;
            if it >= iters / 2 {
                avg.iter_mut().zip(&p).for_each(|(a, b)| *a += b);
            }
        }
        let z: f64 = avg.iter().sum();
        avg.iter().map(|a| a / z).collect()
    }

    pub fn conditional_entropy(&self) -> f64 {
        self.stationary().iter().zip(&self.transitions).map(|(p, row)| p * entropy(row)).sum()
    }

    pub fn gram_entropy(&self) -> f64 {
        entropy(&self.stationary()) + (self.gram_len as f64 - 1.0) * self.conditional_entropy()
    }

    pub fn sample_gram(&self, start: &[f64], rng: &mut impl Rng) -> Vec<usize> {
        let mut g = Vec::with_capacity(self.gram_len);
        let mut cur = sample_categorical(start, rng);
        g.push(cur);
        for _ in 1..self.gram_len {
            cur = sample_categorical(&self.transitions[cur], rng);
            g.push(cur);
        }
        g
    }
}

/// Train and validation grams, each started from the stationary distribution.
pub fn gen_markov_corpus(spec: &MarkovCorpusSpec, rng: &mut impl Rng) -> Result<MarkovCorpus> {
    spec.validate()?;
    let start = spec.stationary();
    let train = (0..spec.train_size).map(|_| spec.sample_gram(&start, rng)).collect();
    let valid = (0..spec.valid_size).map(|_| spec.sample_gram(&start, rng)).collect();
    Ok(MarkovCorpus {
        train,
        valid,
        conditional_entropy: spec.conditional_entropy(),
        gram_entropy: spec.gram_entropy(),
    })
}

/// Writes a dataset: one `#`-prefixed header echoing the generator spec,
/// then one whitespace-separated example per line.
pub fn write_dataset<W: Write, T: std::fmt::Display>(mut w: W, header: &str, rows: &[Vec<T>]) -> std::io::Result<()> {
    writeln!(w, "# {header}")?;
    for row in rows {
        let line = row.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ");
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// Reads a dataset written by [`write_dataset`] (or any file with one
/// whitespace-separated example per line). Returns the header, if present.
pub fn read_dataset<R: BufRead, T: std::str::FromStr>(r: R) -> Result<(Option<String>, Vec<Vec<T>>)> {
    let mut header = None;
    let mut rows = Vec::new();
    for (no, line) in r.lines().enumerate() {
        let line = line.map_err(|e| ModelError::Invalid(format!("read error: {e}")))?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        if let Some(h) = t.strip_prefix('#') {
            if no == 0 {
                header = Some(h.trim().to_string());
            }
            continue;
        }
        let row = t
            .split_whitespace()
            .map(|tok| tok.parse::<T>().map_err(|_| ModelError::Invalid(format!("line {}: bad token {tok:?}", no + 1))))
            .collect::<Result<Vec<T>>>()?;
        rows.push(row);
    }
    Ok((header, rows))
}
