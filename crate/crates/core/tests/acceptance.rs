//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! `ACCEPTANCE_ONLY=3,5` runs a subset.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rpw_core::cells::{affine_softmax, Linear, LstmParams, LstmState, MlpParams, ScoreMode, Scorer};
use rpw_core::diffcore::{finite_diff_check_directions, finite_diff_check_params, ParamSet, Session, Tensor, Var};
use rpw_core::harness::checkpoint;
use rpw_core::harness::train::{load_run, write_run, METRICS_FILE, ORDERINGS_FILE};
use rpw_core::harness::{evaluate, train, MetricLog, OptimizerKind, RunResult, TaskId, TrainConfig};
use rpw_core::order_search::{exhaustive_best_ordering, read_ordering_log, Candidates, Ordering};
use rpw_core::par;
use rpw_core::seq_models::{apply_ordering, natural_tokens, PositionedToken, SeqModel, SeqModelConfig, SymbolSequence};
use rpw_core::set_models::{pack_scalar_sets, read_block, Feed, SetModelConfig, SetPointerModel};
use rpw_core::tasks::{gen_star_model_with_vocab, star_exact_logprob, StarAssignment, ViewMode};
use rpw_core::Result;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn weighted_sum(s: &mut Session, v: Var, seed: u64) -> Result<Var> {
    let dims = s.value(v).dims().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = dims.iter().product();
    let w = s.constant(Tensor::new(&dims, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())?);
    let p = s.mul(v, w)?;
    Ok(s.sum(p)?)
}

fn random_input(rng: &mut ChaCha8Rng, dims: &[usize]) -> Tensor {
    let n = dims.iter().product();
    Tensor::new(dims, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Finite differences over every cell, the process block, the write block
/// and the chain-rule NLL.
fn gradient_correctness() -> Result<Verdict> {
    let step = 1e-5;
    let mut worst: Vec<(&str, f64)> = Vec::new();
    let mut record = |name: &'static str, e: f64| match worst.iter_mut().find(|(n, _)| *n == name) {
        Some(w) => w.1 = w.1.max(e),
        None => worst.push((name, e)),
    };
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        let mut ps = ParamSet::new();
        let lstm = LstmParams::new(&mut ps, "lstm", 3, 4, &mut rng)?;
        let x = random_input(&mut rng, &[2, 3]);
        let h0 = ps.add_uniform("h0", &[2, 4], 1.0, &mut rng)?;
        let c0 = ps.add_uniform("c0", &[2, 4], 1.0, &mut rng)?;
        record(
            "lstm",
            finite_diff_check_params(
                &ps,
                |s| {
                    let st = LstmState { h: s.param(h0), c: s.param(c0) };
                    let xv = s.constant(x.clone());
                    let st = lstm.step(s, st, Some(xv))?;
                    let st = lstm.step(s, st, Some(xv))?;
                    let both = s.add(st.h, st.c)?;
                    weighted_sum(s, both, seed)
                },
                step,
            )?,
        );

        let mut ps = ParamSet::new();
        let mlp = MlpParams::new(&mut ps, "reader", &[1, 5, 3], &mut rng)?;
        let xs = random_input(&mut rng, &[4, 1]);
        record(
            "reader",
            finite_diff_check_params(
                &ps,
                |s| {
                    let xv = s.constant(xs.clone());
                    let m = mlp.embed(s, xv)?;
                    weighted_sum(s, m, seed)
                },
                step,
            )?,
        );

        let mut ps = ParamSet::new();
        let head = Linear::new(&mut ps, "head", 4, 6, &mut rng)?;
        let g = random_input(&mut rng, &[2, 4]);
        record(
            "affine-softmax",
            finite_diff_check_params(
                &ps,
                |s| {
                    let gv = s.constant(g.clone());
                    let p = affine_softmax(s, &head, gv, None)?;
                    let l = s.log(p)?;
                    weighted_sum(s, l, seed)
                },
                step,
            )?,
        );

        for mode in [ScoreMode::Dot, ScoreMode::Additive] {
            let mut ps = ParamSet::new();
            let scorer = Scorer::new(&mut ps, "att", mode, 4, 4, &mut rng)?;
            let mem = ps.add_uniform("mem", &[2, 3, 4], 1.0, &mut rng)?;
            let q = ps.add_uniform("q", &[2, 4], 1.0, &mut rng)?;
            let name = if mode == ScoreMode::Dot { "dot-score" } else { "additive-score" };
            record(
                name,
                finite_diff_check_params(
                    &ps,
                    |s| {
                        let m = s.param(mem);
                        let keys = scorer.keys(s, m)?;
                        let qv = s.param(q);
                        let e = scorer.scores(s, &keys, qv)?;
                        let a = s.softmax(e, None)?;
                        weighted_sum(s, a, seed)
                    },
                    step,
                )?,
            );
        }

        let small = |p, g| SetModelConfig { reader_sizes: vec![1, 4, 5], d_h: 5, process_steps: p, glimpses: g, ..Default::default() };
        let model = SetPointerModel::new(small(2, 0), &mut rng)?;
        let sets = Tensor::new(&[2, 4, 1], (0..8).map(|_| rng.random()).collect())?;
        record(
            "process block N=4 T=2",
            finite_diff_check_directions(
                &model.params,
                |s| {
                    let mem = read_block(s, &sets, &model.reader)?;
                    let st = model.encode(s, &mem)?;
                    let q = st.q_star(s)?;
                    weighted_sum(s, q, seed)
                },
                step,
                16,
                seed,
            )?,
        );

        let model = SetPointerModel::new(small(1, 1), &mut rng)?;
        let sets = Tensor::new(&[2, 3, 1], (0..6).map(|_| rng.random()).collect())?;
        let mut targets = vec![vec![0, 1, 2], vec![0, 1, 2]];
        targets.iter_mut().for_each(|t| t.shuffle(&mut rng));
        record(
            "write block N=3 G=1",
            finite_diff_check_directions(&model.params, |s| model.loss(s, &sets, &targets), step, 16, seed)?,
        );

        let cfg = SeqModelConfig { vocab: 5, d_emb: 3, d_h: 4, position_capacity: Some(4) };
        let lm = SeqModel::new(cfg, &mut rng)?;
        let batch: Vec<Vec<PositionedToken>> = (0..3)
            .map(|_| {
                let ids: Vec<usize> = (0..4).map(|_| rng.random_range(0..5)).collect();
                let mut pi: Vec<usize> = (1..=4).collect();
                pi.shuffle(&mut rng);
                let t = natural_tokens(&SymbolSequence::new(ids, 5).unwrap());
                apply_ordering(&t, &Ordering::from_one_based(&pi).unwrap()).unwrap()
            })
            .collect();
        record(
            "chain-rule NLL",
            finite_diff_check_directions(&lm.params, |s| lm.batch_nll(s, &batch, None), step, 16, seed)?,
        );
    }
    let max = worst.iter().map(|w| w.1).fold(0.0, f64::max);
    let detail: Vec<String> = worst.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect();
    Ok(verdict(max < 1e-4, format!("max relative error {max:.2e} over 20 seeds ({})", detail.join(", "))))
}

fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let num = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    num / den.max(1e-300)
}

/// Shuffling the memories leaves q*_T unchanged and permutes the pointer
/// distributions along with the elements.
fn permutation_invariance() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let cfg = SetModelConfig { process_steps: 5, glimpses: 1, ..Default::default() };
    let model = SetPointerModel::new(cfg, &mut rng)?;
    let xs: Vec<f64> = (0..10).map(|_| rng.random()).collect();
    let mut target: Vec<usize> = (0..10).collect();
    target.shuffle(&mut rng);
    let run = |xs: &[f64], target: &[usize]| -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let mut s = Session::frozen(&model.params);
        let set = pack_scalar_sets(&[xs])?;
        let mem = read_block(&mut s, &set, &model.reader)?;
        let st = model.encode(&mut s, &mem)?;
        let q = st.q_star(&mut s)?;
        let q = s.value(q).data().to_vec();
        let targets = vec![target.to_vec()];
        let tr = model.forward(&mut s, &set, Feed::Teacher(&targets), false)?;
        Ok((q, tr.step_distributions.iter().map(|d| s.value(*d).data().to_vec()).collect()))
    };
    let (q0, p0) = run(&xs, &target)?;
    let (mut worst_q, mut worst_p) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let mut sigma: Vec<usize> = (0..10).collect();
        sigma.shuffle(&mut rng);
        let permuted: Vec<f64> = sigma.iter().map(|&j| xs[j]).collect();
        let mut inv = [0; 10];
        for (new, &old) in sigma.iter().enumerate() {
            inv[old] = new;
        }
        let moved: Vec<usize> = target.iter().map(|&t| inv[t]).collect();
        let (q, p) = run(&permuted, &moved)?;
        worst_q = worst_q.max(rel_diff(&q, &q0));
        for (pk, bk) in p.iter().zip(&p0) {
            let expected: Vec<f64> = sigma.iter().map(|&j| bk[j]).collect();
            worst_p = worst_p.max(rel_diff(pk, &expected));
        }
    }
    Ok(verdict(
        worst_q < 1e-9 && worst_p < 1e-9,
        format!("100 shuffles of 10 elements, T=5: q* rel change {worst_q:.1e}, pointer rel change {worst_p:.1e}"),
    ))
}

fn sort_config(n: usize, p: usize, g: usize, seed: u64) -> TrainConfig {
    let mut c = TrainConfig::for_task(TaskId::Sort);
    c.n = n;
    c.process_steps = p;
    c.glimpses = g;
    c.seed = seed;
    c.data_seed = seed;
    c
}

fn run_all(configs: Vec<TrainConfig>) -> Vec<RunResult> {
    par::map(configs, |c| train(&c, None).expect("training run"))
}

fn accuracy(r: &RunResult) -> f64 {
    r.test_metric("accuracy").expect("sorting reports accuracy")
}

/// Sorting accuracy of read-process-write with and without processing and glimpses on N=5 and N=10.
fn sorting() -> Result<Verdict> {
    let seeds: Vec<u64> = (1..=5).collect();
    let variants = [(5, 1), (0, 1), (0, 0)];
    let configs: Vec<TrainConfig> =
        seeds.iter().flat_map(|&s| variants.iter().map(move |&(p, g)| sort_config(5, p, g, s))).collect();
    let n5 = run_all(configs);
    let acc5: Vec<[f64; 3]> = n5.chunks(3).map(|c| [accuracy(&c[0]), accuracy(&c[1]), accuracy(&c[2])]).collect();
    let mean_best = acc5.iter().map(|a| a[0]).sum::<f64>() / acc5.len() as f64;
    let ordered = acc5.iter().filter(|a| a[0] > a[1] && a[1] > a[2]).count();

    let configs: Vec<TrainConfig> =
        seeds.iter().flat_map(|&s| [(5, 1), (5, 0)].into_iter().map(move |(p, g)| sort_config(10, p, g, s))).collect();
    let n10 = run_all(configs);
    let acc10: Vec<[f64; 2]> = n10.chunks(2).map(|c| [accuracy(&c[0]), accuracy(&c[1])]).collect();
    let glimpse_wins = acc10.iter().filter(|a| a[0] > a[1]).count();

    let a = mean_best >= 0.85;
    let b = ordered >= 4;
    let c = glimpse_wins >= 4;
    let fmt5: Vec<String> = acc5.iter().map(|a| format!("{:.3}/{:.3}/{:.3}", a[0], a[1], a[2])).collect();
    let fmt10: Vec<String> = acc10.iter().map(|a| format!("{:.3}/{:.3}", a[0], a[1])).collect();
    Ok(verdict(
        a && b && c,
        format!(
            "(a) N=5 P5G1 mean accuracy {mean_best:.3} [{}]; (b) P5G1>P0G1>P0G0 in {ordered}/5 seeds [{}]; \
             (c) N=10 P5 G1>G0 in {glimpse_wins}/5 seeds [{}]",
            if a { "ok" } else { "below 0.85" },
            fmt5.join(" "),
            fmt10.join(" ")
        ),
    ))
}

fn star_config(train_size: usize, view: ViewMode, seed: u64) -> TrainConfig {
    let mut c = TrainConfig::for_task(TaskId::Star);
    c.train_size = train_size;
    c.view = view;
    c.seed = seed;
    c.data_seed = seed;
    if train_size > 1000 {
        c.max_steps = 10_000;
    }
    c
}

/// Head-first beats head-last with little data; with plenty the order
/// should stop mattering.
fn star_models() -> Result<Verdict> {
    let seeds: Vec<u64> = (1..=5).collect();
    let mut configs = Vec::new();
    for &s in &seeds {
        configs.push(star_config(500, ViewMode::HeadFirst, s));
        configs.push(star_config(500, ViewMode::HeadLast, s));
    }
    for &s in &seeds[..3] {
        configs.push(star_config(20_000, ViewMode::HeadFirst, s));
        configs.push(star_config(20_000, ViewMode::HeadLast, s));
    }
    let runs = run_all(configs);
    let nll = |r: &RunResult| r.test_metric("nll").unwrap();
    let mut gap_ok = true;
    let mut worst_z = f64::INFINITY;
    for r in &runs {
        let z = r.test_metric("oracle_gap").unwrap() / r.test_metric("oracle_gap_se").unwrap().max(1e-300);
        worst_z = worst_z.min(z);
        gap_ok &= z > -3.0;
    }
    let small: Vec<f64> = runs[..10].chunks(2).map(|c| nll(&c[1]) - nll(&c[0])).collect();
    let large: Vec<f64> = runs[10..].chunks(2).map(|c| nll(&c[1]) - nll(&c[0])).collect();
    let small_wins = small.iter().filter(|&&d| d >= 0.05).count();
    let large_agree = large.iter().all(|d| d.abs() < 0.05);
    let fmt = |v: &[f64]| v.iter().map(|d| format!("{d:+.3}")).collect::<Vec<_>>().join(" ");
    Ok(verdict(
        small_wins >= 4 && large_agree && gap_ok,
        format!(
            "500 samples: head-last minus head-first NLL [{}], {small_wins}/5 >= 0.05; \
             20000 samples: [{}] {}; smallest oracle-gap z {worst_z:.1}",
            fmt(&small),
            fmt(&large),
            if large_agree { "agree within 0.05" } else { "do not agree within 0.05" }
        ),
    ))
}

fn ngram_config(seed: u64) -> TrainConfig {
    let mut c = TrainConfig::for_task(TaskId::Ngram);
    c.seed = seed;
    c.data_seed = seed;
    c
}

fn fixed_config(seed: u64, ordering: &Ordering) -> TrainConfig {
    let mut c = ngram_config(seed);
    c.ordering = Some(ordering.clone());
    c
}

fn search_config(seed: u64, candidates: Candidates) -> TrainConfig {
    let mut c = ngram_config(seed);
    c.set("search", "on").unwrap();
    c.order_search.as_mut().unwrap().candidates = candidates;
    c
}

/// Share of the most frequent chosen ordering over the last `steps` steps.
fn final_share(r: &RunResult, steps: usize) -> (Ordering, f64) {
    let last = r.config.max_steps.saturating_sub(steps);
    let window = r.orderings.iter().filter(|(s, _)| *s >= last).flat_map(|(_, c)| c.iter().map(|c| &c.ordering));
    rpw_core::harness::train::modal_ordering(window).expect("orderings were selected")
}

fn set_ppl(r: &RunResult) -> f64 {
    r.test_metric("set_perplexity").expect("5-grams allow set perplexity")
}

/// Two candidate orderings: the search settles on one and matches the
/// better fixed ordering.
fn order_search_easy() -> Result<Verdict> {
    let natural = Ordering::identity(5);
    let scrambled: Ordering = "5,1,3,4,2".parse()?;
    let seeds: Vec<u64> = (1..=10).collect();
    let mut configs = Vec::new();
    for &s in &seeds {
        configs.push(search_config(s, Candidates::List(vec![natural.clone(), scrambled.clone()])));
        configs.push(fixed_config(s, &natural));
        configs.push(fixed_config(s, &scrambled));
    }
    let runs = run_all(configs);
    let mut good = 0;
    let mut rows = Vec::new();
    for c in runs.chunks(3) {
        let (modal, share) = final_share(&c[0], 1000);
        let best_fixed = set_ppl(&c[1]).min(set_ppl(&c[2]));
        let ratio = set_ppl(&c[0]) / best_fixed;
        let ok = share >= 0.9 && ratio <= 1.05;
        good += ok as usize;
        rows.push(format!("{modal}:{share:.2} x{ratio:.3}"));
    }
    Ok(verdict(good >= 8, format!("{good}/10 seeds concentrate >= 90% and land within 5% of the best fixed order [{}]", rows.join(" "))))
}

/// All 120 orderings admissible: perplexity matches the natural order.
fn order_search_hard() -> Result<Verdict> {
    let natural = Ordering::identity(5);
    let seeds: Vec<u64> = (1..=3).collect();
    let mut configs = Vec::new();
    for &s in &seeds {
        configs.push(search_config(s, Candidates::All));
        configs.push(fixed_config(s, &natural));
    }
    let runs = run_all(configs);
    let mut rows = Vec::new();
    let mut all_ok = true;
    for c in runs.chunks(2) {
        let ratio = set_ppl(&c[0]) / set_ppl(&c[1]);
        let (modal, share) = final_share(&c[0], 1000);
        all_ok &= ratio <= 1.05;
        rows.push(format!("x{ratio:.3} (modal {modal}:{share:.2})"));
    }
    let dir = tempfile::tempdir().map_err(|e| rpw_core::ModelError::Invalid(e.to_string()))?;
    write_run(dir.path(), &runs[0]).expect("writing run");
    let logged = read_ordering_log(&std::fs::read_to_string(dir.path().join(ORDERINGS_FILE)).unwrap())?;
    let expected: usize = runs[0].orderings.iter().map(|(_, c)| c.len()).sum();
    let logged_ok = logged.len() == expected && expected > 0;
    Ok(verdict(
        all_ok && logged_ok,
        format!("set perplexity vs fixed natural order [{}]; {} converged orderings logged", rows.join(" "), logged.len()),
    ))
}

fn enumerate_sequences(vocab: usize, len: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for _ in 0..len {
        out = out.into_iter().flat_map(|p| (0..vocab).map(move |v| [p.clone(), vec![v]].concat())).collect();
    }
    out
}

/// Exhaustive search, star probabilities and chain-rule normalization
/// against brute-force enumeration.
fn oracle_equivalence() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut mismatches = 0;
    for k in 0..50 {
        let n = 2 + k % 3;
        let cfg = SeqModelConfig { vocab: 6, d_emb: 4, d_h: 6, position_capacity: Some(4) };
        let mut m = SeqModel::new(cfg, &mut rng)?;
        m.params.values_mut().iter_mut().for_each(|t| t.data_mut().iter_mut().for_each(|v| *v *= 8.0));
        let ids: Vec<usize> = (0..n).map(|_| rng.random_range(0..6)).collect();
        let tokens = natural_tokens(&SymbolSequence::new(ids, 6)?);
        let (found, lp) = exhaustive_best_ordering(&m, &tokens, &Candidates::All)?;
        let mut best: Option<(Ordering, f64)> = None;
        for o in Ordering::all(n) {
            let l = m.sequence_log_probs(&[apply_ordering(&tokens, &o)?])?[0];
            if best.as_ref().is_none_or(|(_, b)| l > *b) {
                best = Some((o, l));
            }
        }
        let (bo, bl) = best.unwrap();
        if bo != found || (bl - lp).abs() > 1e-12 {
            mismatches += 1;
        }
    }

    let mut star_err: f64 = 0.0;
    for (vocab, children) in [(10, 2), (3, 4), (4, 3)] {
        for seed in 0..3 {
            let star = gen_star_model_with_vocab(vocab, children, 0.5, &mut ChaCha8Rng::seed_from_u64(seed));
            let mut total = 0.0;
            for head in 0..vocab {
                for kids in enumerate_sequences(vocab, children) {
                    total += star_exact_logprob(&star, &StarAssignment { head, children: kids })?.exp();
                }
            }
            star_err = star_err.max((total - 1.0).abs());
        }
    }

    let mut chain_err: f64 = 0.0;
    for positioned in [false, true] {
        let cfg = SeqModelConfig { vocab: 3, d_emb: 4, d_h: 5, position_capacity: positioned.then_some(4) };
        let m = SeqModel::new(cfg, &mut rng)?;
        let len = 4;
        let mut seqs = Vec::new();
        for ids in enumerate_sequences(3, len) {
            let t = natural_tokens(&SymbolSequence::new(ids, 3)?);
            if positioned {
                for o in Ordering::all(len) {
                    seqs.push(apply_ordering(&t, &o)?);
                }
            } else {
                seqs.push(t);
            }
        }
        let total: f64 = m.sequence_log_probs(&seqs)?.iter().map(|l| l.exp()).sum();
        chain_err = chain_err.max((total - 1.0).abs());
    }
    Ok(verdict(
        mismatches == 0 && star_err < 1e-9 && chain_err < 1e-9,
        format!(
            "exhaustive search mismatches {mismatches}/50; star mass error {star_err:.1e}; chain-rule mass error {chain_err:.1e}"
        ),
    ))
}

/// Same seed, same log; saved runs evaluate to the same numbers.
fn determinism_and_persistence() -> Result<Verdict> {
    let mut configs = Vec::new();
    for task in [TaskId::Sort, TaskId::Star, TaskId::Ngram] {
        let mut c = TrainConfig::for_task(task);
        c.max_steps = 120;
        c.valid_every = 40;
        c.valid_size = 200;
        c.test_size = 300;
        if task == TaskId::Ngram {
            c.set("search", "on")?;
            c.set("pretrain_steps", "50")?;
            c.train_size = 2000;
        }
        if task == TaskId::Star {
            c.optimizer = OptimizerKind::Adam;
        }
        configs.push(c);
    }
    let mut identical = 0;
    let mut restored = 0;
    let mut bytes_equal = 0;
    for c in &configs {
        let a = train(c, None).expect("run");
        let b = train(c, None).expect("run");
        identical += (a.log.to_csv() == b.log.to_csv()) as usize;
        let dir = tempfile::tempdir().map_err(|e| rpw_core::ModelError::Invalid(e.to_string()))?;
        write_run(dir.path(), &a).expect("write run");
        let (cfg, model) = load_run(dir.path()).expect("load run");
        let again = evaluate(&cfg, &model).expect("evaluate");
        let log = MetricLog::from_csv(&std::fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap())?;
        restored += (again == a.test && log == a.log) as usize;
        let mut first = Vec::new();
        checkpoint::write_checkpoint(&mut first, a.model.params()).unwrap();
        let mut second = Vec::new();
        checkpoint::write_checkpoint(&mut second, model.params()).unwrap();
        bytes_equal += (first == second) as usize;
    }
    Ok(verdict(
        identical == 3 && restored == 3 && bytes_equal == 3,
        format!("identical logs {identical}/3 tasks; metrics restored from checkpoint {restored}/3; checkpoint bytes equal {bytes_equal}/3"),
    ))
}

type Criterion = (usize, &'static str, fn() -> Result<Verdict>);

fn main() {
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let criteria: [Criterion; 8] = [
        (1, "gradient correctness", gradient_correctness),
        (2, "permutation invariance", permutation_invariance),
        (3, "sorting", sorting),
        (4, "star graphical models", star_models),
        (5, "order search, easy", order_search_easy),
        (6, "order search, hard", order_search_hard),
        (7, "oracle equivalence", oracle_equivalence),
        (8, "determinism and persistence", determinism_and_persistence),
    ];
    let only: Option<Vec<usize>> =
        std::env::var("ACCEPTANCE_ONLY").ok().map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let mut failed = 0;
    for (id, name, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let t0 = Instant::now();
        let v = run().unwrap_or_else(|e| verdict(false, format!("error: {e}")));
        let tag = if v.pass { "PASS" } else { "FAIL" };
        println!("{tag} [{id}] {name} ({:.0}s): {}", t0.elapsed().as_secs_f64(), v.detail);
        failed += (!v.pass) as usize;
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
