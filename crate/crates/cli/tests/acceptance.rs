//! Acceptance criteria, one PASS/FAIL line each. Exits non-zero if any fails.

use std::panic::{self, AssertUnwindSafe};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use apeorder_core::align::{align_human, human_ordered_trace};
use apeorder_core::analysis::{
    decode_behavior_stats, jump_back_stats, kendall_tau_distance, order_permutation, ordering_stats,
};
use apeorder_core::corpus::{build_training_set, check_trace, OrderingMode};
use apeorder_core::decoding::StopReason;
use apeorder_core::keystrokes::{replay, replay_sample, KeystrokeLog};
use apeorder_core::metrics::{bleu, corpus_ter, ter, TerOptions};
use apeorder_core::reorder::derive_seed;
use apeorder_core::synthetic::{self, keystroke_states, CorpusOptions, EditorOptions};
use apeorder_core::{apply_all, l2r_trace, min_edit_script, realize, tokenize, EditAction, Permutation, Trace};
use apeorder_model::network::loss_and_grad;
use apeorder_model::{
    decode, loss, train, DecodeOptions, Model, ModelConfig, ModelInput, Target, TrainConfig, TrainExample, Vocab,
};

const SWAP_MT: &str = "Die LMS geöffnet ist .";
const SWAP_PE: &str = "Die LMS ist geöffnet .";
const LONG_MT: &str = "Wenn Sie die Deckkraft verringern , wird das zugrunde liegende Bildmaterial durch die Oberfläche des Objekts , Kontur , Fläche oder Text angezeigt .";
const LONG_PE: &str = "Wenn Sie die Deckkraft verringern , wird das darunterliegende Bildmaterial durch die Oberfläche des Objekts , der Kontur , der Fläche bzw. des Textes sichtbar .";
const LONG_L2R: &str = "D:8:zugrunde D:8:liegende I:8:darunterliegende I:16:der I:19:der D:21:oder D:21:Text D:21:angezeigt I:21:bzw. I:22:des I:23:Textes I:24:sichtbar STOP";
const LONG_HORD: &str = "I:17:der I:20:der D:22:oder I:24:bzw. I:25:des D:22:Text I:25:Textes D:8:zugrunde D:8:liegende I:8:darunterliegende D:21:angezeigt I:24:sichtbar STOP";
const LONG_HUMAN: &str = "I:17:der I:20:der D:22:oder I:22:bzw. I:23:des D:24:Text I:24:Textes D:8:zugrunde D:8:liegende I:8:darunterliegende D:25:. D:24:angezeigt I:24:sichtbar I:25:. STOP";

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_tokens(rng: &mut ChaCha8Rng, vocab: usize, max_len: usize) -> Vec<String> {
    let n = rng.random_range(0..=max_len);
    (0..n).map(|_| format!("w{}", rng.random_range(0..vocab))).collect()
}

fn round_trip() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut pairs: Vec<(Vec<String>, Vec<String>)> =
        (0..1000).map(|_| (random_tokens(&mut rng, 50, 20), random_tokens(&mut rng, 50, 20))).collect();
    pairs.push((tokenize(SWAP_MT), tokenize(SWAP_PE)));
    pairs.push((tokenize(LONG_MT), tokenize(LONG_PE)));
    let mut checked = 0;
    for (i, (mt, pe)) in pairs.iter().enumerate() {
        let script = min_edit_script(mt, pe);
        let perms = std::iter::once(Permutation::identity(script.len()))
            .chain((0..20).map(|k| Permutation::shuffled(script.len(), derive_seed(i as u64, k))));
        for perm in perms {
            let trace = realize(&script, &perm).map_err(|e| e.to_string())?;
            let out = apply_all(mt, trace.actions()).map_err(|e| format!("pair {i}: {e}"))?;
            check(out == *pe, || format!("pair {i}: permutation {:?} misses pe", perm.as_slice()))?;
            checked += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(secs < 5.0, || format!("took {secs:.2} s"))?;
    Ok(format!("{checked} realizations reach pe in {secs:.2} s"))
}

/// Insert/delete distance with substitution cost 2.
fn indel_distance(a: &[u8], b: &[u8]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    for i in 1..=a.len() {
        let mut row = vec![i; b.len() + 1];
        for j in 1..=b.len() {
            let sub = prev[j - 1] + if a[i - 1] == b[j - 1] { 0 } else { 2 };
            row[j] = sub.min(prev[j] + 1).min(row[j - 1] + 1);
        }
        prev = row;
    }
    prev[b.len()]
}

fn minimality() -> Outcome {
    let mut seqs: Vec<Vec<u8>> = vec![Vec::new()];
    let mut frontier = seqs.clone();
    for _ in 0..6 {
        frontier = frontier.iter().flat_map(|s| (0..3u8).map(move |c| [s.as_slice(), &[c]].concat())).collect();
        seqs.extend(frontier.iter().cloned());
    }
    let words: Vec<Vec<&str>> = seqs.iter().map(|s| s.iter().map(|&c| ["a", "b", "c"][c as usize]).collect()).collect();
    let mut pairs = 0;
    for (x, wx) in seqs.iter().zip(&words) {
        for (y, wy) in seqs.iter().zip(&words) {
            let size = min_edit_script(wx, wy).len();
            let oracle = indel_distance(x, y);
            check(size == oracle, || format!("{wx:?} -> {wy:?}: script {size}, oracle {oracle}"))?;
            pairs += 1;
        }
    }
    Ok(format!("{pairs} pairs match the oracle"))
}

fn verb_swap() -> Outcome {
    let (mt, pe) = (tokenize(SWAP_MT), tokenize(SWAP_PE));
    let script = min_edit_script(&mt, &pe);
    let l2r = l2r_trace(&script).to_string();
    check(l2r == "I:2:ist D:4:ist STOP", || format!("l2r gave `{l2r}`"))?;
    let del_first = realize(&script, &Permutation::new(vec![1, 0]).unwrap()).unwrap().to_string();
    check(del_first == "D:3:ist I:2:ist STOP", || format!("DEL-first gave `{del_first}`"))?;
    Ok(format!("`{l2r}` and `{del_first}`"))
}

fn long_sentence() -> Outcome {
    let (mt, pe) = (tokenize(LONG_MT), tokenize(LONG_PE));
    let script = min_edit_script(&mt, &pe);
    let l2r = l2r_trace(&script).to_string();
    check(l2r == LONG_L2R, || format!("l2r row differs: `{l2r}`"))?;
    let human: Trace = LONG_HUMAN.parse().unwrap();
    let alignment = align_human(&mt, &script, &human).map_err(|e| e.to_string())?;
    let hord = human_ordered_trace(&script, &alignment).map_err(|e| e.to_string())?.to_string();
    check(hord == LONG_HORD, || format!("h-ord row differs: `{hord}`"))?;
    Ok("l2r and h-ord rows reproduced token for token".into())
}

fn ordering_statistics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut traces = Vec::new();
    let mut perms = Vec::new();
    for _ in 0..1000 {
        let (mt, pe) = (random_tokens(&mut rng, 20, 15), random_tokens(&mut rng, 20, 15));
        let script = min_edit_script(&mt, &pe);
        let trace = l2r_trace(&script);
        perms.push(order_permutation(&trace, &script).map_err(|e| e.to_string())?);
        traces.push(trace);
    }
    let l2r = ordering_stats(&traces, &perms, &[4]);
    check(l2r.kendall_tau == 0.0 && l2r.jump_back_rate == 0.0, || {
        format!("l2r tau {} jump-back {}", l2r.kendall_tau, l2r.jump_back_rate)
    })?;

    let mut taus = Vec::new();
    let mut seed = 0u64;
    while taus.len() < 1000 {
        seed += 1;
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let (mt, pe) = (random_tokens(&mut r, 30, 10), random_tokens(&mut r, 30, 10));
        let script = min_edit_script(&mt, &pe);
        if script.len() != 10 {
            continue;
        }
        let trace = realize(&script, &Permutation::shuffled(10, seed)).unwrap();
        let perm = order_permutation(&trace, &script).map_err(|e| e.to_string())?;
        taus.push(kendall_tau_distance(perm.as_slice()));
    }
    let mean = taus.iter().sum::<f64>() / taus.len() as f64;
    check((0.47..=0.53).contains(&mean), || format!("shuffled mean tau {mean:.4}"))?;

    let jb = jump_back_stats(&LONG_HORD.parse().unwrap(), &[4]);
    check(jb.n_actions == 12 && jb.jump_backs == 2 && jb.at_least == vec![(4, 1)], || format!("h-ord row {jb:?}"))?;
    Ok(format!("l2r tau 0 and jump-back 0; shuffled mean tau {mean:.4}; h-ord 2/12 jump-backs, 1/12 >= 4"))
}

/// A trace of one-word actions on distinct tokens, each at least three
/// positions away from the previous one so that every action is its own
/// editing episode.
fn clean_trace(rng: &mut ChaCha8Rng) -> (Vec<String>, Trace) {
    let n = rng.random_range(6..=12);
    let mt: Vec<String> = (0..n).map(|i| format!("m{i}")).collect();
    let mut state = mt.clone();
    let mut actions = Vec::new();
    let mut prev: Option<usize> = None;
    for j in 0..rng.random_range(1..=4) {
        let insert = rng.random_bool(0.5) || state.len() <= 1;
        let limit = if insert { state.len() + 1 } else { state.len() };
        let options: Vec<usize> = (0..limit).filter(|&p| prev.is_none_or(|q| p.abs_diff(q) >= 3)).collect();
        if options.is_empty() {
            break;
        }
        let pos = options[rng.random_range(0..options.len())];
        let action = if insert { EditAction::insert(pos, format!("n{j}")) } else { EditAction::delete(pos, state[pos].clone()) };
        state = apply_all(&state, std::slice::from_ref(&action)).unwrap();
        actions.push(action);
        prev = Some(pos);
    }
    (mt, Trace::terminated(actions))
}

fn keystroke_replay() -> Outcome {
    let opts = CorpusOptions { editor: EditorOptions { hesitation_rate: 0.5, ..Default::default() }, ..Default::default() };
    let corpus = synthetic::corpus(500, 6, &opts);
    let mut redundant = 0;
    for s in &corpus {
        let log = KeystrokeLog::new(s.keystrokes.clone().unwrap()).map_err(|e| e.to_string())?;
        let r = replay_sample(&s.mt, &s.pe, &log).map_err(|e| format!("{}: {e}", s.id))?;
        let out = apply_all(&s.mt, r.trace.actions()).map_err(|e| format!("{}: {e}", s.id))?;
        check(out == s.pe, || format!("{}: replay misses pe", s.id))?;
        redundant += usize::from(r.trace.num_edits() > s.script().len());
    }
    check(redundant > 0, || "no hesitation reached the logs".into())?;

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let clean = EditorOptions::clean();
    for i in 0..500 {
        let (mt, trace) = clean_trace(&mut rng);
        let states = keystroke_states(&mt, &trace, &clean, &mut rng);
        let got = replay(&KeystrokeLog::new(states).unwrap()).trace;
        check(got == trace, || format!("clean log {i}: generated `{trace}`, recovered `{got}`"))?;
    }
    Ok(format!("500/500 logs reach pe ({redundant} with hesitations); 500/500 clean logs recover their trace"))
}

fn alignment() -> Outcome {
    let n = 1000;
    let mut rates = Vec::new();
    for k in [0.0, 0.05, 0.1, 0.2] {
        let corpus = synthetic::corpus(n, 9, &CorpusOptions { unalignable_rate: k, ..Default::default() });
        let (dataset, report) = build_training_set(&corpus, OrderingMode::HOrd, 0).map_err(|e| e.to_string())?;
        check(report.excluded.is_empty(), || format!("{} samples excluded", report.excluded.len()))?;
        let rate = report.fallback_rate(dataset.entries.len());
        check((rate - k).abs() <= 0.01, || format!("injected {k}, fallback rate {rate}"))?;
        if k == 0.0 {
            for (e, s) in dataset.entries.iter().zip(&corpus) {
                check_trace(s, &e.trace).map_err(|e| e.to_string())?;
                check(!e.fallback, || format!("{} fell back", s.id))?;
            }
        }
        rates.push(format!("{:.0}%->{:.1}%", 100.0 * k, 100.0 * rate));
    }
    Ok(format!("fallback rates {}; 0% corpus reproduces pe", rates.join(", ")))
}

fn toy_model(seed: u64, std: f64) -> Model {
    let vocab = Vocab::build(["a", "b", "c"]);
    let config = ModelConfig { layers: 2, hidden: 8, heads: 2, ffn: 16, max_len: 10, vocab_size: vocab.len() };
    Model::init(config, vocab, std, seed).unwrap()
}

fn gradients() -> Outcome {
    let step = 1e-5;
    let mut worst: (f64, String) = (0.0, String::new());
    let mut groups = 0;
    for seed in 0..3 {
        let m = toy_model(seed, 0.5);
        let input = ModelInput::new(&m.vocab, &["a", "b", "c"], &["c", "a", "b", "b"], 10).unwrap();
        for action in ["I:2:c", "D:1:a", "STOP"] {
            let target = Target::from_action(&m.vocab, &input, &action.parse().unwrap()).unwrap();
            let mut analytic = vec![0.0; m.num_params()];
            loss_and_grad(&m, &input, target, 0.1, None, &mut analytic).unwrap();
            let mut probe = m.clone();
            for t in &m.layout().tensors {
                let (mut diff, mut na, mut nn) = (0.0f64, 0.0f64, 0.0f64);
                for i in t.range() {
                    let orig = probe.params[i];
                    probe.params[i] = orig + step;
                    let up = loss(&probe, &input, target, 0.1).unwrap();
                    probe.params[i] = orig - step;
                    let down = loss(&probe, &input, target, 0.1).unwrap();
                    probe.params[i] = orig;
                    let numeric = (up - down) / (2.0 * step);
                    diff += (analytic[i] - numeric).powi(2);
                    na += analytic[i].powi(2);
                    nn += numeric.powi(2);
                }
                let scale = na.sqrt().max(nn.sqrt());
                // The key bias gradient is identically zero; compare absolutely.
                let rel = if scale < 1e-7 { diff.sqrt() } else { diff.sqrt() / scale };
                check(rel < 1e-4, || format!("seed {seed} {action} {}: {rel:e}", t.name))?;
                if rel > worst.0 {
                    worst = (rel, t.name.clone());
                }
                groups += 1;
            }
        }
    }
    Ok(format!("{groups} tensor checks, worst relative error {:.2e} ({})", worst.0, worst.1))
}

fn decode_contract() -> Outcome {
    let words = ["a", "b", "c", "d", "e"];
    let vocab = Vocab::build(words);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut reasons = [0usize; 3];
    let mut decodes = 0;
    for m in 0..200u64 {
        let std = [0.02, 0.3, 1.0, 3.0][m as usize % 4];
        let config = ModelConfig { layers: 1, hidden: 8, heads: 2, ffn: 16, max_len: 64, vocab_size: vocab.len() };
        let model = Model::init(config, vocab.clone(), std, m).unwrap();
        for _ in 0..50 {
            let pick = |rng: &mut ChaCha8Rng, lo: usize, hi: usize| -> Vec<String> {
                (0..rng.random_range(lo..=hi)).map(|_| words[rng.random_range(0..words.len())].to_owned()).collect()
            };
            let src = pick(&mut rng, 1, 4);
            let mt = pick(&mut rng, 1, 8);
            let r = decode(&model, &src, &mt, DecodeOptions::default()).map_err(|e| e.to_string())?;
            decodes += 1;
            check(r.trace.num_edits() <= 50, || format!("{} actions", r.trace.num_edits()))?;
            let mut state = mt.clone();
            for a in r.trace.actions() {
                let input = ModelInput::new(&model.vocab, &src, &state, 64).map_err(|e| e.to_string())?;
                let op = input.op_index(a).map_err(|e| format!("`{a}` on {state:?}: {e}"))?;
                check(input.is_available(op), || format!("masked `{a}` selected on {state:?}"))?;
                if !a.is_stop() {
                    state = apply_all(&state, std::slice::from_ref(a)).map_err(|e| e.to_string())?;
                }
            }
            check(state == r.final_tokens, || "final state differs from apply_all(mt, trace)".into())?;
            reasons[match r.stop_reason {
                StopReason::Stop => 0,
                StopReason::Loop => 1,
                StopReason::Cap => 2,
            }] += 1;
        }
    }
    check(decodes == 10_000, || format!("{decodes} decodes"))?;
    Ok(format!("{decodes} decodes: STOP {}, LOOP {}, CAP {}; no masked action", reasons[0], reasons[1], reasons[2]))
}

fn overfit() -> Outcome {
    let corpus = synthetic::corpus(32, 7, &CorpusOptions::default());
    let mut lines = Vec::new();
    let start = Instant::now();
    for mode in [OrderingMode::L2r, OrderingMode::Shuff, OrderingMode::HOrd] {
        let (dataset, _) = build_training_set(&corpus, mode, 7).map_err(|e| e.to_string())?;
        let examples: Vec<TrainExample> = dataset
            .entries
            .iter()
            .zip(&corpus)
            .map(|(e, s)| TrainExample { id: s.id.clone(), src: s.src.clone(), mt: s.mt.clone(), pe: s.pe.clone(), trace: e.trace.clone() })
            .collect();
        let vocab = Vocab::build(corpus.iter().flat_map(|s| s.src.iter().chain(&s.mt).chain(&s.pe)).map(String::as_str));
        let config = ModelConfig { layers: 2, hidden: 64, heads: 4, ffn: 256, max_len: 64, vocab_size: vocab.len() };
        let model = Model::init(config, vocab, 0.02, 1).map_err(|e| e.to_string())?;
        let train_config = TrainConfig {
            peak_lr: 1e-3,
            warmup_steps: 200,
            max_steps: 2000,
            checkpoint_interval: 250,
            seed: 7,
            ..Default::default()
        };
        let outcome = train(model, &examples, &examples, &train_config, |_| Ok(())).map_err(|e| e.to_string())?;

        let mut results = Vec::new();
        for s in &corpus {
            results.push(decode(&outcome.best, &s.src, &s.mt, DecodeOptions::default()).map_err(|e| e.to_string())?);
        }
        let exact = corpus.iter().zip(&results).filter(|(s, r)| r.final_tokens == s.pe).count();
        let pct = 100.0 * exact as f64 / corpus.len() as f64;

        let perms: Vec<Permutation> = dataset
            .entries
            .iter()
            .zip(&corpus)
            .filter_map(|(e, s)| order_permutation(&e.trace, &s.script()).ok())
            .collect();
        let traces: Vec<Trace> = dataset.entries.iter().map(|e| e.trace.clone()).collect();
        let training_tau = ordering_stats(&traces, &perms, &[]).kendall_tau;
        let stats = decode_behavior_stats(corpus.iter().map(|s| s.mt.as_slice()).zip(&results), Some(training_tau));
        let delta = stats.delta_tau.unwrap();
        lines.push(format!(
            "{mode}: {exact}/32 exact (best step {}), tau {:.3} vs training {training_tau:.3}",
            outcome.best_step, stats.kendall_tau
        ));
        check(pct >= 95.0, || format!("{mode}: {pct:.1}% exact"))?;
        check(delta.abs() <= 0.1, || format!("{mode}: decoded tau {:.3}, training tau {training_tau:.3}", stats.kendall_tau))?;
    }
    let secs = start.elapsed().as_secs_f64();
    check(secs < 600.0, || format!("took {secs:.0} s"))?;
    Ok(format!("{} in {secs:.0} s", lines.join("; ")))
}

fn metrics() -> Outcome {
    let t = tokenize;
    check(ter(&t("a b c"), &t("a b c")).unwrap() == 0.0, || "identical TER".into())?;
    check(ter(&t("a b c"), &t("a c")).unwrap() == 0.5, || "deletion TER".into())?;
    check(ter(&t("a x c"), &t("a b c")).unwrap() == 1.0 / 3.0, || "substitution TER".into())?;
    let closed = 100.0 * (1.0f64 - 5.0 / 4.0).exp();
    let got = bleu(&[t("a b c d")], &[t("a b c d e")]).unwrap();
    check((got - closed).abs() < 1e-6, || format!("BLEU {got} vs {closed}"))?;
    check(bleu(&[t("a b")], &[t("c d")]).unwrap() == 0.0, || "zero-overlap BLEU".into())?;
    let corpus: Vec<Vec<String>> = synthetic::corpus(50, 3, &CorpusOptions::default()).into_iter().map(|s| s.pe).collect();
    let corpus_ter_value = corpus_ter(&corpus, &corpus, TerOptions::default()).unwrap();
    let corpus_bleu = bleu(&corpus, &corpus).unwrap();
    check(corpus_ter_value == 0.0 && corpus_bleu == 100.0, || format!("identical corpora {corpus_ter_value} / {corpus_bleu}"))?;
    Ok(format!("TER 0, 1/2, 1/3 exact; BLEU {got:.6} (closed form {closed:.6}); identical corpora 0 / 100"))
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("round-trip exactness", round_trip),
        ("minimality oracle", minimality),
        ("verb-swap worked example", verb_swap),
        ("long worked example", long_sentence),
        ("ordering statistics", ordering_statistics),
        ("keystroke replay", keystroke_replay),
        ("alignment fallback", alignment),
        ("model gradients", gradients),
        ("decode contract", decode_contract),
        ("overfit check", overfit),
        ("metrics", metrics),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !filter.is_empty() && !filter.iter().any(|f| n.to_string() == *f || name.contains(f.as_str())) {
            continue;
        }
        let result = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        match result {
            Ok(detail) => println!("PASS {n:>2} {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {n:>2} {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
