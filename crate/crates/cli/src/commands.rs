use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{BufRead, BufReader};
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use apeorder_core::align::{align_human, align_trace, human_ordered_trace};
use apeorder_core::analysis::{
    decode_behavior_stats, first_action_pos_diff, order_permutation, ordering_stats, relative_curve,
};
use apeorder_core::corpus::{build_training_set, check_trace, load_samples, write_samples, DatasetEntry, OrderingMode, Sample};
use apeorder_core::decoding::DecodeResult;
use apeorder_core::keystrokes::{replay_sample, KeystrokeLog};
use apeorder_core::metrics::{bleu, corpus_ter, ter_edits, TerOptions};
use apeorder_core::synthetic::{self, CorpusOptions, EditorOptions};
use apeorder_core::{apply_all, l2r_trace, tokenize, AnchoredScript, Permutation, Trace};
use apeorder_model::{decode, Checkpoint, DecodeOptions, Model, ModelConfig, TrainConfig, TrainExample, Vocab};

use crate::args::*;
use crate::output::{event, write_csv, write_json_lines, DataError};

fn read_json_lines<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).with_context(|| format!("{} line {}", path.display(), i + 1))?;
        out.push(record);
    }
    Ok(out)
}

fn samples(path: &Path) -> Result<Vec<Sample>> {
    load_samples(path).with_context(|| format!("loading samples from {}", path.display()))
}

fn by_id(samples: &[Sample]) -> HashMap<&str, &Sample> {
    samples.iter().map(|s| (s.id.as_str(), s)).collect()
}

fn lookup<'a>(index: &HashMap<&str, &'a Sample>, id: &str) -> Result<&'a Sample> {
    index.get(id).copied().ok_or_else(|| DataError(format!("no sample with id `{id}`")).into())
}

#[derive(Serialize)]
struct ScriptRecord<'a> {
    id: &'a str,
    size: usize,
    script: &'a AnchoredScript,
    l2r: Trace,
}

pub fn extract(a: &ExtractArgs) -> Result<()> {
    let samples = samples(&a.input)?;
    let scripts: Vec<AnchoredScript> = samples.iter().map(Sample::script).collect();
    let records: Vec<ScriptRecord> = samples
        .iter()
        .zip(&scripts)
        .map(|(s, script)| ScriptRecord { id: &s.id, size: script.len(), script, l2r: l2r_trace(script) })
        .collect();
    write_json_lines(&a.out, &records)?;
    event("extract", json!({ "n": records.len(), "out": a.out }));
    Ok(())
}

pub fn reorder(a: &ReorderArgs) -> Result<()> {
    let samples = samples(&a.input)?;
    let (dataset, report) = build_training_set(&samples, a.mode, a.seed)?;
    write_json_lines(&a.out, &dataset.entries)?;
    event(
        "reorder",
        json!({
            "n": dataset.entries.len(),
            "mode": a.mode,
            "seed": a.seed,
            "fallbacks": report.fallbacks,
            "excluded": report.excluded,
        }),
    );
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct ReplayRecord {
    id: String,
    trace: Trace,
    episodes: usize,
    refocused: bool,
}

pub fn replay(a: &ReplayArgs) -> Result<()> {
    let samples = samples(&a.input)?;
    let mut records = Vec::new();
    for s in &samples {
        let states = s.keystrokes.clone().ok_or_else(|| DataError(format!("sample `{}` has no keystrokes", s.id)))?;
        let outcome = KeystrokeLog::new(states).and_then(|log| replay_sample(&s.mt, &s.pe, &log));
        match outcome {
            Ok(r) => records.push(ReplayRecord { id: s.id.clone(), trace: r.trace, episodes: r.episodes, refocused: r.refocused }),
            Err(e) => event("excluded", json!({ "id": s.id, "reason": e.to_string() })),
        }
    }
    write_json_lines(&a.out, &records)?;
    event(
        "replay",
        json!({
            "n": records.len(),
            "excluded": samples.len() - records.len(),
            "refocused": records.iter().filter(|r| r.refocused).count(),
        }),
    );
    Ok(())
}

/// A line of any trace file: `reorder`, `align` and `replay` output all qualify.
#[derive(Deserialize)]
struct TraceRecord {
    id: String,
    trace: Trace,
    #[serde(default)]
    mode: Option<String>,
    #[serde(default)]
    fallback: bool,
}

pub fn align(a: &AlignArgs) -> Result<()> {
    let samples = samples(&a.input)?;
    let (entries, excluded, refocused) = match &a.human {
        None => {
            let (dataset, report) = build_training_set(&samples, OrderingMode::HOrd, 0)?;
            (dataset.entries, report.excluded, Some(report.refocused))
        }
        Some(path) => {
            let human: Vec<TraceRecord> = read_json_lines(path)?;
            let index = by_id(&samples);
            let mut entries = Vec::new();
            let mut excluded = Vec::new();
            for h in human {
                let s = lookup(&index, &h.id)?;
                let script = s.script();
                match align_human(&s.mt, &script, &h.trace) {
                    Ok(al) => {
                        let (trace, fallback) = match human_ordered_trace(&script, &al) {
                            Ok(t) => (t, false),
                            Err(_) => (h.trace, true),
                        };
                        entries.push(DatasetEntry { id: h.id, mode: OrderingMode::HOrd, trace, fallback });
                    }
                    Err(e) => {
                        event("excluded", json!({ "id": h.id, "reason": e.to_string() }));
                        excluded.push(h.id);
                    }
                }
            }
            (entries, excluded, None)
        }
    };
    write_json_lines(&a.out, &entries)?;
    let fallbacks = entries.iter().filter(|e| e.fallback).count();
    event(
        "align",
        json!({
            "n": entries.len(),
            "fallbacks": fallbacks,
            "fallback_rate": if entries.is_empty() { 0.0 } else { fallbacks as f64 / entries.len() as f64 },
            "excluded": excluded,
            "refocused": refocused,
        }),
    );
    Ok(())
}

/// Execution order of `trace` over the sample's minimal script, matching
/// redundant traces the way human traces are matched.
fn trace_order(trace: &Trace, script: &AnchoredScript) -> Option<Permutation> {
    order_permutation(trace, script).ok().or_else(|| align_trace(script, trace).permutation())
}

fn label_of(path: &Path, mode: Option<&str>) -> String {
    mode.map(str::to_owned)
        .unwrap_or_else(|| path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default())
}

fn fmt(x: f64) -> String {
    format!("{x:.4}")
}

#[derive(Deserialize)]
struct DecodedRecord {
    id: String,
    #[serde(default)]
    mode: Option<String>,
    #[serde(flatten)]
    result: DecodeResult,
}

pub fn analyze(a: &AnalyzeArgs) -> Result<()> {
    let samples = samples(&a.samples)?;
    let index = by_id(&samples);
    let mut pos_tags: HashMap<String, String> = HashMap::new();
    for s in &samples {
        if let Some(p) = &s.pos {
            pos_tags.extend(p.iter().map(|(k, v)| (k.clone(), v.clone())));
        }
    }
    fs::create_dir_all(&a.out_dir)?;

    let mut stats_rows = Vec::new();
    let mut curve_rows = Vec::new();
    let mut pos_rows = Vec::new();
    let mut training_tau: HashMap<String, f64> = HashMap::new();
    for path in &a.traces {
        let records: Vec<TraceRecord> = read_json_lines(path)?;
        let label = label_of(path, records.first().and_then(|r| r.mode.as_deref()));
        let mut perms = Vec::new();
        let mut unscored = 0;
        let mut l2r = Vec::with_capacity(records.len());
        for r in &records {
            let s = lookup(&index, &r.id)?;
            let script = s.script();
            check_trace(s, &r.trace)?;
            match trace_order(&r.trace, &script) {
                Some(p) => perms.push(p),
                None => unscored += 1,
            }
            l2r.push(l2r_trace(&script));
        }
        let traces: Vec<Trace> = records.iter().map(|r| r.trace.clone()).collect();
        let st = ordering_stats(&traces, &perms, &[4]);
        training_tau.insert(label.clone(), st.kendall_tau);
        stats_rows.push(vec![
            label.clone(),
            records.len().to_string(),
            st.n_traces.to_string(),
            unscored.to_string(),
            records.iter().filter(|r| r.fallback).count().to_string(),
            st.n_actions.to_string(),
            fmt(st.jump_back_rate),
            fmt(st.jump_back_ge[&4]),
            fmt(st.kendall_tau),
        ]);
        match relative_curve(&perms, a.grid_size) {
            Ok(curve) => {
                for (x, y) in curve.grid.iter().zip(&curve.mean_relative_position) {
                    curve_rows.push(vec![label.clone(), fmt(*x), fmt(*y), curve.n_traces.to_string()]);
                }
            }
            Err(e) => event("warning", json!({ "file": path, "message": e.to_string() })),
        }
        if label != OrderingMode::L2r.as_str() {
            for (tag, diff) in first_action_pos_diff(&traces, &l2r, &pos_tags, a.min_diff)? {
                pos_rows.push(vec![label.clone(), tag, diff.to_string()]);
            }
        }
    }
    write_csv(
        &a.out_dir.join("stats.csv"),
        &["mode", "n_traces", "n_scored", "n_unscored", "n_fallback", "n_actions", "jump_back", "jump_back_ge4", "kendall_tau"],
        &stats_rows,
    )?;
    write_csv(&a.out_dir.join("curve.csv"), &["mode", "step", "relative_position", "n_traces"], &curve_rows)?;
    write_csv(&a.out_dir.join("pos_diff.csv"), &["mode", "tag", "diff"], &pos_rows)?;

    if !a.decoded.is_empty() {
        let mut rows = Vec::new();
        for path in &a.decoded {
            let records: Vec<DecodedRecord> = read_json_lines(path)?;
            let label = label_of(path, records.first().and_then(|r| r.mode.as_deref()));
            let mut pairs = Vec::with_capacity(records.len());
            for r in &records {
                pairs.push((lookup(&index, &r.id)?.mt.as_slice(), &r.result));
            }
            let st = decode_behavior_stats(pairs, training_tau.get(&label).copied());
            rows.push(vec![
                label,
                st.n.to_string(),
                fmt(st.pct_loops),
                fmt(st.pct_do_nothing),
                fmt(st.kendall_tau),
                st.delta_tau.map(fmt).unwrap_or_default(),
                st.n_tau.to_string(),
            ]);
        }
        write_csv(
            &a.out_dir.join("decode_stats.csv"),
            &["mode", "n", "pct_loops", "pct_do_nothing", "kendall_tau", "delta_tau", "n_tau"],
            &rows,
        )?;
    }
    event("analyze", json!({ "out_dir": a.out_dir, "trace_files": a.traces.len(), "decoded_files": a.decoded.len() }));
    Ok(())
}

fn train_config(o: &TrainOverrides) -> TrainConfig {
    let d = TrainConfig::default();
    TrainConfig {
        seed: o.seed.unwrap_or(d.seed),
        peak_lr: o.peak_lr.unwrap_or(d.peak_lr),
        warmup_steps: o.warmup_steps.unwrap_or(d.warmup_steps),
        max_steps: o.max_steps.unwrap_or(d.max_steps),
        weight_decay: o.weight_decay.unwrap_or(d.weight_decay),
        dropout: o.dropout.unwrap_or(d.dropout),
        label_smoothing: o.label_smoothing.unwrap_or(d.label_smoothing),
        tokens_per_batch: o.tokens_per_batch.unwrap_or(d.tokens_per_batch),
        checkpoint_interval: o.checkpoint_interval.unwrap_or(d.checkpoint_interval),
        max_actions: o.max_actions.unwrap_or(d.max_actions),
        init_std: o.init_std.unwrap_or(d.init_std),
        grad_clip: o.grad_clip.unwrap_or(d.grad_clip),
        resample_per_epoch: o.resample_per_epoch || d.resample_per_epoch,
        ..d
    }
}

fn example(s: &Sample, trace: Trace) -> TrainExample {
    TrainExample { id: s.id.clone(), src: s.src.clone(), mt: s.mt.clone(), pe: s.pe.clone(), trace }
}

fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    crate::output::write_atomic(path, |w| Ok(serde_json::to_writer(w, value)?))
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let samples = samples(&a.samples)?;
    let config = train_config(&a.train);
    config.validate()?;
    let examples: Vec<TrainExample> = match &a.traces {
        Some(path) => {
            let records: Vec<TraceRecord> = read_json_lines(path)?;
            let index = by_id(&samples);
            let mut out = Vec::with_capacity(records.len());
            for r in records {
                let s = lookup(&index, &r.id)?;
                check_trace(s, &r.trace)?;
                out.push(example(s, r.trace));
            }
            out
        }
        None => {
            let (dataset, report) = build_training_set(&samples, a.mode, config.seed)?;
            if report.fallbacks > 0 || !report.excluded.is_empty() {
                event("dataset", json!({ "fallbacks": report.fallbacks, "excluded": report.excluded }));
            }
            let index = by_id(&samples);
            dataset.entries.into_iter().map(|e| example(index[e.id.as_str()], e.trace)).collect()
        }
    };
    let dev: Vec<TrainExample> = match &a.dev_samples {
        Some(path) => self::samples(path)?.iter().map(|s| example(s, l2r_trace(&s.script()))).collect(),
        None => Vec::new(),
    };
    let vocab = Vocab::build(
        examples.iter().flat_map(|e| e.src.iter().chain(&e.mt).chain(&e.pe)).map(String::as_str),
    );
    let model_config = ModelConfig {
        layers: a.layers,
        hidden: a.hidden,
        heads: a.heads,
        ffn: a.ffn,
        max_len: a.max_len,
        vocab_size: vocab.len(),
    };
    let model = Model::init(model_config.clone(), vocab, config.init_std, config.seed)?;
    fs::create_dir_all(&a.out_dir)?;
    save_json(
        &a.out_dir.join("run_config.json"),
        &json!({
            "args": a,
            "train_config": config,
            "model_config": model_config,
            "n_examples": examples.len(),
            "n_dev": dev.len(),
            "n_params": model.num_params(),
        }),
    )?;
    event("train_start", json!({ "n_examples": examples.len(), "n_params": model.num_params(), "train_config": config }));

    let out_dir = a.out_dir.clone();
    let outcome = apeorder_model::train(model, &examples, &dev, &config, |c| {
        let path = out_dir.join(format!("checkpoint-{}.json", c.step));
        save_json(&path, c).map_err(|e| apeorder_model::ModelError::Config(format!("{e:#}")))?;
        event("checkpoint", json!({ "step": c.step, "dev_ter": c.dev_ter, "path": path }));
        Ok(())
    })?;
    let best = Checkpoint::new(outcome.best_step, outcome.best_dev_ter, config.clone(), outcome.best);
    save_json(&a.out_dir.join("best.json"), &best)?;
    let rows: Vec<Vec<String>> = outcome
        .log
        .iter()
        .map(|r| vec![r.step.to_string(), format!("{:.6e}", r.lr), format!("{:.6}", r.loss), r.dev_ter.map(fmt).unwrap_or_default()])
        .collect();
    write_csv(&a.out_dir.join("train_log.csv"), &["step", "lr", "loss", "dev_ter"], &rows)?;
    event("train_done", json!({ "best_step": outcome.best_step, "best_dev_ter": outcome.best_dev_ter }));
    Ok(())
}

/// Reads a checkpoint or a bare model.
pub fn load_model(path: &Path) -> Result<Model> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if value.get("format").is_some() {
        let c: Checkpoint = serde_json::from_value(value)?;
        Ok(c.model)
    } else {
        Ok(serde_json::from_value(value)?)
    }
}

#[derive(Serialize)]
struct DecodedOut<'a> {
    id: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    mode: Option<&'a str>,
    #[serde(flatten)]
    result: DecodeResult,
}

pub fn decode_cmd(a: &DecodeArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let samples = samples(&a.input)?;
    let opts = DecodeOptions { max_actions: a.max_actions, nth_on_revisit: a.nth_on_revisit };
    let mut records = Vec::with_capacity(samples.len());
    let mut reasons: BTreeMap<String, usize> = BTreeMap::new();
    for s in &samples {
        let result = decode(&model, &s.src, &s.mt, opts).with_context(|| format!("decoding sample `{}`", s.id))?;
        *reasons.entry(result.stop_reason.to_string()).or_default() += 1;
        records.push(DecodedOut { id: &s.id, mode: a.mode.as_deref(), result });
    }
    write_json_lines(&a.out, &records)?;
    event("decode", json!({ "n": records.len(), "stop_reasons": reasons }));
    Ok(())
}

fn hypothesis(record: &Value, sample: &Sample) -> Result<Vec<String>> {
    match (record.get("output"), record.get("trace")) {
        (Some(Value::Array(xs)), _) => xs
            .iter()
            .map(|x| x.as_str().map(str::to_owned).ok_or_else(|| DataError("output tokens must be strings".into()).into()))
            .collect(),
        (Some(Value::String(s)), _) => Ok(tokenize(s)),
        (None, Some(Value::String(t))) => {
            let trace: Trace = t.parse().map_err(|e| DataError(format!("sample `{}`: {e}", sample.id)))?;
            apply_all(&sample.mt, trace.actions()).map_err(|e| DataError(format!("sample `{}`: {e}", sample.id)).into())
        }
        _ => bail!(DataError(format!("hypothesis for `{}` has neither `output` nor `trace`", sample.id))),
    }
}

pub fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let samples = samples(&a.samples)?;
    let index = by_id(&samples);
    let records: Vec<Value> = read_json_lines(&a.hyp)?;
    let opts = TerOptions { shifts: a.shifts, ..Default::default() };
    let mut hyps = Vec::with_capacity(records.len());
    let mut refs = Vec::with_capacity(records.len());
    let mut rows = Vec::with_capacity(records.len());
    for r in &records {
        let id = r.get("id").and_then(Value::as_str).ok_or_else(|| DataError("hypothesis without `id`".into()))?;
        let s = lookup(&index, id)?;
        let hyp = hypothesis(r, s)?;
        let edits = ter_edits(&hyp, &s.pe, opts);
        let sentence_bleu = bleu(std::slice::from_ref(&hyp), std::slice::from_ref(&s.pe))?;
        rows.push(vec![
            id.to_owned(),
            fmt(edits as f64 / s.pe.len() as f64),
            edits.to_string(),
            s.pe.len().to_string(),
            fmt(sentence_bleu),
        ]);
        hyps.push(hyp);
        refs.push(s.pe.clone());
    }
    let report = apeorder_core::metrics::EvalReport {
        ter: corpus_ter(&hyps, &refs, opts)?,
        bleu: bleu(&hyps, &refs)?,
        n_sentences: hyps.len(),
    };
    if let Some(out) = &a.out {
        write_csv(out, &["id", "ter", "edits", "ref_len", "bleu"], &rows)?;
    }
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    if a.min_len == 0 || a.min_len > a.max_len || a.vocab_size == 0 {
        bail!(DataError("need 0 < min_len <= max_len and a non-empty vocabulary".into()));
    }
    if !(0.0..=1.0).contains(&a.unalignable_rate) {
        bail!(DataError("unalignable_rate must be in [0, 1]".into()));
    }
    let opts = CorpusOptions {
        vocab_size: a.vocab_size,
        min_len: a.min_len,
        max_len: a.max_len,
        keystrokes: !a.no_keystrokes,
        editor: if a.clean_editor { EditorOptions::clean() } else { EditorOptions::default() },
        unalignable_rate: a.unalignable_rate,
        ..Default::default()
    };
    let corpus = synthetic::corpus(a.n, a.seed, &opts);
    crate::output::write_atomic(&a.out, |w| Ok(write_samples(w, &corpus)?))?;
    event("synth", json!({ "n": corpus.len(), "seed": a.seed, "out": a.out }));
    Ok(())
}
