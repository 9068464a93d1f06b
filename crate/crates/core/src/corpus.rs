//! Samples, their JSON-lines storage, and ordered training sets.
//!
//! A sample file holds one object per line:
//!
//! ```text
//! {"id":"t1","src":"The LMS is open .","mt":"Die LMS geöffnet ist .","pe":"Die LMS ist geöffnet .",
//!  "keystrokes":["Die LMS geöffnet ist .", "..."], "pos":{"ist":"VERB"}}
//! ```
//!
//! `src`, `mt` and `pe` are pre-tokenized, space-separated strings;
//! `keystrokes` and `pos` are optional. An ordered dataset file holds
//! `{"id", "mode", "trace", "fallback"}` per line, with `trace` in the action
//! text format.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::{align_human, human_ordered_trace};
use crate::edit::{apply_all, detokenize, min_edit_script, tokenize, AnchoredScript, Trace};
use crate::keystrokes::{replay_sample, KeystrokeLog};
use crate::reorder::{derive_seed, l2r_trace, shuffled_trace};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}, sample `{id}`: {message}")]
    Validation { line: usize, id: String, message: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("sample `{id}`: trace does not reproduce pe ({message})")]
    Trace { id: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub id: String,
    pub src: Vec<String>,
    pub mt: Vec<String>,
    pub pe: Vec<String>,
    /// Editor state after each keystroke, starting at `mt` and ending at `pe`.
    pub keystrokes: Option<Vec<String>>,
    pub pos: Option<HashMap<String, String>>,
}

#[derive(Serialize, Deserialize)]
struct SampleRecord {
    id: String,
    src: String,
    mt: String,
    pe: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    keystrokes: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pos: Option<BTreeMap<String, String>>,
}

impl Sample {
    pub fn new(id: impl Into<String>, src: &str, mt: &str, pe: &str) -> Self {
        Sample {
            id: id.into(),
            src: tokenize(src),
            mt: tokenize(mt),
            pe: tokenize(pe),
            keystrokes: None,
            pos: None,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, toks) in [("src", &self.src), ("mt", &self.mt), ("pe", &self.pe)] {
            if toks.is_empty() {
                return Err(format!("{name} is empty"));
            }
        }
        if let Some(states) = &self.keystrokes {
            let mt = detokenize(&self.mt);
            let pe = detokenize(&self.pe);
            match (states.first(), states.last()) {
                (Some(first), Some(last)) => {
                    if *first != mt {
                        return Err(format!("first keystroke state `{first}` differs from mt"));
                    }
                    if *last != pe {
                        return Err(format!("last keystroke state `{last}` differs from pe"));
                    }
                }
                _ => return Err("keystroke list is empty".to_owned()),
            }
        }
        Ok(())
    }

    pub fn script(&self) -> AnchoredScript {
        min_edit_script(&self.mt, &self.pe)
    }

    fn to_record(&self) -> SampleRecord {
        SampleRecord {
            id: self.id.clone(),
            src: detokenize(&self.src),
            mt: detokenize(&self.mt),
            pe: detokenize(&self.pe),
            keystrokes: self.keystrokes.clone(),
            pos: self.pos.as_ref().map(|p| p.iter().map(|(k, v)| (k.clone(), v.clone())).collect()),
        }
    }
}

/// Parses and validates samples; blank lines are skipped.
pub fn read_samples(reader: impl BufRead) -> Result<Vec<Sample>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SampleRecord =
            serde_json::from_str(&line).map_err(|e| CorpusError::Parse { line: line_no, message: e.to_string() })?;
        let sample = Sample {
            id: rec.id,
            src: tokenize(&rec.src),
            mt: tokenize(&rec.mt),
            pe: tokenize(&rec.pe),
            keystrokes: rec.keystrokes,
            pos: rec.pos.map(|p| p.into_iter().collect()),
        };
        sample
            .validate()
            .map_err(|message| CorpusError::Validation { line: line_no, id: sample.id.clone(), message })?;
        out.push(sample);
    }
    Ok(out)
}

pub fn load_samples(path: impl AsRef<Path>) -> Result<Vec<Sample>, CorpusError> {
    read_samples(BufReader::new(File::open(path)?))
}

pub fn write_samples(mut w: impl Write, samples: &[Sample]) -> Result<(), CorpusError> {
    for s in samples {
        serde_json::to_writer(&mut w, &s.to_record()).map_err(io::Error::from)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OrderingMode {
    #[serde(rename = "l2r")]
    L2r,
    #[serde(rename = "shuff")]
    Shuff,
    #[serde(rename = "h-ord")]
    HOrd,
    #[serde(rename = "human-unfiltered")]
    HumanUnfiltered,
}

impl OrderingMode {
    pub fn as_str(self) -> &'static str {
        match self {
            OrderingMode::L2r => "l2r",
            OrderingMode::Shuff => "shuff",
            OrderingMode::HOrd => "h-ord",
            OrderingMode::HumanUnfiltered => "human-unfiltered",
        }
    }
}

impl fmt::Display for OrderingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OrderingMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "l2r" => Ok(OrderingMode::L2r),
            "shuff" => Ok(OrderingMode::Shuff),
            "h-ord" => Ok(OrderingMode::HOrd),
            "human-unfiltered" => Ok(OrderingMode::HumanUnfiltered),
            other => Err(format!("unknown ordering mode `{other}` (expected l2r, shuff or h-ord)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub id: String,
    pub mode: OrderingMode,
    pub trace: Trace,
    /// The human trace could not be aligned and is kept unfiltered.
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrderedDataset {
    pub entries: Vec<DatasetEntry>,
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BuildReport {
    pub fallbacks: usize,
    /// Samples whose keystroke replay diverged; left out of the dataset.
    pub excluded: Vec<String>,
    /// Samples whose editor came back to an unfinished word.
    pub refocused: usize,
}

impl BuildReport {
    pub fn fallback_rate(&self, n_entries: usize) -> f64 {
        if n_entries == 0 {
            0.0
        } else {
            self.fallbacks as f64 / n_entries as f64
        }
    }
}

/// Replays a sample's keystrokes into its unfiltered human trace.
pub fn human_trace(sample: &Sample) -> Result<(Trace, bool), CorpusError> {
    let states = sample
        .keystrokes
        .clone()
        .ok_or_else(|| CorpusError::Config(format!("sample `{}` has no keystrokes", sample.id)))?;
    let log = KeystrokeLog::new(states).map_err(|e| CorpusError::Trace { id: sample.id.clone(), message: e.to_string() })?;
    let replay = replay_sample(&sample.mt, &sample.pe, &log)
        .map_err(|e| CorpusError::Trace { id: sample.id.clone(), message: e.to_string() })?;
    Ok((replay.trace, replay.refocused))
}

/// Builds a trace for every sample under `mode`.
///
/// Shuffles draw from a per-sample stream derived from `seed` and the
/// sample's position. Every trace is checked to turn `mt` into `pe`.
pub fn build_training_set(
    samples: &[Sample],
    mode: OrderingMode,
    seed: u64,
) -> Result<(OrderedDataset, BuildReport), CorpusError> {
    if mode == OrderingMode::HumanUnfiltered {
        return Err(CorpusError::Config("human-unfiltered traces come from `replay`, not from ordering".into()));
    }
    if mode == OrderingMode::HOrd {
        if let Some(s) = samples.iter().find(|s| s.keystrokes.is_none()) {
            return Err(CorpusError::Config(format!("h-ord requires keystrokes, sample `{}` has none", s.id)));
        }
    }
    let mut report = BuildReport::default();
    let mut entries = Vec::with_capacity(samples.len());
    for (index, sample) in samples.iter().enumerate() {
        let script = sample.script();
        let (trace, fallback) = match mode {
            OrderingMode::L2r => (l2r_trace(&script), false),
            OrderingMode::Shuff => (shuffled_trace(&script, derive_seed(seed, index as u64)), false),
            OrderingMode::HOrd => {
                let (human, refocused) = match human_trace(sample) {
                    Ok(h) => h,
                    Err(CorpusError::Trace { id, .. }) => {
                        report.excluded.push(id);
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                report.refocused += usize::from(refocused);
                let alignment = align_human(&sample.mt, &script, &human)
                    .map_err(|e| CorpusError::Trace { id: sample.id.clone(), message: e.to_string() })?;
                match human_ordered_trace(&script, &alignment) {
                    Ok(t) => (t, false),
                    Err(_) => {
                        report.fallbacks += 1;
                        (human, true)
                    }
                }
            }
            OrderingMode::HumanUnfiltered => unreachable!(),
        };
        check_trace(sample, &trace)?;
        entries.push(DatasetEntry { id: sample.id.clone(), mode, trace, fallback });
    }
    Ok((OrderedDataset { entries, seed }, report))
}

/// Fails unless `trace` turns the sample's `mt` into its `pe`.
pub fn check_trace(sample: &Sample, trace: &Trace) -> Result<(), CorpusError> {
    match apply_all(&sample.mt, trace.actions()) {
        Ok(out) if out == sample.pe => Ok(()),
        Ok(out) => Err(CorpusError::Trace { id: sample.id.clone(), message: format!("got `{}`", detokenize(&out)) }),
        Err(e) => Err(CorpusError::Trace { id: sample.id.clone(), message: e.to_string() }),
    }
}

pub fn read_dataset(reader: impl BufRead) -> Result<Vec<DatasetEntry>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| CorpusError::Parse { line: i + 1, message: e.to_string() })?);
    }
    Ok(out)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<DatasetEntry>, CorpusError> {
    read_dataset(BufReader::new(File::open(path)?))
}

pub fn write_dataset(mut w: impl Write, entries: &[DatasetEntry]) -> Result<(), CorpusError> {
    for e in entries {
        serde_json::to_writer(&mut w, e).map_err(io::Error::from)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const VERB_SWAP: &str =
        r#"{"id":"t1","src":"The LMS is open .","mt":"Die LMS geöffnet ist .","pe":"Die LMS ist geöffnet ."}"#;

    #[test]
    fn load_verb_swap_line() {
        let samples = read_samples(VERB_SWAP.as_bytes()).unwrap();
        assert_eq!(samples.len(), 1);
        assert_eq!(samples[0].mt.len(), 5);
        assert_eq!(samples[0].id, "t1");
    }

    #[test]
    fn empty_input() {
        assert!(read_samples("".as_bytes()).unwrap().is_empty());
        assert!(read_samples("\n\n".as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = format!("{VERB_SWAP}\n{{\"id\": 3\n");
        match read_samples(text.as_bytes()) {
            Err(CorpusError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn truncated_keystrokes_fail_validation() {
        let line = r#"{"id":"k1","src":"x","mt":"a b","pe":"a c","keystrokes":["a b","a ","a c"]}"#;
        assert!(read_samples(line.as_bytes()).is_ok());
        let truncated = r#"{"id":"k1","src":"x","mt":"a b","pe":"a c","keystrokes":["a b","a "]}"#;
        match read_samples(truncated.as_bytes()) {
            Err(CorpusError::Validation { id, line, .. }) => {
                assert_eq!(id, "k1");
                assert_eq!(line, 1);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn verb_swap_l2r_and_identity() {
        let mut samples = read_samples(VERB_SWAP.as_bytes()).unwrap();
        samples.push(Sample::new("same", "x", "a b", "a b"));
        let (ds, report) = build_training_set(&samples, OrderingMode::L2r, 0).unwrap();
        assert_eq!(ds.entries[0].trace.to_string(), "I:2:ist D:4:ist STOP");
        assert_eq!(ds.entries[1].trace.to_string(), "STOP");
        assert_eq!(report.fallbacks, 0);
        let (shuff, _) = build_training_set(&samples, OrderingMode::Shuff, 3).unwrap();
        assert_eq!(shuff.entries[1].trace.to_string(), "STOP");
    }

    #[test]
    fn hord_requires_keystrokes() {
        let samples = read_samples(VERB_SWAP.as_bytes()).unwrap();
        assert!(matches!(build_training_set(&samples, OrderingMode::HOrd, 0), Err(CorpusError::Config(_))));
    }

    #[test]
    fn dataset_round_trip() {
        let samples = read_samples(VERB_SWAP.as_bytes()).unwrap();
        let (ds, _) = build_training_set(&samples, OrderingMode::L2r, 0).unwrap();
        let mut buf = Vec::new();
        write_dataset(&mut buf, &ds.entries).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text, "{\"id\":\"t1\",\"mode\":\"l2r\",\"trace\":\"I:2:ist D:4:ist STOP\",\"fallback\":false}\n");
        assert_eq!(read_dataset(buf.as_slice()).unwrap(), ds.entries);
    }
}
