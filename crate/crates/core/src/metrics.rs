//! TER and BLEU.
//!
//! TER here is word-level Levenshtein distance (unit insert, delete and
//! substitute costs) divided by the reference length. The block-shift search
//! of the shared-task scorer is available through [`TerOptions::shifts`] and
//! is off by default, so scores are not bit-comparable with tercom.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("TER is undefined for an empty reference")]
    EmptyReference,
    #[error("{hyps} hypotheses paired with {refs} references")]
    Pairing { hyps: usize, refs: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TerOptions {
    pub shifts: bool,
    /// Longest phrase considered for a shift.
    pub max_shift_len: usize,
}

impl Default for TerOptions {
    fn default() -> Self {
        TerOptions { shifts: false, max_shift_len: 10 }
    }
}

/// Word-level Levenshtein distance.
pub fn edit_distance<S: AsRef<str>, T: AsRef<str>>(a: &[S], b: &[T]) -> usize {
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, x) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = diag + usize::from(x.as_ref() != y.as_ref());
            diag = row[j + 1];
            row[j + 1] = sub.min(row[j] + 1).min(row[j + 1] + 1);
        }
    }
    row[b.len()]
}

fn contains_phrase<T: AsRef<str>>(haystack: &[T], phrase: &[&str]) -> bool {
    haystack.windows(phrase.len()).any(|w| w.iter().zip(phrase).all(|(a, b)| a.as_ref() == *b))
}

/// Number of edits (shifts included when enabled) between `hyp` and `reference`.
pub fn ter_edits<S: AsRef<str>, T: AsRef<str>>(hyp: &[S], reference: &[T], opts: TerOptions) -> usize {
    let mut current: Vec<&str> = hyp.iter().map(AsRef::as_ref).collect();
    let mut dist = edit_distance(&current, reference);
    if !opts.shifts {
        return dist;
    }
    let mut shifts = 0;
    // Greedy: apply the single shift with the largest distance reduction until none helps.
    loop {
        let mut best: Option<(usize, Vec<&str>)> = None;
        let n = current.len();
        for start in 0..n {
            for len in 1..=opts.max_shift_len.min(n - start) {
                let phrase = &current[start..start + len];
                if !contains_phrase(reference, phrase) {
                    continue;
                }
                let mut rest: Vec<&str> = current[..start].to_vec();
                rest.extend_from_slice(&current[start + len..]);
                for dest in 0..=rest.len() {
                    if dest == start {
                        continue;
                    }
                    let mut moved = rest[..dest].to_vec();
                    moved.extend_from_slice(phrase);
                    moved.extend_from_slice(&rest[dest..]);
                    let d = edit_distance(&moved, reference);
                    if d < dist && best.as_ref().is_none_or(|(bd, _)| d < *bd) {
                        best = Some((d, moved));
                    }
                }
            }
        }
        match best {
            Some((d, moved)) => {
                dist = d;
                current = moved;
                shifts += 1;
            }
            None => break,
        }
    }
    dist + shifts
}

pub fn ter<S: AsRef<str>, T: AsRef<str>>(hyp: &[S], reference: &[T]) -> Result<f64, MetricError> {
    ter_with(hyp, reference, TerOptions::default())
}

pub fn ter_with<S: AsRef<str>, T: AsRef<str>>(hyp: &[S], reference: &[T], opts: TerOptions) -> Result<f64, MetricError> {
    if reference.is_empty() {
        return Err(MetricError::EmptyReference);
    }
    Ok(ter_edits(hyp, reference, opts) as f64 / reference.len() as f64)
}

/// Total edits over total reference length.
pub fn corpus_ter<S: AsRef<str>, T: AsRef<str>>(
    hyps: &[Vec<S>],
    refs: &[Vec<T>],
    opts: TerOptions,
) -> Result<f64, MetricError> {
    if hyps.len() != refs.len() {
        return Err(MetricError::Pairing { hyps: hyps.len(), refs: refs.len() });
    }
    let mut edits = 0;
    let mut len = 0;
    for (h, r) in hyps.iter().zip(refs) {
        if r.is_empty() {
            return Err(MetricError::EmptyReference);
        }
        edits += ter_edits(h, r, opts);
        len += r.len();
    }
    if len == 0 {
        return Err(MetricError::EmptyReference);
    }
    Ok(edits as f64 / len as f64)
}

const MAX_ORDER: usize = 4;

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    for w in tokens.windows(n) {
        *counts.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
    }
    counts
}

/// Corpus BLEU-4 in percent, with brevity penalty.
///
/// Orders above 1 with no matches use add-one smoothing, `(0 + 1) / (total + 1)`;
/// no unigram match at all gives 0.
pub fn bleu<S: AsRef<str>, T: AsRef<str>>(hyps: &[Vec<S>], refs: &[Vec<T>]) -> Result<f64, MetricError> {
    if hyps.len() != refs.len() {
        return Err(MetricError::Pairing { hyps: hyps.len(), refs: refs.len() });
    }
    let mut matches = [0usize; MAX_ORDER];
    let mut totals = [0usize; MAX_ORDER];
    let mut hyp_len = 0;
    let mut ref_len = 0;
    for (h, r) in hyps.iter().zip(refs) {
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=MAX_ORDER {
            let hc = ngram_counts(h, n);
            let rc = ngram_counts(r, n);
            totals[n - 1] += h.len().saturating_sub(n - 1);
            matches[n - 1] += hc.iter().map(|(g, c)| (*c).min(rc.get(g).copied().unwrap_or(0))).sum::<usize>();
        }
    }
    if hyp_len == 0 || matches[0] == 0 {
        return Ok(0.0);
    }
    let mut log_precision = 0.0;
    for n in 0..MAX_ORDER {
        let p = if matches[n] == 0 {
            1.0 / (totals[n] + 1) as f64
        } else {
            matches[n] as f64 / totals[n] as f64
        };
        log_precision += p.ln() / MAX_ORDER as f64;
    }
    let brevity = if hyp_len >= ref_len { 1.0 } else { (1.0 - ref_len as f64 / hyp_len as f64).exp() };
    Ok(100.0 * brevity * log_precision.exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ter: f64,
    pub bleu: f64,
    pub n_sentences: usize,
}

pub fn evaluate<S: AsRef<str>, T: AsRef<str>>(
    hyps: &[Vec<S>],
    refs: &[Vec<T>],
    opts: TerOptions,
) -> Result<EvalReport, MetricError> {
    Ok(EvalReport { ter: corpus_ter(hyps, refs, opts)?, bleu: bleu(hyps, refs)?, n_sentences: hyps.len() })
}
