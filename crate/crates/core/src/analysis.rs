//! Ordering statistics over action traces.
//!
//! Every measure here ignores `STOP`. Kendall's tau is the normalized
//! distance (fraction of discordant pairs), so 0 is strictly left-to-right
//! and 0.5 is the expectation of a uniformly random order.

use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use crate::align::align_trace;
use crate::decoding::{DecodeResult, StopReason};
use crate::edit::{min_edit_script, AnchoredScript, EditAction, ScriptItem, Trace};
use crate::reorder::{realize, Permutation};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnalysisError {
    #[error("trace is not a realization of the script (step {step})")]
    NotARealization { step: usize },
    #[error("no traces with at least two actions")]
    EmptyCurve,
    #[error("{left} human traces paired with {right} left-to-right traces")]
    Pairing { left: usize, right: usize },
}

enum Slot<'a> {
    Original(usize),
    Inserted { step: usize, token: &'a str },
}

/// Recovers the execution order of a realized trace.
///
/// Entry `i` of the result is the left-to-right rank of the item executed at
/// step `i`. Items that share a gap are ranked by ordinal.
pub fn order_permutation(trace: &Trace, script: &AnchoredScript) -> Result<Permutation, AnalysisError> {
    let items = script.items();
    let edits = trace.edits();
    if edits.len() != items.len() {
        return Err(AnalysisError::NotARealization { step: edits.len().min(items.len()) });
    }
    let deletion_of: HashMap<usize, usize> = items
        .iter()
        .enumerate()
        .filter_map(|(k, it)| match it {
            ScriptItem::Delete { index, .. } => Some((*index, k)),
            ScriptItem::Insert { .. } => None,
        })
        .collect();

    let mut slots: Vec<Slot> = (0..script.mt_len()).map(Slot::Original).collect();
    let mut item_at_step: Vec<Option<usize>> = vec![None; edits.len()];
    for (step, action) in edits.iter().enumerate() {
        let bad = AnalysisError::NotARealization { step };
        match action {
            EditAction::Delete { pos, token } => {
                let Some(Slot::Original(i)) = slots.get(*pos) else { return Err(bad) };
                let k = *deletion_of.get(i).ok_or(bad.clone())?;
                if items[k].token() != token {
                    return Err(bad);
                }
                item_at_step[step] = Some(k);
                slots.remove(*pos);
            }
            EditAction::Insert { pos, token } => {
                if *pos > slots.len() {
                    return Err(bad);
                }
                slots.insert(*pos, Slot::Inserted { step, token });
            }
            EditAction::Stop => return Err(bad),
        }
    }

    // Insertions between two surviving originals map, in order, onto the
    // script insertions whose gaps fall in that run.
    let mut survivors_before = 0;
    let mut runs: Vec<Vec<(usize, &str)>> = vec![Vec::new()];
    for slot in &slots {
        match slot {
            Slot::Original(_) => {
                survivors_before += 1;
                runs.push(Vec::new());
            }
            Slot::Inserted { step, token } => runs[survivors_before].push((*step, token)),
        }
    }
    let survivors: Vec<usize> = slots
        .iter()
        .filter_map(|s| match s {
            Slot::Original(i) => Some(*i),
            Slot::Inserted { .. } => None,
        })
        .collect();
    let mut cursor = vec![0usize; runs.len()];
    for (k, item) in items.iter().enumerate() {
        if let ScriptItem::Insert { gap, token, .. } = item {
            let run = survivors.partition_point(|&i| i < *gap);
            let c = cursor[run];
            let Some(&(step, tok)) = runs[run].get(c) else {
                return Err(AnalysisError::NotARealization { step: edits.len() });
            };
            if tok != token {
                return Err(AnalysisError::NotARealization { step });
            }
            item_at_step[step] = Some(k);
            cursor[run] += 1;
        }
    }
    let order: Option<Vec<usize>> = item_at_step.into_iter().collect();
    let order = order.ok_or(AnalysisError::NotARealization { step: edits.len() })?;
    let perm = Permutation::new(order).map_err(|_| AnalysisError::NotARealization { step: edits.len() })?;
    if realize(script, &perm).map(|t| t.edits() == edits) != Ok(true) {
        return Err(AnalysisError::NotARealization { step: edits.len() });
    }
    Ok(perm)
}

/// Fraction of discordant pairs; 0 for fewer than two elements.
pub fn kendall_tau_distance(perm: &[usize]) -> f64 {
    let n = perm.len();
    if n < 2 {
        return 0.0;
    }
    let mut discordant = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            if perm[i] > perm[j] {
                discordant += 1;
            }
        }
    }
    discordant as f64 / (n * (n - 1) / 2) as f64
}

/// Jump-back counts for one trace or a whole corpus.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct JumpBacks {
    pub n_actions: usize,
    pub jump_backs: usize,
    /// `(threshold, count)` of jump-backs spanning at least `threshold` tokens.
    pub at_least: Vec<(usize, usize)>,
}

impl JumpBacks {
    pub fn merge(&mut self, other: &JumpBacks) {
        self.n_actions += other.n_actions;
        self.jump_backs += other.jump_backs;
        if self.at_least.is_empty() {
            self.at_least = other.at_least.iter().map(|&(k, _)| (k, 0)).collect();
        }
        for (mine, theirs) in self.at_least.iter_mut().zip(&other.at_least) {
            debug_assert_eq!(mine.0, theirs.0);
            mine.1 += theirs.1;
        }
    }

    pub fn rate(&self) -> f64 {
        ratio(self.jump_backs, self.n_actions)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// An action at position `p` right after one at `q` jumps back when `p < q`.
pub fn jump_back_stats(trace: &Trace, thresholds: &[usize]) -> JumpBacks {
    let positions: Vec<usize> = trace.edits().iter().filter_map(EditAction::position).collect();
    let mut out = JumpBacks {
        n_actions: positions.len(),
        jump_backs: 0,
        at_least: thresholds.iter().map(|&k| (k, 0)).collect(),
    };
    for w in positions.windows(2) {
        let (q, p) = (w[0], w[1]);
        if p < q {
            out.jump_backs += 1;
            for (k, count) in out.at_least.iter_mut() {
                if q - p >= *k {
                    *count += 1;
                }
            }
        }
    }
    out
}

/// Corpus-level ordering statistics (one row of the ordering table).
#[derive(Debug, Clone, PartialEq)]
pub struct OrderingStats {
    pub kendall_tau: f64,
    pub jump_back_rate: f64,
    pub jump_back_ge: BTreeMap<usize, f64>,
    pub n_actions: usize,
    /// Traces contributing to `kendall_tau`.
    pub n_traces: usize,
}

/// Aggregates jump-backs over `traces` and Kendall's tau over `perms`.
///
/// Tau is averaged over every permutation with at least one element;
/// single-action traces contribute 0.
pub fn ordering_stats<'a>(
    traces: impl IntoIterator<Item = &'a Trace>,
    perms: &[Permutation],
    thresholds: &[usize],
) -> OrderingStats {
    let mut jb = JumpBacks { at_least: thresholds.iter().map(|&k| (k, 0)).collect(), ..Default::default() };
    for t in traces {
        jb.merge(&jump_back_stats(t, thresholds));
    }
    let taus: Vec<f64> = perms.iter().filter(|p| !p.is_empty()).map(|p| kendall_tau_distance(p.as_slice())).collect();
    OrderingStats {
        kendall_tau: mean(&taus),
        jump_back_rate: jb.rate(),
        jump_back_ge: jb.at_least.iter().map(|&(k, c)| (k, ratio(c, jb.n_actions))).collect(),
        n_actions: jb.n_actions,
        n_traces: taus.len(),
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Mean relative-position curve on a shared grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub grid: Vec<f64>,
    pub mean_relative_position: Vec<f64>,
    pub n_traces: usize,
    pub skipped: usize,
}

/// The per-step points of one permutation: `(i / (n-1), perm[i] / (n-1))`.
pub fn relative_points(perm: &[usize]) -> Vec<(f64, f64)> {
    let d = (perm.len().max(2) - 1) as f64;
    perm.iter().enumerate().map(|(i, &r)| (i as f64 / d, r as f64 / d)).collect()
}

fn interpolate(points: &[(f64, f64)], x: f64) -> f64 {
    let seg = points.partition_point(|p| p.0 <= x).clamp(1, points.len() - 1);
    let (x0, y0) = points[seg - 1];
    let (x1, y1) = points[seg];
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

/// Averages the relative-position curves of every permutation with at least
/// two steps, linearly interpolated onto `grid_size` evenly spaced points.
pub fn relative_curve(perms: &[Permutation], grid_size: usize) -> Result<Curve, AnalysisError> {
    let grid_size = grid_size.max(2);
    let grid: Vec<f64> = (0..grid_size).map(|j| j as f64 / (grid_size - 1) as f64).collect();
    let mut sum = vec![0.0; grid_size];
    let mut used = 0;
    for p in perms.iter().filter(|p| p.len() >= 2) {
        let pts = relative_points(p.as_slice());
        for (s, &x) in sum.iter_mut().zip(&grid) {
            *s += interpolate(&pts, x);
        }
        used += 1;
    }
    if used == 0 {
        return Err(AnalysisError::EmptyCurve);
    }
    Ok(Curve {
        grid,
        mean_relative_position: sum.into_iter().map(|s| s / used as f64).collect(),
        n_traces: used,
        skipped: perms.len() - used,
    })
}

/// Signed per-tag preference for the first action, human minus left-to-right.
///
/// Words are counted without distinguishing insertion from deletion; words
/// whose absolute difference is below `min_diff` are dropped before grouping
/// by tag. Words missing from `pos_tags` are tagged `UNK`.
pub fn first_action_pos_diff(
    human: &[Trace],
    l2r: &[Trace],
    pos_tags: &HashMap<String, String>,
    min_diff: usize,
) -> Result<Vec<(String, i64)>, AnalysisError> {
    if human.len() != l2r.len() {
        return Err(AnalysisError::Pairing { left: human.len(), right: l2r.len() });
    }
    let mut per_word: BTreeMap<&str, i64> = BTreeMap::new();
    for (h, l) in human.iter().zip(l2r) {
        if let Some(tok) = h.edits().first().and_then(EditAction::token) {
            *per_word.entry(tok).or_default() += 1;
        }
        if let Some(tok) = l.edits().first().and_then(EditAction::token) {
            *per_word.entry(tok).or_default() -= 1;
        }
    }
    let mut per_tag: BTreeMap<String, i64> = BTreeMap::new();
    for (word, diff) in per_word {
        if diff == 0 || diff.unsigned_abs() < min_diff as u64 {
            continue;
        }
        let tag = pos_tags.get(word).cloned().unwrap_or_else(|| "UNK".to_owned());
        *per_tag.entry(tag).or_default() += diff;
    }
    Ok(per_tag.into_iter().collect())
}

/// Decoding behavior over a set of results (one row of the decode table).
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeStats {
    pub n: usize,
    pub pct_loops: f64,
    pub pct_do_nothing: f64,
    pub kendall_tau: f64,
    /// `kendall_tau` minus the training-order tau, when one was given.
    pub delta_tau: Option<f64>,
    /// Results whose order could be scored.
    pub n_tau: usize,
}

/// Execution order of a predicted trace against the minimal script of its
/// own output. Predictions with redundant actions are matched the same way
/// human traces are; `None` when that also fails.
pub fn predicted_order<S: AsRef<str>>(mt: &[S], result: &DecodeResult) -> Option<Permutation> {
    let script = min_edit_script(mt, &result.final_tokens);
    let trace = Trace::terminated(result.trace.edits().to_vec());
    order_permutation(&trace, &script).ok().or_else(|| align_trace(&script, &trace).permutation())
}

pub fn decode_behavior_stats<'a, S: AsRef<str> + 'a>(
    results: impl IntoIterator<Item = (&'a [S], &'a DecodeResult)>,
    training_tau: Option<f64>,
) -> DecodeStats {
    let mut n = 0;
    let mut loops = 0;
    let mut nothing = 0;
    let mut taus = Vec::new();
    for (mt, r) in results {
        n += 1;
        if r.stop_reason == StopReason::Loop {
            loops += 1;
        }
        if r.did_nothing() {
            nothing += 1;
        }
        if r.trace.num_edits() > 0 {
            if let Some(p) = predicted_order(mt, r) {
                taus.push(kendall_tau_distance(p.as_slice()));
            }
        }
    }
    let tau = mean(&taus);
    DecodeStats {
        n,
        pct_loops: 100.0 * ratio(loops, n),
        pct_do_nothing: 100.0 * ratio(nothing, n),
        kendall_tau: tau,
        delta_tau: training_tau.map(|t| tau - t),
        n_tau: taus.len(),
    }
}
