//! Greedy iterative decoding.

use std::collections::HashMap;

use apeorder_core::decoding::{DecodeResult, StopReason};
use apeorder_core::edit::apply_in_place;
use apeorder_core::{EditAction, Trace};

use crate::error::ModelError;
use crate::input::{EditOp, ModelInput};
use crate::network::{edit_op_probs, encode, token_probs};
use crate::params::Model;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecodeOptions {
    pub max_actions: usize,
    /// On the n-th visit of a state take its n-th most likely operation
    /// instead of stopping at the first revisit.
    pub nth_on_revisit: bool,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        DecodeOptions { max_actions: 50, nth_on_revisit: false }
    }
}

/// Index of the `rank`-th largest available probability; ties go to the lower index.
fn ranked_op(probs: &[f64], input: &ModelInput, rank: usize) -> Option<usize> {
    let mut ops: Vec<usize> = (0..probs.len()).filter(|&op| input.is_available(op)).collect();
    ops.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    ops.get(rank.min(ops.len().saturating_sub(1))).copied()
}

fn argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

/// Applies one action at a time until the model stops, a state repeats or
/// `max_actions` actions have been applied.
///
/// A state that no longer fits the position table also ends decoding with
/// `CAP`, since no further action can be scored.
pub fn decode<S: AsRef<str>, T: AsRef<str>>(
    model: &Model,
    src: &[S],
    mt: &[T],
    opts: DecodeOptions,
) -> Result<DecodeResult, ModelError> {
    let mut state: Vec<String> = mt.iter().map(|t| t.as_ref().to_owned()).collect();
    let mut visits: HashMap<Vec<String>, usize> = HashMap::new();
    visits.insert(state.clone(), 1);
    let mut actions = Vec::new();
    let finish = |actions: Vec<EditAction>, state: Vec<String>, reason: StopReason| {
        let steps = actions.iter().filter(|a| !a.is_stop()).count();
        DecodeResult { trace: Trace::new(actions), final_tokens: state, stop_reason: reason, steps }
    };
    loop {
        if actions.len() >= opts.max_actions {
            return Ok(finish(actions, state, StopReason::Cap));
        }
        let input = match ModelInput::new(&model.vocab, src, &state, model.config.max_len) {
            Ok(x) => x,
            Err(ModelError::Length { .. }) if !actions.is_empty() => return Ok(finish(actions, state, StopReason::Cap)),
            Err(e) => return Err(e),
        };
        let hidden = encode(model, &input)?;
        let probs = edit_op_probs(model, &hidden, &input)?;
        let rank = if opts.nth_on_revisit { visits[&state] - 1 } else { 0 };
        let op = ranked_op(&probs, &input, rank).ok_or(ModelError::AllMasked)?;
        let action = match input.op(op)? {
            EditOp::Stop => {
                actions.push(EditAction::Stop);
                return Ok(finish(actions, state, StopReason::Stop));
            }
            EditOp::Delete(pos) => EditAction::delete(pos, state[pos].clone()),
            EditOp::Insert(pos) => {
                let tp = token_probs(model, &hidden, &input, op / 2)?;
                EditAction::insert(pos, model.vocab.token(argmax(&tp)))
            }
        };
        apply_in_place(&mut state, &action).expect("available operations apply to the state");
        actions.push(action);
        let seen = visits.entry(state.clone()).or_insert(0);
        *seen += 1;
        if *seen > 1 && !opts.nth_on_revisit {
            return Ok(finish(actions, state, StopReason::Loop));
        }
    }
}
