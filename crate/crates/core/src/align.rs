//! Recovering the human execution order of minimal-script items.
//!
//! Human traces contain hesitations and detours, so they are matched against
//! the minimal script rather than used directly. Each human action, in
//! execution order, claims one still-unmatched script item of the same kind
//! and token. When several items qualify, the one whose left-to-right
//! position is closest to the human action's position wins, then the
//! leftmost. Human actions with no counterpart are ignored. If any script
//! item is left unclaimed the alignment falls back to the human order.

use thiserror::Error;

use crate::edit::{apply_all, AnchoredScript, EditAction, EditError, ScriptItem, Trace};
use crate::reorder::{l2r_trace, realize, Permutation};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AlignError {
    #[error("human trace does not apply to mt: {0}")]
    InvalidTrace(#[from] EditError),
    #[error("human trace does not reach the script's output")]
    WrongOutput,
    #[error("alignment fell back to the unfiltered human order")]
    Fallback,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlignStatus {
    Aligned,
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alignment {
    /// Execution rank per canonical script item; `None` when unmatched.
    pub rank: Vec<Option<usize>>,
    pub status: AlignStatus,
}

impl Alignment {
    pub fn is_aligned(&self) -> bool {
        self.status == AlignStatus::Aligned
    }

    /// Execution order implied by the ranks, if aligned.
    pub fn permutation(&self) -> Option<Permutation> {
        if !self.is_aligned() {
            return None;
        }
        let mut order = vec![0; self.rank.len()];
        for (item, r) in self.rank.iter().enumerate() {
            order[r.expect("aligned ranks are complete")] = item;
        }
        Some(Permutation::new(order).expect("aligned ranks form a bijection"))
    }
}

fn same_kind(action: &EditAction, item: &ScriptItem) -> bool {
    matches!(
        (action, item),
        (EditAction::Insert { .. }, ScriptItem::Insert { .. }) | (EditAction::Delete { .. }, ScriptItem::Delete { .. })
    )
}

/// Matches an already-validated human trace against the script.
pub fn align_trace(script: &AnchoredScript, human: &Trace) -> Alignment {
    let items = script.items();
    let l2r_pos: Vec<usize> = l2r_trace(script)
        .edits()
        .iter()
        .map(|a| a.position().expect("edits carry positions"))
        .collect();
    let mut rank = vec![None; items.len()];
    let mut next_rank = 0;
    for action in human.edits() {
        let (pos, token) = match action {
            EditAction::Insert { pos, token } | EditAction::Delete { pos, token } => (*pos, token.as_str()),
            EditAction::Stop => continue,
        };
        let best = items
            .iter()
            .enumerate()
            .filter(|(k, item)| rank[*k].is_none() && same_kind(action, item) && item.token() == token)
            .min_by_key(|(k, _)| (l2r_pos[*k].abs_diff(pos), *k));
        if let Some((k, _)) = best {
            rank[k] = Some(next_rank);
            next_rank += 1;
        }
    }
    let status = if rank.iter().all(Option::is_some) { AlignStatus::Aligned } else { AlignStatus::Fallback };
    Alignment { rank, status }
}

/// Validates the human trace against `mt` and the script, then aligns it.
pub fn align_human<S: AsRef<str>>(mt: &[S], script: &AnchoredScript, human: &Trace) -> Result<Alignment, AlignError> {
    let out = apply_all(mt, human.actions())?;
    if out != script.apply_to(mt) {
        return Err(AlignError::WrongOutput);
    }
    Ok(align_trace(script, human))
}

/// Realizes the script in the human order.
pub fn human_ordered_trace(script: &AnchoredScript, alignment: &Alignment) -> Result<Trace, AlignError> {
    let perm = alignment.permutation().ok_or(AlignError::Fallback)?;
    Ok(realize(script, &perm).expect("alignment covers every script item"))
}
