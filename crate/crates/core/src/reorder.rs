//! Realizing anchored scripts under arbitrary execution orders.
//!
//! Shuffles use `ChaCha8Rng::seed_from_u64(seed)` followed by a Fisher-Yates
//! shuffle of the identity order, so a `(script, seed)` pair yields the same
//! trace on every platform.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::edit::{AnchoredScript, EditAction, ScriptItem, Trace};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReorderError {
    #[error("permutation is not a bijection on 0..{0}")]
    NotBijection(usize),
    #[error("permutation has length {got}, script has {expected} items")]
    Length { expected: usize, got: usize },
}

/// Execution order over script items: entry `i` is the canonical index of
/// the item executed at step `i`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn new(mapping: Vec<usize>) -> Result<Self, ReorderError> {
        let n = mapping.len();
        let mut seen = vec![false; n];
        for &k in &mapping {
            if k >= n || seen[k] {
                return Err(ReorderError::NotBijection(n));
            }
            seen[k] = true;
        }
        Ok(Permutation(mapping))
    }

    pub fn identity(n: usize) -> Self {
        Permutation((0..n).collect())
    }

    /// Uniformly random permutation from a seeded ChaCha8 stream.
    pub fn shuffled(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v: Vec<usize> = (0..n).collect();
        v.shuffle(&mut rng);
        Permutation(v)
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_identity(&self) -> bool {
        self.0.iter().enumerate().all(|(i, &k)| i == k)
    }
}

/// Mixes a base seed with an index (SplitMix64 finalizer), for per-sample streams.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// State-relative position of `item` given which items have already been applied.
pub(crate) fn current_position(items: &[ScriptItem], applied: &[bool], item: &ScriptItem) -> usize {
    let mut pos = item.anchor();
    for (other, _) in items.iter().zip(applied).filter(|(_, &a)| a) {
        match (item, other) {
            (_, ScriptItem::Delete { index, .. }) if *index < item.anchor() => pos -= 1,
            (ScriptItem::Delete { index, .. }, ScriptItem::Insert { gap, .. }) if gap <= index => pos += 1,
            (ScriptItem::Insert { gap, ordinal, .. }, ScriptItem::Insert { gap: g, ordinal: o, .. })
                if g < gap || (g == gap && o < ordinal) =>
            {
                pos += 1
            }
            _ => {}
        }
    }
    pos
}

/// Executes the script in the order given by `perm`, rectifying positions.
pub fn realize(script: &AnchoredScript, perm: &Permutation) -> Result<Trace, ReorderError> {
    let items = script.items();
    if perm.len() != items.len() {
        return Err(ReorderError::Length { expected: items.len(), got: perm.len() });
    }
    let mut applied = vec![false; items.len()];
    let mut actions = Vec::with_capacity(items.len() + 1);
    for &k in perm.as_slice() {
        let item = &items[k];
        let pos = current_position(items, &applied, item);
        actions.push(match item {
            ScriptItem::Delete { token, .. } => EditAction::delete(pos, token.clone()),
            ScriptItem::Insert { token, .. } => EditAction::insert(pos, token.clone()),
        });
        applied[k] = true;
    }
    Ok(Trace::terminated(actions))
}

/// Canonical left-to-right realization.
pub fn l2r_trace(script: &AnchoredScript) -> Trace {
    realize(script, &Permutation::identity(script.len())).expect("identity has the script's length")
}

pub fn shuffled_trace(script: &AnchoredScript, seed: u64) -> Trace {
    realize(script, &Permutation::shuffled(script.len(), seed)).expect("shuffle has the script's length")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::edit::{apply_all, min_edit_script, tokenize};

    fn verb_swap() -> (Vec<String>, Vec<String>) {
        (tokenize("Die LMS geöffnet ist ."), tokenize("Die LMS ist geöffnet ."))
    }

    #[test]
    fn verb_swap_orders() {
        let (mt, pe) = verb_swap();
        let s = min_edit_script(&mt, &pe);
        assert_eq!(l2r_trace(&s).to_string(), "I:2:ist D:4:ist STOP");
        let del_first = realize(&s, &Permutation::new(vec![1, 0]).unwrap()).unwrap();
        assert_eq!(del_first.to_string(), "D:3:ist I:2:ist STOP");
        assert_eq!(apply_all(&mt, del_first.actions()).unwrap(), pe);
    }

    #[test]
    fn empty_script() {
        let s = AnchoredScript::empty(3);
        assert_eq!(l2r_trace(&s).to_string(), "STOP");
        assert_eq!(shuffled_trace(&s, 42).to_string(), "STOP");
    }

    #[test]
    fn bad_permutations() {
        assert_eq!(Permutation::new(vec![0, 0]), Err(ReorderError::NotBijection(2)));
        assert_eq!(Permutation::new(vec![2, 0]), Err(ReorderError::NotBijection(2)));
        let (mt, pe) = verb_swap();
        let s = min_edit_script(&mt, &pe);
        assert_eq!(
            realize(&s, &Permutation::identity(3)),
            Err(ReorderError::Length { expected: 2, got: 3 })
        );
    }

    #[test]
    fn intra_gap_any_order() {
        let mt = tokenize("a d");
        let pe = tokenize("a b c d");
        let s = min_edit_script(&mt, &pe);
        let rev = realize(&s, &Permutation::new(vec![1, 0]).unwrap()).unwrap();
        assert_eq!(rev.to_string(), "I:1:c I:1:b STOP");
        assert_eq!(apply_all(&mt, rev.actions()).unwrap(), pe);
    }

    #[test]
    fn shuffle_is_seeded() {
        assert_eq!(Permutation::shuffled(20, 7), Permutation::shuffled(20, 7));
        assert_ne!(Permutation::shuffled(20, 7), Permutation::shuffled(20, 8));
        assert_ne!(derive_seed(1, 0), derive_seed(1, 1));
    }
}
