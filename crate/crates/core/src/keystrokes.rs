//! Replay of character-level editor states into word-level actions.
//!
//! A log is the sequence of full sentence strings observed after each
//! keystroke. Consecutive deltas that touch the same word region form an
//! *episode*; when the next delta lands elsewhere (or the log ends) the
//! episode is summarized as the word-level change between its first and last
//! state. Changed words become a deletion followed by an insertion, and block
//! changes are emitted left to right.

use thiserror::Error;

use crate::edit::{apply_all, detokenize, min_edit_script, tokenize, EditAction, Trace};
use crate::reorder::l2r_trace;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KeystrokeError {
    #[error("states are identical; there is no delta")]
    NoDelta,
    #[error("keystroke log is empty")]
    Empty,
    #[error("first keystroke state `{found}` does not match mt `{expected}`")]
    FirstState { expected: String, found: String },
    #[error("replayed trace yields `{got}` instead of pe `{expected}`")]
    Divergence { expected: String, got: String },
}

/// A single contiguous replacement: chars `start..end` of the old string
/// become `inserted`. Offsets count Unicode scalar values.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CharDelta {
    pub start: usize,
    pub end: usize,
    pub inserted: String,
}

impl CharDelta {
    pub fn apply(&self, text: &str) -> String {
        let chars: Vec<char> = text.chars().collect();
        let mut out: String = chars[..self.start].iter().collect();
        out.push_str(&self.inserted);
        out.extend(&chars[self.end..]);
        out
    }
}

/// Minimal single replacement turning `a` into `b`, by trimming the longest
/// common prefix and then the longest common suffix of what remains.
pub fn diff_states(a: &str, b: &str) -> Result<CharDelta, KeystrokeError> {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let delta = diff_chars(&a, &b).ok_or(KeystrokeError::NoDelta)?;
    Ok(CharDelta { start: delta.0, end: delta.1, inserted: b[delta.0..delta.2].iter().collect() })
}

/// Returns `(start, end_in_a, end_in_b)`.
fn diff_chars(a: &[char], b: &[char]) -> Option<(usize, usize, usize)> {
    if a == b {
        return None;
    }
    let prefix = a.iter().zip(b).take_while(|(x, y)| x == y).count();
    let max_suffix = a.len().min(b.len()) - prefix;
    let suffix = a.iter().rev().zip(b.iter().rev()).take(max_suffix).take_while(|(x, y)| x == y).count();
    Some((prefix, a.len() - suffix, b.len() - suffix))
}

/// Character at `i`, with positions outside the string reading as a space.
fn at(s: &[char], i: isize) -> char {
    if i < 0 {
        ' '
    } else {
        s.get(i as usize).copied().unwrap_or(' ')
    }
}

/// Whether cutting both strings at `left` (they share the prefix before it)
/// keeps whole words on either side.
fn safe_left(a: &[char], b: &[char], left: usize) -> bool {
    let l = left as isize;
    at(a, l - 1) == ' ' || (at(a, l) == ' ' && at(b, l) == ' ')
}

/// Same, for a shared suffix of length `suffix`.
fn safe_right(a: &[char], b: &[char], suffix: usize) -> bool {
    let ra = (a.len() - suffix) as isize;
    let rb = (b.len() - suffix) as isize;
    suffix == 0 || at(a, ra) == ' ' || (at(a, ra - 1) == ' ' && at(b, rb - 1) == ' ')
}

/// Widens a changed span to the nearest cut points that do not split words.
/// Returns `(left, shared_suffix_len)`.
fn widen(a: &[char], b: &[char], mut left: usize, mut suffix: usize) -> (usize, usize) {
    while !safe_left(a, b, left) {
        left -= 1;
    }
    while !safe_right(a, b, suffix) {
        suffix -= 1;
    }
    (left, suffix)
}

/// Character-level editor states, one per keystroke.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeystrokeLog {
    states: Vec<String>,
}

impl KeystrokeLog {
    /// Builds a log; runs of identical consecutive states (cursor moves) collapse.
    pub fn new(states: Vec<String>) -> Result<Self, KeystrokeError> {
        if states.is_empty() {
            return Err(KeystrokeError::Empty);
        }
        let mut deduped: Vec<String> = Vec::with_capacity(states.len());
        for s in states {
            if deduped.last() != Some(&s) {
                deduped.push(s);
            }
        }
        Ok(KeystrokeLog { states: deduped })
    }

    pub fn states(&self) -> &[String] {
        &self.states
    }
}

/// Result of replaying a log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Replay {
    pub trace: Trace,
    pub episodes: usize,
    /// Set when an episode deleted a word typed by an earlier episode, i.e.
    /// the editor left a word unfinished and came back to it later.
    pub refocused: bool,
}

struct Episode {
    start_state: Vec<char>,
    left: usize,
    suffix: usize,
}

struct Replayer {
    tokens: Vec<String>,
    // Whether each current token was typed during the replay.
    typed: Vec<bool>,
    actions: Vec<EditAction>,
    episodes: usize,
    refocused: bool,
}

impl Replayer {
    fn close(&mut self, ep: &Episode, end_state: &[char]) {
        let s0 = &ep.start_state;
        let s1 = end_state;
        let (left, suffix) = widen(s0, s1, ep.left, ep.suffix);
        let offset = tokenize(&s0[..left].iter().collect::<String>()).len();
        let old = tokenize(&s0[left..s0.len() - suffix].iter().collect::<String>());
        let new = tokenize(&s1[left..s1.len() - suffix].iter().collect::<String>());

        let head = old.iter().zip(&new).take_while(|(x, y)| x == y).count();
        let tail = old[head..].iter().rev().zip(new[head..].iter().rev()).take_while(|(x, y)| x == y).count();
        let old_mid = &old[head..old.len() - tail];
        let new_mid = &new[head..new.len() - tail];
        let base = offset + head;
        let local = l2r_trace(&min_edit_script(old_mid, new_mid));
        self.episodes += 1;
        for a in local.edits() {
            match a {
                EditAction::Delete { pos, token } => {
                    let p = base + pos;
                    if self.typed[p] {
                        self.refocused = true;
                    }
                    self.tokens.remove(p);
                    self.typed.remove(p);
                    self.actions.push(EditAction::delete(p, token.clone()));
                }
                EditAction::Insert { pos, token } => {
                    let p = base + pos;
                    self.tokens.insert(p, token.clone());
                    self.typed.insert(p, true);
                    self.actions.push(EditAction::insert(p, token.clone()));
                }
                EditAction::Stop => {}
            }
        }
        debug_assert_eq!(self.tokens, tokenize(&s1.iter().collect::<String>()));
    }
}

/// Replays a log into an unfiltered word-level trace (terminated by `STOP`).
///
/// The first state is taken as `mt`; applying the trace to it yields the
/// tokenization of the last state.
pub fn replay(log: &KeystrokeLog) -> Replay {
    let states: Vec<Vec<char>> = log.states.iter().map(|s| s.chars().collect()).collect();
    let tokens = tokenize(&log.states[0]);
    let mut r = Replayer {
        typed: vec![false; tokens.len()],
        tokens,
        actions: Vec::new(),
        episodes: 0,
        refocused: false,
    };
    let mut current: Option<Episode> = None;
    for pair in states.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        let Some((start, end_a, end_b)) = diff_chars(a, b) else { continue };
        let (left, suffix) = widen(a, b, start, a.len() - end_a);
        debug_assert_eq!(a.len() - end_a, b.len() - end_b);
        let right = a.len() - suffix;
        current = Some(match current.take() {
            Some(mut ep) if left <= a.len() - ep.suffix && right >= ep.left => {
                ep.left = ep.left.min(left);
                ep.suffix = ep.suffix.min(suffix);
                ep
            }
            Some(ep) => {
                r.close(&ep, a);
                Episode { start_state: a.clone(), left, suffix }
            }
            None => Episode { start_state: a.clone(), left, suffix },
        });
    }
    if let Some(ep) = current {
        r.close(&ep, states.last().expect("log is non-empty"));
    }
    Replay { trace: Trace::terminated(r.actions), episodes: r.episodes, refocused: r.refocused }
}

/// Replays a sample's log and checks it against the sample's `mt` and `pe`.
pub fn replay_sample<S: AsRef<str>>(mt: &[S], pe: &[S], log: &KeystrokeLog) -> Result<Replay, KeystrokeError> {
    let mt_text = detokenize(mt);
    if log.states[0] != mt_text {
        return Err(KeystrokeError::FirstState { expected: mt_text, found: log.states[0].clone() });
    }
    let out = replay(log);
    let got = apply_all(mt, out.trace.actions()).map(|t| detokenize(&t)).unwrap_or_default();
    let expected = detokenize(pe);
    if got != expected {
        return Err(KeystrokeError::Divergence { expected, got });
    }
    Ok(out)
}
