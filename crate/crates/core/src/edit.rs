//! Word-level edit actions, traces and minimal edit scripts.
//!
//! Positions are 0-based and state-relative: an insert at `p` places the new
//! token at index `p` (insert-before), a delete at `p` removes the token at
//! index `p`. Text form is `I:<pos>:<token>`, `D:<pos>:<token>` or `STOP`,
//! separated by single spaces.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Splits pre-tokenized text into tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_owned).collect()
}

/// Joins tokens with single spaces.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(t.as_ref());
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum EditAction {
    Insert { pos: usize, token: String },
    Delete { pos: usize, token: String },
    Stop,
}

impl EditAction {
    pub fn insert(pos: usize, token: impl Into<String>) -> Self {
        EditAction::Insert { pos, token: token.into() }
    }

    pub fn delete(pos: usize, token: impl Into<String>) -> Self {
        EditAction::Delete { pos, token: token.into() }
    }

    pub fn position(&self) -> Option<usize> {
        match self {
            EditAction::Insert { pos, .. } | EditAction::Delete { pos, .. } => Some(*pos),
            EditAction::Stop => None,
        }
    }

    pub fn token(&self) -> Option<&str> {
        match self {
            EditAction::Insert { token, .. } | EditAction::Delete { token, .. } => Some(token),
            EditAction::Stop => None,
        }
    }

    pub fn is_stop(&self) -> bool {
        matches!(self, EditAction::Stop)
    }

    pub fn is_insert(&self) -> bool {
        matches!(self, EditAction::Insert { .. })
    }
}

impl fmt::Display for EditAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EditAction::Insert { pos, token } => write!(f, "I:{pos}:{token}"),
            EditAction::Delete { pos, token } => write!(f, "D:{pos}:{token}"),
            EditAction::Stop => f.write_str("STOP"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseActionError {
    #[error("malformed action `{0}`: expected KIND:POS:TOKEN or STOP")]
    FieldCount(String),
    #[error("non-integer position in action `{0}`")]
    BadPosition(String),
    #[error("unknown action kind in `{0}`")]
    UnknownKind(String),
    #[error("STOP may only appear once, as the last action")]
    MisplacedStop,
}

impl FromStr for EditAction {
    type Err = ParseActionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "STOP" {
            return Ok(EditAction::Stop);
        }
        // The token may itself contain ':' (e.g. "http://"), so only the first two split.
        let mut fields = s.splitn(3, ':');
        let (kind, pos, token) = match (fields.next(), fields.next(), fields.next()) {
            (Some(k), Some(p), Some(t)) if !t.is_empty() && !t.contains(char::is_whitespace) => (k, p, t),
            _ => return Err(ParseActionError::FieldCount(s.to_owned())),
        };
        if pos.is_empty() || !pos.bytes().all(|b| b.is_ascii_digit()) {
            return Err(ParseActionError::BadPosition(s.to_owned()));
        }
        let pos: usize = pos.parse().map_err(|_| ParseActionError::BadPosition(s.to_owned()))?;
        match kind {
            "I" => Ok(EditAction::insert(pos, token)),
            "D" => Ok(EditAction::delete(pos, token)),
            _ => Err(ParseActionError::UnknownKind(s.to_owned())),
        }
    }
}

/// An ordered sequence of state-relative actions, normally terminated by `STOP`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct Trace(pub Vec<EditAction>);

impl Trace {
    pub fn new(actions: Vec<EditAction>) -> Self {
        Trace(actions)
    }

    /// A trace holding only the terminator.
    pub fn stop_only() -> Self {
        Trace(vec![EditAction::Stop])
    }

    /// Builds a trace from edit actions and appends `STOP`.
    pub fn terminated(mut edits: Vec<EditAction>) -> Self {
        edits.push(EditAction::Stop);
        Trace(edits)
    }

    pub fn actions(&self) -> &[EditAction] {
        &self.0
    }

    /// The INS/DEL actions, without the terminating `STOP`.
    pub fn edits(&self) -> &[EditAction] {
        match self.0.last() {
            Some(EditAction::Stop) => &self.0[..self.0.len() - 1],
            _ => &self.0,
        }
    }

    pub fn num_edits(&self) -> usize {
        self.edits().len()
    }

    pub fn is_terminated(&self) -> bool {
        matches!(self.0.last(), Some(EditAction::Stop))
    }
}

impl fmt::Display for Trace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, a) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{a}")?;
        }
        Ok(())
    }
}

impl FromStr for Trace {
    type Err = ParseActionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let actions = s
            .split_whitespace()
            .map(EditAction::from_str)
            .collect::<Result<Vec<_>, _>>()?;
        if let Some(i) = actions.iter().position(EditAction::is_stop) {
            if i + 1 != actions.len() {
                return Err(ParseActionError::MisplacedStop);
            }
        }
        Ok(Trace(actions))
    }
}

impl Serialize for Trace {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Trace {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EditError {
    #[error("position {pos} out of range for sentence of length {len}")]
    Position { pos: usize, len: usize },
    #[error("delete at {pos} expects `{expected}` but found `{found}`")]
    TokenMismatch { pos: usize, expected: String, found: String },
    #[error("STOP cannot be applied as an edit")]
    Stop,
    #[error("STOP at step {step} is not the last action")]
    MisplacedStop { step: usize },
    #[error("step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<EditError>,
    },
}

/// Applies one action in place.
pub fn apply_in_place(sentence: &mut Vec<String>, action: &EditAction) -> Result<(), EditError> {
    match action {
        EditAction::Insert { pos, token } => {
            if *pos > sentence.len() {
                return Err(EditError::Position { pos: *pos, len: sentence.len() });
            }
            sentence.insert(*pos, token.clone());
        }
        EditAction::Delete { pos, token } => {
            let found = sentence
                .get(*pos)
                .ok_or(EditError::Position { pos: *pos, len: sentence.len() })?;
            if found != token {
                return Err(EditError::TokenMismatch {
                    pos: *pos,
                    expected: token.clone(),
                    found: found.clone(),
                });
            }
            sentence.remove(*pos);
        }
        EditAction::Stop => return Err(EditError::Stop),
    }
    Ok(())
}

pub fn apply<S: AsRef<str>>(sentence: &[S], action: &EditAction) -> Result<Vec<String>, EditError> {
    let mut out: Vec<String> = sentence.iter().map(|t| t.as_ref().to_owned()).collect();
    apply_in_place(&mut out, action)?;
    Ok(out)
}

/// Left fold of [`apply`] over a trace; `STOP` ends the trace.
pub fn apply_all<S: AsRef<str>>(sentence: &[S], trace: &[EditAction]) -> Result<Vec<String>, EditError> {
    let mut out: Vec<String> = sentence.iter().map(|t| t.as_ref().to_owned()).collect();
    for (step, action) in trace.iter().enumerate() {
        if action.is_stop() {
            if step + 1 != trace.len() {
                return Err(EditError::MisplacedStop { step });
            }
            break;
        }
        apply_in_place(&mut out, action).map_err(|e| EditError::Step { step, source: Box::new(e) })?;
    }
    Ok(out)
}

/// One action of a minimal script, anchored to the original `mt`.
///
/// Deletions name the original token index. Insertions name the gap before
/// original token `gap` (`gap == mt.len()` is the end) and their rank among
/// the insertions sharing that gap.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum ScriptItem {
    Delete { index: usize, token: String },
    Insert { gap: usize, ordinal: usize, token: String },
}

impl ScriptItem {
    pub fn anchor(&self) -> usize {
        match self {
            ScriptItem::Delete { index, .. } => *index,
            ScriptItem::Insert { gap, .. } => *gap,
        }
    }

    pub fn token(&self) -> &str {
        match self {
            ScriptItem::Delete { token, .. } | ScriptItem::Insert { token, .. } => token,
        }
    }

    pub fn is_insert(&self) -> bool {
        matches!(self, ScriptItem::Insert { .. })
    }

    /// Left-to-right key: anchor, then deletions before insertions, then ordinal.
    fn canonical_key(&self) -> (usize, u8, usize) {
        match self {
            ScriptItem::Delete { index, .. } => (*index, 0, 0),
            ScriptItem::Insert { gap, ordinal, .. } => (*gap, 1, *ordinal),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScriptError {
    #[error("original index {0} deleted more than once")]
    DuplicateDeletion(usize),
    #[error("original index {index} out of range for mt of length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("gap {0} has non-contiguous insertion ordinals")]
    BadOrdinals(usize),
}

/// A redundancy-free edit script in original-`mt` coordinates.
///
/// Items are kept in canonical left-to-right order; `items()[k]` is the item
/// with left-to-right rank `k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawScript", into = "RawScript")]
pub struct AnchoredScript {
    mt_len: usize,
    items: Vec<ScriptItem>,
}

#[derive(Serialize, Deserialize)]
struct RawScript {
    mt_len: usize,
    items: Vec<ScriptItem>,
}

impl TryFrom<RawScript> for AnchoredScript {
    type Error = ScriptError;
    fn try_from(raw: RawScript) -> Result<Self, ScriptError> {
        AnchoredScript::new(raw.mt_len, raw.items)
    }
}

impl From<AnchoredScript> for RawScript {
    fn from(s: AnchoredScript) -> Self {
        RawScript { mt_len: s.mt_len, items: s.items }
    }
}

impl AnchoredScript {
    /// Validates and canonically orders a set of anchored items.
    pub fn new(mt_len: usize, mut items: Vec<ScriptItem>) -> Result<Self, ScriptError> {
        items.sort_by_key(ScriptItem::canonical_key);
        let mut prev: Option<(usize, u8, usize)> = None;
        for item in &items {
            let key = item.canonical_key();
            match item {
                ScriptItem::Delete { index, .. } => {
                    if *index >= mt_len {
                        return Err(ScriptError::IndexOutOfRange { index: *index, len: mt_len });
                    }
                    if prev == Some(key) {
                        return Err(ScriptError::DuplicateDeletion(*index));
                    }
                }
                ScriptItem::Insert { gap, ordinal, .. } => {
                    if *gap > mt_len {
                        return Err(ScriptError::IndexOutOfRange { index: *gap, len: mt_len });
                    }
                    let expected = match prev {
                        Some((g, 1, o)) if g == *gap => o + 1,
                        _ => 0,
                    };
                    if *ordinal != expected {
                        return Err(ScriptError::BadOrdinals(*gap));
                    }
                }
            }
            prev = Some(key);
        }
        Ok(AnchoredScript { mt_len, items })
    }

    pub fn empty(mt_len: usize) -> Self {
        AnchoredScript { mt_len, items: Vec::new() }
    }

    pub fn mt_len(&self) -> usize {
        self.mt_len
    }

    /// Items in canonical left-to-right order.
    pub fn items(&self) -> &[ScriptItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn deletions(&self) -> impl Iterator<Item = &ScriptItem> {
        self.items.iter().filter(|i| !i.is_insert())
    }

    pub fn insertions(&self) -> impl Iterator<Item = &ScriptItem> {
        self.items.iter().filter(|i| i.is_insert())
    }

    /// Applies the whole script at once, without going through actions.
    pub fn apply_to<S: AsRef<str>>(&self, mt: &[S]) -> Vec<String> {
        let mut deleted = vec![false; self.mt_len];
        let mut gaps: Vec<Vec<&str>> = vec![Vec::new(); self.mt_len + 1];
        for item in &self.items {
            match item {
                ScriptItem::Delete { index, .. } => deleted[*index] = true,
                ScriptItem::Insert { gap, token, .. } => gaps[*gap].push(token),
            }
        }
        let mut out = Vec::with_capacity(mt.len() + gaps.iter().map(Vec::len).sum::<usize>());
        for (g, inserted) in gaps.iter().enumerate() {
            out.extend(inserted.iter().map(|t| t.to_string()));
            if g < mt.len() && !deleted[g] {
                out.push(mt[g].as_ref().to_owned());
            }
        }
        out
    }
}

/// Extracts a minimal insert/delete script turning `mt` into `pe`.
///
/// Substitutions count as one deletion plus one insertion. Among optimal
/// scripts, the backtrace walks left to right preferring a match, then a
/// deletion, then an insertion, so deletions precede insertions inside a
/// changed region.
pub fn min_edit_script<S: AsRef<str>, T: AsRef<str>>(mt: &[S], pe: &[T]) -> AnchoredScript {
    let n = mt.len();
    let m = pe.len();
    let w = m + 1;
    // cost[i * w + j]: distance between mt[i..] and pe[j..].
    let mut cost = vec![0usize; (n + 1) * w];
    for j in 0..=m {
        cost[n * w + j] = m - j;
    }
    for i in (0..n).rev() {
        cost[i * w + m] = n - i;
        for j in (0..m).rev() {
            let del = cost[(i + 1) * w + j] + 1;
            let ins = cost[i * w + j + 1] + 1;
            let mut best = del.min(ins);
            if mt[i].as_ref() == pe[j].as_ref() {
                best = best.min(cost[(i + 1) * w + j + 1]);
            }
            cost[i * w + j] = best;
        }
    }

    // Walk forward preferring match, then insertion, so the earliest mt token
    // of an ambiguous pair is the one kept. Insertions of a region all land in
    // the gap of the next surviving original, after the region's deletions.
    let mut items = Vec::with_capacity(cost[0]);
    let mut pending: Vec<String> = Vec::new();
    let (mut i, mut j) = (0, 0);
    loop {
        let at_match = i < n && j < m && mt[i].as_ref() == pe[j].as_ref() && cost[i * w + j] == cost[(i + 1) * w + j + 1];
        if at_match || (i == n && j == m) {
            for (ordinal, token) in pending.drain(..).enumerate() {
                items.push(ScriptItem::Insert { gap: i, ordinal, token });
            }
            if !at_match {
                break;
            }
            i += 1;
            j += 1;
        } else if j < m && cost[i * w + j] == cost[i * w + j + 1] + 1 {
            pending.push(pe[j].as_ref().to_owned());
            j += 1;
        } else {
            items.push(ScriptItem::Delete { index: i, token: mt[i].as_ref().to_owned() });
            i += 1;
        }
    }
    items.sort_by_key(|a| a.canonical_key());
    AnchoredScript { mt_len: n, items }
}
