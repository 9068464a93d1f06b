//! Synthetic post-editing corpora.
//!
//! Sources are drawn from a toy vocabulary `s0..sV` and translated word by
//! word into `t0..tV`; the result is the post-edit. The MT output is the
//! post-edit with a few random corruptions. Human editors are simulated as
//! mostly left-to-right with occasional jumps and hesitations, and their
//! actions are typed out character by character into keystroke logs.

use std::collections::HashMap;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::Sample;
use crate::edit::{apply_all, detokenize, min_edit_script, EditAction, Trace};
use crate::reorder::{derive_seed, realize, Permutation};

const TAGS: [&str; 5] = ["DET", "NOUN", "VERB", "ADJ", "PUNCT"];

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusOptions {
    pub vocab_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Upper bound on corruptions applied to the post-edit to obtain `mt`.
    pub max_corruptions: usize,
    /// Fraction of samples left uncorrupted (`mt == pe`).
    pub identity_rate: f64,
    pub keystrokes: bool,
    pub editor: EditorOptions,
    /// Fraction of samples (rounded to a whole count) whose editor moves the
    /// wrong word of a swapped pair, which cannot be aligned.
    pub unalignable_rate: f64,
}

impl Default for CorpusOptions {
    fn default() -> Self {
        CorpusOptions {
            vocab_size: 40,
            min_len: 4,
            max_len: 8,
            max_corruptions: 3,
            identity_rate: 0.15,
            keystrokes: true,
            editor: EditorOptions::default(),
            unalignable_rate: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EditorOptions {
    /// Per step, probability of jumping to a random remaining edit instead of the leftmost.
    pub jump_rate: f64,
    /// Per sample, probability of typing a word that is later deleted again.
    pub hesitation_rate: f64,
    /// Per typed character, probability of a typo that is immediately corrected.
    pub typo_rate: f64,
    /// Probability that a run of deletions at one position is removed as a block.
    pub block_rate: f64,
}

impl Default for EditorOptions {
    fn default() -> Self {
        EditorOptions { jump_rate: 0.2, hesitation_rate: 0.2, typo_rate: 0.05, block_rate: 0.2 }
    }
}

impl EditorOptions {
    /// An editor that types every action exactly once, with no detours.
    pub fn clean() -> Self {
        EditorOptions { jump_rate: 0.0, hesitation_rate: 0.0, typo_rate: 0.0, block_rate: 0.0 }
    }
}

pub fn source_word(k: usize) -> String {
    format!("s{k}")
}

pub fn target_word(k: usize) -> String {
    format!("t{k}")
}

/// Part-of-speech tag assigned to target word `t<k>`.
pub fn target_tag(k: usize) -> &'static str {
    TAGS[k % TAGS.len()]
}

fn corrupt(pe: &[String], opts: &CorpusOptions, rng: &mut impl Rng) -> Vec<String> {
    let mut mt = pe.to_vec();
    let n = rng.random_range(1..=opts.max_corruptions.max(1));
    for _ in 0..n {
        let word = target_word(rng.random_range(0..opts.vocab_size));
        match rng.random_range(0..4) {
            0 if !mt.is_empty() => {
                let i = rng.random_range(0..mt.len());
                mt[i] = word;
            }
            1 if mt.len() > 1 => {
                mt.remove(rng.random_range(0..mt.len()));
            }
            2 => {
                let i = rng.random_range(0..=mt.len());
                mt.insert(i, word);
            }
            _ if mt.len() > 1 => {
                let i = rng.random_range(0..mt.len() - 1);
                mt.swap(i, i + 1);
            }
            _ => {}
        }
    }
    mt
}

/// Orders the minimal script like a mostly left-to-right editor.
pub fn human_order(n_items: usize, jump_rate: f64, rng: &mut impl Rng) -> Permutation {
    let mut remaining: Vec<usize> = (0..n_items).collect();
    let mut order = Vec::with_capacity(n_items);
    while !remaining.is_empty() {
        let pick = if rng.random_bool(jump_rate) { rng.random_range(0..remaining.len()) } else { 0 };
        order.push(remaining.remove(pick));
    }
    Permutation::new(order).expect("built from 0..n")
}

/// Inserts `token` before step `at` at state position `pos`, and deletes it
/// again before step `until`; positions of the steps in between are shifted.
pub fn inject_redundant_pair(trace: &Trace, token: &str, at: usize, pos: usize, until: usize) -> Trace {
    let edits = trace.edits();
    let mut out = Vec::with_capacity(edits.len() + 3);
    let mut fresh: Option<usize> = None;
    for (step, action) in edits.iter().enumerate() {
        if step == at {
            out.push(EditAction::insert(pos, token));
            fresh = Some(pos);
        }
        if step == until {
            if let Some(r) = fresh.take() {
                out.push(EditAction::delete(r, token));
            }
        }
        match (action, fresh) {
            (EditAction::Delete { pos: p, token: t }, Some(r)) => {
                let p2 = p + usize::from(*p >= r);
                out.push(EditAction::delete(p2, t.clone()));
                if p2 < r {
                    fresh = Some(r - 1);
                }
            }
            (EditAction::Insert { pos: p, token: t }, Some(r)) => {
                let p2 = p + usize::from(*p > r);
                out.push(EditAction::insert(p2, t.clone()));
                if p2 <= r {
                    fresh = Some(r + 1);
                }
            }
            _ => out.push(action.clone()),
        }
    }
    if let Some(r) = fresh {
        out.push(EditAction::delete(r, token));
    }
    Trace::terminated(out)
}

/// A simulated human trace for `mt -> pe`, possibly with a hesitation pair.
pub fn human_trace(mt: &[String], pe: &[String], opts: &EditorOptions, fresh_word: &str, rng: &mut impl Rng) -> Trace {
    let script = min_edit_script(mt, pe);
    let perm = human_order(script.len(), opts.jump_rate, rng);
    let trace = realize(&script, &perm).expect("permutation matches script");
    if !rng.random_bool(opts.hesitation_rate) {
        return trace;
    }
    let n = trace.num_edits();
    let at = rng.random_range(0..=n);
    let until = rng.random_range(at..=n);
    let state_len = apply_all(mt, &trace.edits()[..at]).expect("valid prefix").len();
    let pos = rng.random_range(0..=state_len);
    inject_redundant_pair(&trace, fresh_word, at, pos, until)
}

fn type_word(prefix: &str, word: &str, suffix: &str, typo_rate: f64, rng: &mut impl Rng, states: &mut Vec<String>) {
    let chars: Vec<char> = word.chars().collect();
    for k in 1..=chars.len() {
        let typed: String = chars[..k].iter().collect();
        if rng.random_bool(typo_rate) {
            let wrong: String = chars[..k - 1].iter().chain(std::iter::once(&'q')).collect();
            states.push(format!("{prefix}{wrong}{suffix}"));
        }
        states.push(format!("{prefix}{typed}{suffix}"));
    }
}

fn erase_word(prefix: &str, word: &str, suffix: &str, states: &mut Vec<String>) {
    let chars: Vec<char> = word.chars().collect();
    for k in (0..chars.len()).rev() {
        let left: String = chars[..k].iter().collect();
        states.push(format!("{prefix}{left}{suffix}"));
    }
}

/// Types a trace out as editor states, one per keystroke.
///
/// Insertions are typed before the word they precede (followed by a space),
/// or after a space at the end of the sentence. Deletions backspace the word
/// and then the adjacent space. With `block_rate`, a run of deletions at one
/// position disappears in a single state, as if selected and cut.
pub fn keystroke_states(mt: &[String], trace: &Trace, opts: &EditorOptions, rng: &mut impl Rng) -> Vec<String> {
    let mut tokens: Vec<String> = mt.to_vec();
    let mut states = vec![detokenize(&tokens)];
    let edits = trace.edits();
    let mut step = 0;
    while step < edits.len() {
        match &edits[step] {
            EditAction::Insert { pos, token } => {
                let p = *pos;
                if tokens.is_empty() {
                    type_word("", token, "", opts.typo_rate, rng, &mut states);
                } else if p < tokens.len() {
                    let before = detokenize(&tokens[..p]);
                    let prefix = if before.is_empty() { String::new() } else { format!("{before} ") };
                    let after = detokenize(&tokens[p..]);
                    type_word(&prefix, token, &after, opts.typo_rate, rng, &mut states);
                    states.push(format!("{prefix}{token} {after}"));
                } else {
                    let before = detokenize(&tokens);
                    states.push(format!("{before} "));
                    type_word(&format!("{before} "), token, "", opts.typo_rate, rng, &mut states);
                }
                tokens.insert(p, token.clone());
            }
            EditAction::Delete { pos, .. } => {
                let p = *pos;
                let mut run = 1;
                while step + run < edits.len()
                    && matches!(&edits[step + run], EditAction::Delete { pos: q, .. } if *q == p)
                {
                    run += 1;
                }
                if run > 1 && rng.random_bool(opts.block_rate) {
                    tokens.drain(p..p + run);
                    states.push(detokenize(&tokens));
                    step += run;
                    continue;
                }
                let word = tokens[p].clone();
                let before = detokenize(&tokens[..p]);
                let after = detokenize(&tokens[p + 1..]);
                if tokens.len() == 1 {
                    erase_word("", &word, "", &mut states);
                } else if p + 1 < tokens.len() {
                    let prefix = if before.is_empty() { String::new() } else { format!("{before} ") };
                    erase_word(&prefix, &word, &format!(" {after}"), &mut states);
                    states.push(format!("{prefix}{after}"));
                } else {
                    erase_word(&format!("{before} "), &word, "", &mut states);
                    states.push(before.clone());
                }
                tokens.remove(p);
            }
            EditAction::Stop => {}
        }
        debug_assert_eq!(states.last(), Some(&detokenize(&tokens)));
        step += 1;
    }
    states.dedup();
    states
}

/// Generates `n` samples; deterministic in `(n, seed, opts)`.
pub fn corpus(n: usize, seed: u64, opts: &CorpusOptions) -> Vec<Sample> {
    let n_unalignable = (opts.unalignable_rate * n as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Spread the unalignable samples over the corpus.
    let mut flags = vec![false; n];
    for f in flags.iter_mut().take(n_unalignable) {
        *f = true;
    }
    rand::seq::SliceRandom::shuffle(flags.as_mut_slice(), &mut rng);

    flags
        .into_iter()
        .enumerate()
        .map(|(i, unalignable)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
            sample(i, unalignable, opts, &mut rng)
        })
        .collect()
}

fn sample(index: usize, unalignable: bool, opts: &CorpusOptions, rng: &mut impl Rng) -> Sample {
    let min_len = if unalignable { opts.min_len.max(4) } else { opts.min_len };
    let len = rng.random_range(min_len..=opts.max_len.max(min_len));
    let ids: Vec<usize> = (0..len).map(|_| rng.random_range(0..opts.vocab_size)).collect();
    let src: Vec<String> = ids.iter().map(|&k| source_word(k)).collect();
    let mut pe: Vec<String> = ids.iter().map(|&k| target_word(k)).collect();

    let (mt, human) = if unalignable {
        let (mt, distinct_pe, human) = swapped_pair(&pe, rng);
        pe = distinct_pe;
        (mt, human)
    } else {
        let mt = if rng.random_bool(opts.identity_rate) { pe.clone() } else { corrupt(&pe, opts, rng) };
        let fresh = format!("h{index}");
        let human = human_trace(&mt, &pe, &opts.editor, &fresh, rng);
        (mt, human)
    };

    let mut tags = HashMap::new();
    for &k in &ids {
        tags.insert(target_word(k), target_tag(k).to_owned());
    }
    let keystrokes = opts.keystrokes.then(|| keystroke_states(&mt, &human, &opts.editor, rng));
    Sample {
        id: format!("syn{index}"),
        src,
        mt,
        pe,
        keystrokes,
        pos: Some(tags),
    }
}

/// `mt` with two adjacent distinct words swapped (never at the sentence end),
/// and a human trace that moves the word the minimal script keeps in place.
/// A repeated word in the pair is renamed, so `pe` is returned as well.
fn swapped_pair(pe: &[String], rng: &mut impl Rng) -> (Vec<String>, Vec<String>, Trace) {
    let mut pe = pe.to_vec();
    let i = rng.random_range(0..pe.len() - 2);
    if pe[i] == pe[i + 1] {
        pe[i + 1] = format!("{}x", pe[i + 1]);
    }
    let mut mt = pe.clone();
    mt.swap(i, i + 1);
    let script = min_edit_script(&mt, &pe);
    let moved_by_script = script.items()[0].token().to_owned();
    let other = if moved_by_script == mt[i] { i + 1 } else { i };
    // Move `mt[other]` to the other side of its neighbour.
    let word = mt[other].clone();
    let trace = if other == i + 1 {
        Trace::terminated(vec![EditAction::delete(i + 1, word.clone()), EditAction::insert(i, word)])
    } else {
        Trace::terminated(vec![EditAction::delete(i, word.clone()), EditAction::insert(i + 1, word)])
    };
    debug_assert_eq!(apply_all(&mt, trace.actions()).unwrap(), pe);
    (mt, pe, trace)
}

/// Picks `k` distinct random words from a slice.
pub fn choose_words(words: &[String], k: usize, rng: &mut impl Rng) -> Vec<String> {
    words.choose_multiple(rng, k).cloned().collect()
}
