//! Word-level vocabulary with reserved special tokens.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

pub const UNK: &str = "[UNK]";
pub const SEP: &str = "[SEP]";
pub const START: &str = "<S>";
pub const END: &str = "<T>";

const SPECIALS: [&str; 4] = [UNK, SEP, START, END];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocab { tokens, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    pub const UNK_ID: usize = 0;
    pub const SEP_ID: usize = 1;
    pub const START_ID: usize = 2;
    pub const END_ID: usize = 3;

    /// Specials first, then the distinct words in sorted order.
    pub fn build<'a>(words: impl IntoIterator<Item = &'a str>) -> Self {
        let words: BTreeSet<&str> = words.into_iter().filter(|w| !SPECIALS.contains(w)).collect();
        let tokens: Vec<String> = SPECIALS.iter().copied().chain(words).map(str::to_owned).collect();
        Vocab::from(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Id of a text token. Special-token strings occurring in text map to UNK.
    pub fn id(&self, token: &str) -> usize {
        if SPECIALS.contains(&token) {
            return Self::UNK_ID;
        }
        self.index.get(token).copied().unwrap_or(Self::UNK_ID)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}
