use std::collections::HashMap;
use std::io::{BufRead, Write};

use super::sample::AspectSample;
use crate::error::{Error, Result};

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    ids: HashMap<String, usize>,
    tokens: Vec<String>,
}

impl Vocab {
    /// Tokens with corpus frequency ≥ `min_freq`, most frequent first,
    /// ties in lexicographic order, after the padding and unknown entries.
    pub fn build(samples: &[AspectSample], min_freq: usize) -> Result<Vocab> {
        if samples.is_empty() {
            return Err(Error::Empty("cannot build a vocabulary from zero samples"));
        }
        let mut freq: HashMap<&str, usize> = HashMap::new();
        for s in samples {
            for t in &s.tokens {
                *freq.entry(t.as_str()).or_default() += 1;
            }
        }
        let mut kept: Vec<(&str, usize)> = freq
            .into_iter()
            .filter(|&(t, c)| c >= min_freq.max(1) && t != PAD && t != UNK)
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        Ok(Vocab::from_tokens(kept.into_iter().map(|(t, _)| t.to_owned())))
    }

    /// Vocabulary with the reserved entries followed by `tokens` in order.
    pub fn from_tokens(tokens: impl IntoIterator<Item = String>) -> Vocab {
        let mut vocab = Vocab {
            ids: HashMap::new(),
            tokens: Vec::new(),
        };
        for t in [PAD.to_owned(), UNK.to_owned()].into_iter().chain(tokens) {
            if !vocab.ids.contains_key(&t) {
                vocab.ids.insert(t.clone(), vocab.tokens.len());
                vocab.tokens.push(t);
            }
        }
        vocab
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Id of `token`, or [`UNK_ID`].
    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.ids.contains_key(token)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    /// One token per line in id order, reserved entries included.
    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for t in &self.tokens {
            writeln!(w, "{t}")?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(r: R) -> Result<Vocab> {
        let mut tokens = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line.map_err(|e| Error::Line {
                line: i + 1,
                message: e.to_string(),
            })?;
            tokens.push(line);
        }
        if tokens.get(PAD_ID).map(String::as_str) != Some(PAD)
            || tokens.get(UNK_ID).map(String::as_str) != Some(UNK)
        {
            return Err(Error::Line {
                line: 1,
                message: format!("vocabulary must start with {PAD} and {UNK}"),
            });
        }
        Ok(Vocab::from_tokens(tokens.into_iter().skip(2)))
    }
}
