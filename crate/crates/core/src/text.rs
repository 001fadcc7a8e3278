//! Whitespace tokenisation and the token vocabulary.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOQ: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const NUM_RESERVED: usize = 4;

const RESERVED: [&str; NUM_RESERVED] = ["<pad>", "<boq>", "<eos>", "<unk>"];

/// A tokenised query together with the text it came from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSeq {
    pub tokens: Vec<String>,
    pub surface: String,
}

impl TokenSeq {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Lowercases, splits on Unicode whitespace and strips punctuation from token edges.
pub fn tokenize(text: &str) -> TokenSeq {
    let tokens = text
        .split_whitespace()
        .map(|w| w.trim_matches(|c: char| c.is_ascii_punctuation() || (!c.is_alphanumeric() && !c.is_whitespace())))
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect();
    TokenSeq {
        tokens,
        surface: text.to_string(),
    }
}

/// The canonical form a query takes after tokenisation.
pub fn normalize(text: &str) -> String {
    tokenize(text).tokens.join(" ")
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocabulary {
    /// Keeps tokens seen at least `min_count` times; ids are assigned by
    /// descending frequency, ties broken lexicographically.
    pub fn build<I, S>(corpus: I, min_count: usize) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut counts: HashMap<String, usize> = HashMap::new();
        let mut lines = 0usize;
        for text in corpus {
            lines += 1;
            for t in tokenize(text.as_ref()).tokens {
                *counts.entry(t).or_default() += 1;
            }
        }
        if lines == 0 {
            return Err(Error::Empty("vocabulary corpus"));
        }
        let mut entries: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(t, c)| *c >= min_count.max(1) && !RESERVED.contains(&t.as_str()))
            .collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Ok(Self::from_tokens(entries.into_iter().map(|(t, _)| t)))
    }

    fn from_tokens(words: impl IntoIterator<Item = String>) -> Self {
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        tokens.extend(words);
        let ids = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary { tokens, ids }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= NUM_RESERVED
    }

    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.ids.contains_key(token)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn encode(&self, seq: &TokenSeq) -> Vec<usize> {
        seq.tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn encode_str(&self, text: &str) -> Vec<usize> {
        self.encode(&tokenize(text))
    }

    /// Joins non-special tokens with single spaces.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .filter(|&&i| i >= NUM_RESERVED || i == UNK)
            .filter_map(|&i| self.token(i))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// One token per line; line n holds id n + 4.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = String::new();
        for t in &self.tokens[NUM_RESERVED..] {
            s.push_str(t);
            s.push('\n');
        }
        fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut seen = HashMap::new();
        let mut words = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() || line.chars().any(char::is_whitespace) || RESERVED.contains(&line) {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: i + 1,
                    msg: format!("invalid vocabulary entry {line:?}"),
                });
            }
            if seen.insert(line.to_string(), i).is_some() {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: i + 1,
                    msg: format!("duplicate token {line:?}"),
                });
            }
            words.push(line.to_string());
        }
        Ok(Self::from_tokens(words))
    }
}

/// Lays out `<boq> tokens… <eos> <pad>…` to exactly `to_len` ids.
pub fn pad_query(ids: &[usize], to_len: usize) -> Result<Vec<usize>> {
    if to_len < ids.len() + 2 {
        return Err(Error::Contract(format!(
            "pad length {to_len} too small for {} tokens plus <boq>/<eos>",
            ids.len()
        )));
    }
    let mut out = Vec::with_capacity(to_len);
    out.push(BOQ);
    out.extend_from_slice(ids);
    out.push(EOS);
    out.resize(to_len, PAD);
    Ok(out)
}

/// Common padded length for a set of queries: longest token count plus the two specials.
pub fn padded_len<'a>(queries: impl IntoIterator<Item = &'a [usize]>) -> usize {
    queries.into_iter().map(<[usize]>::len).max().unwrap_or(0) + 2
}

/// Pads every query to the shared length; rows are returned in input order.
pub fn pad_batch(queries: &[Vec<usize>]) -> Result<Vec<Vec<usize>>> {
    let len = padded_len(queries.iter().map(Vec::as_slice));
    queries.iter().map(|q| pad_query(q, len)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lowercases_and_splits() {
        assert_eq!(tokenize("Dodge Posters").tokens, vec!["dodge", "posters"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("  \"Red,\"  shoes!  ").tokens, vec!["red", "shoes"]);
        assert_eq!(tokenize("a7-pro x").tokens, vec!["a7-pro", "x"]);
    }

    #[test]
    fn vocab_counts_and_min_count() {
        let v = Vocabulary::build(["a a b"], 1).unwrap();
        assert_eq!(v.len(), 6);
        assert_eq!(v.id("a"), 4);
        assert_eq!(v.id("b"), 5);
        let v2 = Vocabulary::build(["a a b"], 2).unwrap();
        assert_eq!(v2.len(), 5);
        assert_eq!(v2.id("b"), UNK);
    }

    #[test]
    fn empty_corpus_rejected() {
        assert!(Vocabulary::build(Vec::<String>::new(), 1).is_err());
    }

    #[test]
    fn deterministic_ids_with_ties() {
        let corpus = ["zeta alpha beta", "beta zeta", "alpha"];
        let a = Vocabulary::build(corpus, 1).unwrap();
        let b = Vocabulary::build(corpus, 1).unwrap();
        assert_eq!(a, b);
        // all three have count 2 → lexicographic
        assert_eq!(a.token(4), Some("alpha"));
        assert_eq!(a.token(5), Some("beta"));
        assert_eq!(a.token(6), Some("zeta"));
    }

    #[test]
    fn padding_layout() {
        assert_eq!(pad_query(&[7, 9], 5).unwrap(), vec![BOQ, 7, 9, EOS, PAD]);
        assert_eq!(pad_query(&[], 2).unwrap(), vec![BOQ, EOS]);
        assert!(pad_query(&[7, 9], 3).is_err());
    }

    #[test]
    fn three_history_queries_share_a_length() {
        let rows = pad_batch(&[vec![4, 6], vec![4, 5, 6], vec![4, 5, 7, 8]]).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows.iter().all(|r| r.len() == 6));
        assert!(rows.iter().all(|r| r[0] == BOQ));
    }

    #[test]
    fn vocab_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vocab.txt");
        let v = Vocabulary::build(["samsung galaxy a7", "galaxy case"], 1).unwrap();
        v.save(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().next(), Some("galaxy"));
        assert_eq!(Vocabulary::load(&p).unwrap(), v);
    }
}
