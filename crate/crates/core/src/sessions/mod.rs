//! Session records, the product catalog and the synthetic corpus generator.

mod catalog;
mod generate;

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use catalog::{Catalog, Product, ProductId};
pub use generate::{generate_corpus, CatalogSpec, Corruption, CorpusStats, GeneratedSession};

/// One search session: context queries, the instant (source) query, and the
/// final purchase-associated (target) query.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub history: Vec<String>,
    pub source: String,
    pub target: String,
    pub purchased_product: ProductId,
}

impl Session {
    /// History, source and target, in session order.
    pub fn queries(&self) -> impl Iterator<Item = &str> {
        self.history
            .iter()
            .map(String::as_str)
            .chain([self.source.as_str(), self.target.as_str()])
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.history.is_empty() {
            return Err("history must contain at least one query".into());
        }
        if let Some(i) = self.history.iter().position(|q| q.trim().is_empty()) {
            return Err(format!("history query {i} is empty"));
        }
        if self.source.trim().is_empty() {
            return Err("source query is empty".into());
        }
        if self.target.trim().is_empty() {
            return Err("target query is empty".into());
        }
        Ok(())
    }
}

#[derive(Deserialize)]
struct RawSession {
    session_id: Option<String>,
    history: Option<Vec<String>>,
    source: Option<String>,
    target: Option<String>,
    purchased_product: Option<ProductId>,
}

/// Parses JSONL sessions; blank lines are skipped.
pub fn parse_sessions(text: &str) -> Result<Vec<Session>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawSession = serde_json::from_str(line).map_err(|e| Error::Schema {
            line: line_no,
            msg: e.to_string(),
        })?;
        let missing = |k: &str| Error::Schema {
            line: line_no,
            msg: format!("missing key `{k}`"),
        };
        let s = Session {
            session_id: raw.session_id.ok_or_else(|| missing("session_id"))?,
            history: raw.history.ok_or_else(|| missing("history"))?,
            source: raw.source.ok_or_else(|| missing("source"))?,
            target: raw.target.ok_or_else(|| missing("target"))?,
            purchased_product: raw.purchased_product.ok_or_else(|| missing("purchased_product"))?,
        };
        s.validate().map_err(|msg| Error::Schema { line: line_no, msg })?;
        if s.history.len() < 3 {
            log::warn!("line {line_no}: session {} has only {} history queries", s.session_id, s.history.len());
        }
        out.push(s);
    }
    Ok(out)
}

pub fn load_sessions(path: &Path) -> Result<Vec<Session>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_sessions(&text)
}

pub fn sessions_to_jsonl(sessions: &[Session]) -> String {
    let mut s = String::new();
    for sess in sessions {
        s.push_str(&serde_json::to_string(sess).expect("session serialises"));
        s.push('\n');
    }
    s
}

pub fn save_sessions(path: &Path, sessions: &[Session]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(sessions_to_jsonl(sessions).as_bytes()).map_err(|e| Error::io(path, e))
}

/// Stable 64-bit FNV-1a hash of a session id, used for split assignment.
pub fn id_hash(id: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in id.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Which partition a session falls into, given its id.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

/// Buckets sessions by `id_hash % 10`: `valid_buckets` buckets go to
/// validation, the next `test_buckets` to test, the rest to training.
pub fn split_by_id(sessions: &[Session], valid_buckets: u64, test_buckets: u64) -> (Vec<Session>, Vec<Session>, Vec<Session>) {
    let (mut tr, mut va, mut te) = (Vec::new(), Vec::new(), Vec::new());
    for s in sessions {
        match split_of(&s.session_id, valid_buckets, test_buckets) {
            Split::Train => tr.push(s.clone()),
            Split::Valid => va.push(s.clone()),
            Split::Test => te.push(s.clone()),
        }
    }
    (tr, va, te)
}

pub fn split_of(id: &str, valid_buckets: u64, test_buckets: u64) -> Split {
    let b = id_hash(id) % 10;
    if b < valid_buckets {
        Split::Valid
    } else if b < valid_buckets + test_buckets {
        Split::Test
    } else {
        Split::Train
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DODGE: &str = r#"{"session_id":"s1","history":["dodge banners","mopar banner","mopar poster"],"source":"dodger posters","target":"dodge posters","purchased_product":17}"#;

    #[test]
    fn parses_dodge_example() {
        let s = parse_sessions(DODGE).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].history.len(), 3);
        assert_eq!(s[0].source, "dodger posters");
        assert_eq!(s[0].target, "dodge posters");
        assert_eq!(s[0].purchased_product, ProductId(17));
    }

    #[test]
    fn empty_file_is_empty_list() {
        assert!(parse_sessions("").unwrap().is_empty());
    }

    #[test]
    fn empty_history_rejected() {
        let line = r#"{"session_id":"s","history":[],"source":"a","target":"b","purchased_product":1}"#;
        let err = parse_sessions(line).unwrap_err();
        assert!(matches!(err, Error::Schema { line: 1, .. }), "{err}");
    }

    #[test]
    fn malformed_and_missing_report_line() {
        let text = format!("{DODGE}\n{{not json\n");
        assert!(matches!(parse_sessions(&text).unwrap_err(), Error::Schema { line: 2, .. }));
        let missing = r#"{"session_id":"s","history":["a"],"source":"a","purchased_product":1}"#;
        let err = parse_sessions(missing).unwrap_err();
        assert!(err.to_string().contains("target"), "{err}");
    }

    #[test]
    fn write_then_load() {
        let s = parse_sessions(DODGE).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sessions.jsonl");
        save_sessions(&p, &s).unwrap();
        assert_eq!(load_sessions(&p).unwrap(), s);
    }

    #[test]
    fn split_is_disjoint_and_stable() {
        let sessions: Vec<Session> = (0..200)
            .map(|i| Session {
                session_id: format!("x{i}"),
                history: vec!["a".into()],
                source: "a".into(),
                target: "b".into(),
                purchased_product: ProductId(1),
            })
            .collect();
        let (tr, va, te) = split_by_id(&sessions, 1, 1);
        assert_eq!(tr.len() + va.len() + te.len(), 200);
        assert!(!va.is_empty() && !te.is_empty());
        let (tr2, _, _) = split_by_id(&sessions, 1, 1);
        assert_eq!(tr, tr2);
    }
}
