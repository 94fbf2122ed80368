//! Token vocabulary: one token per line, UTF-8; blank is implicit as index
//! V (the line count).

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Vocab(format!("duplicate token {t:?}")));
            }
        }
        if tokens.is_empty() {
            return Err(Error::Vocab("empty vocabulary".to_string()));
        }
        Ok(Vocab { tokens, index })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Vocab(format!("read {}: {e}", path.display())))?;
        let tokens: Vec<String> = text
            .lines()
            .filter(|l| !l.is_empty())
            .map(|l| l.to_string())
            .collect();
        Self::from_tokens(tokens)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = String::new();
        for t in &self.tokens {
            text.push_str(t);
            text.push('\n');
        }
        std::fs::write(path, text)?;
        Ok(())
    }

    /// Number of real tokens (the blank id equals this).
    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn blank_id(&self) -> usize {
        self.tokens.len()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(|s| s.as_str())
    }

    /// Encode a transcript character by character.
    pub fn encode_chars(&self, text: &str) -> Result<Vec<usize>> {
        text.chars()
            .map(|c| {
                self.index
                    .get(c.to_string().as_str())
                    .copied()
                    .ok_or_else(|| Error::Vocab(format!("character {c:?} not in vocabulary")))
            })
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Result<String> {
        let mut out = String::new();
        for &id in ids {
            match self.token(id) {
                Some(t) => out.push_str(t),
                None => return Err(Error::Vocab(format!("token id {id} out of range"))),
            }
        }
        Ok(out)
    }

    /// Single-character vocabulary "a", "b", ... used by gen-data.
    pub fn alphabet(n: usize) -> Result<Self> {
        const CHARS: &str = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";
        if n > CHARS.chars().count() {
            return Err(Error::Vocab(format!(
                "alphabet vocabulary supports at most {} tokens, requested {n}",
                CHARS.chars().count()
            )));
        }
        Self::from_tokens(CHARS.chars().take(n).map(|c| c.to_string()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_decode_round_trip() {
        let v = Vocab::alphabet(5).unwrap();
        let ids = v.encode_chars("abed").unwrap();
        assert_eq!(ids, vec![0, 1, 4, 3]);
        assert_eq!(v.decode(&ids).unwrap(), "abed");
        assert!(v.encode_chars("xyz").is_err());
        assert_eq!(v.blank_id(), 5);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        let v = Vocab::alphabet(8).unwrap();
        v.save(&path).unwrap();
        let back = Vocab::load(&path).unwrap();
        assert_eq!(back.size(), 8);
        assert_eq!(back.token(3), Some("d"));
    }

    #[test]
    fn duplicates_rejected() {
        assert!(Vocab::from_tokens(vec!["a".into(), "a".into()]).is_err());
    }
}
