use std::collections::HashMap;

use crate::util::sha256_bytes;

use super::ExportError;

pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const MASK: &str = "[MASK]";
pub const UNK: &str = "[UNK]";
pub const PAD: &str = "[PAD]";

/// WordPiece vocabulary: one token per line, line number = id.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
    pub cls: u32,
    pub sep: u32,
    pub mask: u32,
    pub unk: u32,
    pub pad: u32,
    /// Ids eligible as random MLM replacements (everything but the specials).
    replaceable: Vec<u32>,
    digest: String,
}

impl Vocabulary {
    pub fn from_tokens<S: Into<String>>(tokens: impl IntoIterator<Item = S>) -> Result<Self, ExportError> {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() {
                return Err(ExportError::Vocabulary(format!("empty token on line {}", i + 1)));
            }
            let id = u32::try_from(i).map_err(|_| ExportError::Vocabulary("vocabulary too large".into()))?;
            if ids.insert(t.clone(), id).is_some() {
                return Err(ExportError::Vocabulary(format!("duplicate token {t:?} on line {}", i + 1)));
            }
        }
        let missing: Vec<&str> = [CLS, SEP, MASK, UNK, PAD]
            .into_iter()
            .filter(|s| !ids.contains_key(*s))
            .collect();
        if !missing.is_empty() {
            return Err(ExportError::Vocabulary(format!(
                "missing special tokens: {}",
                missing.join(", ")
            )));
        }
        let get = |s: &str| ids[s];
        let (cls, sep, mask, unk, pad) = (get(CLS), get(SEP), get(MASK), get(UNK), get(PAD));
        let specials = [cls, sep, mask, unk, pad];
        let replaceable: Vec<u32> = (0..tokens.len() as u32).filter(|i| !specials.contains(i)).collect();
        if replaceable.is_empty() {
            return Err(ExportError::Vocabulary("vocabulary has no ordinary tokens".into()));
        }
        let mut joined = tokens.join("\n");
        joined.push('\n');
        let digest = sha256_bytes(joined.as_bytes());
        Ok(Self {
            tokens,
            ids,
            cls,
            sep,
            mask,
            unk,
            pad,
            replaceable,
            digest,
        })
    }

    pub fn parse(text: &str) -> Result<Self, ExportError> {
        Self::from_tokens(text.lines().map(|l| l.trim_end_matches('\r')))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn is_special(&self, id: u32) -> bool {
        id == self.cls || id == self.sep || id == self.mask || id == self.unk || id == self.pad
    }

    /// Positions that never get masked: sequence markers and padding.
    pub fn is_structural(&self, id: u32) -> bool {
        id == self.cls || id == self.sep || id == self.pad
    }

    pub fn replaceable_ids(&self) -> &[u32] {
        &self.replaceable
    }

    /// SHA-256 of the token list (newline-joined), recorded in export sidecars.
    pub fn digest(&self) -> &str {
        &self.digest
    }
}
