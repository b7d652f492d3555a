use std::collections::HashMap;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::Event;
use crate::error::{Error, Result};

/// Token stored at id 0 of a vocabulary with an out-of-vocabulary sentinel.
pub const OOV_TOKEN: &str = "<oov>";

/// Dense bidirectional token/id map. Ids are assigned in insertion order.
#[derive(Clone, Debug, Default)]
pub struct Vocabulary {
    id_to_token: Vec<String>,
    token_to_id: HashMap<String, usize>,
    oov_sentinel: bool,
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    /// A vocabulary whose id 0 is reserved for unknown tokens.
    pub fn with_oov_sentinel() -> Self {
        let mut v = Vocabulary {
            oov_sentinel: true,
            ..Self::default()
        };
        v.insert(OOV_TOKEN);
        v
    }

    pub fn from_tokens(tokens: impl IntoIterator<Item = impl Into<String>>, oov_sentinel: bool) -> Result<Self> {
        let mut v = Vocabulary {
            oov_sentinel,
            ..Self::default()
        };
        for t in tokens {
            let t = t.into();
            if v.token_to_id.contains_key(&t) {
                return Err(Error::invalid(format!("duplicate vocabulary token {t:?}")));
            }
            v.insert(t);
        }
        if oov_sentinel && v.id_to_token.first().map(String::as_str) != Some(OOV_TOKEN) {
            return Err(Error::invalid("sentinel vocabulary must start with the OOV token"));
        }
        Ok(v)
    }

    /// Returns the id of `token`, assigning the next id if it is new.
    pub fn insert(&mut self, token: impl Into<String>) -> usize {
        let token = token.into();
        if let Some(&id) = self.token_to_id.get(&token) {
            return id;
        }
        let id = self.id_to_token.len();
        self.token_to_id.insert(token.clone(), id);
        self.id_to_token.push(token);
        id
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(String::as_str)
    }

    /// Strict lookup; unknown tokens are an error.
    pub fn encode(&self, token: &str) -> Result<usize> {
        self.id(token).ok_or_else(|| Error::UnknownToken(token.to_owned()))
    }

    /// Lookup that maps unknown tokens to the sentinel (id 0).
    ///
    /// On a vocabulary without a sentinel this behaves like [`encode`](Self::encode).
    pub fn encode_or_oov(&self, token: &str) -> Result<usize> {
        match self.id(token) {
            Some(id) => Ok(id),
            None if self.oov_sentinel => Ok(0),
            None => Err(Error::UnknownToken(token.to_owned())),
        }
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn has_oov_sentinel(&self) -> bool {
        self.oov_sentinel
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.oov_sentinel == other.oov_sentinel && self.id_to_token == other.id_to_token
    }
}

impl Eq for Vocabulary {}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    oov_sentinel: bool,
    tokens: Vec<String>,
}

impl Serialize for Vocabulary {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        VocabRepr {
            oov_sentinel: self.oov_sentinel,
            tokens: self.id_to_token.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vocabulary {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = VocabRepr::deserialize(d)?;
        Vocabulary::from_tokens(repr.tokens, repr.oov_sentinel).map_err(serde::de::Error::custom)
    }
}

/// App and semantic-chunk vocabularies, ids by first occurrence in stream
/// order. The semantic vocabulary reserves id 0 for unknown chunks.
pub fn build_vocabularies(events: &[Event]) -> Result<(Vocabulary, Vocabulary)> {
    if events.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut apps = Vocabulary::new();
    let mut chunks = Vocabulary::with_oov_sentinel();
    for e in events {
        apps.insert(e.app.as_str());
        for c in &e.semantic_chunks {
            chunks.insert(c.as_str());
        }
    }
    Ok((apps, chunks))
}
