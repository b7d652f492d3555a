//! Event logs in, windowed train/validation/test instances out.
//!
//! The pipeline is `ingest → apply_filters → build_vocabularies → windowize →
//! chronological_split`. Every stage is a pure function of its inputs.

mod filter;
mod ingest;
mod split;
mod synth;
mod vocab;
mod window;

use serde::{Deserialize, Serialize};

pub use filter::{apply_filters, default_stopwords, load_stopwords, FilterConfig};
pub use ingest::{ingest, Ingested, InputFormat, MALFORMED_LINE_LIMIT};
pub use split::{chronological_split, SplitCorpus, SplitRatios};
pub use synth::{synthesize, Coupling, SynthConfig};
pub use vocab::{build_vocabularies, Vocabulary, OOV_TOKEN};
pub use window::{windowize, WindowConfig, WindowInstance};

/// One timestamped app launch, with whatever semantic tokens came with it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub user_id: String,
    /// Seconds since the Unix epoch, UTC. Never negative.
    pub timestamp: i64,
    pub app: String,
    pub semantic_chunks: Vec<String>,
}

impl Event {
    pub fn new(
        user_id: impl Into<String>,
        timestamp: i64,
        app: impl Into<String>,
        semantic_chunks: impl IntoIterator<Item = impl Into<String>>,
    ) -> Self {
        Event {
            user_id: user_id.into(),
            timestamp,
            app: app.into(),
            semantic_chunks: semantic_chunks.into_iter().map(Into::into).collect(),
        }
    }
}

/// Stable sort by `(user_id, timestamp)`; ties keep input order.
pub fn sort_events(events: &mut [Event]) {
    events.sort_by(|a, b| a.user_id.cmp(&b.user_id).then(a.timestamp.cmp(&b.timestamp)));
}
