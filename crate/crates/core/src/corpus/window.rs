use serde::{Deserialize, Serialize};

use super::{Event, Vocabulary};
use crate::error::{Error, Result};

/// One prediction example: what the user was doing in a window, which apps
/// they used just before it, and which apps they used inside it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowInstance {
    pub user_id: String,
    /// Inclusive.
    pub window_start: i64,
    /// Exclusive.
    pub window_end: i64,
    /// Semantic chunk ids of every event in the window, in event order.
    /// Unknown chunks are 0.
    pub semantic_ids: Vec<usize>,
    /// Most recent app ids before `window_start`, oldest first.
    pub history_ids: Vec<usize>,
    /// Distinct app ids used in the window, ascending.
    pub target_ids: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowConfig {
    pub window_seconds: i64,
    pub history_len: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            window_seconds: 3600,
            history_len: 8,
        }
    }
}

/// Cuts each user's timeline into fixed windows aligned to that user's
/// first event and emits one instance per non-empty window.
///
/// Events must already be sorted by `(user_id, timestamp)`; apps must be in
/// `apps`.
pub fn windowize(
    events: &[Event],
    apps: &Vocabulary,
    chunks: &Vocabulary,
    cfg: WindowConfig,
) -> Result<Vec<WindowInstance>> {
    if cfg.window_seconds <= 0 {
        return Err(Error::invalid("window_seconds must be positive"));
    }
    if cfg.history_len == 0 {
        return Err(Error::invalid("history_len must be at least 1"));
    }
    if events
        .windows(2)
        .any(|w| (&w[0].user_id, w[0].timestamp) > (&w[1].user_id, w[1].timestamp))
    {
        return Err(Error::invalid("events must be sorted by (user, timestamp)"));
    }

    let mut out = Vec::new();
    for user_events in events.chunk_by(|a, b| a.user_id == b.user_id) {
        let origin = user_events[0].timestamp;
        let mut app_trail: Vec<usize> = Vec::with_capacity(user_events.len());

        for window in user_events
            .chunk_by(|a, b| (a.timestamp - origin) / cfg.window_seconds == (b.timestamp - origin) / cfg.window_seconds)
        {
            let slot = (window[0].timestamp - origin) / cfg.window_seconds;
            let window_start = origin + slot * cfg.window_seconds;

            let mut semantic_ids = Vec::new();
            let mut target_ids = Vec::with_capacity(window.len());
            for e in window {
                for c in &e.semantic_chunks {
                    semantic_ids.push(chunks.encode_or_oov(c)?);
                }
                target_ids.push(apps.encode(&e.app)?);
            }
            let first_new = app_trail.len();
            app_trail.extend_from_slice(&target_ids);
            target_ids.sort_unstable();
            target_ids.dedup();

            let from = first_new.saturating_sub(cfg.history_len);
            out.push(WindowInstance {
                user_id: window[0].user_id.clone(),
                window_start,
                window_end: window_start + cfg.window_seconds,
                semantic_ids,
                history_ids: app_trail[from..first_new].to_vec(),
                target_ids,
            });
        }
    }
    Ok(out)
}
