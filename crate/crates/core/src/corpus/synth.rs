//! Seeded synthetic event logs with a known dependency structure.
//!
//! Each user is assigned a habit pool: a contiguous block of
//! `min(6, apps)` apps. Events arrive in hourly sessions of one to four
//! events that share one semantic chunk. How the app of a (non-noise) event
//! is chosen depends on [`Coupling`]:
//!
//! * `SemanticOnly`: `app = chunk mod apps`, the same for every user.
//! * `HistoryOnly`: a Zipf draw from the user's pool; the chunk is noise.
//! * `Joint`: `app = pool_start + (chunk mod pool_size)`. The chunk fixes the
//!   slot and the pool, which is visible through the user's previous apps,
//!   fixes the block. Neither input alone identifies the app.
//!
//! One event in ten is replaced by a uniformly random app.

use std::str::FromStr;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Event;
use crate::error::{Error, Result};
use crate::numerics::seeded_rng;

const POOL_SIZE: usize = 6;
const NOISE_RATE: f64 = 0.1;
const MAX_SESSION_EVENTS: usize = 4;
const EPOCH_BASE: i64 = 1_600_000_000;
const HOUR: i64 = 3600;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coupling {
    SemanticOnly,
    HistoryOnly,
    Joint,
}

impl FromStr for Coupling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "semantic_only" => Ok(Coupling::SemanticOnly),
            "history_only" => Ok(Coupling::HistoryOnly),
            "joint" => Ok(Coupling::Joint),
            other => Err(Error::invalid(format!("unknown coupling {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub users: usize,
    pub apps: usize,
    pub chunks: usize,
    pub events_per_user: usize,
    pub coupling: Coupling,
}

pub fn synthesize(cfg: &SynthConfig) -> Result<Vec<Event>> {
    if cfg.users == 0 || cfg.apps == 0 || cfg.chunks == 0 || cfg.events_per_user == 0 {
        return Err(Error::invalid(
            "users, apps, chunks and events_per_user must all be at least 1",
        ));
    }
    let mut rng = seeded_rng(cfg.seed);
    let pool_size = POOL_SIZE.min(cfg.apps);
    let pools = cfg.apps / pool_size;
    let zipf = WeightedIndex::new((0..pool_size).map(|r| 1.0 / (r + 1) as f64)).expect("positive weights");
    let width = cfg.users.to_string().len();

    let mut events = Vec::with_capacity(cfg.users * cfg.events_per_user);
    for u in 0..cfg.users {
        let user = format!("u{u:0width$}");
        let pool_start = rng.gen_range(0..pools) * pool_size;
        let mut hour = 0i64;
        let mut emitted = 0;
        let origin = EPOCH_BASE + u as i64 * 97;

        while emitted < cfg.events_per_user {
            let session = rng.gen_range(1..=MAX_SESSION_EVENTS).min(cfg.events_per_user - emitted);
            let chunk = rng.gen_range(0..cfg.chunks);
            let mut offsets: Vec<i64> = (0..session).map(|_| rng.gen_range(0..HOUR)).collect();
            offsets.sort_unstable();
            // The first event of a user anchors window alignment.
            if emitted == 0 {
                offsets[0] = 0;
            }

            for off in offsets {
                let app = if rng.gen_bool(NOISE_RATE) {
                    rng.gen_range(0..cfg.apps)
                } else {
                    match cfg.coupling {
                        Coupling::SemanticOnly => chunk % cfg.apps,
                        Coupling::HistoryOnly => pool_start + zipf.sample(&mut rng),
                        Coupling::Joint => pool_start + chunk % pool_size,
                    }
                };
                events.push(Event {
                    user_id: user.clone(),
                    timestamp: origin + hour * HOUR + off,
                    app: format!("app{app}"),
                    semantic_chunks: vec![format!("c{chunk}")],
                });
            }
            emitted += session;
            hour += 1;
            while rng.gen_bool(0.25) {
                hour += 1;
            }
        }
    }
    Ok(events)
}
