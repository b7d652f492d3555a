use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Event;
use crate::error::{Error, Result};

const DEFAULT_STOPWORDS: &str = include_str!("../../data/stopwords_en.txt");

/// English function words shipped with the crate.
pub fn default_stopwords() -> BTreeSet<String> {
    parse_stopwords(DEFAULT_STOPWORDS)
}

/// One token per line, UTF-8. Blank lines are ignored; tokens are lowercased.
pub fn load_stopwords(path: &Path) -> Result<BTreeSet<String>> {
    if !path.exists() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    Ok(parse_stopwords(&std::fs::read_to_string(path)?))
}

fn parse_stopwords(text: &str) -> BTreeSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterConfig {
    /// Apps with fewer global uses are dropped.
    pub min_app_count: usize,
    /// Users with fewer surviving events are dropped.
    pub min_user_records: usize,
    /// Matched case-insensitively against semantic chunks.
    pub stopwords: BTreeSet<String>,
}

impl FilterConfig {
    /// No filtering at all.
    pub fn none() -> Self {
        FilterConfig {
            min_app_count: 0,
            min_user_records: 0,
            stopwords: BTreeSet::new(),
        }
    }
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            min_app_count: 10,
            min_user_records: 5,
            stopwords: default_stopwords(),
        }
    }
}

/// Rare-app filter, then sparse-user filter, then stopword removal.
///
/// Dropping a user can push an app back under `min_app_count`, so the first
/// two filters are repeated in order until neither removes anything. The
/// result is a fixed point: filtering it again changes nothing.
pub fn apply_filters(events: Vec<Event>, cfg: &FilterConfig) -> Result<Vec<Event>> {
    let mut events = events;
    loop {
        let before = events.len();
        events = drop_rare_apps(events, cfg.min_app_count);
        events = drop_sparse_users(events, cfg.min_user_records);
        if events.len() == before {
            break;
        }
    }

    if !cfg.stopwords.is_empty() {
        let stop: HashSet<&str> = cfg.stopwords.iter().map(String::as_str).collect();
        for e in &mut events {
            e.semantic_chunks
                .retain(|t| !stop.contains(t.as_str()) && !stop.contains(t.to_lowercase().as_str()));
        }
    }

    if events.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(events)
}

fn drop_rare_apps(events: Vec<Event>, min: usize) -> Vec<Event> {
    if min == 0 {
        return events;
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for e in &events {
        *counts.entry(e.app.as_str()).or_default() += 1;
    }
    let keep: HashSet<String> = counts
        .into_iter()
        .filter(|&(_, c)| c >= min)
        .map(|(a, _)| a.to_owned())
        .collect();
    events.into_iter().filter(|e| keep.contains(&e.app)).collect()
}

fn drop_sparse_users(events: Vec<Event>, min: usize) -> Vec<Event> {
    if min == 0 {
        return events;
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for e in &events {
        *counts.entry(e.user_id.as_str()).or_default() += 1;
    }
    let keep: HashSet<String> = counts
        .into_iter()
        .filter(|&(_, c)| c >= min)
        .map(|(u, _)| u.to_owned())
        .collect();
    events.into_iter().filter(|e| keep.contains(&e.user_id)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ev(user: &str, ts: i64, app: &str, sem: &[&str]) -> Event {
        Event::new(user, ts, app, sem.iter().copied())
    }

    #[test]
    fn rare_app_removed() {
        let mut events: Vec<Event> = (0..9).map(|i| ev("u", i, "x", &[])).collect();
        events.extend((0..10).map(|i| ev("u", 100 + i, "y", &[])));
        let cfg = FilterConfig {
            min_app_count: 10,
            ..FilterConfig::none()
        };
        let out = apply_filters(events, &cfg).unwrap();
        assert_eq!(out.len(), 10);
        assert!(out.iter().all(|e| e.app == "y"));
    }

    #[test]
    fn identity_when_disabled() {
        let events = vec![ev("u", 1, "a", &["the", "go"]), ev("v", 2, "b", &[])];
        assert_eq!(apply_filters(events.clone(), &FilterConfig::none()).unwrap(), events);
    }

    #[test]
    fn sparse_user_removed_after_app_filter() {
        // u has 6 events but 2 use an app that is globally rare.
        let mut events: Vec<Event> = (0..4).map(|i| ev("u", i, "common", &[])).collect();
        events.push(ev("u", 10, "rare", &[]));
        events.push(ev("u", 11, "rare", &[]));
        events.extend((0..8).map(|i| ev("v", i, "common", &[])));
        let cfg = FilterConfig {
            min_app_count: 3,
            min_user_records: 5,
            stopwords: BTreeSet::new(),
        };
        let out = apply_filters(events, &cfg).unwrap();
        assert!(out.iter().all(|e| e.user_id == "v"));
        assert_eq!(out.len(), 8);
    }

    #[test]
    fn stopwords_leave_event_in_place() {
        let events = vec![ev("u", 1, "a", &["Travel", "FROM", "the", "work"])];
        let out = apply_filters(
            events,
            &FilterConfig {
                stopwords: default_stopwords(),
                ..FilterConfig::none()
            },
        )
        .unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].semantic_chunks, vec!["Travel", "work"]);
    }

    #[test]
    fn everything_filtered_is_empty_corpus() {
        let events: Vec<Event> = (0..9).map(|i| ev("u", i, "x", &[])).collect();
        let cfg = FilterConfig {
            min_app_count: 10,
            ..FilterConfig::none()
        };
        assert!(matches!(apply_filters(events, &cfg), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn cascade_reaches_fixed_point() {
        // Dropping user w (too few events) takes app b below the threshold,
        // which then leaves user v too sparse.
        let mut events = vec![];
        events.extend((0..2).map(|i| ev("w", i, "b", &[])));
        events.extend((0..2).map(|i| ev("v", i, "b", &[])));
        events.extend((0..2).map(|i| ev("v", 10 + i, "a", &[])));
        events.extend((0..5).map(|i| ev("u", i, "a", &[])));
        let cfg = FilterConfig {
            min_app_count: 3,
            min_user_records: 3,
            stopwords: BTreeSet::new(),
        };
        let once = apply_filters(events, &cfg).unwrap();
        assert!(once.iter().all(|e| e.user_id == "u"));
        assert_eq!(apply_filters(once.clone(), &cfg).unwrap(), once);
    }

    #[test]
    fn stopword_file_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("stop.txt");
        std::fs::write(&p, "The\n\n  and \n").unwrap();
        let s = load_stopwords(&p).unwrap();
        assert_eq!(s.into_iter().collect::<Vec<_>>(), vec!["and", "the"]);
        assert!(default_stopwords().contains("the"));
    }

    proptest! {
        #[test]
        fn filtering_is_idempotent(
            raw in proptest::collection::vec((0u8..6, 0u8..8, proptest::collection::vec(0u8..4, 0..3)), 1..80),
            min_app in 0usize..6,
            min_user in 0usize..6,
        ) {
            let words = ["the", "go", "home", "and"];
            let events: Vec<Event> = raw.iter().enumerate().map(|(i, (u, a, s))| {
                ev(&format!("u{u}"), i as i64, &format!("a{a}"), &s.iter().map(|&w| words[w as usize]).collect::<Vec<_>>())
            }).collect();
            let cfg = FilterConfig {
                min_app_count: min_app,
                min_user_records: min_user,
                stopwords: ["the", "and"].iter().map(|s| s.to_string()).collect(),
            };
            if let Ok(once) = apply_filters(events, &cfg) {
                prop_assert_eq!(apply_filters(once.clone(), &cfg).unwrap(), once);
            }
        }
    }
}
