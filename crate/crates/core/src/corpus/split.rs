use serde::{Deserialize, Serialize};

use super::{Vocabulary, WindowInstance};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.7,
            validation: 0.1,
            test: 0.2,
        }
    }
}

impl SplitRatios {
    fn validate(&self) -> Result<()> {
        let parts = [self.train, self.validation, self.test];
        if parts.iter().any(|r| !r.is_finite() || *r < 0.0) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "split ratios must be non-negative and sum to 1, got {parts:?}"
            )));
        }
        Ok(())
    }

    /// `(train, validation, test)` counts for `count` instances.
    pub fn counts(&self, count: usize) -> (usize, usize, usize) {
        // The slack absorbs representation error such as 0.7 * 10 < 7.
        let floor = |r: f64| ((r * count as f64) + 1e-9).floor() as usize;
        let train = floor(self.train).min(count);
        let validation = floor(self.validation).min(count - train);
        (train, validation, count - train - validation)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitCorpus {
    pub train: Vec<WindowInstance>,
    pub validation: Vec<WindowInstance>,
    pub test: Vec<WindowInstance>,
    pub app_vocab: Vocabulary,
    pub semantic_vocab: Vocabulary,
}

/// Per-user chronological split: the earliest `floor(train * c)` windows to
/// train, the next `floor(validation * c)` to validation, the rest to test.
///
/// Users keep their order of first appearance in `instances`.
pub fn chronological_split(
    instances: Vec<WindowInstance>,
    ratios: SplitRatios,
    app_vocab: Vocabulary,
    semantic_vocab: Vocabulary,
) -> Result<SplitCorpus> {
    ratios.validate()?;

    let mut users: Vec<(String, Vec<WindowInstance>)> = Vec::new();
    let mut slot: std::collections::HashMap<String, usize> = Default::default();
    for inst in instances {
        let idx = *slot.entry(inst.user_id.clone()).or_insert_with(|| {
            users.push((inst.user_id.clone(), Vec::new()));
            users.len() - 1
        });
        users[idx].1.push(inst);
    }

    let mut split = SplitCorpus {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
        app_vocab,
        semantic_vocab,
    };
    for (_, mut list) in users {
        list.sort_by_key(|i| i.window_start);
        let (n_train, n_val, _) = ratios.counts(list.len());
        let mut rest = list.split_off(n_train);
        let test = rest.split_off(n_val);
        split.train.extend(list);
        split.validation.extend(rest);
        split.test.extend(test);
    }
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn inst(user: &str, start: i64) -> WindowInstance {
        WindowInstance {
            user_id: user.into(),
            window_start: start,
            window_end: start + 1,
            semantic_ids: vec![],
            history_ids: vec![],
            target_ids: vec![0],
        }
    }

    fn split_user(count: usize) -> (usize, usize, usize) {
        let instances = (0..count).rev().map(|i| inst("u", i as i64)).collect();
        let s = chronological_split(instances, SplitRatios::default(), Vocabulary::new(), Vocabulary::new()).unwrap();
        (s.train.len(), s.validation.len(), s.test.len())
    }

    #[test]
    fn floor_rule_examples() {
        assert_eq!(split_user(10), (7, 1, 2));
        assert_eq!(split_user(1), (0, 0, 1));
        assert_eq!(split_user(20), (14, 2, 4));
        assert_eq!(split_user(3), (2, 0, 1));
    }

    #[test]
    fn ratios_must_sum_to_one() {
        let bad = SplitRatios {
            train: 0.5,
            validation: 0.1,
            test: 0.1,
        };
        assert!(chronological_split(vec![], bad, Vocabulary::new(), Vocabulary::new()).is_err());
    }

    proptest! {
        #[test]
        fn per_user_monotone_and_exact_counts(
            raw in proptest::collection::vec((0u8..5, 0i64..1000), 1..200)
        ) {
            let mut seen = std::collections::HashSet::new();
            let instances: Vec<WindowInstance> = raw
                .into_iter()
                .filter(|k| seen.insert(*k))
                .map(|(u, t)| inst(&format!("u{u}"), t))
                .collect();
            let s = chronological_split(instances.clone(), SplitRatios::default(), Vocabulary::new(), Vocabulary::new()).unwrap();
            for u in 0..5 {
                let name = format!("u{u}");
                let c = instances.iter().filter(|i| i.user_id == name).count();
                let pick = |v: &[WindowInstance]| v.iter().filter(|i| i.user_id == name).map(|i| i.window_start).collect::<Vec<_>>();
                let (tr, va, te) = (pick(&s.train), pick(&s.validation), pick(&s.test));
                prop_assert_eq!((tr.len(), va.len(), te.len()), (c * 7 / 10, c / 10, c - c * 7 / 10 - c / 10));
                if let (Some(a), Some(b)) = (tr.iter().max(), va.iter().chain(&te).min()) {
                    prop_assert!(a <= b);
                }
                if let (Some(a), Some(b)) = (va.iter().max(), te.iter().min()) {
                    prop_assert!(a <= b);
                }
            }
        }
    }
}
