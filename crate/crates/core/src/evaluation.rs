//! Ranking metrics, baselines, and report rendering.
//!
//! For one instance with ranked predictions `p_1..p_k` and target set `T`,
//! the reciprocal rank is `1/f` where `f` is the first position with
//! `p_f ∈ T` (0 on a miss), and the hit flag is 1 when any `p_i ∈ T`.
//! MRR@k and HR@k are their means over all scored instances.

use std::collections::HashSet;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{Vocabulary, WindowInstance};
use crate::error::{Error, Result};
use crate::model::{predict_topk, Model};
use crate::numerics::seeded_rng;

/// `1/f` for the first predicted id (within the first `k`) that is in the
/// target set; 0 if none is.
pub fn reciprocal_rank(predicted: &[usize], target_ids: &[usize], k: usize) -> f64 {
    predicted
        .iter()
        .take(k)
        .position(|p| target_ids.contains(p))
        .map_or(0.0, |i| 1.0 / (i + 1) as f64)
}

pub fn hit(predicted: &[usize], target_ids: &[usize], k: usize) -> bool {
    predicted.iter().take(k).any(|p| target_ids.contains(p))
}

/// Anything that can produce a ranked list of app ids for an instance.
pub trait Ranker {
    fn name(&self) -> String;

    /// At most `k` distinct app ids, best first. `index` is the instance's
    /// position in the evaluated sequence.
    fn rank(&self, index: usize, inst: &WindowInstance, k: usize) -> Result<Vec<usize>>;
}

impl Ranker for Model {
    fn name(&self) -> String {
        self.config.variant.display_name().to_owned()
    }

    fn rank(&self, _index: usize, inst: &WindowInstance, k: usize) -> Result<Vec<usize>> {
        let probs = self.forward(&inst.semantic_ids, &inst.history_ids)?;
        predict_topk(&probs, k.min(probs.len()))
    }
}

/// Most recently used: the `k` latest distinct apps of the history.
#[derive(Clone, Copy, Debug, Default)]
pub struct Mru;

/// The `k` most recent distinct ids of `history_ids` (oldest first in the
/// input), most recent first. Never padded.
pub fn mru_baseline(history_ids: &[usize], k: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(k);
    for &id in history_ids.iter().rev() {
        if out.len() == k {
            break;
        }
        if !out.contains(&id) {
            out.push(id);
        }
    }
    out
}

impl Ranker for Mru {
    fn name(&self) -> String {
        "MRU".to_owned()
    }

    fn rank(&self, _index: usize, inst: &WindowInstance, k: usize) -> Result<Vec<usize>> {
        Ok(mru_baseline(&inst.history_ids, k))
    }
}

/// A uniformly random permutation of all apps per instance, seeded by
/// `(seed, index)`. Serves as a floor for the other rankers.
#[derive(Clone, Copy, Debug)]
pub struct RandomRanker {
    pub seed: u64,
    pub app_count: usize,
}

impl Ranker for RandomRanker {
    fn name(&self) -> String {
        "Random".to_owned()
    }

    fn rank(&self, index: usize, _inst: &WindowInstance, k: usize) -> Result<Vec<usize>> {
        let mut ids: Vec<usize> = (0..self.app_count).collect();
        let mut rng = seeded_rng(self.seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        ids.shuffle(&mut rng);
        ids.truncate(k);
        Ok(ids)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceScore {
    /// Position in the evaluated sequence.
    pub index: usize,
    pub reciprocal_rank: f64,
    pub hit: bool,
    pub predicted: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mrr_at_k: f64,
    pub hr_at_k: f64,
    pub k: usize,
    /// Number of scored instances.
    pub instance_count: usize,
    pub per_instance: Vec<InstanceScore>,
    /// Instances whose target set had no app known to the ranker.
    pub skipped_oov: usize,
}

/// Scores every instance with a non-empty target set, in input order.
pub fn evaluate<R: Ranker + ?Sized>(ranker: &R, instances: &[WindowInstance], k: usize) -> Result<EvalReport> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let mut per_instance = Vec::with_capacity(instances.len());
    let mut skipped = 0;
    for (index, inst) in instances.iter().enumerate() {
        if inst.target_ids.is_empty() {
            skipped += 1;
            continue;
        }
        let predicted = ranker.rank(index, inst, k)?;
        per_instance.push(InstanceScore {
            index,
            reciprocal_rank: reciprocal_rank(&predicted, &inst.target_ids, k),
            hit: hit(&predicted, &inst.target_ids, k),
            predicted,
        });
    }
    if per_instance.is_empty() {
        return Err(Error::AllInstancesSkipped(skipped));
    }
    let n = per_instance.len() as f64;
    let mrr = per_instance.iter().map(|s| s.reciprocal_rank).sum::<f64>() / n;
    let hr = per_instance.iter().filter(|s| s.hit).count() as f64 / n;
    Ok(EvalReport {
        mrr_at_k: mrr,
        hr_at_k: hr,
        k,
        instance_count: per_instance.len(),
        per_instance,
        skipped_oov: skipped,
    })
}

/// Re-encodes instances from one pair of vocabularies into another.
///
/// Unknown semantic chunks become the sentinel. Unknown history apps are
/// dropped from the history and unknown target apps from the target set; an
/// instance whose targets are all unknown keeps an empty target set, which
/// [`evaluate`] counts as skipped.
pub fn align_instances(
    instances: &[WindowInstance],
    from_apps: &Vocabulary,
    from_chunks: &Vocabulary,
    to_apps: &Vocabulary,
    to_chunks: &Vocabulary,
) -> Result<Vec<WindowInstance>> {
    if from_apps == to_apps && from_chunks == to_chunks {
        return Ok(instances.to_vec());
    }
    let app = |id: usize| from_apps.token(id).and_then(|t| to_apps.id(t));
    let mut dropped = 0usize;
    let out = instances
        .iter()
        .map(|inst| {
            let semantic_ids = inst
                .semantic_ids
                .iter()
                .map(|&id| match from_chunks.token(id) {
                    Some(t) => to_chunks.encode_or_oov(t),
                    None => Err(Error::IndexOutOfRange {
                        index: id,
                        len: from_chunks.len(),
                    }),
                })
                .collect::<Result<_>>()?;
            let history_ids: Vec<usize> = inst.history_ids.iter().filter_map(|&id| app(id)).collect();
            let mut target_ids: Vec<usize> = inst.target_ids.iter().filter_map(|&id| app(id)).collect();
            dropped += inst.history_ids.len() - history_ids.len();
            target_ids.sort_unstable();
            target_ids.dedup();
            Ok(WindowInstance {
                semantic_ids,
                history_ids,
                target_ids,
                ..inst.clone()
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if dropped > 0 {
        log::warn!("dropped {dropped} out-of-vocabulary history apps");
    }
    Ok(out)
}

/// One row of a comparison table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedReport {
    pub model: String,
    pub report: EvalReport,
}

/// Plain-text comparison table: one row per model, `M@k` and `H@k` columns.
pub fn render_table(rows: &[NamedReport]) -> String {
    let k = rows.first().map_or(5, |r| r.report.k);
    let width = rows.iter().map(|r| r.model.len()).chain([12]).max().unwrap_or(12);
    let mut out = String::new();
    let (m, h) = (format!("M@{k}"), format!("H@{k}"));
    let _ = writeln!(out, "{:<width$}  {:>8}  {:>8}", "Model/Metric", m, h);
    let _ = writeln!(out, "{}", "-".repeat(width + 20));
    for r in rows {
        let _ = writeln!(
            out,
            "{:<width$}  {:>8.4}  {:>8.4}",
            r.model, r.report.mrr_at_k, r.report.hr_at_k
        );
    }
    out
}

/// Distinct ids, useful for asserting ranker contracts.
pub fn is_distinct(ids: &[usize]) -> bool {
    ids.iter().collect::<HashSet<_>>().len() == ids.len()
}
