//! Mini-batch Adam with global-norm clipping and early stopping on
//! validation MRR.

mod checkpoint;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load, save, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use crate::corpus::{SplitCorpus, WindowInstance};
use crate::error::{Error, Result};
use crate::evaluation::evaluate;
use crate::model::{Model, ModelConfig};
use crate::numerics::{seeded_rng, ParamSet};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Ranking cutoff for the validation MRR.
    pub k: usize,
    /// Global gradient-norm ceiling applied before every update.
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 100,
            patience: 10,
            seed: 0,
            k: 5,
            clip_norm: 5.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 || self.k == 0 {
            return Err(Error::invalid(
                "batch_size, max_epochs, patience and k must be at least 1",
            ));
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return Err(Error::invalid("clip_norm must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mrr: f64,
}

/// Adam with the usual constants.
#[derive(Clone, Debug)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn step<P: ParamSet + ?Sized>(&mut self, params: &mut P) {
        let mut ps = params.params_mut();
        if self.first.is_empty() {
            self.first = ps.iter().map(|p| vec![0.0; p.len()]).collect();
            self.second = self.first.clone();
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, p) in ps.iter_mut().enumerate() {
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            let crate::numerics::Param { value, grad } = &mut **p;
            for (j, (w, &g)) in value.as_mut_slice().iter_mut().zip(grad.as_slice()).enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                *w -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }
}

/// Scales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<P: ParamSet + ?Sized>(params: &mut P, max_norm: f64) -> f64 {
    let norm = params.grad_norm();
    if norm > max_norm {
        let s = max_norm / norm;
        for p in params.params_mut() {
            p.grad.as_mut_slice().iter_mut().for_each(|g| *g *= s);
        }
    }
    norm
}

/// Patience-based early stopping on a score where larger is better.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    stale: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StopDecision {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
            stale: 0,
        }
    }

    /// Records an epoch's score. Only a strict improvement resets patience.
    pub fn observe(&mut self, epoch: usize, score: f64) -> StopDecision {
        let improved = self.best.is_none_or(|(_, b)| score > b);
        if improved {
            self.best = Some((epoch, score));
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        StopDecision {
            improved,
            stop: self.stale >= self.patience,
        }
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

/// Runs one pass over `train` in the given order; returns the mean loss.
fn run_epoch(
    model: &mut Model,
    adam: &mut Adam,
    train: &[WindowInstance],
    order: &[usize],
    cfg: &TrainConfig,
) -> Result<f64> {
    let mut total = 0.0;
    for batch in order.chunks(cfg.batch_size) {
        model.params.zero_grad();
        let scale = 1.0 / batch.len() as f64;
        for &i in batch {
            total += model.accumulate_gradients(&train[i], scale)?;
        }
        clip_grad_norm(&mut model.params, cfg.clip_norm);
        adam.step(&mut model.params);
    }
    Ok(total / train.len() as f64)
}

/// Trains a fresh model and returns the checkpoint of the best validation
/// epoch. `on_epoch` sees every epoch record as it is produced.
pub fn train_with<F: FnMut(&EpochRecord)>(
    split: &SplitCorpus,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    mut on_epoch: F,
) -> Result<Checkpoint> {
    train_cfg.validate()?;
    if split.train.is_empty() {
        return Err(Error::EmptyTrainSet);
    }
    if model_cfg.app_count != split.app_vocab.len() || model_cfg.chunk_count != split.semantic_vocab.len() {
        return Err(Error::shape(
            format!("{} apps / {} chunks", split.app_vocab.len(), split.semantic_vocab.len()),
            format!("{} apps / {} chunks", model_cfg.app_count, model_cfg.chunk_count),
        ));
    }
    let selection: &[WindowInstance] = if split.validation.is_empty() {
        log::warn!("validation split is empty; selecting epochs on training MRR");
        &split.train
    } else {
        &split.validation
    };

    let mut model = Model::new(model_cfg)?;
    let mut adam = Adam::new(train_cfg.learning_rate);
    let mut rng = seeded_rng(train_cfg.seed);
    let mut order: Vec<usize> = (0..split.train.len()).collect();
    let mut stopper = EarlyStopping::new(train_cfg.patience);
    let mut best_params = model.params.clone();
    let mut history = Vec::new();

    for epoch in 1..=train_cfg.max_epochs {
        order.shuffle(&mut rng);
        let train_loss = run_epoch(&mut model, &mut adam, &split.train, &order, &train_cfg)?;
        if !train_loss.is_finite() || !model.params.params().iter().all(|p| p.value.is_finite()) {
            return Err(Error::Divergence {
                epoch,
                detail: format!("train loss {train_loss}"),
            });
        }
        let val_mrr = evaluate(&model, selection, train_cfg.k)?.mrr_at_k;
        let record = EpochRecord {
            epoch,
            train_loss,
            val_mrr,
        };
        on_epoch(&record);
        history.push(record);

        let decision = stopper.observe(epoch, val_mrr);
        if decision.improved {
            best_params = model.params.clone();
        }
        if decision.stop {
            break;
        }
    }

    let (best_epoch, _) = stopper.best().expect("at least one epoch ran");
    model.params = best_params;
    // Gradients are not persisted; a fresh checkpoint must equal a loaded one.
    model.params.zero_grad();
    Ok(Checkpoint {
        format_version: CHECKPOINT_VERSION,
        model,
        train_config: train_cfg,
        app_vocab: split.app_vocab.clone(),
        semantic_vocab: split.semantic_vocab.clone(),
        history,
        best_epoch,
        provenance: String::new(),
    })
}

pub fn train(split: &SplitCorpus, model_cfg: ModelConfig, train_cfg: TrainConfig) -> Result<Checkpoint> {
    train_with(split, model_cfg, train_cfg, |_| {})
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Vocabulary;
    use crate::model::Variant;
    use crate::numerics::{Matrix, Param};

    #[test]
    fn early_stop_arithmetic() {
        let mut s = EarlyStopping::new(2);
        assert_eq!(
            s.observe(1, 0.5),
            StopDecision {
                improved: true,
                stop: false
            }
        );
        assert_eq!(
            s.observe(2, 0.5),
            StopDecision {
                improved: false,
                stop: false
            }
        );
        assert_eq!(
            s.observe(3, 0.5),
            StopDecision {
                improved: false,
                stop: true
            }
        );
        assert_eq!(s.best(), Some((1, 0.5)));
    }

    #[test]
    fn improvement_resets_patience() {
        let mut s = EarlyStopping::new(2);
        s.observe(1, 0.1);
        s.observe(2, 0.05);
        assert!(s.observe(3, 0.2).improved);
        assert!(!s.observe(4, 0.2).stop);
        assert!(s.observe(5, 0.1).stop);
        assert_eq!(s.best(), Some((3, 0.2)));
    }

    #[test]
    fn adam_step_descends_quadratic_bowl() {
        for lr in [1e-3, 1e-2, 0.1] {
            let start = vec![0.8, -1.5, 2.0];
            let mut ps = vec![Param::new(Matrix::from_vec(1, 3, start.clone()).unwrap())];
            let f = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
            let before = f(ps[0].value.as_slice());
            for (g, v) in ps[0].grad.as_mut_slice().iter_mut().zip(&start) {
                *g = 2.0 * v;
            }
            let mut adam = Adam::new(lr);
            adam.step(&mut ps);
            assert!(f(ps[0].value.as_slice()) < before, "lr {lr}");
        }
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut ps = vec![Param::new(Matrix::zeros(1, 2))];
        ps[0].grad = Matrix::from_vec(1, 2, vec![30.0, 40.0]).unwrap();
        assert_eq!(clip_grad_norm(&mut ps, 5.0), 50.0);
        assert!((ps.grad_norm() - 5.0).abs() < 1e-12);
        ps[0].grad = Matrix::from_vec(1, 2, vec![0.3, 0.4]).unwrap();
        clip_grad_norm(&mut ps, 5.0);
        assert_eq!(ps[0].grad.as_slice(), &[0.3, 0.4]);
    }

    fn tiny_split() -> SplitCorpus {
        let inst = |s: usize, h: usize, t: usize| WindowInstance {
            user_id: "u".into(),
            window_start: 0,
            window_end: 1,
            semantic_ids: vec![s],
            history_ids: vec![h],
            target_ids: vec![t],
        };
        let train = vec![inst(1, 0, 0), inst(2, 1, 1), inst(1, 2, 2), inst(2, 2, 0)];
        SplitCorpus {
            validation: train.clone(),
            test: vec![],
            train,
            app_vocab: Vocabulary::from_tokens(["a", "b", "c"], false).unwrap(),
            semantic_vocab: Vocabulary::from_tokens(["<oov>", "x", "y"], true).unwrap(),
        }
    }

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            embed_dim: 4,
            hidden_layers: 1,
            hidden_width: 4,
            variant: Variant::Cosem,
            app_count: 3,
            chunk_count: 3,
            seed: 1,
        }
    }

    #[test]
    fn best_epoch_contract_and_determinism() {
        let split = tiny_split();
        let cfg = TrainConfig {
            learning_rate: 0.01,
            batch_size: 2,
            max_epochs: 30,
            patience: 5,
            k: 2,
            ..TrainConfig::default()
        };
        let a = train(&split, tiny_cfg(), cfg).unwrap();
        let b = train(&split, tiny_cfg(), cfg).unwrap();
        assert_eq!(a, b);
        let best = a.history.iter().map(|r| r.val_mrr).fold(f64::MIN, f64::max);
        let first_best = a.history.iter().find(|r| r.val_mrr == best).unwrap().epoch;
        assert_eq!(a.best_epoch, first_best);
        let recomputed = evaluate(&a.model, &split.validation, 2).unwrap().mrr_at_k;
        assert_eq!(recomputed, best);
    }

    #[test]
    fn full_batch_is_shuffle_independent() {
        let split = tiny_split();
        let base = TrainConfig {
            learning_rate: 0.01,
            batch_size: 4,
            max_epochs: 3,
            patience: 10,
            ..TrainConfig::default()
        };
        let a = train(&split, tiny_cfg(), TrainConfig { seed: 1, ..base }).unwrap();
        let b = train(&split, tiny_cfg(), TrainConfig { seed: 2, ..base }).unwrap();
        for (pa, pb) in a.model.params.params().iter().zip(b.model.params.params()) {
            for (x, y) in pa.value.as_slice().iter().zip(pb.value.as_slice()) {
                assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
            }
        }
    }

    #[test]
    fn rejects_empty_train_and_bad_config() {
        let mut split = tiny_split();
        assert!(train(
            &split,
            tiny_cfg(),
            TrainConfig {
                batch_size: 0,
                ..TrainConfig::default()
            }
        )
        .is_err());
        assert!(matches!(
            train(
                &split,
                ModelConfig {
                    app_count: 4,
                    ..tiny_cfg()
                },
                TrainConfig::default()
            ),
            Err(Error::ShapeMismatch { .. })
        ));
        split.train.clear();
        assert!(matches!(
            train(&split, tiny_cfg(), TrainConfig::default()),
            Err(Error::EmptyTrainSet)
        ));
    }

    #[test]
    fn absurd_learning_rate_is_divergence() {
        let split = tiny_split();
        let cfg = TrainConfig {
            learning_rate: 1e308,
            max_epochs: 5,
            clip_norm: f64::MAX,
            ..TrainConfig::default()
        };
        assert!(matches!(train(&split, tiny_cfg(), cfg), Err(Error::Divergence { .. })));
    }
}
