//! End-to-end glue: run configuration, the prepared-corpus bundle, and the
//! prepare → train → evaluate helpers the command-line tool is built from.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{
    apply_filters, build_vocabularies, chronological_split, default_stopwords, ingest, load_stopwords, Event,
    FilterConfig, InputFormat, SplitCorpus, SplitRatios, WindowConfig, WindowInstance,
};
use crate::error::{Error, Result};
use crate::evaluation::{align_instances, evaluate, EvalReport, NamedReport};
use crate::model::{ModelConfig, Variant};
use crate::training::{Checkpoint, TrainConfig};

pub const BUNDLE_FORMAT: &str = "cosem-corpus";
pub const BUNDLE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSettings {
    pub min_app_count: usize,
    pub min_user_records: usize,
    /// Stopword file; the built-in English list when absent.
    pub stopwords: Option<PathBuf>,
}

impl Default for FilterSettings {
    fn default() -> Self {
        FilterSettings {
            min_app_count: 10,
            min_user_records: 5,
            stopwords: None,
        }
    }
}

impl FilterSettings {
    pub fn resolve(&self) -> Result<FilterConfig> {
        let stopwords = match &self.stopwords {
            Some(p) => load_stopwords(p)?,
            None => default_stopwords(),
        };
        Ok(FilterConfig {
            min_app_count: self.min_app_count,
            min_user_records: self.min_user_records,
            stopwords,
        })
    }
}

/// Architecture settings; vocabulary sizes come from the corpus.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSettings {
    pub embed_dim: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub variant: Variant,
    pub seed: u64,
}

impl Default for ModelSettings {
    fn default() -> Self {
        let d = ModelConfig::new(Variant::Cosem, 1, 1);
        ModelSettings {
            embed_dim: d.embed_dim,
            hidden_layers: d.hidden_layers,
            hidden_width: d.hidden_width,
            variant: d.variant,
            seed: d.seed,
        }
    }
}

impl ModelSettings {
    pub fn for_corpus(&self, split: &SplitCorpus) -> ModelConfig {
        ModelConfig {
            embed_dim: self.embed_dim,
            hidden_layers: self.hidden_layers,
            hidden_width: self.hidden_width,
            variant: self.variant,
            app_count: split.app_vocab.len(),
            chunk_count: split.semantic_vocab.len(),
            seed: self.seed,
        }
    }
}

/// Everything a run needs, loadable from one JSON file. Missing fields take
/// their defaults; command-line flags override file values.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub filters: FilterSettings,
    pub window: WindowConfig,
    pub split: SplitRatios,
    pub model: ModelSettings,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::FileNotFound(path.to_path_buf()));
        }
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrepareStats {
    pub events_ingested: usize,
    pub malformed_lines: usize,
    pub events_kept: usize,
    pub users: usize,
    pub instances: usize,
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    pub apps: usize,
    pub chunks: usize,
}

/// A prepared, split corpus together with the settings that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusBundle {
    pub format: String,
    pub version: u32,
    pub config: RunConfig,
    pub stats: PrepareStats,
    pub corpus: SplitCorpus,
}

impl CorpusBundle {
    pub fn split(&self, which: SplitName) -> &[WindowInstance] {
        match which {
            SplitName::Train => &self.corpus.train,
            SplitName::Validation => &self.corpus.validation,
            SplitName::Test => &self.corpus.test,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = serde_json::to_vec(self)?;
        out.push(b'\n');
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::FileNotFound(path.to_path_buf()));
        }
        let raw = std::fs::read(path)?;
        #[derive(Deserialize)]
        struct Header {
            format: String,
            version: u32,
        }
        let header: Header = serde_json::from_slice(&raw)?;
        if header.format != BUNDLE_FORMAT {
            return Err(Error::invalid(format!("{} is not a corpus bundle", path.display())));
        }
        if header.version != BUNDLE_VERSION {
            return Err(Error::VersionMismatch {
                found: header.version,
                supported: BUNDLE_VERSION,
            });
        }
        Ok(serde_json::from_slice(&raw)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Train,
    Validation,
    Test,
}

impl std::str::FromStr for SplitName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitName::Train),
            "validation" | "val" => Ok(SplitName::Validation),
            "test" => Ok(SplitName::Test),
            other => Err(Error::invalid(format!("unknown split {other:?}"))),
        }
    }
}

impl std::fmt::Display for SplitName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SplitName::Train => "train",
            SplitName::Validation => "validation",
            SplitName::Test => "test",
        })
    }
}

/// Filters, vocabularies, windows and splits an in-memory event stream.
/// `events` must be sorted by `(user_id, timestamp)`.
pub fn prepare_events(events: Vec<Event>, cfg: &RunConfig) -> Result<CorpusBundle> {
    let ingested = events.len();
    let filters = cfg.filters.resolve()?;
    let events = apply_filters(events, &filters)?;
    let (apps, chunks) = build_vocabularies(&events)?;
    let instances = crate::corpus::windowize(&events, &apps, &chunks, cfg.window)?;
    let users = {
        let mut u: Vec<&str> = events.iter().map(|e| e.user_id.as_str()).collect();
        u.dedup();
        u.len()
    };
    let n_instances = instances.len();
    let corpus = chronological_split(instances, cfg.split, apps, chunks)?;
    let stats = PrepareStats {
        events_ingested: ingested,
        malformed_lines: 0,
        events_kept: events.len(),
        users,
        instances: n_instances,
        train: corpus.train.len(),
        validation: corpus.validation.len(),
        test: corpus.test.len(),
        apps: corpus.app_vocab.len(),
        chunks: corpus.semantic_vocab.len(),
    };
    Ok(CorpusBundle {
        format: BUNDLE_FORMAT.to_owned(),
        version: BUNDLE_VERSION,
        config: cfg.clone(),
        stats,
        corpus,
    })
}

/// `ingest → apply_filters → build_vocabularies → windowize → chronological_split`.
pub fn prepare(input: &Path, format: InputFormat, cfg: &RunConfig) -> Result<CorpusBundle> {
    let ingested = ingest(input, format)?;
    let mut bundle = prepare_events(ingested.events, cfg)?;
    bundle.stats.events_ingested = ingested.total_lines - ingested.malformed;
    bundle.stats.malformed_lines = ingested.malformed;
    Ok(bundle)
}

/// Trains on a bundle with the bundle's (possibly overridden) settings and
/// stamps the effective configuration into the checkpoint.
pub fn train_bundle<F: FnMut(&crate::training::EpochRecord)>(
    bundle: &CorpusBundle,
    cfg: &RunConfig,
    on_epoch: F,
) -> Result<Checkpoint> {
    let model_cfg = cfg.model.for_corpus(&bundle.corpus);
    let mut ckpt = crate::training::train_with(&bundle.corpus, model_cfg, cfg.train, on_epoch)?;
    ckpt.provenance = cfg.to_json();
    Ok(ckpt)
}

/// Evaluates a checkpoint on one split of a bundle, re-encoding ids when the
/// checkpoint was trained on different vocabularies.
pub fn evaluate_checkpoint(ckpt: &Checkpoint, bundle: &CorpusBundle, split: SplitName, k: usize) -> Result<EvalReport> {
    let aligned = align_instances(
        bundle.split(split),
        &bundle.corpus.app_vocab,
        &bundle.corpus.semantic_vocab,
        &ckpt.app_vocab,
        &ckpt.semantic_vocab,
    )?;
    evaluate(&ckpt.model, &aligned, k)
}

/// Machine-readable evaluation output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub k: usize,
    pub split: SplitName,
    pub rows: Vec<NamedReport>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{synthesize, Coupling, SynthConfig};

    fn events() -> Vec<Event> {
        synthesize(&SynthConfig {
            seed: 5,
            users: 5,
            apps: 12,
            chunks: 6,
            events_per_user: 120,
            coupling: Coupling::Joint,
        })
        .unwrap()
    }

    #[test]
    fn prepare_counts_are_consistent() {
        let b = prepare_events(events(), &RunConfig::default()).unwrap();
        let s = &b.stats;
        assert_eq!(s.users, 5);
        assert_eq!(s.train + s.validation + s.test, s.instances);
        assert_eq!(s.apps, b.corpus.app_vocab.len());
        assert_eq!(
            b.to_bytes().unwrap(),
            prepare_events(events(), &RunConfig::default())
                .unwrap()
                .to_bytes()
                .unwrap()
        );
    }

    #[test]
    fn bundle_round_trip_and_version_gate() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        let b = prepare_events(events(), &RunConfig::default()).unwrap();
        b.save(&p).unwrap();
        assert_eq!(CorpusBundle::load(&p).unwrap(), b);

        let mut future = b.clone();
        future.version = 9;
        future.save(&p).unwrap();
        assert!(matches!(
            CorpusBundle::load(&p),
            Err(Error::VersionMismatch { found: 9, .. })
        ));
    }

    #[test]
    fn config_file_defaults_and_unknown_fields() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cfg.json");
        std::fs::write(
            &p,
            r#"{"model":{"embed_dim":8,"variant":"dnn_a"},"train":{"learning_rate":0.01}}"#,
        )
        .unwrap();
        let cfg = RunConfig::from_file(&p).unwrap();
        assert_eq!(cfg.model.embed_dim, 8);
        assert_eq!(cfg.model.variant, Variant::DnnA);
        assert_eq!(cfg.model.hidden_width, 64);
        assert_eq!(cfg.train.learning_rate, 0.01);
        assert_eq!(cfg.train.patience, 10);
        assert_eq!(cfg.window.window_seconds, 3600);

        std::fs::write(&p, r#"{"modle":{}}"#).unwrap();
        assert!(RunConfig::from_file(&p).is_err());
        let back: RunConfig = serde_json::from_str(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
    }
}
