//! Pipeline configuration, named presets and layered TOML overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::synth::SynthSpec;
use super::PipelineError;
use crate::corpus::{CorpusFormat, PreprocessConfig};
use crate::graph::WalkConfig;
use crate::model::{BranchSpec, ModelSpec, TrainConfig};
use crate::text::SgnsConfig;
use crate::util::{mix_seed, sha256_hex};

pub const VIEWS: [&str; 4] = ["tfidf", "doc2vec", "node2vec", "timestamp"];

pub const PRESETS: [&str; 4] = ["geotext", "utgeo2011", "twitterworld", "synthetic"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSource {
    /// Without a path the corpus is generated from `synth`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    pub format: CorpusFormat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TfidfConfig {
    pub min_df: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Doc2VecConfig {
    pub sgns: SgnsConfig,
    pub inference_epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Node2VecConfig {
    pub celebrity_threshold: usize,
    pub walk: WalkConfig,
    pub sgns: SgnsConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case", deny_unknown_fields)]
pub enum PartitionConfig {
    S2Adaptive { l_min: u8, t_max: usize },
    Kdtree { leaf_threshold: usize },
    Kmeans { k: usize },
    Polygons { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Branches in order; a view left out here is an ablation.
    pub views: Vec<String>,
    pub hidden: BTreeMap<String, Vec<usize>>,
    #[serde(default)]
    pub post_hidden: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Extra "accuracy within X km" thresholds reported next to @161.
    #[serde(default)]
    pub thresholds_km: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub preset: String,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub corpus: CorpusSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthSpec>,
    pub preprocess: PreprocessConfig,
    pub tfidf: TfidfConfig,
    pub doc2vec: Doc2VecConfig,
    pub node2vec: Node2VecConfig,
    pub partition: PartitionConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

fn sgns(dim: usize, window: usize, epochs: usize) -> SgnsConfig {
    SgnsConfig {
        dim,
        window,
        epochs,
        ..SgnsConfig::default()
    }
}

fn hidden(sizes: [usize; 4]) -> BTreeMap<String, Vec<usize>> {
    VIEWS.iter().zip(sizes).map(|(v, h)| (v.to_string(), vec![h])).collect()
}

impl PipelineConfig {
    /// Dataset presets share the published hyperparameters and differ in
    /// min_df, C, patience and grid granularity.
    pub fn preset(name: &str) -> Result<Self, PipelineError> {
        let paper = |min_df: usize, c: usize, patience: usize, l_min: u8, t_max: usize| Self {
            preset: name.to_string(),
            seed: 1,
            out_dir: PathBuf::from("artifacts"),
            corpus: CorpusSource {
                path: None,
                format: CorpusFormat::Jsonl,
            },
            synth: None,
            preprocess: PreprocessConfig::default(),
            tfidf: TfidfConfig { min_df },
            doc2vec: Doc2VecConfig {
                sgns: sgns(300, 10, 10),
                inference_epochs: 50,
            },
            node2vec: Node2VecConfig {
                celebrity_threshold: c,
                walk: WalkConfig::default(),
                sgns: sgns(300, 5, 5),
            },
            partition: PartitionConfig::S2Adaptive { l_min, t_max },
            model: ModelConfig {
                views: VIEWS.iter().map(|v| v.to_string()).collect(),
                hidden: hidden([100, 300, 300, 100]),
                post_hidden: Vec::new(),
            },
            train: TrainConfig {
                learning_rate: 1e-4,
                l2: 0.1,
                patience,
                ..TrainConfig::default()
            },
            eval: EvalConfig { thresholds_km: Vec::new() },
        };
        match name {
            "geotext" => Ok(paper(40, 5, 10, 6, 500)),
            "utgeo2011" => Ok(paper(500, 15, 6, 6, 10_000)),
            "twitterworld" => Ok(paper(400, 5, 6, 7, 50_000)),
            "synthetic" => {
                let spec = SynthSpec::default();
                let mut c = paper(2, 1000, 10, 0, 1);
                c.synth = Some(spec.clone());
                c.doc2vec.sgns = sgns(32, 10, 10);
                c.node2vec.sgns = sgns(32, 5, 2);
                c.node2vec.walk.walk_length = 40;
                c.node2vec.walk.walks_per_node = 5;
                c.partition = PartitionConfig::Kmeans { k: spec.num_clusters };
                c.model.hidden = hidden([32, 32, 32, 16]);
                c.train.learning_rate = 1e-3;
                c.train.max_epochs = 300;
                c.eval.thresholds_km = vec![spec.dispersion_km];
                Ok(c)
            }
            other => Err(PipelineError::Config(format!(
                "unknown preset `{other}` (expected one of {})",
                PRESETS.join(", ")
            ))),
        }
    }

    /// `base` preset (or the file's own `preset` key, or `synthetic`)
    /// overlaid with the file's values.
    pub fn load(path: &Path, base: Option<&str>) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text, base).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
    }

    pub fn from_toml(text: &str, base: Option<&str>) -> Result<Self, PipelineError> {
        let overlay: toml::Table = text.parse().map_err(|e: toml::de::Error| PipelineError::Config(e.to_string()))?;
        let name = base
            .map(str::to_string)
            .or_else(|| overlay.get("preset").and_then(|v| v.as_str()).map(str::to_string))
            .unwrap_or_else(|| "synthetic".to_string());
        let preset = Self::preset(&name)?;
        let mut merged = toml::Table::try_from(&preset).map_err(|e| PipelineError::Config(e.to_string()))?;
        merge(&mut merged, overlay);
        let config: Self = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| PipelineError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.model.views.is_empty() {
            return bad("model.views is empty".into());
        }
        for v in &self.model.views {
            if !VIEWS.contains(&v.as_str()) {
                return bad(format!("unknown view `{v}` (expected one of {})", VIEWS.join(", ")));
            }
            if !self.model.hidden.contains_key(v) {
                return bad(format!("view `{v}` has no model.hidden entry"));
            }
        }
        if self.corpus.path.is_none() && self.synth.is_none() {
            return bad("no corpus: set corpus.path or a [synth] section".into());
        }
        if let Some(s) = &self.synth {
            s.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        }
        if self.tfidf.min_df == 0 {
            return bad("tfidf.min_df must be at least 1".into());
        }
        self.doc2vec.sgns.validate().map_err(|e| PipelineError::Config(format!("doc2vec: {e}")))?;
        self.node2vec.sgns.validate().map_err(|e| PipelineError::Config(format!("node2vec: {e}")))?;
        self.node2vec.walk.validate().map_err(|e| PipelineError::Config(format!("node2vec: {e}")))?;
        self.train.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        Ok(())
    }

    /// Copy with every component seed derived from the master seed.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.doc2vec.sgns.seed = mix_seed(self.seed, 1);
        c.node2vec.walk.seed = mix_seed(self.seed, 2);
        c.node2vec.sgns.seed = mix_seed(self.seed, 3);
        c.train.seed = mix_seed(self.seed, 5);
        if let Some(s) = &mut c.synth {
            s.seed = mix_seed(self.seed, 6);
        }
        c
    }

    pub fn kmeans_seed(&self) -> u64 {
        mix_seed(self.seed, 4)
    }

    /// Digest of the resolved config. The output directory is excluded so
    /// that identical runs in different places agree.
    pub fn config_hash(&self) -> String {
        let mut c = self.resolved();
        c.out_dir = PathBuf::new();
        sha256_hex(serde_json::to_string(&c).expect("config serializes").as_bytes())
    }

    /// Branch layout for the configured views and the given class count.
    pub fn model_spec(&self, input_dims: &BTreeMap<String, usize>, num_classes: usize) -> ModelSpec {
        ModelSpec {
            branches: self
                .model
                .views
                .iter()
                .map(|v| BranchSpec::new(v.clone(), input_dims[v], self.model.hidden[v].clone()))
                .collect(),
            post_hidden: self.model.post_hidden.clone(),
            num_classes,
        }
    }
}

/// Recursive table merge; non-table values in `over` replace those in `base`.
/// An enum-tagged table (`scheme` key) is replaced wholesale when the tag changes.
fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => {
                if o.get("scheme").is_some() && o.get("scheme") != b.get("scheme") {
                    *b = o;
                } else {
                    merge(b, o);
                }
            }
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
