//! End-to-end orchestration: synth → ingest → featurize → partition → train →
//! evaluate, each stage cached under the output directory by a hash of its
//! inputs.

mod config;
mod synth;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::corpus::{hour_histogram, load_corpus, timestamp_feature, Corpus, Preprocessor, Split};
use crate::eval::{accuracy_within, aggregate, read_results_csv, write_results_csv, Aggregates, UserResult};
use crate::features::{CsrMatrix, FeatureSet, View, ViewMatrix};
use crate::geo::{
    build_adaptive_grid, build_kdtree_partition, build_kmeans_partition, build_polygon_partition, load_geojson_polygons,
    Located, Partition, Scheme,
};
use crate::graph::{build_mention_graph, generate_walks, train_node2vec};
use crate::model::{load_checkpoint, save_checkpoint, select_inputs, train, write_training_log, CheckpointMeta, Dataset};
use crate::text::{save_embeddings, tfidf_vector, train_pvdbow, EmbeddingMatrix, EmbeddingSidecar, Vocabulary};
use crate::util::{sha256_hex, Provenance};

pub use config::{
    CorpusSource, Doc2VecConfig, EvalConfig, ModelConfig, Node2VecConfig, PartitionConfig, PipelineConfig, TfidfConfig,
    PRESETS, VIEWS,
};
pub use synth::{generate_users, user_id, write_synthetic_corpus, SynthError, SynthSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Synth,
    Ingest,
    Featurize,
    Partition,
    Train,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Synth,
        Stage::Ingest,
        Stage::Featurize,
        Stage::Partition,
        Stage::Train,
        Stage::Evaluate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Ingest => "ingest",
            Stage::Featurize => "featurize",
            Stage::Partition => "partition",
            Stage::Train => "train",
            Stage::Evaluate => "evaluate",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("stage {stage} failed: {message}")]
    Stage { stage: Stage, message: String },
}

impl PipelineError {
    /// 2 for configuration errors, 10 + stage index for stage failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Stage { stage, .. } => 10 + *stage as i32,
        }
    }
}

fn fail(stage: Stage) -> impl Fn(String) -> PipelineError {
    move |message| PipelineError::Stage { stage, message }
}

/// Shorthand for mapping any displayable error into a stage failure.
trait StageResult<T> {
    fn at(self, stage: Stage) -> Result<T, PipelineError>;
}

impl<T, E: fmt::Display> StageResult<T> for Result<T, E> {
    fn at(self, stage: Stage) -> Result<T, PipelineError> {
        self.map_err(|e| fail(stage)(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub hash: String,
    pub cached: bool,
    pub artifacts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Stamp {
    stage: Stage,
    hash: String,
    provenance: Provenance,
    artifacts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config_hash: String,
    pub seed: u64,
    pub preset: String,
    pub scheme: Scheme,
    pub num_classes: usize,
    pub views: Vec<String>,
    pub test: Aggregates,
    /// Percentage of test users within each extra threshold (km).
    pub acc_within_km: BTreeMap<String, f64>,
    pub best_epoch: usize,
    pub best_dev_accuracy_pct: f64,
    /// Test users whose view fell back to the zero vector.
    pub zero_fallbacks: BTreeMap<String, usize>,
}

impl Report {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub stages: Vec<StageRecord>,
    pub report: Option<Report>,
}

impl RunSummary {
    pub fn cached(&self, stage: Stage) -> Option<bool> {
        self.stages.iter().find(|r| r.stage == stage).map(|r| r.cached)
    }
}

struct Runner {
    config: PipelineConfig,
    provenance: Provenance,
    out: PathBuf,
    records: Vec<StageRecord>,
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), String> {
    std::fs::write(path, bytes).map_err(|e| format!("{}: {e}", path.display()))
}

fn file_digest(path: &Path) -> Result<String, String> {
    std::fs::read(path)
        .map(|b| sha256_hex(&b))
        .map_err(|e| format!("{}: {e}", path.display()))
}

impl Runner {
    fn dir(&self, stage: Stage) -> PathBuf {
        self.out.join(stage.as_str())
    }

    /// Run `body` into the stage directory unless a stamp with the same key
    /// hash and all listed artifacts are already there.
    fn stage(
        &mut self,
        stage: Stage,
        key: Value,
        artifacts: &[&str],
        body: impl FnOnce(&Path, &Provenance) -> Result<(), PipelineError>,
    ) -> Result<String, PipelineError> {
        let hash = sha256_hex(json!({"stage": stage, "key": key}).to_string().as_bytes());
        let dir = self.dir(stage);
        let stamp_path = dir.join("stage.json");
        let cached = std::fs::read_to_string(&stamp_path)
            .ok()
            .and_then(|t| serde_json::from_str::<Stamp>(&t).ok())
            .is_some_and(|s| s.hash == hash && artifacts.iter().all(|a| dir.join(a).exists()));
        if !cached {
            if dir.exists() {
                std::fs::remove_dir_all(&dir).at(stage)?;
            }
            std::fs::create_dir_all(&dir).at(stage)?;
            body(&dir, &self.provenance)?;
            let stamp = Stamp {
                stage,
                hash: hash.clone(),
                provenance: self.provenance.clone(),
                artifacts: artifacts.iter().map(|a| a.to_string()).collect(),
            };
            write(&stamp_path, serde_json::to_string_pretty(&stamp).expect("stamp serializes")).map_err(fail(stage))?;
        }
        self.records.push(StageRecord {
            stage,
            hash: hash.clone(),
            cached,
            artifacts: artifacts.iter().map(|a| format!("{}/{a}", stage.as_str())).collect(),
        });
        Ok(hash)
    }

    fn write_manifest(&self) -> Result<(), PipelineError> {
        let manifest = json!({
            "config_hash": self.provenance.config_hash,
            "seed": self.provenance.seed,
            "preset": self.config.preset,
            "stages": self.records,
        });
        let path = self.out.join("manifest.json");
        write(&path, serde_json::to_string_pretty(&manifest).expect("manifest serializes")).map_err(PipelineError::Config)?;
        write(&self.out.join("config.toml"), self.config.to_toml()).map_err(PipelineError::Config)
    }
}

/// Run every stage up to and including `until`.
pub fn run_pipeline(config: &PipelineConfig, until: Stage) -> Result<RunSummary, PipelineError> {
    config.validate()?;
    let resolved = config.resolved();
    let provenance = Provenance {
        config_hash: config.config_hash(),
        seed: config.seed,
    };
    std::fs::create_dir_all(&config.out_dir).map_err(|e| PipelineError::Config(format!("{}: {e}", config.out_dir.display())))?;
    let mut r = Runner {
        config: config.clone(),
        provenance,
        out: config.out_dir.clone(),
        records: Vec::new(),
    };
    let result = run_stages(&mut r, &resolved, until);
    r.write_manifest()?;
    let report = result?;
    Ok(RunSummary {
        out_dir: r.out.clone(),
        stages: r.records,
        report,
    })
}

fn run_stages(r: &mut Runner, c: &PipelineConfig, until: Stage) -> Result<Option<Report>, PipelineError> {
    // Synth (only without an input corpus).
    let corpus_path = match &c.corpus.path {
        Some(p) => p.clone(),
        None => {
            let spec = c.synth.clone().expect("validated: synth present without corpus path");
            r.stage(Stage::Synth, json!({ "spec": spec }), &["corpus.jsonl", "spec.json"], |dir, prov| {
                write_synthetic_corpus(&spec, &dir.join("corpus.jsonl")).at(Stage::Synth)?;
                let meta = json!({"spec": spec, "config_hash": prov.config_hash, "seed": prov.seed});
                write(&dir.join("spec.json"), serde_json::to_string_pretty(&meta).expect("json")).map_err(fail(Stage::Synth))
            })?;
            r.dir(Stage::Synth).join("corpus.jsonl")
        }
    };
    if until == Stage::Synth {
        return Ok(None);
    }

    // Ingest.
    let corpus_digest = file_digest(&corpus_path).map_err(fail(Stage::Ingest))?;
    let preprocessor = Preprocessor::new(&c.preprocess).at(Stage::Ingest)?;
    let corpus = load_corpus(&corpus_path, c.corpus.format, &preprocessor).at(Stage::Ingest)?;
    let ingest = r.stage(
        Stage::Ingest,
        json!({"corpus": corpus_digest, "format": c.corpus.format, "preprocess": c.preprocess}),
        &["summary.json"],
        |dir, prov| {
            let splits: BTreeMap<String, usize> = corpus.split_counts().into_iter().map(|(s, n)| (s.to_string(), n)).collect();
            let summary = json!({
                "corpus": corpus_path,
                "corpus_sha256": corpus_digest,
                "users": corpus.len(),
                "splits": splits,
                "tokens": corpus.documents().iter().map(|d| d.tokens.len()).sum::<usize>(),
                "mentions": corpus.documents().iter().map(|d| d.mention_targets.len()).sum::<usize>(),
                "config_hash": prov.config_hash,
                "seed": prov.seed,
            });
            write(&dir.join("summary.json"), serde_json::to_string_pretty(&summary).expect("json")).map_err(fail(Stage::Ingest))
        },
    )?;
    if corpus.split_indices(Split::Train).is_empty() {
        return Err(fail(Stage::Ingest)("corpus has no training users".into()));
    }
    if until == Stage::Ingest {
        return Ok(None);
    }

    // Featurize.
    let featurize = r.stage(
        Stage::Featurize,
        json!({"ingest": ingest, "tfidf": c.tfidf, "doc2vec": c.doc2vec, "node2vec": c.node2vec}),
        &[
            "features.bin",
            "vocab.json",
            "doc2vec.f32",
            "doc2vec.json",
            "node2vec.f32",
            "node2vec.json",
            "edges.tsv",
            "nodes.tsv",
            "summary.json",
        ],
        |dir, prov| featurize_stage(c, &corpus, dir, prov).map_err(fail(Stage::Featurize)),
    )?;
    if until == Stage::Featurize {
        return Ok(None);
    }

    // Partition.
    let polygon_digest = match &c.partition {
        PartitionConfig::Polygons { path } => Some(file_digest(path).map_err(fail(Stage::Partition))?),
        _ => None,
    };
    let partition_hash = r.stage(
        Stage::Partition,
        json!({"ingest": ingest, "partition": c.partition, "polygons": polygon_digest, "kmeans_seed": c.kmeans_seed()}),
        &["partition.json", "partition.geojson"],
        |dir, prov| partition_stage(c, &corpus, dir, prov).map_err(fail(Stage::Partition)),
    )?;
    if until == Stage::Partition {
        return Ok(None);
    }

    // Train.
    let train_hash = r.stage(
        Stage::Train,
        json!({"featurize": featurize, "partition": partition_hash, "model": c.model, "train": c.train}),
        &["model.bin", "model.json", "train_log.csv"],
        |dir, prov| {
            let features = FeatureSet::load(&r_dir(dir, Stage::Featurize).join("features.bin")).at(Stage::Train)?;
            let partition = Partition::load(&r_dir(dir, Stage::Partition).join("partition.json")).at(Stage::Train)?;
            train_stage(c, &corpus, &features, &partition, dir, prov).map_err(fail(Stage::Train))
        },
    )?;
    if until == Stage::Train {
        return Ok(None);
    }

    // Evaluate.
    r.stage(
        Stage::Evaluate,
        json!({"train": train_hash, "eval": c.eval}),
        &["results.csv", "report.json"],
        |dir, prov| {
            let features = FeatureSet::load(&r_dir(dir, Stage::Featurize).join("features.bin")).at(Stage::Evaluate)?;
            let partition = Partition::load(&r_dir(dir, Stage::Partition).join("partition.json")).at(Stage::Evaluate)?;
            evaluate_stage(c, &corpus, &features, &partition, dir, prov).map_err(fail(Stage::Evaluate))
        },
    )?;
    Report::load(&r.dir(Stage::Evaluate).join("report.json"))
        .map(Some)
        .map_err(|e| fail(Stage::Evaluate)(e.to_string()))
}

/// Sibling stage directory.
fn r_dir(dir: &Path, stage: Stage) -> PathBuf {
    dir.parent().expect("stage dirs live under the output dir").join(stage.as_str())
}

fn dense(rows: &[Vec<f64>], cols: usize) -> ViewMatrix {
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    ViewMatrix::Dense(Array2::from_shape_vec((rows.len(), cols), flat).expect("rows share a width"))
}

fn sidecar(kind: &str, m: &EmbeddingMatrix, vocab_hash: String, seed: u64, config: Value, prov: &Provenance) -> EmbeddingSidecar {
    EmbeddingSidecar {
        kind: kind.to_string(),
        rows: m.rows(),
        cols: m.cols(),
        vocab_hash,
        seed,
        config,
        config_hash: Some(prov.config_hash.clone()),
    }
}

fn featurize_stage(c: &PipelineConfig, corpus: &Corpus, dir: &Path, prov: &Provenance) -> Result<(), String> {
    let docs = corpus.documents();
    let ids: Vec<String> = corpus.users().iter().map(|u| u.user_id.clone()).collect();
    let train_idx = corpus.split_indices(Split::Train);
    let train_docs: Vec<&Vec<String>> = train_idx.iter().map(|&i| &docs[i].tokens).collect();
    let vocab = Vocabulary::build(&train_docs, c.tfidf.min_df).map_err(|e| format!("tfidf: {e}"))?;
    write(&dir.join("vocab.json"), serde_json::to_string(&vocab).expect("vocab serializes"))?;

    // TF-IDF, vocabulary and IDF from training users.
    let tfidf: Vec<_> = docs.par_iter().map(|d| tfidf_vector(&d.tokens, &vocab)).collect();
    let tfidf_flagged: Vec<usize> = (0..tfidf.len()).filter(|&i| tfidf[i].nnz() == 0).collect();

    // Paragraph vectors trained on training users, inferred for the rest.
    let train_ids: Vec<String> = train_idx.iter().map(|&i| ids[i].clone()).collect();
    let train_tokens: Vec<Vec<String>> = train_idx.iter().map(|&i| docs[i].tokens.clone()).collect();
    let mut d2v = train_pvdbow(&train_ids, &train_tokens, &vocab, &c.doc2vec.sgns).map_err(|e| format!("doc2vec: {e}"))?;
    d2v.inference_epochs = c.doc2vec.inference_epochs;
    let d2v_rows: Vec<Vec<f64>> = docs.par_iter().map(|d| d2v.doc_vector(&d.user_id, &d.tokens)).collect();
    let d2v_flagged: Vec<usize> = (0..docs.len())
        .filter(|&i| !docs[i].tokens.iter().any(|t| vocab.index_of(t).is_some()))
        .collect();
    let d2v_matrix = EmbeddingMatrix::from_vec(ids.len(), d2v.dim(), d2v_rows.concat());
    save_embeddings(
        &dir.join("doc2vec.f32"),
        &d2v_matrix,
        &sidecar("doc2vec", &d2v_matrix, vocab.fingerprint(), c.doc2vec.sgns.seed, json!(c.doc2vec), prov),
    )
    .map_err(|e| e.to_string())?;

    // Mention graph and node2vec over every user.
    let graph = build_mention_graph(corpus, c.node2vec.celebrity_threshold);
    graph
        .write_edge_list(
            &dir.join("edges.tsv"),
            &dir.join("nodes.tsv"),
            Some(&format!("config_hash={} seed={}", prov.config_hash, prov.seed)),
        )
        .map_err(|e| e.to_string())?;
    let walks = generate_walks(&graph, &c.node2vec.walk).map_err(|e| format!("node2vec walks: {e}"))?;
    let n2v = train_node2vec(&graph, &walks, &c.node2vec.sgns).map_err(|e| format!("node2vec: {e}"))?;
    save_embeddings(
        &dir.join("node2vec.f32"),
        &n2v.vectors,
        &sidecar(
            "node2vec",
            &n2v.vectors,
            sha256_hex(ids.join("\n").as_bytes()),
            c.node2vec.sgns.seed,
            json!(c.node2vec),
            prov,
        ),
    )
    .map_err(|e| e.to_string())?;

    let time: Vec<Vec<f64>> = corpus.users().iter().map(|u| timestamp_feature(u).to_vec()).collect();
    let time_flagged: Vec<usize> = (0..ids.len())
        .filter(|&i| hour_histogram(&corpus.users()[i]).iter().all(|&h| h == 0))
        .collect();

    let n2v_rows: Vec<Vec<f64>> = (0..ids.len()).map(|i| n2v.vector(i).to_vec()).collect();
    let features = FeatureSet {
        user_ids: ids.clone(),
        views: vec![
            View {
                name: "tfidf".into(),
                matrix: ViewMatrix::Sparse(CsrMatrix::from_rows(vocab.len(), &tfidf)),
                flagged: tfidf_flagged,
            },
            View {
                name: "doc2vec".into(),
                matrix: dense(&d2v_rows, d2v.dim()),
                flagged: d2v_flagged,
            },
            View {
                name: "node2vec".into(),
                matrix: dense(&n2v_rows, n2v.dim()),
                flagged: n2v.isolated.iter().copied().collect(),
            },
            View {
                name: "timestamp".into(),
                matrix: dense(&time, 24),
                flagged: time_flagged,
            },
        ],
        provenance: prov.clone(),
    };
    features.save(&dir.join("features.bin")).map_err(|e| e.to_string())?;
    let summary = json!({
        "users": ids.len(),
        "vocabulary": vocab.len(),
        "graph_nodes": graph.len(),
        "graph_edges": graph.num_edges(),
        "celebrities": graph.celebrities().len(),
        "isolated": n2v.isolated.len(),
        "walks": walks.len(),
        "flagged": features.views.iter().map(|v| (v.name.clone(), v.flagged.len())).collect::<BTreeMap<_, _>>(),
        "config_hash": prov.config_hash,
        "seed": prov.seed,
    });
    write(&dir.join("summary.json"), serde_json::to_string_pretty(&summary).expect("json"))
}

fn training_users(corpus: &Corpus) -> Vec<Located> {
    corpus
        .split_indices(Split::Train)
        .into_iter()
        .map(|i| {
            let u = &corpus.users()[i];
            Located::new(u.user_id.clone(), u.latitude, u.longitude)
        })
        .collect()
}

fn partition_stage(c: &PipelineConfig, corpus: &Corpus, dir: &Path, prov: &Provenance) -> Result<(), String> {
    let users = training_users(corpus);
    let mut partition = match &c.partition {
        PartitionConfig::S2Adaptive { l_min, t_max } => build_adaptive_grid(&users, *l_min, *t_max),
        PartitionConfig::Kdtree { leaf_threshold } => build_kdtree_partition(&users, *leaf_threshold),
        PartitionConfig::Kmeans { k } => build_kmeans_partition(&users, *k, c.kmeans_seed()),
        PartitionConfig::Polygons { path } => {
            load_geojson_polygons(path).and_then(|polygons| build_polygon_partition(&users, polygons))
        }
    }
    .map_err(|e| e.to_string())?;
    partition.provenance = Some(prov.clone());
    partition.save(&dir.join("partition.json")).map_err(|e| e.to_string())?;
    partition.save_geojson(&dir.join("partition.geojson")).map_err(|e| e.to_string())
}

fn rows_in(corpus: &Corpus, features: &FeatureSet, split: Split) -> Result<Vec<usize>, String> {
    let index: BTreeMap<&str, usize> = features.user_ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    corpus
        .split_indices(split)
        .into_iter()
        .map(|i| {
            let id = corpus.users()[i].user_id.as_str();
            index.get(id).copied().ok_or_else(|| format!("user {id} missing from features"))
        })
        .collect()
}

fn input_dims(features: &FeatureSet) -> BTreeMap<String, usize> {
    features.views.iter().map(|v| (v.name.clone(), v.matrix.cols())).collect()
}

fn train_stage(
    c: &PipelineConfig,
    corpus: &Corpus,
    features: &FeatureSet,
    partition: &Partition,
    dir: &Path,
    prov: &Provenance,
) -> Result<(), String> {
    let labels = partition.labels();
    let spec = c.model_spec(&input_dims(features), partition.num_classes());
    let (train_rows, train_labels): (Vec<usize>, Vec<usize>) = rows_in(corpus, features, Split::Train)?
        .into_iter()
        .filter_map(|r| labels.get(features.user_ids[r].as_str()).map(|&l| (r, l)))
        .unzip();
    let dev_rows = rows_in(corpus, features, Split::Dev)?;
    if dev_rows.is_empty() {
        return Err("corpus has no development users".into());
    }
    let dev_labels: Vec<usize> = dev_rows
        .iter()
        .map(|&r| {
            let u = corpus.user(&features.user_ids[r]).expect("feature rows come from the corpus");
            partition.assign_class(u.latitude, u.longitude)
        })
        .collect();
    let dataset = |rows: &[usize], labels: Vec<usize>| -> Result<Dataset, String> {
        Ok(Dataset {
            inputs: select_inputs(&spec, features, rows).map_err(|e| e.to_string())?,
            labels,
        })
    };
    let outcome = train(
        &spec,
        &dataset(&train_rows, train_labels)?,
        &dataset(&dev_rows, dev_labels)?,
        &c.train,
    )
    .map_err(|e| e.to_string())?;
    let meta = CheckpointMeta {
        spec: spec.clone(),
        seed: c.train.seed,
        config: c.train.clone(),
        dev_accuracy_history: outcome.log.iter().map(|l| l.dev_accuracy).collect(),
        best_epoch: outcome.best_epoch,
        config_hash: prov.config_hash.clone(),
        num_parameters: 0,
        blob_sha256: String::new(),
    };
    save_checkpoint(&outcome.model, meta, &dir.join("model.bin")).map_err(|e| e.to_string())?;
    write_training_log(&outcome.log, &dir.join("train_log.csv"), Some(prov)).map_err(|e| e.to_string())
}

fn evaluate_stage(
    c: &PipelineConfig,
    corpus: &Corpus,
    features: &FeatureSet,
    partition: &Partition,
    dir: &Path,
    prov: &Provenance,
) -> Result<(), String> {
    let (model, meta) = load_checkpoint(&r_dir(dir, Stage::Train).join("model.bin")).map_err(|e| e.to_string())?;
    let rows = rows_in(corpus, features, Split::Test)?;
    if rows.is_empty() {
        return Err("corpus has no test users".into());
    }
    let inputs = select_inputs(model.spec(), features, &rows).map_err(|e| e.to_string())?;
    let predicted = model.predict(&inputs).map_err(|e| e.to_string())?;
    let results: Vec<UserResult> = rows
        .iter()
        .zip(&predicted)
        .map(|(&r, &p)| {
            let u = corpus.user(&features.user_ids[r]).expect("feature rows come from the corpus");
            let truth = partition.assign_class(u.latitude, u.longitude);
            UserResult::new(u.user_id.clone(), Some(truth), p, u.coord(), partition.centroid(p))
        })
        .collect();
    let results_path = dir.join("results.csv");
    write_results_csv(&results, &results_path, Some(prov)).map_err(|e| e.to_string())?;
    // Aggregates come from the file so that they match it exactly.
    let back = read_results_csv(&results_path).map_err(|e| e.to_string())?;
    let test = aggregate(&back).map_err(|e| e.to_string())?;
    let errors: Vec<f64> = back.iter().map(|r| r.error_km).collect();
    let test_rows: std::collections::BTreeSet<usize> = rows.iter().copied().collect();
    let report = Report {
        config_hash: prov.config_hash.clone(),
        seed: prov.seed,
        preset: c.preset.clone(),
        scheme: partition.scheme(),
        num_classes: partition.num_classes(),
        views: model.spec().views().iter().map(|v| v.to_string()).collect(),
        test,
        acc_within_km: c
            .eval
            .thresholds_km
            .iter()
            .map(|&km| (format!("{km}"), accuracy_within(&errors, km)))
            .collect(),
        best_epoch: meta.best_epoch,
        best_dev_accuracy_pct: 100.0 * meta.dev_accuracy_history.iter().cloned().fold(0.0, f64::max),
        zero_fallbacks: model
            .spec()
            .views()
            .iter()
            .map(|v| {
                let flagged = features.view(v).map(|view| view.flagged.iter().filter(|r| test_rows.contains(r)).count());
                (v.to_string(), flagged.unwrap_or(0))
            })
            .collect(),
    };
    write(&dir.join("report.json"), serde_json::to_string_pretty(&report).expect("report serializes"))
}

/// Side-by-side table of several runs' reports.
pub fn compare_reports(reports: &[(String, Report)]) -> String {
    let rows: Vec<(String, Aggregates)> = reports.iter().map(|(l, r)| (l.clone(), r.test)).collect();
    crate::eval::comparison_table(&rows)
}
