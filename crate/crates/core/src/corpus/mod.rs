//! Dataset ingestion: users, tweets, per-user documents and splits.
//!
//! Two container formats are supported:
//!
//! * JSONL, one user per line:
//!   `{"user_id": "...", "lat": 40.7, "lon": -74.0, "split": "train", "tweets": [{"text": "...", "ts": 1267401600}]}`
//! * TSV, one user per row: `user_id<TAB>lat<TAB>lon<TAB>split<TAB>text`.
//!   The text column is treated as a single tweet without timestamp.

mod porter;
mod tokenize;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

pub use porter::stem;
pub use tokenize::{
    extract_mentions, PreprocessConfig, Preprocessor, StopwordSource, PUNCT_TOKEN, URL_TOKEN,
};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: field `{field}`: {reason}")]
    Malformed {
        line: usize,
        field: &'static str,
        reason: String,
    },
    #[error("line {line}: field `{field}` out of range: {value}")]
    OutOfRange {
        line: usize,
        field: &'static str,
        value: f64,
    },
    #[error("line {line}: duplicate user_id `{user_id}`")]
    DuplicateUser { line: usize, user_id: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}` (expected train, dev or test)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    Jsonl,
    Tsv,
}

impl FromStr for CorpusFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" => Ok(CorpusFormat::Jsonl),
            "tsv" => Ok(CorpusFormat::Tsv),
            other => Err(format!("unknown corpus format `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tweet {
    pub text: String,
    pub timestamp_utc: Option<i64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct User {
    pub user_id: String,
    pub latitude: f64,
    pub longitude: f64,
    pub tweets: Vec<Tweet>,
    pub split: Split,
}

impl User {
    pub fn coord(&self) -> (f64, f64) {
        (self.latitude, self.longitude)
    }
}

/// All of a user's processed tweets concatenated, plus the raw handles they mention.
#[derive(Debug, Clone, PartialEq)]
pub struct TweetDocument {
    pub user_id: String,
    pub tokens: Vec<String>,
    pub mention_targets: Vec<String>,
}

/// Immutable collection of users in file order, with one document per user.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    users: Vec<User>,
    documents: Vec<TweetDocument>,
    index: HashMap<String, usize>,
}

impl Corpus {
    /// Validate users and build their documents.
    pub fn from_users(users: Vec<User>, preprocessor: &Preprocessor) -> Result<Self, CorpusError> {
        let mut index = HashMap::with_capacity(users.len());
        for (i, user) in users.iter().enumerate() {
            validate_user(user, i + 1)?;
            if index.insert(user.user_id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateUser {
                    line: i + 1,
                    user_id: user.user_id.clone(),
                });
            }
        }
        let documents = users
            .iter()
            .map(|u| build_document(u, preprocessor))
            .collect();
        Ok(Self {
            users,
            documents,
            index,
        })
    }

    pub fn users(&self) -> &[User] {
        &self.users
    }

    pub fn documents(&self) -> &[TweetDocument] {
        &self.documents
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    pub fn position(&self, user_id: &str) -> Option<usize> {
        self.index.get(user_id).copied()
    }

    pub fn user(&self, user_id: &str) -> Option<&User> {
        self.position(user_id).map(|i| &self.users[i])
    }

    pub fn document(&self, user_id: &str) -> Option<&TweetDocument> {
        self.position(user_id).map(|i| &self.documents[i])
    }

    /// Positions of users in the given split, in file order.
    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        self.users
            .iter()
            .enumerate()
            .filter(|(_, u)| u.split == split)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn split_counts(&self) -> BTreeMap<Split, usize> {
        let mut counts: BTreeMap<Split, usize> = Split::ALL.iter().map(|s| (*s, 0)).collect();
        for user in &self.users {
            *counts.entry(user.split).or_default() += 1;
        }
        counts
    }
}

fn validate_user(user: &User, line: usize) -> Result<(), CorpusError> {
    if user.user_id.trim().is_empty() {
        return Err(malformed(line, "user_id", "empty"));
    }
    if !(-90.0..=90.0).contains(&user.latitude) {
        return Err(CorpusError::OutOfRange {
            line,
            field: "latitude",
            value: user.latitude,
        });
    }
    if !(-180.0..180.0).contains(&user.longitude) {
        return Err(CorpusError::OutOfRange {
            line,
            field: "longitude",
            value: user.longitude,
        });
    }
    if user.tweets.is_empty() {
        return Err(malformed(line, "tweets", "at least one tweet is required"));
    }
    if user.tweets.iter().any(|t| t.text.trim().is_empty()) {
        return Err(malformed(line, "text", "tweet text is empty"));
    }
    Ok(())
}

fn build_document(user: &User, preprocessor: &Preprocessor) -> TweetDocument {
    let mut tokens = Vec::new();
    let mut mention_targets = Vec::new();
    for tweet in &user.tweets {
        tokens.extend(preprocessor.tokenize(&tweet.text));
        mention_targets.extend(extract_mentions(&tweet.text));
    }
    TweetDocument {
        user_id: user.user_id.clone(),
        tokens,
        mention_targets,
    }
}

fn malformed(line: usize, field: &'static str, reason: impl Into<String>) -> CorpusError {
    CorpusError::Malformed {
        line,
        field,
        reason: reason.into(),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn load_corpus(
    path: &Path,
    format: CorpusFormat,
    preprocessor: &Preprocessor,
) -> Result<Corpus, CorpusError> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let reader = BufReader::new(file);
    let mut users = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let user = match format {
            CorpusFormat::Jsonl => parse_jsonl_record(&line, line_no)?,
            CorpusFormat::Tsv => parse_tsv_record(&line, line_no)?,
        };
        validate_user(&user, line_no)?;
        if seen.insert(user.user_id.clone(), line_no).is_some() {
            return Err(CorpusError::DuplicateUser {
                line: line_no,
                user_id: user.user_id,
            });
        }
        users.push(user);
    }
    Corpus::from_users(users, preprocessor)
}

fn parse_jsonl_record(line: &str, line_no: usize) -> Result<User, CorpusError> {
    let value: Value = serde_json::from_str(line)
        .map_err(|e| malformed(line_no, "record", format!("invalid JSON: {e}")))?;
    let obj = value
        .as_object()
        .ok_or_else(|| malformed(line_no, "record", "expected a JSON object"))?;
    let user_id = obj
        .get("user_id")
        .ok_or_else(|| malformed(line_no, "user_id", "missing"))?;
    let user_id = match user_id {
        Value::String(s) => s.clone(),
        Value::Number(n) => n.to_string(),
        _ => return Err(malformed(line_no, "user_id", "expected a string")),
    };
    let number = |field: &'static str| -> Result<f64, CorpusError> {
        obj.get(field)
            .ok_or_else(|| malformed(line_no, field, "missing"))?
            .as_f64()
            .ok_or_else(|| malformed(line_no, field, "expected a number"))
    };
    let latitude = number("lat")?;
    let longitude = number("lon")?;
    let split = obj
        .get("split")
        .ok_or_else(|| malformed(line_no, "split", "missing"))?
        .as_str()
        .ok_or_else(|| malformed(line_no, "split", "expected a string"))?
        .parse::<Split>()
        .map_err(|e| malformed(line_no, "split", e))?;
    let tweets = obj
        .get("tweets")
        .ok_or_else(|| malformed(line_no, "tweets", "missing"))?
        .as_array()
        .ok_or_else(|| malformed(line_no, "tweets", "expected an array"))?
        .iter()
        .map(|t| {
            let text = t
                .get("text")
                .and_then(Value::as_str)
                .ok_or_else(|| malformed(line_no, "text", "missing or not a string"))?
                .to_string();
            let timestamp_utc = match t.get("ts") {
                None | Some(Value::Null) => None,
                Some(v) => Some(
                    v.as_i64()
                        .ok_or_else(|| malformed(line_no, "ts", "expected integer seconds"))?,
                ),
            };
            Ok(Tweet {
                text,
                timestamp_utc,
            })
        })
        .collect::<Result<Vec<_>, CorpusError>>()?;
    Ok(User {
        user_id,
        latitude,
        longitude,
        tweets,
        split,
    })
}

fn parse_tsv_record(line: &str, line_no: usize) -> Result<User, CorpusError> {
    let mut cols = line.splitn(5, '\t');
    let mut next = |field: &'static str| {
        cols.next()
            .ok_or_else(|| malformed(line_no, field, "missing column"))
    };
    let user_id = next("user_id")?.to_string();
    let latitude = next("latitude")?
        .trim()
        .parse::<f64>()
        .map_err(|e| malformed(line_no, "latitude", e.to_string()))?;
    let longitude = next("longitude")?
        .trim()
        .parse::<f64>()
        .map_err(|e| malformed(line_no, "longitude", e.to_string()))?;
    let split = next("split")?
        .parse::<Split>()
        .map_err(|e| malformed(line_no, "split", e))?;
    let text = next("text")?.to_string();
    Ok(User {
        user_id,
        latitude,
        longitude,
        tweets: vec![Tweet {
            text,
            timestamp_utc: None,
        }],
        split,
    })
}

/// Write a corpus back out. JSONL is lossless; TSV joins a user's tweets with
/// spaces and drops timestamps.
pub fn save_corpus(corpus: &Corpus, path: &Path, format: CorpusFormat) -> Result<(), CorpusError> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    for user in corpus.users() {
        let line = match format {
            CorpusFormat::Jsonl => jsonl_line(user),
            CorpusFormat::Tsv => {
                let text = user
                    .tweets
                    .iter()
                    .map(|t| t.text.replace(['\t', '\n', '\r'], " "))
                    .collect::<Vec<_>>()
                    .join(" ");
                format!(
                    "{}\t{}\t{}\t{}\t{}",
                    user.user_id, user.latitude, user.longitude, user.split, text
                )
            }
        };
        writeln!(out, "{line}").map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

pub(crate) fn jsonl_line(user: &User) -> String {
    let tweets: Vec<Value> = user
        .tweets
        .iter()
        .map(|t| match t.timestamp_utc {
            Some(ts) => json!({"text": t.text, "ts": ts}),
            None => json!({"text": t.text}),
        })
        .collect();
    json!({
        "user_id": user.user_id,
        "lat": user.latitude,
        "lon": user.longitude,
        "split": user.split.as_str(),
        "tweets": tweets,
    })
    .to_string()
}

/// Posting-hour histogram (UTC), scaled to unit length. Users with no
/// timestamps get the zero vector.
pub fn timestamp_feature(user: &User) -> [f64; 24] {
    let hist = hour_histogram(user);
    let norm = hist.iter().map(|c| (*c as f64).powi(2)).sum::<f64>().sqrt();
    let mut out = [0.0; 24];
    if norm > 0.0 {
        for (o, c) in out.iter_mut().zip(hist) {
            *o = c as f64 / norm;
        }
    }
    out
}

/// Raw per-hour tweet counts.
pub fn hour_histogram(user: &User) -> [u64; 24] {
    let mut hist = [0u64; 24];
    for ts in user.tweets.iter().filter_map(|t| t.timestamp_utc) {
        hist[(ts.rem_euclid(86_400) / 3_600) as usize] += 1;
    }
    hist
}
