//! Tweet normalization: lowercasing, URL and punctuation placeholders,
//! stop-word removal and optional Porter stemming.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{porter, CorpusError};

pub const URL_TOKEN: &str = "<url>";
pub const PUNCT_TOKEN: &str = "<punct>";

const BUILTIN_STOPWORDS: &str = include_str!("../../resources/stopwords_en.txt");

/// Where stop-words come from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind", content = "path")]
pub enum StopwordSource {
    /// The English list shipped with the crate.
    #[default]
    Builtin,
    None,
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    #[serde(default)]
    pub stopwords: StopwordSource,
    #[serde(default)]
    pub stem: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            stopwords: StopwordSource::Builtin,
            stem: false,
        }
    }
}

fn token_pattern() -> &'static Regex {
    static PATTERN: OnceLock<Regex> = OnceLock::new();
    PATTERN.get_or_init(|| {
        Regex::new(
            r"(?x)
            (?P<special><url>|<punct>)
            | (?P<url>(?i:https?://|www\.)\S+)
            | (?P<mention>@[A-Za-z0-9_]+)
            | (?P<word>[\p{L}\p{M}\p{N}_]+(?:'[\p{L}\p{M}\p{N}_]+)*)
            | (?P<punct>[^\s\p{L}\p{M}\p{N}_@]+|@)
            ",
        )
        .expect("static token pattern")
    })
}

fn mention_pattern() -> &'static Regex {
    static PATTERN: OnceLock<Regex> = OnceLock::new();
    PATTERN.get_or_init(|| Regex::new(r"@([A-Za-z0-9_]+)").expect("static mention pattern"))
}

/// Handles mentioned in raw text (without the `@`), in order of appearance.
/// Mentions inside URLs are not counted.
pub fn extract_mentions(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for caps in token_pattern().captures_iter(text) {
        if let Some(m) = caps.name("mention") {
            let handle = mention_pattern()
                .captures(m.as_str())
                .and_then(|c| c.get(1))
                .expect("mention token matches mention pattern");
            out.push(handle.as_str().to_string());
        }
    }
    out
}

/// A compiled tokenizer. Cheap to share across threads.
#[derive(Debug, Clone)]
pub struct Preprocessor {
    stopwords: HashSet<String>,
    stem: bool,
}

impl Preprocessor {
    pub fn new(config: &PreprocessConfig) -> Result<Self, CorpusError> {
        let stopwords = match &config.stopwords {
            StopwordSource::Builtin => parse_stopwords(BUILTIN_STOPWORDS),
            StopwordSource::None => HashSet::new(),
            StopwordSource::File(path) => load_stopwords(path)?,
        };
        Ok(Self {
            stopwords,
            stem: config.stem,
        })
    }

    pub fn stopwords(&self) -> &HashSet<String> {
        &self.stopwords
    }

    pub fn tokenize(&self, text: &str) -> Vec<String> {
        let mut tokens = Vec::new();
        for caps in token_pattern().captures_iter(text) {
            if let Some(m) = caps.name("special") {
                tokens.push(m.as_str().to_string());
            } else if caps.name("url").is_some() {
                tokens.push(URL_TOKEN.to_string());
            } else if let Some(m) = caps.name("mention") {
                tokens.push(m.as_str().to_lowercase());
            } else if let Some(m) = caps.name("word") {
                let word = m.as_str().to_lowercase();
                if self.stopwords.contains(&word) {
                    continue;
                }
                tokens.push(if self.stem { porter::stem(&word) } else { word });
            } else {
                tokens.push(PUNCT_TOKEN.to_string());
            }
        }
        tokens
    }
}

fn parse_stopwords(text: &str) -> HashSet<String> {
    text.lines()
        .map(|l| l.trim())
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| l.to_lowercase())
        .collect()
}

fn load_stopwords(path: &Path) -> Result<HashSet<String>, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(parse_stopwords(&text))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn plain() -> Preprocessor {
        Preprocessor::new(&PreprocessConfig {
            stopwords: StopwordSource::None,
            stem: false,
        })
        .unwrap()
    }

    #[test]
    fn url_and_punctuation_placeholders() {
        assert_eq!(
            plain().tokenize("Check http://t.co/x NOW!!"),
            ["check", "<url>", "now", "<punct>"]
        );
        let with_stops = Preprocessor::new(&PreprocessConfig::default()).unwrap();
        assert_eq!(
            with_stops.tokenize("Check http://t.co/x NOW!!"),
            ["check", "<url>", "<punct>"]
        );
    }

    #[test]
    fn empty_input() {
        assert!(plain().tokenize("").is_empty());
        assert!(plain().tokenize("   \t\n").is_empty());
    }

    #[test]
    fn stemming_toggle() {
        let stemmer = Preprocessor::new(&PreprocessConfig {
            stopwords: StopwordSource::None,
            stem: true,
        })
        .unwrap();
        assert_eq!(stemmer.tokenize("running runs"), ["run", "run"]);
        assert_eq!(plain().tokenize("running runs"), ["running", "runs"]);
    }

    #[test]
    fn mentions_are_tokens_and_extracted() {
        let text = "RT @Alice_1: hi @bob!! see www.x.com/@carol";
        assert_eq!(
            plain().tokenize(text),
            ["rt", "@alice_1", "<punct>", "hi", "@bob", "<punct>", "see", "<url>"]
        );
        assert_eq!(extract_mentions(text), ["Alice_1", "bob"]);
    }

    #[test]
    fn lone_at_sign_is_punctuation() {
        assert_eq!(plain().tokenize("a @ b"), ["a", "<punct>", "b"]);
    }

    #[test]
    fn stopword_file_overrides_builtin() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stops.txt");
        std::fs::write(&path, "# comment\nfoo\n").unwrap();
        let p = Preprocessor::new(&PreprocessConfig {
            stopwords: StopwordSource::File(path),
            stem: false,
        })
        .unwrap();
        assert_eq!(p.tokenize("foo the bar"), ["the", "bar"]);
    }

    proptest! {
        #[test]
        fn idempotent_without_stemming(text in "[a-zA-Z0-9 @#!?.,:/'_<>é-]{0,60}", stops in any::<bool>()) {
            let p = Preprocessor::new(&PreprocessConfig {
                stopwords: if stops { StopwordSource::Builtin } else { StopwordSource::None },
                stem: false,
            }).unwrap();
            let once = p.tokenize(&text);
            let twice = p.tokenize(&once.join(" "));
            prop_assert_eq!(once, twice);
        }
    }
}
