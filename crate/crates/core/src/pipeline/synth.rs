//! Seeded synthetic corpora with clustered locations, vocabularies, mention
//! graphs and posting hours.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{jsonl_line, Split, Tweet, User};
use crate::geo::{haversine, EARTH_RADIUS_KM};
use crate::util::mix_seed;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    Invalid(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

const DEFAULT_CENTERS: [(f64, f64); 10] = [
    (40.71, -74.01),
    (51.51, -0.13),
    (35.68, 139.69),
    (-33.87, 151.21),
    (-23.55, -46.63),
    (30.04, 31.24),
    (55.76, 37.62),
    (19.08, 72.88),
    (34.05, -118.24),
    (6.52, 3.38),
];

/// 2010-03-01T00:00:00Z.
const EPOCH: i64 = 1_267_401_600;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub num_clusters: usize,
    pub users_per_cluster: usize,
    /// Cluster centers; missing ones are drawn at random, well apart.
    pub centers: Vec<(f64, f64)>,
    /// Users sit at an isotropic Gaussian offset with per-axis scale
    /// `dispersion_km / 3`, so about 99% fall within `dispersion_km`.
    pub dispersion_km: f64,
    pub vocab_per_cluster: usize,
    pub shared_vocab: usize,
    /// Probability that a word is drawn from the shared vocabulary.
    pub overlap: f64,
    pub tweets_per_user: usize,
    pub words_per_tweet: usize,
    /// Chance that a pair of users in the same cluster mention each other.
    pub p_intra: f64,
    pub p_inter: f64,
    /// Modal posting hour per cluster (UTC); missing ones are spread evenly.
    pub modal_hours: Vec<f64>,
    /// Standard deviation of posting times around the mode, in hours.
    pub hour_jitter: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            num_clusters: 10,
            users_per_cluster: 100,
            centers: Vec::new(),
            dispersion_km: 50.0,
            vocab_per_cluster: 40,
            shared_vocab: 40,
            overlap: 0.0,
            tweets_per_user: 10,
            words_per_tweet: 8,
            p_intra: 0.05,
            p_inter: 0.0,
            modal_hours: Vec::new(),
            hour_jitter: 0.5,
            seed: 1,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Invalid(m));
        if self.num_clusters == 0 || self.users_per_cluster == 0 {
            return bad("need at least one cluster and one user per cluster".into());
        }
        for (name, p) in [("overlap", self.overlap), ("p_intra", self.p_intra), ("p_inter", self.p_inter)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must be in [0, 1], got {p}"));
            }
        }
        if self.centers.len() > self.num_clusters || self.modal_hours.len() > self.num_clusters {
            return bad("more centers or modal hours than clusters".into());
        }
        if self.centers.iter().any(|&(lat, lon)| !(-90.0..=90.0).contains(&lat) || !(-180.0..180.0).contains(&lon)) {
            return bad("cluster center out of range".into());
        }
        if !(self.dispersion_km >= 0.0) || !(self.hour_jitter >= 0.0) {
            return bad("dispersion_km and hour_jitter must be non-negative".into());
        }
        if self.tweets_per_user == 0 || self.words_per_tweet == 0 {
            return bad("tweets_per_user and words_per_tweet must be positive".into());
        }
        if self.vocab_per_cluster == 0 && self.overlap < 1.0 {
            return bad("vocab_per_cluster is zero but overlap < 1".into());
        }
        if self.shared_vocab == 0 && self.overlap > 0.0 {
            return bad("shared_vocab is zero but overlap > 0".into());
        }
        Ok(())
    }

    pub fn cluster_centers(&self) -> Vec<(f64, f64)> {
        let mut centers = self.centers.clone();
        for &c in DEFAULT_CENTERS.iter().skip(centers.len()) {
            if centers.len() == self.num_clusters {
                break;
            }
            centers.push(c);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.seed, 0xCE47E5));
        let min_sep = (10.0 * self.dispersion_km).max(500.0);
        let mut tries = 0;
        while centers.len() < self.num_clusters {
            let lat = rng.random_range(-1.0f64..1.0).asin().to_degrees();
            let lon = rng.random_range(-180.0..180.0);
            tries += 1;
            if tries > 100_000 || centers.iter().all(|&c| haversine(c, (lat, lon)) >= min_sep) {
                centers.push((lat, lon));
            }
        }
        centers
    }

    pub fn cluster_hours(&self) -> Vec<f64> {
        let mut hours = self.modal_hours.clone();
        for c in hours.len()..self.num_clusters {
            hours.push(24.0 * c as f64 / self.num_clusters as f64);
        }
        hours
    }

    /// Cluster of the user at position `i` in the generated corpus.
    pub fn cluster_of(&self, i: usize) -> usize {
        i / self.users_per_cluster
    }
}

/// Point at `distance_km` from `origin` along `bearing` (radians).
fn destination(origin: (f64, f64), bearing: f64, distance_km: f64) -> (f64, f64) {
    let (lat1, lon1) = (origin.0.to_radians(), origin.1.to_radians());
    let d = distance_km / EARTH_RADIUS_KM;
    let lat2 = (lat1.sin() * d.cos() + lat1.cos() * d.sin() * bearing.cos()).asin();
    let lon2 = lon1 + (bearing.sin() * d.sin() * lat1.cos()).atan2(d.cos() - lat1.sin() * lat2.sin());
    let lon = (lon2.to_degrees() + 540.0).rem_euclid(360.0) - 180.0;
    (lat2.to_degrees(), if lon >= 180.0 { lon - 360.0 } else { lon })
}

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

fn make_word<R: Rng>(rng: &mut R) -> String {
    let syllables = rng.random_range(3..=4);
    let mut w = String::new();
    for _ in 0..syllables {
        w.push(CONSONANTS[rng.random_range(0..CONSONANTS.len())] as char);
        w.push(VOWELS[rng.random_range(0..VOWELS.len())] as char);
    }
    w
}

/// Distinct pseudo-words: one list per cluster, then the shared list.
fn vocabularies(spec: &SynthSpec) -> (Vec<Vec<String>>, Vec<String>) {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, 0x70CAB));
    let mut seen = BTreeSet::new();
    let mut fresh = |n: usize| -> Vec<String> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let w = make_word(&mut rng);
            if seen.insert(w.clone()) {
                out.push(w);
            }
        }
        out
    };
    let clusters = (0..spec.num_clusters).map(|_| fresh(spec.vocab_per_cluster)).collect();
    let shared = fresh(spec.shared_vocab);
    (clusters, shared)
}

pub fn user_id(i: usize) -> String {
    format!("user{i:05}")
}

/// Users ordered by cluster. Splits are 70/15/15 within each cluster.
pub fn generate_users(spec: &SynthSpec) -> Result<Vec<User>, SynthError> {
    spec.validate()?;
    let centers = spec.cluster_centers();
    let hours = spec.cluster_hours();
    let (vocab, shared) = vocabularies(spec);
    let n = spec.num_clusters * spec.users_per_cluster;
    let sigma = spec.dispersion_km / 3.0;
    let jitter = Normal::new(0.0, spec.hour_jitter).expect("non-negative jitter");

    let mut users = Vec::with_capacity(n);
    for c in 0..spec.num_clusters {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, 1000 + c as u64));
        let mut splits: Vec<Split> = Vec::with_capacity(spec.users_per_cluster);
        let n_train = (0.7 * spec.users_per_cluster as f64).round() as usize;
        let n_dev = (0.15 * spec.users_per_cluster as f64).round() as usize;
        for k in 0..spec.users_per_cluster {
            splits.push(if k < n_train {
                Split::Train
            } else if k < n_train + n_dev {
                Split::Dev
            } else {
                Split::Test
            });
        }
        splits.shuffle(&mut rng);
        for split in splits {
            let i = users.len();
            // Rayleigh distance: isotropic 2-D Gaussian in the tangent plane.
            let u: f64 = rng.random_range(f64::EPSILON..1.0);
            let dist = sigma * (-2.0 * u.ln()).sqrt();
            let bearing = rng.random_range(0.0..std::f64::consts::TAU);
            let (lat, lon) = destination(centers[c], bearing, dist);
            let tweets = (0..spec.tweets_per_user)
                .map(|_| {
                    let words: Vec<&str> = (0..spec.words_per_tweet)
                        .map(|_| {
                            let pool = if rng.random_bool(spec.overlap) { &shared } else { &vocab[c] };
                            pool[rng.random_range(0..pool.len())].as_str()
                        })
                        .collect();
                    let day = rng.random_range(0..30i64);
                    let hour = (hours[c] + 0.5 + jitter.sample(&mut rng)).rem_euclid(24.0);
                    Tweet {
                        text: words.join(" "),
                        timestamp_utc: Some(EPOCH + day * 86_400 + (hour * 3600.0) as i64),
                    }
                })
                .collect();
            users.push(User {
                user_id: user_id(i),
                latitude: lat.clamp(-90.0, 90.0),
                longitude: lon,
                tweets,
                split,
            });
        }
    }

    // Mentions: every unordered pair independently, homophily via p_intra.
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, 0x3E27));
    for i in 0..n {
        for j in i + 1..n {
            let p = if spec.cluster_of(i) == spec.cluster_of(j) { spec.p_intra } else { spec.p_inter };
            if p > 0.0 && rng.random_bool(p) {
                let (from, to) = if rng.random_bool(0.5) { (i, j) } else { (j, i) };
                let t = rng.random_range(0..spec.tweets_per_user);
                let handle = format!(" @{}", user_id(to));
                users[from].tweets[t].text.push_str(&handle);
            }
        }
    }
    Ok(users)
}

/// Write the corpus as JSONL; returns the number of users.
pub fn write_synthetic_corpus(spec: &SynthSpec, path: &Path) -> Result<usize, SynthError> {
    let users = generate_users(spec)?;
    let io = |source| SynthError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    for u in &users {
        writeln!(out, "{}", jsonl_line(u)).map_err(io)?;
    }
    out.flush().map_err(io)?;
    Ok(users.len())
}
