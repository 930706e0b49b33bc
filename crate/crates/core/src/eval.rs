//! Accuracy, distance-error statistics and result files.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::haversine;
use crate::util::{median, Provenance};

/// "Better than 161 km" threshold.
pub const ACC_KM: f64 = 161.0;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("nothing to evaluate")]
    Empty,
    #[error("{predicted} predictions for {truths} truths")]
    LengthMismatch { predicted: usize, truths: usize },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error on {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

fn aligned(predicted: usize, truths: usize) -> Result<(), EvalError> {
    if predicted != truths {
        return Err(EvalError::LengthMismatch { predicted, truths });
    }
    if predicted == 0 {
        return Err(EvalError::Empty);
    }
    Ok(())
}

/// Percentage of exact class matches.
pub fn evaluate_classification(predicted: &[usize], truths: &[usize]) -> Result<f64, EvalError> {
    aligned(predicted.len(), truths.len())?;
    let hits = predicted.iter().zip(truths).filter(|(p, t)| p == t).count();
    Ok(100.0 * hits as f64 / predicted.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoStats {
    pub mean_km: f64,
    pub median_km: f64,
    pub acc_at_161: f64,
}

/// Percentage of errors strictly below `km`.
pub fn accuracy_within(errors_km: &[f64], km: f64) -> f64 {
    100.0 * errors_km.iter().filter(|e| **e < km).count() as f64 / errors_km.len() as f64
}

pub fn stats_from_errors(errors_km: &[f64]) -> Result<GeoStats, EvalError> {
    if errors_km.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(GeoStats {
        mean_km: errors_km.iter().sum::<f64>() / errors_km.len() as f64,
        median_km: median(errors_km).ok_or(EvalError::Empty)?,
        acc_at_161: accuracy_within(errors_km, ACC_KM),
    })
}

pub fn evaluate_geo(predicted: &[(f64, f64)], truths: &[(f64, f64)]) -> Result<GeoStats, EvalError> {
    aligned(predicted.len(), truths.len())?;
    let errors: Vec<f64> = predicted.iter().zip(truths).map(|(p, t)| haversine(*p, *t)).collect();
    stats_from_errors(&errors)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserResult {
    pub user_id: String,
    /// Class whose region holds the true location; absent when none does.
    pub true_class: Option<usize>,
    pub predicted_class: usize,
    pub true_lat: f64,
    pub true_lon: f64,
    pub predicted_lat: f64,
    pub predicted_lon: f64,
    pub error_km: f64,
}

impl UserResult {
    pub fn new(user_id: impl Into<String>, true_class: Option<usize>, predicted_class: usize, truth: (f64, f64), predicted: (f64, f64)) -> Self {
        Self {
            user_id: user_id.into(),
            true_class,
            predicted_class,
            true_lat: truth.0,
            true_lon: truth.1,
            predicted_lat: predicted.0,
            predicted_lon: predicted.1,
            error_km: haversine(truth, predicted),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub num_users: usize,
    /// Over users whose true class exists.
    pub accuracy_pct: f64,
    pub mean_km: f64,
    pub median_km: f64,
    pub acc_at_161: f64,
}

pub fn aggregate(results: &[UserResult]) -> Result<Aggregates, EvalError> {
    if results.is_empty() {
        return Err(EvalError::Empty);
    }
    let (pred, truth): (Vec<usize>, Vec<usize>) = results
        .iter()
        .filter_map(|r| r.true_class.map(|t| (r.predicted_class, t)))
        .unzip();
    let accuracy_pct = if truth.is_empty() { 0.0 } else { evaluate_classification(&pred, &truth)? };
    let errors: Vec<f64> = results.iter().map(|r| r.error_km).collect();
    let geo = stats_from_errors(&errors)?;
    Ok(Aggregates {
        num_users: results.len(),
        accuracy_pct,
        mean_km: geo.mean_km,
        median_km: geo.median_km,
        acc_at_161: geo.acc_at_161,
    })
}

/// Per-user CSV; `provenance` goes in a leading `#` comment line.
pub fn write_results_csv(results: &[UserResult], path: &Path, provenance: Option<&Provenance>) -> Result<(), EvalError> {
    let err = |source| EvalError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut file = std::fs::File::create(path).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    if let Some(p) = provenance {
        file.write_all(p.comment_line().as_bytes()).map_err(|source| EvalError::Io {
            path: path.to_path_buf(),
            source,
        })?;
    }
    let mut w = csv::Writer::from_writer(file);
    for r in results {
        w.serialize(r).map_err(err)?;
    }
    w.flush().map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_results_csv(path: &Path) -> Result<Vec<UserResult>, EvalError> {
    let err = |source| EvalError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path).map_err(err)?;
    r.deserialize().collect::<Result<Vec<UserResult>, _>>().map_err(err)
}

/// Markdown table with one row per labelled run.
pub fn comparison_table(rows: &[(String, Aggregates)]) -> String {
    let mut out = String::from("| run | users | acc % | mean km | median km | @161 % |\n|---|---:|---:|---:|---:|---:|\n");
    for (label, a) in rows {
        out.push_str(&format!(
            "| {label} | {} | {:.1} | {:.0} | {:.0} | {:.1} |\n",
            a.num_users, a.accuracy_pct, a.mean_km, a.median_km, a.acc_at_161
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn classification() {
        assert_eq!(evaluate_classification(&[1, 2, 3], &[1, 2, 3]).unwrap(), 100.0);
        assert_eq!(evaluate_classification(&[1, 0, 3, 0], &[1, 2, 3, 4]).unwrap(), 50.0);
        assert!(matches!(evaluate_classification(&[], &[]), Err(EvalError::Empty)));
        assert!(matches!(evaluate_classification(&[1], &[1, 2]), Err(EvalError::LengthMismatch { .. })));
    }

    #[test]
    fn geo_stats() {
        let pts = [(10.0, 10.0), (-30.0, 100.0)];
        assert_eq!(
            evaluate_geo(&pts, &pts).unwrap(),
            GeoStats {
                mean_km: 0.0,
                median_km: 0.0,
                acc_at_161: 100.0
            }
        );
        let s = stats_from_errors(&[100.0, 200.0]).unwrap();
        assert_eq!((s.mean_km, s.median_km, s.acc_at_161), (150.0, 150.0, 50.0));
        // Exactly 161 is a miss.
        assert_eq!(accuracy_within(&[161.0, 160.999], ACC_KM), 50.0);
        assert!(evaluate_geo(&[], &[]).is_err());
    }

    #[test]
    fn skewed_errors_have_median_below_mean() {
        let errors: Vec<f64> = (0..100).map(|i| if i < 90 { 10.0 + i as f64 * 0.1 } else { 3000.0 }).collect();
        let s = stats_from_errors(&errors).unwrap();
        assert!(s.median_km <= s.mean_km);
    }

    #[test]
    fn csv_round_trip_reproduces_aggregates() {
        let results = vec![
            UserResult::new("a", Some(0), 0, (40.7, -74.0), (40.1, -73.3)),
            UserResult::new("b", Some(1), 0, (34.05, -118.24), (40.1, -73.3)),
            UserResult::new("c", None, 2, (1.0 / 3.0, 2.0 / 7.0), (0.1, 0.2)),
        ];
        let agg = aggregate(&results).unwrap();
        assert_eq!(agg.accuracy_pct, 50.0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let prov = Provenance {
            config_hash: "abc".into(),
            seed: 4,
        };
        write_results_csv(&results, &path, Some(&prov)).unwrap();
        assert!(std::fs::read_to_string(&path).unwrap().starts_with("# config_hash=abc seed=4\n"));
        let back = read_results_csv(&path).unwrap();
        assert_eq!(back, results);
        assert_eq!(aggregate(&back).unwrap(), agg);
        let table = comparison_table(&[("s2".into(), agg)]);
        assert!(table.lines().nth(2).unwrap().starts_with("| s2 | 3 | 50.0 |"));
    }

    proptest! {
        #[test]
        fn acc_monotone_when_errors_grow(errors in prop::collection::vec(0.0f64..500.0, 1..50), grow in prop::collection::vec(0.0f64..100.0, 50)) {
            let bigger: Vec<f64> = errors.iter().zip(&grow).map(|(e, g)| e + g).collect();
            prop_assert!(accuracy_within(&bigger, ACC_KM) <= accuracy_within(&errors, ACC_KM));
        }
    }
}
