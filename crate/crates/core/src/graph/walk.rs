//! Second-order biased random walks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{GraphError, UserGraph};
use crate::util::mix_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkConfig {
    pub walk_length: usize,
    pub walks_per_node: usize,
    /// Return parameter.
    pub p: f64,
    /// In-out parameter.
    pub q: f64,
    pub seed: u64,
}

impl Default for WalkConfig {
    fn default() -> Self {
        Self {
            walk_length: 80,
            walks_per_node: 10,
            p: 1.0,
            q: 1.0,
            seed: 1,
        }
    }
}

impl WalkConfig {
    pub fn validate(&self) -> Result<(), GraphError> {
        if self.walk_length < 2 {
            return Err(GraphError::InvalidConfig("walk_length must be at least 2".into()));
        }
        if !(self.p > 0.0 && self.q > 0.0) || !self.p.is_finite() || !self.q.is_finite() {
            return Err(GraphError::InvalidConfig("p and q must be positive and finite".into()));
        }
        Ok(())
    }
}

/// Unnormalized score of stepping `cur -> w` having arrived from `prev`.
fn score(graph: &UserGraph, prev: Option<usize>, w: usize, weight: u64, p: f64, q: f64) -> f64 {
    let bias = match prev {
        None => 1.0,
        Some(u) if u == w => 1.0 / p,
        Some(u) if graph.neighbors(u).contains_key(&w) => 1.0,
        Some(_) => 1.0 / q,
    };
    weight as f64 * bias
}

/// Normalized probabilities of every neighbor of `cur`. Empty if `cur` has
/// no neighbors.
pub fn transition_probs(graph: &UserGraph, prev: Option<usize>, cur: usize, p: f64, q: f64) -> Vec<(usize, f64)> {
    let scores: Vec<(usize, f64)> = graph
        .neighbors(cur)
        .iter()
        .map(|(&w, &wt)| (w, score(graph, prev, w, wt, p, q)))
        .collect();
    let total: f64 = scores.iter().map(|s| s.1).sum();
    scores.into_iter().map(|(w, s)| (w, s / total)).collect()
}

/// Draw the next node. `None` at a dead end.
pub fn sample_next<R: Rng>(graph: &UserGraph, prev: Option<usize>, cur: usize, p: f64, q: f64, rng: &mut R) -> Option<usize> {
    let nbrs = graph.neighbors(cur);
    let total: f64 = nbrs.iter().map(|(&w, &wt)| score(graph, prev, w, wt, p, q)).sum();
    let mut x = rng.random::<f64>() * total;
    let mut last = None;
    for (&w, &wt) in nbrs {
        x -= score(graph, prev, w, wt, p, q);
        last = Some(w);
        if x < 0.0 {
            break;
        }
    }
    last
}

/// `walks_per_node` walks from every non-isolated node, ordered by round and
/// then node. Walk `k` from node `u` has its own generator, so the output does
/// not depend on thread count.
pub fn generate_walks(graph: &UserGraph, config: &WalkConfig) -> Result<Vec<Vec<u32>>, GraphError> {
    config.validate()?;
    let starts: Vec<usize> = (0..graph.len()).filter(|&u| !graph.is_isolated(u)).collect();
    let jobs: Vec<(usize, usize)> = (0..config.walks_per_node)
        .flat_map(|r| starts.iter().map(move |&u| (r, u)))
        .collect();
    Ok(jobs
        .par_iter()
        .map(|&(r, start)| {
            let stream = (r * graph.len() + start) as u64;
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, stream));
            let mut walk = vec![start as u32];
            let mut prev = None;
            let mut cur = start;
            while walk.len() < config.walk_length {
                match sample_next(graph, prev, cur, config.p, config.q, &mut rng) {
                    Some(next) => {
                        walk.push(next as u32);
                        prev = Some(cur);
                        cur = next;
                    }
                    None => break,
                }
            }
            walk
        })
        .collect())
}
