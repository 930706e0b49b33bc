//! k-means partition on raw (lat, lon) degrees.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{median_centroid, validate_users, ClassGeometry, GeoClass, GeoError, Located, Partition, PartitionParams};

pub const MAX_ITERATIONS: usize = 300;

fn sq_dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)
}

/// Index of the nearest center; ties go to the lowest index.
pub(crate) fn nearest(centers: &[(f64, f64)], p: (f64, f64)) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (i, c) in centers.iter().enumerate() {
        let d = sq_dist(*c, p);
        if d < best.0 {
            best = (d, i);
        }
    }
    best.1
}

fn plus_plus<R: Rng>(points: &[(f64, f64)], k: usize, rng: &mut R) -> Vec<(f64, f64)> {
    let mut centers = vec![points[rng.random_range(0..points.len())]];
    while centers.len() < k {
        let d2: Vec<f64> = points.iter().map(|p| sq_dist(centers[nearest(&centers, *p)], *p)).collect();
        // k <= distinct points, so some point is still uncovered.
        let pick = WeightedIndex::new(&d2).expect("a positive distance remains");
        centers.push(points[pick.sample(rng)]);
    }
    centers
}

/// Lloyd's iterations from k-means++ seeds until assignments stop changing or
/// `MAX_ITERATIONS`. An emptied cluster is re-seeded at the point farthest
/// from its current center.
pub fn build_kmeans_partition(users: &[Located], k: usize, seed: u64) -> Result<Partition, GeoError> {
    validate_users(users)?;
    if k == 0 {
        return Err(GeoError::InvalidParameter("k must be at least 1".into()));
    }
    let points: Vec<(f64, f64)> = users.iter().map(Located::coord).collect();
    let mut distinct: Vec<(f64, f64)> = points.clone();
    distinct.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    distinct.dedup();
    if k > distinct.len() {
        return Err(GeoError::TooManyClusters {
            k,
            distinct: distinct.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = plus_plus(&points, k, &mut rng);
    let mut assign: Vec<usize> = points.iter().map(|p| nearest(&centers, *p)).collect();
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let mut sums = vec![(0.0, 0.0, 0usize); k];
        for (p, &a) in points.iter().zip(&assign) {
            sums[a].0 += p.0;
            sums[a].1 += p.1;
            sums[a].2 += 1;
        }
        for (c, s) in centers.iter_mut().zip(&sums) {
            if s.2 > 0 {
                *c = (s.0 / s.2 as f64, s.1 / s.2 as f64);
            }
        }
        for j in 0..k {
            if sums[j].2 == 0 {
                let far = (0..points.len())
                    .max_by(|&a, &b| {
                        sq_dist(points[a], centers[assign[a]]).total_cmp(&sq_dist(points[b], centers[assign[b]]))
                    })
                    .expect("non-empty");
                centers[j] = points[far];
                assign[far] = j;
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(&centers, *p)).collect();
        if next == assign {
            break;
        }
        assign = next;
    }
    // Members are defined by the final centers so that assignment of a
    // training coordinate always returns its own class.
    let assign: Vec<usize> = points.iter().map(|p| nearest(&centers, *p)).collect();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &a) in assign.iter().enumerate() {
        members[a].push(i);
    }
    let classes: Vec<GeoClass> = members
        .into_iter()
        .enumerate()
        .filter(|(_, m)| !m.is_empty())
        .enumerate()
        .map(|(class_id, (j, m))| {
            let coords: Vec<(f64, f64)> = m.iter().map(|&i| points[i]).collect();
            GeoClass {
                class_id,
                geometry: ClassGeometry::Center {
                    lat: centers[j].0,
                    lon: centers[j].1,
                },
                members: m.iter().map(|&i| users[i].id.clone()).collect(),
                centroid: median_centroid(&coords),
                oversized: false,
                straddles_antimeridian: false,
            }
        })
        .collect();
    Ok(Partition::new(PartitionParams::Kmeans { k, seed, iterations }, classes, Vec::new()))
}
