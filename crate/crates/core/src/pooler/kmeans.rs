//! K-means with cosine assignment and magnitude-preserving mean centroids.

use std::collections::HashSet;

use log::debug;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{
    cosine_distance_with_norms, norm, PoolProvenance, WeightPool, WeightVector, NEAR_ZERO_NORM,
};
use crate::error::{Error, Result};

struct Centroids {
    values: Vec<Vec<f32>>,
    norms: Vec<f64>,
}

impl Centroids {
    fn from_values(values: Vec<Vec<f32>>) -> Self {
        let norms = values.iter().map(|c| norm(c)).collect();
        Centroids { values, norms }
    }

    /// Nearest centroid by cosine distance, lowest index on ties.
    fn nearest(&self, v: &[f32], nv: f64) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (k, (c, &nc)) in self.values.iter().zip(&self.norms).enumerate() {
            let d = cosine_distance_with_norms(v, nv, c, nc);
            if d < best.1 {
                best = (k, d);
            }
        }
        best
    }
}

/// Clusters `vectors` into `s` centroids.
///
/// Assignment uses cosine distance; each centroid is the plain mean of its
/// members so that magnitude survives. Initialization is k-means++ (D²
/// sampling on cosine distance) driven by a ChaCha stream seeded with
/// `seed`. Near-zero vectors are dropped before clustering. Stops when the
/// assignment no longer changes or after `max_iter` centroid updates.
pub fn cluster_kmeans_cosine(
    vectors: &[WeightVector],
    s: usize,
    seed: u64,
    max_iter: usize,
) -> Result<WeightPool> {
    if s == 0 {
        return Err(Error::InvalidConfig("pool size must be positive".into()));
    }
    let usable: Vec<&[f32]> = vectors
        .iter()
        .filter(|v| v.norm() >= NEAR_ZERO_NORM)
        .map(|v| v.values())
        .collect();
    if usable.is_empty() {
        return Err(Error::TooFewVectors { need: s, have: 0 });
    }
    let n = usable[0].len();
    if usable.iter().any(|v| v.len() != n) {
        return Err(Error::ShapeMismatch("vectors of differing length".into()));
    }
    let distinct = usable
        .iter()
        .map(|v| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>())
        .collect::<HashSet<_>>()
        .len();
    if distinct < s {
        return Err(Error::TooFewVectors {
            need: s,
            have: distinct,
        });
    }
    let norms: Vec<f64> = usable.iter().map(|v| norm(v)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = Centroids::from_values(init_plus_plus(&usable, &norms, s, &mut rng));

    // Convergence compares raw nearest-centroid assignments, before empty
    // clusters are refilled.
    let mut previous: Vec<usize> = Vec::new();
    let mut iterations = 0;
    while iterations < max_iter {
        let (next, dists) = assign_all(&usable, &norms, &centroids);
        if next == previous {
            break;
        }
        previous = next.clone();
        let mut assignment = next;
        refill_empty_clusters(&mut assignment, dists, s);
        centroids = Centroids::from_values(mean_centroids(&usable, &assignment, s, n));
        iterations += 1;
    }
    let (final_assignment, dists) = assign_all(&usable, &norms, &centroids);
    // Fixed summation order keeps the reported inertia reproducible.
    let inertia: f64 = dists.iter().sum();
    debug!(
        "k-means: {} vectors, S={s}, {iterations} updates, inertia {inertia:.6}, converged={}",
        usable.len(),
        final_assignment == previous
    );

    WeightPool::new(
        centroids.values.into_iter().map(WeightVector).collect(),
        PoolProvenance {
            seed,
            iterations,
            inertia,
        },
    )
}

fn init_plus_plus(usable: &[&[f32]], norms: &[f64], s: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f32>> {
    let mut chosen: Vec<usize> = Vec::with_capacity(s);
    chosen.push(rng.gen_range(0..usable.len()));
    let mut closest: Vec<f64> = vec![f64::INFINITY; usable.len()];
    while chosen.len() < s {
        let last = *chosen.last().expect("non-empty");
        closest
            .par_iter_mut()
            .enumerate()
            .for_each(|(i, d)| {
                let dist = cosine_distance_with_norms(usable[i], norms[i], usable[last], norms[last]).max(0.0);
                if dist < *d {
                    *d = dist;
                }
            });
        let total: f64 = closest.iter().map(|d| d * d).sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = None;
            for (i, d) in closest.iter().enumerate() {
                let w = d * d;
                if w > 0.0 {
                    if target < w {
                        pick = Some(i);
                        break;
                    }
                    target -= w;
                }
            }
            // Rounding can run off the end; fall back to the last candidate.
            pick.or_else(|| closest.iter().rposition(|&d| d > 0.0))
        } else {
            None
        };
        let pick = pick.unwrap_or_else(|| {
            // Every remaining vector is parallel to a chosen one: take the
            // first vector that is not bitwise equal to any seed.
            (0..usable.len())
                .find(|&i| chosen.iter().all(|&c| !super::bit_equal(usable[i], usable[c])))
                .expect("distinct count checked by caller")
        });
        chosen.push(pick);
    }
    chosen.into_iter().map(|i| usable[i].to_vec()).collect()
}

fn assign_all(usable: &[&[f32]], norms: &[f64], centroids: &Centroids) -> (Vec<usize>, Vec<f64>) {
    usable
        .par_iter()
        .zip(norms.par_iter())
        .map(|(v, &nv)| centroids.nearest(v, nv))
        .unzip()
}

/// Gives each empty cluster the member farthest from its own centroid,
/// taken only from clusters that keep at least one member.
fn refill_empty_clusters(assignment: &mut [usize], mut dists: Vec<f64>, s: usize) {
    let mut counts = vec![0usize; s];
    for &a in assignment.iter() {
        counts[a] += 1;
    }
    for k in 0..s {
        if counts[k] > 0 {
            continue;
        }
        let mut donor: Option<usize> = None;
        for (i, &d) in dists.iter().enumerate() {
            if counts[assignment[i]] > 1 && donor.is_none_or(|j| d > dists[j]) {
                donor = Some(i);
            }
        }
        if let Some(i) = donor {
            counts[assignment[i]] -= 1;
            assignment[i] = k;
            counts[k] = 1;
            dists[i] = f64::NEG_INFINITY;
        }
    }
}

fn mean_centroids(usable: &[&[f32]], assignment: &[usize], s: usize, n: usize) -> Vec<Vec<f32>> {
    let mut sums = vec![vec![0.0f64; n]; s];
    let mut counts = vec![0usize; s];
    for (v, &a) in usable.iter().zip(assignment) {
        counts[a] += 1;
        for (acc, &x) in sums[a].iter_mut().zip(v.iter()) {
            *acc += x as f64;
        }
    }
    sums.into_iter()
        .zip(counts)
        .map(|(sum, count)| {
            let c = count.max(1) as f64;
            sum.into_iter().map(|x| (x / c) as f32).collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pooler::cosine_distance;

    fn basis(n: usize, i: usize, scale: f32) -> WeightVector {
        let mut v = vec![0.0; n];
        v[i] = scale;
        WeightVector(v)
    }

    #[test]
    fn perfect_clustering_recovers_orthogonal_set() {
        let s = 6;
        let originals: Vec<WeightVector> = (0..s).map(|i| basis(8, i, 1.0 + i as f32)).collect();
        let mut input = Vec::new();
        for _ in 0..s {
            input.extend(originals.iter().cloned());
        }
        let pool = cluster_kmeans_cosine(&input, s, 42, 100).unwrap();
        assert_eq!(pool.provenance.inertia, 0.0);
        for o in &originals {
            assert!(pool.vectors().contains(o), "missing {o:?}");
        }
    }

    #[test]
    fn seed_determines_pool() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let input: Vec<WeightVector> = (0..300)
            .map(|_| WeightVector((0..8).map(|_| rng.gen_range(-1.0f32..1.0)).collect()))
            .collect();
        let a = cluster_kmeans_cosine(&input, 16, 5, 50).unwrap();
        let b = cluster_kmeans_cosine(&input, 16, 5, 50).unwrap();
        assert_eq!(a, b);
        let c = cluster_kmeans_cosine(&input, 16, 6, 50).unwrap();
        assert_ne!(a.vectors(), c.vectors());
    }

    #[test]
    fn too_few_distinct_vectors() {
        let input = vec![basis(4, 0, 1.0), basis(4, 1, 1.0), basis(4, 0, 1.0)];
        assert!(matches!(
            cluster_kmeans_cosine(&input, 3, 0, 10),
            Err(Error::TooFewVectors { need: 3, have: 2 })
        ));
        let zeros = vec![WeightVector(vec![0.0; 4]); 5];
        assert!(matches!(
            cluster_kmeans_cosine(&zeros, 2, 0, 10),
            Err(Error::TooFewVectors { have: 0, .. })
        ));
    }

    #[test]
    fn parallel_vectors_still_yield_distinct_pool() {
        let input: Vec<WeightVector> = (1..=4).map(|k| basis(4, 0, k as f32)).collect();
        let pool = cluster_kmeans_cosine(&input, 2, 1, 10).unwrap();
        assert_eq!(pool.len(), 2);
    }

    #[test]
    fn centroids_keep_member_magnitude() {
        let input = vec![
            WeightVector(vec![2.0, 0.0]),
            WeightVector(vec![4.0, 0.0]),
            WeightVector(vec![0.0, 1.0]),
            WeightVector(vec![0.0, 3.0]),
        ];
        let pool = cluster_kmeans_cosine(&input, 2, 3, 10).unwrap();
        let mut got: Vec<Vec<f32>> = pool.vectors().iter().map(|v| v.0.clone()).collect();
        got.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(got, vec![vec![0.0, 2.0], vec![3.0, 0.0]]);
        assert!(cosine_distance(&got[0], &[0.0, 1.0]) < 1e-12);
    }
}
