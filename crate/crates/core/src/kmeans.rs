//! k-means over flattened trajectory features.
//!
//! Lloyd iterations with k-means++ seeding under squared Euclidean
//! distance. Points are processed in lexicographic order of their values,
//! so the result does not depend on the order the caller supplies them in.

use std::cmp::Ordering;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KMeansParams {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for KMeansParams {
    fn default() -> Self {
        KMeansParams {
            k: 1,
            seed: 0,
            max_iter: 300,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    /// Cluster index of every input point, in input order.
    pub assignments: Vec<usize>,
    /// Sum of squared distances to the assigned centroids.
    pub inertia: f64,
    pub iterations_run: usize,
    /// Inertia after each assignment step.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inertia_history: Vec<f64>,
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(centroids: &[Vec<f64>], x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = squared_distance(c, x);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Index of the nearest centroid; ties go to the lowest index.
pub fn assign(centroids: &[Vec<f64>], feature: &[f64]) -> Result<usize> {
    if centroids.is_empty() {
        return Err(Error::argument("no centroids"));
    }
    if let Some(c) = centroids.iter().find(|c| c.len() != feature.len()) {
        return Err(Error::argument(format!(
            "feature of length {} against centroid of length {}",
            feature.len(),
            c.len()
        )));
    }
    Ok(nearest(centroids, feature).0)
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

fn distinct_count(sorted: &[&Vec<f64>]) -> usize {
    if sorted.is_empty() {
        return 0;
    }
    1 + sorted
        .windows(2)
        .filter(|w| lex_cmp(w[0], w[1]).is_ne())
        .count()
}

/// k-means++ seeding: the first centroid is uniform, each further one is
/// drawn with probability proportional to its squared distance to the
/// closest centroid chosen so far.
pub fn kmeans_plus_plus(points: &[Vec<f64>], k: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = seed::rng(seed, Stream::KMeans, &[k as u64]);
    let n = points.len();
    let mut centroids = vec![points[rng.gen_range(0..n)].clone()];
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| squared_distance(p, &centroids[0]))
        .collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && r < d {
                    chosen = i;
                    break;
                }
                r -= d;
            }
            while d2[chosen] == 0.0 {
                chosen -= 1;
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        let c = points[pick].clone();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(squared_distance(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Lloyd iterations from the given initial centroids.
pub fn lloyd(points: &[Vec<f64>], init: Vec<Vec<f64>>, max_iter: usize, tol: f64) -> ClusterModel {
    let k = init.len();
    let dim = points.first().map_or(0, Vec::len);
    let mut centroids = init;
    let mut history = Vec::new();
    let mut iterations = 0;
    let assign_all = |centroids: &[Vec<f64>]| -> Vec<(usize, f64)> {
        if points.len() >= 1024 {
            points.par_iter().map(|p| nearest(centroids, p)).collect()
        } else {
            points.iter().map(|p| nearest(centroids, p)).collect()
        }
    };
    for _ in 0..max_iter.max(1) {
        iterations += 1;
        let assigned = assign_all(&centroids);
        history.push(assigned.iter().map(|a| a.1).sum());

        let mut sums = vec![vec![0.0f64; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &(j, _)) in points.iter().zip(&assigned) {
            counts[j] += 1;
            for (s, v) in sums[j].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut next: Vec<Vec<f64>> = sums
            .into_iter()
            .zip(&counts)
            .zip(&centroids)
            .map(|((s, &c), old)| {
                if c == 0 {
                    old.clone()
                } else {
                    s.into_iter().map(|v| v / c as f64).collect()
                }
            })
            .collect();

        // Reseed each empty cluster at the point farthest from its own
        // centroid, taken only from clusters that can spare a member.
        let mut taken = vec![false; points.len()];
        let empty: Vec<usize> = (0..k).filter(|&j| counts[j] == 0).collect();
        for j in empty {
            let far = points
                .iter()
                .enumerate()
                .filter(|&(i, _)| !taken[i] && counts[assigned[i].0] > 1)
                .map(|(i, p)| (i, squared_distance(p, &next[assigned[i].0])))
                .fold(None, |best: Option<(usize, f64)>, (i, d)| match best {
                    Some((_, bd)) if bd >= d => best,
                    _ => Some((i, d)),
                });
            if let Some((i, _)) = far {
                taken[i] = true;
                counts[assigned[i].0] -= 1;
                counts[j] = 1;
                next[j] = points[i].clone();
            }
        }

        let shift = centroids
            .iter()
            .zip(&next)
            .map(|(a, b)| squared_distance(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        if shift < tol {
            break;
        }
    }
    let assigned = assign_all(&centroids);
    let inertia: f64 = assigned.iter().map(|a| a.1).sum();
    history.push(inertia);
    ClusterModel {
        k,
        centroids,
        assignments: assigned.into_iter().map(|a| a.0).collect(),
        inertia,
        iterations_run: iterations,
        inertia_history: history,
    }
}

/// Clusters `points` into `params.k` groups.
pub fn kmeans(points: &[Vec<f64>], params: &KMeansParams) -> Result<ClusterModel> {
    if params.k == 0 {
        return Err(Error::argument("k must be at least 1"));
    }
    if points.is_empty() {
        return Err(Error::argument("no points to cluster"));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::argument("points have different lengths"));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::argument("points contain non-finite values"));
    }
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| lex_cmp(&points[a], &points[b]).then(a.cmp(&b)));
    let sorted: Vec<Vec<f64>> = order.iter().map(|&i| points[i].clone()).collect();
    let distinct = distinct_count(&sorted.iter().collect::<Vec<_>>());
    if params.k > distinct {
        return Err(Error::argument(format!(
            "k = {} exceeds the {distinct} distinct feature vectors",
            params.k
        )));
    }
    let init = kmeans_plus_plus(&sorted, params.k, params.seed);
    let mut model = lloyd(&sorted, init, params.max_iter, params.tol);
    let mut assignments = vec![0; points.len()];
    for (pos, &orig) in order.iter().enumerate() {
        assignments[orig] = model.assignments[pos];
    }
    model.assignments = assignments;
    Ok(model)
}

impl ClusterModel {
    /// Relabels clusters so that they are numbered by their lowest member
    /// id (empty clusters last, in their previous order).
    pub fn canonicalize<T: Ord + Copy>(&mut self, ids: &[T]) {
        let mut lowest: Vec<Option<T>> = vec![None; self.k];
        for (&c, &id) in self.assignments.iter().zip(ids) {
            lowest[c] = Some(match lowest[c] {
                Some(m) if m <= id => m,
                _ => id,
            });
        }
        let mut order: Vec<usize> = (0..self.k).collect();
        order.sort_by(|&a, &b| match (lowest[a], lowest[b]) {
            (Some(x), Some(y)) => x.cmp(&y),
            (Some(_), None) => Ordering::Less,
            (None, Some(_)) => Ordering::Greater,
            (None, None) => a.cmp(&b),
        });
        let mut relabel = vec![0; self.k];
        for (new, &old) in order.iter().enumerate() {
            relabel[old] = new;
        }
        self.centroids = order
            .iter()
            .map(|&old| self.centroids[old].clone())
            .collect();
        for a in self.assignments.iter_mut() {
            *a = relabel[*a];
        }
    }

    /// Member indices of every cluster.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut m = vec![Vec::new(); self.k];
        for (i, &c) in self.assignments.iter().enumerate() {
            m[c].push(i);
        }
        m
    }

    pub fn non_empty(&self) -> usize {
        self.members().iter().filter(|m| !m.is_empty()).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(v: &[f64]) -> Vec<Vec<f64>> {
        v.iter().map(|&x| vec![x]).collect()
    }

    #[test]
    fn single_cluster_centroid_is_mean() {
        let p = vec![vec![0.0, 1.0], vec![2.0, 3.0], vec![4.0, -1.0]];
        let m = kmeans(
            &p,
            &KMeansParams {
                k: 1,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(m.assignments, vec![0, 0, 0]);
        assert!((m.centroids[0][0] - 2.0).abs() < 1e-12);
        assert!((m.centroids[0][1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn forced_split_in_one_dimension() {
        for seed in 0..20 {
            let mut m = kmeans(
                &pts(&[0.0, 1.0, 10.0, 11.0]),
                &KMeansParams {
                    k: 2,
                    seed,
                    ..Default::default()
                },
            )
            .unwrap();
            m.canonicalize(&[0, 1, 2, 3]);
            assert_eq!(m.assignments, vec![0, 0, 1, 1]);
            assert_eq!(m.centroids, vec![vec![0.5], vec![10.5]]);
            assert!((m.inertia - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn k_equal_to_points_has_zero_inertia() {
        let m = kmeans(
            &pts(&[3.0, -1.0, 7.5, 2.0]),
            &KMeansParams {
                k: 4,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(m.inertia, 0.0);
        assert_eq!(m.non_empty(), 4);
    }

    #[test]
    fn too_many_clusters_rejected() {
        let err = kmeans(
            &pts(&[1.0, 1.0, 2.0]),
            &KMeansParams {
                k: 3,
                ..Default::default()
            },
        );
        assert!(matches!(err, Err(Error::Argument(_))));
        assert!(kmeans(
            &pts(&[1.0]),
            &KMeansParams {
                k: 0,
                ..Default::default()
            }
        )
        .is_err());
    }

    #[test]
    fn assign_ties_go_low() {
        let c = vec![vec![0.0], vec![2.0]];
        assert_eq!(assign(&c, &[1.0]).unwrap(), 0);
        assert_eq!(assign(&c, &[2.0]).unwrap(), 1);
        assert!(assign(&c, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn empty_cluster_is_reseeded() {
        // Both initial centroids sit at the left blob; the right one starts empty.
        let p = pts(&[0.0, 0.1, 5.0, 5.1]);
        let m = lloyd(&p, vec![vec![0.0], vec![-100.0]], 50, 1e-9);
        assert_eq!(m.non_empty(), 2);
        assert!(m.inertia < 0.02);
    }
}
