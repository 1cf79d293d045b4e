//! Representative selection and clustering.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{euclidean, nearest_rank, Corpus, SongIdx};
use crate::error::{Error, Result};
use crate::seed;

/// Nearest-rank 10th percentile of all pairwise song distances.
pub fn delta_from_corpus(corpus: &Corpus) -> Result<f64> {
    let n = corpus.len();
    if n < 2 {
        return Err(Error::invalid("delta needs at least two songs"));
    }
    let mut distances = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            distances.push(corpus.distance(i, j));
        }
    }
    let rank = (distances.len() / 10).min(distances.len() - 1);
    let (_, value, _) = distances.select_nth_unstable_by(rank, f64::total_cmp);
    Ok(*value)
}

/// Output of [`delta_medoids`]. Representatives and assignments refer to
/// positions in the input point sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepresentativeSet {
    pub representatives: Vec<usize>,
    pub delta: f64,
    /// For each input point, the index into `representatives` covering it.
    pub assignment: Vec<usize>,
}

impl RepresentativeSet {
    pub fn representative_of(&self, point: usize) -> usize {
        self.representatives[self.assignment[point]]
    }
}

/// Greedy cover in input order. Each point joins the nearest existing
/// representative within `delta`, or becomes a representative itself.
pub(crate) fn greedy_cover(n: usize, delta: f64, dist: &impl Fn(usize, usize) -> f64) -> (Vec<usize>, Vec<usize>) {
    let mut reps: Vec<usize> = Vec::new();
    let mut assignment = Vec::with_capacity(n);
    for p in 0..n {
        let nearest = reps
            .iter()
            .enumerate()
            .map(|(k, &r)| (k, dist(p, r)))
            .filter(|&(_, d)| d <= delta)
            .min_by(|a, b| a.1.total_cmp(&b.1));
        match nearest {
            Some((k, _)) => assignment.push(k),
            None => {
                assignment.push(reps.len());
                reps.push(p);
            }
        }
    }
    (reps, assignment)
}

/// Delta-medoids over an arbitrary metric on `0..n`: a greedy cover pass
/// followed by one medoid refinement sweep. Refinement only accepts a new
/// medoid if it still covers every member of its cluster.
pub fn delta_medoids_by(n: usize, delta: f64, dist: impl Fn(usize, usize) -> f64) -> Result<RepresentativeSet> {
    if delta.is_nan() || delta < 0.0 {
        return Err(Error::invalid("delta must be nonnegative"));
    }
    let (mut reps, assignment) = greedy_cover(n, delta, &dist);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); reps.len()];
    for (p, &k) in assignment.iter().enumerate() {
        members[k].push(p);
    }
    for (k, cluster) in members.iter().enumerate() {
        if cluster.len() < 3 {
            continue;
        }
        let mut candidates: Vec<(f64, usize)> = cluster
            .iter()
            .map(|&c| (cluster.iter().map(|&m| dist(c, m)).sum::<f64>(), c))
            .collect();
        candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        if let Some(&(_, best)) = candidates
            .iter()
            .find(|&&(_, c)| cluster.iter().all(|&m| dist(c, m) <= delta))
        {
            reps[k] = best;
        }
    }
    Ok(RepresentativeSet {
        representatives: reps,
        delta,
        assignment,
    })
}

/// Delta-medoids over corpus songs; positions refer to `points`.
pub fn delta_medoids(corpus: &Corpus, points: &[SongIdx], delta: f64) -> Result<RepresentativeSet> {
    delta_medoids_by(points.len(), delta, |a, b| corpus.distance(points[a], points[b]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
    pub inertia: f64,
    pub iterations: usize,
    /// Inertia after each assignment step.
    pub inertia_history: Vec<f64>,
}

impl Clustering {
    pub fn members(&self, cluster: usize) -> impl Iterator<Item = usize> + '_ {
        self.assignment
            .iter()
            .enumerate()
            .filter(move |(_, &c)| c == cluster)
            .map(|(i, _)| i)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest_centroid(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(p, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn kmeans_pp_seed(points: &[Vec<f64>], k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![points[first].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[first])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().zip(&chosen).filter(|(_, &c)| !c).map(|(d, _)| d).sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for i in 0..n {
                if chosen[i] {
                    continue;
                }
                target -= d2[i];
                if target <= 0.0 && d2[i] > 0.0 {
                    pick = Some(i);
                    break;
                }
            }
            pick.unwrap_or_else(|| (0..n).rev().find(|&i| !chosen[i] && d2[i] > 0.0).unwrap())
        } else {
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[pick] = true;
        centroids.push(points[pick].clone());
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &points[pick]));
        }
    }
    centroids
}

/// Lloyd's k-means with k-means++ seeding. Empty clusters are re-seeded at
/// the point farthest from its current centroid.
pub fn k_means(points: &[Vec<f64>], k: usize, seed: u64, max_iters: usize) -> Result<Clustering> {
    if k == 0 || k > points.len() {
        return Err(Error::invalid(format!("k must lie in 1..={}, got {k}", points.len())));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::invalid("points have mixed dimensions"));
    }
    let mut rng = seed::rng(seed);
    let mut centroids = kmeans_pp_seed(points, k, &mut rng);
    let mut assignment = vec![usize::MAX; points.len()];
    let mut inertia_history = Vec::new();
    let mut iterations = 0;
    loop {
        let mut changed = false;
        let mut inertia = 0.0;
        let mut dists = Vec::with_capacity(points.len());
        for (i, p) in points.iter().enumerate() {
            let (c, d) = nearest_centroid(p, &centroids);
            if assignment[i] != c {
                assignment[i] = c;
                changed = true;
            }
            inertia += d;
            dists.push(d);
        }
        inertia_history.push(inertia);
        if !changed || iterations >= max_iters {
            return Ok(Clustering {
                k,
                centroids,
                assignment,
                inertia,
                iterations,
                inertia_history,
            });
        }
        iterations += 1;
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&assignment) {
            counts[c] += 1;
            sums[c].iter_mut().zip(p).for_each(|(s, x)| *s += x);
        }
        let mut taken = vec![false; points.len()];
        for c in 0..k {
            if counts[c] > 0 {
                let n = counts[c] as f64;
                centroids[c] = sums[c].iter().map(|s| s / n).collect();
            } else {
                let far = (0..points.len())
                    .filter(|&i| !taken[i])
                    .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
                    .expect("k <= n leaves a free point");
                taken[far] = true;
                centroids[c] = points[far].clone();
            }
        }
    }
}

/// Index of the point closest to `target`, ties to the lowest index.
pub fn closest_point(points: &[Vec<f64>], candidates: impl Iterator<Item = usize>, target: &[f64]) -> Option<usize> {
    candidates.min_by(|&a, &b| {
        euclidean(&points[a], target)
            .total_cmp(&euclidean(&points[b], target))
            .then(a.cmp(&b))
    })
}

/// Sorted-copy percentile helper shared with tests and callers that want
/// the same rank rule as the quantizer.
pub fn percentile(values: &[f64], numerator: usize, denominator: usize) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Some(nearest_rank(&sorted, numerator, denominator))
}
