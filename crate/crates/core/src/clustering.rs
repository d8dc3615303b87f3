//! K-means and the clustering-quality measures used by the benchmarks.
//!
//! Entropies are in nats.

use std::collections::{BTreeMap, HashMap};
use std::hash::Hash;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Embedding;

pub const RESTARTS: usize = 10;
pub const MAX_ITER: usize = 300;
pub const TOL: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    pub k: usize,
    pub inertia: f64,
    pub seed: u64,
}

impl ClusterAssignment {
    pub fn members(&self, cluster: usize) -> Vec<usize> {
        self.labels.iter().enumerate().filter(|(_, &l)| l == cluster).map(|(i, _)| i).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &l in &self.labels {
            s[l] += 1;
        }
        s
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid; ties go to the lowest index.
fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn kmeans_pp_init(points: &[&[f64]], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = vec![points[rng.gen_range(0..n)].to_vec()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            // Round-off can run past the end; fall back to the farthest point.
            if d2[chosen] == 0.0 {
                chosen = d2
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(i, _)| i)
                    .unwrap();
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        centroids.push(points[next].to_vec());
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &centroids[centroids.len() - 1]));
        }
    }
    centroids
}

/// One k-means++ seeded Lloyd run. Returns labels, inertia and the inertia after each iteration.
pub fn lloyd(points: &[&[f64]], k: usize, rng: &mut ChaCha8Rng) -> (Vec<usize>, f64, Vec<f64>) {
    let dim = points[0].len();
    let mut centroids = kmeans_pp_init(points, k, rng);
    let mut labels = vec![0; points.len()];
    let mut trace = Vec::new();
    for _ in 0..MAX_ITER {
        let mut inertia = 0.0;
        for (i, p) in points.iter().enumerate() {
            let (c, d) = nearest(p, &centroids);
            labels[i] = c;
            inertia += d;
        }
        trace.push(inertia);

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, x) in sums[l].iter_mut().zip(p.iter()) {
                *s += x;
            }
        }
        let mut shift = 0.0f64;
        for c in 0..k {
            // Empty clusters keep their previous centroid.
            if counts[c] == 0 {
                continue;
            }
            let updated: Vec<f64> = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            shift = shift.max(sq_dist(&updated, &centroids[c]).sqrt());
            centroids[c] = updated;
        }
        if shift < TOL {
            break;
        }
    }
    let mut inertia = 0.0;
    for (i, p) in points.iter().enumerate() {
        let (c, d) = nearest(p, &centroids);
        labels[i] = c;
        inertia += d;
    }
    trace.push(inertia);
    (labels, inertia, trace)
}

/// K-means++ with [`RESTARTS`] restarts; the lowest-inertia run wins.
///
/// Restart `r` draws from its own sub-seed, so results do not depend on
/// thread scheduling.
pub fn kmeans(embeddings: &[Embedding], k: usize, seed: u64) -> Result<ClusterAssignment> {
    let n = embeddings.len();
    if k == 0 {
        return Err(Error::InvalidK("k must be positive".into()));
    }
    if k > n {
        return Err(Error::KTooLarge { k, n });
    }
    let dim = embeddings[0].dim();
    if let Some(e) = embeddings.iter().find(|e| e.dim() != dim) {
        return Err(Error::DimensionMismatch { left: dim, right: e.dim() });
    }
    let points: Vec<&[f64]> = embeddings.iter().map(Embedding::values).collect();
    let runs: Vec<(Vec<usize>, f64)> = (0..RESTARTS as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r);
            let (labels, inertia, _) = lloyd(&points, k, &mut rng);
            (labels, inertia)
        })
        .collect();
    let (labels, inertia) = runs
        .into_iter()
        .reduce(|best, run| if run.1 < best.1 { run } else { best })
        .unwrap();
    Ok(ClusterAssignment { labels, k, inertia, seed })
}

fn entropy_of_counts<I: IntoIterator<Item = usize>>(counts: I) -> f64 {
    // sorted so the sum does not depend on label order
    let mut counts: Vec<usize> = counts.into_iter().filter(|&c| c > 0).collect();
    counts.sort_unstable();
    let total: usize = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    // 0.0 - x rather than -x so a pure histogram gives +0, not -0
    0.0 - counts.iter().map(|&c| (c as f64 / t) * (c as f64 / t).ln()).sum::<f64>()
}

/// Shannon entropy (nats) of a label histogram.
pub fn cluster_entropy<K>(histogram: &BTreeMap<K, usize>) -> Result<f64> {
    if histogram.values().sum::<usize>() == 0 {
        return Err(Error::EmptyHistogram);
    }
    Ok(entropy_of_counts(histogram.values().copied()))
}

/// Homogeneity, completeness and their weighted harmonic mean.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VMeasure {
    pub homogeneity: f64,
    pub completeness: f64,
    pub v_measure: f64,
}

pub fn v_measure_scores<A, B>(true_labels: &[A], pred_labels: &[B], beta: f64) -> Result<VMeasure>
where
    A: Eq + Hash,
    B: Eq + Hash,
{
    if true_labels.len() != pred_labels.len() {
        return Err(Error::LengthMismatch {
            left: true_labels.len(),
            right: pred_labels.len(),
        });
    }
    if true_labels.is_empty() {
        return Err(Error::EmptyList);
    }
    let n = true_labels.len() as f64;
    let mut class_ids: HashMap<&A, usize> = HashMap::new();
    let mut cluster_ids: HashMap<&B, usize> = HashMap::new();
    let mut joint: HashMap<(usize, usize), usize> = HashMap::new();
    for (a, b) in true_labels.iter().zip(pred_labels) {
        let next_c = class_ids.len();
        let c = *class_ids.entry(a).or_insert(next_c);
        let next_k = cluster_ids.len();
        let k = *cluster_ids.entry(b).or_insert(next_k);
        *joint.entry((c, k)).or_default() += 1;
    }
    let mut class_counts = vec![0usize; class_ids.len()];
    let mut cluster_counts = vec![0usize; cluster_ids.len()];
    for (&(c, k), &v) in &joint {
        class_counts[c] += v;
        cluster_counts[k] += v;
    }
    let h_c = entropy_of_counts(class_counts.iter().copied());
    let h_k = entropy_of_counts(cluster_counts.iter().copied());
    // H(C|K) = -sum n_ck/n ln(n_ck/n_k); H(K|C) symmetric.
    let mut h_c_given_k = 0.0;
    let mut h_k_given_c = 0.0;
    for (&(c, k), &v) in &joint {
        let v = v as f64;
        h_c_given_k -= v / n * (v / cluster_counts[k] as f64).ln();
        h_k_given_c -= v / n * (v / class_counts[c] as f64).ln();
    }
    let homogeneity = if h_c == 0.0 { 1.0 } else { 1.0 - h_c_given_k / h_c };
    let completeness = if h_k == 0.0 { 1.0 } else { 1.0 - h_k_given_c / h_k };
    let v_measure = if homogeneity * completeness == 0.0 {
        0.0
    } else {
        (1.0 + beta) * homogeneity * completeness / (beta * homogeneity + completeness)
    };
    Ok(VMeasure {
        homogeneity,
        completeness,
        v_measure,
    })
}

pub fn v_measure<A, B>(true_labels: &[A], pred_labels: &[B], beta: f64) -> Result<f64>
where
    A: Eq + Hash,
    B: Eq + Hash,
{
    v_measure_scores(true_labels, pred_labels, beta).map(|v| v.v_measure)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn e(v: Vec<f64>) -> Embedding {
        Embedding::new(v).unwrap()
    }

    #[test]
    fn singletons_have_zero_inertia() {
        let pts: Vec<Embedding> = (0..7).map(|i| e(vec![i as f64, (i * i) as f64])).collect();
        let a = kmeans(&pts, 7, 3).unwrap();
        assert_eq!(a.inertia, 0.0);
        let mut l = a.labels.clone();
        l.sort();
        assert_eq!(l, (0..7).collect::<Vec<_>>());
    }

    #[test]
    fn separates_two_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let noise = Normal::new(0.0, 0.05).unwrap();
        let mut pts = Vec::new();
        let mut truth = Vec::new();
        for (b, centre) in [[-10.0, 0.0, 5.0], [10.0, 3.0, -5.0]].iter().enumerate() {
            for _ in 0..50 {
                pts.push(e(centre.iter().map(|c| c + noise.sample(&mut rng)).collect()));
                truth.push(b);
            }
        }
        let a = kmeans(&pts, 2, 42).unwrap();
        assert_eq!(v_measure(&truth, &a.labels, 1.0).unwrap(), 1.0);
        // partition matches membership exactly
        assert!(a.labels[..50].iter().all(|&l| l == a.labels[0]));
        assert!(a.labels[50..].iter().all(|&l| l == a.labels[50]));
        assert_ne!(a.labels[0], a.labels[50]);
        assert_eq!(kmeans(&pts, 2, 42).unwrap(), a);
    }

    #[test]
    fn identical_points_do_not_break_seeding() {
        let pts = vec![e(vec![1.0, 0.0]); 10];
        let a = kmeans(&pts, 3, 1).unwrap();
        assert_eq!(a.inertia, 0.0);
        assert!(a.labels.iter().all(|&l| l == 0));
    }

    #[test]
    fn errors() {
        let pts = vec![e(vec![1.0]), e(vec![2.0])];
        assert!(matches!(kmeans(&pts, 3, 0), Err(Error::KTooLarge { k: 3, n: 2 })));
        assert!(matches!(kmeans(&pts, 0, 0), Err(Error::InvalidK(_))));
        let bad = vec![e(vec![1.0]), e(vec![2.0, 3.0])];
        assert!(matches!(kmeans(&bad, 1, 0), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(v_measure(&[1, 2], &[1], 1.0), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn inertia_never_increases() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..20 {
            let pts: Vec<Vec<f64>> = (0..80).map(|_| (0..4).map(|_| rng.gen::<f64>()).collect()).collect();
            let refs: Vec<&[f64]> = pts.iter().map(Vec::as_slice).collect();
            let mut r = ChaCha8Rng::seed_from_u64(trial);
            let (_, _, trace) = lloyd(&refs, 5, &mut r);
            for w in trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-12, "{trace:?}");
            }
        }
    }

    #[test]
    fn v_measure_examples() {
        assert_eq!(v_measure(&[0, 0, 1, 1], &[5, 5, 9, 9], 1.0).unwrap(), 1.0);
        assert_eq!(v_measure(&[0, 1], &[0, 0], 1.0).unwrap(), 0.0);
        let s = v_measure_scores(&[0, 0, 1, 1], &[0, 0, 1, 2], 1.0).unwrap();
        assert!((s.homogeneity - 1.0).abs() < 1e-12);
        assert!((s.completeness - 2.0 / 3.0).abs() < 1e-12);
        assert!((s.v_measure - 0.8).abs() < 1e-9);
    }

    #[test]
    fn entropy_examples() {
        let h = |pairs: &[(&str, usize)]| cluster_entropy(&pairs.iter().map(|(k, v)| (*k, *v)).collect()).unwrap();
        assert_eq!(h(&[("A", 10)]), 0.0);
        assert!(h(&[("A", 10)]).is_sign_positive());
        assert!((h(&[("A", 5), ("B", 5)]) - 2f64.ln()).abs() < 1e-9);
        let expect = -0.75 * 0.75f64.ln() - 0.25 * 0.25f64.ln();
        assert!((h(&[("A", 3), ("B", 1)]) - expect).abs() < 1e-12);
        assert!((expect - 0.562335).abs() < 1e-6);
        assert!(matches!(cluster_entropy::<&str>(&BTreeMap::new()), Err(Error::EmptyHistogram)));
        assert!(matches!(cluster_entropy(&BTreeMap::from([("A", 0)])), Err(Error::EmptyHistogram)));
    }

    proptest! {
        #[test]
        fn v_measure_symmetric_and_relabel_invariant(
            pairs in prop::collection::vec((0u8..4, 0u8..5), 1..60),
            perm_seed in any::<u64>(),
        ) {
            let (t, p): (Vec<u8>, Vec<u8>) = pairs.into_iter().unzip();
            let a = v_measure(&t, &p, 1.0).unwrap();
            let b = v_measure(&p, &t, 1.0).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
            let mut perm: Vec<u8> = (0..5).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(perm_seed);
            for i in (1..perm.len()).rev() {
                perm.swap(i, rng.gen_range(0..=i));
            }
            let relabeled: Vec<u8> = p.iter().map(|&x| perm[x as usize]).collect();
            prop_assert!((v_measure(&t, &relabeled, 1.0).unwrap() - a).abs() < 1e-12);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&a));
        }

        #[test]
        fn entropy_max_at_uniform(counts in prop::collection::vec(1usize..50, 2..8)) {
            let hist: BTreeMap<usize, usize> = counts.iter().copied().enumerate().collect();
            let uniform: BTreeMap<usize, usize> = (0..counts.len()).map(|i| (i, 7)).collect();
            prop_assert!(cluster_entropy(&hist).unwrap() <= cluster_entropy(&uniform).unwrap() + 1e-12);
        }
    }
}
