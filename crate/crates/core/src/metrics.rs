//! Rank correlation, triplet accuracy and reranking precision.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 1-based ranks; tied values share the mean of the ranks they span.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

/// Spearman's rho with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch { left: x.len(), right: y.len() });
    }
    if x.len() < 2 {
        return Err(Error::DegenerateInput("spearman needs at least two points".into()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let constant = |v: &[f64]| v.iter().all(|&a| a == v[0]);
    if constant(x) || constant(y) {
        return Err(Error::DegenerateInput("constant vector has no rank correlation".into()));
    }
    Ok(pearson(&average_ranks(x), &average_ranks(y)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TripletJudgment {
    pub sim_pos: f64,
    pub sim_neg: f64,
    pub success: bool,
}

impl TripletJudgment {
    pub fn new(sim_pos: f64, sim_neg: f64) -> Self {
        Self {
            sim_pos,
            sim_neg,
            success: sim_pos > sim_neg,
        }
    }
}

/// Fraction of successful judgments. Ties are failures.
pub fn triplet_success_rate(judgments: &[TripletJudgment]) -> Result<f64> {
    if judgments.is_empty() {
        return Err(Error::EmptyList);
    }
    let wins = judgments.iter().filter(|j| j.sim_pos > j.sim_neg).count();
    Ok(wins as f64 / judgments.len() as f64)
}

pub fn average_precision(scores: &[f64], relevant: &[bool]) -> Result<f64> {
    if scores.len() != relevant.len() {
        return Err(Error::LengthMismatch {
            left: scores.len(),
            right: relevant.len(),
        });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // sort_by is stable: equal scores keep input order
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut hits, mut sum) = (0usize, 0.0);
    for (rank, &i) in order.iter().enumerate() {
        if relevant[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    if hits == 0 {
        return Err(Error::NoRelevant(0));
    }
    Ok(sum / hits as f64)
}

/// MAP over queries of `(scores, relevant)`.
pub fn mean_average_precision(queries: &[(Vec<f64>, Vec<bool>)]) -> Result<f64> {
    if queries.is_empty() {
        return Err(Error::EmptyQueries);
    }
    let mut total = 0.0;
    for (q, (scores, relevant)) in queries.iter().enumerate() {
        total += average_precision(scores, relevant).map_err(|e| match e {
            Error::NoRelevant(_) => Error::NoRelevant(q),
            other => other,
        })?;
    }
    Ok(total / queries.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn spearman_examples() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 1.0, 2.0]).unwrap(), -0.5);
        assert!((spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 4.0, 9.0, 16.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[9.0, 4.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert!(matches!(spearman(&[1.0, 1.0], &[1.0, 2.0]), Err(Error::DegenerateInput(_))));
        assert!(matches!(spearman(&[1.0], &[1.0, 2.0]), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn ranks_with_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 5.0]), vec![2.5, 4.0, 2.5, 1.0]);
    }

    #[test]
    fn triplet_rates() {
        let all = vec![TripletJudgment::new(0.9, 0.1); 5];
        assert_eq!(triplet_success_rate(&all).unwrap(), 1.0);
        let ties = vec![TripletJudgment::new(0.5, 0.5); 3];
        assert!(!ties[0].success);
        assert_eq!(triplet_success_rate(&ties).unwrap(), 0.0);
        let mixed = [(0.9, 0.1), (0.8, 0.2), (0.7, 0.1), (0.1, 0.2)].map(|(p, n)| TripletJudgment::new(p, n));
        assert_eq!(triplet_success_rate(&mixed).unwrap(), 0.75);
        assert!(matches!(triplet_success_rate(&[]), Err(Error::EmptyList)));
    }

    #[test]
    fn map_examples() {
        let ap = average_precision(&[0.9, 0.8, 0.7], &[false, true, true]).unwrap();
        assert!((ap - 0.583333).abs() < 1e-6);
        assert_eq!(average_precision(&[0.1, 0.9, 0.5], &[false, true, true]).unwrap(), 1.0);
        let q = vec![
            (vec![0.9, 0.1], vec![true, false]),
            (vec![0.9, 0.1], vec![false, true]),
        ];
        assert_eq!(mean_average_precision(&q).unwrap(), 0.75);
        // ties keep input order
        assert_eq!(average_precision(&[0.5, 0.5], &[false, true]).unwrap(), 0.5);
        assert!(matches!(
            mean_average_precision(&[(vec![0.9, 0.1], vec![true, false]), (vec![0.1], vec![false])]),
            Err(Error::NoRelevant(1))
        ));
        assert!(matches!(mean_average_precision(&[]), Err(Error::EmptyQueries)));
    }

    proptest! {
        #[test]
        fn spearman_symmetric_and_monotone_invariant(
            pairs in prop::collection::vec((-100i32..100, -100i32..100), 3..40)
        ) {
            let x: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
            let y: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
            prop_assume!(x.iter().any(|&v| v != x[0]) && y.iter().any(|&v| v != y[0]));
            let r = spearman(&x, &y).unwrap();
            prop_assert!((r - spearman(&y, &x).unwrap()).abs() < 1e-9);
            let tx: Vec<f64> = x.iter().map(|v| (v / 50.0).exp() * 3.0 - 7.0).collect();
            prop_assert!((r - spearman(&tx, &y).unwrap()).abs() < 1e-9);
        }

        #[test]
        fn map_affine_invariant(
            scores in prop::collection::vec(-50i32..50, 1..20),
            rel_bits in any::<u32>(),
            a in 0.1f64..10.0,
            b in -5.0f64..5.0,
        ) {
            let scores: Vec<f64> = scores.into_iter().map(f64::from).collect();
            let mut relevant: Vec<bool> = (0..scores.len()).map(|i| rel_bits >> (i % 32) & 1 == 1).collect();
            relevant[0] = true;
            let t: Vec<f64> = scores.iter().map(|s| a * s + b).collect();
            let x = average_precision(&scores, &relevant).unwrap();
            prop_assert!((x - average_precision(&t, &relevant).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn triplet_rate_order_preserving_invariant(sims in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..50)) {
            let raw: Vec<_> = sims.iter().map(|&(p, n)| TripletJudgment::new(p, n)).collect();
            let mapped: Vec<_> = sims.iter().map(|&(p, n)| TripletJudgment::new(p.atan() * 2.0 + 1.0, n.atan() * 2.0 + 1.0)).collect();
            prop_assert_eq!(triplet_success_rate(&raw).unwrap(), triplet_success_rate(&mapped).unwrap());
        }
    }
}
