mod common;

use common::*;
use rand::Rng;
use setad::metrics::{auc_pr, auc_roc};

/// Doubled Mann-Whitney count over every positive/negative pair.
fn brute_force_roc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut wins2, mut p, mut n) = (0u128, 0u128, 0u128);
    for (i, &li) in labels.iter().enumerate() {
        if li {
            p += 1;
        } else {
            n += 1;
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            wins2 += match scores[i].partial_cmp(&scores[j]).unwrap() {
                std::cmp::Ordering::Greater => 2,
                std::cmp::Ordering::Equal => 1,
                std::cmp::Ordering::Less => 0,
            };
        }
    }
    wins2 as f64 / (2 * p * n) as f64
}

/// Average precision by sweeping every distinct threshold.
fn brute_force_ap(scores: &[f64], labels: &[bool]) -> f64 {
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let n_pos = labels.iter().filter(|&&l| l).count() as f64;
    let (mut ap, mut prev) = (0.0, 0.0);
    for t in thresholds {
        let sel: Vec<bool> = scores
            .iter()
            .zip(labels)
            .filter(|(s, _)| **s >= t)
            .map(|(_, &l)| l)
            .collect();
        let tp = sel.iter().filter(|&&l| l).count() as f64;
        let recall = tp / n_pos;
        ap += (recall - prev) * tp / sel.len() as f64;
        prev = recall;
    }
    ap
}

fn random_instance(g: &mut impl Rng) -> (Vec<f64>, Vec<bool>) {
    let n = g.random_range(2..=200);
    let levels = g.random_range(1..=n.max(2));
    let mut labels: Vec<bool> = (0..n).map(|_| g.random_bool(0.3)).collect();
    labels[0] = true;
    labels[1] = false;
    // a small number of levels injects ties
    let scores = (0..n)
        .map(|_| g.random_range(0..levels) as f64 / 7.0)
        .collect();
    (scores, labels)
}

#[test]
fn roc_matches_brute_force_exactly_on_1000_instances() {
    let mut g = rng(40);
    for _ in 0..1000 {
        let (s, l) = random_instance(&mut g);
        assert_eq!(auc_roc(&s, &l).unwrap(), brute_force_roc(&s, &l));
    }
}

#[test]
fn average_precision_matches_threshold_sweep() {
    let mut g = rng(41);
    for _ in 0..300 {
        let (s, l) = random_instance(&mut g);
        let ap = auc_pr(&s, &l).unwrap();
        assert!((ap - brute_force_ap(&s, &l)).abs() < 1e-12);
        assert!((0.0..=1.0).contains(&ap));
    }
}
