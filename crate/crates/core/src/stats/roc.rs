//! Receiver operating characteristic and its area.

use crate::error::{PrlError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Roc {
    pub auc: f64,
    /// `(false positive rate, true positive rate)` from `(0,0)` to `(1,1)`.
    pub points: Vec<(f64, f64)>,
}

/// AUC by the rank-sum statistic with averaged ranks for ties.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<Roc> {
    if scores.len() != labels.len() {
        return Err(PrlError::Dimension(format!("{} scores, {} labels", scores.len(), labels.len())));
    }
    let pos = labels.iter().filter(|l| **l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(PrlError::Precondition("roc needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += avg * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    let auc = (rank_sum - p * (p + 1.0) / 2.0) / (p * n);

    // sweep thresholds from high to low
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut k = order.len();
    while k > 0 {
        let s = scores[order[k - 1]];
        while k > 0 && scores[order[k - 1]] == s {
            if labels[order[k - 1]] {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            k -= 1;
        }
        points.push((fp / n, tp / p));
    }
    Ok(Roc { auc, points })
}

/// Trapezoidal area under a piecewise-linear ROC.
pub fn trapezoid_area(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        let r = roc_auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap();
        assert_eq!(r.auc, 1.0);
        let s = [0.3, 0.3, 0.5, 0.1, 0.9];
        let l = [true, false, true, false, false];
        let a = roc_auc(&s, &l).unwrap();
        let neg: Vec<f64> = s.iter().map(|x| -x).collect();
        assert!((a.auc + roc_auc(&neg, &l).unwrap().auc - 1.0).abs() < 1e-15);
        assert!((a.auc - trapezoid_area(&a.points)).abs() < 1e-15);
        assert!(roc_auc(&[1.0, 2.0], &[true, true]).is_err());
    }
}
