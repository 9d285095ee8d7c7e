//! ROC analysis of normality scores with anomalies as the positive class: a
//! sample is flagged when its score falls below the threshold.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
}

fn check(scores: &[f64], is_anomaly: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != is_anomaly.len() {
        return Err(Error::Shape(format!(
            "{} scores but {} labels",
            scores.len(),
            is_anomaly.len()
        )));
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::Domain(format!("score {i} is NaN")));
    }
    let anomalies = is_anomaly.iter().filter(|&&a| a).count();
    let normals = scores.len() - anomalies;
    if anomalies == 0 || normals == 0 {
        return Err(Error::Contract(format!(
            "ROC needs both classes, got {normals} normal and {anomalies} anomalous samples"
        )));
    }
    Ok((normals, anomalies))
}

fn ascending(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    order
}

/// ROC points from `(0, 0)` to `(1, 1)`, one per distinct score. Tied scores
/// move the curve in a single step.
pub fn roc_curve(scores: &[f64], is_anomaly: &[bool]) -> Result<Vec<RocPoint>> {
    let (normals, anomalies) = check(scores, is_anomaly)?;
    let order = ascending(scores);
    let mut points = vec![RocPoint { fpr: 0.0, tpr: 0.0 }];
    let (mut fp, mut tp) = (0usize, 0usize);
    for (k, &i) in order.iter().enumerate() {
        if is_anomaly[i] {
            tp += 1;
        } else {
            fp += 1;
        }
        let group_ends = order.get(k + 1).is_none_or(|&j| scores[j] != scores[i]);
        if group_ends {
            points.push(RocPoint {
                fpr: fp as f64 / normals as f64,
                tpr: tp as f64 / anomalies as f64,
            });
        }
    }
    Ok(points)
}

/// Probability that a random normal sample outscores a random anomaly, ties
/// counting one half (Mann-Whitney U with mid-ranks).
pub fn auroc(scores: &[f64], is_anomaly: &[bool]) -> Result<f64> {
    let (normals, anomalies) = check(scores, is_anomaly)?;
    let order = ascending(scores);
    let mut normal_rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // ranks start+1 ..= end share their mean
        let mid_rank = (start + 1 + end) as f64 / 2.0;
        let tied_normals = order[start..end].iter().filter(|&&i| !is_anomaly[i]).count();
        normal_rank_sum += mid_rank * tied_normals as f64;
        start = end;
    }
    let n = normals as f64;
    let u = normal_rank_sum - n * (n + 1.0) / 2.0;
    Ok(u / (n * anomalies as f64))
}

/// Area under a piecewise-linear curve by the trapezoid rule.
pub fn trapezoid_area(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}
