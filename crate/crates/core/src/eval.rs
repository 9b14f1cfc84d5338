//! Threshold-free detection metrics.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{GcadError, Result};
use crate::scoring::ScoreSeries;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auroc: f64,
    pub auprc: f64,
    pub n_scored: usize,
    pub n_positive: usize,
}

fn check(scores: &[f64], labels: &[bool]) -> Result<usize> {
    if scores.len() != labels.len() {
        return Err(GcadError::Shape(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(GcadError::Eval("scores contain NaN".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    if pos == 0 || pos == labels.len() {
        return Err(GcadError::Eval(format!(
            "need both classes, got {} positives out of {}",
            pos,
            labels.len()
        )));
    }
    Ok(pos)
}

/// Indices sorted by descending score.
fn descending(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));
    idx
}

/// Walks tied-score groups from the highest score down, yielding the
/// cumulative (true positive, false positive) counts after each group.
fn tie_groups(scores: &[f64], labels: &[bool]) -> Vec<(usize, usize)> {
    let order = descending(scores);
    let mut out = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    let mut k = 0;
    while k < order.len() {
        let v = scores[order[k]];
        while k < order.len() && scores[order[k]] == v {
            if labels[order[k]] {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        out.push((tp, fp));
    }
    out
}

/// Area under the ROC curve: the probability that a random positive
/// outscores a random negative, ties counting one half.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let pos = check(scores, labels)? as f64;
    let neg = labels.len() as f64 - pos;
    // Trapezoids between tie groups are exactly the Mann–Whitney U with
    // half credit for ties.
    let mut area = 0.0;
    let (mut prev_tp, mut prev_fp) = (0usize, 0usize);
    for (tp, fp) in tie_groups(scores, labels) {
        area += (fp - prev_fp) as f64 * (tp + prev_tp) as f64 / 2.0;
        prev_tp = tp;
        prev_fp = fp;
    }
    Ok(area / (pos * neg))
}

/// Area under the precision–recall step curve (average precision), one
/// step per distinct score.
pub fn auprc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let pos = check(scores, labels)? as f64;
    let mut area = 0.0;
    let mut prev_tp = 0usize;
    for (tp, fp) in tie_groups(scores, labels) {
        if tp > prev_tp {
            let precision = tp as f64 / (tp + fp) as f64;
            area += (tp - prev_tp) as f64 / pos * precision;
        }
        prev_tp = tp;
    }
    Ok(area)
}

pub fn evaluate(scores: &[f64], labels: &[bool]) -> Result<EvalReport> {
    let n_positive = check(scores, labels)?;
    Ok(EvalReport {
        auroc: auroc(scores, labels)?,
        auprc: auprc(scores, labels)?,
        n_scored: scores.len(),
        n_positive,
    })
}

/// Evaluates a score series against point labels indexed by timestamp.
pub fn evaluate_series(series: &ScoreSeries, labels: &[bool]) -> Result<EvalReport> {
    let mut aligned = Vec::with_capacity(series.len());
    for &t in &series.timestamps {
        let l = labels.get(t).ok_or_else(|| {
            GcadError::Shape(format!(
                "score timestamp {} is beyond the {} labels",
                t,
                labels.len()
            ))
        })?;
        aligned.push(*l);
    }
    evaluate(&series.s, &aligned)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_separation() {
        let s = [1.0, 2.0, 3.0, 4.0];
        let l = [false, false, true, true];
        assert_eq!(auroc(&s, &l).unwrap(), 1.0);
        assert_eq!(auprc(&s, &l).unwrap(), 1.0);
    }

    #[test]
    fn all_ties() {
        let s = [0.7; 5];
        let l = [true, false, false, true, false];
        assert_eq!(auroc(&s, &l).unwrap(), 0.5);
        assert!((auprc(&s, &l).unwrap() - 0.4).abs() < 1e-15);
    }

    #[test]
    fn single_class_is_an_error() {
        assert!(matches!(
            auroc(&[1.0, 2.0], &[true, true]),
            Err(GcadError::Eval(_))
        ));
        assert!(auprc(&[1.0, 2.0], &[false, false]).is_err());
        assert!(auroc(&[1.0], &[true, false]).is_err());
    }

    #[test]
    fn inverted_ranking() {
        let s = [4.0, 3.0, 2.0, 1.0];
        let l = [false, false, true, true];
        assert_eq!(auroc(&s, &l).unwrap(), 0.0);
    }

    #[test]
    fn series_alignment() {
        let series = crate::scoring::combine_at(vec![2, 3], &[0.0, 1.0], &[0.0, 0.0], 0.0).unwrap();
        let labels = [true, true, false, true];
        let r = evaluate_series(&series, &labels).unwrap();
        assert_eq!(r.auroc, 1.0);
        assert_eq!((r.n_scored, r.n_positive), (2, 1));
        let short = [false, true, false];
        assert!(evaluate_series(&series, &short).is_err());
    }
}
