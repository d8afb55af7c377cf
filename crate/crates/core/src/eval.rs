//! ROC curves, TPR/FPR and AUC over scored decisions.
//!
//! The decision rule everywhere is `score >= threshold` => signal, the same as
//! [`crate::mlpf::classify`]. Tied scores move TPR and FPR together, which gives
//! a tied signal/noise pair half credit in the area.

use std::cmp::Ordering;
use std::io::Write;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    /// Events scoring at or above this value count as signal. `+inf` for the origin.
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

fn class_counts(labels: &[bool]) -> Result<(usize, usize)> {
    let signal = labels.iter().filter(|&&l| l).count();
    let noise = labels.len() - signal;
    if signal == 0 || noise == 0 {
        return Err(Error::SingleClass { signal, noise });
    }
    Ok((signal, noise))
}

/// Sweep a threshold over every distinct score.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<RocCurve> {
    assert_eq!(
        scores.len(),
        labels.len(),
        "scores and labels differ in length"
    );
    let (pos, neg) = class_counts(labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0u64, 0u64);
    // twice the area, in units of 1/(pos*neg)
    let mut area2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && scores[order[i]].total_cmp(&s) == Ordering::Equal {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        area2 += u128::from(fp - fp0) * u128::from(tp + tp0);
        points.push(RocPoint {
            threshold: s,
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
        });
    }
    let auc = area2 as f64 / (2.0 * pos as f64 * neg as f64);
    Ok(RocCurve { points, auc })
}

/// Trapezoidal area under the curve's points.
pub fn auc(curve: &RocCurve) -> f64 {
    curve
        .points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

pub fn auc_score(scores: &[f64], labels: &[bool]) -> Result<f64> {
    Ok(roc_curve(scores, labels)?.auc)
}

/// (TPR, FPR) at a single threshold.
pub fn tpr_fpr_at(scores: &[f64], labels: &[bool], threshold: f64) -> Result<(f64, f64)> {
    let (pos, neg) = class_counts(labels)?;
    let (mut tp, mut fp) = (0usize, 0usize);
    for (&s, &l) in scores.iter().zip(labels) {
        if s >= threshold {
            if l {
                tp += 1;
            } else {
                fp += 1;
            }
        }
    }
    Ok((tp as f64 / pos as f64, fp as f64 / neg as f64))
}

/// `threshold,fpr,tpr` rows followed by a `# auc=` summary line.
pub fn write_roc_csv<W: Write>(mut w: W, curve: &RocCurve) -> std::io::Result<()> {
    writeln!(w, "threshold,fpr,tpr")?;
    for p in &curve.points {
        writeln!(w, "{},{},{}", p.threshold, p.fpr, p.tpr)?;
    }
    writeln!(w, "# auc={:.6}", curve.auc)
}
