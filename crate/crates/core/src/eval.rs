//! Outcome classification, precision-recall sweep over the rewrite
//! probability, average precision, recall at a precision floor and the
//! intent-error rate of fired rewrites.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{semantic_match, Grammar, RephrasePair, Utterance};
use crate::model::Candidate;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no predictions to evaluate")]
    Empty,
    #[error("degenerate curve: no threshold has a defined precision and recall")]
    Degenerate,
    #[error("probability {0} is outside [0, 1]")]
    Probability(f64),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// One model output on one evaluation pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub rephrase: Utterance,
    pub rewritable: bool,
    pub rewrite: Option<Vec<String>>,
    /// Grammar annotation of the rewrite; `None` when absent or unparseable.
    pub annotation: Option<Utterance>,
    pub probability: f64,
}

impl Prediction {
    pub fn new(pair: &RephrasePair, candidate: Candidate, grammar: &Grammar) -> Self {
        let annotation = candidate.tokens.as_ref().and_then(|t| grammar.parse(t));
        Self {
            rephrase: pair.rephrase.clone(),
            rewritable: pair.rewritable,
            rewrite: candidate.tokens,
            annotation,
            probability: candidate.probability,
        }
    }

    pub fn fires(&self, threshold: f64) -> bool {
        self.rewrite.is_some() && self.probability >= threshold
    }

    pub fn matches(&self) -> bool {
        self.annotation
            .as_ref()
            .is_some_and(|a| semantic_match(a, &self.rephrase))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    TP,
    FP,
    FN,
    TN,
}

pub fn classify(pred: &Prediction, threshold: f64) -> Outcome {
    match (pred.fires(threshold), pred.matches(), pred.rewritable) {
        (true, true, _) => Outcome::TP,
        (true, false, _) => Outcome::FP,
        (false, _, true) => Outcome::FN,
        (false, _, false) => Outcome::TN,
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl ConfusionCounts {
    pub fn at(preds: &[Prediction], threshold: f64) -> Self {
        let mut c = Self::default();
        for p in preds {
            match classify(p, threshold) {
                Outcome::TP => c.tp += 1,
                Outcome::FP => c.fp += 1,
                Outcome::FN => c.fn_ += 1,
                Outcome::TN => c.tn += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn precision(&self) -> Option<f64> {
        let d = self.tp + self.fp;
        (d > 0).then(|| self.tp as f64 / d as f64)
    }

    pub fn recall(&self) -> Option<f64> {
        let d = self.tp + self.fn_;
        (d > 0).then(|| self.tp as f64 / d as f64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Points in ascending threshold order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
}

/// Sweeps every distinct probability plus 0 and 1. Thresholds where
/// precision or recall has a zero denominator are left out.
pub fn pr_curve(preds: &[Prediction]) -> Result<PrCurve, EvalError> {
    if preds.is_empty() {
        return Err(EvalError::Empty);
    }
    if let Some(p) = preds.iter().find(|p| !(0.0..=1.0).contains(&p.probability)) {
        return Err(EvalError::Probability(p.probability));
    }
    let mut thresholds: Vec<f64> = preds.iter().map(|p| p.probability).collect();
    thresholds.extend([0.0, 1.0]);
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();

    // Candidates that can fire, highest probability first.
    let mut fired: Vec<&Prediction> = preds.iter().filter(|p| p.rewrite.is_some()).collect();
    fired.sort_by(|a, b| b.probability.total_cmp(&a.probability));
    let rewritable = preds.iter().filter(|p| p.rewritable).count();

    let mut points = Vec::with_capacity(thresholds.len());
    let (mut tp, mut fp, mut fired_rewritable) = (0usize, 0usize, 0usize);
    let mut next = 0;
    for &t in thresholds.iter().rev() {
        while next < fired.len() && fired[next].probability >= t {
            let p = fired[next];
            if p.matches() {
                tp += 1;
            } else {
                fp += 1;
            }
            if p.rewritable {
                fired_rewritable += 1;
            }
            next += 1;
        }
        let fn_ = rewritable - fired_rewritable;
        if tp + fp == 0 || tp + fn_ == 0 {
            continue;
        }
        points.push(PrPoint {
            threshold: t,
            precision: tp as f64 / (tp + fp) as f64,
            recall: tp as f64 / (tp + fn_) as f64,
        });
    }
    if points.is_empty() {
        return Err(EvalError::Degenerate);
    }
    points.reverse();
    Ok(PrCurve { points })
}

/// Average precision: `Σ precision · Δrecall` walking thresholds downwards.
pub fn auc_pr(curve: &PrCurve) -> f64 {
    let mut prev = 0.0;
    let mut area = 0.0;
    for p in curve.points.iter().rev() {
        area += p.precision * (p.recall - prev);
        prev = p.recall;
    }
    area
}

/// Highest recall among points with precision at least `p`.
pub fn recall_at_precision(curve: &PrCurve, p: f64) -> Option<f64> {
    operating_point(curve, p).map(|pt| pt.recall)
}

/// The point realising [`recall_at_precision`]; ties go to the higher threshold.
pub fn operating_point(curve: &PrCurve, p: f64) -> Option<PrPoint> {
    let mut best: Option<PrPoint> = None;
    for pt in curve.points.iter().filter(|pt| pt.precision >= p) {
        match best {
            Some(b) if pt.recall < b.recall => {}
            Some(b) if pt.recall == b.recall && pt.threshold <= b.threshold => {}
            _ => best = Some(*pt),
        }
    }
    best
}

/// Share of fired rewrites whose intent differs from the rephrase's.
/// Unparseable rewrites count as intent errors.
pub fn intent_error_rate(preds: &[Prediction], threshold: f64) -> Option<f64> {
    let fired: Vec<&Prediction> = preds.iter().filter(|p| p.fires(threshold)).collect();
    if fired.is_empty() {
        return None;
    }
    let wrong = fired
        .iter()
        .filter(|p| {
            p.annotation
                .as_ref()
                .map_or(true, |a| a.intent != p.rephrase.intent)
        })
        .count();
    Some(wrong as f64 / fired.len() as f64)
}

pub const TARGET_PRECISION: f64 = 0.9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n_pairs: usize,
    pub n_rewritable: usize,
    pub auc_pr: f64,
    pub recall_at_p90: Option<f64>,
    pub operating_threshold: Option<f64>,
    pub intent_error_rate: Option<f64>,
    pub confusion: Option<ConfusionCounts>,
}

pub fn compute_metrics(preds: &[Prediction]) -> Result<(Metrics, PrCurve), EvalError> {
    let curve = pr_curve(preds)?;
    let op = operating_point(&curve, TARGET_PRECISION);
    let metrics = Metrics {
        n_pairs: preds.len(),
        n_rewritable: preds.iter().filter(|p| p.rewritable).count(),
        auc_pr: auc_pr(&curve),
        recall_at_p90: op.map(|p| p.recall),
        operating_threshold: op.map(|p| p.threshold),
        intent_error_rate: op.and_then(|p| intent_error_rate(preds, p.threshold)),
        confusion: op.map(|p| ConfusionCounts::at(preds, p.threshold)),
    };
    Ok((metrics, curve))
}

pub fn write_prcurve_csv<W: Write>(mut w: W, curve: &PrCurve) -> Result<(), EvalError> {
    writeln!(w, "threshold,precision,recall")?;
    for p in &curve.points {
        writeln!(w, "{},{},{}", p.threshold, p.precision, p.recall)?;
    }
    Ok(())
}
