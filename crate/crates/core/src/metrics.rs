//! Per-class accuracy, balanced accuracy and the Pearson fairness score.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{forward, ModelSpec, ParamVector};

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    /// Recall per class; 0 for classes without samples.
    pub per_class_acc: Vec<f64>,
    /// Samples per class in the evaluation set.
    pub class_counts: Vec<usize>,
    /// Mean recall over classes that have at least one sample.
    pub balanced_acc: f64,
    pub n_eval: usize,
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = j;
        }
    }
    best
}

/// Builds a report from predicted and true labels.
pub fn report_from_predictions(
    predictions: &[usize],
    labels: &[usize],
    num_classes: usize,
) -> Result<EvalReport> {
    if predictions.len() != labels.len() {
        return Err(Error::shape(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let mut hits = vec![0usize; num_classes];
    let mut counts = vec![0usize; num_classes];
    for (&p, &y) in predictions.iter().zip(labels) {
        if y >= num_classes {
            return Err(Error::input(format!("label {y} out of range")));
        }
        counts[y] += 1;
        if p == y {
            hits[y] += 1;
        }
    }
    let per_class_acc: Vec<f64> = hits
        .iter()
        .zip(&counts)
        .map(|(&h, &c)| if c == 0 { 0.0 } else { h as f64 / c as f64 })
        .collect();
    let present = counts.iter().filter(|&&c| c > 0).count();
    let balanced_acc = if present == 0 {
        0.0
    } else {
        per_class_acc
            .iter()
            .zip(&counts)
            .filter(|(_, &c)| c > 0)
            .map(|(a, _)| a)
            .sum::<f64>()
            / present as f64
    };
    Ok(EvalReport {
        per_class_acc,
        class_counts: counts,
        balanced_acc,
        n_eval: labels.len(),
    })
}

pub fn predict(params: &ParamVector, spec: &ModelSpec, data: &Dataset) -> Result<Vec<usize>> {
    let logits = forward(params, spec, data.features())?;
    Ok((0..logits.rows()).map(|b| argmax(logits.row(b))).collect())
}

/// Argmax predictions scored per class against `data`.
pub fn evaluate(params: &ParamVector, spec: &ModelSpec, data: &Dataset) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::input("evaluation set is empty"));
    }
    let predictions = predict(params, spec, data)?;
    report_from_predictions(&predictions, data.labels(), spec.num_classes)
}

/// Sample Pearson correlation. `degenerate` is set, and `r` is 0, when either
/// input has (near) zero variance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Correlation {
    pub r: f64,
    pub degenerate: bool,
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<Correlation> {
    if x.len() != y.len() {
        return Err(Error::shape(format!(
            "pearson inputs have lengths {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::input("pearson needs at least two points"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    // Compare variances, not sums of squares.
    if sxx / n <= 1e-15 || syy / n <= 1e-15 {
        return Ok(Correlation {
            r: 0.0,
            degenerate: true,
        });
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    Ok(Correlation { r, degenerate: false })
}
