use crate::error::{Error, Result};

/// Classification quality over a set of predictions. Classes with no
/// predicted (or no actual) samples score zero precision (or recall).
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub samples: usize,
    pub accuracy: f64,
    /// `confusion[actual][predicted]`.
    pub confusion: Vec<Vec<u64>>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    /// Mean of the per-class F1 scores.
    pub macro_f1: f64,
}

impl MetricsReport {
    pub fn from_predictions(
        predictions: &[usize],
        labels: &[usize],
        classes: usize,
    ) -> Result<Self> {
        if predictions.is_empty() {
            return Err(Error::invalid("metrics over an empty dataset"));
        }
        if predictions.len() != labels.len() {
            return Err(Error::invalid(format!(
                "{} predictions for {} labels",
                predictions.len(),
                labels.len()
            )));
        }
        let mut confusion = vec![vec![0u64; classes]; classes];
        for (&p, &l) in predictions.iter().zip(labels) {
            if p >= classes || l >= classes {
                return Err(Error::invalid(format!(
                    "class index outside [0, {classes}): predicted {p}, actual {l}"
                )));
            }
            confusion[l][p] += 1;
        }
        let ratio = |num: u64, den: u64| {
            if den == 0 {
                0.0
            } else {
                num as f64 / den as f64
            }
        };
        let mut precision = Vec::with_capacity(classes);
        let mut recall = Vec::with_capacity(classes);
        let mut f1 = Vec::with_capacity(classes);
        for c in 0..classes {
            let tp = confusion[c][c];
            let predicted: u64 = confusion.iter().map(|row| row[c]).sum();
            let actual: u64 = confusion[c].iter().sum();
            let p = ratio(tp, predicted);
            let r = ratio(tp, actual);
            precision.push(p);
            recall.push(r);
            f1.push(if p + r == 0.0 {
                0.0
            } else {
                2.0 * p * r / (p + r)
            });
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / classes as f64;
        let correct: u64 = (0..classes).map(|c| confusion[c][c]).sum();
        Ok(Self {
            samples: predictions.len(),
            accuracy: correct as f64 / predictions.len() as f64,
            macro_precision: mean(&precision),
            macro_recall: mean(&recall),
            macro_f1: mean(&f1),
            confusion,
            precision,
            recall,
            f1,
        })
    }
}
