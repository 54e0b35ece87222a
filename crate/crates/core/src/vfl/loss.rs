use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Mean softmax cross-entropy over a batch of score rows, with its gradient
/// with respect to the scores. Evaluated in f64 with log-sum-exp.
pub fn cross_entropy<F: Real>(scores: &Tensor<F>, labels: &[usize]) -> Result<(f64, Tensor<F>)> {
    if scores.rank() != 2 || scores.dim(0) != labels.len() {
        return Err(Error::shape(
            "cross_entropy",
            format!("scores {:?} for {} labels", scores.shape(), labels.len()),
        ));
    }
    let (b, c) = (scores.dim(0), scores.dim(1));
    if b == 0 {
        return Err(Error::invalid("cross-entropy over an empty batch"));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::invalid(format!("label {bad} outside [0, {c})")));
    }
    let mut loss = 0.0;
    let mut grad = vec![F::zero(); b * c];
    for (i, &label) in labels.iter().enumerate() {
        let row: Vec<f64> = scores.data()[i * c..(i + 1) * c]
            .iter()
            .map(|v| v.as_f64())
            .collect();
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + z.ln();
        loss += log_z - row[label];
        for (j, v) in row.iter().enumerate() {
            let p = (v - log_z).exp();
            let target = if j == label { 1.0 } else { 0.0 };
            grad[i * c + j] = F::lit((p - target) / b as f64);
        }
    }
    let loss = loss / b as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            op: "cross_entropy",
        });
    }
    Ok((loss, Tensor::new(vec![b, c], grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_scores_give_log_c() {
        let s = Tensor::<f32>::zeros(&[3, 5]);
        let (loss, grad) = cross_entropy(&s, &[0, 2, 4]).unwrap();
        assert!((loss - 5f64.ln()).abs() < 1e-12);
        assert!((grad.data()[0] as f64 - (0.2 - 1.0) / 3.0).abs() < 1e-7);
        for row in grad.data().chunks(5) {
            assert!(row.iter().map(|&g| g as f64).sum::<f64>().abs() < 1e-7);
        }
    }

    #[test]
    fn large_scores_stay_finite() {
        let s = Tensor::new(vec![1, 2], vec![1000.0f32, -1000.0]).unwrap();
        let (loss, _) = cross_entropy(&s, &[0]).unwrap();
        assert!(loss.abs() < 1e-12);
        assert!(cross_entropy(&s, &[2]).is_err());
    }
}
