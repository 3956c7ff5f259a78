use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

fn check<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> Result<(usize, usize)> {
    let [b, c] = logits.shape()[..] else {
        return Err(Error::InvalidInput(format!(
            "logits must be [batch, classes], got {:?}",
            logits.shape()
        )));
    };
    if labels.len() != b {
        return Err(Error::InvalidInput(format!(
            "{} labels for a batch of {b}",
            labels.len()
        )));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::InvalidInput(format!(
            "label {l} out of range for {c} classes"
        )));
    }
    Ok((b, c))
}

/// Mean softmax cross-entropy over the batch and its gradient with respect to `logits`.
pub fn softmax_cross_entropy<T: Real>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<(f64, Tensor<T>)> {
    let (b, c) = check(logits, labels)?;
    let mut grad = vec![T::zero(); b * c];
    let mut loss = 0.0;
    let inv_b = T::lit(1.0 / b as f64);
    for ((row, g), &y) in logits.data().chunks(c).zip(grad.chunks_mut(c)).zip(labels) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut z = T::zero();
        for (gi, &v) in g.iter_mut().zip(row) {
            *gi = (v - max).exp();
            z += *gi;
        }
        loss += (z.ln() - (row[y] - max)).as_f64();
        for gi in g.iter_mut() {
            *gi = *gi / z * inv_b;
        }
        g[y] -= inv_b;
    }
    let loss = loss / b as f64;
    if !loss.is_finite() {
        return Err(Error::NaN("cross-entropy loss".into()));
    }
    Ok((loss, Tensor::new(&[b, c], grad)?))
}

/// Number of rows whose arg-max equals the label (first maximum wins).
pub fn accuracy<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> Result<usize> {
    let (_, c) = check(logits, labels)?;
    Ok(logits
        .data()
        .chunks(c)
        .zip(labels)
        .filter(|(row, &y)| {
            let mut best = 0;
            for (i, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = i;
                }
            }
            best == y
        })
        .count())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_log_classes() {
        let logits = Tensor::<f64>::zeros(&[2, 4]);
        let (loss, g) = softmax_cross_entropy(&logits, &[0, 3]).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-12);
        assert!((g.data()[0] - (0.25 - 1.0) / 2.0).abs() < 1e-12);
        assert!((g.data()[1] - 0.125).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let logits = Tensor::<f64>::from_f64(&[1, 3], &[0.3, -1.2, 2.0]).unwrap();
        let (_, g) = softmax_cross_entropy(&logits, &[1]).unwrap();
        for i in 0..3 {
            let mut p = logits.clone();
            p.data_mut()[i] += 1e-6;
            let mut m = logits.clone();
            m.data_mut()[i] -= 1e-6;
            let fd = (softmax_cross_entropy(&p, &[1]).unwrap().0
                - softmax_cross_entropy(&m, &[1]).unwrap().0)
                / 2e-6;
            assert!((fd - g.data()[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn accuracy_counts_argmax_hits() {
        let logits = Tensor::<f32>::from_f64(&[3, 2], &[1.0, 0.0, 0.0, 1.0, 0.5, 0.5]).unwrap();
        assert_eq!(accuracy(&logits, &[0, 0, 0]).unwrap(), 2);
        assert!(accuracy(&logits, &[0, 2, 0]).is_err());
    }
}
