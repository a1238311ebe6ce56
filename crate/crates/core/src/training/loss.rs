use crate::tensor::{Result, Tensor, TensorError};

/// Mean Huber loss with threshold `delta`: quadratic for `|e| <= delta`,
/// linear beyond.
pub fn huber(pred: &Tensor, target: &Tensor, delta: f64) -> Result<Tensor> {
    if !(delta > 0.0) {
        return Err(TensorError::Invalid {
            op: "huber",
            reason: format!("delta must be positive, got {delta}"),
        });
    }
    if pred.shape() != target.shape() {
        return Err(TensorError::Shape {
            op: "huber",
            lhs: pred.shape().to_vec(),
            rhs: target.shape().to_vec(),
        });
    }
    let errors: Vec<f64> = pred.data().iter().zip(target.data().iter()).map(|(p, t)| p - t).collect();
    let n = errors.len().max(1) as f64;
    let value = errors
        .iter()
        .map(|&e| {
            if e.abs() <= delta {
                0.5 * e * e
            } else {
                delta * (e.abs() - 0.5 * delta)
            }
        })
        .sum::<f64>()
        / n;
    // d/de, already divided by the element count
    let slope: Vec<f64> = errors.iter().map(|&e| e.clamp(-delta, delta) / n).collect();
    Ok(Tensor::from_op(vec![], vec![value], &[pred, target], move |g| {
        let d_pred: Vec<f64> = slope.iter().map(|s| s * g[0]).collect();
        let d_target = d_pred.iter().map(|v| -v).collect();
        vec![d_pred, d_target]
    }))
}

/// `huber + alpha * kl`.
pub fn total_loss(pred: &Tensor, target: &Tensor, kl: &Tensor, alpha: f64, delta: f64) -> Result<Tensor> {
    let h = huber(pred, target, delta)?;
    if alpha == 0.0 {
        return Ok(h);
    }
    h.add(&kl.scale(alpha))
}
