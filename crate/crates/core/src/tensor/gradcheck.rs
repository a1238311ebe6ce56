use super::{Tape, Tensor, TensorError};

#[derive(Debug, thiserror::Error)]
pub enum GradCheckError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("loss is not finite at parameter {param}[{index}] ({value})")]
    NonFinite { param: usize, index: usize, value: f64 },
}

/// Outcome of a finite-difference gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (parameter, flat index) where the worst error occurred
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    /// Reverse-mode gradient of every parameter.
    pub analytic_grads: Vec<Vec<f64>>,
    /// Central-difference gradient of every parameter.
    pub numeric_grads: Vec<Vec<f64>>,
}

impl GradCheckReport {
    /// `||a - c|| / (||a|| + ||c|| + 1e-12)` for each parameter tensor.
    pub fn tensor_errors(&self) -> Vec<f64> {
        self.analytic_grads
            .iter()
            .zip(&self.numeric_grads)
            .map(|(a, c)| {
                let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
                let diff = norm(&mut a.iter().zip(c).map(|(x, y)| x - y));
                diff / (norm(&mut a.iter().copied()) + norm(&mut c.iter().copied()) + 1e-12)
            })
            .collect()
    }

    /// Largest [`tensor_errors`](Self::tensor_errors) entry and its parameter.
    pub fn max_tensor_error(&self) -> (usize, f64) {
        self.tensor_errors()
            .into_iter()
            .enumerate()
            .fold((0, 0.0), |best, (i, e)| if e > best.1 { (i, e) } else { best })
    }
}

/// `|a - b| / (|a| + |b| + 1e-12)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs() + 1e-12)
}

/// Compares reverse-mode gradients of `loss` against central differences
/// with step `eps`, over every scalar of every tensor in `params`.
///
/// `loss` is called once with tracked leaves and then twice per scalar with
/// untracked, perturbed copies. It must be deterministic.
pub fn grad_check<F>(params: &[Tensor], eps: f64, mut loss: F) -> Result<GradCheckReport, GradCheckError>
where
    F: FnMut(&[Tensor]) -> Result<Tensor, TensorError>,
{
    let tape = Tape::new();
    let leaves: Vec<Tensor> = params.iter().map(|p| tape.leaf(p)).collect();
    let value = loss(&leaves)?;
    if !value.item().is_finite() {
        return Err(GradCheckError::NonFinite {
            param: 0,
            index: 0,
            value: value.item(),
        });
    }
    let grads = tape.backward(&value)?;
    let analytic_grads: Vec<Vec<f64>> = leaves.iter().map(|leaf| grads.wrt(leaf)).collect();
    drop(leaves);

    let mut work: Vec<Tensor> = params.iter().map(Tensor::detach).collect();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
        analytic_grads: Vec::new(),
        numeric_grads: Vec::new(),
    };
    for (pi, param) in params.iter().enumerate() {
        let tracked = &analytic_grads[pi];
        let mut numeric_grad = Vec::with_capacity(param.numel());
        for idx in 0..param.numel() {
            let mut evaluate = |delta: f64| -> Result<f64, GradCheckError> {
                let mut data = param.to_vec();
                data[idx] += delta;
                work[pi] = Tensor::new(param.shape(), data)?;
                let v = loss(&work)?.item();
                if !v.is_finite() {
                    return Err(GradCheckError::NonFinite { param: pi, index: idx, value: v });
                }
                Ok(v)
            };
            let plus = evaluate(eps)?;
            let minus = evaluate(-eps)?;
            let numeric = (plus - minus) / (2.0 * eps);
            numeric_grad.push(numeric);
            let analytic = tracked[idx];
            let err = relative_error(analytic, numeric);
            if err >= report.max_rel_error {
                report.max_rel_error = err;
                report.worst = (pi, idx);
                report.analytic = analytic;
                report.numeric = numeric;
            }
            report.checked += 1;
        }
        work[pi] = param.detach();
        report.numeric_grads.push(numeric_grad);
    }
    report.analytic_grads = analytic_grads;
    Ok(report)
}
