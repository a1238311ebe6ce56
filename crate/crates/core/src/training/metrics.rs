use serde::{Deserialize, Serialize};

/// Targets with magnitude at or below this are left out of MAPE.
pub const MAPE_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    pub rmse: f64,
    /// Percent. `None` when every target is masked.
    pub mape: Option<f64>,
}

/// MAE, RMSE and masked MAPE over matching slices of denormalized values.
pub fn metrics(pred: &[f64], target: &[f64]) -> Metrics {
    assert_eq!(pred.len(), target.len(), "prediction and target lengths differ");
    let mut acc = Accumulator::default();
    acc.extend(pred, target);
    acc.finish()
}

/// Streaming form of [`metrics`] for batched evaluation.
#[derive(Debug, Clone, Default)]
pub struct Accumulator {
    abs: f64,
    sq: f64,
    count: usize,
    pct: f64,
    pct_count: usize,
}

impl Accumulator {
    pub fn extend(&mut self, pred: &[f64], target: &[f64]) {
        for (&p, &t) in pred.iter().zip(target) {
            let e = p - t;
            self.abs += e.abs();
            self.sq += e * e;
            self.count += 1;
            if t.abs() > MAPE_FLOOR {
                self.pct += (e / t).abs();
                self.pct_count += 1;
            }
        }
    }

    pub fn finish(&self) -> Metrics {
        let n = self.count.max(1) as f64;
        Metrics {
            mae: self.abs / n,
            rmse: (self.sq / n).sqrt(),
            mape: (self.pct_count > 0).then(|| 100.0 * self.pct / self.pct_count as f64),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect_prediction() {
        let t = [1.0, -2.0, 3.5];
        assert_eq!(
            metrics(&t, &t),
            Metrics {
                mae: 0.0,
                rmse: 0.0,
                mape: Some(0.0)
            }
        );
    }

    #[test]
    fn constant_offset() {
        let target = vec![10.0; 12];
        let pred = vec![11.0; 12];
        let m = metrics(&pred, &target);
        assert_eq!((m.mae, m.rmse), (1.0, 1.0));
        assert!((m.mape.unwrap() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn small_targets_are_masked() {
        let m = metrics(&[1.0, 3.0], &[0.0, 2.0]);
        assert_eq!(m.mae, 1.0);
        assert!((m.mape.unwrap() - 50.0).abs() < 1e-12);
        let m = metrics(&[1.0, 2.0], &[0.0, -MAPE_FLOOR]);
        assert_eq!(m.mape, None);
        let e2 = 2.0 + MAPE_FLOOR;
        assert!((m.rmse - ((1.0 + e2 * e2) / 2.0).sqrt()).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn rmse_at_least_mae(pairs in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 1..50)) {
            let (p, t): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let m = metrics(&p, &t);
            prop_assert!(m.rmse >= m.mae - 1e-12);
        }
    }
}
