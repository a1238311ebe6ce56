//! Forward-pass timing sweep over history lengths.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::model::{expected_scores, Model, ModelConfig, Variant};
use crate::rng::{seeded, standard_normal, Sampling};
use crate::tensor::memory;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSpec {
    pub variants: Vec<Variant>,
    pub histories: Vec<usize>,
    pub n_sensors: usize,
    pub d: usize,
    pub p: usize,
    pub windows: Vec<usize>,
    pub batch: usize,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for BenchSpec {
    fn default() -> Self {
        BenchSpec {
            variants: vec![Variant::SelfAttention, Variant::Window, Variant::SpatioTemporalWindow],
            histories: vec![12, 24, 48, 96],
            n_sensors: 8,
            d: 16,
            p: 1,
            windows: vec![3, 2, 2],
            batch: 8,
            repeats: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub variant: String,
    #[serde(rename = "H")]
    pub h: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub p: usize,
    /// Window sizes joined with `-`.
    #[serde(rename = "S")]
    pub s: String,
    pub median_seconds: Option<f64>,
    /// Attention scores per sample.
    pub analytic_scores: Option<u64>,
    pub peak_bytes: Option<usize>,
    /// Why the row was skipped; empty for measured rows.
    pub reason: String,
}

impl BenchSpec {
    pub fn config(&self, variant: Variant, h: usize) -> ModelConfig {
        ModelConfig {
            n_sensors: Some(self.n_sensors),
            features: Some(1),
            history: h,
            horizon: 12,
            d: self.d,
            k: self.d.min(16),
            layers: self.windows.len(),
            windows: self.windows.clone(),
            p: self.p,
            variant,
            seed: self.seed,
            ..ModelConfig::default()
        }
    }
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// One row for a (variant, H) pair: a warm-up pass, then the median of
/// `repeats` timed forward passes.
pub fn bench_one(spec: &BenchSpec, variant: Variant, h: usize) -> BenchRecord {
    let config = spec.config(variant, h);
    let mut record = BenchRecord {
        variant: variant.name().to_string(),
        h,
        n: spec.n_sensors,
        p: spec.p,
        s: spec.windows.iter().map(usize::to_string).collect::<Vec<_>>().join("-"),
        median_seconds: None,
        analytic_scores: None,
        peak_bytes: None,
        reason: String::new(),
    };
    let model = match Model::new(&config, &mut seeded(spec.seed)) {
        Ok(m) => m,
        Err(e) => {
            record.reason = e.to_string();
            return record;
        }
    };
    let x = standard_normal(&mut seeded(spec.seed ^ 0x5eed), &[spec.batch, spec.n_sensors, h, 1]);
    let p = model.bind(None);
    let run = || model.forward(&p, &x, &mut Sampling::Mean);
    let warm = match run() {
        Ok(out) => out,
        Err(e) => {
            record.reason = e.to_string();
            return record;
        }
    };
    let analytic = expected_scores(&config);
    debug_assert_eq!(warm.scores.0, analytic * spec.batch as u64);
    drop(warm);

    let mut times = Vec::with_capacity(spec.repeats);
    let mut peak = 0;
    for _ in 0..spec.repeats.max(1) {
        let base = memory::live_bytes();
        memory::reset_peak();
        let start = Instant::now();
        let out = run().expect("warm-up succeeded");
        times.push(start.elapsed().as_secs_f64());
        drop(out);
        peak = peak.max(memory::peak_bytes() - base);
    }
    record.median_seconds = Some(median(&mut times));
    record.analytic_scores = Some(analytic);
    record.peak_bytes = Some(peak);
    record
}

/// Every (variant, H) pair, sorted by variant name then H.
pub fn run(spec: &BenchSpec) -> Vec<BenchRecord> {
    let mut rows = Vec::new();
    for &variant in &spec.variants {
        for &h in &spec.histories {
            rows.push(bench_one(spec, variant, h));
        }
    }
    rows.sort_by(|a, b| a.variant.cmp(&b.variant).then(a.h.cmp(&b.h)));
    rows
}

pub fn write_csv(rows: &[BenchRecord], out: impl std::io::Write) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// `time(H_last) / time(H_first)` for one variant, when both rows were measured.
pub fn growth(rows: &[BenchRecord], variant: Variant, from: usize, to: usize) -> Option<f64> {
    let time = |h| {
        rows.iter()
            .find(|r| r.variant == variant.name() && r.h == h)
            .and_then(|r| r.median_seconds)
    };
    Some(time(to)? / time(from)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::count_scores;

    fn tiny() -> BenchSpec {
        BenchSpec {
            variants: vec![Variant::Window, Variant::SelfAttention],
            histories: vec![24, 12, 10],
            n_sensors: 2,
            d: 4,
            batch: 1,
            repeats: 1,
            ..BenchSpec::default()
        }
    }

    #[test]
    fn rows_are_sorted_and_indivisible_h_is_skipped() {
        let rows = run(&tiny());
        let keys: Vec<_> = rows.iter().map(|r| (r.variant.as_str(), r.h)).collect();
        assert_eq!(keys, vec![("SA", 10), ("SA", 12), ("SA", 24), ("WA", 10), ("WA", 12), ("WA", 24)]);
        let skipped = &rows[3];
        assert!(skipped.median_seconds.is_none());
        assert!(skipped.reason.contains("does not divide"), "{}", skipped.reason);
        // canonical attention has no window constraint
        assert!(rows[0].reason.is_empty());
    }

    #[test]
    fn analytic_counts_match_count_scores() {
        let spec = tiny();
        for row in run(&spec).iter().filter(|r| r.reason.is_empty()) {
            let variant: Variant = row.variant.parse().unwrap();
            let totals = count_scores(&spec.config(variant, row.h));
            let expected = if variant == Variant::SelfAttention { totals.canonical } else { totals.window };
            assert_eq!(row.analytic_scores, Some(expected));
            assert!(row.peak_bytes.unwrap() > 0);
        }
    }

    #[test]
    fn csv_has_header_and_lf_endings() {
        let rows = run(&tiny());
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("variant,H,N,p,S,median_seconds,analytic_scores,peak_bytes,reason\n"));
        assert!(!text.contains('\r'));
        assert_eq!(text.lines().count(), rows.len() + 1);
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let back: Vec<BenchRecord> = reader.deserialize().collect::<Result<_, _>>().unwrap();
        assert_eq!(back.len(), rows.len());
        assert_eq!(back[3].reason, rows[3].reason);
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 3.0, 2.0]), 2.5);
    }
}
