//! Scoring rules and error metrics for ensemble forecasts.
//!
//! Sample tensors are laid out `[S, τ, N]` row-major (path, time, series);
//! truth and point forecasts are `[τ, N]`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{LatteError, Result};

/// Levels of the fan-chart bands emitted by forecasts.
pub const DEFAULT_LEVELS: [f64; 5] = [0.05, 0.25, 0.5, 0.75, 0.95];

/// Empirical CRPS of a sample ensemble against one observation:
/// (1/S)Σ|X_s − y| − (1/(2S²))Σ_{s,s'}|X_s − X_s'|.
pub fn crps_empirical(samples: &[f64], y: f64) -> Result<f64> {
    let s = samples.len();
    if s < 2 {
        return Err(LatteError::contract(format!("CRPS needs at least 2 samples, got {s}")));
    }
    let n = s as f64;
    let abs_err = samples.iter().map(|x| (x - y).abs()).sum::<f64>() / n;
    let mut spread = 0.0;
    for (i, a) in samples.iter().enumerate() {
        for b in &samples[i + 1..] {
            spread += (a - b).abs();
        }
    }
    // each unordered pair appears twice in the double sum
    Ok(abs_err - spread / (n * n))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CrpsSumMode {
    /// Divided by the mean absolute summed truth over the horizon.
    #[default]
    Normalized,
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PointEstimate {
    #[default]
    Mean,
    Median,
}

/// Sample ensemble plus the realized values it is scored against.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleForecast {
    pub samples: Vec<f64>,
    pub truth: Vec<f64>,
    pub num_samples: usize,
    pub horizon: usize,
    pub num_series: usize,
    pub series_names: Vec<String>,
}

impl EnsembleForecast {
    pub fn new(
        samples: Vec<f64>,
        truth: Vec<f64>,
        num_samples: usize,
        horizon: usize,
        series_names: Vec<String>,
    ) -> Result<Self> {
        let num_series = series_names.len();
        if samples.len() != num_samples * horizon * num_series {
            return Err(LatteError::dim(format!(
                "samples hold {} values, expected {}x{}x{}",
                samples.len(),
                num_samples,
                horizon,
                num_series
            )));
        }
        if truth.len() != horizon * num_series {
            return Err(LatteError::dim(format!(
                "truth holds {} values, expected {}x{}",
                truth.len(),
                horizon,
                num_series
            )));
        }
        Ok(Self {
            samples,
            truth,
            num_samples,
            horizon,
            num_series,
            series_names,
        })
    }

    fn sample(&self, s: usize, t: usize, n: usize) -> f64 {
        self.samples[(s * self.horizon + t) * self.num_series + n]
    }

    /// Point forecast `[τ, N]`.
    pub fn point(&self, estimate: PointEstimate) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.horizon * self.num_series);
        let mut buf = Vec::with_capacity(self.num_samples);
        for t in 0..self.horizon {
            for n in 0..self.num_series {
                buf.clear();
                buf.extend((0..self.num_samples).map(|s| self.sample(s, t, n)));
                out.push(match estimate {
                    PointEstimate::Mean => buf.iter().sum::<f64>() / buf.len() as f64,
                    PointEstimate::Median => {
                        buf.sort_by(f64::total_cmp);
                        interpolated_quantile(&buf, 0.5)
                    }
                });
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrpsSum {
    /// Normalized score.
    pub normalized: f64,
    /// Horizon-averaged CRPS of the summed series, without normalization.
    pub raw: f64,
    /// CRPS of the summed series at each horizon step.
    pub trace: Vec<f64>,
}

impl CrpsSum {
    pub fn value(&self, mode: CrpsSumMode) -> f64 {
        match mode {
            CrpsSumMode::Normalized => self.normalized,
            CrpsSumMode::Raw => self.raw,
        }
    }
}

/// CRPS of the across-series sum, averaged over the horizon.
pub fn crps_sum(forecast: &EnsembleForecast) -> Result<CrpsSum> {
    let (s_count, tau, n_count) = (forecast.num_samples, forecast.horizon, forecast.num_series);
    let mut trace = Vec::with_capacity(tau);
    let mut abs_truth = 0.0;
    let mut summed = vec![0.0; s_count];
    for t in 0..tau {
        for (s, slot) in summed.iter_mut().enumerate() {
            *slot = (0..n_count).map(|n| forecast.sample(s, t, n)).sum();
        }
        let y: f64 = forecast.truth[t * n_count..(t + 1) * n_count].iter().sum();
        abs_truth += y.abs();
        trace.push(crps_empirical(&summed, y)?);
    }
    let raw = trace.iter().sum::<f64>() / tau as f64;
    let scale = abs_truth / tau as f64;
    if !(scale > 0.0) {
        return Err(LatteError::UndefinedMetric {
            series: "sum".into(),
            reason: "summed truth is zero over the whole horizon".into(),
        });
    }
    Ok(CrpsSum {
        normalized: raw / scale,
        raw,
        trace,
    })
}

/// Per-series mean squared error after dividing both forecast and truth by
/// the sum of absolute truth values of that series.
pub fn nmse(pred: &[f64], truth: &[f64], horizon: usize, series_names: &[String]) -> Result<Vec<f64>> {
    let n_count = series_names.len();
    if pred.len() != horizon * n_count || truth.len() != horizon * n_count {
        return Err(LatteError::dim(format!(
            "nmse expects {}x{} values, got {} predicted and {} true",
            horizon,
            n_count,
            pred.len(),
            truth.len()
        )));
    }
    (0..n_count)
        .map(|n| {
            let norm: f64 = (0..horizon).map(|t| truth[t * n_count + n].abs()).sum();
            if !(norm > 0.0) {
                return Err(LatteError::UndefinedMetric {
                    series: series_names[n].clone(),
                    reason: "truth is identically zero over the horizon".into(),
                });
            }
            let mse = (0..horizon)
                .map(|t| {
                    let k = t * n_count + n;
                    (pred[k] / norm - truth[k] / norm).powi(2)
                })
                .sum::<f64>()
                / horizon as f64;
            Ok(mse)
        })
        .collect()
}

/// Linear interpolation between order statistics: position p·(S − 1).
fn interpolated_quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Empirical quantiles per (level, t, n), stored `[L, τ, N]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileBands {
    pub levels: Vec<f64>,
    pub horizon: usize,
    pub num_series: usize,
    pub values: Vec<f64>,
}

impl QuantileBands {
    pub fn get(&self, level: usize, t: usize, n: usize) -> f64 {
        self.values[(level * self.horizon + t) * self.num_series + n]
    }
}

pub fn quantile_bands(
    samples: &[f64],
    num_samples: usize,
    horizon: usize,
    num_series: usize,
    levels: &[f64],
) -> Result<QuantileBands> {
    if levels.is_empty() {
        return Err(LatteError::contract("quantile_bands needs at least one level"));
    }
    if let Some(l) = levels.iter().find(|l| !(**l > 0.0 && **l < 1.0)) {
        return Err(LatteError::contract(format!("quantile level {l} outside (0, 1)")));
    }
    if num_samples == 0 {
        return Err(LatteError::contract("quantile_bands needs at least one sample"));
    }
    if samples.len() != num_samples * horizon * num_series {
        return Err(LatteError::dim(format!(
            "{} samples do not form {}x{}x{}",
            samples.len(),
            num_samples,
            horizon,
            num_series
        )));
    }
    let mut sorted_levels = levels.to_vec();
    sorted_levels.sort_by(f64::total_cmp);
    let mut values = vec![0.0; sorted_levels.len() * horizon * num_series];
    let mut buf = Vec::with_capacity(num_samples);
    for t in 0..horizon {
        for n in 0..num_series {
            buf.clear();
            buf.extend((0..num_samples).map(|s| samples[(s * horizon + t) * num_series + n]));
            buf.sort_by(f64::total_cmp);
            for (l, &p) in sorted_levels.iter().enumerate() {
                values[(l * horizon + t) * num_series + n] = interpolated_quantile(&buf, p);
            }
        }
    }
    Ok(QuantileBands {
        levels: sorted_levels,
        horizon,
        num_series,
        values,
    })
}

/// Scores for one evaluation window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub window_id: usize,
    pub model_id: String,
    pub nmse: BTreeMap<String, f64>,
    pub crps_sum: f64,
    pub crps_sum_raw: f64,
    pub crps_trace: Vec<f64>,
}

impl MetricReport {
    pub fn score(forecast: &EnsembleForecast, window_id: usize, model_id: &str, point: PointEstimate) -> Result<Self> {
        let cs = crps_sum(forecast)?;
        let pred = forecast.point(point);
        let per_series = nmse(&pred, &forecast.truth, forecast.horizon, &forecast.series_names)?;
        Ok(Self {
            window_id,
            model_id: model_id.to_string(),
            nmse: forecast.series_names.iter().cloned().zip(per_series).collect(),
            crps_sum: cs.normalized,
            crps_sum_raw: cs.raw,
            crps_trace: cs.trace,
        })
    }

    pub fn mean_nmse(&self) -> f64 {
        self.nmse.values().sum::<f64>() / self.nmse.len().max(1) as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;
    use proptest::prelude::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("s{i}")).collect()
    }

    #[test]
    fn crps_collapses_to_zero() {
        assert_eq!(crps_empirical(&[2.5; 10], 2.5).unwrap(), 0.0);
    }

    #[test]
    fn crps_two_point_example() {
        // E|X - y| = 1, E|X - X'| / 2 = 0.5
        assert!((crps_empirical(&[0.0, 2.0], 1.0).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn crps_needs_two_samples() {
        assert!(matches!(crps_empirical(&[1.0], 0.0), Err(LatteError::Contract(_))));
    }

    #[test]
    fn crps_gaussian_closed_form() {
        let mut rng = SeededRng::new(4);
        let xs = rng.normal_vec(10_000);
        let expected = 2.0 / (2.0 * std::f64::consts::PI).sqrt() - 1.0 / std::f64::consts::PI.sqrt();
        assert!((expected - 0.23370).abs() < 1e-5);
        let got = crps_empirical(&xs, 0.0).unwrap();
        assert!((got - expected).abs() < 0.01, "{got}");
    }

    #[test]
    fn crps_is_proper_at_desk_scale() {
        let mut rng = SeededRng::new(8);
        let (mut right, mut wrong) = (0.0, 0.0);
        let trials = 10_000;
        for _ in 0..trials {
            let y = rng.normal();
            let good: Vec<f64> = rng.normal_vec(20);
            let bad: Vec<f64> = rng.normal_vec(20).iter().map(|v| v + 1.0).collect();
            right += crps_empirical(&good, y).unwrap();
            wrong += crps_empirical(&bad, y).unwrap();
        }
        assert!(right < wrong, "{right} vs {wrong}");
    }

    proptest! {
        #[test]
        fn crps_positively_homogeneous(
            xs in prop::collection::vec(-50.0f64..50.0, 2..30),
            y in -50.0f64..50.0,
            c in 0.01f64..100.0,
        ) {
            let base = crps_empirical(&xs, y).unwrap();
            let scaled: Vec<f64> = xs.iter().map(|v| v * c).collect();
            let got = crps_empirical(&scaled, y * c).unwrap();
            prop_assert!((got - c * base).abs() <= 1e-9 * (1.0 + (c * base).abs()));
        }

        #[test]
        fn nmse_scale_free(
            truth in prop::collection::vec(0.1f64..10.0, 8),
            pred in prop::collection::vec(-10.0f64..10.0, 8),
            c in 0.01f64..100.0,
        ) {
            let n = names(2);
            let base = nmse(&pred, &truth, 4, &n).unwrap();
            let sp: Vec<f64> = pred.iter().map(|v| v * c).collect();
            let st: Vec<f64> = truth.iter().map(|v| v * c).collect();
            let got = nmse(&sp, &st, 4, &n).unwrap();
            for (a, b) in base.iter().zip(&got) {
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
            }
        }

        #[test]
        fn bands_are_monotone(
            samples in prop::collection::vec(-100.0f64..100.0, 30),
        ) {
            // 10 paths, 3 steps, 1 series
            let b = quantile_bands(&samples, 10, 3, 1, &DEFAULT_LEVELS).unwrap();
            for t in 0..3 {
                for l in 1..5 {
                    prop_assert!(b.get(l - 1, t, 0) <= b.get(l, t, 0));
                }
            }
        }
    }

    /// Independent nested-loop CRPS-Sum.
    fn brute_crps_sum(samples: &[f64], truth: &[f64], s: usize, tau: usize, n: usize) -> (f64, f64) {
        let mut total = 0.0;
        let mut abs_sum = 0.0;
        for t in 0..tau {
            let mut sums = vec![0.0; s];
            for (p, slot) in sums.iter_mut().enumerate() {
                for k in 0..n {
                    *slot += samples[p * tau * n + t * n + k];
                }
            }
            let mut y = 0.0;
            for k in 0..n {
                y += truth[t * n + k];
            }
            let mut a = 0.0;
            for p in 0..s {
                a += (sums[p] - y).abs();
            }
            let mut b = 0.0;
            for p in 0..s {
                for q in 0..s {
                    b += (sums[p] - sums[q]).abs();
                }
            }
            total += a / s as f64 - b / (2.0 * (s * s) as f64);
            abs_sum += y.abs();
        }
        (total / tau as f64, total / abs_sum)
    }

    #[test]
    fn crps_sum_matches_brute_force() {
        let mut rng = SeededRng::new(12);
        for _ in 0..20 {
            let (s, tau, n) = (
                2 + rng.below(20) as usize,
                1 + rng.below(6) as usize,
                1 + rng.below(5) as usize,
            );
            let samples = rng.normal_vec(s * tau * n);
            let truth: Vec<f64> = rng.normal_vec(tau * n).iter().map(|v| v + 3.0).collect();
            let f = EnsembleForecast::new(samples.clone(), truth.clone(), s, tau, names(n)).unwrap();
            let got = crps_sum(&f).unwrap();
            let (raw, norm) = brute_crps_sum(&samples, &truth, s, tau, n);
            assert!((got.raw - raw).abs() < 1e-12);
            assert!((got.normalized - norm).abs() < 1e-12);
        }
    }

    #[test]
    fn crps_sum_perfect_forecast() {
        let truth = vec![1.0, 2.0, 3.0, 4.0];
        let samples: Vec<f64> = (0..5).flat_map(|_| truth.clone()).collect();
        let f = EnsembleForecast::new(samples, truth, 5, 2, names(2)).unwrap();
        let cs = crps_sum(&f).unwrap();
        assert_eq!(cs.raw, 0.0);
        assert_eq!(cs.normalized, 0.0);
    }

    #[test]
    fn crps_sum_single_series_is_normalized_crps() {
        let mut rng = SeededRng::new(13);
        let samples = rng.normal_vec(30);
        let truth = vec![0.5, -1.0, 2.0];
        let f = EnsembleForecast::new(samples.clone(), truth.clone(), 10, 3, names(1)).unwrap();
        let cs = crps_sum(&f).unwrap();
        let mut avg = 0.0;
        for t in 0..3 {
            let col: Vec<f64> = (0..10).map(|s| samples[s * 3 + t]).collect();
            avg += crps_empirical(&col, truth[t]).unwrap() / 3.0;
        }
        assert!((cs.raw - avg).abs() < 1e-14);
        assert!((cs.normalized - avg / (3.5 / 3.0)).abs() < 1e-14);
    }

    #[test]
    fn nmse_hand_example() {
        let got = nmse(&[1.0, 1.0, 1.0, 2.0], &[1.0; 4], 4, &names(1)).unwrap();
        assert!((got[0] - 0.015625).abs() < 1e-15);
        assert_eq!(nmse(&[1.0; 4], &[1.0; 4], 4, &names(1)).unwrap(), vec![0.0]);
    }

    #[test]
    fn nmse_zero_truth_is_reported() {
        let err = nmse(&[1.0, 0.0, 1.0, 0.0], &[1.0, 0.0, 1.0, 0.0], 2, &names(2)).unwrap_err();
        match err {
            LatteError::UndefinedMetric { series, .. } => assert_eq!(series, "s1"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bands_median_and_constant() {
        let samples: Vec<f64> = (1..=100).map(|v| v as f64).collect();
        let b = quantile_bands(&samples, 100, 1, 1, &[0.5]).unwrap();
        assert_eq!(b.get(0, 0, 0), 50.5);
        let c = quantile_bands(&[3.0; 8], 4, 2, 1, &DEFAULT_LEVELS).unwrap();
        assert!(c.values.iter().all(|&v| v == 3.0));
        assert!(quantile_bands(&[1.0, 2.0], 2, 1, 1, &[]).is_err());
    }

    #[test]
    fn report_serializes_with_fixed_fields() {
        let truth = vec![1.0, 2.0];
        let samples = vec![1.0, 2.0, 1.5, 2.5];
        let f = EnsembleForecast::new(samples, truth, 2, 1, names(2)).unwrap();
        let r = MetricReport::score(&f, 3, "m", PointEstimate::Mean).unwrap();
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        assert_eq!(v["window_id"], 3);
        assert!(v["nmse"]["s0"].is_number());
        assert!(v["crps_sum"].as_f64().unwrap() >= 0.0);
    }
}
