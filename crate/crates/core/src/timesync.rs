//! Continuous clock synchronization.
//!
//! Host-to-host offsets come from a four-timestamp request/reply exchange
//! (`t1` request sent, `t2` request received, `t3` reply sent, `t4` reply
//! received):
//!
//! ```text
//! offset = ((t2 - t1) + (t3 - t4)) / 2
//! delay  = (t4 - t1) - (t3 - t2)
//! ```
//!
//! Corrections are applied by slewing at a bounded rate; only gross errors
//! step the clock, because stepping would break the monotonicity of arrival
//! stamps. Sensor-to-host propagation delays are estimated as half the
//! minimum observed roundtrip, which filters queueing noise.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SyncError {
    /// A leg or the roundtrip residual came out negative; the measurement
    /// is unusable and must be discarded.
    #[error("negative delay in sync exchange (t1={t1} t2={t2} t3={t3} t4={t4})")]
    NegativeDelay { t1: u64, t2: u64, t3: u64, t4: u64 },
    #[error("no roundtrip measurements")]
    EmptyInput,
}

/// Per-host (or per-sensor) clock estimate relative to the reference.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClockModel {
    /// Applied correction: remote reading minus reference, nanoseconds.
    pub offset_ns: i64,
    /// One-way path delay estimate.
    pub delay_ns: u64,
    /// Rate error estimated from consecutive offset observations.
    pub drift_ppm: f64,
    pub last_update_ns: u64,
}

/// Discipline filter parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SyncParams {
    /// Corrections at or above this step the clock instead of slewing.
    pub step_threshold_ns: u64,
    /// Maximum slew rate, nanoseconds of correction per second of wall time.
    pub slew_rate_ns_per_s: u64,
    /// Nominal resync period.
    pub resync_period_ns: u64,
}

impl Default for SyncParams {
    fn default() -> Self {
        SyncParams {
            step_threshold_ns: 100_000_000, // 100 ms
            slew_rate_ns_per_s: 500_000,    // 0.5 ms/s
            resync_period_ns: 10_000_000_000, // 10 s
        }
    }
}

/// One-way propagation delay of a sensor relative to its host.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensorDelayEstimate {
    pub d_hat_ns: u64,
    pub n_samples: usize,
    pub method: DelayMethod,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DelayMethod {
    MinHalfRoundtrip,
}

/// The pairwise skew tolerance derived from the highest-rate modality:
/// half its sample period.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SkewBudget {
    pub t_sample_ns: u64,
    pub tolerance_ns: u64,
}

impl SkewBudget {
    pub fn new(t_sample_ns: u64) -> Self {
        SkewBudget {
            t_sample_ns,
            tolerance_ns: t_sample_ns / 2,
        }
    }

    /// Budget for the highest sample rate in the deployment.
    pub fn from_top_rate_hz(rate_hz: f64) -> Self {
        assert!(rate_hz > 0.0, "rate must be positive");
        Self::new((1e9 / rate_hz).round() as u64)
    }
}

/// Estimate (offset, roundtrip delay) from one four-timestamp exchange.
///
/// Rejects exchanges where either leg (`t2 - t1`, `t4 - t3`) or the
/// roundtrip residual is negative: those cannot come from a sane exchange
/// between coarsely aligned clocks and would corrupt the filter.
pub fn estimate_offset(t1: u64, t2: u64, t3: u64, t4: u64) -> Result<(i64, u64), SyncError> {
    let (t1, t2, t3, t4) = (t1 as i128, t2 as i128, t3 as i128, t4 as i128);
    let forward = t2 - t1;
    let back = t4 - t3;
    let roundtrip = (t4 - t1) - (t3 - t2);
    if forward < 0 || back < 0 || roundtrip < 0 {
        return Err(SyncError::NegativeDelay {
            t1: t1 as u64,
            t2: t2 as u64,
            t3: t3 as u64,
            t4: t4 as u64,
        });
    }
    let offset = ((t2 - t1) + (t3 - t4)) / 2;
    Ok((offset as i64, roundtrip as u64))
}

/// Fold one (offset, delay) observation into the model.
///
/// The returned model's `offset_ns` is the *applied* correction: it moves
/// toward the observed offset at no more than `slew_rate_ns_per_s`, unless
/// the correction magnitude reaches `step_threshold_ns`, in which case it
/// jumps outright. `drift_ppm` is refreshed from consecutive observations.
pub fn discipline(
    model: &ClockModel,
    observed_offset_ns: i64,
    observed_delay_ns: u64,
    now_ns: u64,
    params: &SyncParams,
) -> ClockModel {
    let mut next = *model;
    let correction = observed_offset_ns - model.offset_ns;
    if correction.unsigned_abs() >= params.step_threshold_ns {
        next.offset_ns = observed_offset_ns;
    } else {
        let elapsed_ns = now_ns.saturating_sub(model.last_update_ns);
        // First observation on a fresh model slews over one nominal period.
        let window_ns = if model.last_update_ns == 0 {
            params.resync_period_ns
        } else {
            elapsed_ns
        };
        let max_slew =
            ((params.slew_rate_ns_per_s as u128 * window_ns as u128) / 1_000_000_000) as i64;
        next.offset_ns = model.offset_ns + correction.clamp(-max_slew, max_slew);
    }
    if model.last_update_ns != 0 && now_ns > model.last_update_ns {
        let dt_ns = (now_ns - model.last_update_ns) as f64;
        let d_offset = (observed_offset_ns - model.offset_ns) as f64;
        let instantaneous_ppm = d_offset / dt_ns * 1e6;
        // Light smoothing; raw per-interval estimates are jitter-dominated.
        next.drift_ppm = 0.7 * model.drift_ppm + 0.3 * instantaneous_ppm;
    }
    next.delay_ns = observed_delay_ns / 2;
    next.last_update_ns = now_ns;
    next
}

/// Estimate the one-way sensor propagation delay as min(roundtrips) / 2.
pub fn estimate_sensor_delay(roundtrips_ns: &[u64]) -> Result<SensorDelayEstimate, SyncError> {
    let min = roundtrips_ns.iter().copied().min().ok_or(SyncError::EmptyInput)?;
    Ok(SensorDelayEstimate {
        d_hat_ns: min / 2,
        n_samples: roundtrips_ns.len(),
        method: DelayMethod::MinHalfRoundtrip,
    })
}

/// Recover time-of-generation from time-of-arrival by subtracting the
/// propagation-delay estimate. A negative result clamps to zero and is
/// flagged.
pub fn to_generation_time(toa_ns: u64, est: &SensorDelayEstimate) -> (u64, bool) {
    match toa_ns.checked_sub(est.d_hat_ns) {
        Some(tog) => (tog, false),
        None => (0, true),
    }
}

/// A pair of clocks whose applied offsets differ by more than the budget.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkewViolation {
    pub left: usize,
    pub right: usize,
    pub skew_ns: u64,
}

/// Compare all clock pairs against the skew budget.
pub fn check_skew(models: &[ClockModel], budget: &SkewBudget) -> Result<(), Vec<SkewViolation>> {
    let mut violations = Vec::new();
    for i in 0..models.len() {
        for j in (i + 1)..models.len() {
            let skew = (models[i].offset_ns - models[j].offset_ns).unsigned_abs();
            if skew > budget.tolerance_ns {
                violations.push(SkewViolation {
                    left: i,
                    right: j,
                    skew_ns: skew,
                });
            }
        }
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_exchange_has_zero_offset() {
        let (offset, delay) = estimate_offset(0, 10, 11, 21).unwrap();
        assert_eq!(offset, 0);
        assert_eq!(delay, 20);
    }

    #[test]
    fn offset_five_recovered_from_shifted_clock() {
        // Remote clock 5 ns ahead, 10 ns symmetric one-way delay:
        // t2 = t1 + 10 + 5 = 15, t3 = 16, t4 = (16 - 5) + 10 = 21.
        let (offset, delay) = estimate_offset(0, 15, 16, 21).unwrap();
        assert_eq!(offset, 5);
        assert_eq!(delay, 20);
    }

    #[test]
    fn offset_formula_matches_brute_force_simulation() {
        // Brute-force oracle: sweep true offsets and symmetric delays,
        // construct the exchange, recover both exactly. Offsets stay within
        // the one-way delay: beyond that a leg goes negative and the
        // estimator discards the measurement by design.
        for one_way in [10u64, 500, 40_000] {
            for true_offset in [-(one_way as i64) + 1, -7, 0, 3, one_way as i64 - 1] {
                let t1 = 1_000_000u64;
                let t2 = (t1 as i64 + one_way as i64 + true_offset) as u64;
                let t3 = t2 + 4;
                let t4 = (t3 as i64 - true_offset + one_way as i64) as u64;
                let (offset, delay) = estimate_offset(t1, t2, t3, t4).unwrap();
                assert_eq!(offset, true_offset);
                assert_eq!(delay, 2 * one_way);
            }
        }
    }

    #[test]
    fn offsets_exceeding_one_way_delay_are_discarded() {
        // t2 = t1 + 5 + 300 with one-way 5: forward leg fine, but the
        // return leg t4 = t3 - 300 + 5 lands before t3.
        let (t1, t2) = (1000u64, 1305u64);
        let t3 = t2 + 2;
        let t4 = (t3 as i64 - 300 + 5) as u64;
        assert!(estimate_offset(t1, t2, t3, t4).is_err());
    }

    #[test]
    fn reply_before_send_is_rejected() {
        assert!(matches!(
            estimate_offset(0, 5, 6, 4),
            Err(SyncError::NegativeDelay { .. })
        ));
    }

    #[test]
    fn small_corrections_slew_and_converge() {
        let params = SyncParams {
            step_threshold_ns: 5_000_000,
            slew_rate_ns_per_s: 500_000,
            resync_period_ns: 1_000_000_000,
        };
        let mut model = ClockModel::default();
        let mut now = 1_000_000_000u64;
        for _ in 0..10 {
            let before = model.offset_ns;
            model = discipline(&model, 1_000_000, 20_000, now, &params);
            let step = (model.offset_ns - before).unsigned_abs();
            assert!(step <= 500_000, "slew exceeded rate cap: {step}");
            now += 1_000_000_000;
        }
        assert_eq!(model.offset_ns, 1_000_000);
    }

    #[test]
    fn gross_error_steps_immediately() {
        let params = SyncParams::default();
        let model = ClockModel::default();
        let next = discipline(&model, 500_000_000, 20_000, 1_000_000_000, &params);
        assert_eq!(next.offset_ns, 500_000_000);
    }

    #[test]
    fn drift_times_interval_bounds_inter_resync_skew() {
        // 50 ppm drift resynced every 10 s accumulates at most
        // 50e-6 * 10 s = 500 us between resyncs.
        let drift_ppm = 50.0;
        let resync_s = 10.0;
        let max_skew_ns = drift_ppm * 1e-6 * resync_s * 1e9;
        assert_eq!(max_skew_ns as u64, 500_000);
    }

    #[test]
    fn sensor_delay_is_min_over_two() {
        let est = estimate_sensor_delay(&[20_000_000, 24_000_000, 22_000_000]).unwrap();
        assert_eq!(est.d_hat_ns, 10_000_000);
        assert_eq!(est.n_samples, 3);
    }

    #[test]
    fn sensor_delay_single_sample() {
        assert_eq!(estimate_sensor_delay(&[10]).unwrap().d_hat_ns, 5);
    }

    #[test]
    fn sensor_delay_empty_input() {
        assert!(matches!(estimate_sensor_delay(&[]), Err(SyncError::EmptyInput)));
    }

    #[test]
    fn generation_time_subtracts_delay() {
        let est = SensorDelayEstimate {
            d_hat_ns: 12_000_000,
            n_samples: 1,
            method: DelayMethod::MinHalfRoundtrip,
        };
        assert_eq!(to_generation_time(1_000_000_000, &est), (988_000_000, false));
    }

    #[test]
    fn zero_delay_is_identity() {
        let est = SensorDelayEstimate {
            d_hat_ns: 0,
            n_samples: 1,
            method: DelayMethod::MinHalfRoundtrip,
        };
        assert_eq!(to_generation_time(777, &est), (777, false));
    }

    #[test]
    fn underflow_clamps_and_flags() {
        let est = SensorDelayEstimate {
            d_hat_ns: 100,
            n_samples: 1,
            method: DelayMethod::MinHalfRoundtrip,
        };
        assert_eq!(to_generation_time(40, &est), (0, true));
    }

    #[test]
    fn skew_within_half_sample_period_passes() {
        // 60 Hz top rate: tolerance = 16.667 ms / 2 = 8.333 ms.
        let budget = SkewBudget::from_top_rate_hz(60.0);
        assert_eq!(budget.tolerance_ns, 8_333_333);
        let models: Vec<ClockModel> = [0i64, 2_000_000, 5_000_000]
            .iter()
            .map(|&o| ClockModel { offset_ns: o, ..Default::default() })
            .collect();
        assert!(check_skew(&models, &budget).is_ok());
    }

    #[test]
    fn skew_beyond_tolerance_reports_pair() {
        // 2 kHz top rate: tolerance 250 us; 300 us skew violates.
        let budget = SkewBudget::from_top_rate_hz(2000.0);
        assert_eq!(budget.tolerance_ns, 250_000);
        let models = [
            ClockModel { offset_ns: 0, ..Default::default() },
            ClockModel { offset_ns: 300_000, ..Default::default() },
        ];
        let violations = check_skew(&models, &budget).unwrap_err();
        assert_eq!(violations.len(), 1);
        assert_eq!((violations[0].left, violations[0].right), (0, 1));
        assert_eq!(violations[0].skew_ns, 300_000);
    }

    #[test]
    fn equal_offsets_have_zero_skew() {
        let budget = SkewBudget::from_top_rate_hz(100.0);
        let models = [
            ClockModel { offset_ns: 42, ..Default::default() },
            ClockModel { offset_ns: 42, ..Default::default() },
        ];
        assert!(check_skew(&models, &budget).is_ok());
    }
}
