//! Slot-level Monte-Carlo broadcast simulator and the least-squares fit of
//! the unsaturated success coefficients.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{saturated_success, unsaturated_success, ContentionCoefficients};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationSettings {
    pub contention_windows: Vec<u32>,
    pub rho_max: u32,
    pub trials: u32,
    /// Slot duration, seconds.
    pub slot_time_s: f64,
    /// Message generation interval, seconds. Slots starting after it are lost.
    pub generation_interval_s: f64,
    pub seed: u64,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        CalibrationSettings {
            contention_windows: vec![8],
            rho_max: 12,
            trials: 100_000,
            slot_time_s: 16e-6,
            generation_interval_s: 0.1,
            seed: 20_240_117,
        }
    }
}

impl CalibrationSettings {
    pub fn validate(&self) -> Result<()> {
        if self.contention_windows.is_empty() {
            return Err(Error::invalid("calibration.contention_windows", "at least one window is required"));
        }
        if let Some(&cw) = self.contention_windows.iter().find(|&&cw| cw < 2) {
            return Err(Error::invalid("calibration.contention_windows", format!("window {cw} is below 2 slots")));
        }
        if self.rho_max < 2 {
            return Err(Error::invalid("calibration.rho_max", "needs at least two sender counts to fit a slope"));
        }
        if self.trials == 0 {
            return Err(Error::invalid("calibration.trials", "must be positive"));
        }
        if !(self.slot_time_s > 0.0 && self.generation_interval_s > 0.0) {
            return Err(Error::invalid("calibration.slot_time_s", "slot time and generation interval must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub rho_bar: u32,
    pub cw: u32,
    pub p_sat: f64,
    pub p_unsat_simulated: f64,
    pub p_unsat_fitted: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Calibration {
    pub coefficients: ContentionCoefficients,
    pub rows: Vec<CalibrationRow>,
}

impl Calibration {
    /// Mean and sample standard deviation of `fitted − simulated`.
    pub fn error_stats(&self) -> (f64, f64) {
        let errs: Vec<f64> = self.rows.iter().map(|r| r.p_unsat_fitted - r.p_unsat_simulated).collect();
        let n = errs.len() as f64;
        let mean = errs.iter().sum::<f64>() / n;
        let var = if errs.len() > 1 {
            errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        (mean, var.sqrt())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Fraction of senders whose broadcast goes through in one contention round.
///
/// Each of `senders` stations draws a slot uniformly from `0..cw`; a station
/// succeeds when nobody else drew its slot and the slot starts before the
/// next message is generated.
pub fn simulate_broadcast_success<R: Rng>(
    senders: u32,
    cw: u32,
    trials: u32,
    slot_time_s: f64,
    generation_interval_s: f64,
    rng: &mut R,
) -> f64 {
    if senders == 0 || trials == 0 {
        return 0.0;
    }
    let mut counts = vec![0u32; cw as usize];
    let mut slots = vec![0u32; senders as usize];
    let mut successes = 0u64;
    for _ in 0..trials {
        counts.iter_mut().for_each(|c| *c = 0);
        for s in slots.iter_mut() {
            *s = rng.random_range(0..cw);
            counts[*s as usize] += 1;
        }
        successes += slots
            .iter()
            .filter(|&&s| counts[s as usize] == 1 && f64::from(s) * slot_time_s < generation_interval_s)
            .count() as u64;
    }
    successes as f64 / (f64::from(senders) * f64::from(trials))
}

/// Runs the Monte-Carlo over `ρ̄ ∈ 1..=rho_max` for every window and fits
/// `p_unsat ≈ (k1·ln ρ̄ + k2·CW + k3)·p_sat` by least squares in probability
/// units.
///
/// With a single window the CW column is collinear with the intercept, so
/// `k2` is pinned to zero and absorbed into `k3`.
pub fn calibrate(settings: &CalibrationSettings) -> Result<Calibration> {
    settings.validate()?;
    let mut samples = Vec::new();
    for &cw in &settings.contention_windows {
        for rho in 1..=settings.rho_max {
            let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
            rng.set_stream((u64::from(cw) << 32) | u64::from(rho));
            let sim = simulate_broadcast_success(
                rho,
                cw,
                settings.trials,
                settings.slot_time_s,
                settings.generation_interval_s,
                &mut rng,
            );
            let p_sat = saturated_success(f64::from(rho), cw)?;
            samples.push((rho, cw, p_sat, sim));
        }
    }

    let mut windows = settings.contention_windows.clone();
    windows.sort_unstable();
    windows.dedup();
    let with_cw = windows.len() > 1;
    let cols = if with_cw { 3 } else { 2 };
    let n = samples.len();
    let mut a = DMatrix::<f64>::zeros(n, cols);
    let mut y = DVector::<f64>::zeros(n);
    for (r, &(rho, cw, p_sat, sim)) in samples.iter().enumerate() {
        a[(r, 0)] = f64::from(rho).ln() * p_sat;
        if with_cw {
            a[(r, 1)] = f64::from(cw) * p_sat;
        }
        a[(r, cols - 1)] = p_sat;
        y[r] = sim;
    }
    let x = a
        .svd(true, true)
        .solve(&y, 1e-12)
        .map_err(|e| Error::Numerical(format!("calibration least squares failed: {e}")))?;
    let coefficients = ContentionCoefficients {
        k1: x[0],
        k2: if with_cw { x[1] } else { 0.0 },
        k3: x[cols - 1],
    };

    let rows = samples
        .into_iter()
        .map(|(rho, cw, p_sat, sim)| {
            Ok(CalibrationRow {
                rho_bar: rho,
                cw,
                p_sat,
                p_unsat_simulated: sim,
                p_unsat_fitted: unsaturated_success(f64::from(rho), cw, &coefficients)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Calibration { coefficients, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lone_sender_always_succeeds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(simulate_broadcast_success(1, 8, 1000, 16e-6, 0.1, &mut rng), 1.0);
    }

    #[test]
    fn two_senders_match_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = simulate_broadcast_success(2, 8, 200_000, 16e-6, 0.1, &mut rng);
        assert!((p - 7.0 / 8.0).abs() < 0.005, "{p}");
    }

    #[test]
    fn deadline_cuts_late_slots() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // only slot 0 starts before the deadline
        let p = simulate_broadcast_success(1, 4, 40_000, 1.0, 0.5, &mut rng);
        assert!((p - 0.25).abs() < 0.01, "{p}");
    }

    #[test]
    fn multi_window_fit_recovers_cw_term() {
        let settings = CalibrationSettings {
            contention_windows: vec![8, 16],
            trials: 5_000,
            rho_max: 6,
            ..Default::default()
        };
        let cal = calibrate(&settings).unwrap();
        assert_eq!(cal.rows.len(), 12);
        assert!(cal.coefficients.k2 != 0.0);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let settings = CalibrationSettings { trials: 1000, rho_max: 3, ..Default::default() };
        let cal = calibrate(&settings).unwrap();
        let mut buf = Vec::new();
        cal.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("rho_bar,cw,p_sat,p_unsat_simulated,p_unsat_fitted\n"));
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn rejects_bad_settings() {
        let bad = CalibrationSettings { contention_windows: vec![1], ..Default::default() };
        assert!(calibrate(&bad).is_err());
        let bad = CalibrationSettings { rho_max: 1, ..Default::default() };
        assert!(calibrate(&bad).is_err());
    }
}
