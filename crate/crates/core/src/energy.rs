//! Speed-oscillation energy of a platoon in the frequency domain.
//!
//! For a leader position spectrum `A(f)` and per-vehicle responses
//! `SS_i(j2πf)`, the platoon energy is
//! `E = 4π² Σ_i ∫ f²·|SS_i|²·|A|² df`, integrated by the trapezoid rule on
//! the spectrum's own grid with the integrand pinned to zero at `f = 0`.

use std::collections::HashMap;
use std::f64::consts::{PI, SQRT_2};
use std::io::Write;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::freq::{link_gains_unchecked, ControllerParams};
use crate::ift::{Ift, Mode, ReceiverStatusVector};

/// Shortest trajectory accepted by [`spectrum_from_trajectory`].
pub const MIN_SAMPLES: usize = 64;

/// One-sided leader position spectrum.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectorySpectrum {
    freqs: Vec<f64>,
    amps: Vec<Complex64>,
    source_duration: f64,
    source_dt: f64,
}

impl TrajectorySpectrum {
    pub fn new(freqs: Vec<f64>, amps: Vec<Complex64>, source_duration: f64, source_dt: f64) -> Result<Self> {
        if freqs.len() != amps.len() {
            return Err(Error::invalid("spectrum", "frequency and amplitude counts differ"));
        }
        if freqs.is_empty() {
            return Err(Error::invalid("spectrum", "no frequency bins"));
        }
        if !(freqs[0] > 0.0) || freqs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("spectrum.freqs", "must be positive and strictly increasing"));
        }
        if amps.iter().any(|a| !(a.re.is_finite() && a.im.is_finite())) {
            return Err(Error::invalid("spectrum.amps", "must be finite"));
        }
        if !(source_duration > 0.0 && source_dt > 0.0) {
            return Err(Error::invalid("spectrum", "source duration and dt must be positive"));
        }
        Ok(TrajectorySpectrum { freqs, amps, source_duration, source_dt })
    }

    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }

    pub fn amps(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn source_duration(&self) -> f64 {
        self.source_duration
    }

    pub fn source_dt(&self) -> f64 {
        self.source_dt
    }

    pub fn len(&self) -> usize {
        self.freqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs.is_empty()
    }

    /// Same grid, every amplitude scaled by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        TrajectorySpectrum { amps: self.amps.iter().map(|a| a * factor).collect(), ..self.clone() }
    }

    /// Index of the bin with the largest magnitude.
    pub fn dominant_bin(&self) -> usize {
        self.amps
            .iter()
            .enumerate()
            .fold((0, -1.0), |best, (k, a)| if a.norm() > best.1 { (k, a.norm()) } else { best })
            .0
    }

    /// Inverse of [`spectrum_from_trajectory`] for an untouched DFT grid:
    /// returns the detrended position series.
    pub fn to_time_series(&self) -> Result<Vec<f64>> {
        let n = (self.source_duration / self.source_dt).round() as usize;
        if n < 2 || self.len() != n / 2 {
            return Err(Error::invalid("spectrum", "grid is not a complete one-sided DFT grid"));
        }
        let dt = self.source_dt;
        let mut full = vec![Complex64::new(0.0, 0.0); n];
        for (k, a) in self.amps.iter().enumerate().map(|(j, a)| (j + 1, a)) {
            let nyquist = n % 2 == 0 && k == n / 2;
            let x = if nyquist { a / dt } else { a / (SQRT_2 * dt) };
            full[k] = x;
            if !nyquist {
                full[n - k] = x.conj();
            }
        }
        FftPlanner::new().plan_fft_inverse(n).process(&mut full);
        Ok(full.iter().map(|c| c.re / n as f64).collect())
    }

    /// Writes `freq_hz,re,im` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["freq_hz", "re", "im"])?;
        for (f, a) in self.freqs.iter().zip(&self.amps) {
            w.write_record([f.to_string(), a.re.to_string(), a.im.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Removes the mean-speed trend and returns the residual oscillation.
///
/// The trend slope is the chord through the first and last samples, which
/// keeps the periodic extension of the residual continuous; an ordinary
/// least-squares line would absorb part of any slow oscillation and leave a
/// sawtooth whose spectrum leaks into every bin.
pub fn detrend(samples: &[f64], dt: f64) -> Vec<f64> {
    let n = samples.len();
    if n < 2 {
        return vec![0.0; n];
    }
    let slope = (samples[n - 1] - samples[0]) / ((n - 1) as f64 * dt);
    let mut r: Vec<f64> = samples.iter().enumerate().map(|(k, x)| x - slope * k as f64 * dt).collect();
    let mean = r.iter().sum::<f64>() / n as f64;
    r.iter_mut().for_each(|x| *x -= mean);
    r
}

/// One-sided position spectrum of a uniformly sampled trajectory.
///
/// Bins `k = 1..=n/2` at `k/(n·dt)` Hz carry `A_k = √2·dt·X_k` (the Nyquist
/// bin of an even-length record is not doubled), so that
/// `4π² Σ_k f_k²|A_k|²·Δf` reproduces `∫ v_osc² dt`.
pub fn spectrum_from_trajectory(samples: &[f64], dt: f64) -> Result<TrajectorySpectrum> {
    if samples.len() < MIN_SAMPLES {
        return Err(Error::invalid(
            "trajectory",
            format!("need at least {MIN_SAMPLES} samples, got {}", samples.len()),
        ));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::invalid("trajectory.dt", "must be positive"));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("trajectory", "positions must be finite"));
    }
    let n = samples.len();
    let mut buf: Vec<Complex64> = detrend(samples, dt).into_iter().map(|x| Complex64::new(x, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let duration = n as f64 * dt;
    let bins = n / 2;
    let freqs = (1..=bins).map(|k| k as f64 / duration).collect();
    let amps = (1..=bins)
        .map(|k| {
            let scale = if n % 2 == 0 && k == bins { dt } else { SQRT_2 * dt };
            buf[k] * scale
        })
        .collect();
    TrajectorySpectrum::new(freqs, amps, duration, dt)
}

/// Trapezoid weights on `[0, f_1, …, f_K]` with a zero integrand at 0.
fn trapezoid_weights(freqs: &[f64]) -> Vec<f64> {
    let k = freqs.len();
    (0..k)
        .map(|i| {
            let left = if i == 0 { 0.0 } else { freqs[i - 1] };
            let right = if i + 1 < k { freqs[i + 1] } else { freqs[i] };
            0.5 * (right - left)
        })
        .collect()
}

/// Time-domain oscillation energy `∫ (v − v̄)² dt` of a speed series.
pub fn time_domain_energy(speeds: &[f64], dt: f64) -> f64 {
    if speeds.is_empty() {
        return 0.0;
    }
    let mean = speeds.iter().sum::<f64>() / speeds.len() as f64;
    speeds.iter().map(|v| (v - mean).powi(2)).sum::<f64>() * dt
}

/// Non-negative oscillation energy, m²/s.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize)]
#[serde(transparent)]
pub struct EnergyValue(f64);

impl EnergyValue {
    pub fn new(value: f64) -> Result<Self> {
        if value.is_finite() && value >= 0.0 {
            Ok(EnergyValue(value))
        } else {
            Err(Error::Numerical(format!("energy must be finite and non-negative, got {value}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Precomputed per-bin weights and per-mode link gains for repeated
/// scenario evaluations against one spectrum.
#[derive(Clone, Debug)]
pub struct EnergyEvaluator {
    weights: Vec<f64>,
    /// `[bin][mode]` flattened, `(𝒢1, 𝒢2)`.
    gains: Vec<(Complex64, Complex64)>,
}

impl EnergyEvaluator {
    /// Refuses parameters outside the string-stability region.
    pub fn new(params: &ControllerParams, spectrum: &TrajectorySpectrum) -> Result<Self> {
        params.validate()?;
        let trap = trapezoid_weights(spectrum.freqs());
        let mut weights = Vec::new();
        let mut gains = Vec::new();
        for ((&f, a), w) in spectrum.freqs().iter().zip(spectrum.amps()).zip(trap) {
            let weight = 4.0 * PI * PI * f * f * a.norm_sqr() * w;
            if weight == 0.0 {
                continue;
            }
            weights.push(weight);
            let omega = 2.0 * PI * f;
            gains.extend(Mode::ALL.iter().map(|&m| link_gains_unchecked(params, m, omega)));
        }
        Ok(EnergyEvaluator { weights, gains })
    }

    /// Leader-only energy `4π² ∫ f²|A|² df`.
    pub fn leader_energy(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Energy summed over every vehicle of the platoon described by `modes`;
    /// `modes[0]` (the leader) is ignored.
    pub fn energy_of_modes(&self, modes: &[Mode]) -> f64 {
        let mut total = 0.0;
        for (k, &w) in self.weights.iter().enumerate() {
            let g = &self.gains[4 * k..4 * k + 4];
            let mut prev2 = Complex64::new(0.0, 0.0);
            let mut prev1 = Complex64::new(1.0, 0.0);
            let mut sum = 1.0;
            for (i, m) in modes.iter().enumerate().skip(1) {
                let (g1, g2) = g[m.index()];
                let ss = if i == 1 { g1 * prev1 } else { g1 * prev1 + g2 * prev2 };
                sum += ss.norm_sqr();
                prev2 = prev1;
                prev1 = ss;
            }
            total += w * sum;
        }
        total
    }

    pub fn scenario_energy(&self, zeta: &ReceiverStatusVector) -> EnergyValue {
        EnergyValue(self.energy_of_modes(zeta.modes()))
    }
}

/// Platoon oscillation energy for one receiver-status vector.
pub fn scenario_energy(
    zeta: &ReceiverStatusVector,
    spectrum: &TrajectorySpectrum,
    params: &ControllerParams,
) -> Result<EnergyValue> {
    Ok(EnergyEvaluator::new(params, spectrum)?.scenario_energy(zeta))
}

/// Lookup of scenario energies keyed by the full outcome bit pattern.
pub trait EnergySource {
    fn energy_of(&self, outcome_mask: u32) -> Option<f64>;
}

impl EnergySource for HashMap<u32, f64> {
    fn energy_of(&self, outcome_mask: u32) -> Option<f64> {
        self.get(&outcome_mask).copied()
    }
}

/// `Σ_d P_d·E_d` over the degenerations of `ift`, with `probabilities` in
/// the order of [`Ift::degeneration_masks`].
pub fn expected_energy<S: EnergySource + ?Sized>(
    ift: &Ift,
    energies: &S,
    probabilities: &[f64],
) -> Result<EnergyValue> {
    let count = ift.degeneration_count();
    if probabilities.len() as u64 != count {
        return Err(Error::Integrity(format!(
            "{} probabilities supplied for {count} degeneration scenarios of {ift}",
            probabilities.len()
        )));
    }
    let total: f64 = probabilities.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::invalid("probabilities", format!("sum to {total}, expected 1")));
    }
    let mut acc = 0.0;
    for (mask, &p) in ift.degeneration_masks().zip(probabilities) {
        let e = energies
            .energy_of(mask)
            .ok_or_else(|| Error::Integrity(format!("no energy entry for scenario {mask:#b} of {ift}")))?;
        acc += p * e;
    }
    EnergyValue::new(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sampled(n: usize, dt: f64, f: impl Fn(f64) -> f64) -> Vec<f64> {
        (0..n).map(|k| f(k as f64 * dt)).collect()
    }

    #[test]
    fn constant_and_ramp_vanish() {
        let s = spectrum_from_trajectory(&vec![3.5; 128], 0.1).unwrap();
        assert!(s.amps().iter().all(|a| a.norm() < 1e-12));
        let s = spectrum_from_trajectory(&sampled(200, 0.1, |t| 14.0 * t + 2.0), 0.1).unwrap();
        assert!(s.amps().iter().all(|a| a.norm() < 1e-9));
    }

    #[test]
    fn sinusoid_lands_in_one_bin() {
        let (n, dt, amp) = (400, 0.1, 2.0);
        let f0 = 5.0 / (n as f64 * dt);
        let x = sampled(n, dt, |t| amp * (2.0 * PI * f0 * t).sin());
        let s = spectrum_from_trajectory(&x, dt).unwrap();
        let k = s.dominant_bin();
        assert_relative_eq!(s.freqs()[k], f0, max_relative = 1e-12);
        // |A| / duration recovers the RMS amplitude
        assert_relative_eq!(s.amps()[k].norm() / s.source_duration(), amp / SQRT_2, max_relative = 0.02);
    }

    #[test]
    fn inverse_round_trip() {
        for n in [128usize, 129] {
            let x = sampled(n, 0.1, |t| 3.0 * t + (0.7 * t).sin() + 0.2 * (3.1 * t).cos());
            let s = spectrum_from_trajectory(&x, 0.1).unwrap();
            let back = s.to_time_series().unwrap();
            for (a, b) in back.iter().zip(detrend(&x, 0.1)) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn too_short_is_rejected() {
        assert!(spectrum_from_trajectory(&[0.0; 63], 0.1).is_err());
        assert!(spectrum_from_trajectory(&[0.0; 64], 0.0).is_err());
    }

    #[test]
    fn zero_spectrum_gives_zero_energy() {
        let s = spectrum_from_trajectory(&vec![0.0; 64], 0.1).unwrap();
        let z = ReceiverStatusVector::from_codes(&[4, 2, 1]).unwrap();
        assert_eq!(scenario_energy(&z, &s, &ControllerParams::default()).unwrap().value(), 0.0);
    }

    #[test]
    fn leader_energy_matches_time_domain() {
        let (n, dt) = (2400, 0.1);
        let w = 2.0 * PI / 60.0;
        let x = sampled(n, dt, |t| 12.0 * t + 3.0 * (w * t).sin());
        let v: Vec<f64> = sampled(n, dt, |t| 12.0 + 3.0 * w * (w * t).cos());
        let s = spectrum_from_trajectory(&x, dt).unwrap();
        let ev = EnergyEvaluator::new(&ControllerParams::default(), &s).unwrap();
        let zeta = ReceiverStatusVector::from_codes(&[4]).unwrap();
        assert_relative_eq!(ev.leader_energy(), ev.scenario_energy(&zeta).value());
        assert_relative_eq!(ev.leader_energy(), time_domain_energy(&v, dt), max_relative = 0.01);
    }

    #[test]
    fn cooperative_platoon_beats_acc() {
        let x = sampled(1200, 0.1, |t| 10.0 * t + 2.0 * (2.0 * PI * t / 40.0).sin());
        let s = spectrum_from_trajectory(&x, 0.1).unwrap();
        let ev = EnergyEvaluator::new(&ControllerParams::default(), &s).unwrap();
        let acc = ReceiverStatusVector::uniform(6, Mode::Acc).unwrap();
        let cacc = ReceiverStatusVector::uniform(6, Mode::Cacc1).unwrap();
        assert!(ev.scenario_energy(&cacc).value() < ev.scenario_energy(&acc).value());
    }

    #[test]
    fn unstable_parameters_refused() {
        let s = spectrum_from_trajectory(&sampled(64, 0.1, |t| t.sin()), 0.1).unwrap();
        let mut p = ControllerParams::default();
        p.omega_k.acc = 1.2;
        assert!(EnergyEvaluator::new(&p, &s).is_err());
    }

    #[test]
    fn expectation_arithmetic() {
        let ift: Ift = "100".parse().unwrap();
        let table: HashMap<u32, f64> = [(1u32, 2.0), (0u32, 4.0)].into_iter().collect();
        assert_eq!(expected_energy(&ift, &table, &[0.5, 0.5]).unwrap().value(), 3.0);
        assert!(matches!(expected_energy(&ift, &table, &[0.5, 0.4]), Err(Error::Invalid { .. })));
        let missing: HashMap<u32, f64> = [(1u32, 2.0)].into_iter().collect();
        assert!(matches!(expected_energy(&ift, &missing, &[0.5, 0.5]), Err(Error::Integrity(_))));
        let silent: Ift = "000".parse().unwrap();
        let one: HashMap<u32, f64> = [(0u32, 7.5)].into_iter().collect();
        assert_eq!(expected_energy(&silent, &one, &[1.0]).unwrap().value(), 7.5);
    }

    #[test]
    fn spectrum_csv_header() {
        let s = spectrum_from_trajectory(&sampled(64, 0.1, |t| t.sin()), 0.1).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some("freq_hz,re,im"));
        assert_eq!(text.lines().count(), 33);
    }
}
