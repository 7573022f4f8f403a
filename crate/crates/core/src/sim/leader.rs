//! Prescribed motion of the platoon leader.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::energy::{spectrum_from_trajectory, TrajectorySpectrum};
use crate::error::{Error, Result};

/// Sinusoidal speed profile `v(t) = base − amplitude·cos(2πt/period)`,
/// starting from the slow phase with zero acceleration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StopAndGo {
    pub base_speed: f64,
    pub amplitude: f64,
    pub period: f64,
    pub duration: f64,
}

impl Default for StopAndGo {
    fn default() -> Self {
        StopAndGo { base_speed: 8.0, amplitude: 6.0, period: 15.0, duration: 240.0 }
    }
}

impl StopAndGo {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_speed.is_finite() && self.amplitude.is_finite()) {
            return Err(Error::invalid("trajectory.synthetic", "speeds must be finite"));
        }
        if self.amplitude < 0.0 || self.amplitude > self.base_speed {
            return Err(Error::invalid(
                "trajectory.synthetic.amplitude",
                "must lie in [0, base_speed] so the leader never reverses",
            ));
        }
        if !(self.period > 0.0) {
            return Err(Error::invalid("trajectory.synthetic.period", "must be positive"));
        }
        if !(self.duration > 0.0) {
            return Err(Error::invalid("trajectory.synthetic.duration", "must be positive"));
        }
        Ok(())
    }
}

/// Leader position, speed and acceleration on a uniform time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct LeaderTrajectory {
    dt: f64,
    position: Vec<f64>,
    speed: Vec<f64>,
    accel: Vec<f64>,
}

impl LeaderTrajectory {
    pub fn new(dt: f64, position: Vec<f64>, speed: Vec<f64>, accel: Vec<f64>) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::invalid("trajectory.dt", "must be positive"));
        }
        if position.len() != speed.len() || position.len() != accel.len() {
            return Err(Error::invalid("trajectory", "position, speed and accel lengths differ"));
        }
        if position.len() < 2 {
            return Err(Error::invalid("trajectory", "needs at least two samples"));
        }
        if position.iter().chain(&speed).chain(&accel).any(|v| !v.is_finite()) {
            return Err(Error::invalid("trajectory", "samples must be finite"));
        }
        Ok(LeaderTrajectory { dt, position, speed, accel })
    }

    /// Derives speed and acceleration by central differences (one-sided at
    /// the ends).
    pub fn from_positions(position: Vec<f64>, dt: f64) -> Result<Self> {
        if position.len() < 3 {
            return Err(Error::invalid("trajectory", "needs at least three samples to differentiate"));
        }
        let speed = differentiate(&position, dt);
        let accel = differentiate(&speed, dt);
        LeaderTrajectory::new(dt, position, speed, accel)
    }

    /// Uses the given speeds and differentiates them for acceleration.
    pub fn from_position_speed(position: Vec<f64>, speed: Vec<f64>, dt: f64) -> Result<Self> {
        if speed.len() < 2 {
            return Err(Error::invalid("trajectory", "needs at least two samples to differentiate"));
        }
        let accel = differentiate(&speed, dt);
        LeaderTrajectory::new(dt, position, speed, accel)
    }

    pub fn constant_speed(speed: f64, duration: f64, dt: f64) -> Result<Self> {
        let n = steps(duration, dt)? + 1;
        let position = (0..n).map(|k| speed * k as f64 * dt).collect();
        LeaderTrajectory::new(dt, position, vec![speed; n], vec![0.0; n])
    }

    pub fn stop_and_go(profile: &StopAndGo, dt: f64) -> Result<Self> {
        profile.validate()?;
        let n = steps(profile.duration, dt)? + 1;
        let w = 2.0 * PI / profile.period;
        let (b, a) = (profile.base_speed, profile.amplitude);
        let t = |k: usize| k as f64 * dt;
        let position = (0..n).map(|k| b * t(k) - a / w * (w * t(k)).sin()).collect();
        let speed = (0..n).map(|k| b - a * (w * t(k)).cos()).collect();
        let accel = (0..n).map(|k| a * w * (w * t(k)).sin()).collect();
        LeaderTrajectory::new(dt, position, speed, accel)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.position.len()
    }

    pub fn is_empty(&self) -> bool {
        self.position.is_empty()
    }

    pub fn duration(&self) -> f64 {
        (self.len() - 1) as f64 * self.dt
    }

    pub fn positions(&self) -> &[f64] {
        &self.position
    }

    pub fn speeds(&self) -> &[f64] {
        &self.speed
    }

    pub fn accels(&self) -> &[f64] {
        &self.accel
    }

    pub fn spectrum(&self) -> Result<TrajectorySpectrum> {
        spectrum_from_trajectory(&self.position, self.dt)
    }

    /// Spectrum of samples `start..end`, widened backwards (then forwards)
    /// to at least `min_len` samples.
    pub fn window_spectrum(&self, start: usize, end: usize, min_len: usize) -> Result<TrajectorySpectrum> {
        let end = end.min(self.len());
        let mut start = start.min(end);
        if end - start < min_len {
            start = end.saturating_sub(min_len);
        }
        let end = (start + min_len).max(end).min(self.len());
        spectrum_from_trajectory(&self.position[start..end], self.dt)
    }
}

fn steps(duration: f64, dt: f64) -> Result<usize> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::invalid("sim.dt", "must be positive"));
    }
    if !(duration.is_finite() && duration > 0.0) {
        return Err(Error::invalid("sim.duration", "must be positive"));
    }
    Ok((duration / dt).round() as usize)
}

fn differentiate(x: &[f64], dt: f64) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|k| match k {
            0 => (x[1] - x[0]) / dt,
            _ if k == n - 1 => (x[n - 1] - x[n - 2]) / dt,
            _ => (x[k + 1] - x[k - 1]) / (2.0 * dt),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stop_and_go_is_consistent() {
        let p = StopAndGo::default();
        let l = LeaderTrajectory::stop_and_go(&p, 0.1).unwrap();
        assert_eq!(l.len(), 2401);
        assert!(l.speeds().iter().all(|&v| v >= 2.0 - 1e-12));
        let num = LeaderTrajectory::from_positions(l.positions().to_vec(), 0.1).unwrap();
        // Central-difference truncation bound dt²/6·max|x'''|.
        let w = 2.0 * PI / p.period;
        let bound = 0.01 / 6.0 * p.amplitude * w.powi(2) * 1.001;
        for k in 1..l.len() - 1 {
            assert!((num.speeds()[k] - l.speeds()[k]).abs() < bound);
        }
    }

    #[test]
    fn reversing_profile_rejected() {
        let p = StopAndGo { amplitude: 9.0, ..Default::default() };
        assert!(LeaderTrajectory::stop_and_go(&p, 0.1).is_err());
    }

    #[test]
    fn window_is_widened() {
        let l = LeaderTrajectory::constant_speed(10.0, 20.0, 0.1).unwrap();
        let s = l.window_spectrum(190, 201, 64).unwrap();
        assert_eq!(s.len(), 32);
    }
}
