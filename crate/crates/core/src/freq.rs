//! Frequency-domain model of the adaptive PD controller.
//!
//! Vehicle `i` tracks a weighted spacing error to its two predecessors with a
//! PD law `K = ω_K(ω_K + s)`, a constant-time-headway policy
//! `H = 1 + (2 − α_b)hs` and acceleration feedforward through `F = 1/H`.
//! The plant is a double integrator `G = 1/s²`.

use std::f64::consts::SQRT_2;
use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ift::{Mode, ReceiverStatusVector};

/// Power ratio of the −3.01 dB corner.
pub fn corner_ratio() -> f64 {
    10f64.powf(-0.301)
}

/// PD cut-off frequency per controller mode, 1/s.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModeFrequencies {
    pub cacc1: f64,
    pub cacc2: f64,
    pub cacc3: f64,
    pub acc: f64,
}

impl Default for ModeFrequencies {
    fn default() -> Self {
        ModeFrequencies { cacc1: 0.8, cacc2: 0.8, cacc3: 0.9, acc: 1.45 }
    }
}

impl ModeFrequencies {
    pub fn get(&self, mode: Mode) -> f64 {
        match mode {
            Mode::Cacc1 => self.cacc1,
            Mode::Cacc2 => self.cacc2,
            Mode::Cacc3 => self.cacc3,
            Mode::Acc => self.acc,
        }
    }

    pub fn uniform(omega_k: f64) -> Self {
        ModeFrequencies { cacc1: omega_k, cacc2: omega_k, cacc3: omega_k, acc: omega_k }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerParams {
    /// Time headway, seconds. Shared by every mode.
    pub headway_h: f64,
    pub omega_k: ModeFrequencies,
    pub alpha: f64,
    pub beta: f64,
    /// Upper bound on `h·ω_K` for measurement-noise attenuation.
    pub w_max: f64,
    /// Standstill distance including vehicle length, metres.
    pub standstill_l: f64,
}

impl Default for ControllerParams {
    fn default() -> Self {
        ControllerParams {
            headway_h: 1.0,
            omega_k: ModeFrequencies::default(),
            alpha: 0.7,
            beta: 0.3,
            w_max: 2.0,
            standstill_l: 5.0,
        }
    }
}

impl ControllerParams {
    /// Structural checks: positive finite gains and a convex weight pair.
    /// Does not require string stability.
    pub fn validate_structure(&self) -> Result<()> {
        if !(self.headway_h.is_finite() && self.headway_h > 0.0) {
            return Err(Error::invalid("controller.headway_h", "must be positive"));
        }
        for mode in Mode::ALL {
            let w = self.omega_k.get(mode);
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::invalid(
                    format!("controller.omega_k.{}", mode.to_string().to_lowercase()),
                    "must be positive",
                ));
            }
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid("controller.alpha", "must lie strictly between 0 and 1"));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::invalid("controller.beta", "must lie strictly between 0 and 1"));
        }
        if (self.alpha + self.beta - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("controller.beta", "alpha + beta must equal 1"));
        }
        if !(self.w_max.is_finite() && self.w_max > 0.0) {
            return Err(Error::invalid("controller.w_max", "must be positive"));
        }
        if !(self.standstill_l.is_finite() && self.standstill_l >= 0.0) {
            return Err(Error::invalid("controller.standstill_l", "must be non-negative"));
        }
        Ok(())
    }

    /// Structural checks plus the string-stability region and the noise
    /// bound for every mode.
    pub fn validate(&self) -> Result<()> {
        self.validate_structure()?;
        for mode in Mode::ALL {
            let v = stability_region_check(self, mode);
            let field = format!("controller.omega_k.{}", mode.to_string().to_lowercase());
            if !v.string_stable {
                return Err(Error::invalid(
                    field,
                    format!("h*omega_K = {:.4} is below the ACC stability bound sqrt(2)", v.product),
                ));
            }
            if !v.noise_bounded {
                return Err(Error::invalid(
                    field,
                    format!("h*omega_K = {:.4} exceeds w_max = {}", v.product, self.w_max),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ModeCoefficients {
    pub alpha_b: f64,
    pub beta_b: f64,
    pub alpha_f: f64,
    pub beta_f: f64,
}

/// Feedback and feedforward weights for each receiver status.
///
/// CACC3 hears only the second predecessor: feedback runs on the sensed
/// immediate predecessor, feedforward on the received second-predecessor
/// acceleration.
pub fn mode_coefficients(params: &ControllerParams, mode: Mode) -> ModeCoefficients {
    let (alpha_b, beta_b, alpha_f, beta_f) = match mode {
        Mode::Cacc1 => (params.alpha, params.beta, params.alpha, params.beta),
        Mode::Cacc2 => (1.0, 0.0, 1.0, 0.0),
        Mode::Cacc3 => (1.0, 0.0, 0.0, 1.0),
        Mode::Acc => (1.0, 0.0, 0.0, 0.0),
    };
    ModeCoefficients { alpha_b, beta_b, alpha_f, beta_f }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ComponentResponses {
    pub g: Complex64,
    pub h: Complex64,
    pub k: Complex64,
    pub f: Complex64,
}

fn check_omega(omega: f64) -> Result<()> {
    if omega.is_finite() && omega > 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("frequency must be positive and finite, got {omega}")))
    }
}

pub fn component_responses(params: &ControllerParams, mode: Mode, omega: f64) -> Result<ComponentResponses> {
    check_omega(omega)?;
    Ok(components_unchecked(params, mode, omega))
}

fn components_unchecked(params: &ControllerParams, mode: Mode, omega: f64) -> ComponentResponses {
    let s = Complex64::new(0.0, omega);
    let c = mode_coefficients(params, mode);
    let wk = params.omega_k.get(mode);
    let h = 1.0 + s * ((2.0 - c.alpha_b) * params.headway_h);
    ComponentResponses { g: (s * s).inv(), h, k: (s + wk) * wk, f: h.inv() }
}

/// Feedback and feedforward closed-loop paths `(Λ_b, Λ_f)`.
fn lambdas(r: &ComponentResponses) -> (Complex64, Complex64) {
    // multiply through by s² so the plant pole never appears explicitly
    let s2 = r.g.inv();
    let den = s2 + r.k * r.h;
    (r.k / den, r.f * s2 / den)
}

/// Transfer gains from the first and second predecessor positions.
pub fn link_gains(params: &ControllerParams, mode: Mode, omega: f64) -> Result<(Complex64, Complex64)> {
    check_omega(omega)?;
    Ok(link_gains_unchecked(params, mode, omega))
}

pub(crate) fn link_gains_unchecked(params: &ControllerParams, mode: Mode, omega: f64) -> (Complex64, Complex64) {
    let c = mode_coefficients(params, mode);
    let (lb, lf) = lambdas(&components_unchecked(params, mode, omega));
    (lf * c.alpha_f + lb * c.alpha_b, lf * c.beta_f + lb * c.beta_b)
}

/// Single-link response when both predecessors move identically,
/// `𝒢1 + 𝒢2`. Equals `1/H` in the CACC modes and `Λ_b` under ACC.
pub fn worst_case_gain(params: &ControllerParams, mode: Mode, omega: f64) -> Result<Complex64> {
    let (g1, g2) = link_gains(params, mode, omega)?;
    Ok(g1 + g2)
}

/// Samples of a complex response on an ascending frequency grid.
#[derive(Clone, Debug, PartialEq)]
pub struct FrequencyResponse {
    grid: Vec<f64>,
    values: Vec<Complex64>,
}

impl FrequencyResponse {
    pub fn new(grid: Vec<f64>, values: Vec<Complex64>) -> Result<Self> {
        if grid.len() != values.len() {
            return Err(Error::invalid("response", "grid and values differ in length"));
        }
        if grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("response.grid", "must be strictly increasing"));
        }
        Ok(FrequencyResponse { grid, values })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn max_magnitude(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn magnitude_db(&self) -> Vec<f64> {
        self.values.iter().map(|v| 20.0 * v.norm().log10()).collect()
    }

    /// Writes `omega,re,im,magnitude_db` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["omega", "re", "im", "magnitude_db"])?;
        for (omega, v) in self.grid.iter().zip(&self.values) {
            w.write_record([
                omega.to_string(),
                v.re.to_string(),
                v.im.to_string(),
                (20.0 * v.norm().log10()).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `n` logarithmically spaced points from `lo` to `hi` inclusive.
pub fn log_grid(n: usize, lo: f64, hi: f64) -> Result<Vec<f64>> {
    if n < 2 || !(lo > 0.0 && hi > lo && hi.is_finite()) {
        return Err(Error::invalid("grid", format!("need n >= 2 and 0 < lo < hi, got n={n}, [{lo}, {hi}]")));
    }
    let (a, b) = (lo.log10(), hi.log10());
    Ok((0..n).map(|k| 10f64.powf(a + (b - a) * k as f64 / (n - 1) as f64)).collect())
}

/// Default stability sweep: 2048 points over `[1e-3, 1e3]` rad/s.
pub fn default_grid() -> Vec<f64> {
    log_grid(2048, 1e-3, 1e3).expect("static grid bounds")
}

/// Per-vehicle head-to-tail responses `SS_i = X_i / X_0`.
///
/// `SS_0 = 1`, `SS_1 = 𝒢1·SS_0` (no second predecessor) and
/// `SS_i = 𝒢1·SS_{i−1} + 𝒢2·SS_{i−2}` further back.
pub fn platoon_transfer(
    params: &ControllerParams,
    zeta: &ReceiverStatusVector,
    grid: &[f64],
) -> Result<Vec<FrequencyResponse>> {
    for &w in grid {
        check_omega(w)?;
    }
    let n = zeta.len();
    let mut cols: Vec<Vec<Complex64>> = vec![Vec::with_capacity(grid.len()); n];
    for &w in grid {
        let mut prev2 = Complex64::new(0.0, 0.0);
        let mut prev1 = Complex64::new(1.0, 0.0);
        cols[0].push(prev1);
        for (i, col) in cols.iter_mut().enumerate().skip(1) {
            let (g1, g2) = link_gains_unchecked(params, zeta.mode(i), w);
            let ss = if i == 1 { g1 * prev1 } else { g1 * prev1 + g2 * prev2 };
            col.push(ss);
            prev2 = prev1;
            prev1 = ss;
        }
    }
    cols.into_iter().map(|v| FrequencyResponse::new(grid.to_vec(), v)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StabilityVerdict {
    pub mode: Mode,
    /// `h·ω_K` for this mode.
    pub product: f64,
    pub string_stable: bool,
    /// Signed distance to the stability bound; negative when violated.
    pub margin: f64,
    pub noise_bounded: bool,
    /// `w_max − h·ω_K`; negative when the noise bound is violated.
    pub noise_margin: f64,
}

impl StabilityVerdict {
    pub fn passes(&self) -> bool {
        self.string_stable && self.noise_bounded
    }
}

/// CACC modes are string stable for any positive headway; ACC additionally
/// needs `h·ω_K ≥ √2`.
pub fn stability_region_check(params: &ControllerParams, mode: Mode) -> StabilityVerdict {
    let h = params.headway_h;
    let product = h * params.omega_k.get(mode);
    let margin = if h <= 0.0 {
        h
    } else if mode == Mode::Acc {
        product - SQRT_2
    } else {
        h
    };
    let noise_margin = params.w_max - product;
    StabilityVerdict {
        mode,
        product,
        string_stable: h > 0.0 && margin >= 0.0,
        margin,
        noise_bounded: noise_margin >= 0.0,
        noise_margin,
    }
}

/// Magnitudes of the complementary sensitivities `(|T1|, |T2|)` from
/// measurement noise on the first and second predecessor.
pub fn noise_attenuation(params: &ControllerParams, mode: Mode, omega: f64) -> Result<(f64, f64)> {
    let r = component_responses(params, mode, omega)?;
    let c = mode_coefficients(params, mode);
    let s2 = r.g.inv();
    let loop_gain = r.h * r.k;
    let t = loop_gain / (s2 + loop_gain);
    Ok(((t * c.alpha_b).norm(), (t * c.beta_b).norm()))
}

/// High-frequency limits `α_b·h'ω_K/(1+h'ω_K)` and `β_b·h'ω_K/(1+h'ω_K)`
/// with the effective lead `h' = (2 − α_b)h` of the spacing policy, so
/// `h' = h` everywhere except CACC1.
pub fn noise_limit(params: &ControllerParams, mode: Mode) -> (f64, f64) {
    let c = mode_coefficients(params, mode);
    let p = (2.0 - c.alpha_b) * params.headway_h * params.omega_k.get(mode);
    let r = p / (1.0 + p);
    (c.alpha_b * r, c.beta_b * r)
}

/// Frequency where the single-link response falls to −3.01 dB.
pub fn cutoff_frequency(params: &ControllerParams, mode: Mode) -> Result<f64> {
    let v = stability_region_check(params, mode);
    if !v.string_stable {
        return Err(Error::Domain(format!(
            "{mode} is outside its string-stability region (h*omega_K = {:.4})",
            v.product
        )));
    }
    let c = corner_ratio();
    let h = params.headway_h;
    match mode {
        Mode::Cacc1 => {
            let lead = 2.0 - params.alpha;
            Ok(((1.0 - c) / (lead * lead * c * h * h)).sqrt())
        }
        Mode::Cacc2 | Mode::Cacc3 => Ok(((1.0 - c) / (c * h * h)).sqrt()),
        Mode::Acc => {
            // |SS|² = C is a quadratic in ω²; c0 < 0 so one root is positive
            let wk = params.omega_k.acc;
            let a1 = 1.0 + h * wk;
            let a = c * a1 * a1;
            let b = c * (wk + h * wk * wk).powi(2) - 2.0 * c * wk * wk * a1 - wk * wk;
            let c0 = (c - 1.0) * wk.powi(4);
            let disc = b * b - 4.0 * a * c0;
            if !(disc >= 0.0) {
                return Err(Error::Numerical(format!("negative discriminant {disc} in the ACC cut-off")));
            }
            let x = (-b + disc.sqrt()) / (2.0 * a);
            if !(x > 0.0) {
                return Err(Error::Numerical(format!("no positive ACC cut-off root (omega^2 = {x})")));
            }
            Ok(x.sqrt())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn p() -> ControllerParams {
        ControllerParams::default()
    }

    #[test]
    fn coefficient_table() {
        let c = mode_coefficients(&p(), Mode::Cacc1);
        assert_eq!((c.alpha_b, c.beta_b, c.alpha_f, c.beta_f), (0.7, 0.3, 0.7, 0.3));
        let c = mode_coefficients(&p(), Mode::Cacc3);
        assert_eq!((c.alpha_b, c.beta_b, c.alpha_f, c.beta_f), (1.0, 0.0, 0.0, 1.0));
        let c = mode_coefficients(&p(), Mode::Acc);
        assert_eq!((c.alpha_b, c.beta_b, c.alpha_f, c.beta_f), (1.0, 0.0, 0.0, 0.0));
        for m in Mode::ALL {
            let c = mode_coefficients(&p(), m);
            assert_relative_eq!(c.alpha_b + c.beta_b, 1.0);
        }
    }

    #[test]
    fn spacing_policy_at_unit_frequency() {
        let r = component_responses(&p(), Mode::Cacc2, 1.0).unwrap();
        assert_relative_eq!(r.h.re, 1.0);
        assert_relative_eq!(r.h.im, 1.0);
        assert_relative_eq!((r.h * r.f).re, 1.0, epsilon = 1e-15);
        assert!(component_responses(&p(), Mode::Cacc2, 0.0).is_err());
    }

    #[test]
    fn acc_gains_reduce_to_feedback_path() {
        let (g1, g2) = link_gains(&p(), Mode::Acc, 0.37).unwrap();
        let r = component_responses(&p(), Mode::Acc, 0.37).unwrap();
        let lb = r.g * r.k / (1.0 + r.g * r.k * r.h);
        assert_relative_eq!((g1 - lb).norm(), 0.0, epsilon = 1e-14);
        assert_eq!(g2.norm(), 0.0);
    }

    #[test]
    fn cacc_worst_case_is_inverse_spacing_policy() {
        for m in [Mode::Cacc1, Mode::Cacc2, Mode::Cacc3] {
            for w in [0.01, 0.5, 3.0, 40.0] {
                let r = component_responses(&p(), m, w).unwrap();
                let g = worst_case_gain(&p(), m, w).unwrap();
                assert!((g - r.h.inv()).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn unity_gain_at_low_frequency() {
        for m in Mode::ALL {
            let g = worst_case_gain(&p(), m, 1e-7).unwrap();
            assert!((g - 1.0).norm() < 1e-5);
        }
    }

    #[test]
    fn acc_platoon_is_power_of_feedback_path() {
        let zeta = ReceiverStatusVector::from_codes(&[4, 4, 4, 4]).unwrap();
        let grid = log_grid(50, 1e-2, 1e2).unwrap();
        let ss = platoon_transfer(&p(), &zeta, &grid).unwrap();
        for (k, &w) in grid.iter().enumerate() {
            let (lb, _) = link_gains(&p(), Mode::Acc, w).unwrap();
            for (i, resp) in ss.iter().enumerate() {
                assert_relative_eq!(resp.values()[k].norm(), lb.norm().powi(i as i32), max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn three_vehicle_recursion_unrolled() {
        let zeta = ReceiverStatusVector::from_codes(&[4, 2, 1]).unwrap();
        let w = 0.42;
        let ss = platoon_transfer(&p(), &zeta, &[w]).unwrap();
        let (a1, _) = link_gains(&p(), Mode::Cacc2, w).unwrap();
        let (b1, b2) = link_gains(&p(), Mode::Cacc1, w).unwrap();
        let want = b1 * a1 + b2;
        assert!((ss[2].values()[0] - want).norm() < 1e-15);
    }

    #[test]
    fn stability_verdicts() {
        assert!(stability_region_check(&p(), Mode::Acc).passes());
        let mut q = p();
        q.omega_k.acc = 1.2;
        let v = stability_region_check(&q, Mode::Acc);
        assert!(!v.string_stable);
        assert!(v.margin < 0.0);
        q.headway_h = 0.0;
        for m in Mode::ALL {
            assert!(!stability_region_check(&q, m).string_stable);
        }
    }

    #[test]
    fn noise_limits() {
        let mut q = p();
        q.omega_k.acc = 2.0;
        let (t1, t2) = noise_attenuation(&q, Mode::Acc, 1e4).unwrap();
        assert!((t1 - 2.0 / 3.0).abs() / (2.0 / 3.0) < 0.01);
        assert_eq!(t2, 0.0);
        q.omega_k.acc = SQRT_2;
        assert_relative_eq!(noise_limit(&q, Mode::Acc).0, SQRT_2 / (1.0 + SQRT_2));
        let (t1, t2) = noise_attenuation(&p(), Mode::Cacc1, 1e4).unwrap();
        let (l1, l2) = noise_limit(&p(), Mode::Cacc1);
        assert!((t1 - l1).abs() / l1 < 1e-3 && (t2 - l2).abs() / l2 < 1e-3);
    }

    #[test]
    fn cutoffs_at_default_parameters() {
        let c = corner_ratio();
        let w1 = cutoff_frequency(&p(), Mode::Cacc1).unwrap();
        assert_relative_eq!(w1, ((1.0 - c) / (1.69 * c)).sqrt());
        let w2 = cutoff_frequency(&p(), Mode::Cacc2).unwrap();
        assert_eq!(w2, cutoff_frequency(&p(), Mode::Cacc3).unwrap());
        assert!((w2 - 1.0).abs() < 1e-3);
        let w4 = cutoff_frequency(&p(), Mode::Acc).unwrap();
        assert!(w1 < w2 && w2 < w4);
        let db = |w: f64| 20.0 * worst_case_gain(&p(), Mode::Acc, w).unwrap().norm().log10();
        assert!(db(0.999 * w4) > -3.01 && db(1.001 * w4) < -3.01);
    }

    #[test]
    fn validation() {
        p().validate().unwrap();
        let mut q = p();
        q.beta = 0.4;
        assert!(q.validate_structure().is_err());
        let mut q = p();
        q.omega_k.acc = 1.2;
        q.validate_structure().unwrap();
        assert!(q.validate().is_err());
        let mut q = p();
        q.omega_k.cacc1 = 2.5;
        assert!(q.validate().is_err());
    }

    #[test]
    fn response_csv() {
        let r = FrequencyResponse::new(vec![1.0, 2.0], vec![Complex64::new(1.0, 0.0); 2]).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s.lines().next(), Some("omega,re,im,magnitude_db"));
        assert!(FrequencyResponse::new(vec![2.0, 1.0], vec![Complex64::new(1.0, 0.0); 2]).is_err());
    }
}
