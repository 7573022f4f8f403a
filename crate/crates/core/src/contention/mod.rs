//! Broadcast success probabilities under DSRC channel contention.
//!
//! Each activated sender competes with the activated senders within
//! communication range. The saturated success rate comes from the coupled
//! fixed point between per-slot success and channel busy rate; the
//! unsaturated (periodic message) rate rescales it with three fitted
//! coefficients, see [`calibration`].

pub mod calibration;

use std::sync::atomic::{AtomicBool, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ift::{DegenerationScenario, Ift};

/// Lower clamp for unsaturated success probabilities.
pub const MIN_SUCCESS: f64 = 1e-9;

const FIXED_POINT_TOL: f64 = 1e-10;
const MAX_BISECTION_STEPS: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrafficConditions {
    /// Average ambient density, vehicles per km.
    pub density_kbar: f64,
    /// Communication range, km.
    pub comm_range_r: f64,
    /// Contention window size in slots.
    pub contention_window: u32,
}

impl Default for TrafficConditions {
    fn default() -> Self {
        TrafficConditions { density_kbar: 28.57, comm_range_r: 0.2, contention_window: 8 }
    }
}

impl TrafficConditions {
    pub fn new(density_kbar: f64, comm_range_r: f64, contention_window: u32) -> Result<Self> {
        let t = TrafficConditions { density_kbar, comm_range_r, contention_window };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.density_kbar.is_finite() && self.density_kbar > 0.0) {
            return Err(Error::invalid("traffic.density_kbar", "must be a positive number of vehicles per km"));
        }
        if !(self.comm_range_r.is_finite() && self.comm_range_r > 0.0) {
            return Err(Error::invalid("traffic.comm_range_r", "must be a positive range in km"));
        }
        if self.contention_window < 2 {
            return Err(Error::invalid("traffic.contention_window", "must be at least 2 slots"));
        }
        Ok(())
    }

    /// Vehicles within range on each side, `m = ⌊R·k̄⌋`.
    pub fn neighbor_reach(&self) -> usize {
        // the epsilon keeps products like 0.2 * 25 from landing just below an integer
        (self.comm_range_r * self.density_kbar + 1e-9).floor().max(0.0) as usize
    }
}

/// Fitting coefficients of the unsaturated success model
/// `p_unsat = (k1·ln ρ̄ + k2·CW + k3) · p_sat`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContentionCoefficients {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
}

impl Default for ContentionCoefficients {
    /// Least-squares fit against the slot-level Monte-Carlo at CW = 8,
    /// `ρ̄ ∈ 1..=12` (see [`calibration::CalibrationSettings::default`]).
    fn default() -> Self {
        ContentionCoefficients { k1: DEFAULT_K1, k2: 0.0, k3: DEFAULT_K3 }
    }
}

pub(crate) const DEFAULT_K1: f64 = -0.926_396_320_509_885_5;
pub(crate) const DEFAULT_K3: f64 = 5.641_509_015_583_216;

impl ContentionCoefficients {
    pub const IDENTITY: ContentionCoefficients = ContentionCoefficients { k1: 0.0, k2: 0.0, k3: 1.0 };

    /// Checks that the scale factor keeps the success rate strictly positive
    /// for every sender count the traffic can produce, `ρ̄ ∈ [1, 2m+1]`.
    /// Values above one are tolerated; [`unsaturated_success`] clamps them.
    pub fn validate_for(&self, traffic: &TrafficConditions) -> Result<()> {
        if !(self.k1.is_finite() && self.k2.is_finite() && self.k3.is_finite()) {
            return Err(Error::invalid("contention", "coefficients must be finite"));
        }
        let max_rho = 2 * traffic.neighbor_reach() + 1;
        for rho in 1..=max_rho {
            let p_sat = saturated_success(rho as f64, traffic.contention_window)?;
            let raw = self.raw_scale(rho as f64, traffic.contention_window) * p_sat;
            if raw <= 0.0 {
                return Err(Error::invalid(
                    "contention",
                    format!("coefficients give non-positive success {raw:.4} at rho_bar = {rho}"),
                ));
            }
        }
        Ok(())
    }

    fn raw_scale(&self, rho_bar: f64, cw: u32) -> f64 {
        self.k1 * rho_bar.ln() + self.k2 * f64::from(cw) + self.k3
    }
}

/// Converged state of the saturated contention fixed point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SaturatedFixedPoint {
    pub p_sat: f64,
    pub busy_rate: f64,
    pub residual: f64,
    pub iterations: usize,
}

fn p_from_busy(b: f64, cw: f64) -> f64 {
    2.0 * (1.0 - b) / (1.0 - 2.0 * b + cw)
}

/// Solves `p = 2(1−b)/(1−2b+CW)`, `b = 1 − exp(−ρ̄·p)` by bisection on `b`.
///
/// The residual `b − (1 − exp(−ρ̄·p(b)))` is strictly increasing on `[0, 1]`
/// (p decreases in b whenever CW > 1), non-positive at 0 and equal to 1 at 1,
/// so the bracket always holds exactly one root.
pub fn solve_saturated(rho_bar: f64, cw: u32) -> Result<SaturatedFixedPoint> {
    if !(rho_bar.is_finite() && rho_bar >= 0.0) {
        return Err(Error::Domain(format!("rho_bar must be finite and >= 0, got {rho_bar}")));
    }
    if cw < 2 {
        return Err(Error::Domain(format!("contention window must be >= 2, got {cw}")));
    }
    let cw = f64::from(cw);
    if rho_bar == 0.0 {
        return Ok(SaturatedFixedPoint { p_sat: 2.0 / (1.0 + cw), busy_rate: 0.0, residual: 0.0, iterations: 0 });
    }
    let residual = |b: f64| b - (1.0 - (-rho_bar * p_from_busy(b, cw)).exp());
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for it in 1..=MAX_BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        let r = residual(mid);
        if r > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-14 || r == 0.0 {
            let b = if r == 0.0 { mid } else { 0.5 * (lo + hi) };
            let res = residual(b);
            if res.abs() < FIXED_POINT_TOL {
                return Ok(SaturatedFixedPoint { p_sat: p_from_busy(b, cw), busy_rate: b, residual: res, iterations: it });
            }
            break;
        }
    }
    Err(Error::Numerical(format!(
        "contention fixed point did not converge for rho_bar = {rho_bar}, CW = {cw}"
    )))
}

pub fn saturated_success(rho_bar: f64, cw: u32) -> Result<f64> {
    solve_saturated(rho_bar, cw).map(|fp| fp.p_sat)
}

static CLAMP_WARNED: AtomicBool = AtomicBool::new(false);

/// One-attempt success of a periodically generating sender.
pub fn unsaturated_success(rho_bar: f64, cw: u32, coeffs: &ContentionCoefficients) -> Result<f64> {
    if !(rho_bar >= 1.0) {
        return Err(Error::Domain(format!("rho_bar must be >= 1 for the log term, got {rho_bar}")));
    }
    let p_sat = saturated_success(rho_bar, cw)?;
    let raw = coeffs.raw_scale(rho_bar, cw) * p_sat;
    if !raw.is_finite() {
        return Err(Error::Numerical(format!("non-finite unsaturated success at rho_bar = {rho_bar}")));
    }
    let clamped = raw.clamp(MIN_SUCCESS, 1.0);
    if clamped != raw {
        if !CLAMP_WARNED.swap(true, Ordering::Relaxed) {
            log::warn!("calibration: unsaturated success {raw:.4} at rho_bar = {rho_bar}, CW = {cw} clamped to {clamped}");
        } else {
            log::debug!("calibration: clamped {raw:.4} at rho_bar = {rho_bar}");
        }
    }
    Ok(clamped)
}

/// Activated senders within `m` positions of each vehicle (inclusive of itself).
pub fn active_neighbors(ift: &Ift, traffic: &TrafficConditions) -> Vec<f64> {
    banded_counts(ift, traffic.neighbor_reach())
}

pub(crate) fn banded_counts(ift: &Ift, reach: usize) -> Vec<f64> {
    let n = ift.len();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(reach);
            let hi = (i + reach).min(n - 1);
            (lo..=hi).filter(|&j| ift.is_active(j)).count() as f64
        })
        .collect()
}

/// Per-vehicle contention state for one IFT.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SenderSuccessProfile {
    pub parent: Ift,
    pub rho_bar: Vec<f64>,
    pub p_sat: Vec<f64>,
    /// Success of each activated sender; zero for silent vehicles.
    pub p_unsat: Vec<f64>,
}

impl SenderSuccessProfile {
    /// Every activated sender succeeds with the same probability.
    pub fn uniform(parent: Ift, success: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&success) {
            return Err(Error::invalid("link.constant_success", format!("must be in [0, 1], got {success}")));
        }
        let n = parent.len();
        let rho = f64::from(parent.active_count());
        let p_unsat = (0..n).map(|i| if parent.is_active(i) { success } else { 0.0 }).collect();
        Ok(SenderSuccessProfile { parent, rho_bar: vec![rho; n], p_sat: vec![success; n], p_unsat })
    }
}

pub fn sender_success_profile(
    ift: &Ift,
    traffic: &TrafficConditions,
    coeffs: &ContentionCoefficients,
) -> Result<SenderSuccessProfile> {
    let rho_bar = active_neighbors(ift, traffic);
    let cw = traffic.contention_window;
    let mut p_sat = Vec::with_capacity(rho_bar.len());
    let mut p_unsat = Vec::with_capacity(rho_bar.len());
    for (i, &rho) in rho_bar.iter().enumerate() {
        p_sat.push(saturated_success(rho, cw)?);
        p_unsat.push(if ift.is_active(i) { unsaturated_success(rho, cw, coeffs)? } else { 0.0 });
    }
    Ok(SenderSuccessProfile { parent: *ift, rho_bar, p_sat, p_unsat })
}

/// `P_d = Π_{succeeded} p_i · Π_{failed} (1 − p_i)` over the activated senders.
pub fn scenario_probability(scenario: &DegenerationScenario, profile: &SenderSuccessProfile) -> f64 {
    debug_assert_eq!(scenario.parent(), profile.parent);
    outcome_probability(scenario.outcome_mask(), scenario.parent().mask(), &profile.p_unsat)
}

#[inline]
pub(crate) fn outcome_probability(outcome: u32, active: u32, p_unsat: &[f64]) -> f64 {
    let mut p = 1.0;
    let mut rest = active;
    while rest != 0 {
        let i = rest.trailing_zeros() as usize;
        rest &= rest - 1;
        p *= if outcome >> i & 1 == 1 { p_unsat[i] } else { 1.0 - p_unsat[i] };
    }
    p
}

/// Source of per-sender success probabilities for a given IFT.
#[derive(Clone, Debug, PartialEq)]
pub enum LinkModel {
    /// Contention model driven by ambient traffic.
    Contention { traffic: TrafficConditions, coeffs: ContentionCoefficients },
    /// Fixed success probability for every activated sender.
    Constant { success: f64 },
}

impl LinkModel {
    pub fn profile(&self, ift: &Ift) -> Result<SenderSuccessProfile> {
        match self {
            LinkModel::Contention { traffic, coeffs } => sender_success_profile(ift, traffic, coeffs),
            LinkModel::Constant { success } => SenderSuccessProfile::uniform(*ift, *success),
        }
    }

    /// Precomputes success rates for every sender count a platoon of
    /// `len` vehicles can produce.
    pub fn lookup(&self, len: usize) -> Result<SuccessLookup> {
        match self {
            LinkModel::Contention { traffic, coeffs } => {
                let mut by_count = vec![0.0; len + 1];
                for (count, slot) in by_count.iter_mut().enumerate().skip(1) {
                    *slot = unsaturated_success(count as f64, traffic.contention_window, coeffs)?;
                }
                Ok(SuccessLookup { reach: traffic.neighbor_reach(), by_count })
            }
            LinkModel::Constant { success } => {
                if !(0.0..=1.0).contains(success) {
                    return Err(Error::invalid("link.constant_success", format!("must be in [0, 1], got {success}")));
                }
                Ok(SuccessLookup { reach: len, by_count: vec![*success; len + 1] })
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LinkModel::Contention { traffic, coeffs } => {
                traffic.validate()?;
                coeffs.validate_for(traffic)
            }
            LinkModel::Constant { success } => {
                if (0.0..=1.0).contains(success) {
                    Ok(())
                } else {
                    Err(Error::invalid("link.constant_success", format!("must be in [0, 1], got {success}")))
                }
            }
        }
    }
}

/// Per-sender success as a function of the in-range sender count, memoized
/// for platoons of a fixed size.
#[derive(Clone, Debug, PartialEq)]
pub struct SuccessLookup {
    reach: usize,
    /// Indexed by the integer `ρ̄`; entry 0 is unused.
    by_count: Vec<f64>,
}

impl SuccessLookup {
    /// Success probability of each vehicle of `ift`; zero for silent ones.
    pub fn fill_success(&self, ift: &Ift, out: &mut [f64]) {
        let n = ift.len();
        for (i, slot) in out.iter_mut().enumerate().take(n) {
            *slot = if ift.is_active(i) {
                let lo = i.saturating_sub(self.reach);
                let hi = (i + self.reach).min(n - 1);
                let count = (lo..=hi).filter(|&j| ift.is_active(j)).count();
                self.by_count[count]
            } else {
                0.0
            };
        }
    }
}

/// One point of a success-rate sweep over density and activated share.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepPoint {
    pub density_kbar: f64,
    pub activated_fraction: f64,
    pub rho_bar: f64,
    pub p_sat: f64,
    pub p_unsat: f64,
}

/// Success rate against the share of in-range vehicles that broadcast, for
/// several densities. With range `R` a sender sees `2m+1` vehicles.
pub fn success_sweep(
    base: &TrafficConditions,
    densities: &[f64],
    fractions: &[f64],
    coeffs: &ContentionCoefficients,
) -> Result<Vec<SweepPoint>> {
    let mut out = Vec::with_capacity(densities.len() * fractions.len());
    for &k in densities {
        let traffic = TrafficConditions { density_kbar: k, ..*base };
        traffic.validate()?;
        let in_range = (2 * traffic.neighbor_reach() + 1) as f64;
        for &frac in fractions {
            let rho = (frac * in_range).round().max(1.0);
            out.push(SweepPoint {
                density_kbar: k,
                activated_fraction: frac,
                rho_bar: rho,
                p_sat: saturated_success(rho, traffic.contention_window)?,
                p_unsat: unsaturated_success(rho, traffic.contention_window, coeffs)?,
            });
        }
    }
    Ok(out)
}
