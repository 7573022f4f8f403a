//! Discrete-time adaptive PD controller with acceleration feedforward.

use serde::{Deserialize, Serialize};

use crate::freq::{mode_coefficients, ControllerParams};
use crate::ift::{DegenerationScenario, Mode};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub position: f64,
    pub speed: f64,
    /// Acceleration applied over the current step; this is what the vehicle
    /// broadcasts.
    pub accel: f64,
    /// Low-pass filtered acceleration received from the first predecessor.
    pub ff_filter_state_1: f64,
    /// Same for the second predecessor.
    pub ff_filter_state_2: f64,
    /// Previous `gap₁ − L`, the speed-independent part of the first gap
    /// error.
    pub prev_spacing_1: f64,
    /// Previous `gap₂ − 2L`.
    pub prev_spacing_2: f64,
}

/// Which controller family a follower runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlLaw {
    /// Two-predecessor controller switching among CACC1/2/3 and ACC.
    Adaptive,
    /// Fixed one-predecessor CACC that falls back to ACC when the
    /// predecessor's message is lost.
    OnePredecessor,
}

impl ControlLaw {
    pub fn mode(self, vehicle: usize, outcome: &DegenerationScenario) -> Mode {
        let first = vehicle >= 1 && outcome.sent(vehicle - 1);
        let second = vehicle >= 2 && outcome.sent(vehicle - 2);
        match self {
            ControlLaw::Adaptive => Mode::from_reception(first, second),
            ControlLaw::OnePredecessor => Mode::from_reception(first, false),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ControlOutput {
    /// Command after clipping to the acceleration limits.
    pub command: f64,
    pub unclipped: f64,
    pub mode: Mode,
    /// Controller memory for the next step; position and speed unchanged.
    pub next: VehicleState,
}

/// Gap errors of vehicle `i` to its first and second predecessor under the
/// constant-time-headway policy; the second is zero without a second
/// predecessor.
pub fn gap_errors(i: usize, states: &[VehicleState], params: &ControllerParams) -> (f64, f64) {
    let (s1, s2) = spacings(i, states, params);
    let hv = params.headway_h * states[i].speed;
    (s1 - hv, if i >= 2 { s2 - 2.0 * hv } else { 0.0 })
}

/// `(gap₁ − L, gap₂ − 2L)`; the second is zero without a second predecessor.
pub fn spacings(i: usize, states: &[VehicleState], params: &ControllerParams) -> (f64, f64) {
    let me = &states[i];
    let l = params.standstill_l;
    let s1 = states[i - 1].position - me.position - l;
    let s2 = if i >= 2 { states[i - 2].position - me.position - 2.0 * l } else { 0.0 };
    (s1, s2)
}

/// Seeds the derivative memory of every follower from the current
/// positions, so the first update carries no derivative kick.
pub fn prime_memory(states: &mut [VehicleState], params: &ControllerParams) {
    for i in 1..states.len() {
        let (s1, s2) = spacings(i, states, params);
        states[i].prev_spacing_1 = s1;
        states[i].prev_spacing_2 = s2;
    }
}

/// One control update for follower `i ≥ 1`.
///
/// `states[j].accel` must already hold the current command of every
/// predecessor `j < i`. The weighted spacing error is
/// `e = α_b·(gap₁ − d₁) + β_b·(gap₂ − d₂) = α_b·s₁ + β_b·s₂ − h'v` with
/// `h' = (2 − α_b)h`. The spacings `s₁, s₂` are differentiated by backward
/// difference; the `h'v` term differentiates to `h'u`, which closes an
/// algebraic loop that is solved exactly:
/// `u = (ω_K²e + ω_K·ṡ + ff) / (1 + ω_K·h')`. Received accelerations pass
/// through the exact zero-order-hold discretization of `1/(1 + h's)`; a
/// filter only advances when its message arrives.
pub fn control_command(
    i: usize,
    states: &[VehicleState],
    outcome: &DegenerationScenario,
    law: ControlLaw,
    params: &ControllerParams,
    accel_limits: Option<[f64; 2]>,
    dt: f64,
) -> ControlOutput {
    debug_assert!(i >= 1 && i < states.len());
    let me = states[i];
    let mode = law.mode(i, outcome);
    let c = mode_coefficients(params, mode);
    let wk = params.omega_k.get(mode);

    let h_eff = (2.0 - c.alpha_b) * params.headway_h;
    let (s1, s2) = spacings(i, states, params);
    let e = c.alpha_b * s1 + c.beta_b * s2 - h_eff * me.speed;
    let s_dot = (c.alpha_b * (s1 - me.prev_spacing_1) + c.beta_b * (s2 - me.prev_spacing_2)) / dt;

    let phi = (-dt / h_eff).exp();
    let mut next = me;
    next.prev_spacing_1 = s1;
    next.prev_spacing_2 = s2;
    let mut feedforward = 0.0;
    if outcome.sent(i - 1) {
        next.ff_filter_state_1 = phi * me.ff_filter_state_1 + (1.0 - phi) * states[i - 1].accel;
        feedforward += c.alpha_f * next.ff_filter_state_1;
    }
    if i >= 2 && law == ControlLaw::Adaptive && outcome.sent(i - 2) {
        next.ff_filter_state_2 = phi * me.ff_filter_state_2 + (1.0 - phi) * states[i - 2].accel;
        feedforward += c.beta_f * next.ff_filter_state_2;
    }

    let unclipped = (wk * wk * e + wk * s_dot + feedforward) / (1.0 + wk * h_eff);
    let command = match accel_limits {
        Some([lo, hi]) => unclipped.clamp(lo, hi),
        None => unclipped,
    };
    next.accel = command;
    ControlOutput { command, unclipped, mode, next }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ift::Ift;

    fn platoon(n: usize, v: f64, params: &ControllerParams) -> Vec<VehicleState> {
        let gap = params.standstill_l + params.headway_h * v;
        let mut s: Vec<VehicleState> = (0..n)
            .map(|i| VehicleState { position: -(i as f64) * gap, speed: v, ..Default::default() })
            .collect();
        prime_memory(&mut s, params);
        s
    }

    fn full(n: usize) -> DegenerationScenario {
        DegenerationScenario::intact(Ift::fully_activated(n).unwrap())
    }

    #[test]
    fn steady_state_needs_no_command() {
        let p = ControllerParams::default();
        let s = platoon(4, 20.0, &p);
        for i in 1..4 {
            let out = control_command(i, &s, &full(4), ControlLaw::Adaptive, &p, None, 0.1);
            assert_eq!(out.command, 0.0);
        }
    }

    #[test]
    fn proportional_term_under_acc() {
        let p = ControllerParams::default();
        let mut s = platoon(3, 10.0, &p);
        s[1].position += 1.0;
        prime_memory(&mut s, &p);
        assert!((gap_errors(2, &s, &p).0 - 1.0).abs() < 1e-12);
        let silent = DegenerationScenario::intact(Ift::silent(3).unwrap());
        let out = control_command(2, &s, &silent, ControlLaw::Adaptive, &p, None, 0.1);
        assert_eq!(out.mode, Mode::Acc);
        assert!((out.command - 1.45 * 1.45 / 2.45).abs() < 1e-12);
        let clipped = control_command(2, &s, &silent, ControlLaw::Adaptive, &p, Some([-5.0, 0.5]), 0.1);
        assert_eq!(clipped.command, 0.5);
    }

    #[test]
    fn acc_ignores_received_accelerations() {
        let p = ControllerParams::default();
        let mut s = platoon(3, 10.0, &p);
        s[0].accel = 2.0;
        s[1].accel = -1.0;
        let silent = DegenerationScenario::intact(Ift::silent(3).unwrap());
        let out = control_command(2, &s, &silent, ControlLaw::Adaptive, &p, None, 0.1);
        assert_eq!(out.command, 0.0);
        assert_eq!(out.next.ff_filter_state_1, 0.0);
    }

    #[test]
    fn feedforward_filter_step() {
        let p = ControllerParams::default();
        let mut s = platoon(2, 10.0, &p);
        s[0].accel = 1.0;
        let out = control_command(1, &s, &full(2), ControlLaw::Adaptive, &p, None, 0.1);
        assert_eq!(out.mode, Mode::Cacc2);
        let expect = (1.0 - (-0.1f64).exp()) / 1.8;
        assert!((out.command - expect).abs() < 1e-15);
    }

    #[test]
    fn one_predecessor_law_never_uses_second() {
        let p = ControllerParams::default();
        let o = full(4);
        assert_eq!(ControlLaw::OnePredecessor.mode(3, &o), Mode::Cacc2);
        assert_eq!(ControlLaw::Adaptive.mode(3, &o), Mode::Cacc1);
        let mut s = platoon(4, 10.0, &p);
        s[1].accel = 3.0;
        let out = control_command(3, &s, &o, ControlLaw::OnePredecessor, &p, None, 0.1);
        assert_eq!(out.command, 0.0);
    }
}
