//! Closed-loop platoon simulation with per-step stochastic sender failures.

pub mod controller;
pub mod leader;
pub mod metrics;

use std::fmt;
use std::sync::atomic::{AtomicBool, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contention::LinkModel;
use crate::energy::MIN_SAMPLES;
use crate::error::{Error, Result};
use crate::freq::ControllerParams;
use crate::ift::{DegenerationScenario, Ift, Mode, MAX_VEHICLES};
use crate::optimizer::{optimize_with, OptimizerOptions};

pub use controller::{control_command, gap_errors, prime_memory, spacings, ControlLaw, ControlOutput, VehicleState};
pub use leader::{LeaderTrajectory, StopAndGo};
pub use metrics::{Comparison, IftChange, RunMetrics, RunSummary, StepTrace, StrategySummary};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Adaptive controller on the optimized topology.
    Oift,
    /// Adaptive controller with every sender but the tail active.
    Dift,
    /// One-predecessor CACC/ACC with every sender but the tail active.
    Fift,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Oift, Strategy::Dift, Strategy::Fift];

    pub fn control_law(self) -> ControlLaw {
        match self {
            Strategy::Oift | Strategy::Dift => ControlLaw::Adaptive,
            Strategy::Fift => ControlLaw::OnePredecessor,
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Oift => "OIFT",
            Strategy::Dift => "DIFT",
            Strategy::Fift => "FIFT",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Control interval, seconds.
    pub dt: f64,
    pub duration: f64,
    pub seed: u64,
    pub strategy: Strategy,
    /// `[u_min, u_max]` in m/s²; `None` leaves commands unbounded.
    pub accel_limits: Option<[f64; 2]>,
    /// Re-optimization period of the topology, seconds.
    pub update_period_tau: f64,
    /// How far ahead of each period the topology is computed, seconds.
    pub lead_time_delta_tau: f64,
    pub record_trace: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 0.1,
            duration: 240.0,
            seed: 1,
            strategy: Strategy::Oift,
            accel_limits: Some([-5.0, 3.0]),
            update_period_tau: 300.0,
            lead_time_delta_tau: 10.0,
            record_trace: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::invalid("sim.dt", "must be positive"));
        }
        if !(self.duration.is_finite() && self.duration >= self.dt) {
            return Err(Error::invalid("sim.duration", "must cover at least one step"));
        }
        if let Some([lo, hi]) = self.accel_limits {
            if !(lo < 0.0 && hi > 0.0) {
                return Err(Error::invalid("sim.accel_limits", "need u_min < 0 < u_max"));
            }
        }
        if !(self.update_period_tau.is_finite() && self.update_period_tau > 0.0) {
            return Err(Error::invalid("sim.update_period_tau", "must be positive"));
        }
        if !(self.lead_time_delta_tau >= 0.0 && self.lead_time_delta_tau <= self.update_period_tau) {
            return Err(Error::invalid("sim.lead_time_delta_tau", "must lie in [0, update_period_tau]"));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }
}

/// Everything a run needs besides the leader trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct SimSetup {
    pub platoon_size: usize,
    pub params: ControllerParams,
    pub link: LinkModel,
    pub config: SimConfig,
}

impl SimSetup {
    pub fn validate(&self) -> Result<()> {
        if self.platoon_size < 2 || self.platoon_size > MAX_VEHICLES {
            return Err(Error::invalid("platoon_size", format!("must be in 2..={MAX_VEHICLES}")));
        }
        self.params.validate_structure()?;
        self.link.validate()?;
        self.config.validate()
    }

    pub fn with_strategy(&self, strategy: Strategy) -> Self {
        let mut s = self.clone();
        s.config.strategy = strategy;
        s
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut s = self.clone();
        s.config.seed = seed;
        s
    }
}

/// One Bernoulli outcome per activated sender.
///
/// A uniform variate is drawn for every vehicle slot, activated or not, so
/// runs with different topologies but the same seed share their random
/// numbers vehicle by vehicle.
pub fn sample_link_outcomes<R: Rng>(ift: &Ift, success: &[f64], rng: &mut R) -> DegenerationScenario {
    let mut outcome = 0u32;
    for (i, &p) in success.iter().enumerate().take(ift.len()) {
        let u: f64 = rng.random();
        if ift.is_active(i) && u < p {
            outcome |= 1 << i;
        }
    }
    DegenerationScenario::new(outcome, *ift).expect("outcome is a sub-pattern by construction")
}

/// Topology in force from each start step onwards.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IftSchedule {
    segments: Vec<(usize, Ift)>,
}

impl IftSchedule {
    pub fn fixed(ift: Ift) -> Self {
        IftSchedule { segments: vec![(0, ift)] }
    }

    pub fn segments(&self) -> &[(usize, Ift)] {
        &self.segments
    }

    pub fn at(&self, step: usize) -> Ift {
        let idx = self.segments.partition_point(|(s, _)| *s <= step);
        self.segments[idx.saturating_sub(1)].1
    }
}

/// Topology schedule for the configured strategy.
///
/// OIFT splits the run into periods of `update_period_tau` and optimizes each
/// against the leader's spectrum over that period, standing in for an
/// ambient-traffic forecast issued `lead_time_delta_tau` ahead.
pub fn plan_schedule(setup: &SimSetup, leader: &LeaderTrajectory) -> Result<IftSchedule> {
    let n = setup.platoon_size;
    match setup.config.strategy {
        Strategy::Dift | Strategy::Fift => Ok(IftSchedule::fixed(Ift::fully_activated(n)?)),
        Strategy::Oift => {
            let steps = setup.config.steps();
            let period = ((setup.config.update_period_tau / setup.config.dt).round() as usize).max(1);
            let opts = OptimizerOptions::default();
            let mut segments = Vec::new();
            for start in (0..steps.max(1)).step_by(period) {
                let spectrum = leader.window_spectrum(start, start + period + 1, MIN_SAMPLES)?;
                let r = optimize_with(n, &setup.link, &setup.params, &spectrum, &opts)?;
                segments.push((start, r.best_ift));
            }
            Ok(IftSchedule { segments })
        }
    }
}

fn check_leader(setup: &SimSetup, leader: &LeaderTrajectory) -> Result<()> {
    let dt = setup.config.dt;
    if (leader.dt() - dt).abs() > 1e-9 * dt.max(1.0) {
        return Err(Error::invalid("trajectory", format!("sampled at {} s, simulation uses {dt} s", leader.dt())));
    }
    if leader.len() < setup.config.steps() + 1 {
        return Err(Error::invalid(
            "trajectory",
            format!("covers {:.1} s, simulation needs {:.1} s", leader.duration(), setup.config.duration),
        ));
    }
    Ok(())
}

static SPEED_CLAMP_LOGGED: AtomicBool = AtomicBool::new(false);

pub fn run(setup: &SimSetup, leader: &LeaderTrajectory) -> Result<RunMetrics> {
    setup.validate()?;
    let schedule = plan_schedule(setup, leader)?;
    run_with_schedule(setup, leader, &schedule)
}

pub fn run_with_schedule(setup: &SimSetup, leader: &LeaderTrajectory, schedule: &IftSchedule) -> Result<RunMetrics> {
    setup.validate()?;
    check_leader(setup, leader)?;
    let n = setup.platoon_size;
    let cfg = &setup.config;
    let params = &setup.params;
    let dt = cfg.dt;
    let steps = cfg.steps();
    let law = cfg.strategy.control_law();

    let lookup = setup.link.lookup(n)?;
    let success: Vec<Vec<f64>> = schedule
        .segments()
        .iter()
        .map(|(_, ift)| {
            let mut p = vec![0.0; n];
            lookup.fill_success(ift, &mut p);
            p
        })
        .collect();

    let gap0 = params.standstill_l + params.headway_h * leader.speeds()[0];
    let mut states: Vec<VehicleState> = (0..n)
        .map(|i| VehicleState {
            position: leader.positions()[0] - i as f64 * gap0,
            speed: leader.speeds()[0],
            ..Default::default()
        })
        .collect();
    states[0].accel = leader.accels()[0];
    prime_memory(&mut states, params);

    let mut metrics = RunMetrics::new(cfg.strategy, cfg.seed, n, steps, dt, cfg.record_trace);
    for (start, ift) in schedule.segments() {
        metrics.ift_history.push(IftChange { time: *start as f64 * dt, ift: ift.to_string() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut modes = vec![Mode::Acc; n];

    for k in 0..steps {
        metrics.record(k, &states, params);

        let seg = schedule.segments().partition_point(|(s, _)| *s <= k) - 1;
        let ift = schedule.segments()[seg].1;
        let outcome = sample_link_outcomes(&ift, &success[seg], &mut rng);

        states[0].accel = leader.accels()[k];
        for i in 1..n {
            let out = control_command(i, &states, &outcome, law, params, cfg.accel_limits, dt);
            states[i] = out.next;
            modes[i] = out.mode;
        }
        metrics.trace_step(k, &outcome, &modes);

        for st in states.iter_mut().skip(1) {
            let v = st.speed + st.accel * dt;
            if v < 0.0 && !SPEED_CLAMP_LOGGED.swap(true, Ordering::Relaxed) {
                log::info!("speed saturated at zero (no reversing)");
            }
            st.speed = v.max(0.0);
            st.position += st.speed * dt;
        }
        states[0].position = leader.positions()[k + 1];
        states[0].speed = leader.speeds()[k + 1];

        for i in 1..n {
            let spacing = states[i - 1].position - states[i].position;
            if spacing <= 0.0 {
                return Err(Error::Collision { vehicle: i, time: (k + 1) as f64 * dt, spacing });
            }
        }
    }
    metrics.finish();
    Ok(metrics)
}

/// Runs one seed per entry, in parallel, returning results in seed order.
pub fn run_seeds(setup: &SimSetup, leader: &LeaderTrajectory, seeds: &[u64]) -> Result<Vec<RunMetrics>> {
    setup.validate()?;
    let schedule = plan_schedule(setup, leader)?;
    seeds
        .par_iter()
        .map(|&seed| run_with_schedule(&setup.with_seed(seed), leader, &schedule))
        .collect()
}

/// Runs every strategy over the same seeds.
pub fn compare_strategies(setup: &SimSetup, leader: &LeaderTrajectory, seeds: &[u64]) -> Result<Comparison> {
    if seeds.is_empty() {
        return Err(Error::invalid("seeds", "at least one seed is required"));
    }
    let mut strategies = Vec::new();
    for strategy in Strategy::ALL {
        let s = setup.with_strategy(strategy);
        let schedule = plan_schedule(&s, leader)?;
        let runs = seeds
            .par_iter()
            .map(|&seed| run_with_schedule(&s.with_seed(seed), leader, &schedule))
            .collect::<Result<Vec<_>>>()?;
        strategies.push(StrategySummary::aggregate(strategy, &schedule, &runs));
    }
    Ok(Comparison { platoon_size: setup.platoon_size, seeds: seeds.to_vec(), strategies })
}
