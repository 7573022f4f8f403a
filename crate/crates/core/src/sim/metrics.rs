//! Per-run error series, summary statistics and strategy comparisons.

use std::fmt::Write as _;
use std::io::Write;

use serde::Serialize;

use super::{IftSchedule, Strategy, VehicleState};
use crate::energy::time_domain_energy;
use crate::error::Result;
use crate::freq::ControllerParams;
use crate::ift::{DegenerationScenario, Mode};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IftChange {
    pub time: f64,
    pub ift: String,
}

/// Link outcome and per-vehicle receiver status of one step.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepTrace {
    pub step: usize,
    pub outcome: String,
    pub zeta: Vec<u8>,
}

/// Full record of one simulated run. Series are indexed `[vehicle][step]`;
/// the leader's error rows are zero.
#[derive(Clone, Debug, PartialEq)]
pub struct RunMetrics {
    pub strategy: Strategy,
    pub seed: u64,
    pub platoon_size: usize,
    pub steps: usize,
    pub dt: f64,
    pub spacing_error: Vec<Vec<f64>>,
    pub speed_error: Vec<Vec<f64>>,
    pub speed: Vec<Vec<f64>>,
    pub spacing_error_std: Vec<f64>,
    pub speed_error_std: Vec<f64>,
    pub speed_std: Vec<f64>,
    pub max_abs_spacing_error: Vec<f64>,
    pub max_abs_speed_error: Vec<f64>,
    /// Sum over followers of `∫ (v − v̄)² dt`.
    pub total_energy: f64,
    pub ift_history: Vec<IftChange>,
    pub trace: Option<Vec<StepTrace>>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunSummary<'a> {
    pub strategy: Strategy,
    pub seed: u64,
    pub platoon_size: usize,
    pub steps: usize,
    pub dt: f64,
    pub spacing_error_std: &'a [f64],
    pub speed_error_std: &'a [f64],
    pub speed_std: &'a [f64],
    pub max_abs_spacing_error: &'a [f64],
    pub max_abs_speed_error: &'a [f64],
    pub total_energy: f64,
    pub ift_history: &'a [IftChange],
}

fn std_dev(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}

fn max_abs(xs: &[f64]) -> f64 {
    xs.iter().fold(0.0, |m, x| m.max(x.abs()))
}

impl RunMetrics {
    pub(super) fn new(strategy: Strategy, seed: u64, n: usize, steps: usize, dt: f64, trace: bool) -> Self {
        let series = || vec![Vec::with_capacity(steps); n];
        RunMetrics {
            strategy,
            seed,
            platoon_size: n,
            steps,
            dt,
            spacing_error: series(),
            speed_error: series(),
            speed: series(),
            spacing_error_std: Vec::new(),
            speed_error_std: Vec::new(),
            speed_std: Vec::new(),
            max_abs_spacing_error: Vec::new(),
            max_abs_speed_error: Vec::new(),
            total_energy: 0.0,
            ift_history: Vec::new(),
            trace: trace.then(|| Vec::with_capacity(steps)),
        }
    }

    pub(super) fn record(&mut self, _step: usize, states: &[VehicleState], params: &ControllerParams) {
        self.spacing_error[0].push(0.0);
        self.speed_error[0].push(0.0);
        self.speed[0].push(states[0].speed);
        for i in 1..states.len() {
            let (me, ahead) = (&states[i], &states[i - 1]);
            let desired = params.standstill_l + params.headway_h * me.speed;
            self.spacing_error[i].push(ahead.position - me.position - desired);
            self.speed_error[i].push(ahead.speed - me.speed);
            self.speed[i].push(me.speed);
        }
    }

    pub(super) fn trace_step(&mut self, step: usize, outcome: &DegenerationScenario, modes: &[Mode]) {
        if let Some(trace) = self.trace.as_mut() {
            let outcome = (0..outcome.len()).map(|i| if outcome.sent(i) { '1' } else { '0' }).collect();
            trace.push(StepTrace { step, outcome, zeta: modes.iter().map(|m| m.code()).collect() });
        }
    }

    pub(super) fn finish(&mut self) {
        self.spacing_error_std = self.spacing_error.iter().map(|s| std_dev(s)).collect();
        self.speed_error_std = self.speed_error.iter().map(|s| std_dev(s)).collect();
        self.speed_std = self.speed.iter().map(|s| std_dev(s)).collect();
        self.max_abs_spacing_error = self.spacing_error.iter().map(|s| max_abs(s)).collect();
        self.max_abs_speed_error = self.speed_error.iter().map(|s| max_abs(s)).collect();
        self.total_energy = self.speed.iter().skip(1).map(|s| time_domain_energy(s, self.dt)).sum();
    }

    pub fn summary(&self) -> RunSummary<'_> {
        RunSummary {
            strategy: self.strategy,
            seed: self.seed,
            platoon_size: self.platoon_size,
            steps: self.steps,
            dt: self.dt,
            spacing_error_std: &self.spacing_error_std,
            speed_error_std: &self.speed_error_std,
            speed_std: &self.speed_std,
            max_abs_spacing_error: &self.max_abs_spacing_error,
            max_abs_speed_error: &self.max_abs_speed_error,
            total_energy: self.total_energy,
            ift_history: &self.ift_history,
        }
    }

    /// Long-format series: one row per step and vehicle.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "vehicle", "spacing_error", "speed_error", "speed"])?;
        for k in 0..self.steps {
            let t = k as f64 * self.dt;
            for i in 0..self.platoon_size {
                w.write_record(&[
                    format!("{t:.3}"),
                    i.to_string(),
                    self.spacing_error[i][k].to_string(),
                    self.speed_error[i][k].to_string(),
                    self.speed[i][k].to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_summary_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, &self.summary())?;
        Ok(())
    }
}

/// Seed-averaged metrics of one strategy.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StrategySummary {
    pub strategy: Strategy,
    pub ift_schedule: Vec<IftChange>,
    pub runs: usize,
    pub mean_total_energy: f64,
    pub std_total_energy: f64,
    /// Per vehicle, averaged over seeds.
    pub spacing_error_std: Vec<f64>,
    pub speed_error_std: Vec<f64>,
    pub speed_std: Vec<f64>,
    /// Per vehicle, worst over seeds.
    pub max_abs_spacing_error: Vec<f64>,
}

impl StrategySummary {
    pub fn aggregate(strategy: Strategy, schedule: &IftSchedule, runs: &[RunMetrics]) -> Self {
        let r = runs.len() as f64;
        let n = runs.first().map_or(0, |m| m.platoon_size);
        let mean_of = |f: fn(&RunMetrics) -> &[f64]| -> Vec<f64> {
            (0..n).map(|i| runs.iter().map(|m| f(m)[i]).sum::<f64>() / r).collect()
        };
        let energies: Vec<f64> = runs.iter().map(|m| m.total_energy).collect();
        StrategySummary {
            strategy,
            ift_schedule: schedule
                .segments()
                .iter()
                .map(|(s, ift)| IftChange { time: *s as f64 * runs.first().map_or(0.0, |m| m.dt), ift: ift.to_string() })
                .collect(),
            runs: runs.len(),
            mean_total_energy: energies.iter().sum::<f64>() / r,
            std_total_energy: std_dev(&energies),
            spacing_error_std: mean_of(|m| &m.spacing_error_std),
            speed_error_std: mean_of(|m| &m.speed_error_std),
            speed_std: mean_of(|m| &m.speed_std),
            max_abs_spacing_error: (0..n)
                .map(|i| runs.iter().map(|m| m.max_abs_spacing_error[i]).fold(0.0, f64::max))
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Comparison {
    pub platoon_size: usize,
    pub seeds: Vec<u64>,
    pub strategies: Vec<StrategySummary>,
}

impl Comparison {
    pub fn get(&self, strategy: Strategy) -> Option<&StrategySummary> {
        self.strategies.iter().find(|s| s.strategy == strategy)
    }

    /// Plain-text tables: energy per strategy, then per-vehicle spacing
    /// error std and maximum.
    pub fn render_tables(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{} seeds, {} vehicles", self.seeds.len(), self.platoon_size);
        let _ = writeln!(s, "{:<6} {:>14} {:>12}  topology", "", "mean energy", "std");
        for st in &self.strategies {
            let ifts: Vec<&str> = st.ift_schedule.iter().map(|c| c.ift.as_str()).collect();
            let _ = writeln!(
                s,
                "{:<6} {:>14.4} {:>12.4}  {}",
                st.strategy.to_string(),
                st.mean_total_energy,
                st.std_total_energy,
                ifts.join(" ")
            );
        }
        let _ = writeln!(s, "\nspacing error std / max |spacing error| (m)");
        let _ = write!(s, "{:<8}", "vehicle");
        for st in &self.strategies {
            let _ = write!(s, " {:>17}", st.strategy.to_string());
        }
        let _ = writeln!(s);
        for i in 1..self.platoon_size {
            let _ = write!(s, "{i:<8}");
            for st in &self.strategies {
                let _ = write!(s, " {:>8.4}/{:<8.4}", st.spacing_error_std[i], st.max_abs_spacing_error[i]);
            }
            let _ = writeln!(s);
        }
        s
    }
}
