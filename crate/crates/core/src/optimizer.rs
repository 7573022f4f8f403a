//! Exhaustive search for the information flow topology with the lowest
//! expected oscillation energy.
//!
//! Every candidate keeps the leader sending and the tail silent, so every
//! degeneration of every candidate is a sub-pattern of `[1, …, 1, 0]`. The
//! energies of those `2^N` patterns are computed once (step 1) and each
//! candidate's expectation is a weighted sum of table lookups (step 2).

use std::cmp::Ordering;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Serialize, Serializer};

use crate::contention::{outcome_probability, LinkModel};
use crate::energy::{EnergyEvaluator, EnergySource, EnergyValue, TrajectorySpectrum};
use crate::error::{Error, Result};
use crate::freq::ControllerParams;
use crate::ift::{candidate_ifts, receiver_status_of_mask, Ift};

/// Largest platoon accepted for the energy table unless overridden.
pub const DEFAULT_TABLE_LIMIT: usize = 16;
/// Largest platoon accepted by [`brute_force_optimize`].
pub const BRUTE_FORCE_LIMIT: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OptimizerOptions {
    pub table_limit: usize,
    pub parallel: bool,
    pub keep_ranking: bool,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        OptimizerOptions { table_limit: DEFAULT_TABLE_LIMIT, parallel: true, keep_ranking: false }
    }
}

/// Oscillation energy of every sub-pattern of `[1, …, 1, 0]`, indexed by
/// the outcome mask.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyTable {
    platoon_size: usize,
    energies: Vec<f64>,
}

impl EnergyTable {
    pub fn platoon_size(&self) -> usize {
        self.platoon_size
    }

    pub fn len(&self) -> usize {
        self.energies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.energies.is_empty()
    }

    pub fn get(&self, outcome_mask: u32) -> Option<f64> {
        self.energies.get(outcome_mask as usize).copied()
    }

    /// `(outcome mask, energy)` pairs in mask order.
    pub fn entries(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.energies.iter().enumerate().map(|(m, &e)| (m as u32, e))
    }
}

impl EnergySource for EnergyTable {
    fn energy_of(&self, outcome_mask: u32) -> Option<f64> {
        self.get(outcome_mask)
    }
}

fn check_size(n_plus_1: usize, limit: usize) -> Result<()> {
    if n_plus_1 < 2 {
        return Err(Error::invalid("platoon_size", "a platoon needs at least two vehicles"));
    }
    if n_plus_1 > limit {
        log::warn!("platoon of {n_plus_1} vehicles needs 2^{} scenario energies; limit is {limit}", n_plus_1 - 1);
        return Err(Error::TooLarge { size: n_plus_1, limit });
    }
    Ok(())
}

pub fn build_energy_table(
    n_plus_1: usize,
    params: &ControllerParams,
    spectrum: &TrajectorySpectrum,
) -> Result<EnergyTable> {
    let evaluator = EnergyEvaluator::new(params, spectrum)?;
    build_energy_table_with(n_plus_1, &evaluator, &OptimizerOptions::default())
}

pub fn build_energy_table_with(
    n_plus_1: usize,
    evaluator: &EnergyEvaluator,
    opts: &OptimizerOptions,
) -> Result<EnergyTable> {
    check_size(n_plus_1, opts.table_limit)?;
    let count = 1usize << (n_plus_1 - 1);
    let energy = |mask: usize| evaluator.energy_of_modes(receiver_status_of_mask(mask as u32, n_plus_1).modes());
    let energies: Vec<f64> = if opts.parallel {
        (0..count).into_par_iter().map(energy).collect()
    } else {
        (0..count).map(energy).collect()
    };
    if let Some(bad) = energies.iter().position(|e| !(e.is_finite() && *e >= 0.0)) {
        return Err(Error::Numerical(format!("scenario {bad:#b} produced energy {}", energies[bad])));
    }
    Ok(EnergyTable { platoon_size: n_plus_1, energies })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CandidateScore {
    #[serde(serialize_with = "ift_string")]
    pub ift: Ift,
    pub expected_energy: f64,
}

fn ift_string<S: Serializer>(ift: &Ift, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_str(ift)
}

/// Total order used for the argmin: energy, then fewer senders, then the
/// lexicographically smaller leader-first bit string.
pub fn compare_scores(a: &CandidateScore, b: &CandidateScore) -> Ordering {
    a.expected_energy
        .total_cmp(&b.expected_energy)
        .then(a.ift.active_count().cmp(&b.ift.active_count()))
        .then_with(|| a.ift.to_string().cmp(&b.ift.to_string()))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OptimizationResult {
    #[serde(rename = "ift", serialize_with = "ift_string")]
    pub best_ift: Ift,
    #[serde(rename = "expected_energy")]
    pub best_expected_energy: EnergyValue,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ranking: Option<Vec<CandidateScore>>,
    pub wall_time_s: f64,
    /// Table lookups performed in step 2; zero for brute force.
    #[serde(skip)]
    pub table_lookups: u64,
}

impl OptimizationResult {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn finish(scores: Vec<CandidateScore>, keep_ranking: bool, started: Instant, lookups: u64) -> Result<OptimizationResult> {
    let best = *scores
        .iter()
        .min_by(|a, b| compare_scores(a, b))
        .ok_or_else(|| Error::Integrity("no candidate topologies".into()))?;
    let ranking = keep_ranking.then(|| {
        let mut r = scores;
        r.sort_by(compare_scores);
        r
    });
    Ok(OptimizationResult {
        best_ift: best.ift,
        best_expected_energy: EnergyValue::new(best.expected_energy)?,
        ranking,
        wall_time_s: started.elapsed().as_secs_f64(),
        table_lookups: lookups,
    })
}

/// Two-step search over the candidates of an `n_plus_1` platoon.
pub fn optimize(
    n_plus_1: usize,
    link: &LinkModel,
    params: &ControllerParams,
    spectrum: &TrajectorySpectrum,
) -> Result<OptimizationResult> {
    optimize_with(n_plus_1, link, params, spectrum, &OptimizerOptions::default())
}

pub fn optimize_with(
    n_plus_1: usize,
    link: &LinkModel,
    params: &ControllerParams,
    spectrum: &TrajectorySpectrum,
    opts: &OptimizerOptions,
) -> Result<OptimizationResult> {
    let started = Instant::now();
    link.validate()?;
    let evaluator = EnergyEvaluator::new(params, spectrum)?;
    let table = build_energy_table_with(n_plus_1, &evaluator, opts)?;
    search_table(&table, link, opts, started)
}

/// Step 2 against a prebuilt table.
pub fn optimize_with_table(table: &EnergyTable, link: &LinkModel, opts: &OptimizerOptions) -> Result<OptimizationResult> {
    search_table(table, link, opts, Instant::now())
}

fn search_table(
    table: &EnergyTable,
    link: &LinkModel,
    opts: &OptimizerOptions,
    started: Instant,
) -> Result<OptimizationResult> {
    let n = table.platoon_size();
    let lookup = link.lookup(n)?;
    let candidates = candidate_ifts(n)?;
    let score = |ift: &Ift| -> Result<(CandidateScore, u64)> {
        let mut p = vec![0.0; n];
        lookup.fill_success(ift, &mut p);
        let mut acc = 0.0;
        let mut lookups = 0u64;
        for outcome in ift.degeneration_masks() {
            let e = table
                .get(outcome)
                .ok_or_else(|| Error::Integrity(format!("scenario {outcome:#b} missing from the energy table")))?;
            lookups += 1;
            acc += outcome_probability(outcome, ift.mask(), &p) * e;
        }
        Ok((CandidateScore { ift: *ift, expected_energy: acc }, lookups))
    };
    let scored: Vec<(CandidateScore, u64)> = if opts.parallel {
        candidates.par_iter().map(score).collect::<Result<_>>()?
    } else {
        candidates.iter().map(score).collect::<Result<_>>()?
    };
    let lookups = scored.iter().map(|(_, l)| l).sum();
    finish(scored.into_iter().map(|(s, _)| s).collect(), opts.keep_ranking, started, lookups)
}

/// Direct evaluation over all `2^(N+1)` topologies, including those the
/// two-step search prunes. Every scenario energy is recomputed.
pub fn brute_force_optimize(
    n_plus_1: usize,
    link: &LinkModel,
    params: &ControllerParams,
    spectrum: &TrajectorySpectrum,
) -> Result<OptimizationResult> {
    let started = Instant::now();
    if n_plus_1 > BRUTE_FORCE_LIMIT {
        return Err(Error::TooLarge { size: n_plus_1, limit: BRUTE_FORCE_LIMIT });
    }
    if n_plus_1 < 2 {
        return Err(Error::invalid("platoon_size", "a platoon needs at least two vehicles"));
    }
    link.validate()?;
    let evaluator = EnergyEvaluator::new(params, spectrum)?;
    let full = 1u32 << n_plus_1;
    let mut scores = Vec::with_capacity(full as usize);
    for xi in 0..full {
        let ift = Ift::from_mask(xi, n_plus_1)?;
        let profile = link.profile(&ift)?;
        let mut acc = 0.0;
        for sub in (0..full).filter(|sub| sub & !xi == 0) {
            let mut p = 1.0;
            for i in 0..n_plus_1 {
                if xi >> i & 1 == 1 {
                    p *= if sub >> i & 1 == 1 { profile.p_unsat[i] } else { 1.0 - profile.p_unsat[i] };
                }
            }
            let zeta = receiver_status_of_mask(sub, n_plus_1);
            acc += p * evaluator.scenario_energy(&zeta).value();
        }
        scores.push(CandidateScore { ift, expected_energy: acc });
    }
    finish(scores, true, started, 0)
}
