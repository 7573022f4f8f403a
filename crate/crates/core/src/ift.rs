//! Information flow topologies, their degeneration scenarios and the
//! receiver-side controller modes they induce.
//!
//! An [`Ift`] records which vehicles broadcast (bit `i` is vehicle `i`, the
//! leader is vehicle 0). Under sender failures an IFT degenerates into any
//! sub-pattern of its activated bits. Each follower listens to its two
//! predecessors, so the realized pattern fixes the controller [`Mode`] of
//! every vehicle.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Largest platoon representable by the packed bit vectors.
pub const MAX_VEHICLES: usize = 32;

/// Activation vector over `N + 1` vehicles, leader first.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct Ift {
    mask: u32,
    len: usize,
}

impl Ift {
    pub fn from_mask(mask: u32, len: usize) -> Result<Self> {
        check_len(len)?;
        if len < MAX_VEHICLES && mask >> len != 0 {
            return Err(Error::invalid("ift", format!("mask {mask:#b} has bits beyond {len} vehicles")));
        }
        Ok(Ift { mask, len })
    }

    pub fn from_bits(bits: &[bool]) -> Result<Self> {
        check_len(bits.len())?;
        let mask = bits.iter().enumerate().fold(0u32, |m, (i, &b)| m | (u32::from(b) << i));
        Ok(Ift { mask, len: bits.len() })
    }

    /// All-zero vector: no vehicle broadcasts.
    pub fn silent(len: usize) -> Result<Self> {
        Ift::from_mask(0, len)
    }

    /// `[1, 1, ..., 1, 0]`: every vehicle but the last broadcasts. Its
    /// degeneration set contains every scenario of every candidate IFT.
    pub fn fully_activated(len: usize) -> Result<Self> {
        if len < 2 {
            return Err(Error::invalid("platoon_size", "a platoon needs at least 2 vehicles"));
        }
        Ift::from_mask(low_bits(len - 1), len)
    }

    pub fn mask(&self) -> u32 {
        self.mask
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn is_active(&self, vehicle: usize) -> bool {
        vehicle < self.len && self.mask >> vehicle & 1 == 1
    }

    pub fn active_count(&self) -> u32 {
        self.mask.count_ones()
    }

    pub fn bits(&self) -> Vec<bool> {
        (0..self.len).map(|i| self.is_active(i)).collect()
    }

    /// Leader broadcasting, last vehicle silent.
    pub fn is_candidate(&self) -> bool {
        self.len >= 2 && self.is_active(0) && !self.is_active(self.len - 1)
    }

    /// Number of degeneration scenarios, `2^popcount`.
    pub fn degeneration_count(&self) -> u64 {
        1u64 << self.active_count()
    }

    /// Realized outcome masks in canonical order (see [`enumerate_degenerations`]).
    pub fn degeneration_masks(&self) -> DegenerationMasks {
        let mut positions = [0u8; MAX_VEHICLES];
        let mut k = 0;
        for i in 0..self.len {
            if self.is_active(i) {
                positions[k] = i as u8;
                k += 1;
            }
        }
        DegenerationMasks { positions, active: k as u32, next: Some((1u64 << k) - 1) }
    }
}

fn low_bits(n: usize) -> u32 {
    if n >= 32 {
        u32::MAX
    } else {
        (1u32 << n) - 1
    }
}

fn check_len(len: usize) -> Result<()> {
    if len == 0 || len > MAX_VEHICLES {
        return Err(Error::invalid("platoon_size", format!("must be in 1..={MAX_VEHICLES}, got {len}")));
    }
    Ok(())
}

impl fmt::Display for Ift {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_bits(f, self.mask, self.len)
    }
}

fn write_bits(f: &mut fmt::Formatter<'_>, mask: u32, len: usize) -> fmt::Result {
    for i in 0..len {
        f.write_str(if mask >> i & 1 == 1 { "1" } else { "0" })?;
    }
    Ok(())
}

impl FromStr for Ift {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bits = s
            .trim()
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::invalid("ift", format!("unexpected character {other:?} in {s:?}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ift::from_bits(&bits)
    }
}

impl Serialize for Ift {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Ift {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Iterator over the outcome masks of one IFT.
///
/// The activated positions act as a binary counter whose most significant
/// digit is the vehicle closest to the leader; counting down from all-ones
/// yields the scenarios in descending lexicographic order of their
/// leader-first strings.
#[derive(Clone, Debug)]
pub struct DegenerationMasks {
    positions: [u8; MAX_VEHICLES],
    active: u32,
    next: Option<u64>,
}

impl Iterator for DegenerationMasks {
    type Item = u32;

    fn next(&mut self) -> Option<u32> {
        let counter = self.next?;
        self.next = counter.checked_sub(1);
        let k = self.active;
        let mut mask = 0u32;
        for j in 0..k {
            if counter >> (k - 1 - j) & 1 == 1 {
                mask |= 1 << self.positions[j as usize];
            }
        }
        Some(mask)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = self.next.map_or(0, |c| c as usize + 1);
        (n, Some(n))
    }
}

impl ExactSizeIterator for DegenerationMasks {}

/// Realized sender outcomes `ξ_d ≤ ξ` at one instant.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct DegenerationScenario {
    outcome: u32,
    parent: Ift,
}

impl DegenerationScenario {
    pub fn new(outcome: u32, parent: Ift) -> Result<Self> {
        if outcome & !parent.mask != 0 {
            return Err(Error::invalid(
                "scenario",
                format!("outcome {} is not a sub-pattern of {parent}", Bits(outcome, parent.len)),
            ));
        }
        Ok(DegenerationScenario { outcome, parent })
    }

    /// The undegraded scenario where every activated sender succeeds.
    pub fn intact(parent: Ift) -> Self {
        DegenerationScenario { outcome: parent.mask, parent }
    }

    pub fn outcome_mask(&self) -> u32 {
        self.outcome
    }

    pub fn parent(&self) -> Ift {
        self.parent
    }

    pub fn len(&self) -> usize {
        self.parent.len
    }

    pub fn is_empty(&self) -> bool {
        self.parent.len == 0
    }

    pub fn sent(&self, vehicle: usize) -> bool {
        vehicle < self.parent.len && self.outcome >> vehicle & 1 == 1
    }

    /// Activated in the parent but failed in this scenario.
    pub fn failed(&self, vehicle: usize) -> bool {
        self.parent.is_active(vehicle) && !self.sent(vehicle)
    }
}

impl fmt::Display for DegenerationScenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_bits(f, self.outcome, self.parent.len)
    }
}

struct Bits(u32, usize);

impl fmt::Display for Bits {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_bits(f, self.0, self.1)
    }
}

/// Every degeneration scenario of `ift`, each exactly once, in canonical order.
///
/// `[1,0,1,0,0]` yields `10100, 10000, 00100, 00000`.
pub fn enumerate_degenerations(ift: &Ift) -> Vec<DegenerationScenario> {
    ift.degeneration_masks()
        .map(|outcome| DegenerationScenario { outcome, parent: *ift })
        .collect()
}

/// Candidate IFTs for the optimizer: leader on, last vehicle off, interior
/// bits counted upward with vehicle 1 as the least significant digit.
pub fn candidate_ifts(n_plus_1: usize) -> Result<Vec<Ift>> {
    if n_plus_1 < 2 {
        return Err(Error::invalid("platoon_size", format!("a platoon needs at least 2 vehicles, got {n_plus_1}")));
    }
    check_len(n_plus_1)?;
    let free = n_plus_1 - 2;
    Ok((0..1u32 << free).map(|c| Ift { mask: 1 | (c << 1), len: n_plus_1 }).collect())
}

/// Controller variant run by a follower.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Both predecessors heard.
    Cacc1,
    /// Only the immediate predecessor heard.
    Cacc2,
    /// Only the second predecessor heard.
    Cacc3,
    /// Nothing heard; onboard sensing only.
    Acc,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Cacc1, Mode::Cacc2, Mode::Cacc3, Mode::Acc];

    pub fn code(self) -> u8 {
        match self {
            Mode::Cacc1 => 1,
            Mode::Cacc2 => 2,
            Mode::Cacc3 => 3,
            Mode::Acc => 4,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            1 => Ok(Mode::Cacc1),
            2 => Ok(Mode::Cacc2),
            3 => Ok(Mode::Cacc3),
            4 => Ok(Mode::Acc),
            other => Err(Error::invalid("mode", format!("controller mode must be 1..=4, got {other}"))),
        }
    }

    pub fn index(self) -> usize {
        self.code() as usize - 1
    }

    pub fn is_cooperative(self) -> bool {
        self != Mode::Acc
    }

    /// Mode of a follower given whether its first and second predecessors were heard.
    pub fn from_reception(first: bool, second: bool) -> Self {
        match (first, second) {
            (true, true) => Mode::Cacc1,
            (true, false) => Mode::Cacc2,
            (false, true) => Mode::Cacc3,
            (false, false) => Mode::Acc,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Cacc1 => "CACC1",
            Mode::Cacc2 => "CACC2",
            Mode::Cacc3 => "CACC3",
            Mode::Acc => "ACC",
        })
    }
}

/// Per-vehicle controller modes `ζ`, leader first.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct ReceiverStatusVector {
    status: Vec<Mode>,
}

impl ReceiverStatusVector {
    /// Validates the boundary rules: the leader is always ACC and vehicle 1
    /// can only be CACC2 or ACC.
    pub fn new(status: Vec<Mode>) -> Result<Self> {
        if status.is_empty() {
            return Err(Error::invalid("zeta", "empty status vector"));
        }
        if status[0] != Mode::Acc {
            return Err(Error::invalid("zeta[0]", "leader must be in ACC (status 4)"));
        }
        if let Some(&m) = status.get(1) {
            if !matches!(m, Mode::Cacc2 | Mode::Acc) {
                return Err(Error::invalid("zeta[1]", format!("vehicle 1 has one predecessor, got {m}")));
            }
        }
        Ok(ReceiverStatusVector { status })
    }

    pub fn from_codes(codes: &[u8]) -> Result<Self> {
        let modes = codes.iter().map(|&c| Mode::from_code(c)).collect::<Result<Vec<_>>>()?;
        ReceiverStatusVector::new(modes)
    }

    /// All followers in one mode; vehicle 1 falls back to CACC2 when the
    /// requested mode needs a second predecessor.
    pub fn uniform(len: usize, mode: Mode) -> Result<Self> {
        let mut status = vec![mode; len];
        if let Some(first) = status.first_mut() {
            *first = Mode::Acc;
        }
        if let Some(second) = status.get_mut(1) {
            *second = match mode {
                Mode::Acc => Mode::Acc,
                _ => Mode::Cacc2,
            };
        }
        ReceiverStatusVector::new(status)
    }

    pub fn modes(&self) -> &[Mode] {
        &self.status
    }

    pub fn mode(&self, vehicle: usize) -> Mode {
        self.status[vehicle]
    }

    pub fn len(&self) -> usize {
        self.status.len()
    }

    pub fn is_empty(&self) -> bool {
        self.status.is_empty()
    }

    pub fn codes(&self) -> Vec<u8> {
        self.status.iter().map(|m| m.code()).collect()
    }
}

/// Receiver status for an outcome mask: `ζ_i = 4 − 2·η_{i−1,d} − η_{i−2,d}`,
/// with missing predecessors counted as silent.
pub fn receiver_status_of_mask(outcome: u32, len: usize) -> ReceiverStatusVector {
    let sent = |j: usize| outcome >> j & 1 == 1;
    let status = (0..len)
        .map(|i| {
            let first = i >= 1 && sent(i - 1);
            let second = i >= 2 && sent(i - 2);
            Mode::from_reception(first, second)
        })
        .collect();
    ReceiverStatusVector { status }
}

pub fn receiver_status(scenario: &DegenerationScenario) -> ReceiverStatusVector {
    receiver_status_of_mask(scenario.outcome, scenario.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ift(s: &str) -> Ift {
        s.parse().unwrap()
    }

    fn strings(scenarios: &[DegenerationScenario]) -> Vec<String> {
        scenarios.iter().map(|d| d.to_string()).collect()
    }

    #[test]
    fn four_scenarios_of_sparse_ift() {
        let got = enumerate_degenerations(&ift("10100"));
        assert_eq!(strings(&got), ["10100", "10000", "00100", "00000"]);
    }

    #[test]
    fn silent_ift_has_single_scenario() {
        let got = enumerate_degenerations(&ift("000"));
        assert_eq!(strings(&got), ["000"]);
    }

    #[test]
    fn dense_prefix_matches_subset_enumeration() {
        let parent = ift("110");
        let mut expected: Vec<String> = (0u32..8)
            .filter(|m| m & !parent.mask() == 0)
            .map(|m| Bits(m, 3).to_string())
            .collect();
        expected.sort();
        let mut got = strings(&enumerate_degenerations(&parent));
        got.sort();
        assert_eq!(got, expected);
        assert_eq!(got.len(), 4);
    }

    #[test]
    fn status_of_full_and_empty_patterns() {
        let full = DegenerationScenario::intact(ift("11111"));
        assert_eq!(receiver_status(&full).codes(), [4, 2, 1, 1, 1]);
        let none = DegenerationScenario::intact(ift("00000"));
        assert_eq!(receiver_status(&none).codes(), [4, 4, 4, 4, 4]);
    }

    #[test]
    fn status_of_sparse_pattern() {
        // vehicle 3 hears only vehicle 2 (its immediate predecessor), vehicle 4
        // hears only vehicle 2 (its second predecessor)
        let d = DegenerationScenario::intact(ift("10100"));
        assert_eq!(receiver_status(&d).codes(), [4, 2, 3, 2, 3]);
    }

    #[test]
    fn candidates_small() {
        let c: Vec<String> = candidate_ifts(4).unwrap().iter().map(|x| x.to_string()).collect();
        assert_eq!(c, ["1000", "1100", "1010", "1110"]);
        let c: Vec<String> = candidate_ifts(2).unwrap().iter().map(|x| x.to_string()).collect();
        assert_eq!(c, ["10"]);
        assert_eq!(candidate_ifts(15).unwrap().len(), 8192);
        assert!(candidate_ifts(1).is_err());
    }

    #[test]
    fn string_round_trip_and_errors() {
        assert_eq!(ift("111000111000110").to_string(), "111000111000110");
        assert!("10a".parse::<Ift>().is_err());
        assert!("".parse::<Ift>().is_err());
        assert!(Ift::from_mask(0b100, 2).is_err());
    }

    #[test]
    fn scenario_must_be_sub_pattern() {
        let parent = ift("10100");
        assert!(DegenerationScenario::new(0b00010, parent).is_err());
        let d = DegenerationScenario::new(0b00001, parent).unwrap();
        assert!(d.failed(2) && !d.failed(0) && !d.failed(1));
    }

    #[test]
    fn status_vector_boundaries() {
        assert!(ReceiverStatusVector::from_codes(&[4, 2, 1]).is_ok());
        assert!(ReceiverStatusVector::from_codes(&[1, 2, 1]).is_err());
        assert!(ReceiverStatusVector::from_codes(&[4, 1, 1]).is_err());
        assert!(ReceiverStatusVector::from_codes(&[4, 3, 1]).is_err());
        assert!(ReceiverStatusVector::from_codes(&[4, 2, 5]).is_err());
        assert_eq!(ReceiverStatusVector::uniform(4, Mode::Cacc3).unwrap().codes(), [4, 2, 3, 3]);
    }

    #[test]
    fn fully_activated_shape() {
        assert_eq!(Ift::fully_activated(5).unwrap().to_string(), "11110");
        assert!(Ift::fully_activated(5).unwrap().is_candidate());
        assert!(Ift::fully_activated(1).is_err());
    }
}
