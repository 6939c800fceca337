//! Degradation-parameter and length rewards, and group-relative advantages.
//!
//! * `r_deg` compares predicted and ground-truth `(type, intensity)` lists:
//!   a same-type pair earns `1 - |s_pred - s_truth|`, a different-type pair
//!   costs 1. [`DegMode::Literal`] sums this over the full cross product;
//!   [`DegMode::Matched`] scores the best one-to-one assignment instead and
//!   charges 1 for every entry left unpaired.
//! * `r_len = 1 - |len - len_truth| / len_truth`, not clamped below.
//! * total reward `r_deg + r_len`.
//! * advantages are z-scores within a group, using the population standard
//!   deviation. Groups whose deviation is at most `epsilon` get all-zero
//!   advantages.

use serde::{Deserialize, Serialize};

use crate::chain::{chain_length, parse_chain_tolerant, ReasoningChain};
use crate::degradation::DegradationSpec;
use crate::error::RewardError;

/// Largest list size accepted by the matched mode's exhaustive search.
pub const MAX_MATCHED_ENTRIES: usize = 8;

pub const DEFAULT_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegMode {
    #[default]
    Literal,
    Matched,
}

impl std::str::FromStr for DegMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "literal" => Ok(Self::Literal),
            "matched" => Ok(Self::Matched),
            other => Err(format!("unknown mode `{other}` (expected literal or matched)")),
        }
    }
}

#[inline]
fn pair_score(a: &DegradationSpec, b: &DegradationSpec) -> f64 {
    if a.kind() == b.kind() {
        1.0 - (a.intensity() - b.intensity()).abs()
    } else {
        -1.0
    }
}

pub fn reward_deg(
    predicted: &[DegradationSpec],
    truth: &[DegradationSpec],
    mode: DegMode,
) -> Result<f64, RewardError> {
    match mode {
        DegMode::Literal => Ok(predicted
            .iter()
            .flat_map(|p| truth.iter().map(move |t| pair_score(p, t)))
            .sum()),
        DegMode::Matched => matched_deg(predicted, truth),
    }
}

fn matched_deg(predicted: &[DegradationSpec], truth: &[DegradationSpec]) -> Result<f64, RewardError> {
    let largest = predicted.len().max(truth.len());
    if largest > MAX_MATCHED_ENTRIES {
        return Err(RewardError::TooManyEntries {
            max: MAX_MATCHED_ENTRIES,
            actual: largest,
        });
    }
    if predicted.is_empty() {
        return Ok(0.0);
    }
    // Every pair scores at least -1, which beats leaving both ends unpaired
    // (-2), so an optimum pairs min(I, J) entries. Enumerate injections of the
    // shorter side into the longer one.
    let (short, long) = if predicted.len() <= truth.len() {
        (predicted, truth)
    } else {
        (truth, predicted)
    };
    let scores: Vec<Vec<f64>> = short
        .iter()
        .map(|a| long.iter().map(|b| pair_score(a, b)).collect())
        .collect();
    let mut best = f64::NEG_INFINITY;
    best_injection(&scores, 0, 0u16, 0.0, &mut best);
    Ok(best - (long.len() - short.len()) as f64)
}

fn best_injection(scores: &[Vec<f64>], row: usize, used: u16, acc: f64, best: &mut f64) {
    if row == scores.len() {
        if acc > *best {
            *best = acc;
        }
        return;
    }
    for (col, s) in scores[row].iter().enumerate() {
        if used & (1 << col) == 0 {
            best_injection(scores, row + 1, used | (1 << col), acc + s, best);
        }
    }
}

pub fn reward_len(candidate_len: usize, truth_len: usize) -> Result<f64, RewardError> {
    if truth_len == 0 {
        return Err(RewardError::ZeroTruthLength);
    }
    let diff = (candidate_len as f64 - truth_len as f64).abs();
    Ok(1.0 - diff / truth_len as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_deg: f64,
    pub r_len: f64,
    pub total: f64,
}

impl RewardBreakdown {
    fn new(r_deg: f64, r_len: f64) -> Self {
        Self {
            r_deg,
            r_len,
            total: r_deg + r_len,
        }
    }
}

pub fn composite_reward(
    candidate: &ReasoningChain,
    truth: &ReasoningChain,
    mode: DegMode,
) -> Result<RewardBreakdown, RewardError> {
    if truth.degradations.is_empty() {
        return Err(RewardError::EmptyTruth);
    }
    let r_deg = reward_deg(&candidate.degradations, &truth.degradations, mode)?;
    let r_len = reward_len(chain_length(candidate), chain_length(truth))?;
    Ok(RewardBreakdown::new(r_deg, r_len))
}

/// Scores raw model output. A malformed TYPE body counts as an empty
/// prediction; output whose segment structure does not parse counts as an
/// empty prediction of length zero.
pub fn score_candidate_text(
    candidate: &str,
    truth: &ReasoningChain,
    mode: DegMode,
) -> Result<RewardBreakdown, RewardError> {
    match parse_chain_tolerant(candidate) {
        Ok(chain) => composite_reward(&chain, truth, mode),
        Err(_) => {
            if truth.degradations.is_empty() {
                return Err(RewardError::EmptyTruth);
            }
            Ok(RewardBreakdown::new(0.0, reward_len(0, chain_length(truth))?))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageGroup {
    pub rewards: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation (divides by G).
    pub std: f64,
    pub advantages: Vec<f64>,
}

pub fn group_advantages(rewards: &[f64], epsilon: f64) -> Result<AdvantageGroup, RewardError> {
    if rewards.len() < 2 {
        return Err(RewardError::GroupTooSmall(rewards.len()));
    }
    if rewards.iter().any(|r| !r.is_finite()) {
        return Err(RewardError::NonFinite);
    }
    let g = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / g;
    let std = (rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / g).sqrt();
    let advantages = if std <= epsilon {
        vec![0.0; rewards.len()]
    } else {
        rewards.iter().map(|r| (r - mean) / std).collect()
    };
    Ok(AdvantageGroup {
        rewards: rewards.to_vec(),
        mean,
        std,
        advantages,
    })
}

/// One line of a batch scoring file.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoringPair {
    /// Raw chain text as produced by a model.
    pub candidate: String,
    pub truth: ReasoningChain,
}
