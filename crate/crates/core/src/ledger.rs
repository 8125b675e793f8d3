//! Shared domain types and regret / switch accounting.
//!
//! Arms are zero-based throughout the library (`0..K`); the CLI prints them
//! one-based.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamError {
    #[error("horizon T must be positive, got {0}")]
    ZeroHorizon(u64),
    #[error("need at least 2 arms, got {0}")]
    TooFewArms(usize),
    #[error("horizon T = {horizon} is smaller than the number of arms K = {arms}")]
    HorizonBelowArms { horizon: u64, arms: usize },
    #[error("switching cost must be finite and non-negative, got {0}")]
    BadLambda(f64),
    #[error("loss {value} for arm {arm} is outside [0, 1]")]
    LossOutOfRange { arm: usize, value: f64 },
    #[error("gap vector must have exactly one zero entry (unique best arm), found {zeros}")]
    BestArmNotUnique { zeros: usize },
    #[error("gap {value} for arm {arm} must be finite and non-negative")]
    BadGap { arm: usize, value: f64 },
    #[error("gap vector needs at least 2 arms, got {0}")]
    GapTooShort(usize),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LedgerError {
    #[error("arm {arm} out of range for K = {arms}")]
    ArmOutOfRange { arm: usize, arms: usize },
    #[error("loss vector has {got} entries, ledger tracks {expected} arms")]
    WidthMismatch { expected: usize, got: usize },
    #[error("pseudo-regret undefined: the environment supplies no gaps")]
    NoGaps,
    #[error("switching cost must be finite and non-negative, got {0}")]
    BadLambda(f64),
}

/// Horizon, arm count, switching cost and seed for one episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExperimentParams {
    pub horizon: u64,
    pub arms: usize,
    pub lambda: f64,
    pub seed: u64,
}

impl ExperimentParams {
    pub fn new(horizon: u64, arms: usize, lambda: f64, seed: u64) -> Result<Self, ParamError> {
        if horizon == 0 {
            return Err(ParamError::ZeroHorizon(horizon));
        }
        if arms < 2 {
            return Err(ParamError::TooFewArms(arms));
        }
        if horizon < arms as u64 {
            return Err(ParamError::HorizonBelowArms { horizon, arms });
        }
        if !lambda.is_finite() || lambda < 0.0 {
            return Err(ParamError::BadLambda(lambda));
        }
        Ok(Self {
            horizon,
            arms,
            lambda,
            seed,
        })
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }
}

/// One round's loss for every arm, each in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossVector(Vec<f64>);

impl LossVector {
    pub fn new(values: Vec<f64>) -> Result<Self, ParamError> {
        for (arm, &value) in values.iter().enumerate() {
            // NaN fails both comparisons
            if !(0.0..=1.0).contains(&value) {
                return Err(ParamError::LossOutOfRange { arm, value });
            }
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn arms(&self) -> usize {
        self.0.len()
    }

    pub fn get(&self, arm: usize) -> Option<f64> {
        self.0.get(arm).copied()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Per-arm expected excess loss over the unique best arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapSpec {
    best_arm: usize,
    gaps: Vec<f64>,
    delta_min: f64,
}

impl GapSpec {
    pub fn new(gaps: Vec<f64>) -> Result<Self, ParamError> {
        if gaps.len() < 2 {
            return Err(ParamError::GapTooShort(gaps.len()));
        }
        for (arm, &value) in gaps.iter().enumerate() {
            if !value.is_finite() || value < 0.0 {
                return Err(ParamError::BadGap { arm, value });
            }
        }
        let zeros: Vec<usize> = (0..gaps.len()).filter(|&i| gaps[i] == 0.0).collect();
        if zeros.len() != 1 {
            return Err(ParamError::BestArmNotUnique { zeros: zeros.len() });
        }
        let best_arm = zeros[0];
        let delta_min = gaps
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != best_arm)
            .map(|(_, &g)| g)
            .fold(f64::INFINITY, f64::min);
        Ok(Self {
            best_arm,
            gaps,
            delta_min,
        })
    }

    /// All suboptimal arms share the same gap `delta`.
    pub fn uniform(arms: usize, best_arm: usize, delta: f64) -> Result<Self, ParamError> {
        let gaps = (0..arms)
            .map(|i| if i == best_arm { 0.0 } else { delta })
            .collect();
        Self::new(gaps)
    }

    pub fn best_arm(&self) -> usize {
        self.best_arm
    }

    pub fn gaps(&self) -> &[f64] {
        &self.gaps
    }

    pub fn gap(&self, arm: usize) -> f64 {
        self.gaps[arm]
    }

    pub fn delta_min(&self) -> f64 {
        self.delta_min
    }

    pub fn delta_max(&self) -> f64 {
        self.gaps.iter().copied().fold(0.0, f64::max)
    }

    pub fn arms(&self) -> usize {
        self.gaps.len()
    }
}

/// Running loss, pseudo-regret and switch totals for one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretLedger {
    rounds: u64,
    gapped_rounds: u64,
    cumulative_player_loss: f64,
    cumulative_arm_loss: Vec<f64>,
    pseudo_regret: f64,
    switch_count: u64,
    last_arm: Option<usize>,
}

impl RegretLedger {
    pub fn new(arms: usize) -> Self {
        Self {
            rounds: 0,
            gapped_rounds: 0,
            cumulative_player_loss: 0.0,
            cumulative_arm_loss: vec![0.0; arms],
            pseudo_regret: 0.0,
            switch_count: 0,
            last_arm: None,
        }
    }

    /// Records one round. No switch is charged on the first round.
    pub fn record_step(
        &mut self,
        arm: usize,
        losses: &LossVector,
        gaps: Option<&GapSpec>,
    ) -> Result<(), LedgerError> {
        let arms = self.cumulative_arm_loss.len();
        if arm >= arms {
            return Err(LedgerError::ArmOutOfRange { arm, arms });
        }
        if losses.arms() != arms {
            return Err(LedgerError::WidthMismatch {
                expected: arms,
                got: losses.arms(),
            });
        }
        if let Some(g) = gaps {
            if g.arms() != arms {
                return Err(LedgerError::WidthMismatch {
                    expected: arms,
                    got: g.arms(),
                });
            }
        }

        self.cumulative_player_loss += losses.values()[arm];
        for (sum, &l) in self.cumulative_arm_loss.iter_mut().zip(losses.values()) {
            *sum += l;
        }
        if matches!(self.last_arm, Some(prev) if prev != arm) {
            self.switch_count += 1;
        }
        self.last_arm = Some(arm);
        if let Some(g) = gaps {
            self.pseudo_regret += g.gap(arm);
            self.gapped_rounds += 1;
        }
        self.rounds += 1;
        Ok(())
    }

    pub fn rounds(&self) -> u64 {
        self.rounds
    }

    pub fn arms(&self) -> usize {
        self.cumulative_arm_loss.len()
    }

    pub fn cumulative_player_loss(&self) -> f64 {
        self.cumulative_player_loss
    }

    pub fn cumulative_arm_loss(&self) -> &[f64] {
        &self.cumulative_arm_loss
    }

    pub fn switch_count(&self) -> u64 {
        self.switch_count
    }

    pub fn last_arm(&self) -> Option<usize> {
        self.last_arm
    }

    /// Defined only when every recorded round carried a gap specification.
    pub fn pseudo_regret(&self) -> Option<f64> {
        (self.gapped_rounds == self.rounds).then_some(self.pseudo_regret)
    }

    /// Player loss minus the hindsight-best arm's loss. Can be negative.
    pub fn realized_regret(&self) -> f64 {
        let best = self
            .cumulative_arm_loss
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        if best.is_finite() {
            self.cumulative_player_loss - best
        } else {
            0.0
        }
    }

    /// `pseudo_regret + lambda * switches`.
    pub fn switching_cost_regret(&self, lambda: f64) -> Result<f64, LedgerError> {
        if !lambda.is_finite() || lambda < 0.0 {
            return Err(LedgerError::BadLambda(lambda));
        }
        let pseudo = self.pseudo_regret().ok_or(LedgerError::NoGaps)?;
        Ok(pseudo + lambda * self.switch_count as f64)
    }

    /// Fallback for gap-free environments: `realized_regret + lambda * switches`.
    pub fn realized_switching_cost_regret(&self, lambda: f64) -> f64 {
        self.realized_regret() + lambda * self.switch_count as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Phase {
    One,
    Two,
}

impl Phase {
    pub fn number(self) -> u8 {
        match self {
            Phase::One => 1,
            Phase::Two => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    /// One-based round index.
    pub t: u64,
    pub arm: usize,
    pub loss: f64,
    pub phase: Phase,
    pub switches: u64,
    pub pseudo_regret: Option<f64>,
    /// Pseudo-regret based when gaps exist, realized-regret based otherwise.
    pub switching_cost_regret: f64,
}

/// Everything recorded about one seeded run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub params: ExperimentParams,
    pub rounds: Vec<RoundRecord>,
    /// The full loss matrix the environment produced, one vector per round.
    pub losses: Vec<LossVector>,
    pub ledger: RegretLedger,
    /// Last phase-one round, when the switch budget triggered phase two.
    pub break_round: Option<u64>,
    pub phase1_switches: u64,
}

impl EpisodeTrace {
    pub fn arm_sequence(&self) -> Vec<usize> {
        self.rounds.iter().map(|r| r.arm).collect()
    }

    pub fn phase2_switches(&self) -> u64 {
        self.ledger.switch_count() - self.phase1_switches
    }
}
