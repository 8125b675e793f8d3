//! Learners behind a uniform act / observe interface.
//!
//! Every policy draws exactly one uniform variate per `act` call that needs
//! randomness and maps it to an arm by inverse CDF over ascending arm index,
//! so runs are reproducible given the RNG stream.

use rand::{Rng, RngCore};
use thiserror::Error;

use crate::ftrl::{
    eta_schedule, tsallis_distribution, CumulativeEstimates, FtrlError, SimplexDistribution,
};
use crate::ledger::Phase;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("act called twice without an observe in between")]
    ActTwice,
    #[error("observe called without a preceding act")]
    ObserveWithoutAct,
    #[error("observed arm {observed} but the policy committed to {committed}")]
    ArmMismatch { observed: usize, committed: usize },
    #[error("horizon of {0} rounds exhausted")]
    HorizonExhausted(u64),
    #[error("switching cost must be positive for a block schedule, got {0}")]
    NoBlockSize(f64),
    #[error("block size must be at least 1")]
    ZeroBlockSize,
    #[error("arm {arm} out of range for K = {arms}")]
    ArmOutOfRange { arm: usize, arms: usize },
    #[error(transparent)]
    Ftrl(#[from] FtrlError),
}

/// One learner instance per episode. `act` and `observe` strictly alternate.
pub trait Policy: Send {
    fn arms(&self) -> usize;

    /// Samples and commits the arm for the current round.
    fn act(&mut self, rng: &mut dyn RngCore) -> Result<usize, PolicyError>;

    /// Feeds back the loss of the committed arm.
    fn observe(&mut self, arm: usize, loss: f64) -> Result<(), PolicyError>;

    fn phase(&self) -> Phase {
        Phase::One
    }

    /// Last phase-one round, once the policy has moved to phase two.
    fn break_round(&self) -> Option<u64> {
        None
    }
}

/// `K^{1/3} (T/lambda)^{2/3}`; infinite when `lambda = 0`.
pub fn switch_threshold(arms: usize, horizon: u64, lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return f64::INFINITY;
    }
    (arms as f64).cbrt() * (horizon as f64 / lambda).powf(2.0 / 3.0)
}

/// `ceil(lambda^{2/3} K^{-1/3} T^{1/3})`, at least 1.
pub fn block_size(arms: usize, horizon: u64, lambda: f64) -> Result<u64, PolicyError> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(PolicyError::NoBlockSize(lambda));
    }
    let raw = lambda.powf(2.0 / 3.0) * (horizon as f64).cbrt() / (arms as f64).cbrt();
    Ok((raw.ceil() as u64).max(1))
}

fn check_pending(pending: Option<usize>, arm: usize) -> Result<(), PolicyError> {
    match pending {
        None => Err(PolicyError::ObserveWithoutAct),
        Some(committed) if committed != arm => Err(PolicyError::ArmMismatch {
            observed: arm,
            committed,
        }),
        Some(_) => Ok(()),
    }
}

/// Plain Tsallis-INF with `eta_t = 2/sqrt(t)`.
#[derive(Debug, Clone)]
pub struct TsallisInf {
    round: u64,
    estimates: CumulativeEstimates,
    current: Option<SimplexDistribution>,
    warm: Option<f64>,
    pending: Option<usize>,
    switches: u64,
    last_arm: Option<usize>,
}

impl TsallisInf {
    pub fn new(arms: usize) -> Self {
        Self {
            round: 1,
            estimates: CumulativeEstimates::zeros(arms),
            current: None,
            warm: None,
            pending: None,
            switches: 0,
            last_arm: None,
        }
    }

    /// The round the next `act` will play (one-based).
    pub fn round(&self) -> u64 {
        self.round
    }

    /// Arm changes observed so far; the first round never counts.
    pub fn switches(&self) -> u64 {
        self.switches
    }

    pub fn estimates(&self) -> &CumulativeEstimates {
        &self.estimates
    }

    /// Distribution used by the most recent `act`.
    pub fn current_distribution(&self) -> Option<&SimplexDistribution> {
        self.current.as_ref()
    }
}

impl Policy for TsallisInf {
    fn arms(&self) -> usize {
        self.estimates.arms()
    }

    fn act(&mut self, rng: &mut dyn RngCore) -> Result<usize, PolicyError> {
        if self.pending.is_some() {
            return Err(PolicyError::ActTwice);
        }
        let dist = tsallis_distribution(&self.estimates, eta_schedule(self.round)?, self.warm)?;
        let arm = dist.sample_with(rng.random::<f64>());
        self.warm = Some(dist.multiplier());
        self.current = Some(dist);
        self.pending = Some(arm);
        Ok(arm)
    }

    fn observe(&mut self, arm: usize, loss: f64) -> Result<(), PolicyError> {
        check_pending(self.pending, arm)?;
        let dist = self
            .current
            .as_ref()
            .ok_or(PolicyError::ObserveWithoutAct)?;
        self.estimates.add_importance_weighted(loss, dist, arm)?;
        if matches!(self.last_arm, Some(prev) if prev != arm) {
            self.switches += 1;
        }
        self.last_arm = Some(arm);
        self.pending = None;
        self.round += 1;
        Ok(())
    }
}

/// Tsallis-INF over blocks of `B` rounds: one arm per block, updated once per
/// block on the block-average loss. A trailing block shorter than `B` averages
/// over its actual length.
#[derive(Debug, Clone)]
pub struct MiniBatchedTsallisInf {
    block_size: u64,
    horizon: u64,
    played: u64,
    block_index: u64,
    block_len: u64,
    position: u64,
    block_loss: f64,
    block_arm: usize,
    estimates: CumulativeEstimates,
    block_dist: Option<SimplexDistribution>,
    warm: Option<f64>,
    pending: Option<usize>,
    switches: u64,
    last_arm: Option<usize>,
    completed_blocks: u64,
}

impl MiniBatchedTsallisInf {
    pub fn new(arms: usize, block_size: u64, horizon: u64) -> Result<Self, PolicyError> {
        if block_size == 0 {
            return Err(PolicyError::ZeroBlockSize);
        }
        Ok(Self {
            block_size,
            horizon,
            played: 0,
            block_index: 1,
            block_len: 0,
            position: 0,
            block_loss: 0.0,
            block_arm: 0,
            estimates: CumulativeEstimates::zeros(arms),
            block_dist: None,
            warm: None,
            pending: None,
            switches: 0,
            last_arm: None,
            completed_blocks: 0,
        })
    }

    pub fn block_size(&self) -> u64 {
        self.block_size
    }

    /// Index `n` of the block in progress (or about to start), one-based.
    pub fn block_index(&self) -> u64 {
        self.block_index
    }

    /// Blocks whose estimate update has been applied.
    pub fn completed_blocks(&self) -> u64 {
        self.completed_blocks
    }

    pub fn switches(&self) -> u64 {
        self.switches
    }

    pub fn estimates(&self) -> &CumulativeEstimates {
        &self.estimates
    }

    pub fn block_distribution(&self) -> Option<&SimplexDistribution> {
        self.block_dist.as_ref()
    }

    /// Lengths of every block the schedule will play over `horizon` rounds.
    pub fn schedule(block_size: u64, horizon: u64) -> Vec<u64> {
        let mut out = Vec::new();
        let mut left = horizon;
        while left > 0 {
            let len = block_size.min(left);
            out.push(len);
            left -= len;
        }
        out
    }
}

impl Policy for MiniBatchedTsallisInf {
    fn arms(&self) -> usize {
        self.estimates.arms()
    }

    fn act(&mut self, rng: &mut dyn RngCore) -> Result<usize, PolicyError> {
        if self.pending.is_some() {
            return Err(PolicyError::ActTwice);
        }
        if self.played >= self.horizon {
            return Err(PolicyError::HorizonExhausted(self.horizon));
        }
        if self.position == 0 {
            let eta = eta_schedule(self.block_index)?;
            let dist = tsallis_distribution(&self.estimates, eta, self.warm)?;
            self.block_arm = dist.sample_with(rng.random::<f64>());
            self.warm = Some(dist.multiplier());
            self.block_dist = Some(dist);
            self.block_len = self.block_size.min(self.horizon - self.played);
            self.block_loss = 0.0;
        }
        self.pending = Some(self.block_arm);
        Ok(self.block_arm)
    }

    fn observe(&mut self, arm: usize, loss: f64) -> Result<(), PolicyError> {
        check_pending(self.pending, arm)?;
        if !(0.0..=1.0).contains(&loss) {
            return Err(FtrlError::BadLoss(loss).into());
        }
        if matches!(self.last_arm, Some(prev) if prev != arm) {
            self.switches += 1;
        }
        self.last_arm = Some(arm);
        self.block_loss += loss;
        self.position += 1;
        self.played += 1;
        self.pending = None;

        if self.position == self.block_len {
            let average = self.block_loss / self.block_len as f64;
            let dist = self
                .block_dist
                .as_ref()
                .ok_or(PolicyError::ObserveWithoutAct)?;
            self.estimates
                .add_importance_weighted(average, dist, self.block_arm)?;
            self.block_index += 1;
            self.completed_blocks += 1;
            self.position = 0;
        }
        Ok(())
    }
}

/// Tsallis-INF until its switch count reaches `K^{1/3}(T/lambda)^{2/3}`, then a
/// fresh mini-batched Tsallis-INF with `B = ceil(lambda^{2/3} K^{-1/3} T^{1/3})`
/// (full horizon `T`) for the remaining rounds.
#[derive(Debug, Clone)]
pub struct SwitchTsallisSwitch {
    arms: usize,
    horizon: u64,
    lambda: f64,
    threshold: f64,
    block_override: Option<u64>,
    round: u64,
    phase1: TsallisInf,
    phase2: Option<MiniBatchedTsallisInf>,
    break_round: Option<u64>,
}

impl SwitchTsallisSwitch {
    pub fn new(arms: usize, horizon: u64, lambda: f64) -> Self {
        Self {
            arms,
            horizon,
            lambda,
            threshold: switch_threshold(arms, horizon, lambda),
            block_override: None,
            round: 1,
            phase1: TsallisInf::new(arms),
            phase2: None,
            break_round: None,
        }
    }

    /// Uses a fixed phase-two block size instead of the derived one.
    pub fn with_block_size(mut self, block_size: u64) -> Result<Self, PolicyError> {
        if block_size == 0 {
            return Err(PolicyError::ZeroBlockSize);
        }
        self.block_override = Some(block_size);
        Ok(self)
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn phase1_switches(&self) -> u64 {
        self.phase1.switches()
    }

    pub fn phase1(&self) -> &TsallisInf {
        &self.phase1
    }

    pub fn phase2(&self) -> Option<&MiniBatchedTsallisInf> {
        self.phase2.as_ref()
    }

    fn phase2_block_size(&self) -> Result<u64, PolicyError> {
        match self.block_override {
            Some(b) => Ok(b),
            None => block_size(self.arms, self.horizon, self.lambda),
        }
    }
}

impl Policy for SwitchTsallisSwitch {
    fn arms(&self) -> usize {
        self.arms
    }

    fn act(&mut self, rng: &mut dyn RngCore) -> Result<usize, PolicyError> {
        match self.phase2.as_mut() {
            Some(batched) => batched.act(rng),
            None => self.phase1.act(rng),
        }
    }

    fn observe(&mut self, arm: usize, loss: f64) -> Result<(), PolicyError> {
        if let Some(batched) = self.phase2.as_mut() {
            batched.observe(arm, loss)?;
            self.round += 1;
            return Ok(());
        }
        self.phase1.observe(arm, loss)?;
        let t = self.round;
        self.round += 1;
        if self.phase1.switches() as f64 >= self.threshold && t < self.horizon {
            let b = self.phase2_block_size()?;
            self.phase2 = Some(MiniBatchedTsallisInf::new(self.arms, b, self.horizon - t)?);
            self.break_round = Some(t);
        }
        Ok(())
    }

    fn phase(&self) -> Phase {
        if self.phase2.is_some() {
            Phase::Two
        } else {
            Phase::One
        }
    }

    fn break_round(&self) -> Option<u64> {
        self.break_round
    }
}

/// Always plays the same arm; a zero-switch baseline.
#[derive(Debug, Clone)]
pub struct ConstantArm {
    arms: usize,
    arm: usize,
    pending: Option<usize>,
}

impl ConstantArm {
    pub fn new(arms: usize, arm: usize) -> Result<Self, PolicyError> {
        if arm >= arms {
            return Err(PolicyError::ArmOutOfRange { arm, arms });
        }
        Ok(Self {
            arms,
            arm,
            pending: None,
        })
    }
}

impl Policy for ConstantArm {
    fn arms(&self) -> usize {
        self.arms
    }

    fn act(&mut self, _rng: &mut dyn RngCore) -> Result<usize, PolicyError> {
        if self.pending.is_some() {
            return Err(PolicyError::ActTwice);
        }
        self.pending = Some(self.arm);
        Ok(self.arm)
    }

    fn observe(&mut self, arm: usize, _loss: f64) -> Result<(), PolicyError> {
        check_pending(self.pending, arm)?;
        self.pending = None;
        Ok(())
    }
}

/// Uniformly random arm every round.
#[derive(Debug, Clone)]
pub struct UniformRandom {
    dist: SimplexDistribution,
    pending: Option<usize>,
}

impl UniformRandom {
    pub fn new(arms: usize) -> Self {
        Self {
            dist: SimplexDistribution::uniform(arms),
            pending: None,
        }
    }
}

impl Policy for UniformRandom {
    fn arms(&self) -> usize {
        self.dist.arms()
    }

    fn act(&mut self, rng: &mut dyn RngCore) -> Result<usize, PolicyError> {
        if self.pending.is_some() {
            return Err(PolicyError::ActTwice);
        }
        let arm = self.dist.sample_with(rng.random::<f64>());
        self.pending = Some(arm);
        Ok(arm)
    }

    fn observe(&mut self, arm: usize, _loss: f64) -> Result<(), PolicyError> {
        check_pending(self.pending, arm)?;
        self.pending = None;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn threshold_values() {
        let theta = switch_threshold(2, 1000, 1.0);
        assert!((theta - 2f64.cbrt() * 100.0).abs() < 1e-9);
        assert!((theta - 125.992_104_989).abs() < 1e-6);
        assert_eq!(switch_threshold(1, 1, 1.0), 1.0);
        assert_eq!(switch_threshold(2, 1000, 0.0), f64::INFINITY);
        let theta = switch_threshold(2, 10_000, 1.0);
        assert!((theta - 584.803_547_6).abs() < 1e-6);
        assert_eq!(theta.ceil(), 585.0);
    }

    #[test]
    fn block_size_values() {
        assert_eq!(block_size(2, 1000, 1.0).unwrap(), 8);
        assert_eq!(block_size(1, 1, 1.0).unwrap(), 1);
        assert_eq!(block_size(2, 1_000_000, 1.0).unwrap(), 80);
        assert!(matches!(
            block_size(2, 1000, 0.0),
            Err(PolicyError::NoBlockSize(_))
        ));
    }

    #[test]
    fn first_round_is_uniform() {
        let mut p = TsallisInf::new(4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        p.act(&mut rng).unwrap();
        for &pi in p.current_distribution().unwrap().probs() {
            assert!((pi - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn first_round_frequencies() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut counts = [0u32; 4];
        let n = 40_000;
        for _ in 0..n {
            let mut p = TsallisInf::new(4);
            counts[p.act(&mut rng).unwrap()] += 1;
        }
        // binomial sd at p = 1/4 is ~87; allow 5 sd
        for c in counts {
            assert!((c as f64 - n as f64 / 4.0).abs() < 5.0 * 87.0, "{counts:?}");
        }
    }

    #[test]
    fn alternation_enforced() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let policies: Vec<Box<dyn Policy>> = vec![
            Box::new(TsallisInf::new(2)),
            Box::new(MiniBatchedTsallisInf::new(2, 3, 10).unwrap()),
            Box::new(SwitchTsallisSwitch::new(2, 10, 1.0)),
            Box::new(ConstantArm::new(2, 1).unwrap()),
            Box::new(UniformRandom::new(2)),
        ];
        for mut p in policies {
            assert_eq!(p.observe(0, 0.5), Err(PolicyError::ObserveWithoutAct));
            let arm = p.act(&mut rng).unwrap();
            assert_eq!(p.act(&mut rng), Err(PolicyError::ActTwice));
            assert!(matches!(
                p.observe(1 - arm, 0.5),
                Err(PolicyError::ArmMismatch { .. })
            ));
            p.observe(arm, 0.5).unwrap();
            assert_eq!(p.observe(arm, 0.5), Err(PolicyError::ObserveWithoutAct));
        }
    }

    #[test]
    fn tsallis_counts_switches_and_rounds() {
        let mut p = TsallisInf::new(2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut arms = Vec::new();
        for _ in 0..200 {
            let a = p.act(&mut rng).unwrap();
            p.observe(a, if a == 0 { 0.2 } else { 0.8 }).unwrap();
            arms.push(a);
        }
        let expected = arms.windows(2).filter(|w| w[0] != w[1]).count() as u64;
        assert_eq!(p.switches(), expected);
        assert_eq!(p.round(), 201);
    }

    #[test]
    fn block_schedule_truncates_last_block() {
        assert_eq!(MiniBatchedTsallisInf::schedule(5, 12), vec![5, 5, 2]);
        assert_eq!(MiniBatchedTsallisInf::schedule(4, 12), vec![4, 4, 4]);
        assert_eq!(MiniBatchedTsallisInf::schedule(20, 12), vec![12]);
    }

    #[test]
    fn batched_arm_constant_within_blocks() {
        let mut p = MiniBatchedTsallisInf::new(2, 5, 12).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut arms = Vec::new();
        for t in 0..12 {
            let a = p.act(&mut rng).unwrap();
            p.observe(a, if t % 2 == 0 { 1.0 } else { 0.0 }).unwrap();
            arms.push(a);
        }
        assert!(arms[0..5].iter().all(|&a| a == arms[0]));
        assert!(arms[5..10].iter().all(|&a| a == arms[5]));
        assert!(arms[10..12].iter().all(|&a| a == arms[10]));
        assert!(p.switches() <= 2);
        assert_eq!(p.completed_blocks(), 3);
        assert!(matches!(
            p.act(&mut rng),
            Err(PolicyError::HorizonExhausted(12))
        ));
    }

    #[test]
    fn batched_block_estimate_is_average_over_probability() {
        let mut p = MiniBatchedTsallisInf::new(2, 4, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = p.act(&mut rng).unwrap();
        let prob = p.block_distribution().unwrap().prob(a);
        p.observe(a, 0.5).unwrap();
        for _ in 1..4 {
            assert_eq!(p.act(&mut rng).unwrap(), a);
            p.observe(a, 0.5).unwrap();
        }
        let sums = p.estimates().sums();
        assert!((sums[a] - 0.5 / prob).abs() < 1e-15);
        assert_eq!(sums[1 - a], 0.0);
    }

    #[test]
    fn truncated_block_averages_actual_length() {
        // B = 5, T = 7: the second block has length 2 and loss 1.0 each round
        let mut p = MiniBatchedTsallisInf::new(2, 5, 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..5 {
            let a = p.act(&mut rng).unwrap();
            p.observe(a, 0.0).unwrap();
        }
        let before = p.estimates().sums().to_vec();
        let a = p.act(&mut rng).unwrap();
        let prob = p.block_distribution().unwrap().prob(a);
        p.observe(a, 1.0).unwrap();
        assert_eq!(p.completed_blocks(), 1);
        p.act(&mut rng).unwrap();
        p.observe(a, 1.0).unwrap();
        assert_eq!(p.completed_blocks(), 2);
        assert!((p.estimates().sums()[a] - before[a] - 1.0 / prob).abs() < 1e-12);
    }

    #[test]
    fn zero_lambda_never_breaks() {
        let mut p = SwitchTsallisSwitch::new(2, 500, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for t in 0..500 {
            let a = p.act(&mut rng).unwrap();
            p.observe(a, ((t + a) % 2) as f64).unwrap();
        }
        assert_eq!(p.phase(), Phase::One);
        assert_eq!(p.break_round(), None);
    }

    #[test]
    fn phase_two_starts_fresh_and_uniform() {
        // tiny threshold forces an early break
        let mut p = SwitchTsallisSwitch::new(2, 400, 200.0);
        assert!(p.threshold() < 3.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut t = 0u64;
        while p.phase() == Phase::One {
            let a = p.act(&mut rng).unwrap();
            p.observe(a, ((t + a as u64) % 2) as f64).unwrap();
            t += 1;
        }
        assert_eq!(p.break_round(), Some(t));
        assert!(p.phase1_switches() as f64 >= p.threshold());
        assert_eq!(p.phase1_switches() as f64, p.threshold().ceil());
        p.act(&mut rng).unwrap();
        let phase2 = p.phase2().unwrap();
        assert_eq!(phase2.block_index(), 1);
        assert!(phase2.estimates().sums().iter().all(|&s| s == 0.0));
        for &pi in phase2.block_distribution().unwrap().probs() {
            assert!((pi - 0.5).abs() < 1e-15);
        }
        assert_eq!(phase2.block_size(), block_size(2, 400, 200.0).unwrap());
    }

    #[test]
    fn constant_arm_rejects_bad_index() {
        assert!(ConstantArm::new(2, 2).is_err());
    }
}
