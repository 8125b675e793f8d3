//! Oblivious loss-sequence generators.
//!
//! Every generator is a pure function of its parameters and the RNG stream it
//! is handed; none of them sees the player's actions.

use std::f64::consts::PI;

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ledger::{GapSpec, LossVector, ParamError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error("round index must be at least 1")]
    ZeroRound,
    #[error("gap {0} outside the allowed range")]
    BadDelta(f64),
    #[error("horizon must be at least 2, got {0}")]
    HorizonTooShort(u64),
    #[error("need at least 2 arms, got {0}")]
    TooFewArms(usize),
    #[error("arm mean {mean} for arm {arm} falls outside [0, 1]")]
    MeanOutOfRange { arm: usize, mean: f64 },
    #[error("mean path leaves the feasible band at round {t}: {mean}")]
    PathOutOfBand { t: u64, mean: f64 },
    #[error("round {t} requested from a sequence of length {len}")]
    SequenceExhausted { t: u64, len: usize },
    #[error("loss rows disagree on the number of arms ({expected} vs {got})")]
    RaggedSequence { expected: usize, got: usize },
    #[error("empty loss sequence")]
    EmptySequence,
    #[error("no walk realization inside [1/6, 5/6] after {0} attempts")]
    MaxAttemptsExceeded(u32),
}

/// A source of per-round loss vectors.
pub trait Environment: Send {
    fn arms(&self) -> usize;

    /// Loss vector for one-based round `t`.
    fn next_loss(&mut self, t: u64, rng: &mut dyn RngCore) -> Result<LossVector, EnvError>;

    /// Per-arm gaps when the environment is stochastically constrained.
    fn gaps(&self) -> Option<&GapSpec>;
}

/// 2-adic valuation `m(t)`.
pub fn dyadic_level(t: u64) -> Result<u32, EnvError> {
    if t == 0 {
        return Err(EnvError::ZeroRound);
    }
    Ok(t.trailing_zeros())
}

/// `r(t) = t - 2^{m(t)}`: `t` with its lowest set bit cleared.
pub fn dyadic_parent(t: u64) -> Result<u64, EnvError> {
    if t == 0 {
        return Err(EnvError::ZeroRound);
    }
    Ok(t & (t - 1))
}

/// Noise scale `1 / (9 log2 T)`, real-valued logarithm.
pub fn walk_sigma(horizon: u64) -> f64 {
    1.0 / (9.0 * (horizon as f64).log2())
}

/// The multi-scale Gaussian walk behind the lower-bound adversary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkTrace {
    pub sigma: f64,
    /// `noise[t - 1] = n_t`.
    pub noise: Vec<f64>,
    /// `walk[t - 1] = X_t`.
    pub walk: Vec<f64>,
    pub best_arm: usize,
    pub delta: f64,
}

impl WalkTrace {
    /// `X_t` for `t` in `0..=T`, with `X_0 = 0`.
    pub fn value(&self, t: u64) -> f64 {
        if t == 0 {
            0.0
        } else {
            self.walk[(t - 1) as usize]
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.walk.iter().fold(0.0, |m, x| f64::max(m, x.abs()))
    }

    /// Every `X_t + 1/2` lies in `[1/6, 5/6]`.
    pub fn in_event_h(&self) -> bool {
        walk_in_event_h(&self.walk)
    }
}

/// Accumulates `X_t = X_{r(t)} + n_t` from a noise array.
pub fn walk_from_noise(noise: &[f64]) -> Vec<f64> {
    let mut walk = Vec::with_capacity(noise.len());
    for (i, &n) in noise.iter().enumerate() {
        let t = i as u64 + 1;
        let parent = t & (t - 1);
        let base = if parent == 0 {
            0.0
        } else {
            walk[(parent - 1) as usize]
        };
        walk.push(base + n);
    }
    walk
}

pub fn walk_in_event_h(walk: &[f64]) -> bool {
    walk.iter().all(|&x| {
        let shifted = x + 0.5;
        (1.0 / 6.0..=5.0 / 6.0).contains(&shifted)
    })
}

/// Draws `T` i.i.d. `N(0, sigma^2)` noises and builds the walk. Returns `(noise, walk)`.
pub fn draw_walk<R: Rng + ?Sized>(
    horizon: u64,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<f64>), EnvError> {
    if horizon < 2 {
        return Err(EnvError::HorizonTooShort(horizon));
    }
    let normal = Normal::new(0.0, walk_sigma(horizon)).expect("sigma is finite and positive");
    let noise: Vec<f64> = (0..horizon).map(|_| normal.sample(rng)).collect();
    let walk = walk_from_noise(&noise);
    Ok((noise, walk))
}

/// A realized adversarial loss sequence together with its walk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DekelRealization {
    pub losses: Vec<LossVector>,
    pub walk: WalkTrace,
    /// `None` when `delta = 0` (all arms identical, no unique best arm).
    pub gaps: Option<GapSpec>,
    /// Walk draws consumed; always 1 for the unconditioned generator.
    pub attempts: u32,
}

impl DekelRealization {
    pub fn into_env(self) -> FixedSequenceEnv {
        FixedSequenceEnv {
            losses: self.losses,
            gaps: self.gaps,
        }
    }
}

fn check_dekel_params(
    horizon: u64,
    arms: usize,
    delta: f64,
    max_delta: f64,
) -> Result<(), EnvError> {
    if horizon < 2 {
        return Err(EnvError::HorizonTooShort(horizon));
    }
    if arms < 2 {
        return Err(EnvError::TooFewArms(arms));
    }
    if !(0.0..=max_delta).contains(&delta) {
        return Err(EnvError::BadDelta(delta));
    }
    Ok(())
}

fn dekel_losses(walk: &[f64], arms: usize, best_arm: usize, delta: f64) -> Vec<LossVector> {
    walk.iter()
        .map(|&x| {
            let base = x + 0.5;
            let row = (0..arms)
                .map(|i| {
                    let raw = if i == best_arm { base - delta } else { base };
                    raw.clamp(0.0, 1.0)
                })
                .collect();
            LossVector::new(row).expect("clamped into [0, 1]")
        })
        .collect()
}

fn assemble<R: Rng + ?Sized>(
    noise: Vec<f64>,
    walk: Vec<f64>,
    horizon: u64,
    arms: usize,
    delta: f64,
    attempts: u32,
    rng: &mut R,
) -> Result<DekelRealization, EnvError> {
    let best_arm = rng.random_range(0..arms);
    let losses = dekel_losses(&walk, arms, best_arm, delta);
    let gaps = if delta > 0.0 {
        Some(GapSpec::uniform(arms, best_arm, delta)?)
    } else {
        None
    };
    let trace = WalkTrace {
        sigma: walk_sigma(horizon),
        noise,
        walk,
        best_arm,
        delta,
    };
    Ok(DekelRealization {
        losses,
        walk: trace,
        gaps,
        attempts,
    })
}

/// The lower-bound adversary: `l_t(i) = X_t + 1/2 - delta * 1{i = i*}`, clipped
/// to `[0, 1]`, with `i*` uniform. Noise is drawn before `i*`.
///
/// Under clipping the realized per-round gap can fall below `delta`; the
/// reported gaps are nominal.
pub fn dekel_sequence<R: Rng + ?Sized>(
    horizon: u64,
    arms: usize,
    delta: f64,
    rng: &mut R,
) -> Result<DekelRealization, EnvError> {
    check_dekel_params(horizon, arms, delta, 1.0)?;
    let (noise, walk) = draw_walk(horizon, rng)?;
    assemble(noise, walk, horizon, arms, delta, 1, rng)
}

/// The adversary conditioned on every `X_t + 1/2` lying in `[1/6, 5/6]`, by
/// redrawing the whole noise array until the walk qualifies. With
/// `delta <= 1/6` no clipping ever happens, so the gap is exactly `delta`
/// every round.
pub fn dekel_conditioned_sequence<R: Rng + ?Sized>(
    horizon: u64,
    arms: usize,
    delta: f64,
    rng: &mut R,
    max_attempts: u32,
) -> Result<DekelRealization, EnvError> {
    check_dekel_params(horizon, arms, delta, 1.0 / 6.0)?;
    for attempt in 1..=max_attempts {
        let (noise, walk) = draw_walk(horizon, rng)?;
        if walk_in_event_h(&walk) {
            return assemble(noise, walk, horizon, arms, delta, attempt, rng);
        }
    }
    Err(EnvError::MaxAttemptsExceeded(max_attempts))
}

fn bernoulli_row(means: impl Iterator<Item = f64>, rng: &mut dyn RngCore) -> LossVector {
    let row = means
        .map(|m| if rng.random::<f64>() < m { 1.0 } else { 0.0 })
        .collect();
    LossVector::new(row).expect("Bernoulli draws are 0 or 1")
}

/// i.i.d. Bernoulli losses: the best arm has mean `base_mean`, arm `i` has
/// mean `base_mean + gap_i`.
#[derive(Debug, Clone)]
pub struct BernoulliEnv {
    gaps: GapSpec,
    means: Vec<f64>,
}

impl BernoulliEnv {
    pub fn new(gaps: GapSpec, base_mean: f64) -> Result<Self, EnvError> {
        let means: Vec<f64> = gaps.gaps().iter().map(|g| base_mean + g).collect();
        if !(0.0..=1.0).contains(&base_mean) {
            return Err(EnvError::MeanOutOfRange {
                arm: gaps.best_arm(),
                mean: base_mean,
            });
        }
        for (arm, &mean) in means.iter().enumerate() {
            if !(0.0..=1.0).contains(&mean) {
                return Err(EnvError::MeanOutOfRange { arm, mean });
            }
        }
        Ok(Self { gaps, means })
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }
}

impl Environment for BernoulliEnv {
    fn arms(&self) -> usize {
        self.means.len()
    }

    fn next_loss(&mut self, t: u64, rng: &mut dyn RngCore) -> Result<LossVector, EnvError> {
        if t == 0 {
            return Err(EnvError::ZeroRound);
        }
        Ok(bernoulli_row(self.means.iter().copied(), rng))
    }

    fn gaps(&self) -> Option<&GapSpec> {
        Some(&self.gaps)
    }
}

/// Deterministic per-round mean of the best arm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MeanPath {
    Constant(f64),
    /// `center + amplitude * sin(2 pi t / period)`, clamped to `[floor, ceiling]`.
    Sinusoid {
        center: f64,
        amplitude: f64,
        period: u64,
        floor: f64,
        ceiling: f64,
    },
}

impl MeanPath {
    pub fn mean_at(&self, t: u64) -> f64 {
        match *self {
            MeanPath::Constant(m) => m,
            MeanPath::Sinusoid {
                center,
                amplitude,
                period,
                floor,
                ceiling,
            } => {
                let phase = 2.0 * PI * t as f64 / period as f64;
                (center + amplitude * phase.sin()).clamp(floor, ceiling)
            }
        }
    }
}

/// Gap structure plus a base-mean path; arm `i` has mean `mu_t + gap_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StochConstrainedSpec {
    pub gaps: GapSpec,
    pub path: MeanPath,
}

impl StochConstrainedSpec {
    /// The default drifting path: centered so the arm means straddle 1/2,
    /// amplitude 0.1, ten periods over the horizon, and every arm mean kept in
    /// `[0.05, 0.95]`.
    pub fn sinusoidal(gaps: GapSpec, horizon: u64) -> Result<Self, EnvError> {
        let dmax = gaps.delta_max();
        if dmax > 0.9 {
            return Err(EnvError::BadDelta(dmax));
        }
        let period = horizon.div_ceil(10).max(1);
        let path = MeanPath::Sinusoid {
            center: 0.5 - dmax / 2.0,
            amplitude: 0.1,
            period,
            floor: 0.05,
            ceiling: 0.95 - dmax,
        };
        Ok(Self { gaps, path })
    }

    pub fn constant(gaps: GapSpec, base_mean: f64) -> Self {
        Self {
            gaps,
            path: MeanPath::Constant(base_mean),
        }
    }

    fn check_mean(&self, t: u64, mean: f64) -> Result<(), EnvError> {
        if mean.is_finite() && mean >= 0.0 && mean + self.gaps.delta_max() <= 1.0 {
            Ok(())
        } else {
            Err(EnvError::PathOutOfBand { t, mean })
        }
    }
}

/// Bernoulli losses whose means drift over time while every gap stays fixed.
#[derive(Debug, Clone)]
pub struct DriftingConstrainedEnv {
    spec: StochConstrainedSpec,
}

impl DriftingConstrainedEnv {
    pub fn new(spec: StochConstrainedSpec) -> Result<Self, EnvError> {
        if let MeanPath::Constant(m) = spec.path {
            spec.check_mean(1, m)?;
        }
        Ok(Self { spec })
    }

    pub fn spec(&self) -> &StochConstrainedSpec {
        &self.spec
    }

    /// Arm means at round `t`.
    pub fn means_at(&self, t: u64) -> Vec<f64> {
        let mu = self.spec.path.mean_at(t);
        self.spec.gaps.gaps().iter().map(|g| mu + g).collect()
    }
}

impl Environment for DriftingConstrainedEnv {
    fn arms(&self) -> usize {
        self.spec.gaps.arms()
    }

    fn next_loss(&mut self, t: u64, rng: &mut dyn RngCore) -> Result<LossVector, EnvError> {
        if t == 0 {
            return Err(EnvError::ZeroRound);
        }
        let mu = self.spec.path.mean_at(t);
        self.spec.check_mean(t, mu)?;
        Ok(bernoulli_row(
            self.spec.gaps.gaps().iter().map(|g| mu + g),
            rng,
        ))
    }

    fn gaps(&self) -> Option<&GapSpec> {
        Some(&self.spec.gaps)
    }
}

/// Replays a precomputed loss sequence.
#[derive(Debug, Clone)]
pub struct FixedSequenceEnv {
    losses: Vec<LossVector>,
    gaps: Option<GapSpec>,
}

impl FixedSequenceEnv {
    pub fn new(losses: Vec<LossVector>) -> Result<Self, EnvError> {
        let first = losses.first().ok_or(EnvError::EmptySequence)?.arms();
        if first < 2 {
            return Err(EnvError::TooFewArms(first));
        }
        if let Some(bad) = losses.iter().find(|row| row.arms() != first) {
            return Err(EnvError::RaggedSequence {
                expected: first,
                got: bad.arms(),
            });
        }
        Ok(Self { losses, gaps: None })
    }

    /// Round `t` gives loss 0 to arm `(t - 1) mod K` and 1 to every other arm.
    /// For two arms this alternates `(0, 1)` and `(1, 0)`.
    pub fn arm_flipping(arms: usize, horizon: u64) -> Result<Self, EnvError> {
        let losses = (0..horizon)
            .map(|i| {
                let zero = (i % arms as u64) as usize;
                LossVector::new(
                    (0..arms)
                        .map(|a| if a == zero { 0.0 } else { 1.0 })
                        .collect(),
                )
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(losses)
    }

    pub fn losses(&self) -> &[LossVector] {
        &self.losses
    }

    pub fn len(&self) -> usize {
        self.losses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.losses.is_empty()
    }
}

impl Environment for FixedSequenceEnv {
    fn arms(&self) -> usize {
        self.losses[0].arms()
    }

    fn next_loss(&mut self, t: u64, _rng: &mut dyn RngCore) -> Result<LossVector, EnvError> {
        if t == 0 {
            return Err(EnvError::ZeroRound);
        }
        self.losses
            .get((t - 1) as usize)
            .cloned()
            .ok_or(EnvError::SequenceExhausted {
                t,
                len: self.losses.len(),
            })
    }

    fn gaps(&self) -> Option<&GapSpec> {
        self.gaps.as_ref()
    }
}
