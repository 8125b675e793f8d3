//! Seeded episodes, multi-seed sweeps and log-log slope fitting.
//!
//! # Seeds and streams
//!
//! Episode `(grid_index, seed_index)` of a sweep gets the seed
//! `splitmix64(splitmix64(base_seed ^ splitmix64(grid_index)) ^ seed_index)`.
//! From an episode seed, a ChaCha8 generator is keyed once; stream 0 feeds the
//! environment and stream 1 feeds the policy. Oblivious loss sequences are
//! therefore identical across policies at the same seed.
//!
//! # Aggregation
//!
//! Per-seed results are collected in seed order and reduced sequentially, so
//! the aggregate does not depend on how many worker threads ran the episodes.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::environments::{
    dekel_conditioned_sequence, dekel_sequence, BernoulliEnv, DriftingConstrainedEnv, EnvError,
    Environment, FixedSequenceEnv, StochConstrainedSpec,
};
use crate::ledger::{
    EpisodeTrace, ExperimentParams, GapSpec, LedgerError, LossVector, ParamError, Phase,
    RegretLedger, RoundRecord,
};
use crate::policies::{
    block_size, ConstantArm, MiniBatchedTsallisInf, Policy, PolicyError, SwitchTsallisSwitch,
    TsallisInf, UniformRandom,
};

pub const DEFAULT_MAX_ATTEMPTS: u32 = 1000;
pub const DEFAULT_BASE_MEAN: f64 = 0.25;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error("cannot resolve specification: {0}")]
    Spec(String),
    #[error("episode T = {horizon}, seed #{seed_index} (seed {seed}) failed: {source}")]
    Episode {
        horizon: u64,
        seed_index: u32,
        seed: u64,
        #[source]
        source: Box<HarnessError>,
    },
    #[error("slope fit needs at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("slope fit needs positive coordinates, got ({x}, {y})")]
    NonPositive { x: f64, y: f64 },
    #[error("worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum PolicySpec {
    Tsallis,
    Batched { block_size: Option<u64> },
    SwitchTsallisSwitch { block_size: Option<u64> },
    Constant { arm: usize },
    Uniform,
}

impl PolicySpec {
    pub fn build(&self, params: &ExperimentParams) -> Result<Box<dyn Policy>, HarnessError> {
        let k = params.arms;
        let t = params.horizon;
        Ok(match *self {
            PolicySpec::Tsallis => Box::new(TsallisInf::new(k)),
            PolicySpec::Batched { block_size: b } => {
                let b = match b {
                    Some(b) => b,
                    None => block_size(k, t, params.lambda)?,
                };
                Box::new(MiniBatchedTsallisInf::new(k, b, t)?)
            }
            PolicySpec::SwitchTsallisSwitch { block_size: b } => {
                let p = SwitchTsallisSwitch::new(k, t, params.lambda);
                Box::new(match b {
                    Some(b) => p.with_block_size(b)?,
                    None => p,
                })
            }
            PolicySpec::Constant { arm } => Box::new(ConstantArm::new(k, arm)?),
            PolicySpec::Uniform => Box::new(UniformRandom::new(k)),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EnvSpec {
    /// Arm 0 is best with mean `base_mean`; every other arm has gap `delta`.
    Bernoulli { delta: f64, base_mean: f64 },
    /// Same gaps as `Bernoulli` on the default sinusoidal mean path.
    Drifting { delta: f64 },
    /// `delta` defaults to `T^{-1/3}`.
    Dekel { delta: Option<f64> },
    DekelConditioned {
        delta: Option<f64>,
        max_attempts: u32,
    },
    /// Replays the first `T` rows.
    Fixed { losses: Arc<Vec<LossVector>> },
}

impl EnvSpec {
    pub fn fixed(losses: Vec<LossVector>) -> Self {
        EnvSpec::Fixed {
            losses: Arc::new(losses),
        }
    }

    pub fn dekel_delta(delta: Option<f64>, horizon: u64) -> f64 {
        delta.unwrap_or_else(|| (horizon as f64).powf(-1.0 / 3.0))
    }

    pub fn build(
        &self,
        params: &ExperimentParams,
        rng: &mut ChaCha8Rng,
    ) -> Result<Box<dyn Environment>, HarnessError> {
        let k = params.arms;
        let t = params.horizon;
        Ok(match self {
            EnvSpec::Bernoulli { delta, base_mean } => Box::new(BernoulliEnv::new(
                GapSpec::uniform(k, 0, *delta)?,
                *base_mean,
            )?),
            EnvSpec::Drifting { delta } => {
                let spec = StochConstrainedSpec::sinusoidal(GapSpec::uniform(k, 0, *delta)?, t)?;
                Box::new(DriftingConstrainedEnv::new(spec)?)
            }
            EnvSpec::Dekel { delta } => {
                Box::new(dekel_sequence(t, k, Self::dekel_delta(*delta, t), rng)?.into_env())
            }
            EnvSpec::DekelConditioned {
                delta,
                max_attempts,
            } => Box::new(
                dekel_conditioned_sequence(t, k, Self::dekel_delta(*delta, t), rng, *max_attempts)?
                    .into_env(),
            ),
            EnvSpec::Fixed { losses } => {
                if (losses.len() as u64) < t {
                    return Err(HarnessError::Spec(format!(
                        "fixed sequence has {} rounds, horizon is {t}",
                        losses.len()
                    )));
                }
                Box::new(FixedSequenceEnv::new(losses[..t as usize].to_vec())?)
            }
        })
    }
}

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn episode_seed(base_seed: u64, grid_index: usize, seed_index: u32) -> u64 {
    splitmix64(splitmix64(base_seed ^ splitmix64(grid_index as u64)) ^ seed_index as u64)
}

/// `(environment stream, policy stream)` for one episode seed.
pub fn split_streams(seed: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    let mut env = ChaCha8Rng::seed_from_u64(seed);
    let mut policy = env.clone();
    env.set_stream(0);
    policy.set_stream(1);
    (env, policy)
}

/// Final numbers of one episode, without per-round rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub pseudo_regret: Option<f64>,
    pub realized_regret: f64,
    pub switches: u64,
    pub phase1_switches: u64,
    pub break_round: Option<u64>,
    /// Pseudo-regret based when gaps exist, realized-regret based otherwise.
    pub switching_cost_regret: f64,
    pub realized_switching_cost_regret: f64,
}

impl EpisodeSummary {
    pub fn from_trace(trace: &EpisodeTrace) -> Self {
        let lambda = trace.params.lambda;
        let ledger = &trace.ledger;
        let realized_switching_cost_regret = ledger.realized_switching_cost_regret(lambda);
        Self {
            pseudo_regret: ledger.pseudo_regret(),
            realized_regret: ledger.realized_regret(),
            switches: ledger.switch_count(),
            phase1_switches: trace.phase1_switches,
            break_round: trace.break_round,
            switching_cost_regret: ledger
                .switching_cost_regret(lambda)
                .unwrap_or(realized_switching_cost_regret),
            realized_switching_cost_regret,
        }
    }
}

fn play(
    policy: &PolicySpec,
    env: &EnvSpec,
    params: &ExperimentParams,
    record: bool,
) -> Result<EpisodeTrace, HarnessError> {
    let (mut env_rng, mut policy_rng) = split_streams(params.seed);
    let mut environment = env.build(params, &mut env_rng)?;
    if environment.arms() != params.arms {
        return Err(HarnessError::Spec(format!(
            "environment has {} arms, experiment expects {}",
            environment.arms(),
            params.arms
        )));
    }
    let mut learner = policy.build(params)?;
    let gaps = environment.gaps().cloned();
    let mut ledger = RegretLedger::new(params.arms);
    let capacity = if record { params.horizon as usize } else { 0 };
    let mut rounds = Vec::with_capacity(capacity);
    let mut losses = Vec::with_capacity(capacity);
    let mut phase1_switches = 0;

    for t in 1..=params.horizon {
        let row = environment.next_loss(t, &mut env_rng)?;
        let phase = learner.phase();
        let arm = learner.act(&mut policy_rng)?;
        let loss = row.get(arm).ok_or(LedgerError::ArmOutOfRange {
            arm,
            arms: row.arms(),
        })?;
        learner.observe(arm, loss)?;
        ledger.record_step(arm, &row, gaps.as_ref())?;
        if phase == Phase::One {
            phase1_switches = ledger.switch_count();
        }
        if record {
            let switching_cost_regret = ledger
                .switching_cost_regret(params.lambda)
                .unwrap_or_else(|_| ledger.realized_switching_cost_regret(params.lambda));
            rounds.push(RoundRecord {
                t,
                arm,
                loss,
                phase,
                switches: ledger.switch_count(),
                pseudo_regret: ledger.pseudo_regret(),
                switching_cost_regret,
            });
            losses.push(row);
        }
    }

    Ok(EpisodeTrace {
        params: *params,
        rounds,
        losses,
        ledger,
        break_round: learner.break_round(),
        phase1_switches,
    })
}

/// Plays `params.horizon` rounds and records every one of them.
pub fn run_episode(
    policy: &PolicySpec,
    env: &EnvSpec,
    params: &ExperimentParams,
) -> Result<EpisodeTrace, HarnessError> {
    play(policy, env, params, true)
}

/// Same episode as [`run_episode`] without keeping per-round rows.
pub fn run_episode_summary(
    policy: &PolicySpec,
    env: &EnvSpec,
    params: &ExperimentParams,
) -> Result<EpisodeSummary, HarnessError> {
    play(policy, env, params, false).map(|trace| EpisodeSummary::from_trace(&trace))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub policy: PolicySpec,
    pub env: EnvSpec,
    pub horizons: Vec<u64>,
    pub arms: usize,
    pub lambda: f64,
    pub seeds: u32,
    pub base_seed: u64,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.seeds == 0 {
            return Err(HarnessError::Spec("at least one seed is required".into()));
        }
        if self.horizons.is_empty() {
            return Err(HarnessError::Spec("empty horizon grid".into()));
        }
        for &t in &self.horizons {
            ExperimentParams::new(t, self.arms, self.lambda, 0)?;
        }
        Ok(())
    }

    pub fn params(
        &self,
        grid_index: usize,
        seed_index: u32,
    ) -> Result<ExperimentParams, HarnessError> {
        let seed = episode_seed(self.base_seed, grid_index, seed_index);
        Ok(ExperimentParams::new(
            self.horizons[grid_index],
            self.arms,
            self.lambda,
            seed,
        )?)
    }
}

/// Welford running mean and variance.
#[derive(Debug, Clone, Copy, Default)]
pub struct Welford {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance; zero with fewer than two samples.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn stat(&self) -> Stat {
        let se = if self.n < 2 {
            0.0
        } else {
            (self.variance() / self.n as f64).sqrt()
        };
        Stat {
            mean: self.mean,
            se,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub horizon: u64,
    pub seeds: u32,
    /// Absent when the environment reports no gaps.
    pub pseudo_regret: Option<Stat>,
    pub realized_regret: Stat,
    pub switches: Stat,
    pub phase1_switches: Stat,
    /// Mean is `regret mean + lambda * switches mean` exactly, over the
    /// pseudo-regret when available and the realized regret otherwise.
    pub switching_cost_regret: Stat,
    pub realized_switching_cost_regret: Stat,
    /// Over the seeds that entered phase two; absent when none did.
    pub break_round: Option<Stat>,
    pub phase2_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateResult {
    pub lambda: f64,
    pub seeds: u32,
    pub points: Vec<GridPoint>,
}

pub fn aggregate(horizon: u64, lambda: f64, episodes: &[EpisodeSummary]) -> GridPoint {
    let mut pseudo = Welford::default();
    let mut realized = Welford::default();
    let mut switches = Welford::default();
    let mut phase1 = Welford::default();
    let mut scr = Welford::default();
    let mut rscr = Welford::default();
    let mut breaks = Welford::default();
    let mut all_gapped = true;
    for e in episodes {
        match e.pseudo_regret {
            Some(p) => pseudo.push(p),
            None => all_gapped = false,
        }
        realized.push(e.realized_regret);
        switches.push(e.switches as f64);
        phase1.push(e.phase1_switches as f64);
        scr.push(e.switching_cost_regret);
        rscr.push(e.realized_switching_cost_regret);
        if let Some(b) = e.break_round {
            breaks.push(b as f64);
        }
    }
    let pseudo_regret = (all_gapped && !episodes.is_empty()).then(|| pseudo.stat());
    let switches = switches.stat();
    let realized_regret = realized.stat();
    let basis = pseudo_regret.unwrap_or(realized_regret);
    let switching_cost_regret = Stat {
        mean: basis.mean + lambda * switches.mean,
        se: scr.stat().se,
    };
    let realized_switching_cost_regret = Stat {
        mean: realized_regret.mean + lambda * switches.mean,
        se: rscr.stat().se,
    };
    GridPoint {
        horizon,
        seeds: episodes.len() as u32,
        pseudo_regret,
        realized_regret,
        switches,
        phase1_switches: phase1.stat(),
        switching_cost_regret,
        realized_switching_cost_regret,
        break_round: (breaks.count() > 0).then(|| breaks.stat()),
        phase2_fraction: if episodes.is_empty() {
            0.0
        } else {
            breaks.count() as f64 / episodes.len() as f64
        },
    }
}

/// Per-seed summaries of a sweep, `[grid_index][seed_index]`.
pub fn run_sweep_episodes(
    config: &SweepConfig,
    workers: usize,
) -> Result<Vec<Vec<EpisodeSummary>>, HarnessError> {
    config.validate()?;
    let jobs: Vec<(usize, u32)> = (0..config.horizons.len())
        .flat_map(|g| (0..config.seeds).map(move |s| (g, s)))
        .collect();
    let run = |&(g, s): &(usize, u32)| -> Result<EpisodeSummary, HarnessError> {
        let params = config.params(g, s)?;
        run_episode_summary(&config.policy, &config.env, &params).map_err(|e| {
            HarnessError::Episode {
                horizon: params.horizon,
                seed_index: s,
                seed: params.seed,
                source: Box::new(e),
            }
        })
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| HarnessError::Pool(e.to_string()))?;
    let results: Vec<Result<EpisodeSummary, HarnessError>> =
        pool.install(|| jobs.par_iter().map(run).collect());

    let mut grid = vec![Vec::with_capacity(config.seeds as usize); config.horizons.len()];
    for ((g, _), r) in jobs.iter().zip(results) {
        grid[*g].push(r?);
    }
    Ok(grid)
}

/// Runs every `(T, seed)` episode on `workers` threads (0 = one per core)
/// and aggregates per grid point.
pub fn run_sweep(config: &SweepConfig, workers: usize) -> Result<AggregateResult, HarnessError> {
    let grid = run_sweep_episodes(config, workers)?;
    let points = config
        .horizons
        .iter()
        .zip(&grid)
        .map(|(&t, episodes)| aggregate(t, config.lambda, episodes))
        .collect();
    Ok(AggregateResult {
        lambda: config.lambda,
        seeds: config.seeds,
        points,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    /// Largest absolute residual in log space.
    pub max_residual: f64,
}

/// Least-squares line through `(ln x, ln y)`.
pub fn fit_loglog_slope(points: &[(f64, f64)]) -> Result<SlopeFit, HarnessError> {
    if points.len() < 3 {
        return Err(HarnessError::TooFewPoints(points.len()));
    }
    if let Some(&(x, y)) = points.iter().find(|(x, y)| !(*x > 0.0 && *y > 0.0)) {
        return Err(HarnessError::NonPositive { x, y });
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|(x, y)| (x.ln(), y.ln())).collect();
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(HarnessError::Spec(
            "slope fit needs at least two distinct x values".into(),
        ));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let max_residual = logs
        .iter()
        .map(|(lx, ly)| (ly - (intercept + slope * lx)).abs())
        .fold(0.0, f64::max);
    Ok(SlopeFit {
        slope,
        intercept,
        max_residual,
    })
}
