//! Tsallis-entropy FTRL on the probability simplex.
//!
//! The minimizer of `<L, p> - (1/eta) * sum_i 4 sqrt(p_i)` over the simplex has
//! the closed form `p_i = 4 / (eta^2 (L_i + x)^2)` where the multiplier `x` is the
//! unique root of `g(x) = sum_i 4 / (eta (L_i + x))^2 - 1` on `L_i + x > 0`.
//!
//! `g` is convex and strictly decreasing there, so Newton started from the left
//! of the root (where `g >= 0`) increases monotonically towards it and never
//! leaves the feasible ray. The solver works in the shifted variable
//! `y = x + min_i L_i`, in which the root is bracketed by `[2/eta, 2 sqrt(K)/eta]`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

const NEWTON_TOL: f64 = 1e-12;
const MAX_NEWTON_ITERS: usize = 100;
const MAX_BISECTION_ITERS: usize = 200;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FtrlError {
    #[error("round index must be at least 1")]
    ZeroRound,
    #[error("learning rate must be finite and positive, got {0}")]
    BadLearningRate(f64),
    #[error("cumulative estimate {value} for arm {arm} is not finite and non-negative")]
    BadEstimate { arm: usize, value: f64 },
    #[error("need at least one arm")]
    NoArms,
    #[error("normalization root not found (residual {residual:e})")]
    NoConvergence { residual: f64 },
    #[error("arm {arm} out of range for K = {arms}")]
    ArmOutOfRange { arm: usize, arms: usize },
    #[error("probability of chosen arm {arm} is {prob}, expected strictly positive")]
    ZeroProbability { arm: usize, prob: f64 },
    #[error("observed loss {0} is outside [0, 1]")]
    BadLoss(f64),
    #[error("not a probability vector: {0}")]
    NotOnSimplex(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningRate(f64);

impl LearningRate {
    pub fn new(eta: f64) -> Result<Self, FtrlError> {
        if eta.is_finite() && eta > 0.0 {
            Ok(Self(eta))
        } else {
            Err(FtrlError::BadLearningRate(eta))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// `eta_t = 2 / sqrt(t)`.
pub fn eta_schedule(t: u64) -> Result<LearningRate, FtrlError> {
    if t == 0 {
        return Err(FtrlError::ZeroRound);
    }
    LearningRate::new(2.0 / (t as f64).sqrt())
}

/// Running sums of importance-weighted loss estimates, one per arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CumulativeEstimates {
    sums: Vec<f64>,
}

impl CumulativeEstimates {
    pub fn zeros(arms: usize) -> Self {
        Self {
            sums: vec![0.0; arms],
        }
    }

    pub fn from_sums(sums: Vec<f64>) -> Result<Self, FtrlError> {
        let est = Self { sums };
        est.validate()?;
        Ok(est)
    }

    pub fn sums(&self) -> &[f64] {
        &self.sums
    }

    pub fn arms(&self) -> usize {
        self.sums.len()
    }

    /// Adds `loss / probs[arm]` to the chosen arm's sum.
    pub fn add_importance_weighted(
        &mut self,
        loss: f64,
        probs: &SimplexDistribution,
        arm: usize,
    ) -> Result<(), FtrlError> {
        let est = importance_weight(loss, probs.probs(), arm)?;
        self.sums[arm] += est;
        Ok(())
    }

    fn validate(&self) -> Result<(), FtrlError> {
        if self.sums.is_empty() {
            return Err(FtrlError::NoArms);
        }
        for (arm, &value) in self.sums.iter().enumerate() {
            if !value.is_finite() || value < 0.0 {
                return Err(FtrlError::BadEstimate { arm, value });
            }
        }
        Ok(())
    }
}

/// A point in the interior of the simplex plus the multiplier that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimplexDistribution {
    probs: Vec<f64>,
    multiplier: f64,
}

impl SimplexDistribution {
    pub fn uniform(arms: usize) -> Self {
        Self {
            probs: vec![1.0 / arms as f64; arms],
            multiplier: f64::NAN,
        }
    }

    /// Wraps an arbitrary strictly positive probability vector (no multiplier).
    pub fn from_probs(probs: Vec<f64>) -> Result<Self, FtrlError> {
        if probs.is_empty() {
            return Err(FtrlError::NoArms);
        }
        if let Some(p) = probs.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
            return Err(FtrlError::NotOnSimplex(format!("entry {p}")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(FtrlError::NotOnSimplex(format!("sum {total}")));
        }
        Ok(Self {
            probs,
            multiplier: f64::NAN,
        })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, arm: usize) -> f64 {
        self.probs[arm]
    }

    /// The normalization root `x`; reusable as a warm start.
    pub fn multiplier(&self) -> f64 {
        self.multiplier
    }

    pub fn arms(&self) -> usize {
        self.probs.len()
    }

    /// Inverse-CDF lookup over ascending arm index for `u` in `[0, 1)`.
    pub fn sample_with(&self, u: f64) -> usize {
        let mut acc = 0.0;
        for (arm, &p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return arm;
            }
        }
        // u landed in the rounding slack above the final partial sum
        self.probs.len() - 1
    }
}

/// Value of the FTRL objective `<L, p> - (4/eta) sum sqrt(p_i)`.
pub fn objective(sums: &[f64], eta: LearningRate, probs: &[f64]) -> f64 {
    let linear: f64 = sums.iter().zip(probs).map(|(l, p)| l * p).sum();
    let reg: f64 = probs.iter().map(|p| p.sqrt()).sum();
    linear - 4.0 / eta.value() * reg
}

/// Solves for the Tsallis-INF sampling distribution.
///
/// `warm_start` is a multiplier from a previous solve; it is used only when it
/// lies inside the current bracket on the left of the root, otherwise the
/// solver starts from the left bracket end.
pub fn tsallis_distribution(
    estimates: &CumulativeEstimates,
    eta: LearningRate,
    warm_start: Option<f64>,
) -> Result<SimplexDistribution, FtrlError> {
    estimates.validate()?;
    let sums = estimates.sums();
    let k = sums.len();
    let eta = eta.value();
    let min = sums.iter().copied().fold(f64::INFINITY, f64::min);
    let shifted: Vec<f64> = sums.iter().map(|&l| l - min).collect();

    // g(y) = sum 4/(eta (d_i + y))^2 - 1 and its derivative
    let eval = |y: f64| -> (f64, f64) {
        let mut g = -1.0;
        let mut dg = 0.0;
        for &d in &shifted {
            let w = 2.0 / (eta * (d + y));
            let p = w * w;
            g += p;
            dg -= 2.0 * p / (d + y);
        }
        (g, dg)
    };

    let lo = 2.0 / eta;
    let hi = 2.0 * (k as f64).sqrt() / eta;

    let mut y = lo;
    if let Some(x) = warm_start.filter(|x| x.is_finite()) {
        let candidate = x + min;
        if candidate > lo && candidate < hi && eval(candidate).0 >= 0.0 {
            y = candidate;
        }
    }

    let mut root = None;
    for _ in 0..MAX_NEWTON_ITERS {
        let (g, dg) = eval(y);
        if g.abs() <= NEWTON_TOL {
            root = Some(y);
            break;
        }
        let next = y - g / dg;
        // From the left the iterates increase; anything else is rounding noise
        // at the root or a corrupted state.
        if !(next.is_finite() && next > y && next <= hi) {
            break;
        }
        y = next;
    }

    let mut y = match root {
        Some(y) => y,
        None => bisect(&eval, lo, hi)?,
    };
    // polish to machine precision; keep a step only if it shrinks the residual
    for _ in 0..3 {
        let (g, dg) = eval(y);
        if g == 0.0 {
            break;
        }
        let next = y - g / dg;
        if !(next.is_finite() && eval(next).0.abs() < g.abs()) {
            break;
        }
        y = next;
    }

    let probs: Vec<f64> = shifted
        .iter()
        .map(|&d| {
            let w = 2.0 / (eta * (d + y));
            w * w
        })
        .collect();
    Ok(SimplexDistribution {
        probs,
        multiplier: y - min,
    })
}

fn bisect(eval: &impl Fn(f64) -> (f64, f64), lo: f64, hi: f64) -> Result<f64, FtrlError> {
    let (mut a, mut b) = (lo, hi);
    let mut best = (f64::INFINITY, lo);
    for _ in 0..MAX_BISECTION_ITERS {
        let mid = 0.5 * (a + b);
        let (g, _) = eval(mid);
        if g.abs() < best.0 {
            best = (g.abs(), mid);
        }
        if g.abs() <= NEWTON_TOL || mid == a || mid == b {
            break;
        }
        if g > 0.0 {
            a = mid;
        } else {
            b = mid;
        }
    }
    // The bracket collapses to adjacent floats well before 200 halvings; at that
    // point the residual is pure rounding and 1e-9 still normalizes the output.
    if best.0 <= 1e-9 {
        Ok(best.1)
    } else {
        Err(FtrlError::NoConvergence { residual: best.0 })
    }
}

fn importance_weight(loss: f64, probs: &[f64], arm: usize) -> Result<f64, FtrlError> {
    if !(0.0..=1.0).contains(&loss) {
        return Err(FtrlError::BadLoss(loss));
    }
    let arms = probs.len();
    let p = *probs
        .get(arm)
        .ok_or(FtrlError::ArmOutOfRange { arm, arms })?;
    if p.is_nan() || p <= 0.0 {
        return Err(FtrlError::ZeroProbability { arm, prob: p });
    }
    Ok(loss / p)
}

/// Unbiased bandit-feedback loss estimate: `loss / p_chosen` at the chosen arm,
/// zero elsewhere.
pub fn importance_weighted_estimate(
    loss: f64,
    probs: &SimplexDistribution,
    chosen: usize,
) -> Result<Vec<f64>, FtrlError> {
    let est = importance_weight(loss, probs.probs(), chosen)?;
    let mut out = vec![0.0; probs.arms()];
    out[chosen] = est;
    Ok(out)
}
