use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use switchlab::environments::FixedSequenceEnv;
use switchlab::harness::{episode_seed, run_episode, run_episode_summary, EnvSpec, PolicySpec};
use switchlab::policies::{
    block_size, switch_threshold, MiniBatchedTsallisInf, Policy, SwitchTsallisSwitch,
};
use switchlab::{ExperimentParams, LossVector, Phase};

fn flipping(arms: usize, horizon: u64) -> EnvSpec {
    EnvSpec::fixed(
        FixedSequenceEnv::arm_flipping(arms, horizon)
            .unwrap()
            .losses()
            .to_vec(),
    )
}

#[test]
fn budget_example_values() {
    assert!((switch_threshold(2, 1000, 1.0) - 125.992_104_989).abs() < 1e-6);
    assert_eq!(switch_threshold(2, 10_000, 1.0).ceil(), 585.0);
    assert_eq!(block_size(2, 1000, 1.0).unwrap(), 8);
    assert_eq!(block_size(2, 1_000_000, 1.0).unwrap(), 80);
    assert_eq!(MiniBatchedTsallisInf::schedule(5, 12), vec![5, 5, 2]);
}

#[test]
fn arm_flipping_forces_phase_two_within_budget() {
    let horizon = 10_000;
    let env = flipping(2, horizon);
    for s in 0..5 {
        let params = ExperimentParams::new(horizon, 2, 1.0, episode_seed(3, 0, s)).unwrap();
        let trace = run_episode(
            &PolicySpec::SwitchTsallisSwitch { block_size: None },
            &env,
            &params,
        )
        .unwrap();
        let t_break = trace.break_round.expect("phase two entered");
        assert!(trace.phase1_switches <= 585, "{}", trace.phase1_switches);
        // the break fires as soon as the budget is reached
        assert_eq!(trace.phase1_switches, 585);
        for r in &trace.rounds {
            let want = if r.t <= t_break {
                Phase::One
            } else {
                Phase::Two
            };
            assert_eq!(r.phase, want);
        }
        let b = block_size(2, horizon, 1.0).unwrap();
        assert!(trace.phase2_switches() <= horizon.div_ceil(b));
    }
}

#[test]
fn easy_stochastic_instance_rarely_breaks() {
    // gap 0.5: the switch count stays far below the budget
    let horizon = 10_000;
    let env = EnvSpec::Bernoulli {
        delta: 0.5,
        base_mean: 0.25,
    };
    let seeds = 100;
    let broke = (0..seeds)
        .filter(|&s| {
            let params = ExperimentParams::new(horizon, 2, 1.0, episode_seed(5, 0, s)).unwrap();
            run_episode_summary(
                &PolicySpec::SwitchTsallisSwitch { block_size: None },
                &env,
                &params,
            )
            .unwrap()
            .break_round
            .is_some()
        })
        .count();
    assert!((broke as f64) < 0.05 * seeds as f64, "{broke} of {seeds}");
}

#[test]
fn tsallis_stochastic_regret_bound() {
    // means (0.125, 0.375)
    let horizon = 10_000;
    let env = EnvSpec::Bernoulli {
        delta: 0.25,
        base_mean: 0.125,
    };
    let seeds = 100;
    let mean = (0..seeds)
        .map(|s| {
            let params = ExperimentParams::new(horizon, 2, 1.0, episode_seed(6, 0, s)).unwrap();
            run_episode_summary(&PolicySpec::Tsallis, &env, &params)
                .unwrap()
                .pseudo_regret
                .unwrap()
        })
        .sum::<f64>()
        / seeds as f64;
    let bound = 60.0 * (horizon as f64).ln() / 0.25;
    assert!(mean <= bound, "{mean} > {bound}");
}

#[test]
fn block_size_one_matches_plain_tsallis() {
    let mut gen = ChaCha8Rng::seed_from_u64(12);
    for arms in [2, 3, 5] {
        let horizon = 500;
        let losses: Vec<LossVector> = (0..horizon)
            .map(|_| LossVector::new((0..arms).map(|_| gen.random::<f64>()).collect()).unwrap())
            .collect();
        let env = EnvSpec::fixed(losses);
        for s in 0..10 {
            let params =
                ExperimentParams::new(horizon, arms, 1.0, episode_seed(9, arms, s)).unwrap();
            let plain = run_episode(&PolicySpec::Tsallis, &env, &params).unwrap();
            let batched = run_episode(
                &PolicySpec::Batched {
                    block_size: Some(1),
                },
                &env,
                &params,
            )
            .unwrap();
            assert_eq!(plain.arm_sequence(), batched.arm_sequence());
        }
    }
}

#[test]
fn zero_switch_cost_stays_in_phase_one() {
    let mut p = SwitchTsallisSwitch::new(2, 2000, 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for t in 0..2000u64 {
        let arm = p.act(&mut rng).unwrap();
        p.observe(
            arm,
            if (t as usize + arm).is_multiple_of(2) {
                0.0
            } else {
                1.0
            },
        )
        .unwrap();
    }
    assert_eq!(p.phase(), Phase::One);
    assert!(p.break_round().is_none());
}
