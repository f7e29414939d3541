use cltrlab::rlloop::*;
use cltrlab::rng_from_seed;
use cltrlab::stats::{mean, sample_variance};
use proptest::prelude::*;

fn setup() -> (ChainMdp, GaussianChainPolicy) {
    let mdp = ChainMdp::generate(&ChainConfig::default()).unwrap();
    let mut policy = GaussianChainPolicy::zeros(&mdp);
    for (i, w) in policy.weights.iter_mut().enumerate() {
        *w = 0.05 * ((i as f64) * 0.9).cos();
    }
    (mdp, policy)
}

fn all_prompts(mdp: &ChainMdp, reps: usize) -> Vec<usize> {
    (0..reps).flat_map(|_| 0..mdp.prompts.len()).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn with_rewards(batch: &TrajectoryBatch, f: impl Fn(usize, usize) -> f64) -> TrajectoryBatch {
    let mut b = batch.clone();
    for (p, g) in b.groups.iter_mut().enumerate() {
        for (i, t) in g.iter_mut().enumerate() {
            t.reward = f(p, i);
        }
    }
    b
}

#[test]
fn vanishing_noise_follows_the_mean_path() {
    let mdp = ChainMdp::generate(&ChainConfig { policy_std: 1e-12, ..Default::default() }).unwrap();
    let (_, p) = setup();
    let policy = GaussianChainPolicy { std: 1e-12, ..p };
    let batch = rollout(&policy, &mdp, &[2, 5], 1, &mut rng_from_seed(3)).unwrap();
    for (g, &prompt) in batch.groups.iter().zip(&batch.prompts) {
        let t = &g[0];
        let end = mean_path(&policy, &mdp, prompt, &t.steps[0].state);
        assert!((mdp.reward(&end, prompt) - t.reward).abs() < 1e-9);
    }
}

#[test]
fn mean_baseline_zeroes_constant_reward() {
    let (mdp, policy) = setup();
    let batch = with_rewards(&rollout(&policy, &mdp, &[0, 1, 2], 2, &mut rng_from_seed(1)).unwrap(), |_, _| 0.4);
    let g = reinforce_gradient(&batch, &policy, RlBaseline::MeanReward).unwrap();
    assert!(norm(&g) < 1e-12);
    let l = loop_objective(&batch, &policy, 0.2).unwrap();
    assert!(l.value.abs() < 1e-12 && norm(&l.gradient) < 1e-12);
}

#[test]
fn reinforce_matches_common_random_number_differences() {
    let (mdp, policy) = setup();
    let prompts = all_prompts(&mdp, 625);
    let value = |p: &GaussianChainPolicy| mean(&rollout(p, &mdp, &prompts, 1, &mut rng_from_seed(77)).unwrap().rewards());
    let h = 1e-4;
    let fd: Vec<f64> = (0..policy.weights.len())
        .map(|i| {
            let mut plus = policy.clone();
            plus.weights[i] += h;
            let mut minus = policy.clone();
            minus.weights[i] -= h;
            (value(&plus) - value(&minus)) / (2.0 * h)
        })
        .collect();
    let batch = rollout(&policy, &mdp, &prompts, 1, &mut rng_from_seed(78)).unwrap();
    let g = reinforce_gradient(&batch, &policy, RlBaseline::MeanReward).unwrap();
    // directional derivative along the finite-difference gradient
    let n = norm(&fd);
    let along: f64 = g.iter().zip(&fd).map(|(a, b)| a * b / n).sum();
    assert!((along - n).abs() < 5e-2 * n, "directional {along} vs {n}");
}

#[test]
fn mean_baseline_keeps_expectation_and_cuts_variance() {
    let (mdp, policy) = setup();
    let mut rng = rng_from_seed(11);
    let (mut plain, mut based) = (Vec::new(), Vec::new());
    for _ in 0..200 {
        let batch = rollout(&policy, &mdp, &all_prompts(&mdp, 1), 1, &mut rng).unwrap();
        plain.push(reinforce_gradient(&batch, &policy, RlBaseline::None).unwrap());
        based.push(reinforce_gradient(&batch, &policy, RlBaseline::MeanReward).unwrap());
    }
    let dim = policy.weights.len();
    let (mut var_plain, mut var_based) = (0.0, 0.0);
    for j in 0..dim {
        let a: Vec<f64> = plain.iter().map(|g| g[j]).collect();
        let b: Vec<f64> = based.iter().map(|g| g[j]).collect();
        let d: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        let se = (sample_variance(&d) / d.len() as f64).sqrt();
        assert!(mean(&d).abs() < 3.0 * se + 1e-12, "coordinate {j}");
        var_plain += sample_variance(&a);
        var_based += sample_variance(&b);
    }
    assert!(var_based < var_plain);
}

#[test]
fn rloo_is_unbiased_against_reinforce() {
    let (mdp, policy) = setup();
    let mut rng = rng_from_seed(21);
    let dim = policy.weights.len();
    let mut diffs = vec![Vec::new(); dim];
    for _ in 0..300 {
        let batch = rollout(&policy, &mdp, &all_prompts(&mdp, 1), 4, &mut rng).unwrap();
        let a = rloo_gradient(&batch, &policy).unwrap();
        let b = reinforce_gradient(&batch, &policy, RlBaseline::None).unwrap();
        for j in 0..dim {
            diffs[j].push(a[j] - b[j]);
        }
    }
    for d in &diffs {
        let se = (sample_variance(d) / d.len() as f64).sqrt();
        assert!(mean(d).abs() < 3.5 * se);
    }
}

#[test]
fn ppo_at_old_policy_is_reinforce() {
    let (mdp, policy) = setup();
    let batch = rollout(&policy, &mdp, &[0, 4, 9], 1, &mut rng_from_seed(5)).unwrap();
    let ppo = ppo_objective(&batch, &policy, 1e-4).unwrap();
    let rf = reinforce_gradient(&batch, &policy, RlBaseline::None).unwrap();
    assert_eq!(ppo.gradient, rf);
    let expected = mdp.horizon as f64 * mean(&batch.rewards());
    assert!((ppo.value - expected).abs() < 1e-12);
}

#[test]
fn loop_two_sample_symmetry() {
    let (mdp, policy) = setup();
    let batch = with_rewards(&rollout(&policy, &mdp, &[3], 2, &mut rng_from_seed(2)).unwrap(), |_, i| if i == 0 { 1.0 } else { 0.0 });
    let l = loop_objective(&batch, &policy, 1e-4).unwrap();
    assert!(l.value.abs() < 1e-12);
    assert!(loop_objective(&rollout(&policy, &mdp, &[3], 1, &mut rng_from_seed(2)).unwrap(), &policy, 0.1).is_err());
    assert!(rloo_gradient(&rollout(&policy, &mdp, &[3], 1, &mut rng_from_seed(2)).unwrap(), &policy).is_err());
    assert!(ppo_objective(&batch, &policy, 0.0).is_err());
}

#[test]
fn off_policy_batch_is_rejected() {
    let (mdp, policy) = setup();
    let batch = rollout(&policy, &mdp, &[0], 1, &mut rng_from_seed(2)).unwrap();
    let mut other = policy.clone();
    other.weights[0] += 0.5;
    assert!(reinforce_gradient(&batch, &other, RlBaseline::None).is_err());
    assert!(ppo_objective(&batch, &other, 0.2).is_ok());
}

#[test]
fn score_function_has_zero_mean() {
    let (mdp, policy) = setup();
    let batch = rollout(&policy, &mdp, &all_prompts(&mdp, 100), 1, &mut rng_from_seed(8)).unwrap();
    // with all rewards equal to one the REINFORCE gradient is the mean score
    let ones = with_rewards(&batch, |_, _| 1.0);
    let g = reinforce_gradient(&ones, &policy, RlBaseline::None).unwrap();
    let dim = policy.weights.len();
    let n = batch.n_trajectories();
    let mut per_traj = vec![Vec::with_capacity(n); dim];
    for t in batch.groups.iter().flatten() {
        let single = TrajectoryBatch { prompts: vec![0], groups: vec![vec![Trajectory { reward: 1.0, ..t.clone() }]] };
        let s = reinforce_gradient(&single, &policy, RlBaseline::None).unwrap();
        for j in 0..dim {
            per_traj[j].push(s[j]);
        }
    }
    for j in 0..dim {
        let se = (sample_variance(&per_traj[j]) / n as f64).sqrt();
        assert!(g[j].abs() < 3.5 * se, "coordinate {j}: {} vs se {se}", g[j]);
    }
}

#[test]
fn variance_falls_with_k() {
    let (mdp, old) = setup();
    let mut new = old.clone();
    for (i, w) in new.weights.iter_mut().enumerate() {
        *w += 0.05 * ((i as f64) * 1.3).sin();
    }
    let mut rng = rng_from_seed(5);
    let ks = [1usize, 2, 4, 8];
    let vars: Vec<f64> = ks.iter().map(|&k| objective_variance(&mdp, &old, &new, Surrogate::Ppo, k, 0.2, 100, &mut rng).unwrap()).collect();
    let lx: Vec<f64> = ks.iter().map(|k| (*k as f64).ln()).collect();
    let ly: Vec<f64> = vars.iter().map(|v| v.ln()).collect();
    let slope = cltrlab::stats::ols_slope(&lx, &ly);
    assert!((-1.3..=-0.7).contains(&slope), "slope {slope}");
    let loop4 = objective_variance(&mdp, &old, &new, Surrogate::Loop, 4, 0.2, 100, &mut rng).unwrap();
    assert!(loop4 < vars[0]);
}

#[test]
fn loop_outlearns_reinforce() {
    let mdp = ChainMdp::generate(&ChainConfig::default()).unwrap();
    let cfg = RlConfig { epochs: 60, learning_rate: 0.005, clip_eps: 0.05, inner_epochs: 4, ..Default::default() };
    let lp = train_rl(&mdp, RlMethod::Loop { k: 4 }, &cfg).unwrap();
    let rf = train_rl(&mdp, RlMethod::Reinforce, &RlConfig { inner_epochs: 1, ..cfg.clone() }).unwrap();
    assert!(lp.final_reward(10) > rf.final_reward(10));
    assert_eq!(lp.trace.len(), 60);
    assert!(lp.trace.iter().all(|r| r.k == 4 && r.method == "loop"));
}

proptest! {
    #[test]
    fn wider_clip_never_shrinks_deviation(x in 0.0f64..3.0, e1 in 1e-4f64..1.0, de in 0.0f64..1.0) {
        let e2 = e1 + de;
        prop_assert!((clip_ratio(x, e2) - 1.0).abs() >= (clip_ratio(x, e1) - 1.0).abs() - 1e-15);
    }
}
