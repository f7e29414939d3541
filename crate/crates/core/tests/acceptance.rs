//! Acceptance run: one PASS/FAIL line per criterion.
//! Set `CLTRLAB_ACCEPTANCE_ONLY=1,4` to run a subset.

mod common;

use std::sync::Arc;
use std::time::{Duration, Instant};

use cltrlab::bandit::*;
use cltrlab::dataset::{LoggingTrainer, SyntheticConfig};
use cltrlab::policy::{exact_exposure, ranking_exposure, ExaminationModel, GradientMode, StochasticRankingPolicy};
use cltrlab::rlloop::*;
use cltrlab::safeltr::*;
use cltrlab::stats::{mean, ols_slope, t_interval, wilson_interval};
use cltrlab::{derive_seed, rng_from_seed};
use common::*;
use rand::Rng;

const EXACT: GradientMode = GradientMode::Exact;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn main() {
    let only: Option<Vec<usize>> =
        std::env::var("CLTRLAB_ACCEPTANCE_ONLY").ok().map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let criteria: [(usize, &str, fn() -> Verdict); 11] = [
        (1, "estimator unbiasedness by enumeration", c1_unbiasedness),
        (2, "variance bounded by exposure divergence", c2_variance_bound),
        (3, "lower bound coverage", c3_coverage),
        (4, "safe ranking ordering", c4_safe_ordering),
        (5, "proximal clipping robustness", c5_robustness),
        (6, "unit clipping keeps the logging ranking", c6_unit_clipping),
        (7, "baseline optimality", c7_baseline_optimality),
        (8, "off-policy evaluation error ordering", c8_ope_ordering),
        (9, "off-policy learning ordering", c9_opl_ordering),
        (10, "leave-one-out variance and learning", c10_loop),
        (11, "gradient correctness", c11_gradients),
    ];
    let mut failed = 0;
    for (id, name, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let v = run();
        let secs = start.elapsed().as_secs_f64();
        println!("{} [{id:>2}] {name}: {} ({secs:.1}s)", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        failed += usize::from(!v.pass);
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

fn within(start: Instant, limit: Duration) -> bool {
    start.elapsed() < limit
}

fn c1_unbiasedness() -> Verdict {
    let start = Instant::now();
    let mut rng = rng_from_seed(101);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let data = random_dataset(1, 3, 3, &mut rng);
        let logging = random_policy(3, 2, 1.0, &mut rng);
        let target = random_policy(3, 2, 2.0, &mut rng);
        let rhat: Vec<Vec<f64>> = vec![(0..3).map(|_| rng.random::<f64>()).collect()];
        for (model, with_dr) in [(pbm_model(2), false), (trust_bias_model(2), true)] {
            let exam = &model.examination;
            let props = exact_propensities(&logging, &data, exam).unwrap();
            let tgt = target_exposures(&target, &data, exam, EXACT, &mut rng).unwrap();
            let truth = true_utility(&tgt, &relevance(&data, &model));
            let outs = outcomes(&data, &logging, &model);
            let (ips, _) = moments(&outs, |e| ips_exposure(&single(e), &props, &tgt, exam).unwrap().utility);
            worst = worst.max((ips - truth).abs());
            if with_dr {
                let (dr, _) = moments(&outs, |e| dr_estimate(&single(e), &props, &tgt, &rhat, exam).unwrap().utility);
                worst = worst.max((dr - truth).abs());
            }
        }
    }
    let fast = within(start, Duration::from_secs(10));
    verdict(worst < 1e-10 && fast, format!("max |E[U_hat] - U| = {worst:.1e} over 20 policies, runtime ok: {fast}"))
}

fn c2_variance_bound() -> Verdict {
    let mut rng = rng_from_seed(102);
    let mut violations = 0;
    let mut tightest = f64::INFINITY;
    for trial in 0..20 {
        let n_queries = 1 + trial % 3;
        let data = random_dataset(n_queries, 3, 3, &mut rng);
        let logging = random_policy(3, 2, 1.0, &mut rng);
        let target = random_policy(3, 2, 3.0, &mut rng);
        let model = pbm_model(2);
        let exam = &model.examination;
        let props = exact_propensities(&logging, &data, exam).unwrap();
        let tgt = target_exposures(&target, &data, exam, EXACT, &mut rng).unwrap();
        let (_, var) = moments(&outcomes(&data, &logging, &model), |e| ips_exposure(&single(e), &props, &tgt, exam).unwrap().utility);
        let d2 = (0..n_queries).map(|q| divergence(&tgt[q].rho, props.rho(q).unwrap()).unwrap()).sum::<f64>() / n_queries as f64;
        let z = exam.exposure_total(2);
        // an average of N draws has variance var / N; the bound scales the same way
        for n in [1.0, 100.0, 1e4] {
            let bound = z / n * d2 + 1.0 / n;
            violations += usize::from(var / n > bound);
            tightest = tightest.min(bound / (var / n));
        }
    }
    verdict(violations == 0, format!("{violations} violations in 20 pairs, smallest bound/variance ratio {tightest:.2}"))
}

fn c3_coverage() -> Verdict {
    let start = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for (i, delta) in [0.5, 0.95].into_iter().enumerate() {
        for (model, mode, tag) in [(pbm_model(3), SafetyMode::CrmExposure, "crm"), (trust_bias_model(3), SafetyMode::SafeDr, "safe_dr")] {
            let (hit, n) = coverage(&model, mode, delta, 2000, 300 + i as u64);
            let (_, hi) = wilson_interval(hit, n, 0.99);
            pass &= hi >= 1.0 - delta;
            parts.push(format!("{tag} delta={delta}: {hit}/{n}"));
        }
    }
    let fast = within(start, Duration::from_secs(300));
    verdict(pass && fast, format!("{}, runtime ok: {fast}", parts.join(", ")))
}

fn ranking_world(kind: ClickModelKind) -> WorldConfig {
    WorldConfig {
        dataset: SyntheticConfig { n_queries: 200, docs_per_query: 6, feature_dim: 50, signal: 0.5, ..Default::default() },
        click_model: kind,
        validation_ratio: 1.0 / 3.0,
        logging: LoggingTrainer { fraction: 0.3, ..Default::default() },
        ..Default::default()
    }
}

fn ranking_train() -> TrainConfig {
    TrainConfig { epochs: 100, learning_rate: 1.0, ..Default::default() }
}

/// `gains[m][s]`: test NDCG minus logging NDCG of method `m` on seed `s`.
fn ndcg_gains(worlds: &[World], methods: &[SafeLtrMethod], n: usize) -> Vec<Vec<f64>> {
    let cfg = ranking_train();
    methods
        .iter()
        .map(|m| {
            worlds
                .iter()
                .enumerate()
                .map(|(s, w)| {
                    let r = run_cell(w, m, n, &cfg, s as u64).unwrap();
                    r.test_ndcg - r.logging_ndcg
                })
                .collect()
        })
        .collect()
}

fn c4_safe_ordering() -> Verdict {
    let worlds: Vec<World> = (0..10).map(|s| World::build(&ranking_world(ClickModelKind::Pbm), s).unwrap()).collect();
    let ips = SafeLtrMethod::ExposureIps;
    let crm = SafeLtrMethod::ExposureCrm { delta: 0.001 };
    let dr = SafeLtrMethod::Dr;
    let prpo = SafeLtrMethod::Prpo { schedule: PrpoSchedule::LinearInN { scale: 300.0 } };
    let mut pass = true;
    let mut parts = Vec::new();
    for n in [100, 1_000, 10_000] {
        let methods: Vec<SafeLtrMethod> = if n == 100 { vec![crm, prpo, ips, dr] } else { vec![crm, prpo] };
        let g = ndcg_gains(&worlds, &methods, n);
        let worst = |v: &[f64]| v.iter().cloned().fold(f64::INFINITY, f64::min);
        let (crm_min, prpo_min) = (worst(&g[0]), worst(&g[1]));
        pass &= crm_min >= -0.01 && prpo_min >= -0.01;
        parts.push(format!("N={n} worst crm {crm_min:+.4} prpo {prpo_min:+.4}"));
        if n == 100 {
            let below = |v: &[f64]| v.iter().filter(|x| **x < 0.0).count();
            let (ips_below, dr_below) = (below(&g[2]), below(&g[3]));
            pass &= ips_below >= 7 && dr_below >= 7;
            parts.push(format!("below logging at N=100: ips {ips_below}/10 dr {dr_below}/10"));
        }
    }
    let all = [ips, crm, dr, SafeLtrMethod::SafeDr { delta: 0.95 }, prpo];
    let means: Vec<f64> = ndcg_gains(&worlds, &all, 1_000_000).iter().map(|v| mean(v)).collect();
    let spread = means.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - means.iter().cloned().fold(f64::INFINITY, f64::min);
    pass &= spread <= 0.02;
    parts.push(format!("N=1e6 spread of mean NDCG {spread:.4}"));
    verdict(pass, parts.join("; "))
}

fn c5_robustness() -> Verdict {
    let worlds: Vec<World> = (0..10).map(|s| World::build(&ranking_world(ClickModelKind::Adversarial), s).unwrap()).collect();
    let prpo = SafeLtrMethod::Prpo { schedule: PrpoSchedule::Constant { value: 1.0 } };
    let safe_dr = SafeLtrMethod::SafeDr { delta: 0.01 };
    let small = ndcg_gains(&worlds, &[prpo], 1_000);
    let large = ndcg_gains(&worlds, &[prpo, safe_dr], 1_000_000);
    let prpo_worst = small[0].iter().chain(&large[0]).cloned().fold(f64::INFINITY, f64::min);
    let drop = -mean(&large[1]);
    verdict(
        prpo_worst >= -0.01 && drop > 0.05,
        format!("worst prpo gain {prpo_worst:+.4} over N in {{1e3, 1e6}}, safe-dr mean loss at N=1e6 {drop:.4}"),
    )
}

fn c6_unit_clipping() -> Verdict {
    let mut rng = rng_from_seed(106);
    let exam = ExaminationModel::dcg(5);
    let cfg = PrpoConfig::new(1.0, 1.0).unwrap();
    let all = permutations(5);
    let (mut exceptions, mut ties) = (0, 0);
    for _ in 0..50 {
        let logged = &all[rng.random_range(0..all.len())];
        let omega0 = ranking_exposure(logged, 5, &exam).omega;
        let rewards: Vec<f64> = (0..5)
            .map(|_| {
                let r: f64 = rng.random_range(0.05..1.0);
                if rng.random::<bool>() {
                    r
                } else {
                    -r
                }
            })
            .collect();
        let at_logging = prpo_objective(&omega0, &omega0, &rewards, &cfg).unwrap();
        for y in all.iter().filter(|y| *y != logged) {
            let v = prpo_objective(&ranking_exposure(y, 5, &exam).omega, &omega0, &rewards, &cfg).unwrap();
            exceptions += usize::from(v > at_logging + 1e-12);
            ties += usize::from((v - at_logging).abs() <= 1e-12);
        }
    }
    verdict(exceptions == 0, format!("{exceptions} rankings above the logging ranking in 50 instances ({ties} ties)"))
}

/// Two contexts, three actions, probabilities in tenths: a log of 1000 rows
/// reproduces the outcome distribution exactly.
fn exact_population_log() -> (BanditLog, Vec<(f64, usize, usize, f64)>) {
    let p0 = [[0.5, 0.3, 0.2], [0.2, 0.2, 0.6]];
    let q = [[0.7, 0.2, 0.9], [0.4, 0.6, 0.1]];
    let mut rows = Vec::new();
    let mut outcomes = Vec::new();
    for c in 0..2 {
        for a in 0..3 {
            for (r, pr) in [(1.0, q[c][a]), (0.0, 1.0 - q[c][a])] {
                let p: f64 = 0.5 * p0[c][a] * pr;
                outcomes.push((p, c, a, r));
                let copies = (p * 1000.0).round() as usize;
                rows.extend(std::iter::repeat_n(BanditRow { context: c, action: a, propensity: p0[c][a], reward: r }, copies));
            }
        }
    }
    let contexts = Arc::new(vec![vec![1.0, 0.0], vec![0.3, -1.0]]);
    (BanditLog::new(contexts, rows).unwrap(), outcomes)
}

fn c7_baseline_optimality() -> Verdict {
    let (log, outs) = exact_population_log();
    let mut value_margin = f64::INFINITY;
    for seed in 0..5 {
        let policy = SoftmaxPolicy::from_weights(3, 2, (0..6).map(|i| ((seed * 7 + i) as f64 * 1.37).sin() * 2.0).collect()).unwrap();
        let t = policy.table(log.contexts());
        let exact_var = |beta: f64| {
            let (mut m1, mut m2) = (0.0, 0.0);
            for &(p, c, a, r) in &outs {
                let p0 = log.rows().iter().find(|x| x.context == c && x.action == a).unwrap().propensity;
                let v = t[c][a] / p0 * (r - beta) + beta;
                m1 += p * v;
                m2 += p * v * v;
            }
            m2 - m1 * m1
        };
        let beta = optimal_beta_value(&log, &t).unwrap().unwrap();
        let v = exact_var(beta);
        for k in (-40..=40).filter(|k| *k != 0) {
            value_margin = value_margin.min(exact_var(beta + 0.05 * k as f64) - v);
        }
    }

    let env = BanditEnvironment::generate(&BanditConfig { n_actions: 5, n_contexts: 50, seed: 7, ..Default::default() }).unwrap();
    let glog = env.simulate(20_000, &mut rng_from_seed(107));
    let batch: Vec<usize> = (0..glog.len()).collect();
    let mut grad_margin = f64::INFINITY;
    for seed in 0..3u64 {
        let policy = SoftmaxPolicy::from_weights(5, 5, (0..25).map(|i| ((i as u64 + 3 * seed) as f64 * 0.37).sin()).collect()).unwrap();
        let est = policy_gradient(&glog, &batch, &policy, BaselineKind::OptimalGradient).unwrap();
        for k in (-20..=20).filter(|k| *k != 0) {
            let other = gradient_variance_at(&glog, &batch, &policy, est.beta + 0.05 * k as f64).unwrap();
            grad_margin = grad_margin.min(other - est.variance);
        }
    }
    verdict(
        value_margin >= 0.0 && grad_margin >= 0.0,
        format!("smallest grid margin: value {value_margin:.2e}, gradient {grad_margin:.2e}"),
    )
}

fn c8_ope_ordering() -> Verdict {
    let start = Instant::now();
    let (mut cells, mut vs_ips, mut vs_snips) = (0, 0, 0);
    for n_actions in [10, 100] {
        let env = BanditEnvironment::generate(&BanditConfig { n_actions, ..Default::default() }).unwrap();
        let target =
            fit_target_policy(&env, 10_000, &OplConfig { schedule: BatchSchedule::FullBatch, epochs: 100, learning_rate: 0.05, ..Default::default() })
                .unwrap();
        let rows = ope_experiment(&env, &target, &OpeConfig::default()).unwrap();
        for b in rows.iter().filter(|r| r.estimator == "beta_ips") {
            let other = |name: &str| rows.iter().find(|r| r.estimator == name && r.n == b.n && r.inv_temp == b.inv_temp).unwrap().mse;
            cells += 1;
            vs_ips += usize::from(b.mse <= other("ips"));
            vs_snips += usize::from(b.mse <= other("snips"));
        }
    }
    let fast = within(start, Duration::from_secs(900));
    let pass = cells == 12 && vs_ips == cells && vs_snips as f64 >= 0.8 * cells as f64 && fast;
    verdict(pass, format!("beta-ips MSE <= ips in {vs_ips}/{cells} cells, <= snips in {vs_snips}/{cells}, runtime ok: {fast}"))
}

fn c9_opl_ordering() -> Verdict {
    let lambdas = [0.0, 0.25, 0.5, 0.75, 1.0];
    let mut methods = vec![OplMethod::Ips, OplMethod::BetaIpsGradient];
    methods.extend(lambdas.iter().map(|&lambda| OplMethod::BanditNet { lambda }));
    let mut value = vec![Vec::new(); methods.len()];
    let mut var = vec![Vec::new(); methods.len()];
    for s in 0..32 {
        let env = BanditEnvironment::generate(&BanditConfig { seed: s, ..Default::default() }).unwrap();
        let log = env.simulate(10_000, &mut rng_from_seed(derive_seed(s, 1)));
        let cfg = OplConfig { epochs: 30, learning_rate: 0.05, seed: s, ..Default::default() };
        for (k, m) in methods.iter().enumerate() {
            let o = train_opl(&env, &log, *m, &cfg).unwrap();
            value[k].push(o.final_value);
            var[k].push(o.mean_grad_variance());
        }
    }
    let best = (2..methods.len()).max_by(|&a, &b| mean(&value[a]).total_cmp(&mean(&value[b]))).unwrap();
    let diff = |a: &[f64], b: &[f64]| t_interval(&a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>(), 0.8);
    let (beta_bn, bn_ips) = (diff(&value[1], &value[best]), diff(&value[best], &value[0]));
    let (vbeta_bn, vbn_ips) = (diff(&var[1], &var[best]), diff(&var[best], &var[0]));
    let pass = beta_bn.high >= 0.0 && bn_ips.high >= 0.0 && vbeta_bn.high < 0.0 && vbn_ips.high < 0.0;
    verdict(
        pass,
        format!(
            "best lambda {}; value beta-bn [{:+.4}, {:+.4}], bn-ips [{:+.4}, {:+.4}]; variance beta-bn [{:+.3}, {:+.3}], bn-ips [{:+.3}, {:+.3}]",
            lambdas[best - 2],
            beta_bn.low,
            beta_bn.high,
            bn_ips.low,
            bn_ips.high,
            vbeta_bn.low,
            vbeta_bn.high,
            vbn_ips.low,
            vbn_ips.high
        ),
    )
}

fn chain_policies(mdp: &ChainMdp) -> (GaussianChainPolicy, GaussianChainPolicy) {
    let mut old = GaussianChainPolicy::zeros(mdp);
    for (i, w) in old.weights.iter_mut().enumerate() {
        *w = 0.05 * ((i as f64) * 0.9).cos();
    }
    let mut new = old.clone();
    for (i, w) in new.weights.iter_mut().enumerate() {
        *w += 0.05 * ((i as f64) * 1.3).sin();
    }
    (old, new)
}

fn c10_loop() -> Verdict {
    let mdp = ChainMdp::generate(&ChainConfig::default()).unwrap();
    let (old, new) = chain_policies(&mdp);
    let mut rng = rng_from_seed(110);
    let ks = [1usize, 2, 4, 8];
    let vars: Vec<f64> = ks.iter().map(|&k| objective_variance(&mdp, &old, &new, Surrogate::Ppo, k, 0.2, 100, &mut rng).unwrap()).collect();
    let slope = ols_slope(&ks.map(|k| (k as f64).ln()), &vars.iter().map(|v| v.ln()).collect::<Vec<_>>());
    let loop4 = objective_variance(&mdp, &old, &new, Surrogate::Loop, 4, 0.2, 100, &mut rng).unwrap();

    let cfg = RlConfig { epochs: 100, learning_rate: 0.005, clip_eps: 0.05, inner_epochs: 4, ..Default::default() };
    let final_reward = |m: RlMethod| {
        let inner_epochs = if m.on_policy() { 1 } else { cfg.inner_epochs };
        mean(&(0..3).map(|seed| train_rl(&mdp, m, &RlConfig { seed, inner_epochs, ..cfg.clone() }).unwrap().final_reward(10)).collect::<Vec<_>>())
    };
    let (lp, ppo, rf) = (final_reward(RlMethod::Loop { k: 4 }), final_reward(RlMethod::Ppo), final_reward(RlMethod::Reinforce));
    let pass = loop4 < vars[0] && (-1.3..=-0.7).contains(&slope) && lp >= ppo && ppo >= rf;
    verdict(
        pass,
        format!("variance loop K=4 {loop4:.3e} vs ppo K=1 {:.3e}, slope {slope:.3}; final reward loop {lp:.4} ppo {ppo:.4} reinforce {rf:.4}", vars[0]),
    )
}

fn c11_gradients() -> Verdict {
    let mut worst = Vec::new();

    // Plackett-Luce log-probability
    let mut rng = rng_from_seed(111);
    let data = random_dataset(1, 5, 4, &mut rng);
    let policy = random_policy(4, 3, 1.0, &mut rng);
    let q = &data.queries[0];
    let mut e: f64 = 0.0;
    for _ in 0..10 {
        let y = policy.sample_ranking(q, &mut rng).unwrap();
        let g = policy.grad_log_prob(q, &y).unwrap();
        let fd = finite_difference(&policy.weights, 1e-6, |w| {
            StochasticRankingPolicy { weights: w.to_vec(), ..policy.clone() }.log_prob(q, &y).unwrap()
        });
        e = e.max(relative_error(&g, &fd));
    }
    worst.push(("pl", e, 1e-6));

    // safety-bounded ranking objectives
    let objective_error = |m: &SafeLtrMethod, seed: u64| {
        let (data, summary, policy, rhat) = gradient_world(seed);
        let ctx = ObjectiveContext::new(&data, &summary, rhat, m, true, true).unwrap();
        let value = |w: &[f64]| {
            let p = StochasticRankingPolicy { weights: w.to_vec(), ..policy.clone() };
            ctx.evaluate(m, &p, EXACT, false, &mut rng_from_seed(0)).unwrap().objective
        };
        let g = ctx.evaluate(m, &policy, EXACT, true, &mut rng_from_seed(0)).unwrap().grad;
        relative_error(&g, &finite_difference(&policy.weights, 1e-6, value))
    };
    let mut e: f64 = 0.0;
    for m in [SafeLtrMethod::ExposureCrm { delta: 0.95 }, SafeLtrMethod::ExposureCrm { delta: 0.1 }, SafeLtrMethod::SafeDr { delta: 0.95 }] {
        for seed in 0..3 {
            e = e.max(objective_error(&m, seed));
        }
    }
    worst.push(("crm", e, 1e-5));

    // proximal objective, skipping ratios near a clip bound
    let prpo = SafeLtrMethod::Prpo { schedule: PrpoSchedule::Fixed { eps_minus: 0.8, eps_plus: 1.25 } };
    let mut e: f64 = 0.0;
    let mut checked = 0;
    for seed in 0..10 {
        let (data, summary, policy, _) = gradient_world(seed);
        let omega0 = cltrlab::clicksim::estimate_propensities(&summary, false).omega;
        let near_edge = data.queries.iter().enumerate().any(|(q, query)| {
            let w = exact_exposure(&policy, query, &summary.examination).unwrap().omega;
            omega0[q]
                .as_ref()
                .is_some_and(|w0| w.iter().zip(w0).any(|(a, b)| *b > 0.0 && ((a / b - 1.25).abs() < 1e-3 || (a / b - 0.8).abs() < 1e-3)))
        });
        if !near_edge {
            e = e.max(objective_error(&prpo, seed));
            checked += 1;
        }
    }
    worst.push(("prpo", if checked >= 5 { e } else { f64::INFINITY }, 1e-5));

    // bandit baselines and self-normalization
    let env = BanditEnvironment::generate(&BanditConfig { n_actions: 4, context_dim: 3, n_contexts: 25, seed: 5, ..Default::default() }).unwrap();
    let log = env.simulate(300, &mut rng_from_seed(1));
    let policy = SoftmaxPolicy::from_weights(4, 3, (0..12).map(|i| (i as f64 * 0.71).cos()).collect()).unwrap();
    let bandit_fd = |value: &dyn Fn(&ActionTable) -> f64| {
        finite_difference(&policy.weights, 1e-6, |w| value(&SoftmaxPolicy::from_weights(4, 3, w.to_vec()).unwrap().table(log.contexts())))
    };
    let batch: Vec<usize> = (0..log.len()).collect();
    let mut e: f64 = 0.0;
    for beta in [0.0, 0.4, 1.3] {
        let g = policy_gradient(&log, &batch, &policy, BaselineKind::Fixed { lambda: beta }).unwrap().gradient;
        e = e.max(relative_error(&g, &bandit_fd(&|t| beta_ips_value(&log, t, beta).unwrap())));
    }
    worst.push(("beta-ips", e, 1e-5));
    let g = snips_fullbatch_gradient(&log, &policy).unwrap().gradient;
    worst.push(("snips", relative_error(&g, &bandit_fd(&|t| snips_value(&log, t).unwrap())), 1e-5));

    // chain REINFORCE against common-random-number differences
    let mdp = ChainMdp::generate(&ChainConfig::default()).unwrap();
    let (policy, _) = chain_policies(&mdp);
    let prompts: Vec<usize> = (0..625).flat_map(|_| 0..mdp.prompts.len()).collect();
    let value = |p: &GaussianChainPolicy| mean(&rollout(p, &mdp, &prompts, 1, &mut rng_from_seed(77)).unwrap().rewards());
    let fd = finite_difference(&policy.weights, 1e-4, |w| value(&GaussianChainPolicy { weights: w.to_vec(), ..policy.clone() }));
    let batch = rollout(&policy, &mdp, &prompts, 1, &mut rng_from_seed(78)).unwrap();
    let g = reinforce_gradient(&batch, &policy, RlBaseline::MeanReward).unwrap();
    let n = fd.iter().map(|x| x * x).sum::<f64>().sqrt();
    let along: f64 = g.iter().zip(&fd).map(|(a, b)| a * b / n).sum();
    worst.push(("reinforce", (along - n).abs() / n, 5e-2));

    let pass = worst.iter().all(|(_, e, tol)| e < tol);
    verdict(pass, worst.iter().map(|(name, e, tol)| format!("{name} {e:.1e}<{tol:.0e}")).collect::<Vec<_>>().join(", "))
}
