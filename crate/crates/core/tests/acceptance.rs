//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any criterion fails.

use std::sync::OnceLock;
use std::time::Instant;

use d2d_token::learning::{train, LearningConfig};
use d2d_token::mos::LogBase;
use d2d_token::presets;
use d2d_token::sim::{build_greedy_policy, run_network, run_single, NetworkConfig, PolicySpec, SimConfig};
use d2d_token::solver::{
    brute_force_optimal, check_concavity, check_one_shot_deviation, check_threshold_ordering, evaluate_policy_exact,
    extract_thresholds, sweep, trend, value_iteration, value_iteration_observed, SweepParam, TrendDirection,
};
use d2d_token::{EnvFactors, MdpModel, SolverConfig, State, TrafficModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

type Verdict = Result<String, String>;
type Criterion = (&'static str, fn() -> Verdict);

fn ensure(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_model(rng: &mut ChaCha8Rng, n: usize, k: usize, beta: (f64, f64)) -> MdpModel {
    let w: Vec<f64> = (0..=n).map(|_| rng.gen_range(0.05..1.0)).collect();
    let total: f64 = w.iter().sum();
    let probs = w.iter().map(|x| x / total).collect();
    let mut benefits: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..5.0)).collect();
    benefits.sort_by(f64::total_cmp);
    MdpModel::new(
        TrafficModel::new(probs, benefits),
        EnvFactors::new(rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95)),
        rng.gen_range(0.01..2.0),
        rng.gen_range(beta.0..beta.1),
        k,
    )
}

/// Optimal values computed directly from the dense kernel: every state has
/// both actions, rows are built case by case and iterated to a fixed point.
fn dense_optimal_values(m: &MdpModel) -> Vec<f64> {
    let w = m.token_cap + 1;
    let idx = |s: usize, k: usize| s * w + k;
    let p = &m.traffic.stationary_prob;
    let (pr, qa, c, beta) = (m.env.p_recv, m.env.q_accept, m.cost, m.discount);
    let big_k = m.token_cap;
    let n_states = p.len() * w;
    // (reward, [(next token count, weight)]) for each state and action.
    let mut rows = vec![Vec::new(); n_states];
    for s in 0..p.len() {
        for k in 0..=big_k {
            for a in [0.0, 1.0] {
                let row: (f64, Vec<(usize, f64)>) = if s != 0 {
                    if k > 0 {
                        (
                            qa * a * m.traffic.benefit[s - 1],
                            vec![(k, (1.0 - a) + a * (1.0 - qa)), (k - 1, qa * a)],
                        )
                    } else {
                        (0.0, vec![(k, 1.0)])
                    }
                } else if k < big_k {
                    (
                        -c * pr * (1.0 - a),
                        vec![(k, a + (1.0 - a) * (1.0 - pr)), (k + 1, pr * (1.0 - a))],
                    )
                } else {
                    (-c * pr * (1.0 - a), vec![(k, 1.0)])
                };
                rows[idx(s, k)].push(row);
            }
        }
    }
    let mut v = vec![0.0; n_states];
    loop {
        let d: Vec<f64> = (0..w)
            .map(|k| (0..p.len()).map(|s| p[s] * v[idx(s, k)]).sum())
            .collect();
        let next: Vec<f64> = rows
            .iter()
            .map(|acts| {
                acts.iter()
                    .map(|(r, moves)| r + beta * moves.iter().map(|(k, wt)| wt * d[*k]).sum::<f64>())
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        let diff = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        if diff < 1e-13 {
            return v;
        }
    }
}

fn oracle_equivalence() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    let mut worst_dense = 0.0f64;
    let mut deviations = 0;
    for _ in 0..25 {
        let n = rng.gen_range(1..=3);
        let k = rng.gen_range(1..=16 / (n + 1));
        let m = random_model(&mut rng, n, k, (0.5, 0.99));
        let sol = value_iteration(&m, &SolverConfig::default()).map_err(|e| e.to_string())?;
        let (bv, _) = brute_force_optimal(&m).map_err(|e| e.to_string())?;
        let dense = dense_optimal_values(&m);
        for (i, s) in m.enumerate_states().into_iter().enumerate() {
            worst = worst.max((sol.values.get(s) - bv.get(s)).abs());
            worst_dense = worst_dense.max((dense[i] - bv.get(s)).abs());
        }
        deviations += check_one_shot_deviation(&m, &sol.values, &sol.policy).violations.len();
    }
    ensure(
        worst <= 1e-6 && worst_dense <= 1e-6 && deviations == 0,
        format!("max |VI - brute force| {worst:.2e}, max |dense - brute force| {worst_dense:.2e}, {deviations} deviation violations"),
    )
}

struct Structural {
    model: MdpModel,
    concavity_failures: usize,
    worst_concavity: f64,
    solution: Result<d2d_token::solver::Solution, String>,
}

fn structural_runs() -> &'static [Structural] {
    static RUNS: OnceLock<Vec<Structural>> = OnceLock::new();
    RUNS.get_or_init(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(202);
        let models: Vec<MdpModel> = (0..100)
            .map(|_| {
                let n = rng.gen_range(1..=5);
                let k = rng.gen_range(1..=20);
                random_model(&mut rng, n, k, (0.5, 0.999))
            })
            .collect();
        models
            .into_par_iter()
            .map(|model| {
                let mut failures = 0;
                let mut worst = 0.0f64;
                let solution = value_iteration_observed(&model, &SolverConfig::default(), |_, v| {
                    let r = check_concavity(v);
                    worst = worst.max(r.max_violation);
                    if !r.holds() {
                        failures += 1;
                    }
                })
                .map_err(|e| e.to_string());
                Structural {
                    model,
                    concavity_failures: failures,
                    worst_concavity: worst,
                    solution,
                }
            })
            .collect()
    })
}

fn concavity_suite() -> Verdict {
    let runs = structural_runs();
    let unsolved = runs.iter().filter(|r| r.solution.is_err()).count();
    let failing = runs.iter().filter(|r| r.concavity_failures > 0).count();
    let iterations: usize = runs
        .iter()
        .filter_map(|r| r.solution.as_ref().ok())
        .map(|s| s.iterations)
        .sum();
    let worst = runs.iter().map(|r| r.worst_concavity).fold(0.0, f64::max);
    ensure(
        unsolved == 0 && failing == 0,
        format!(
            "{} instances, {iterations} iterates checked, {failing} with violations, largest increase {worst:.2e}, {unsolved} unsolved",
            runs.len()
        ),
    )
}

fn threshold_suite() -> Verdict {
    let runs = structural_runs();
    let mut failures = Vec::new();
    for (i, r) in runs.iter().enumerate() {
        match &r.solution {
            Ok(sol) => {
                if let Err(e) = extract_thresholds(&r.model, &sol.policy) {
                    failures.push(format!("#{i}: {e}"));
                }
            }
            Err(e) => failures.push(format!("#{i}: {e}")),
        }
    }
    ensure(
        failures.is_empty(),
        format!(
            "{} of {} policies have threshold form {}",
            runs.len() - failures.len(),
            runs.len(),
            failures.join("; ")
        ),
    )
}

fn ordering_suite() -> Verdict {
    let runs = structural_runs();
    let mut bad = 0;
    for r in runs {
        let ok = r
            .solution
            .as_ref()
            .ok()
            .and_then(|sol| extract_thresholds(&r.model, &sol.policy).ok())
            .is_some_and(|t| check_threshold_ordering(&t).is_empty());
        if !ok {
            bad += 1;
        }
    }
    let m = presets::illustrative();
    let sol = value_iteration(&m, &SolverConfig::default()).map_err(|e| e.to_string())?;
    let t = extract_thresholds(&m, &sol.policy).map_err(|e| e.to_string())?;
    ensure(
        bad == 0 && t.get(4) == 1,
        format!(
            "{bad} of {} instances out of order; illustrative thresholds {:?}",
            runs.len(),
            t.thresholds
        ),
    )
}

fn sweep_trends() -> Verdict {
    let m = presets::illustrative();
    let cfg = SolverConfig::default();
    let grid = [0.1, 0.3, 0.5, 0.7, 0.9];
    let cases = [
        (
            SweepParam::Discount,
            vec![0.9, 0.93, 0.95, 0.97, 0.99],
            TrendDirection::NonDecreasing,
        ),
        (SweepParam::RecvProb, grid.to_vec(), TrendDirection::NonIncreasing),
        (SweepParam::AcceptProb, grid.to_vec(), TrendDirection::NonDecreasing),
    ];
    let mut ok = true;
    let mut detail = Vec::new();
    for (param, grid, dir) in cases {
        let points = sweep(&m, param, &grid, &cfg);
        if points.iter().any(|p| p.result.is_err()) {
            ok = false;
        }
        let trends: Vec<_> = (1..m.num_types()).map(|s| trend(&points, s, dir)).collect();
        let monotone = trends.iter().all(|t| t.monotone);
        let strict: usize = trends.iter().map(|t| t.strict_steps).sum();
        ok &= monotone && strict >= 1;
        let s1: Vec<String> = points
            .iter()
            .map(|p| p.result.as_ref().map_or("err".into(), |t| t.get(1).to_string()))
            .collect();
        detail.push(format!(
            "{param}: monotone {monotone}, {strict} strict steps, s1 [{}]",
            s1.join(" ")
        ));
    }
    ensure(ok, detail.join("; "))
}

fn greedy_spend_shares() -> Verdict {
    let m = presets::realistic(LogBase::Natural);
    let cfg = SolverConfig::default();
    let greedy = build_greedy_policy(&m, &cfg).map_err(|e| e.to_string())?;
    let optimal = value_iteration(&m, &cfg).map_err(|e| e.to_string())?.policy;
    let sim = SimConfig::new(1_000_000, 2026);
    let g = run_single(&m, &greedy, &sim).map_err(|e| e.to_string())?.spend_shares();
    let o = run_single(&m, &optimal, &sim)
        .map_err(|e| e.to_string())?
        .spend_shares();
    let busy = 1.0 - m.traffic.prob(0);
    let mut worst = 0.0f64;
    for (s, share) in g.iter().enumerate().skip(1) {
        let target = m.traffic.prob(s) / busy;
        worst = worst.max((share - target).abs() / target);
    }
    // Type 2 is video, the higher-benefit type.
    ensure(
        worst < 0.02 && o[2] > g[2],
        format!(
            "greedy shares elastic {:.4} video {:.4}, max relative error {:.4}; optimal video share {:.4}",
            g[1], g[2], worst, o[2]
        ),
    )
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn utility_comparison() -> Verdict {
    let base = presets::realistic(LogBase::Natural);
    let cfg = SolverConfig::default();
    let mut ok = true;
    let mut gaps = Vec::new();
    let mut detail = Vec::new();
    for beta in [0.3, 0.5, 0.7, 0.9, 0.99] {
        let m = SweepParam::Discount.apply(&base, beta);
        let optimal = value_iteration(&m, &cfg).map_err(|e| e.to_string())?.policy;
        let greedy = build_greedy_policy(&m, &cfg).map_err(|e| e.to_string())?;
        let runs: Vec<(f64, f64)> = (0..20u64)
            .into_par_iter()
            .map(|seed| {
                let sim = SimConfig::new(1_000_000, 7000 + seed);
                let o = run_single(&m, &optimal, &sim).unwrap().average_reward();
                let g = run_single(&m, &greedy, &sim).unwrap().average_reward();
                (o, g)
            })
            .collect();
        let (om, ose) = mean_se(&runs.iter().map(|r| r.0).collect::<Vec<_>>());
        let (gm, gse) = mean_se(&runs.iter().map(|r| r.1).collect::<Vec<_>>());
        let pooled = (ose * ose + gse * gse).sqrt();
        ok &= om >= gm - pooled;
        gaps.push(om - gm);
        detail.push(format!("beta {beta}: {om:.4} vs {gm:.4}"));
    }
    ok &= gaps[0] < gaps[4];
    detail.push(format!("gap at 0.3 {:.2e}, at 0.99 {:.2e}", gaps[0], gaps[4]));
    ensure(ok, detail.join("; "))
}

fn simulator_matches_solver() -> Verdict {
    let m = presets::illustrative();
    let optimal = value_iteration(&m, &SolverConfig::default())
        .map_err(|e| e.to_string())?
        .policy;
    let exact = evaluate_policy_exact(&m, &optimal).map_err(|e| e.to_string())?;
    let start = State::new(2, 10);
    let samples: Vec<f64> = (0..100u64)
        .into_par_iter()
        .map(|seed| {
            let mut sim = SimConfig::new(4000, 9000 + seed);
            sim.initial_tokens = Some(start.tokens);
            sim.initial_traffic = Some(start.traffic);
            run_single(&m, &optimal, &sim).unwrap().discounted_reward
        })
        .collect();
    let (mean, se) = mean_se(&samples);
    let target = exact.get(start);
    let z = (mean - target) / se;
    ensure(
        z.abs() <= 3.0,
        format!("simulated {mean:.4} +- {se:.4}, exact {target:.4}, z = {z:.2}"),
    )
}

fn qlearning_recovers_policy() -> Verdict {
    let m = MdpModel::new(
        TrafficModel::new(vec![0.4, 0.3, 0.3], vec![0.5, 6.0]),
        EnvFactors::new(0.9, 0.9),
        0.5,
        0.9,
        2,
    );
    let optimal = value_iteration(&m, &SolverConfig::default())
        .map_err(|e| e.to_string())?
        .policy;
    let agreement: Vec<f64> = (0..10u64)
        .into_par_iter()
        .map(|seed| {
            let cfg = LearningConfig {
                rng_seed: seed,
                ..LearningConfig::default()
            };
            train(&m, &cfg).unwrap().policy.agreement(&optimal)
        })
        .collect();
    let good = agreement.iter().filter(|&&a| a >= 0.95).count();
    ensure(
        good >= 8,
        format!("{good} of 10 seeds reach 95% agreement, agreement {agreement:?}"),
    )
}

/// `|x_i - x_rest| / sqrt(se_i^2 + se_rest^2)` for binomial proportions
/// given as (successes, trials).
fn z_against_rest(counts: &[(u64, u64)]) -> f64 {
    let (tot_x, tot_n) = counts.iter().fold((0, 0), |a, c| (a.0 + c.0, a.1 + c.1));
    counts
        .iter()
        .map(|&(x, n)| {
            let (rx, rn) = (tot_x - x, tot_n - n);
            let (p, rp) = (x as f64 / n as f64, rx as f64 / rn as f64);
            let var = p * (1.0 - p) / n as f64 + rp * (1.0 - rp) / rn as f64;
            (p - rp).abs() / var.sqrt()
        })
        .fold(0.0, f64::max)
}

fn network_consistency() -> Verdict {
    let m = presets::illustrative();
    let cfg = NetworkConfig::symmetric(20, PolicySpec::Optimal, 20_000, 31);
    let out = run_network(&[m], &cfg).map_err(|e| e.to_string())?;
    let p_counts: Vec<(u64, u64)> = out.env.iter().map(|e| (e.requested_slots, e.accept_slots)).collect();
    let q_counts: Vec<(u64, u64)> = out.env.iter().map(|e| (e.served, e.requests)).collect();
    let (zp, zq) = (z_against_rest(&p_counts), z_against_rest(&q_counts));
    let p_hat: Vec<f64> = out.env.iter().filter_map(|e| e.p_hat()).collect();
    let q_hat: Vec<f64> = out.env.iter().filter_map(|e| e.q_hat()).collect();
    let range = |v: &[f64]| {
        (
            v.iter().cloned().fold(f64::INFINITY, f64::min),
            v.iter().cloned().fold(0.0, f64::max),
        )
    };
    ensure(
        out.tokens_conserved() && zp <= 3.0 && zq <= 3.0,
        format!(
            "tokens {}..{} of {}, p_hat range {:.4?} max z {zp:.2}, q_hat range {:.4?} max z {zq:.2}",
            out.min_total_tokens,
            out.max_total_tokens,
            out.initial_total_tokens,
            range(&p_hat),
            range(&q_hat)
        ),
    )
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("oracle equivalence", oracle_equivalence),
        ("concavity at every iteration", concavity_suite),
        ("threshold policies", threshold_suite),
        ("threshold ordering", ordering_suite),
        ("parameter sweep trends", sweep_trends),
        ("greedy spend shares", greedy_spend_shares),
        ("optimal vs greedy utility", utility_comparison),
        ("simulator vs exact evaluation", simulator_matches_solver),
        ("q-learning policy recovery", qlearning_recovers_policy),
        ("network conservation and consistency", network_consistency),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let (tag, detail) = match check() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!(
            "{tag} {:>2} {name} ({:.1}s): {detail}",
            i + 1,
            t.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
