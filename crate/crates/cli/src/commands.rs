use std::fs;
use std::path::PathBuf;

use d2d_token::config::{DerivedBenefit, ExperimentConfig, NetworkPolicyChoice};
use d2d_token::learning::train;
use d2d_token::output::{self, Header};
use d2d_token::sim::{
    build_greedy_policy, network_fixed_point, run_network, run_single, NetworkConfig, PolicySpec, SimConfig, SimTrace,
};
use d2d_token::solver::{
    check_concavity, check_monotone_values, check_one_shot_deviation, check_threshold_ordering, extract_thresholds,
    sweep as run_sweep, trend, value_iteration, value_iteration_observed, SweepParam, TrendDirection,
};
use d2d_token::{MdpModel, Policy};
use rayon::prelude::*;

use crate::{CliError, Common, CompareArgs, SimulateArgs, SweepArgs};

struct Context {
    cfg: ExperimentConfig,
    model: MdpModel,
    derived: Vec<DerivedBenefit>,
    out: PathBuf,
}

impl Context {
    /// Loads and validates the config with command-line overrides applied.
    /// Nothing is written until validation has passed.
    fn load(common: &Common, tweak: impl FnOnce(&mut ExperimentConfig)) -> Result<Self, CliError> {
        let mut cfg = ExperimentConfig::load(&common.config)?;
        if let Some(seed) = common.seed {
            cfg.simulation.seed = seed;
            cfg.learning.rng_seed = seed;
        }
        if let Some(slots) = common.slots {
            cfg.simulation.slots = slots;
        }
        if let Some(base) = common.log_base {
            match cfg.mos.as_mut() {
                Some(m) => m.params.log_base = base,
                None => eprintln!("d2d-token: --log-base ignored, config has explicit benefits"),
            }
        }
        tweak(&mut cfg);
        let (model, derived) = cfg.resolve_model()?;
        fs::create_dir_all(&common.out)?;
        Ok(Self {
            cfg,
            model,
            derived,
            out: common.out.clone(),
        })
    }

    fn header(&self, command: &str, seed: Option<u64>) -> Header {
        Header::new(command, seed, self.cfg.to_json())
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write_benefits(&self, header: &Header) -> Result<(), CliError> {
        if self.derived.is_empty() {
            return Ok(());
        }
        let rows = self.derived.iter().map(|d| {
            vec![
                d.traffic.to_string(),
                self.model.traffic.label(d.traffic).to_string(),
                format!("{:?}", d.kind).to_lowercase(),
                d.mos_d2d.to_string(),
                d.mos_cellular.to_string(),
                d.benefit.to_string(),
                d.log_base.to_string(),
            ]
        });
        output::write_table(
            &self.path("benefits.csv"),
            header,
            &[
                "type",
                "label",
                "kind",
                "mos_d2d",
                "mos_cellular",
                "benefit",
                "log_base",
            ],
            rows,
        )?;
        Ok(())
    }
}

pub fn solve(common: &Common) -> Result<(), CliError> {
    let ctx = Context::load(common, |_| {})?;
    let m = &ctx.model;
    let mut worst_concavity = 0.0f64;
    let mut concave_failures = 0usize;
    let sol = value_iteration_observed(m, &ctx.cfg.solver, |_, v| {
        let r = check_concavity(v);
        worst_concavity = worst_concavity.max(r.max_violation);
        if !r.holds() {
            concave_failures += 1;
        }
    })?;
    let header = ctx.header("solve", None).with("iterations", sol.iterations);
    ctx.write_benefits(&header)?;
    output::write_solution(&ctx.path("solution.csv"), &header, m, &sol.values, &sol.policy)?;

    let deviation = check_one_shot_deviation(m, &sol.values, &sol.policy);
    let non_monotone = check_monotone_values(&sol.values);
    let thresholds = extract_thresholds(m, &sol.policy);
    let mut checks = vec![
        (
            "one_shot_deviation",
            deviation.is_clean(),
            deviation.violations.len(),
            deviation
                .violations
                .iter()
                .map(|v| format!("({} {})", v.state.traffic, v.state.tokens))
                .collect::<Vec<_>>()
                .join(" "),
        ),
        (
            "concavity_every_iteration",
            concave_failures == 0,
            concave_failures,
            format!("max increase of differences {worst_concavity:e}"),
        ),
        (
            "values_nondecreasing_in_tokens",
            non_monotone.is_empty(),
            non_monotone.len(),
            String::new(),
        ),
    ];
    match &thresholds {
        Ok(t) => {
            output::write_thresholds(&ctx.path("thresholds.csv"), &header, m, t)?;
            let bad = check_threshold_ordering(t);
            checks.push(("threshold_policy", true, 0, String::new()));
            checks.push((
                "threshold_ordering",
                bad.is_empty(),
                bad.len(),
                bad.iter()
                    .map(|(a, b)| format!("({a} {b})"))
                    .collect::<Vec<_>>()
                    .join(" "),
            ));
        }
        Err(e) => {
            checks.push(("threshold_policy", false, 1, e.to_string()));
            checks.push(("threshold_ordering", false, 0, "no thresholds".into()));
        }
    }
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    let rows = checks
        .iter()
        .map(|(name, ok, n, detail)| vec![name.to_string(), ok.to_string(), n.to_string(), detail.clone()]);
    output::write_table(
        &ctx.path("checks.csv"),
        &header,
        &["check", "passed", "violations", "detail"],
        rows,
    )?;

    if let Ok(t) = &thresholds {
        let ks: Vec<String> = (0..m.num_types()).map(|s| t.get(s).to_string()).collect();
        println!("thresholds: {} ({} iterations)", ks.join(" "), sol.iterations);
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Structure(failed.join(", ")))
    }
}

fn expected_direction(param: SweepParam) -> Option<TrendDirection> {
    match param {
        SweepParam::Discount | SweepParam::AcceptProb => Some(TrendDirection::NonDecreasing),
        SweepParam::RecvProb => Some(TrendDirection::NonIncreasing),
        _ => None,
    }
}

pub fn sweep(args: &SweepArgs) -> Result<(), CliError> {
    let ctx = Context::load(&args.common, |cfg| {
        if let Some(p) = &args.param {
            cfg.sweep.param = Some(p.clone());
        }
        if let Some(g) = &args.grid {
            cfg.sweep.grid = g.clone();
        }
    })?;
    let name = ctx
        .cfg
        .sweep
        .param
        .clone()
        .ok_or_else(|| CliError::Config("no sweep parameter (use --param or [sweep] param)".into()))?;
    let param: SweepParam = name.parse().map_err(CliError::Config)?;
    let grid = &ctx.cfg.sweep.grid;
    if grid.is_empty() {
        return Err(CliError::Config("empty sweep grid".into()));
    }
    if let SweepParam::Benefit(i) = param {
        if i < 1 || i >= ctx.model.num_types() {
            return Err(CliError::Config(format!("no traffic type {i} to sweep")));
        }
    }
    for &v in grid {
        let report = param.apply(&ctx.model, v).validate();
        if !report.is_valid() {
            return Err(CliError::Config(format!("{param}={v}: {report}")));
        }
    }
    let points = run_sweep(&ctx.model, param, grid, &ctx.cfg.solver);
    let header = ctx.header("sweep", None);
    ctx.write_benefits(&header)?;
    output::write_sweep(&ctx.path("sweep.csv"), &header, &param.to_string(), &ctx.model, &points)?;

    let expected = expected_direction(param);
    let mut rows = Vec::new();
    for s in 0..ctx.model.num_types() {
        let up = trend(&points, s, TrendDirection::NonDecreasing);
        let down = trend(&points, s, TrendDirection::NonIncreasing);
        let verdict = match expected {
            Some(TrendDirection::NonDecreasing) => up.monotone.to_string(),
            Some(TrendDirection::NonIncreasing) => down.monotone.to_string(),
            None => String::new(),
        };
        rows.push(vec![
            s.to_string(),
            ctx.model.traffic.label(s).to_string(),
            up.monotone.to_string(),
            up.strict_steps.to_string(),
            down.monotone.to_string(),
            down.strict_steps.to_string(),
            expected.map(|d| format!("{d:?}")).unwrap_or_default(),
            verdict,
        ]);
    }
    output::write_table(
        &ctx.path("trends.csv"),
        &header,
        &[
            "type",
            "label",
            "nondecreasing",
            "strict_increases",
            "nonincreasing",
            "strict_decreases",
            "expected",
            "verdict",
        ],
        rows,
    )?;
    let failures = points.iter().filter(|p| p.result.is_err()).count();
    if failures > 0 {
        eprintln!("d2d-token: {failures} grid point(s) failed, see sweep.csv");
    }
    Ok(())
}

fn policies(model: &MdpModel, ctx: &Context) -> Result<(Policy, Policy), CliError> {
    let optimal = value_iteration(model, &ctx.cfg.solver)?.policy;
    let greedy = build_greedy_policy(model, &ctx.cfg.solver)?;
    Ok((optimal, greedy))
}

fn sim_config(ctx: &Context, seed: u64) -> SimConfig {
    let mut c = SimConfig::new(ctx.cfg.simulation.slots, seed);
    c.initial_tokens = ctx.cfg.simulation.initial_tokens;
    c
}

/// Runs both policies on the same seeds, in parallel over replications.
fn paired_runs(
    model: &MdpModel,
    optimal: &Policy,
    greedy: &Policy,
    ctx: &Context,
    seeds: &[u64],
) -> Result<Vec<(SimTrace, SimTrace)>, CliError> {
    seeds
        .par_iter()
        .map(|&seed| {
            let c = sim_config(ctx, seed);
            Ok((run_single(model, optimal, &c)?, run_single(model, greedy, &c)?))
        })
        .collect()
}

fn seeds(ctx: &Context) -> Vec<u64> {
    let base = ctx.cfg.simulation.seed;
    (0..ctx.cfg.simulation.replications.max(1))
        .map(|i| base.wrapping_add(i))
        .collect()
}

fn pooled(model: &MdpModel, traces: &[&SimTrace]) -> SimTrace {
    let mut total = traces[0].clone();
    total.records.clear();
    for t in &traces[1..] {
        total.slots += t.slots;
        total.total_reward += t.total_reward;
        total.discounted_reward += t.discounted_reward;
        total.earn_count += t.earn_count;
        for s in 0..model.num_types() {
            total.spend_by_type[s] += t.spend_by_type[s];
        }
        for (a, b) in total.event_counts.iter_mut().zip(t.event_counts) {
            *a += b;
        }
    }
    total
}

pub fn simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let ctx = Context::load(&args.common, |_| {})?;
    let m = &ctx.model;
    let (optimal, greedy) = policies(m, &ctx)?;
    let seeds = seeds(&ctx);
    let runs = paired_runs(m, &optimal, &greedy, &ctx, &seeds)?;
    let header = ctx.header("simulate", Some(ctx.cfg.simulation.seed));
    ctx.write_benefits(&header)?;

    let mut labelled = Vec::new();
    for (seed, (o, g)) in seeds.iter().zip(&runs) {
        labelled.push((format!("optimal/{seed}"), o));
        labelled.push((format!("greedy/{seed}"), g));
    }
    output::write_trace_summaries(&ctx.path("summary.csv"), &header, &labelled)?;
    let opt_all = pooled(m, &runs.iter().map(|r| &r.0).collect::<Vec<_>>());
    let greedy_all = pooled(m, &runs.iter().map(|r| &r.1).collect::<Vec<_>>());
    output::write_token_usage(
        &ctx.path("token_usage.csv"),
        &header,
        m,
        &[("optimal".to_string(), &opt_all), ("greedy".to_string(), &greedy_all)],
    )?;

    if args.trace {
        let mut c = sim_config(&ctx, seeds[0]);
        c.record_slots = true;
        for (name, policy) in [("optimal", &optimal), ("greedy", &greedy)] {
            let t = run_single(m, policy, &c)?;
            let h = ctx.header("simulate", Some(seeds[0])).with("policy", name);
            output::write_trace(&ctx.path(&format!("trace_{name}.csv")), &h, &t)?;
        }
    }
    println!(
        "average reward per slot: optimal {:.6}, greedy {:.6}",
        opt_all.average_reward(),
        greedy_all.average_reward()
    );
    Ok(())
}

fn opt_f(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn network(common: &Common) -> Result<(), CliError> {
    let ctx = Context::load(common, |_| {})?;
    let sec = ctx.cfg.network;
    let spec = match sec.policy {
        NetworkPolicyChoice::Optimal => PolicySpec::Optimal,
        NetworkPolicyChoice::Greedy => PolicySpec::Greedy,
    };
    let mut ncfg = NetworkConfig::symmetric(sec.num_ues, spec, ctx.cfg.simulation.slots, ctx.cfg.simulation.seed);
    ncfg.initial_tokens = ctx.cfg.simulation.initial_tokens;
    ncfg.solver = ctx.cfg.solver;
    let models = [ctx.model.clone()];
    let outcome = run_network(&models, &ncfg)?;
    let header = ctx.header("network", Some(ncfg.rng_seed));
    ctx.write_benefits(&header)?;

    let rows = outcome.env.iter().zip(&outcome.traces).enumerate().map(|(i, (e, t))| {
        vec![
            i.to_string(),
            e.accept_slots.to_string(),
            e.requested_slots.to_string(),
            opt_f(e.p_hat()),
            opt_f(e.p_se()),
            e.requests.to_string(),
            e.served.to_string(),
            opt_f(e.q_hat()),
            opt_f(e.q_se()),
            t.average_reward().to_string(),
            t.total_spent().to_string(),
            t.earn_count.to_string(),
            t.final_state.tokens.to_string(),
        ]
    });
    output::write_table(
        &ctx.path("network_env.csv"),
        &header,
        &[
            "ue",
            "accept_slots",
            "requested_slots",
            "p_hat",
            "p_se",
            "requests",
            "served",
            "q_hat",
            "q_se",
            "average_reward",
            "spent",
            "earned",
            "final_tokens",
        ],
        rows,
    )?;
    output::write_table(
        &ctx.path("network_tokens.csv"),
        &header,
        &["initial_total", "min_total", "max_total", "conserved"],
        [vec![
            outcome.initial_total_tokens.to_string(),
            outcome.min_total_tokens.to_string(),
            outcome.max_total_tokens.to_string(),
            outcome.tokens_conserved().to_string(),
        ]],
    )?;

    if sec.fixed_point_rounds > 0 {
        let rounds = network_fixed_point(&models, &ncfg, sec.fixed_point_rounds)?;
        let mut rows = Vec::new();
        for r in &rounds {
            for ue in 0..r.assumed.len() {
                rows.push(vec![
                    r.round.to_string(),
                    ue.to_string(),
                    r.assumed[ue].p_recv.to_string(),
                    r.assumed[ue].q_accept.to_string(),
                    opt_f(r.measured[ue].p_hat()),
                    opt_f(r.measured[ue].q_hat()),
                    r.average_reward[ue].to_string(),
                    r.policy_changes.to_string(),
                ]);
            }
        }
        output::write_table(
            &ctx.path("fixed_point.csv"),
            &header,
            &[
                "round",
                "ue",
                "assumed_p",
                "assumed_q",
                "p_hat",
                "q_hat",
                "average_reward",
                "policy_changes",
            ],
            rows,
        )?;
    }
    if !outcome.tokens_conserved() {
        return Err(CliError::Structure("token total changed during the run".into()));
    }
    Ok(())
}

pub fn learn(common: &Common) -> Result<(), CliError> {
    let ctx = Context::load(common, |_| {})?;
    let m = &ctx.model;
    let outcome = train(m, &ctx.cfg.learning)?;
    let optimal = value_iteration(m, &ctx.cfg.solver)?.policy;
    let agreement = outcome.policy.agreement(&optimal);
    let header = ctx
        .header("learn", Some(ctx.cfg.learning.rng_seed))
        .with("agreement_with_optimal", agreement);
    ctx.write_benefits(&header)?;
    output::write_qtable(&ctx.path("qtable.csv"), &header, m, &outcome.qtable)?;
    output::write_curve(&ctx.path("curve.csv"), &header, &outcome.curve)?;
    let rows = m.enumerate_states().into_iter().map(|s| {
        vec![
            s.traffic.to_string(),
            s.tokens.to_string(),
            outcome.policy.action(s).to_string(),
            optimal.action(s).to_string(),
        ]
    });
    output::write_table(
        &ctx.path("learned_policy.csv"),
        &header,
        &["type", "tokens", "learned", "optimal"],
        rows,
    )?;
    println!(
        "learned policy matches the optimal policy on {:.1}% of states",
        100.0 * agreement
    );
    Ok(())
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn compare(args: &CompareArgs) -> Result<(), CliError> {
    let ctx = Context::load(&args.common, |cfg| {
        if let Some(g) = &args.grid {
            cfg.compare.betas = g.clone();
        }
    })?;
    if ctx.cfg.compare.betas.is_empty() {
        return Err(CliError::Config("empty discount grid".into()));
    }
    for &b in &ctx.cfg.compare.betas {
        let report = SweepParam::Discount.apply(&ctx.model, b).validate();
        if !report.is_valid() {
            return Err(CliError::Config(format!("beta={b}: {report}")));
        }
    }
    let seeds = seeds(&ctx);
    let header = ctx.header("compare", Some(ctx.cfg.simulation.seed));
    ctx.write_benefits(&header)?;

    let mut table = Vec::new();
    let mut usage_runs = Vec::new();
    for &beta in &ctx.cfg.compare.betas {
        let m = SweepParam::Discount.apply(&ctx.model, beta);
        let (optimal, greedy) = policies(&m, &ctx)?;
        let runs = paired_runs(&m, &optimal, &greedy, &ctx, &seeds)?;
        let opt: Vec<f64> = runs.iter().map(|r| r.0.average_reward()).collect();
        let gre: Vec<f64> = runs.iter().map(|r| r.1.average_reward()).collect();
        let gap: Vec<f64> = opt.iter().zip(&gre).map(|(a, b)| a - b).collect();
        let (om, ose) = mean_se(&opt);
        let (gm, gse) = mean_se(&gre);
        let (dm, dse) = mean_se(&gap);
        table.push(vec![
            beta.to_string(),
            seeds.len().to_string(),
            om.to_string(),
            ose.to_string(),
            gm.to_string(),
            gse.to_string(),
            dm.to_string(),
            dse.to_string(),
        ]);
        let o = pooled(&m, &runs.iter().map(|r| &r.0).collect::<Vec<_>>());
        let g = pooled(&m, &runs.iter().map(|r| &r.1).collect::<Vec<_>>());
        usage_runs.push((format!("optimal/beta={beta}"), o));
        usage_runs.push((format!("greedy/beta={beta}"), g));
        println!("beta {beta}: optimal {om:.6}, greedy {gm:.6}, gap {dm:.6} +- {dse:.6}");
    }
    output::write_table(
        &ctx.path("compare.csv"),
        &header,
        &[
            "beta",
            "seeds",
            "optimal_mean",
            "optimal_se",
            "greedy_mean",
            "greedy_se",
            "gap_mean",
            "gap_se",
        ],
        table,
    )?;
    let refs: Vec<(String, &SimTrace)> = usage_runs.iter().map(|(n, t)| (n.clone(), t)).collect();
    output::write_token_usage(&ctx.path("token_usage.csv"), &header, &ctx.model, &refs)?;
    Ok(())
}
