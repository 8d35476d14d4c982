//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails or overruns its time budget.

use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ccfund::bestresponse::{
    best_response_bruteforce, best_response_exact, demonstrate_nonexistence, knapsack_form_oracle,
    ResidualView,
};
use ccfund::generators::{
    build_example2, build_procedure1, sample_indexed, BudgetRule, Procedure1Params, SamplerConfig,
    ValuationDist,
};
use ccfund::harness::{run_experiment, sw_n, write_csv, ExperimentConfig, ExperimentReport};
use ccfund::heuristics::{play, Assignment, HeuristicId, PlayOrder};
use ccfund::model::{evaluate, Instance};
use ccfund::refunds::{
    threshold_general, threshold_ppr, thresholds, PoolConvention, RefundScheme, RefundSchemeId,
};
use ccfund::welfare::{solve_pstar_bruteforce, solve_pstar_dp, Objective};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn closed_form_threshold() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let theta: f64 = rng.random_range(0.0..50.0);
        let target = rng.random_range(0.1..100.0);
        // Any B in [0, ϑ - T] for some ϑ ≥ T.
        let bonus = rng.random_range(0.0..100.0);
        let bisected = threshold_general(
            &RefundScheme::Ppr,
            theta,
            target,
            bonus,
            0.0,
            PoolConvention::ProvisionPoint,
        )
        .map_err(|e| e.to_string())?;
        let oracle = target * theta / (bonus + target);
        worst = worst.max((bisected - oracle).abs());
    }
    ensure(worst <= 1e-9, || format!("max |bisection - closed form| = {worst:e}"))?;

    let spot: [(f64, f64, f64); 2] = [(10.9, 109.0 / 11.0, 9.91), (1.089, 10.89 / 11.0, 0.99)];
    for (theta, exact, rounded) in spot {
        let x = threshold_ppr(theta, 10.0, 1.0);
        ensure((x - exact).abs() < 1e-12, || format!("θ={theta}: {x} vs {exact}"))?;
        ensure(((x * 100.0).round() / 100.0 - rounded).abs() < 1e-12, || {
            format!("θ={theta}: {x} does not round to {rounded}")
        })?;
    }
    Ok(format!("10000 draws, max error {worst:.1e}; spot values 9.9091, 0.9900"))
}

fn random_full_bonus_instance(rng: &mut ChaCha8Rng, n: usize, p: usize) -> Instance<f64> {
    let vals: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..p).map(|_| rng.random_range(0.0..10.0)).collect())
        .collect();
    let totals: Vec<f64> = (0..p).map(|j| vals.iter().map(|r| r[j]).sum()).collect();
    let targets: Vec<f64> = totals.iter().map(|v| v * rng.random_range(0.3..0.7)).collect();
    let bonuses = totals.iter().zip(&targets).map(|(v, t)| v - t).collect();
    let budgets = (0..n).map(|_| rng.random_range(0.0..10.0)).collect();
    Instance::new(vals, budgets, targets, bonuses, RefundScheme::Ppr).unwrap()
}

fn thresholds_sum_to_target() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(1..=500);
        let p = rng.random_range(1..=20);
        let inst = random_full_bonus_instance(&mut rng, n, p);
        let th = thresholds(&inst).map_err(|e| e.to_string())?;
        for (j, &t) in inst.targets().iter().enumerate() {
            worst = worst.max((th.column_sum(j) - t).abs() / t);
        }
    }
    ensure(worst <= 1e-6, || format!("max relative column error {worst:e}"))?;
    Ok(format!("1000 instances, max relative error {worst:.1e}"))
}

fn cents(rng: &mut ChaCha8Rng, lo: u32, hi: u32) -> f64 {
    rng.random_range(lo..hi) as f64 / 100.0
}

fn welfare_oracles_agree() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    for k in 0..10_000 {
        let n = rng.random_range(1..=4);
        let p = rng.random_range(1..=12);
        let vals: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..p).map(|_| cents(&mut rng, 50, 4000)).collect())
            .collect();
        let targets: Vec<f64> = (0..p)
            .map(|j| {
                let total = (vals.iter().map(|r| r[j]).sum::<f64>() * 100.0).round() as u32;
                cents(&mut rng, 1, total)
            })
            .collect();
        let total_target: f64 = targets.iter().sum();
        let budgets: Vec<f64> = (0..n)
            .map(|_| (cents(&mut rng, 0, 10_000) / n as f64 * 100.0).round() / 100.0)
            .map(|b: f64| b.min(total_target))
            .collect();
        let inst = Instance::new(vals, budgets, targets, vec![0.01; p], RefundScheme::Ppr)
            .map_err(|e| e.to_string())?;
        for objective in [Objective::Welfare, Objective::Valuation] {
            let brute = solve_pstar_bruteforce(&inst, objective).map_err(|e| e.to_string())?;
            let dp = solve_pstar_dp(&inst, 0.01, objective).map_err(|e| e.to_string())?;
            ensure(
                brute.subset == dp.subset && (brute.welfare - dp.welfare).abs() <= 1e-9,
                || format!("instance {k} ({objective:?}): brute {brute:?} vs dp {dp:?}"),
            )?;
        }
    }
    Ok("10000 cent-valued instances, p ≤ 12, both objectives".into())
}

const GRID: f64 = 0.1;

fn random_view(rng: &mut ChaCha8Rng, scheme: RefundScheme<f64>, max_budget_units: u32) -> ResidualView<f64> {
    let p = rng.random_range(1..=4);
    let need: Vec<u32> = (0..p).map(|_| rng.random_range(1..=30)).collect();
    let others: Vec<f64> = (0..p).map(|_| rng.random_range(0..40) as f64 * GRID).collect();
    let targets: Vec<f64> = need.iter().zip(&others).map(|(&r, o)| o + r as f64 * GRID).collect();
    let theta: Vec<f64> = need
        .iter()
        .map(|&r| r as f64 * GRID * rng.random_range(0.5..2.0))
        .collect();
    let bonus: Vec<f64> = (0..p).map(|_| rng.random_range(0.1..3.0)).collect();
    let room: u32 = need.iter().map(|&r| r - 1).sum();
    let budget = rng.random_range(0..=max_budget_units.min(room)) as f64 * GRID;
    ResidualView::new(0, budget, theta, &targets, others, bonus, vec![scheme; p]).unwrap()
}

fn best_response_oracles_agree() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    for scheme_id in [RefundSchemeId::Ppr, RefundSchemeId::LinearAdditive] {
        for k in 0..1000 {
            let scheme = match scheme_id {
                RefundSchemeId::Ppr => RefundScheme::Ppr,
                RefundSchemeId::LinearAdditive => RefundScheme::linear(rng.random_range(0.05..0.9)).unwrap(),
            };
            let view = random_view(&mut rng, scheme, 30);
            let exact = best_response_exact(&view, GRID).map_err(|e| e.to_string())?;
            let brute = best_response_bruteforce(&view, GRID).map_err(|e| e.to_string())?;
            ensure(
                exact.contributions == brute.contributions && (exact.utility - brute.utility).abs() <= 1e-9,
                || format!("{scheme_id:?} view {k}: exact {exact:?} vs brute {brute:?}"),
            )?;
        }
    }
    for k in 0..1000 {
        let scheme = RefundScheme::linear(rng.random_range(0.05..0.9)).unwrap();
        // Budgets that fit below every residual gap.
        let view = random_view(&mut rng, scheme, 120);
        let exact = best_response_exact(&view, GRID).map_err(|e| e.to_string())?;
        let oracle = knapsack_form_oracle(&view, GRID).map_err(|e| e.to_string())?;
        ensure((exact.utility - oracle.utility).abs() <= 1e-9, || {
            format!("knapsack view {k}: exact {exact:?} vs oracle {oracle:?}")
        })?;
    }
    Ok("1000 PPR + 1000 linear views vs enumeration; 1000 linear views vs knapsack form".into())
}

fn surplus_playout_funds_everything() -> Outcome {
    let cfg = SamplerConfig {
        budget_rule: BudgetRule::SubsetFeasibleSurplus { slack: (0.0, 0.5) },
        seed: 505,
        ..SamplerConfig::default()
    };
    for k in 0..100 {
        let s = sample_indexed(&cfg, k).map_err(|e| e.to_string())?;
        let inst = &s.instance;
        let assignment = Assignment::uniform(inst.n_agents(), HeuristicId::OptWelfare);
        let profile = play(inst, &assignment, Some(&s.pstar.subset), &s.thresholds, PlayOrder::Ascending)
            .map_err(|e| e.to_string())?;
        let out = evaluate(inst, &profile).map_err(|e| e.to_string())?;
        for (j, (&c, &t)) in out.totals.iter().zip(inst.targets()).enumerate() {
            ensure(out.funded[j] && (c - t).abs() <= 1e-9, || {
                format!("instance {k}, project {j}: C = {c}, T = {t}")
            })?;
        }
        let ratio = sw_n(&out, s.pstar.welfare).unwrap_or(f64::NAN);
        ensure((ratio - 1.0).abs() <= 1e-9, || format!("instance {k}: SW_N = {ratio}"))?;
    }
    Ok("100 surplus instances, all projects funded at target, SW_N = 1".into())
}

fn procedure1_certificates() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    for scheme in [RefundSchemeId::Ppr, RefundSchemeId::LinearAdditive] {
        for k in 0..100 {
            let target1 = rng.random_range(1.0..100.0);
            let bonus1 = target1 * rng.random_range(0.01..0.5);
            let params = Procedure1Params {
                scheme,
                target1,
                bonus1,
                theta11: target1 + bonus1 * rng.random_range(0.05..0.95),
                theta22_fraction: rng.random_range(0.05..0.95),
                linear_slope: None,
            };
            let built = build_procedure1(&params).map_err(|e| format!("{scheme:?} #{k}: {e}"))?;
            let checks = &built.certificate.checks;
            ensure(checks.len() == 4 && checks.iter().all(|c| c.passed), || {
                format!("{scheme:?} #{k}: {checks:?}")
            })?;
        }
    }
    Ok("100 parameterizations per scheme, 4/4 checks each".into())
}

fn example2_discontinuity() -> Outcome {
    let inst = build_example2(RefundSchemeId::Ppr, 6.0, 10.0, None).map_err(|e| e.to_string())?;
    let report = demonstrate_nonexistence(&inst, &[0.1, 0.01, 0.001]).map_err(|e| e.to_string())?;
    let gamma2 = inst.budgets()[1];
    ensure((report.funded_utility - (6.0 - gamma2)).abs() < 1e-12, || {
        format!("funded utility {} vs θ - γ₂ = {}", report.funded_utility, 6.0 - gamma2)
    })?;
    let u: Vec<f64> = report.deviations.iter().map(|d| d.utility).collect();
    ensure(u.windows(2).all(|w| w[1] > w[0]), || format!("not increasing: {u:?}"))?;
    ensure(u.iter().all(|&x| x > report.funded_utility), || format!("{u:?} vs {}", report.funded_utility))?;

    let out = Command::new(env!("CARGO_BIN_EXE_ccfund"))
        .args(["verify", "example2"])
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.code() == Some(0), || format!("verify exited {:?}", out.status.code()))?;
    Ok(format!("utilities {u:.4?} > {:.4}; verify exit 0", report.funded_utility))
}

const DEVIANT: [HeuristicId; 3] = [HeuristicId::Symmetric, HeuristicId::Weighted, HeuristicId::GreedyTheta];

fn trend_checks(report: &ExperimentReport) -> Result<(), String> {
    for h in HeuristicId::DEVIANT {
        let curve = report.curve(h);
        // A violation is a rise of more than one standard error.
        let mut violations = Vec::new();
        for w in curve.windows(2) {
            let (a, b) = (w[0].sw_n_mean.unwrap_or(f64::NAN), w[1].sw_n_mean.unwrap_or(f64::NAN));
            let se = w[0].sw_n_se.unwrap_or(0.0).max(w[1].sw_n_se.unwrap_or(0.0));
            if !(b - a <= se) {
                violations.push(format!("α={}: {a:.4} -> {b:.4} (se {se:.4})", w[1].alpha));
            }
        }
        ensure(violations.len() <= 1, || format!("(a) {h}: rises {}", violations.join(", ")))?;
    }
    for gv in report.curve(HeuristicId::GreedyVartheta) {
        for h in DEVIANT {
            let other = report.row(h, gv.alpha).ok_or("missing row")?;
            ensure(gv.sw_n_mean >= other.sw_n_mean, || {
                format!("(b) α={}: greedy-vartheta {:?} < {h} {:?}", gv.alpha, gv.sw_n_mean, other.sw_n_mean)
            })?;
        }
    }
    for h in HeuristicId::DEVIANT {
        let row = report.row(h, 0.2).ok_or("missing α = 0.2")?;
        let (dev, non) = (row.au_n_dev_mean.unwrap_or(f64::NAN), row.au_n_nondev_mean.unwrap_or(f64::NAN));
        let ok = if h == HeuristicId::GreedyVartheta { dev < non } else { dev > non };
        ensure(ok, || format!("(c) {h} at α=0.2: deviator {dev:.4} vs non-deviator {non:.4}"))?;
    }
    Ok(())
}

const EXPERIMENT_SEED: u64 = 1;

fn experiment_config(valuation: ValuationDist) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        seed: EXPERIMENT_SEED,
        ..ExperimentConfig::default()
    };
    cfg.sampler.valuation = valuation;
    cfg
}

fn csv_bytes(report: &ExperimentReport) -> Result<Vec<u8>, String> {
    let mut buf = Vec::new();
    write_csv(report, &mut buf).map_err(|e| e.to_string())?;
    Ok(buf)
}

fn experiment_trends(first_csv: &mut Option<Vec<u8>>) -> Outcome {
    let mut notes = Vec::new();
    for (label, valuation) in [
        ("uniform", ValuationDist::Uniform { lo: 0.0, hi: 10.0 }),
        ("exponential", ValuationDist::Exponential { rate: 1.5 }),
    ] {
        let report = run_experiment(&experiment_config(valuation)).map_err(|e| e.to_string())?;
        trend_checks(&report).map_err(|e| format!("{label}: {e}"))?;
        if first_csv.is_none() {
            *first_csv = Some(csv_bytes(&report)?);
        }
        let gv = report.curve(HeuristicId::GreedyVartheta);
        notes.push(format!(
            "{label}: greedy-vartheta SW_N {:.3} -> {:.3}",
            gv[0].sw_n_mean.unwrap_or(f64::NAN),
            gv[gv.len() - 1].sw_n_mean.unwrap_or(f64::NAN)
        ));
    }
    Ok(format!("n=100 p=10 1000/cell seed {EXPERIMENT_SEED}; {}", notes.join("; ")))
}

fn determinism(first_csv: &Option<Vec<u8>>) -> Outcome {
    let first = first_csv.as_ref().ok_or("criterion 8 produced no report")?;
    let cfg = experiment_config(ValuationDist::Uniform { lo: 0.0, hi: 10.0 });
    let again = csv_bytes(&run_experiment(&cfg).map_err(|e| e.to_string())?)?;
    ensure(*first == again, || "CSV reports differ".into())?;
    Ok(format!("{} bytes identical", again.len()))
}

fn main() -> ExitCode {
    let mut first_csv = None;
    let mut failed = 0;
    let mut run = |n: usize, limit_secs: u64, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let result = f();
        let elapsed = start.elapsed();
        let limit = Duration::from_secs(limit_secs);
        let result = match result {
            Ok(detail) if elapsed > limit => Err(format!("{detail}; over the {limit_secs}s limit")),
            other => other,
        };
        match result {
            Ok(detail) => println!("criterion {n}: PASS  {detail} ({:.2}s)", elapsed.as_secs_f64()),
            Err(detail) => {
                failed += 1;
                println!("criterion {n}: FAIL  {detail} ({:.2}s)", elapsed.as_secs_f64());
            }
        }
    };
    run(1, 1, &mut closed_form_threshold);
    run(2, 5, &mut thresholds_sum_to_target);
    run(3, 30, &mut welfare_oracles_agree);
    run(4, 60, &mut best_response_oracles_agree);
    run(5, 5, &mut surplus_playout_funds_everything);
    run(6, 2, &mut procedure1_certificates);
    run(7, 1, &mut example2_discontinuity);
    run(8, 600, &mut || experiment_trends(&mut first_csv));
    run(9, 600, &mut || determinism(&first_csv));
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
