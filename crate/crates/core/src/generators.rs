//! Random instance sampling and the hand-built fixtures.
//!
//! The sampler draws valuations, sets targets as a fraction of total
//! valuation and then shapes budgets so the instance lands in the requested
//! regime. Fixtures come with a [`Certificate`] listing the checks that make
//! them interesting, each with the numbers involved.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bestresponse::{best_response_exact, BestResponseError, ResidualView, DEFAULT_DELTA};
use crate::model::{
    check_budget_surplus, check_subset_feasibility, evaluate, BudgetRegime, ContributionProfile,
    Instance, ModelError,
};
use crate::refunds::{
    threshold_for, threshold_ppr, thresholds, RefundError, RefundScheme, RefundSchemeId,
    ThresholdMatrix,
};
use crate::scalar::approx_eq;
use crate::welfare::{
    solve_pstar, solve_pstar_bruteforce, welfare_of, Objective, ProjectSet, WelfareError,
    WelfareSolution, DEFAULT_RESOLUTION,
};

/// Rounds of "solve P*, lift budgets" before giving up on a draw.
const MAX_LIFT_ROUNDS: usize = 10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeneratorError {
    #[error("invalid sampler config: {0}")]
    InvalidConfig(String),
    #[error("gave up after {attempts} rejected draws")]
    RejectionsExhausted { attempts: usize },
    #[error("cannot construct fixture: {0}")]
    NotConstructible(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Refund(#[from] RefundError),
    #[error(transparent)]
    Welfare(#[from] WelfareError),
    #[error(transparent)]
    BestResponse(#[from] BestResponseError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ValuationDist {
    Uniform { lo: f64, hi: f64 },
    Exponential { rate: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum BonusRule {
    /// `B_j = ϑ_j - T_j`.
    #[default]
    Full,
    /// `B_j = c (ϑ_j - T_j)` with `c ∈ (0, 1]`.
    Fraction { c: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum BudgetRule {
    /// Total budget `ρ Σ T_j` with `ρ` drawn from `ratio`, then budgets
    /// lifted until every agent affords its thresholds on P*.
    Deficit { ratio: (f64, f64) },
    /// `γ_i = (1 + s_i) Σ_j x̄_ij` with `s_i` drawn from `slack`: every
    /// agent affords all of its thresholds.
    SubsetFeasibleSurplus { slack: (f64, f64) },
}

impl Default for BudgetRule {
    fn default() -> Self {
        BudgetRule::Deficit { ratio: (0.3, 0.7) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub n: usize,
    pub p: usize,
    pub valuation: ValuationDist,
    /// Range of `β_j` with `T_j = β_j ϑ_j`.
    pub target_fraction: (f64, f64),
    pub bonus_rule: BonusRule,
    pub budget_rule: BudgetRule,
    pub seed: u64,
    pub max_rejections: usize,
    pub refund: RefundSchemeId,
    pub linear_slope: Option<f64>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            n: 100,
            p: 10,
            valuation: ValuationDist::Uniform { lo: 0.0, hi: 10.0 },
            target_fraction: (0.3, 0.7),
            bonus_rule: BonusRule::Full,
            budget_rule: BudgetRule::default(),
            seed: 0,
            max_rejections: 1000,
            refund: RefundSchemeId::Ppr,
            linear_slope: None,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), GeneratorError> {
        let bad = |msg: String| Err(GeneratorError::InvalidConfig(msg));
        if self.n == 0 || self.p == 0 {
            return bad("n and p must be positive".into());
        }
        match self.valuation {
            ValuationDist::Uniform { lo, hi } => {
                if !(lo >= 0.0 && hi > lo && hi.is_finite()) {
                    return bad(format!("uniform range [{lo}, {hi}] must satisfy 0 ≤ lo < hi"));
                }
            }
            ValuationDist::Exponential { rate } => {
                if !(rate > 0.0 && rate.is_finite()) {
                    return bad(format!("exponential rate {rate} must be positive"));
                }
            }
        }
        let (lo, hi) = self.target_fraction;
        if !(lo > 0.0 && lo <= hi && hi < 1.0) {
            return bad(format!("target fraction range ({lo}, {hi}) must lie in (0, 1)"));
        }
        if let BonusRule::Fraction { c } = self.bonus_rule {
            if !(c > 0.0 && c <= 1.0) {
                return bad(format!("bonus fraction {c} must lie in (0, 1]"));
            }
        }
        match self.budget_rule {
            BudgetRule::Deficit { ratio: (lo, hi) } => {
                if !(lo > 0.0 && lo <= hi && hi < 1.0) {
                    return bad(format!("budget ratio range ({lo}, {hi}) must lie in (0, 1)"));
                }
            }
            BudgetRule::SubsetFeasibleSurplus { slack: (lo, hi) } => {
                if !(lo >= 0.0 && lo <= hi && hi.is_finite()) {
                    return bad(format!("budget slack range ({lo}, {hi}) must be non-negative"));
                }
            }
        }
        if self.max_rejections == 0 {
            return bad("max_rejections must be at least 1".into());
        }
        if let Some(a) = self.linear_slope {
            if !(a > 0.0 && a.is_finite()) {
                return bad(format!("linear slope {a} must be positive"));
            }
        }
        Ok(())
    }
}

/// A sampled instance together with its welfare-optimal subset and thresholds.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledInstance {
    pub instance: Instance<f64>,
    pub pstar: WelfareSolution<f64>,
    pub thresholds: ThresholdMatrix<f64>,
    /// Draws needed, including the accepted one.
    pub attempts: usize,
}

/// Samples with the config's own seed.
pub fn sample_instance(cfg: &SamplerConfig) -> Result<SampledInstance, GeneratorError> {
    sample_indexed(cfg, 0)
}

/// Samples instance number `index` of the stream defined by `cfg.seed`.
/// Every index has its own ChaCha stream, so results do not depend on
/// which other indices were drawn or in which order.
pub fn sample_indexed(cfg: &SamplerConfig, index: u64) -> Result<SampledInstance, GeneratorError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index);
    for attempt in 1..=cfg.max_rejections {
        if let Some((instance, pstar, thresholds)) = draw(cfg, &mut rng)? {
            return Ok(SampledInstance {
                instance,
                pstar,
                thresholds,
                attempts: attempt,
            });
        }
    }
    Err(GeneratorError::RejectionsExhausted {
        attempts: cfg.max_rejections,
    })
}

fn in_range(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

type Draw = (Instance<f64>, WelfareSolution<f64>, ThresholdMatrix<f64>);

fn draw(cfg: &SamplerConfig, rng: &mut ChaCha8Rng) -> Result<Option<Draw>, GeneratorError> {
    let (n, p) = (cfg.n, cfg.p);
    let valuations: Vec<Vec<f64>> = match cfg.valuation {
        ValuationDist::Uniform { lo, hi } => (0..n)
            .map(|_| (0..p).map(|_| rng.random_range(lo..=hi)).collect())
            .collect(),
        ValuationDist::Exponential { rate } => {
            let exp = Exp::new(rate).expect("validated rate");
            (0..n)
                .map(|_| (0..p).map(|_| exp.sample(rng)).collect())
                .collect()
        }
    };
    let totals: Vec<f64> = (0..p).map(|j| valuations.iter().map(|r| r[j]).sum()).collect();
    if totals.iter().any(|&v| !(v > 0.0)) {
        return Ok(None);
    }
    let targets: Vec<f64> = totals
        .iter()
        .map(|&v| in_range(rng, cfg.target_fraction) * v)
        .collect();
    let c = match cfg.bonus_rule {
        BonusRule::Full => 1.0,
        BonusRule::Fraction { c } => c,
    };
    let bonuses: Vec<f64> = totals.iter().zip(&targets).map(|(&v, &t)| c * (v - t)).collect();

    let mut instance = Instance::new(valuations, vec![0.0; n], targets, bonuses, RefundScheme::Ppr)?;
    let scheme = cfg.refund.resolve(&instance, cfg.linear_slope)?;
    instance = instance.with_refund(scheme)?;
    let th = thresholds(&instance)?;
    let row_sums: Vec<f64> = th.rows().iter().map(|r| r.iter().sum()).collect();

    match cfg.budget_rule {
        BudgetRule::SubsetFeasibleSurplus { slack } => {
            let budgets = row_sums.iter().map(|&s| (1.0 + in_range(rng, slack)) * s).collect();
            let instance = instance.with_budgets(budgets)?;
            let pstar = solve_pstar(&instance, DEFAULT_RESOLUTION, Objective::Welfare)?;
            if check_budget_surplus(&instance) != BudgetRegime::Surplus {
                return Ok(None);
            }
            Ok(Some((instance, pstar, th)))
        }
        BudgetRule::Deficit { ratio } => {
            let total = in_range(rng, ratio) * instance.total_target();
            let scale = total / row_sums.iter().sum::<f64>();
            let mut budgets: Vec<f64> = row_sums.iter().map(|&s| s * scale).collect();
            let mut previous: Option<ProjectSet> = None;
            for _ in 0..MAX_LIFT_ROUNDS {
                let current = instance.with_budgets(budgets.clone())?;
                let pstar = pstar_for_sampling(&current)?;
                if pstar.subset.is_empty() {
                    return Ok(None);
                }
                if previous.as_ref() == Some(&pstar.subset) {
                    let feasible = check_subset_feasibility(&current, &pstar.subset, &th)?;
                    let deficit = check_budget_surplus(&current) == BudgetRegime::Deficit;
                    return Ok((feasible && deficit).then_some((current, pstar, th)));
                }
                for (i, b) in budgets.iter_mut().enumerate() {
                    *b = b.max(th.subset_sum(i, pstar.subset.indices()));
                }
                previous = Some(pstar.subset);
            }
            Ok(None)
        }
    }
}

fn pstar_for_sampling(instance: &Instance<f64>) -> Result<WelfareSolution<f64>, WelfareError> {
    if instance.n_projects() <= 16 {
        solve_pstar_bruteforce(instance, Objective::Welfare)
    } else {
        solve_pstar(instance, DEFAULT_RESOLUTION, Objective::Welfare)
    }
}

/// One named check of a fixture certificate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// `false` for checks that document a known inconsistency and are
    /// expected to fail.
    pub expected: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Check {
            name: name.to_string(),
            passed,
            expected: true,
            detail,
        }
    }

    fn expected_failure(name: &str, passed: bool, detail: String) -> Self {
        Check {
            expected: false,
            ..Check::new(name, passed, detail)
        }
    }

    /// The check came out the way the fixture documents.
    pub fn as_expected(&self) -> bool {
        self.passed == self.expected
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Certificate {
    pub checks: Vec<Check>,
}

impl Certificate {
    pub fn holds(&self) -> bool {
        self.checks.iter().all(Check::as_expected)
    }

    pub fn first_unexpected(&self) -> Option<&Check> {
        self.checks.iter().find(|c| !c.as_expected())
    }
}

/// Two agents, two projects: agent 0 can afford only the cheaper, less
/// valuable project, which it funds alone although the other project
/// carries more welfare.
pub fn build_example1() -> Instance<f64> {
    Instance::new(
        vec![vec![1.0, 2.0], vec![10.0, 1.0]],
        vec![1.0, 0.0],
        vec![2.0, 1.0],
        vec![0.4, 0.4],
        RefundScheme::Ppr,
    )
    .expect("example 1 is a valid instance")
}

pub fn certify_example1(instance: &Instance<f64>) -> Result<Certificate, GeneratorError> {
    let mut checks = Vec::new();
    let pstar = solve_pstar_bruteforce(instance, Objective::Welfare)?;
    checks.push(Check::new(
        "budget-feasible optimum is project 1",
        pstar.subset.indices() == [1],
        format!("P* = {:?}, welfare {}", pstar.subset.indices(), pstar.welfare),
    ));
    let w0 = welfare_of(instance, &ProjectSet::from_sorted_unchecked(vec![0]), Objective::Welfare);
    let w1 = welfare_of(instance, &ProjectSet::from_sorted_unchecked(vec![1]), Objective::Welfare);
    checks.push(Check::new(
        "project 0 carries more welfare",
        w0 > w1,
        format!("welfare(0) = {w0}, welfare(1) = {w1}"),
    ));
    let zeros = ContributionProfile::zeros(2, 2);
    let view = ResidualView::from_profile(instance, 0, &zeros)?;
    let br = best_response_exact(&view, DEFAULT_DELTA)?;
    checks.push(Check::new(
        "agent 0 best response funds project 1 alone",
        br.funded == [false, true] && approx_eq(br.utility, 1.0),
        format!("x = {:?}, utility {}", br.contributions, br.utility),
    ));
    checks.push(Check::new(
        "agent 1 has nothing to contribute",
        instance.budgets()[1] == 0.0,
        format!("γ_1 = {}", instance.budgets()[1]),
    ));
    Ok(Certificate { checks })
}

/// Two identical agents, three identical projects, each agent's budget its
/// single-project threshold.
pub fn build_example2(
    scheme: RefundSchemeId,
    theta: f64,
    target: f64,
    linear_slope: Option<f64>,
) -> Result<Instance<f64>, GeneratorError> {
    if !(theta > target / 2.0) || !(target > 0.0) {
        return Err(GeneratorError::NotConstructible(format!(
            "need θ > T/2 > 0, got θ = {theta}, T = {target}"
        )));
    }
    let bonus = 2.0 * theta - target;
    let base = Instance::new(
        vec![vec![theta; 3]; 2],
        vec![0.0; 2],
        vec![target; 3],
        vec![bonus; 3],
        RefundScheme::Ppr,
    )?;
    let refund = scheme.resolve(&base, linear_slope)?;
    let xbar = threshold_for(&refund, theta, target, bonus)?;
    Ok(base.with_refund(refund)?.with_budgets(vec![xbar; 2])?)
}

pub fn certify_example2(
    instance: &Instance<f64>,
    epsilons: &[f64],
) -> Result<Certificate, GeneratorError> {
    let report = crate::bestresponse::demonstrate_nonexistence(instance, epsilons)?;
    let utilities: Vec<String> = report
        .deviations
        .iter()
        .map(|d| format!("ε = {}: {:.12}", d.epsilon, d.utility))
        .collect();
    Ok(Certificate {
        checks: vec![
            Check::new(
                "deviation utilities strictly increase as ε shrinks",
                report.strictly_increasing,
                utilities.join(", "),
            ),
            Check::new(
                "every deviation beats funding project 0",
                report.all_exceed_funded,
                format!("utility at ε = 0 is {:.12}", report.funded_utility),
            ),
            Check::new(
                "supremum is not attained",
                report.supremum_not_attained,
                format!(
                    "limit {:.12}, gap {:.12}",
                    report.limit_utility, report.gap
                ),
            ),
        ],
    })
}

/// Parameters of the two-agent, two-project deviation construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Procedure1Params {
    pub scheme: RefundSchemeId,
    pub target1: f64,
    pub bonus1: f64,
    pub theta11: f64,
    /// Position of `θ_22` inside `(θ_21, θ_11 + θ_21 - x̄_11)`.
    pub theta22_fraction: f64,
    pub linear_slope: Option<f64>,
}

impl Default for Procedure1Params {
    fn default() -> Self {
        Procedure1Params {
            scheme: RefundSchemeId::Ppr,
            target1: 10.0,
            bonus1: 1.0,
            theta11: 10.9,
            theta22_fraction: 0.4,
            linear_slope: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Procedure1 {
    pub instance: Instance<f64>,
    pub xbar11: f64,
    pub xbar21: f64,
    pub theta21: f64,
    pub theta22: f64,
    pub certificate: Certificate,
}

/// Builds an instance whose welfare-optimal subset is subset feasible and
/// in budget deficit, yet agent 1 profits from abandoning it.
///
/// Project 0 is sized so both agents' thresholds exactly cover it; project 1
/// is valued by agent 1 only and costs exactly agent 1's budget.
pub fn build_procedure1(params: &Procedure1Params) -> Result<Procedure1, GeneratorError> {
    let Procedure1Params {
        scheme,
        target1: t1,
        bonus1: b1,
        theta11,
        theta22_fraction: f,
        linear_slope,
    } = *params;
    if !(t1 > 0.0 && b1 > 0.0) {
        return Err(GeneratorError::NotConstructible(format!(
            "target {t1} and bonus {b1} must be positive"
        )));
    }
    if !(f > 0.0 && f < 1.0) {
        return Err(GeneratorError::NotConstructible(format!(
            "θ_22 fraction {f} must lie in (0, 1)"
        )));
    }
    if !(theta11 > t1) {
        return Err(GeneratorError::NotConstructible(format!(
            "need T_1 < θ_11, got T_1 = {t1}, θ_11 = {theta11}"
        )));
    }
    let refund = match scheme {
        RefundSchemeId::Ppr => RefundScheme::Ppr,
        // Slope B_1 / T_1 puts x̄_11 where PPR would.
        RefundSchemeId::LinearAdditive => RefundScheme::linear(linear_slope.unwrap_or(b1 / t1))?,
    };
    let xbar11 = threshold_for(&refund, theta11, t1, b1)?;
    if !(xbar11 < t1) {
        return Err(GeneratorError::NotConstructible(format!(
            "need x̄_11 < T_1, got x̄_11 = {xbar11}"
        )));
    }
    let xbar21 = t1 - xbar11;
    let theta21 = invert_threshold(&refund, xbar21, t1, b1)?;
    let theta22 = theta21 + f * (theta11 - xbar11);
    let t2 = xbar21;
    let b2 = theta22 - t2;

    let instance = Instance::new(
        vec![vec![theta11, 0.0], vec![theta21, theta22]],
        vec![xbar11, xbar21],
        vec![t1, t2],
        vec![b1, b2],
        refund,
    )?;

    let mut checks = Vec::new();
    let pstar = solve_pstar_bruteforce(&instance, Objective::Welfare)?;
    checks.push(Check::new(
        "P* = {0} and unique",
        pstar.subset.indices() == [0] && pstar.unique,
        format!(
            "P* = {:?}, welfare {:.12}, unique {}",
            pstar.subset.indices(),
            pstar.welfare,
            pstar.unique
        ),
    ));
    let th = thresholds(&instance)?;
    checks.push(Check::new(
        "subset feasible on P*",
        check_subset_feasibility(&instance, &pstar.subset, &th)?,
        format!(
            "γ = ({:.12}, {:.12}), x̄_·0 = ({:.12}, {:.12})",
            xbar11,
            xbar21,
            th.get(0, 0),
            th.get(1, 0)
        ),
    ));
    checks.push(Check::new(
        "budget deficit",
        check_budget_surplus(&instance) == BudgetRegime::Deficit,
        format!(
            "Σγ = {:.12} < ΣT = {:.12}",
            instance.total_budget(),
            instance.total_target()
        ),
    ));
    let on_path = ContributionProfile::new(vec![vec![xbar11, 0.0], vec![xbar21, 0.0]]);
    let deviation = ContributionProfile::new(vec![vec![xbar11, 0.0], vec![0.0, t2]]);
    let u_on = evaluate(&instance, &on_path)?.agent_utilities[1];
    let u_dev = evaluate(&instance, &deviation)?.agent_utilities[1];
    checks.push(Check::new(
        "agent 1 profits from funding project 1 alone",
        theta22 - t2 > theta21 - xbar21 && u_dev > u_on,
        format!(
            "θ_22 - T_2 = {:.12} > θ_21 - x̄_21 = {:.12}; evaluated {u_dev:.12} vs {u_on:.12}",
            theta22 - t2,
            theta21 - xbar21
        ),
    ));

    Ok(Procedure1 {
        instance,
        xbar11,
        xbar21,
        theta21,
        theta22,
        certificate: Certificate { checks },
    })
}

/// Valuation whose single-contributor threshold on (target, bonus) is `xbar`.
fn invert_threshold(
    refund: &RefundScheme<f64>,
    xbar: f64,
    target: f64,
    bonus: f64,
) -> Result<f64, GeneratorError> {
    if let RefundScheme::Ppr = refund {
        return Ok(xbar * (bonus + target) / target);
    }
    // Thresholds lie below θ and grow with it, so θ ∈ [xbar, hi] for some hi.
    let mut hi = 2.0 * xbar.max(f64::MIN_POSITIVE);
    while threshold_for(refund, hi, target, bonus)? < xbar {
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(GeneratorError::NotConstructible(
                "threshold never reaches the required level".into(),
            ));
        }
    }
    let mut lo = xbar;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if threshold_for(refund, mid, target, bonus)? < xbar {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Theorem2Witness {
    pub instance: Instance<f64>,
    pub n1: usize,
    pub n2: usize,
    pub certificate: Certificate,
}

/// Budget-surplus instance where a small, highly interested group N1 (the
/// first `n1` agents) cannot fund anything while the remaining agents can
/// only fund everything by contributing beyond their thresholds.
pub fn build_theorem2_witness(
    scheme: RefundSchemeId,
    p: usize,
    n1: usize,
    n2: usize,
    linear_slope: Option<f64>,
) -> Result<Theorem2Witness, GeneratorError> {
    if p == 0 || n1 == 0 || n2 == 0 {
        return Err(GeneratorError::NotConstructible(format!(
            "need p, n1, n2 ≥ 1, got p = {p}, n1 = {n1}, n2 = {n2}"
        )));
    }
    let targets: Vec<f64> = (0..p).map(|j| 10.0 + j as f64).collect();
    let varthetas: Vec<f64> = targets.iter().map(|t| 2.0 * t).collect();
    let bonuses: Vec<f64> = varthetas.iter().zip(&targets).map(|(v, t)| v - t).collect();
    let min_target = targets.iter().copied().fold(f64::INFINITY, f64::min);
    let total_target: f64 = targets.iter().sum();

    let mut valuations = Vec::with_capacity(n1 + n2);
    for _ in 0..n1 {
        valuations.push(varthetas.iter().map(|v| 0.9 * v / n1 as f64).collect());
    }
    for _ in 0..n2 {
        valuations.push(varthetas.iter().map(|v| 0.1 * v / n2 as f64).collect());
    }
    let n1_total = 0.1 * min_target;
    let mut budgets = vec![n1_total / n1 as f64; n1];
    budgets.extend(vec![(total_target - n1_total) / n2 as f64; n2]);

    let base = Instance::new(valuations, budgets, targets, bonuses, RefundScheme::Ppr)?;
    let refund = scheme.resolve(&base, linear_slope)?;
    let instance = base.with_refund(refund)?;
    let th = thresholds(&instance)?;

    let n2_thresholds: f64 = (n1..n1 + n2).map(|i| th.row(i).iter().sum::<f64>()).sum();
    let n1_budget: f64 = instance.budgets()[..n1].iter().sum();
    let shortfall = total_target - n1_budget - n2_thresholds;
    if !(shortfall > 0.0) {
        return Err(GeneratorError::NotConstructible(format!(
            "N2 thresholds {n2_thresholds} already cover the targets left after N1"
        )));
    }
    let checks = vec![
        Check::new(
            "budget surplus",
            check_budget_surplus(&instance) == BudgetRegime::Surplus,
            format!(
                "Σγ = {:.12} ≥ ΣT = {total_target:.12}",
                instance.total_budget()
            ),
        ),
        Check::new(
            "N1 cannot fund any single project",
            n1_budget < min_target,
            format!("Σ_N1 γ = {n1_budget:.12} < min T = {min_target:.12}"),
        ),
        Check::new(
            "funding every project forces some N2 agent past its thresholds",
            shortfall > 0.0,
            format!(
                "ΣT - Σ_N1 γ - Σ_N2 Σ_j x̄ = {shortfall:.12} with Σ_N2 Σ_j x̄ = {n2_thresholds:.12}"
            ),
        ),
        Check::new(
            "not subset feasible on all projects",
            !check_subset_feasibility(&instance, &ProjectSet::full(p), &th)?,
            format!(
                "agent 0: γ = {:.12}, Σ_j x̄ = {:.12}",
                instance.budgets()[0],
                th.row(0).iter().sum::<f64>()
            ),
        ),
    ];
    Ok(Theorem2Witness {
        instance,
        n1,
        n2,
        certificate: Certificate { checks },
    })
}

/// The two-agent, two-project numbers quoted for the deviation example,
/// taken literally.
pub fn build_appendix_b() -> Instance<f64> {
    Instance::new(
        vec![vec![10.9, 0.0], vec![1.089, 1.9]],
        vec![9.91, 0.99],
        vec![10.0, 0.99],
        vec![1.0, 0.91],
        RefundScheme::Ppr,
    )
    .expect("literal numbers form a valid instance")
}

/// Formula spot checks on the literal numbers, plus the link between the
/// two thresholds on project 0 that the construction requires. The literal
/// `x̄_21 = 0.99` does not satisfy that link, so that check is expected to
/// fail.
pub fn certify_appendix_b(instance: &Instance<f64>) -> Result<Certificate, GeneratorError> {
    let th = thresholds(instance)?;
    let (t1, b1) = (instance.targets()[0], instance.bonuses()[0]);
    let xbar11 = threshold_ppr(10.9, t1, b1);
    let xbar21 = th.get(1, 0);
    let w0 = welfare_of(instance, &ProjectSet::from_sorted_unchecked(vec![0]), Objective::Welfare);
    let w1 = welfare_of(instance, &ProjectSet::from_sorted_unchecked(vec![1]), Objective::Welfare);
    let pstar = solve_pstar_bruteforce(instance, Objective::Welfare)?;
    let (theta21, theta22, t2) = (instance.valuation(1, 0), instance.valuation(1, 1), instance.targets()[1]);
    let checks = vec![
        Check::new(
            "x̄_11 rounds to 9.91",
            (xbar11 - 9.91).abs() < 0.005,
            format!("x̄_11 = {xbar11:.12}"),
        ),
        Check::new(
            "x̄_21 = 0.99 from θ_21 = 1.089",
            (xbar21 - 0.99).abs() < 1e-9,
            format!("x̄_21 = {xbar21:.12}"),
        ),
        Check::new(
            "project welfares",
            (w0 - 1.989).abs() < 1e-9 && (w1 - 0.91).abs() < 1e-9,
            format!("welfare(0) = {w0:.12}, welfare(1) = {w1:.12}"),
        ),
        Check::new(
            "P* = {0}",
            pstar.subset.indices() == [0],
            format!("P* = {:?}", pstar.subset.indices()),
        ),
        Check::new(
            "deviation gain",
            theta22 - t2 > theta21 - xbar21,
            format!(
                "θ_22 - T_2 = {:.12} > θ_21 - x̄_21 = {:.12}",
                theta22 - t2,
                theta21 - xbar21
            ),
        ),
        Check::expected_failure(
            "thresholds on project 0 add up to T_0",
            approx_eq(xbar11 + xbar21, t1),
            format!(
                "x̄_11 + x̄_21 = {:.12} vs T_0 = {t1}; the construction needs x̄_21 = {:.12}",
                xbar11 + xbar21,
                t1 - xbar11
            ),
        ),
    ];
    Ok(Certificate { checks })
}
