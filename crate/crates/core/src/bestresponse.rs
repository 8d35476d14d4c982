//! Single-agent best responses on a discrete contribution grid.
//!
//! Given the totals the other agents have already put into each project,
//! an agent chooses how many grid units `δ` to spend on each project. Per
//! project the choice is either to close the remaining gap `r_j` exactly
//! (funded, utility `θ_j - r_j`) or to stay strictly below it and collect a
//! refund. [`best_response_exact`] composes these per-project value tables
//! with a budget-indexed DP; [`best_response_bruteforce`] enumerates every
//! grid profile; [`knapsack_form_oracle`] solves the sum-additive special
//! case as a 0/1 knapsack over which projects to close.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::knapsack;
use crate::model::{evaluate, ContributionProfile, Instance, ModelError};
use crate::refunds::{thresholds, RefundRule, RefundScheme};
use crate::scalar::{approx_eq, at_least, Scalar};
use crate::welfare::{quantize_down, quantize_up};

/// Largest budget, in grid units, the exact solver accepts.
pub const MAX_BUDGET_UNITS: usize = 1_000_000;
/// Largest number of grid profiles the brute-force solver enumerates.
pub const MAX_ENUMERATION: u128 = 10_000_000;
/// Default grid unit in currency.
pub const DEFAULT_DELTA: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BestResponseError {
    #[error("grid unit must be positive and finite, got {0}")]
    InvalidDelta(f64),
    #[error("budget spans {units} grid units (limit {limit})")]
    BudgetGuard { units: usize, limit: usize },
    #[error("{size} grid profiles exceed the enumeration limit {limit}")]
    EnumerationGuard { size: u128, limit: u128 },
    #[error("knapsack form needs a sum-additive refund shared by all projects, got {0}")]
    NotSumAdditive(String),
    #[error("agent {agent} out of range (n = {n_agents})")]
    AgentOutOfRange { agent: usize, n_agents: usize },
    #[error("instance is not of the two-agent, three-identical-project family: {0}")]
    NotInFamily(String),
    #[error("invalid epsilon sequence: {0}")]
    InvalidEpsilons(String),
    #[error("inconsistent residual view: {0}")]
    InvalidView(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// What one agent faces once everybody else has contributed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct ResidualView<S> {
    pub agent: usize,
    /// `r_j = max(0, T_j - C_{j-i})`.
    pub remaining: Vec<S>,
    /// `C_{j-i}`.
    pub others_totals: Vec<S>,
    pub budget: S,
    pub valuations: Vec<S>,
    pub bonuses: Vec<S>,
    pub schemes: Vec<RefundScheme<S>>,
}

impl<S: Scalar> ResidualView<S> {
    pub fn new(
        agent: usize,
        budget: S,
        valuations: Vec<S>,
        targets: &[S],
        others_totals: Vec<S>,
        bonuses: Vec<S>,
        schemes: Vec<RefundScheme<S>>,
    ) -> Result<Self, BestResponseError> {
        let p = valuations.len();
        if [targets.len(), others_totals.len(), bonuses.len(), schemes.len()]
            .iter()
            .any(|&len| len != p)
        {
            return Err(BestResponseError::InvalidView("length mismatch".into()));
        }
        if budget < S::zero() || others_totals.iter().any(|&c| c < S::zero()) {
            return Err(BestResponseError::InvalidView("negative budget or totals".into()));
        }
        let remaining = targets
            .iter()
            .zip(&others_totals)
            .map(|(&t, &c)| (t - c).max(S::zero()))
            .collect();
        Ok(ResidualView {
            agent,
            remaining,
            others_totals,
            budget,
            valuations,
            bonuses,
            schemes,
        })
    }

    /// View of `agent`, ignoring its own row in `profile`.
    pub fn from_profile(
        instance: &Instance<S>,
        agent: usize,
        profile: &ContributionProfile<S>,
    ) -> Result<Self, BestResponseError> {
        if agent >= instance.n_agents() {
            return Err(BestResponseError::AgentOutOfRange {
                agent,
                n_agents: instance.n_agents(),
            });
        }
        if profile.contributions.len() != instance.n_agents()
            || profile
                .contributions
                .iter()
                .any(|r| r.len() != instance.n_projects())
        {
            return Err(ModelError::DimensionMismatch {
                what: "others profile".into(),
                expected: instance.n_agents(),
                found: profile.contributions.len(),
            }
            .into());
        }
        let p = instance.n_projects();
        let others = (0..p)
            .map(|j| {
                profile
                    .contributions
                    .iter()
                    .enumerate()
                    .filter(|&(i, _)| i != agent)
                    .map(|(_, r)| r[j])
                    .sum()
            })
            .collect();
        ResidualView::new(
            agent,
            instance.budgets()[agent],
            instance.valuations()[agent].clone(),
            instance.targets(),
            others,
            instance.bonuses().to_vec(),
            (0..p).map(|j| *instance.scheme_for(j)).collect(),
        )
    }

    pub fn n_projects(&self) -> usize {
        self.remaining.len()
    }

    /// Agent utility of contribution vector `x` against this view.
    pub fn utility_of(&self, x: &[S]) -> S {
        (0..self.n_projects())
            .map(|j| self.project_utility(j, x[j]))
            .sum()
    }

    fn project_utility(&self, j: usize, x: S) -> S {
        if at_least(x, self.remaining[j]) {
            self.valuations[j] - x
        } else {
            self.schemes[j].refund(x, self.bonuses[j], self.others_totals[j] + x)
        }
    }

    fn funded_flags(&self, x: &[S]) -> Vec<bool> {
        x.iter()
            .zip(&self.remaining)
            .map(|(&xj, &r)| at_least(xj, r))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct BestResponse<S> {
    pub contributions: Vec<S>,
    pub funded: Vec<bool>,
    pub utility: S,
    /// Produced by an exact solver.
    pub optimal: bool,
}

/// Grid quantities shared by the solvers: budget units and, per project,
/// the units needed to close the gap (rounded up).
struct Grid<S> {
    delta: S,
    budget_units: usize,
    funding_units: Vec<usize>,
}

impl<S: Scalar> Grid<S> {
    fn new(view: &ResidualView<S>, delta: S) -> Result<Self, BestResponseError> {
        let d = delta.as_f64();
        if !(d > 0.0) || !d.is_finite() {
            return Err(BestResponseError::InvalidDelta(d));
        }
        let budget_units = quantize_down(view.budget.as_f64(), d);
        if budget_units > MAX_BUDGET_UNITS {
            return Err(BestResponseError::BudgetGuard {
                units: budget_units,
                limit: MAX_BUDGET_UNITS,
            });
        }
        let funding_units = view
            .remaining
            .iter()
            .map(|&r| quantize_up(r.as_f64(), d))
            .collect();
        Ok(Grid {
            delta,
            budget_units,
            funding_units,
        })
    }

    fn amount(&self, units: usize) -> S {
        self.delta * S::from_usize(units).unwrap()
    }

    /// Largest admissible spend on project `j`: closing the gap, or the budget.
    fn max_units(&self, j: usize) -> usize {
        self.funding_units[j].min(self.budget_units)
    }

    /// Utility of spending `b` units on project `j`.
    fn value(&self, view: &ResidualView<S>, j: usize, b: usize) -> S {
        let x = self.amount(b);
        if b >= self.funding_units[j] {
            view.valuations[j] - x
        } else {
            view.schemes[j].refund(x, view.bonuses[j], view.others_totals[j] + x)
        }
    }

    fn response(&self, view: &ResidualView<S>, units: &[usize]) -> BestResponse<S> {
        let contributions: Vec<S> = units.iter().map(|&b| self.amount(b)).collect();
        BestResponse {
            funded: view.funded_flags(&contributions),
            utility: view.utility_of(&contributions),
            contributions,
            optimal: true,
        }
    }
}

/// Exact best response over the `δ`-grid. Among optimal responses the one
/// with the smallest total spend, then the lexicographically smallest
/// contribution vector, is returned.
pub fn best_response_exact<S: Scalar>(
    view: &ResidualView<S>,
    delta: S,
) -> Result<BestResponse<S>, BestResponseError> {
    let grid = Grid::new(view, delta)?;
    let p = view.n_projects();
    let width = grid.budget_units + 1;
    let tol = S::tolerance().as_f64();

    let values: Vec<Vec<f64>> = (0..p)
        .map(|j| {
            (0..=grid.max_units(j))
                .map(|b| grid.value(view, j, b).as_f64())
                .collect()
        })
        .collect();

    // suffix[j][g]: best utility of projects j.. spending exactly g units.
    let mut suffix = vec![f64::NEG_INFINITY; (p + 1) * width];
    suffix[p * width] = 0.0;
    for j in (0..p).rev() {
        for g in 0..width {
            let mut best = f64::NEG_INFINITY;
            for (b, &v) in values[j].iter().enumerate().take(g + 1) {
                let rest = suffix[(j + 1) * width + g - b];
                if rest > f64::NEG_INFINITY {
                    best = best.max(v + rest);
                }
            }
            suffix[j * width + g] = best;
        }
    }

    let optimum = suffix[..width].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let spend = (0..width)
        .find(|&g| suffix[g] >= optimum - tol)
        .expect("spending nothing is always feasible");

    let mut units = vec![0usize; p];
    let mut left = spend;
    let mut acc = 0.0;
    for j in 0..p {
        let (b, v) = values[j]
            .iter()
            .enumerate()
            .take(left + 1)
            .find(|&(b, &v)| {
                let rest = suffix[(j + 1) * width + left - b];
                rest > f64::NEG_INFINITY && acc + v + rest >= optimum - tol
            })
            .map(|(b, &v)| (b, v))
            .expect("DP table admits a completion");
        units[j] = b;
        left -= b;
        acc += v;
    }
    Ok(grid.response(view, &units))
}

/// Enumerates every feasible grid profile; same tie-break as the exact solver.
pub fn best_response_bruteforce<S: Scalar>(
    view: &ResidualView<S>,
    delta: S,
) -> Result<BestResponse<S>, BestResponseError> {
    let grid = Grid::new(view, delta)?;
    let p = view.n_projects();
    let size = (0..p).fold(1u128, |acc, j| acc.saturating_mul(grid.max_units(j) as u128 + 1));
    if size > MAX_ENUMERATION {
        return Err(BestResponseError::EnumerationGuard {
            size,
            limit: MAX_ENUMERATION,
        });
    }

    let mut candidates: Vec<(f64, usize, Vec<usize>)> = Vec::new();
    let mut units = vec![0usize; p];
    enumerate(&grid, view, 0, grid.budget_units, &mut units, &mut candidates);

    let tol = S::tolerance().as_f64();
    let optimum = candidates
        .iter()
        .map(|c| c.0)
        .fold(f64::NEG_INFINITY, f64::max);
    let best = candidates
        .into_iter()
        .filter(|c| c.0 >= optimum - tol)
        .min_by(|a, b| a.1.cmp(&b.1).then_with(|| a.2.cmp(&b.2)))
        .expect("zero profile is always feasible");
    Ok(grid.response(view, &best.2))
}

fn enumerate<S: Scalar>(
    grid: &Grid<S>,
    view: &ResidualView<S>,
    j: usize,
    left: usize,
    units: &mut Vec<usize>,
    out: &mut Vec<(f64, usize, Vec<usize>)>,
) {
    if j == units.len() {
        let x: Vec<S> = units.iter().map(|&b| grid.amount(b)).collect();
        let spend = units.iter().sum();
        out.push((view.utility_of(&x).as_f64(), spend, units.clone()));
        return;
    }
    for b in 0..=grid.max_units(j).min(left) {
        units[j] = b;
        enumerate(grid, view, j + 1, left - b, units, out);
    }
    units[j] = 0;
}

/// Solves the sum-additive case as a 0/1 knapsack over which gaps to close
/// (item cost `r_j`, value `θ_j - r_j - R(r_j)`), then spends the leftover
/// budget on the projects left unfunded, each kept strictly below its gap.
pub fn knapsack_form_oracle<S: Scalar>(
    view: &ResidualView<S>,
    delta: S,
) -> Result<BestResponse<S>, BestResponseError> {
    let slope = match view.schemes.first() {
        Some(&RefundScheme::LinearAdditive { slope })
            if view.schemes.iter().all(|s| *s == RefundScheme::LinearAdditive { slope }) =>
        {
            slope
        }
        Some(other) => return Err(BestResponseError::NotSumAdditive(other.name().into())),
        None => S::one(),
    };
    let grid = Grid::new(view, delta)?;
    let p = view.n_projects();
    let items: Vec<knapsack::Item> = (0..p)
        .map(|j| {
            let cost = grid.amount(grid.funding_units[j]);
            knapsack::Item {
                weight: grid.funding_units[j],
                value: (view.valuations[j] - cost - slope * cost).as_f64(),
            }
        })
        .collect();
    let required = knapsack::table_cells(p, grid.budget_units);
    if required > knapsack::MAX_TABLE_CELLS {
        return Err(BestResponseError::BudgetGuard {
            units: grid.budget_units,
            limit: knapsack::MAX_TABLE_CELLS / (p + 1),
        });
    }
    let chosen = knapsack::solve(&items, grid.budget_units, S::tolerance().as_f64()).chosen;

    let mut units = vec![0usize; p];
    let mut left = grid.budget_units;
    for &j in &chosen {
        units[j] = grid.funding_units[j];
        left -= units[j];
    }
    for j in 0..p {
        if left == 0 {
            break;
        }
        if !chosen.contains(&j) && grid.funding_units[j] > 0 {
            let put = left.min(grid.funding_units[j] - 1);
            units[j] = put;
            left -= put;
        }
    }
    Ok(grid.response(view, &units))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct DeviationPoint<S> {
    pub epsilon: S,
    pub utility: S,
}

/// Utilities of the second agent in the two-agent, three-identical-project
/// family, when the first agent has put its whole budget into project 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct DiscontinuityReport<S> {
    pub theta: S,
    pub target: S,
    pub bonus: S,
    pub budget: S,
    /// Utility of `(γ, 0, 0)`, which funds project 0.
    pub funded_utility: S,
    /// Utilities of `(γ - ε, ε/2, ε/2)` for each probed `ε`.
    pub deviations: Vec<DeviationPoint<S>>,
    /// `lim_{ε→0+}` of the deviation utility.
    pub limit_utility: S,
    pub gap: S,
    pub strictly_increasing: bool,
    pub all_exceed_funded: bool,
    pub supremum_not_attained: bool,
}

impl<S: Scalar> DiscontinuityReport<S> {
    /// No best response exists: the deviation utilities climb towards a
    /// limit that no contribution attains.
    pub fn holds(&self) -> bool {
        self.strictly_increasing && self.all_exceed_funded && self.supremum_not_attained
    }
}

pub fn demonstrate_nonexistence<S: Scalar>(
    instance: &Instance<S>,
    epsilons: &[S],
) -> Result<DiscontinuityReport<S>, BestResponseError> {
    let not_family = |why: &str| Err(BestResponseError::NotInFamily(why.into()));
    if instance.n_agents() != 2 || instance.n_projects() != 3 {
        return not_family("needs 2 agents and 3 projects");
    }
    let theta = instance.valuation(0, 0);
    if instance
        .valuations()
        .iter()
        .flatten()
        .any(|&v| !approx_eq(v, theta))
    {
        return not_family("valuations are not identical");
    }
    let target = instance.targets()[0];
    let bonus = instance.bonuses()[0];
    if instance.targets().iter().any(|&t| !approx_eq(t, target))
        || instance.bonuses().iter().any(|&b| !approx_eq(b, bonus))
    {
        return not_family("targets or bonuses differ across projects");
    }
    if (1..3).any(|j| instance.scheme_for(j) != instance.scheme_for(0)) {
        return not_family("refund schemes differ across projects");
    }
    let th = thresholds(instance).map_err(ModelError::from)?;
    let budgets = instance.budgets();
    if !(0..2).all(|i| approx_eq(budgets[i], th.get(i, 0))) {
        return not_family("budgets are not the single-project thresholds");
    }
    let (g1, g2) = (budgets[0], budgets[1]);
    if !approx_eq(g1 + g2, target) {
        return not_family("combined budget does not exactly close one project");
    }

    let mut last = S::infinity();
    for &e in epsilons {
        if !(e > S::zero()) || e > g2 {
            return Err(BestResponseError::InvalidEpsilons(format!(
                "{e} is outside (0, {g2}]"
            )));
        }
        if !(e < last) {
            return Err(BestResponseError::InvalidEpsilons(
                "sequence must be strictly decreasing".into(),
            ));
        }
        last = e;
    }

    let agent2_utility = |row: Vec<S>| -> Result<S, BestResponseError> {
        let profile = ContributionProfile::new(vec![vec![g1, S::zero(), S::zero()], row]);
        Ok(evaluate(instance, &profile)?.agent_utilities[1])
    };
    let funded_utility = agent2_utility(vec![g2, S::zero(), S::zero()])?;
    let half = S::lit(0.5);
    let deviations = epsilons
        .iter()
        .map(|&e| {
            Ok(DeviationPoint {
                epsilon: e,
                utility: agent2_utility(vec![g2 - e, e * half, e * half])?,
            })
        })
        .collect::<Result<Vec<_>, BestResponseError>>()?;

    let scheme = instance.scheme_for(0);
    let tiny = S::min_positive_value();
    let limit_utility = scheme.refund(g2, bonus, g1 + g2)
        + S::lit(2.0) * scheme.refund(tiny, bonus, tiny);

    let strictly_increasing = deviations.windows(2).all(|w| w[1].utility > w[0].utility);
    let all_exceed_funded = deviations.iter().all(|d| d.utility > funded_utility);
    let supremum_not_attained = limit_utility > funded_utility
        && deviations.iter().all(|d| limit_utility > d.utility);
    Ok(DiscontinuityReport {
        theta,
        target,
        bonus,
        budget: g2,
        funded_utility,
        deviations,
        limit_utility,
        gap: limit_utility - funded_utility,
        strictly_increasing,
        all_exceed_funded,
        supremum_not_attained,
    })
}
