//! Core game description, contribution profiles and outcome evaluation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::refunds::{RefundError, RefundRule, RefundScheme, ThresholdMatrix};
use crate::scalar::{at_least, Scalar};
use crate::welfare::ProjectSet;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("instance needs at least one agent and one project")]
    Empty,
    #[error("{what}: expected length {expected}, found {found}")]
    DimensionMismatch {
        what: String,
        expected: usize,
        found: usize,
    },
    #[error("valuation θ[{agent}][{project}] = {value} is negative")]
    NegativeValuation {
        agent: usize,
        project: usize,
        value: f64,
    },
    #[error("budget of agent {agent} is negative ({value})")]
    NegativeBudget { agent: usize, value: f64 },
    #[error("target of project {project} must be positive, got {value}")]
    NonPositiveTarget { project: usize, value: f64 },
    #[error("bonus of project {project} must be positive, got {value}")]
    NonPositiveBonus { project: usize, value: f64 },
    #[error("project {project}: total valuation {total_valuation} does not exceed target {target}")]
    InsufficientInterest {
        project: usize,
        total_valuation: f64,
        target: f64,
    },
    #[error("project {project}: bonus {bonus} exceeds ϑ - T = {max}")]
    BonusTooLarge { project: usize, bonus: f64, max: f64 },
    #[error("contribution x[{agent}][{project}] = {value} is negative")]
    NegativeContribution {
        agent: usize,
        project: usize,
        value: f64,
    },
    #[error("agent {agent} spends {spent} but has budget {budget}")]
    BudgetViolation { agent: usize, spent: f64, budget: f64 },
    #[error("project index {index} out of range (p = {n_projects})")]
    ProjectOutOfRange { index: usize, n_projects: usize },
    #[error("duplicate project index {0}")]
    DuplicateProject(usize),
    #[error(transparent)]
    Refund(#[from] RefundError),
}

/// A combinatorial crowdfunding game: agents with budgets and valuations,
/// projects with targets and refund bonuses, and the refund scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance<S> {
    valuations: Vec<Vec<S>>,
    budgets: Vec<S>,
    targets: Vec<S>,
    bonuses: Vec<S>,
    refund: RefundScheme<S>,
    project_refunds: Option<Vec<RefundScheme<S>>>,
}

impl<S: Scalar> Instance<S> {
    /// Builds and validates an instance. Requires `ϑ_j > T_j` and
    /// `0 < B_j ≤ ϑ_j - T_j` for every project.
    pub fn new(
        valuations: Vec<Vec<S>>,
        budgets: Vec<S>,
        targets: Vec<S>,
        bonuses: Vec<S>,
        refund: RefundScheme<S>,
    ) -> Result<Self, ModelError> {
        let instance = Instance {
            valuations,
            budgets,
            targets,
            bonuses,
            refund,
            project_refunds: None,
        };
        instance.validate()?;
        Ok(instance)
    }

    /// Overrides the refund scheme per project.
    pub fn with_project_refunds(mut self, schemes: Vec<RefundScheme<S>>) -> Result<Self, ModelError> {
        if schemes.len() != self.n_projects() {
            return Err(ModelError::DimensionMismatch {
                what: "per-project refund schemes".into(),
                expected: self.n_projects(),
                found: schemes.len(),
            });
        }
        for s in &schemes {
            s.validate()?;
        }
        self.project_refunds = Some(schemes);
        Ok(self)
    }

    /// Same game under a different shared refund scheme.
    pub fn with_refund(&self, refund: RefundScheme<S>) -> Result<Self, ModelError> {
        refund.validate()?;
        Ok(Instance {
            refund,
            project_refunds: None,
            ..self.clone()
        })
    }

    /// Same game with different budgets.
    pub fn with_budgets(&self, budgets: Vec<S>) -> Result<Self, ModelError> {
        let instance = Instance {
            budgets,
            ..self.clone()
        };
        instance.validate()?;
        Ok(instance)
    }

    fn validate(&self) -> Result<(), ModelError> {
        let n = self.budgets.len();
        let p = self.targets.len();
        if n == 0 || p == 0 {
            return Err(ModelError::Empty);
        }
        check_len("valuation rows", n, self.valuations.len())?;
        check_len("bonuses", p, self.bonuses.len())?;
        for (i, row) in self.valuations.iter().enumerate() {
            check_len(&format!("valuations of agent {i}"), p, row.len())?;
            for (j, &v) in row.iter().enumerate() {
                if !(v >= S::zero()) || !v.is_finite() {
                    return Err(ModelError::NegativeValuation {
                        agent: i,
                        project: j,
                        value: v.as_f64(),
                    });
                }
            }
        }
        for (i, &b) in self.budgets.iter().enumerate() {
            if !(b >= S::zero()) || !b.is_finite() {
                return Err(ModelError::NegativeBudget {
                    agent: i,
                    value: b.as_f64(),
                });
            }
        }
        let totals = self.total_valuations();
        for j in 0..p {
            let (t, b) = (self.targets[j], self.bonuses[j]);
            if !(t > S::zero()) || !t.is_finite() {
                return Err(ModelError::NonPositiveTarget {
                    project: j,
                    value: t.as_f64(),
                });
            }
            if !(b > S::zero()) || !b.is_finite() {
                return Err(ModelError::NonPositiveBonus {
                    project: j,
                    value: b.as_f64(),
                });
            }
            if !(totals[j] > t) {
                return Err(ModelError::InsufficientInterest {
                    project: j,
                    total_valuation: totals[j].as_f64(),
                    target: t.as_f64(),
                });
            }
            let margin = totals[j] - t;
            if b > margin + S::tolerance() {
                return Err(ModelError::BonusTooLarge {
                    project: j,
                    bonus: b.as_f64(),
                    max: margin.as_f64(),
                });
            }
        }
        self.refund.validate()?;
        Ok(())
    }

    pub fn n_agents(&self) -> usize {
        self.budgets.len()
    }

    pub fn n_projects(&self) -> usize {
        self.targets.len()
    }

    pub fn valuations(&self) -> &[Vec<S>] {
        &self.valuations
    }

    pub fn valuation(&self, agent: usize, project: usize) -> S {
        self.valuations[agent][project]
    }

    pub fn budgets(&self) -> &[S] {
        &self.budgets
    }

    pub fn targets(&self) -> &[S] {
        &self.targets
    }

    pub fn bonuses(&self) -> &[S] {
        &self.bonuses
    }

    pub fn refund(&self) -> &RefundScheme<S> {
        &self.refund
    }

    pub fn project_refunds(&self) -> Option<&[RefundScheme<S>]> {
        self.project_refunds.as_deref()
    }

    pub fn scheme_for(&self, project: usize) -> &RefundScheme<S> {
        self.project_refunds
            .as_ref()
            .map_or(&self.refund, |s| &s[project])
    }

    /// `ϑ_j = Σ_i θ_ij` for each project.
    pub fn total_valuations(&self) -> Vec<S> {
        (0..self.targets.len())
            .map(|j| self.valuations.iter().map(|row| row[j]).sum())
            .collect()
    }

    pub fn total_budget(&self) -> S {
        self.budgets.iter().copied().sum()
    }

    pub fn total_target(&self) -> S {
        self.targets.iter().copied().sum()
    }

    pub(crate) fn check_project(&self, index: usize) -> Result<(), ModelError> {
        if index >= self.n_projects() {
            return Err(ModelError::ProjectOutOfRange {
                index,
                n_projects: self.n_projects(),
            });
        }
        Ok(())
    }
}

fn check_len(what: &str, expected: usize, found: usize) -> Result<(), ModelError> {
    if expected != found {
        return Err(ModelError::DimensionMismatch {
            what: what.to_string(),
            expected,
            found,
        });
    }
    Ok(())
}

/// Contributions `x_ij` of every agent to every project.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct ContributionProfile<S> {
    pub contributions: Vec<Vec<S>>,
}

impl<S: Scalar> ContributionProfile<S> {
    pub fn new(contributions: Vec<Vec<S>>) -> Self {
        ContributionProfile { contributions }
    }

    pub fn zeros(n_agents: usize, n_projects: usize) -> Self {
        ContributionProfile {
            contributions: vec![vec![S::zero(); n_projects]; n_agents],
        }
    }

    pub fn row(&self, agent: usize) -> &[S] {
        &self.contributions[agent]
    }

    /// `C_j = Σ_i x_ij`.
    pub fn totals(&self) -> Vec<S> {
        let p = self.contributions.first().map_or(0, Vec::len);
        (0..p)
            .map(|j| self.contributions.iter().map(|r| r[j]).sum())
            .collect()
    }

    /// Checks dimensions, non-negativity and row budgets against an instance.
    pub fn check_against(&self, instance: &Instance<S>) -> Result<(), ModelError> {
        check_len("profile rows", instance.n_agents(), self.contributions.len())?;
        for (i, row) in self.contributions.iter().enumerate() {
            check_len(&format!("profile row {i}"), instance.n_projects(), row.len())?;
            for (j, &x) in row.iter().enumerate() {
                if !(x >= S::zero()) || !x.is_finite() {
                    return Err(ModelError::NegativeContribution {
                        agent: i,
                        project: j,
                        value: x.as_f64(),
                    });
                }
            }
            let spent: S = row.iter().copied().sum();
            if !at_least(instance.budgets()[i], spent) {
                return Err(ModelError::BudgetViolation {
                    agent: i,
                    spent: spent.as_f64(),
                    budget: instance.budgets()[i].as_f64(),
                });
            }
        }
        Ok(())
    }
}

/// Result of evaluating a profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct Outcome<S> {
    pub funded: Vec<bool>,
    pub totals: Vec<S>,
    pub refunds: Vec<Vec<S>>,
    pub per_pair_utilities: Vec<Vec<S>>,
    pub agent_utilities: Vec<S>,
    pub social_welfare: S,
}

impl<S: Scalar> Outcome<S> {
    pub fn funded_projects(&self) -> Vec<usize> {
        self.funded
            .iter()
            .enumerate()
            .filter_map(|(j, &f)| f.then_some(j))
            .collect()
    }
}

/// Evaluates funded status, refunds, utilities and welfare of a profile.
pub fn evaluate<S: Scalar>(
    instance: &Instance<S>,
    profile: &ContributionProfile<S>,
) -> Result<Outcome<S>, ModelError> {
    profile.check_against(instance)?;
    let totals = profile.totals();
    let funded: Vec<bool> = totals
        .iter()
        .zip(instance.targets())
        .map(|(&c, &t)| at_least(c, t))
        .collect();

    let n = instance.n_agents();
    let p = instance.n_projects();
    let mut refunds = vec![vec![S::zero(); p]; n];
    let mut per_pair = vec![vec![S::zero(); p]; n];
    for i in 0..n {
        for j in 0..p {
            let x = profile.contributions[i][j];
            if funded[j] {
                per_pair[i][j] = instance.valuation(i, j) - x;
            } else {
                let r = instance
                    .scheme_for(j)
                    .refund(x, instance.bonuses()[j], totals[j]);
                refunds[i][j] = r;
                per_pair[i][j] = r;
            }
        }
    }
    let agent_utilities = per_pair.iter().map(|row| row.iter().copied().sum()).collect();
    let varthetas = instance.total_valuations();
    let social_welfare = (0..p)
        .filter(|&j| funded[j])
        .map(|j| varthetas[j] - instance.targets()[j])
        .sum();
    Ok(Outcome {
        funded,
        totals,
        refunds,
        per_pair_utilities: per_pair,
        agent_utilities,
        social_welfare,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BudgetRegime {
    Surplus,
    Deficit,
}

/// `Σ γ_i ≥ Σ T_j` is a surplus (equality included); anything less a deficit.
pub fn check_budget_surplus<S: Scalar>(instance: &Instance<S>) -> BudgetRegime {
    if at_least(instance.total_budget(), instance.total_target()) {
        BudgetRegime::Surplus
    } else {
        BudgetRegime::Deficit
    }
}

/// Subset feasibility: every agent can afford its thresholds on `subset`.
pub fn check_subset_feasibility<S: Scalar>(
    instance: &Instance<S>,
    subset: &ProjectSet,
    thresholds: &ThresholdMatrix<S>,
) -> Result<bool, ModelError> {
    for &j in subset.indices() {
        instance.check_project(j)?;
    }
    check_len("threshold rows", instance.n_agents(), thresholds.n_agents())?;
    Ok((0..instance.n_agents()).all(|i| {
        at_least(
            instance.budgets()[i],
            thresholds.subset_sum(i, subset.indices()),
        )
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::refunds::thresholds;
    use approx::assert_relative_eq;

    fn single(theta: f64, target: f64, bonus: f64) -> Instance<f64> {
        Instance::new(
            vec![vec![theta]],
            vec![theta],
            vec![target],
            vec![bonus],
            RefundScheme::Ppr,
        )
        .unwrap()
    }

    #[test]
    fn exact_funding_is_funded() {
        let inst = single(10.0, 5.0, 1.0);
        let out = evaluate(&inst, &ContributionProfile::new(vec![vec![5.0]])).unwrap();
        assert_eq!(out.funded, vec![true]);
        assert_eq!(out.agent_utilities, vec![5.0]);
        assert_eq!(out.social_welfare, 5.0);
    }

    #[test]
    fn sole_contributor_takes_whole_bonus() {
        let inst = single(10.0, 5.0, 1.0);
        let out = evaluate(&inst, &ContributionProfile::new(vec![vec![2.0]])).unwrap();
        assert_eq!(out.funded, vec![false]);
        assert_eq!(out.agent_utilities, vec![1.0]);
        assert_eq!(out.social_welfare, 0.0);
    }

    #[test]
    fn proportional_refunds_sum_to_bonus() {
        let inst = Instance::new(
            vec![vec![5.0], vec![5.0]],
            vec![5.0, 5.0],
            vec![5.0],
            vec![1.0],
            RefundScheme::Ppr,
        )
        .unwrap();
        let out = evaluate(&inst, &ContributionProfile::new(vec![vec![3.0], vec![1.0]])).unwrap();
        assert!(!out.funded[0]);
        assert_relative_eq!(out.refunds[0][0], 0.75);
        assert_relative_eq!(out.refunds[1][0], 0.25);
        assert_relative_eq!(out.refunds[0][0] + out.refunds[1][0], 1.0);
    }

    #[test]
    fn empty_pool_pays_no_refund() {
        let inst = single(10.0, 5.0, 1.0);
        let out = evaluate(&inst, &ContributionProfile::zeros(1, 1)).unwrap();
        assert_eq!(out.refunds[0][0], 0.0);
    }

    #[test]
    fn evaluate_rejects_bad_profiles() {
        let inst = single(10.0, 5.0, 1.0);
        assert!(matches!(
            evaluate(&inst, &ContributionProfile::new(vec![vec![11.0]])),
            Err(ModelError::BudgetViolation { agent: 0, .. })
        ));
        assert!(matches!(
            evaluate(&inst, &ContributionProfile::new(vec![vec![1.0, 1.0]])),
            Err(ModelError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            evaluate(&inst, &ContributionProfile::new(vec![vec![-1.0]])),
            Err(ModelError::NegativeContribution { .. })
        ));
    }

    #[test]
    fn instance_validation() {
        let ok = |v: Vec<Vec<f64>>, g: Vec<f64>, t: Vec<f64>, b: Vec<f64>| {
            Instance::new(v, g, t, b, RefundScheme::Ppr)
        };
        assert!(matches!(ok(vec![], vec![], vec![1.0], vec![1.0]), Err(ModelError::Empty)));
        assert!(matches!(
            ok(vec![vec![4.0]], vec![1.0], vec![5.0], vec![1.0]),
            Err(ModelError::InsufficientInterest { .. })
        ));
        assert!(matches!(
            ok(vec![vec![6.0]], vec![1.0], vec![5.0], vec![2.0]),
            Err(ModelError::BonusTooLarge { .. })
        ));
        assert!(matches!(
            ok(vec![vec![6.0]], vec![-1.0], vec![5.0], vec![1.0]),
            Err(ModelError::NegativeBudget { .. })
        ));
        assert!(matches!(
            ok(vec![vec![-6.0]], vec![1.0], vec![5.0], vec![1.0]),
            Err(ModelError::NegativeValuation { .. })
        ));
        assert!(matches!(
            ok(vec![vec![6.0]], vec![1.0], vec![0.0], vec![1.0]),
            Err(ModelError::NonPositiveTarget { .. })
        ));
        assert!(matches!(
            ok(vec![vec![6.0]], vec![1.0], vec![5.0], vec![0.0]),
            Err(ModelError::NonPositiveBonus { .. })
        ));
        assert!(matches!(
            Instance::new(vec![vec![6.0]], vec![1.0], vec![5.0], vec![1.0], RefundScheme::LinearAdditive { slope: 0.0 }),
            Err(ModelError::Refund(_))
        ));
    }

    #[test]
    fn budget_regime_boundaries() {
        let mk = |g: Vec<f64>, t: Vec<f64>| {
            let p = t.len();
            let n = g.len();
            Instance::new(
                vec![vec![20.0; p]; n],
                g,
                t,
                vec![0.01; p],
                RefundScheme::Ppr,
            )
            .unwrap()
        };
        assert_eq!(check_budget_surplus(&mk(vec![10.0, 10.0], vec![5.0, 5.0])), BudgetRegime::Surplus);
        assert_eq!(check_budget_surplus(&mk(vec![5.0, 5.0], vec![5.0, 5.0])), BudgetRegime::Surplus);
        assert_eq!(check_budget_surplus(&mk(vec![1.0, 0.0], vec![1.0, 0.99])), BudgetRegime::Deficit);
        assert_eq!(check_budget_surplus(&mk(vec![9.91, 0.99], vec![10.0, 0.99])), BudgetRegime::Deficit);
    }

    #[test]
    fn subset_feasibility() {
        let inst = Instance::new(
            vec![vec![10.9, 0.0], vec![0.1, 0.5]],
            vec![109.0 / 11.0, 1.0 / 11.0],
            vec![10.0, 1.0 / 11.0],
            vec![1.0, 0.4],
            RefundScheme::Ppr,
        )
        .unwrap();
        let th = thresholds(&inst).unwrap();
        let empty = ProjectSet::empty();
        assert!(check_subset_feasibility(&inst, &empty, &th).unwrap());
        let first = ProjectSet::new(vec![0], 2).unwrap();
        assert!(check_subset_feasibility(&inst, &first, &th).unwrap());
        let short = inst
            .with_budgets(vec![th.get(0, 0) - 0.01, 1.0 / 11.0])
            .unwrap();
        assert!(!check_subset_feasibility(&short, &first, &th).unwrap());
        let bad = ProjectSet::from_sorted_unchecked(vec![5]);
        assert!(matches!(
            check_subset_feasibility(&inst, &bad, &th),
            Err(ModelError::ProjectOutOfRange { index: 5, .. })
        ));
    }

    #[test]
    fn evaluate_in_single_precision() {
        let inst = Instance::<f32>::new(
            vec![vec![10.0]],
            vec![10.0],
            vec![5.0],
            vec![1.0],
            RefundScheme::Ppr,
        )
        .unwrap();
        let out = evaluate(&inst, &ContributionProfile::new(vec![vec![5.0]])).unwrap();
        assert!(out.funded[0]);
        assert_eq!(out.social_welfare, 5.0f32);
    }
}
