//! Contribution heuristics and the sequential play-out that clamps their
//! intents into a feasible profile.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ContributionProfile, Instance, ModelError};
use crate::refunds::ThresholdMatrix;
use crate::scalar::Scalar;
use crate::welfare::ProjectSet;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HeuristicError {
    #[error("opt-welfare needs the welfare-optimal subset")]
    MissingPstar,
    #[error("unknown heuristic {0:?}")]
    Unknown(String),
    #[error("agent {agent} out of range (n = {n_agents})")]
    AgentOutOfRange { agent: usize, n_agents: usize },
    #[error("assignment covers {found} agents, instance has {expected}")]
    AssignmentSize { expected: usize, found: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeuristicId {
    Symmetric,
    Weighted,
    GreedyTheta,
    GreedyVartheta,
    OptWelfare,
}

impl HeuristicId {
    pub const ALL: [HeuristicId; 5] = [
        HeuristicId::Symmetric,
        HeuristicId::Weighted,
        HeuristicId::GreedyTheta,
        HeuristicId::GreedyVartheta,
        HeuristicId::OptWelfare,
    ];

    /// Everything except the baseline.
    pub const DEVIANT: [HeuristicId; 4] = [
        HeuristicId::Symmetric,
        HeuristicId::Weighted,
        HeuristicId::GreedyTheta,
        HeuristicId::GreedyVartheta,
    ];

    pub fn name(self) -> &'static str {
        match self {
            HeuristicId::Symmetric => "symmetric",
            HeuristicId::Weighted => "weighted",
            HeuristicId::GreedyTheta => "greedy-theta",
            HeuristicId::GreedyVartheta => "greedy-vartheta",
            HeuristicId::OptWelfare => "opt-welfare",
        }
    }
}

impl fmt::Display for HeuristicId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for HeuristicId {
    type Err = HeuristicError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        HeuristicId::ALL
            .into_iter()
            .find(|h| h.name() == s)
            .ok_or_else(|| HeuristicError::Unknown(s.to_string()))
    }
}

/// One heuristic per agent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    heuristics: Vec<HeuristicId>,
    deviator_mask: Vec<bool>,
}

impl Assignment {
    pub fn new(heuristics: Vec<HeuristicId>) -> Self {
        let deviator_mask = heuristics
            .iter()
            .map(|&h| h != HeuristicId::OptWelfare)
            .collect();
        Assignment {
            heuristics,
            deviator_mask,
        }
    }

    pub fn uniform(n_agents: usize, heuristic: HeuristicId) -> Self {
        Assignment::new(vec![heuristic; n_agents])
    }

    /// `deviant` for the listed agents, opt-welfare for everyone else.
    pub fn with_deviators(n_agents: usize, deviators: &[usize], deviant: HeuristicId) -> Self {
        let mut heuristics = vec![HeuristicId::OptWelfare; n_agents];
        for &i in deviators {
            heuristics[i] = deviant;
        }
        Assignment::new(heuristics)
    }

    pub fn heuristics(&self) -> &[HeuristicId] {
        &self.heuristics
    }

    pub fn deviator_mask(&self) -> &[bool] {
        &self.deviator_mask
    }

    pub fn len(&self) -> usize {
        self.heuristics.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heuristics.is_empty()
    }
}

/// Order in which agents act on each project during play-out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case", tag = "mode", content = "seed")]
pub enum PlayOrder {
    #[default]
    Ascending,
    /// A fixed random permutation of the agents drawn from this seed.
    Seeded(u64),
}

impl PlayOrder {
    pub fn agents(self, n_agents: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n_agents).collect();
        if let PlayOrder::Seeded(seed) = self {
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        }
        order
    }
}

/// What `agent` would like to contribute under `heuristic`, before clamping.
pub fn intent<S: Scalar>(
    heuristic: HeuristicId,
    instance: &Instance<S>,
    agent: usize,
    pstar: Option<&ProjectSet>,
    thresholds: &ThresholdMatrix<S>,
) -> Result<Vec<S>, HeuristicError> {
    if agent >= instance.n_agents() {
        return Err(HeuristicError::AgentOutOfRange {
            agent,
            n_agents: instance.n_agents(),
        });
    }
    let p = instance.n_projects();
    let budget = instance.budgets()[agent];
    let theta = &instance.valuations()[agent];
    let xbar = thresholds.row(agent);
    let zero = S::zero();

    let row = match heuristic {
        HeuristicId::Symmetric => {
            let share = budget / S::from_usize(p).unwrap();
            theta.iter().map(|&t| t.min(share)).collect()
        }
        HeuristicId::Weighted => {
            let total: S = theta.iter().copied().sum();
            if total > zero {
                theta.iter().map(|&t| t / total * budget).collect()
            } else {
                vec![zero; p]
            }
        }
        HeuristicId::GreedyTheta => {
            let mut order: Vec<usize> = (0..p).collect();
            order.sort_by(|&a, &b| theta[b].partial_cmp(&theta[a]).unwrap());
            greedy(&order, xbar, budget)
        }
        HeuristicId::GreedyVartheta => {
            let totals = instance.total_valuations();
            let ratio: Vec<S> = totals
                .iter()
                .zip(instance.targets())
                .map(|(&v, &t)| v / t)
                .collect();
            let mut order: Vec<usize> = (0..p).collect();
            order.sort_by(|&a, &b| ratio[b].partial_cmp(&ratio[a]).unwrap());
            greedy(&order, xbar, budget)
        }
        HeuristicId::OptWelfare => {
            let pstar = pstar.ok_or(HeuristicError::MissingPstar)?;
            let mut row = greedy(pstar.indices(), xbar, budget);
            let spent: S = row.iter().copied().sum();
            let rest: Vec<usize> = (0..p).filter(|&j| !pstar.contains(j)).collect();
            let left = budget - spent;
            if !rest.is_empty() && left > zero {
                let share = left / S::from_usize(rest.len()).unwrap();
                for j in rest {
                    row[j] = share;
                }
            }
            row
        }
    };
    Ok(row)
}

/// Thresholds in `order` until the budget runs out; the last project gets
/// whatever is left.
fn greedy<S: Scalar>(order: &[usize], xbar: &[S], budget: S) -> Vec<S> {
    let mut row = vec![S::zero(); xbar.len()];
    let mut left = budget;
    for &j in order {
        if left <= S::zero() {
            break;
        }
        let give = xbar[j].min(left);
        row[j] = give;
        left = left - give;
    }
    row
}

/// Plays the assignment: projects in index order, agents in `order`, each
/// agent giving the smaller of its intent and what the project still needs.
pub fn play<S: Scalar>(
    instance: &Instance<S>,
    assignment: &Assignment,
    pstar: Option<&ProjectSet>,
    thresholds: &ThresholdMatrix<S>,
    order: PlayOrder,
) -> Result<ContributionProfile<S>, HeuristicError> {
    let n = instance.n_agents();
    if assignment.len() != n {
        return Err(HeuristicError::AssignmentSize {
            expected: n,
            found: assignment.len(),
        });
    }
    if thresholds.n_agents() != n || thresholds.n_projects() != instance.n_projects() {
        return Err(ModelError::DimensionMismatch {
            what: "threshold matrix".into(),
            expected: n,
            found: thresholds.n_agents(),
        }
        .into());
    }
    let intents = (0..n)
        .map(|i| intent(assignment.heuristics()[i], instance, i, pstar, thresholds))
        .collect::<Result<Vec<_>, _>>()?;

    let agents = order.agents(n);
    let mut profile = ContributionProfile::zeros(n, instance.n_projects());
    for (j, &target) in instance.targets().iter().enumerate() {
        let mut total = S::zero();
        for &i in &agents {
            let need = (target - total).max(S::zero());
            let give = intents[i][j].min(need);
            profile.contributions[i][j] = give;
            total = total + give;
        }
    }
    Ok(profile)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::evaluate;
    use crate::refunds::{thresholds, RefundScheme};

    fn one_agent(theta: Vec<f64>, budget: f64, targets: Vec<f64>) -> Instance<f64> {
        let p = theta.len();
        Instance::new(vec![theta], vec![budget], targets, vec![0.5; p], RefundScheme::Ppr).unwrap()
    }

    #[test]
    fn symmetric_splits_evenly() {
        let inst = one_agent(vec![50.0; 5], 10.0, vec![20.0; 5]);
        let th = thresholds(&inst).unwrap();
        let row = intent(HeuristicId::Symmetric, &inst, 0, None, &th).unwrap();
        assert_eq!(row, vec![2.0; 5]);
    }

    #[test]
    fn weighted_is_proportional() {
        let inst = one_agent(vec![1.0, 3.0], 8.0, vec![0.5, 0.5]);
        let th = thresholds(&inst).unwrap();
        let row = intent(HeuristicId::Weighted, &inst, 0, None, &th).unwrap();
        assert_eq!(row, vec![2.0, 6.0]);
    }

    #[test]
    fn greedy_theta_hand_trace() {
        let inst = one_agent(vec![5.0, 9.0], 4.0, vec![1.0, 1.0]);
        let th = ThresholdMatrix::from_rows(vec![vec![2.0, 3.0]]);
        let row = intent(HeuristicId::GreedyTheta, &inst, 0, None, &th).unwrap();
        assert_eq!(row, vec![1.0, 3.0]);
    }

    #[test]
    fn opt_welfare_requires_pstar() {
        let inst = one_agent(vec![5.0, 9.0], 4.0, vec![1.0, 1.0]);
        let th = thresholds(&inst).unwrap();
        assert_eq!(
            intent(HeuristicId::OptWelfare, &inst, 0, None, &th),
            Err(HeuristicError::MissingPstar)
        );
    }

    #[test]
    fn opt_welfare_spreads_leftover_outside_pstar() {
        let inst = one_agent(vec![5.0, 9.0, 4.0], 6.0, vec![1.0, 1.0, 1.0]);
        let th = ThresholdMatrix::from_rows(vec![vec![2.0, 3.0, 1.0]]);
        let pstar = ProjectSet::new(vec![1], 3).unwrap();
        let row = intent(HeuristicId::OptWelfare, &inst, 0, Some(&pstar), &th).unwrap();
        assert_eq!(row, vec![1.5, 3.0, 1.5]);
    }

    #[test]
    fn single_agent_clamped_at_target() {
        let inst = one_agent(vec![10.0], 8.0, vec![5.0]);
        let th = thresholds(&inst).unwrap();
        let profile = play(
            &inst,
            &Assignment::uniform(1, HeuristicId::Symmetric),
            None,
            &th,
            PlayOrder::Ascending,
        )
        .unwrap();
        assert_eq!(profile.contributions, vec![vec![5.0]]);
    }

    #[test]
    fn second_agent_clamped() {
        let inst = Instance::new(
            vec![vec![10.0], vec![10.0]],
            vec![4.0, 4.0],
            vec![6.0],
            vec![1.0],
            RefundScheme::Ppr,
        )
        .unwrap();
        let th = thresholds(&inst).unwrap();
        let a = Assignment::uniform(2, HeuristicId::Symmetric);
        let asc = play(&inst, &a, None, &th, PlayOrder::Ascending).unwrap();
        assert_eq!(asc.contributions, vec![vec![4.0], vec![2.0]]);
        let out = evaluate(&inst, &asc).unwrap();
        assert_eq!(out.totals, vec![6.0]);
        assert!(out.funded[0]);
    }

    #[test]
    fn assignment_mask_and_names() {
        let a = Assignment::with_deviators(4, &[1, 3], HeuristicId::Weighted);
        assert_eq!(a.deviator_mask(), &[false, true, false, true]);
        for h in HeuristicId::ALL {
            assert_eq!(h.name().parse::<HeuristicId>().unwrap(), h);
        }
        assert!("greedy".parse::<HeuristicId>().is_err());
    }

    #[test]
    fn seeded_order_is_a_permutation() {
        let mut order = PlayOrder::Seeded(7).agents(10);
        assert_eq!(order, PlayOrder::Seeded(7).agents(10));
        order.sort();
        assert_eq!(order, (0..10).collect::<Vec<_>>());
    }
}
