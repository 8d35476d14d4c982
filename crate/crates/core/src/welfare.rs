//! Welfare-optimal project subsets `P*`: the budget-feasible subset of
//! projects maximizing `Σ (ϑ_j - T_j)`.
//!
//! Two solvers share one tie-break (welfare, then fewer projects, then the
//! lexicographically smallest index list): exhaustive enumeration, used as
//! the oracle, and a 0/1 knapsack DP over costs quantized to a resolution.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::knapsack;
use crate::model::{Instance, ModelError};
use crate::scalar::{at_least, Scalar};

/// Enumeration guard for [`solve_pstar_bruteforce`].
pub const MAX_BRUTEFORCE_PROJECTS: usize = 25;

/// Default DP resolution in currency units.
pub const DEFAULT_RESOLUTION: f64 = 0.01;

// Slack, in grid units, absorbed before rounding a quantized amount.
const QUANTIZE_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WelfareError {
    #[error("{p} projects is too many for enumeration (max {max})")]
    TooManyProjects { p: usize, max: usize },
    #[error("resolution must be positive and finite, got {0}")]
    InvalidResolution(f64),
    #[error("knapsack table needs {required} cells (limit {limit}); use a coarser resolution")]
    TableTooLarge { required: usize, limit: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Sorted set of distinct project indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(transparent)]
pub struct ProjectSet(Vec<usize>);

impl ProjectSet {
    pub fn new(mut indices: Vec<usize>, n_projects: usize) -> Result<Self, ModelError> {
        indices.sort_unstable();
        for w in indices.windows(2) {
            if w[0] == w[1] {
                return Err(ModelError::DuplicateProject(w[0]));
            }
        }
        if let Some(&last) = indices.last() {
            if last >= n_projects {
                return Err(ModelError::ProjectOutOfRange {
                    index: last,
                    n_projects,
                });
            }
        }
        Ok(ProjectSet(indices))
    }

    pub fn empty() -> Self {
        ProjectSet(Vec::new())
    }

    pub fn full(n_projects: usize) -> Self {
        ProjectSet((0..n_projects).collect())
    }

    /// Wraps indices without range checks; used by solvers and in tests.
    pub fn from_sorted_unchecked(indices: Vec<usize>) -> Self {
        ProjectSet(indices)
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, project: usize) -> bool {
        self.0.binary_search(&project).is_ok()
    }

    /// Membership mask over `n_projects` projects.
    pub fn mask(&self, n_projects: usize) -> Vec<bool> {
        let mut m = vec![false; n_projects];
        for &j in &self.0 {
            m[j] = true;
        }
        m
    }
}

/// What a subset is worth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    /// `Σ (ϑ_j - T_j)`.
    #[default]
    Welfare,
    /// `Σ ϑ_j`.
    Valuation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct WelfareSolution<S> {
    pub subset: ProjectSet,
    pub welfare: S,
    pub cost: S,
    pub unique: bool,
}

fn project_values<S: Scalar>(instance: &Instance<S>, objective: Objective) -> Vec<S> {
    let totals = instance.total_valuations();
    match objective {
        Objective::Welfare => totals
            .iter()
            .zip(instance.targets())
            .map(|(&v, &t)| v - t)
            .collect(),
        Objective::Valuation => totals,
    }
}

/// Objective value of `subset`.
pub fn welfare_of<S: Scalar>(instance: &Instance<S>, subset: &ProjectSet, objective: Objective) -> S {
    let values = project_values(instance, objective);
    subset.indices().iter().map(|&j| values[j]).sum()
}

fn solution<S: Scalar>(instance: &Instance<S>, subset: ProjectSet, objective: Objective, unique: bool) -> WelfareSolution<S> {
    let welfare = welfare_of(instance, &subset, objective);
    let cost = subset.indices().iter().map(|&j| instance.targets()[j]).sum();
    WelfareSolution {
        subset,
        welfare,
        cost,
        unique,
    }
}

/// Exhaustive search over all `2^p` subsets.
pub fn solve_pstar_bruteforce<S: Scalar>(
    instance: &Instance<S>,
    objective: Objective,
) -> Result<WelfareSolution<S>, WelfareError> {
    let p = instance.n_projects();
    if p > MAX_BRUTEFORCE_PROJECTS {
        return Err(WelfareError::TooManyProjects {
            p,
            max: MAX_BRUTEFORCE_PROJECTS,
        });
    }
    let values = project_values(instance, objective);
    let capacity = instance.total_budget();
    let tol = S::tolerance();

    let mut best_mask = 0u32;
    let mut best_value = S::zero();
    let mut ties = 1usize;
    for mask in 1u32..(1u32 << p) {
        let bits = (0..p).filter(|&j| mask & (1 << j) != 0);
        let cost: S = bits.clone().map(|j| instance.targets()[j]).sum();
        if !at_least(capacity, cost) {
            continue;
        }
        let value: S = bits.map(|j| values[j]).sum();
        if value > best_value + tol {
            best_mask = mask;
            best_value = value;
            ties = 1;
        } else if (value - best_value).abs() <= tol {
            ties += 1;
            if ranks_before(mask, best_mask) {
                best_mask = mask;
                best_value = value;
            }
        }
    }
    let subset = ProjectSet((0..p).filter(|&j| best_mask & (1 << j) != 0).collect());
    Ok(solution(instance, subset, objective, ties == 1))
}

/// Among equal-value subsets: fewer projects, then lexicographic index list.
fn ranks_before(a: u32, b: u32) -> bool {
    let (ca, cb) = (a.count_ones(), b.count_ones());
    if ca != cb {
        return ca < cb;
    }
    // Same cardinality: the lowest differing index decides, and the mask
    // holding it has the lexicographically smaller list.
    let diff = a ^ b;
    diff != 0 && a & (diff & diff.wrapping_neg()) != 0
}

/// Exact knapsack DP on costs rounded up and capacity rounded down to
/// multiples of `resolution`.
pub fn solve_pstar_dp<S: Scalar>(
    instance: &Instance<S>,
    resolution: S,
    objective: Objective,
) -> Result<WelfareSolution<S>, WelfareError> {
    let res = resolution.as_f64();
    if !(res > 0.0) || !res.is_finite() {
        return Err(WelfareError::InvalidResolution(res));
    }
    let capacity = quantize_down(instance.total_budget().as_f64(), res);
    let items: Vec<knapsack::Item> = project_values(instance, objective)
        .iter()
        .zip(instance.targets())
        .map(|(&v, &t)| knapsack::Item {
            weight: quantize_up(t.as_f64(), res),
            value: v.as_f64(),
        })
        .collect();
    // Items heavier than the capacity can never be chosen; cap the table.
    let required = knapsack::table_cells(items.len(), capacity);
    if required > knapsack::MAX_TABLE_CELLS {
        return Err(WelfareError::TableTooLarge {
            required,
            limit: knapsack::MAX_TABLE_CELLS,
        });
    }
    let sol = knapsack::solve(&items, capacity, S::tolerance().as_f64());
    Ok(solution(
        instance,
        ProjectSet(sol.chosen),
        objective,
        sol.unique,
    ))
}

pub(crate) fn quantize_up(amount: f64, res: f64) -> usize {
    let units = (amount / res - QUANTIZE_SLACK).ceil();
    if units <= 0.0 {
        0
    } else {
        units as usize
    }
}

pub(crate) fn quantize_down(amount: f64, res: f64) -> usize {
    let units = (amount / res + QUANTIZE_SLACK).floor();
    if units <= 0.0 {
        0
    } else if units >= usize::MAX as f64 {
        usize::MAX
    } else {
        units as usize
    }
}

/// Exact P*: enumeration when affordable, otherwise the DP at `resolution`.
pub fn solve_pstar<S: Scalar>(
    instance: &Instance<S>,
    resolution: S,
    objective: Objective,
) -> Result<WelfareSolution<S>, WelfareError> {
    if instance.n_projects() <= 16 {
        solve_pstar_bruteforce(instance, objective)
    } else {
        solve_pstar_dp(instance, resolution, objective)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::refunds::RefundScheme;

    /// One agent per budget entry; valuations split evenly to hit `vartheta`.
    fn instance(vartheta: &[f64], targets: &[f64], budget: f64) -> Instance<f64> {
        let p = vartheta.len();
        Instance::new(
            vec![vartheta.to_vec()],
            vec![budget],
            targets.to_vec(),
            vec![0.01; p],
            RefundScheme::Ppr,
        )
        .unwrap()
    }

    #[test]
    fn bruteforce_three_projects() {
        let inst = instance(&[10.0, 8.0, 6.0], &[5.0, 6.0, 2.0], 8.0);
        let s = solve_pstar_bruteforce(&inst, Objective::Welfare).unwrap();
        assert_eq!(s.subset.indices(), &[0, 2]);
        assert_eq!(s.welfare, 9.0);
        assert_eq!(s.cost, 7.0);
        assert!(s.unique);
    }

    #[test]
    fn dp_matches_bruteforce_example() {
        let inst = instance(&[10.0, 8.0, 6.0], &[5.0, 6.0, 2.0], 8.0);
        let s = solve_pstar_dp(&inst, 0.01, Objective::Welfare).unwrap();
        assert_eq!(s.subset.indices(), &[0, 2]);
        assert_eq!(s.welfare, 9.0);
        assert!(s.unique);
    }

    #[test]
    fn nothing_affordable_gives_empty_set() {
        let inst = instance(&[10.0, 8.0], &[5.0, 6.0], 4.0);
        for s in [
            solve_pstar_bruteforce(&inst, Objective::Welfare).unwrap(),
            solve_pstar_dp(&inst, 0.01, Objective::Welfare).unwrap(),
        ] {
            assert!(s.subset.is_empty());
            assert_eq!(s.welfare, 0.0);
        }
    }

    #[test]
    fn single_affordable_project() {
        let inst = instance(&[10.0], &[5.0], 5.0);
        let s = solve_pstar_dp(&inst, 0.01, Objective::Welfare).unwrap();
        assert_eq!(s.subset.indices(), &[0]);
    }

    #[test]
    fn equal_projects_tie_break_to_lowest_index() {
        let inst = instance(&[4.0, 4.0, 4.0], &[2.0, 2.0, 2.0], 2.5);
        let bf = solve_pstar_bruteforce(&inst, Objective::Welfare).unwrap();
        let dp = solve_pstar_dp(&inst, 0.01, Objective::Welfare).unwrap();
        assert_eq!(bf.subset.indices(), &[0]);
        assert_eq!(dp.subset.indices(), &[0]);
        assert!(!bf.unique);
        assert!(!dp.unique);
    }

    #[test]
    fn quoted_spot_numbers() {
        let inst = Instance::new(
            vec![vec![10.9, 0.0], vec![1.089, 1.9]],
            vec![9.91, 0.99],
            vec![10.0, 0.99],
            vec![1.0, 0.91],
            RefundScheme::Ppr,
        )
        .unwrap();
        let w0: f64 = welfare_of(&inst, &ProjectSet::new(vec![0], 2).unwrap(), Objective::Welfare);
        let w1: f64 = welfare_of(&inst, &ProjectSet::new(vec![1], 2).unwrap(), Objective::Welfare);
        assert!((w0 - 1.989).abs() < 1e-12);
        assert!((w1 - 0.91).abs() < 1e-12);
        let s = solve_pstar_bruteforce(&inst, Objective::Welfare).unwrap();
        assert_eq!(s.subset.indices(), &[0]);
    }

    #[test]
    fn welfare_of_edge_cases() {
        let inst = instance(&[10.0, 8.0, 6.0], &[5.0, 6.0, 2.0], 30.0);
        assert_eq!(welfare_of(&inst, &ProjectSet::empty(), Objective::Welfare), 0.0);
        assert_eq!(welfare_of(&inst, &ProjectSet::full(3), Objective::Welfare), 11.0);
        assert_eq!(welfare_of(&inst, &ProjectSet::full(3), Objective::Valuation), 24.0);
        let s = solve_pstar_bruteforce(&inst, Objective::Welfare).unwrap();
        assert_eq!(s.subset, ProjectSet::full(3));
    }

    #[test]
    fn valuation_objective_can_change_the_choice() {
        // Welfare prefers {1} (4 > 3); valuation prefers {0} (8 > 7).
        let inst = instance(&[8.0, 7.0], &[5.0, 3.0], 5.0);
        let w = solve_pstar_bruteforce(&inst, Objective::Welfare).unwrap();
        let v = solve_pstar_bruteforce(&inst, Objective::Valuation).unwrap();
        assert_eq!(w.subset.indices(), &[1]);
        assert_eq!(v.subset.indices(), &[0]);
        assert_eq!(solve_pstar_dp(&inst, 0.01, Objective::Valuation).unwrap().subset, v.subset);
    }

    #[test]
    fn guards() {
        let inst = instance(&[10.0], &[5.0], 5.0);
        assert!(matches!(
            solve_pstar_dp(&inst, 0.0, Objective::Welfare),
            Err(WelfareError::InvalidResolution(_))
        ));
        assert!(matches!(
            solve_pstar_dp(&inst, 1e-9, Objective::Welfare),
            Err(WelfareError::TableTooLarge { .. })
        ));
        let big = Instance::new(
            vec![vec![2.0; 26]],
            vec![1.0],
            vec![1.0; 26],
            vec![0.5; 26],
            RefundScheme::Ppr,
        )
        .unwrap();
        assert!(matches!(
            solve_pstar_bruteforce(&big, Objective::Welfare),
            Err(WelfareError::TooManyProjects { p: 26, .. })
        ));
    }

    #[test]
    fn project_set_validation() {
        assert_eq!(ProjectSet::new(vec![2, 0], 3).unwrap().indices(), &[0, 2]);
        assert!(matches!(ProjectSet::new(vec![1, 1], 3), Err(ModelError::DuplicateProject(1))));
        assert!(matches!(
            ProjectSet::new(vec![3], 3),
            Err(ModelError::ProjectOutOfRange { index: 3, .. })
        ));
    }

    #[test]
    fn rank_order() {
        assert!(ranks_before(0b001, 0b110));
        assert!(ranks_before(0b011, 0b101));
        assert!(!ranks_before(0b101, 0b011));
        assert!(ranks_before(0b100, 0b011));
    }
}
