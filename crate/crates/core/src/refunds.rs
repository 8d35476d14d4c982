//! Refund schemes, contribution-monotonicity certification and the
//! equilibrium thresholds `x̄_ij`.
//!
//! A threshold is the contribution at which an agent's funded utility
//! `θ - x` equals its refund `R(x, B, C)`. Contributing more than the
//! threshold to a project is never an equilibrium move: the agent would
//! rather see the project fail and collect the refund.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Instance;
use crate::scalar::Scalar;

const MAX_BISECTION_ITERATIONS: usize = 200;
const MIN_GRID_POINTS: usize = 100;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RefundError {
    #[error("{what} must be non-negative, got {value}")]
    NegativeInput { what: &'static str, value: f64 },
    #[error("contribution {contribution} exceeds pool total {total}")]
    ContributionExceedsTotal { contribution: f64, total: f64 },
    #[error("linear refund slope must be positive, got {0}")]
    InvalidSlope(f64),
    #[error("degenerate probe grid: {0}")]
    DegenerateGrid(String),
    #[error(
        "refund is not strictly increasing at x = {x} (bonus {bonus}, others {others_total}): forward difference {forward_difference}"
    )]
    NotMonotone {
        x: f64,
        bonus: f64,
        others_total: f64,
        forward_difference: f64,
    },
    #[error("no sign change on [{lo}, {hi}]: g(lo) = {at_lo}, g(hi) = {at_hi}")]
    NoSignChange {
        lo: f64,
        hi: f64,
        at_lo: f64,
        at_hi: f64,
    },
    #[error("bisection did not converge after {iterations} iterations (bracket width {width})")]
    NoConvergence { iterations: usize, width: f64 },
}

/// A refund rule `R(x, B, C)`: the refund an agent contributing `x` to an
/// unfunded project with bonus `B` and pool total `C` receives.
pub trait RefundRule<S: Scalar> {
    fn refund(&self, contribution: S, bonus: S, total: S) -> S;

    fn label(&self) -> String;
}

/// The refund schemes shipped with the engine.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "kebab-case")]
#[serde(bound = "S: Scalar")]
pub enum RefundScheme<S> {
    /// Provision point with refunds: `(x / C) · B`, zero on an empty pool.
    Ppr,
    /// Sum-additive refund `a · x`.
    LinearAdditive { slope: S },
}

impl<S: Scalar> Default for RefundScheme<S> {
    fn default() -> Self {
        RefundScheme::Ppr
    }
}

impl<S: Scalar> RefundScheme<S> {
    pub fn linear(slope: S) -> Result<Self, RefundError> {
        if !(slope > S::zero()) || !slope.is_finite() {
            return Err(RefundError::InvalidSlope(slope.as_f64()));
        }
        Ok(RefundScheme::LinearAdditive { slope })
    }

    pub fn validate(&self) -> Result<(), RefundError> {
        match *self {
            RefundScheme::Ppr => Ok(()),
            RefundScheme::LinearAdditive { slope } => Self::linear(slope).map(|_| ()),
        }
    }

    /// `Σ_j R(x_j) = R(Σ_j x_j)`: the refund can be pooled across projects.
    pub fn is_sum_additive(&self) -> bool {
        matches!(self, RefundScheme::LinearAdditive { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            RefundScheme::Ppr => "ppr",
            RefundScheme::LinearAdditive { .. } => "linear-additive",
        }
    }

    /// Default linear slope `min_j(ϑ_j - T_j) / max_j ϑ_j`.
    pub fn default_linear_slope(instance: &Instance<S>) -> S {
        let totals = instance.total_valuations();
        let min_margin = totals
            .iter()
            .zip(instance.targets())
            .map(|(&v, &t)| v - t)
            .fold(S::infinity(), S::min);
        let max_total = totals.iter().copied().fold(S::zero(), S::max);
        min_margin / max_total
    }
}

impl<S: Scalar> RefundRule<S> for RefundScheme<S> {
    fn refund(&self, contribution: S, bonus: S, total: S) -> S {
        match *self {
            RefundScheme::Ppr => {
                if total <= S::zero() {
                    S::zero()
                } else {
                    contribution / total * bonus
                }
            }
            RefundScheme::LinearAdditive { slope } => slope * contribution,
        }
    }

    fn label(&self) -> String {
        self.name().to_string()
    }
}

/// Scheme selector used by configs and the command line. The linear slope
/// is resolved against an instance when not given explicitly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RefundSchemeId {
    #[default]
    Ppr,
    LinearAdditive,
}

impl RefundSchemeId {
    pub fn name(self) -> &'static str {
        match self {
            RefundSchemeId::Ppr => "ppr",
            RefundSchemeId::LinearAdditive => "linear-additive",
        }
    }

    pub fn resolve<S: Scalar>(
        self,
        instance: &Instance<S>,
        slope: Option<S>,
    ) -> Result<RefundScheme<S>, RefundError> {
        match self {
            RefundSchemeId::Ppr => Ok(RefundScheme::Ppr),
            RefundSchemeId::LinearAdditive => RefundScheme::linear(
                slope.unwrap_or_else(|| RefundScheme::default_linear_slope(instance)),
            ),
        }
    }
}

impl std::str::FromStr for RefundSchemeId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ppr" => Ok(RefundSchemeId::Ppr),
            "linear-additive" => Ok(RefundSchemeId::LinearAdditive),
            other => Err(format!("unknown refund scheme {other:?} (expected ppr or linear-additive)")),
        }
    }
}

/// Checked refund share for a single agent.
pub fn refund_share<S: Scalar>(
    scheme: &RefundScheme<S>,
    contribution: S,
    bonus: S,
    total: S,
) -> Result<S, RefundError> {
    for (what, value) in [
        ("contribution", contribution),
        ("bonus", bonus),
        ("total", total),
    ] {
        if value < S::zero() {
            return Err(RefundError::NegativeInput {
                what,
                value: value.as_f64(),
            });
        }
    }
    if contribution > total + S::tolerance() {
        return Err(RefundError::ContributionExceedsTotal {
            contribution: contribution.as_f64(),
            total: total.as_f64(),
        });
    }
    Ok(scheme.refund(contribution, bonus, total))
}

/// Pool total used when an agent's refund depends on `C`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PoolConvention {
    /// `C = T`: the pool sits exactly at the provision point.
    #[default]
    ProvisionPoint,
    /// `C = others + x`: the agent's own contribution grows the pool.
    OwnPlusOthers,
}

impl PoolConvention {
    fn pool<S: Scalar>(self, contribution: S, target: S, others_total: S) -> S {
        match self {
            PoolConvention::ProvisionPoint => target,
            PoolConvention::OwnPlusOthers => others_total + contribution,
        }
    }
}

/// A refund-bonus / other-contributions context probed by [`certify_cm`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeContext<S> {
    pub bonus: S,
    pub others_total: S,
}

/// Probe grid `x ∈ (0, x_max]` with `points` equally spaced samples.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec<S> {
    pub x_max: S,
    pub points: usize,
    pub contexts: Vec<ProbeContext<S>>,
}

impl<S: Scalar> GridSpec<S> {
    pub fn standard(x_max: S) -> Self {
        let ctx = |b: f64, o: f64| ProbeContext {
            bonus: S::lit(b),
            others_total: S::lit(o),
        };
        GridSpec {
            x_max,
            points: 200,
            contexts: vec![ctx(1.0, 1.0), ctx(2.0, 5.0), ctx(10.0, 0.5), ctx(0.1, 20.0)],
        }
    }

    pub fn step(&self) -> S {
        self.x_max / S::from_usize(self.points).unwrap_or_else(S::one)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CmReport<S> {
    pub scheme: String,
    pub probes: usize,
    pub step: S,
    pub min_forward_difference: S,
}

/// Numerically certifies contribution monotonicity: `R(x + h) > R(x)` on
/// every adjacent pair of grid points, with `C = others + x`.
pub fn certify_cm<S: Scalar, R: RefundRule<S> + ?Sized>(
    rule: &R,
    grid: &GridSpec<S>,
) -> Result<CmReport<S>, RefundError> {
    if grid.points < MIN_GRID_POINTS {
        return Err(RefundError::DegenerateGrid(format!(
            "{} points, need at least {MIN_GRID_POINTS}",
            grid.points
        )));
    }
    if !(grid.x_max > S::zero()) || !grid.x_max.is_finite() {
        return Err(RefundError::DegenerateGrid(format!(
            "x_max = {}",
            grid.x_max
        )));
    }
    if grid.contexts.is_empty() {
        return Err(RefundError::DegenerateGrid("no probe contexts".into()));
    }
    if let Some(bad) = grid
        .contexts
        .iter()
        .find(|c| c.bonus <= S::zero() || c.others_total < S::zero())
    {
        return Err(RefundError::DegenerateGrid(format!(
            "invalid context bonus {} others {}",
            bad.bonus, bad.others_total
        )));
    }

    let h = grid.step();
    let mut min_diff = S::infinity();
    let mut probes = 0;
    for ctx in &grid.contexts {
        let at = |k: usize| {
            let x = h * S::from_usize(k).unwrap();
            rule.refund(x, ctx.bonus, ctx.others_total + x)
        };
        let mut prev = at(1);
        for k in 2..=grid.points {
            let cur = at(k);
            let diff = cur - prev;
            probes += 1;
            if !(diff > S::zero()) {
                return Err(RefundError::NotMonotone {
                    x: (h * S::from_usize(k - 1).unwrap()).as_f64(),
                    bonus: ctx.bonus.as_f64(),
                    others_total: ctx.others_total.as_f64(),
                    forward_difference: diff.as_f64(),
                });
            }
            min_diff = min_diff.min(diff);
            prev = cur;
        }
    }
    Ok(CmReport {
        scheme: rule.label(),
        probes,
        step: h,
        min_forward_difference: min_diff,
    })
}

/// Closed-form PPR threshold `T·θ / (B + T)`.
pub fn threshold_ppr<S: Scalar>(theta: S, target: S, bonus: S) -> S {
    target * theta / (bonus + target)
}

/// Solves `θ - x = R(x, B, C(x))` on `[0, θ]` by bisection.
pub fn threshold_general<S: Scalar, R: RefundRule<S> + ?Sized>(
    rule: &R,
    theta: S,
    target: S,
    bonus: S,
    others_total: S,
    convention: PoolConvention,
) -> Result<S, RefundError> {
    if theta < S::zero() {
        return Err(RefundError::NegativeInput {
            what: "valuation",
            value: theta.as_f64(),
        });
    }
    if theta == S::zero() {
        return Ok(S::zero());
    }
    let gap = |x: S| theta - x - rule.refund(x, bonus, convention.pool(x, target, others_total));

    let (mut lo, mut hi) = (S::zero(), theta);
    let (g_lo, g_hi) = (gap(lo), gap(hi));
    if g_lo < S::zero() || g_hi > S::zero() {
        return Err(RefundError::NoSignChange {
            lo: lo.as_f64(),
            hi: hi.as_f64(),
            at_lo: g_lo.as_f64(),
            at_hi: g_hi.as_f64(),
        });
    }
    if g_lo == S::zero() {
        return Ok(lo);
    }
    if g_hi == S::zero() {
        return Ok(hi);
    }

    let two = S::lit(2.0);
    for _ in 0..MAX_BISECTION_ITERATIONS {
        let mid = (lo + hi) / two;
        // Interval can no longer shrink at this precision.
        if mid <= lo || mid >= hi || hi - lo <= S::root_tolerance() {
            return Ok(mid);
        }
        if gap(mid) > S::zero() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if hi - lo <= S::root_tolerance() {
        return Ok((lo + hi) / two);
    }
    Err(RefundError::NoConvergence {
        iterations: MAX_BISECTION_ITERATIONS,
        width: (hi - lo).as_f64(),
    })
}

/// Threshold for one scheme under the provision-point convention.
/// PPR uses its closed form, other schemes go through bisection.
pub fn threshold_for<S: Scalar>(
    scheme: &RefundScheme<S>,
    theta: S,
    target: S,
    bonus: S,
) -> Result<S, RefundError> {
    match scheme {
        RefundScheme::Ppr => {
            if theta < S::zero() {
                return Err(RefundError::NegativeInput {
                    what: "valuation",
                    value: theta.as_f64(),
                });
            }
            Ok(threshold_ppr(theta, target, bonus))
        }
        other => threshold_general(
            other,
            theta,
            target,
            bonus,
            S::zero(),
            PoolConvention::ProvisionPoint,
        ),
    }
}

/// The `n × p` matrix of thresholds `x̄_ij`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct ThresholdMatrix<S>(Vec<Vec<S>>);

impl<S: Scalar> ThresholdMatrix<S> {
    pub fn from_rows(rows: Vec<Vec<S>>) -> Self {
        ThresholdMatrix(rows)
    }

    pub fn get(&self, agent: usize, project: usize) -> S {
        self.0[agent][project]
    }

    pub fn row(&self, agent: usize) -> &[S] {
        &self.0[agent]
    }

    pub fn rows(&self) -> &[Vec<S>] {
        &self.0
    }

    pub fn n_agents(&self) -> usize {
        self.0.len()
    }

    pub fn n_projects(&self) -> usize {
        self.0.first().map_or(0, Vec::len)
    }

    pub fn column_sum(&self, project: usize) -> S {
        self.0.iter().map(|r| r[project]).sum()
    }

    /// `Σ_{j ∈ subset} x̄_ij` for one agent.
    pub fn subset_sum(&self, agent: usize, subset: &[usize]) -> S {
        subset.iter().map(|&j| self.0[agent][j]).sum()
    }
}

/// Thresholds for every (agent, project) pair under the instance's schemes.
pub fn thresholds<S: Scalar>(instance: &Instance<S>) -> Result<ThresholdMatrix<S>, RefundError> {
    thresholds_with(instance, |j| *instance.scheme_for(j))
}

/// Thresholds computed with PPR regardless of the instance's scheme.
pub fn ppr_thresholds<S: Scalar>(instance: &Instance<S>) -> ThresholdMatrix<S> {
    thresholds_with(instance, |_| RefundScheme::Ppr).expect("closed form cannot fail")
}

fn thresholds_with<S: Scalar>(
    instance: &Instance<S>,
    scheme_of: impl Fn(usize) -> RefundScheme<S>,
) -> Result<ThresholdMatrix<S>, RefundError> {
    let schemes: Vec<_> = (0..instance.n_projects()).map(scheme_of).collect();
    let rows = instance
        .valuations()
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .map(|(j, &theta)| {
                    threshold_for(
                        &schemes[j],
                        theta,
                        instance.targets()[j],
                        instance.bonuses()[j],
                    )
                })
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ThresholdMatrix(rows))
}
