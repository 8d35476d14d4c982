//! Combinatorial civic crowdfunding with budgeted agents.
//!
//! Agents with budgets contribute to several public projects at once; a
//! project is funded when contributions reach its target, otherwise
//! contributors share a refund bonus. The crate evaluates profiles, computes
//! welfare-optimal project subsets and single-agent best responses, builds
//! the classic counterexample instances, and runs Monte-Carlo experiments
//! with simple contribution heuristics.
//!
//! The model and solvers are generic over the currency scalar ([`Scalar`],
//! implemented for `f64` and `f32`). The aliases below fix it to `f64`,
//! which is what the sampler, harness and command line use.

pub mod bestresponse;
pub mod generators;
pub mod harness;
pub mod heuristics;
pub mod io;
mod knapsack;
pub mod model;
pub mod refunds;
pub mod scalar;
pub mod welfare;

pub use scalar::Scalar;

pub type Instance = model::Instance<f64>;
pub type ContributionProfile = model::ContributionProfile<f64>;
pub type Outcome = model::Outcome<f64>;
pub type RefundScheme = refunds::RefundScheme<f64>;
pub type ThresholdMatrix = refunds::ThresholdMatrix<f64>;
pub type WelfareSolution = welfare::WelfareSolution<f64>;
pub type ResidualView = bestresponse::ResidualView<f64>;
pub type BestResponse = bestresponse::BestResponse<f64>;

pub type InstanceF32 = model::Instance<f32>;
pub type ContributionProfileF32 = model::ContributionProfile<f32>;
pub type OutcomeF32 = model::Outcome<f32>;
pub type RefundSchemeF32 = refunds::RefundScheme<f32>;
pub type ThresholdMatrixF32 = refunds::ThresholdMatrix<f32>;
