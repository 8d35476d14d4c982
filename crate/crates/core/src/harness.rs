//! Monte-Carlo experiments: a fraction `α` of agents deviates to one
//! heuristic while the rest play opt-welfare, and we record normalized
//! welfare and utilities.
//!
//! All cells share the same instances (instance `k` is drawn from stream
//! `k` of the experiment seed), and each instance carries one random agent
//! permutation whose first `⌊αn⌋` entries are the deviators, so deviator
//! sets are nested across `α`. Results depend only on the config, never on
//! thread count or scheduling.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::generators::{sample_indexed, GeneratorError, SampledInstance, SamplerConfig};
use crate::heuristics::{play, Assignment, HeuristicError, HeuristicId, PlayOrder};
use crate::io::{to_canonical_json, IoError};
use crate::model::{evaluate, Instance, ModelError, Outcome};
use crate::refunds::{ppr_thresholds, ThresholdMatrix};
use crate::scalar::Scalar;

/// Instance count per cell behind `--full-scale`.
pub const FULL_SCALE_INSTANCES: usize = 100_000;
pub const CSV_HEADER: [&str; 11] = [
    "heuristic",
    "alpha",
    "instances",
    "sw_n_mean",
    "sw_n_se",
    "au_n_mean",
    "au_n_se",
    "au_n_dev_mean",
    "au_n_nondev_mean",
    "excluded_cells",
    "seed",
];

const DEVIATOR_SALT: u64 = 0x6465_7669_6174_6f72;
const ORDER_SALT: u64 = 0x6f72_6465_7273_6565;
const CHUNK: usize = 512;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),
    #[error("instance {index}: {source}")]
    Sampling {
        index: usize,
        #[source]
        source: GeneratorError,
    },
    #[error(transparent)]
    Heuristic(#[from] HeuristicError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("cannot write results: {0}")]
    Write(#[from] std::io::Error),
    #[error("cannot write CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("cannot build worker pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum OrderMode {
    #[default]
    Ascending,
    /// A fresh seeded agent permutation per instance.
    Seeded,
}

/// Thresholds used in the denominator of AU_N.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum AuBaseline {
    /// PPR thresholds whatever the experiment's scheme.
    #[default]
    Ppr,
    /// Thresholds of the experiment's own scheme.
    SchemeMatched,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub sampler: SamplerConfig,
    pub alphas: Vec<f64>,
    pub deviant_heuristics: Vec<HeuristicId>,
    pub instances_per_cell: usize,
    /// Drives sampling, deviator choice and play order; overrides the
    /// sampler's own seed.
    pub seed: u64,
    pub play_order: OrderMode,
    /// Grid unit for best-response computations on experiment instances.
    pub delta: f64,
    /// Adds all-opt-welfare rows as a reference.
    pub include_control: bool,
    pub au_baseline: AuBaseline,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            sampler: SamplerConfig::default(),
            alphas: (1..=10).map(|k| k as f64 / 10.0).collect(),
            deviant_heuristics: HeuristicId::DEVIANT.to_vec(),
            instances_per_cell: 1000,
            seed: 0,
            play_order: OrderMode::Ascending,
            delta: crate::bestresponse::DEFAULT_DELTA,
            include_control: true,
            au_baseline: AuBaseline::Ppr,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: String| Err(HarnessError::InvalidConfig(msg));
        if self.alphas.is_empty() {
            return bad("no alphas".into());
        }
        if let Some(a) = self.alphas.iter().find(|&&a| !(a > 0.0 && a <= 1.0)) {
            return bad(format!("alpha {a} outside (0, 1]"));
        }
        if self.alphas.windows(2).any(|w| !(w[0] < w[1])) {
            return bad("alphas must be strictly ascending".into());
        }
        if self.deviant_heuristics.contains(&HeuristicId::OptWelfare) {
            return bad("opt-welfare is the baseline, not a deviant heuristic".into());
        }
        if self.deviant_heuristics.is_empty() && !self.include_control {
            return bad("nothing to run".into());
        }
        if self.instances_per_cell == 0 {
            return bad("instances_per_cell must be positive".into());
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return bad(format!("delta {} must be positive", self.delta));
        }
        self.sampler
            .validate()
            .map_err(|e| HarnessError::InvalidConfig(e.to_string()))
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> Result<String, HarnessError> {
        let digest = Sha256::digest(to_canonical_json(self)?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}

/// Welfare of the outcome relative to the optimum; undefined when the
/// optimum has no welfare.
pub fn sw_n<S: Scalar>(outcome: &Outcome<S>, pstar_welfare: S) -> Option<S> {
    (pstar_welfare > S::tolerance()).then(|| outcome.social_welfare / pstar_welfare)
}

/// Per-agent `Σ_j (θ_ij - x̄_ij)`: the utility of paying the threshold on
/// every project with every project funded.
pub fn au_baselines<S: Scalar>(instance: &Instance<S>, thresholds: &ThresholdMatrix<S>) -> Vec<S> {
    instance
        .valuations()
        .iter()
        .zip(thresholds.rows())
        .map(|(theta, xbar)| theta.iter().zip(xbar).map(|(&t, &x)| t - x).sum())
        .collect()
}

/// Agent utilities over their baselines; `None` where the baseline vanishes.
pub fn au_n<S: Scalar>(
    instance: &Instance<S>,
    outcome: &Outcome<S>,
    thresholds: &ThresholdMatrix<S>,
) -> Vec<Option<S>> {
    normalize(&outcome.agent_utilities, &au_baselines(instance, thresholds))
}

fn normalize<S: Scalar>(utilities: &[S], baselines: &[S]) -> Vec<Option<S>> {
    utilities
        .iter()
        .zip(baselines)
        .map(|(&u, &b)| (b > S::tolerance()).then(|| u / b))
        .collect()
}

/// Mean AU_N of deviators and of everyone else; `None` for an empty class.
pub fn deviation_split(au: &[Option<f64>], deviator_mask: &[bool]) -> (Option<f64>, Option<f64>) {
    let class_mean = |want: bool| {
        let values: Vec<f64> = au
            .iter()
            .zip(deviator_mask)
            .filter(|&(_, &d)| d == want)
            .filter_map(|(&v, _)| v)
            .collect();
        mean(&values)
    };
    (class_mean(true), class_mean(false))
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| crate::scalar::compensated_sum(values.iter().copied()) / values.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRow {
    pub heuristic: HeuristicId,
    pub alpha: f64,
    pub instances: usize,
    pub sw_n_mean: Option<f64>,
    pub sw_n_se: Option<f64>,
    pub au_n_mean: Option<f64>,
    pub au_n_se: Option<f64>,
    pub au_n_dev_mean: Option<f64>,
    pub au_n_nondev_mean: Option<f64>,
    /// Instances whose SW_N was undefined and left out of the means.
    pub excluded_cells: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub instances_per_cell: usize,
    /// Sampler draws over all instances, rejected ones included.
    pub sampler_draws: usize,
    /// Agents left out of AU_N means because their baseline vanished.
    pub excluded_agents: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub rows: Vec<CellRow>,
    pub metadata: ReportMetadata,
}

impl ExperimentReport {
    pub fn row(&self, heuristic: HeuristicId, alpha: f64) -> Option<&CellRow> {
        self.rows
            .iter()
            .find(|r| r.heuristic == heuristic && (r.alpha - alpha).abs() < 1e-12)
    }

    pub fn curve(&self, heuristic: HeuristicId) -> Vec<&CellRow> {
        self.rows.iter().filter(|r| r.heuristic == heuristic).collect()
    }
}

/// Running mean and variance with compensated sums.
#[derive(Debug, Clone, Default)]
struct Moments {
    count: usize,
    sum: Kahan,
    sum_sq: Kahan,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.count += 1;
        self.sum.add(x);
        self.sum_sq.add(x * x);
    }

    fn mean(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum.value() / self.count as f64)
    }

    fn standard_error(&self) -> Option<f64> {
        let m = self.mean()?;
        if self.count < 2 {
            return Some(0.0);
        }
        let k = self.count as f64;
        let var = ((self.sum_sq.value() - k * m * m) / (k - 1.0)).max(0.0);
        Some((var / k).sqrt())
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Kahan {
    sum: f64,
    carry: f64,
}

impl Kahan {
    fn add(&mut self, x: f64) {
        let y = x - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum
    }
}

#[derive(Debug, Clone, Default)]
struct CellAccumulator {
    sw: Moments,
    au: Moments,
    dev: Moments,
    nondev: Moments,
    excluded: usize,
}

#[derive(Debug, Clone, Copy)]
struct CellSample {
    sw: Option<f64>,
    au: Option<f64>,
    dev: Option<f64>,
    nondev: Option<f64>,
}

struct InstanceResult {
    cells: Vec<CellSample>,
    draws: usize,
    excluded_agents: usize,
}

fn cells(cfg: &ExperimentConfig) -> Vec<(HeuristicId, f64)> {
    let mut heuristics = cfg.deviant_heuristics.clone();
    if cfg.include_control {
        heuristics.push(HeuristicId::OptWelfare);
    }
    heuristics
        .into_iter()
        .flat_map(|h| cfg.alphas.iter().map(move |&a| (h, a)))
        .collect()
}

/// Worker pool capped by `CCFUND_THREADS` when set.
pub fn worker_pool() -> Result<rayon::ThreadPool, HarnessError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = std::env::var("CCFUND_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
    {
        builder = builder.num_threads(n);
    }
    Ok(builder.build()?)
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport, HarnessError> {
    cfg.validate()?;
    let sampler = SamplerConfig {
        seed: cfg.seed,
        ..cfg.sampler.clone()
    };
    let cells = cells(cfg);
    let mut acc = vec![CellAccumulator::default(); cells.len()];
    let mut draws = 0;
    let mut excluded_agents = 0;

    let pool = worker_pool()?;
    let total = cfg.instances_per_cell;
    let mut start = 0;
    while start < total {
        let end = (start + CHUNK).min(total);
        let results: Vec<Result<InstanceResult, HarnessError>> = pool.install(|| {
            (start..end)
                .into_par_iter()
                .map(|k| run_instance(cfg, &sampler, &cells, k))
                .collect()
        });
        for result in results {
            let result = result?;
            draws += result.draws;
            excluded_agents += result.excluded_agents;
            for (a, s) in acc.iter_mut().zip(&result.cells) {
                match s.sw {
                    Some(v) => a.sw.push(v),
                    None => a.excluded += 1,
                }
                if let Some(v) = s.au {
                    a.au.push(v);
                }
                if let Some(v) = s.dev {
                    a.dev.push(v);
                }
                if let Some(v) = s.nondev {
                    a.nondev.push(v);
                }
            }
        }
        start = end;
    }
    if excluded_agents > 0 {
        log::info!("{excluded_agents} agent observations had a vanishing AU_N baseline");
    }

    let rows = cells
        .iter()
        .zip(&acc)
        .map(|(&(heuristic, alpha), a)| {
            if a.excluded > 0 {
                log::info!("{heuristic} α = {alpha}: {} instances without optimal welfare", a.excluded);
            }
            CellRow {
                heuristic,
                alpha,
                instances: total,
                sw_n_mean: a.sw.mean(),
                sw_n_se: a.sw.standard_error(),
                au_n_mean: a.au.mean(),
                au_n_se: a.au.standard_error(),
                au_n_dev_mean: a.dev.mean(),
                au_n_nondev_mean: a.nondev.mean(),
                excluded_cells: a.excluded,
                seed: cfg.seed,
            }
        })
        .collect();
    Ok(ExperimentReport {
        rows,
        metadata: ReportMetadata {
            config_hash: cfg.hash()?,
            seed: cfg.seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            instances_per_cell: total,
            sampler_draws: draws,
            excluded_agents,
        },
    })
}

fn run_instance(
    cfg: &ExperimentConfig,
    sampler: &SamplerConfig,
    cells: &[(HeuristicId, f64)],
    k: usize,
) -> Result<InstanceResult, HarnessError> {
    let SampledInstance {
        instance,
        pstar,
        thresholds,
        attempts,
    } = sample_indexed(sampler, k as u64).map_err(|source| HarnessError::Sampling { index: k, source })?;
    let n = instance.n_agents();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ DEVIATOR_SALT);
    rng.set_stream(k as u64);
    let mut permutation: Vec<usize> = (0..n).collect();
    permutation.shuffle(&mut rng);
    let order = match cfg.play_order {
        OrderMode::Ascending => PlayOrder::Ascending,
        OrderMode::Seeded => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ ORDER_SALT);
            rng.set_stream(k as u64);
            PlayOrder::Seeded(rng.random())
        }
    };

    let baselines = match cfg.au_baseline {
        AuBaseline::Ppr => au_baselines(&instance, &ppr_thresholds(&instance)),
        AuBaseline::SchemeMatched => au_baselines(&instance, &thresholds),
    };
    let excluded_agents = baselines.iter().filter(|&&b| !(b > f64::tolerance())).count();

    let mut samples = Vec::with_capacity(cells.len());
    let mut control: Option<CellSample> = None;
    for &(h, alpha) in cells {
        if h == HeuristicId::OptWelfare {
            if let Some(s) = control {
                samples.push(s);
                continue;
            }
        }
        let deviators = &permutation[..(alpha * n as f64 + 1e-9).floor() as usize];
        let assignment = Assignment::with_deviators(n, deviators, h);
        let profile = play(&instance, &assignment, Some(&pstar.subset), &thresholds, order)?;
        let outcome = evaluate(&instance, &profile)?;
        let au = normalize(&outcome.agent_utilities, &baselines);
        let included: Vec<f64> = au.iter().flatten().copied().collect();
        let (dev, nondev) = deviation_split(&au, assignment.deviator_mask());
        let sample = CellSample {
            sw: sw_n(&outcome, pstar.welfare),
            au: mean(&included),
            dev,
            nondev,
        };
        if h == HeuristicId::OptWelfare {
            control = Some(sample);
        }
        samples.push(sample);
    }
    Ok(InstanceResult {
        cells: samples,
        draws: attempts,
        excluded_agents,
    })
}

fn cell(value: Option<f64>) -> String {
    value.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_csv<W: Write>(report: &ExperimentReport, out: W) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in &report.rows {
        w.write_record([
            r.heuristic.name().to_string(),
            r.alpha.to_string(),
            r.instances.to_string(),
            cell(r.sw_n_mean),
            cell(r.sw_n_se),
            cell(r.au_n_mean),
            cell(r.au_n_se),
            cell(r.au_n_dev_mean),
            cell(r.au_n_nondev_mean),
            r.excluded_cells.to_string(),
            r.seed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One plot-ready curve: `y[k]` is the metric at `x[k] = α`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub heuristic: HeuristicId,
    pub metric: String,
    pub x: Vec<f64>,
    pub y: Vec<Option<f64>>,
}

pub fn series(report: &ExperimentReport) -> Vec<Series> {
    let mut heuristics: Vec<HeuristicId> = Vec::new();
    for r in &report.rows {
        if !heuristics.contains(&r.heuristic) {
            heuristics.push(r.heuristic);
        }
    }
    let metrics: [(&str, fn(&CellRow) -> Option<f64>); 4] = [
        ("sw_n", |r| r.sw_n_mean),
        ("au_n", |r| r.au_n_mean),
        ("au_n_dev", |r| r.au_n_dev_mean),
        ("au_n_nondev", |r| r.au_n_nondev_mean),
    ];
    heuristics
        .into_iter()
        .flat_map(|h| {
            let curve = report.curve(h);
            metrics.iter().map(move |(name, get)| Series {
                heuristic: h,
                metric: name.to_string(),
                x: curve.iter().map(|r| r.alpha).collect(),
                y: curve.iter().map(|r| get(r)).collect(),
            })
        })
        .collect()
}

/// Writes `<heuristic>_<metric>.json` per curve into `dir`.
pub fn emit_series(report: &ExperimentReport, dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir)?;
    for s in series(report) {
        let path = dir.join(format!("{}_{}.json", s.heuristic.name(), s.metric));
        fs::write(path, to_canonical_json(&s)? + "\n")?;
    }
    Ok(())
}
