//! Monte-Carlo estimates of how many lines it takes to identify every dynamic
//! field of a template, under nested and parallel discovery.
//!
//! A template has `m` dynamic fields, each drawing one of `k` values
//! uniformly. Nested discovery must see `tau` lines reach one fixed leaf at
//! depth `m`. Parallel discovery watches all columns at once and stops when
//! every column is resolved; by default a column is resolved once a fixed
//! target value has been seen `tau` times, optionally once `tau` distinct
//! values have been seen.
//!
//! Each trial draws waiting times from their exact geometric distributions
//! instead of stepping line by line, so deep nested configurations stay
//! cheap. Trial `i` uses stream `i` of a ChaCha generator keyed by the seed,
//! which makes runs reproducible and lets sweep points share random numbers.

use std::fmt;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{KelpError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParallelModel {
    /// A column resolves after `tau` hits on one fixed value.
    #[default]
    TargetHits,
    /// A column resolves after showing `tau` distinct values.
    DistinctValues,
}

impl fmt::Display for ParallelModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ParallelModel::TargetHits => "target-hits",
            ParallelModel::DistinctValues => "distinct-values",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SimConfig {
    /// Values per dynamic field.
    pub k: u64,
    /// Dynamic fields per template.
    pub m: u32,
    /// Branching threshold.
    pub tau: u64,
    pub trials: u64,
    pub seed: u64,
    pub parallel: ParallelModel,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig { k: 10, m: 4, tau: 3, trials: 10_000, seed: 42, parallel: ParallelModel::TargetHits }
    }
}

impl SimConfig {
    /// Checks the configuration for the parallel model.
    pub fn validate(&self) -> Result<()> {
        self.validate_nested()?;
        if self.k < 2 {
            return Err(KelpError::Config(format!("k must be at least 2, got {}", self.k)));
        }
        if self.parallel == ParallelModel::DistinctValues && self.tau > self.k {
            return Err(KelpError::Config(format!("tau ({}) must not exceed k ({})", self.tau, self.k)));
        }
        Ok(())
    }

    /// The nested model also accepts the degenerate `k = 1`.
    pub fn validate_nested(&self) -> Result<()> {
        if self.k == 0 || self.m == 0 || self.tau == 0 || self.trials == 0 {
            return Err(KelpError::Config("k, m, tau and trials must be at least 1".into()));
        }
        Ok(())
    }
}

fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// Lines until the first success of a Bernoulli(`p`) stream, at least 1.
fn geometric(rng: &mut ChaCha8Rng, p: f64) -> f64 {
    if p >= 1.0 {
        return 1.0;
    }
    let u = 1.0 - rng.gen::<f64>();
    (u.ln() / (-p).ln_1p()).ceil().max(1.0)
}

/// Lines until `hits` successes of a Bernoulli(`p`) stream.
fn waiting_time(rng: &mut ChaCha8Rng, p: f64, hits: u64) -> f64 {
    (0..hits).map(|_| geometric(rng, p)).sum()
}

/// Lines until a column drawing uniformly from `k` values shows `tau` of them.
fn distinct_time(rng: &mut ChaCha8Rng, k: u64, tau: u64) -> f64 {
    (0..tau).map(|i| geometric(rng, (k - i) as f64 / k as f64)).sum()
}

fn mean_over_trials(cfg: &SimConfig, mut trial: impl FnMut(&mut ChaCha8Rng) -> f64) -> f64 {
    let total: f64 = (0..cfg.trials).map(|i| trial(&mut trial_rng(cfg.seed, i))).sum();
    total / cfg.trials as f64
}

/// Mean lines until `tau` lines have reached one fixed leaf at depth `m`.
pub fn simulate_nested(cfg: &SimConfig) -> Result<f64> {
    cfg.validate_nested()?;
    let p = (cfg.k as f64).powi(-(cfg.m as i32));
    Ok(mean_over_trials(cfg, |rng| waiting_time(rng, p, cfg.tau)))
}

/// Mean lines until every one of the `m` columns is resolved.
pub fn simulate_parallel(cfg: &SimConfig) -> Result<f64> {
    cfg.validate()?;
    let p = 1.0 / cfg.k as f64;
    Ok(mean_over_trials(cfg, |rng| {
        (0..cfg.m)
            .map(|_| match cfg.parallel {
                ParallelModel::TargetHits => waiting_time(rng, p, cfg.tau),
                ParallelModel::DistinctValues => distinct_time(rng, cfg.k, cfg.tau),
            })
            .fold(0.0, f64::max)
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Theory {
    /// `tau * k^m`
    pub nested: f64,
    /// `tau * k * H_m`
    pub parallel: f64,
    /// Expected lines for one column to show `tau` distinct values.
    pub exact_single_column: f64,
}

pub fn harmonic(m: u32) -> f64 {
    (1..=m).map(|i| 1.0 / f64::from(i)).sum()
}

pub fn theoretical(cfg: &SimConfig) -> Theory {
    let (k, tau) = (cfg.k as f64, cfg.tau as f64);
    let exact = if cfg.tau <= cfg.k { (0..cfg.tau).map(|i| k / (cfg.k - i) as f64).sum() } else { f64::INFINITY };
    Theory { nested: tau * k.powi(cfg.m as i32), parallel: tau * k * harmonic(cfg.m), exact_single_column: exact }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub k: u64,
    pub m: u32,
    pub tau: u64,
    pub model: String,
    pub mc_mean: f64,
    pub theory: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SweepSpec {
    pub ks: Vec<u64>,
    pub ms: Vec<u32>,
    pub taus: Vec<u64>,
    pub trials: u64,
    pub seed: u64,
    pub parallel: ParallelModel,
    pub nested: bool,
}

/// One nested and one parallel row per grid point. Points the parallel model
/// rejects only get the nested row.
pub fn sweep(spec: &SweepSpec) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for &k in &spec.ks {
        for &m in &spec.ms {
            for &tau in &spec.taus {
                let cfg = SimConfig { k, m, tau, trials: spec.trials, seed: spec.seed, parallel: spec.parallel };
                let th = theoretical(&cfg);
                if spec.nested {
                    rows.push(SweepRow {
                        k,
                        m,
                        tau,
                        model: "nested".into(),
                        mc_mean: simulate_nested(&cfg)?,
                        theory: th.nested,
                    });
                }
                if cfg.validate().is_ok() {
                    rows.push(SweepRow {
                        k,
                        m,
                        tau,
                        model: format!("parallel-{}", spec.parallel),
                        mc_mean: simulate_parallel(&cfg)?,
                        theory: th.parallel,
                    });
                }
            }
        }
    }
    Ok(rows)
}

/// CSV with header `k,m,tau,model,mc_mean,theory`.
pub fn sweep_csv(rows: &[SweepRow]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| KelpError::Config(format!("csv: {e}")))?;
    }
    if rows.is_empty() {
        w.write_record(["k", "m", "tau", "model", "mc_mean", "theory"])
            .map_err(|e| KelpError::Config(format!("csv: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| KelpError::Config(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| KelpError::Config(format!("csv: {e}")))
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}
