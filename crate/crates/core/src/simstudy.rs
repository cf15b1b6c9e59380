//! Data generators, condition grids and the replication engine.
//!
//! Every `(condition, replication)` pair owns its own random stream, keyed by
//! [`substream_key`], so results never depend on scheduling or worker count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::{anova_oneway_values, AnovaVariant};
use crate::covstruct::{oneway_tau_bound, strictly_above, InteractionCov, OneWayCov, TwoWayCov};
use crate::design::{BalancedDataset, GibbsConfig, OneWayDesign, TwoWayNestedDesign};
use crate::error::{Error, Result};
use crate::gibbs::{fit_interaction_with, fit_oneway_with, fit_twoway_with, summarize};
use crate::rngdist::{
    sample_compound_symmetry_mvn, sample_mvn_dense, sample_twoway_mvn, standard_normal,
    substream_key, RngStream,
};

/// Stream purposes within one replication.
const DATA: u8 = 0;
const CHAIN: u8 = 1;

/// Distance above the positive-definiteness bound used for near-boundary conditions.
pub const BOUNDARY_OFFSET: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    /// Explicit random effects; `τ ≥ 0` only.
    Conditional,
    /// Direct compound-symmetry draws; any `τ > -σ²/n`.
    Marginal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub sigma2: f64,
    pub tau: f64,
    pub a: usize,
    pub n: usize,
    pub generator: Generator,
}

impl Condition {
    pub fn new(sigma2: f64, tau: f64, a: usize, n: usize, generator: Generator) -> Result<Self> {
        let c = Self {
            sigma2,
            tau,
            a,
            n,
            generator,
        };
        c.validate()?;
        Ok(c)
    }

    /// Marginal condition at `τ = L_b`.
    pub fn boundary(sigma2: f64, a: usize, n: usize) -> Result<Self> {
        Self::new(sigma2, lower_bound_condition(sigma2, n), a, n, Generator::Marginal)
    }

    pub fn validate(&self) -> Result<()> {
        OneWayDesign::new(self.a, self.n)?;
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "sigma2 must be positive, got {}",
                self.sigma2
            )));
        }
        match self.generator {
            Generator::Conditional if !(self.tau >= 0.0) => Err(Error::InvalidConfig(format!(
                "conditional generator needs tau >= 0, got {}",
                self.tau
            ))),
            Generator::Marginal if !strictly_above(self.tau, oneway_tau_bound(self.sigma2, self.n)) => {
                Err(Error::InvalidConfig(format!(
                    "marginal generator needs tau > -sigma2/n = {}, got {}",
                    oneway_tau_bound(self.sigma2, self.n),
                    self.tau
                )))
            }
            _ => Ok(()),
        }
    }

    pub fn design(&self) -> OneWayDesign {
        OneWayDesign::new(self.a, self.n).expect("validated condition")
    }
}

/// `-σ²/n + 10⁻⁴`.
pub fn lower_bound_condition(sigma2: f64, n: usize) -> f64 {
    -sigma2 / n as f64 + BOUNDARY_OFFSET
}

/// `y_ij = μ + α_i + e_ij` with `α_i ~ N(0, τ)` and `e_ij ~ N(0, σ²)`.
pub fn gen_conditional(cond: &Condition, mu: f64, rng: &mut RngStream) -> Result<BalancedDataset> {
    if !(cond.tau >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "conditional generator needs tau >= 0, got {}",
            cond.tau
        )));
    }
    let design = OneWayDesign::new(cond.a, cond.n)?;
    let (sd_a, sd_e) = (cond.tau.sqrt(), cond.sigma2.sqrt());
    let mut values = Vec::with_capacity(design.total());
    for _ in 0..cond.a {
        let alpha = sd_a * standard_normal(rng);
        for _ in 0..cond.n {
            values.push(mu + alpha + sd_e * standard_normal(rng));
        }
    }
    BalancedDataset::new(design, values, None)
}

/// Each cluster drawn from `N(μ1, σ²I + τJ)`.
pub fn gen_marginal(cond: &Condition, mu: f64, rng: &mut RngStream) -> Result<BalancedDataset> {
    let design = OneWayDesign::new(cond.a, cond.n)?;
    let cov = OneWayCov::new(cond.sigma2, cond.tau, cond.n)?;
    let mean = vec![mu; cond.n];
    let mut values = Vec::with_capacity(design.total());
    for _ in 0..cond.a {
        values.extend(sample_compound_symmetry_mvn(&mean, &cov, rng)?);
    }
    BalancedDataset::new(design, values, None)
}

pub fn generate(cond: &Condition, mu: f64, rng: &mut RngStream) -> Result<BalancedDataset> {
    match cond.generator {
        Generator::Conditional => gen_conditional(cond, mu, rng),
        Generator::Marginal => gen_marginal(cond, mu, rng),
    }
}

/// Two-way nested data with per-observation means (length `a·b·n`).
pub fn gen_twoway(
    design: &TwoWayNestedDesign,
    cov: &TwoWayCov,
    means: &[f64],
    rng: &mut RngStream,
) -> Result<BalancedDataset> {
    check_means(means, design.total())?;
    let mut values = Vec::with_capacity(design.total());
    for block in means.chunks_exact(design.block()) {
        values.extend(sample_twoway_mvn(block, cov, rng)?);
    }
    BalancedDataset::new(*design, values, None)
}

/// Two-way nested data with the heteroscedastic increment on flagged observations.
#[allow(clippy::too_many_arguments)]
pub fn gen_interaction(
    design: &TwoWayNestedDesign,
    sigma2: f64,
    tau_a: f64,
    tau_b: f64,
    tau_c: f64,
    z: &[bool],
    means: &[f64],
    rng: &mut RngStream,
) -> Result<BalancedDataset> {
    check_means(means, design.total())?;
    if z.len() != design.total() {
        return Err(Error::InvalidIndicator(format!(
            "indicator has length {}, expected {}",
            z.len(),
            design.total()
        )));
    }
    let mut values = Vec::with_capacity(design.total());
    for (block, zi) in means.chunks_exact(design.block()).zip(z.chunks_exact(design.block())) {
        let cov = InteractionCov::new(sigma2, tau_a, tau_b, tau_c, design.b(), design.n(), zi.to_vec())?;
        values.extend(sample_mvn_dense(block, &cov.to_dense(), rng)?);
    }
    BalancedDataset::new(*design, values, None)
}

/// Indicator flagging the last observation of every odd-numbered B-cluster,
/// e.g. the post-treatment measurement of clients of treated counsellors.
pub fn alternating_indicator(design: &TwoWayNestedDesign) -> Vec<bool> {
    (0..design.total())
        .map(|idx| {
            let (_, j, k) = design.coords(idx);
            j % 2 == 1 && k == design.n() - 1
        })
        .collect()
}

fn check_means(means: &[f64], expected: usize) -> Result<()> {
    if means.len() != expected {
        return Err(Error::LengthMismatch {
            expected,
            actual: means.len(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// Posterior median of τ from the one-way Gibbs sampler; ETI coverage.
    Bcsm,
    /// Moment estimate truncated at zero.
    AnovaTrunc,
    /// Untruncated moment estimate.
    AnovaRaw,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Self::Bcsm => "bcsm",
            Self::AnovaTrunc => "anova_trunc",
            Self::AnovaRaw => "anova_raw",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "bcsm" => Ok(Self::Bcsm),
            "anova_trunc" => Ok(Self::AnovaTrunc),
            "anova_raw" => Ok(Self::AnovaRaw),
            other => Err(Error::InvalidConfig(format!(
                "unknown estimator `{other}` (expected bcsm, anova_trunc or anova_raw)"
            ))),
        }
    }
}

/// Point estimate and, for Bayesian estimators, the 95% equal-tailed interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub interval: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub grid: Vec<Condition>,
    pub reps: usize,
    pub estimators: Vec<Estimator>,
    pub gibbs: GibbsConfig,
    pub seed: u64,
    #[serde(default)]
    pub anova_variant: AnovaVariant,
}

impl StudyConfig {
    /// 200 replications at 4,000 iterations with 2,000 burn-in.
    pub fn desk(grid: Vec<Condition>, seed: u64) -> Self {
        Self {
            grid,
            reps: 200,
            estimators: vec![Estimator::Bcsm, Estimator::AnovaTrunc],
            gibbs: GibbsConfig::desk(seed),
            seed,
            anova_variant: AnovaVariant::default(),
        }
    }

    /// 1,000 replications at 10,000 iterations with 5,000 burn-in.
    pub fn full(grid: Vec<Condition>, seed: u64) -> Self {
        Self {
            reps: 1_000,
            gibbs: GibbsConfig {
                seed,
                ..GibbsConfig::default()
            },
            ..Self::desk(grid, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps < 2 {
            return Err(Error::InvalidConfig(format!(
                "reps must be at least 2, got {}",
                self.reps
            )));
        }
        if self.estimators.is_empty() {
            return Err(Error::InvalidConfig("no estimators selected".into()));
        }
        self.gibbs.validate()?;
        self.grid.iter().try_for_each(Condition::validate)
    }
}

/// Estimates of one replication, one entry per configured estimator
/// (`Err` holds the failure message).
#[derive(Debug, Clone, PartialEq)]
pub struct Replication {
    pub condition: usize,
    pub rep: usize,
    pub estimates: Vec<std::result::Result<Estimate, String>>,
}

fn run_one(cfg: &StudyConfig, ci: usize, rep: usize) -> Replication {
    let cond = &cfg.grid[ci];
    let mut data_rng = RngStream::new(cfg.seed, substream_key(ci, rep, DATA));
    let mu = standard_normal(&mut data_rng);
    let data = generate(cond, mu, &mut data_rng);
    let estimates = cfg
        .estimators
        .iter()
        .map(|&est| {
            let data = data.as_ref().map_err(|e| e.to_string())?;
            estimate(cfg, est, data, ci, rep).map_err(|e| e.to_string())
        })
        .collect();
    Replication {
        condition: ci,
        rep,
        estimates,
    }
}

fn estimate(
    cfg: &StudyConfig,
    est: Estimator,
    data: &BalancedDataset,
    ci: usize,
    rep: usize,
) -> Result<Estimate> {
    let cond = &cfg.grid[ci];
    match est {
        Estimator::Bcsm => {
            let mut rng = RngStream::new(cfg.seed, substream_key(ci, rep, CHAIN));
            let chains = fit_oneway_with(data, &cfg.gibbs, &mut rng)?;
            let s = summarize(&chains, "tau")?;
            Ok(Estimate {
                value: s.median,
                interval: Some(s.eti_95),
            })
        }
        Estimator::AnovaTrunc | Estimator::AnovaRaw => {
            let e = anova_oneway_values(data.values(), cond.a, cond.n, cfg.anova_variant);
            Ok(Estimate {
                value: if est == Estimator::AnovaTrunc {
                    e.tau_trunc
                } else {
                    e.tau_raw
                },
                interval: None,
            })
        }
    }
}

/// Maps `f` over `0..count` on a pool of `workers` threads (0 = all cores).
/// Output order follows the index, so results never depend on scheduling.
pub fn par_map_indexed<T, F>(workers: usize, count: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot build worker pool: {e}")))?;
    Ok(pool.install(|| (0..count).into_par_iter().map(f).collect()))
}

/// Every replication of every condition, in `(condition, rep)` order.
pub fn run_replications(cfg: &StudyConfig, workers: usize) -> Result<Vec<Replication>> {
    cfg.validate()?;
    let reps = cfg.reps;
    par_map_indexed(workers, cfg.grid.len() * reps, |idx| {
        run_one(cfg, idx / reps, idx % reps)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rmse: f64,
    pub bias: f64,
    pub coverage: Option<f64>,
}

/// RMSE, bias and (when intervals are given) the fraction of intervals covering `truth`.
pub fn metrics(estimates: &[f64], truth: f64, intervals: Option<&[(f64, f64)]>) -> Metrics {
    assert!(!estimates.is_empty(), "metrics of an empty estimate list");
    let k = estimates.len() as f64;
    let bias = estimates.iter().map(|e| e - truth).sum::<f64>() / k;
    let mse = estimates.iter().map(|e| (e - truth) * (e - truth)).sum::<f64>() / k;
    let coverage = intervals.map(|iv| {
        iv.iter().filter(|(lo, hi)| *lo <= truth && truth <= *hi).count() as f64 / iv.len() as f64
    });
    Metrics {
        rmse: mse.sqrt(),
        bias,
        coverage,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub estimator: Estimator,
    pub sigma2: f64,
    pub tau: f64,
    pub a: usize,
    pub n: usize,
    pub reps: usize,
    #[serde(deserialize_with = "crate::io::f64_or_nan")]
    pub rmse: f64,
    #[serde(deserialize_with = "crate::io::f64_or_nan")]
    pub bias: f64,
    pub coverage: Option<f64>,
    pub failures: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub rows: Vec<StudyRow>,
}

impl StudyReport {
    pub fn find(&self, estimator: Estimator, a: usize, n: usize) -> Option<&StudyRow> {
        self.rows
            .iter()
            .find(|r| r.estimator == estimator && r.a == a && r.n == n)
    }
}

/// Aggregates replications (in the order produced by [`run_replications`]).
pub fn aggregate(cfg: &StudyConfig, reps: &[Replication]) -> StudyReport {
    let mut rows = Vec::new();
    for (ci, cond) in cfg.grid.iter().enumerate() {
        let cell: Vec<&Replication> = reps.iter().filter(|r| r.condition == ci).collect();
        for (ei, &est) in cfg.estimators.iter().enumerate() {
            let ok: Vec<Estimate> = cell
                .iter()
                .filter_map(|r| r.estimates[ei].as_ref().ok().copied())
                .collect();
            let failures = cell.len() - ok.len();
            let (rmse, bias, coverage) = if ok.is_empty() {
                (f64::NAN, f64::NAN, None)
            } else {
                let values: Vec<f64> = ok.iter().map(|e| e.value).collect();
                let intervals: Option<Vec<(f64, f64)>> = ok.iter().map(|e| e.interval).collect();
                let m = metrics(&values, cond.tau, intervals.as_deref());
                (m.rmse, m.bias, m.coverage)
            };
            rows.push(StudyRow {
                estimator: est,
                sigma2: cond.sigma2,
                tau: cond.tau,
                a: cond.a,
                n: cond.n,
                reps: cell.len(),
                rmse,
                bias,
                coverage,
                failures,
            });
        }
    }
    StudyReport { rows }
}

pub fn run_study(cfg: &StudyConfig, workers: usize) -> Result<StudyReport> {
    let reps = run_replications(cfg, workers)?;
    Ok(aggregate(cfg, &reps))
}

pub const SIGMA2_LEVELS: [f64; 5] = [5.0, 1.0, 0.5, 0.1, 0.01];
pub const TAU_LEVELS: [f64; 5] = [5.0, 1.0, 0.5, 0.1, 0.01];
pub const A_LEVELS: [usize; 4] = [50, 25, 10, 5];
pub const N_LEVELS: [usize; 4] = [20, 10, 5, 2];

/// The 16 near-boundary cells at `σ² = 1`.
pub fn table1_grid() -> Vec<Condition> {
    A_LEVELS
        .iter()
        .flat_map(|&a| N_LEVELS.iter().map(move |&n| Condition::boundary(1.0, a, n).unwrap()))
        .collect()
}

/// All 480 cells: 400 positive-τ conditional cells plus 80 near-boundary marginal cells.
pub fn full_grid() -> Vec<Condition> {
    let mut grid = Vec::with_capacity(480);
    for &sigma2 in &SIGMA2_LEVELS {
        for &a in &A_LEVELS {
            for &n in &N_LEVELS {
                for &tau in &TAU_LEVELS {
                    grid.push(Condition::new(sigma2, tau, a, n, Generator::Conditional).unwrap());
                }
                grid.push(Condition::boundary(sigma2, a, n).unwrap());
            }
        }
    }
    grid
}

/// Posterior medians of one two-way replication.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoWayRecord {
    pub rep: usize,
    pub sigma2: f64,
    pub tau_a: f64,
    pub tau_b: f64,
}

/// Replicated two-way fits at fixed truth with mean `mu` everywhere.
pub fn run_twoway_replications(
    design: &TwoWayNestedDesign,
    truth: &TwoWayCov,
    reps: usize,
    gibbs: &GibbsConfig,
    seed: u64,
    workers: usize,
) -> Result<Vec<TwoWayRecord>> {
    gibbs.validate()?;
    truth.validate()?;
    let means = vec![0.0; design.total()];
    par_map_indexed(workers, reps, |rep| {
        let mut data_rng = RngStream::new(seed, substream_key(0, rep, DATA));
        let data = gen_twoway(design, truth, &means, &mut data_rng)?;
        let mut rng = RngStream::new(seed, substream_key(0, rep, CHAIN));
        let chains = fit_twoway_with(&data, gibbs, &mut rng)?;
        Ok(TwoWayRecord {
            rep,
            sigma2: summarize(&chains, "sigma2")?.median,
            tau_a: summarize(&chains, "tau_a")?.median,
            tau_b: summarize(&chains, "tau_b")?.median,
        })
    })?
    .into_iter()
    .collect()
}

/// Posterior `P(τ_c > 0 | y)` for replicated interaction-model fits.
#[allow(clippy::too_many_arguments)]
pub fn run_interaction_replications(
    design: &TwoWayNestedDesign,
    truth: &TwoWayCov,
    tau_c: f64,
    z: &[bool],
    reps: usize,
    gibbs: &GibbsConfig,
    seed: u64,
    workers: usize,
) -> Result<Vec<f64>> {
    gibbs.validate()?;
    let means = vec![0.0; design.total()];
    par_map_indexed(workers, reps, |rep| {
        let mut data_rng = RngStream::new(seed, substream_key(0, rep, DATA));
        let data = gen_interaction(
            design,
            truth.sigma2,
            truth.tau_a,
            truth.tau_b,
            tau_c,
            z,
            &means,
            &mut data_rng,
        )?;
        let mut rng = RngStream::new(seed, substream_key(0, rep, CHAIN));
        let chains = fit_interaction_with(&data, z, gibbs, &mut rng)?;
        chains.prob_greater("tau_c", 0.0)
    })?
    .into_iter()
    .collect()
}

/// Pooled within-cluster sample correlation over all pairs in all clusters.
pub fn pooled_icc(data: &BalancedDataset, a: usize, n: usize) -> f64 {
    let v = data.values();
    let grand = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - grand) * (x - grand)).sum::<f64>() / v.len() as f64;
    let mut cov = 0.0;
    let mut pairs = 0usize;
    for i in 0..a {
        let c = &v[i * n..(i + 1) * n];
        for j in 0..n {
            for k in 0..n {
                if j != k {
                    cov += (c[j] - grand) * (c[k] - grand);
                    pairs += 1;
                }
            }
        }
    }
    cov / pairs as f64 / var
}
