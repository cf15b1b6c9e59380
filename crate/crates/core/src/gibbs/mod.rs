//! Gibbs samplers for Bayesian covariance structure models.
//!
//! Every covariance parameter is sampled through a positive "λ" quantity
//! whose full conditional is inverse-gamma, then shifted so the covariance
//! matrix stays positive definite:
//!
//! ```text
//! one-way   σ²  ~ IG((g1 + a(n-1))/2, (g2 + SS_E)/2)
//!           λ   ~ IG((a-1)/2, (SS_A/n)/2)          τ   = λ   - σ²/n
//! two-way   σ²  ~ IG((g1 + ab(n-1))/2, (g2 + SS_E)/2)
//!           λ_b ~ IG(a(b-1)/2, (SS_B/n)/2)         τ_b = λ_b - σ²/n
//!           λ_a ~ IG((a-1)/2, (SS_A/(bn))/2)       τ_a = λ_a - (τ_b/b + σ²/(bn))
//! ```
//!
//! Without regressors the general mean is integrated out, the sums of squares
//! are those of the raw data and the variance draws are exact and independent
//! across iterations; the mean is then drawn from its conditional. With
//! regressors each sweep draws `β` by GLS and recomputes the sums of squares
//! from `y - Xβ`; the between-A sum is then taken around zero and carries
//! `a` rather than `a - 1` degrees of freedom.

mod fixed_effects;
mod summary;

pub use fixed_effects::{fixed_effects_posterior, sample_fixed_effects, CovBlocks};
pub use summary::{
    effective_sample_size, hpd_interval, quantile_sorted, summarize_draws, trimmed_mean,
    PosteriorSummary, MIN_SUMMARY_DRAWS,
};

use indexmap::IndexMap;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::covstruct::{pooled_variance, InteractionCov, InteractionSolver};
use crate::design::{BalancedDataset, Design, GibbsConfig, TauAShape, TwoWayNestedDesign};
use crate::error::{Error, Result};
use crate::rngdist::{sample_inv_gamma, standard_normal, InvGammaParams, RngStream};
use crate::suffstats::{
    indicator_strata, interaction_ss_values, oneway_ss_values, twoway_ss_values,
    uncentered_between,
};
use fixed_effects::{solver_draw, ProjectedGram};

/// Redraws allowed per sweep when a heteroscedastic block is not positive definite.
const MAX_PD_REDRAWS: usize = 1000;

/// Draw sequences for every sampled parameter, burn-in included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorChains {
    draws: IndexMap<String, Vec<f64>>,
    burn_in: usize,
    config: GibbsConfig,
}

impl PosteriorChains {
    fn with_names(names: &[String], config: GibbsConfig) -> Self {
        let draws = names
            .iter()
            .map(|n| (n.clone(), Vec::with_capacity(config.iterations)))
            .collect();
        Self {
            draws,
            burn_in: config.burn_in,
            config,
        }
    }

    fn push(&mut self, name: &str, value: f64) {
        self.draws
            .get_mut(name)
            .expect("parameter registered at construction")
            .push(value);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.draws.keys().map(String::as_str)
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.draws.get(name).map(Vec::as_slice)
    }

    pub fn post_burn_in(&self, name: &str) -> Option<&[f64]> {
        self.get(name).map(|d| &d[self.burn_in.min(d.len())..])
    }

    pub fn burn_in(&self) -> usize {
        self.burn_in
    }

    pub fn iterations(&self) -> usize {
        self.draws.values().next().map_or(0, Vec::len)
    }

    pub fn config(&self) -> &GibbsConfig {
        &self.config
    }

    pub fn summarize(&self, name: &str) -> Result<PosteriorSummary> {
        summarize(self, name)
    }

    /// Summaries of every parameter in sampling order.
    pub fn summaries(&self) -> Result<Vec<(String, PosteriorSummary)>> {
        self.names()
            .map(|n| Ok((n.to_string(), summarize(self, n)?)))
            .collect()
    }

    /// Posterior probability that `name` exceeds `threshold`, over post-burn-in draws.
    pub fn prob_greater(&self, name: &str, threshold: f64) -> Result<f64> {
        let d = self
            .post_burn_in(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
        Ok(d.iter().filter(|&&v| v > threshold).count() as f64 / d.len() as f64)
    }
}

pub fn summarize(chains: &PosteriorChains, param: &str) -> Result<PosteriorSummary> {
    let draws = chains
        .post_burn_in(param)
        .ok_or_else(|| Error::UnknownParameter(param.to_string()))?;
    summarize_draws(draws)
}

fn inv_gamma(shape: f64, scale: f64, what: &str) -> Result<InvGammaParams> {
    if !(scale > 0.0) {
        return Err(Error::DegenerateData(format!(
            "{what} is zero; the inverse-gamma scale would vanish"
        )));
    }
    InvGammaParams::new(shape, scale)
}

fn mean_names(data: &BalancedDataset) -> Vec<String> {
    match data.regressors() {
        Some(x) => x.names().to_vec(),
        None => vec!["mu".to_string()],
    }
}

fn tau_a_shape(df: usize, shape: TauAShape) -> f64 {
    match shape {
        TauAShape::HalfDf => df as f64 / 2.0,
        TauAShape::FullDf => df as f64,
    }
}

fn ols(x: &DMatrix<f64>, y: &[f64]) -> Result<DVector<f64>> {
    let yv = DVector::from_column_slice(y);
    let chol = (x.transpose() * x)
        .cholesky()
        .ok_or(Error::RankDeficientRegressors { rank: 0, cols: x.ncols() })?;
    Ok(chol.solve(&(x.transpose() * yv)))
}

fn residuals(x: &DMatrix<f64>, y: &[f64], beta: &DVector<f64>, out: &mut [f64]) {
    let fitted = x * beta;
    for ((o, yi), f) in out.iter_mut().zip(y).zip(fitted.iter()) {
        *o = yi - f;
    }
}

fn push_beta(chains: &mut PosteriorChains, names: &[String], beta: &DVector<f64>) {
    for (name, v) in names.iter().zip(beta.iter()) {
        chains.push(name, *v);
    }
}

/// One-way BCSM with a fresh stream `(cfg.seed, 0)`.
pub fn fit_oneway(data: &BalancedDataset, cfg: &GibbsConfig) -> Result<PosteriorChains> {
    fit_oneway_with(data, cfg, &mut RngStream::new(cfg.seed, 0))
}

pub fn fit_oneway_with(
    data: &BalancedDataset,
    cfg: &GibbsConfig,
    rng: &mut RngStream,
) -> Result<PosteriorChains> {
    cfg.validate()?;
    data.validate()?;
    let Design::OneWay(design) = data.design() else {
        return Err(Error::ModelMismatch("one-way model needs a one-way design".into()));
    };
    let (a, n) = (design.a(), design.n());
    let nf = n as f64;
    let sigma_shape = (cfg.prior_g1 + (a * (n - 1)) as f64) / 2.0;

    let beta_names = mean_names(data);
    let mut names = vec!["sigma2".to_string(), "tau".to_string()];
    names.extend(beta_names.iter().cloned());
    let mut chains = PosteriorChains::with_names(&names, *cfg);
    let y = data.values();

    match data.regressors() {
        None => {
            let ss = oneway_ss_values(y, a, n);
            let sigma_p = inv_gamma(sigma_shape, (cfg.prior_g2 + ss.ss_e) / 2.0, "SS_E")?;
            let lambda_p = inv_gamma((a - 1) as f64 / 2.0, ss.ss_a / nf / 2.0, "SS_A")?;
            let grand = y.iter().sum::<f64>() / y.len() as f64;
            for _ in 0..cfg.iterations {
                let sigma2 = sample_inv_gamma(&sigma_p, rng)?;
                let lambda = sample_inv_gamma(&lambda_p, rng)?;
                let tau = lambda - sigma2 / nf;
                debug_assert!(sigma2 > 0.0 && tau > -sigma2 / nf);
                // Var(ȳ..) = (σ² + nτ)/(an) = λ/a.
                let mu = grand + (lambda / a as f64).sqrt() * standard_normal(rng);
                chains.push("sigma2", sigma2);
                chains.push("tau", tau);
                chains.push("mu", mu);
            }
        }
        Some(reg) => {
            let x = reg.matrix();
            let gram = ProjectedGram::new(x, y, 1, n);
            let mut beta = ols(x, y)?;
            let mut r = vec![0.0; y.len()];
            residuals(x, y, &beta, &mut r);
            // Start from the ANOVA mean square and τ = 0.
            let mut sigma2 = oneway_ss_values(&r, a, n).ss_e / (a * (n - 1)) as f64;
            let mut lambda = sigma2 / nf;
            for _ in 0..cfg.iterations {
                beta = gram.draw([sigma2, 1.0, nf * lambda], rng)?;
                residuals(x, y, &beta, &mut r);
                let ss_e = oneway_ss_values(&r, a, n).ss_e;
                let s_a = uncentered_between(&r, n);
                sigma2 = sample_inv_gamma(
                    &inv_gamma(sigma_shape, (cfg.prior_g2 + ss_e) / 2.0, "residual SS_E")?,
                    rng,
                )?;
                lambda = sample_inv_gamma(
                    &inv_gamma(a as f64 / 2.0, s_a / nf / 2.0, "residual SS_A")?,
                    rng,
                )?;
                let tau = lambda - sigma2 / nf;
                debug_assert!(sigma2 > 0.0 && tau > -sigma2 / nf);
                chains.push("sigma2", sigma2);
                chains.push("tau", tau);
                push_beta(&mut chains, &beta_names, &beta);
            }
        }
    }
    Ok(chains)
}

/// Two-way nested BCSM with a fresh stream `(cfg.seed, 0)`.
pub fn fit_twoway(data: &BalancedDataset, cfg: &GibbsConfig) -> Result<PosteriorChains> {
    fit_twoway_with(data, cfg, &mut RngStream::new(cfg.seed, 0))
}

pub fn fit_twoway_with(
    data: &BalancedDataset,
    cfg: &GibbsConfig,
    rng: &mut RngStream,
) -> Result<PosteriorChains> {
    cfg.validate()?;
    data.validate()?;
    let Design::TwoWay(design) = data.design() else {
        return Err(Error::ModelMismatch("two-way model needs a two-way nested design".into()));
    };
    let (a, b, n) = (design.a(), design.b(), design.n());
    let (af, bf, nf) = (a as f64, b as f64, n as f64);
    let sigma_shape = (cfg.prior_g1 + (a * b * (n - 1)) as f64) / 2.0;
    let lambda_b_shape = (a * (b - 1)) as f64 / 2.0;

    let beta_names = mean_names(data);
    let mut names: Vec<String> = ["sigma2", "tau_a", "tau_b"].map(String::from).to_vec();
    names.extend(beta_names.iter().cloned());
    let mut chains = PosteriorChains::with_names(&names, *cfg);
    let y = data.values();

    match data.regressors() {
        None => {
            let ss = twoway_ss_values(y, a, b, n);
            let sigma_p = inv_gamma(sigma_shape, (cfg.prior_g2 + ss.ss_e) / 2.0, "SS_E")?;
            let lambda_b_p = inv_gamma(lambda_b_shape, ss.ss_b / nf / 2.0, "SS_B")?;
            let lambda_a_p = inv_gamma(
                tau_a_shape(a - 1, cfg.tau_a_shape),
                ss.ss_a / (bf * nf) / 2.0,
                "SS_A",
            )?;
            let grand = y.iter().sum::<f64>() / y.len() as f64;
            for _ in 0..cfg.iterations {
                let sigma2 = sample_inv_gamma(&sigma_p, rng)?;
                let lambda_b = sample_inv_gamma(&lambda_b_p, rng)?;
                let tau_b = lambda_b - sigma2 / nf;
                let lambda_a = sample_inv_gamma(&lambda_a_p, rng)?;
                let tau_a = lambda_a - (tau_b / bf + sigma2 / (bf * nf));
                debug_assert!(tau_b > -sigma2 / nf);
                debug_assert!(tau_a > -(tau_b / bf + sigma2 / (bf * nf)));
                let mu = grand + (lambda_a / af).sqrt() * standard_normal(rng);
                chains.push("sigma2", sigma2);
                chains.push("tau_a", tau_a);
                chains.push("tau_b", tau_b);
                chains.push("mu", mu);
            }
        }
        Some(reg) => {
            let x = reg.matrix();
            let gram = ProjectedGram::new(x, y, b, n);
            let mut beta = ols(x, y)?;
            let mut r = vec![0.0; y.len()];
            residuals(x, y, &beta, &mut r);
            let mut sigma2 = twoway_ss_values(&r, a, b, n).ss_e / (a * b * (n - 1)) as f64;
            let (mut lambda_b, mut lambda_a) = (sigma2 / nf, sigma2 / (bf * nf));
            let shape_a = tau_a_shape(a, cfg.tau_a_shape);
            for _ in 0..cfg.iterations {
                beta = gram.draw([sigma2, nf * lambda_b, bf * nf * lambda_a], rng)?;
                residuals(x, y, &beta, &mut r);
                let ss = twoway_ss_values(&r, a, b, n);
                let s_a = uncentered_between(&r, b * n);
                sigma2 = sample_inv_gamma(
                    &inv_gamma(sigma_shape, (cfg.prior_g2 + ss.ss_e) / 2.0, "residual SS_E")?,
                    rng,
                )?;
                lambda_b = sample_inv_gamma(
                    &inv_gamma(lambda_b_shape, ss.ss_b / nf / 2.0, "residual SS_B")?,
                    rng,
                )?;
                let tau_b = lambda_b - sigma2 / nf;
                lambda_a = sample_inv_gamma(
                    &inv_gamma(shape_a, s_a / (bf * nf) / 2.0, "residual SS_A")?,
                    rng,
                )?;
                let tau_a = lambda_a - (tau_b / bf + sigma2 / (bf * nf));
                debug_assert!(tau_b > -sigma2 / nf);
                debug_assert!(tau_a > -(tau_b / bf + sigma2 / (bf * nf)));
                chains.push("sigma2", sigma2);
                chains.push("tau_a", tau_a);
                chains.push("tau_b", tau_b);
                push_beta(&mut chains, &beta_names, &beta);
            }
        }
    }
    Ok(chains)
}

/// Covariance parameters of one sweep of the interaction sampler.
#[derive(Debug, Clone, Copy)]
struct InteractionDraw {
    sigma2: f64,
    tau_a: f64,
    tau_b: f64,
    tau_c: f64,
    pooled: f64,
}

struct InteractionStats {
    ss_e_base: f64,
    ss_e_het: f64,
    ss_b: f64,
    s_a: f64,
    df_a: usize,
}

struct InteractionSampler<'a> {
    design: TwoWayNestedDesign,
    z: &'a [bool],
    n0: usize,
    n1: usize,
    cfg: &'a GibbsConfig,
}

impl InteractionSampler<'_> {
    /// Sums of squares of `v`; the between-A sum is centred when the mean is integrated out.
    fn stats(&self, v: &[f64], centred_a: bool) -> Result<InteractionStats> {
        let d = &self.design;
        let strata = interaction_ss_values(v, d, self.z)?;
        let two = twoway_ss_values(v, d.a(), d.b(), d.n());
        let (df_a, s_a) = if centred_a {
            (d.a() - 1, two.ss_a)
        } else {
            (d.a(), uncentered_between(v, d.block()))
        };
        Ok(InteractionStats {
            ss_e_base: strata.ss_e_base,
            ss_e_het: strata.ss_e_het,
            ss_b: two.ss_b,
            s_a,
            df_a,
        })
    }

    fn draw_covariance(&self, st: &InteractionStats, rng: &mut RngStream) -> Result<InteractionDraw> {
        let d = &self.design;
        let (a, b, n) = (d.a(), d.b(), d.n());
        let (bf, nf) = (b as f64, n as f64);
        let g1 = self.cfg.prior_g1;
        let g2 = self.cfg.prior_g2;

        let sigma2 = sample_inv_gamma(
            &inv_gamma(
                (g1 + (self.n0 * (n - 1)) as f64) / 2.0,
                (g2 + st.ss_e_base) / 2.0,
                "base-stratum SS_E",
            )?,
            rng,
        )?;
        let lambda_c = sample_inv_gamma(
            &inv_gamma(
                (g1 + (self.n1 - 1) as f64) / 2.0,
                (g2 + st.ss_e_het) / 2.0,
                "heteroscedastic-stratum SS",
            )?,
            rng,
        )?;
        let tau_c = lambda_c - sigma2;
        let pooled = pooled_variance(sigma2, tau_c, self.n0, self.n1, n);

        let lambda_b = sample_inv_gamma(
            &inv_gamma((a * (b - 1)) as f64 / 2.0, st.ss_b / nf / 2.0, "SS_B")?,
            rng,
        )?;
        let tau_b = lambda_b - pooled / nf;

        let lambda_a = sample_inv_gamma(
            &inv_gamma(tau_a_shape(st.df_a, self.cfg.tau_a_shape), st.s_a / (bf * nf) / 2.0, "SS_A")?,
            rng,
        )?;
        let tau_a = lambda_a - (tau_b / bf + pooled / (bf * nf));
        debug_assert!(sigma2 > 0.0 && sigma2 + tau_c > 0.0);
        debug_assert!(tau_b > -pooled / nf);
        Ok(InteractionDraw {
            sigma2,
            tau_a,
            tau_b,
            tau_c,
            pooled,
        })
    }

    fn solvers(&self, p: &InteractionDraw) -> Result<Vec<InteractionSolver>> {
        let d = &self.design;
        self.z
            .chunks_exact(d.block())
            .map(|zi| {
                let cov = InteractionCov::with_pooled(
                    p.sigma2,
                    p.tau_a,
                    p.tau_b,
                    p.tau_c,
                    d.b(),
                    d.n(),
                    zi.to_vec(),
                    p.pooled,
                )?;
                InteractionSolver::new(&cov)
            })
            .collect()
    }

    /// Covariance draw followed by a fixed-effect draw. A covariance draw whose
    /// heteroscedastic blocks are not positive definite is redrawn.
    fn sweep(
        &self,
        st: &InteractionStats,
        x: &DMatrix<f64>,
        y: &[f64],
        rng: &mut RngStream,
    ) -> Result<(InteractionDraw, DVector<f64>)> {
        for _ in 0..MAX_PD_REDRAWS {
            let draw = self.draw_covariance(st, rng)?;
            let Ok(solvers) = self.solvers(&draw) else {
                continue;
            };
            return Ok((draw, solver_draw(x, y, &solvers, rng)?));
        }
        Err(Error::DegenerateData(format!(
            "no positive-definite covariance draw in {MAX_PD_REDRAWS} attempts"
        )))
    }
}

/// Two-way BCSM with a heteroscedastic increment `τ_c` on flagged observations,
/// using a fresh stream `(cfg.seed, 0)`.
pub fn fit_interaction(
    data: &BalancedDataset,
    z: &[bool],
    cfg: &GibbsConfig,
) -> Result<PosteriorChains> {
    fit_interaction_with(data, z, cfg, &mut RngStream::new(cfg.seed, 0))
}

pub fn fit_interaction_with(
    data: &BalancedDataset,
    z: &[bool],
    cfg: &GibbsConfig,
    rng: &mut RngStream,
) -> Result<PosteriorChains> {
    cfg.validate()?;
    data.validate()?;
    let Design::TwoWay(design) = data.design() else {
        return Err(Error::ModelMismatch(
            "interaction model needs a two-way nested design".into(),
        ));
    };
    let (n0, n1) = indicator_strata(&design, z)?;
    let sampler = InteractionSampler {
        design,
        z,
        n0,
        n1,
        cfg,
    };

    let beta_names = mean_names(data);
    let mut names: Vec<String> = ["sigma2", "tau_a", "tau_b", "tau_c"].map(String::from).to_vec();
    names.extend(beta_names.iter().cloned());
    let mut chains = PosteriorChains::with_names(&names, *cfg);
    let y = data.values();

    let push = |chains: &mut PosteriorChains, p: &InteractionDraw, beta: &DVector<f64>| {
        chains.push("sigma2", p.sigma2);
        chains.push("tau_a", p.tau_a);
        chains.push("tau_b", p.tau_b);
        chains.push("tau_c", p.tau_c);
        push_beta(chains, &beta_names, beta);
    };

    match data.regressors() {
        None => {
            let ones = DMatrix::from_element(y.len(), 1, 1.0);
            let st = sampler.stats(y, true)?;
            for _ in 0..cfg.iterations {
                let (p, mu) = sampler.sweep(&st, &ones, y, rng)?;
                push(&mut chains, &p, &mu);
            }
        }
        Some(reg) => {
            let x = reg.matrix();
            let mut beta = ols(x, y)?;
            let mut r = vec![0.0; y.len()];
            for _ in 0..cfg.iterations {
                residuals(x, y, &beta, &mut r);
                let st = sampler.stats(&r, false)?;
                let (p, next) = sampler.sweep(&st, x, y, rng)?;
                beta = next;
                push(&mut chains, &p, &beta);
            }
        }
    }
    Ok(chains)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covstruct::{OneWayCov, TwoWayCov};
    use crate::design::{OneWayDesign, Regressors};
    use crate::rngdist::{sample_compound_symmetry_mvn, sample_twoway_mvn};
    use statrs::distribution::{ContinuousCDF, Gamma as GammaDist};

    fn oneway_data(a: usize, n: usize, sigma2: f64, tau: f64, mu: f64, seed: u64) -> BalancedDataset {
        let cov = OneWayCov::new(sigma2, tau, n).unwrap();
        let mut rng = RngStream::new(seed, 99);
        let mean = vec![mu; n];
        let values = (0..a)
            .flat_map(|_| sample_compound_symmetry_mvn(&mean, &cov, &mut rng).unwrap())
            .collect();
        BalancedDataset::new(OneWayDesign::new(a, n).unwrap(), values, None).unwrap()
    }

    fn twoway_data(a: usize, b: usize, n: usize, cov: TwoWayCov, seed: u64) -> BalancedDataset {
        let mut rng = RngStream::new(seed, 98);
        let mean = vec![0.0; b * n];
        let values = (0..a)
            .flat_map(|_| sample_twoway_mvn(&mean, &cov, &mut rng).unwrap())
            .collect();
        BalancedDataset::new(TwoWayNestedDesign::new(a, b, n).unwrap(), values, None).unwrap()
    }

    fn cfg(iterations: usize, burn_in: usize, seed: u64) -> GibbsConfig {
        GibbsConfig {
            iterations,
            burn_in,
            seed,
            ..GibbsConfig::default()
        }
    }

    #[test]
    fn oneway_large_sample_consistency() {
        let data = oneway_data(200, 10, 1.0, 0.5, 0.3, 1);
        let chains = fit_oneway(&data, &cfg(4000, 1000, 7)).unwrap();
        let s2 = chains.summarize("sigma2").unwrap().median;
        let tau = chains.summarize("tau").unwrap().median;
        assert!((s2 - 1.0).abs() < 0.05, "{s2}");
        assert!((tau - 0.5).abs() < 0.1, "{tau}");
        assert_eq!(chains.iterations(), 4000);
        assert_eq!(chains.post_burn_in("tau").unwrap().len(), 3000);
    }

    #[test]
    fn oneway_support_every_iteration() {
        let data = oneway_data(5, 2, 1.0, -0.4999, 0.0, 2);
        let chains = fit_oneway(&data, &cfg(5000, 100, 3)).unwrap();
        let s2 = chains.get("sigma2").unwrap();
        let tau = chains.get("tau").unwrap();
        for (s, t) in s2.iter().zip(tau) {
            assert!(*s > 0.0);
            assert!(*t > -s / 2.0);
        }
        assert!(tau.iter().any(|&t| t < 0.0));
    }

    #[test]
    fn determinism() {
        let data = oneway_data(10, 4, 1.0, 0.2, 0.0, 3);
        let c = cfg(500, 100, 11);
        assert_eq!(fit_oneway(&data, &c).unwrap(), fit_oneway(&data, &c).unwrap());
        let other = fit_oneway(&data, &cfg(500, 100, 12)).unwrap();
        assert_ne!(fit_oneway(&data, &c).unwrap(), other);
    }

    #[test]
    fn sigma2_conditional_matches_inverse_gamma() {
        let data = oneway_data(6, 4, 2.0, 0.3, 0.0, 4);
        let ss = oneway_ss_values(data.values(), 6, 4);
        let chains = fit_oneway(&data, &cfg(10_000, 0, 5)).unwrap();
        let mut draws = chains.get("sigma2").unwrap().to_vec();
        draws.sort_by(f64::total_cmp);
        let shape = (6.0 * 3.0) / 2.0;
        let scale = ss.ss_e / 2.0;
        let g = GammaDist::new(shape, 1.0).unwrap();
        let n = draws.len() as f64;
        let ks = draws
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = 1.0 - g.cdf(scale / x);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks < 0.02, "{ks}");
    }

    #[test]
    fn degenerate_data_rejected() {
        let data =
            BalancedDataset::new(OneWayDesign::new(3, 2).unwrap(), vec![1.0; 6], None).unwrap();
        assert!(matches!(fit_oneway(&data, &cfg(200, 100, 0)), Err(Error::DegenerateData(_))));
        let bad_cfg = cfg(100, 100, 0);
        let ok = oneway_data(4, 3, 1.0, 0.0, 0.0, 5);
        assert!(matches!(fit_oneway(&ok, &bad_cfg), Err(Error::InvalidConfig(_))));
        assert!(matches!(fit_twoway(&ok, &cfg(200, 100, 0)), Err(Error::ModelMismatch(_))));
    }

    #[test]
    fn twoway_support_and_null_concentration() {
        let cov = TwoWayCov::new(1.0, 0.0, 0.0, 8, 3).unwrap();
        let data = twoway_data(60, 8, 3, cov, 6);
        let chains = fit_twoway(&data, &cfg(3000, 500, 8)).unwrap();
        let s2 = chains.get("sigma2").unwrap();
        let ta = chains.get("tau_a").unwrap();
        let tb = chains.get("tau_b").unwrap();
        for ((s, a), b) in s2.iter().zip(ta).zip(tb) {
            assert!(*b > -s / 3.0);
            assert!(*a > -(b / 8.0 + s / 24.0));
        }
        assert!(tb.iter().any(|&v| v < 0.0) && tb.iter().any(|&v| v > 0.0));
        assert!(ta.iter().any(|&v| v < 0.0) && ta.iter().any(|&v| v > 0.0));
        assert!(chains.summarize("tau_b").unwrap().median.abs() < 0.1);
        assert!(chains.summarize("tau_a").unwrap().median.abs() < 0.1);
    }

    #[test]
    fn tau_a_shape_switch_changes_spread() {
        let cov = TwoWayCov::new(1.0, 0.5, 0.5, 4, 2).unwrap();
        let data = twoway_data(6, 4, 2, cov, 9);
        let half = fit_twoway(&data, &cfg(4000, 0, 1)).unwrap();
        let full_cfg = GibbsConfig {
            tau_a_shape: TauAShape::FullDf,
            ..cfg(4000, 0, 1)
        };
        let full = fit_twoway(&data, &full_cfg).unwrap();
        let sd_half = half.summarize("tau_a").unwrap().sd;
        let sd_full = full.summarize("tau_a").unwrap().sd;
        assert!(sd_full < sd_half);
    }

    fn dummy_design(a: usize, b: usize) -> (TwoWayNestedDesign, Regressors, Vec<bool>) {
        // Two measurements (pre, post) per client; half the clients per counsellor treated.
        let d = TwoWayNestedDesign::new(a, b, 2).unwrap();
        let mut rows = Vec::new();
        let mut z = Vec::new();
        for _ in 0..a {
            for j in 0..b {
                let treated = (j % 2) as f64;
                for post in [0.0, 1.0] {
                    rows.extend_from_slice(&[1.0, treated, post, treated * post]);
                    z.push(treated * post == 1.0);
                }
            }
        }
        let x = Regressors::from_rows(d.total(), 4, &rows).unwrap();
        (d, x, z)
    }

    #[test]
    fn regressors_reduce_to_ols_without_clustering() {
        let (d, x, _) = dummy_design(5, 6);
        let beta = DVector::from_column_slice(&[20.0, -0.5, -4.0, -1.0]);
        let mut rng = RngStream::new(10, 0);
        let y: Vec<f64> = (x.matrix() * &beta)
            .iter()
            .map(|m| m + 2.0 * standard_normal(&mut rng))
            .collect();
        let cov = TwoWayCov::new(3.0, 0.0, 0.0, d.b(), d.n()).unwrap();
        let (gls, _) = fixed_effects_posterior(x.matrix(), &y, &CovBlocks::TwoWay(cov)).unwrap();
        let ols_fit = ols(x.matrix(), &y).unwrap();
        assert!((gls - &ols_fit).abs().max() < 1e-9);

        let data = BalancedDataset::new(d, y, Some(x)).unwrap();
        let chains = fit_twoway(&data, &cfg(3000, 500, 2)).unwrap();
        for (k, name) in ["beta_0", "beta_1", "beta_2", "beta_3"].iter().enumerate() {
            let s = chains.summarize(name).unwrap();
            assert!((s.mean - ols_fit[k]).abs() < 3.0 * s.sd / 2.0, "{name}");
        }
    }

    #[test]
    fn regressor_oneway_recovers_parameters() {
        let (a, n) = (150, 6);
        let cov = OneWayCov::new(1.0, 0.4, n).unwrap();
        let mut rng = RngStream::new(20, 0);
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for _ in 0..a {
            let xs: Vec<f64> = (0..n).map(|_| standard_normal(&mut rng)).collect();
            let mean: Vec<f64> = xs.iter().map(|x| 1.0 + 2.0 * x).collect();
            y.extend(sample_compound_symmetry_mvn(&mean, &cov, &mut rng).unwrap());
            for x in xs {
                rows.extend_from_slice(&[1.0, x]);
            }
        }
        let x = Regressors::from_rows(a * n, 2, &rows).unwrap();
        let data = BalancedDataset::new(OneWayDesign::new(a, n).unwrap(), y, Some(x)).unwrap();
        let chains = fit_oneway(&data, &cfg(3000, 500, 4)).unwrap();
        assert!((chains.summarize("tau").unwrap().median - 0.4).abs() < 0.12);
        assert!((chains.summarize("sigma2").unwrap().median - 1.0).abs() < 0.08);
        assert!((chains.summarize("beta_1").unwrap().median - 2.0).abs() < 0.05);
    }

    #[test]
    fn interaction_support_and_errors() {
        let (d, _, z) = dummy_design(5, 10);
        let cov = TwoWayCov::new(1.0, 0.0, 0.5, d.b(), d.n()).unwrap();
        let data = twoway_data(5, 10, 2, cov, 12);
        let chains = fit_interaction(&data, &z, &cfg(2000, 200, 3)).unwrap();
        let s2 = chains.get("sigma2").unwrap();
        let tc = chains.get("tau_c").unwrap();
        for (s, c) in s2.iter().zip(tc) {
            assert!(s + c > 0.0);
        }
        assert!(chains.get("mu").is_some());

        assert!(matches!(
            fit_interaction(&data, &vec![false; d.total()], &cfg(200, 100, 0)),
            Err(Error::EmptyStratum(_))
        ));
    }

    #[test]
    fn interaction_with_regressors_runs() {
        let (d, x, z) = dummy_design(5, 18);
        let beta = DVector::from_column_slice(&[21.7, -0.1, -4.0, -1.4]);
        let cov = TwoWayCov::new(22.0, -1.1, 15.8, d.b(), d.n()).unwrap();
        let mut rng = RngStream::new(30, 0);
        let mut y = Vec::new();
        let means = x.matrix() * &beta;
        for i in 0..d.a() {
            let m: Vec<f64> = means.rows(i * d.block(), d.block()).iter().copied().collect();
            y.extend(sample_twoway_mvn(&m, &cov, &mut rng).unwrap());
        }
        let data = BalancedDataset::new(d, y, Some(x)).unwrap();
        let chains = fit_interaction(&data, &z, &cfg(2000, 200, 5)).unwrap();
        let post = chains.summarize("beta_2").unwrap();
        assert!((post.median + 4.0).abs() < 4.0 * post.sd);
        assert_eq!(chains.names().count(), 8);
    }
}
