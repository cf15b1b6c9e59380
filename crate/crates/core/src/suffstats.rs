//! Sum-of-squares partitions of balanced data.
//!
//! All routines are two-pass: means first, then squared deviations.

use serde::{Deserialize, Serialize};

use crate::design::{BalancedDataset, Design, TwoWayNestedDesign};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OneWaySS {
    /// Between clusters: `Σ_i n(ȳ_i. - ȳ..)²`.
    pub ss_a: f64,
    /// Within clusters: `Σ_i Σ_j (y_ij - ȳ_i.)²`.
    pub ss_e: f64,
    pub ss_t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoWaySS {
    /// Between A-clusters: `Σ_i bn(ȳ_i.. - ȳ...)²`.
    pub ss_a: f64,
    /// Between B-clusters within A: `Σ_i Σ_j n(ȳ_ij. - ȳ_i..)²`.
    pub ss_b: f64,
    /// Within B-clusters: `Σ (y_ijk - ȳ_ij.)²`.
    pub ss_e: f64,
    pub ss_t: f64,
}

/// Strata of the heteroscedastic interaction model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InteractionSS {
    /// Within-B-cluster SS over B-clusters with no flagged observation.
    pub ss_e_base: f64,
    /// SS of flagged observations around their common mean.
    pub ss_e_het: f64,
    /// Number of B-clusters with no flagged observation.
    pub n0: usize,
    /// Number of flagged observations.
    pub n1: usize,
}

// Constant input returns its value exactly so that degenerate data yields SS = 0.
fn mean(xs: &[f64]) -> f64 {
    if xs.iter().all(|&x| x == xs[0]) {
        return xs[0];
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn block_means(values: &[f64], size: usize) -> Vec<f64> {
    values.chunks_exact(size).map(mean).collect()
}

fn sq_dev(xs: &[f64], centre: f64) -> f64 {
    xs.iter().map(|x| (x - centre) * (x - centre)).sum()
}

pub fn oneway_ss_values(values: &[f64], a: usize, n: usize) -> OneWaySS {
    debug_assert_eq!(values.len(), a * n);
    let means = block_means(values, n);
    let grand = mean(&means);
    let ss_a = n as f64 * sq_dev(&means, grand);
    let ss_e = values
        .chunks_exact(n)
        .zip(&means)
        .map(|(c, &m)| sq_dev(c, m))
        .sum();
    let ss_t = sq_dev(values, grand);
    OneWaySS { ss_a, ss_e, ss_t }
}

pub fn twoway_ss_values(values: &[f64], a: usize, b: usize, n: usize) -> TwoWaySS {
    debug_assert_eq!(values.len(), a * b * n);
    let cell = block_means(values, n);
    let cluster = block_means(&cell, b);
    let grand = mean(&cluster);
    let ss_a = (b * n) as f64 * sq_dev(&cluster, grand);
    let ss_b = n as f64
        * cell
            .chunks_exact(b)
            .zip(&cluster)
            .map(|(c, &m)| sq_dev(c, m))
            .sum::<f64>();
    let ss_e = values
        .chunks_exact(n)
        .zip(&cell)
        .map(|(c, &m)| sq_dev(c, m))
        .sum();
    let ss_t = sq_dev(values, grand);
    TwoWaySS {
        ss_a,
        ss_b,
        ss_e,
        ss_t,
    }
}

/// `Σ_i size·(mean of block i)²`: the between-cluster SS around a known zero mean.
pub fn uncentered_between(values: &[f64], size: usize) -> f64 {
    values
        .chunks_exact(size)
        .map(|c| {
            let m = mean(c);
            size as f64 * m * m
        })
        .sum()
}

pub fn oneway_ss(data: &BalancedDataset) -> Result<OneWaySS> {
    match data.design() {
        Design::OneWay(d) => Ok(oneway_ss_values(data.values(), d.a(), d.n())),
        Design::TwoWay(_) => Err(Error::ModelMismatch(
            "one-way sums of squares requested for a two-way design".into(),
        )),
    }
}

pub fn twoway_ss(data: &BalancedDataset) -> Result<TwoWaySS> {
    match data.design() {
        Design::TwoWay(d) => Ok(twoway_ss_values(data.values(), d.a(), d.b(), d.n())),
        Design::OneWay(_) => Err(Error::ModelMismatch(
            "two-way sums of squares requested for a one-way design".into(),
        )),
    }
}

/// Indicator layout checked against a two-way design: `(n0, n1)` stratum sizes.
///
/// Each B-cluster may hold at most one flagged observation; the base stratum
/// needs at least one B-cluster and the flagged stratum at least two
/// observations.
pub fn indicator_strata(design: &TwoWayNestedDesign, z: &[bool]) -> Result<(usize, usize)> {
    if z.len() != design.total() {
        return Err(Error::InvalidIndicator(format!(
            "indicator has length {}, expected {}",
            z.len(),
            design.total()
        )));
    }
    let mut n0 = 0;
    let mut n1 = 0;
    for (cell, flags) in z.chunks_exact(design.n()).enumerate() {
        let count = flags.iter().filter(|&&f| f).count();
        match count {
            0 => n0 += 1,
            1 => n1 += 1,
            _ => {
                let (i, j, _) = design.coords(cell * design.n());
                return Err(Error::InvalidIndicator(format!(
                    "B-cluster ({i}, {j}) has {count} flagged observations, at most one allowed"
                )));
            }
        }
    }
    if n0 == 0 {
        return Err(Error::EmptyStratum(
            "every B-cluster holds a flagged observation; no homoscedastic stratum".into(),
        ));
    }
    if n1 < 2 {
        return Err(Error::EmptyStratum(format!(
            "heteroscedastic stratum needs at least 2 flagged observations, got {n1}"
        )));
    }
    Ok((n0, n1))
}

pub fn interaction_ss_values(
    values: &[f64],
    design: &TwoWayNestedDesign,
    z: &[bool],
) -> Result<InteractionSS> {
    let (n0, n1) = indicator_strata(design, z)?;
    let n = design.n();
    let ss_e_base = values
        .chunks_exact(n)
        .zip(z.chunks_exact(n))
        .filter(|(_, flags)| flags.iter().all(|&f| !f))
        .map(|(c, _)| sq_dev(c, mean(c)))
        .sum();
    let flagged: Vec<f64> = values
        .iter()
        .zip(z)
        .filter(|(_, &f)| f)
        .map(|(&v, _)| v)
        .collect();
    let ss_e_het = sq_dev(&flagged, mean(&flagged));
    Ok(InteractionSS {
        ss_e_base,
        ss_e_het,
        n0,
        n1,
    })
}

pub fn interaction_ss(data: &BalancedDataset, z: &[bool]) -> Result<InteractionSS> {
    match data.design() {
        Design::TwoWay(d) => interaction_ss_values(data.values(), &d, z),
        Design::OneWay(_) => Err(Error::ModelMismatch(
            "interaction strata need a two-way nested design".into(),
        )),
    }
}
