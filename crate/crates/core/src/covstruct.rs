//! Structured covariance matrices for clustered observations.
//!
//! One-way: `Σ = σ²I_n + τJ_n` (compound symmetry).
//! Two-way nested: `Σ = σ²I_{bn} + τ_a J_{bn} + τ_b (I_b ⊗ J_n)`.
//! Interaction: the two-way matrix plus `τ_c` on the diagonal wherever the
//! indicator `z` is set.
//!
//! The compound-symmetric structures decompose over three orthogonal
//! projectors (within B-cluster, between B within A, A-cluster mean), which
//! gives closed forms for eigenvalues, determinant and inverse. Dense
//! factorizations are only needed for the heteroscedastic interaction matrix.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::design::Design;
use crate::error::{Error, Result};

/// Margin for the strict positive-definiteness checks; points on the bound are rejected.
pub const PD_MARGIN: f64 = 1e-12;

pub fn strictly_above(value: f64, bound: f64) -> bool {
    value.is_finite() && value > bound + PD_MARGIN * bound.abs().max(1.0)
}

/// PD bound for the one-way covariance: `τ > -σ²/n`.
pub fn oneway_tau_bound(sigma2: f64, n: usize) -> f64 {
    -sigma2 / n as f64
}

/// PD bounds for the two-way covariance: `(τ_b bound, τ_a bound given τ_b)`.
pub fn twoway_bounds(sigma2: f64, tau_b: f64, b: usize, n: usize) -> (f64, f64) {
    let (b, n) = (b as f64, n as f64);
    (-sigma2 / n, -(tau_b / b + sigma2 / (b * n)))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LowerBounds {
    pub tau: Option<f64>,
    pub tau_b: Option<f64>,
    pub tau_a: Option<f64>,
}

/// Lower bounds on the covariance parameters implied by positive definiteness.
///
/// For two-way designs the `τ_a` bound depends on the current `τ_b`; it is
/// only reported when `tau_b` is supplied.
pub fn lower_bounds(design: &Design, sigma2: f64, tau_b: Option<f64>) -> LowerBounds {
    match design {
        Design::OneWay(d) => LowerBounds {
            tau: Some(oneway_tau_bound(sigma2, d.n())),
            ..LowerBounds::default()
        },
        Design::TwoWay(d) => LowerBounds {
            tau: None,
            tau_b: Some(-sigma2 / d.n() as f64),
            tau_a: tau_b.map(|tb| twoway_bounds(sigma2, tb, d.b(), d.n()).1),
        },
    }
}

/// Intraclass correlation `τ / (σ² + τ)`; negative for negative `τ`.
pub fn icc(sigma2: f64, tau: f64) -> Result<f64> {
    if !(sigma2 > 0.0) {
        return Err(Error::InvalidParams(format!("sigma2 must be positive, got {sigma2}")));
    }
    let total = sigma2 + tau;
    if !(total > 0.0) {
        return Err(Error::InvalidParams(format!(
            "total variance sigma2 + tau must be positive, got {total}"
        )));
    }
    Ok(tau / total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OneWayCov {
    pub sigma2: f64,
    pub tau: f64,
    pub n: usize,
}

impl OneWayCov {
    pub fn new(sigma2: f64, tau: f64, n: usize) -> Result<Self> {
        let cov = Self { sigma2, tau, n };
        cov.validate()?;
        Ok(cov)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidParams("cluster size must be positive".into()));
        }
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(Error::NotPositiveDefinite(format!(
                "sigma2 must be positive, got {}",
                self.sigma2
            )));
        }
        let bound = oneway_tau_bound(self.sigma2, self.n);
        if !strictly_above(self.tau, bound) {
            return Err(Error::NotPositiveDefinite(format!(
                "tau = {} must exceed -sigma2/n = {bound}",
                self.tau
            )));
        }
        Ok(())
    }

    /// `(λ₁, λ₂)`: `σ² + nτ` once (eigenvector `1_n`) and `σ²` with multiplicity `n - 1`.
    pub fn eigenvalues(&self) -> (f64, f64) {
        eigvals_oneway(self)
    }

    pub fn determinant(&self) -> f64 {
        let (l1, l2) = self.eigenvalues();
        l1 * l2.powi(self.n as i32 - 1)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| {
            if i == j {
                self.sigma2 + self.tau
            } else {
                self.tau
            }
        })
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        inv_oneway(self)
    }
}

pub fn build_oneway(params: &OneWayCov) -> Result<DMatrix<f64>> {
    params.validate()?;
    Ok(params.to_dense())
}

pub fn eigvals_oneway(params: &OneWayCov) -> (f64, f64) {
    (params.sigma2 + params.n as f64 * params.tau, params.sigma2)
}

/// `(1/σ²)(I - τ/(σ² + nτ) J)`.
pub fn inv_oneway(params: &OneWayCov) -> DMatrix<f64> {
    let c = params.tau / (params.sigma2 + params.n as f64 * params.tau);
    let s = 1.0 / params.sigma2;
    DMatrix::from_fn(params.n, params.n, |i, j| {
        if i == j {
            s * (1.0 - c)
        } else {
            -s * c
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoWayCov {
    pub sigma2: f64,
    pub tau_a: f64,
    pub tau_b: f64,
    pub b: usize,
    pub n: usize,
}

impl TwoWayCov {
    pub fn new(sigma2: f64, tau_a: f64, tau_b: f64, b: usize, n: usize) -> Result<Self> {
        let cov = Self {
            sigma2,
            tau_a,
            tau_b,
            b,
            n,
        };
        cov.validate()?;
        Ok(cov)
    }

    pub fn validate(&self) -> Result<()> {
        validate_twoway_shift(self.sigma2, self.tau_a, self.tau_b, self.b, self.n)
    }

    /// Distinct eigenvalues `(σ², σ² + nτ_b, σ² + nτ_b + bnτ_a)` with
    /// multiplicities `b(n-1)`, `b-1` and `1`.
    pub fn eigenvalues(&self) -> (f64, f64, f64) {
        let (b, n) = (self.b as f64, self.n as f64);
        let within = self.sigma2;
        let between_b = self.sigma2 + n * self.tau_b;
        let between_a = between_b + b * n * self.tau_a;
        (within, between_b, between_a)
    }

    pub fn dim(&self) -> usize {
        self.b * self.n
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.n;
        DMatrix::from_fn(self.dim(), self.dim(), |r, c| {
            let mut v = self.tau_a;
            if r / n == c / n {
                v += self.tau_b;
            }
            if r == c {
                v += self.sigma2;
            }
            v
        })
    }

    pub fn determinant(&self) -> f64 {
        det_twoway(self)
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        inv_twoway(self)
    }
}

// Bounds with an arbitrary shift variance; the interaction model substitutes
// the pooled residual variance here.
fn validate_twoway_shift(shift_var: f64, tau_a: f64, tau_b: f64, b: usize, n: usize) -> Result<()> {
    if b == 0 || n == 0 {
        return Err(Error::InvalidParams("b and n must be positive".into()));
    }
    if !(shift_var > 0.0 && shift_var.is_finite()) {
        return Err(Error::NotPositiveDefinite(format!(
            "residual variance must be positive, got {shift_var}"
        )));
    }
    let (tb_bound, ta_bound) = twoway_bounds(shift_var, tau_b, b, n);
    if !strictly_above(tau_b, tb_bound) {
        return Err(Error::NotPositiveDefinite(format!(
            "tau_b = {tau_b} must exceed -sigma2/n = {tb_bound}"
        )));
    }
    if !strictly_above(tau_a, ta_bound) {
        return Err(Error::NotPositiveDefinite(format!(
            "tau_a = {tau_a} must exceed -(tau_b/b + sigma2/(bn)) = {ta_bound}"
        )));
    }
    Ok(())
}

pub fn build_twoway(params: &TwoWayCov) -> Result<DMatrix<f64>> {
    params.validate()?;
    Ok(params.to_dense())
}

/// `(nbτ_a + nτ_b + σ²)(nτ_b + σ²)^{b-1}(σ²)^{b(n-1)}`.
pub fn det_twoway(params: &TwoWayCov) -> f64 {
    let (within, between_b, between_a) = params.eigenvalues();
    between_a
        * between_b.powi(params.b as i32 - 1)
        * within.powi((params.b * (params.n - 1)) as i32)
}

/// Spectral inverse `P_E/σ² + P_B/(σ² + nτ_b) + P_A/(σ² + nτ_b + bnτ_a)`.
pub fn inv_twoway(params: &TwoWayCov) -> DMatrix<f64> {
    let (within, between_b, between_a) = params.eigenvalues();
    let (b, n) = (params.b, params.n);
    let inv_n = 1.0 / n as f64;
    let inv_bn = 1.0 / (b * n) as f64;
    DMatrix::from_fn(b * n, b * n, |r, c| {
        let same_b = r / n == c / n;
        let p_a = inv_bn;
        let p_b = if same_b { inv_n - inv_bn } else { -inv_bn };
        let p_e = if r == c { 1.0 - inv_n } else if same_b { -inv_n } else { 0.0 };
        p_e / within + p_b / between_b + p_a / between_a
    })
}

/// Residual variance averaged over strata: `w₀σ² + w₁(σ² + τ_c/n)` with
/// `w₀ = n₀/(n₀+n₁)`, `w₁ = n₁/(n₀+n₁)`.
///
/// `n₀` counts B-clusters without a heteroscedastic observation and `n₁` the
/// heteroscedastic observations (one per affected B-cluster). A B-cluster
/// mean then has variance `σ̃²/n` in either stratum.
pub fn pooled_variance(sigma2: f64, tau_c: f64, n0: usize, n1: usize, n: usize) -> f64 {
    let total = (n0 + n1) as f64;
    let w0 = n0 as f64 / total;
    let w1 = n1 as f64 / total;
    w0 * sigma2 + w1 * (sigma2 + tau_c / n as f64)
}

/// Two-way covariance with a heteroscedastic diagonal increment `τ_c` where `z` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionCov {
    pub sigma2: f64,
    pub tau_a: f64,
    pub tau_b: f64,
    pub tau_c: f64,
    pub b: usize,
    pub n: usize,
    pub z: Vec<bool>,
    /// Variance used in the `τ_a`/`τ_b` shift terms.
    pub pooled_sigma2: f64,
}

impl InteractionCov {
    /// Uses the pooled variance implied by this block's own indicator.
    pub fn new(
        sigma2: f64,
        tau_a: f64,
        tau_b: f64,
        tau_c: f64,
        b: usize,
        n: usize,
        z: Vec<bool>,
    ) -> Result<Self> {
        if z.len() != b * n {
            return Err(Error::InvalidIndicator(format!(
                "indicator has length {}, expected b*n = {}",
                z.len(),
                b * n
            )));
        }
        let n1 = z.iter().filter(|&&v| v).count();
        let n0 = z.chunks_exact(n).filter(|c| c.iter().all(|&v| !v)).count();
        let pooled = if n0 + n1 == 0 {
            sigma2
        } else {
            pooled_variance(sigma2, tau_c, n0, n1, n)
        };
        Self::with_pooled(sigma2, tau_a, tau_b, tau_c, b, n, z, pooled)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn with_pooled(
        sigma2: f64,
        tau_a: f64,
        tau_b: f64,
        tau_c: f64,
        b: usize,
        n: usize,
        z: Vec<bool>,
        pooled_sigma2: f64,
    ) -> Result<Self> {
        let cov = Self {
            sigma2,
            tau_a,
            tau_b,
            tau_c,
            b,
            n,
            z,
            pooled_sigma2,
        };
        cov.validate()?;
        Ok(cov)
    }

    pub fn validate(&self) -> Result<()> {
        if self.z.len() != self.b * self.n {
            return Err(Error::InvalidIndicator(format!(
                "indicator has length {}, expected b*n = {}",
                self.z.len(),
                self.b * self.n
            )));
        }
        if !(self.sigma2 > 0.0) {
            return Err(Error::NotPositiveDefinite(format!(
                "sigma2 must be positive, got {}",
                self.sigma2
            )));
        }
        if !strictly_above(self.tau_c, -self.sigma2) {
            return Err(Error::NotPositiveDefinite(format!(
                "sigma2 + tau_c = {} must be positive",
                self.sigma2 + self.tau_c
            )));
        }
        validate_twoway_shift(self.pooled_sigma2, self.tau_a, self.tau_b, self.b, self.n)
    }

    pub fn base(&self) -> TwoWayCov {
        TwoWayCov {
            sigma2: self.sigma2,
            tau_a: self.tau_a,
            tau_b: self.tau_b,
            b: self.b,
            n: self.n,
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = self.base().to_dense();
        for (i, &flag) in self.z.iter().enumerate() {
            if flag {
                m[(i, i)] += self.tau_c;
            }
        }
        m
    }
}

/// `Σ⁻¹v` for one interaction block without forming `Σ`.
///
/// `Σ = D + τ_b Σ_j 1_j1_jᵗ + τ_a 11ᵗ` with `D` diagonal, so the B-cell blocks
/// are inverted by Sherman-Morrison and the `τ_a` rank-one term by a second
/// update. Construction fails exactly when `Σ` is not positive definite.
#[derive(Debug, Clone)]
pub struct InteractionSolver {
    n: usize,
    tau_a: f64,
    tau_b: f64,
    inv_d: Vec<f64>,
    /// `1 + τ_b 1ᵗD_j⁻¹1` per B-cell.
    cell_denom: Vec<f64>,
    /// `M⁻¹1` where `M` omits the `τ_a` term.
    m_inv_one: Vec<f64>,
    /// `1 + τ_a 1ᵗM⁻¹1`.
    a_denom: f64,
}

impl InteractionSolver {
    pub fn new(cov: &InteractionCov) -> Result<Self> {
        let n = cov.n;
        let not_pd = |what: &str| Err(Error::NotPositiveDefinite(format!("interaction block: {what}")));
        let d: Vec<f64> = cov
            .z
            .iter()
            .map(|&f| cov.sigma2 + if f { cov.tau_c } else { 0.0 })
            .collect();
        if d.iter().any(|&v| !(v > 0.0)) {
            return not_pd("non-positive residual variance");
        }
        let inv_d: Vec<f64> = d.iter().map(|v| 1.0 / v).collect();
        let cell_denom: Vec<f64> = inv_d
            .chunks_exact(n)
            .map(|c| 1.0 + cov.tau_b * c.iter().sum::<f64>())
            .collect();
        if cell_denom.iter().any(|&v| !(v > 0.0)) {
            return not_pd("tau_b below the cell bound");
        }
        let mut solver = Self {
            n,
            tau_a: cov.tau_a,
            tau_b: cov.tau_b,
            inv_d,
            cell_denom,
            m_inv_one: Vec::new(),
            a_denom: 1.0,
        };
        solver.m_inv_one = solver.solve_m(&vec![1.0; d.len()]);
        solver.a_denom = 1.0 + cov.tau_a * solver.m_inv_one.iter().sum::<f64>();
        if !(solver.a_denom > 0.0) {
            return not_pd("tau_a below the cluster bound");
        }
        Ok(solver)
    }

    fn solve_m(&self, v: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = v.iter().zip(&self.inv_d).map(|(x, w)| x * w).collect();
        for ((cell, w), denom) in out
            .chunks_exact_mut(self.n)
            .zip(self.inv_d.chunks_exact(self.n))
            .zip(&self.cell_denom)
        {
            let dot: f64 = cell.iter().sum();
            let f = self.tau_b * dot / denom;
            for (o, wi) in cell.iter_mut().zip(w) {
                *o -= f * wi;
            }
        }
        out
    }

    pub fn solve(&self, v: &[f64]) -> Vec<f64> {
        let mut out = self.solve_m(v);
        let f = self.tau_a * out.iter().sum::<f64>() / self.a_denom;
        for (o, u) in out.iter_mut().zip(&self.m_inv_one) {
            *o -= f * u;
        }
        out
    }
}

pub fn build_interaction(params: &InteractionCov) -> Result<DMatrix<f64>> {
    params.validate()?;
    Ok(params.to_dense())
}
