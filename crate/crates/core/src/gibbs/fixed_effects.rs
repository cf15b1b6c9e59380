//! Generalized least squares draws for the fixed effects.
//!
//! With a flat prior the full conditional of `β` is
//! `N(Ω Xᵗ(I_a ⊗ Σ⁻¹)y, Ω)` with `Ω = (Xᵗ(I_a ⊗ Σ⁻¹)X)⁻¹`.
//!
//! For the compound-symmetric structures `Σ⁻¹ = P_E/e₀ + P_B/e₁ + P_A/e₂`
//! where `P_E`, `P_B`, `P_A` project onto within-B deviations, B-cluster
//! deviations from the A mean, and the A mean. The projected Gram matrices
//! do not depend on the covariance parameters, so they are built once and
//! each draw costs `O(p³)`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::RngCore;

use crate::covstruct::{InteractionSolver, OneWayCov, TwoWayCov};
use crate::error::{Error, Result};
use crate::rngdist::standard_normal;

/// Covariance of one A-cluster block.
#[derive(Debug, Clone, Copy)]
pub enum CovBlocks<'a> {
    OneWay(OneWayCov),
    TwoWay(TwoWayCov),
    /// One dense covariance per A-cluster, in cluster order.
    Dense(&'a [DMatrix<f64>]),
}

#[derive(Debug, Clone)]
pub(crate) struct ProjectedGram {
    g: [DMatrix<f64>; 3],
    h: [DVector<f64>; 3],
}

impl ProjectedGram {
    /// `b = 1` gives the one-way decomposition (the between-B stratum is empty).
    pub(crate) fn new(x: &DMatrix<f64>, y: &[f64], b: usize, n: usize) -> Self {
        let p = x.ncols();
        let block = b * n;
        let clusters = x.nrows() / block;
        let mut g = [DMatrix::zeros(p, p), DMatrix::zeros(p, p), DMatrix::zeros(p, p)];
        let mut h = [DVector::zeros(p), DVector::zeros(p), DVector::zeros(p)];
        for i in 0..clusters {
            let rows = x.rows(i * block, block);
            let ys = &y[i * block..(i + 1) * block];
            let cluster_x: DVector<f64> = rows.row_mean().transpose();
            let cluster_y = ys.iter().sum::<f64>() / block as f64;
            g[2] += &cluster_x * cluster_x.transpose() * block as f64;
            h[2] += &cluster_x * (cluster_y * block as f64);
            for j in 0..b {
                let cell = rows.rows(j * n, n);
                let cy = &ys[j * n..(j + 1) * n];
                let cell_x: DVector<f64> = cell.row_mean().transpose();
                let cell_y = cy.iter().sum::<f64>() / n as f64;
                let dx = &cell_x - &cluster_x;
                g[1] += &dx * dx.transpose() * n as f64;
                h[1] += &dx * ((cell_y - cluster_y) * n as f64);
                for k in 0..n {
                    let ex: DVector<f64> = cell.row(k).transpose() - &cell_x;
                    g[0] += &ex * ex.transpose();
                    h[0] += &ex * (cy[k] - cell_y);
                }
            }
        }
        Self { g, h }
    }

    /// Posterior mean and Cholesky factor of the precision for stratum eigenvalues
    /// `(within, between_b, between_a)`.
    pub(crate) fn posterior(&self, eig: [f64; 3]) -> Result<(DVector<f64>, Cholesky<f64, Dyn>)> {
        let p = self.g[0].nrows();
        let mut prec = DMatrix::zeros(p, p);
        let mut rhs = DVector::zeros(p);
        for s in 0..3 {
            prec += &self.g[s] / eig[s];
            rhs += &self.h[s] / eig[s];
        }
        let chol = prec.cholesky().ok_or(Error::RankDeficientRegressors { rank: 0, cols: p })?;
        let mean = chol.solve(&rhs);
        Ok((mean, chol))
    }

    pub(crate) fn draw<R: RngCore + ?Sized>(&self, eig: [f64; 3], rng: &mut R) -> Result<DVector<f64>> {
        let (mean, chol) = self.posterior(eig)?;
        Ok(draw_from_precision(&mean, &chol, rng))
    }
}

// mean + L⁻ᵀz has covariance (LLᵗ)⁻¹.
fn draw_from_precision<R: RngCore + ?Sized>(
    mean: &DVector<f64>,
    chol: &Cholesky<f64, Dyn>,
    rng: &mut R,
) -> DVector<f64> {
    let z = DVector::from_fn(mean.len(), |_, _| standard_normal(rng));
    let shift = chol
        .l()
        .transpose()
        .solve_upper_triangular(&z)
        .expect("Cholesky factor has a positive diagonal");
    mean + shift
}

/// Accumulates `Xᵢᵗ Σᵢ⁻¹ Xᵢ` and `Xᵢᵗ Σᵢ⁻¹ yᵢ` block by block with dense Cholesky solves.
pub(crate) fn dense_posterior(
    x: &DMatrix<f64>,
    y: &[f64],
    blocks: &[DMatrix<f64>],
) -> Result<(DVector<f64>, Cholesky<f64, Dyn>)> {
    let p = x.ncols();
    let mut prec = DMatrix::zeros(p, p);
    let mut rhs = DVector::zeros(p);
    let mut start = 0;
    for (i, sigma) in blocks.iter().enumerate() {
        let size = sigma.nrows();
        let xi = x.rows(start, size).into_owned();
        let yi = DVector::from_column_slice(&y[start..start + size]);
        let chol = sigma.clone().cholesky().ok_or_else(|| {
            Error::NotPositiveDefinite(format!("covariance block {i} has no Cholesky factor"))
        })?;
        let sx = chol.solve(&xi);
        let sy = chol.solve(&yi);
        prec += xi.transpose() * sx;
        rhs += xi.transpose() * sy;
        start += size;
    }
    if start != x.nrows() {
        return Err(Error::LengthMismatch {
            expected: x.nrows(),
            actual: start,
        });
    }
    let chol = prec.cholesky().ok_or(Error::RankDeficientRegressors { rank: 0, cols: p })?;
    let mean = chol.solve(&rhs);
    Ok((mean, chol))
}

pub(crate) fn dense_draw<R: RngCore + ?Sized>(
    x: &DMatrix<f64>,
    y: &[f64],
    blocks: &[DMatrix<f64>],
    rng: &mut R,
) -> Result<DVector<f64>> {
    let (mean, chol) = dense_posterior(x, y, blocks)?;
    Ok(draw_from_precision(&mean, &chol, rng))
}

/// GLS draw with every A-cluster block applied through its structured solver.
pub(crate) fn solver_draw<R: RngCore + ?Sized>(
    x: &DMatrix<f64>,
    y: &[f64],
    solvers: &[InteractionSolver],
    rng: &mut R,
) -> Result<DVector<f64>> {
    let p = x.ncols();
    let mut prec = DMatrix::zeros(p, p);
    let mut rhs = DVector::zeros(p);
    let block = x.nrows() / solvers.len().max(1);
    for (i, solver) in solvers.iter().enumerate() {
        let xi = x.rows(i * block, block);
        let sy = solver.solve(&y[i * block..(i + 1) * block]);
        for c in 0..p {
            let col: Vec<f64> = xi.column(c).iter().copied().collect();
            let sx = solver.solve(&col);
            rhs[c] += xi.column(c).iter().zip(&sy).map(|(a, b)| a * b).sum::<f64>();
            for r in 0..p {
                prec[(r, c)] += xi.column(r).iter().zip(&sx).map(|(a, b)| a * b).sum::<f64>();
            }
        }
    }
    let chol = prec.cholesky().ok_or(Error::RankDeficientRegressors { rank: 0, cols: p })?;
    let mean = chol.solve(&rhs);
    Ok(draw_from_precision(&mean, &chol, rng))
}

fn check_shapes(x: &DMatrix<f64>, y: &[f64], block: usize) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::LengthMismatch {
            expected: x.nrows(),
            actual: y.len(),
        });
    }
    if block == 0 || y.len() % block != 0 {
        return Err(Error::LengthMismatch {
            expected: block * (y.len() / block.max(1)).max(1),
            actual: y.len(),
        });
    }
    Ok(())
}

/// Posterior mean and covariance `Ω` of the fixed effects given the covariance blocks.
pub fn fixed_effects_posterior(
    x: &DMatrix<f64>,
    y: &[f64],
    cov: &CovBlocks<'_>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (mean, chol) = match cov {
        CovBlocks::OneWay(c) => {
            c.validate()?;
            check_shapes(x, y, c.n)?;
            let (l1, l2) = c.eigenvalues();
            ProjectedGram::new(x, y, 1, c.n).posterior([l2, 1.0, l1])?
        }
        CovBlocks::TwoWay(c) => {
            c.validate()?;
            check_shapes(x, y, c.dim())?;
            let (e0, e1, e2) = c.eigenvalues();
            ProjectedGram::new(x, y, c.b, c.n).posterior([e0, e1, e2])?
        }
        CovBlocks::Dense(blocks) => dense_posterior(x, y, blocks)?,
    };
    Ok((mean, chol.inverse()))
}

/// One draw of `β` from its normal full conditional.
pub fn sample_fixed_effects<R: RngCore + ?Sized>(
    x: &DMatrix<f64>,
    y: &[f64],
    cov: &CovBlocks<'_>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    match cov {
        CovBlocks::OneWay(c) => {
            c.validate()?;
            check_shapes(x, y, c.n)?;
            let (l1, l2) = c.eigenvalues();
            ProjectedGram::new(x, y, 1, c.n).draw([l2, 1.0, l1], rng)
        }
        CovBlocks::TwoWay(c) => {
            c.validate()?;
            check_shapes(x, y, c.dim())?;
            let (e0, e1, e2) = c.eigenvalues();
            ProjectedGram::new(x, y, c.b, c.n).draw([e0, e1, e2], rng)
        }
        CovBlocks::Dense(blocks) => dense_draw(x, y, blocks, rng),
    }
}
