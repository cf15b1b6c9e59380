//! Seeded random streams and the samplers the Gibbs steps and data
//! generators draw from.
//!
//! Inverse-gamma uses the shape/scale convention: `IG(α, β)` has density
//! `∝ x^{-α-1} exp(-β/x)` and mean `β/(α-1)`; a draw is `β / G` with
//! `G ~ Gamma(α, 1)`.

use nalgebra::{DMatrix, DVector};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::covstruct::{OneWayCov, TwoWayCov};
use crate::error::{Error, Result};

/// A reproducible random stream identified by `(seed, stream_id)`.
///
/// Backed by ChaCha8 with the stream id mapped onto the cipher's stream
/// word, so distinct ids give non-overlapping keystreams.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Stream key for one Monte Carlo cell: condition index (24 bits), replication
/// index (32 bits), purpose tag (8 bits). Injective within those ranges.
pub fn substream_key(condition: usize, replication: usize, purpose: u8) -> u64 {
    assert!(condition < (1 << 24), "condition index {condition} out of range");
    assert!(replication < (1 << 32), "replication index {replication} out of range");
    ((condition as u64) << 40) | ((replication as u64) << 8) | purpose as u64
}

pub fn standard_normal<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvGammaParams {
    pub shape: f64,
    pub scale: f64,
}

impl InvGammaParams {
    pub fn new(shape: f64, scale: f64) -> Result<Self> {
        let p = Self { shape, scale };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.shape > 0.0 && self.shape.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "inverse-gamma shape must be positive, got {}",
                self.shape
            )));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "inverse-gamma scale must be positive, got {}",
                self.scale
            )));
        }
        Ok(())
    }
}

/// `λ - shift` with `λ ~ IG(shape, scale)`; support is `(-shift, ∞)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShiftedInvGammaParams {
    pub shape: f64,
    pub scale: f64,
    pub shift: f64,
}

impl ShiftedInvGammaParams {
    pub fn new(shape: f64, scale: f64, shift: f64) -> Result<Self> {
        InvGammaParams::new(shape, scale)?;
        if !shift.is_finite() {
            return Err(Error::InvalidParams(format!("shift must be finite, got {shift}")));
        }
        Ok(Self { shape, scale, shift })
    }
}

pub fn sample_inv_gamma<R: RngCore + ?Sized>(p: &InvGammaParams, rng: &mut R) -> Result<f64> {
    p.validate()?;
    let gamma = Gamma::new(p.shape, 1.0).map_err(|e| Error::InvalidParams(e.to_string()))?;
    loop {
        let g: f64 = gamma.sample(rng);
        // Tiny shapes can underflow to zero.
        if g > 0.0 {
            let draw = p.scale / g;
            if draw.is_finite() {
                return Ok(draw);
            }
        }
    }
}

pub fn sample_shifted_inv_gamma<R: RngCore + ?Sized>(
    p: &ShiftedInvGammaParams,
    rng: &mut R,
) -> Result<f64> {
    let lambda = sample_inv_gamma(&InvGammaParams::new(p.shape, p.scale)?, rng)?;
    let draw = lambda - p.shift;
    debug_assert!(lambda > 0.0);
    Ok(draw)
}

fn check_mean(mean: &[f64], dim: usize) -> Result<()> {
    if mean.len() != dim {
        return Err(Error::LengthMismatch {
            expected: dim,
            actual: mean.len(),
        });
    }
    Ok(())
}

/// Exact draw from `N(mean, σ²I + τJ)` through the compound-symmetry
/// eigenstructure: `mean + √σ²(z - z̄1) + √(σ² + nτ) z̄1`.
pub fn sample_compound_symmetry_mvn<R: RngCore + ?Sized>(
    mean: &[f64],
    params: &OneWayCov,
    rng: &mut R,
) -> Result<Vec<f64>> {
    params.validate()?;
    check_mean(mean, params.n)?;
    let (l1, l2) = params.eigenvalues();
    let z: Vec<f64> = (0..params.n).map(|_| standard_normal(rng)).collect();
    let zbar = z.iter().sum::<f64>() / params.n as f64;
    let (s1, s2) = (l1.sqrt(), l2.sqrt());
    Ok(mean
        .iter()
        .zip(&z)
        .map(|(m, zi)| m + s2 * (zi - zbar) + s1 * zbar)
        .collect())
}

/// Exact draw from the two-way nested covariance: the white vector is split
/// into within-B, between-B and A-mean components, each scaled by the square
/// root of its eigenvalue.
pub fn sample_twoway_mvn<R: RngCore + ?Sized>(
    mean: &[f64],
    params: &TwoWayCov,
    rng: &mut R,
) -> Result<Vec<f64>> {
    params.validate()?;
    let (b, n) = (params.b, params.n);
    check_mean(mean, b * n)?;
    let (within, between_b, between_a) = params.eigenvalues();
    let (s_e, s_b, s_a) = (within.sqrt(), between_b.sqrt(), between_a.sqrt());
    let z: Vec<f64> = (0..b * n).map(|_| standard_normal(rng)).collect();
    let cell: Vec<f64> = z.chunks_exact(n).map(|c| c.iter().sum::<f64>() / n as f64).collect();
    let grand = cell.iter().sum::<f64>() / b as f64;
    Ok(mean
        .iter()
        .zip(&z)
        .enumerate()
        .map(|(idx, (m, zi))| {
            let c = cell[idx / n];
            m + s_e * (zi - c) + s_b * (c - grand) + s_a * grand
        })
        .collect())
}

/// Draw from `N(mean, cov)` through a dense Cholesky factor.
pub fn sample_mvn_dense<R: RngCore + ?Sized>(
    mean: &[f64],
    cov: &DMatrix<f64>,
    rng: &mut R,
) -> Result<Vec<f64>> {
    check_mean(mean, cov.nrows())?;
    let chol = cov
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("covariance matrix has no Cholesky factor".into()))?;
    let z = DVector::from_fn(cov.nrows(), |_, _| standard_normal(rng));
    let x = chol.l() * z;
    Ok(mean.iter().zip(x.iter()).map(|(m, v)| m + v).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covstruct::twoway_bounds;
    use statrs::distribution::{ContinuousCDF, Gamma as GammaDist};

    // P(λ ≤ x) for λ ~ IG(α, β) equals P(G ≥ β/x) for G ~ Gamma(α, 1).
    fn inv_gamma_cdf(x: f64, shape: f64, scale: f64) -> f64 {
        let g = GammaDist::new(shape, 1.0).unwrap();
        1.0 - g.cdf(scale / x)
    }

    fn ks_statistic(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
        xs.sort_by(f64::total_cmp);
        let n = xs.len() as f64;
        xs.iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = cdf(x);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let mut a = RngStream::new(42, 7);
        let mut b = RngStream::new(42, 7);
        let mut c = RngStream::new(42, 8);
        let xa: Vec<u64> = (0..32).map(|_| a.next_u64()).collect();
        let xb: Vec<u64> = (0..32).map(|_| b.next_u64()).collect();
        let xc: Vec<u64> = (0..32).map(|_| c.next_u64()).collect();
        assert_eq!(xa, xb);
        assert_ne!(xa, xc);
        assert_eq!(a.stream_id(), 7);
        assert_eq!(a.seed(), 42);
    }

    #[test]
    fn substream_keys_are_distinct() {
        let mut keys = std::collections::HashSet::new();
        for c in 0..20 {
            for r in 0..50 {
                for p in 0..3 {
                    assert!(keys.insert(substream_key(c, r, p)));
                }
            }
        }
    }

    #[test]
    fn independent_streams_uncorrelated() {
        let mut a = RngStream::new(1, substream_key(0, 0, 0));
        let mut b = RngStream::new(1, substream_key(0, 1, 0));
        let n = 100_000;
        let xs: Vec<(f64, f64)> = (0..n).map(|_| (standard_normal(&mut a), standard_normal(&mut b))).collect();
        let r = xs.iter().map(|(x, y)| x * y).sum::<f64>() / n as f64;
        // 5 standard errors.
        assert!(r.abs() < 5.0 / (n as f64).sqrt());
    }

    #[test]
    fn inv_gamma_moments() {
        let p = InvGammaParams::new(3.0, 4.0).unwrap();
        let mut rng = RngStream::new(2024, 0);
        let n = 1_000_000;
        let draws: Vec<f64> = (0..n).map(|_| sample_inv_gamma(&p, &mut rng).unwrap()).collect();
        assert!(draws.iter().all(|&d| d > 0.0));
        let mean = draws.iter().sum::<f64>() / n as f64;
        assert!((mean - 2.0).abs() < 0.02, "mean {mean}");
        // Variance 4 has an infinite fourth moment at shape 3; use a loose tolerance.
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((var - 4.0).abs() < 0.4, "var {var}");
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(InvGammaParams::new(0.0, 1.0).is_err());
        assert!(InvGammaParams::new(1.0, 0.0).is_err());
        assert!(ShiftedInvGammaParams::new(1.0, 1.0, f64::NAN).is_err());
        let bad = InvGammaParams { shape: -1.0, scale: 1.0 };
        assert!(sample_inv_gamma(&bad, &mut RngStream::new(0, 0)).is_err());
    }

    #[test]
    fn zero_shift_reduces_to_inv_gamma() {
        let p = ShiftedInvGammaParams::new(2.5, 1.5, 0.0).unwrap();
        let q = InvGammaParams::new(2.5, 1.5).unwrap();
        let mut a = RngStream::new(9, 0);
        let mut b = RngStream::new(9, 0);
        for _ in 0..1000 {
            assert_eq!(
                sample_shifted_inv_gamma(&p, &mut a).unwrap(),
                sample_inv_gamma(&q, &mut b).unwrap()
            );
        }
    }

    #[test]
    fn shifted_support_and_ks() {
        let p = ShiftedInvGammaParams::new(12.0, 0.7, 0.05).unwrap();
        let mut rng = RngStream::new(77, 3);
        let draws: Vec<f64> = (0..100_000).map(|_| sample_shifted_inv_gamma(&p, &mut rng).unwrap()).collect();
        assert!(draws.iter().all(|&d| d > -0.05));
        let shifted: Vec<f64> = draws.iter().map(|d| d + 0.05).collect();
        let ks = ks_statistic(shifted, |x| inv_gamma_cdf(x, 12.0, 0.7));
        assert!(ks < 0.01, "ks {ks}");
    }

    fn sample_cov(draws: &[Vec<f64>], mean: &[f64]) -> DMatrix<f64> {
        let d = mean.len();
        let mut m = DMatrix::zeros(d, d);
        for x in draws {
            for r in 0..d {
                for c in 0..d {
                    m[(r, c)] += (x[r] - mean[r]) * (x[c] - mean[c]);
                }
            }
        }
        m / draws.len() as f64
    }

    #[test]
    fn compound_symmetry_moments() {
        let p = OneWayCov::new(1.0, 0.5, 5).unwrap();
        let mean = vec![0.3; 5];
        let mut rng = RngStream::new(5, 0);
        let draws: Vec<Vec<f64>> = (0..100_000)
            .map(|_| sample_compound_symmetry_mvn(&mean, &p, &mut rng).unwrap())
            .collect();
        let cov = sample_cov(&draws, &mean);
        assert!((cov - p.to_dense()).abs().max() < 0.02);
    }

    #[test]
    fn compound_symmetry_negative_correlation() {
        let p = OneWayCov::new(1.0, -0.45, 2).unwrap();
        let mut rng = RngStream::new(6, 0);
        let draws: Vec<Vec<f64>> = (0..100_000)
            .map(|_| sample_compound_symmetry_mvn(&[0.0, 0.0], &p, &mut rng).unwrap())
            .collect();
        let cov = sample_cov(&draws, &[0.0, 0.0]);
        let corr = cov[(0, 1)] / (cov[(0, 0)] * cov[(1, 1)]).sqrt();
        assert!((corr - (-0.45 / 0.55)).abs() < 0.01, "corr {corr}");
    }

    #[test]
    fn compound_symmetry_iid_when_tau_zero() {
        let p = OneWayCov::new(2.0, 0.0, 3).unwrap();
        let mut rng = RngStream::new(8, 0);
        let draws: Vec<Vec<f64>> = (0..50_000)
            .map(|_| sample_compound_symmetry_mvn(&[1.0; 3], &p, &mut rng).unwrap())
            .collect();
        let cov = sample_cov(&draws, &[1.0; 3]);
        assert!((cov - DMatrix::identity(3, 3) * 2.0).abs().max() < 0.06);
        assert!(sample_compound_symmetry_mvn(&[0.0; 2], &p, &mut rng).is_err());
    }

    #[test]
    fn twoway_moments_and_dense_agreement() {
        let p = TwoWayCov::new(1.0, 0.3, 0.6, 2, 2).unwrap();
        let mean = vec![0.0; 4];
        let mut rng = RngStream::new(10, 0);
        let draws: Vec<Vec<f64>> = (0..100_000)
            .map(|_| sample_twoway_mvn(&mean, &p, &mut rng).unwrap())
            .collect();
        let cov = sample_cov(&draws, &mean);
        assert!((&cov - p.to_dense()).abs().max() < 0.03);

        let dense: Vec<Vec<f64>> = (0..100_000)
            .map(|_| sample_mvn_dense(&mean, &p.to_dense(), &mut rng).unwrap())
            .collect();
        let dense_cov = sample_cov(&dense, &mean);
        assert!((cov - dense_cov).abs().max() < 0.04);
    }

    #[test]
    fn twoway_negative_tau_a() {
        let (_, ta_bound) = twoway_bounds(1.0, 0.4, 3, 2);
        let tau_a = ta_bound + 0.05;
        assert!(tau_a < 0.0);
        let p = TwoWayCov::new(1.0, tau_a, 0.4, 3, 2).unwrap();
        let mean = vec![0.0; 6];
        let mut rng = RngStream::new(12, 0);
        let draws: Vec<Vec<f64>> = (0..100_000)
            .map(|_| sample_twoway_mvn(&mean, &p, &mut rng).unwrap())
            .collect();
        let cov = sample_cov(&draws, &mean);
        // Observations 0 and 2 share the A-cluster but not the B-cluster.
        assert!((cov[(0, 2)] - tau_a).abs() < 0.02, "{} vs {tau_a}", cov[(0, 2)]);
    }

    #[test]
    fn twoway_iid_when_zero() {
        let p = TwoWayCov::new(1.0, 0.0, 0.0, 2, 3).unwrap();
        let mut rng = RngStream::new(13, 0);
        let draws: Vec<Vec<f64>> = (0..50_000)
            .map(|_| sample_twoway_mvn(&[0.0; 6], &p, &mut rng).unwrap())
            .collect();
        let cov = sample_cov(&draws, &[0.0; 6]);
        assert!((cov - DMatrix::identity(6, 6)).abs().max() < 0.03);
    }

    #[test]
    fn dense_sampler_rejects_indefinite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(sample_mvn_dense(&[0.0, 0.0], &m, &mut RngStream::new(0, 0)).is_err());
    }
}
