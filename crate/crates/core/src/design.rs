//! Balanced designs, datasets and sampler configuration.
//!
//! Observations are stored cluster-major: in a two-way nested design the
//! observation `(i, j, k)` (A-cluster `i`, B-cluster `j`, replicate `k`) lives
//! at index `i*b*n + j*n + k`. Every sum of squares and every structured
//! covariance block in the crate relies on this layout.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `a` clusters of `n` observations each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OneWayDesign {
    a: usize,
    n: usize,
}

impl OneWayDesign {
    pub fn new(a: usize, n: usize) -> Result<Self> {
        if a < 2 {
            return Err(Error::DegenerateDesign(format!(
                "one-way design needs at least 2 clusters, got a={a}"
            )));
        }
        if n < 2 {
            return Err(Error::DegenerateDesign(format!(
                "one-way design needs at least 2 observations per cluster, got n={n}"
            )));
        }
        Ok(Self { a, n })
    }

    pub fn a(&self) -> usize {
        self.a
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn total(&self) -> usize {
        self.a * self.n
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.a && j < self.n);
        i * self.n + j
    }

    pub fn coords(&self, idx: usize) -> (usize, usize) {
        (idx / self.n, idx % self.n)
    }
}

/// `a` type-A clusters, each holding `b` type-B clusters of `n` observations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TwoWayNestedDesign {
    a: usize,
    b: usize,
    n: usize,
}

impl TwoWayNestedDesign {
    /// Rejects `b = 1`: the B stratum would be empty and the model collapses to one-way.
    pub fn new(a: usize, b: usize, n: usize) -> Result<Self> {
        for (name, v) in [("a", a), ("b", b), ("n", n)] {
            if v < 2 {
                return Err(Error::DegenerateDesign(format!(
                    "two-way nested design needs {name} >= 2, got {name}={v}"
                )));
            }
        }
        Ok(Self { a, b, n })
    }

    pub fn a(&self) -> usize {
        self.a
    }

    pub fn b(&self) -> usize {
        self.b
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Size of one A-cluster block.
    pub fn block(&self) -> usize {
        self.b * self.n
    }

    pub fn total(&self) -> usize {
        self.a * self.b * self.n
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        debug_assert!(i < self.a && j < self.b && k < self.n);
        i * self.b * self.n + j * self.n + k
    }

    pub fn coords(&self, idx: usize) -> (usize, usize, usize) {
        let bn = self.b * self.n;
        (idx / bn, (idx % bn) / self.n, idx % self.n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Design {
    OneWay(OneWayDesign),
    TwoWay(TwoWayNestedDesign),
}

impl Design {
    pub fn total(&self) -> usize {
        match self {
            Design::OneWay(d) => d.total(),
            Design::TwoWay(d) => d.total(),
        }
    }

    /// Number of top-level (type-A) clusters.
    pub fn clusters(&self) -> usize {
        match self {
            Design::OneWay(d) => d.a(),
            Design::TwoWay(d) => d.a(),
        }
    }

    /// Observations per top-level cluster.
    pub fn block(&self) -> usize {
        match self {
            Design::OneWay(d) => d.n(),
            Design::TwoWay(d) => d.block(),
        }
    }

    /// Observations per innermost cluster.
    pub fn n(&self) -> usize {
        match self {
            Design::OneWay(d) => d.n(),
            Design::TwoWay(d) => d.n(),
        }
    }
}

impl From<OneWayDesign> for Design {
    fn from(d: OneWayDesign) -> Self {
        Design::OneWay(d)
    }
}

impl From<TwoWayNestedDesign> for Design {
    fn from(d: TwoWayNestedDesign) -> Self {
        Design::TwoWay(d)
    }
}

/// Observation-level fixed-effect covariates, one row per observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Regressors {
    names: Vec<String>,
    matrix: DMatrix<f64>,
}

impl Regressors {
    pub fn new(names: Vec<String>, matrix: DMatrix<f64>) -> Result<Self> {
        if names.len() != matrix.ncols() {
            return Err(Error::InvalidConfig(format!(
                "{} regressor names for {} columns",
                names.len(),
                matrix.ncols()
            )));
        }
        Ok(Self { names, matrix })
    }

    /// Builds from row-major data with default names `beta_0..beta_{p-1}`.
    pub fn from_rows(rows: usize, cols: usize, data: &[f64]) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::LengthMismatch {
                expected: rows * cols,
                actual: data.len(),
            });
        }
        let names = (0..cols).map(|c| format!("beta_{c}")).collect();
        Self::new(names, DMatrix::from_row_slice(rows, cols, data))
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn ncols(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn rank(&self) -> usize {
        let svd = self.matrix.clone().svd(false, false);
        let smax = svd.singular_values.max();
        if smax == 0.0 {
            return 0;
        }
        let tol = smax * 1e-10 * (self.matrix.nrows().max(self.matrix.ncols()) as f64);
        svd.singular_values.iter().filter(|&&s| s > tol).count()
    }
}

/// Outcomes of a balanced design in cluster-major order, plus optional regressors.
#[derive(Debug, Clone, PartialEq)]
pub struct BalancedDataset {
    design: Design,
    values: Vec<f64>,
    regressors: Option<Regressors>,
}

impl BalancedDataset {
    pub fn new(
        design: impl Into<Design>,
        values: Vec<f64>,
        regressors: Option<Regressors>,
    ) -> Result<Self> {
        let data = Self::new_unchecked(design.into(), values, regressors);
        data.validate()?;
        Ok(data)
    }

    /// Skips validation; call [`BalancedDataset::validate`] before use.
    pub fn new_unchecked(design: Design, values: Vec<f64>, regressors: Option<Regressors>) -> Self {
        Self {
            design,
            values,
            regressors,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.design {
            Design::OneWay(d) => {
                OneWayDesign::new(d.a, d.n)?;
            }
            Design::TwoWay(d) => {
                TwoWayNestedDesign::new(d.a, d.b, d.n)?;
            }
        }
        let expected = self.design.total();
        if self.values.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                actual: self.values.len(),
            });
        }
        if let Some((i, _)) = self.values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "observation {i} is not a finite number"
            )));
        }
        if let Some(x) = &self.regressors {
            if x.matrix.nrows() != expected {
                return Err(Error::RegressorShape {
                    rows: x.matrix.nrows(),
                    expected,
                });
            }
            let rank = x.rank();
            if rank < x.ncols() {
                return Err(Error::RankDeficientRegressors {
                    rank,
                    cols: x.ncols(),
                });
            }
        }
        Ok(())
    }

    pub fn design(&self) -> Design {
        self.design
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn regressors(&self) -> Option<&Regressors> {
        self.regressors.as_ref()
    }

    /// Rows of the regressor matrix that belong to A-cluster `i`.
    pub fn cluster_regressors(&self, i: usize) -> Option<DMatrix<f64>> {
        let block = self.design.block();
        self.regressors
            .as_ref()
            .map(|x| x.matrix.rows(i * block, block).into_owned())
    }

    pub fn cluster_means(&self) -> ClusterMeans {
        cluster_means(self)
    }
}

/// Per-cluster means and grand mean of a balanced dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterMeans {
    /// `ȳ_i.` for each A-cluster.
    pub cluster: Vec<f64>,
    /// `ȳ_ij.` in cluster-major order; two-way designs only.
    pub sub_cluster: Option<Vec<f64>>,
    pub grand: f64,
}

fn block_means(values: &[f64], size: usize) -> Vec<f64> {
    values
        .chunks_exact(size)
        .map(|c| c.iter().sum::<f64>() / size as f64)
        .collect()
}

pub fn cluster_means(data: &BalancedDataset) -> ClusterMeans {
    let values = data.values();
    match data.design() {
        Design::OneWay(d) => {
            let cluster = block_means(values, d.n());
            let grand = cluster.iter().sum::<f64>() / cluster.len() as f64;
            ClusterMeans {
                cluster,
                sub_cluster: None,
                grand,
            }
        }
        Design::TwoWay(d) => {
            let sub = block_means(values, d.n());
            let cluster = block_means(&sub, d.b());
            let grand = cluster.iter().sum::<f64>() / cluster.len() as f64;
            ClusterMeans {
                cluster,
                sub_cluster: Some(sub),
                grand,
            }
        }
    }
}

/// Shape convention for the type-A covariance step of the two-way sampler.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TauAShape {
    /// Half the degrees of freedom, as in the one-way derivation.
    #[default]
    HalfDf,
    /// The full degrees of freedom.
    FullDf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GibbsConfig {
    pub iterations: usize,
    pub burn_in: usize,
    /// Inverse-gamma prior shape hyperparameter for σ² (prior is IG(g1/2, g2/2)).
    pub prior_g1: f64,
    /// Inverse-gamma prior scale hyperparameter for σ².
    pub prior_g2: f64,
    pub seed: u64,
    #[serde(default)]
    pub tau_a_shape: TauAShape,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        Self {
            iterations: 10_000,
            burn_in: 5_000,
            prior_g1: 0.0,
            prior_g2: 0.0,
            seed: 0,
            tau_a_shape: TauAShape::HalfDf,
        }
    }
}

impl GibbsConfig {
    /// Long-run setting used for real-data analyses: 20,000 iterations, 1,000 burn-in.
    pub fn real_data(seed: u64) -> Self {
        Self {
            iterations: 20_000,
            burn_in: 1_000,
            seed,
            ..Self::default()
        }
    }

    /// Reduced setting for replicated studies: 4,000 iterations, 2,000 burn-in.
    pub fn desk(seed: u64) -> Self {
        Self {
            iterations: 4_000,
            burn_in: 2_000,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("iterations must be positive".into()));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::InvalidConfig(format!(
                "burn-in ({}) must be smaller than iterations ({})",
                self.burn_in, self.iterations
            )));
        }
        if !(self.prior_g1 >= 0.0 && self.prior_g1.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "prior g1 must be a finite non-negative number, got {}",
                self.prior_g1
            )));
        }
        if !(self.prior_g2 >= 0.0 && self.prior_g2.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "prior g2 must be a finite non-negative number, got {}",
                self.prior_g2
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hand_computed_means() {
        let d = BalancedDataset::new(OneWayDesign::new(2, 2).unwrap(), vec![1.0, 3.0, 5.0, 7.0], None)
            .unwrap();
        let m = d.cluster_means();
        assert_eq!(m.cluster, vec![2.0, 6.0]);
        assert_eq!(m.grand, 4.0);
        assert!(m.sub_cluster.is_none());
    }

    #[test]
    fn constant_data_means() {
        let d = BalancedDataset::new(TwoWayNestedDesign::new(3, 2, 4).unwrap(), vec![2.5; 24], None)
            .unwrap();
        let m = d.cluster_means();
        assert!(m.cluster.iter().all(|&v| v == 2.5));
        assert!(m.sub_cluster.unwrap().iter().all(|&v| v == 2.5));
        assert_eq!(m.grand, 2.5);
    }

    #[test]
    fn grand_mean_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let a = rng.random_range(2..9);
            let n = rng.random_range(2..9);
            let values: Vec<f64> = (0..a * n).map(|_| rng.random_range(-50.0..50.0)).collect();
            let direct = values.iter().sum::<f64>() / values.len() as f64;
            let d = BalancedDataset::new(OneWayDesign::new(a, n).unwrap(), values, None).unwrap();
            assert!((d.cluster_means().grand - direct).abs() < 1e-12 * 50.0);
        }
    }

    #[test]
    fn validation_errors() {
        let d = OneWayDesign::new(2, 2).unwrap();
        assert!(BalancedDataset::new(d, vec![0.0; 4], None).is_ok());
        assert!(matches!(
            BalancedDataset::new(d, vec![0.0; 3], None),
            Err(Error::LengthMismatch { expected: 4, actual: 3 })
        ));
        assert!(matches!(OneWayDesign::new(1, 5), Err(Error::DegenerateDesign(_))));
        assert!(matches!(OneWayDesign::new(5, 1), Err(Error::DegenerateDesign(_))));
        assert!(matches!(TwoWayNestedDesign::new(3, 1, 2), Err(Error::DegenerateDesign(_))));

        let unchecked = BalancedDataset::new_unchecked(
            Design::OneWay(OneWayDesign { a: 1, n: 3 }),
            vec![0.0; 3],
            None,
        );
        assert!(matches!(unchecked.validate(), Err(Error::DegenerateDesign(_))));
    }

    #[test]
    fn rank_deficient_regressors_rejected() {
        let d = OneWayDesign::new(2, 2).unwrap();
        // Second column is twice the first.
        let x = Regressors::from_rows(4, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0, 1.0, 2.0]).unwrap();
        assert!(matches!(
            BalancedDataset::new(d, vec![1.0, 2.0, 3.0, 4.0], Some(x)),
            Err(Error::RankDeficientRegressors { rank: 1, cols: 2 })
        ));
        let x = Regressors::from_rows(4, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0]).unwrap();
        let data = BalancedDataset::new(d, vec![1.0, 2.0, 3.0, 4.0], Some(x)).unwrap();
        assert_eq!(data.cluster_regressors(1).unwrap().nrows(), 2);
    }

    #[test]
    fn index_round_trip() {
        let d = TwoWayNestedDesign::new(3, 4, 5).unwrap();
        let mut seen = vec![false; d.total()];
        for i in 0..3 {
            for j in 0..4 {
                for k in 0..5 {
                    let idx = d.index(i, j, k);
                    assert_eq!(idx, i * 20 + j * 5 + k);
                    assert_eq!(d.coords(idx), (i, j, k));
                    seen[idx] = true;
                }
            }
        }
        assert!(seen.into_iter().all(|s| s));
        let o = OneWayDesign::new(4, 3).unwrap();
        for idx in 0..o.total() {
            let (i, j) = o.coords(idx);
            assert_eq!(o.index(i, j), idx);
        }
    }

    #[test]
    fn config_validation() {
        assert!(GibbsConfig::default().validate().is_ok());
        let bad = GibbsConfig {
            burn_in: 10,
            iterations: 10,
            ..GibbsConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::InvalidConfig(_))));
        let bad = GibbsConfig {
            prior_g1: -1.0,
            ..GibbsConfig::default()
        };
        assert!(bad.validate().is_err());
        assert_eq!(GibbsConfig::real_data(1).iterations, 20_000);
        assert_eq!(GibbsConfig::real_data(1).burn_in, 1_000);
    }

    proptest::proptest! {
        #[test]
        fn mean_of_cluster_means_is_grand_mean(
            a in 2usize..6, b in 2usize..5, n in 2usize..5,
            seed in 0u64..1000,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = TwoWayNestedDesign::new(a, b, n).unwrap();
            let values: Vec<f64> = (0..d.total()).map(|_| rng.random_range(-1e3..1e3)).collect();
            let direct = values.iter().sum::<f64>() / values.len() as f64;
            let data = BalancedDataset::new(d, values, None).unwrap();
            let m = data.cluster_means();
            let mean_of_means = m.cluster.iter().sum::<f64>() / a as f64;
            proptest::prop_assert!((mean_of_means - m.grand).abs() < 1e-12 * 1e3);
            proptest::prop_assert!((direct - m.grand).abs() < 1e-12 * 1e3);
        }
    }
}
