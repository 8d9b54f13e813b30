//! Autoregressive multi-fidelity Gaussian-process regression.
//!
//! Fidelity levels are indexed from 0 (lowest) to `s - 1` (the ground truth).
//! Level `f > 0` is modelled as `φ_f = ρ_{f-1} φ_{f-1} + δ_f` with mutually
//! independent squared-exponential discrepancies `δ_f`. Posterior queries are
//! always for the top level.

mod fit;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Bounds, Point};

pub use fit::{fit_hyperparameters, FitBounds, FitOutcome, DEFAULT_FIT_BUDGET};

/// Relative diagonal jitter added to `K + Θ` before the first factorization
/// attempt, as a fraction of the mean diagonal.
pub const JITTER_FACTOR: f64 = 1e-10;
/// Factorization attempts beyond the first, each with ten times more jitter.
pub const JITTER_RETRIES: usize = 3;

/// Squared-exponential kernel parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelParams {
    /// Signal variance `v²`.
    pub variance: f64,
    /// Squared lengthscale `l²`.
    pub lengthscale_sq: f64,
}

impl KernelParams {
    pub fn new(variance: f64, lengthscale_sq: f64) -> Result<Self> {
        let p = Self {
            variance,
            lengthscale_sq,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.variance > 0.0
            && self.lengthscale_sq > 0.0
            && self.variance.is_finite()
            && self.lengthscale_sq.is_finite()
        {
            Ok(())
        } else {
            Err(Error::InvalidHyper(format!(
                "kernel variance and squared lengthscale must be positive, got {self:?}"
            )))
        }
    }

    #[inline]
    pub fn eval(&self, a: &Point, b: &Point) -> f64 {
        self.variance * (-a.distance_sq(b) / (2.0 * self.lengthscale_sq)).exp()
    }
}

pub fn kernel_eval(p: &KernelParams, x: &Point, x_prime: &Point) -> f64 {
    p.eval(x, x_prime)
}

/// Hyperparameters of an `s`-level model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MfgpHyper {
    /// Discrepancy kernel of each level.
    pub kernels: Vec<KernelParams>,
    /// `rho[f]` scales level `f` into level `f + 1`; length `s - 1`.
    pub rho: Vec<f64>,
    /// Observation noise variance of each level.
    pub noise_vars: Vec<f64>,
    /// Constant prior mean of each discrepancy; empty means all zero.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub prior_means: Vec<f64>,
}

impl MfgpHyper {
    pub fn single(kernel: KernelParams, noise_var: f64) -> Self {
        Self {
            kernels: vec![kernel],
            rho: Vec::new(),
            noise_vars: vec![noise_var],
            prior_means: Vec::new(),
        }
    }

    pub fn two_level(
        low: KernelParams,
        high: KernelParams,
        rho: f64,
        noise_vars: [f64; 2],
    ) -> Self {
        Self {
            kernels: vec![low, high],
            rho: vec![rho],
            noise_vars: noise_vars.to_vec(),
            prior_means: Vec::new(),
        }
    }

    pub fn levels(&self) -> usize {
        self.kernels.len()
    }

    pub fn top(&self) -> usize {
        self.levels() - 1
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.kernels.len();
        if s == 0 {
            return Err(Error::InvalidHyper(
                "at least one fidelity level is required".into(),
            ));
        }
        if self.rho.len() != s - 1 || self.noise_vars.len() != s {
            return Err(Error::InvalidHyper(format!(
                "{s} level(s) need {} rho and {s} noise entries, got {} and {}",
                s - 1,
                self.rho.len(),
                self.noise_vars.len()
            )));
        }
        if !self.prior_means.is_empty() && self.prior_means.len() != s {
            return Err(Error::InvalidHyper(format!(
                "expected {s} prior means, got {}",
                self.prior_means.len()
            )));
        }
        for k in &self.kernels {
            k.validate()?;
        }
        if self.rho.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(Error::InvalidHyper("rho entries must be positive".into()));
        }
        if self
            .noise_vars
            .iter()
            .any(|n| !(*n >= 0.0 && n.is_finite()))
        {
            return Err(Error::InvalidHyper(
                "noise variances must be nonnegative".into(),
            ));
        }
        Ok(())
    }

    /// `ρ_{from:to} = Π_{j=from}^{to-1} ρ_j`, one when `from == to`.
    pub fn rho_product(&self, from: usize, to: usize) -> f64 {
        self.rho[from..to].iter().product()
    }

    fn prior_mean_level(&self, level: usize) -> f64 {
        self.prior_means.get(level).copied().unwrap_or(0.0)
    }

    /// Prior mean of observations at level `f`: `Σ_{i≤f} ρ_{i:f} μ^i`.
    pub fn observation_mean(&self, f: usize) -> f64 {
        (0..=f)
            .map(|i| self.rho_product(i, f) * self.prior_mean_level(i))
            .sum()
    }

    /// Prior mean of the top level.
    pub fn prior_mean(&self) -> f64 {
        self.observation_mean(self.top())
    }

    /// Prior covariance of the top level, `Σ_i ρ_{i:s}² k^i(x, x')`.
    pub fn prior_covariance(&self, x: &Point, x_prime: &Point) -> f64 {
        let s = self.top();
        self.kernels
            .iter()
            .enumerate()
            .map(|(i, k)| self.rho_product(i, s).powi(2) * k.eval(x, x_prime))
            .sum()
    }

    pub fn prior_variance(&self) -> f64 {
        let s = self.top();
        self.kernels
            .iter()
            .enumerate()
            .map(|(i, k)| self.rho_product(i, s).powi(2) * k.variance)
            .sum()
    }
}

/// Sample locations and values at one fidelity level.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FidelityDataset {
    pub fidelity: usize,
    pub locations: Vec<Point>,
    pub values: Vec<f64>,
}

impl FidelityDataset {
    pub fn new(fidelity: usize) -> Self {
        Self {
            fidelity,
            ..Default::default()
        }
    }

    pub fn from_samples(fidelity: usize, locations: Vec<Point>, values: Vec<f64>) -> Self {
        assert_eq!(locations.len(), values.len(), "one value per location");
        Self {
            fidelity,
            locations,
            values,
        }
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    pub fn push(&mut self, x: Point, y: f64) {
        self.locations.push(x);
        self.values.push(y);
    }
}

/// Concatenates every dataset into one level-0 dataset, in input order.
pub fn collapse_to_single_fidelity(datasets: &[FidelityDataset]) -> FidelityDataset {
    let mut out = FidelityDataset::new(0);
    for d in datasets {
        out.locations.extend_from_slice(&d.locations);
        out.values.extend_from_slice(&d.values);
    }
    out
}

fn check_datasets(hyper: &MfgpHyper, datasets: &[FidelityDataset]) -> Result<()> {
    if datasets.len() != hyper.levels() {
        return Err(Error::InvalidHyper(format!(
            "{} dataset(s) supplied for {} fidelity level(s)",
            datasets.len(),
            hyper.levels()
        )));
    }
    for (f, d) in datasets.iter().enumerate() {
        if d.fidelity != f {
            return Err(Error::InvalidFidelity {
                index: d.fidelity,
                levels: hyper.levels(),
            });
        }
        if d.locations.len() != d.values.len() {
            return Err(Error::InvalidHyper(format!(
                "dataset {f} has {} locations but {} values",
                d.locations.len(),
                d.values.len()
            )));
        }
    }
    Ok(())
}

/// `K + Θ` over the stacked observations of every level, in level order.
pub fn assemble_block_covariance(hyper: &MfgpHyper, datasets: &[FidelityDataset]) -> DMatrix<f64> {
    let offsets = block_offsets(datasets);
    let n = *offsets.last().unwrap();
    let mut k = DMatrix::zeros(n, n);
    for (f, df) in datasets.iter().enumerate() {
        for (g, dg) in datasets.iter().enumerate().skip(f) {
            // only the upper block triangle; mirrored below
            let coeffs: Vec<(usize, f64)> = (0..=f)
                .map(|i| (i, hyper.rho_product(i, f) * hyper.rho_product(i, g)))
                .collect();
            for (a, xa) in df.locations.iter().enumerate() {
                let row = offsets[f] + a;
                let start = if f == g { a } else { 0 };
                for (b, xb) in dg.locations.iter().enumerate().skip(start) {
                    let col = offsets[g] + b;
                    let v: f64 = coeffs
                        .iter()
                        .map(|&(i, c)| c * hyper.kernels[i].eval(xa, xb))
                        .sum();
                    k[(row, col)] = v;
                    k[(col, row)] = v;
                }
            }
        }
        for a in 0..df.len() {
            k[(offsets[f] + a, offsets[f] + a)] += hyper.noise_vars[f];
        }
    }
    k
}

/// Covariance between every observation and the top level at `x`.
pub fn cross_covariance(
    hyper: &MfgpHyper,
    datasets: &[FidelityDataset],
    x: &Point,
) -> DVector<f64> {
    let s = hyper.top();
    let n: usize = datasets.iter().map(FidelityDataset::len).sum();
    let mut out = DVector::zeros(n);
    let mut row = 0;
    for (f, d) in datasets.iter().enumerate() {
        let coeffs: Vec<f64> = (0..=f)
            .map(|i| hyper.rho_product(i, f) * hyper.rho_product(i, s))
            .collect();
        for xf in &d.locations {
            out[row] = coeffs
                .iter()
                .enumerate()
                .map(|(i, c)| c * hyper.kernels[i].eval(xf, x))
                .sum();
            row += 1;
        }
    }
    out
}

fn block_offsets(datasets: &[FidelityDataset]) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(datasets.len() + 1);
    offsets.push(0);
    for d in datasets {
        offsets.push(offsets.last().unwrap() + d.len());
    }
    offsets
}

/// `ν`: observations minus their prior means, stacked in level order.
fn centered_observations(hyper: &MfgpHyper, datasets: &[FidelityDataset]) -> DVector<f64> {
    DVector::from_iterator(
        datasets.iter().map(FidelityDataset::len).sum(),
        datasets.iter().enumerate().flat_map(|(f, d)| {
            let m = hyper.observation_mean(f);
            d.values.iter().map(move |y| y - m)
        }),
    )
}

/// Cholesky factor of `matrix + jitter·I`, escalating the jitter on failure.
/// Returns the factor and the jitter that was used.
pub fn factor_with_jitter(matrix: DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let n = matrix.nrows();
    let mean_diag = matrix.diagonal().mean().abs();
    let base = JITTER_FACTOR * if mean_diag > 0.0 { mean_diag } else { 1.0 };
    for attempt in 0..=JITTER_RETRIES {
        let jitter = base * 10f64.powi(attempt as i32);
        let mut m = matrix.clone();
        for i in 0..n {
            m[(i, i)] += jitter;
        }
        if let Some(chol) = m.cholesky() {
            return Ok((chol, jitter));
        }
    }
    Err(Error::DegenerateFactorization {
        size: n,
        attempts: JITTER_RETRIES + 1,
    })
}

/// Standard Gaussian log density of the stacked observations.
pub fn log_marginal_likelihood(hyper: &MfgpHyper, datasets: &[FidelityDataset]) -> Result<f64> {
    hyper.validate()?;
    check_datasets(hyper, datasets)?;
    let nu = centered_observations(hyper, datasets);
    let n = nu.len();
    if n == 0 {
        return Err(Error::InvalidHyper(
            "log marginal likelihood needs at least one observation".into(),
        ));
    }
    let (chol, _) = factor_with_jitter(assemble_block_covariance(hyper, datasets))?;
    let alpha = chol.solve(&nu);
    let log_det: f64 = chol
        .l_dirty()
        .diagonal()
        .iter()
        .map(|d| d.ln())
        .sum::<f64>()
        * 2.0;
    Ok(-0.5 * nu.dot(&alpha) - 0.5 * log_det - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln())
}

/// Posterior mean and variance of the top level at a set of query points.
#[derive(Clone, Debug, PartialEq)]
pub struct Posterior {
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
}

impl Posterior {
    pub fn max_variance(&self) -> f64 {
        self.variances.iter().copied().fold(0.0, f64::max)
    }
}

/// Fitted model: data, hyperparameters and the cached factorization.
///
/// Every mutation produces a fully refactorized model.
#[derive(Clone, Debug)]
pub struct MfgpModel {
    hyper: MfgpHyper,
    datasets: Vec<FidelityDataset>,
    domain: Bounds,
    cache: Option<Cache>,
}

#[derive(Clone, Debug)]
struct Cache {
    chol: Cholesky<f64, Dyn>,
    weights: DVector<f64>,
}

impl MfgpModel {
    /// Model with no observations at any level.
    pub fn empty(hyper: MfgpHyper, domain: Bounds) -> Result<Self> {
        let datasets = (0..hyper.levels()).map(FidelityDataset::new).collect();
        Self::new(hyper, datasets, domain)
    }

    pub fn new(hyper: MfgpHyper, datasets: Vec<FidelityDataset>, domain: Bounds) -> Result<Self> {
        hyper.validate()?;
        check_datasets(&hyper, &datasets)?;
        for d in &datasets {
            for x in &d.locations {
                domain.ensure_contains(*x)?;
            }
        }
        let cache = Self::build_cache(&hyper, &datasets)?;
        Ok(Self {
            hyper,
            datasets,
            domain,
            cache,
        })
    }

    fn build_cache(hyper: &MfgpHyper, datasets: &[FidelityDataset]) -> Result<Option<Cache>> {
        let nu = centered_observations(hyper, datasets);
        if nu.is_empty() {
            return Ok(None);
        }
        let (chol, _) = factor_with_jitter(assemble_block_covariance(hyper, datasets))?;
        let weights = chol.solve(&nu);
        Ok(Some(Cache { chol, weights }))
    }

    pub fn hyper(&self) -> &MfgpHyper {
        &self.hyper
    }

    pub fn datasets(&self) -> &[FidelityDataset] {
        &self.datasets
    }

    pub fn domain(&self) -> &Bounds {
        &self.domain
    }

    pub fn levels(&self) -> usize {
        self.hyper.levels()
    }

    /// Index of the ground-truth level.
    pub fn top(&self) -> usize {
        self.hyper.top()
    }

    pub fn observation_count(&self) -> usize {
        self.datasets.iter().map(FidelityDataset::len).sum()
    }

    /// Size of the factorized covariance system.
    pub fn system_size(&self) -> usize {
        self.cache.as_ref().map_or(0, |c| c.weights.len())
    }

    /// New model with one more observation at level `fidelity`.
    pub fn add_observation(&self, fidelity: usize, x: Point, y: f64) -> Result<Self> {
        self.add_observations(&[(fidelity, x, y)])
    }

    /// New model with a batch of `(fidelity, location, value)` observations
    /// appended in order; one refactorization for the whole batch.
    pub fn add_observations(&self, samples: &[(usize, Point, f64)]) -> Result<Self> {
        let mut datasets = self.datasets.clone();
        for &(f, x, y) in samples {
            if f >= self.levels() {
                return Err(Error::InvalidFidelity {
                    index: f,
                    levels: self.levels(),
                });
            }
            self.domain.ensure_contains(x)?;
            datasets[f].push(x, y);
        }
        let cache = Self::build_cache(&self.hyper, &datasets)?;
        Ok(Self {
            hyper: self.hyper.clone(),
            datasets,
            domain: self.domain,
            cache,
        })
    }

    /// Same data under different hyperparameters.
    pub fn with_hyper(&self, hyper: MfgpHyper) -> Result<Self> {
        Self::new(hyper, self.datasets.clone(), self.domain)
    }

    pub fn posterior(&self, queries: &[Point]) -> Posterior {
        let mut post = self.posterior_unclamped(queries);
        for v in &mut post.variances {
            *v = v.max(0.0);
        }
        post
    }

    /// Posterior without clamping round-off negatives in the variance.
    pub fn posterior_unclamped(&self, queries: &[Point]) -> Posterior {
        let prior_mean = self.hyper.prior_mean();
        let prior_var = self.hyper.prior_variance();
        let Some(cache) = &self.cache else {
            return Posterior {
                means: vec![prior_mean; queries.len()],
                variances: vec![prior_var; queries.len()],
            };
        };
        let n = cache.weights.len();
        let mut cross = DMatrix::zeros(n, queries.len());
        for (j, q) in queries.iter().enumerate() {
            cross.set_column(j, &cross_covariance(&self.hyper, &self.datasets, q));
        }
        let means = cross
            .tr_mul(&cache.weights)
            .iter()
            .map(|m| prior_mean + m)
            .collect();
        let half = cache
            .chol
            .l_dirty()
            .solve_lower_triangular(&cross)
            .expect("Cholesky factor has a nonzero diagonal");
        let variances = half
            .column_iter()
            .zip(queries)
            .map(|(col, q)| self.hyper.prior_covariance(q, q) - col.norm_squared())
            .collect();
        Posterior { means, variances }
    }

    pub fn posterior_at(&self, x: &Point) -> (f64, f64) {
        let p = self.posterior(std::slice::from_ref(x));
        (p.means[0], p.variances[0])
    }
}
