//! Finite Gaussian mixtures fitted by EM under the eigen-decomposition
//! covariance families, scored by BIC.

mod init;
mod model;
mod mstep;
mod search;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, log_det_spd};
pub use model::{count_params, ModelName};
pub use search::{model_search, FitFailure, ModelSearch};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// How the first EM run of a fit is started.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitStrategy {
    /// Ward agglomerative partition cut at G groups (deterministic).
    Hierarchical,
    /// k-means++ seeding refined by Lloyd iterations.
    KMeans,
    /// Uniform random soft responsibilities.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub max_iter: usize,
    /// Stop when the relative change in log-likelihood drops below this.
    pub rel_tol: f64,
    pub init: InitStrategy,
    /// Number of EM runs; the best log-likelihood is kept.
    pub restarts: usize,
    pub seed: u64,
    /// Covariance eigenvalue floor, relative to the average data variance.
    pub variance_floor: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            max_iter: 500,
            rel_tol: 1e-5,
            init: InitStrategy::KMeans,
            restarts: 1,
            seed: 0,
            variance_floor: 1e-8,
        }
    }
}

impl FitConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iter < 1 {
            return Err(Error::InvalidInput("max_iter must be at least 1".into()));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::InvalidInput("rel_tol must be positive".into()));
        }
        if self.restarts < 1 {
            return Err(Error::InvalidInput("restarts must be at least 1".into()));
        }
        if !(self.variance_floor >= 0.0) {
            return Err(Error::InvalidInput("variance floor must be non-negative".into()));
        }
        Ok(())
    }
}

/// A fitted Gaussian mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureFit {
    pub model: ModelName,
    pub g: usize,
    pub weights: DVector<f64>,
    /// G x p, one component mean per row.
    pub means: DMatrix<f64>,
    pub covariances: Vec<DMatrix<f64>>,
    pub loglik: f64,
    pub nparams: usize,
    pub n: usize,
    pub bic: f64,
    /// n x G posterior membership probabilities.
    pub responsibilities: DMatrix<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Log-likelihood after every E-step of the retained run.
    pub loglik_trace: Vec<f64>,
}

impl MixtureFit {
    pub fn p(&self) -> usize {
        self.means.ncols()
    }

    /// 1-based MAP labels from the stored responsibilities.
    pub fn labels(&self) -> Vec<usize> {
        self.responsibilities
            .row_iter()
            .map(|r| argmax(r.iter().copied()) + 1)
            .collect()
    }

    /// `1 - max_g z_ig` per observation.
    pub fn uncertainty(&self) -> Vec<f64> {
        self.responsibilities
            .row_iter()
            .map(|r| 1.0 - r.max())
            .collect()
    }

    /// Reorder the variables of the fit; `order[j]` is the old index of new variable `j`.
    pub fn permute_variables(&self, order: &[usize]) -> MixtureFit {
        let p = order.len();
        let mut out = self.clone();
        out.means = DMatrix::from_fn(self.g, p, |k, j| self.means[(k, order[j])]);
        out.covariances = self
            .covariances
            .iter()
            .map(|c| DMatrix::from_fn(p, p, |a, b| c[(order[a], order[b])]))
            .collect();
        out
    }

    /// Flip the sign of every variable `j` with `flip[j]` set.
    pub fn reflect_variables(&self, flip: &[bool]) -> MixtureFit {
        let s: Vec<f64> = flip.iter().map(|&f| if f { -1.0 } else { 1.0 }).collect();
        let mut out = self.clone();
        for (j, mut col) in out.means.column_iter_mut().enumerate() {
            col *= s[j];
        }
        for c in &mut out.covariances {
            let p = c.nrows();
            for a in 0..p {
                for b in 0..p {
                    c[(a, b)] *= s[a] * s[b];
                }
            }
        }
        out
    }

    /// n x G matrix of `log pi_g + log phi(x_i | mu_g, Sigma_g)`.
    pub fn weighted_log_densities(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        weighted_log_densities(x, &self.weights, &self.means, &self.covariances)
    }
}

fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (k, v) in values.enumerate() {
        if v > best_v {
            best_v = v;
            best = k;
        }
    }
    best
}

pub(crate) fn weighted_log_densities(
    x: &DMatrix<f64>,
    weights: &DVector<f64>,
    means: &DMatrix<f64>,
    covariances: &[DMatrix<f64>],
) -> Result<DMatrix<f64>> {
    let (n, p) = x.shape();
    if means.ncols() != p {
        return Err(Error::DimensionMismatch {
            expected: means.ncols(),
            found: p,
        });
    }
    let g = weights.len();
    let mut out = DMatrix::zeros(n, g);
    let xs = x.as_slice();
    let mut r = vec![0.0; p];
    for k in 0..g {
        let chol = cholesky(&covariances[k], "component covariance").map_err(|_| {
            Error::NotPositiveDefinite(format!("covariance of component {}", k + 1))
        })?;
        let log_det = log_det_spd(&chol);
        let l = chol.l();
        let ls = l.as_slice();
        let mu: Vec<f64> = means.row(k).iter().copied().collect();
        let base = weights[k].ln() - 0.5 * (p as f64 * LN_2PI + log_det);
        let col = &mut out.as_mut_slice()[k * n..(k + 1) * n];
        for (i, o) in col.iter_mut().enumerate() {
            // Forward substitution L y = x_i - mu_k, accumulating |y|^2.
            let mut q = 0.0;
            for a in 0..p {
                let mut v = xs[a * n + i] - mu[a];
                for b in 0..a {
                    v -= ls[b * p + a] * r[b];
                }
                v /= ls[a * p + a];
                r[a] = v;
                q += v * v;
            }
            *o = base - 0.5 * q;
        }
    }
    Ok(out)
}

/// Log-likelihood and posterior probabilities from weighted log densities.
fn e_step(log_dens: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
    let (n, g) = log_dens.shape();
    let mut z = DMatrix::zeros(n, g);
    let mut loglik = 0.0;
    let ld = log_dens.as_slice();
    let zs = z.as_mut_slice();
    for i in 0..n {
        let max = (0..g).map(|k| ld[k * n + i]).fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            loglik += max;
            continue;
        }
        let mut sum = 0.0;
        for k in 0..g {
            let e = (ld[k * n + i] - max).exp();
            zs[k * n + i] = e;
            sum += e;
        }
        loglik += max + sum.ln();
        for k in 0..g {
            zs[k * n + i] /= sum;
        }
    }
    (loglik, z)
}

/// `2 loglik - nparams log(n)`.
pub fn bic(loglik: f64, nparams: usize, n: usize) -> f64 {
    2.0 * loglik - nparams as f64 * (n as f64).ln()
}

fn check_data(x: &DMatrix<f64>, g: usize) -> Result<()> {
    let (n, p) = x.shape();
    if p == 0 {
        return Err(Error::InvalidInput("data has no columns".into()));
    }
    if g == 0 {
        return Err(Error::InvalidInput("number of components must be positive".into()));
    }
    if n <= g {
        return Err(Error::InvalidInput(format!(
            "need more observations than components (n={n}, G={g})"
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("data contains non-finite values".into()));
    }
    Ok(())
}

/// Absolute eigenvalue floor: `factor` times the average column variance.
fn variance_floor(x: &DMatrix<f64>, factor: f64) -> f64 {
    let n = x.nrows() as f64;
    let avg = x
        .column_iter()
        .map(|c| {
            let m = c.mean();
            c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n
        })
        .sum::<f64>()
        / x.ncols() as f64;
    factor * avg
}

/// Deterministic per-task seed so parallel grids do not depend on scheduling.
pub(crate) fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut state = base;
    for &part in parts {
        state = splitmix64(state ^ splitmix64(part.wrapping_add(0x9E37_79B9_7F4A_7C15)));
    }
    state
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn model_index(model: ModelName) -> u64 {
    ModelName::all().iter().position(|m| *m == model).unwrap() as u64
}

/// Fit a `g`-component mixture with covariance family `model` by EM.
///
/// Runs `config.restarts` initializations and keeps the one with the highest
/// log-likelihood. Hitting `max_iter` clears `converged` but is not an error.
pub fn em_fit(x: &DMatrix<f64>, g: usize, model: ModelName, config: &FitConfig) -> Result<MixtureFit> {
    config.validate()?;
    check_data(x, g)?;
    let p = x.ncols();
    if !model.supports(p) {
        return Err(Error::UnsupportedModel { model, p });
    }
    let floor = variance_floor(x, config.variance_floor);
    let n = x.nrows();

    if g == 1 {
        let z = DMatrix::from_element(n, 1, 1.0);
        return em_run(x, model, z, config, floor);
    }

    let mut best: Option<MixtureFit> = None;
    let mut last_err = None;
    let mut ward_cache: Option<Vec<usize>> = None;
    for restart in 0..config.restarts {
        let seed = derive_seed(config.seed, &[g as u64, model_index(model), restart as u64]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let strategy = match (config.init, restart) {
            (InitStrategy::Hierarchical, 0) => InitStrategy::Hierarchical,
            (InitStrategy::Random, _) => InitStrategy::Random,
            _ => InitStrategy::KMeans,
        };
        let z0 = match strategy {
            InitStrategy::Hierarchical => {
                let labels = ward_cache.get_or_insert_with(|| init::ward_labels(x, g));
                init::hard_responsibilities(labels, g)
            }
            InitStrategy::KMeans => init::hard_responsibilities(&init::kmeans_labels(x, g, &mut rng), g),
            InitStrategy::Random => init::random_responsibilities(n, g, &mut rng),
        };
        match em_run(x, model, z0, config, floor) {
            Ok(fit) => {
                if best.as_ref().map_or(true, |b| fit.loglik > b.loglik) {
                    best = Some(fit);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| last_err.expect("at least one restart ran"))
}

fn em_run(
    x: &DMatrix<f64>,
    model: ModelName,
    z0: DMatrix<f64>,
    config: &FitConfig,
    floor: f64,
) -> Result<MixtureFit> {
    let (n, p) = x.shape();
    let g = z0.ncols();
    let mut params = mstep::m_step(x, &z0, model, floor, None)?;
    let (mut loglik, mut z) = e_step(&weighted_log_densities(
        x,
        &params.weights,
        &params.means,
        &params.covariances,
    )?);
    let mut trace = vec![loglik];
    let mut converged = g == 1;
    let mut iterations = 0;
    while !converged && iterations < config.max_iter {
        let next = mstep::m_step(x, &z, model, floor, params.shape.as_ref())?;
        let dens = weighted_log_densities(x, &next.weights, &next.means, &next.covariances)?;
        let (next_ll, next_z) = e_step(&dens);
        if !next_ll.is_finite() {
            return Err(Error::DegenerateComponent {
                component: 0,
                reason: "log-likelihood is not finite".into(),
            });
        }
        iterations += 1;
        let change = (next_ll - loglik).abs();
        params = next;
        z = next_z;
        loglik = next_ll;
        trace.push(loglik);
        if change <= config.rel_tol * loglik.abs().max(1.0) {
            converged = true;
        }
    }
    let nparams = count_params(model, p, g)?;
    Ok(MixtureFit {
        model,
        g,
        weights: params.weights,
        means: params.means,
        covariances: params.covariances,
        loglik,
        nparams,
        n,
        bic: bic(loglik, nparams, n),
        responsibilities: z,
        converged,
        iterations,
        loglik_trace: trace,
    })
}

/// MAP labels (1-based) and classification uncertainty for `x` under `fit`.
/// Ties go to the lowest component index.
pub fn map_classify(fit: &MixtureFit, x: &DMatrix<f64>) -> Result<(Vec<usize>, Vec<f64>)> {
    let dens = fit.weighted_log_densities(x)?;
    let (_, z) = e_step(&dens);
    let labels = z.row_iter().map(|r| argmax(r.iter().copied()) + 1).collect();
    let uncertainty = z.row_iter().map(|r| 1.0 - r.max()).collect();
    Ok((labels, uncertainty))
}

/// Posterior membership probabilities of `x` under `fit`.
pub fn posterior(fit: &MixtureFit, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(e_step(&fit.weighted_log_densities(x)?).1)
}

/// Classification entropy `-sum_i sum_g t_ig log t_ig` with `0 log 0 = 0`.
pub fn entropy(responsibilities: &DMatrix<f64>) -> Result<f64> {
    let mut total = 0.0;
    for (i, row) in responsibilities.row_iter().enumerate() {
        let sum = row.sum();
        if (sum - 1.0).abs() > 1e-8 || row.iter().any(|t| *t < 0.0) {
            return Err(Error::NotRowStochastic { row: i, sum });
        }
        total -= row
            .iter()
            .filter(|t| **t > 0.0)
            .map(|t| t * t.ln())
            .sum::<f64>();
    }
    Ok(total.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::adjusted_rand_index;
    use rand_distr::{Distribution, StandardNormal};

    fn two_blobs(seed: u64, offset: f64) -> (DMatrix<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 60;
        let mut x = DMatrix::zeros(n, 2);
        let mut labels = Vec::new();
        for i in 0..n {
            let s = if i < n / 2 { -offset } else { offset };
            labels.push(if i < n / 2 { 1 } else { 2 });
            for j in 0..2 {
                let e: f64 = StandardNormal.sample(&mut rng);
                x[(i, j)] = s + e;
            }
        }
        (x, labels)
    }

    #[test]
    fn bic_values() {
        assert_eq!(bic(0.0, 0, 17), 0.0);
        assert!((bic(-100.0, 10, 100) - (-246.051_701_859_880_9)).abs() < 1e-9);
        assert_eq!(bic(-50.0, 3, 1), -100.0);
    }

    #[test]
    fn single_component_is_closed_form() {
        let (x, _) = two_blobs(1, 2.0);
        let fit = em_fit(&x, 1, ModelName::VVV, &FitConfig::default()).unwrap();
        let mean = crate::linalg::column_means(&x);
        let cov = crate::linalg::mle_covariance(&x, &mean);
        assert!((fit.means.row(0).transpose() - &mean).abs().max() < 1e-12);
        assert!((&fit.covariances[0] - &cov).abs().max() < 1e-12);
        assert_eq!(fit.iterations, 0);
        assert!(fit.converged);
    }

    #[test]
    fn well_separated_spheres_recovered() {
        let (x, truth) = two_blobs(7, 10.0);
        let fit = em_fit(&x, 2, ModelName::EII, &FitConfig::default()).unwrap();
        for t in fit.responsibilities.iter() {
            assert!(*t < 1e-10 || *t > 1.0 - 1e-10);
        }
        let ari = adjusted_rand_index(&truth, &fit.labels()).unwrap();
        assert_eq!(ari, 1.0);
    }

    #[test]
    fn loglik_is_monotone_for_every_family() {
        let (x, _) = two_blobs(11, 1.0);
        for model in ModelName::MULTIVARIATE {
            for seed in 0..3 {
                let cfg = FitConfig::default().with_seed(seed);
                let fit = em_fit(&x, 3, model, &cfg).unwrap();
                for w in fit.loglik_trace.windows(2) {
                    assert!(w[1] - w[0] >= -1e-8, "{model}: {} -> {}", w[0], w[1]);
                }
                assert_eq!(fit.bic, bic(fit.loglik, fit.nparams, fit.n));
            }
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let (x, _) = two_blobs(5, 1.5);
        let cfg = FitConfig::default().with_seed(42);
        let a = em_fit(&x, 3, ModelName::VEV, &cfg).unwrap();
        let b = em_fit(&x, 3, ModelName::VEV, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn map_classify_cases() {
        let (x, _) = two_blobs(2, 10.0);
        let fit = em_fit(&x, 2, ModelName::EII, &FitConfig::default()).unwrap();
        let center = DMatrix::from_row_slice(1, 2, &[fit.means[(0, 0)], fit.means[(0, 1)]]);
        let (labels, unc) = map_classify(&fit, &center).unwrap();
        assert_eq!(labels, vec![1]);
        assert!(unc[0] < 1e-6);

        let mut sym = fit.clone();
        sym.weights = DVector::from_vec(vec![0.5, 0.5]);
        sym.means = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 1.0, 0.0]);
        sym.covariances = vec![DMatrix::identity(2, 2); 2];
        let origin = DMatrix::from_row_slice(1, 2, &[0.0, 3.0]);
        let (labels, unc) = map_classify(&sym, &origin).unwrap();
        assert_eq!(labels, vec![1]);
        assert!((unc[0] - 0.5).abs() < 1e-15);

        let one = em_fit(&x, 1, ModelName::EEE, &FitConfig::default()).unwrap();
        let (labels, unc) = map_classify(&one, &x).unwrap();
        assert!(labels.iter().all(|&l| l == 1));
        assert!(unc.iter().all(|&u| u == 0.0));

        let bad = DMatrix::zeros(2, 3);
        assert!(matches!(
            map_classify(&fit, &bad),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn entropy_cases() {
        let hard = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(entropy(&hard).unwrap(), 0.0);
        let half = DMatrix::from_row_slice(1, 2, &[0.5, 0.5]);
        assert!((entropy(&half).unwrap() - 2f64.ln()).abs() < 1e-15);
        let z = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.8, 0.2]);
        let expect = -(0.9f64 * 0.9f64.ln() + 0.1 * 0.1f64.ln() + 0.8 * 0.8f64.ln() + 0.2 * 0.2f64.ln());
        assert!((entropy(&z).unwrap() - expect).abs() < 1e-14);
        assert!((entropy(&z).unwrap() - 0.8255).abs() < 1e-4);
        let bad = DMatrix::from_row_slice(1, 2, &[0.5, 0.6]);
        assert!(matches!(entropy(&bad), Err(Error::NotRowStochastic { row: 0, .. })));
    }

    #[test]
    fn invalid_inputs() {
        let (x, _) = two_blobs(1, 1.0);
        assert!(em_fit(&x, 60, ModelName::EII, &FitConfig::default()).is_err());
        let mut bad = x.clone();
        bad[(0, 0)] = f64::NAN;
        assert!(em_fit(&bad, 2, ModelName::EII, &FitConfig::default()).is_err());
        let cfg = FitConfig {
            restarts: 0,
            ..FitConfig::default()
        };
        assert!(em_fit(&x, 2, ModelName::EII, &cfg).is_err());
        assert!(matches!(
            em_fit(&x, 2, ModelName::E, &FitConfig::default()),
            Err(Error::UnsupportedModel { .. })
        ));
    }
}
