//! Clustering directions estimated from a fitted mixture.
//!
//! The kernel combines the between-component covariance of the means
//! (`M_I`) with the spread of the component covariances around their pooled
//! average (`M_II`):
//!
//! ```text
//! M = M_I Sigma^-1 M_I + M_II
//! ```
//!
//! Directions solve `M v = l Sigma v` with `V' Sigma V = I`, where `Sigma` is
//! the marginal covariance of the data. The problem is reduced to a symmetric
//! one through the Cholesky factor of `Sigma`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, condition_number, mle_covariance, spd_inverse, sym_eigen_desc, symmetrize};
use crate::mixture::MixtureFit;

/// The kernel matrices behind a set of directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSet {
    /// Between-component covariance of the means, `M_I`.
    pub between: DMatrix<f64>,
    /// Covariance-difference kernel, `M_II`.
    pub covariance_kernel: DMatrix<f64>,
    /// Combined kernel `M`.
    pub kernel: DMatrix<f64>,
    /// Marginal covariance `Sigma`.
    pub sigma: DMatrix<f64>,
    /// Pooled within-component covariance.
    pub pooled: DMatrix<f64>,
}

/// Generalized eigenvectors of `(M, Sigma)` before the eigenvalue split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenBasis {
    /// p x d, Sigma-orthonormal.
    pub raw_vectors: DMatrix<f64>,
    /// p x d, unit Euclidean norm columns.
    pub directions: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
}

/// Estimated directions with the split of each eigenvalue into the part
/// explained by differences in means and the part explained by differences
/// in covariances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrBasis {
    pub raw_vectors: DMatrix<f64>,
    pub directions: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
    pub mean_contrib: Vec<f64>,
    pub var_contrib: Vec<f64>,
    pub d: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrOptions {
    /// Directions with `l_i <= rel_threshold * l_1` are dropped.
    pub rel_threshold: f64,
    /// Reject a marginal covariance whose condition number exceeds this.
    pub max_condition: f64,
}

impl Default for DrOptions {
    fn default() -> Self {
        DrOptions {
            rel_threshold: 1e-8,
            max_condition: 1e12,
        }
    }
}

/// `sum_g pi_g mu_g`.
pub fn grand_mean(weights: &DVector<f64>, means: &DMatrix<f64>) -> DVector<f64> {
    means.tr_mul(weights)
}

/// `sum_g pi_g (mu_g - mu)(mu_g - mu)'`.
pub fn between_cov(weights: &DVector<f64>, means: &DMatrix<f64>, grand_mean: &DVector<f64>) -> DMatrix<f64> {
    let p = means.ncols();
    let mut out = DMatrix::zeros(p, p);
    for (k, w) in weights.iter().enumerate() {
        let diff = means.row(k).transpose() - grand_mean;
        out += &diff * diff.transpose() * *w;
    }
    symmetrize(&mut out);
    out
}

/// `sum_g pi_g Sigma_g`.
pub fn pooled_covariance(weights: &DVector<f64>, covariances: &[DMatrix<f64>]) -> DMatrix<f64> {
    let p = covariances[0].nrows();
    let mut out = covariances
        .iter()
        .zip(weights.iter())
        .fold(DMatrix::zeros(p, p), |acc, (c, w)| acc + c * *w);
    symmetrize(&mut out);
    out
}

/// `sum_g pi_g (Sigma_g - pooled) Sigma^-1 (Sigma_g - pooled)'`.
pub fn kernel_sir2(weights: &DVector<f64>, covariances: &[DMatrix<f64>], sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let inv = spd_inverse(sigma, "marginal covariance")?;
    let pooled = pooled_covariance(weights, covariances);
    let p = sigma.nrows();
    let mut out = DMatrix::zeros(p, p);
    for (c, w) in covariances.iter().zip(weights.iter()) {
        let diff = c - &pooled;
        out += &diff * &inv * diff.transpose() * *w;
    }
    symmetrize(&mut out);
    Ok(out)
}

/// `M_I Sigma^-1 M_I + M_II`.
pub fn kernel_combined(between: &DMatrix<f64>, covariance_kernel: &DMatrix<f64>, sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = sigma.nrows();
    for m in [between, covariance_kernel] {
        if m.shape() != (p, p) {
            return Err(Error::DimensionMismatch {
                expected: p,
                found: m.nrows(),
            });
        }
    }
    let inv = spd_inverse(sigma, "marginal covariance")?;
    let mut out = between * inv * between + covariance_kernel;
    symmetrize(&mut out);
    Ok(out)
}

/// Kernel matrices for mixture parameters and a given marginal covariance.
pub fn kernel_from_params(
    weights: &DVector<f64>,
    means: &DMatrix<f64>,
    covariances: &[DMatrix<f64>],
    sigma: &DMatrix<f64>,
) -> Result<KernelSet> {
    let mu = grand_mean(weights, means);
    let between = between_cov(weights, means, &mu);
    let covariance_kernel = kernel_sir2(weights, covariances, sigma)?;
    let kernel = kernel_combined(&between, &covariance_kernel, sigma)?;
    Ok(KernelSet {
        between,
        covariance_kernel,
        kernel,
        sigma: sigma.clone(),
        pooled: pooled_covariance(weights, covariances),
    })
}

/// Kernel matrices for `fit`, with `Sigma` the MLE covariance of `x` about
/// the mixture mean.
pub fn kernel_set(fit: &MixtureFit, x: &DMatrix<f64>, options: &DrOptions) -> Result<KernelSet> {
    if x.ncols() != fit.p() {
        return Err(Error::DimensionMismatch {
            expected: fit.p(),
            found: x.ncols(),
        });
    }
    let mu = grand_mean(&fit.weights, &fit.means);
    let sigma = mle_covariance(x, &mu);
    let cond = condition_number(&sigma);
    if !(cond <= options.max_condition) {
        return Err(Error::NearSingular(cond));
    }
    kernel_from_params(&fit.weights, &fit.means, &fit.covariances, &sigma)
}

/// Flip each column so that its largest-magnitude coefficient is positive.
pub(crate) fn fix_signs(v: &mut DMatrix<f64>) {
    for mut col in v.column_iter_mut() {
        let mut pivot = 0.0f64;
        for x in col.iter() {
            if x.abs() > pivot.abs() {
                pivot = *x;
            }
        }
        if pivot < 0.0 {
            col.neg_mut();
        }
    }
}

/// Solve `M v = l Sigma v`, keeping eigenvalues above `rel_threshold * l_1`,
/// at most `max_dim` of them, sorted in decreasing order.
pub fn generalized_eigen(
    m: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    rel_threshold: f64,
    max_dim: Option<usize>,
) -> Result<EigenBasis> {
    let p = sigma.nrows();
    if m.shape() != (p, p) {
        return Err(Error::DimensionMismatch {
            expected: p,
            found: m.nrows(),
        });
    }
    let chol = cholesky(sigma, "marginal covariance")?;
    let l = chol.l();
    let left = l
        .solve_lower_triangular(m)
        .ok_or_else(|| Error::NotPositiveDefinite("marginal covariance".into()))?;
    let mut reduced = l
        .solve_lower_triangular(&left.transpose())
        .ok_or_else(|| Error::NotPositiveDefinite("marginal covariance".into()))?;
    symmetrize(&mut reduced);
    let (values, vectors) = sym_eigen_desc(&reduced);
    let top = values[0];
    let cap = max_dim.unwrap_or(p).min(p);
    let d = if top > 1e-12 {
        values
            .iter()
            .take(cap)
            .take_while(|&&v| v > rel_threshold * top)
            .count()
    } else {
        0
    };
    let u = vectors.columns(0, d).into_owned();
    let mut raw = l
        .transpose()
        .solve_upper_triangular(&u)
        .ok_or_else(|| Error::NotPositiveDefinite("marginal covariance".into()))?;
    fix_signs(&mut raw);
    let mut directions = raw.clone();
    for mut col in directions.column_iter_mut() {
        let norm = col.norm();
        col /= norm;
    }
    Ok(EigenBasis {
        raw_vectors: raw,
        directions,
        eigenvalues: values.iter().take(d).copied().collect(),
    })
}

/// Diagonals of `V' M_I Sigma^-1 M_I V` (mean part) and `V' M_II V`
/// (covariance part); they add up to the eigenvalues.
pub fn eigenvalue_split(
    raw_vectors: &DMatrix<f64>,
    weights: &DVector<f64>,
    means: &DMatrix<f64>,
    covariances: &[DMatrix<f64>],
    sigma: &DMatrix<f64>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mu = grand_mean(weights, means);
    let between = between_cov(weights, means, &mu);
    let inv = spd_inverse(sigma, "marginal covariance")?;
    let mean_part = raw_vectors.transpose() * &between * inv * &between * raw_vectors;
    let cov_part = raw_vectors.transpose() * kernel_sir2(weights, covariances, sigma)? * raw_vectors;
    Ok((
        mean_part.diagonal().iter().copied().collect(),
        cov_part.diagonal().iter().copied().collect(),
    ))
}

/// Directions for `fit` estimated on data `x`.
///
/// Equal-covariance models give at most `min(p, G - 1)` directions.
pub fn estimate_basis(fit: &MixtureFit, x: &DMatrix<f64>, options: &DrOptions) -> Result<DrBasis> {
    let kernels = kernel_set(fit, x, options)?;
    basis_from_kernels(fit, &kernels, options)
}

pub fn basis_from_kernels(fit: &MixtureFit, kernels: &KernelSet, options: &DrOptions) -> Result<DrBasis> {
    let cap = if fit.model.equal_covariance() {
        Some(fit.p().min(fit.g.saturating_sub(1)))
    } else {
        None
    };
    let eig = generalized_eigen(&kernels.kernel, &kernels.sigma, options.rel_threshold, cap)?;
    let (mean_contrib, var_contrib) = eigenvalue_split(
        &eig.raw_vectors,
        &fit.weights,
        &fit.means,
        &fit.covariances,
        &kernels.sigma,
    )?;
    Ok(DrBasis {
        d: eig.eigenvalues.len(),
        raw_vectors: eig.raw_vectors,
        directions: eig.directions,
        eigenvalues: eig.eigenvalues,
        mean_contrib,
        var_contrib,
    })
}

impl DrBasis {
    /// Keep the listed directions, in the given order.
    pub fn select(&self, columns: &[usize]) -> DrBasis {
        let pick = |m: &DMatrix<f64>| m.select_columns(columns.iter());
        DrBasis {
            raw_vectors: pick(&self.raw_vectors),
            directions: pick(&self.directions),
            eigenvalues: columns.iter().map(|&c| self.eigenvalues[c]).collect(),
            mean_contrib: columns.iter().map(|&c| self.mean_contrib[c]).collect(),
            var_contrib: columns.iter().map(|&c| self.var_contrib[c]).collect(),
            d: columns.len(),
        }
    }
}

/// The first `k` variables `Z = X beta`.
pub fn project_data(x: &DMatrix<f64>, basis: &DrBasis, k: usize) -> Result<DMatrix<f64>> {
    if x.ncols() != basis.directions.nrows() {
        return Err(Error::DimensionMismatch {
            expected: basis.directions.nrows(),
            found: x.ncols(),
        });
    }
    if k > basis.d {
        return Err(Error::InvalidInput(format!("requested {k} directions, only {} available", basis.d)));
    }
    Ok(x * basis.directions.columns(0, k))
}

/// Mixture parameters expressed on the first `k` directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedMixture {
    pub weights: DVector<f64>,
    /// G x k.
    pub means: DMatrix<f64>,
    pub covariances: Vec<DMatrix<f64>>,
}

/// `beta' mu_g` and `beta' Sigma_g beta` on the first `k` directions.
pub fn project_params(fit: &MixtureFit, basis: &DrBasis, k: usize) -> Result<ProjectedMixture> {
    if fit.p() != basis.directions.nrows() {
        return Err(Error::DimensionMismatch {
            expected: basis.directions.nrows(),
            found: fit.p(),
        });
    }
    if k > basis.d {
        return Err(Error::InvalidInput(format!("requested {k} directions, only {} available", basis.d)));
    }
    let beta = basis.directions.columns(0, k);
    let means = &fit.means * beta;
    let covariances = fit
        .covariances
        .iter()
        .map(|c| {
            let mut s = beta.transpose() * c * beta;
            symmetrize(&mut s);
            s
        })
        .collect();
    Ok(ProjectedMixture {
        weights: fit.weights.clone(),
        means,
        covariances,
    })
}

/// Evaluation lattice for bivariate density plots: `nx` by `ny` points
/// spanning the closed ranges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub nx: usize,
    pub ny: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub x: f64,
    pub y: f64,
    pub density: f64,
    /// 1-based MAP component.
    pub map_label: usize,
}

fn linspace(range: (f64, f64), n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (range.0 + range.1)];
    }
    let step = (range.1 - range.0) / (n - 1) as f64;
    (0..n).map(|i| range.0 + step * i as f64).collect()
}

/// Mixture density and MAP component at each lattice point of a 2-D projection.
pub fn density_grid(mixture: &ProjectedMixture, grid: &GridSpec) -> Result<Vec<GridCell>> {
    if grid.nx == 0 || grid.ny == 0 {
        return Err(Error::InvalidInput("density grid is empty".into()));
    }
    if mixture.means.ncols() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            found: mixture.means.ncols(),
        });
    }
    let xs = linspace(grid.x_range, grid.nx);
    let ys = linspace(grid.y_range, grid.ny);
    let mut points = DMatrix::zeros(xs.len() * ys.len(), 2);
    let mut r = 0;
    for &y in &ys {
        for &x in &xs {
            points[(r, 0)] = x;
            points[(r, 1)] = y;
            r += 1;
        }
    }
    let logs = crate::mixture::weighted_log_densities(&points, &mixture.weights, &mixture.means, &mixture.covariances)?;
    Ok(logs
        .row_iter()
        .enumerate()
        .map(|(i, row)| {
            let mut best = 0;
            for k in 1..row.len() {
                if row[k] > row[best] {
                    best = k;
                }
            }
            GridCell {
                x: points[(i, 0)],
                y: points[(i, 1)],
                density: row.iter().map(|v| v.exp()).sum(),
                map_label: best + 1,
            }
        })
        .collect())
}
