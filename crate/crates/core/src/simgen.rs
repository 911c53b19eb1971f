//! Seeded generators for the synthetic clustering scenarios.
//!
//! Every generator draws from a `ChaCha8Rng` seeded with the scenario seed,
//! so a spec and seed reproduce the dataset bit for bit on every platform.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, symmetrize};

/// Base mixture of a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseModel {
    /// 15-dimensional two-group example where leading principal components hide the groups.
    Chang15,
    /// Three overlapping VVV clusters with a fixed number of points per cluster.
    SyntheticVvv,
    /// Three clusters, common covariance.
    Model1Eee,
    /// Three clusters, common shape, varying volume and orientation.
    Model2Vev,
    /// Three clusters, unconstrained covariances (same parameters as `SyntheticVvv`).
    Model3Vvv,
}

impl BaseModel {
    pub fn as_str(self) -> &'static str {
        match self {
            BaseModel::Chang15 => "chang15",
            BaseModel::SyntheticVvv => "synthetic_vvv",
            BaseModel::Model1Eee => "model1_eee",
            BaseModel::Model2Vev => "model2_vev",
            BaseModel::Model3Vvv => "model3_vvv",
        }
    }
}

impl fmt::Display for BaseModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BaseModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        [
            BaseModel::Chang15,
            BaseModel::SyntheticVvv,
            BaseModel::Model1Eee,
            BaseModel::Model2Vev,
            BaseModel::Model3Vvv,
        ]
        .into_iter()
        .find(|b| b.as_str() == key)
        .ok_or_else(|| Error::InvalidScenario(format!("unknown base model '{s}'")))
    }
}

/// Extra columns appended to the clustering variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Augmentation {
    None,
    /// Seven independent standard-normal columns.
    Noise,
    /// Three columns correlated 0.9/0.7/0.5 with the clustering columns plus four noise columns.
    NoiseRedundant,
}

impl Augmentation {
    pub fn as_str(self) -> &'static str {
        match self {
            Augmentation::None => "none",
            Augmentation::Noise => "noise",
            Augmentation::NoiseRedundant => "noise+redundant",
        }
    }
}

impl fmt::Display for Augmentation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Augmentation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" | "no-noise" => Ok(Augmentation::None),
            "noise" => Ok(Augmentation::Noise),
            "noise+redundant" | "noise-redundant" | "noise_redundant" | "redundant" => {
                Ok(Augmentation::NoiseRedundant)
            }
            _ => Err(Error::InvalidScenario(format!("unknown augmentation '{s}'"))),
        }
    }
}

/// Correlations of the redundant columns with their source columns.
pub const REDUNDANT_CORRELATIONS: [f64; 3] = [0.9, 0.7, 0.5];

/// Unequal mixing proportions used for the prior-sensitivity scenario.
pub const UNEQUAL_PRIORS: [f64; 3] = [0.1, 0.3, 0.6];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub base: BaseModel,
    /// Total sample size (per-cluster size times three for `SyntheticVvv`).
    pub n: usize,
    /// Mixing proportions; equal when absent.
    pub priors: Option<Vec<f64>>,
    pub augmentation: Augmentation,
    /// Replication factor `k` of the `{3k | 3k | 4k}` layout; 1 is the base layout.
    pub highdim_k: usize,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn new(base: BaseModel, n: usize, augmentation: Augmentation, seed: u64) -> Self {
        ScenarioSpec {
            base,
            n,
            priors: None,
            augmentation,
            highdim_k: 1,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidScenario("n must be at least 2".into()));
        }
        if self.highdim_k == 0 {
            return Err(Error::InvalidScenario("highdim_k must be at least 1".into()));
        }
        if self.highdim_k > 1 && self.base != BaseModel::Model2Vev {
            return Err(Error::InvalidScenario(
                "the {3k|3k|4k} layout is defined for model2_vev only".into(),
            ));
        }
        if self.highdim_k > 1 && self.augmentation != Augmentation::NoiseRedundant {
            return Err(Error::InvalidScenario(
                "the {3k|3k|4k} layout needs noise+redundant augmentation".into(),
            ));
        }
        if self.base == BaseModel::Chang15 {
            if self.augmentation != Augmentation::None {
                return Err(Error::InvalidScenario("chang15 takes no augmentation".into()));
            }
            if self.priors.is_some() {
                return Err(Error::InvalidScenario("chang15 has fixed group probabilities".into()));
            }
        }
        if let Some(p) = &self.priors {
            if p.len() != 3 || p.iter().any(|v| !(*v >= 0.0)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidScenario(format!("priors {p:?} are not a 3-simplex")));
            }
        }
        Ok(())
    }

    /// Number of generated columns.
    pub fn dimension(&self) -> usize {
        match self.base {
            BaseModel::Chang15 => 15,
            _ => match self.augmentation {
                Augmentation::None => 3 * self.highdim_k,
                Augmentation::Noise | Augmentation::NoiseRedundant => 10 * self.highdim_k,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub data: DMatrix<f64>,
    /// 1-based generating component.
    pub labels: Vec<usize>,
    /// Indices of the columns that carry cluster information.
    pub clustering_columns: Vec<usize>,
    pub column_names: Vec<String>,
    pub spec: Option<ScenarioSpec>,
}

/// Means and covariances of a three-component base mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentParams {
    pub means: Vec<DVector<f64>>,
    pub covariances: Vec<DMatrix<f64>>,
}

fn mat3(v: [f64; 9]) -> DMatrix<f64> {
    DMatrix::from_row_slice(3, 3, &v)
}

const OVERLAP_MEANS: [[f64; 3]; 3] = [[0.0, 0.0, 0.0], [4.0, -2.0, 6.0], [-2.0, -4.0, 2.0]];

/// Second covariance exactly as commonly printed, with every off-diagonal
/// equal to -1.8. It is indefinite (eigenvalues 3.8, 3.8, -1.6).
pub const PRINTED_SIGMA2: [f64; 9] = [2.0, -1.8, -1.8, -1.8, 2.0, -1.8, -1.8, -1.8, 2.0];

/// Three overlapping clusters with different volume, shape and orientation.
///
/// `Sigma_2` uses the sign pattern `(-, +, -)` for the (1,2), (1,3), (2,3)
/// entries, i.e. `2 Sigma_1` with the second variable reflected, which is the
/// nearest positive-definite reading of [`PRINTED_SIGMA2`].
pub fn synthetic_vvv_params() -> ComponentParams {
    ComponentParams {
        means: OVERLAP_MEANS.iter().map(|m| DVector::from_row_slice(m)).collect(),
        covariances: vec![
            mat3([1.0, 0.9, 0.9, 0.9, 1.0, 0.9, 0.9, 0.9, 1.0]),
            mat3([2.0, -1.8, 1.8, -1.8, 2.0, -1.8, 1.8, -1.8, 2.0]),
            mat3([0.5, 0.0, 0.0, 0.0, 0.5, 0.0, 0.0, 0.0, 0.5]),
        ],
    }
}

pub fn model1_params() -> ComponentParams {
    let sigma = mat3([2.0, 0.7, 0.8, 0.7, 0.5, 0.3, 0.8, 0.3, 1.0]);
    ComponentParams {
        means: [[0.0, 0.0, 0.0], [0.0, 2.0, 2.0], [2.0, -2.0, -2.0]]
            .iter()
            .map(|m| DVector::from_row_slice(m))
            .collect(),
        covariances: vec![sigma; 3],
    }
}

/// `Sigma_g = lambda_g D_g A D_g'` with the published `D_g` taken literally
/// (they are not orthogonal, but the products are positive definite).
pub fn model2_params() -> ComponentParams {
    let lambda = [0.2, 0.5, 0.8];
    let a = DMatrix::from_diagonal(&DVector::from_row_slice(&[1.0, 2.0, 3.0]));
    let d = [
        mat3([1.0, 0.6, 0.6, 0.6, 1.0, 0.6, 0.6, 0.6, 1.0]),
        mat3([2.0, -1.2, 1.2, -1.2, 2.0, -1.2, 1.2, -1.2, 2.0]),
        mat3([0.5, 0.0, 0.0, 0.0, 0.5, 0.0, 0.0, 0.0, 0.5]),
    ];
    ComponentParams {
        means: OVERLAP_MEANS.iter().map(|m| DVector::from_row_slice(m)).collect(),
        covariances: d
            .iter()
            .zip(lambda)
            .map(|(dg, l)| {
                let mut s = dg * &a * dg.transpose() * l;
                symmetrize(&mut s);
                s
            })
            .collect(),
    }
}

/// Mean shift vector and error covariance of the 15-variable example.
pub fn chang_params() -> (DVector<f64>, DMatrix<f64>) {
    let d = DVector::from_fn(15, |i, _| 0.95 - 0.05 * (i + 1) as f64);
    let f: Vec<f64> = (0..15).map(|i| if i < 8 { -0.9 } else { 0.5 }).collect();
    let sigma = DMatrix::from_fn(15, 15, |i, j| if i == j { 1.0 } else { -0.13 * f[i] * f[j] });
    (d, sigma)
}

/// Multivariate normal sampler through the Cholesky factor of the covariance.
#[derive(Debug, Clone)]
pub struct MvNormal {
    mean: DVector<f64>,
    factor: DMatrix<f64>,
}

impl MvNormal {
    pub fn new(mean: DVector<f64>, covariance: &DMatrix<f64>) -> Result<Self> {
        let chol = cholesky(covariance, "generating covariance")?;
        Ok(MvNormal {
            mean,
            factor: chol.l(),
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> DVector<f64> {
        let e = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.mean + &self.factor * e
    }
}

fn draw_label<R: Rng>(priors: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (k, p) in priors.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    priors.len() - 1
}

/// Draw `n` observations from the 15-variable two-group example:
/// `X = 0.5 d + d Y + Z`, `Y ~ Bernoulli(0.2)`.
pub fn gen_chang(n: usize, seed: u64) -> Result<LabeledDataset> {
    if n < 2 {
        return Err(Error::InvalidScenario("n must be at least 2".into()));
    }
    let (d, sigma) = chang_params();
    let noise = MvNormal::new(DVector::zeros(15), &sigma)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = DMatrix::zeros(n, 15);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = if rng.gen::<f64>() < 0.2 { 1.0 } else { 0.0 };
        let z = noise.sample(&mut rng);
        for j in 0..15 {
            data[(i, j)] = 0.5 * d[j] + d[j] * y + z[j];
        }
        labels.push(y as usize + 1);
    }
    Ok(LabeledDataset {
        data,
        labels,
        clustering_columns: (0..15).collect(),
        column_names: (1..=15).map(|j| format!("X{j}")).collect(),
        spec: Some(ScenarioSpec::new(BaseModel::Chang15, n, Augmentation::None, seed)),
    })
}

/// Three overlapping VVV clusters with `n_g` points each, optionally followed
/// by noise or redundant-plus-noise columns.
pub fn gen_synthetic_vvv(n_g: usize, augmentation: Augmentation, seed: u64) -> Result<LabeledDataset> {
    let spec = ScenarioSpec::new(BaseModel::SyntheticVvv, 3 * n_g, augmentation, seed);
    gen_model(&spec)
}

/// Population marginal mean and standard deviation of each clustering column.
fn marginal_moments(params: &ComponentParams, priors: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let p = params.means[0].len();
    let mut mean = vec![0.0; p];
    let mut sd = vec![0.0; p];
    for j in 0..p {
        mean[j] = priors.iter().zip(&params.means).map(|(w, m)| w * m[j]).sum();
        let var: f64 = priors
            .iter()
            .zip(params.means.iter().zip(&params.covariances))
            .map(|(w, (m, c))| w * (c[(j, j)] + (m[j] - mean[j]).powi(2)))
            .sum();
        sd[j] = var.sqrt();
    }
    (mean, sd)
}

/// Generate a dataset from a scenario spec.
///
/// Column layout: `3k` clustering columns, then (when requested) `3k`
/// redundant columns paired with the clustering columns in order, then the
/// noise columns. Redundant column `j` is `r x_std + sqrt(1 - r^2) e` with
/// `x_std` standardized by the population moments of its source, so its
/// population correlation with the source is exactly `r`.
pub fn gen_model(spec: &ScenarioSpec) -> Result<LabeledDataset> {
    spec.validate()?;
    let params = match spec.base {
        BaseModel::Chang15 => return gen_chang(spec.n, spec.seed).map(|mut d| {
            d.spec = Some(spec.clone());
            d
        }),
        BaseModel::SyntheticVvv | BaseModel::Model3Vvv => synthetic_vvv_params(),
        BaseModel::Model1Eee => model1_params(),
        BaseModel::Model2Vev => model2_params(),
    };
    let samplers = params
        .means
        .iter()
        .zip(&params.covariances)
        .map(|(m, c)| MvNormal::new(m.clone(), c))
        .collect::<Result<Vec<_>>>()?;
    let priors = spec.priors.clone().unwrap_or_else(|| vec![1.0 / 3.0; 3]);
    let k = spec.highdim_k;
    let (n_redundant, n_noise) = match spec.augmentation {
        Augmentation::None => (0, 0),
        Augmentation::Noise => (0, 7 * k),
        Augmentation::NoiseRedundant => (3 * k, 4 * k),
    };
    let n_clust = 3 * k;
    let p = n_clust + n_redundant + n_noise;
    let (pop_mean, pop_sd) = marginal_moments(&params, &priors);

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n;
    let mut data = DMatrix::zeros(n, p);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let g = if spec.base == BaseModel::SyntheticVvv {
            // Fixed cluster sizes: consecutive blocks of n/3.
            (i * 3 / n).min(2)
        } else {
            draw_label(&priors, &mut rng)
        };
        labels.push(g + 1);
        for block in 0..k {
            let x = samplers[g].sample(&mut rng);
            for j in 0..3 {
                data[(i, 3 * block + j)] = x[j];
            }
        }
        for r in 0..n_redundant {
            let source = r % 3;
            let corr = REDUNDANT_CORRELATIONS[source];
            let xs = (data[(i, r)] - pop_mean[source]) / pop_sd[source];
            let e: f64 = rng.sample(StandardNormal);
            data[(i, n_clust + r)] = corr * xs + (1.0 - corr * corr).sqrt() * e;
        }
        for c in 0..n_noise {
            data[(i, n_clust + n_redundant + c)] = rng.sample(StandardNormal);
        }
    }
    let column_names = (0..p)
        .map(|j| {
            if j < n_clust {
                format!("C{}", j + 1)
            } else if j < n_clust + n_redundant {
                format!("R{}", j - n_clust + 1)
            } else {
                format!("N{}", j - n_clust - n_redundant + 1)
            }
        })
        .collect();
    Ok(LabeledDataset {
        data,
        labels,
        clustering_columns: (0..n_clust).collect(),
        column_names,
        spec: Some(spec.clone()),
    })
}
