//! Property checks shared by the property tests and the acceptance run.
//! Each check returns the largest violation it saw, to be compared with a
//! tolerance by the caller.

#![allow(dead_code)]

use std::path::PathBuf;

use gmmdr::directions::{estimate_basis, generalized_eigen, kernel_from_params, kernel_set, DrBasis, DrOptions};
use gmmdr::eval::{adjusted_rand_index, standardize};
use gmmdr::featsel::bic_reg;
use gmmdr::io::{read_csv, CsvOptions, Dataset};
use gmmdr::mixture::{em_fit, FitConfig, MixtureFit, ModelName};
use gmmdr::simgen::{gen_chang, gen_model, gen_synthetic_vvv, Augmentation, BaseModel, ScenarioSpec};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

pub fn read_labelled(name: &str) -> Dataset {
    let options = CsvOptions {
        label_column: Some("class".into()),
        ..CsvOptions::default()
    };
    read_csv(data_path(name), &options).expect("bundled data")
}

fn normal_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

fn random_spd(rng: &mut ChaCha8Rng, p: usize) -> DMatrix<f64> {
    let a = normal_matrix(rng, p, p);
    &a * a.transpose() + DMatrix::identity(p, p) * 0.5
}

/// A data set and a fit on it, labelled for error messages.
pub struct SuiteFit {
    pub name: String,
    pub x: DMatrix<f64>,
    pub fit: MixtureFit,
}

/// The fits every data-level property is checked on.
pub fn suite_fits() -> Vec<SuiteFit> {
    let cfg = FitConfig::default();
    let mut out = Vec::new();
    let mut push = |name: &str, x: DMatrix<f64>, g: usize, model: ModelName| {
        let fit = em_fit(&x, g, model, &cfg).unwrap_or_else(|e| panic!("{name}: {e}"));
        out.push(SuiteFit {
            name: format!("{name} {model} G={g}"),
            x,
            fit,
        });
    };
    let three = gen_synthetic_vvv(50, Augmentation::Noise, 1).unwrap().data;
    for model in [ModelName::VVV, ModelName::EEE, ModelName::VEI, ModelName::EII] {
        push("three-cluster", three.clone(), 3, model);
    }
    push("chang", gen_chang(300, 0).unwrap().data, 2, ModelName::EEE);
    push("chang", gen_chang(300, 0).unwrap().data, 2, ModelName::VVV);
    let m1 = gen_model(&ScenarioSpec::new(BaseModel::Model1Eee, 200, Augmentation::NoiseRedundant, 4)).unwrap();
    push("model1", m1.data.clone(), 3, ModelName::EEE);
    push("model1", m1.data, 4, ModelName::EEV);
    let m2 = gen_model(&ScenarioSpec::new(BaseModel::Model2Vev, 150, Augmentation::None, 5)).unwrap();
    push("model2", m2.data.clone(), 3, ModelName::VEV);
    push("model2", m2.data, 2, ModelName::VII);
    let wine = standardize(&read_labelled("wine.csv").data).unwrap();
    push("wine", wine.clone(), 3, ModelName::EEV);
    push("wine", wine, 3, ModelName::EEE);
    let crabs = read_labelled("crabs.csv").data;
    push("crabs", crabs.clone(), 4, ModelName::EEV);
    push("crabs", crabs, 4, ModelName::VVV);
    out
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |a, v| a.max(v.abs()))
}

/// Parameter-level affine invariance. For `X* = X C + 1 a'` the transformed
/// mixture has means `C' mu_g + a` and covariances `C' S C`; its directions
/// must be the normalized columns of `C^-1 V`, up to sign, with the same
/// eigenvalues. Returns the largest coefficient or eigenvalue deviation.
pub fn affine_invariance(trials: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for t in 0..trials {
        let p = 2 + t % 4;
        let g = 2 + t % 3;
        let raw: Vec<f64> = (0..g).map(|_| rng.gen_range(0.2..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let weights = DVector::from_iterator(g, raw.iter().map(|w| w / total));
        let means = normal_matrix(&mut rng, g, p) * 2.0;
        let covs: Vec<DMatrix<f64>> = (0..g).map(|_| random_spd(&mut rng, p)).collect();
        let mu = means.transpose() * &weights;
        let mut sigma = DMatrix::zeros(p, p);
        for k in 0..g {
            let dev = means.row(k).transpose() - &mu;
            sigma += (&covs[k] + &dev * dev.transpose()) * weights[k];
        }

        let c = DMatrix::identity(p, p) * 2.0 + normal_matrix(&mut rng, p, p) * 0.5;
        let a = normal_matrix(&mut rng, 1, p);
        let means_t = DMatrix::from_fn(g, p, |k, j| (means.row(k) * &c)[j] + a[j]);
        let covs_t: Vec<DMatrix<f64>> = covs.iter().map(|s| c.transpose() * s * &c).collect();
        let sigma_t = c.transpose() * &sigma * &c;

        let base = kernel_from_params(&weights, &means, &covs, &sigma).unwrap();
        let moved = kernel_from_params(&weights, &means_t, &covs_t, &sigma_t).unwrap();
        let e = generalized_eigen(&base.kernel, &base.sigma, 1e-8, None).unwrap();
        let e_t = generalized_eigen(&moved.kernel, &moved.sigma, 1e-8, None).unwrap();
        assert_eq!(e.eigenvalues.len(), e_t.eigenvalues.len(), "trial {t}: dimension changed");

        let expected = c.clone().try_inverse().unwrap() * &e.raw_vectors;
        for j in 0..expected.ncols() {
            let col = expected.column(j) / expected.column(j).norm();
            let got = e_t.directions.column(j);
            let dev = (&col - got).amax().min((&col + got).amax());
            worst = worst.max(dev);
            let rel = (e.eigenvalues[j] - e_t.eigenvalues[j]).abs() / e.eigenvalues[0].max(1.0);
            worst = worst.max(rel);
        }
    }
    worst
}

pub fn bases(fits: &[SuiteFit]) -> Vec<(String, DrBasis)> {
    fits.iter()
        .map(|s| {
            let b = estimate_basis(&s.fit, &s.x, &DrOptions::default()).unwrap_or_else(|e| panic!("{}: {e}", s.name));
            (s.name.clone(), b)
        })
        .collect()
}

/// Largest `|l_i - (mean_i + var_i)|`, relative to `max(l_1, 1)`.
pub fn eigen_split(bases: &[(String, DrBasis)]) -> f64 {
    let mut worst = 0.0f64;
    for (_, b) in bases {
        let scale = b.eigenvalues.first().copied().unwrap_or(1.0).max(1.0);
        for i in 0..b.d {
            worst = worst.max((b.eigenvalues[i] - b.mean_contrib[i] - b.var_contrib[i]).abs() / scale);
        }
    }
    worst
}

/// Sample covariance about the sample mean, divisor n.
fn sample_cov(z: &DMatrix<f64>) -> DMatrix<f64> {
    let n = z.nrows() as f64;
    let mean = z.row_mean();
    let centered = DMatrix::from_fn(z.nrows(), z.ncols(), |i, j| z[(i, j)] - mean[j]);
    centered.transpose() * &centered / n
}

/// Largest entry of `|V' Sigma V - I|` over the suite, with `Sigma` the
/// sample covariance (the mixture mean equals the sample mean after EM).
pub fn sigma_orthonormality(fits: &[SuiteFit], bases: &[(String, DrBasis)]) -> f64 {
    let mut worst = 0.0f64;
    for (s, (_, b)) in fits.iter().zip(bases) {
        let sigma = sample_cov(&s.x);
        let gram = b.raw_vectors.transpose() * sigma * &b.raw_vectors;
        worst = worst.max(max_abs(&(gram - DMatrix::identity(b.d, b.d))));
    }
    worst
}

/// Largest off-diagonal of the sample covariance of `X beta`.
pub fn projected_correlation(fits: &[SuiteFit], bases: &[(String, DrBasis)]) -> f64 {
    let mut worst = 0.0f64;
    for (s, (_, b)) in fits.iter().zip(bases) {
        let cov = sample_cov(&(&s.x * &b.directions));
        for i in 0..b.d {
            for j in 0..b.d {
                if i != j {
                    worst = worst.max(cov[(i, j)].abs());
                }
            }
        }
    }
    worst
}

/// Most negative step of any EM log-likelihood trace, as a positive number
/// (0 when every trace is nondecreasing).
pub fn em_monotonicity(fits: &[SuiteFit]) -> f64 {
    let mut worst = 0.0f64;
    for s in fits {
        for w in s.fit.loglik_trace.windows(2) {
            worst = worst.max(w[0] - w[1]);
        }
    }
    worst
}

/// Rand index corrected for chance, counted pair by pair.
pub fn ari_by_pairs(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len();
    let (mut both, mut only_a, mut only_b) = (0u64, 0u64, 0u64);
    for i in 0..n {
        for j in (i + 1)..n {
            match (a[i] == a[j], b[i] == b[j]) {
                (true, true) => both += 1,
                (true, false) => only_a += 1,
                (false, true) => only_b += 1,
                _ => {}
            }
        }
    }
    let pairs = (n * (n - 1) / 2) as f64;
    let (sa, sb) = ((both + only_a) as f64, (both + only_b) as f64);
    let expected = sa * sb / pairs;
    let max = 0.5 * (sa + sb);
    if max == expected {
        return if both as f64 == expected { 1.0 } else { 0.0 };
    }
    (both as f64 - expected) / (max - expected)
}

/// Largest difference between the library ARI and the pair-counting oracle
/// over `cases` random partition pairs of at most 200 points.
pub fn ari_oracle(cases: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let n = rng.gen_range(2..=200);
        let ka = rng.gen_range(1..=8);
        let kb = rng.gen_range(1..=8);
        let a: Vec<usize> = (0..n).map(|_| rng.gen_range(1..=ka)).collect();
        let b: Vec<usize> = if rng.gen_bool(0.2) {
            a.iter().map(|&l| ka + 1 - l).collect()
        } else {
            (0..n).map(|_| rng.gen_range(1..=kb)).collect()
        };
        let got = adjusted_rand_index(&a, &b).unwrap();
        worst = worst.max((got - ari_by_pairs(&a, &b)).abs());
    }
    worst
}

/// BIC of a Gaussian linear regression of `y` on an intercept and `xs`,
/// from the residuals of a QR least-squares solve.
pub fn regression_bic(y: &DVector<f64>, xs: &DMatrix<f64>) -> f64 {
    let n = y.len();
    let mut design = DMatrix::from_element(n, xs.ncols() + 1, 1.0);
    design.columns_mut(1, xs.ncols()).copy_from(xs);
    let qr = design.clone().qr();
    let coef = qr.r().solve_upper_triangular(&(qr.q().transpose() * y)).unwrap();
    let rss = (y - &design * coef).norm_squared();
    let nf = n as f64;
    let loglik = -0.5 * nf * ((2.0 * std::f64::consts::PI).ln() + (rss / nf).ln() + 1.0);
    let params = (xs.ncols() + 2) as f64;
    2.0 * loglik - params * nf.ln()
}

/// Largest difference between `bic_reg` and the regression oracle.
pub fn bic_reg_oracle(cases: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let n = rng.gen_range(20..120);
        let p = rng.gen_range(1..7);
        let z = normal_matrix(&mut rng, n, p) + DMatrix::from_fn(n, p, |i, j| ((i * (j + 1)) % 7) as f64 * 0.3);
        let candidate = rng.gen_range(0..p);
        let conditioning: Vec<usize> = (0..p).filter(|&j| j != candidate && rng.gen_bool(0.6)).collect();
        let got = bic_reg(&z, candidate, &conditioning).unwrap();
        let y = z.column(candidate).into_owned();
        let xs = z.select_columns(conditioning.iter());
        let want = regression_bic(&y, &xs);
        worst = worst.max((got - want).abs());
    }
    worst
}

fn leading_space(m: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..m.nrows()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    eig.eigenvectors.select_columns(order[..k].iter())
}

/// Largest principal angle (radians) between the leading `G - 1`
/// eigenspaces of `M` and `M_I` over the equal-covariance fits of the suite.
pub fn equal_covariance_angles(fits: &[SuiteFit]) -> f64 {
    let mut worst = 0.0f64;
    for s in fits.iter().filter(|s| s.fit.model == ModelName::EEE) {
        let ks = kernel_set(&s.fit, &s.x, &DrOptions::default()).unwrap();
        let k = (s.fit.g - 1).min(s.fit.p());
        let a = leading_space(&ks.kernel, k);
        let b = leading_space(&ks.between, k);
        let cosines = (a.transpose() * b).singular_values();
        for c in cosines.iter() {
            worst = worst.max(c.min(1.0).acos());
        }
    }
    worst
}

/// Outcome of one named property against its tolerance.
pub struct PropertyResult {
    pub name: &'static str,
    pub value: f64,
    pub tolerance: f64,
}

impl PropertyResult {
    pub fn passed(&self) -> bool {
        self.value < self.tolerance
    }
}

pub fn property_suite() -> Vec<PropertyResult> {
    let fits = suite_fits();
    let bases = bases(&fits);
    let r = |name, value, tolerance| PropertyResult { name, value, tolerance };
    vec![
        r("affine invariance, 100 trials", affine_invariance(100, 11), 1e-8),
        r("eigenvalue split", eigen_split(&bases), 1e-10),
        r("V'SV = I", sigma_orthonormality(&fits, &bases), 1e-10),
        r("Cov(X beta) off-diagonal", projected_correlation(&fits, &bases), 1e-10),
        r("EM monotone", em_monotonicity(&fits), 1e-8),
        r("ARI vs pair counting, 500 pairs", ari_oracle(500, 12), 1e-12),
        r("bic_reg vs regression oracle, 50 cases", bic_reg_oracle(50, 13), 1e-9),
        r("EEE span(M) vs span(M_I) angle", equal_covariance_angles(&fits), 1e-6),
    ]
}
