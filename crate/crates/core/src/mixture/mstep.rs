//! Maximization steps for each covariance parametrization.
//!
//! Given responsibilities `z` (n x G) every step returns the weights, means and
//! covariances maximizing the expected complete-data log-likelihood. VEI and
//! VEV have no closed form; they alternate exact updates of volume and shape
//! starting from the previous shape, so each M-step never decreases the
//! objective.

use nalgebra::{DMatrix, DVector};

use super::ModelName;
use crate::error::{Error, Result};
use crate::linalg::{sym_eigen_desc, symmetrize};

pub(crate) const INNER_MAX_ITER: usize = 20;
pub(crate) const INNER_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub(crate) struct Params {
    pub weights: DVector<f64>,
    /// G x p, one component mean per row.
    pub means: DMatrix<f64>,
    pub covariances: Vec<DMatrix<f64>>,
    /// Shared shape (unit determinant) for VEI/VEV, reused as a warm start.
    pub shape: Option<DVector<f64>>,
}

struct Scatter {
    sizes: Vec<f64>,
    means: DMatrix<f64>,
    /// Weighted within-component scatter matrices W_g.
    within: Vec<DMatrix<f64>>,
}

fn scatter(x: &DMatrix<f64>, z: &DMatrix<f64>) -> Result<Scatter> {
    let (n, p) = x.shape();
    let g = z.ncols();
    let mut sizes = Vec::with_capacity(g);
    let mut means = DMatrix::zeros(g, p);
    let mut within = Vec::with_capacity(g);
    for k in 0..g {
        let zk = z.column(k);
        let nk: f64 = zk.sum();
        // A component carrying less than half an observation has collapsed.
        if !(nk >= 0.5) {
            return Err(Error::DegenerateComponent {
                component: k + 1,
                reason: format!("weight {:.3e} below 1/(2n)", nk / n as f64),
            });
        }
        let mean = x.tr_mul(&zk) / nk;
        let mut centered = DMatrix::zeros(n, p);
        {
            let xs = x.as_slice();
            let zs = zk.as_slice();
            let cs = centered.as_mut_slice();
            for j in 0..p {
                for i in 0..n {
                    cs[j * n + i] = (xs[j * n + i] - mean[j]) * zs[i].sqrt();
                }
            }
        }
        let mut wk = centered.tr_mul(&centered);
        symmetrize(&mut wk);
        means.set_row(k, &mean.transpose());
        sizes.push(nk);
        within.push(wk);
    }
    Ok(Scatter {
        sizes,
        means,
        within,
    })
}

fn unit_determinant(c: &DVector<f64>) -> Result<DVector<f64>> {
    if c.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::DegenerateComponent {
            component: 0,
            reason: "shape matrix has a non-positive entry".into(),
        });
    }
    let log_gm = c.iter().map(|v| v.ln()).sum::<f64>() / c.len() as f64;
    Ok(c / log_gm.exp())
}

fn check_floor(component: usize, min_eigen: f64, floor: f64) -> Result<()> {
    if !(min_eigen > floor) {
        return Err(Error::DegenerateComponent {
            component,
            reason: format!("covariance eigenvalue {min_eigen:.3e} below variance floor {floor:.3e}"),
        });
    }
    Ok(())
}

fn max_rel_change(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs() / y.abs().max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max)
}

pub(crate) fn m_step(
    x: &DMatrix<f64>,
    z: &DMatrix<f64>,
    model: ModelName,
    floor: f64,
    prev_shape: Option<&DVector<f64>>,
) -> Result<Params> {
    let (n, p) = x.shape();
    let g = z.ncols();
    let nf = n as f64;
    let pf = p as f64;
    let s = scatter(x, z)?;
    let weights = DVector::from_iterator(g, s.sizes.iter().map(|nk| nk / nf));
    let identity = DMatrix::<f64>::identity(p, p);
    let mut shape = None;

    let covariances: Vec<DMatrix<f64>> = match model {
        ModelName::E | ModelName::EII => {
            let total: f64 = s.within.iter().map(|w| w.trace()).sum();
            let lambda = total / (nf * pf);
            check_floor(1, lambda, floor)?;
            vec![&identity * lambda; g]
        }
        ModelName::V | ModelName::VII => {
            let mut out = Vec::with_capacity(g);
            for k in 0..g {
                let lambda = s.within[k].trace() / (s.sizes[k] * pf);
                check_floor(k + 1, lambda, floor)?;
                out.push(&identity * lambda);
            }
            out
        }
        ModelName::EEI => {
            let total = s.within.iter().fold(DMatrix::zeros(p, p), |acc, w| acc + w);
            let diag = total.diagonal() / nf;
            check_floor(1, diag.min(), floor)?;
            vec![DMatrix::from_diagonal(&diag); g]
        }
        ModelName::VEI => {
            let diags: Vec<DVector<f64>> = s.within.iter().map(|w| w.diagonal()).collect();
            let mut b = match prev_shape {
                Some(b) if b.len() == p => b.clone(),
                _ => unit_determinant(&diags.iter().fold(DVector::zeros(p), |a, d| a + d))?,
            };
            let volumes = |b: &DVector<f64>| -> Vec<f64> {
                (0..g)
                    .map(|k| diags[k].component_div(b).sum() / (pf * s.sizes[k]))
                    .collect()
            };
            for _ in 0..INNER_MAX_ITER {
                let lambdas = volumes(&b);
                let c = (0..g).fold(DVector::zeros(p), |acc, k| acc + &diags[k] / lambdas[k]);
                let next = unit_determinant(&c)?;
                let change = max_rel_change(&next, &b);
                b = next;
                if change < INNER_TOL {
                    break;
                }
            }
            let lambdas = volumes(&b);
            let mut out = Vec::with_capacity(g);
            for k in 0..g {
                let d = &b * lambdas[k];
                check_floor(k + 1, d.min(), floor)?;
                out.push(DMatrix::from_diagonal(&d));
            }
            shape = Some(b);
            out
        }
        ModelName::EEE => {
            let mut sigma = s.within.iter().fold(DMatrix::zeros(p, p), |acc, w| acc + w) / nf;
            symmetrize(&mut sigma);
            let (vals, _) = sym_eigen_desc(&sigma);
            check_floor(1, vals[p - 1], floor)?;
            vec![sigma; g]
        }
        ModelName::EEV => {
            let eigs: Vec<_> = s.within.iter().map(sym_eigen_desc).collect();
            let total = eigs
                .iter()
                .fold(DVector::zeros(p), |acc, (vals, _)| acc + vals.map(|v| v.max(0.0)));
            let a = unit_determinant(&total)?;
            let lambda = (total[0] / a[0]) / nf;
            let mut out = Vec::with_capacity(g);
            for (k, (_, vecs)) in eigs.iter().enumerate() {
                check_floor(k + 1, lambda * a.min(), floor)?;
                out.push(compose(vecs, &(&a * lambda)));
            }
            out
        }
        ModelName::VEV => {
            let eigs: Vec<_> = s.within.iter().map(sym_eigen_desc).collect();
            let omegas: Vec<DVector<f64>> = eigs.iter().map(|(v, _)| v.map(|x| x.max(0.0))).collect();
            let mut a = match prev_shape {
                Some(a) if a.len() == p => a.clone(),
                _ => unit_determinant(&omegas.iter().fold(DVector::zeros(p), |acc, o| acc + o))?,
            };
            let volumes = |a: &DVector<f64>| -> Vec<f64> {
                (0..g)
                    .map(|k| omegas[k].component_div(a).sum() / (pf * s.sizes[k]))
                    .collect()
            };
            for _ in 0..INNER_MAX_ITER {
                let lambdas = volumes(&a);
                let c = (0..g).fold(DVector::zeros(p), |acc, k| acc + &omegas[k] / lambdas[k]);
                let next = unit_determinant(&c)?;
                let change = max_rel_change(&next, &a);
                a = next;
                if change < INNER_TOL {
                    break;
                }
            }
            let lambdas = volumes(&a);
            let mut out = Vec::with_capacity(g);
            for (k, (_, vecs)) in eigs.iter().enumerate() {
                check_floor(k + 1, lambdas[k] * a.min(), floor)?;
                out.push(compose(vecs, &(&a * lambdas[k])));
            }
            shape = Some(a);
            out
        }
        ModelName::VVV => {
            let mut out = Vec::with_capacity(g);
            for k in 0..g {
                let mut sigma = &s.within[k] / s.sizes[k];
                symmetrize(&mut sigma);
                let (vals, _) = sym_eigen_desc(&sigma);
                check_floor(k + 1, vals[p - 1], floor)?;
                out.push(sigma);
            }
            out
        }
    };

    Ok(Params {
        weights,
        means: s.means,
        covariances,
        shape,
    })
}

/// `D diag(values) D'`, symmetrized.
fn compose(vectors: &DMatrix<f64>, values: &DVector<f64>) -> DMatrix<f64> {
    let scaled = vectors * DMatrix::from_diagonal(values);
    let mut out = scaled * vectors.transpose();
    symmetrize(&mut out);
    out
}
