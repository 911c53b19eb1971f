//! Clustering evaluation: adjusted Rand index, confusion tables, matched
//! error rates and the principal-components comparator.

use std::collections::BTreeMap;
use std::ops::RangeInclusive;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::sym_eigen_desc;
use crate::mixture::{model_search, FitConfig, MixtureFit, ModelName};

/// A labelling of `n` items, canonicalized to dense labels `1..=k` in order
/// of first appearance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    labels: Vec<usize>,
    k: usize,
}

impl Partition {
    pub fn new<T: Ord + Clone>(raw: &[T]) -> Self {
        let mut ids: BTreeMap<T, usize> = BTreeMap::new();
        let mut labels = Vec::with_capacity(raw.len());
        for v in raw {
            let next = ids.len() + 1;
            labels.push(*ids.entry(v.clone()).or_insert(next));
        }
        Partition { k: ids.len(), labels }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Cross-tabulation of two labellings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    /// Distinct truth labels, sorted; row order.
    pub row_labels: Vec<usize>,
    /// Distinct predicted labels, sorted; column order.
    pub col_labels: Vec<usize>,
    pub counts: DMatrix<usize>,
}

impl ConfusionMatrix {
    pub fn row_sums(&self) -> Vec<usize> {
        self.counts.row_iter().map(|r| r.sum()).collect()
    }
}

fn sorted_levels(v: &[usize]) -> Vec<usize> {
    let mut l = v.to_vec();
    l.sort_unstable();
    l.dedup();
    l
}

pub fn confusion_matrix(truth: &[usize], predicted: &[usize]) -> Result<ConfusionMatrix> {
    if truth.len() != predicted.len() {
        return Err(Error::LengthMismatch(truth.len(), predicted.len()));
    }
    let rows = sorted_levels(truth);
    let cols = sorted_levels(predicted);
    let mut counts = DMatrix::<usize>::zeros(rows.len(), cols.len());
    for (t, p) in truth.iter().zip(predicted) {
        let i = rows.binary_search(t).unwrap();
        let j = cols.binary_search(p).unwrap();
        counts[(i, j)] += 1;
    }
    Ok(ConfusionMatrix {
        row_labels: rows,
        col_labels: cols,
        counts,
    })
}

fn comb2(x: usize) -> f64 {
    let x = x as f64;
    x * (x - 1.0) / 2.0
}

/// Hubert-Arabie adjusted Rand index from the contingency table.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(Error::InvalidInput("ARI needs at least two items".into()));
    }
    let table = confusion_matrix(a, b)?;
    let index: f64 = table.counts.iter().map(|&c| comb2(c)).sum();
    let sum_rows: f64 = table.counts.row_iter().map(|r| comb2(r.sum())).sum();
    let sum_cols: f64 = table.counts.column_iter().map(|c| comb2(c.sum())).sum();
    let expected = sum_rows * sum_cols / comb2(a.len());
    let max_index = 0.5 * (sum_rows + sum_cols);
    if max_index == expected {
        // Both partitions are trivial (all-in-one or all singletons) and equal.
        return Ok(1.0);
    }
    Ok((index - expected) / (max_index - expected))
}

/// Smallest misclassification fraction over one-to-one matchings of
/// predicted clusters to true classes.
pub fn error_rate(truth: &[usize], predicted: &[usize]) -> Result<f64> {
    let table = confusion_matrix(truth, predicted)?;
    let (r, c) = table.counts.shape();
    let k = r.max(c);
    if k > 10 {
        return Err(Error::TooManyClasses(k));
    }
    let n = truth.len();
    if n == 0 {
        return Ok(0.0);
    }
    // Exact assignment by dynamic programming over subsets of columns.
    let full = 1usize << c;
    let mut best = vec![i64::MIN; full];
    best[0] = 0;
    for i in 0..r {
        let mut next = vec![i64::MIN; full];
        for mask in 0..full {
            if best[mask] == i64::MIN {
                continue;
            }
            // Row i may stay unmatched when there are more rows than columns.
            next[mask] = next[mask].max(best[mask]);
            for j in 0..c {
                if mask & (1 << j) == 0 {
                    let m2 = mask | (1 << j);
                    let v = best[mask] + table.counts[(i, j)] as i64;
                    if v > next[m2] {
                        next[m2] = v;
                    }
                }
            }
        }
        best = next;
    }
    let matched = best.into_iter().max().unwrap_or(0);
    Ok(1.0 - matched as f64 / n as f64)
}

/// Principal components of the correlation matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationPca {
    pub eigenvalues: DVector<f64>,
    /// p x p, one loading vector per column.
    pub loadings: DMatrix<f64>,
    /// n x p scores of the standardized data.
    pub scores: DMatrix<f64>,
    pub standardized: DMatrix<f64>,
}

impl CorrelationPca {
    /// Number of components with eigenvalue above one (at least one).
    pub fn kaiser_count(&self) -> usize {
        self.eigenvalues.iter().filter(|&&l| l > 1.0).count().max(1)
    }
}

/// Center each column and scale it to unit sample (n - 1) standard deviation.
pub fn standardize(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::InvalidInput("standardizing needs at least two observations".into()));
    }
    let mut z = x.clone();
    for (j, mut col) in z.column_iter_mut().enumerate() {
        let mean = col.mean();
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        if !(var > 0.0) {
            return Err(Error::ZeroVariance(j));
        }
        let sd = var.sqrt();
        col.apply(|v| *v = (*v - mean) / sd);
    }
    Ok(z)
}

pub fn correlation_pca(x: &DMatrix<f64>) -> Result<CorrelationPca> {
    let (n, p) = x.shape();
    if n < 2 {
        return Err(Error::InvalidInput("PCA needs at least two observations".into()));
    }
    let z = standardize(x)?;
    let corr = z.tr_mul(&z) / (n as f64 - 1.0);
    let (eigenvalues, loadings) = sym_eigen_desc(&corr);
    let scores = &z * &loadings;
    debug_assert_eq!(scores.ncols(), p);
    Ok(CorrelationPca {
        eigenvalues,
        loadings,
        scores,
        standardized: z,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaGmm {
    pub fit: MixtureFit,
    pub retained: usize,
    pub pca: CorrelationPca,
}

/// Mixture fitted to the principal components kept by Kaiser's rule.
pub fn pca_gmm(
    x: &DMatrix<f64>,
    g_range: RangeInclusive<usize>,
    models: &[ModelName],
    config: &FitConfig,
) -> Result<PcaGmm> {
    let pca = correlation_pca(x)?;
    let retained = pca.kaiser_count();
    if x.nrows() <= retained {
        return Err(Error::InvalidInput(format!(
            "{} observations cannot support {retained} retained components",
            x.nrows()
        )));
    }
    let scores = pca.scores.columns(0, retained).into_owned();
    let fit = model_search(&scores, g_range, models, config)?.into_best();
    Ok(PcaGmm { fit, retained, pca })
}
