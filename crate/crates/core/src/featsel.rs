//! BIC-driven selection of the reduced variables and the full
//! fit / reduce / select loop.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::directions::{estimate_basis, fix_signs, DrBasis, DrOptions};
use crate::error::{Error, Result};
use crate::linalg::{column_means, mle_covariance};
use crate::mixture::{em_fit, entropy, model_search, FitConfig, MixtureFit, ModelName};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// How the reduced variables are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// Greedy forward search on the BIC difference.
    Bic,
    /// Leading prefix of directions with the smallest classification entropy.
    Entropy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    /// Largest number of components tried when no model is fixed.
    pub max_g: usize,
    pub models: Vec<ModelName>,
    /// Use this `(model, G)` for every clustering fit instead of a BIC search.
    pub fixed_model: Option<(ModelName, usize)>,
    pub fit: FitConfig,
    pub mode: SelectionMode,
    /// Cap on fit / reduce / select rounds.
    pub max_outer_iter: usize,
    pub directions: DrOptions,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            max_g: 9,
            models: ModelName::MULTIVARIATE.to_vec(),
            fixed_model: None,
            fit: FitConfig::default(),
            mode: SelectionMode::Bic,
            max_outer_iter: 10,
            directions: DrOptions::default(),
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        self.fit.validate()?;
        if self.max_g == 0 {
            return Err(Error::InvalidInput("max_g must be at least 1".into()));
        }
        if self.models.is_empty() && self.fixed_model.is_none() {
            return Err(Error::InvalidInput("model set is empty".into()));
        }
        if let Some((_, g)) = self.fixed_model {
            if g == 0 {
                return Err(Error::InvalidInput("fixed G must be at least 1".into()));
            }
        }
        if self.max_outer_iter == 0 {
            return Err(Error::InvalidInput("max_outer_iter must be at least 1".into()));
        }
        Ok(())
    }
}

/// BIC of regressing column `candidate` of `z` on the `conditioning` columns
/// (with intercept) under Gaussian errors:
/// `-n log 2pi - n log s2 - n - (q + 1) log n` with `q = |conditioning| + 1`.
pub fn bic_reg(z: &DMatrix<f64>, candidate: usize, conditioning: &[usize]) -> Result<f64> {
    let n = z.nrows();
    let q = conditioning.len() + 1;
    if n <= q {
        return Err(Error::InvalidInput(format!("{n} observations cannot support a regression on {} predictors", q - 1)));
    }
    let y = z.column(candidate).into_owned();
    let mut design = DMatrix::from_element(n, q, 1.0);
    for (k, &c) in conditioning.iter().enumerate() {
        design.set_column(k + 1, &z.column(c));
    }
    let coef = design
        .clone()
        .svd(true, true)
        .solve(&y, 1e-12)
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    let resid: DVector<f64> = &y - &design * coef;
    let s2 = resid.norm_squared() / n as f64;
    let scale = y.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if !(s2 > 1e-14 * scale.max(f64::MIN_POSITIVE)) {
        return Err(Error::ZeroVariance(candidate));
    }
    let nf = n as f64;
    Ok(-nf * LN_2PI - nf * s2.ln() - nf - (q as f64 + 1.0) * nf.ln())
}

/// Best clustering of the listed columns of `z`, by BIC over the configured
/// models and `1..=max_g`, or the fixed model.
pub fn best_clustering(z: &DMatrix<f64>, columns: &[usize], config: &SelectionConfig) -> Result<MixtureFit> {
    if columns.is_empty() {
        return Err(Error::InvalidInput("no columns to cluster".into()));
    }
    let sub = z.select_columns(columns.iter());
    match config.fixed_model {
        Some((model, g)) => {
            let usable = ModelName::for_dimension(&[model], columns.len());
            let model = *usable.first().ok_or(Error::UnsupportedModel { model, p: columns.len() })?;
            em_fit(&sub, g, model, &config.fit)
        }
        None => Ok(model_search(&sub, 1..=config.max_g, &config.models, &config.fit)?.into_best()),
    }
}

/// BIC evidence for adding one candidate to the current selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub candidate: usize,
    /// BIC of the best clustering with the candidate included.
    pub bic_clust: f64,
    /// Clustering BIC without the candidate plus its regression BIC.
    pub bic_not_clust: f64,
    pub bic_diff: f64,
    pub model: ModelName,
    pub g: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionStep {
    /// Score of the proposed candidate (largest difference this step).
    pub best: CandidateScore,
    pub accepted: bool,
    /// Every candidate evaluated this step.
    pub evaluated: Vec<CandidateScore>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// The best remaining candidate had a non-positive difference.
    NegativeDiff,
    /// Every variable was selected.
    AllIncluded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionTrace {
    pub steps: Vec<SelectionStep>,
    /// Selected columns in the order they were added.
    pub selected: Vec<usize>,
    pub stop_reason: StopReason,
}

impl SelectionTrace {
    /// Re-derive the selection from the recorded scores alone.
    pub fn replay(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for step in &self.steps {
            let mut best: Option<&CandidateScore> = None;
            for c in &step.evaluated {
                if best.map_or(true, |b| c.bic_diff > b.bic_diff) {
                    best = Some(c);
                }
            }
            match best {
                Some(b) if b.bic_diff > 0.0 => out.push(b.candidate),
                _ => break,
            }
        }
        out
    }
}

/// Greedy forward selection of the columns of `z`.
///
/// At each step every remaining column is scored by
/// `BIC_clust(S + j) - [BIC_clust(S) + BIC_reg(j | S)]`, with
/// `BIC_clust(empty) = 0`; the best column is added while its score is
/// positive. Returns the trace and the clustering of the selected columns.
pub fn greedy_select(z: &DMatrix<f64>, config: &SelectionConfig) -> Result<(SelectionTrace, Option<MixtureFit>)> {
    config.validate()?;
    let d = z.ncols();
    let mut selected: Vec<usize> = Vec::new();
    let mut current_bic = 0.0;
    let mut current_fit: Option<MixtureFit> = None;
    let mut steps = Vec::new();
    loop {
        let remaining: Vec<usize> = (0..d).filter(|j| !selected.contains(j)).collect();
        if remaining.is_empty() {
            return Ok((
                SelectionTrace {
                    steps,
                    selected,
                    stop_reason: StopReason::AllIncluded,
                },
                current_fit,
            ));
        }
        let scored: Vec<Result<(CandidateScore, MixtureFit)>> = remaining
            .par_iter()
            .map(|&j| {
                let mut cols = selected.clone();
                cols.push(j);
                let fit = best_clustering(z, &cols, config)?;
                let bic_not_clust = current_bic + bic_reg(z, j, &selected)?;
                Ok((
                    CandidateScore {
                        candidate: j,
                        bic_clust: fit.bic,
                        bic_not_clust,
                        bic_diff: fit.bic - bic_not_clust,
                        model: fit.model,
                        g: fit.g,
                    },
                    fit,
                ))
            })
            .collect();
        let mut evaluated: Vec<CandidateScore> = Vec::with_capacity(scored.len());
        let mut best: Option<(usize, MixtureFit)> = None;
        let mut last_err = None;
        for r in scored {
            match r {
                Ok((score, fit)) => {
                    let better = best
                        .as_ref()
                        .map_or(true, |(b, _)| score.bic_diff > evaluated[*b].bic_diff);
                    evaluated.push(score);
                    if better {
                        best = Some((evaluated.len() - 1, fit));
                    }
                }
                Err(e) => {
                    log::debug!("candidate skipped: {e}");
                    last_err = Some(e);
                }
            }
        }
        let Some((idx, fit)) = best else {
            return Err(last_err.expect("some candidate was evaluated"));
        };
        let score = evaluated[idx].clone();
        let accepted = score.bic_diff > 0.0;
        steps.push(SelectionStep {
            best: score.clone(),
            accepted,
            evaluated,
        });
        if !accepted {
            return Ok((
                SelectionTrace {
                    steps,
                    selected,
                    stop_reason: StopReason::NegativeDiff,
                },
                current_fit,
            ));
        }
        selected.push(score.candidate);
        current_bic = score.bic_clust;
        current_fit = Some(fit);
    }
}

/// Entropy of each leading prefix of directions for a fixed G.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyTrace {
    pub g: usize,
    pub model: ModelName,
    /// `entropies[k - 1]` is the entropy of the fit on the first `k` columns.
    pub entropies: Vec<f64>,
    pub selected: Vec<usize>,
}

/// Pick the leading prefix of `z` whose `g`-component fit has the smallest
/// classification entropy (ties go to the shorter prefix). The model is the
/// fixed model if one is set, EII otherwise.
pub fn entropy_select(z: &DMatrix<f64>, g: usize, config: &SelectionConfig) -> Result<EntropyTrace> {
    config.validate()?;
    let model = config.fixed_model.map_or(ModelName::EII, |(m, _)| m);
    let entropies = (1..=z.ncols())
        .into_par_iter()
        .map(|k| {
            let m = ModelName::for_dimension(&[model], k)
                .first()
                .copied()
                .ok_or(Error::UnsupportedModel { model, p: k })?;
            let fit = em_fit(&z.columns(0, k).into_owned(), g, m, &config.fit)?;
            entropy(&fit.responsibilities)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut best = 0;
    for (k, e) in entropies.iter().enumerate() {
        if *e < entropies[best] {
            best = k;
        }
    }
    Ok(EntropyTrace {
        g,
        model,
        entropies,
        selected: (0..=best).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SelectionRecord {
    Bic(SelectionTrace),
    Entropy(EntropyTrace),
}

impl SelectionRecord {
    pub fn selected(&self) -> &[usize] {
        match self {
            SelectionRecord::Bic(t) => &t.selected,
            SelectionRecord::Entropy(t) => &t.selected,
        }
    }
}

/// One fit / reduce / select round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineIteration {
    /// Number of directions estimated this round.
    pub d: usize,
    pub eigenvalues: Vec<f64>,
    pub selection: SelectionRecord,
    /// Kept directions, in eigenvalue order.
    pub kept: Vec<usize>,
    pub model: ModelName,
    pub g: usize,
    pub bic: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineOutcome {
    /// A stable set of reduced variables was found.
    Converged,
    /// The round cap was hit before the selection stabilized.
    Capped,
    /// The initial fit has one component or no direction was selected;
    /// `fit` is the initial fit on the original variables.
    NoStructure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineResult {
    /// Clustering of the reduced variables `x * basis.directions`
    /// (of the original variables when the outcome is `NoStructure`).
    pub fit: MixtureFit,
    /// Reduced directions in the original coordinates.
    pub basis: DrBasis,
    pub initial_fit: MixtureFit,
    pub iterations: Vec<PipelineIteration>,
    pub outcome: PipelineOutcome,
}

impl PipelineResult {
    /// The variables the final fit was computed on.
    pub fn variables(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        if self.outcome == PipelineOutcome::NoStructure {
            x.clone()
        } else {
            x * &self.basis.directions
        }
    }
}

fn normalize_columns(m: &mut DMatrix<f64>) {
    for mut c in m.column_iter_mut() {
        let norm = c.norm();
        if norm > 0.0 {
            c /= norm;
        }
    }
}

/// Fit, estimate directions, select, refit, and repeat on the selected
/// variables until no direction is dropped.
pub fn gmmdr_pipeline(x: &DMatrix<f64>, config: &SelectionConfig) -> Result<PipelineResult> {
    config.validate()?;
    let (n, p) = x.shape();
    if n < 2 || p == 0 {
        return Err(Error::InvalidInput(format!("cannot reduce a {n} x {p} data matrix")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("data contain non-finite values".into()));
    }
    let all: Vec<usize> = (0..p).collect();
    let initial_fit = best_clustering(x, &all, config)?;
    log::info!("initial fit: {} with G = {}, BIC = {:.3}", initial_fit.model, initial_fit.g, initial_fit.bic);

    let no_structure = |initial_fit: MixtureFit, iterations| PipelineResult {
        fit: initial_fit.clone(),
        basis: DrBasis {
            raw_vectors: DMatrix::zeros(p, 0),
            directions: DMatrix::zeros(p, 0),
            eigenvalues: vec![],
            mean_contrib: vec![],
            var_contrib: vec![],
            d: 0,
        },
        initial_fit,
        iterations,
        outcome: PipelineOutcome::NoStructure,
    };

    let mut transform = DMatrix::<f64>::identity(p, p);
    let mut fit = initial_fit.clone();
    let mut last_basis: Option<DrBasis> = None;
    let mut iterations = Vec::new();
    let mut outcome = PipelineOutcome::Capped;
    for round in 0..config.max_outer_iter {
        let z = x * &transform;
        let basis = estimate_basis(&fit, &z, &config.directions)?;
        if basis.d == 0 {
            if last_basis.is_none() {
                return Ok(no_structure(initial_fit, iterations));
            }
            outcome = PipelineOutcome::Converged;
            break;
        }
        let mut candidate = &transform * &basis.directions;
        normalize_columns(&mut candidate);
        let zc = x * &candidate;
        let (selection, sub_fit) = match config.mode {
            SelectionMode::Bic => {
                let (trace, sub_fit) = greedy_select(&zc, config)?;
                (SelectionRecord::Bic(trace), sub_fit)
            }
            SelectionMode::Entropy => {
                let trace = entropy_select(&zc, fit.g, config)?;
                let sub_fit = best_clustering(&zc, &trace.selected, config)?;
                (SelectionRecord::Entropy(trace), Some(sub_fit))
            }
        };
        let Some(sub_fit) = sub_fit else {
            log::info!("round {}: no direction selected", round + 1);
            if last_basis.is_none() {
                return Ok(no_structure(initial_fit, iterations));
            }
            outcome = PipelineOutcome::Converged;
            break;
        };
        let order = selection.selected().to_vec();
        let mut kept = order.clone();
        kept.sort_unstable();
        // Position in `order` of each kept direction, giving the eigen-ordered fit.
        let perm: Vec<usize> = kept
            .iter()
            .map(|k| order.iter().position(|o| o == k).unwrap())
            .collect();
        fit = sub_fit.permute_variables(&perm);
        transform = candidate.select_columns(kept.iter());
        log::info!(
            "round {}: d = {}, kept {:?}, {} with G = {}",
            round + 1,
            basis.d,
            kept,
            fit.model,
            fit.g
        );
        let dropped = kept.len() < basis.d;
        iterations.push(PipelineIteration {
            d: basis.d,
            eigenvalues: basis.eigenvalues.clone(),
            selection,
            kept: kept.clone(),
            model: fit.model,
            g: fit.g,
            bic: fit.bic,
        });
        last_basis = Some(basis.select(&kept));
        if !dropped {
            outcome = PipelineOutcome::Converged;
            break;
        }
    }
    if outcome == PipelineOutcome::Capped {
        log::warn!(
            "selection did not stabilize within {} rounds; returning the last round",
            config.max_outer_iter
        );
    }
    let last_basis = last_basis.expect("at least one round selected directions");

    let mut directions = transform;
    let before = directions.clone();
    fix_signs(&mut directions);
    let flip: Vec<bool> = directions
        .column_iter()
        .zip(before.column_iter())
        .map(|(a, b)| (a - b).norm() > 0.0)
        .collect();
    let fit = fit.reflect_variables(&flip);
    let sigma = mle_covariance(x, &column_means(x));
    let mut raw_vectors = directions.clone();
    for mut c in raw_vectors.column_iter_mut() {
        let v = (c.transpose() * &sigma * &c)[(0, 0)];
        c /= v.sqrt();
    }
    Ok(PipelineResult {
        fit,
        basis: DrBasis {
            d: directions.ncols(),
            raw_vectors,
            directions,
            eigenvalues: last_basis.eigenvalues,
            mean_contrib: last_basis.mean_contrib,
            var_contrib: last_basis.var_contrib,
        },
        initial_fit,
        iterations,
        outcome,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::adjusted_rand_index;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    /// Two separated groups in column 0, wider pure noise elsewhere.
    fn signal_plus_noise(n: usize, p: usize, seed: u64) -> (DMatrix<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<usize> = (0..n).map(|i| 1 + (i % 2)).collect();
        let x = DMatrix::from_fn(n, p, |i, j| {
            let e: f64 = StandardNormal.sample(&mut rng);
            if j == 0 {
                e + if labels[i] == 1 { -4.0 } else { 4.0 }
            } else {
                3.0 * e
            }
        });
        (x, labels)
    }

    fn quick_config() -> SelectionConfig {
        SelectionConfig {
            max_g: 3,
            models: vec![ModelName::EII, ModelName::VII, ModelName::EEE, ModelName::VVV],
            fit: FitConfig {
                restarts: 2,
                ..FitConfig::default()
            },
            ..SelectionConfig::default()
        }
    }

    #[test]
    fn bic_reg_marginal_equals_single_gaussian_bic() {
        let (x, _) = signal_plus_noise(80, 2, 3);
        let v = bic_reg(&x, 1, &[]).unwrap();
        let col = x.column(1);
        let mean = col.mean();
        let s2 = col.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / 80.0;
        let ll: f64 = col
            .iter()
            .map(|a| -0.5 * (LN_2PI + s2.ln() + (a - mean).powi(2) / s2))
            .sum();
        assert!((v - (2.0 * ll - 2.0 * 80f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn bic_reg_rejects_constant_response() {
        let mut x = DMatrix::from_fn(10, 2, |i, j| (i + j) as f64);
        x.column_mut(1).fill(2.0);
        assert!(matches!(bic_reg(&x, 1, &[]), Err(Error::ZeroVariance(1))));
        // A response that is an exact linear function of its predictor.
        let y = DMatrix::from_fn(10, 2, |i, j| if j == 0 { i as f64 } else { 3.0 * i as f64 - 1.0 });
        assert!(bic_reg(&y, 1, &[0]).is_err());
    }

    #[test]
    fn greedy_keeps_signal_column() {
        let (x, _) = signal_plus_noise(120, 3, 11);
        let (trace, fit) = greedy_select(&x, &quick_config()).unwrap();
        assert_eq!(trace.selected, vec![0]);
        assert_eq!(trace.stop_reason, StopReason::NegativeDiff);
        assert_eq!(fit.unwrap().g, 2);
        assert_eq!(trace.replay(), trace.selected);
        for s in &trace.steps {
            assert_eq!(s.accepted, s.best.bic_diff > 0.0);
        }
    }

    #[test]
    fn fixed_model_is_respected() {
        let (x, _) = signal_plus_noise(100, 2, 5);
        let cfg = SelectionConfig {
            fixed_model: Some((ModelName::VVV, 2)),
            ..quick_config()
        };
        let fit = best_clustering(&x, &[0], &cfg).unwrap();
        assert_eq!((fit.model, fit.g), (ModelName::V, 2));
    }

    #[test]
    fn pipeline_recovers_groups() {
        let (x, labels) = signal_plus_noise(150, 4, 21);
        let res = gmmdr_pipeline(&x, &quick_config()).unwrap();
        assert_eq!(res.outcome, PipelineOutcome::Converged);
        assert!(res.basis.d >= 1);
        assert!(adjusted_rand_index(&labels, &res.fit.labels()).unwrap() > 0.95);
        let z = res.variables(&x);
        assert_eq!(z.ncols(), res.fit.p());
        // The leading direction points along the signal column.
        assert!(res.basis.directions[(0, 0)].abs() > 0.9);
    }

    #[test]
    fn pipeline_without_structure() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = DMatrix::from_fn(100, 2, |_, _| StandardNormal.sample(&mut rng));
        let res = gmmdr_pipeline(&x, &quick_config()).unwrap();
        assert_eq!(res.outcome, PipelineOutcome::NoStructure);
        assert_eq!(res.fit.g, 1);
        assert_eq!(res.basis.d, 0);
    }

    #[test]
    fn entropy_mode_picks_a_prefix() {
        let (x, labels) = signal_plus_noise(120, 3, 8);
        let cfg = SelectionConfig {
            mode: SelectionMode::Entropy,
            ..quick_config()
        };
        let res = gmmdr_pipeline(&x, &cfg).unwrap();
        match &res.iterations[0].selection {
            SelectionRecord::Entropy(t) => {
                assert_eq!(t.selected[0], 0);
                assert_eq!(t.entropies.len(), res.iterations[0].d);
            }
            other => panic!("unexpected record {other:?}"),
        }
        assert!(adjusted_rand_index(&labels, &res.fit.labels()).unwrap() > 0.9);
    }
}
