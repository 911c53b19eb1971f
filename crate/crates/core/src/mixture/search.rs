use std::cmp::Ordering;
use std::ops::RangeInclusive;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{em_fit, FitConfig, MixtureFit, ModelName};
use crate::error::{Error, Result};

/// A (model, G) pair that could not be fitted, with the reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitFailure {
    pub model: ModelName,
    pub g: usize,
    pub reason: String,
}

/// Outcome of a BIC grid search: successful fits ranked best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSearch {
    pub fits: Vec<MixtureFit>,
    pub failures: Vec<FitFailure>,
}

impl ModelSearch {
    pub fn best(&self) -> &MixtureFit {
        &self.fits[0]
    }

    pub fn into_best(mut self) -> MixtureFit {
        self.fits.swap_remove(0)
    }

    /// BIC of `(model, g)` if that fit succeeded.
    pub fn bic_of(&self, model: ModelName, g: usize) -> Option<f64> {
        self.fits
            .iter()
            .find(|f| f.model == model && f.g == g)
            .map(|f| f.bic)
    }
}

/// Higher BIC first; ties prefer fewer components, then fewer parameters.
pub(crate) fn rank(a: &MixtureFit, b: &MixtureFit) -> Ordering {
    b.bic
        .total_cmp(&a.bic)
        .then(a.g.cmp(&b.g))
        .then(a.nparams.cmp(&b.nparams))
        .then(a.model.cmp(&b.model))
}

/// Fit every `(G, model)` pair and rank the results by BIC.
///
/// Models that do not exist in the data's dimension are mapped with
/// [`ModelName::for_dimension`]. Pairs run in parallel, each with its own
/// seed stream, so the ranking does not depend on scheduling.
pub fn model_search(
    x: &DMatrix<f64>,
    g_range: RangeInclusive<usize>,
    models: &[ModelName],
    config: &FitConfig,
) -> Result<ModelSearch> {
    if models.is_empty() {
        return Err(Error::InvalidInput("model set is empty".into()));
    }
    if g_range.is_empty() || *g_range.start() == 0 {
        return Err(Error::InvalidInput(format!(
            "invalid component range {}..={}",
            g_range.start(),
            g_range.end()
        )));
    }
    config.validate()?;
    let p = x.ncols();
    let usable = ModelName::for_dimension(models, p);
    if usable.is_empty() {
        return Err(Error::InvalidInput(format!("no requested model applies to {p} variable(s)")));
    }
    let grid: Vec<(usize, ModelName)> = g_range
        .flat_map(|g| usable.iter().map(move |&m| (g, m)))
        .collect();
    let total = grid.len();
    let results: Vec<std::result::Result<MixtureFit, FitFailure>> = grid
        .into_par_iter()
        .map(|(g, model)| {
            em_fit(x, g, model, config).map_err(|e| FitFailure {
                model,
                g,
                reason: e.to_string(),
            })
        })
        .collect();
    let mut fits = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(f) => fits.push(f),
            Err(f) => failures.push(f),
        }
    }
    if fits.is_empty() {
        return Err(Error::AllFitsFailed(total));
    }
    fits.sort_by(rank);
    Ok(ModelSearch { fits, failures })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn single_blob_prefers_one_component() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = DMatrix::from_fn(200, 2, |_, _| StandardNormal.sample(&mut rng));
        let s = model_search(&x, 1..=3, &[ModelName::EII], &FitConfig::default()).unwrap();
        assert_eq!(s.best().g, 1);
        for w in s.fits.windows(2) {
            assert!(w[0].bic >= w[1].bic);
        }
    }

    #[test]
    fn empty_inputs_rejected() {
        let x = DMatrix::from_fn(20, 2, |i, j| (i * 3 + j) as f64);
        assert!(model_search(&x, 1..=2, &[], &FitConfig::default()).is_err());
        #[allow(clippy::reversed_empty_ranges)]
        let r = model_search(&x, 3..=2, &[ModelName::EII], &FitConfig::default());
        assert!(r.is_err());
    }

    #[test]
    fn failures_are_recorded() {
        // Six points cannot support a 5-component VVV fit in 2-D.
        let x = DMatrix::from_row_slice(6, 2, &[0.0, 0.0, 1.0, 0.2, 0.3, 1.1, 5.0, 5.0, 6.0, 5.5, 5.2, 6.4]);
        let s = model_search(&x, 1..=5, &[ModelName::VVV], &FitConfig::default()).unwrap();
        assert!(!s.failures.is_empty());
        assert_eq!(s.fits.len() + s.failures.len(), 5);
    }

    #[test]
    fn ties_prefer_smaller_models() {
        let base = MixtureFit {
            model: ModelName::EII,
            g: 2,
            weights: nalgebra::DVector::from_vec(vec![0.5, 0.5]),
            means: DMatrix::zeros(2, 1),
            covariances: vec![],
            loglik: 0.0,
            nparams: 5,
            n: 10,
            bic: -10.0,
            responsibilities: DMatrix::zeros(0, 2),
            converged: true,
            iterations: 1,
            loglik_trace: vec![],
        };
        let mut bigger = base.clone();
        bigger.g = 3;
        let mut more_params = base.clone();
        more_params.nparams = 7;
        let mut v = vec![bigger.clone(), more_params.clone(), base.clone()];
        v.sort_by(rank);
        assert_eq!(v, vec![base, more_params, bigger]);
    }
}
