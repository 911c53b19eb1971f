//! Replicated simulation studies comparing GMM, PCA+GMM and GMMDR by ARI.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{adjusted_rand_index, pca_gmm};
use crate::featsel::{best_clustering, gmmdr_pipeline, PipelineOutcome, SelectionConfig};
use crate::mixture::{FitConfig, InitStrategy, MixtureFit, ModelName};
use crate::simgen::{gen_model, Augmentation, BaseModel, ScenarioSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Mixture on all variables.
    Gmm,
    /// Mixture on the principal components kept by Kaiser's rule.
    PcaGmm,
    Gmmdr,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Gmm, Method::PcaGmm, Method::Gmmdr];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Gmm => "gmm",
            Method::PcaGmm => "pca_gmm",
            Method::Gmmdr => "gmmdr",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace(['-', '+'], "_");
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == key)
            .ok_or_else(|| Error::InvalidInput(format!("unknown method '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub base: BaseModel,
    pub augmentation: Augmentation,
    pub priors: Option<Vec<f64>>,
    pub highdim_k: usize,
    /// Sample sizes; each gets `reps` replicates.
    pub sizes: Vec<usize>,
    pub reps: usize,
    /// Replicate `r` uses data seed `seed + r`.
    pub seed: u64,
    pub methods: Vec<Method>,
    pub selection: SelectionConfig,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
}

impl BenchmarkConfig {
    pub fn new(base: BaseModel, augmentation: Augmentation, sizes: Vec<usize>, reps: usize) -> Self {
        BenchmarkConfig {
            base,
            augmentation,
            priors: None,
            highdim_k: 1,
            sizes,
            reps,
            seed: 0,
            methods: Method::ALL.to_vec(),
            selection: SelectionConfig {
                max_g: 15,
                fit: FitConfig {
                    init: InitStrategy::Hierarchical,
                    ..FitConfig::default()
                },
                ..SelectionConfig::default()
            },
            jobs: 0,
        }
    }

    fn spec(&self, n: usize, rep: usize) -> ScenarioSpec {
        ScenarioSpec {
            base: self.base,
            n,
            priors: self.priors.clone(),
            augmentation: self.augmentation,
            highdim_k: self.highdim_k,
            seed: self.seed.wrapping_add(rep as u64),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::InvalidInput("reps must be at least 1".into()));
        }
        if self.sizes.is_empty() {
            return Err(Error::InvalidInput("no sample sizes given".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidInput("no methods given".into()));
        }
        for &n in &self.sizes {
            self.spec(n, 0).validate()?;
        }
        self.selection.validate()
    }
}

/// Outcome of one method on one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub n: usize,
    pub rep: usize,
    pub seed: u64,
    pub method: Method,
    pub ari: Option<f64>,
    pub model: Option<ModelName>,
    pub g: Option<usize>,
    /// Number of variables the final mixture was fitted on.
    pub dims: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub n: usize,
    pub succeeded: usize,
    pub failed: usize,
    pub mean_ari: Option<f64>,
    /// Sample standard deviation; absent with fewer than two successes.
    pub sd_ari: Option<f64>,
    /// Standard error of the mean; absent with fewer than two successes.
    pub se_ari: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub config: BenchmarkConfig,
    pub replicates: Vec<ReplicateResult>,
    pub summary: Vec<MethodSummary>,
}

fn record(n: usize, rep: usize, seed: u64, method: Method, truth: &[usize], r: Result<(MixtureFit, usize)>) -> ReplicateResult {
    let base = ReplicateResult {
        n,
        rep,
        seed,
        method,
        ari: None,
        model: None,
        g: None,
        dims: None,
        error: None,
    };
    match r.and_then(|(fit, dims)| Ok((adjusted_rand_index(truth, &fit.labels())?, fit, dims))) {
        Ok((ari, fit, dims)) => ReplicateResult {
            ari: Some(ari),
            model: Some(fit.model),
            g: Some(fit.g),
            dims: Some(dims),
            ..base
        },
        Err(e) => ReplicateResult {
            error: Some(e.to_string()),
            ..base
        },
    }
}

fn run_replicate(cfg: &BenchmarkConfig, n: usize, rep: usize) -> Vec<ReplicateResult> {
    let spec = cfg.spec(n, rep);
    let seed = spec.seed;
    let data = match gen_model(&spec) {
        Ok(d) => d,
        Err(e) => {
            return cfg
                .methods
                .iter()
                .map(|&m| record(n, rep, seed, m, &[], Err(Error::InvalidScenario(e.to_string()))))
                .collect()
        }
    };
    let x = &data.data;
    let p = x.ncols();
    let mut sel = cfg.selection.clone();
    sel.fit.seed = seed;
    let all: Vec<usize> = (0..p).collect();

    let pipeline = cfg.methods.contains(&Method::Gmmdr).then(|| gmmdr_pipeline(x, &sel));
    let mut out = Vec::new();
    for &method in &cfg.methods {
        let r = match method {
            Method::Gmm => match &pipeline {
                // The pipeline's starting fit is exactly the all-variable mixture.
                Some(Ok(res)) => Ok((res.initial_fit.clone(), p)),
                _ => best_clustering(x, &all, &sel).map(|f| (f, p)),
            },
            Method::PcaGmm => {
                let models = sel.fixed_model.map_or(sel.models.clone(), |(m, _)| vec![m]);
                let range = sel.fixed_model.map_or(1..=sel.max_g, |(_, g)| g..=g);
                pca_gmm(x, range, &models, &sel.fit).map(|r| (r.fit, r.retained))
            }
            Method::Gmmdr => match pipeline.as_ref().expect("pipeline ran") {
                Ok(res) => {
                    let dims = if res.outcome == PipelineOutcome::NoStructure { p } else { res.basis.d };
                    Ok((res.fit.clone(), dims))
                }
                Err(e) => Err(Error::InvalidInput(e.to_string())),
            },
        };
        out.push(record(n, rep, seed, method, &data.labels, r));
    }
    log::info!(
        "n = {n}, replicate {}: {}",
        rep + 1,
        out.iter()
            .map(|r| format!("{} {}", r.method, r.ari.map_or("failed".into(), |a| format!("{a:.4}"))))
            .collect::<Vec<_>>()
            .join(", ")
    );
    out
}

/// Mean, sample sd and standard error of the successful ARIs per (method, n).
pub fn summarize(config: &BenchmarkConfig, replicates: &[ReplicateResult]) -> Vec<MethodSummary> {
    let mut out = Vec::new();
    for &n in &config.sizes {
        for &method in &config.methods {
            let rows: Vec<&ReplicateResult> = replicates.iter().filter(|r| r.n == n && r.method == method).collect();
            let aris: Vec<f64> = rows.iter().filter_map(|r| r.ari).collect();
            let k = aris.len();
            let mean = (k > 0).then(|| aris.iter().sum::<f64>() / k as f64);
            let sd = (k > 1).then(|| {
                let m = mean.unwrap();
                (aris.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (k as f64 - 1.0)).sqrt()
            });
            out.push(MethodSummary {
                method,
                n,
                succeeded: k,
                failed: rows.len() - k,
                mean_ari: mean,
                sd_ari: sd,
                se_ari: sd.map(|s| s / (k as f64).sqrt()),
            });
        }
    }
    out
}

/// Run every (size, replicate) pair, concurrently up to `config.jobs` threads.
/// Results are ordered by size, replicate and method regardless of scheduling.
pub fn run_benchmark(config: &BenchmarkConfig) -> Result<BenchmarkReport> {
    config.validate()?;
    let tasks: Vec<(usize, usize)> = config
        .sizes
        .iter()
        .flat_map(|&n| (0..config.reps).map(move |r| (n, r)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs)
        .build()
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    let replicates: Vec<ReplicateResult> = pool.install(|| {
        tasks
            .par_iter()
            .flat_map_iter(|&(n, r)| run_replicate(config, n, r))
            .collect()
    });
    let summary = summarize(config, &replicates);
    Ok(BenchmarkReport {
        config: config.clone(),
        replicates,
        summary,
    })
}
