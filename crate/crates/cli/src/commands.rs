use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::ops::RangeInclusive;
use std::path::Path;

use gmmdr::benchmark::{run_benchmark, BenchmarkConfig, BenchmarkReport, Method};
use gmmdr::directions::{density_grid, estimate_basis, project_params, DrBasis, DrOptions, GridSpec, ProjectedMixture};
use gmmdr::eval::{adjusted_rand_index, confusion_matrix, error_rate, standardize};
use gmmdr::featsel::{gmmdr_pipeline, PipelineIteration, PipelineOutcome, SelectionConfig, SelectionRecord};
use gmmdr::io::{
    load_model, read_csv, save_model, write_coefficients, write_csv, write_eigen_contrib, write_projection,
    write_uncertainty, CsvOptions, Dataset, ModelArchive, Provenance,
};
use gmmdr::mixture::{map_classify, model_search, MixtureFit, ModelName, ModelSearch};
use gmmdr::simgen::{gen_model, ScenarioSpec};
use nalgebra::DMatrix;
use serde::Serialize;

use crate::args::{
    BenchmarkCmd, DataArgs, EvaluateCmd, ExportArgs, FitArgs, FitCmd, ReduceCmd, SelectCmd, SimulateCmd,
};
use crate::report;
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

/// Settings of one invocation, written next to or inside every output.
#[derive(Serialize)]
struct RunConfig<'a, T: Serialize> {
    subcommand: &'static str,
    tool_version: &'static str,
    args: &'a T,
}

fn run_config<'a, T: Serialize>(subcommand: &'static str, args: &'a T) -> RunConfig<'a, T> {
    RunConfig {
        subcommand,
        tool_version: env!("CARGO_PKG_VERSION"),
        args,
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    Ok(())
}

/// `<path>.run.json`, the settings sidecar of a CSV output.
fn sidecar(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".run.json");
    s.into()
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn load_data(args: &DataArgs) -> Result<Dataset> {
    if !args.delimiter.is_ascii() {
        return Err(CliError::Usage(format!("delimiter '{}' is not an ASCII character", args.delimiter)));
    }
    let options = CsvOptions {
        label_column: args.label_column.clone(),
        delimiter: args.delimiter as u8,
    };
    let mut ds = read_csv(&args.input, &options)?;
    log::info!(
        "read {} observations on {} variables from {}",
        ds.data.nrows(),
        ds.data.ncols(),
        args.input.display()
    );
    if args.standardize {
        ds.data = standardize(&ds.data)?;
    }
    Ok(ds)
}

fn models_or_all(models: &[ModelName]) -> Vec<ModelName> {
    if models.is_empty() {
        ModelName::MULTIVARIATE.to_vec()
    } else {
        models.to_vec()
    }
}

fn g_range(fit: &FitArgs) -> Result<RangeInclusive<usize>> {
    match fit.g {
        Some(0) => Err(CliError::Usage("--g must be at least 1".into())),
        Some(g) => Ok(g..=g),
        None if fit.max_g == 0 => Err(CliError::Usage("--max-g must be at least 1".into())),
        None => Ok(1..=fit.max_g),
    }
}

fn selection_config(fit: &FitArgs) -> Result<SelectionConfig> {
    let models = models_or_all(&fit.models);
    let fixed_model = match (fit.g, models.as_slice()) {
        (None, _) => None,
        (Some(g), [m]) => Some((*m, g)),
        (Some(_), _) => return Err(CliError::Usage("--g needs exactly one entry in --models".into())),
    };
    Ok(SelectionConfig {
        max_g: fit.max_g,
        models,
        fixed_model,
        fit: fit.fit_config(),
        ..SelectionConfig::default()
    })
}

fn search(x: &DMatrix<f64>, fit: &FitArgs) -> Result<ModelSearch> {
    let search = model_search(x, g_range(fit)?, &models_or_all(&fit.models), &fit.fit_config())?;
    for f in &search.failures {
        log::debug!("{} with G = {} failed: {}", f.model, f.g, f.reason);
    }
    Ok(search)
}

fn report_agreement(out: &mut impl Write, ds: &Dataset, predicted: &[usize]) -> Result<()> {
    if let Some(truth) = &ds.labels {
        let ari = adjusted_rand_index(truth, predicted)?;
        writeln!(out, "adjusted Rand index: {ari:.4}")?;
        match error_rate(truth, predicted) {
            Ok(e) => writeln!(out, "misclassification rate: {:.2}%", 100.0 * e)?,
            Err(e) => log::warn!("no misclassification rate: {e}"),
        }
        let cm = confusion_matrix(truth, predicted)?;
        report::confusion(out, &cm, &ds.label_levels)?;
    }
    Ok(())
}

pub fn fit(cmd: &FitCmd) -> Result<()> {
    let ds = load_data(&cmd.data)?;
    let search = search(&ds.data, &cmd.fit)?;
    let best = search.best();
    let stdout = io::stdout();
    let mut out = stdout.lock();
    report::bic_table(&mut out, &search)?;
    report::fit_summary(&mut out, best)?;
    report_agreement(&mut out, &ds, &best.labels())?;
    if let Some(path) = &cmd.output {
        let config = run_config("fit", cmd);
        let archive = ModelArchive::new(best.clone(), None, None, Provenance::new(cmd.fit.seed, &config, &ds.data)?)
            .with_config(&config)?;
        let path = save_model(path, &archive)?;
        log::info!("saved {}", path.display());
    }
    Ok(())
}

/// Marginal of a fit on its first `k` variables.
fn leading_marginal(fit: &MixtureFit, k: usize) -> ProjectedMixture {
    ProjectedMixture {
        weights: fit.weights.clone(),
        means: fit.means.columns(0, k).into_owned(),
        covariances: fit.covariances.iter().map(|c| c.view((0, 0), (k, k)).into_owned()).collect(),
    }
}

fn grid_over(z: &DMatrix<f64>, size: usize) -> GridSpec {
    let span = |j: usize| {
        let col = z.column(j);
        let (lo, hi) = (col.min(), col.max());
        let pad = 0.1 * (hi - lo).max(1e-8);
        (lo - pad, hi + pad)
    };
    GridSpec {
        x_range: span(0),
        y_range: span(1),
        nx: size,
        ny: size,
    }
}

struct Exports<'a> {
    basis: &'a DrBasis,
    names: &'a [String],
    z: DMatrix<f64>,
    labels: Vec<usize>,
    uncertainty: Vec<f64>,
    /// Mixture on the first two directions, for the density grid.
    plane: Option<ProjectedMixture>,
    truth: Option<&'a [usize]>,
}

fn export<C: Serialize>(args: &ExportArgs, e: &Exports, config: &C, trace: Option<&[PipelineIteration]>) -> Result<()> {
    let Some(dir) = &args.out_dir else {
        return Ok(());
    };
    fs::create_dir_all(dir)?;
    write_json(&dir.join("run_config.json"), config)?;
    write_json(&dir.join("basis.json"), e.basis)?;
    write_eigen_contrib(create(&dir.join("eigen_contrib.csv"))?, e.basis)?;
    write_coefficients(create(&dir.join("coefficients.csv"))?, e.basis, e.names)?;
    write_projection(create(&dir.join("projection.csv"))?, &e.z, &e.labels, &e.uncertainty)?;
    write_uncertainty(create(&dir.join("uncertainty.csv"))?, &e.uncertainty, &e.labels, e.truth)?;
    if let Some(plane) = &e.plane {
        if args.grid_size == 0 {
            return Err(CliError::Usage("--grid-size must be at least 1".into()));
        }
        let cells = density_grid(plane, &grid_over(&e.z, args.grid_size))?;
        gmmdr::io::write_density_grid(create(&dir.join("density_grid.csv"))?, &cells)?;
    }
    if let Some(trace) = trace {
        write_json(&dir.join("trace.json"), &trace)?;
    }
    log::info!("wrote exports to {}", dir.display());
    Ok(())
}

pub fn reduce(cmd: &ReduceCmd) -> Result<()> {
    let ds = load_data(&cmd.data)?;
    let fit = match &cmd.model {
        Some(path) => {
            let archive = load_model(path)?;
            if archive.basis.is_some() {
                return Err(CliError::Usage(
                    "the archive holds a fit on reduced variables; reduce needs a fit on the original variables".into(),
                ));
            }
            if archive.fit.p() != ds.data.ncols() {
                return Err(gmmdr::Error::DimensionMismatch {
                    expected: archive.fit.p(),
                    found: ds.data.ncols(),
                }
                .into());
            }
            if archive.provenance.data_fingerprint != gmmdr::io::data_fingerprint(&ds.data) {
                log::warn!("the data differ from the data the archive was fitted on");
            }
            let mut fit = archive.fit;
            fit.responsibilities = gmmdr::mixture::posterior(&fit, &ds.data)?;
            fit.n = ds.data.nrows();
            fit
        }
        None => search(&ds.data, &cmd.fit)?.into_best(),
    };
    let basis = estimate_basis(&fit, &ds.data, &DrOptions::default())?;
    let stdout = io::stdout();
    let mut out = stdout.lock();
    report::fit_summary(&mut out, &fit)?;
    report::basis_table(&mut out, &basis, &ds.column_names)?;
    let z = &ds.data * &basis.directions;
    let plane = if basis.d >= 2 {
        Some(project_params(&fit, &basis, 2)?)
    } else {
        None
    };
    let exports = Exports {
        basis: &basis,
        names: &ds.column_names,
        z,
        labels: fit.labels(),
        uncertainty: fit.uncertainty(),
        plane,
        truth: ds.labels.as_deref(),
    };
    export(&cmd.export, &exports, &run_config("reduce", cmd), None)
}

pub fn select(cmd: &SelectCmd) -> Result<()> {
    let ds = load_data(&cmd.data)?;
    let mut cfg = selection_config(&cmd.fit)?;
    cfg.mode = cmd.mode.into();
    cfg.max_outer_iter = cmd.max_rounds;
    let result = gmmdr_pipeline(&ds.data, &cfg)?;
    let stdout = io::stdout();
    let mut out = stdout.lock();
    report::pipeline(&mut out, &result)?;
    report::fit_summary(&mut out, &result.fit)?;
    let reduced = result.outcome != PipelineOutcome::NoStructure;
    if reduced {
        report::basis_table(&mut out, &result.basis, &ds.column_names)?;
    }
    report_agreement(&mut out, &ds, &result.fit.labels())?;

    let config = run_config("select", cmd);
    if let Some(path) = &cmd.output {
        let trace = result.iterations.last().and_then(|it| match &it.selection {
            SelectionRecord::Bic(t) => Some(t.clone()),
            SelectionRecord::Entropy(_) => None,
        });
        let mut archive = ModelArchive::new(
            result.fit.clone(),
            reduced.then(|| result.basis.clone()),
            trace,
            Provenance::new(cmd.fit.seed, &config, &ds.data)?,
        )
        .with_config(&config)?;
        archive.iterations = result.iterations.clone();
        let path = save_model(path, &archive)?;
        log::info!("saved {}", path.display());
    }
    if reduced {
        let exports = Exports {
            basis: &result.basis,
            names: &ds.column_names,
            z: result.variables(&ds.data),
            labels: result.fit.labels(),
            uncertainty: result.fit.uncertainty(),
            plane: (result.basis.d >= 2).then(|| leading_marginal(&result.fit, 2)),
            truth: ds.labels.as_deref(),
        };
        export(&cmd.export, &exports, &config, Some(&result.iterations))?;
    } else if cmd.export.out_dir.is_some() {
        log::warn!("no reduced directions to export");
    }
    Ok(())
}

pub fn simulate(cmd: &SimulateCmd) -> Result<()> {
    let spec = ScenarioSpec {
        base: cmd.scenario.model,
        n: cmd.n,
        priors: cmd.scenario.priors(),
        augmentation: cmd.scenario.scenario,
        highdim_k: cmd.scenario.highdim_k,
        seed: cmd.seed,
    };
    spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let ds = gen_model(&spec)?;
    let labels = Some(("class", ds.labels.as_slice()));
    match &cmd.output {
        Some(path) => {
            write_csv(create(path)?, &ds.data, &ds.column_names, labels)?;
            write_json(&sidecar(path), &run_config("simulate", cmd))?;
            log::info!("wrote {} x {} to {}", ds.data.nrows(), ds.data.ncols(), path.display());
        }
        None => write_csv(io::stdout().lock(), &ds.data, &ds.column_names, labels)?,
    }
    Ok(())
}

pub fn evaluate(cmd: &EvaluateCmd) -> Result<()> {
    let ds = load_data(&cmd.data)?;
    if ds.labels.is_none() {
        return Err(CliError::Usage("evaluate needs --label-column".into()));
    }
    let archive = load_model(&cmd.model)?;
    let x = match &archive.basis {
        Some(b) => {
            if b.directions.nrows() != ds.data.ncols() {
                return Err(gmmdr::Error::DimensionMismatch {
                    expected: b.directions.nrows(),
                    found: ds.data.ncols(),
                }
                .into());
            }
            &ds.data * &b.directions
        }
        None => ds.data.clone(),
    };
    let (predicted, uncertainty) = map_classify(&archive.fit, &x)?;
    let stdout = io::stdout();
    let mut out = stdout.lock();
    report::fit_summary(&mut out, &archive.fit)?;
    report_agreement(&mut out, &ds, &predicted)?;
    if let Some(path) = &cmd.output {
        write_uncertainty(create(path)?, &uncertainty, &predicted, ds.labels.as_deref())?;
        write_json(&sidecar(path), &run_config("evaluate", cmd))?;
    }
    Ok(())
}

fn benchmark_config(cmd: &BenchmarkCmd) -> BenchmarkConfig {
    let mut cfg = BenchmarkConfig::new(cmd.scenario.model, cmd.scenario.scenario, cmd.n.clone(), cmd.reps);
    cfg.priors = cmd.scenario.priors();
    cfg.highdim_k = cmd.scenario.highdim_k;
    cfg.seed = cmd.seed;
    if !cmd.methods.is_empty() {
        cfg.methods = cmd.methods.clone();
    }
    cfg.selection.max_g = cmd.max_g;
    cfg.selection.models = models_or_all(&cmd.models);
    cfg.selection.fit.restarts = cmd.restarts;
    cfg.selection.fit.init = cmd.init.into();
    cfg.selection.mode = cmd.mode.into();
    cfg.jobs = cmd.jobs;
    cfg
}

fn write_replicates(w: impl Write, report: &BenchmarkReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["n", "rep", "seed", "method", "ari", "model", "g", "dims", "error"])
        ?;
    let opt = |v: Option<String>| v.unwrap_or_else(|| report::ABSENT.to_string());
    for r in &report.replicates {
        w.write_record([
            r.n.to_string(),
            r.rep.to_string(),
            r.seed.to_string(),
            r.method.to_string(),
            opt(r.ari.map(|a| a.to_string())),
            opt(r.model.map(|m| m.to_string())),
            opt(r.g.map(|g| g.to_string())),
            opt(r.dims.map(|d| d.to_string())),
            r.error.clone().unwrap_or_default(),
        ])
        ?;
    }
    w.flush()?;
    Ok(())
}

fn write_summary(w: impl Write, report: &BenchmarkReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["method", "n", "succeeded", "failed", "mean_ari", "sd_ari", "se_ari"])
        ?;
    let opt = |v: Option<f64>| v.map_or_else(|| report::ABSENT.to_string(), |x| x.to_string());
    for s in &report.summary {
        w.write_record([
            s.method.to_string(),
            s.n.to_string(),
            s.succeeded.to_string(),
            s.failed.to_string(),
            opt(s.mean_ari),
            opt(s.sd_ari),
            opt(s.se_ari),
        ])
        ?;
    }
    w.flush()?;
    Ok(())
}

pub fn benchmark(cmd: &BenchmarkCmd) -> Result<()> {
    let cfg = benchmark_config(cmd);
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let methods: Vec<Method> = cfg.methods.clone();
    log::info!(
        "{} replicate(s) of {} at n = {:?}, methods {:?}",
        cfg.reps,
        cfg.base,
        cfg.sizes,
        methods.iter().map(|m| m.as_str()).collect::<Vec<_>>()
    );
    let result = run_benchmark(&cfg)?;
    let config = run_config("benchmark", cmd);
    match &cmd.output {
        Some(path) => {
            write_summary(create(path)?, &result)?;
            write_json(&sidecar(path), &config)?;
            report::benchmark_table(&mut io::stderr().lock(), &result)?;
        }
        None => report::benchmark_table(&mut io::stdout().lock(), &result)?,
    }
    if let Some(path) = &cmd.replicates {
        write_replicates(create(path)?, &result)?;
        write_json(&sidecar(path), &config)?;
    }
    Ok(())
}
