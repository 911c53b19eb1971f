use std::collections::BTreeSet;
use std::io::Write;

use gmmdr::benchmark::BenchmarkReport;
use gmmdr::directions::DrBasis;
use gmmdr::eval::ConfusionMatrix;
use gmmdr::featsel::{PipelineResult, SelectionRecord};
use gmmdr::mixture::{MixtureFit, ModelSearch};

use crate::CliError;

/// Placeholder for a value that could not be computed.
pub const ABSENT: &str = "NA";

type Result = std::result::Result<(), CliError>;

/// BIC of every fitted (model, G), one row per G.
pub fn bic_table(out: &mut impl Write, search: &ModelSearch) -> Result {
    let models: BTreeSet<_> = search
        .fits
        .iter()
        .map(|f| f.model)
        .chain(search.failures.iter().map(|f| f.model))
        .collect();
    let gs: BTreeSet<usize> = search
        .fits
        .iter()
        .map(|f| f.g)
        .chain(search.failures.iter().map(|f| f.g))
        .collect();
    write!(out, "{:>4}", "G")?;
    for m in &models {
        write!(out, " {:>12}", m.as_str())?;
    }
    writeln!(out)?;
    for &g in &gs {
        write!(out, "{g:>4}")?;
        for &m in &models {
            match search.fits.iter().find(|f| f.model == m && f.g == g) {
                Some(f) => write!(out, " {:>12.3}", f.bic)?,
                None => write!(out, " {:>12}", ABSENT)?,
            }
        }
        writeln!(out)?;
    }
    writeln!(out)?;
    Ok(())
}

pub fn fit_summary(out: &mut impl Write, fit: &MixtureFit) -> Result {
    writeln!(
        out,
        "model {} with G = {} on {} variable(s): log-likelihood {:.3}, {} parameters, BIC {:.3}",
        fit.model,
        fit.g,
        fit.p(),
        fit.loglik,
        fit.nparams,
        fit.bic
    )?;
    let weights: Vec<String> = fit.weights.iter().map(|w| format!("{w:.3}")).collect();
    writeln!(out, "mixing proportions: {}", weights.join(" "))?;
    let mut sizes = vec![0usize; fit.g];
    for l in fit.labels() {
        sizes[l - 1] += 1;
    }
    let sizes: Vec<String> = sizes.iter().map(|s| s.to_string()).collect();
    writeln!(out, "cluster sizes: {}", sizes.join(" "))?;
    if !fit.converged {
        writeln!(out, "warning: EM stopped after {} iterations without converging", fit.iterations)?;
    }
    Ok(())
}

pub fn basis_table(out: &mut impl Write, basis: &DrBasis, names: &[String]) -> Result {
    writeln!(out)?;
    writeln!(out, "{:>6} {:>12} {:>12} {:>12}", "Dir", "eigenvalue", "means", "variances")?;
    for i in 0..basis.d {
        writeln!(
            out,
            "{:>6} {:>12.6} {:>12.6} {:>12.6}",
            format!("Dir{}", i + 1),
            basis.eigenvalues[i],
            basis.mean_contrib[i],
            basis.var_contrib[i]
        )?;
    }
    writeln!(out)?;
    let width = names.iter().map(|n| n.len()).max().unwrap_or(0).max(8);
    write!(out, "{:width$}", "")?;
    for i in 0..basis.d {
        write!(out, " {:>10}", format!("Dir{}", i + 1))?;
    }
    writeln!(out)?;
    for (r, name) in names.iter().enumerate() {
        write!(out, "{name:width$}")?;
        for c in 0..basis.d {
            write!(out, " {:>10.4}", basis.directions[(r, c)])?;
        }
        writeln!(out)?;
    }
    writeln!(out)?;
    Ok(())
}

pub fn pipeline(out: &mut impl Write, result: &PipelineResult) -> Result {
    let init = &result.initial_fit;
    writeln!(out, "initial fit: {} with G = {}, BIC {:.3}", init.model, init.g, init.bic)?;
    for (i, it) in result.iterations.iter().enumerate() {
        let picked = match &it.selection {
            SelectionRecord::Bic(t) => format!("BIC selection {:?}", t.selected.iter().map(|c| c + 1).collect::<Vec<_>>()),
            SelectionRecord::Entropy(t) => format!("entropy selection of the first {}", t.selected.len()),
        };
        writeln!(
            out,
            "round {}: {} direction(s), {}, kept {}, refit {} with G = {}, BIC {:.3}",
            i + 1,
            it.d,
            picked,
            it.kept.len(),
            it.model,
            it.g,
            it.bic
        )?;
    }
    let outcome = serde_json::to_value(result.outcome)?;
    writeln!(out, "outcome: {}", outcome.as_str().unwrap_or_default())?;
    Ok(())
}

pub fn confusion(out: &mut impl Write, cm: &ConfusionMatrix, levels: &[String]) -> Result {
    let name = |l: usize| levels.get(l - 1).cloned().unwrap_or_else(|| l.to_string());
    let width = cm.row_labels.iter().map(|&l| name(l).len()).max().unwrap_or(0).max(5);
    writeln!(out)?;
    write!(out, "{:width$}", "class")?;
    for c in &cm.col_labels {
        write!(out, " {:>6}", c)?;
    }
    writeln!(out)?;
    for (r, &l) in cm.row_labels.iter().enumerate() {
        write!(out, "{:width$}", name(l))?;
        for c in 0..cm.col_labels.len() {
            write!(out, " {:>6}", cm.counts[(r, c)])?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Mean ARI with its standard error in parentheses, one row per method and
/// one column per sample size.
pub fn benchmark_table(out: &mut impl Write, report: &BenchmarkReport) -> Result {
    let cfg = &report.config;
    write!(out, "{:<10}", "method")?;
    for n in &cfg.sizes {
        write!(out, " {:>20}", format!("n = {n}"))?;
    }
    writeln!(out)?;
    for &m in &cfg.methods {
        write!(out, "{:<10}", m.as_str())?;
        for &n in &cfg.sizes {
            let s = report.summary.iter().find(|s| s.method == m && s.n == n);
            let cell = match s {
                Some(s) => format!(
                    "{} ({})",
                    s.mean_ari.map_or(ABSENT.into(), |v| format!("{v:.4}")),
                    s.se_ari.map_or(ABSENT.into(), |v| format!("{v:.4}"))
                ),
                None => ABSENT.into(),
            };
            write!(out, " {cell:>20}")?;
        }
        writeln!(out)?;
    }
    let failed: usize = report.summary.iter().map(|s| s.failed).sum();
    if failed > 0 {
        writeln!(out, "{failed} method run(s) failed; see the per-replicate output")?;
    }
    Ok(())
}
