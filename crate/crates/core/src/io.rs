//! CSV datasets, model archives and plot-data files.

use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::directions::{DrBasis, GridCell};
use crate::error::{Error, Result};
use crate::featsel::{PipelineIteration, SelectionTrace};
use crate::mixture::MixtureFit;
use crate::simgen::LabeledDataset;

/// Newest archive layout this build reads and the one it writes.
pub const SCHEMA_VERSION: u32 = 1;

/// File suffix of model archives.
pub const ARCHIVE_EXTENSION: &str = ".gmmdr.json";

/// A numeric data matrix with optional class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub data: DMatrix<f64>,
    pub column_names: Vec<String>,
    /// 1-based class codes indexing `label_levels`.
    pub labels: Option<Vec<usize>>,
    /// Distinct raw label values, sorted (numerically when all are numbers).
    pub label_levels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvOptions {
    /// Header name of the label column; `None` means every column is numeric.
    pub label_column: Option<String>,
    pub delimiter: u8,
}

impl Default for CsvOptions {
    fn default() -> Self {
        CsvOptions {
            label_column: None,
            delimiter: b',',
        }
    }
}

pub fn read_csv(path: impl AsRef<Path>, options: &CsvOptions) -> Result<Dataset> {
    read_csv_from(File::open(path)?, options)
}

/// Parse a headed CSV. Rows and columns in errors are 1-based, counting the
/// header as row 1.
pub fn read_csv_from<R: Read>(reader: R, options: &CsvOptions) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(options.delimiter)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let label_idx = match &options.label_column {
        Some(name) => Some(headers.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
            row: 1,
            column: 0,
            message: format!("label column '{name}' not found"),
        })?),
        None => None,
    };
    let column_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(j, _)| Some(*j) != label_idx)
        .map(|(_, h)| h.clone())
        .collect();
    let p = column_names.len();
    if p == 0 {
        return Err(Error::Parse {
            row: 1,
            column: 0,
            message: "no numeric columns".into(),
        });
    }
    let mut values = Vec::new();
    let mut raw_labels = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        let row = r + 2;
        if record.len() != headers.len() {
            return Err(Error::Parse {
                row,
                column: record.len().min(headers.len()) + 1,
                message: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        for (j, field) in record.iter().enumerate() {
            if Some(j) == label_idx {
                raw_labels.push(field.to_string());
                continue;
            }
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                row,
                column: j + 1,
                message: format!("'{field}' is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    column: j + 1,
                    message: format!("'{field}' is not finite"),
                });
            }
            values.push(v);
        }
    }
    let n = values.len() / p;
    if n == 0 {
        return Err(Error::Parse {
            row: 2,
            column: 0,
            message: "no data rows".into(),
        });
    }
    let data = DMatrix::from_row_slice(n, p, &values);
    let (labels, label_levels) = if label_idx.is_some() {
        let levels = sorted_levels(&raw_labels);
        let codes = raw_labels
            .iter()
            .map(|l| levels.iter().position(|v| v == l).unwrap() + 1)
            .collect();
        (Some(codes), levels)
    } else {
        (None, Vec::new())
    };
    Ok(Dataset {
        data,
        column_names,
        labels,
        label_levels,
    })
}

fn sorted_levels(raw: &[String]) -> Vec<String> {
    let mut levels = raw.to_vec();
    levels.sort();
    levels.dedup();
    if levels.iter().all(|l| l.parse::<f64>().is_ok()) {
        levels.sort_by(|a, b| a.parse::<f64>().unwrap().total_cmp(&b.parse::<f64>().unwrap()));
    }
    levels
}

/// Write a data matrix with a header and an optional trailing label column.
pub fn write_csv<W: Write>(
    writer: W,
    data: &DMatrix<f64>,
    column_names: &[String],
    labels: Option<(&str, &[usize])>,
) -> Result<()> {
    if column_names.len() != data.ncols() {
        return Err(Error::DimensionMismatch {
            expected: data.ncols(),
            found: column_names.len(),
        });
    }
    if let Some((_, l)) = labels {
        if l.len() != data.nrows() {
            return Err(Error::LengthMismatch(data.nrows(), l.len()));
        }
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header = column_names.to_vec();
    if let Some((name, _)) = labels {
        header.push(name.to_string());
    }
    w.write_record(&header)?;
    for i in 0..data.nrows() {
        let mut rec: Vec<String> = data.row(i).iter().map(|v| v.to_string()).collect();
        if let Some((_, l)) = labels {
            rec.push(l[i].to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_dataset(path: impl AsRef<Path>, dataset: &LabeledDataset) -> Result<()> {
    write_csv(
        File::create(path)?,
        &dataset.data,
        &dataset.column_names,
        Some(("class", &dataset.labels)),
    )
}

/// Where an archive came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    /// SHA-256 of the JSON-serialized configuration.
    pub config_hash: String,
    /// SHA-256 of the data matrix (shape and little-endian values).
    pub data_fingerprint: String,
    pub tool_version: String,
}

impl Provenance {
    pub fn new<C: Serialize>(seed: u64, config: &C, data: &DMatrix<f64>) -> Result<Self> {
        Ok(Provenance {
            seed,
            config_hash: config_hash(config)?,
            data_fingerprint: data_fingerprint(data),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        })
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn config_hash<C: Serialize>(config: &C) -> Result<String> {
    Ok(hex(&Sha256::digest(serde_json::to_vec(config)?)))
}

pub fn data_fingerprint(data: &DMatrix<f64>) -> String {
    let mut h = Sha256::new();
    h.update((data.nrows() as u64).to_le_bytes());
    h.update((data.ncols() as u64).to_le_bytes());
    for v in data.iter() {
        h.update(v.to_le_bytes());
    }
    hex(&h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArchive {
    pub schema_version: u32,
    pub fit: MixtureFit,
    pub basis: Option<DrBasis>,
    pub trace: Option<SelectionTrace>,
    /// Rounds of the reduction pipeline, when one produced the fit.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub iterations: Vec<PipelineIteration>,
    /// The resolved settings of the run that wrote the archive.
    #[serde(default)]
    pub config: Option<serde_json::Value>,
    pub provenance: Provenance,
}

impl ModelArchive {
    pub fn new(fit: MixtureFit, basis: Option<DrBasis>, trace: Option<SelectionTrace>, provenance: Provenance) -> Self {
        ModelArchive {
            schema_version: SCHEMA_VERSION,
            fit,
            basis,
            trace,
            iterations: Vec::new(),
            config: None,
            provenance,
        }
    }

    /// Record the run settings; `provenance.config_hash` should hash the same value.
    pub fn with_config<C: Serialize>(mut self, config: &C) -> Result<Self> {
        self.config = Some(serde_json::to_value(config)?);
        Ok(self)
    }
}

/// `path` with the archive extension appended if it is missing.
pub fn archive_path(path: impl AsRef<Path>) -> PathBuf {
    let path = path.as_ref();
    if path.to_string_lossy().ends_with(ARCHIVE_EXTENSION) {
        path.to_path_buf()
    } else {
        let mut s = path.as_os_str().to_owned();
        s.push(ARCHIVE_EXTENSION);
        PathBuf::from(s)
    }
}

/// Write an archive atomically: the JSON goes to a temporary file in the
/// target directory, which is then renamed over the destination.
pub fn save_model(path: impl AsRef<Path>, archive: &ModelArchive) -> Result<PathBuf> {
    let path = archive_path(path);
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(&dir)?;
    serde_json::to_writer_pretty(&mut tmp, archive)?;
    tmp.write_all(b"\n")?;
    tmp.as_file().sync_all()?;
    tmp.persist(&path).map_err(|e| Error::Io(e.error))?;
    Ok(path)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelArchive> {
    let text = std::fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let found = value
        .get("schema_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::Parse {
            row: 0,
            column: 0,
            message: "archive has no schema_version".into(),
        })?;
    if found > SCHEMA_VERSION as u64 {
        return Err(Error::SchemaVersion {
            found: found.min(u32::MAX as u64) as u32,
            supported: SCHEMA_VERSION,
        });
    }
    Ok(serde_json::from_value(value)?)
}

/// Eigenvalue, mean part and covariance part of every direction.
pub fn write_eigen_contrib<W: Write>(writer: W, basis: &DrBasis) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["direction", "eigenvalue", "mean_contrib", "var_contrib"])?;
    for j in 0..basis.d {
        w.write_record(&[
            (j + 1).to_string(),
            basis.eigenvalues[j].to_string(),
            basis.mean_contrib[j].to_string(),
            basis.var_contrib[j].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Unit-norm direction coefficients, one row per original variable.
pub fn write_coefficients<W: Write>(writer: W, basis: &DrBasis, variable_names: &[String]) -> Result<()> {
    if variable_names.len() != basis.directions.nrows() {
        return Err(Error::DimensionMismatch {
            expected: basis.directions.nrows(),
            found: variable_names.len(),
        });
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["variable".to_string()];
    header.extend((1..=basis.d).map(|j| format!("Dir{j}")));
    w.write_record(&header)?;
    for (i, name) in variable_names.iter().enumerate() {
        let mut rec = vec![name.clone()];
        rec.extend(basis.directions.row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Projected coordinates with the cluster label and its uncertainty.
pub fn write_projection<W: Write>(writer: W, z: &DMatrix<f64>, labels: &[usize], uncertainty: &[f64]) -> Result<()> {
    if labels.len() != z.nrows() || uncertainty.len() != z.nrows() {
        return Err(Error::LengthMismatch(z.nrows(), labels.len().min(uncertainty.len())));
    }
    let names: Vec<String> = (1..=z.ncols()).map(|j| format!("Dir{j}")).collect();
    let mut w = csv::Writer::from_writer(writer);
    let mut header = names;
    header.push("cluster".into());
    header.push("uncertainty".into());
    w.write_record(&header)?;
    for i in 0..z.nrows() {
        let mut rec: Vec<String> = z.row(i).iter().map(|v| v.to_string()).collect();
        rec.push(labels[i].to_string());
        rec.push(uncertainty[i].to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_density_grid<W: Write>(writer: W, cells: &[GridCell]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["x", "y", "density", "map_label"])?;
    for c in cells {
        w.write_record(&[c.x.to_string(), c.y.to_string(), c.density.to_string(), c.map_label.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-observation uncertainty, predicted cluster and (if known) true class.
pub fn write_uncertainty<W: Write>(writer: W, uncertainty: &[f64], predicted: &[usize], truth: Option<&[usize]>) -> Result<()> {
    if predicted.len() != uncertainty.len() {
        return Err(Error::LengthMismatch(uncertainty.len(), predicted.len()));
    }
    if let Some(t) = truth {
        if t.len() != uncertainty.len() {
            return Err(Error::LengthMismatch(uncertainty.len(), t.len()));
        }
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["index", "uncertainty", "cluster"];
    if truth.is_some() {
        header.push("class");
    }
    w.write_record(&header)?;
    for i in 0..uncertainty.len() {
        let mut rec = vec![(i + 1).to_string(), uncertainty[i].to_string(), predicted[i].to_string()];
        if let Some(t) = truth {
            rec.push(t[i].to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixture::{em_fit, FitConfig, ModelName};

    #[test]
    fn parses_labels_and_values() {
        let text = "a,b,class\n1,2,x\n3,4.5,y\n-1,0,x\n";
        let opts = CsvOptions {
            label_column: Some("class".into()),
            ..CsvOptions::default()
        };
        let d = read_csv_from(text.as_bytes(), &opts).unwrap();
        assert_eq!(d.data, DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.5, -1.0, 0.0]));
        assert_eq!(d.labels.unwrap(), vec![1, 2, 1]);
        assert_eq!(d.label_levels, vec!["x", "y"]);
        assert_eq!(d.column_names, vec!["a", "b"]);
    }

    #[test]
    fn numeric_levels_sort_numerically() {
        let text = "a,class\n1,10\n2,9\n3,10\n";
        let opts = CsvOptions {
            label_column: Some("class".into()),
            ..CsvOptions::default()
        };
        let d = read_csv_from(text.as_bytes(), &opts).unwrap();
        assert_eq!(d.label_levels, vec!["9", "10"]);
        assert_eq!(d.labels.unwrap(), vec![2, 1, 2]);
    }

    #[test]
    fn reports_bad_cell_position() {
        let text = "a,b\n1,2\n3,oops\n";
        match read_csv_from(text.as_bytes(), &CsvOptions::default()) {
            Err(Error::Parse { row, column, .. }) => assert_eq!((row, column), (3, 2)),
            other => panic!("unexpected {other:?}"),
        }
        let missing = CsvOptions {
            label_column: Some("nope".into()),
            ..CsvOptions::default()
        };
        assert!(read_csv_from(text.as_bytes(), &missing).unwrap_err().is_io());
    }

    #[test]
    fn csv_round_trip() {
        let x = DMatrix::from_row_slice(2, 2, &[0.1, 1e-300, -3.25, 7.0]);
        let mut buf = Vec::new();
        write_csv(&mut buf, &x, &["u".into(), "v".into()], Some(("class", &[2, 1]))).unwrap();
        let back = read_csv_from(
            buf.as_slice(),
            &CsvOptions {
                label_column: Some("class".into()),
                ..CsvOptions::default()
            },
        )
        .unwrap();
        assert_eq!(back.data, x);
        assert_eq!(back.labels.unwrap(), vec![2, 1]);
    }

    fn small_fit() -> MixtureFit {
        let x = DMatrix::from_fn(40, 2, |i, j| ((i * 37 + j * 11) % 17) as f64 / 3.0 + if i < 20 { 0.0 } else { 9.0 });
        em_fit(&x, 2, ModelName::VVV, &FitConfig::default()).unwrap()
    }

    #[test]
    fn archive_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let fit = small_fit();
        let prov = Provenance::new(7, &FitConfig::default(), &DMatrix::<f64>::zeros(1, 1)).unwrap();
        let archive = ModelArchive::new(fit, None, None, prov);
        let path = save_model(dir.path().join("m"), &archive).unwrap();
        assert!(path.to_string_lossy().ends_with(".gmmdr.json"));
        let back = load_model(&path).unwrap();
        assert_eq!(back, archive);
        for (a, b) in back.fit.means.iter().zip(archive.fit.means.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn newer_schema_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let prov = Provenance::new(0, &0u8, &DMatrix::<f64>::zeros(1, 1)).unwrap();
        let mut archive = ModelArchive::new(small_fit(), None, None, prov);
        archive.schema_version = SCHEMA_VERSION + 1;
        let path = save_model(dir.path().join("future.gmmdr.json"), &archive).unwrap();
        assert!(matches!(load_model(&path), Err(Error::SchemaVersion { .. })));
    }

    #[test]
    fn fingerprint_depends_on_values_and_shape() {
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        assert_ne!(data_fingerprint(&a), data_fingerprint(&b));
        assert_eq!(data_fingerprint(&a), data_fingerprint(&a.clone()));
        assert_eq!(config_hash(&FitConfig::default()).unwrap().len(), 64);
    }
}
