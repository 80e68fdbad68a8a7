//! Dataset manifests and CSV matrices.
//!
//! A manifest is a JSON object:
//!
//! ```json
//! {
//!   "views": [{"name": "cohort1", "dim": 10}, {"name": "features", "dim": 5}],
//!   "matrices": [{"rows": "cohort1", "cols": "features", "path": "x1.csv"}],
//!   "normalization": {"centering": [{"rows": false, "cols": false}], "scaling": "none", "max_singular_value": 9.8696},
//!   "settings": {"k_max": 2, "seed": 7}
//! }
//! ```
//!
//! Matrix paths are relative to the manifest. `normalization` and `settings`
//! are optional. Each CSV holds `dim(rows)` lines of `dim(cols)` cells; empty
//! cells and `NA`/`NaN` are missing. A header line is detected when any cell of
//! the first line is neither a number nor a missing marker, or forced with
//! `"header": true|false`.

use std::path::{Path, PathBuf};

use mmpca_core::{Dataset, MaskedMatrix, NormalizationPolicy, View, ViewGraph};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult, PathContext};
use crate::settings::FileSettings;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestView {
    pub name: String,
    pub dim: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestMatrix {
    pub rows: String,
    pub cols: String,
    pub path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub header: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub views: Vec<ManifestView>,
    pub matrices: Vec<ManifestMatrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalization: Option<NormalizationPolicy>,
    #[serde(default)]
    pub settings: FileSettings,
}

/// A manifest with the directory its relative paths resolve against.
#[derive(Clone, Debug)]
pub struct LoadedManifest {
    pub manifest: Manifest,
    pub path: PathBuf,
}

impl LoadedManifest {
    pub fn base_dir(&self) -> &Path {
        self.path.parent().unwrap_or(Path::new("."))
    }

    pub fn matrix_path(&self, m: &ManifestMatrix) -> PathBuf {
        if m.path.is_absolute() {
            m.path.clone()
        } else {
            self.base_dir().join(&m.path)
        }
    }
}

pub fn load_manifest(path: &Path) -> CliResult<LoadedManifest> {
    let text = std::fs::read_to_string(path).with_path(path)?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| CliError::input(format!("{}:{}:{}: {e}", path.display(), e.line(), e.column())))?;
    Ok(LoadedManifest {
        manifest,
        path: path.to_path_buf(),
    })
}

impl Manifest {
    pub fn graph(&self) -> CliResult<ViewGraph> {
        let views = self
            .views
            .iter()
            .map(|v| View {
                name: v.name.clone(),
                dim: v.dim,
            })
            .collect();
        let index = |name: &str| {
            self.views
                .iter()
                .position(|v| v.name == name)
                .ok_or_else(|| CliError::input(format!("manifest names unknown view '{name}'")))
        };
        let links = self
            .matrices
            .iter()
            .map(|m| Ok((index(&m.rows)?, index(&m.cols)?)))
            .collect::<CliResult<Vec<_>>>()?;
        ViewGraph::new(views, links).map_err(|e| CliError::input(format!("manifest: {e}")))
    }
}

/// Reads every matrix of the manifest into a dataset.
pub fn load_dataset(loaded: &LoadedManifest) -> CliResult<Dataset<f64>> {
    let graph = loaded.manifest.graph()?;
    let matrices = loaded
        .manifest
        .matrices
        .iter()
        .zip(graph.links())
        .map(|(m, &(i, j))| {
            let path = loaded.matrix_path(m);
            read_matrix(&path, graph.dim(i), graph.dim(j), m.header)
        })
        .collect::<CliResult<Vec<_>>>()?;
    Dataset::new(graph, matrices).map_err(|e| CliError::input(format!("{}: {e}", loaded.path.display())))
}

fn is_missing(cell: &str) -> bool {
    matches!(cell, "" | "NA" | "na" | "NaN" | "nan")
}

fn looks_like_header(record: &csv::StringRecord) -> bool {
    record
        .iter()
        .map(str::trim)
        .any(|c| !is_missing(c) && c.parse::<f64>().is_err())
}

/// Reads a `rows × cols` CSV; missing cells become unobserved entries.
pub fn read_matrix(path: &Path, rows: usize, cols: usize, header: Option<bool>) -> CliResult<MaskedMatrix<f64>> {
    let file = std::fs::File::open(path).with_path(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(file);
    let mut values = DMatrix::zeros(rows, cols);
    let mut observed = DMatrix::from_element(rows, cols, false);
    let mut r = 0;
    let mut first = true;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            CliError::input(format!("{}:{line}: {e}", path.display()))
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let skip_header = first && header.unwrap_or_else(|| looks_like_header(&record));
        first = false;
        if skip_header {
            continue;
        }
        if record.len() == 1 && record[0].trim().is_empty() && cols != 1 {
            continue;
        }
        if r == rows {
            return Err(CliError::input(format!(
                "{}:{line}: more than the expected {rows} data rows",
                path.display()
            )));
        }
        if record.len() != cols {
            return Err(CliError::input(format!(
                "{}:{line}: expected {cols} fields, found {}",
                path.display(),
                record.len()
            )));
        }
        for (c, cell) in record.iter().enumerate() {
            let cell = cell.trim();
            if is_missing(cell) {
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| {
                CliError::input(format!(
                    "{}:{line}: field {} is not a number: '{cell}'",
                    path.display(),
                    c + 1
                ))
            })?;
            if !v.is_finite() {
                return Err(CliError::input(format!(
                    "{}:{line}: field {} is not finite",
                    path.display(),
                    c + 1
                )));
            }
            values[(r, c)] = v;
            observed[(r, c)] = true;
        }
        r += 1;
    }
    if r != rows {
        return Err(CliError::input(format!(
            "{}: expected {rows} data rows, found {r}",
            path.display()
        )));
    }
    MaskedMatrix::new(values, observed).map_err(|e| CliError::at(path, e))
}

/// Writes a dense matrix as CSV with an optional header line; `None` cells
/// are left empty.
pub fn write_matrix(path: &Path, header: Option<&[String]>, m: &DMatrix<f64>) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::at(path, e))?;
    if let Some(h) = header {
        w.write_record(h).map_err(|e| CliError::at(path, e))?;
    }
    for r in 0..m.nrows() {
        w.write_record(m.row(r).iter().map(|v| v.to_string()))
            .map_err(|e| CliError::at(path, e))?;
    }
    w.flush().with_path(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn temp_csv(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn empty_cells_are_missing() {
        let f = temp_csv("1,,3\n4,5,NA\n");
        let m = read_matrix(f.path(), 2, 3, None).unwrap();
        assert_eq!(m.observed_count(), 4);
        assert_eq!(m.get(0, 1), None);
        assert_eq!(m.get(1, 1), Some(5.0));
    }

    #[test]
    fn header_is_detected() {
        let f = temp_csv("a,b\n1,2\n3,4\n");
        let m = read_matrix(f.path(), 2, 2, None).unwrap();
        assert_eq!(m.get(1, 0), Some(3.0));
    }

    #[test]
    fn bad_cell_names_file_and_line() {
        let f = temp_csv("1,2\n3,x\n");
        let e = read_matrix(f.path(), 2, 2, Some(false)).unwrap_err().to_string();
        assert!(e.contains(&format!("{}:2:", f.path().display())), "{e}");
        assert!(e.contains("field 2"), "{e}");
    }

    #[test]
    fn wrong_shape_is_an_input_error() {
        let f = temp_csv("1,2\n3,4,5\n");
        let e = read_matrix(f.path(), 2, 2, None).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_string().contains(":2:"));
        let f = temp_csv("1,2\n");
        assert!(read_matrix(f.path(), 2, 2, None).unwrap_err().to_string().contains("found 1"));
    }

    #[test]
    fn manifest_errors_carry_position() {
        let f = temp_csv("{\n  \"views\": [\n    {\"name\": \"a\"}\n  ]\n}");
        let e = load_manifest(f.path()).unwrap_err().to_string();
        assert!(e.contains(&format!("{}:", f.path().display())), "{e}");
    }
}
