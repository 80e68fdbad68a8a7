//! Solution bundles: everything a fit produces, in a directory that later
//! commands can reload without the raw data.
//!
//! | file | content |
//! |------|---------|
//! | `params.json` | views, links, k, Givens angles, diagonals, matrix norms, λ, threshold |
//! | `augmented_d.csv` | 𝒟, one row per component, one column per view |
//! | `loadings_<view>.csv` | V·D of each view, items × components |
//! | `r2.csv` | explained variation per matrix and component |
//! | `directed_r2.csv` | directed R², target rows × source columns |
//! | `analysis.json` | effective rank, importance order, directed-R² edges |
//! | `biclusters.json` | sign clusters of every view |
//! | `optimizer_report.json` | termination, iterations, objective trace |
//! | `normalization.json` | policy and the transformation that was applied |

use std::fs;
use std::path::Path;

use mmpca_core::{
    bicluster, directed_r2_table, effective_rank, r2_matrix, Bicluster, GivensAngles, ModelParams, NormalizationPolicy,
    NormalizationRecord, OptimizerReport, Solution, View, ViewGraph,
};
use nalgebra::{DMatrix, DVector};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{CliError, CliResult, PathContext};
use crate::manifest::write_matrix;

pub const FORMAT: &str = "mmpca-bundle/1";
pub const BICLUSTER_DEPTH: usize = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleView {
    pub name: String,
    pub dim: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleLink {
    pub rows: String,
    pub cols: String,
}

/// Contents of `params.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub format: String,
    pub views: Vec<BundleView>,
    pub links: Vec<BundleLink>,
    pub k: usize,
    /// Givens angles of each view in rotation order.
    pub angles: Vec<Vec<f64>>,
    pub d: Vec<Vec<f64>>,
    /// Squared Frobenius norms of the normalized matrices, for R².
    pub matrix_norms_sq: Vec<f64>,
    pub zero_threshold: f64,
    pub tau: f64,
    pub lambda: [f64; 4],
    pub lambda0: Option<f64>,
    pub penalty_flags: Option<String>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationFile {
    pub policy: NormalizationPolicy,
    pub record: NormalizationRecord<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub source: String,
    pub target: String,
    pub directed_r2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub effective_rank: usize,
    /// Active components, most important first.
    pub component_order: Vec<usize>,
    pub component_importance: Vec<f64>,
    /// Components active in each matrix, in link order.
    pub matrix_components: Vec<Vec<usize>>,
    pub edge_threshold: f64,
    /// Directed-R² pairs at or above the threshold, source explaining target.
    pub edges: Vec<Edge>,
}

/// Settings recorded next to a solution.
#[derive(Clone, Debug)]
pub struct RunInfo {
    pub lambda: [f64; 4],
    pub lambda0: Option<f64>,
    pub penalty_flags: Option<[bool; 4]>,
    pub tau: f64,
    pub seed: u64,
    pub edge_threshold: f64,
    pub policy: NormalizationPolicy,
}

pub fn flags_string(flags: [bool; 4]) -> String {
    flags.iter().map(|&b| if b { '1' } else { '0' }).collect()
}

/// `rows:cols` label of each matrix.
pub fn matrix_labels(graph: &ViewGraph) -> Vec<String> {
    graph
        .links()
        .iter()
        .map(|&(i, j)| format!("{}:{}", graph.views()[i].name, graph.views()[j].name))
        .collect()
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).with_path(path)
}

fn read_json<D: DeserializeOwned>(path: &Path) -> CliResult<D> {
    let text = fs::read_to_string(path).with_path(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::input(format!("{}:{}:{}: {e}", path.display(), e.line(), e.column())))
}

fn component_header(first: &str, k: usize) -> Vec<String> {
    std::iter::once(first.to_string())
        .chain((1..=k).map(|c| format!("component_{c}")))
        .collect()
}

fn write_table(path: &Path, header: &[String], rows: &[(String, Vec<f64>)]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::at(path, e))?;
    w.write_record(header).map_err(|e| CliError::at(path, e))?;
    for (label, values) in rows {
        let record = std::iter::once(label.clone()).chain(values.iter().map(|v| v.to_string()));
        w.write_record(record).map_err(|e| CliError::at(path, e))?;
    }
    w.flush().with_path(path)
}

/// Builds the analysis summary of a solution.
pub fn analysis(solution: &Solution<f64>, edge_threshold: f64) -> Analysis {
    let graph = solution.graph();
    let labels = matrix_labels(graph);
    let table = directed_r2_table(solution);
    let mut edges = Vec::new();
    for t in 0..table.nrows() {
        for s in 0..table.ncols() {
            if s != t && table[(t, s)] >= edge_threshold {
                edges.push(Edge {
                    source: labels[s].clone(),
                    target: labels[t].clone(),
                    directed_r2: table[(t, s)],
                });
            }
        }
    }
    Analysis {
        effective_rank: effective_rank(solution),
        component_order: solution.component_order(),
        component_importance: solution.component_importance(),
        matrix_components: (0..graph.n_matrices()).map(|m| solution.matrix_components(m)).collect(),
        edge_threshold,
        edges,
    }
}

/// Sign clusters of every view on the most important components.
pub fn biclusters(solution: &Solution<f64>) -> CliResult<Bicluster> {
    let depth = effective_rank(solution).min(BICLUSTER_DEPTH);
    let views: Vec<usize> = (0..solution.graph().n_views()).collect();
    Ok(bicluster(solution, &views, depth)?)
}

/// Writes the full bundle for `solution` into `dir`, creating it if needed.
pub fn write_bundle(dir: &Path, solution: &Solution<f64>, report: &OptimizerReport, info: &RunInfo) -> CliResult<()> {
    fs::create_dir_all(dir).with_path(dir)?;
    let graph = solution.graph();
    let params = solution.params();
    let k = solution.k();
    let names: Vec<String> = graph.views().iter().map(|v| v.name.clone()).collect();
    let record = solution
        .normalization()
        .ok_or_else(|| CliError::Internal("solution has no normalization record".into()))?;

    let file = Params {
        format: FORMAT.into(),
        views: graph
            .views()
            .iter()
            .map(|v| BundleView {
                name: v.name.clone(),
                dim: v.dim,
            })
            .collect(),
        links: graph
            .links()
            .iter()
            .map(|&(i, j)| BundleLink {
                rows: names[i].clone(),
                cols: names[j].clone(),
            })
            .collect(),
        k,
        angles: (0..graph.n_views()).map(|v| params.xi(v).as_slice().to_vec()).collect(),
        d: (0..graph.n_views()).map(|v| params.d(v).iter().copied().collect()).collect(),
        matrix_norms_sq: solution.matrix_norms_sq().to_vec(),
        zero_threshold: solution.zero_threshold(),
        tau: info.tau,
        lambda: info.lambda,
        lambda0: info.lambda0,
        penalty_flags: info.penalty_flags.map(flags_string),
        seed: info.seed,
    };
    write_json(&dir.join("params.json"), &file)?;

    let d = solution.augmented_d();
    let d_header: Vec<String> = std::iter::once("component".to_string()).chain(names.iter().cloned()).collect();
    let d_rows: Vec<(String, Vec<f64>)> = (0..k)
        .map(|c| (format!("component_{}", c + 1), d.row(c).iter().copied().collect()))
        .collect();
    write_table(&dir.join("augmented_d.csv"), &d_header, &d_rows)?;

    for (v, name) in names.iter().enumerate() {
        let vd = &solution.scaled_loadings()[v];
        let rows: Vec<(String, Vec<f64>)> = (0..vd.nrows())
            .map(|r| ((r + 1).to_string(), vd.row(r).iter().copied().collect()))
            .collect();
        write_table(&dir.join(format!("loadings_{name}.csv")), &component_header("item", k), &rows)?;
    }

    let labels = matrix_labels(graph);
    let mut r2_header = vec!["matrix".to_string(), "total".to_string()];
    r2_header.extend((1..=k).map(|c| format!("component_{c}")));
    let r2_rows = labels
        .iter()
        .enumerate()
        .map(|(m, label)| {
            let values = match r2_matrix(solution, m) {
                Ok(r2) => std::iter::once(r2.total).chain(r2.per_component).collect(),
                Err(_) => vec![0.0; k + 1],
            };
            (label.clone(), values)
        })
        .collect::<Vec<_>>();
    write_table(&dir.join("r2.csv"), &r2_header, &r2_rows)?;

    let table = directed_r2_table(solution);
    let dr_header: Vec<String> = std::iter::once("target".to_string()).chain(labels.iter().cloned()).collect();
    let dr_rows: Vec<(String, Vec<f64>)> = labels
        .iter()
        .enumerate()
        .map(|(t, label)| (label.clone(), table.row(t).iter().copied().collect()))
        .collect();
    write_table(&dir.join("directed_r2.csv"), &dr_header, &dr_rows)?;

    write_json(&dir.join("analysis.json"), &analysis(solution, info.edge_threshold))?;
    write_json(&dir.join("biclusters.json"), &biclusters(solution)?)?;
    write_json(&dir.join("optimizer_report.json"), report)?;
    write_json(
        &dir.join("normalization.json"),
        &NormalizationFile {
            policy: info.policy.clone(),
            record: record.clone(),
        },
    )
}

/// A solution rebuilt from `params.json` and `normalization.json`.
pub struct LoadedBundle {
    pub params: Params,
    pub solution: Solution<f64>,
}

pub fn load_bundle(dir: &Path) -> CliResult<LoadedBundle> {
    let params_path = dir.join("params.json");
    let params: Params = read_json(&params_path)?;
    if params.format != FORMAT {
        return Err(CliError::at(
            &params_path,
            format!("unsupported format '{}', expected '{FORMAT}'", params.format),
        ));
    }
    let bad = |msg: String| CliError::at(&params_path, msg);
    let views = params
        .views
        .iter()
        .map(|v| View {
            name: v.name.clone(),
            dim: v.dim,
        })
        .collect::<Vec<_>>();
    let index = |name: &str| {
        params
            .views
            .iter()
            .position(|v| v.name == name)
            .ok_or_else(|| bad(format!("link names unknown view '{name}'")))
    };
    let links = params
        .links
        .iter()
        .map(|l| Ok((index(&l.rows)?, index(&l.cols)?)))
        .collect::<CliResult<Vec<_>>>()?;
    let graph = ViewGraph::new(views, links).map_err(|e| bad(e.to_string()))?;
    if params.angles.len() != graph.n_views() || params.d.len() != graph.n_views() {
        return Err(bad("angles and d need one entry per view".into()));
    }
    let xi = params
        .angles
        .iter()
        .zip(graph.views())
        .map(|(a, v)| GivensAngles::from_vec(v.dim, params.k, a.clone()))
        .collect::<mmpca_core::Result<Vec<_>>>()
        .map_err(|e| bad(e.to_string()))?;
    let d = params.d.iter().map(|d| DVector::from_vec(d.clone())).collect();
    let model = ModelParams::new(params.k, xi, d).map_err(|e| bad(e.to_string()))?;
    let norm_path = dir.join("normalization.json");
    let normalization: NormalizationFile = read_json(&norm_path)?;
    if normalization.record.matrices.len() != graph.n_matrices() {
        return Err(CliError::at(&norm_path, "one record per matrix expected"));
    }
    let solution = Solution::from_parts(graph, model, params.matrix_norms_sq.clone(), params.zero_threshold)
        .map_err(|e| bad(e.to_string()))?
        .with_normalization(normalization.record);
    Ok(LoadedBundle { params, solution })
}

/// Writes an imputed block; rows are items of the row view.
pub fn write_imputed(path: &Path, m: &DMatrix<f64>) -> CliResult<()> {
    write_matrix(path, None, m)
}
