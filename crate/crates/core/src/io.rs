//! Matrix files and problem descriptors.
//!
//! Matrices are read from either JSON (an array of rows, or an object with a
//! `matrix` field holding one) or text: a header line `n m` followed by `n`
//! rows of `m` whitespace-separated numbers. Lines starting with `#` are
//! ignored in text files.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataops::LabeledPointSet;
use crate::error::{Error, Result};
use crate::experiments::{synthetic_instance, OpwParams};
use crate::manifold::CouplingSpace;
use crate::problems::ProblemInstance;

fn parse_error(source_name: &str, message: impl Into<String>) -> Error {
    Error::Parse {
        source_name: source_name.to_string(),
        message: message.into(),
    }
}

/// Builds a matrix from rows of equal length.
pub fn matrix_from_rows(rows: &[Vec<f64>], source_name: &str) -> Result<DMatrix<f64>> {
    let m = rows.first().map_or(0, Vec::len);
    if let Some(k) = rows.iter().position(|r| r.len() != m) {
        return Err(parse_error(source_name, format!("row {k} has {} entries, expected {m}", rows[k].len())));
    }
    Ok(DMatrix::from_row_slice(rows.len(), m, &rows.concat()))
}

pub fn matrix_to_rows(x: &DMatrix<f64>) -> Vec<Vec<f64>> {
    x.row_iter().map(|r| r.iter().copied().collect()).collect()
}

#[derive(Deserialize)]
#[serde(untagged)]
enum JsonMatrix {
    Rows(Vec<Vec<f64>>),
    Wrapped { matrix: Vec<Vec<f64>> },
}

/// Parses a matrix in JSON or header-prefixed text form.
pub fn parse_matrix(text: &str, source_name: &str) -> Result<DMatrix<f64>> {
    let trimmed = text.trim_start();
    if trimmed.starts_with('[') || trimmed.starts_with('{') {
        let parsed: JsonMatrix =
            serde_json::from_str(trimmed).map_err(|e| parse_error(source_name, e.to_string()))?;
        let rows = match parsed {
            JsonMatrix::Rows(r) | JsonMatrix::Wrapped { matrix: r } => r,
        };
        return matrix_from_rows(&rows, source_name);
    }
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let (hline, header) = lines.next().ok_or_else(|| parse_error(source_name, "empty matrix file"))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| parse_error(source_name, format!("line {hline}: expected header `n m`")))?;
    let [n, m] = dims[..] else {
        return Err(parse_error(source_name, format!("line {hline}: expected header `n m`")));
    };
    let mut data = Vec::with_capacity(n * m);
    let mut rows = 0;
    for (lineno, line) in lines {
        let row: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| parse_error(source_name, format!("line {lineno}: {e}")))?;
        if row.len() != m {
            return Err(parse_error(source_name, format!("line {lineno}: {} entries, expected {m}", row.len())));
        }
        data.extend(row);
        rows += 1;
    }
    if rows != n {
        return Err(parse_error(source_name, format!("{rows} rows, header declares {n}")));
    }
    Ok(DMatrix::from_row_slice(n, m, &data))
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    parse_matrix(&fs::read_to_string(path)?, &path.display().to_string())
}

/// Parses a vector: a JSON array, or whitespace-separated numbers.
pub fn parse_vector(text: &str, source_name: &str) -> Result<DVector<f64>> {
    let trimmed = text.trim_start();
    let values: Vec<f64> = if trimmed.starts_with('[') {
        serde_json::from_str(trimmed).map_err(|e| parse_error(source_name, e.to_string()))?
    } else {
        text.lines()
            .filter(|l| !l.trim_start().starts_with('#'))
            .flat_map(str::split_whitespace)
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| parse_error(source_name, format!("{e}")))?
    };
    Ok(DVector::from_vec(values))
}

/// Text form with an `n m` header and one row per line.
pub fn format_matrix_text(x: &DMatrix<f64>, comment: Option<&str>) -> String {
    let mut out = String::new();
    if let Some(c) = comment {
        for line in c.lines() {
            out.push_str("# ");
            out.push_str(line);
            out.push('\n');
        }
    }
    out.push_str(&format!("{} {}\n", x.nrows(), x.ncols()));
    for row in x.row_iter() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.17e}")).collect();
        out.push_str(&cells.join(" "));
        out.push('\n');
    }
    out
}

pub fn format_matrix_json(x: &DMatrix<f64>) -> Result<String> {
    Ok(serde_json::to_string_pretty(&matrix_to_rows(x))?)
}

/// A matrix given inline or by file path (relative to the descriptor).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSource {
    Inline(Vec<Vec<f64>>),
    File { file: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VectorSource {
    Inline(Vec<f64>),
    File { file: PathBuf },
}

/// Labeled points inline or from a CSV/JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PointSetSource {
    Inline(LabeledPointSet),
    File { file: PathBuf },
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl MatrixSource {
    pub fn load(&self, base: &Path) -> Result<DMatrix<f64>> {
        match self {
            MatrixSource::Inline(rows) => matrix_from_rows(rows, "inline matrix"),
            MatrixSource::File { file } => read_matrix(&resolve(base, file)),
        }
    }
}

impl VectorSource {
    pub fn load(&self, base: &Path) -> Result<DVector<f64>> {
        match self {
            VectorSource::Inline(v) => Ok(DVector::from_column_slice(v)),
            VectorSource::File { file } => {
                let path = resolve(base, file);
                parse_vector(&fs::read_to_string(&path)?, &path.display().to_string())
            }
        }
    }
}

impl PointSetSource {
    pub fn load(&self, base: &Path) -> Result<LabeledPointSet> {
        match self {
            PointSetSource::Inline(s) => Ok(s.clone()),
            PointSetSource::File { file } => {
                let path = resolve(base, file);
                let name = path.display().to_string();
                if path.extension().is_some_and(|e| e == "json") {
                    let text = fs::read_to_string(&path)?;
                    serde_json::from_str(&text).map_err(|e| parse_error(&name, e.to_string()))
                } else {
                    LabeledPointSet::from_csv(fs::File::open(&path)?, &name)
                }
            }
        }
    }
}

/// Marginals and cost, given explicitly or naming the built-in 8 × 5 instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TransportData {
    Named { instance: NamedInstance },
    Explicit { p: VectorSource, q: VectorSource, cost: MatrixSource },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NamedInstance {
    Synthetic,
}

impl TransportData {
    pub fn load(&self, base: &Path) -> Result<(DVector<f64>, DVector<f64>, DMatrix<f64>)> {
        match self {
            TransportData::Named { instance: NamedInstance::Synthetic } => Ok(synthetic_instance()),
            TransportData::Explicit { p, q, cost } => Ok((p.load(base)?, q.load(base)?, cost.load(base)?)),
        }
    }
}

fn default_graph_neighbors() -> usize {
    5
}

/// JSON problem description, tagged by `variant`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum ProblemDescriptor {
    Classic {
        #[serde(flatten)]
        data: TransportData,
    },
    Entropic {
        #[serde(flatten)]
        data: TransportData,
        lambda: f64,
    },
    Squared {
        #[serde(flatten)]
        data: TransportData,
        lambda: f64,
    },
    Tsallis {
        #[serde(flatten)]
        data: TransportData,
        lambda: f64,
        qexp: f64,
    },
    OrderPreserving {
        u: MatrixSource,
        v: MatrixSource,
        #[serde(flatten)]
        params: OpwParams,
    },
    LaplacianDa {
        source: PointSetSource,
        target: MatrixSource,
        lambda: f64,
        laplacian_weight: f64,
        #[serde(default)]
        laplacian_mix: f64,
        #[serde(default = "default_graph_neighbors")]
        graph_neighbors: usize,
        #[serde(default)]
        kernel_width: Option<f64>,
    },
}

impl ProblemDescriptor {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn variant(&self) -> &'static str {
        match self {
            ProblemDescriptor::Classic { .. } => "classic",
            ProblemDescriptor::Entropic { .. } => "entropic",
            ProblemDescriptor::Squared { .. } => "squared",
            ProblemDescriptor::Tsallis { .. } => "tsallis",
            ProblemDescriptor::OrderPreserving { .. } => "order_preserving",
            ProblemDescriptor::LaplacianDa { .. } => "laplacian_da",
        }
    }

    /// Regularizer weight, if the variant has one.
    pub fn lambda_mut(&mut self) -> Option<&mut f64> {
        match self {
            ProblemDescriptor::Entropic { lambda, .. }
            | ProblemDescriptor::Squared { lambda, .. }
            | ProblemDescriptor::Tsallis { lambda, .. }
            | ProblemDescriptor::LaplacianDa { lambda, .. } => Some(lambda),
            ProblemDescriptor::OrderPreserving { params, .. } => Some(&mut params.lambda2),
            ProblemDescriptor::Classic { .. } => None,
        }
    }

    /// Marginals and cost for the transport variants.
    pub fn transport_data(&self, base: &Path) -> Result<Option<(DVector<f64>, DVector<f64>, DMatrix<f64>)>> {
        match self {
            ProblemDescriptor::Classic { data }
            | ProblemDescriptor::Entropic { data, .. }
            | ProblemDescriptor::Squared { data, .. }
            | ProblemDescriptor::Tsallis { data, .. } => data.load(base).map(Some),
            _ => Ok(None),
        }
    }

    /// Loads referenced files relative to `base` and constructs the problem.
    pub fn build(&self, base: &Path) -> Result<ProblemInstance> {
        if let Some((p, q, c)) = self.transport_data(base)? {
            let space = CouplingSpace::new(p, q)?;
            return match self {
                ProblemDescriptor::Classic { .. } => ProblemInstance::classic(space, c),
                ProblemDescriptor::Entropic { lambda, .. } => ProblemInstance::entropic(space, c, *lambda),
                ProblemDescriptor::Squared { lambda, .. } => ProblemInstance::squared(space, c, *lambda),
                ProblemDescriptor::Tsallis { lambda, qexp, .. } => ProblemInstance::tsallis(space, c, *lambda, *qexp),
                _ => unreachable!("transport variants handled above"),
            };
        }
        match self {
            ProblemDescriptor::OrderPreserving { u, v, params } => {
                let pb = ProblemInstance::order_preserving(
                    &u.load(base)?,
                    &v.load(base)?,
                    params.sigma,
                    params.lambda1,
                    params.lambda2,
                )?;
                let cmax = pb.cost().amax();
                if params.normalize_cost && cmax > 0.0 {
                    pb.scale_cost(1.0 / cmax)
                } else {
                    Ok(pb)
                }
            }
            ProblemDescriptor::LaplacianDa {
                source,
                target,
                lambda,
                laplacian_weight,
                laplacian_mix,
                graph_neighbors,
                kernel_width,
            } => {
                let cfg = crate::experiments::DomainAdaptConfig {
                    lambda: *lambda,
                    laplacian_weight: *laplacian_weight,
                    laplacian_mix: *laplacian_mix,
                    graph_neighbors: *graph_neighbors,
                    kernel_width: *kernel_width,
                    normalize_cost: false,
                    ..Default::default()
                };
                cfg.problem(&source.load(base)?, &target.load(base)?)
            }
            _ => unreachable!("transport variants handled above"),
        }
    }
}
