//! Keyed, index-aligned data fields plus the derived-data functions (PCA,
//! spectral embedding) that are populated right before training.

use crate::linalg::{symmetric_eigen, LinalgError};
use crate::relations::RelationMatrix;
use ndarray::{Array1, Array2};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot open '{path}': {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(String),
    #[error("row {row}: cannot parse cell '{cell}' in column '{column}'")]
    UnparseableCell {
        row: usize,
        column: String,
        cell: String,
    },
    #[error("row {row}: expected {expected} columns, found {found}")]
    RaggedRow {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("schema leaves no feature columns")]
    EmptyFeatureSet,
    #[error("label column '{column}' row {row}: labels must be non-negative integers, got '{cell}'")]
    BadLabel {
        row: usize,
        column: String,
        cell: String,
    },
    #[error("data key '{0}' not found")]
    MissingKey(String),
    #[error("data key '{key}' holds {found}, expected {expected}")]
    WrongFieldKind {
        key: String,
        expected: &'static str,
        found: &'static str,
    },
    #[error("field '{key}' has {rows} rows, dataset has {n_items} items")]
    LengthMismatch {
        key: String,
        rows: usize,
        n_items: usize,
    },
    #[error("pca: out_dim {out_dim} exceeds data width {width}")]
    PcaDim { out_dim: usize, width: usize },
    #[error("pca needs at least 2 items")]
    PcaTooFew,
    #[error("spectral embedding: out_dim + 1 = {0} exceeds matrix size {1}")]
    SpectralDim(usize, usize),
    #[error("spectral embedding requires a symmetric, non-negative relation")]
    SpectralInput,
    #[error(transparent)]
    Eigen(#[from] LinalgError),
}

/// One keyed field: a feature matrix or an integer label vector.
#[derive(Debug, Clone)]
pub enum Field {
    Matrix(Array2<f64>),
    Labels(Vec<usize>),
}

impl Field {
    pub fn rows(&self) -> usize {
        match self {
            Field::Matrix(m) => m.nrows(),
            Field::Labels(l) => l.len(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Field::Matrix(_) => "a feature matrix",
            Field::Labels(_) => "a label vector",
        }
    }
}

/// Keyed, index-aligned data fields. Immutable after derived fields are
/// populated.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    fields: BTreeMap<String, Field>,
    n_items: usize,
}

impl Dataset {
    pub fn new() -> Dataset {
        Dataset::default()
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn insert(&mut self, key: &str, field: Field) -> Result<(), DataError> {
        if self.fields.is_empty() {
            self.n_items = field.rows();
        } else if field.rows() != self.n_items {
            return Err(DataError::LengthMismatch {
                key: key.to_string(),
                rows: field.rows(),
                n_items: self.n_items,
            });
        }
        self.fields.insert(key.to_string(), field);
        Ok(())
    }

    pub fn contains(&self, key: &str) -> bool {
        self.fields.contains_key(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.fields.keys().map(String::as_str)
    }

    pub fn field(&self, key: &str) -> Result<&Field, DataError> {
        self.fields
            .get(key)
            .ok_or_else(|| DataError::MissingKey(key.to_string()))
    }

    pub fn matrix(&self, key: &str) -> Result<&Array2<f64>, DataError> {
        match self.field(key)? {
            Field::Matrix(m) => Ok(m),
            f => Err(DataError::WrongFieldKind {
                key: key.to_string(),
                expected: "a feature matrix",
                found: f.kind(),
            }),
        }
    }

    pub fn labels(&self, key: &str) -> Result<&[usize], DataError> {
        match self.field(key)? {
            Field::Labels(l) => Ok(l),
            f => Err(DataError::WrongFieldKind {
                key: key.to_string(),
                expected: "a label vector",
                found: f.kind(),
            }),
        }
    }

    /// Width of a matrix field.
    pub fn width(&self, key: &str) -> Result<usize, DataError> {
        Ok(self.matrix(key)?.ncols())
    }

    /// Export a field to CSV (derived fields, debugging).
    pub fn export_csv(&self, key: &str, path: &Path) -> Result<(), DataError> {
        let field = self.field(key)?;
        let mut file = std::fs::File::create(path).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let io_err = |source: std::io::Error| DataError::Io {
            path: path.display().to_string(),
            source,
        };
        match field {
            Field::Matrix(m) => {
                let header: Vec<String> = (0..m.ncols()).map(|j| format!("c{j}")).collect();
                writeln!(file, "{}", header.join(",")).map_err(io_err)?;
                for row in m.rows() {
                    let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                    writeln!(file, "{}", cells.join(",")).map_err(io_err)?;
                }
            }
            Field::Labels(l) => {
                writeln!(file, "label").map_err(io_err)?;
                for v in l {
                    writeln!(file, "{v}").map_err(io_err)?;
                }
            }
        }
        Ok(())
    }
}

/// Role of a CSV column.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnRole {
    Feature,
    Label,
    Ignore,
}

/// Column-to-role mapping for CSV ingestion. Columns not named default to
/// features.
#[derive(Debug, Clone, Default)]
pub struct CsvSchema {
    pub roles: BTreeMap<String, ColumnRole>,
}

impl CsvSchema {
    pub fn with_label(column: &str) -> CsvSchema {
        let mut schema = CsvSchema::default();
        schema.roles.insert(column.to_string(), ColumnRole::Label);
        schema
    }

    pub fn ignore(mut self, column: &str) -> CsvSchema {
        self.roles.insert(column.to_string(), ColumnRole::Ignore);
        self
    }

    fn role(&self, column: &str) -> ColumnRole {
        self.roles
            .get(column)
            .copied()
            .unwrap_or(ColumnRole::Feature)
    }
}

/// Load a headered CSV into a dataset: feature columns land in "main",
/// the label column (if any) in "labels". Row order is preserved.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset, DataError> {
    let file = std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| DataError::Csv(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let roles: Vec<ColumnRole> = headers.iter().map(|h| schema.role(h)).collect();
    let feature_cols: Vec<usize> = (0..headers.len())
        .filter(|&i| roles[i] == ColumnRole::Feature)
        .collect();
    let label_col: Option<usize> = (0..headers.len()).find(|&i| roles[i] == ColumnRole::Label);
    if feature_cols.is_empty() {
        return Err(DataError::EmptyFeatureSet);
    }

    let mut features: Vec<f64> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    let mut n_rows = 0usize;
    for (row_idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| DataError::Csv(e.to_string()))?;
        // Data rows are 1-based below the header line.
        let row = row_idx + 1;
        if record.len() != headers.len() {
            return Err(DataError::RaggedRow {
                row,
                expected: headers.len(),
                found: record.len(),
            });
        }
        for &col in &feature_cols {
            let cell = &record[col];
            let v: f64 = cell.parse().map_err(|_| DataError::UnparseableCell {
                row,
                column: headers[col].clone(),
                cell: cell.to_string(),
            })?;
            features.push(v);
        }
        if let Some(col) = label_col {
            let cell = &record[col];
            let v: usize = cell.parse().map_err(|_| DataError::BadLabel {
                row,
                column: headers[col].clone(),
                cell: cell.to_string(),
            })?;
            labels.push(v);
        }
        n_rows += 1;
    }

    let main = Array2::from_shape_vec((n_rows, feature_cols.len()), features)
        .map_err(|e| DataError::Csv(e.to_string()))?;
    let mut dataset = Dataset::new();
    dataset.insert("main", Field::Matrix(main))?;
    if label_col.is_some() {
        dataset.insert("labels", Field::Labels(labels))?;
    }
    Ok(dataset)
}

/// Projection onto the top principal directions of the mean-centered data,
/// ordered by descending variance.
///
/// Sign convention: each direction's entry of largest magnitude is positive.
/// Directions beyond the covariance rank are padded with zero columns.
pub fn pca(data: &Array2<f64>, out_dim: usize) -> Result<Array2<f64>, DataError> {
    let (n, width) = data.dim();
    if n < 2 {
        return Err(DataError::PcaTooFew);
    }
    if out_dim > width {
        return Err(DataError::PcaDim { out_dim, width });
    }
    let mean = data.mean_axis(ndarray::Axis(0)).expect("n >= 2");
    let centered = data - &mean.insert_axis(ndarray::Axis(0));
    let cov = centered.t().dot(&centered) / (n as f64 - 1.0);
    let eigen = symmetric_eigen(&cov)?;
    let total_var: f64 = eigen.values.iter().filter(|v| **v > 0.0).sum();
    let rank_tol = total_var.max(1e-300) * 1e-12;

    let mut scores = Array2::zeros((n, out_dim));
    let mut padded = 0usize;
    for c in 0..out_dim {
        // Eigenvalues ascend; take from the top.
        let src = width - 1 - c;
        if eigen.values[src] <= rank_tol {
            padded += 1;
            continue;
        }
        let direction = eigen.vectors.column(src);
        let proj = centered.dot(&direction);
        scores.column_mut(c).assign(&proj);
    }
    if padded > 0 {
        log::warn!(
            "pca: covariance has fewer than {out_dim} nonzero-variance directions; \
             padded {padded} column(s) with zeros"
        );
    }
    Ok(scores)
}

/// Embedding columns from the symmetric normalized graph Laplacian
/// `L = I - D^{-1/2} W D^{-1/2}`.
///
/// Takes the eigenvectors ranked 2nd to (out_dim+1)th smallest, skipping the
/// trivial constant direction `D^{1/2} 1`. Isolated vertices are placed at
/// the origin.
pub fn spectral_embedding(rel: &RelationMatrix, out_dim: usize) -> Result<Array2<f64>, DataError> {
    let n = rel.n();
    if out_dim + 1 > n {
        return Err(DataError::SpectralDim(out_dim + 1, n));
    }
    let w = rel.to_dense();
    for i in 0..n {
        for j in 0..n {
            if w[[i, j]] < 0.0 || (w[[i, j]] - w[[j, i]]).abs() > 1e-9 {
                return Err(DataError::SpectralInput);
            }
        }
    }
    let degrees: Array1<f64> = w.sum_axis(ndarray::Axis(1));
    let isolated: Vec<bool> = degrees.iter().map(|&d| d <= 0.0).collect();
    let inv_sqrt: Array1<f64> = degrees.mapv(|d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 });

    let mut lap = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            let norm = -w[[i, j]] * inv_sqrt[i] * inv_sqrt[j];
            lap[[i, j]] = if i == j { 1.0 + norm } else { norm };
        }
    }
    let eigen = symmetric_eigen(&lap)?;

    // The trivial direction is D^{1/2} 1 (restricted to connected vertices);
    // skip the eigenvector most aligned with it.
    let mut trivial = Array1::zeros(n);
    for i in 0..n {
        trivial[i] = degrees[i].max(0.0).sqrt();
    }
    let norm = trivial.dot(&trivial).sqrt();
    if norm > 0.0 {
        trivial.mapv_inplace(|v| v / norm);
    }
    let mut skip = 0usize;
    let mut best = -1.0;
    for c in 0..n {
        let alignment = eigen.vectors.column(c).dot(&trivial).abs();
        if alignment > best {
            best = alignment;
            skip = c;
        }
    }

    let mut out = Array2::zeros((n, out_dim));
    let mut col = 0usize;
    for c in 0..n {
        if c == skip {
            continue;
        }
        if col == out_dim {
            break;
        }
        out.column_mut(col).assign(&eigen.vectors.column(c));
        col += 1;
    }
    for i in 0..n {
        if isolated[i] {
            for c in 0..out_dim {
                out[[i, c]] = 0.0;
            }
        }
    }
    Ok(out)
}

/// Eigenvalues of the symmetric normalized Laplacian of `rel`, ascending.
/// Exposed for the spectral invariants (all in `[0, 2]`, smallest ~ 0).
pub fn laplacian_eigenvalues(rel: &RelationMatrix) -> Result<Array1<f64>, DataError> {
    let n = rel.n();
    let w = rel.to_dense();
    let degrees: Array1<f64> = w.sum_axis(ndarray::Axis(1));
    let inv_sqrt: Array1<f64> = degrees.mapv(|d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 });
    let mut lap = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            let norm = -w[[i, j]] * inv_sqrt[i] * inv_sqrt[j];
            lap[[i, j]] = if i == j { 1.0 + norm } else { norm };
        }
    }
    Ok(symmetric_eigen(&lap)?.values)
}
