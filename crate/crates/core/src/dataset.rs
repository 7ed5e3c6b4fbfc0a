//! Column-major training data.
//!
//! Every solver works one coordinate at a time, and a coordinate is a column of
//! the data matrix `A` (`n_rows x n_cols`). Columns are therefore stored
//! contiguously, either as dense runs or as compressed sparse columns.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::partitioning::{RngStream, StreamPurpose};

/// Power iterations used by [`DatasetStats::from_matrix`].
pub const DEFAULT_POWER_ITERS: usize = 200;
/// Relative eigenvalue change at which power iteration stops.
pub const DEFAULT_POWER_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StorageKind {
    Dense,
    Sparse,
}

#[derive(Debug, Clone, PartialEq)]
enum Storage {
    /// Column-major values, `n_rows * n_cols`.
    Dense(Vec<f64>),
    /// Compressed sparse columns.
    Sparse {
        col_ptr: Vec<usize>,
        row_idx: Vec<u32>,
        values: Vec<f64>,
    },
}

/// A borrowed column `x_j`.
#[derive(Debug, Clone, Copy)]
pub enum Column<'a> {
    Dense(&'a [f64]),
    Sparse { rows: &'a [u32], values: &'a [f64] },
}

#[inline]
pub(crate) fn dense_dot(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    let mut acc = [0.0f64; 4];
    let xs = x.chunks_exact(4);
    let ys = y.chunks_exact(4);
    let (xr, yr) = (xs.remainder(), ys.remainder());
    for (a, b) in xs.zip(ys) {
        acc[0] += a[0] * b[0];
        acc[1] += a[1] * b[1];
        acc[2] += a[2] * b[2];
        acc[3] += a[3] * b[3];
    }
    let mut tail = 0.0;
    for (a, b) in xr.iter().zip(yr) {
        tail += a * b;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Sum of `values[k] * gathered[k]` in index order.
#[inline]
pub(crate) fn gathered_dot(values: &[f64], gathered: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (a, b) in values.iter().zip(gathered) {
        acc += a * b;
    }
    acc
}

impl<'a> Column<'a> {
    /// `x_j^T v`.
    #[inline]
    pub fn dot(&self, v: &[f64]) -> f64 {
        match *self {
            Column::Dense(x) => dense_dot(x, v),
            Column::Sparse { rows, values } => {
                let mut acc = 0.0;
                for (&i, &a) in rows.iter().zip(values) {
                    acc += a * v[i as usize];
                }
                acc
            }
        }
    }

    /// `y += scale * x_j`.
    #[inline]
    pub fn axpy(&self, scale: f64, y: &mut [f64]) {
        match *self {
            Column::Dense(x) => {
                for (yi, &xi) in y.iter_mut().zip(x) {
                    *yi += scale * xi;
                }
            }
            Column::Sparse { rows, values } => {
                for (&i, &a) in rows.iter().zip(values) {
                    y[i as usize] += scale * a;
                }
            }
        }
    }

    /// `||x_j||^2` as a plain left-to-right sum.
    pub fn sq_norm(&self) -> f64 {
        let vals = match *self {
            Column::Dense(x) => x,
            Column::Sparse { values, .. } => values,
        };
        let mut acc = 0.0;
        for &a in vals {
            acc += a * a;
        }
        acc
    }

    pub fn l1_norm(&self) -> f64 {
        let vals = match *self {
            Column::Dense(x) => x,
            Column::Sparse { values, .. } => values,
        };
        vals.iter().map(|a| a.abs()).sum()
    }

    pub fn nnz(&self) -> usize {
        match *self {
            Column::Dense(x) => x.len(),
            Column::Sparse { values, .. } => values.len(),
        }
    }

    /// `(row, value)` pairs; dense columns yield every row.
    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + 'a {
        let (dense, sparse) = match *self {
            Column::Dense(x) => (Some(x.iter().copied().enumerate()), None),
            Column::Sparse { rows, values } => {
                (None, Some(rows.iter().map(|&i| i as usize).zip(values.iter().copied())))
            }
        };
        dense.into_iter().flatten().chain(sparse.into_iter().flatten())
    }
}

/// The data matrix `A` with columns as coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnMatrix {
    n_rows: usize,
    n_cols: usize,
    storage: Storage,
}

fn check_finite(v: f64, what: &str) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidData(format!("non-finite entry in {what}")))
    }
}

impl ColumnMatrix {
    /// Dense matrix from column-major values.
    pub fn from_column_major(n_rows: usize, n_cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_rows * n_cols {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {n_rows}x{n_cols} matrix",
                values.len()
            )));
        }
        for &v in &values {
            check_finite(v, "dense matrix")?;
        }
        Ok(ColumnMatrix {
            n_rows,
            n_cols,
            storage: Storage::Dense(values),
        })
    }

    /// Dense matrix from row-major nested rows; handy for tests and examples.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_cols) {
            return Err(Error::DimensionMismatch("ragged rows".into()));
        }
        let mut values = Vec::with_capacity(n_rows * n_cols);
        for j in 0..n_cols {
            values.extend(rows.iter().map(|r| r[j]));
        }
        Self::from_column_major(n_rows, n_cols, values)
    }

    /// Sparse matrix from per-column `(row, value)` lists with strictly
    /// increasing rows.
    pub fn from_sparse_columns(n_rows: usize, columns: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let n_cols = columns.len();
        let mut col_ptr = Vec::with_capacity(n_cols + 1);
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        col_ptr.push(0);
        for (j, col) in columns.into_iter().enumerate() {
            let mut prev: Option<usize> = None;
            for (i, v) in col {
                if i >= n_rows {
                    return Err(Error::InvalidData(format!(
                        "row index {i} out of range in column {j} ({n_rows} rows)"
                    )));
                }
                if prev.is_some_and(|p| p >= i) {
                    return Err(Error::InvalidData(format!(
                        "row indices not strictly increasing in column {j}"
                    )));
                }
                if i > u32::MAX as usize {
                    return Err(Error::InvalidData("row index exceeds u32".into()));
                }
                check_finite(v, "sparse matrix")?;
                prev = Some(i);
                row_idx.push(i as u32);
                values.push(v);
            }
            col_ptr.push(values.len());
        }
        Ok(ColumnMatrix {
            n_rows,
            n_cols,
            storage: Storage::Sparse {
                col_ptr,
                row_idx,
                values,
            },
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn storage_kind(&self) -> StorageKind {
        match self.storage {
            Storage::Dense(_) => StorageKind::Dense,
            Storage::Sparse { .. } => StorageKind::Sparse,
        }
    }

    pub fn nnz(&self) -> usize {
        match &self.storage {
            Storage::Dense(v) => v.len(),
            Storage::Sparse { values, .. } => values.len(),
        }
    }

    #[inline]
    pub fn column(&self, j: usize) -> Column<'_> {
        match &self.storage {
            Storage::Dense(v) => Column::Dense(&v[j * self.n_rows..(j + 1) * self.n_rows]),
            Storage::Sparse {
                col_ptr,
                row_idx,
                values,
            } => {
                let r = col_ptr[j]..col_ptr[j + 1];
                Column::Sparse {
                    rows: &row_idx[r.clone()],
                    values: &values[r],
                }
            }
        }
    }

    pub fn columns(&self) -> impl Iterator<Item = Column<'_>> {
        (0..self.n_cols).map(move |j| self.column(j))
    }

    /// `A alpha`, accumulated column by column.
    pub fn matvec(&self, alpha: &[f64]) -> Result<Vec<f64>> {
        if alpha.len() != self.n_cols {
            return Err(Error::DimensionMismatch(format!(
                "model has {} entries, matrix has {} columns",
                alpha.len(),
                self.n_cols
            )));
        }
        let mut v = vec![0.0; self.n_rows];
        for (j, &a) in alpha.iter().enumerate() {
            if a != 0.0 {
                self.column(j).axpy(a, &mut v);
            }
        }
        Ok(v)
    }

    /// `A^T v`.
    pub fn transpose_matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.n_rows {
            return Err(Error::DimensionMismatch(format!(
                "vector has {} entries, matrix has {} rows",
                v.len(),
                self.n_rows
            )));
        }
        Ok(self.columns().map(|c| c.dot(v)).collect())
    }

    /// Dense copy, column-major.
    pub fn to_dense_values(&self) -> Vec<f64> {
        match &self.storage {
            Storage::Dense(v) => v.clone(),
            Storage::Sparse { .. } => {
                let mut out = vec![0.0; self.n_rows * self.n_cols];
                for j in 0..self.n_cols {
                    for (i, a) in self.column(j).iter() {
                        out[j * self.n_rows + i] = a;
                    }
                }
                out
            }
        }
    }

    /// `A^T A` as a dense row-major `n_cols x n_cols` matrix.
    pub fn gram(&self) -> Vec<f64> {
        let n = self.n_cols;
        let mut g = vec![0.0; n * n];
        let mut scratch = vec![0.0; self.n_rows];
        for i in 0..n {
            let ci = self.column(i);
            ci.axpy(1.0, &mut scratch);
            for j in i..n {
                let d = self.column(j).dot(&scratch);
                g[i * n + j] = d;
                g[j * n + i] = d;
            }
            for (r, _) in ci.iter() {
                scratch[r] = 0.0;
            }
        }
        g
    }
}

/// Which axis of a LIBSVM file becomes the coordinate axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Orientation {
    /// One coordinate per feature; rows (and labels) are examples.
    #[default]
    CoordinatesAreFeatures,
    /// One coordinate per example; rows are features and labels are per column.
    CoordinatesAreExamples,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub matrix: ColumnMatrix,
    /// One label per example. With [`Orientation::CoordinatesAreFeatures`]
    /// this is one label per row.
    pub labels: Vec<f64>,
    pub orientation: Orientation,
}

impl LabeledDataset {
    pub fn new(matrix: ColumnMatrix, labels: Vec<f64>) -> Result<Self> {
        if labels.len() != matrix.n_rows() {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for {} rows",
                labels.len(),
                matrix.n_rows()
            )));
        }
        for &y in &labels {
            check_finite(y, "labels")?;
        }
        Ok(LabeledDataset {
            matrix,
            labels,
            orientation: Orientation::CoordinatesAreFeatures,
        })
    }

    pub fn labels_on_rows(&self) -> bool {
        self.orientation == Orientation::CoordinatesAreFeatures
    }
}

struct ParsedLine {
    label: f64,
    entries: Vec<(usize, f64)>,
}

fn parse_line(line: &str, lineno: usize) -> Result<Option<ParsedLine>> {
    let content = line.split('#').next().unwrap_or("").trim();
    if content.is_empty() {
        return Ok(None);
    }
    let err = |message: String| Error::Parse { line: lineno, message };
    let mut tokens = content.split_whitespace();
    let label_tok = tokens.next().expect("nonempty content has a token");
    let label: f64 = label_tok.parse().map_err(|_| err(format!("bad label {label_tok:?}")))?;
    if !label.is_finite() {
        return Err(err("non-finite label".into()));
    }
    let mut entries = Vec::new();
    let mut prev = 0usize;
    for tok in tokens {
        let (idx, val) = tok
            .split_once(':')
            .ok_or_else(|| err(format!("expected idx:val, got {tok:?}")))?;
        let idx: usize = idx.parse().map_err(|_| err(format!("bad index {idx:?}")))?;
        if idx == 0 {
            return Err(err("indices are 1-based".into()));
        }
        if idx <= prev {
            return Err(err(format!("index {idx} not ascending")));
        }
        let val: f64 = val.parse().map_err(|_| err(format!("bad value {val:?}")))?;
        if !val.is_finite() {
            return Err(err("non-finite value".into()));
        }
        prev = idx;
        entries.push((idx - 1, val));
    }
    Ok(Some(ParsedLine { label, entries }))
}

/// Parse LIBSVM text from a reader.
pub fn read_libsvm<R: BufRead>(
    reader: R,
    n_features: Option<usize>,
    orientation: Orientation,
) -> Result<LabeledDataset> {
    let mut labels = Vec::new();
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut max_feature = 0usize;
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        let Some(parsed) = parse_line(&line, lineno)? else {
            continue;
        };
        if let Some(&(last, _)) = parsed.entries.last() {
            if let Some(nf) = n_features {
                if last >= nf {
                    return Err(Error::Parse {
                        line: lineno,
                        message: format!("feature index {} exceeds n_features = {nf}", last + 1),
                    });
                }
            }
            max_feature = max_feature.max(last + 1);
        }
        labels.push(parsed.label);
        rows.push(parsed.entries);
    }
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n_features = n_features.unwrap_or(max_feature);
    let n_examples = rows.len();
    let matrix = match orientation {
        Orientation::CoordinatesAreFeatures => {
            let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_features];
            for (r, entries) in rows.into_iter().enumerate() {
                for (f, v) in entries {
                    cols[f].push((r, v));
                }
            }
            ColumnMatrix::from_sparse_columns(n_examples, cols)?
        }
        Orientation::CoordinatesAreExamples => ColumnMatrix::from_sparse_columns(n_features, rows)?,
    };
    Ok(LabeledDataset {
        matrix,
        labels,
        orientation,
    })
}

pub fn load_libsvm(
    path: impl AsRef<Path>,
    n_features: Option<usize>,
    orientation: Orientation,
) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_libsvm(BufReader::new(file), n_features, orientation)
}

/// Write a dataset as LIBSVM text. Zero entries of dense columns are skipped.
pub fn write_libsvm<W: Write>(data: &LabeledDataset, mut out: W) -> Result<()> {
    let m = &data.matrix;
    // gather example-major entries
    let n_examples = data.labels.len();
    let mut examples: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_examples];
    for j in 0..m.n_cols() {
        for (i, v) in m.column(j).iter() {
            if v == 0.0 && m.storage_kind() == StorageKind::Dense {
                continue;
            }
            match data.orientation {
                Orientation::CoordinatesAreFeatures => examples[i].push((j, v)),
                Orientation::CoordinatesAreExamples => examples[j].push((i, v)),
            }
        }
    }
    let mut line = String::new();
    for (label, entries) in data.labels.iter().zip(&mut examples) {
        entries.sort_by_key(|e| e.0);
        line.clear();
        write!(line, "{label}").expect("write to String");
        for (f, v) in entries.iter() {
            write!(line, " {}:{v}", f + 1).expect("write to String");
        }
        line.push('\n');
        out.write_all(line.as_bytes())
            .map_err(|e| Error::io("<libsvm output>", e))?;
    }
    Ok(())
}

fn data_stream(seed: u64) -> RngStream {
    RngStream::for_purpose(seed, StreamPurpose::Data, 0, 0, 0)
}

fn draw_labels(rng: &mut RngStream, n: usize) -> Vec<f64> {
    (0..n).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect()
}

/// Dense data with entries uniform on `[0, 1)` and labels uniform on `{-1, +1}`.
///
/// Stream contract: the `Data` stream of `seed` draws the matrix column by
/// column (features outer, examples inner), then one label per example.
pub fn generate_synthetic_dense(n_examples: usize, n_features: usize, seed: u64) -> Result<LabeledDataset> {
    if n_examples == 0 || n_features == 0 {
        return Err(Error::InvalidArgument("synthetic dimensions must be positive".into()));
    }
    let mut rng = data_stream(seed);
    let values: Vec<f64> = (0..n_examples * n_features).map(|_| rng.gen::<f64>()).collect();
    let labels = draw_labels(&mut rng, n_examples);
    LabeledDataset::new(ColumnMatrix::from_column_major(n_examples, n_features, values)?, labels)
}

/// Sparse data where each entry is present with probability `density`.
///
/// Stream contract: per column, per example, one `u = gen::<f64>()`; the entry
/// is present iff `u < density`, in which case its value is the next
/// `gen::<f64>()`. Labels follow as in the dense generator.
pub fn generate_synthetic_sparse(
    n_examples: usize,
    n_features: usize,
    density: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if n_examples == 0 || n_features == 0 {
        return Err(Error::InvalidArgument("synthetic dimensions must be positive".into()));
    }
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::InvalidArgument(format!("density {density} outside (0, 1]")));
    }
    let mut rng = data_stream(seed);
    let mut cols = Vec::with_capacity(n_features);
    for _ in 0..n_features {
        let mut col = Vec::new();
        for i in 0..n_examples {
            if rng.gen::<f64>() < density {
                col.push((i, rng.gen::<f64>()));
            }
        }
        cols.push(col);
    }
    let labels = draw_labels(&mut rng, n_examples);
    LabeledDataset::new(ColumnMatrix::from_sparse_columns(n_examples, cols)?, labels)
}

/// Per-column norms and the squared operator norm of `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetStats {
    pub column_sq_norms: Vec<f64>,
    /// Largest eigenvalue of `A^T A`, i.e. `max_x ||Ax||^2 / ||x||^2`.
    pub c_a: f64,
    /// `R = max_j ||x_j||^2`.
    pub max_col_sq_norm: f64,
}

impl DatasetStats {
    pub fn from_matrix(m: &ColumnMatrix) -> Result<Self> {
        compute_stats(m, DEFAULT_POWER_ITERS, DEFAULT_POWER_TOL)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Column norms exactly, `c_A` by power iteration on `A^T A` from the
/// normalized all-ones vector. The returned `c_A` is the Rayleigh quotient
/// `||Ax||^2` of the last unit iterate.
pub fn compute_stats(m: &ColumnMatrix, power_iters: usize, tol: f64) -> Result<DatasetStats> {
    if m.n_cols() == 0 || m.n_rows() == 0 {
        return Err(Error::EmptyDataset);
    }
    let column_sq_norms: Vec<f64> = m.columns().map(|c| c.sq_norm()).collect();
    let max_col_sq_norm = column_sq_norms.iter().copied().fold(0.0, f64::max);

    let n = m.n_cols();
    let mut x = vec![1.0 / (n as f64).sqrt(); n];
    let mut ax = m.matvec(&x)?;
    let mut rayleigh = ax.iter().map(|a| a * a).sum::<f64>();
    for _ in 0..power_iters {
        let mut y = m.transpose_matvec(&ax)?;
        let ny = norm(&y);
        if ny == 0.0 {
            break;
        }
        y.iter_mut().for_each(|a| *a /= ny);
        x = y;
        ax = m.matvec(&x)?;
        let next = ax.iter().map(|a| a * a).sum::<f64>();
        let change = (next - rayleigh).abs();
        rayleigh = next;
        if change <= tol * rayleigh.abs() {
            break;
        }
    }
    Ok(DatasetStats {
        column_sq_norms,
        c_a: rayleigh,
        max_col_sq_norm,
    })
}
