//! Tabular data ingestion, column typing, scaling, masking, and splits.
//!
//! A [`DataMatrix`] holds an n×m table of reals with per-column type
//! metadata; categorical columns store integer category codes as reals.
//! A [`MaskMatrix`] marks which entries are observed. Scaling statistics
//! are fitted on observed entries only, so nothing leaks from values the
//! model is not allowed to see.

use std::collections::BTreeSet;
use std::path::Path;

use ndarray::Array2;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{GrapeError, Result};
use crate::rng::rng_from_seed;

/// Bounded retries when a sampled mask leaves a column fully unobserved.
const MASK_RETRY_BUDGET: usize = 100;

/// A column is inferred categorical only if every value is an integer code
/// in `[0, INFER_MAX_DISTINCT)` with at most that many distinct values.
const INFER_MAX_DISTINCT: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ColumnKind {
    Continuous,
    Categorical { cardinality: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub index: usize,
    #[serde(flatten)]
    pub kind: ColumnKind,
    #[serde(default)]
    pub name: String,
}

impl ColumnSchema {
    pub fn continuous(index: usize, name: impl Into<String>) -> Self {
        Self {
            index,
            kind: ColumnKind::Continuous,
            name: name.into(),
        }
    }

    pub fn categorical(index: usize, cardinality: usize, name: impl Into<String>) -> Self {
        Self {
            index,
            kind: ColumnKind::Categorical { cardinality },
            name: name.into(),
        }
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self.kind, ColumnKind::Categorical { .. })
    }

    /// One-hot width for categorical columns, 1 for continuous.
    pub fn value_width(&self) -> usize {
        match self.kind {
            ColumnKind::Continuous => 1,
            ColumnKind::Categorical { cardinality } => cardinality,
        }
    }
}

/// Schema request for [`load_csv`]: infer from the data or use an explicit
/// column list (the explicit list always wins over inference).
#[derive(Debug, Clone)]
pub enum SchemaSpec {
    Infer,
    Explicit(Vec<ColumnSchema>),
}

/// n×m table with column metadata and optional per-column scaling state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataMatrix {
    values: Array2<f64>,
    schema: Vec<ColumnSchema>,
    /// Per-column `(min, max)` fitted by [`minmax_scale`]; `None` = unscaled.
    scaler: Vec<Option<(f64, f64)>>,
}

impl DataMatrix {
    pub fn new(values: Array2<f64>, schema: Vec<ColumnSchema>) -> Result<Self> {
        let (n, m) = values.dim();
        if n == 0 || m == 0 {
            return Err(GrapeError::InvalidArgument(format!(
                "data matrix must be non-empty, got {n}x{m}"
            )));
        }
        validate_schema(&schema, m)?;
        for col in &schema {
            if let ColumnKind::Categorical { cardinality } = col.kind {
                for (i, &v) in values.column(col.index).iter().enumerate() {
                    if v.fract() != 0.0 || v < 0.0 || v >= cardinality as f64 {
                        return Err(GrapeError::Schema(format!(
                            "column {} is categorical(cardinality {}) but row {} holds {}",
                            col.index, cardinality, i, v
                        )));
                    }
                }
            }
        }
        let scaler = vec![None; m];
        Ok(Self {
            values,
            schema,
            scaler,
        })
    }

    /// All-continuous schema with generated column names.
    pub fn from_continuous(values: Array2<f64>) -> Result<Self> {
        let m = values.ncols();
        let schema = (0..m)
            .map(|j| ColumnSchema::continuous(j, format!("col{j}")))
            .collect();
        Self::new(values, schema)
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn schema(&self) -> &[ColumnSchema] {
        &self.schema
    }

    pub fn column(&self, j: usize) -> &ColumnSchema {
        &self.schema[j]
    }

    pub fn scaler(&self, j: usize) -> Option<(f64, f64)> {
        self.scaler.get(j).copied().flatten()
    }

    pub fn is_scaled(&self) -> bool {
        self.schema
            .iter()
            .all(|c| c.is_categorical() || self.scaler[c.index].is_some())
    }

    /// Keeps the listed columns (in the given order), dropping the rest.
    /// Scaling state follows the kept columns; schema indices are renumbered.
    pub fn select_columns(&self, keep: &[usize]) -> Result<Self> {
        for &j in keep {
            if j >= self.n_cols() {
                return Err(GrapeError::InvalidArgument(format!(
                    "column index {j} out of range for {} columns",
                    self.n_cols()
                )));
            }
        }
        let n = self.n_rows();
        let mut values = Array2::zeros((n, keep.len()));
        let mut schema = Vec::with_capacity(keep.len());
        let mut scaler = Vec::with_capacity(keep.len());
        for (new_j, &old_j) in keep.iter().enumerate() {
            values.column_mut(new_j).assign(&self.values.column(old_j));
            let mut col = self.schema[old_j].clone();
            col.index = new_j;
            schema.push(col);
            scaler.push(self.scaler[old_j]);
        }
        Ok(Self {
            values,
            schema,
            scaler,
        })
    }

    /// Restricts to the given rows (in the given order).
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        for &i in rows {
            if i >= self.n_rows() {
                return Err(GrapeError::InvalidArgument(format!(
                    "row index {i} out of range for {} rows",
                    self.n_rows()
                )));
            }
        }
        let mut values = Array2::zeros((rows.len(), self.n_cols()));
        for (new_i, &old_i) in rows.iter().enumerate() {
            values.row_mut(new_i).assign(&self.values.row(old_i));
        }
        Ok(Self {
            values,
            schema: self.schema.clone(),
            scaler: self.scaler.clone(),
        })
    }
}

/// n×m observability indicators plus the sampling parameters that made them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskMatrix {
    observed: Array2<bool>,
    missing_rate: f64,
    seed: u64,
}

impl MaskMatrix {
    pub fn from_observed(observed: Array2<bool>) -> Self {
        Self {
            observed,
            missing_rate: 0.0,
            seed: 0,
        }
    }

    pub fn fully_observed(n: usize, m: usize) -> Self {
        Self::from_observed(Array2::from_elem((n, m), true))
    }

    pub fn observed(&self) -> &Array2<bool> {
        &self.observed
    }

    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.observed[(i, j)]
    }

    pub fn n_rows(&self) -> usize {
        self.observed.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.observed.ncols()
    }

    pub fn missing_rate(&self) -> f64 {
        self.missing_rate
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn observed_count(&self) -> usize {
        self.observed.iter().filter(|&&o| o).count()
    }

    /// Row-major list of observed `(i, j)` positions.
    pub fn observed_entries(&self) -> Vec<(usize, usize)> {
        self.entries(true)
    }

    /// Row-major list of unobserved `(i, j)` positions.
    pub fn unobserved_entries(&self) -> Vec<(usize, usize)> {
        self.entries(false)
    }

    fn entries(&self, want: bool) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.n_rows() {
            for j in 0..self.n_cols() {
                if self.observed[(i, j)] == want {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut observed = Array2::from_elem((rows.len(), self.n_cols()), false);
        for (new_i, &old_i) in rows.iter().enumerate() {
            observed.row_mut(new_i).assign(&self.observed.row(old_i));
        }
        Self {
            observed,
            missing_rate: self.missing_rate,
            seed: self.seed,
        }
    }

    pub fn select_columns(&self, keep: &[usize]) -> Self {
        let mut observed = Array2::from_elem((self.n_rows(), keep.len()), false);
        for (new_j, &old_j) in keep.iter().enumerate() {
            observed.column_mut(new_j).assign(&self.observed.column(old_j));
        }
        Self {
            observed,
            missing_rate: self.missing_rate,
            seed: self.seed,
        }
    }
}

/// Length-n labels with a train/test partition (`true` = train).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelVector {
    pub labels: Vec<f64>,
    pub partition: Vec<bool>,
    pub train_fraction: f64,
}

impl LabelVector {
    pub fn train_indices(&self) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.partition[i]).collect()
    }

    pub fn test_indices(&self) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| !self.partition[i]).collect()
    }
}

fn validate_schema(schema: &[ColumnSchema], m: usize) -> Result<()> {
    if schema.len() != m {
        return Err(GrapeError::Schema(format!(
            "schema has {} columns, data has {m}",
            schema.len()
        )));
    }
    let mut seen = vec![false; m];
    for col in schema {
        if col.index >= m {
            return Err(GrapeError::Schema(format!(
                "schema index {} out of range for {m} columns",
                col.index
            )));
        }
        if seen[col.index] {
            return Err(GrapeError::Schema(format!(
                "duplicate schema index {}",
                col.index
            )));
        }
        seen[col.index] = true;
        if let ColumnKind::Categorical { cardinality } = col.kind {
            if cardinality < 2 {
                return Err(GrapeError::Schema(format!(
                    "column {} cardinality must be >= 2, got {cardinality}",
                    col.index
                )));
            }
        }
    }
    Ok(())
}

/// Loads a comma-separated numeric table ('.' decimal separator, UTF-8).
///
/// With [`SchemaSpec::Infer`], a column is typed categorical iff every value
/// is a non-negative integer code below [`INFER_MAX_DISTINCT`] with at most
/// that many distinct values; otherwise continuous. Row indices in errors
/// count data rows from 0, excluding the header.
pub fn load_csv(path: impl AsRef<Path>, schema: SchemaSpec, has_header: bool) -> Result<DataMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path.as_ref())?;

    let header: Option<Vec<String>> = if has_header {
        Some(
            reader
                .headers()
                .map_err(|e| GrapeError::CsvParse {
                    row: 0,
                    msg: e.to_string(),
                })?
                .iter()
                .map(str::to_owned)
                .collect(),
        )
    } else {
        None
    };

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width: Option<usize> = None;
    for (row_idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| GrapeError::CsvParse {
            row: row_idx,
            msg: e.to_string(),
        })?;
        let expected = *width.get_or_insert(record.len());
        if record.len() != expected {
            return Err(GrapeError::CsvParse {
                row: row_idx,
                msg: format!("expected {expected} cells, found {}", record.len()),
            });
        }
        let mut row = Vec::with_capacity(expected);
        for (col_idx, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| GrapeError::CsvParse {
                row: row_idx,
                msg: format!("non-numeric cell {cell:?} in column {col_idx}"),
            })?;
            row.push(v);
        }
        rows.push(row);
    }

    if rows.is_empty() {
        return Err(GrapeError::CsvParse {
            row: 0,
            msg: "empty file".into(),
        });
    }

    let n = rows.len();
    let m = rows[0].len();
    let mut values = Array2::zeros((n, m));
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            values[(i, j)] = v;
        }
    }

    let schema = match schema {
        SchemaSpec::Explicit(s) => s,
        SchemaSpec::Infer => infer_schema(&values, header.as_deref()),
    };
    DataMatrix::new(values, schema)
}

fn infer_schema(values: &Array2<f64>, header: Option<&[String]>) -> Vec<ColumnSchema> {
    let name_of = |j: usize| -> String {
        header
            .and_then(|h| h.get(j).cloned())
            .filter(|s| !s.is_empty())
            .unwrap_or_else(|| format!("col{j}"))
    };
    (0..values.ncols())
        .map(|j| {
            let col = values.column(j);
            let all_small_codes = col
                .iter()
                .all(|&v| v.fract() == 0.0 && v >= 0.0 && v < INFER_MAX_DISTINCT as f64);
            if all_small_codes {
                let distinct: BTreeSet<i64> = col.iter().map(|&v| v as i64).collect();
                if distinct.len() <= INFER_MAX_DISTINCT {
                    let cardinality = (*distinct.iter().max().unwrap() as usize + 1).max(2);
                    return ColumnSchema::categorical(j, cardinality, name_of(j));
                }
            }
            ColumnSchema::continuous(j, name_of(j))
        })
        .collect()
}

/// Writes the matrix back out; values print in shortest round-trip form so
/// a `load_csv` of the output reproduces them exactly.
pub fn write_csv(data: &DataMatrix, path: impl AsRef<Path>, with_header: bool) -> Result<()> {
    let mut writer = csv::Writer::from_path(path.as_ref())?;
    if with_header {
        writer.write_record(data.schema().iter().map(|c| c.name.as_str()))?;
    }
    for i in 0..data.n_rows() {
        let row: Vec<String> = (0..data.n_cols())
            .map(|j| data.values()[(i, j)].to_string())
            .collect();
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Loads the JSON schema sidecar: an array of `{index, kind, cardinality?, name?}`.
pub fn load_schema_json(path: impl AsRef<Path>) -> Result<Vec<ColumnSchema>> {
    let text = std::fs::read_to_string(path.as_ref())?;
    let schema: Vec<ColumnSchema> = serde_json::from_str(&text)?;
    Ok(schema)
}

/// Rescales every continuous column to `[0, 1]` over its *observed* entries.
///
/// Unobserved entries pass through the same affine map (they can land
/// outside `[0, 1]`; evaluation needs them on the same scale). A column
/// whose observed values are constant maps to zero everywhere. Categorical
/// columns are untouched. The fitted `(min, max)` is stored per column.
pub fn minmax_scale(data: &DataMatrix, mask: &MaskMatrix) -> Result<DataMatrix> {
    check_same_shape(data, mask)?;
    let mut out = data.clone();
    for col in data.schema() {
        if col.is_categorical() {
            continue;
        }
        let j = col.index;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut any = false;
        for i in 0..data.n_rows() {
            if mask.is_observed(i, j) {
                let v = data.values()[(i, j)];
                lo = lo.min(v);
                hi = hi.max(v);
                any = true;
            }
        }
        if !any {
            return Err(GrapeError::InvalidArgument(format!(
                "continuous column {j} has no observed entries to fit a scaler"
            )));
        }
        let range = hi - lo;
        for i in 0..data.n_rows() {
            let v = out.values[(i, j)];
            out.values[(i, j)] = if range == 0.0 { 0.0 } else { (v - lo) / range };
        }
        out.scaler[j] = Some((lo, hi));
    }
    Ok(out)
}

/// Applies scaling state fitted elsewhere (same schema) to this matrix,
/// without refitting: each continuous column maps through the reference's
/// `(min, max)`. Used to scale held-out rows with train-split statistics.
pub fn apply_scaler(data: &DataMatrix, reference: &DataMatrix) -> Result<DataMatrix> {
    if data.n_cols() != reference.n_cols() {
        return Err(GrapeError::Shape(format!(
            "data has {} columns, reference has {}",
            data.n_cols(),
            reference.n_cols()
        )));
    }
    let mut out = data.clone();
    for col in data.schema() {
        if col.is_categorical() {
            continue;
        }
        let j = col.index;
        let (lo, hi) = reference.scaler(j).ok_or(GrapeError::UnscaledColumn(j))?;
        let range = hi - lo;
        for i in 0..data.n_rows() {
            let v = out.values[(i, j)];
            out.values[(i, j)] = if range == 0.0 { 0.0 } else { (v - lo) / range };
        }
        out.scaler[j] = Some((lo, hi));
    }
    Ok(out)
}

/// Inverts [`minmax_scale`] for one column: `value * (max - min) + min`.
/// Extrapolation outside `[0, 1]` is allowed.
pub fn inverse_scale(data: &DataMatrix, column: usize, value: f64) -> Result<f64> {
    let (lo, hi) = data
        .scaler(column)
        .ok_or(GrapeError::UnscaledColumn(column))?;
    Ok(value * (hi - lo) + lo)
}

/// Samples an MCAR mask: each entry unobserved independently with
/// probability `missing_rate`. If a column ends up fully unobserved the
/// whole mask is resampled (the RNG stream just continues), up to a bounded
/// retry budget; exhausting it signals the rate is too high for the shape.
pub fn sample_mask(n: usize, m: usize, missing_rate: f64, seed: u64) -> Result<MaskMatrix> {
    if n == 0 || m == 0 {
        return Err(GrapeError::InvalidArgument("mask shape must be non-empty".into()));
    }
    if !(0.0..1.0).contains(&missing_rate) {
        return Err(GrapeError::InvalidArgument(format!(
            "missing_rate must be in [0, 1), got {missing_rate}"
        )));
    }
    let mut rng = rng_from_seed(seed);
    for _ in 0..MASK_RETRY_BUDGET {
        let mut observed = Array2::from_elem((n, m), true);
        for i in 0..n {
            for j in 0..m {
                if rng.random::<f64>() < missing_rate {
                    observed[(i, j)] = false;
                }
            }
        }
        let ok = (0..m).all(|j| observed.column(j).iter().any(|&o| o));
        if ok {
            return Ok(MaskMatrix {
                observed,
                missing_rate,
                seed,
            });
        }
    }
    Err(GrapeError::MaskSampling(format!(
        "no mask with every column observed after {MASK_RETRY_BUDGET} tries \
         (n={n}, m={m}, missing_rate={missing_rate})"
    )))
}

/// Marks exactly `floor(train_fraction * n)` indices as train, chosen
/// uniformly without replacement; deterministic per seed.
pub fn split_labels(labels: &[f64], train_fraction: f64, seed: u64) -> Result<LabelVector> {
    let n = labels.len();
    if n < 2 {
        return Err(GrapeError::InvalidArgument(format!(
            "need at least 2 labels to split, got {n}"
        )));
    }
    if !(0.0..1.0).contains(&train_fraction) || train_fraction == 0.0 {
        return Err(GrapeError::InvalidArgument(format!(
            "train_fraction must be in (0, 1), got {train_fraction}"
        )));
    }
    let n_train = (train_fraction * n as f64).floor() as usize;
    if n_train == 0 || n_train == n {
        return Err(GrapeError::InvalidArgument(format!(
            "train_fraction {train_fraction} leaves an empty partition for n={n}"
        )));
    }
    let mut rng = rng_from_seed(seed);
    // Partial Fisher-Yates: the first n_train slots become the train set.
    let mut order: Vec<usize> = (0..n).collect();
    for i in 0..n_train {
        let k = rng.random_range(i..n);
        order.swap(i, k);
    }
    let mut partition = vec![false; n];
    for &i in &order[..n_train] {
        partition[i] = true;
    }
    Ok(LabelVector {
        labels: labels.to_vec(),
        partition,
        train_fraction,
    })
}

/// Deterministic low-rank test fixture: `values = A @ B + noise * eps` with
/// standard-normal entries, labels = row sums of the noiseless product.
pub fn make_synthetic(
    n: usize,
    m: usize,
    rank: usize,
    noise: f64,
    seed: u64,
) -> Result<(DataMatrix, Vec<f64>)> {
    if rank == 0 || rank > n.min(m) {
        return Err(GrapeError::InvalidArgument(format!(
            "rank must be in [1, min(n, m)], got {rank} for {n}x{m}"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let normal = StandardNormal;
    let mut draw = |rows: usize, cols: usize| -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| normal.sample(&mut rng))
    };
    let a = draw(n, rank);
    let b = draw(rank, m);
    let clean = a.dot(&b);
    let mut values = clean.clone();
    if noise != 0.0 {
        let eps = draw(n, m);
        values = values + noise * &eps;
    }
    let labels = clean.rows().into_iter().map(|r| r.sum()).collect();
    Ok((DataMatrix::from_continuous(values)?, labels))
}

fn check_same_shape(data: &DataMatrix, mask: &MaskMatrix) -> Result<()> {
    if data.n_rows() != mask.n_rows() || data.n_cols() != mask.n_cols() {
        return Err(GrapeError::Shape(format!(
            "data is {}x{}, mask is {}x{}",
            data.n_rows(),
            data.n_cols(),
            mask.n_rows(),
            mask.n_cols()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use std::io::Write;

    fn csv_file(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f.flush().unwrap();
        f
    }

    #[test]
    fn load_csv_parses_plain_table() {
        let f = csv_file("1,2\n3,4\n5,6\n");
        let d = load_csv(f.path(), SchemaSpec::Infer, false).unwrap();
        assert_eq!((d.n_rows(), d.n_cols()), (3, 2));
        assert_eq!(d.values()[(2, 1)], 6.0);
    }

    #[test]
    fn load_csv_infers_binary_column_as_categorical() {
        let f = csv_file("0,1.5\n1,2.5\n0,3.5\n1,4.5\n");
        let d = load_csv(f.path(), SchemaSpec::Infer, false).unwrap();
        assert_eq!(d.column(0).kind, ColumnKind::Categorical { cardinality: 2 });
        assert_eq!(d.column(1).kind, ColumnKind::Continuous);
    }

    #[test]
    fn load_csv_reports_ragged_row_index() {
        let f = csv_file("1,2\n3,4,5\n");
        let err = load_csv(f.path(), SchemaSpec::Infer, false).unwrap_err();
        match err {
            GrapeError::CsvParse { row, .. } => assert_eq!(row, 1),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn load_csv_rejects_non_numeric_and_empty() {
        let f = csv_file("1,2\n3,x\n");
        assert!(matches!(
            load_csv(f.path(), SchemaSpec::Infer, false),
            Err(GrapeError::CsvParse { row: 1, .. })
        ));
        let f = csv_file("");
        assert!(load_csv(f.path(), SchemaSpec::Infer, false).is_err());
    }

    #[test]
    fn explicit_schema_overrides_inference() {
        let f = csv_file("0\n1\n0\n");
        let schema = vec![ColumnSchema::continuous(0, "x")];
        let d = load_csv(f.path(), SchemaSpec::Explicit(schema), false).unwrap();
        assert_eq!(d.column(0).kind, ColumnKind::Continuous);
    }

    #[test]
    fn scale_maps_endpoints() {
        let d = DataMatrix::from_continuous(array![[2.0], [4.0], [6.0]]).unwrap();
        let mask = MaskMatrix::fully_observed(3, 1);
        let s = minmax_scale(&d, &mask).unwrap();
        assert_eq!(s.values().column(0).to_vec(), vec![0.0, 0.5, 1.0]);
        assert_eq!(s.scaler(0), Some((2.0, 6.0)));
    }

    #[test]
    fn scale_constant_column_is_zero() {
        let d = DataMatrix::from_continuous(array![[5.0], [5.0], [5.0]]).unwrap();
        let s = minmax_scale(&d, &MaskMatrix::fully_observed(3, 1)).unwrap();
        assert!(s.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scale_fits_on_observed_entries_only() {
        let d = DataMatrix::from_continuous(array![[1.0], [2.0], [3.0], [100.0]]).unwrap();
        let mut observed = Array2::from_elem((4, 1), true);
        observed[(3, 0)] = false;
        let mask = MaskMatrix::from_observed(observed);
        let s = minmax_scale(&d, &mask).unwrap();
        assert_eq!(s.scaler(0), Some((1.0, 3.0)));
        // The hidden value rides the same affine map for evaluation bookkeeping.
        assert!((s.values()[(3, 0)] - 49.5).abs() < 1e-12);
    }

    #[test]
    fn scaling_is_idempotent_on_observed_entries() {
        let d = DataMatrix::from_continuous(array![[2.0, 7.0], [4.0, 7.0], [6.0, 7.0]]).unwrap();
        let mask = MaskMatrix::fully_observed(3, 2);
        let once = minmax_scale(&d, &mask).unwrap();
        let twice = minmax_scale(&once, &mask).unwrap();
        assert_eq!(once.values(), twice.values());
    }

    #[test]
    fn categorical_columns_pass_through_scaling() {
        let schema = vec![
            ColumnSchema::categorical(0, 3, "c"),
            ColumnSchema::continuous(1, "x"),
        ];
        let d = DataMatrix::new(array![[2.0, 10.0], [0.0, 20.0]], schema).unwrap();
        let s = minmax_scale(&d, &MaskMatrix::fully_observed(2, 2)).unwrap();
        assert_eq!(s.values()[(0, 0)], 2.0);
        assert_eq!(s.values()[(0, 1)], 0.0);
        assert!(s.scaler(0).is_none());
    }

    #[test]
    fn inverse_scale_examples() {
        let d = DataMatrix::from_continuous(array![[2.0], [6.0]]).unwrap();
        let s = minmax_scale(&d, &MaskMatrix::fully_observed(2, 1)).unwrap();
        assert_eq!(inverse_scale(&s, 0, 0.5).unwrap(), 4.0);
        assert_eq!(inverse_scale(&s, 0, 0.0).unwrap(), 2.0);

        let d = DataMatrix::from_continuous(array![[0.0], [4.0]]).unwrap();
        let s = minmax_scale(&d, &MaskMatrix::fully_observed(2, 1)).unwrap();
        assert_eq!(inverse_scale(&s, 0, 1.25).unwrap(), 5.0);

        assert!(matches!(
            inverse_scale(&d, 0, 0.5),
            Err(GrapeError::UnscaledColumn(0))
        ));
    }

    #[test]
    fn mask_rate_zero_is_fully_observed() {
        let mask = sample_mask(10, 4, 0.0, 7).unwrap();
        assert_eq!(mask.observed_count(), 40);
    }

    #[test]
    fn mask_is_deterministic_and_near_rate() {
        let a = sample_mask(100, 100, 0.3, 11).unwrap();
        let b = sample_mask(100, 100, 0.3, 11).unwrap();
        assert_eq!(a.observed(), b.observed());
        let frac = a.observed_count() as f64 / 10_000.0;
        // 3 sigma of Binomial(10^4, 0.7).
        assert!((frac - 0.7).abs() < 0.02, "observed fraction {frac}");
    }

    #[test]
    fn mask_rejects_bad_rate_and_reports_exhaustion() {
        assert!(sample_mask(3, 3, 1.0, 0).is_err());
        assert!(sample_mask(3, 3, -0.1, 0).is_err());
        // One row: any missing entry empties a column, and at rate 0.95
        // some column goes missing in every retry.
        let err = sample_mask(1, 64, 0.95, 0).unwrap_err();
        assert!(matches!(err, GrapeError::MaskSampling(_)));
    }

    #[test]
    fn split_counts_are_exact() {
        let labels: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let s = split_labels(&labels, 0.7, 3).unwrap();
        assert_eq!(s.train_indices().len(), 7);
        assert_eq!(s.test_indices().len(), 3);

        let s = split_labels(&[1.0, 2.0], 0.5, 3).unwrap();
        assert_eq!(s.train_indices().len(), 1);
        assert_eq!(s.test_indices().len(), 1);
    }

    #[test]
    fn split_is_deterministic() {
        let labels: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let a = split_labels(&labels, 0.7, 9).unwrap();
        let b = split_labels(&labels, 0.7, 9).unwrap();
        assert_eq!(a.partition, b.partition);
        assert!(split_labels(&[1.0], 0.5, 0).is_err());
    }

    #[test]
    fn synthetic_rank_one_has_vanishing_minors() {
        let (d, _) = make_synthetic(6, 5, 1, 0.0, 21).unwrap();
        let v = d.values();
        for i in 0..5 {
            for j in 0..4 {
                let det = v[(i, j)] * v[(i + 1, j + 1)] - v[(i, j + 1)] * v[(i + 1, j)];
                assert!(det.abs() < 1e-9, "minor ({i},{j}) = {det}");
            }
        }
    }

    #[test]
    fn synthetic_is_bitwise_reproducible() {
        let (a, la) = make_synthetic(8, 4, 2, 0.0, 5).unwrap();
        let (b, lb) = make_synthetic(8, 4, 2, 0.0, 5).unwrap();
        assert_eq!(a.values(), b.values());
        assert_eq!(la, lb);
    }

    /// Singular values via the Gram matrix and Jacobi eigenvalue sweeps;
    /// independent of any linear algebra in the crate.
    fn singular_values(v: &Array2<f64>) -> Vec<f64> {
        let m = v.ncols();
        let mut g = v.t().dot(v);
        for _ in 0..60 {
            let mut off = 0.0;
            for p in 0..m {
                for q in (p + 1)..m {
                    off += g[(p, q)] * g[(p, q)];
                }
            }
            if off < 1e-24 {
                break;
            }
            for p in 0..m {
                for q in (p + 1)..m {
                    if g[(p, q)].abs() < 1e-18 {
                        continue;
                    }
                    let theta = 0.5 * (2.0 * g[(p, q)]).atan2(g[(p, p)] - g[(q, q)]);
                    let (c, s) = (theta.cos(), theta.sin());
                    for k in 0..m {
                        let (gkp, gkq) = (g[(k, p)], g[(k, q)]);
                        g[(k, p)] = c * gkp + s * gkq;
                        g[(k, q)] = -s * gkp + c * gkq;
                    }
                    for k in 0..m {
                        let (gpk, gqk) = (g[(p, k)], g[(q, k)]);
                        g[(p, k)] = c * gpk + s * gqk;
                        g[(q, k)] = -s * gpk + c * gqk;
                    }
                }
            }
        }
        let mut svs: Vec<f64> = (0..m).map(|i| g[(i, i)].max(0.0).sqrt()).collect();
        svs.sort_by(|a, b| b.partial_cmp(a).unwrap());
        svs
    }

    #[test]
    fn synthetic_spectrum_matches_requested_rank() {
        let (d, _) = make_synthetic(50, 8, 2, 0.01, 13).unwrap();
        let svs = singular_values(d.values());
        for &tail in &svs[2..] {
            assert!(
                tail < 0.2 * svs[1],
                "trailing singular value {tail} vs sv2 {}",
                svs[1]
            );
        }
    }

    #[test]
    fn synthetic_labels_are_noiseless_row_sums() {
        let (d, labels) = make_synthetic(10, 4, 2, 0.0, 3).unwrap();
        for i in 0..10 {
            let sum: f64 = d.values().row(i).sum();
            assert!((sum - labels[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn select_columns_renumbers_schema() {
        let d = DataMatrix::from_continuous(array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]).unwrap();
        let kept = d.select_columns(&[2, 0]).unwrap();
        assert_eq!(kept.values(), &array![[3.0, 1.0], [6.0, 4.0]]);
        assert_eq!(kept.column(0).index, 0);
        assert_eq!(kept.column(0).name, "col2");
    }

    proptest! {
        #[test]
        fn scale_then_inverse_is_identity(
            vals in proptest::collection::vec(-1e6f64..1e6, 2..30),
        ) {
            let n = vals.len();
            let col = Array2::from_shape_vec((n, 1), vals.clone()).unwrap();
            let d = DataMatrix::from_continuous(col).unwrap();
            let mask = MaskMatrix::fully_observed(n, 1);
            let s = minmax_scale(&d, &mask).unwrap();
            for i in 0..n {
                let back = inverse_scale(&s, 0, s.values()[(i, 0)]).unwrap();
                prop_assert!((back - vals[i]).abs() <= 1e-9 * vals[i].abs().max(1.0));
            }
        }

        #[test]
        fn csv_roundtrip_preserves_values(
            rows in proptest::collection::vec(
                proptest::collection::vec(-1e12f64..1e12, 3), 1..20),
        ) {
            let n = rows.len();
            let flat: Vec<f64> = rows.iter().flatten().copied().collect();
            let values = Array2::from_shape_vec((n, 3), flat).unwrap();
            let d = DataMatrix::from_continuous(values).unwrap();
            let f = tempfile::NamedTempFile::new().unwrap();
            write_csv(&d, f.path(), true).unwrap();
            let schema = SchemaSpec::Explicit(d.schema().to_vec());
            let back = load_csv(f.path(), schema, true).unwrap();
            prop_assert_eq!(d.values(), back.values());
        }

        // 3 sigma holds for almost all seeds but not every one of a
        // thousand; the sweep uses 5 sigma so the property is actually true
        // over the whole input space.
        #[test]
        fn sampled_mask_rate_within_five_sigma(seed in 0u64..1000) {
            let (n, m, rate) = (100, 120, 0.25);
            let mask = sample_mask(n, m, rate, seed).unwrap();
            let total = (n * m) as f64;
            let missing = total - mask.observed_count() as f64;
            let sigma = (total * rate * (1.0 - rate)).sqrt();
            prop_assert!((missing - total * rate).abs() <= 5.0 * sigma);
        }
    }
}
