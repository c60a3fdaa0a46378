//! Incomplete mixed-type data tables and variable-type detection.

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use crate::error::{Error, Result};

/// Per-column variable type. Truncated types carry their boundary values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VariableType {
    Continuous,
    Ordinal,
    LowerTruncated { alpha: f64 },
    UpperTruncated { beta: f64 },
    TwoSidedTruncated { alpha: f64, beta: f64 },
}

impl VariableType {
    pub fn tag(&self) -> TypeTag {
        match self {
            VariableType::Continuous => TypeTag::Continuous,
            VariableType::Ordinal => TypeTag::Ordinal,
            VariableType::LowerTruncated { .. } => TypeTag::LowerTruncated,
            VariableType::UpperTruncated { .. } => TypeTag::UpperTruncated,
            VariableType::TwoSidedTruncated { .. } => TypeTag::TwoSidedTruncated,
        }
    }

    pub fn lower_bound(&self) -> Option<f64> {
        match *self {
            VariableType::LowerTruncated { alpha } => Some(alpha),
            VariableType::TwoSidedTruncated { alpha, .. } => Some(alpha),
            _ => None,
        }
    }

    pub fn upper_bound(&self) -> Option<f64> {
        match *self {
            VariableType::UpperTruncated { beta } => Some(beta),
            VariableType::TwoSidedTruncated { beta, .. } => Some(beta),
            _ => None,
        }
    }
}

/// Variable type without boundary values, as named on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TypeTag {
    Continuous,
    Ordinal,
    LowerTruncated,
    UpperTruncated,
    TwoSidedTruncated,
}

impl TypeTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            TypeTag::Continuous => "continuous",
            TypeTag::Ordinal => "ordinal",
            TypeTag::LowerTruncated => "lower_truncated",
            TypeTag::UpperTruncated => "upper_truncated",
            TypeTag::TwoSidedTruncated => "twosided_truncated",
        }
    }

    /// Resolve a tag into a full type, taking truncation points from the observed extremes.
    pub fn resolve(&self, observed: &[f64]) -> Option<VariableType> {
        let min = observed.iter().copied().reduce(f64::min)?;
        let max = observed.iter().copied().reduce(f64::max)?;
        Some(match self {
            TypeTag::Continuous => VariableType::Continuous,
            TypeTag::Ordinal => VariableType::Ordinal,
            TypeTag::LowerTruncated => VariableType::LowerTruncated { alpha: min },
            TypeTag::UpperTruncated => VariableType::UpperTruncated { beta: max },
            TypeTag::TwoSidedTruncated => VariableType::TwoSidedTruncated {
                alpha: min,
                beta: max,
            },
        })
    }
}

impl fmt::Display for TypeTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TypeTag {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "continuous" => Ok(TypeTag::Continuous),
            "ordinal" => Ok(TypeTag::Ordinal),
            "lower_truncated" => Ok(TypeTag::LowerTruncated),
            "upper_truncated" => Ok(TypeTag::UpperTruncated),
            "twosided_truncated" => Ok(TypeTag::TwoSidedTruncated),
            other => Err(format!("unknown variable type '{other}'")),
        }
    }
}

/// An n×p grid of optional finite values with column labels.
#[derive(Debug, Clone, PartialEq)]
pub struct DataTable {
    values: Vec<Option<f64>>,
    col_names: Vec<String>,
    n_rows: usize,
    n_cols: usize,
}

impl DataTable {
    /// Build a table from rows. Non-finite values are stored as missing.
    pub fn new(col_names: Vec<String>, rows: Vec<Vec<Option<f64>>>) -> Result<Self> {
        let n_cols = col_names.len();
        let mut values = Vec::with_capacity(rows.len() * n_cols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n_cols {
                return Err(Error::ShapeMismatch(format!(
                    "row {i} has {} cells, expected {n_cols}",
                    row.len()
                )));
            }
            values.extend(row.iter().map(|v| v.filter(|x| x.is_finite())));
        }
        Ok(Self {
            values,
            col_names,
            n_rows: rows.len(),
            n_cols,
        })
    }

    /// Table with generated column names `x1..xp`.
    pub fn from_rows(rows: Vec<Vec<Option<f64>>>) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        Self::new(default_names(p), rows)
    }

    /// Fully observed table from a row-major slice.
    pub fn from_dense(n_rows: usize, n_cols: usize, data: &[f64]) -> Result<Self> {
        if data.len() != n_rows * n_cols {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {n_rows}x{n_cols} table",
                data.len()
            )));
        }
        Ok(Self {
            values: data.iter().map(|&v| Some(v).filter(|x| x.is_finite())).collect(),
            col_names: default_names(n_cols),
            n_rows,
            n_cols,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn col_names(&self) -> &[String] {
        &self.col_names
    }

    pub fn with_col_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.n_cols {
            return Err(Error::ShapeMismatch(format!(
                "{} names for {} columns",
                names.len(),
                self.n_cols
            )));
        }
        self.col_names = names;
        Ok(self)
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        self.values[row * self.n_cols + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: Option<f64>) {
        self.values[row * self.n_cols + col] = value.filter(|x| x.is_finite());
    }

    pub fn row(&self, row: usize) -> &[Option<f64>] {
        &self.values[row * self.n_cols..(row + 1) * self.n_cols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[Option<f64>]> {
        self.values.chunks(self.n_cols.max(1)).take(self.n_rows)
    }

    /// Observed values of a column, in row order.
    pub fn observed(&self, col: usize) -> Vec<f64> {
        (0..self.n_rows).filter_map(|i| self.get(i, col)).collect()
    }

    pub fn is_missing(&self, row: usize, col: usize) -> bool {
        self.get(row, col).is_none()
    }

    pub fn n_observed(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }

    /// Subset of rows in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> DataTable {
        let mut values = Vec::with_capacity(rows.len() * self.n_cols);
        for &i in rows {
            values.extend_from_slice(self.row(i));
        }
        DataTable {
            values,
            col_names: self.col_names.clone(),
            n_rows: rows.len(),
            n_cols: self.n_cols,
        }
    }

    /// Subset of columns in the given order.
    pub fn select_cols(&self, cols: &[usize]) -> DataTable {
        let mut values = Vec::with_capacity(self.n_rows * cols.len());
        for i in 0..self.n_rows {
            values.extend(cols.iter().map(|&j| self.get(i, j)));
        }
        DataTable {
            values,
            col_names: cols.iter().map(|&j| self.col_names[j].clone()).collect(),
            n_rows: self.n_rows,
            n_cols: cols.len(),
        }
    }

    /// Apply `f` to every observed value of column `col`.
    pub fn map_column(&mut self, col: usize, f: impl Fn(f64) -> f64) {
        for i in 0..self.n_rows {
            if let Some(v) = self.get(i, col) {
                self.set(i, col, Some(f(v)));
            }
        }
    }

    /// Fails with the first column that has no observed value.
    pub fn check_columns_observed(&self) -> Result<()> {
        for j in 0..self.n_cols {
            if (0..self.n_rows).all(|i| self.is_missing(i, j)) {
                return Err(Error::EmptyColumn {
                    column: j,
                    name: self.col_names[j].clone(),
                });
            }
        }
        Ok(())
    }

    /// Read a CSV with a header row. Empty fields and `NaN` (any case) are missing.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let col_names: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for (i, record) in rdr.records().enumerate() {
            let record = record?;
            rows.push(parse_record(&record, col_names.len(), i + 2)?);
        }
        Self::new(col_names, rows)
    }

    pub fn from_csv_path(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(std::io::BufReader::new(file))
    }

    /// Write as CSV. Missing cells are written as empty fields.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(&self.col_names)?;
        for row in self.rows() {
            wtr.write_record(row.iter().map(|v| v.map(format_value).unwrap_or_default()))?;
        }
        wtr.flush()?;
        Ok(())
    }
}

pub(crate) fn default_names(p: usize) -> Vec<String> {
    (1..=p).map(|j| format!("x{j}")).collect()
}

/// Parse one CSV record; `line` is used only for diagnostics.
pub fn parse_record(
    record: &csv::StringRecord,
    n_cols: usize,
    line: usize,
) -> Result<Vec<Option<f64>>> {
    if record.len() != n_cols {
        return Err(Error::Parse {
            line,
            column: record.len().min(n_cols),
            message: format!("expected {n_cols} fields, found {}", record.len()),
        });
    }
    record
        .iter()
        .enumerate()
        .map(|(j, field)| parse_cell(field).map_err(|message| Error::Parse {
            line,
            column: j,
            message,
        }))
        .collect()
}

pub fn parse_cell(field: &str) -> std::result::Result<Option<f64>, String> {
    let field = field.trim();
    if field.is_empty() || field.eq_ignore_ascii_case("nan") {
        return Ok(None);
    }
    match field.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        Ok(v) => Err(format!("non-finite value {v}")),
        Err(_) => Err(format!("cannot parse '{field}' as a number")),
    }
}

/// Format with six significant digits, `%g` style.
pub fn format_value(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let exp = v.abs().log10().floor() as i32;
    // rounding can push the exponent up (e.g. 999999.7 -> 1e6)
    let rounded: f64 = format!("{:.5e}", v).parse().unwrap_or(v);
    let exp = if rounded.abs() >= 10f64.powi(exp + 1) {
        exp + 1
    } else {
        exp
    };
    if (-5..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        trim_zeros(format!("{:.*}", decimals, v))
    } else {
        let s = format!("{:.5e}", v);
        let (mantissa, exponent) = s.split_once('e').unwrap_or((&s, "0"));
        let e: i32 = exponent.parse().unwrap_or(0);
        let sign = if e < 0 { '-' } else { '+' };
        format!("{}e{}{:02}", trim_zeros(mantissa.to_string()), sign, e.abs())
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// Observed count and missing fraction of one column.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColumnSummary {
    pub observed: usize,
    pub missing: usize,
    pub missing_fraction: f64,
}

pub fn mask_summary(table: &DataTable) -> Vec<ColumnSummary> {
    let n = table.n_rows();
    (0..table.n_cols())
        .map(|j| {
            let observed = (0..n).filter(|&i| !table.is_missing(i, j)).count();
            let missing = n - observed;
            ColumnSummary {
                observed,
                missing,
                missing_fraction: if n == 0 { 0.0 } else { missing as f64 / n as f64 },
            }
        })
        .collect()
}

pub const DEFAULT_MIN_ORD_RATIO: f64 = 0.1;

/// Guess each column's type from the frequencies of its observed unique values.
///
/// A column is continuous when its mode's frequency is below `min_ord_ratio`.
/// It is truncated when its minimum and/or maximum reach that frequency and the
/// remaining values, renormalized, pass the continuity test. Everything else is
/// ordinal. Frequencies equal to the threshold count as concentrated.
pub fn detect_variable_types(table: &DataTable, min_ord_ratio: f64) -> Result<Vec<VariableType>> {
    if !(min_ord_ratio > 0.0 && min_ord_ratio < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "min_ord_ratio must be in (0, 1), got {min_ord_ratio}"
        )));
    }
    (0..table.n_cols())
        .map(|j| {
            let observed = table.observed(j);
            if observed.is_empty() {
                return Err(Error::EmptyColumn {
                    column: j,
                    name: table.col_names()[j].clone(),
                });
            }
            Ok(detect_column_type(&observed, min_ord_ratio))
        })
        .collect()
}

/// Type rule applied to one column's observed values.
pub fn detect_column_type(observed: &[f64], min_ord_ratio: f64) -> VariableType {
    let mut counts: HashMap<u64, usize> = HashMap::new();
    for &v in observed {
        // -0.0 and 0.0 are the same level
        let key = if v == 0.0 { 0.0f64.to_bits() } else { v.to_bits() };
        *counts.entry(key).or_insert(0) += 1;
    }
    let n = observed.len();
    if counts.len() <= 1 {
        return VariableType::Ordinal;
    }
    let mode = counts.values().copied().max().unwrap_or(0);
    if (mode as f64) / (n as f64) < min_ord_ratio {
        return VariableType::Continuous;
    }
    let min = observed.iter().copied().fold(f64::INFINITY, f64::min);
    let max = observed.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let count_of = |v: f64| {
        let key = if v == 0.0 { 0.0f64.to_bits() } else { v.to_bits() };
        counts.get(&key).copied().unwrap_or(0)
    };
    let lower = count_of(min) as f64 / n as f64 >= min_ord_ratio;
    let upper = count_of(max) as f64 / n as f64 >= min_ord_ratio;
    let remainder_continuous = |drop_min: bool, drop_max: bool| {
        let mut rest_n = n;
        let mut rest_mode = 0usize;
        for (&key, &c) in &counts {
            let v = f64::from_bits(key);
            if (drop_min && v == min) || (drop_max && v == max) {
                rest_n -= c;
            } else {
                rest_mode = rest_mode.max(c);
            }
        }
        rest_n > 0 && (rest_mode as f64) / (rest_n as f64) < min_ord_ratio
    };
    match (lower, upper) {
        (true, true) if remainder_continuous(true, true) => {
            VariableType::TwoSidedTruncated { alpha: min, beta: max }
        }
        (true, false) if remainder_continuous(true, false) => {
            VariableType::LowerTruncated { alpha: min }
        }
        (false, true) if remainder_continuous(false, true) => {
            VariableType::UpperTruncated { beta: max }
        }
        _ => VariableType::Ordinal,
    }
}
