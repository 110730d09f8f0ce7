//! Column-oriented numeric table.

use crate::error::{Error, Result};

/// Numeric table with named columns. Missing cells are stored as `NaN`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
    rows: usize,
}

impl Dataset {
    pub fn new(names: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self> {
        if names.len() != columns.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} names for {} columns",
                names.len(),
                columns.len()
            )));
        }
        let rows = columns.first().map_or(0, Vec::len);
        if let Some((i, _)) = columns.iter().enumerate().find(|(_, c)| c.len() != rows) {
            return Err(Error::DimensionMismatch(format!(
                "column `{}` has {} rows, expected {rows}",
                names[i],
                columns[i].len()
            )));
        }
        for (i, name) in names.iter().enumerate() {
            if names[..i].contains(name) {
                return Err(Error::Config(format!("duplicate column `{name}`")));
            }
        }
        Ok(Self {
            names,
            columns,
            rows,
        })
    }

    /// Builds a dataset from `(name, values)` pairs.
    pub fn from_columns<S: Into<String>>(cols: Vec<(S, Vec<f64>)>) -> Result<Self> {
        let (names, columns) = cols.into_iter().map(|(n, c)| (n.into(), c)).unzip();
        Self::new(names, columns)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        self.index_of(name)
            .map(|i| self.columns[i].as_slice())
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    }

    /// Evaluates `intercept + Σ coef·column` row by row.
    pub fn linear_combination(
        &self,
        names: &[String],
        coefficients: &[f64],
        intercept: f64,
    ) -> Result<Vec<f64>> {
        let cols = names
            .iter()
            .map(|n| self.column(n))
            .collect::<Result<Vec<_>>>()?;
        let mut out = vec![intercept; self.rows];
        for (col, &b) in cols.iter().zip(coefficients) {
            for (o, &v) in out.iter_mut().zip(col.iter()) {
                *o += b * v;
            }
        }
        Ok(out)
    }
}
