//! CSV ingestion with protected-attribute binarization and row filtering.

use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Cells treated as missing (compared case-insensitively after trimming).
pub const MISSING_MARKERS: [&str; 5] = ["", "na", "n/a", "nan", "?"];

fn is_missing(cell: &str) -> bool {
    let t = cell.trim();
    MISSING_MARKERS.iter().any(|m| t.eq_ignore_ascii_case(m))
}

/// What to read from the table.
#[derive(Debug, Clone)]
pub struct IngestSpec<'a> {
    pub protected: &'a str,
    /// Labels mapped to 0 and 1. Rows with any other label are dropped.
    pub protected_pair: Option<(&'a str, &'a str)>,
    /// Numeric columns besides the protected one.
    pub columns: Vec<&'a str>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub rows_read: usize,
    pub rows_kept: usize,
    pub dropped_missing: usize,
    pub dropped_protected_label: usize,
}

/// Reads a header-row CSV into a dataset whose first column is the protected
/// attribute followed by `spec.columns`.
pub fn read_csv<R: Read>(reader: R, spec: &IngestSpec) -> Result<(Dataset, IngestSummary)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    let position = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    };
    let mut wanted = vec![spec.protected];
    for c in &spec.columns {
        if wanted.contains(c) {
            return Err(Error::Config(format!("column `{c}` listed twice")));
        }
        wanted.push(c);
    }
    let idx = wanted
        .iter()
        .map(|n| position(n))
        .collect::<Result<Vec<_>>>()?;

    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); wanted.len()];
    let mut summary = IngestSummary {
        rows_read: 0,
        rows_kept: 0,
        dropped_missing: 0,
        dropped_protected_label: 0,
    };
    let mut values = vec![0.0; wanted.len()];
    let mut record = csv::StringRecord::new();
    while rdr.read_record(&mut record)? {
        summary.rows_read += 1;
        // Data rows are numbered from 1, after the header.
        let row = summary.rows_read;
        let mut missing = false;
        let mut unmapped = false;
        for (k, &i) in idx.iter().enumerate() {
            let cell = record.get(i).unwrap_or("");
            if is_missing(cell) {
                missing = true;
                continue;
            }
            if k == 0 {
                if let Some((a, b)) = spec.protected_pair {
                    if cell == a {
                        values[0] = 0.0;
                    } else if cell == b {
                        values[0] = 1.0;
                    } else {
                        unmapped = true;
                    }
                    continue;
                }
            }
            values[k] = match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => v,
                _ => {
                    return Err(Error::NonNumeric {
                        column: wanted[k].to_string(),
                        row,
                        value: cell.to_string(),
                    })
                }
            };
        }
        if missing {
            summary.dropped_missing += 1;
        } else if unmapped {
            summary.dropped_protected_label += 1;
        } else {
            for (col, &v) in columns.iter_mut().zip(&values) {
                col.push(v);
            }
            summary.rows_kept += 1;
        }
    }
    if summary.rows_kept == 0 {
        return Err(Error::Config("no rows left after filtering".into()));
    }
    let names = wanted.iter().map(|s| s.to_string()).collect();
    Ok((Dataset::new(names, columns)?, summary))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec<'a>(pair: Option<(&'a str, &'a str)>, cols: &[&'a str]) -> IngestSpec<'a> {
        IngestSpec {
            protected: "race",
            protected_pair: pair,
            columns: cols.to_vec(),
        }
    }

    #[test]
    fn complete_file_keeps_every_row() {
        let text = "race,x,y\n0,1.5,2\n1,2.5,3\n1,-1,4\n";
        let (data, summary) = read_csv(text.as_bytes(), &spec(None, &["x", "y"])).unwrap();
        assert_eq!(summary.rows_read, 3);
        assert_eq!(summary.rows_kept, 3);
        assert_eq!(data.column("x").unwrap(), &[1.5, 2.5, -1.0]);
        assert_eq!(data.names()[0], "race");
    }

    #[test]
    fn pair_binarizes_and_drops_other_labels() {
        let text = "race,x\nW,1\nB,2\nH,3\nB,4\n";
        let (data, summary) = read_csv(text.as_bytes(), &spec(Some(("W", "B")), &["x"])).unwrap();
        assert_eq!(summary.rows_kept, 3);
        assert_eq!(summary.dropped_protected_label, 1);
        assert_eq!(data.column("race").unwrap(), &[0.0, 1.0, 1.0]);
        assert_eq!(data.column("x").unwrap(), &[1.0, 2.0, 4.0]);
    }

    #[test]
    fn missing_cells_drop_rows() {
        let text = "race,x,y\n0,1,2\n1,NA,3\n0,2,4\n1,3,5\n0,4,6\n";
        let (_, summary) = read_csv(text.as_bytes(), &spec(None, &["x", "y"])).unwrap();
        assert_eq!(summary.rows_kept, 4);
        assert_eq!(summary.dropped_missing, 1);
        for marker in ["", "?", "n/a", "NaN"] {
            let text = format!("race,x\n0,1\n1,{marker}\n");
            let (_, s) = read_csv(text.as_bytes(), &spec(None, &["x"])).unwrap();
            assert_eq!(s.rows_kept, 1, "marker `{marker}`");
        }
    }

    #[test]
    fn errors_name_the_problem() {
        let text = "race,x\n0,1\n1,abc\n";
        match read_csv(text.as_bytes(), &spec(None, &["x"])) {
            Err(Error::NonNumeric { column, row, value }) => {
                assert_eq!((column.as_str(), row, value.as_str()), ("x", 2, "abc"));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            read_csv(text.as_bytes(), &spec(None, &["nope"])),
            Err(Error::UnknownColumn(_))
        ));
        let text = "race,x\nH,1\n";
        assert!(read_csv(text.as_bytes(), &spec(Some(("W", "B")), &["x"])).is_err());
        assert!(read_csv("race,x\n0,1\n".as_bytes(), &spec(None, &["x", "x"])).is_err());
    }
}
