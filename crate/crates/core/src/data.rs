//! Loss-column ingestion from CSV.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which column holds the losses.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColumnSpec {
    Name(String),
    /// Zero-based.
    Index(usize),
}

impl ColumnSpec {
    /// A bare non-negative integer is read as an index, anything else as a name.
    pub fn parse(s: &str) -> Self {
        match s.trim().parse::<usize>() {
            Ok(i) => ColumnSpec::Index(i),
            Err(_) => ColumnSpec::Name(s.trim().to_string()),
        }
    }
}

impl Default for ColumnSpec {
    fn default() -> Self {
        ColumnSpec::Index(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub values: Vec<f64>,
    pub source: PathBuf,
    pub column: String,
    pub n: usize,
}

fn parse_number(s: &str) -> Option<f64> {
    let t = s.trim().trim_start_matches('$').replace(',', "");
    t.parse::<f64>().ok()
}

impl Dataset {
    pub fn from_path(path: &Path, column: &ColumnSpec) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
        let mut ds = Self::from_csv_str(&text, column)?;
        ds.source = path.to_path_buf();
        Ok(ds)
    }

    /// Parse CSV text. The first row is a header when the selected field is
    /// not numeric; quoted fields are accepted.
    pub fn from_csv_str(text: &str, column: &ColumnSpec) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut records = rdr.records().enumerate().peekable();
        let first = match records.peek() {
            None => return Err(Error::Data("input contains no rows".into())),
            Some((_, Err(e))) => return Err(Error::Data(format!("row 1: {e}"))),
            Some((_, Ok(r))) => r.clone(),
        };

        let (idx, name, has_header) = match column {
            ColumnSpec::Index(i) => {
                let field = first.get(*i).ok_or_else(|| Error::Data(format!("row 1 has no column {i}")))?;
                let header = parse_number(field).is_none();
                let name = if header { field.to_string() } else { format!("column {i}") };
                (*i, name, header)
            }
            ColumnSpec::Name(n) => {
                let i = first
                    .iter()
                    .position(|h| h.eq_ignore_ascii_case(n))
                    .ok_or_else(|| Error::Data(format!("no column named {n:?} in header")))?;
                (i, n.clone(), true)
            }
        };
        if has_header {
            records.next();
        }

        let mut values = Vec::new();
        for (row, rec) in records {
            let line = row + 1;
            let rec = rec.map_err(|e| Error::Data(format!("row {line}: {e}")))?;
            if rec.iter().all(|f| f.is_empty()) {
                continue;
            }
            let field = rec
                .get(idx)
                .ok_or_else(|| Error::Data(format!("row {line}: missing column {idx}")))?;
            let v = parse_number(field).ok_or_else(|| Error::Data(format!("row {line}: {field:?} is not a number")))?;
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Data(format!("row {line}: loss must be positive and finite, got {v}")));
            }
            values.push(v);
        }
        if values.is_empty() {
            return Err(Error::Data("input contains no data rows".into()));
        }
        Ok(Self {
            n: values.len(),
            values,
            source: PathBuf::new(),
            column: name,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_quotes() {
        let t = "id,\"PAID\"\n1,\"1,250.5\"\n2,30\n\n3, 7\n";
        let d = Dataset::from_csv_str(t, &ColumnSpec::Name("paid".into())).unwrap();
        assert_eq!(d.values, vec![1250.5, 30.0, 7.0]);
        assert_eq!(d.n, 3);
        let d = Dataset::from_csv_str(t, &ColumnSpec::Index(1)).unwrap();
        assert_eq!(d.column, "PAID");
    }

    #[test]
    fn headerless() {
        let d = Dataset::from_csv_str("3.5\n2\n", &ColumnSpec::default()).unwrap();
        assert_eq!(d.values, vec![3.5, 2.0]);
    }

    #[test]
    fn errors_carry_row_numbers() {
        let e = Dataset::from_csv_str("x\n1\n-2\n", &ColumnSpec::default()).unwrap_err();
        assert!(e.to_string().contains("row 3"), "{e}");
        let e = Dataset::from_csv_str("x\n1\nabc\n", &ColumnSpec::default()).unwrap_err();
        assert!(e.to_string().contains("row 3"), "{e}");
        assert!(Dataset::from_csv_str("", &ColumnSpec::default()).is_err());
        assert!(Dataset::from_csv_str("x\n", &ColumnSpec::default()).is_err());
        assert!(Dataset::from_csv_str("x\n1\n", &ColumnSpec::Name("y".into())).is_err());
    }

    #[test]
    fn column_spec_parse() {
        assert_eq!(ColumnSpec::parse("2"), ColumnSpec::Index(2));
        assert_eq!(ColumnSpec::parse("PAID"), ColumnSpec::Name("PAID".into()));
    }
}
