use std::collections::HashSet;
use std::path::Path;

use harchow::Matrix;

use crate::CliError;

/// Numeric columns of a CSV file with a header row.
pub struct Table {
    pub headers: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let file = std::fs::File::open(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(file);
        let headers: Vec<String> = rdr
            .headers()
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
            .iter()
            .map(str::to_owned)
            .collect();
        let mut seen = HashSet::new();
        if let Some(dup) = headers.iter().find(|h| !seen.insert(h.as_str())) {
            return Err(CliError::Usage(format!("duplicate column '{dup}'")));
        }
        let mut columns = vec![Vec::new(); headers.len()];
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            for (j, field) in rec.iter().enumerate() {
                let v = parse_number(field).ok_or_else(|| {
                    CliError::Usage(format!("row {}, column '{}': not a number: '{field}'", i + 2, headers[j]))
                })?;
                columns[j].push(v);
            }
        }
        if columns.first().is_none_or(Vec::is_empty) {
            return Err(CliError::Usage(format!("{}: no data rows", path.display())));
        }
        Ok(Self { headers, columns })
    }

    pub fn column(&self, name: &str) -> Result<&[f64], CliError> {
        self.headers
            .iter()
            .position(|h| h == name)
            .map(|j| self.columns[j].as_slice())
            .ok_or_else(|| CliError::Usage(format!("no column named '{name}'")))
    }

    pub fn matrix(&self, names: &[String]) -> Result<Matrix, CliError> {
        let cols = names.iter().map(|n| self.column(n)).collect::<Result<Vec<_>, _>>()?;
        let t = self.columns[0].len();
        let mut m = Matrix::zeros(t, cols.len());
        for (j, c) in cols.iter().enumerate() {
            for (i, v) in c.iter().enumerate() {
                m[(i, j)] = *v;
            }
        }
        Ok(m)
    }
}

/// Plain decimal notation only: no thousands separators, no `inf`/`nan`.
fn parse_number(s: &str) -> Option<f64> {
    let ok = !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit() || matches!(b, b'.' | b'-' | b'+' | b'e' | b'E'));
    if !ok {
        return None;
    }
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Column roles must be disjoint and name existing columns.
pub fn check_roles(y: &str, x: &[String], z: &[String]) -> Result<(), CliError> {
    let mut seen = HashSet::new();
    for name in std::iter::once(y).chain(x.iter().map(String::as_str)).chain(z.iter().map(String::as_str)) {
        if !seen.insert(name) {
            return Err(CliError::Usage(format!("column '{name}' is given more than one role")));
        }
    }
    Ok(())
}
