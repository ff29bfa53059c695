//! Matrix serialization: row-major CSV and JSON `{dim, entries}`.

use serde::{Deserialize, Serialize};

use super::{GeometryError, Matrix, Result};

/// JSON form of a square matrix. `entries` holds the rows in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixJson {
    pub dim: usize,
    pub entries: Vec<Vec<f64>>,
}

impl MatrixJson {
    pub fn from_matrix(m: &Matrix) -> Self {
        MatrixJson {
            dim: m.nrows(),
            entries: (0..m.nrows())
                .map(|i| m.row(i).iter().copied().collect())
                .collect(),
        }
    }

    pub fn to_matrix(&self) -> Result<Matrix> {
        rows_to_matrix(&self.entries, Some(self.dim))
    }
}

pub(crate) fn rows_to_matrix(rows: &[Vec<f64>], dim: Option<usize>) -> Result<Matrix> {
    let n = dim.unwrap_or(rows.len());
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(GeometryError::Parse(format!(
            "expected {n} rows of {n} entries"
        )));
    }
    Ok(Matrix::from_fn(n, n, |i, j| rows[i][j]))
}

pub fn matrix_to_json(m: &Matrix) -> String {
    serde_json::to_string(&MatrixJson::from_matrix(m)).expect("finite matrix serializes")
}

pub fn matrix_from_json(text: &str) -> Result<Matrix> {
    let parsed: MatrixJson =
        serde_json::from_str(text).map_err(|e| GeometryError::Parse(e.to_string()))?;
    parsed.to_matrix()
}

/// One line per row, comma separated, shortest round-trip float formatting.
pub fn matrix_to_csv(m: &Matrix) -> String {
    let mut out = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = m.row(i).iter().map(|x| format!("{x:?}")).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn matrix_from_csv(text: &str) -> Result<Matrix> {
    let rows = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            line.split(',')
                .map(|field| {
                    field
                        .trim()
                        .parse::<f64>()
                        .map_err(|e| GeometryError::Parse(format!("{field:?}: {e}")))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    rows_to_matrix(&rows, None)
}
