//! Plain-text interchange formats: row-major matrix JSON and snapshot CSV.

use crate::error::{Error, Result};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

/// `{rows, cols, data}` with `data` in row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixJson {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl MatrixJson {
    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        if self.rows.checked_mul(self.cols) != Some(self.data.len()) {
            return Err(Error::Parse(format!(
                "matrix declares {}x{} but carries {} entries",
                self.rows,
                self.cols,
                self.data.len()
            )));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

impl From<&DMatrix<f64>> for MatrixJson {
    fn from(m: &DMatrix<f64>) -> Self {
        let data = (0..m.nrows()).flat_map(|i| m.row(i).iter().cloned().collect::<Vec<_>>()).collect();
        MatrixJson { rows: m.nrows(), cols: m.ncols(), data }
    }
}

/// serde adapter: `#[serde(with = "crate::formats::matrix")]` on a `DMatrix<f64>` field.
pub mod matrix {
    use super::MatrixJson;
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        MatrixJson::from(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        MatrixJson::deserialize(d)?.to_matrix().map_err(serde::de::Error::custom)
    }
}

/// Same adapter for `Option<DMatrix<f64>>`.
pub mod opt_matrix {
    use super::MatrixJson;
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Option<DMatrix<f64>>, s: S) -> Result<S::Ok, S::Error> {
        m.as_ref().map(MatrixJson::from).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<DMatrix<f64>>, D::Error> {
        Option::<MatrixJson>::deserialize(d)?
            .map(|m| m.to_matrix().map_err(serde::de::Error::custom))
            .transpose()
    }
}

pub fn parse_matrix_json(text: &str) -> Result<DMatrix<f64>> {
    serde_json::from_str::<MatrixJson>(text)?.to_matrix()
}

/// Paired samples `(x_i, x⁺_i)`, one pair per row.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotSet {
    pub x: DMatrix<f64>,
    pub x_plus: DMatrix<f64>,
}

impl SnapshotSet {
    pub fn new(x: DMatrix<f64>, x_plus: DMatrix<f64>) -> Result<Self> {
        if x.shape() != x_plus.shape() {
            return Err(Error::DimensionMismatch(format!(
                "x is {}x{} but x_plus is {}x{}",
                x.nrows(),
                x.ncols(),
                x_plus.nrows(),
                x_plus.ncols()
            )));
        }
        Ok(Self { x, x_plus })
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn state_dim(&self) -> usize {
        self.x.ncols()
    }

    /// Writes the header `x0..x{n−1},xp0..xp{n−1}` and one pair per row.
    ///
    /// Floats use the shortest representation that round-trips exactly.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let n = self.state_dim();
        let mut out = csv::Writer::from_writer(w);
        let header: Vec<String> = (0..n)
            .map(|i| format!("x{i}"))
            .chain((0..n).map(|i| format!("xp{i}")))
            .collect();
        out.write_record(&header)?;
        let mut record = Vec::with_capacity(2 * n);
        for r in 0..self.len() {
            record.clear();
            record.extend((0..n).map(|c| self.x[(r, c)].to_string()));
            record.extend((0..n).map(|c| self.x_plus[(r, c)].to_string()));
            out.write_record(&record)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let header = rdr.headers()?.clone();
        if header.is_empty() || header.len() % 2 != 0 {
            return Err(Error::Parse(format!("snapshot header has {} columns; expected 2n", header.len())));
        }
        let n = header.len() / 2;
        for (i, name) in header.iter().enumerate() {
            let expected = if i < n { format!("x{i}") } else { format!("xp{}", i - n) };
            if name != expected {
                return Err(Error::Parse(format!("header column {i} is `{name}`, expected `{expected}`")));
            }
        }
        let mut xs = Vec::new();
        let mut xps = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() != 2 * n {
                return Err(Error::Parse(format!("row {} has {} fields, expected {}", line + 1, rec.len(), 2 * n)));
            }
            for (i, field) in rec.iter().enumerate() {
                let v: f64 = field
                    .parse()
                    .map_err(|_| Error::Parse(format!("row {}: `{field}` is not a number", line + 1)))?;
                if !v.is_finite() {
                    return Err(Error::Parse(format!("row {}: non-finite value", line + 1)));
                }
                if i < n {
                    xs.push(v);
                } else {
                    xps.push(v);
                }
            }
        }
        let rows = xs.len() / n;
        Self::new(
            DMatrix::from_row_slice(rows, n, &xs),
            DMatrix::from_row_slice(rows, n, &xps),
        )
    }
}
