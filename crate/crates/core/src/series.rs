//! Count time series with per-cell missingness.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// A `T x n` table of counts; `None` marks a missing cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountSeries {
    n: usize,
    rows: Vec<Vec<Option<u64>>>,
}

impl CountSeries {
    pub fn new(n: usize, rows: Vec<Vec<Option<u64>>>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("series needs at least one column".into()));
        }
        if let Some((t, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != n) {
            return Err(Error::Dimension(format!(
                "row {} has {} values, expected {n}",
                t + 1,
                r.len()
            )));
        }
        Ok(Self { n, rows })
    }

    /// Fully observed univariate series.
    pub fn univariate(y: &[u64]) -> Self {
        Self {
            n: 1,
            rows: y.iter().map(|&v| vec![Some(v)]).collect(),
        }
    }

    /// Fully observed series from a `T x n` table.
    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let n = rows.first().map_or(1, Vec::len);
        Self::new(
            n,
            rows.iter().map(|r| r.iter().map(|&v| Some(v)).collect()).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Observation at 1-based time `t`.
    pub fn row(&self, t: usize) -> &[Option<u64>] {
        &self.rows[t - 1]
    }

    pub fn rows(&self) -> &[Vec<Option<u64>>] {
        &self.rows
    }

    pub fn push(&mut self, row: Vec<Option<u64>>) -> Result<()> {
        if row.len() != self.n {
            return Err(Error::Dimension(format!(
                "row has {} values, expected {}",
                row.len(),
                self.n
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    /// Values of one coordinate over time.
    pub fn column(&self, coord: usize) -> Vec<Option<u64>> {
        self.rows.iter().map(|r| r[coord]).collect()
    }

    /// First `t` rows.
    pub fn head(&self, t: usize) -> CountSeries {
        Self {
            n: self.n,
            rows: self.rows[..t.min(self.rows.len())].to_vec(),
        }
    }

    pub fn max_observed(&self) -> Option<u64> {
        self.rows.iter().flatten().flatten().copied().max()
    }

    /// CSV with header `t,y_1,...,y_n`; missing cells are empty.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t");
        for i in 1..=self.n {
            let _ = write!(s, ",y_{i}");
        }
        s.push('\n');
        for (t, r) in self.rows.iter().enumerate() {
            let _ = write!(s, "{}", t + 1);
            for v in r {
                s.push(',');
                if let Some(v) = v {
                    let _ = write!(s, "{v}");
                }
            }
            s.push('\n');
        }
        s
    }

    /// Parse the format written by [`CountSeries::to_csv`]. The first
    /// column is a time index and is ignored.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty series file".into()))?;
        let n = header.split(',').count().saturating_sub(1);
        if n == 0 {
            return Err(Error::Parse("series header needs a time column and at least one value column".into()));
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let cells: Vec<&str> = line.split(',').map(str::trim).collect();
            if cells.len() != n + 1 {
                return Err(Error::Parse(format!(
                    "data line {}: expected {} fields, found {}",
                    i + 1,
                    n + 1,
                    cells.len()
                )));
            }
            let row = cells[1..]
                .iter()
                .map(|c| {
                    if c.is_empty() || *c == "NA" {
                        Ok(None)
                    } else {
                        c.parse::<u64>().map(Some).map_err(|e| {
                            Error::Parse(format!("data line {}: '{c}' is not a count ({e})", i + 1))
                        })
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Self::new(n, rows)
    }
}
