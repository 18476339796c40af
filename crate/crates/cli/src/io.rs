//! CSV input and output. Missing observations are empty cells.

use std::fs::File;
use std::path::Path;

use warpdlm::CountSeries;

use crate::CliError;

/// Read a count series. A leading `t` column is ignored.
pub fn read_series(path: &Path) -> Result<CountSeries, CliError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Config(format!("data: {}: {e}", path.display())))?;
    let headers = rdr
        .headers()
        .map_err(|e| CliError::Config(format!("data: {}: {e}", path.display())))?
        .clone();
    let skip = usize::from(headers.get(0) == Some("t"));
    let n = headers.len() - skip;
    if n == 0 {
        return Err(CliError::Config(format!("data: {} has no series columns", path.display())));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Config(format!("data: {}: {e}", path.display())))?;
        let row = rec
            .iter()
            .skip(skip)
            .map(|cell| {
                if cell.is_empty() {
                    Ok(None)
                } else {
                    cell.parse::<u64>().map(Some).map_err(|_| {
                        CliError::Config(format!(
                            "data: {} row {}: '{cell}' is not a non-negative integer",
                            path.display(),
                            i + 1
                        ))
                    })
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    CountSeries::new(n, rows).map_err(|e| CliError::Config(format!("data: {}: {e}", path.display())))
}

pub fn write_series(path: &Path, y: &CountSeries) -> Result<(), CliError> {
    let mut w = Table::create(path, &series_header(y.n()))?;
    for t in 1..=y.len() {
        let mut row = vec![t.to_string()];
        row.extend(y.row(t).iter().map(|v| v.map_or(String::new(), |c| c.to_string())));
        w.row(&row)?;
    }
    w.finish()
}

pub fn series_header(n: usize) -> Vec<String> {
    std::iter::once("t".to_string()).chain((1..=n).map(|j| format!("y{j}"))).collect()
}

/// Write `key,value` pairs.
pub fn write_pairs(path: &Path, pairs: &[(String, String)]) -> Result<(), CliError> {
    let mut w = Table::create(path, &["key", "value"])?;
    for (k, v) in pairs {
        w.row(&[k.as_str(), v.as_str()])?;
    }
    w.finish()
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// A CSV file written row by row and flushed after every row.
pub struct Table {
    inner: csv::Writer<File>,
    path: String,
}

impl Table {
    pub fn create<S: AsRef<str>>(path: &Path, header: &[S]) -> Result<Self, CliError> {
        let file = File::create(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_file(file, path, Some(header))
    }

    /// Append to an existing file without repeating the header.
    pub fn append(path: &Path) -> Result<Self, CliError> {
        let file = std::fs::OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_file::<&str>(file, path, None)
    }

    fn from_file<S: AsRef<str>>(file: File, path: &Path, header: Option<&[S]>) -> Result<Self, CliError> {
        let mut t = Self {
            inner: csv::Writer::from_writer(file),
            path: path.display().to_string(),
        };
        if let Some(h) = header {
            t.row(h)?;
        }
        Ok(t)
    }

    pub fn row<S: AsRef<str>>(&mut self, fields: &[S]) -> Result<(), CliError> {
        self.inner
            .write_record(fields.iter().map(|f| f.as_ref()))
            .and_then(|_| self.inner.flush().map_err(csv::Error::from))
            .map_err(|e| CliError::Io(format!("{}: {e}", self.path)))
    }

    pub fn finish(mut self) -> Result<(), CliError> {
        self.inner
            .flush()
            .map_err(|e| CliError::Io(format!("{}: {e}", self.path)))
    }
}

/// Shortest round-trip formatting of a float.
pub fn num(x: f64) -> String {
    format!("{x}")
}
