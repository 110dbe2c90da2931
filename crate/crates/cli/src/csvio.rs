//! CSV reading and writing. Floats are written with 17 significant digits
//! so that a parse reproduces the exact value.

use std::fs;
use std::path::{Path, PathBuf};

use cicada_core::{DetectionReport, Matrix, TimeSeries};

use crate::error::{CliError, CliResult};

pub const LABEL_COLUMN: &str = "label";

pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// A CSV file held as a header plus string cells.
pub struct Table {
    pub path: PathBuf,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn read(path: &Path) -> CliResult<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| csv_error(path, e))?;
        let header = reader
            .headers()
            .map_err(|e| csv_error(path, e))?
            .iter()
            .map(str::to_string)
            .collect();
        let rows = reader
            .records()
            .map(|r| {
                r.map(|rec| rec.iter().map(str::to_string).collect())
                    .map_err(|e| csv_error(path, e))
            })
            .collect::<CliResult<Vec<Vec<String>>>>()?;
        Ok(Self {
            path: path.to_path_buf(),
            header,
            rows,
        })
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn require(&self, name: &str) -> CliResult<usize> {
        self.column_index(name)
            .ok_or_else(|| CliError::format(&self.path, format!("missing column `{name}`")))
    }

    pub fn cell<T: std::str::FromStr>(&self, row: usize, col: usize) -> CliResult<T> {
        let text = &self.rows[row][col];
        text.parse().map_err(|_| {
            CliError::format(
                &self.path,
                format!(
                    "row {}: cannot parse `{text}` in column `{}`",
                    row + 2,
                    self.header[col]
                ),
            )
        })
    }

    pub fn column<T: std::str::FromStr>(&self, col: usize) -> CliResult<Vec<T>> {
        (0..self.rows.len()).map(|r| self.cell(r, col)).collect()
    }
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(path, io),
        other => CliError::format(path, format!("{other:?}")),
    }
}

fn parse_label(path: &Path, row: usize, text: &str) -> CliResult<u8> {
    match text.parse::<f64>() {
        Ok(v) if v == 0.0 => Ok(0),
        Ok(v) if v == 1.0 => Ok(1),
        _ => Err(CliError::format(
            path,
            format!("row {}: label must be 0 or 1, got `{text}`", row + 2),
        )),
    }
}

pub fn read_series(path: &Path) -> CliResult<TimeSeries> {
    let table = Table::read(path)?;
    let label_col = match table.header.last() {
        Some(h) if h == LABEL_COLUMN => Some(table.header.len() - 1),
        _ => None,
    };
    let dim = label_col.unwrap_or(table.header.len());
    if dim == 0 {
        return Err(CliError::format(path, "no value columns"));
    }
    if table.rows.is_empty() {
        return Err(CliError::format(path, "no data rows"));
    }
    let mut data = Vec::with_capacity(table.rows.len() * dim);
    let mut labels = label_col.map(|_| Vec::with_capacity(table.rows.len()));
    for (r, row) in table.rows.iter().enumerate() {
        if row.len() != table.header.len() {
            return Err(CliError::format(
                path,
                format!("row {} has {} fields, expected {}", r + 2, row.len(), table.header.len()),
            ));
        }
        for c in 0..dim {
            let v: f64 = table.cell(r, c)?;
            if !v.is_finite() {
                return Err(CliError::format(path, format!("row {}: non-finite value", r + 2)));
            }
            data.push(v);
        }
        if let (Some(c), Some(l)) = (label_col, labels.as_mut()) {
            l.push(parse_label(path, r, &row[c])?);
        }
    }
    let values = Matrix::from_vec(table.rows.len(), dim, data)
        .map_err(|e| CliError::format(path, e.to_string()))?;
    let names = table.header[..dim].to_vec();
    Ok(TimeSeries::new(names, values, labels)?)
}

pub fn series_csv(series: &TimeSeries) -> String {
    let mut out = series.names.join(",");
    if series.labels.is_some() {
        out.push(',');
        out.push_str(LABEL_COLUMN);
    }
    out.push('\n');
    for t in 0..series.len() {
        let row: Vec<String> = series.values.row(t).iter().map(|&v| num(v)).collect();
        out.push_str(&row.join(","));
        if let Some(l) = &series.labels {
            out.push(',');
            out.push_str(&l[t].to_string());
        }
        out.push('\n');
    }
    out
}

/// `t,anosc,y_pred,w_<expert>...,A_<expert>...`; `y_pred` is empty when
/// no threshold was applied.
pub fn report_csv(report: &DetectionReport) -> String {
    let mut header = vec!["t".to_string(), "anosc".into(), "y_pred".into()];
    header.extend(report.experts.iter().map(|e| format!("w_{e}")));
    header.extend(report.experts.iter().map(|e| format!("A_{e}")));
    let mut out = header.join(",");
    out.push('\n');
    for (i, &t) in report.times.iter().enumerate() {
        let mut row = vec![t.to_string(), num(report.anosc[i])];
        row.push(
            report
                .predictions
                .as_ref()
                .map(|p| p[i].to_string())
                .unwrap_or_default(),
        );
        row.extend(report.weights.row(i).iter().map(|&w| num(w)));
        row.extend(report.components.row(i).iter().map(|&a| num(a)));
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn write(path: &Path, contents: &str) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn series_round_trip_is_exact() {
        let values = Matrix::from_rows(&[
            vec![0.1, -1.0 / 3.0],
            vec![std::f64::consts::PI, 1e-300],
            vec![-2.5e17, 0.0],
        ]);
        let s = TimeSeries::new(vec!["a".into(), "b".into()], values, Some(vec![0, 1, 0])).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        write(&p, &series_csv(&s)).unwrap();
        assert_eq!(read_series(&p).unwrap(), s);
    }

    #[test]
    fn ragged_rows_and_bad_labels_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        write(&p, "a,b\n1,2\n3\n").unwrap();
        assert_eq!(read_series(&p).unwrap_err().exit_code(), 3);
        write(&p, "a,label\n1,2\n").unwrap();
        assert_eq!(read_series(&p).unwrap_err().exit_code(), 3);
        write(&p, "a,b\n1,x\n").unwrap();
        assert_eq!(read_series(&p).unwrap_err().exit_code(), 3);
    }

    #[test]
    fn missing_file_is_an_io_error() {
        let err = read_series(Path::new("/nonexistent/x.csv")).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }
}
