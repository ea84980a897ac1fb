//! CSV ingestion and export for multichannel series.
//!
//! Input format: header row, one timestamp column referenced by name, every
//! other column a numeric channel. Channel order follows file order.

use std::path::Path;

use crate::dataset::toy::LabeledSeries;
use crate::error::{Error, Result};

/// A time-major multichannel series: `values[t * channels + c]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiSeries {
    pub names: Vec<String>,
    pub rows: usize,
    pub values: Vec<f64>,
}

impl MultiSeries {
    pub fn channels(&self) -> usize {
        self.names.len()
    }

    pub fn from_single(values: Vec<f64>, name: &str) -> Self {
        MultiSeries {
            names: vec![name.to_string()],
            rows: values.len(),
            values,
        }
    }
}

fn csv_err(path: &str, e: csv::Error) -> Error {
    if e.is_io_error() {
        if let csv::ErrorKind::Io(io) = e.into_kind() {
            return Error::Io(io);
        }
        unreachable!("is_io_error guarantees an Io kind");
    }
    Error::FileFormat {
        path: path.to_string(),
        message: e.to_string(),
    }
}

/// Read a CSV, dropping the named date column and parsing the rest as f64
/// channels. Cell failures report the 1-based data row and column name.
pub fn load_csv(path: impl AsRef<Path>, date_column: &str) -> Result<MultiSeries> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_err(&display, e))?;
    let headers = reader.headers().map_err(|e| Error::FileFormat {
        path: display.clone(),
        message: format!("unreadable header: {e}"),
    })?;
    let date_idx = headers.iter().position(|h| h == date_column);
    if date_idx.is_none() {
        return Err(Error::InvalidArg(format!(
            "{display}: date column {date_column:?} not found among {:?}",
            headers.iter().collect::<Vec<_>>()
        )));
    }
    let date_idx = date_idx.unwrap();
    let names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != date_idx)
        .map(|(_, h)| h.to_string())
        .collect();
    if names.is_empty() {
        return Err(Error::InvalidArg(format!("{display}: no channels besides the date column")));
    }

    let mut values = Vec::new();
    let mut rows = 0usize;
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::FileFormat {
            path: display.clone(),
            message: format!("row {}: {e}", r + 1),
        })?;
        let mut name_iter = names.iter();
        for (i, cell) in record.iter().enumerate() {
            if i == date_idx {
                continue;
            }
            let column = name_iter.next().expect("record width checked by csv reader");
            let v: f64 = cell.trim().parse().map_err(|e| Error::Csv {
                path: display.clone(),
                row: r + 1,
                column: column.clone(),
                message: format!("{e} (cell {cell:?})"),
            })?;
            values.push(v);
        }
        rows += 1;
    }
    Ok(MultiSeries {
        names,
        rows,
        values,
    })
}

/// Write a multichannel series with a synthetic integer date column, the
/// inverse of [`load_csv`].
pub fn save_csv(path: impl AsRef<Path>, series: &MultiSeries) -> Result<()> {
    let display = path.as_ref().display().to_string();
    let fail = |e| csv_err(&display, e);
    let mut writer = csv::Writer::from_path(path.as_ref()).map_err(fail)?;
    let mut header = vec!["date".to_string()];
    header.extend(series.names.iter().cloned());
    writer.write_record(&header).map_err(fail)?;
    let c = series.channels();
    for t in 0..series.rows {
        let mut record = vec![t.to_string()];
        for ch in 0..c {
            record.push(format!("{}", series.values[t * c + ch]));
        }
        writer.write_record(&record).map_err(fail)?;
    }
    writer.flush()?;
    Ok(())
}

/// Export a labeled toy series as (t, value, event_state_or_blank) rows; the
/// state column is filled for every step inside an event's span.
pub fn export_toy_csv(path: impl AsRef<Path>, series: &LabeledSeries, span: usize) -> Result<()> {
    let display = path.as_ref().display().to_string();
    let fail = |e| csv_err(&display, e);
    let mut writer = csv::Writer::from_path(path.as_ref()).map_err(fail)?;
    writer.write_record(["t", "value", "event_state"]).map_err(fail)?;
    let mut state_at = vec![None::<usize>; series.values.len()];
    for (k, &start) in series.event_start_indices.iter().enumerate() {
        for slot in state_at.iter_mut().skip(start).take(span) {
            *slot = Some(series.event_states[k]);
        }
    }
    for (t, &v) in series.values.iter().enumerate() {
        let state = state_at[t].map(|s| s.to_string()).unwrap_or_default();
        writer.write_record([t.to_string(), format!("{v}"), state]).map_err(fail)?;
    }
    writer.flush()?;
    Ok(())
}
