//! CSV record files, multi-class labels only.
//!
//! Two layouts are supported, selected by [`CsvSchema::wide`]:
//!
//! - long (default): one time step per row, consecutive rows with the same
//!   `record_id` form one record. Columns: `record_id`, the label column,
//!   then one column per channel.
//! - wide: one record per row. Columns: `record_id`, the label column, then
//!   `channels * T` sample columns in channel-major order.

use std::path::Path;

use crate::data::{Dataset, Label, SeriesRecord};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Shape of a CSV dataset file.
#[derive(Debug, Clone)]
pub struct CsvSchema {
    pub channels: usize,
    /// Header name of the label column (it must be the second column).
    pub label_column: String,
    /// One record per row instead of one time step per row.
    pub wide: bool,
}

fn line_of(record: &csv::StringRecord) -> u64 {
    record.position().map_or(0, |p| p.line())
}

fn parse_field(record: &csv::StringRecord, idx: usize, what: &str) -> Result<f64> {
    let raw = record.get(idx).ok_or_else(|| Error::Parse {
        line: line_of(record),
        message: format!("missing {what} field {idx}"),
    })?;
    raw.trim().parse::<f64>().map_err(|_| Error::Parse {
        line: line_of(record),
        message: format!("{what} field {idx} is not a number: `{raw}`"),
    })
}

fn parse_label(record: &csv::StringRecord, idx: usize) -> Result<usize> {
    let raw = record.get(idx).ok_or_else(|| Error::Parse {
        line: line_of(record),
        message: "missing label field".into(),
    })?;
    raw.trim().parse::<usize>().map_err(|_| Error::Parse {
        line: line_of(record),
        message: format!("label is not a class index: `{raw}`"),
    })
}

pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset> {
    if schema.channels == 0 {
        return Err(Error::Schema("csv schema: channels must be >= 1".into()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
    {
        let headers = reader
            .headers()
            .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
        if headers.len() < 2 || headers.get(1) != Some(schema.label_column.as_str()) {
            return Err(Error::Schema(format!(
                "{}: expected header `record_id,{},...`",
                path.display(),
                schema.label_column
            )));
        }
    }

    let mut groups: Vec<(String, usize, Vec<Vec<f32>>)> = Vec::new();
    let mut wide_records: Vec<SeriesRecord> = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| match e.position() {
            Some(p) => Error::Parse { line: p.line(), message: e.to_string() },
            None => Error::Schema(e.to_string()),
        })?;
        let id = row
            .get(0)
            .ok_or_else(|| Error::Parse { line: line_of(&row), message: "missing record_id".into() })?
            .to_string();
        let label = parse_label(&row, 1)?;
        if schema.wide {
            let values = row.len().saturating_sub(2);
            if values == 0 || values % schema.channels != 0 {
                return Err(Error::Schema(format!(
                    "line {}: {values} sample fields are not divisible by {} channels",
                    line_of(&row),
                    schema.channels
                )));
            }
            let t = values / schema.channels;
            let mut data = Vec::with_capacity(values);
            for i in 0..values {
                data.push(parse_field(&row, 2 + i, "sample")? as f32);
            }
            wide_records.push(SeriesRecord {
                record_id: id,
                samples: Tensor::from_vec(&[schema.channels, t], data)?,
                label: Label::Class(label),
            });
        } else {
            if row.len() != 2 + schema.channels {
                return Err(Error::Schema(format!(
                    "line {}: expected {} channel fields, found {}",
                    line_of(&row),
                    schema.channels,
                    row.len().saturating_sub(2)
                )));
            }
            let mut step = Vec::with_capacity(schema.channels);
            for c in 0..schema.channels {
                step.push(parse_field(&row, 2 + c, "channel")? as f32);
            }
            match groups.last_mut() {
                Some((gid, glabel, steps)) if *gid == id => {
                    if *glabel != label {
                        return Err(Error::Schema(format!(
                            "line {}: record `{id}` changes label mid-record",
                            line_of(&row)
                        )));
                    }
                    steps.push(step);
                }
                _ => groups.push((id, label, vec![step])),
            }
        }
    }

    let records = if schema.wide {
        wide_records
    } else {
        groups
            .into_iter()
            .map(|(id, label, steps)| {
                let t = steps.len();
                let mut data = vec![0f32; schema.channels * t];
                for (ti, step) in steps.iter().enumerate() {
                    for (c, &v) in step.iter().enumerate() {
                        data[c * t + ti] = v;
                    }
                }
                Ok(SeriesRecord {
                    record_id: id,
                    samples: Tensor::from_vec(&[schema.channels, t], data)?,
                    label: Label::Class(label),
                })
            })
            .collect::<Result<Vec<_>>>()?
    };
    if records.is_empty() {
        return Err(Error::Schema(format!("{}: no records", path.display())));
    }
    let num_classes = records
        .iter()
        .map(|r| match r.label {
            Label::Class(c) => c + 1,
            Label::Multi(_) => 0,
        })
        .max()
        .unwrap_or(0)
        .max(2);
    Dataset::new(records, num_classes)
}

/// Writes a multi-class dataset in the long or wide layout.
pub fn write_csv(dataset: &Dataset, path: &Path, schema: &CsvSchema) -> Result<()> {
    if dataset.is_multi_label() {
        return Err(Error::Schema(
            "csv files carry class-index labels only; use the binary format for multi-label".into(),
        ));
    }
    let mut writer = csv::WriterBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
    let c = dataset.channels();
    let io_err = |e: csv::Error| Error::Schema(format!("{}: {e}", path.display()));
    if schema.wide {
        let t = dataset.records.iter().map(|r| r.len()).max().unwrap_or(0);
        let mut header = vec!["record_id".to_string(), schema.label_column.clone()];
        header.extend((0..c * t).map(|i| format!("v{i}")));
        writer.write_record(&header[..2 + c * dataset.records[0].len()]).map_err(io_err)?;
        for r in &dataset.records {
            let Label::Class(label) = r.label else { unreachable!() };
            let mut row = vec![r.record_id.clone(), label.to_string()];
            row.extend(r.samples.data().iter().map(|v| format!("{v}")));
            writer.write_record(&row).map_err(io_err)?;
        }
    } else {
        let mut header = vec!["record_id".to_string(), schema.label_column.clone()];
        header.extend((0..c).map(|i| format!("ch{i}")));
        writer.write_record(&header).map_err(io_err)?;
        for r in &dataset.records {
            let Label::Class(label) = r.label else { unreachable!() };
            for ti in 0..r.len() {
                let mut row = vec![r.record_id.clone(), label.to_string()];
                for ci in 0..c {
                    row.push(format!("{}", r.samples.data()[ci * r.len() + ti]));
                }
                writer.write_record(&row).map_err(io_err)?;
            }
        }
    }
    writer.flush().map_err(|e| Error::io(path, e))
}
