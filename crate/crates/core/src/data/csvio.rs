//! Long-format CSV ingestion and emission.
//!
//! Expected layout: a header row naming the columns of the schema, then one
//! row per (timestamp, node) with the target value and exogenous values.
//! Timestamps are ISO-8601. Field values must not contain commas; this is
//! machine-generated data interchange, not general CSV.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDateTime};

use super::{DataError, SpatioTemporalDataset};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvSchema {
    pub time_col: String,
    pub node_col: String,
    pub value_col: String,
    pub exog_cols: Vec<String>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            time_col: "timestamp".into(),
            node_col: "node".into(),
            value_col: "value".into(),
            exog_cols: Vec::new(),
        }
    }
}

/// What ingestion had to repair: cells absent from the file are zero-filled
/// (no record means no demand) and counted here.
#[derive(Debug, Clone, Default)]
pub struct LoadReport {
    pub missing_cells: usize,
    pub total_cells: usize,
}

impl LoadReport {
    pub fn missing_fraction(&self) -> f64 {
        if self.total_cells == 0 {
            0.0
        } else {
            self.missing_cells as f64 / self.total_cells as f64
        }
    }
}

fn parse_timestamp(raw: &str, line: usize) -> Result<i64, DataError> {
    let trimmed = raw.trim();
    for format in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(trimmed, format) {
            return Ok(dt.and_utc().timestamp());
        }
    }
    Err(DataError::BadTimestamp {
        line,
        value: trimmed.to_string(),
    })
}

pub(crate) fn format_timestamp(epoch_seconds: i64) -> String {
    DateTime::from_timestamp(epoch_seconds, 0)
        .expect("valid epoch")
        .naive_utc()
        .format("%Y-%m-%dT%H:%M:%S")
        .to_string()
}

/// Load a single contiguous dataset; fails on irregular spacing.
pub fn load_csv(
    path: &Path,
    schema: &CsvSchema,
) -> Result<(SpatioTemporalDataset, LoadReport), DataError> {
    let (mut segments, report) = load_csv_segmented(path, schema, &[])?;
    Ok((segments.remove(0), report))
}

/// Load a CSV that covers several disjoint recording periods.
///
/// `segment_starts` lists the ISO-8601 timestamps opening each segment after
/// the first; rows partition at those instants and each segment must be
/// equally spaced on its own.
pub fn load_csv_segmented(
    path: &Path,
    schema: &CsvSchema,
    segment_starts: &[String],
) -> Result<(Vec<SpatioTemporalDataset>, LoadReport), DataError> {
    let file = std::fs::File::open(path)?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| DataError::Invariant("empty CSV file".into()))??;
    let columns: Vec<&str> = header.trim_end().split(',').map(str::trim).collect();
    let col_index = |name: &str| -> Result<usize, DataError> {
        columns
            .iter()
            .position(|c| *c == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    };
    let time_idx = col_index(&schema.time_col)?;
    let node_idx = col_index(&schema.node_col)?;
    let value_idx = col_index(&schema.value_col)?;
    let exog_idx: Vec<usize> = schema
        .exog_cols
        .iter()
        .map(|c| col_index(c))
        .collect::<Result<_, _>>()?;

    let d = 1 + exog_idx.len();
    // (timestamp, node) -> channel values; BTreeMap keeps node order stable
    let mut cells: BTreeMap<(i64, String), Vec<f64>> = BTreeMap::new();
    for (line_no, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row_no = line_no + 2; // 1-based, after the header
        let fields: Vec<&str> = line.trim_end().split(',').map(str::trim).collect();
        if fields.len() != columns.len() {
            return Err(DataError::RaggedRow {
                line: row_no,
                expected: columns.len(),
                found: fields.len(),
            });
        }
        let timestamp = parse_timestamp(fields[time_idx], row_no)?;
        let node = fields[node_idx].to_string();
        let mut channels = Vec::with_capacity(d);
        for (column, idx) in std::iter::once((&schema.value_col, value_idx))
            .chain(schema.exog_cols.iter().zip(exog_idx.iter().copied()))
        {
            let value: f64 = fields[idx].parse().map_err(|_| DataError::BadNumber {
                line: row_no,
                column: column.clone(),
            })?;
            channels.push(value);
        }
        if cells.insert((timestamp, node.clone()), channels).is_some() {
            return Err(DataError::DuplicateRow {
                timestamp: format_timestamp(timestamp),
                node,
            });
        }
    }
    if cells.is_empty() {
        return Err(DataError::Invariant("CSV has no data rows".into()));
    }

    let mut timestamps: Vec<i64> = cells.keys().map(|(t, _)| *t).collect();
    timestamps.dedup();
    let mut node_ids: Vec<String> = cells.keys().map(|(_, n)| n.clone()).collect();
    node_ids.sort();
    node_ids.dedup();

    let boundaries: Vec<i64> = segment_starts
        .iter()
        .enumerate()
        .map(|(i, s)| parse_timestamp(s, i + 1))
        .collect::<Result<_, _>>()?;

    let mut report = LoadReport {
        missing_cells: 0,
        total_cells: timestamps.len() * node_ids.len(),
    };
    let mut segments = Vec::new();
    let mut segment_ts: Vec<Vec<i64>> = vec![Vec::new(); boundaries.len() + 1];
    for &t in &timestamps {
        let bucket = boundaries.iter().filter(|&&b| t >= b).count();
        segment_ts[bucket].push(t);
    }
    for ts in segment_ts {
        if ts.is_empty() {
            return Err(DataError::Invariant(
                "a configured segment contains no rows".into(),
            ));
        }
        let mut values = Vec::with_capacity(ts.len() * node_ids.len() * d);
        for &t in &ts {
            for node in &node_ids {
                match cells.get(&(t, node.clone())) {
                    Some(channels) => values.extend_from_slice(channels),
                    None => {
                        report.missing_cells += 1;
                        values.extend(std::iter::repeat_n(0.0, d));
                    }
                }
            }
        }
        segments.push(SpatioTemporalDataset::new(values, ts, node_ids.clone(), d)?);
    }
    Ok((segments, report))
}

/// Emit a dataset in the long format `load_csv` reads back; floats use the
/// shortest round-trip representation, so write/load is value-exact.
pub fn write_csv(
    ds: &SpatioTemporalDataset,
    schema: &CsvSchema,
    path: &Path,
) -> Result<(), DataError> {
    if schema.exog_cols.len() + 1 != ds.num_channels() {
        return Err(DataError::Invariant(format!(
            "schema names {} channels, dataset has {}",
            schema.exog_cols.len() + 1,
            ds.num_channels()
        )));
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(
        out,
        "{},{},{}",
        schema.time_col, schema.node_col, schema.value_col
    )?;
    for c in &schema.exog_cols {
        write!(out, ",{c}")?;
    }
    writeln!(out)?;
    for step in 0..ds.num_steps() {
        let stamp = format_timestamp(ds.timestamps()[step]);
        for node in 0..ds.num_nodes() {
            write!(
                out,
                "{},{},{}",
                stamp,
                ds.node_ids()[node],
                ds.get(step, node, 0)
            )?;
            for channel in 1..ds.num_channels() {
                write!(out, ",{}", ds.get(step, node, channel))?;
            }
            writeln!(out)?;
        }
    }
    out.flush()?;
    Ok(())
}
