//! CSV persistence for observation streams.
//!
//! Floats are written in shortest round-trip form, so a write followed by a
//! read is bit-exact.

use std::io::{Read, Write};
use std::path::Path;

use super::{DataError, FeatureVector, GroundTruthFrame, PairedSample, SensorFrame, FEATURE_DIM};

/// A row type with a fixed all-float column layout.
pub trait CsvRow: Sized {
    fn header() -> Vec<String>;
    fn to_fields(&self) -> Vec<f64>;
    fn from_fields(fields: &[f64]) -> Self;
}

const SENSOR_COLS: [&str; 15] = [
    "t", "theta_w", "theta_x", "theta_y", "theta_z", "lacc_x", "lacc_y", "lacc_z", "grav_x", "grav_y",
    "grav_z", "gyro_x", "gyro_y", "gyro_z", "pres",
];

const TRUTH_COLS: [&str; 15] = [
    "t", "qh_w", "qh_x", "qh_y", "qh_z", "ql_w", "ql_x", "ql_y", "ql_z", "qu_w", "qu_x", "qu_y", "qu_z",
    "l_l", "l_u",
];

const FEATURE_COLS: [&str; FEATURE_DIM] = [
    "rel_pres", "rel_theta_w", "rel_theta_x", "rel_theta_y", "rel_theta_z", "lacc_x", "lacc_y", "lacc_z",
    "gyro_x", "gyro_y", "gyro_z", "grav_x", "grav_y", "grav_z", "l_l", "l_u",
];

fn split14(fields: &[f64]) -> (f64, [f64; 14]) {
    (fields[0], std::array::from_fn(|i| fields[i + 1]))
}

impl CsvRow for SensorFrame {
    fn header() -> Vec<String> {
        SENSOR_COLS.iter().map(|s| s.to_string()).collect()
    }

    fn to_fields(&self) -> Vec<f64> {
        std::iter::once(self.t).chain(self.values()).collect()
    }

    fn from_fields(fields: &[f64]) -> Self {
        let (t, v) = split14(fields);
        SensorFrame::from_values(t, &v)
    }
}

impl CsvRow for GroundTruthFrame {
    fn header() -> Vec<String> {
        TRUTH_COLS.iter().map(|s| s.to_string()).collect()
    }

    fn to_fields(&self) -> Vec<f64> {
        std::iter::once(self.t).chain(self.values()).collect()
    }

    fn from_fields(fields: &[f64]) -> Self {
        let (t, v) = split14(fields);
        GroundTruthFrame::from_values(t, &v)
    }
}

impl CsvRow for PairedSample {
    fn header() -> Vec<String> {
        let mut h = SensorFrame::header();
        h.extend(TRUTH_COLS.iter().map(|c| format!("truth_{c}")));
        h.push("dt_pair".into());
        h
    }

    fn to_fields(&self) -> Vec<f64> {
        let mut f = self.sensor.to_fields();
        f.extend(self.truth.to_fields());
        f.push(self.dt_pair);
        f
    }

    fn from_fields(fields: &[f64]) -> Self {
        PairedSample {
            sensor: SensorFrame::from_fields(&fields[..15]),
            truth: GroundTruthFrame::from_fields(&fields[15..30]),
            dt_pair: fields[30],
        }
    }
}

impl CsvRow for FeatureVector {
    fn header() -> Vec<String> {
        FEATURE_COLS.iter().map(|s| s.to_string()).collect()
    }

    fn to_fields(&self) -> Vec<f64> {
        self.0.to_vec()
    }

    fn from_fields(fields: &[f64]) -> Self {
        FeatureVector(std::array::from_fn(|i| fields[i]))
    }
}

pub fn write_rows<R: CsvRow, W: Write>(out: W, rows: &[R]) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(R::header()).map_err(csv_io)?;
    for row in rows {
        w.write_record(row.to_fields().iter().map(|v| v.to_string())).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<R: CsvRow, I: Read>(input: I) -> Result<Vec<R>, DataError> {
    let header = R::header();
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let got: Vec<String> = rdr
        .headers()
        .map_err(|e| DataError::Parse { line: 1, msg: e.to_string() })?
        .iter()
        .map(str::to_string)
        .collect();
    if got != header {
        return Err(DataError::Parse { line: 1, msg: format!("unexpected header {got:?}") });
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            DataError::Parse { line, msg: e.to_string() }
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != header.len() {
            return Err(DataError::Parse {
                line,
                msg: format!("expected {} columns, found {}", header.len(), rec.len()),
            });
        }
        let fields = rec
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<Vec<f64>, _>>()
            .map_err(|e| DataError::Parse { line, msg: e.to_string() })?;
        rows.push(R::from_fields(&fields));
    }
    Ok(rows)
}

pub fn csv_write<R: CsvRow>(path: impl AsRef<Path>, rows: &[R]) -> Result<(), DataError> {
    let f = std::fs::File::create(path)?;
    write_rows(std::io::BufWriter::new(f), rows)
}

pub fn csv_read<R: CsvRow>(path: impl AsRef<Path>) -> Result<Vec<R>, DataError> {
    read_rows(std::io::BufReader::new(std::fs::File::open(path)?))
}

fn csv_io(e: csv::Error) -> DataError {
    DataError::Io(std::io::Error::other(e.to_string()))
}
