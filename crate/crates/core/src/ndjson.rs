//! Newline-delimited JSON stream formats: frames, per-window AoA records,
//! feature vectors and detection events.
//!
//! One record per line. Readers are streaming: every well-formed line is
//! yielded before a later malformed line fails, and errors carry 1-based
//! line numbers. Serialize -> parse -> serialize is byte-identical.

use std::io::{BufRead, Write};
use std::marker::PhantomData;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::chansim::CsiFrame;
use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::sanitize::SanitizedFrame;

/// One CSI frame on the wire. Sanitized frames additionally carry
/// `tau_hat_s` and `xi_hat_rad`; raw frames omit them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRecord {
    pub t: u64,
    pub rss_db: f64,
    /// Subcarrier spacing in Hz.
    pub f_delta_hz: f64,
    /// `csi[antenna][subcarrier] = [re, im]`.
    pub csi: Vec<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<bool>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub meta: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_hat_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi_hat_rad: Option<f64>,
}

fn matrix_to_rows(m: &DMatrix<Complex64>) -> Vec<Vec<[f64; 2]>> {
    (0..m.nrows())
        .map(|r| (0..m.ncols()).map(|c| [m[(r, c)].re, m[(r, c)].im]).collect())
        .collect()
}

impl FrameRecord {
    pub fn from_frame(frame: &CsiFrame) -> FrameRecord {
        FrameRecord {
            t: frame.t,
            rss_db: frame.rss_db,
            f_delta_hz: frame.subcarrier_spacing_hz,
            csi: matrix_to_rows(&frame.csi),
            label: frame.label,
            meta: frame.meta.clone(),
            tau_hat_s: None,
            xi_hat_rad: None,
        }
    }

    pub fn from_sanitized(frame: &SanitizedFrame) -> FrameRecord {
        FrameRecord {
            t: frame.t,
            rss_db: frame.rss_db,
            f_delta_hz: frame.subcarrier_spacing_hz,
            csi: matrix_to_rows(&frame.csi_clean),
            label: frame.label,
            meta: frame.meta.clone(),
            tau_hat_s: Some(frame.tau_hat),
            xi_hat_rad: Some(frame.xi_hat),
        }
    }

    fn matrix(&self) -> Result<DMatrix<Complex64>> {
        let rows = self.csi.len();
        let cols = self.csi.first().map_or(0, Vec::len);
        if rows == 0 || cols == 0 {
            return Err(Error::Data("csi must be non-empty".into()));
        }
        if self.csi.iter().any(|r| r.len() != cols) {
            return Err(Error::Data("csi rows have unequal lengths".into()));
        }
        Ok(DMatrix::from_fn(rows, cols, |r, c| {
            Complex64::new(self.csi[r][c][0], self.csi[r][c][1])
        }))
    }

    pub fn to_frame(&self) -> Result<CsiFrame> {
        let frame = CsiFrame {
            t: self.t,
            csi: self.matrix()?,
            rss_db: self.rss_db,
            subcarrier_spacing_hz: self.f_delta_hz,
            meta: self.meta.clone(),
            label: self.label,
        };
        frame.validate()?;
        Ok(frame)
    }

    /// Interprets the record as an already-sanitized frame; raw records
    /// (no `tau_hat_s`) map to zero estimated offsets.
    pub fn to_sanitized(&self) -> Result<SanitizedFrame> {
        let frame = self.to_frame()?;
        Ok(SanitizedFrame {
            t: frame.t,
            csi_clean: frame.csi,
            tau_hat: self.tau_hat_s.unwrap_or(0.0),
            xi_hat: self.xi_hat_rad.unwrap_or(0.0),
            rss_db: frame.rss_db,
            subcarrier_spacing_hz: frame.subcarrier_spacing_hz,
            meta: frame.meta,
            label: frame.label,
        })
    }
}

/// Line-oriented reader for any record type; skips blank lines and maps
/// JSON syntax errors to `Parse` and shape mismatches to `Schema`, both
/// carrying the 1-based line number.
pub struct RecordReader<R, T> {
    reader: R,
    line: usize,
    buf: String,
    _marker: PhantomData<fn() -> T>,
}

impl<R: BufRead, T: DeserializeOwned> RecordReader<R, T> {
    pub fn new(reader: R) -> Self {
        RecordReader {
            reader,
            line: 0,
            buf: String::new(),
            _marker: PhantomData,
        }
    }

    /// Line number of the most recently yielded record.
    pub fn line(&self) -> usize {
        self.line
    }
}

impl<R: BufRead, T: DeserializeOwned> Iterator for RecordReader<R, T> {
    type Item = Result<T>;

    fn next(&mut self) -> Option<Result<T>> {
        loop {
            self.buf.clear();
            self.line += 1;
            match self.reader.read_line(&mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {
                    let text = self.buf.trim();
                    if text.is_empty() {
                        continue;
                    }
                    return Some(parse_line(text, self.line));
                }
                Err(e) => return Some(Err(Error::Io(e))),
            }
        }
    }
}

fn parse_line<T: DeserializeOwned>(text: &str, line: usize) -> Result<T> {
    serde_json::from_str(text).map_err(|e| {
        let message = e.to_string();
        if e.is_data() {
            Error::Schema {
                line,
                field: field_from_message(&message),
                message,
            }
        } else {
            Error::Parse { line, message }
        }
    })
}

/// serde quotes the offending field in backticks; fall back to the whole
/// record when the message names none.
fn field_from_message(message: &str) -> String {
    message
        .split('`')
        .nth(1)
        .unwrap_or("record")
        .to_string()
}

/// Streaming frame reader with optional shape enforcement.
pub struct FrameReader<R> {
    inner: RecordReader<R, FrameRecord>,
    expect: Option<(usize, usize)>,
}

impl<R: BufRead> FrameReader<R> {
    pub fn new(reader: R) -> Self {
        FrameReader {
            inner: RecordReader::new(reader),
            expect: None,
        }
    }

    /// Rejects records whose CSI is not `antennas x subcarriers`.
    pub fn with_expected_shape(reader: R, antennas: usize, subcarriers: usize) -> Self {
        FrameReader {
            inner: RecordReader::new(reader),
            expect: Some((antennas, subcarriers)),
        }
    }

    fn check(&self, record: &FrameRecord) -> Result<()> {
        let line = self.inner.line();
        let schema = |field: &str, message: String| Error::Schema {
            line,
            field: field.to_string(),
            message,
        };
        if !record.rss_db.is_finite() {
            return Err(schema("rss_db", "must be finite".into()));
        }
        if !(record.f_delta_hz > 0.0) || !record.f_delta_hz.is_finite() {
            return Err(schema("f_delta_hz", "must be positive and finite".into()));
        }
        let rows = record.csi.len();
        let cols = record.csi.first().map_or(0, Vec::len);
        if rows == 0 || cols == 0 {
            return Err(schema("csi", "must be non-empty".into()));
        }
        if record.csi.iter().any(|r| r.len() != cols) {
            return Err(schema("csi", "rows have unequal lengths".into()));
        }
        if let Some((m, s)) = self.expect {
            if rows != m || cols != s {
                return Err(schema(
                    "csi",
                    format!("expected {m}x{s}, got {rows}x{cols}"),
                ));
            }
        }
        for row in &record.csi {
            for entry in row {
                if !entry[0].is_finite() || !entry[1].is_finite() {
                    return Err(schema("csi", "entries must be finite".into()));
                }
            }
        }
        for (field, value) in [("tau_hat_s", record.tau_hat_s), ("xi_hat_rad", record.xi_hat_rad)]
        {
            if let Some(v) = value {
                if !v.is_finite() {
                    return Err(schema(field, "must be finite".into()));
                }
            }
        }
        Ok(())
    }
}

impl<R: BufRead> Iterator for FrameReader<R> {
    type Item = Result<FrameRecord>;

    fn next(&mut self) -> Option<Result<FrameRecord>> {
        let record = match self.inner.next()? {
            Ok(r) => r,
            Err(e) => return Some(Err(e)),
        };
        match self.check(&record) {
            Ok(()) => Some(Ok(record)),
            Err(e) => Some(Err(e)),
        }
    }
}

/// Serializes one record and terminates the line.
pub fn write_record<W: Write, T: Serialize>(writer: &mut W, record: &T) -> Result<()> {
    serde_json::to_writer(&mut *writer, record)
        .map_err(|e| Error::Data(format!("serialize: {e}")))?;
    writer.write_all(b"\n")?;
    Ok(())
}

/// One record as a JSON line without the terminator.
pub fn to_line<T: Serialize>(record: &T) -> Result<String> {
    serde_json::to_string(record).map_err(|e| Error::Data(format!("serialize: {e}")))
}

/// Reads a whole feature-vector stream, validating each record.
pub fn read_feature_vectors<R: BufRead>(reader: R) -> Result<Vec<FeatureVector>> {
    let mut reader: RecordReader<R, FeatureVector> = RecordReader::new(reader);
    let mut out = Vec::new();
    while let Some(item) = reader.next() {
        let fv = item?;
        fv.validate().map_err(|e| Error::Schema {
            line: reader.line(),
            field: "record".into(),
            message: e.to_string(),
        })?;
        out.push(fv);
    }
    Ok(out)
}
