use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Setpoint,
    Measurement,
    Request,
    QpStatus,
    Metric,
}

/// One row of a trace. Values are SI (W, var) except voltages, which are
/// recorded in per-unit under the field `v_pu`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub time_s: f64,
    pub kind: RecordKind,
    pub subject: String,
    pub field: String,
    pub value: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
}

const HEADER: [&str; 5] = ["time_s", "kind", "subject", "field", "value"];

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

impl Trace {
    pub fn push(&mut self, time_s: f64, kind: RecordKind, subject: &str, field: &str, value: f64) {
        self.records.push(TraceRecord {
            time_s,
            kind,
            subject: subject.to_string(),
            field: field.to_string(),
            value,
        });
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records matching a kind, subject and field, in trace order.
    pub fn series<'a>(
        &'a self,
        kind: RecordKind,
        subject: &'a str,
        field: &'a str,
    ) -> impl Iterator<Item = &'a TraceRecord> + 'a {
        self.records
            .iter()
            .filter(move |r| r.kind == kind && r.subject == subject && r.field == field)
    }

    /// Last value of a series at or before `time_s`.
    pub fn latest(&self, kind: RecordKind, subject: &str, field: &str, time_s: f64) -> Option<f64> {
        self.series(kind, subject, field)
            .filter(|r| r.time_s <= time_s + 1e-9)
            .last()
            .map(|r| r.value)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        w.write_record(HEADER).expect("in-memory write");
        for r in &self.records {
            w.serialize(r).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new().from_reader(text.as_bytes());
        let header = rd.headers().map_err(|e| Error::Parse(e.to_string()))?;
        if header.iter().ne(HEADER) {
            return Err(Error::Parse(format!(
                "trace header must be `{}`",
                HEADER.join(",")
            )));
        }
        let records = rd
            .deserialize()
            .collect::<std::result::Result<Vec<TraceRecord>, _>>()
            .map_err(|e| Error::Parse(e.to_string()))?;
        Ok(Self { records })
    }

    /// JSON-lines mirror with the same content as the CSV.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| io_err(path, e))
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_jsonl()).map_err(|e| io_err(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        Self::from_csv(&text)
    }
}
