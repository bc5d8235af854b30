use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

/// One line of `metrics.jsonl`.
#[derive(Debug, Serialize)]
pub struct MetricsRecord {
    pub step: u64,
    /// dB; the string "inf" for a perfect match, null without a reference.
    pub psnr: Value,
    pub elbo: f64,
    pub used_components: usize,
    /// Seconds since the run started; null unless timing was requested.
    pub wall_time: Option<f64>,
}

pub fn psnr_value(p: Option<f64>) -> Value {
    match p {
        None => Value::Null,
        Some(v) if v.is_infinite() => Value::from("inf"),
        Some(v) => Value::from(v),
    }
}

pub struct MetricsLog {
    out: BufWriter<File>,
    last_step: Option<u64>,
}

impl MetricsLog {
    pub fn create(path: &Path) -> std::io::Result<Self> {
        Ok(Self {
            out: BufWriter::new(File::create(path)?),
            last_step: None,
        })
    }

    pub fn append(&mut self, rec: &MetricsRecord) -> std::io::Result<()> {
        debug_assert!(self.last_step.is_none_or(|s| rec.step > s));
        self.last_step = Some(rec.step);
        serde_json::to_writer(&mut self.out, rec)?;
        self.out.write_all(b"\n")?;
        self.out.flush()
    }
}
