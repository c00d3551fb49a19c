//! Append-only JSONL metrics log and the flops/accuracy plot export.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One training step. Fields that do not apply to a run stay `null`, so a
/// distillation run with the weight forced to zero logs byte-identically to
/// the plain baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepEvent {
    pub step: usize,
    pub lr: f64,
    pub path: String,
    pub flops: u64,
    pub ce: f64,
    pub kd: Option<f64>,
    pub rho: Option<f64>,
    pub teacher: Option<usize>,
    pub fallback: bool,
    pub val_correct: Option<u64>,
    pub val_total: Option<u64>,
    /// `"replaced:<slot>"` or `"rejected"`; `null` on steps without
    /// evaluation.
    pub insert: Option<String>,
    pub board_best: f64,
    pub board_mean: f64,
}

/// One meta-network update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaEvent {
    pub step: usize,
    pub rho: f64,
    pub teacher: usize,
    /// Inner product of the validation gradient with the distillation
    /// gradient.
    pub dot: f64,
    /// Scalar multiplying the score gradient: `-eta * dot`.
    pub scale: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalEntry {
    pub path: String,
    pub flops: u64,
    pub correct: u64,
    pub total: u64,
}

/// Board re-evaluation and final selection at the end of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalEvent {
    pub step: usize,
    pub entries: Vec<FinalEntry>,
    pub selected: String,
    pub selected_flops: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Step(StepEvent),
    Meta(MetaEvent),
    Final(FinalEvent),
}

/// Line-buffered JSONL writer. Every event is flushed as one line, so a
/// crashed run leaves a valid prefix.
pub struct MetricsWriter {
    out: Box<dyn Write + Send>,
}

impl MetricsWriter {
    pub fn to_file(path: &Path) -> Result<Self> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        Ok(MetricsWriter {
            out: Box::new(BufWriter::new(File::create(path)?)),
        })
    }

    /// Collect into a buffer; used by tests and library callers.
    pub fn to_buffer() -> (Self, std::sync::Arc<std::sync::Mutex<Vec<u8>>>) {
        let buf = std::sync::Arc::new(std::sync::Mutex::new(Vec::new()));
        let writer = SharedBuf(buf.clone());
        (
            MetricsWriter {
                out: Box::new(writer),
            },
            buf,
        )
    }

    /// Discard all events.
    pub fn sink() -> Self {
        MetricsWriter {
            out: Box::new(std::io::sink()),
        }
    }

    pub fn write(&mut self, event: &Event) -> Result<()> {
        let line = serde_json::to_string(event)?;
        self.out.write_all(line.as_bytes())?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }
}

struct SharedBuf(std::sync::Arc<std::sync::Mutex<Vec<u8>>>);

impl Write for SharedBuf {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.lock().unwrap().extend_from_slice(buf);
        Ok(buf.len())
    }
    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

/// Parse a metrics log back into events.
pub fn read_metrics(path: &Path) -> Result<Vec<Event>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

/// Emit a `flops,accuracy` CSV with one row per architecture evaluation
/// recorded in the log.
pub fn emit_plot_data(metrics_path: &Path, out_path: &Path) -> Result<usize> {
    let events = read_metrics(metrics_path)?;
    let mut rows = 0usize;
    let file = File::create(out_path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "flops,accuracy")?;
    for event in &events {
        if let Event::Step(s) = event {
            if let (Some(c), Some(t)) = (s.val_correct, s.val_total) {
                if t > 0 {
                    writeln!(w, "{},{}", s.flops, c as f64 / t as f64)?;
                    rows += 1;
                }
            }
        }
    }
    w.flush()?;
    Ok(rows)
}

/// Validate that every line of a metrics file parses as standalone JSON.
pub fn validate_jsonl(path: &Path) -> Result<usize> {
    let reader = BufReader::new(File::open(path)?);
    let mut count = 0;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        serde_json::from_str::<serde_json::Value>(&line).map_err(|e| {
            Error::Dataset(format!("metrics line {} is not valid JSON: {}", i + 1, e))
        })?;
        count += 1;
    }
    Ok(count)
}
