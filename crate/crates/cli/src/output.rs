//! Metric and sample writers.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use anyhow::{Context as _, Result};
use ndarray::Array2;

use local_dsm::eval::MetricRecord;

pub const METRICS_JSONL: &str = "metrics.jsonl";
pub const METRICS_CSV: &str = "metrics.csv";
pub const CONFIG_JSON: &str = "config.json";
pub const CSV_HEADER: &str = "step,name,value,stderr,meta";

/// Appends records to `metrics.jsonl` and `metrics.csv`, stamping each with
/// the config hash and seed.
pub struct MetricsWriter {
    jsonl: BufWriter<File>,
    csv: BufWriter<File>,
    config_hash: String,
    seed: u64,
    clock: Option<Instant>,
}

fn open(path: &Path, append: bool) -> Result<(File, bool)> {
    let existed = append && path.exists() && std::fs::metadata(path)?.len() > 0;
    let file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(path)
        .with_context(|| format!("opening {}", path.display()))?;
    Ok((file, existed))
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl MetricsWriter {
    pub fn create(dir: &Path, append: bool, config_hash: &str, seed: u64, wall_time: bool) -> Result<Self> {
        let (jsonl, _) = open(&dir.join(METRICS_JSONL), append)?;
        let (csv, had_csv) = open(&dir.join(METRICS_CSV), append)?;
        let mut csv = BufWriter::new(csv);
        if !had_csv {
            writeln!(csv, "{CSV_HEADER}")?;
        }
        Ok(Self {
            jsonl: BufWriter::new(jsonl),
            csv,
            config_hash: config_hash.to_string(),
            seed,
            clock: wall_time.then(Instant::now),
        })
    }

    pub fn write(&mut self, record: MetricRecord) -> Result<MetricRecord> {
        let mut r = record
            .with_meta("config_hash", self.config_hash.as_str())
            .with_meta("seed", self.seed);
        r.wall_seconds = self.clock.map(|c| c.elapsed().as_secs_f64());
        writeln!(self.jsonl, "{}", serde_json::to_string(&r)?)?;
        let meta = serde_json::to_string(&r.meta)?;
        let stderr = r.stderr.map(|s| s.to_string()).unwrap_or_default();
        writeln!(
            self.csv,
            "{},{},{},{},{}",
            r.step,
            csv_field(&r.name),
            r.value,
            stderr,
            csv_field(&meta)
        )?;
        Ok(r)
    }

    pub fn flush(&mut self) -> Result<()> {
        self.jsonl.flush()?;
        self.csv.flush()?;
        Ok(())
    }
}

impl Drop for MetricsWriter {
    fn drop(&mut self) {
        let _ = self.flush();
    }
}

/// Name of a sample file; the seed and a hash prefix identify the run.
pub fn samples_file_name(kind: &str, step: u64, seed: u64, config_hash: &str) -> String {
    format!("samples_{kind}_step{step:08}_seed{seed}_{}.csv", &config_hash[..12.min(config_hash.len())])
}

/// Writes `t,dim0,dim1,...` rows, one block per snapshot.
pub fn write_samples(path: &Path, snapshots: &[(f64, &Array2<f64>)]) -> Result<()> {
    let d = snapshots.first().map(|(_, a)| a.ncols()).unwrap_or(0);
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain((0..d).map(|j| format!("dim{j}")))
        .collect();
    writeln!(w, "{}", header.join(","))?;
    for (t, a) in snapshots {
        for row in a.rows() {
            write!(w, "{t}")?;
            for v in row {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads every record of a `metrics.jsonl`.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricRecord>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).context("parsing metric record"))
        .collect()
}
