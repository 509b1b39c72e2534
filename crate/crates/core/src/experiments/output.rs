//! Artifact writers. CSV bodies depend only on the config; wall-clock data
//! goes to a separate `run.json`.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder};
use serde::Serialize;
use serde_json::json;

use crate::error::{Error, Result};
use crate::metrics::SymmetryReport;
use crate::polarization::Image;

/// Shortest round-trip representation.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse(format!("{other:?}")),
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// One CSV record per item, header from the field names.
pub fn write_records<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_table(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// `index,singular_value,variance` over the full spectrum, largest first.
pub fn write_spectrum(path: &Path, report: &SymmetryReport) -> Result<()> {
    let n = report.sample_count as f64;
    let rows: Vec<Vec<String>> = report
        .singular_spectrum
        .iter()
        .enumerate()
        .map(|(i, s)| vec![i.to_string(), fmt_f64(*s), fmt_f64(s * s / n)])
        .collect();
    let header = ["index", "singular_value", "variance"].map(String::from);
    write_table(path, &header, &rows)
}

/// One row per extracted generator with its entries flattened row-major.
pub fn write_generators(path: &Path, report: &SymmetryReport) -> Result<()> {
    let g = report.gen_dim;
    let mut header: Vec<String> = ["index", "singular_value", "bias"]
        .map(String::from)
        .to_vec();
    for i in 0..g {
        for j in 0..g {
            header.push(format!("h_{i}_{j}"));
        }
    }
    let rows: Vec<Vec<String>> = report
        .generators
        .iter()
        .enumerate()
        .map(|(k, h)| {
            let mut row = vec![
                k.to_string(),
                fmt_f64(report.generator_singular_values[k]),
                fmt_f64(report.biases[k]),
            ];
            row.extend(h.as_slice().iter().map(|v| fmt_f64(*v)));
            row
        })
        .collect();
    write_table(path, &header, &rows)
}

/// Binary 8-bit PGM, min-max scaled. Constant images map to 0.
pub fn write_pgm(path: &Path, img: &Image) -> Result<()> {
    let px = img.pixels();
    let lo = px.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = px.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let bytes: Vec<u8> = px
        .iter()
        .map(|v| ((v - lo) / span * 255.0).round() as u8)
        .collect();
    let file = BufWriter::new(File::create(path)?);
    PnmEncoder::new(file)
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
        .write_image(
            &bytes,
            img.width() as u32,
            img.height() as u32,
            ExtendedColorType::L8,
        )
        .map_err(|e| Error::Parse(format!("pgm encoding: {e}")))?;
    Ok(())
}

/// Timestamp and duration sidecar.
pub fn write_run_sidecar(
    dir: &Path,
    command: &str,
    started: SystemTime,
    elapsed: Duration,
) -> Result<()> {
    let since = started.duration_since(UNIX_EPOCH).unwrap_or_default();
    write_json(
        &dir.join("run.json"),
        &json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "started_unix": since.as_secs(),
            "elapsed_seconds": elapsed.as_secs_f64(),
        }),
    )
}
