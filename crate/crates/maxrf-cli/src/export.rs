//! Per-line map export: pgm16 images, CSV tables, or raw f32 payloads.
//!
//! Every export writes one file per element line, named
//! `<Element>_<Line>.<ext>`, plus a single `maps_meta.json` sidecar
//! describing the grid, the format, and each map's line identity. The pgm16
//! format normalizes each map to its own [0, 65535] range — matching how
//! element maps are displayed, each with its own dynamic range — and the
//! sidecar records the per-map min/max so the original values can be
//! recovered to within one quantization step, `(max − min)/65535`. CSV and
//! f32raw are unnormalized; an f32raw export is the lossless source that
//! [`read_maps`] accepts for later re-export.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use maxrf::{AmplitudeMaps, LineMeta};

use crate::args::FormatArg;
use crate::cube_file::write_atomic;
use crate::{CliError, Result};

/// Map file format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Pgm16,
    Csv,
    F32raw,
}

impl From<FormatArg> for Format {
    fn from(arg: FormatArg) -> Self {
        match arg {
            FormatArg::Pgm16 => Format::Pgm16,
            FormatArg::Csv => Format::Csv,
            FormatArg::F32raw => Format::F32raw,
        }
    }
}

impl Format {
    /// File extension for this format.
    pub fn ext(self) -> &'static str {
        match self {
            Format::Pgm16 => "pgm",
            Format::Csv => "csv",
            Format::F32raw => "f32",
        }
    }
}

/// Sidecar entry for one exported map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapEntry {
    /// File name inside the export directory.
    pub file: String,
    /// Line identity and pulse-shape parameters of this map.
    #[serde(flatten)]
    pub meta: LineMeta,
    /// Smallest amplitude in the map; recorded for pgm16 rescaling.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    /// Largest amplitude in the map; recorded for pgm16 rescaling.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
}

/// The `maps_meta.json` sidecar of one export directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapsMeta {
    pub height: usize,
    pub width: usize,
    pub format: Format,
    pub maps: Vec<MapEntry>,
}

/// ASCII file stem of one line's map: `<Element>_<Line>`.
pub fn map_stem(meta: &LineMeta) -> String {
    format!("{}_{}", meta.element.symbol, meta.line.as_str())
}

/// Exports every map into `dir`, returning the paths written (sidecar last).
pub fn export_maps(maps: &AmplitudeMaps, dir: &Path, format: Format) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))?;
    let (height, width) = (maps.height(), maps.width());
    let mut written = Vec::with_capacity(maps.num_lines() + 1);
    let mut entries = Vec::with_capacity(maps.num_lines());
    for (k, meta) in maps.meta().iter().enumerate() {
        let map = maps.map(k);
        let file = format!("{}.{}", map_stem(meta), format.ext());
        let path = dir.join(&file);
        let (mut lo, mut hi) = (None, None);
        match format {
            Format::Pgm16 => {
                let (min, max) = min_max(map);
                write_atomic(&path, &encode_pgm16(map, height, width, min, max))?;
                (lo, hi) = (Some(min), Some(max));
            }
            Format::Csv => write_atomic(&path, encode_csv(map, width).as_bytes())?,
            Format::F32raw => write_atomic(&path, &encode_f32(map))?,
        }
        written.push(path);
        entries.push(MapEntry {
            file,
            meta: *meta,
            min: lo,
            max: hi,
        });
    }
    let meta = MapsMeta {
        height,
        width,
        format,
        maps: entries,
    };
    let sidecar = dir.join("maps_meta.json");
    let json = serde_json::to_string_pretty(&meta)
        .map_err(|e| CliError::Data(format!("cannot serialize maps sidecar: {e}")))?;
    write_atomic(&sidecar, json.as_bytes())?;
    written.push(sidecar);
    Ok(written)
}

/// Reads an f32raw export back into amplitude maps.
pub fn read_maps(dir: &Path) -> Result<AmplitudeMaps> {
    let sidecar = dir.join("maps_meta.json");
    let text = fs::read_to_string(&sidecar)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", sidecar.display())))?;
    let meta: MapsMeta = serde_json::from_str(&text)
        .map_err(|e| CliError::Data(format!("malformed maps sidecar {}: {e}", sidecar.display())))?;
    if meta.format != Format::F32raw {
        return Err(CliError::Data(format!(
            "{} describes a {:?} export; only f32raw maps are lossless enough to re-export",
            sidecar.display(),
            meta.format
        )));
    }
    let pixels = meta.height * meta.width;
    let mut data = Vec::with_capacity(meta.maps.len() * pixels);
    for entry in &meta.maps {
        let path = dir.join(&entry.file);
        let bytes = fs::read(&path)
            .map_err(|e| CliError::Data(format!("cannot read map {}: {e}", path.display())))?;
        if bytes.len() != pixels * 4 {
            return Err(CliError::Data(format!(
                "map {} holds {} bytes but {}x{} f32 values need {}",
                path.display(),
                bytes.len(),
                meta.height,
                meta.width,
                pixels * 4
            )));
        }
        data.extend(
            bytes
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64),
        );
    }
    let line_meta: Vec<LineMeta> = meta.maps.iter().map(|e| e.meta).collect();
    Ok(AmplitudeMaps::new(data, meta.height, meta.width, line_meta)?)
}

/// Reads one pgm16 file back as (width, height, big-endian samples).
pub fn read_pgm16(path: &Path) -> Result<(usize, usize, Vec<u16>)> {
    let bytes = fs::read(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    let header_err = || CliError::Data(format!("{} is not a 16-bit P5 PGM", path.display()));
    // Header: "P5\n{W} {H}\n65535\n" as written by encode_pgm16.
    let text_len = bytes
        .iter()
        .position(|b| *b == b'\n')
        .and_then(|first| {
            bytes[first + 1..]
                .iter()
                .position(|b| *b == b'\n')
                .map(|second| first + 1 + second)
        })
        .and_then(|second| {
            bytes[second + 1..]
                .iter()
                .position(|b| *b == b'\n')
                .map(|third| second + 1 + third + 1)
        })
        .ok_or_else(header_err)?;
    let header = std::str::from_utf8(&bytes[..text_len]).map_err(|_| header_err())?;
    let mut parts = header.split_ascii_whitespace();
    if parts.next() != Some("P5") {
        return Err(header_err());
    }
    let width: usize = parts
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(header_err)?;
    let height: usize = parts
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(header_err)?;
    if parts.next() != Some("65535") {
        return Err(header_err());
    }
    let payload = &bytes[text_len..];
    if payload.len() != width * height * 2 {
        return Err(CliError::Data(format!(
            "{}: payload holds {} bytes, expected {}",
            path.display(),
            payload.len(),
            width * height * 2
        )));
    }
    let samples = payload
        .chunks_exact(2)
        .map(|b| u16::from_be_bytes([b[0], b[1]]))
        .collect();
    Ok((width, height, samples))
}

fn min_max(map: &[f64]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in map {
        lo = lo.min(*v);
        hi = hi.max(*v);
    }
    (lo, hi)
}

/// Binary 16-bit PGM, most significant byte first, one map per image.
fn encode_pgm16(map: &[f64], height: usize, width: usize, min: f64, max: f64) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n65535\n").into_bytes();
    let span = max - min;
    for v in map {
        // A constant map (span 0) exports as all zeros.
        let q = if span > 0.0 {
            ((v - min) / span * 65_535.0).round() as u16
        } else {
            0
        };
        out.extend_from_slice(&q.to_be_bytes());
    }
    out
}

fn encode_csv(map: &[f64], width: usize) -> String {
    let mut out = String::new();
    for row in map.chunks(width) {
        let mut first = true;
        for v in row {
            if !first {
                out.push(',');
            }
            out.push_str(&v.to_string());
            first = false;
        }
        out.push('\n');
    }
    out
}

fn encode_f32(map: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(map.len() * 4);
    for v in map {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}
