//! Datacube file format: a raw little-endian payload plus a JSON header.
//!
//! The header lives in a sidecar at `<payload path>.json` and fixes the
//! dimensions, energy range, and payload element type. The payload holds the
//! counts pixel-major — value index `((h·W) + w)·M + n` — matching the
//! in-memory cube layout, so reads and writes are single passes. Writes go
//! through a temporary file in the destination directory followed by a
//! rename, so an interrupted run never leaves a half-written cube behind.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use maxrf::{Datacube, EnergyCalibration};

use crate::{CliError, Result};

/// Payload element type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    /// IEEE 754 single-precision counts.
    F32,
    /// Unsigned 16-bit integer counts.
    U16,
}

impl Dtype {
    /// Payload bytes per value.
    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::U16 => 2,
        }
    }
}

/// JSON sidecar describing a cube payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CubeFileHeader {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub energy_min_ev: f64,
    pub energy_max_ev: f64,
    pub dtype: Dtype,
    /// Fixed layout tag: value index = ((h·W) + w)·M + n.
    pub layout: String,
    /// Fixed byte-order tag: little-endian payload.
    pub endianness: String,
}

impl CubeFileHeader {
    /// The header describing a cube at a given payload dtype.
    pub fn for_cube(cube: &Datacube, dtype: Dtype) -> Self {
        let cal = cube.calibration();
        Self {
            height: cube.height(),
            width: cube.width(),
            channels: cube.channels(),
            energy_min_ev: cal.energy_min,
            energy_max_ev: cal.energy_max,
            dtype,
            layout: "pixel-major".into(),
            endianness: "little".into(),
        }
    }

    /// Checks the header invariants before any payload is touched.
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.channels == 0 {
            return Err(CliError::Data(format!(
                "cube header must have positive dimensions, got {}x{}x{}",
                self.height, self.width, self.channels
            )));
        }
        if self.layout != "pixel-major" {
            return Err(CliError::Data(format!(
                "unknown cube layout '{}', this reader only handles 'pixel-major'",
                self.layout
            )));
        }
        if self.endianness != "little" {
            return Err(CliError::Data(format!(
                "unknown cube endianness '{}', this reader only handles 'little'",
                self.endianness
            )));
        }
        if !(self.energy_max_ev > self.energy_min_ev) {
            return Err(CliError::Data(format!(
                "cube header energy range [{}, {}] is empty or reversed",
                self.energy_min_ev, self.energy_max_ev
            )));
        }
        Ok(())
    }

    /// Expected payload size in bytes.
    pub fn payload_bytes(&self) -> usize {
        self.height * self.width * self.channels * self.dtype.size()
    }
}

/// The sidecar path of a payload path: `<path>.json`.
pub fn header_path(path: &Path) -> std::path::PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".json");
    std::path::PathBuf::from(name)
}

/// Writes bytes through a temporary file in the target directory and renames
/// it over the destination.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .map_err(|e| CliError::Data(format!("cannot create temp file in {}: {e}", dir.display())))?;
    tmp.write_all(bytes)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))?;
    tmp.persist(path)
        .map_err(|e| CliError::Data(format!("cannot rename into {}: {e}", path.display())))?;
    Ok(())
}

/// Writes a cube payload plus its JSON header sidecar.
pub fn write_cube(cube: &Datacube, path: &Path, dtype: Dtype) -> Result<()> {
    let header = CubeFileHeader::for_cube(cube, dtype);
    let counts = cube.counts();
    let mut payload = Vec::with_capacity(header.payload_bytes());
    match dtype {
        Dtype::F32 => {
            for v in counts {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        Dtype::U16 => {
            for (idx, v) in counts.iter().enumerate() {
                if v.fract() != 0.0 || *v > u16::MAX as f32 {
                    return Err(CliError::Data(format!(
                        "count {v} at value index {idx} does not fit the u16 payload \
                         (whole numbers up to 65535)"
                    )));
                }
                payload.extend_from_slice(&(*v as u16).to_le_bytes());
            }
        }
    }
    let header_json = serde_json::to_string_pretty(&header)
        .map_err(|e| CliError::Data(format!("cannot serialize cube header: {e}")))?;
    write_atomic(&header_path(path), header_json.as_bytes())?;
    write_atomic(path, &payload)
}

/// Reads a cube: header sidecar first, then the size-checked payload.
pub fn read_cube(path: &Path) -> Result<Datacube> {
    let hp = header_path(path);
    let header_text = fs::read_to_string(&hp)
        .map_err(|e| CliError::Data(format!("cannot read cube header {}: {e}", hp.display())))?;
    let header: CubeFileHeader = serde_json::from_str(&header_text)
        .map_err(|e| CliError::Data(format!("malformed cube header {}: {e}", hp.display())))?;
    header.validate()?;

    let payload = fs::read(path)
        .map_err(|e| CliError::Data(format!("cannot read cube payload {}: {e}", path.display())))?;
    let expect = header.payload_bytes();
    if payload.len() != expect {
        return Err(CliError::Data(format!(
            "cube payload {} holds {} bytes but the header implies \
             {}x{}x{} {} values = {expect} bytes",
            path.display(),
            payload.len(),
            header.height,
            header.width,
            header.channels,
            match header.dtype {
                Dtype::F32 => "f32",
                Dtype::U16 => "u16",
            },
        )));
    }

    let counts: Vec<f32> = match header.dtype {
        Dtype::F32 => payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect(),
        Dtype::U16 => payload
            .chunks_exact(2)
            .map(|b| u16::from_le_bytes([b[0], b[1]]) as f32)
            .collect(),
    };
    let cal = EnergyCalibration::with_range(
        header.energy_min_ev,
        header.energy_max_ev,
        header.channels,
    )?;
    Ok(Datacube::new(counts, header.height, header.width, cal)?)
}
