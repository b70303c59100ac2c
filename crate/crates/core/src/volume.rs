//! Single-channel 3D volumes and the native on-disk format.
//!
//! A volume on disk is a pair of files: a JSON sidecar header carrying shape,
//! voxel spacing and a dtype tag, plus a raw binary holding little-endian
//! 32-bit floats in depth-major order (depth, then height, then width). The
//! sidecar lives next to the raw file with the extension replaced by `.json`.

use crate::error::{Error, Result};
use ndarray::Array3;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

/// Voxel counts as (depth, height, width).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape3(pub [usize; 3]);

impl Shape3 {
    pub fn new(d: usize, h: usize, w: usize) -> Self {
        Shape3([d, h, w])
    }

    pub fn d(&self) -> usize {
        self.0[0]
    }

    pub fn h(&self) -> usize {
        self.0[1]
    }

    pub fn w(&self) -> usize {
        self.0[2]
    }

    pub fn num_voxels(&self) -> usize {
        self.0.iter().product()
    }
}

impl fmt::Display for Shape3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.0[0], self.0[1], self.0[2])
    }
}

/// A single-channel 3D scan. Intensities are dimensionless and finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    data: Array3<f64>,
}

impl Volume {
    /// Wraps a grid, rejecting NaN/Inf intensities.
    pub fn new(data: Array3<f64>) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("volume contains non-finite intensities"));
        }
        Ok(Self { data })
    }

    pub fn zeros(shape: Shape3) -> Self {
        Self { data: Array3::zeros((shape.d(), shape.h(), shape.w())) }
    }

    pub fn shape(&self) -> Shape3 {
        let s = self.data.shape();
        Shape3([s[0], s[1], s[2]])
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Array3<f64> {
        &mut self.data
    }

    pub fn into_data(self) -> Array3<f64> {
        self.data
    }

    /// Fails unless the volume matches the configured working resolution.
    pub fn check_shape(&self, expected: Shape3) -> Result<()> {
        if self.shape() != expected {
            return Err(Error::ShapeMismatch {
                expected: expected.to_string(),
                got: self.shape().to_string(),
            });
        }
        Ok(())
    }

    /// Depth-major flat view (matches the on-disk ordering).
    pub fn as_slice(&self) -> &[f64] {
        self.data.as_slice().expect("volume storage is contiguous")
    }
}

const DTYPE_TAG: &str = "f32le";
const ORDER_TAG: &str = "depth_major";

/// JSON sidecar for a raw volume file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VolumeHeader {
    pub shape: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub dtype: String,
    pub order: String,
}

fn sidecar_path(raw_path: &Path) -> PathBuf {
    raw_path.with_extension("json")
}

/// Writes `volume` as a raw f32le file plus its JSON sidecar.
pub fn save_volume(raw_path: &Path, volume: &Volume) -> Result<()> {
    let shape = volume.shape();
    let header = VolumeHeader {
        shape: shape.0,
        spacing_mm: [1.0, 1.0, 1.0],
        dtype: DTYPE_TAG.to_string(),
        order: ORDER_TAG.to_string(),
    };
    if let Some(dir) = raw_path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let sidecar = sidecar_path(raw_path);
    let json = serde_json::to_string_pretty(&header)?;
    fs::write(&sidecar, json).map_err(|e| Error::io(&sidecar, e))?;

    let mut bytes = Vec::with_capacity(shape.num_voxels() * 4);
    for &v in volume.as_slice() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let mut f = fs::File::create(raw_path).map_err(|e| Error::io(raw_path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(raw_path, e))?;
    Ok(())
}

/// Loads a volume written by [`save_volume`].
pub fn load_volume(raw_path: &Path) -> Result<Volume> {
    let sidecar = sidecar_path(raw_path);
    let json = fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
    let header: VolumeHeader = serde_json::from_str(&json)?;
    if header.dtype != DTYPE_TAG {
        return Err(Error::validation(format!(
            "unsupported volume dtype {:?} in {}",
            header.dtype,
            sidecar.display()
        )));
    }
    if header.order != ORDER_TAG {
        return Err(Error::validation(format!(
            "unsupported voxel order {:?} in {}",
            header.order,
            sidecar.display()
        )));
    }
    let shape = Shape3(header.shape);
    let mut f = fs::File::open(raw_path).map_err(|e| Error::io(raw_path, e))?;
    let mut bytes = Vec::new();
    f.read_to_end(&mut bytes).map_err(|e| Error::io(raw_path, e))?;
    let expected_len = shape.num_voxels() * 4;
    if bytes.len() != expected_len {
        return Err(Error::validation(format!(
            "{}: expected {expected_len} bytes for shape {shape}, found {}",
            raw_path.display(),
            bytes.len()
        )));
    }
    let mut values = Vec::with_capacity(shape.num_voxels());
    for chunk in bytes.chunks_exact(4) {
        values.push(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]) as f64);
    }
    let data = Array3::from_shape_vec((shape.d(), shape.h(), shape.w()), values)
        .expect("length checked above");
    Volume::new(data)
}
