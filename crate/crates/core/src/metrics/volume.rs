use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const VALID_LABELS: [u8; 4] = [0, 1, 2, 4];

/// Dense 3D label grid, x-fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelVolume {
    dims: [usize; 3],
    spacing: [f64; 3],
    voxels: Vec<u8>,
}

impl LabelVolume {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], voxels: Vec<u8>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::InvalidVolume(format!("dimensions must be positive, got {dims:?}")));
        }
        if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidVolume(format!("spacing must be positive, got {spacing:?}")));
        }
        let expected = dims[0] * dims[1] * dims[2];
        if voxels.len() != expected {
            return Err(Error::InvalidVolume(format!(
                "expected {expected} voxels for {dims:?}, got {}",
                voxels.len()
            )));
        }
        if let Some(bad) = voxels.iter().find(|v| !VALID_LABELS.contains(v)) {
            return Err(Error::InvalidVolume(format!("label {bad} is not one of 0, 1, 2, 4")));
        }
        Ok(Self { dims, spacing, voxels })
    }

    /// All-background volume with unit spacing.
    pub fn zeros(dims: [usize; 3]) -> Result<Self> {
        Self::new(dims, [1.0; 3], vec![0; dims.iter().product()])
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn voxels(&self) -> &[u8] {
        &self.voxels
    }

    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> u8 {
        self.voxels[self.index(x, y, z)]
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, label: u8) -> Result<()> {
        if !VALID_LABELS.contains(&label) {
            return Err(Error::InvalidVolume(format!("label {label} is not one of 0, 1, 2, 4")));
        }
        let i = self.index(x, y, z);
        self.voxels[i] = label;
        Ok(())
    }

    /// Physical length of the volume diagonal in mm.
    pub fn diagonal(&self) -> f64 {
        diagonal(self.dims, self.spacing)
    }

    /// `SEGVOL v1 nx ny nz sx sy sz\n` followed by raw label bytes.
    pub fn encode(&self) -> Vec<u8> {
        let [nx, ny, nz] = self.dims;
        let [sx, sy, sz] = self.spacing;
        let mut out = format!("SEGVOL v1 {nx} {ny} {nz} {sx} {sy} {sz}\n").into_bytes();
        out.extend_from_slice(&self.voxels);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::InvalidVolume(m.to_string());
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("missing header line"))?;
        let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| bad("header is not UTF-8"))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 8 || fields[0] != "SEGVOL" || fields[1] != "v1" {
            return Err(bad("header must be 'SEGVOL v1 nx ny nz sx sy sz'"));
        }
        let mut dims = [0usize; 3];
        for (d, f) in dims.iter_mut().zip(&fields[2..5]) {
            *d = f.parse().map_err(|_| bad("dimension is not an integer"))?;
        }
        let mut spacing = [0f64; 3];
        for (s, f) in spacing.iter_mut().zip(&fields[5..8]) {
            *s = f.parse().map_err(|_| bad("spacing is not a number"))?;
        }
        Self::new(dims, spacing, bytes[nl + 1..].to_vec())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
        f.write_all(&self.encode())
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::decode(&bytes)
    }
}

pub(crate) fn diagonal(dims: [usize; 3], spacing: [f64; 3]) -> f64 {
    dims.iter()
        .zip(spacing)
        .map(|(&n, s)| (n as f64 * s).powi(2))
        .sum::<f64>()
        .sqrt()
}
