//! Dense single-channel rasters and their binary file format.
//!
//! Disparity, depth and luminance maps all share this row-major `f32`
//! layout. Files are little-endian: a 4-byte magic, `u32` width, `u32`
//! height, then `width * height` `f32` values row-major. The round trip
//! is byte-exact.

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

/// Magic tag for metric depth maps (meters).
pub const DEPTH_MAGIC: [u8; 4] = *b"DMAP";
/// Magic tag for disparity maps (relative scale, unitless).
pub const DISPARITY_MAGIC: [u8; 4] = *b"DISP";

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("truncated raster payload: expected {expected} values, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("zero-sized raster dimensions {0}x{1}")]
    EmptyDimensions(u32, u32),
}

/// Row-major `f32` grid, indexed `(x, y)` with `y * width + x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: u32,
    height: u32,
    values: Vec<f32>,
}

impl Raster {
    pub fn filled(width: u32, height: u32, value: f32) -> Self {
        assert!(width > 0 && height > 0, "raster dimensions must be positive");
        Self {
            width,
            height,
            values: vec![value; (width * height) as usize],
        }
    }

    pub fn from_values(width: u32, height: u32, values: Vec<f32>) -> Self {
        assert_eq!(values.len(), (width * height) as usize, "value count mismatch");
        Self { width, height, values }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn get(&self, x: u32, y: u32) -> f32 {
        debug_assert!(x < self.width && y < self.height);
        self.values[(y * self.width + x) as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, value: f32) {
        debug_assert!(x < self.width && y < self.height);
        self.values[(y * self.width + x) as usize] = value;
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    /// Minimum over all values; NaNs are rejected by construction upstream.
    pub fn min_value(&self) -> f32 {
        self.values.iter().copied().fold(f32::INFINITY, f32::min)
    }

    pub fn max_value(&self) -> f32 {
        self.values.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    /// Writes magic + header + payload little-endian.
    pub fn write_binary<W: Write>(&self, magic: [u8; 4], mut out: W) -> Result<(), RasterError> {
        out.write_all(&magic)?;
        out.write_all(&self.width.to_le_bytes())?;
        out.write_all(&self.height.to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.values.len() * 4);
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
        Ok(())
    }

    pub fn read_binary<R: Read>(magic: [u8; 4], mut input: R) -> Result<Self, RasterError> {
        let mut found = [0u8; 4];
        input.read_exact(&mut found)?;
        if found != magic {
            return Err(RasterError::BadMagic { expected: magic, found });
        }
        let mut word = [0u8; 4];
        input.read_exact(&mut word)?;
        let width = u32::from_le_bytes(word);
        input.read_exact(&mut word)?;
        let height = u32::from_le_bytes(word);
        if width == 0 || height == 0 {
            return Err(RasterError::EmptyDimensions(width, height));
        }
        let expected = (width as usize) * (height as usize);
        let mut payload = Vec::new();
        input.read_to_end(&mut payload)?;
        if payload.len() < expected * 4 {
            return Err(RasterError::Truncated { expected, found: payload.len() / 4 });
        }
        let values = payload[..expected * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Self { width, height, values })
    }

    pub fn save(&self, magic: [u8; 4], path: &Path) -> Result<(), RasterError> {
        let file = std::fs::File::create(path)?;
        self.write_binary(magic, std::io::BufWriter::new(file))
    }

    pub fn load(magic: [u8; 4], path: &Path) -> Result<Self, RasterError> {
        let file = std::fs::File::open(path)?;
        Self::read_binary(magic, std::io::BufReader::new(file))
    }
}
