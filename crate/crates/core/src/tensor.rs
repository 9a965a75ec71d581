//! Dense row-major `f32` tensors, images, and the `OPT1` binary format.
//!
//! File layout (all little-endian):
//!
//! ```text
//! offset 0   4 bytes   ASCII "OPT1"
//! offset 4   u32       rank
//! offset 8   rank×u64  dims
//! ...        f32×N     payload, N = product(dims)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{shape_err, Error, Result};

pub const TENSOR_MAGIC: &[u8; 4] = b"OPT1";

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(shape_err(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { shape, data: vec![0.0; n] }
    }

    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(usize) -> f32) -> Self {
        let n: usize = shape.iter().product();
        Self { data: (0..n).map(&mut f).collect(), shape }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_tensor(self, path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        load_tensor(path)
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        if let Some(i) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("tensor element {i} is {}", self.data[i])));
        }
        w.write_all(TENSOR_MAGIC)?;
        w.write_all(&(self.shape.len() as u32).to_le_bytes())?;
        for &d in &self.shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != TENSOR_MAGIC {
            return Err(Error::Format(format!("bad magic {magic:?}, expected \"OPT1\"")));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let rank = u32::from_le_bytes(b4) as usize;
        if rank > 16 {
            return Err(Error::Format(format!("implausible rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut b8 = [0u8; 8];
        let mut n: usize = 1;
        for _ in 0..rank {
            r.read_exact(&mut b8)?;
            let d = usize::try_from(u64::from_le_bytes(b8))
                .map_err(|_| Error::Format("dimension overflows usize".into()))?;
            n = n
                .checked_mul(d)
                .ok_or_else(|| Error::Format("element count overflows".into()))?;
            shape.push(d);
        }
        let mut payload = Vec::new();
        r.read_to_end(&mut payload)?;
        if payload.len() != n * 4 {
            return Err(shape_err(format!(
                "payload has {} bytes, shape {:?} needs {}",
                payload.len(),
                shape,
                n * 4
            )));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::new(shape, data)
    }
}

pub fn save_tensor(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    t.write_to(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    Tensor::read_from(BufReader::new(File::open(path)?))
}

/// A `C×H×W` image with nominal range `[-1, 1]`. Values are only clamped on export.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl ImageTensor {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if channels * height * width != data.len() {
            return Err(shape_err(format!(
                "image {channels}x{height}x{width} needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        Ok(Self { channels, height, width, data })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        Self { channels, height, width, data: vec![value; channels * height * width] }
    }

    pub fn same_shape(&self, other: &ImageTensor) -> bool {
        self.channels == other.channels && self.height == other.height && self.width == other.width
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let hw = self.height * self.width;
        &self.data[c * hw..(c + 1) * hw]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &ImageTensor) -> f32 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor { shape: vec![self.channels, self.height, self.width], data: self.data.clone() }
    }

    pub fn from_tensor(t: Tensor) -> Result<Self> {
        match *t.shape() {
            [c, h, w] => Self::new(c, h, w, t.into_data()),
            _ => Err(shape_err(format!("image tensor must be rank 3, got {:?}", t.shape()))),
        }
    }

    /// Per-channel mean and (population) standard deviation.
    pub fn channel_moments(&self) -> Vec<(f32, f32)> {
        (0..self.channels)
            .map(|c| {
                let p = self.plane(c);
                let n = p.len() as f64;
                let mean = p.iter().map(|&v| v as f64).sum::<f64>() / n;
                let var = p.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
                (mean as f32, var.sqrt() as f32)
            })
            .collect()
    }
}
