//! 8-bit RGB PNG import/export for [`ImageTensor`].

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{arg_err, Error, Result};
use crate::tensor::ImageTensor;

/// `round((clamp(v, -1, 1) + 1) / 2 · 255)`.
pub fn to_byte(v: f32) -> u8 {
    let v = if v.is_nan() { 0.0 } else { v.clamp(-1.0, 1.0) };
    ((v + 1.0) * 0.5 * 255.0).round() as u8
}

pub fn from_byte(p: u8) -> f32 {
    p as f32 / 255.0 * 2.0 - 1.0
}

/// Interleaved RGB bytes. Single-channel images are replicated to gray.
pub fn to_rgb8(img: &ImageTensor) -> Result<Vec<u8>> {
    if img.channels != 3 && img.channels != 1 {
        return Err(arg_err(format!("png export needs 1 or 3 channels, got {}", img.channels)));
    }
    let hw = img.height * img.width;
    let mut out = Vec::with_capacity(hw * 3);
    for p in 0..hw {
        for c in 0..3 {
            let ch = if img.channels == 1 { 0 } else { c };
            out.push(to_byte(img.data[ch * hw + p]));
        }
    }
    Ok(out)
}

pub fn export_png(img: &ImageTensor, path: impl AsRef<Path>) -> Result<()> {
    let bytes = to_rgb8(img)?;
    let w = BufWriter::new(File::create(path)?);
    let mut enc = png::Encoder::new(w, img.width as u32, img.height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header()?;
    writer.write_image_data(&bytes)?;
    writer.finish()?;
    Ok(())
}

/// Tiles equally-sized images into a grid with `cols` columns.
pub fn grid(images: &[ImageTensor], cols: usize) -> Result<ImageTensor> {
    let first = images.first().ok_or_else(|| arg_err("grid of zero images"))?;
    if images.iter().any(|im| !im.same_shape(first)) {
        return Err(arg_err("grid images differ in shape"));
    }
    let cols = cols.max(1).min(images.len());
    let rows = images.len().div_ceil(cols);
    let (c, h, w) = (first.channels, first.height, first.width);
    let mut out = ImageTensor::filled(c, rows * h, cols * w, -1.0);
    for (k, im) in images.iter().enumerate() {
        let (gy, gx) = (k / cols, k % cols);
        for ch in 0..c {
            for y in 0..h {
                let src = &im.data[ch * h * w + y * w..ch * h * w + (y + 1) * w];
                let row = gy * h + y;
                let dst0 = ch * out.height * out.width + row * out.width + gx * w;
                out.data[dst0..dst0 + w].copy_from_slice(src);
            }
        }
    }
    Ok(out)
}

pub fn load_png(path: impl AsRef<Path>) -> Result<ImageTensor> {
    let decoder = png::Decoder::new(BufReader::new(File::open(path)?));
    let mut reader = decoder.read_info()?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader.next_frame(&mut buf)?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Format(format!("unsupported bit depth {:?}", info.bit_depth)));
    }
    let stride = match info.color_type {
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        other => return Err(Error::Format(format!("unsupported color type {other:?}"))),
    };
    let (w, h) = (info.width as usize, info.height as usize);
    let bytes = &buf[..info.buffer_size()];
    let mut data = vec![0.0; 3 * h * w];
    for p in 0..h * w {
        for c in 0..3 {
            let src = if stride < 3 { p * stride } else { p * stride + c };
            data[c * h * w + p] = from_byte(bytes[src]);
        }
    }
    ImageTensor::new(3, h, w, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_mapping_endpoints() {
        assert_eq!(to_byte(-1.0), 0);
        assert_eq!(to_byte(1.0), 255);
        assert_eq!(to_byte(0.0), 128);
        assert_eq!(to_byte(-7.0), 0);
        assert_eq!(to_byte(3.0), 255);
    }

    #[test]
    fn byte_mapping_is_monotone() {
        let mut prev = 0u8;
        for i in -1200..=1200 {
            let b = to_byte(i as f32 / 1000.0);
            assert!(b >= prev);
            prev = b;
        }
    }

    #[test]
    fn export_constant_images() {
        let dir = tempfile::tempdir().unwrap();
        for (v, expect) in [(-1.0, 0u8), (1.0, 255), (0.0, 128)] {
            let img = ImageTensor::filled(3, 4, 5, v);
            let path = dir.path().join("x.png");
            export_png(&img, &path).unwrap();
            let decoder = png::Decoder::new(BufReader::new(File::open(&path).unwrap()));
            let mut reader = decoder.read_info().unwrap();
            let mut buf = vec![0; reader.output_buffer_size().unwrap()];
            let info = reader.next_frame(&mut buf).unwrap();
            assert_eq!((info.width, info.height), (5, 4));
            assert!(buf[..info.buffer_size()].iter().all(|&b| b == expect));
        }
    }

    #[test]
    fn grid_places_tiles() {
        let a = ImageTensor::filled(3, 2, 2, 0.5);
        let b = ImageTensor::filled(3, 2, 2, -0.5);
        let g = grid(&[a, b.clone(), b], 2).unwrap();
        assert_eq!(g.shape(), [3, 4, 4]);
        assert_eq!(g.data[0], 0.5);
        assert_eq!(g.data[2], -0.5);
        // unused tile stays black
        assert_eq!(g.data[2 * 4 + 2], -1.0);
    }
}
