//! Float RGB images and their on-disk encodings.
//!
//! Besides 8-bit PNG, images can be dumped losslessly as `KPLIMG1`: the
//! 7-byte magic, little-endian `u32` width and height, then `f32` RGB
//! triples in row-major order.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const FLOAT_IMAGE_MAGIC: &[u8; 7] = b"KPLIMG1";

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB.
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut img = Self::new(width, height);
        for px in img.data.chunks_exact_mut(3) {
            px.copy_from_slice(&rgb);
        }
        img
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> [f64; 3] {
        let o = (row * self.width + col) * 3;
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, rgb: [f64; 3]) {
        let o = (row * self.width + col) * 3;
        self.data[o..o + 3].copy_from_slice(&rgb);
    }

    pub fn same_size(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn from_gray(width: usize, height: usize, values: &[f64]) -> Self {
        let mut img = Self::new(width, height);
        for (px, v) in img.data.chunks_exact_mut(3).zip(values) {
            px.fill(*v);
        }
        img
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        let bytes = self
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        image::RgbImage::from_raw(self.width as u32, self.height as u32, bytes)
            .expect("buffer matches dimensions")
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.to_rgb8().save_with_format(path, image::ImageFormat::Png).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Saves as RGBA, un-compositing `self` from `background` with `alpha`.
    pub fn save_png_with_alpha(&self, path: impl AsRef<Path>, alpha: &[f64], background: [f64; 3]) -> Result<()> {
        let path = path.as_ref();
        let mut bytes = Vec::with_capacity(self.pixel_count() * 4);
        for (px, &a) in self.data.chunks_exact(3).zip(alpha) {
            for k in 0..3 {
                let fg = if a > 0.0 { (px[k] - (1.0 - a) * background[k]) / a } else { 0.0 };
                bytes.push((fg.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
            bytes.push((a.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
        let img = image::RgbaImage::from_raw(self.width as u32, self.height as u32, bytes)
            .expect("buffer matches dimensions");
        img.save_with_format(path, image::ImageFormat::Png).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Decodes a PNG; alpha, when present, is composited over `background`.
    pub fn load_png(path: impl AsRef<Path>, background: [f64; 3]) -> Result<Self> {
        Self::load_png_with_alpha(path, background).map(|(img, _)| img)
    }

    /// Like [`Image::load_png`], also returning coverage when the file has alpha.
    pub fn load_png_with_alpha(path: impl AsRef<Path>, background: [f64; 3]) -> Result<(Self, Option<Vec<f64>>)> {
        let path = path.as_ref();
        let decoded = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        let has_alpha = decoded.color().has_alpha();
        let rgba = decoded.to_rgba32f();
        let (w, h) = rgba.dimensions();
        let mut img = Self::new(w as usize, h as usize);
        for (dst, px) in img.data.chunks_exact_mut(3).zip(rgba.pixels()) {
            let a = px[3] as f64;
            for k in 0..3 {
                dst[k] = px[k] as f64 * a + background[k] * (1.0 - a);
            }
        }
        let alpha = has_alpha.then(|| rgba.pixels().map(|p| p[3] as f64).collect());
        Ok((img, alpha))
    }

    pub fn write_float<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(FLOAT_IMAGE_MAGIC)?;
        w.write_all(&(self.width as u32).to_le_bytes())?;
        w.write_all(&(self.height as u32).to_le_bytes())?;
        for v in &self.data {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_float<R: Read>(mut r: R) -> Result<Self> {
        let bad = |m: &str| Error::Shape(format!("float image: {m}"));
        let mut magic = [0u8; 7];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != FLOAT_IMAGE_MAGIC {
            return Err(bad("bad magic"));
        }
        let mut u = [0u8; 4];
        r.read_exact(&mut u).map_err(|_| bad("truncated header"))?;
        let width = u32::from_le_bytes(u) as usize;
        r.read_exact(&mut u).map_err(|_| bad("truncated header"))?;
        let height = u32::from_le_bytes(u) as usize;
        let mut img = Self::new(width, height);
        for v in &mut img.data {
            r.read_exact(&mut u).map_err(|_| bad("truncated pixel data"))?;
            *v = f32::from_le_bytes(u) as f64;
        }
        Ok(img)
    }

    pub fn save_float(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_float(std::io::BufWriter::new(file)).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_dump_layout() {
        let mut img = Image::new(2, 1);
        img.set(0, 1, [0.25, 0.5, 1.0]);
        let mut buf = Vec::new();
        img.write_float(&mut buf).unwrap();
        assert_eq!(&buf[..7], b"KPLIMG1");
        assert_eq!(u32::from_le_bytes(buf[7..11].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(buf[11..15].try_into().unwrap()), 1);
        assert_eq!(buf.len(), 15 + 6 * 4);
        assert_eq!(Image::read_float(buf.as_slice()).unwrap(), img);
    }

    #[test]
    fn float_dump_rejects_bad_magic() {
        assert!(Image::read_float(&b"KPLIMG2\0\0\0\0\0\0\0\0"[..]).is_err());
    }
}
