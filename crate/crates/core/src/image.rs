//! Single-channel square images and their file formats.

use std::fs;
use std::path::Path;

use candle_core::{Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::{CoreError, Result};

/// Grayscale square image with finite values in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    size: usize,
    pixels: Vec<f32>,
}

impl ImageTensor {
    pub fn new(size: usize, pixels: Vec<f32>) -> Result<Self> {
        if size == 0 || pixels.len() != size * size {
            return Err(CoreError::Shape(format!(
                "{} pixels do not form a {size}x{size} image",
                pixels.len()
            )));
        }
        if let Some((i, v)) = pixels.iter().enumerate().find(|(_, v)| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(CoreError::InvalidArgument(format!("pixel {i} has value {v}, outside [0, 1]")));
        }
        Ok(Self { size, pixels })
    }

    /// Clamps into range; non-finite values are rejected.
    pub fn from_clamped(size: usize, pixels: Vec<f32>) -> Result<Self> {
        if pixels.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::InvalidArgument("non-finite pixel".into()));
        }
        Self::new(size, pixels.into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
    }

    pub fn filled(size: usize, value: f32) -> Result<Self> {
        Self::new(size, vec![value; size * size])
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.pixels[row * self.size + col]
    }

    pub fn to_tensor(&self) -> Result<Tensor> {
        Ok(Tensor::from_slice(&self.pixels, (1, 1, self.size, self.size), &Device::Cpu)?)
    }

    /// Stacks images into an `(N, 1, S, S)` batch.
    pub fn batch(images: &[&ImageTensor]) -> Result<Tensor> {
        let first = images.first().ok_or_else(|| CoreError::InvalidArgument("empty image batch".into()))?;
        let s = first.size;
        let mut data = Vec::with_capacity(images.len() * s * s);
        for im in images {
            if im.size != s {
                return Err(CoreError::Shape(format!("batch mixes sizes {s} and {}", im.size)));
            }
            data.extend_from_slice(&im.pixels);
        }
        Ok(Tensor::from_vec(data, (images.len(), 1, s, s), &Device::Cpu)?)
    }

    /// Splits an `(N, 1, S, S)` tensor back into images; values are clamped.
    pub fn unbatch(t: &Tensor) -> Result<Vec<ImageTensor>> {
        let (n, c, h, w) = t.dims4()?;
        if c != 1 || h != w {
            return Err(CoreError::Shape(format!("expected (N, 1, S, S), got {:?}", t.dims())));
        }
        let flat = t.to_dtype(candle_core::DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
        flat.chunks(h * w).take(n).map(|c| Self::from_clamped(h, c.to_vec())).collect()
    }

    pub fn read(path: &Path) -> Result<Self> {
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
        if ext == "png" {
            read_png(path)
        } else {
            let raw = RawImage::read(path)?;
            if raw.height != raw.width {
                return Err(CoreError::Shape(format!("{}: image is not square", path.display())));
            }
            Self::new(raw.height, raw.data).map_err(|e| CoreError::io(path, e))
        }
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u16> = self.pixels.iter().map(|v| (v * 65535.0).round() as u16).collect();
        let buf = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(self.size as u32, self.size as u32, bytes)
            .expect("buffer length matches dimensions");
        buf.save(path).map_err(|e| CoreError::io(path, e))
    }
}

fn read_png(path: &Path) -> Result<ImageTensor> {
    let img = image::open(path).map_err(|e| CoreError::io(path, e))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    if w != h {
        return Err(CoreError::Shape(format!("{}: {w}x{h} image is not square", path.display())));
    }
    let pixels = match img {
        image::DynamicImage::ImageLuma8(b) => b.into_raw().into_iter().map(|v| v as f32 / 255.0).collect(),
        image::DynamicImage::ImageLuma16(b) => b.into_raw().into_iter().map(|v| v as f32 / 65535.0).collect(),
        other => {
            return Err(CoreError::io(path, format!("unsupported pixel format {:?}, expected grayscale", other.color())))
        }
    };
    ImageTensor::new(h, pixels)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawSidecar {
    pub height: usize,
    pub width: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gain: Option<f64>,
}

/// Flat little-endian float32 array; its shape lives in a `.json` sidecar.
#[derive(Debug, Clone, PartialEq)]
pub struct RawImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl RawImage {
    pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
        path.with_extension("json")
    }

    pub fn read(path: &Path) -> Result<Self> {
        let side = Self::sidecar_path(path);
        let text = fs::read_to_string(&side).map_err(|e| CoreError::io(&side, e))?;
        let meta: RawSidecar = serde_json::from_str(&text).map_err(|e| CoreError::io(&side, e))?;
        let bytes = fs::read(path).map_err(|e| CoreError::io(path, e))?;
        if bytes.len() != meta.height * meta.width * 4 {
            return Err(CoreError::io(
                path,
                format!("{} bytes, sidecar declares {}x{} float32", bytes.len(), meta.height, meta.width),
            ));
        }
        let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        Ok(Self { height: meta.height, width: meta.width, data })
    }

    pub fn write(&self, path: &Path, gain: Option<f64>) -> Result<()> {
        let mut bytes = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(path, bytes).map_err(|e| CoreError::io(path, e))?;
        let side = Self::sidecar_path(path);
        let meta = RawSidecar { height: self.height, width: self.width, gain };
        fs::write(&side, serde_json::to_string_pretty(&meta)?).map_err(|e| CoreError::io(&side, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_and_non_square() {
        assert!(ImageTensor::new(2, vec![0.0, 0.5, 1.0, 1.5]).is_err());
        assert!(ImageTensor::new(2, vec![0.0, f32::NAN, 1.0, 0.5]).is_err());
        assert!(ImageTensor::new(2, vec![0.0; 3]).is_err());
        assert!(ImageTensor::new(2, vec![0.25; 4]).is_ok());
    }

    #[test]
    fn batch_round_trip() {
        let a = ImageTensor::new(2, vec![0.0, 0.1, 0.2, 0.3]).unwrap();
        let b = ImageTensor::new(2, vec![1.0, 0.9, 0.8, 0.7]).unwrap();
        let t = ImageTensor::batch(&[&a, &b]).unwrap();
        assert_eq!(t.dims(), &[2, 1, 2, 2]);
        assert_eq!(ImageTensor::unbatch(&t).unwrap(), vec![a, b]);
    }

    #[test]
    fn file_formats_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = ImageTensor::new(3, (0..9).map(|i| i as f32 / 8.0).collect()).unwrap();

        let raw_path = dir.path().join("img.f32");
        RawImage { height: 3, width: 3, data: img.pixels().to_vec() }.write(&raw_path, None).unwrap();
        assert_eq!(ImageTensor::read(&raw_path).unwrap(), img);

        let png = dir.path().join("img.png");
        img.write_png(&png).unwrap();
        let back = ImageTensor::read(&png).unwrap();
        for (a, b) in back.pixels().iter().zip(img.pixels()) {
            assert!((a - b).abs() < 1.0 / 65535.0);
        }
    }
}
