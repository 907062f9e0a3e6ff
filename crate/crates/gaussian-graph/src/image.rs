//! RGB image buffer plus the binary file formats the pipeline emits:
//! 8-bit P6 PPM for images and little-endian `f32` raw blobs (with a JSON
//! dims sidecar) for depth maps.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed {format} file: {reason}")]
    Malformed {
        format: &'static str,
        reason: String,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Row-major RGB image with channels in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    pub data: Vec<[f64; 3]>,
}

impl Image {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![[0.0; 3]; width as usize * height as usize],
        }
    }

    pub fn filled(width: u32, height: u32, color: [f64; 3]) -> Self {
        Self {
            width,
            height,
            data: vec![color; width as usize * height as usize],
        }
    }

    pub fn pixel(&self, u: u32, v: u32) -> [f64; 3] {
        self.data[v as usize * self.width as usize + u as usize]
    }

    pub fn set_pixel(&mut self, u: u32, v: u32, value: [f64; 3]) {
        self.data[v as usize * self.width as usize + u as usize] = value;
    }

    /// Quantize one channel to 8 bits: clamp to [0, 1], round half-up.
    pub fn quantize(value: f64) -> u8 {
        let clamped = value.clamp(0.0, 1.0);
        let scaled = (clamped * 255.0 + 0.5).floor();
        scaled.min(255.0) as u8
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .flat_map(|px| px.iter().map(|&c| Self::quantize(c)))
            .collect()
    }
}

pub fn write_ppm(image: &Image, path: &Path) -> Result<(), ImageError> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(file, "P6\n{} {}\n255\n", image.width, image.height)?;
    file.write_all(&image.to_rgb8())?;
    Ok(())
}

pub fn read_ppm(path: &Path) -> Result<Image, ImageError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let malformed = |reason: &str| ImageError::Malformed {
        format: "ppm",
        reason: reason.to_string(),
    };
    let mut pos = 0usize;
    let mut token = |bytes: &[u8]| -> Result<String, ImageError> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(ImageError::Malformed {
                format: "ppm",
                reason: format!("unexpected end of header at byte {start}"),
            });
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token(&bytes)? != "P6" {
        return Err(malformed("missing P6 magic"));
    }
    let width: u32 = token(&bytes)?.parse().map_err(|_| malformed("bad width"))?;
    let height: u32 = token(&bytes)?
        .parse()
        .map_err(|_| malformed("bad height"))?;
    let maxval: u32 = token(&bytes)?
        .parse()
        .map_err(|_| malformed("bad maxval"))?;
    if maxval != 255 {
        return Err(malformed("only maxval 255 is supported"));
    }
    pos += 1; // single whitespace byte after maxval
    let expected = width as usize * height as usize * 3;
    if bytes.len() < pos + expected {
        return Err(ImageError::Malformed {
            format: "ppm",
            reason: format!(
                "payload truncated: need {expected} bytes at offset {pos}, have {}",
                bytes.len().saturating_sub(pos)
            ),
        });
    }
    let data = bytes[pos..pos + expected]
        .chunks_exact(3)
        .map(|px| {
            [
                px[0] as f64 / 255.0,
                px[1] as f64 / 255.0,
                px[2] as f64 / 255.0,
            ]
        })
        .collect();
    Ok(Image {
        width,
        height,
        data,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct DepthDims {
    width: u32,
    height: u32,
}

/// Raw little-endian f32 depth dump; no-hit pixels are stored as 0.
/// `path` gets the payload, `path` + ".json" the dimensions.
pub fn write_depth_raw(
    depth: &[f64],
    width: u32,
    height: u32,
    path: &Path,
) -> Result<(), ImageError> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for &d in depth {
        file.write_all(&(d as f32).to_le_bytes())?;
    }
    let dims = DepthDims { width, height };
    let sidecar = path.with_extension(format!(
        "{}.json",
        path.extension().and_then(|e| e.to_str()).unwrap_or("raw")
    ));
    std::fs::write(sidecar, serde_json::to_string_pretty(&dims)?)?;
    Ok(())
}

pub fn read_depth_raw(path: &Path) -> Result<(Vec<f64>, u32, u32), ImageError> {
    let sidecar = path.with_extension(format!(
        "{}.json",
        path.extension().and_then(|e| e.to_str()).unwrap_or("raw")
    ));
    let dims: DepthDims = serde_json::from_str(&std::fs::read_to_string(sidecar)?)?;
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let expected = dims.width as usize * dims.height as usize * 4;
    if bytes.len() != expected {
        return Err(ImageError::Malformed {
            format: "depth raw",
            reason: format!("expected {expected} bytes, found {}", bytes.len()),
        });
    }
    let depth = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok((depth, dims.width, dims.height))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantize_rounds_half_up() {
        assert_eq!(Image::quantize(0.0), 0);
        assert_eq!(Image::quantize(1.0), 255);
        assert_eq!(Image::quantize(-0.2), 0);
        assert_eq!(Image::quantize(2.0), 255);
        // 0.5/255 rounds up to 1.
        assert_eq!(Image::quantize(0.5 / 255.0), 1);
        assert_eq!(Image::quantize(0.49 / 255.0), 0);
    }

    #[test]
    fn ppm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = Image::new(3, 2);
        img.set_pixel(0, 0, [1.0, 0.0, 0.5]);
        img.set_pixel(2, 1, [0.25, 0.75, 1.0]);
        let path = dir.path().join("img.ppm");
        write_ppm(&img, &path).unwrap();
        let back = read_ppm(&path).unwrap();
        assert_eq!(back.width, 3);
        assert_eq!(back.height, 2);
        assert_eq!(back.to_rgb8(), img.to_rgb8());
    }

    #[test]
    fn ppm_rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ppm");
        std::fs::write(&path, b"P6\n2 2\n255\n\x00").unwrap();
        assert!(matches!(read_ppm(&path), Err(ImageError::Malformed { .. })));
    }

    #[test]
    fn depth_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("depth.raw");
        let depth = vec![1.5f64, 0.0, 99.25, 3.75];
        write_depth_raw(&depth, 2, 2, &path).unwrap();
        let (back, w, h) = read_depth_raw(&path).unwrap();
        assert_eq!((w, h), (2, 2));
        assert_eq!(back, depth); // all values f32-representable
    }
}
