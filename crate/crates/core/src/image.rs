//! RGB images with optional named 2D landmarks.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::Vec3;

/// Pixel coordinates, top-left origin, pixel centers at `+0.5`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }
}

/// Row-major RGB image with channels in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageRGB {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<Vec3>,
    pub landmarks: BTreeMap<String, Point2>,
}

impl ImageRGB {
    pub fn new(width: usize, height: usize, fill: Vec3) -> Self {
        ImageRGB {
            width,
            height,
            pixels: vec![fill; width * height],
            landmarks: BTreeMap::new(),
        }
    }

    pub fn from_pixels(width: usize, height: usize, pixels: Vec<Vec3>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: width * height,
                got: pixels.len(),
            });
        }
        Ok(ImageRGB {
            width,
            height,
            pixels,
            landmarks: BTreeMap::new(),
        })
    }

    pub fn get(&self, x: usize, y: usize) -> Vec3 {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, c: Vec3) {
        self.pixels[y * self.width + x] = c;
    }

    pub fn load_png(path: &Path) -> Result<ImageRGB> {
        let img = image::open(path)
            .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?
            .to_rgb8();
        let (w, h) = img.dimensions();
        let pixels = img
            .pixels()
            .map(|p| Vec3::new(p[0] as f64, p[1] as f64, p[2] as f64) / 255.0)
            .collect();
        ImageRGB::from_pixels(w as usize, h as usize, pixels)
    }

    pub fn png_bytes(&self) -> Result<Vec<u8>> {
        let raw: Vec<u8> = self
            .pixels
            .iter()
            .flat_map(|c| c.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect::<Vec<_>>())
            .collect();
        encode_png(self.width, self.height, image::ExtendedColorType::Rgb8, &raw)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        crate::io_util::write_atomic(path, &self.png_bytes()?)
    }
}

pub(crate) fn encode_png(
    width: usize,
    height: usize,
    color: image::ExtendedColorType,
    raw: &[u8],
) -> Result<Vec<u8>> {
    use image::ImageEncoder;
    let mut out = Vec::new();
    image::codecs::png::PngEncoder::new(&mut out)
        .write_image(raw, width as u32, height as u32, color)
        .map_err(|e| Error::Image(e.to_string()))?;
    Ok(out)
}

/// Grayscale PNG of a boolean mask (white = true).
pub fn mask_png_bytes(width: usize, height: usize, mask: &[bool]) -> Result<Vec<u8>> {
    let raw: Vec<u8> = mask.iter().map(|&m| if m { 255 } else { 0 }).collect();
    encode_png(width, height, image::ExtendedColorType::L8, &raw)
}

/// Portable float map (single channel, little-endian, bottom-to-top rows).
pub fn pfm_bytes(width: usize, height: usize, values: &[f64]) -> Vec<u8> {
    let mut out = format!("Pf\n{width} {height}\n-1.0\n").into_bytes();
    for y in (0..height).rev() {
        for x in 0..width {
            out.extend_from_slice(&(values[y * width + x] as f32).to_le_bytes());
        }
    }
    out
}

/// Read image landmarks from `{"name": {"x": px, "y": px}}` JSON.
pub fn read_image_landmarks(path: &Path) -> Result<BTreeMap<String, Point2>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_image_landmarks(&text)
}

pub fn parse_image_landmarks(text: &str) -> Result<BTreeMap<String, Point2>> {
    let map: BTreeMap<String, Point2> = serde_json::from_str(text)?;
    if let Some((name, _)) = map.iter().find(|(_, p)| !(p.x.is_finite() && p.y.is_finite())) {
        return Err(Error::Parse(format!("landmark {name} is not finite")));
    }
    Ok(map)
}

pub fn write_image_landmarks(path: &Path, landmarks: &BTreeMap<String, Point2>) -> Result<()> {
    crate::io_util::write_atomic(path, serde_json::to_string_pretty(landmarks)?.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pixel_count_is_checked() {
        assert!(ImageRGB::from_pixels(2, 2, vec![Vec3::zeros(); 3]).is_err());
    }

    #[test]
    fn png_round_trip_quantizes_to_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = ImageRGB::new(3, 2, Vec3::new(1.0, 0.0, 0.5));
        img.set(2, 1, Vec3::new(0.2, 0.4, 0.6));
        let path = dir.path().join("a.png");
        img.save_png(&path).unwrap();
        let back = ImageRGB::load_png(&path).unwrap();
        assert_eq!((back.width, back.height), (3, 2));
        for (a, b) in img.pixels.iter().zip(&back.pixels) {
            assert!((a - b).amax() <= 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn landmark_json_schema() {
        let lm = parse_image_landmarks(r#"{"nose": {"x": 10.5, "y": 3}}"#).unwrap();
        assert_eq!(lm["nose"], Point2::new(10.5, 3.0));
        assert!(parse_image_landmarks(r#"{"nose": {"x": 1}}"#).is_err());
        assert!(parse_image_landmarks("not json").is_err());
    }
}
