//! Color images, depth maps and their PPM / PFM encodings.

use std::io::{Read, Write};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed {kind} file: {message}")]
    Format { kind: &'static str, message: String },
}

fn format_err(kind: &'static str, message: impl Into<String>) -> ImageError {
    ImageError::Format { kind, message: message.into() }
}

/// Row-major RGB image with channel values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<[f64; 3]>,
}

impl Image {
    pub fn new(width: u32, height: u32, fill: [f64; 3]) -> Self {
        Self { width, height, pixels: vec![fill; (width * height) as usize] }
    }

    pub fn get(&self, u: u32, v: u32) -> [f64; 3] {
        self.pixels[(v * self.width + u) as usize]
    }

    /// Binary PPM (`P6`, maxval 255).
    pub fn write_ppm(&self, mut w: impl Write) -> Result<(), ImageError> {
        write!(w, "P6\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self
            .pixels
            .iter()
            .flat_map(|p| p.map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8))
            .collect();
        w.write_all(&bytes)?;
        Ok(())
    }

    pub fn read_ppm(mut r: impl Read) -> Result<Self, ImageError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let (fields, body) = header_fields(&bytes, 4, "PPM")?;
        if fields[0] != "P6" || fields[3] != "255" {
            return Err(format_err("PPM", "expected P6 with maxval 255"));
        }
        let (width, height) = parse_dims(&fields, "PPM")?;
        let n = (width * height) as usize;
        if body.len() != 3 * n {
            return Err(format_err("PPM", format!("expected {} bytes of pixels, found {}", 3 * n, body.len())));
        }
        let pixels = body.chunks_exact(3).map(|c| [0, 1, 2].map(|k| c[k] as f64 / 255.0)).collect();
        Ok(Self { width, height, pixels })
    }
}

/// Row-major depth map; `f64::INFINITY` marks pixels without a surface.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    pub width: u32,
    pub height: u32,
    pub values: Vec<f64>,
}

impl DepthMap {
    /// Grayscale PFM (`Pf`), little-endian (scale −1), rows bottom to top.
    pub fn write_pfm(&self, mut w: impl Write) -> Result<(), ImageError> {
        write!(w, "Pf\n{} {}\n-1.0\n", self.width, self.height)?;
        let mut bytes = Vec::with_capacity(self.values.len() * 4);
        for row in (0..self.height as usize).rev() {
            let start = row * self.width as usize;
            for v in &self.values[start..start + self.width as usize] {
                bytes.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        w.write_all(&bytes)?;
        Ok(())
    }

    pub fn read_pfm(mut r: impl Read) -> Result<Self, ImageError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let (fields, body) = header_fields(&bytes, 4, "PFM")?;
        if fields[0] != "Pf" {
            return Err(format_err("PFM", "expected grayscale Pf"));
        }
        let (width, height) = parse_dims(&fields, "PFM")?;
        let scale: f64 = fields[3].parse().map_err(|_| format_err("PFM", "bad scale"))?;
        let n = (width * height) as usize;
        if body.len() != 4 * n {
            return Err(format_err("PFM", format!("expected {} bytes of samples, found {}", 4 * n, body.len())));
        }
        let sample = |i: usize| {
            let b: [u8; 4] = body[4 * i..4 * i + 4].try_into().unwrap();
            if scale < 0.0 {
                f32::from_le_bytes(b) as f64
            } else {
                f32::from_be_bytes(b) as f64
            }
        };
        let w = width as usize;
        let mut values = vec![0.0; n];
        for (file_row, row) in (0..height as usize).rev().enumerate() {
            for c in 0..w {
                values[row * w + c] = sample(file_row * w + c);
            }
        }
        Ok(Self { width, height, values })
    }
}

/// Splits off `count` whitespace-separated header tokens followed by one
/// whitespace byte.
fn header_fields<'a>(bytes: &'a [u8], count: usize, kind: &'static str) -> Result<(Vec<String>, &'a [u8]), ImageError> {
    let mut fields = Vec::new();
    let mut i = 0;
    while fields.len() < count {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(format_err(kind, "truncated header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    Ok((fields, bytes.get(i + 1..).unwrap_or(&[])))
}

fn parse_dims(fields: &[String], kind: &'static str) -> Result<(u32, u32), ImageError> {
    let w = fields[1].parse().map_err(|_| format_err(kind, "bad width"))?;
    let h = fields[2].parse().map_err(|_| format_err(kind, "bad height"))?;
    Ok((w, h))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_round_trip() {
        let mut img = Image::new(3, 2, [0.0, 0.5, 1.0]);
        img.pixels[4] = [1.0, 0.0, 0.2];
        let mut buf = Vec::new();
        img.write_ppm(&mut buf).unwrap();
        assert!(buf.starts_with(b"P6\n3 2\n255\n"));
        assert_eq!(buf.len(), 11 + 18);
        let back = Image::read_ppm(&buf[..]).unwrap();
        assert_eq!(back.get(1, 1), [1.0, 0.0, 51.0 / 255.0]);
    }

    #[test]
    fn pfm_round_trip_bottom_to_top() {
        let d = DepthMap { width: 2, height: 2, values: vec![1.0, 2.0, 3.0, f64::INFINITY] };
        let mut buf = Vec::new();
        d.write_pfm(&mut buf).unwrap();
        assert!(buf.starts_with(b"Pf\n2 2\n-1.0\n"));
        let body = &buf[buf.len() - 16..];
        // first stored row is the bottom image row
        assert_eq!(f32::from_le_bytes(body[0..4].try_into().unwrap()), 3.0);
        assert_eq!(DepthMap::read_pfm(&buf[..]).unwrap(), d);
    }
}
