//! Intensity images with bilinear sub-pixel sampling and binary PGM I/O.

use std::fs;
use std::path::Path;

use super::FlowError;
use crate::geometry::{Flow2, PixelPoint};

/// Row-major grayscale image with intensities in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self, FlowError> {
        if width == 0 || height == 0 {
            return Err(FlowError::BadImage("zero dimension".into()));
        }
        if data.len() != width * height {
            return Err(FlowError::BadImage(format!(
                "{} values for {}x{} image",
                data.len(),
                width,
                height
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(FlowError::BadImage("non-finite intensity".into()));
        }
        Ok(Image { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Image { width, height, data }
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        Image { width, height, data: vec![value; width * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Intensity at an integer pixel; panics if out of range.
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Bilinear sample at a sub-pixel position. Any position outside
    /// [0, w-1] x [0, h-1] is an error; samples are never clamped.
    pub fn sample(&self, x: f64, y: f64) -> Result<f64, FlowError> {
        let (wm, hm) = ((self.width - 1) as f64, (self.height - 1) as f64);
        if !(0.0..=wm).contains(&x) || !(0.0..=hm).contains(&y) {
            return Err(FlowError::OutOfBounds { x, y });
        }
        let (x0, y0) = (x.floor(), y.floor());
        let (tx, ty) = (x - x0, y - y0);
        let (x0, y0) = (x0 as usize, y0 as usize);
        // At the far edge tx/ty are exactly 0, so the +1 neighbor has zero
        // weight; clamping the index keeps it addressable without bias.
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let v00 = self.get(x0, y0);
        let v10 = self.get(x1, y0);
        let v01 = self.get(x0, y1);
        let v11 = self.get(x1, y1);
        let top = v00 + tx * (v10 - v00);
        let bottom = v01 + tx * (v11 - v01);
        Ok(top + ty * (bottom - top))
    }
}

/// Central-difference intensity gradient at a sub-pixel position, in
/// intensity per pixel. The position must be at least one pixel inside the
/// border.
pub fn gradient(img: &Image, at: &PixelPoint) -> Result<Flow2, FlowError> {
    let gx = (img.sample(at.x + 1.0, at.y)? - img.sample(at.x - 1.0, at.y)?) / 2.0;
    let gy = (img.sample(at.x, at.y + 1.0)? - img.sample(at.x, at.y - 1.0)?) / 2.0;
    Ok(Flow2::new(gx, gy))
}

/// Reads a binary (P5) PGM file with 8-bit or 16-bit samples, normalizing
/// intensities to [0, 1].
pub fn read_pgm(path: impl AsRef<Path>) -> Result<Image, FlowError> {
    parse_pgm(&fs::read(path)?)
}

fn parse_pgm(bytes: &[u8]) -> Result<Image, FlowError> {
    let mut pos = 0usize;
    let mut token = |bytes: &[u8]| -> Result<String, FlowError> {
        // Skip whitespace and '#' comment lines between header tokens.
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(FlowError::MalformedPgm("truncated header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };

    if token(bytes)? != "P5" {
        return Err(FlowError::MalformedPgm("not a P5 file".into()));
    }
    let width: usize =
        token(bytes)?.parse().map_err(|_| FlowError::MalformedPgm("bad width".into()))?;
    let height: usize =
        token(bytes)?.parse().map_err(|_| FlowError::MalformedPgm("bad height".into()))?;
    let maxval: u32 =
        token(bytes)?.parse().map_err(|_| FlowError::MalformedPgm("bad maxval".into()))?;
    if maxval == 0 || maxval > 65535 {
        return Err(FlowError::MalformedPgm(format!("unsupported maxval {maxval}")));
    }
    pos += 1; // single whitespace separating header from raster
    let n = width * height;
    let scale = 1.0 / maxval as f64;
    let data = if maxval < 256 {
        if bytes.len() < pos + n {
            return Err(FlowError::MalformedPgm("truncated raster".into()));
        }
        bytes[pos..pos + n].iter().map(|&b| b as f64 * scale).collect()
    } else {
        if bytes.len() < pos + 2 * n {
            return Err(FlowError::MalformedPgm("truncated raster".into()));
        }
        bytes[pos..pos + 2 * n]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 * scale)
            .collect()
    };
    Image::new(width, height, data)
}

/// Writes a binary (P5) PGM file; 16-bit samples when `sixteen_bit`,
/// otherwise 8-bit. Intensities are clamped to [0, 1] and quantized.
pub fn write_pgm(
    path: impl AsRef<Path>,
    img: &Image,
    sixteen_bit: bool,
) -> Result<(), FlowError> {
    let maxval: u32 = if sixteen_bit { 65535 } else { 255 };
    let mut out = format!("P5\n{} {}\n{}\n", img.width(), img.height(), maxval).into_bytes();
    for &v in img.data() {
        let q = (v.clamp(0.0, 1.0) * maxval as f64).round() as u32;
        if sixteen_bit {
            out.extend_from_slice(&(q as u16).to_be_bytes());
        } else {
            out.push(q as u8);
        }
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constructor_validation() {
        assert!(Image::new(0, 4, vec![]).is_err());
        assert!(Image::new(2, 2, vec![0.0; 3]).is_err());
        assert!(Image::new(2, 2, vec![0.0, 0.0, f64::NAN, 0.0]).is_err());
        assert!(Image::new(2, 2, vec![0.0; 4]).is_ok());
    }

    #[test]
    fn bilinear_sample_values() {
        let img = Image::new(2, 2, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(img.sample(0.0, 0.0).unwrap(), 0.0);
        assert_eq!(img.sample(1.0, 1.0).unwrap(), 3.0);
        assert_eq!(img.sample(0.5, 0.0).unwrap(), 0.5);
        assert_eq!(img.sample(0.5, 0.5).unwrap(), 1.5);
        assert!(img.sample(-0.01, 0.0).is_err());
        assert!(img.sample(1.01, 0.0).is_err());
        assert!(img.sample(0.0, 1.0 + 1e-9).is_err());
    }

    #[test]
    fn gradient_constant_and_ramp() {
        let flat = Image::constant(9, 9, 0.4);
        let g = gradient(&flat, &PixelPoint::new(4.0, 4.0)).unwrap();
        assert_eq!((g.u, g.v), (0.0, 0.0));

        let w = 32usize;
        let ramp = Image::from_fn(w, w, |x, _| x as f64 / w as f64);
        for x in 1..w - 1 {
            let g = gradient(&ramp, &PixelPoint::new(x as f64, 5.0)).unwrap();
            assert!((g.u - 1.0 / w as f64).abs() < 1e-9);
            assert!(g.v.abs() < 1e-12);
        }
        assert!(gradient(&ramp, &PixelPoint::new(0.5, 5.0)).is_err());
    }

    #[test]
    fn gradient_matches_analytic_sinusoid() {
        let a = 0.1;
        let img = Image::from_fn(64, 64, |x, _| 0.5 + 0.5 * (a * x as f64).sin());
        for x in 2..62 {
            let g = gradient(&img, &PixelPoint::new(x as f64, 30.0)).unwrap();
            let analytic = 0.5 * a * (a * x as f64).cos();
            assert!((g.u - analytic).abs() < 1e-3, "at x={x}: {} vs {analytic}", g.u);
        }
    }

    #[test]
    fn pgm_round_trip_both_depths() {
        let dir = std::env::temp_dir().join("vor_pgm_test");
        std::fs::create_dir_all(&dir).unwrap();
        let img = Image::from_fn(17, 9, |x, y| ((x * 31 + y * 7) % 97) as f64 / 96.0);
        for (sixteen, tol) in [(false, 1.0 / 255.0), (true, 1.0 / 65535.0)] {
            let path = dir.join(format!("t{}.pgm", sixteen as u8));
            write_pgm(&path, &img, sixteen).unwrap();
            let back = read_pgm(&path).unwrap();
            assert_eq!((back.width(), back.height()), (17, 9));
            for (a, b) in img.data().iter().zip(back.data()) {
                assert!((a - b).abs() <= 0.5 * tol + 1e-12);
            }
        }
    }

    #[test]
    fn pgm_header_comments_and_errors() {
        let bytes = b"P5 # comment\n# another\n 2 1 255\n\x10\x20";
        let img = parse_pgm(bytes).unwrap();
        assert_eq!((img.width(), img.height()), (2, 1));
        assert!((img.get(0, 0) - 16.0 / 255.0).abs() < 1e-12);
        assert!(parse_pgm(b"P6 2 1 255\n\x00\x00").is_err());
        assert!(parse_pgm(b"P5 2 1 255\n\x00").is_err());
        assert!(parse_pgm(b"P5 2 1 70000\n").is_err());
    }
}
