//! Byteplot images, resizing and standard scaling.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("no input bytes")]
    EmptyInput,
    #[error("image dimensions must be positive, got {width}x{height}")]
    ZeroSize { width: usize, height: usize },
    #[error("{pixels} pixels do not fill a {width}x{height} image")]
    PixelCount { width: usize, height: usize, pixels: usize },
    #[error("scaler fitted on {expected} columns, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("row {row} has {got} columns, expected {expected}")]
    RaggedRows { row: usize, expected: usize, got: usize },
    #[error("no rows to fit")]
    NoRows,
    #[error("malformed graymap: {0}")]
    Pgm(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Grayscale image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ByteImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl ByteImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self, PreprocessError> {
        if width == 0 || height == 0 {
            return Err(PreprocessError::ZeroSize { width, height });
        }
        if pixels.len() != width * height {
            return Err(PreprocessError::PixelCount { width, height, pixels: pixels.len() });
        }
        Ok(Self { width, height, pixels })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    /// Binary PGM (P5), maxval 255.
    pub fn write_pgm<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "P5\n{} {}\n255\n", self.width, self.height)?;
        w.write_all(&self.pixels)
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.pixels.len() + 20);
        self.write_pgm(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    /// Reads a P5 graymap with maxval ≤ 255. Comments are allowed in the header.
    pub fn from_pgm(data: &[u8]) -> Result<Self, PreprocessError> {
        let mut pos = 0;
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            while pos < data.len() && (data[pos].is_ascii_whitespace() || data[pos] == b'#') {
                if data[pos] == b'#' {
                    while pos < data.len() && data[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    pos += 1;
                }
            }
            let start = pos;
            while pos < data.len() && !data[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(PreprocessError::Pgm("truncated header".into()));
            }
            fields.push(String::from_utf8_lossy(&data[start..pos]).into_owned());
        }
        if fields[0] != "P5" {
            return Err(PreprocessError::Pgm(format!("magic {:?} is not P5", fields[0])));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| PreprocessError::Pgm(format!("{s:?} is not a number")));
        let (width, height, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
        if maxval == 0 || maxval > 255 {
            return Err(PreprocessError::Pgm(format!("maxval {maxval} is not 1..=255")));
        }
        // exactly one whitespace byte separates the header from the raster
        pos += 1;
        let raster = data.get(pos..).unwrap_or_default();
        if raster.len() < width * height {
            return Err(PreprocessError::Pgm(format!(
                "raster holds {} bytes, expected {}",
                raster.len(),
                width * height
            )));
        }
        Self::new(width, height, raster[..width * height].to_vec())
    }
}

/// One pixel per byte, `width` pixels per row, last row padded with zeros.
pub fn bytes_to_image(data: &[u8], width: usize) -> Result<ByteImage, PreprocessError> {
    if data.is_empty() {
        return Err(PreprocessError::EmptyInput);
    }
    if width == 0 {
        return Err(PreprocessError::ZeroSize { width, height: 0 });
    }
    let height = data.len().div_ceil(width);
    let mut pixels = data.to_vec();
    pixels.resize(width * height, 0);
    ByteImage::new(width, height, pixels)
}

/// Nearest neighbour: output `(x, y)` reads source `(⌊x·w/W⌋, ⌊y·h/H⌋)`.
pub fn resize_nearest(img: &ByteImage, out_w: usize, out_h: usize) -> Result<ByteImage, PreprocessError> {
    if out_w == 0 || out_h == 0 {
        return Err(PreprocessError::ZeroSize { width: out_w, height: out_h });
    }
    let mut pixels = Vec::with_capacity(out_w * out_h);
    for y in 0..out_h {
        let sy = y * img.height / out_h;
        for x in 0..out_w {
            pixels.push(img.get(x * img.width / out_w, sy));
        }
    }
    ByteImage::new(out_w, out_h, pixels)
}

/// Pixels divided by 255, row-major.
pub fn normalize(img: &ByteImage) -> Vec<f64> {
    img.pixels.iter().map(|&p| f64::from(p) / 255.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ScalerParams {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scaler serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, PreprocessError> {
        let p: ScalerParams = serde_json::from_str(text)?;
        if p.mean.len() != p.std.len() {
            return Err(PreprocessError::DimensionMismatch { expected: p.mean.len(), got: p.std.len() });
        }
        Ok(p)
    }
}

/// Column means and population standard deviations.
pub fn fit_scaler(rows: &[Vec<f64>]) -> Result<ScalerParams, PreprocessError> {
    let first = rows.first().ok_or(PreprocessError::NoRows)?;
    let d = first.len();
    if let Some((row, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != d) {
        return Err(PreprocessError::RaggedRows { row, expected: d, got: r.len() });
    }
    let n = rows.len() as f64;
    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; d];
    for r in rows {
        for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std = var.into_iter().map(|s| (s / n).sqrt()).collect();
    Ok(ScalerParams { mean, std })
}

/// `z = (x − μ)/σ`, with `z = 0` wherever `σ = 0`.
pub fn apply_scaler(params: &ScalerParams, x: &[f64]) -> Result<Vec<f64>, PreprocessError> {
    if x.len() != params.mean.len() {
        return Err(PreprocessError::DimensionMismatch { expected: params.mean.len(), got: x.len() });
    }
    Ok(x.iter()
        .zip(params.mean.iter().zip(&params.std))
        .map(|(v, (m, s))| if *s == 0.0 { 0.0 } else { (v - m) / s })
        .collect())
}
