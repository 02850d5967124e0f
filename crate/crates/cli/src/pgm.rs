//! Portable graymaps, plain (`P2`) and raw (`P5`).

use std::path::Path;

use anyhow::{bail, Context, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graymap {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    /// Row-major samples.
    pub pixels: Vec<u16>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Encoding {
    Plain,
    Raw,
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            bail!("graymap: expected {what}");
        }
        let s = std::str::from_utf8(&self.bytes[start..self.pos])?;
        s.parse().with_context(|| format!("graymap: {what} out of range"))
    }
}

impl Graymap {
    pub fn new(width: usize, height: usize, maxval: u16, pixels: Vec<u16>) -> Result<Self> {
        if maxval == 0 {
            bail!("graymap: maxval must be positive");
        }
        if pixels.len() != width * height {
            bail!("graymap: {} samples for a {width}x{height} image", pixels.len());
        }
        if let Some(v) = pixels.iter().find(|v| **v > maxval) {
            bail!("graymap: sample {v} exceeds maxval {maxval}");
        }
        Ok(Self {
            width,
            height,
            maxval,
            pixels,
        })
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let encoding = match bytes.get(..2) {
            Some(b"P2") => Encoding::Plain,
            Some(b"P5") => Encoding::Raw,
            _ => bail!("unsupported image format: only P2 and P5 graymaps are read"),
        };
        let mut h = Header { bytes, pos: 2 };
        let width = h.number("width")?;
        let height = h.number("height")?;
        let maxval = h.number("maxval")?;
        if maxval == 0 || maxval > 65535 {
            bail!("graymap: maxval {maxval} outside 1..=65535");
        }
        let count = width * height;
        let pixels: Vec<u16> = match encoding {
            Encoding::Plain => (0..count)
                .map(|_| u16::try_from(h.number("sample")?).context("graymap: sample out of range"))
                .collect::<Result<_>>()?,
            Encoding::Raw => {
                // exactly one whitespace byte separates the header from the samples
                let start = h.pos + 1;
                let wide = maxval > 255;
                let need = count * if wide { 2 } else { 1 };
                let Some(data) = bytes.get(start..start + need) else {
                    bail!("graymap: truncated raster");
                };
                if wide {
                    data.chunks_exact(2).map(|b| u16::from_be_bytes([b[0], b[1]])).collect()
                } else {
                    data.iter().map(|&b| b as u16).collect()
                }
            }
        };
        Self::new(width, height, maxval as u16, pixels)
    }

    pub fn encode(&self, encoding: Encoding) -> Vec<u8> {
        match encoding {
            Encoding::Plain => {
                let mut s = format!("P2\n{} {}\n{}\n", self.width, self.height, self.maxval);
                for row in self.pixels.chunks(self.width.max(1)) {
                    let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                    s.push_str(&line.join(" "));
                    s.push('\n');
                }
                s.into_bytes()
            }
            Encoding::Raw => {
                let mut out = format!("P5\n{} {}\n{}\n", self.width, self.height, self.maxval).into_bytes();
                for &v in &self.pixels {
                    if self.maxval > 255 {
                        out.extend_from_slice(&v.to_be_bytes());
                    } else {
                        out.push(v as u8);
                    }
                }
                out
            }
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
        Self::decode(&bytes).with_context(|| format!("in {}", path.display()))
    }

    pub fn write(&self, path: &Path, encoding: Encoding) -> Result<()> {
        std::fs::write(path, self.encode(encoding)).with_context(|| format!("cannot write {}", path.display()))
    }

    /// Samples scaled to `[0, 1]`, stacked column by column.
    pub fn to_unit_columns(&self) -> Vec<f64> {
        let scale = self.maxval as f64;
        let mut out = Vec::with_capacity(self.pixels.len());
        for c in 0..self.width {
            for r in 0..self.height {
                out.push(self.pixels[r * self.width + c] as f64 / scale);
            }
        }
        out
    }

    /// Inverse of [`Graymap::to_unit_columns`], rounding and clamping to `[0, maxval]`.
    pub fn from_unit_columns(width: usize, height: usize, maxval: u16, u: &[f64]) -> Self {
        let scale = maxval as f64;
        let mut pixels = vec![0u16; width * height];
        for c in 0..width {
            for r in 0..height {
                let v = (u[r + c * height] * scale).round();
                pixels[r * width + c] = if v.is_nan() { 0 } else { v.clamp(0.0, scale) as u16 };
            }
        }
        Self {
            width,
            height,
            maxval,
            pixels,
        }
    }
}
