//! Binary portable graymap (`P5`, 8-bit) reading and writing.

use crate::error::{Error, Result};
use crate::imaging::GrayImage;

fn fmt_err(msg: impl Into<String>) -> Error {
    Error::ImageFormat(msg.into())
}

/// Cursor over the ASCII header, skipping whitespace and `#` comments.
struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b' ' | b'\t' | b'\n' | b'\r' | 0x0b | 0x0c => self.pos += 1,
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
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
            return Err(fmt_err(format!("missing {what} in header")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .expect("ascii digits")
            .parse()
            .map_err(|_| fmt_err(format!("{what} out of range")))
    }
}

pub fn read_pgm(bytes: &[u8]) -> Result<GrayImage> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(fmt_err("not a binary graymap (magic `P5` expected)"));
    }
    let mut h = Header { bytes, pos: 2 };
    let width = h.number("width")?;
    let height = h.number("height")?;
    let maxval = h.number("maxval")?;
    if maxval != 255 {
        return Err(fmt_err(format!("unsupported maxval {maxval} (only 255)")));
    }
    if width == 0 || height == 0 {
        return Err(fmt_err("image dimensions must be positive"));
    }
    match bytes.get(h.pos) {
        Some(c) if c.is_ascii_whitespace() => h.pos += 1,
        _ => return Err(fmt_err("missing whitespace after header")),
    }
    let n = width
        .checked_mul(height)
        .ok_or_else(|| fmt_err("image dimensions overflow"))?;
    let payload = &bytes[h.pos..];
    if payload.len() < n {
        return Err(fmt_err(format!(
            "truncated payload: {} of {n} bytes",
            payload.len()
        )));
    }
    let pixels = payload[..n].iter().map(|&b| b as f64 / 255.0).collect();
    GrayImage::new(width, height, pixels)
}

/// 8-bit quantization with round-half-up.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

pub fn write_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.pixels().iter().map(|&v| quantize(v)));
    out
}
