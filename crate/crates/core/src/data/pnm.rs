//! Binary PGM (P5) and PPM (P6) image I/O, maxval 255.
//!
//! Reading maps [0, 255] to [0, 1] by division; writing clamps to [0, 1]
//! and rounds half-up. Images are (channels, height, width) tensors.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

fn format_err(path: &Path, offset: usize, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.display().to_string(),
        offset,
        msg: msg.into(),
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn skip_whitespace_and_comments(&mut self) -> Result<()> {
        loop {
            match self.bytes.get(self.pos) {
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                Some(b'#') => {
                    while let Some(&b) = self.bytes.get(self.pos) {
                        self.pos += 1;
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                _ => return Ok(()),
            }
        }
    }

    fn read_uint(&mut self, what: &str) -> Result<usize> {
        self.skip_whitespace_and_comments()?;
        let start = self.pos;
        while self
            .bytes
            .get(self.pos)
            .map(|b| b.is_ascii_digit())
            .unwrap_or(false)
        {
            self.pos += 1;
        }
        if self.pos == start {
            return Err(format_err(
                self.path,
                start,
                format!("expected unsigned integer for {what}"),
            ));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format_err(self.path, start, format!("invalid {what}")))
    }
}

/// Reads a P5 (1-channel) or P6 (3-channel) binary image.
pub fn read_image<S: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<S>> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(format_err(path, 0, "not a binary PGM (P5) or PPM (P6) file")),
    };
    let mut cur = Cursor {
        bytes: &bytes,
        pos: 2,
        path,
    };
    let width = cur.read_uint("width")?;
    let height = cur.read_uint("height")?;
    let maxval_at = cur.pos;
    let maxval = cur.read_uint("maxval")?;
    if maxval != 255 {
        return Err(format_err(
            path,
            maxval_at,
            format!("unsupported maxval {maxval}, expected 255"),
        ));
    }
    if width == 0 || height == 0 {
        return Err(format_err(path, 2, "zero image dimension"));
    }
    // exactly one whitespace byte separates the header from the payload
    match cur.bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        _ => {
            return Err(format_err(
                path,
                cur.pos,
                "missing whitespace before pixel payload",
            ))
        }
    }
    let expected = width * height * channels;
    let payload = &bytes[cur.pos.min(bytes.len())..];
    if payload.len() < expected {
        return Err(format_err(
            path,
            bytes.len(),
            format!(
                "truncated payload: expected {expected} bytes from offset {}, found {}",
                cur.pos,
                payload.len()
            ),
        ));
    }
    let inv = S::of_f64(1.0 / 255.0);
    // interleaved rows -> planar (c, h, w)
    let mut data = vec![S::zero(); expected];
    for y in 0..height {
        for x in 0..width {
            for c in 0..channels {
                let v = payload[(y * width + x) * channels + c];
                data[(c * height + y) * width + x] = S::of_f64(v as f64) * inv;
            }
        }
    }
    Tensor::new(vec![channels, height, width], data)
}

/// Writes a (1, h, w) tensor as P5 or a (3, h, w) tensor as P6.
pub fn write_image<S: Scalar>(path: impl AsRef<Path>, image: &Tensor<S>) -> Result<()> {
    let path = path.as_ref();
    let (channels, height, width) = image.dims3()?;
    let magic = match channels {
        1 => "P5",
        3 => "P6",
        other => {
            return Err(Error::invalid(
                "write_image",
                format!("expected 1 or 3 channels, got {other}"),
            ))
        }
    };
    let mut out = format!("{magic}\n{width} {height}\n255\n").into_bytes();
    for y in 0..height {
        for x in 0..width {
            for c in 0..channels {
                let v = image.data()[(c * height + y) * width + x].as_f64();
                let clamped = v.clamp(0.0, 1.0);
                out.push((clamped * 255.0 + 0.5).floor() as u8);
            }
        }
    }
    fs::write(path, out)?;
    Ok(())
}
