//! Binary PPM (`P6`). 8-bit samples when `maxval < 256`, otherwise 16-bit
//! big-endian. Decoded values are `sample / maxval`; encoding rounds half up.

use std::path::Path;

use crate::error::{Error, Result};

use super::image::LdrImage;

/// Cursor over a netpbm-style ASCII header.
pub(crate) struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
    format: &'static str,
}

impl<'a> Header<'a> {
    pub(crate) fn new(bytes: &'a [u8], format: &'static str) -> Self {
        Header { bytes, pos: 0, format }
    }

    pub(crate) fn error(&self, msg: impl Into<String>) -> Error {
        Error::Decode {
            format: self.format,
            offset: self.pos,
            msg: msg.into(),
        }
    }

    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&b| b != b'\n') {
                    self.pos += 1;
                }
            } else {
                break;
            }
        }
    }

    /// Next whitespace-delimited token.
    pub(crate) fn token(&mut self, what: &str) -> Result<&'a str> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(|b| !b.is_ascii_whitespace()) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.error(format!("expected {what}, found end of header")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos]).map_err(|_| Error::Decode {
            format: self.format,
            offset: start,
            msg: format!("{what} is not ASCII"),
        })
    }

    pub(crate) fn number<N: std::str::FromStr>(&mut self, what: &str) -> Result<N> {
        self.skip_space_and_comments();
        let start = self.pos;
        let tok = self.token(what)?;
        tok.parse().map_err(|_| Error::Decode {
            format: self.format,
            offset: start,
            msg: format!("invalid {what} '{tok}'"),
        })
    }

    /// Consumes the single whitespace byte that ends the header and returns
    /// the payload offset.
    pub(crate) fn end(&mut self) -> Result<usize> {
        match self.bytes.get(self.pos) {
            Some(b) if b.is_ascii_whitespace() => Ok(self.pos + 1),
            _ => Err(self.error("expected a single whitespace byte before the payload")),
        }
    }
}

pub fn decode_ppm(bytes: &[u8]) -> Result<LdrImage> {
    let mut hdr = Header::new(bytes, "PPM");
    let magic = hdr.token("magic number")?;
    if magic != "P6" {
        return Err(Error::Decode {
            format: "PPM",
            offset: 0,
            msg: format!("expected magic 'P6', found '{magic}'"),
        });
    }
    let width: usize = hdr.number("width")?;
    let height: usize = hdr.number("height")?;
    let maxval: u32 = hdr.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(hdr.error("image dimensions must be positive"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(hdr.error(format!("maxval {maxval} outside 1..=65535")));
    }
    let start = hdr.end()?;
    let sample_bytes = if maxval < 256 { 1 } else { 2 };
    let count = width * height * 3;
    let payload = &bytes[start..];
    if payload.len() < count * sample_bytes {
        return Err(Error::Decode {
            format: "PPM",
            offset: bytes.len(),
            msg: format!("truncated payload: expected {} bytes, found {}", count * sample_bytes, payload.len()),
        });
    }
    let scale = 1.0 / maxval as f64;
    let pixels = if sample_bytes == 1 {
        payload[..count].iter().map(|&b| (b as f64 * scale) as f32).collect()
    } else {
        payload[..count * 2]
            .chunks_exact(2)
            .map(|c| (u16::from_be_bytes([c[0], c[1]]) as f64 * scale) as f32)
            .collect()
    };
    LdrImage::new(height, width, pixels, 1.0)
}

pub fn encode_ppm(img: &LdrImage, maxval: u16) -> Result<Vec<u8>> {
    if maxval == 0 {
        return Err(Error::Config("PPM maxval must be positive".into()));
    }
    let mut out = format!("P6\n{} {}\n{}\n", img.width(), img.height(), maxval).into_bytes();
    let m = maxval as f64;
    for &v in img.pixels() {
        let q = ((v as f64).clamp(0.0, 1.0) * m + 0.5).floor().min(m) as u16;
        if maxval < 256 {
            out.push(q as u8);
        } else {
            out.extend_from_slice(&q.to_be_bytes());
        }
    }
    Ok(out)
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<LdrImage> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    decode_ppm(&bytes)
}

pub fn write_ppm(path: impl AsRef<Path>, img: &LdrImage, maxval: u16) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_ppm(img, maxval)?).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}
