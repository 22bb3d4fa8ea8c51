//! Portable float map, colour variant (`PF`). The sign of the scale line
//! selects the byte order (negative: little-endian) and rows are stored
//! bottom to top. Greyscale `Pf` files are rejected.

use std::path::Path;

use crate::error::{Error, Result};

use super::image::HdrImage;
use super::ppm::Header;

pub fn decode_pfm(bytes: &[u8]) -> Result<HdrImage> {
    let mut hdr = Header::new(bytes, "PFM");
    let magic = hdr.token("magic number")?;
    match magic {
        "PF" => {}
        "Pf" => return Err(Error::Unsupported("greyscale PFM ('Pf') is not supported".into())),
        other => {
            return Err(Error::Decode {
                format: "PFM",
                offset: 0,
                msg: format!("expected magic 'PF', found '{other}'"),
            })
        }
    }
    let width: usize = hdr.number("width")?;
    let height: usize = hdr.number("height")?;
    let scale: f64 = hdr.number("scale")?;
    if width == 0 || height == 0 {
        return Err(hdr.error("image dimensions must be positive"));
    }
    if scale == 0.0 || !scale.is_finite() {
        return Err(hdr.error("scale must be a finite non-zero number"));
    }
    let start = hdr.end()?;
    let little = scale < 0.0;
    let expected = width * height * 3 * 4;
    let payload = &bytes[start..];
    if payload.len() != expected {
        return Err(Error::Decode {
            format: "PFM",
            offset: start,
            msg: format!("payload is {} bytes, header declares {expected}", payload.len()),
        });
    }
    let row_len = width * 3;
    let mut pixels = vec![0.0f32; width * height * 3];
    for (file_row, chunk) in payload.chunks_exact(row_len * 4).enumerate() {
        let y = height - 1 - file_row;
        for (dst, b) in pixels[y * row_len..(y + 1) * row_len].iter_mut().zip(chunk.chunks_exact(4)) {
            let raw = [b[0], b[1], b[2], b[3]];
            *dst = if little { f32::from_le_bytes(raw) } else { f32::from_be_bytes(raw) };
        }
    }
    HdrImage::new(height, width, pixels)
}

/// Little-endian encoding with scale `-1.0`.
pub fn encode_pfm(img: &HdrImage) -> Vec<u8> {
    let (h, w) = (img.height(), img.width());
    let mut out = format!("PF\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(h * w * 12);
    for y in (0..h).rev() {
        for v in &img.pixels()[y * w * 3..(y + 1) * w * 3] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<HdrImage> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    decode_pfm(&bytes)
}

pub fn write_pfm(path: impl AsRef<Path>, img: &HdrImage) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_pfm(img)).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_are_bottom_up() {
        let img = HdrImage::new(2, 1, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let bytes = encode_pfm(&img);
        let payload = &bytes[bytes.len() - 24..];
        assert_eq!(f32::from_le_bytes(payload[0..4].try_into().unwrap()), 4.0);
        assert_eq!(decode_pfm(&bytes).unwrap(), img);
    }

    #[test]
    fn big_endian_payload() {
        let mut bytes = b"PF\n1 1\n1.0\n".to_vec();
        for v in [0.5f32, 1.5, 2.5] {
            bytes.extend_from_slice(&v.to_be_bytes());
        }
        assert_eq!(decode_pfm(&bytes).unwrap().pixels(), &[0.5, 1.5, 2.5]);
    }

    #[test]
    fn little_endian_payload() {
        let mut bytes = b"PF\n1 1\n-1.0\n".to_vec();
        for v in [0.5f32, 1.5, 2.5] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        assert_eq!(decode_pfm(&bytes).unwrap().pixels(), &[0.5, 1.5, 2.5]);
    }

    #[test]
    fn rejects_greyscale_and_bad_length() {
        assert!(matches!(decode_pfm(b"Pf\n1 1\n-1.0\n\0\0\0\0"), Err(Error::Unsupported(_))));
        let mut bytes = b"PF\n1 1\n-1.0\n".to_vec();
        bytes.extend_from_slice(&[0; 8]);
        assert!(decode_pfm(&bytes).is_err());
        bytes.extend_from_slice(&[0; 8]);
        assert!(decode_pfm(&bytes).is_err());
    }
}
