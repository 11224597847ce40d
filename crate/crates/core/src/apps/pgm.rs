//! Binary PGM (P5, 8-bit) reading and writing.

use std::io::{Read, Write};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PgmError {
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a binary PGM (P5) file")]
    BadMagic,
    #[error("malformed header: {0}")]
    BadHeader(String),
    #[error("unsupported maximum value {0}; only 8-bit (255) is supported")]
    UnsupportedDepth(u32),
    #[error("pixel payload truncated: expected {expected} bytes, found {got}")]
    Truncated { expected: usize, got: usize },
}

/// Decoded 8-bit grayscale image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    /// Row-major, top row first.
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Self {
        assert_eq!(pixels.len(), width * height);
        Self { width, height, pixels }
    }
}

/// Read one header token, skipping whitespace and `#` comments.
fn next_token(bytes: &[u8], pos: &mut usize) -> Result<String, PgmError> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(PgmError::BadHeader("unexpected end of header".into()));
    }
    Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

pub fn read_pgm<R: Read>(r: &mut R) -> Result<GrayImage, PgmError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < 2 || &bytes[0..2] != b"P5" {
        return Err(PgmError::BadMagic);
    }
    let mut pos = 2;
    let parse = |tok: String| -> Result<u32, PgmError> {
        tok.parse::<u32>().map_err(|_| PgmError::BadHeader(format!("bad integer '{tok}'")))
    };
    let width = parse(next_token(&bytes, &mut pos)?)? as usize;
    let height = parse(next_token(&bytes, &mut pos)?)? as usize;
    let maxval = parse(next_token(&bytes, &mut pos)?)?;
    if maxval != 255 {
        return Err(PgmError::UnsupportedDepth(maxval));
    }
    if width == 0 || height == 0 {
        return Err(PgmError::BadHeader("zero image dimension".into()));
    }
    // Exactly one whitespace byte separates the header from the payload.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(PgmError::BadHeader("missing separator before pixel data".into()));
    }
    pos += 1;
    let expected = width * height;
    let got = bytes.len() - pos;
    if got < expected {
        return Err(PgmError::Truncated { expected, got });
    }
    Ok(GrayImage::new(width, height, bytes[pos..pos + expected].to_vec()))
}

/// Canonical writer: `P5\n<w> <h>\n255\n` followed by the raw bytes.
pub fn write_pgm<W: Write>(w: &mut W, image: &GrayImage) -> Result<(), PgmError> {
    write!(w, "P5\n{} {}\n255\n", image.width, image.height)?;
    w.write_all(&image.pixels)?;
    Ok(())
}

/// Quantize unit-interval intensities to 8 bits.
pub fn quantize(values: impl Iterator<Item = f64>, width: usize, height: usize) -> GrayImage {
    let pixels = values.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    GrayImage::new(width, height, pixels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_byte_identical() {
        // Two-pixel gradient image.
        let img = GrayImage::new(2, 1, vec![0, 255]);
        let mut bytes = Vec::new();
        write_pgm(&mut bytes, &img).unwrap();
        let back = read_pgm(&mut bytes.as_slice()).unwrap();
        let mut again = Vec::new();
        write_pgm(&mut again, &back).unwrap();
        assert_eq!(bytes, again);
    }

    #[test]
    fn reads_headers_with_comments() {
        let data = b"P5 # comment\n# another\n 3\t2\n255\n\x00\x10\x20\x30\x40\x50";
        let img = read_pgm(&mut &data[..]).unwrap();
        assert_eq!((img.width, img.height), (3, 2));
        assert_eq!(img.pixels[5], 0x50);
    }

    #[test]
    fn rejects_malformed_input() {
        assert!(matches!(read_pgm(&mut &b"P6 1 1 255 x"[..]), Err(PgmError::BadMagic)));
        assert!(matches!(
            read_pgm(&mut &b"P5 2 2 65535 \x00\x00\x00\x00"[..]),
            Err(PgmError::UnsupportedDepth(65535))
        ));
        let truncated = b"P5 4 4 255 \x00\x01";
        assert!(matches!(read_pgm(&mut &truncated[..]), Err(PgmError::Truncated { .. })));
    }

    #[test]
    fn quantization_inverts_unit_scaling() {
        let img = GrayImage::new(4, 1, vec![0, 77, 128, 255]);
        let through =
            quantize(img.pixels.iter().map(|&p| p as f64 / 255.0), img.width, img.height);
        assert_eq!(img, through);
    }
}
