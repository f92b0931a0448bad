//! Binary PPM (P6, 8-bit) reading and writing.

use std::fs;
use std::path::Path;

use thiserror::Error;
use ycda::colorspace::ImageRgb;
use ycda::Tensor;

#[derive(Debug, Error)]
pub enum PpmError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },

    #[error("not a binary PPM: magic {0:?}")]
    BadMagic(Vec<u8>),

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("unsupported max value {0}; only 255 is accepted")]
    UnsupportedMaxval(u32),

    #[error("pixel data truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
}

struct Header {
    width: usize,
    height: usize,
    maxval: u32,
    data_offset: usize,
}

fn skip_space_and_comments(buf: &[u8], mut pos: usize) -> usize {
    loop {
        while pos < buf.len() && buf[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < buf.len() && buf[pos] == b'#' {
            while pos < buf.len() && buf[pos] != b'\n' {
                pos += 1;
            }
        } else {
            return pos;
        }
    }
}

fn header_field(buf: &[u8], pos: usize, what: &str) -> Result<(u32, usize), PpmError> {
    let start = skip_space_and_comments(buf, pos);
    let mut end = start;
    while end < buf.len() && buf[end].is_ascii_digit() {
        end += 1;
    }
    if end == start {
        return Err(PpmError::MalformedHeader(format!("missing {what}")));
    }
    if end < buf.len() && !buf[end].is_ascii_whitespace() {
        return Err(PpmError::MalformedHeader(format!(
            "unexpected byte {:#04x} after {what}",
            buf[end]
        )));
    }
    let text = std::str::from_utf8(&buf[start..end]).expect("ascii digits");
    let value = text
        .parse::<u32>()
        .map_err(|_| PpmError::MalformedHeader(format!("{what} {text} out of range")))?;
    Ok((value, end))
}

fn parse_header(buf: &[u8]) -> Result<Header, PpmError> {
    if buf.len() < 2 || &buf[..2] != b"P6" {
        return Err(PpmError::BadMagic(buf.iter().take(2).copied().collect()));
    }
    let (width, pos) = header_field(buf, 2, "width")?;
    let (height, pos) = header_field(buf, pos, "height")?;
    let (maxval, pos) = header_field(buf, pos, "max value")?;
    if width == 0 || height == 0 {
        return Err(PpmError::MalformedHeader(format!(
            "zero extent {width}x{height}"
        )));
    }
    if maxval != 255 {
        return Err(PpmError::UnsupportedMaxval(maxval));
    }
    if pos >= buf.len() {
        return Err(PpmError::MalformedHeader(
            "missing whitespace before pixel data".into(),
        ));
    }
    Ok(Header {
        width: width as usize,
        height: height as usize,
        maxval,
        data_offset: pos + 1,
    })
}

pub fn decode_ppm(buf: &[u8]) -> Result<ImageRgb, PpmError> {
    let h = parse_header(buf)?;
    let pixels = h.width * h.height;
    let expected = pixels * 3;
    let body = &buf[h.data_offset..];
    if body.len() < expected {
        return Err(PpmError::Truncated {
            expected,
            found: body.len(),
        });
    }
    let scale = f64::from(h.maxval);
    let mut data = vec![0.0; expected];
    for (i, px) in body[..expected].chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * pixels + i] = f64::from(px[c]) / scale;
        }
    }
    let t = Tensor::from_vec(&[3, h.height, h.width], data).expect("shape matches data");
    Ok(ImageRgb::new(t).expect("bytes map into [0, 1]"))
}

pub fn load_ppm(path: &Path) -> Result<ImageRgb, PpmError> {
    let buf = fs::read(path).map_err(|source| PpmError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_ppm(&buf)
}

/// Quantizes to 8 bits with round-to-nearest.
pub fn encode_ppm(img: &ImageRgb) -> Vec<u8> {
    let (h, w) = (img.height(), img.width());
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let t = img.pixels();
    let pixels = h * w;
    out.reserve(pixels * 3);
    for i in 0..pixels {
        for c in 0..3 {
            out.push((t.data()[c * pixels + i] * 255.0).round() as u8);
        }
    }
    out
}

pub fn save_ppm(img: &ImageRgb, path: &Path) -> std::io::Result<()> {
    fs::write(path, encode_ppm(img))
}
