//! Binary PPM (P6) with 8-bit samples.

use std::fs;
use std::io::Write;
use std::path::Path;

use astpn_core::data::RgbFrame;

use crate::error::{AppError, AppResult};

fn format_err(path: &Path, msg: impl Into<String>) -> AppError {
    AppError::Format {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

/// Splits the header into whitespace-separated tokens, skipping `#`
/// comments, and returns the four header fields plus the payload offset.
fn header(bytes: &[u8]) -> Option<([&[u8]; 4], usize)> {
    let mut fields = [&bytes[..0]; 4];
    let mut pos = 0;
    for field in &mut fields {
        loop {
            match bytes.get(pos)? {
                b'#' => {
                    while *bytes.get(pos)? != b'\n' {
                        pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|c| !c.is_ascii_whitespace()) {
            pos += 1;
        }
        *field = &bytes[start..pos];
    }
    // exactly one whitespace byte separates the header from the raster
    bytes.get(pos)?.is_ascii_whitespace().then_some((fields, pos + 1))
}

pub fn decode(bytes: &[u8], path: &Path) -> AppResult<RgbFrame> {
    let (fields, offset) = header(bytes).ok_or_else(|| format_err(path, "truncated PPM header"))?;
    if fields[0] != b"P6" {
        return Err(format_err(path, "not a binary PPM (P6) file"));
    }
    let num = |f: &[u8], what: &str| -> AppResult<usize> {
        std::str::from_utf8(f)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format_err(path, format!("bad {what} in PPM header")))
    };
    let (w, h, maxval) = (num(fields[1], "width")?, num(fields[2], "height")?, num(fields[3], "maxval")?);
    if maxval != 255 {
        return Err(format_err(path, format!("only 8-bit PPM is supported, maxval is {maxval}")));
    }
    let need = w * h * 3;
    let raster = &bytes[offset..];
    if raster.len() < need {
        return Err(format_err(path, format!("raster has {} bytes, expected {need}", raster.len())));
    }
    RgbFrame::new(w, h, raster[..need].to_vec()).map_err(|e| format_err(path, e.to_string()))
}

pub fn read(path: &Path) -> AppResult<RgbFrame> {
    let bytes = fs::read(path).map_err(|e| AppError::io(path, e))?;
    decode(&bytes, path)
}

pub fn encode(frame: &RgbFrame) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", frame.width, frame.height).into_bytes();
    out.extend_from_slice(&frame.pixels);
    out
}

pub fn write(path: &Path, frame: &RgbFrame) -> AppResult<()> {
    let mut f = fs::File::create(path).map_err(|e| AppError::io(path, e))?;
    f.write_all(&encode(frame)).map_err(|e| AppError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let f = RgbFrame::new(3, 2, (0..18).collect()).unwrap();
        let back = decode(&encode(&f), Path::new("x.ppm")).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn comments_in_header() {
        let mut bytes = b"P6 # made by hand\n2 1\n# max\n255\n".to_vec();
        bytes.extend_from_slice(&[1, 2, 3, 4, 5, 6]);
        let f = decode(&bytes, Path::new("x.ppm")).unwrap();
        assert_eq!(f.rgb(1, 0), [4, 5, 6]);
    }

    #[test]
    fn rejects_bad_input() {
        let p = Path::new("x.ppm");
        assert!(decode(b"P3\n1 1\n255\n123", p).is_err());
        assert!(decode(b"P6\n2 2\n255\n\x00\x00", p).is_err());
        assert!(decode(b"P6\n1 1\n65535\n\x00\x00\x00\x00\x00\x00", p).is_err());
        assert!(decode(b"P6\n1", p).is_err());
    }
}
