use std::io::Write;
use std::path::Path;

use super::DataError;

/// Grayscale image with values in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>,
}

/// Binary P5 with maxval 255; values are clamped to `[0, 1]` and rounded.
pub fn write_pgm(img: &GrayImage, path: &Path) -> Result<(), DataError> {
    assert_eq!(img.pixels.len(), img.width * img.height, "pixel count");
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.pixels.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    std::fs::File::create(path)?.write_all(&out)?;
    Ok(())
}

pub fn read_pgm(path: &Path) -> Result<GrayImage, DataError> {
    let bytes = std::fs::read(path)?;
    let mut pos = 0;
    let mut fields = Vec::new();
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(DataError::Pgm("header ends early".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" {
        return Err(DataError::Pgm(format!("magic '{}'", fields[0])));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| DataError::Pgm(format!("bad number '{s}'")));
    let (width, height, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if maxval == 0 || maxval > 255 {
        return Err(DataError::Pgm(format!("unsupported maxval {maxval}")));
    }
    let data = &bytes[(pos + 1).min(bytes.len())..];
    if data.len() != width * height {
        return Err(DataError::Pgm(format!("expected {} pixels, found {}", width * height, data.len())));
    }
    Ok(GrayImage { width, height, pixels: data.iter().map(|&b| b as f64 / maxval as f64).collect() })
}
