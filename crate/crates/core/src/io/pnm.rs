//! Binary NetPBM: P6 colour and P5 grey, maxval 255.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn header_tokens(bytes: &[u8], count: usize) -> Result<(Vec<String>, usize)> {
    let mut tokens = Vec::new();
    let mut pos = 0;
    while tokens.len() < count {
        match bytes.get(pos) {
            None => return Err(Error::Format("truncated header".into())),
            Some(b'#') => {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            }
            Some(c) if c.is_ascii_whitespace() => pos += 1,
            Some(_) => {
                let start = pos;
                while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                    pos += 1;
                }
                tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
            }
        }
    }
    // exactly one whitespace byte separates the header from the raster
    if pos >= bytes.len() {
        return Err(Error::Format("truncated header".into()));
    }
    Ok((tokens, pos + 1))
}

/// Decodes to a `[1, 3, H, W]` tensor in `[0, 1]`; grey is replicated.
pub fn decode_pnm(bytes: &[u8]) -> Result<Tensor<f32>> {
    let (t, start) = header_tokens(bytes, 4)?;
    let channels = match t[0].as_str() {
        "P6" => 3,
        "P5" => 1,
        m => return Err(Error::Format(format!("unsupported magic `{m}`"))),
    };
    let dim = |s: &str| s.parse::<usize>().ok().filter(|&v| v > 0).ok_or_else(|| Error::Format(format!("bad dimension `{s}`")));
    let (w, h) = (dim(&t[1])?, dim(&t[2])?);
    if t[3] != "255" {
        return Err(Error::Format(format!("maxval must be 255, got {}", t[3])));
    }
    let need = w * h * channels;
    let raster = &bytes[start..];
    if raster.len() < need {
        return Err(Error::Format(format!("truncated raster: {} of {need} bytes", raster.len())));
    }
    Ok(Tensor::from_fn([1, 3, h, w], |[_, c, y, x]| {
        let ch = if channels == 3 { c } else { 0 };
        raster[(y * w + x) * channels + ch] as f32 / 255.0
    }))
}

/// Encodes the first image of `[N, 3, H, W]` as P6, rounding and clamping.
pub fn encode_ppm(image: &Tensor<f32>) -> Vec<u8> {
    let [_, _, h, w] = image.shape();
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(3 * w * h);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                out.push((image.at([0, c, y, x]).clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    out
}

pub fn load_image(path: &Path) -> Result<Tensor<f32>> {
    decode_pnm(&std::fs::read(path)?).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn save_ppm(path: &Path, image: &Tensor<f32>) -> Result<()> {
    std::fs::write(path, encode_ppm(image))?;
    Ok(())
}
