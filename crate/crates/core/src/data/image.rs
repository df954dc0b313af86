//! Grayscale image IO. Images are `[1,H,W]` tensors with values in `[0,1]`,
//! ink = 0 (black) on a white = 1 background.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Decodes a binary PGM (`P5`) with maxval ≤ 255; values become `pixel / maxval`.
pub fn decode_pgm(bytes: &[u8]) -> Result<Tensor<f32>> {
    let bad = |detail: &str| Error::Image(format!("pgm: {detail}"));
    let mut pos = 0;
    let mut token = |bytes: &[u8]| -> Option<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
            pos += 1;
        }
        (pos > start).then(|| String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token(bytes).as_deref() != Some("P5") {
        return Err(bad("missing P5 magic"));
    }
    let mut number = |what: &str| -> Result<usize> {
        token(bytes)
            .and_then(|t| t.parse::<usize>().ok())
            .ok_or_else(|| bad(&format!("bad {what} in header")))
    };
    let width = number("width")?;
    let height = number("height")?;
    let maxval = number("maxval")?;
    if width == 0 || height == 0 {
        return Err(bad("zero dimension"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(bad(&format!("unsupported maxval {maxval}")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    let body_start = pos + 1;
    let need = width * height;
    if bytes.len() < body_start || bytes.len() - body_start < need {
        return Err(bad("truncated raster"));
    }
    let maxval = maxval as f32;
    let data = bytes[body_start..body_start + need]
        .iter()
        .map(|&b| (b as f32 / maxval).min(1.0))
        .collect();
    Tensor::new(vec![1, height, width], data)
}

/// Encodes `[1,H,W]` (values clamped to `[0,1]`) as an 8-bit P5 PGM.
pub fn encode_pgm(image: &Tensor<f32>) -> Result<Vec<u8>> {
    let (h, w) = image_hw(image)?;
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(image.data().iter().map(|&v| to_byte(v)));
    Ok(out)
}

fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn image_hw(image: &Tensor<f32>) -> Result<(usize, usize)> {
    match image.shape() {
        [1, h, w] => Ok((*h, *w)),
        other => Err(Error::invalid(format!("expected a [1,H,W] image, got {other:?}"))),
    }
}

/// Decodes PGM, or PNG when the `png` feature is enabled (alpha is
/// composited onto white, color is reduced to luma).
pub fn decode_image(bytes: &[u8]) -> Result<Tensor<f32>> {
    if bytes.starts_with(b"P5") {
        return decode_pgm(bytes);
    }
    #[cfg(feature = "png")]
    if bytes.starts_with(&[0x89, b'P', b'N', b'G']) {
        return decode_png(bytes);
    }
    Err(Error::Image("unrecognized image format".into()))
}

#[cfg(feature = "png")]
fn decode_png(bytes: &[u8]) -> Result<Tensor<f32>> {
    let err = |e: png::DecodingError| Error::Image(format!("png: {e}"));
    let mut decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = decoder.read_info().map_err(err)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Image("png: image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(err)?;
    let (w, h) = (info.width as usize, info.height as usize);
    let channels = info.color_type.samples();
    let px = |c: &[u8]| -> f32 {
        let f = |b: u8| b as f32 / 255.0;
        let (luma, alpha) = match c.len() {
            1 => (f(c[0]), 1.0),
            2 => (f(c[0]), f(c[1])),
            3 => (0.299 * f(c[0]) + 0.587 * f(c[1]) + 0.114 * f(c[2]), 1.0),
            _ => (0.299 * f(c[0]) + 0.587 * f(c[1]) + 0.114 * f(c[2]), f(c[3])),
        };
        (alpha * luma + (1.0 - alpha)).clamp(0.0, 1.0)
    };
    let data = buf[..info.buffer_size()]
        .chunks(info.line_size)
        .flat_map(|row| row[..w * channels].chunks(channels).map(px))
        .collect();
    Tensor::new(vec![1, h, w], data)
}

/// 8-bit grayscale PNG encoding of a `[1,H,W]` image.
#[cfg(feature = "png")]
pub fn encode_png(image: &Tensor<f32>) -> Result<Vec<u8>> {
    let (h, w) = image_hw(image)?;
    let err = |e: png::EncodingError| Error::Image(format!("png: {e}"));
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, w as u32, h as u32);
        encoder.set_color(png::ColorType::Grayscale);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder.write_header().map_err(err)?;
        let bytes: Vec<u8> = image.data().iter().map(|&v| to_byte(v)).collect();
        writer.write_image_data(&bytes).map_err(err)?;
    }
    Ok(out)
}

pub fn read_image(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&bytes).map_err(|e| Error::Image(format!("{}: {e}", path.display())))
}

pub fn write_pgm(image: &Tensor<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_pgm(image)?).map_err(|e| Error::io(path, e))
}
