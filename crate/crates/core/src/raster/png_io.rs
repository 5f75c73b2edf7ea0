use std::io::Cursor;
use std::path::Path;

use super::Image;
use crate::{Error, Result};

/// Read an 8-bit grayscale or RGB PNG.
pub fn load_png(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_png(&bytes, path)
}

/// Decode PNG bytes; `origin` only labels errors.
pub fn decode_png(bytes: &[u8], origin: &Path) -> Result<Image> {
    let malformed = |e: png::DecodingError| Error::MalformedPng {
        path: origin.to_path_buf(),
        reason: e.to_string(),
    };
    let decoder = png::Decoder::new(Cursor::new(bytes));
    let mut reader = decoder.read_info().map_err(malformed)?;
    let (color, depth) = {
        let info = reader.info();
        (info.color_type, info.bit_depth)
    };
    let channels = match color {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        other => {
            return Err(Error::UnsupportedPng {
                path: origin.to_path_buf(),
                detail: format!("color type {other:?}"),
            })
        }
    };
    if depth != png::BitDepth::Eight {
        return Err(Error::UnsupportedPng {
            path: origin.to_path_buf(),
            detail: format!("bit depth {depth:?}"),
        });
    }
    let size = reader.output_buffer_size().ok_or_else(|| Error::MalformedPng {
        path: origin.to_path_buf(),
        reason: "image too large".into(),
    })?;
    let mut buf = vec![0; size];
    let frame = reader.next_frame(&mut buf).map_err(malformed)?;
    buf.truncate(frame.buffer_size());
    Image::new(frame.width as usize, frame.height as usize, channels, buf)
}

pub fn encode_png(img: &Image) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, img.width() as u32, img.height() as u32);
        encoder.set_color(if img.is_gray() {
            png::ColorType::Grayscale
        } else {
            png::ColorType::Rgb
        });
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder
            .write_header()
            .map_err(|e| Error::InvalidArgument(format!("png encode: {e}")))?;
        writer
            .write_image_data(img.data())
            .map_err(|e| Error::InvalidArgument(format!("png encode: {e}")))?;
    }
    Ok(out)
}

pub fn save_png(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_png(img)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Decode an indexed-color (or 8-bit grayscale) PNG into raw per-pixel indices.
pub fn decode_indexed_png(bytes: &[u8], origin: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let malformed = |e: png::DecodingError| Error::MalformedPng {
        path: origin.to_path_buf(),
        reason: e.to_string(),
    };
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(malformed)?;
    let (color, depth) = {
        let info = reader.info();
        (info.color_type, info.bit_depth)
    };
    let bits = match (color, depth) {
        (png::ColorType::Indexed, d) => d as usize,
        (png::ColorType::Grayscale, png::BitDepth::Eight) => 8,
        (other, d) => {
            return Err(Error::UnsupportedPng {
                path: origin.to_path_buf(),
                detail: format!("expected indexed or 8-bit grayscale, got {other:?} at {d:?}"),
            })
        }
    };
    let size = reader.output_buffer_size().ok_or_else(|| Error::MalformedPng {
        path: origin.to_path_buf(),
        reason: "image too large".into(),
    })?;
    let mut buf = vec![0; size];
    let frame = reader.next_frame(&mut buf).map_err(malformed)?;
    let (w, h, stride) = (frame.width as usize, frame.height as usize, frame.line_size);
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        let row = &buf[y * stride..(y + 1) * stride];
        for x in 0..w {
            let bit = x * bits;
            let byte = row[bit / 8];
            let shift = 8 - bits - bit % 8;
            out.push((byte >> shift) & ((1u16 << bits) - 1) as u8);
        }
    }
    Ok((w, h, out))
}

/// Encode 8-bit indices with an RGB palette (3 bytes per entry).
pub fn encode_indexed_png(width: usize, height: usize, indices: &[u8], palette: &[u8]) -> Result<Vec<u8>> {
    if indices.len() != width * height || palette.len() % 3 != 0 || palette.is_empty() {
        return Err(Error::InvalidArgument("indexed image buffer or palette has the wrong size".into()));
    }
    let entries = palette.len() / 3;
    if let Some(&bad) = indices.iter().find(|&&i| i as usize >= entries) {
        return Err(Error::InvalidArgument(format!("index {bad} outside {entries}-entry palette")));
    }
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, width as u32, height as u32);
        encoder.set_color(png::ColorType::Indexed);
        encoder.set_depth(png::BitDepth::Eight);
        encoder.set_palette(palette.to_vec());
        let mut writer = encoder
            .write_header()
            .map_err(|e| Error::InvalidArgument(format!("png encode: {e}")))?;
        writer
            .write_image_data(indices)
            .map_err(|e| Error::InvalidArgument(format!("png encode: {e}")))?;
    }
    Ok(out)
}
