//! Image file support: PNG plus binary PPM/PGM, the only formats the
//! tool ingests or writes.

use std::path::Path;

use anyhow::{bail, Context, Result};
use geneic_core::backend::{Grid3, ImageSample};
use geneic_core::fsutil::write_atomic;
use geneic_core::Scalar;

pub fn load_image(path: &Path, id: &str) -> Result<ImageSample> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    let bytes = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    let (h, w, c, pixels) = match ext.as_str() {
        "png" => decode_png(&bytes)?,
        "ppm" | "pgm" => decode_pnm(&bytes)?,
        other => bail!("unsupported image format '{other}' ({})", path.display()),
    };
    let data: Vec<Scalar> = pixels.iter().map(|&v| v as Scalar / 255.0).collect();
    Ok(ImageSample::new(id, Grid3::from_vec(h, w, c, data)?)?)
}

pub fn save_image(img: &ImageSample, path: &Path) -> Result<()> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    let p = &img.pixels;
    let bytes: Vec<u8> = p
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let encoded = match (ext.as_str(), p.channels) {
        ("png", 1) => encode_png(p.width as u32, p.height as u32, png::ColorType::Grayscale, &bytes)?,
        ("png", 3) => encode_png(p.width as u32, p.height as u32, png::ColorType::Rgb, &bytes)?,
        ("pgm", 1) => encode_pnm(b'5', p.width, p.height, &bytes),
        ("ppm", 3) => encode_pnm(b'6', p.width, p.height, &bytes),
        (e, c) => bail!("cannot write a {c}-channel image as .{e}"),
    };
    write_atomic(path, &encoded)?;
    Ok(())
}

fn decode_png(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<u8>)> {
    let decoder = png::Decoder::new(bytes);
    let mut reader = decoder.read_info().context("invalid PNG")?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).context("invalid PNG frame")?;
    if info.bit_depth != png::BitDepth::Eight {
        bail!("only 8-bit PNG is supported");
    }
    buf.truncate(info.buffer_size());
    let (h, w) = (info.height as usize, info.width as usize);
    match info.color_type {
        png::ColorType::Grayscale => Ok((h, w, 1, buf)),
        png::ColorType::Rgb => Ok((h, w, 3, buf)),
        png::ColorType::GrayscaleAlpha => {
            Ok((h, w, 1, buf.chunks_exact(2).map(|px| px[0]).collect()))
        }
        png::ColorType::Rgba => Ok((
            h,
            w,
            3,
            buf.chunks_exact(4).flat_map(|px| px[..3].to_vec()).collect(),
        )),
        other => bail!("unsupported PNG color type {other:?}"),
    }
}

fn encode_png(width: u32, height: u32, color: png::ColorType, bytes: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, width, height);
        encoder.set_color(color);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder.write_header().context("PNG header")?;
        writer.write_image_data(bytes).context("PNG data")?;
    }
    Ok(out)
}

/// Binary PPM (P6) and PGM (P5), maxval up to 255.
fn decode_pnm(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<u8>)> {
    let mut at = 0usize;
    let mut token = |bytes: &[u8]| -> Result<String> {
        // skip whitespace and '#' comments
        loop {
            while at < bytes.len() && bytes[at].is_ascii_whitespace() {
                at += 1;
            }
            if at < bytes.len() && bytes[at] == b'#' {
                while at < bytes.len() && bytes[at] != b'\n' {
                    at += 1;
                }
                continue;
            }
            break;
        }
        let start = at;
        while at < bytes.len() && !bytes[at].is_ascii_whitespace() {
            at += 1;
        }
        if start == at {
            bail!("truncated header");
        }
        Ok(std::str::from_utf8(&bytes[start..at])?.to_string())
    };
    let magic = token(bytes)?;
    let channels = match magic.as_str() {
        "P5" => 1,
        "P6" => 3,
        other => bail!("unsupported format '{other}': only binary P5/P6 are read"),
    };
    let width: usize = token(bytes)?.parse().context("width")?;
    let height: usize = token(bytes)?.parse().context("height")?;
    let maxval: usize = token(bytes)?.parse().context("maxval")?;
    if maxval == 0 || maxval > 255 {
        bail!("maxval {maxval} out of the supported 1..=255 range");
    }
    // exactly one whitespace byte separates the header from the raster
    at += 1;
    let need = width * height * channels;
    if bytes.len() < at + need {
        bail!("raster truncated: need {need} bytes, have {}", bytes.len() - at);
    }
    let scale = 255.0 / maxval as f64;
    let data = bytes[at..at + need]
        .iter()
        .map(|&v| (v as f64 * scale).round().min(255.0) as u8)
        .collect();
    Ok((height, width, channels, data))
}

fn encode_pnm(kind: u8, width: usize, height: usize, bytes: &[u8]) -> Vec<u8> {
    let mut out = format!("P{} {width} {height} 255\n", kind - b'0').into_bytes();
    out.extend_from_slice(bytes);
    out
}
