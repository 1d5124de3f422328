//! On-disk formats: FGRID float grids, binary PGM/PPM images and atomic writes.
//!
//! FGRID is the text line `FGRID 1`, a line of space-separated dimensions and
//! then the values as little-endian `f32`, row-major.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

const FGRID_MAGIC: &str = "FGRID 1";

pub fn encode_fgrid(t: &Tensor) -> Vec<u8> {
    let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
    let mut out = format!("{FGRID_MAGIC}\n{}\n", dims.join(" ")).into_bytes();
    out.reserve(4 * t.len());
    for &v in t.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

fn split_line(bytes: &[u8]) -> Option<(&[u8], &[u8])> {
    let i = bytes.iter().position(|&b| b == b'\n')?;
    Some((&bytes[..i], &bytes[i + 1..]))
}

pub fn decode_fgrid(bytes: &[u8], path: &Path) -> Result<Tensor> {
    let bad = |why: &str| Error::format(path, why.to_string());
    let (magic, rest) = split_line(bytes).ok_or_else(|| bad("missing header"))?;
    if magic != FGRID_MAGIC.as_bytes() {
        return Err(bad("not an FGRID 1 file"));
    }
    let (dims, payload) = split_line(rest).ok_or_else(|| bad("missing shape line"))?;
    let dims = std::str::from_utf8(dims).map_err(|_| bad("shape line is not text"))?;
    let shape: Vec<usize> = dims
        .split_whitespace()
        .map(str::parse)
        .collect::<Result<_, _>>()
        .map_err(|_| bad("shape line must hold positive integers"))?;
    let n: usize = shape.iter().product();
    if shape.is_empty() || n == 0 {
        return Err(bad("empty shape"));
    }
    if payload.len() != 4 * n {
        return Err(bad(&format!("expected {} data bytes, found {}", 4 * n, payload.len())));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect();
    Tensor::new(shape, data)
}

pub fn read_fgrid(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_fgrid(&bytes, path)
}

pub fn write_fgrid(path: &Path, t: &Tensor) -> Result<()> {
    write_atomic(path, &encode_fgrid(t))
}

/// Writes through a temporary file in the destination directory and renames
/// it into place, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// Reads a binary PGM (P5) or PPM (P6) with maxval up to 255 into a
/// channel-first tensor scaled to [0, 1].
pub fn read_netpbm(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_netpbm(&bytes, path)
}

pub fn decode_netpbm(bytes: &[u8], path: &Path) -> Result<Tensor> {
    let bad = |why: &str| Error::format(path, why.to_string());
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header is not text"))?);
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let channels = match fields[0] {
        "P5" => 1,
        "P6" => 3,
        _ => return Err(bad("only binary P5/P6 images are supported")),
    };
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let (w, h, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if w == 0 || h == 0 || maxval == 0 || maxval > 255 {
        return Err(bad("unsupported dimensions or maxval"));
    }
    let raster = bytes.get(pos..pos + w * h * channels).ok_or_else(|| bad("truncated raster"))?;
    let mut data = vec![0.0; channels * h * w];
    for p in 0..h * w {
        for c in 0..channels {
            data[c * h * w + p] = f64::from(raster[p * channels + c]) / maxval as f64;
        }
    }
    Tensor::new(vec![channels, h, w], data)
}

/// Renders a 2-D map to 8-bit PGM. Values in [0, 1] map linearly to 0..255;
/// `signed` maps [-1, 1] instead. Out-of-range values are clipped.
pub fn encode_pgm(map: &Tensor, signed: bool) -> Result<Vec<u8>> {
    if map.ndim() != 2 {
        return Err(Error::contract("PGM output needs a 2-D map"));
    }
    let (h, w) = (map.shape()[0], map.shape()[1]);
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(map.data().iter().map(|&v| {
        let u = if signed { (v + 1.0) / 2.0 } else { v };
        (u.clamp(0.0, 1.0) * 255.0).round() as u8
    }));
    Ok(out)
}

pub fn encode_ppm(image: &Tensor) -> Result<Vec<u8>> {
    if image.ndim() != 3 || image.shape()[0] != 3 {
        return Err(Error::contract("PPM output needs a [3, H, W] image"));
    }
    let (h, w) = (image.shape()[1], image.shape()[2]);
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    for p in 0..h * w {
        for c in 0..3 {
            out.push((image.data()[c * h * w + p].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    Ok(out)
}

/// Loads a model input from FGRID, PGM or PPM, chosen by content.
pub fn read_input(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(FGRID_MAGIC.as_bytes()) {
        decode_fgrid(&bytes, path)
    } else if bytes.starts_with(b"P5") || bytes.starts_with(b"P6") {
        decode_netpbm(&bytes, path)
    } else {
        Err(Error::format(path, "neither FGRID nor binary PGM/PPM"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fgrid_round_trip_of_f32_values() {
        let t = Tensor::new(vec![2, 3], vec![0.5, -1.25, 3.0, 1e-3f32 as f64, 0.0, 7.75]).unwrap();
        let back = decode_fgrid(&encode_fgrid(&t), Path::new("mem")).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn fgrid_rejects_truncation() {
        let t = Tensor::zeros(&[4]);
        let mut bytes = encode_fgrid(&t);
        bytes.pop();
        assert!(decode_fgrid(&bytes, Path::new("mem")).is_err());
        assert!(decode_fgrid(b"FGRID 2\n1\n\0\0\0\0", Path::new("mem")).is_err());
    }

    #[test]
    fn ppm_round_trip_is_channel_first() {
        let img = Tensor::new(vec![3, 1, 2], vec![0.0, 1.0, 0.2, 0.4, 1.0, 0.0]).unwrap();
        let bytes = encode_ppm(&img).unwrap();
        let back = decode_netpbm(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back.shape(), &[3, 1, 2]);
        for (a, b) in back.data().iter().zip(img.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0);
        }
    }

    #[test]
    fn pgm_header_with_comment() {
        let bytes = b"P5\n# note\n2 1\n255\n\x00\xff";
        let t = decode_netpbm(bytes, Path::new("mem")).unwrap();
        assert_eq!(t.data(), &[0.0, 1.0]);
    }
}
