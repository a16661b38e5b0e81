//! On-disk formats: binary PPM (P6) images, PGM (P5) masks, little-endian
//! grayscale PFM float planes and the plain-text camera file.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::Matrix4;

use crate::error::{Error, Result};
use crate::geometry::{Camera, Intrinsics, Pose};
use crate::image::{DepthMap, Image};

/// Rotations in camera files may deviate from orthonormal by at most this much.
pub const POSE_FILE_TOLERANCE: f64 = 1e-6;

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Splits a netpbm-style header into `count` whitespace-separated tokens,
/// skipping `#` comments. Returns the tokens and the offset of the payload,
/// which starts after exactly one whitespace byte.
fn header_tokens(bytes: &[u8], count: usize, path: &Path) -> Result<(Vec<String>, usize)> {
    let mut tokens = Vec::with_capacity(count);
    let mut i = 0;
    while tokens.len() < count {
        if i >= bytes.len() {
            return Err(Error::format(path, "truncated header"));
        }
        let c = bytes[i];
        if c == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
        } else if c.is_ascii_whitespace() {
            i += 1;
        } else {
            let start = i;
            while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
                i += 1;
            }
            tokens.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
        }
    }
    if i >= bytes.len() {
        return Err(Error::format(path, "missing payload"));
    }
    Ok((tokens, i + 1))
}

fn parse_dim(token: &str, path: &Path) -> Result<usize> {
    match token.parse::<usize>() {
        Ok(v) if v > 0 => Ok(v),
        _ => Err(Error::format(path, format!("bad dimension `{token}`"))),
    }
}

pub fn write_ppm(path: &Path, image: &Image) -> Result<()> {
    let mut out = Vec::with_capacity(image.len() * 3 + 64);
    write!(
        out,
        "P6\n# linear rgb, no srgb transfer\n{} {}\n255\n",
        image.width, image.height
    )
    .expect("vec write");
    for p in &image.pixels {
        for c in p {
            out.push((c.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    write(path, &out)
}

pub fn read_ppm(path: &Path) -> Result<Image> {
    let bytes = read(path)?;
    let (tok, offset) = header_tokens(&bytes, 4, path)?;
    if tok[0] != "P6" {
        return Err(Error::format(path, format!("expected P6, found `{}`", tok[0])));
    }
    let (w, h) = (parse_dim(&tok[1], path)?, parse_dim(&tok[2], path)?);
    if tok[3] != "255" {
        return Err(Error::format(path, format!("unsupported maxval {}", tok[3])));
    }
    let payload = &bytes[offset..];
    if payload.len() != w * h * 3 {
        return Err(Error::format(
            path,
            format!("expected {} payload bytes, found {}", w * h * 3, payload.len()),
        ));
    }
    let pixels = payload
        .chunks_exact(3)
        .map(|c| [0, 1, 2].map(|k| f64::from(c[k]) / 255.0))
        .collect();
    Image::from_pixels(w, h, pixels)
}

pub fn write_pgm_mask(path: &Path, width: usize, height: usize, mask: &[bool]) -> Result<()> {
    assert_eq!(mask.len(), width * height, "mask size");
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(mask.iter().map(|&m| if m { 255u8 } else { 0 }));
    write(path, &out)
}

/// Reads a P5 mask; any non-zero byte is "set".
pub fn read_pgm_mask(path: &Path) -> Result<(usize, usize, Vec<bool>)> {
    let bytes = read(path)?;
    let (tok, offset) = header_tokens(&bytes, 4, path)?;
    if tok[0] != "P5" {
        return Err(Error::format(path, format!("expected P5, found `{}`", tok[0])));
    }
    let (w, h) = (parse_dim(&tok[1], path)?, parse_dim(&tok[2], path)?);
    if tok[3] != "255" {
        return Err(Error::format(path, format!("unsupported maxval {}", tok[3])));
    }
    let payload = &bytes[offset..];
    if payload.len() != w * h {
        return Err(Error::format(
            path,
            format!("expected {} payload bytes, found {}", w * h, payload.len()),
        ));
    }
    Ok((w, h, payload.iter().map(|&b| b != 0).collect()))
}

/// Writes a single-channel little-endian PFM (`Pf`, scale -1.0). Rows are
/// stored bottom-to-top as the format requires; `values` is top-to-bottom.
pub fn write_pfm(path: &Path, width: usize, height: usize, values: &[f32]) -> Result<()> {
    assert_eq!(values.len(), width * height, "pfm size");
    let mut out = format!("Pf\n{width} {height}\n-1.0\n").into_bytes();
    out.reserve(values.len() * 4);
    for row in values.chunks_exact(width).rev() {
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    write(path, &out)
}

pub fn read_pfm(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let bytes = read(path)?;
    let (tok, offset) = header_tokens(&bytes, 4, path)?;
    if tok[0] != "Pf" {
        return Err(Error::format(
            path,
            format!("expected single-channel `Pf`, found `{}`", tok[0]),
        ));
    }
    let (w, h) = (parse_dim(&tok[1], path)?, parse_dim(&tok[2], path)?);
    let scale: f64 = tok[3]
        .parse()
        .map_err(|_| Error::format(path, format!("bad scale `{}`", tok[3])))?;
    if scale == 0.0 {
        return Err(Error::format(path, "zero scale"));
    }
    let payload = &bytes[offset..];
    if payload.len() != w * h * 4 {
        return Err(Error::format(
            path,
            format!("expected {} payload bytes, found {}", w * h * 4, payload.len()),
        ));
    }
    let little = scale < 0.0;
    let mut rows: Vec<Vec<f32>> = payload
        .chunks_exact(w * 4)
        .map(|row| {
            row.chunks_exact(4)
                .map(|b| {
                    let b = [b[0], b[1], b[2], b[3]];
                    if little {
                        f32::from_le_bytes(b)
                    } else {
                        f32::from_be_bytes(b)
                    }
                })
                .collect()
        })
        .collect();
    rows.reverse();
    Ok((w, h, rows.concat()))
}

/// Depth maps store invalid pixels as 0.
pub fn write_depth_pfm(path: &Path, depth: &DepthMap) -> Result<()> {
    let values: Vec<f32> = depth
        .values
        .iter()
        .zip(&depth.valid)
        .map(|(&d, &v)| if v { d as f32 } else { 0.0 })
        .collect();
    write_pfm(path, depth.width, depth.height, &values)
}

/// Reads a depth PFM; finite positive values are valid.
pub fn read_depth_pfm(path: &Path) -> Result<DepthMap> {
    let (w, h, values) = read_pfm(path)?;
    DepthMap::from_values(w, h, values.into_iter().map(f64::from).collect())
}

/// Writes every value, valid or not, plus a PGM validity mask.
pub fn write_masked_depth(depth_path: &Path, mask_path: &Path, depth: &DepthMap) -> Result<()> {
    let values: Vec<f32> = depth.values.iter().map(|&d| d as f32).collect();
    write_pfm(depth_path, depth.width, depth.height, &values)?;
    write_pgm_mask(mask_path, depth.width, depth.height, &depth.valid)
}

/// Reads a depth PFM and an explicit PGM validity mask.
pub fn read_masked_depth(depth_path: &Path, mask_path: &Path) -> Result<DepthMap> {
    let (w, h, values) = read_pfm(depth_path)?;
    let (mw, mh, mask) = read_pgm_mask(mask_path)?;
    if (w, h) != (mw, mh) {
        return Err(Error::SizeMismatch(format!(
            "{} is {w}x{h} but {} is {mw}x{mh}",
            depth_path.display(),
            mask_path.display()
        )));
    }
    let values: Vec<f64> = values.into_iter().map(f64::from).collect();
    DepthMap::with_mask(w, h, values, mask).map_err(|e| Error::format(depth_path, e.to_string()))
}

/// Writes cameras as text blocks, camera-to-world:
///
/// ```text
/// # fx fy cx cy width height, then 4x4 row-major camera-to-world matrix
/// 100 100 40 30 80 60
/// 1 0 0 0
/// 0 1 0 0
/// 0 0 1 0
/// 0 0 0 1
/// ```
///
/// Blocks are separated by a blank line. Values use the shortest decimal
/// form that reproduces the exact `f64`.
pub fn write_cameras(path: &Path, cameras: &[Camera]) -> Result<()> {
    let mut out = String::from(
        "# camera-to-world, right-handed, x right, y down, z forward\n\
         # per camera: `fx fy cx cy width height` then 4 rows of the 4x4 matrix\n",
    );
    for (i, cam) in cameras.iter().enumerate() {
        let (pose, k) = (&cam.pose, &cam.intrinsics);
        if i > 0 {
            out.push('\n');
        }
        out.push_str(&format!(
            "{} {} {} {} {} {}\n",
            k.fx, k.fy, k.cx, k.cy, k.width, k.height
        ));
        let m = pose.to_matrix();
        for r in 0..4 {
            out.push_str(&format!("{} {} {} {}\n", m[(r, 0)], m[(r, 1)], m[(r, 2)], m[(r, 3)]));
        }
    }
    write(path, out.as_bytes())
}

pub fn read_cameras(path: &Path) -> Result<Vec<Camera>> {
    let text = String::from_utf8(read(path)?).map_err(|_| Error::format(path, "not utf-8"))?;
    let lines: Vec<(usize, Vec<&str>)> = text
        .lines()
        .enumerate()
        .map(|(n, l)| (n + 1, l.split('#').next().unwrap_or("").split_whitespace().collect::<Vec<_>>()))
        .filter(|(_, t)| !t.is_empty())
        .collect();
    if lines.is_empty() || lines.len() % 5 != 0 {
        return Err(Error::format(
            path,
            format!("expected blocks of 5 non-empty lines, found {} lines", lines.len()),
        ));
    }
    let num = |line: usize, tok: &str| -> Result<f64> {
        tok.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::format(path, format!("line {line}: bad number `{tok}`")))
    };
    let mut cameras = Vec::with_capacity(lines.len() / 5);
    for block in lines.chunks_exact(5) {
        let (line, ktok) = &block[0];
        if ktok.len() != 6 {
            return Err(Error::format(
                path,
                format!("line {line}: intrinsics need 6 values, found {}", ktok.len()),
            ));
        }
        let dim = |tok: &str| {
            tok.parse::<usize>()
                .map_err(|_| Error::format(path, format!("line {line}: bad size `{tok}`")))
        };
        let k = Intrinsics::new(
            num(*line, ktok[0])?,
            num(*line, ktok[1])?,
            num(*line, ktok[2])?,
            num(*line, ktok[3])?,
            dim(ktok[4])?,
            dim(ktok[5])?,
        )
        .map_err(|e| Error::format(path, format!("line {line}: {e}")))?;
        let mut m = Matrix4::zeros();
        for (r, (line, toks)) in block[1..].iter().enumerate() {
            if toks.len() != 4 {
                return Err(Error::format(
                    path,
                    format!("line {line}: matrix row needs 4 values, found {}", toks.len()),
                ));
            }
            for (c, tok) in toks.iter().enumerate() {
                m[(r, c)] = num(*line, tok)?;
            }
        }
        let pose = Pose::from_matrix(&m, POSE_FILE_TOLERANCE)
            .map_err(|e| Error::format(path, format!("camera near line {line}: {e}")))?;
        cameras.push(Camera::new(pose, k));
    }
    Ok(cameras)
}
