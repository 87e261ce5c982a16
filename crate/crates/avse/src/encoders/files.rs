//! Visual stream file formats.
//!
//! ".vft" (features): magic "VFT1", u32 N, u32 d_v, f32 fps, then N·d_v f32
//! values row-major. ".vfr" (frames): magic "VFR1", u32 N, u32 H, u32 W,
//! then N·H·W f32 values in [0,1]. All little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::VisualStream;
use crate::error::{Error, Result};

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(
        e.kind(),
        format!("{}: {e}", path.display()),
    ))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).map_err(|e| io_err(path, e))?))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?))
}

fn read_magic(r: &mut impl Read, want: &[u8; 4], path: &Path) -> Result<()> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if &magic != want {
        return Err(Error::Format(format!(
            "{}: bad magic {magic:?}, expected {:?}",
            path.display(),
            String::from_utf8_lossy(want)
        )));
    }
    Ok(())
}

pub fn read_vft(path: &Path) -> Result<VisualStream> {
    let mut r = open(path)?;
    read_magic(&mut r, b"VFT1", path)?;
    let fail = |e: std::io::Error| Error::Format(format!("{}: {e}", path.display()));
    let n = r.read_u32::<LittleEndian>().map_err(fail)? as usize;
    let d_v = r.read_u32::<LittleEndian>().map_err(fail)? as usize;
    let fps = r.read_f32::<LittleEndian>().map_err(fail)? as f64;
    if n == 0 || d_v == 0 {
        return Err(Error::Format(format!(
            "{}: empty feature stream ({n}×{d_v})",
            path.display()
        )));
    }
    let mut data = vec![0.0f64; n * d_v];
    for v in data.iter_mut() {
        *v = r.read_f32::<LittleEndian>().map_err(fail)? as f64;
    }
    Ok(VisualStream::Features { data, n, d_v, fps })
}

pub fn write_vft(path: &Path, data: &[f64], n: usize, d_v: usize, fps: f64) -> Result<()> {
    if data.len() != n * d_v {
        return Err(Error::shape_mismatch("vft payload", &[n, d_v], &[data.len()]));
    }
    let mut w = create(path)?;
    let fail = |e: std::io::Error| io_err(path, e);
    w.write_all(b"VFT1").map_err(fail)?;
    w.write_u32::<LittleEndian>(n as u32).map_err(fail)?;
    w.write_u32::<LittleEndian>(d_v as u32).map_err(fail)?;
    w.write_f32::<LittleEndian>(fps as f32).map_err(fail)?;
    for &v in data {
        w.write_f32::<LittleEndian>(v as f32).map_err(fail)?;
    }
    w.flush().map_err(fail)
}

/// Frames files carry no rate field; `fps` is supplied by the caller.
pub fn read_vfr(path: &Path, fps: f64) -> Result<VisualStream> {
    let mut r = open(path)?;
    read_magic(&mut r, b"VFR1", path)?;
    let fail = |e: std::io::Error| Error::Format(format!("{}: {e}", path.display()));
    let n = r.read_u32::<LittleEndian>().map_err(fail)? as usize;
    let h = r.read_u32::<LittleEndian>().map_err(fail)? as usize;
    let w = r.read_u32::<LittleEndian>().map_err(fail)? as usize;
    if n == 0 || h == 0 || w == 0 {
        return Err(Error::Format(format!(
            "{}: empty frame stream ({n}×{h}×{w})",
            path.display()
        )));
    }
    let mut data = vec![0.0f64; n * h * w];
    for v in data.iter_mut() {
        *v = r.read_f32::<LittleEndian>().map_err(fail)? as f64;
        if !(0.0..=1.0).contains(v) {
            return Err(Error::Domain(format!(
                "{}: frame value {v} outside [0,1]",
                path.display()
            )));
        }
    }
    Ok(VisualStream::Frames { data, n, h, w, fps })
}

pub fn write_vfr(path: &Path, data: &[f64], n: usize, h: usize, w: usize) -> Result<()> {
    if data.len() != n * h * w {
        return Err(Error::shape_mismatch("vfr payload", &[n, h, w], &[data.len()]));
    }
    if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Domain("frame values must lie in [0,1]".into()));
    }
    let mut out = create(path)?;
    let fail = |e: std::io::Error| io_err(path, e);
    out.write_all(b"VFR1").map_err(fail)?;
    out.write_u32::<LittleEndian>(n as u32).map_err(fail)?;
    out.write_u32::<LittleEndian>(h as u32).map_err(fail)?;
    out.write_u32::<LittleEndian>(w as u32).map_err(fail)?;
    for &v in data {
        out.write_f32::<LittleEndian>(v as f32).map_err(fail)?;
    }
    out.flush().map_err(fail)
}
