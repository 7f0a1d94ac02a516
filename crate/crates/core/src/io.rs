//! Single-file containers for cubes and stacks.
//!
//! Layout: one UTF-8 JSON header line terminated by `\n`, then a raw
//! little-endian `f32` payload in band-major, row-major order. Cubes use
//! magic `MSCUBE1` with a `bands_nm` list; stacks use `GSTACK1` with
//! `positions_mm`. Header-declared sizes must match the payload exactly or
//! loading fails.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::cube::{BandGrid, GrayscaleImage, GrayscaleStack, SpectralCube};
use crate::error::{Error, Result};

pub const CUBE_MAGIC: &str = "MSCUBE1";
pub const STACK_MAGIC: &str = "GSTACK1";
const DTYPE: &str = "f32le";

/// Header of a cube/tensor container. Field order is the wire order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CubeFileHeader {
    pub magic: String,
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(rename = "H")]
    pub h: usize,
    #[serde(rename = "W")]
    pub w: usize,
    pub bands_nm: Vec<f64>,
    pub dtype: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StackFileHeader {
    magic: String,
    #[serde(rename = "L")]
    l: usize,
    #[serde(rename = "H")]
    h: usize,
    #[serde(rename = "W")]
    w: usize,
    positions_mm: Vec<f64>,
    dtype: String,
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_payload(out: &mut impl Write, data: &Array3<f64>, path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(data.len() * 4);
    for &v in data.iter() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out.write_all(&buf).map_err(|e| io_err(path, e))
}

fn read_header_line(reader: &mut impl Read, path: &Path) -> Result<String> {
    let mut line = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        match reader.read(&mut byte).map_err(|e| io_err(path, e))? {
            0 => {
                return Err(Error::Format(format!(
                    "header parse error at byte {}: unterminated header line",
                    line.len()
                )))
            }
            _ => {
                if byte[0] == b'\n' {
                    break;
                }
                line.push(byte[0]);
            }
        }
    }
    String::from_utf8(line).map_err(|e| Error::Format(format!("header is not UTF-8: {e}")))
}

fn parse_header<T: for<'a> Deserialize<'a>>(line: &str) -> Result<T> {
    serde_json::from_str(line).map_err(|e| {
        Error::Format(format!(
            "header parse error at byte {}: {e}",
            e.column().saturating_sub(1)
        ))
    })
}

fn read_payload(
    reader: &mut impl Read,
    dims: (usize, usize, usize),
    path: &Path,
) -> Result<Array3<f64>> {
    let (l, h, w) = dims;
    let expected = l * h * w * 4;
    let mut bytes = Vec::new();
    reader
        .read_to_end(&mut bytes)
        .map_err(|e| io_err(path, e))?;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "payload size mismatch: header implies {expected} bytes, file holds {}",
            bytes.len()
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Array3::from_shape_vec((l, h, w), values)
        .map_err(|e| Error::Format(format!("payload reshape failed: {e}")))
}

/// Write a raw `[C, H, W]` tensor in the cube container, tagging channels
/// with arbitrary values (wavelengths, or frame indices for model inputs).
/// Performs no value-range validation.
pub fn write_tensor3(data: &Array3<f64>, channel_tags: &[f64], path: &Path) -> Result<()> {
    let (l, h, w) = data.dim();
    if channel_tags.len() != l {
        return Err(Error::invalid(format!(
            "{l} channels but {} channel tags",
            channel_tags.len()
        )));
    }
    let header = CubeFileHeader {
        magic: CUBE_MAGIC.to_string(),
        l,
        h,
        w,
        bands_nm: channel_tags.to_vec(),
        dtype: DTYPE.to_string(),
    };
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut out = BufWriter::new(file);
    serde_json::to_writer(&mut out, &header)
        .map_err(|e| Error::Format(format!("header encode failed: {e}")))?;
    out.write_all(b"\n").map_err(|e| io_err(path, e))?;
    write_payload(&mut out, data, path)?;
    out.flush().map_err(|e| io_err(path, e))
}

/// Read a raw tensor and its channel tags without value-range validation.
pub fn read_tensor3(path: &Path) -> Result<(Array3<f64>, Vec<f64>)> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut reader = BufReader::new(file);
    let line = read_header_line(&mut reader, path)?;
    let header: CubeFileHeader = parse_header(&line)?;
    if header.magic != CUBE_MAGIC {
        return Err(Error::Format(format!(
            "expected magic {CUBE_MAGIC:?}, found {:?}",
            header.magic
        )));
    }
    if header.dtype != DTYPE {
        return Err(Error::Format(format!(
            "unsupported dtype {:?}",
            header.dtype
        )));
    }
    if header.bands_nm.len() != header.l {
        return Err(Error::Format(format!(
            "header declares L={} but lists {} channel tags",
            header.l,
            header.bands_nm.len()
        )));
    }
    let data = read_payload(&mut reader, (header.l, header.h, header.w), path)?;
    Ok((data, header.bands_nm))
}

/// Write a spectral cube.
pub fn write_cube(cube: &SpectralCube, path: &Path) -> Result<()> {
    write_tensor3(cube.data(), cube.bands().wavelengths_nm(), path)
}

/// Read a spectral cube, enforcing all cube invariants.
pub fn read_cube(path: &Path) -> Result<SpectralCube> {
    let (data, tags) = read_tensor3(path)?;
    let bands = BandGrid::new(tags)?;
    SpectralCube::new(bands, data)
}

/// Write a grayscale stack.
pub fn write_stack(stack: &GrayscaleStack, path: &Path) -> Result<()> {
    let (k, h, w) = (stack.len(), stack.height(), stack.width());
    let header = StackFileHeader {
        magic: STACK_MAGIC.to_string(),
        l: k,
        h,
        w,
        positions_mm: stack.lens_positions_mm().to_vec(),
        dtype: DTYPE.to_string(),
    };
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut out = BufWriter::new(file);
    serde_json::to_writer(&mut out, &header)
        .map_err(|e| Error::Format(format!("header encode failed: {e}")))?;
    out.write_all(b"\n").map_err(|e| io_err(path, e))?;
    let mut buf = Vec::with_capacity(k * h * w * 4);
    for frame in stack.frames() {
        for &v in frame.data().iter() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out.write_all(&buf).map_err(|e| io_err(path, e))?;
    out.flush().map_err(|e| io_err(path, e))
}

/// Read a grayscale stack, clamping out-of-range samples into `[0, 1]` and
/// reporting how many were clamped.
pub fn read_stack_counting(path: &Path) -> Result<(GrayscaleStack, usize)> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut reader = BufReader::new(file);
    let line = read_header_line(&mut reader, path)?;
    let header: StackFileHeader = parse_header(&line)?;
    if header.magic != STACK_MAGIC {
        return Err(Error::Format(format!(
            "expected magic {STACK_MAGIC:?}, found {:?}",
            header.magic
        )));
    }
    if header.dtype != DTYPE {
        return Err(Error::Format(format!(
            "unsupported dtype {:?}",
            header.dtype
        )));
    }
    if header.positions_mm.len() != header.l {
        return Err(Error::Format(format!(
            "header declares L={} but lists {} positions",
            header.l,
            header.positions_mm.len()
        )));
    }
    let data = read_payload(&mut reader, (header.l, header.h, header.w), path)?;
    let mut frames = Vec::with_capacity(header.l);
    let mut clamped_total = 0usize;
    for k in 0..header.l {
        let plane: Array2<f64> = data.index_axis(ndarray::Axis(0), k).to_owned();
        let (img, clamped) = GrayscaleImage::new_clamped(plane)?;
        clamped_total += clamped;
        frames.push(img);
    }
    let stack = GrayscaleStack::new(frames, header.positions_mm)?;
    Ok((stack, clamped_total))
}

/// Read a grayscale stack, discarding the clamp counter.
pub fn read_stack(path: &Path) -> Result<GrayscaleStack> {
    read_stack_counting(path).map(|(s, _)| s)
}
