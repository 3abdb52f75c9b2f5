//! Tensor file formats: a small flat binary format ("DAT1") that preserves
//! doubles exactly, plus PGM/PPM export for quick visual inspection.
//!
//! DAT1 layout: 16-byte header (magic `DAT1`, dtype code u8 {0 real, 1
//! complex}, channels u8, height u32 LE, width u32 LE, 2 pad bytes), then the
//! payload as little-endian f64 in channel-major row-major order; complex
//! elements store re, im consecutively.

use super::{Dtype, Shape, Tensor};
use crate::error::{Error, Result};
use num_complex::Complex64;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"DAT1";

pub fn write_dat(path: &Path, t: &Tensor) -> Result<()> {
    let shape = t.shape();
    if shape.channels > u8::MAX as usize {
        return Err(Error::invalid("dat format supports at most 255 channels"));
    }
    if shape.height > u32::MAX as usize || shape.width > u32::MAX as usize {
        return Err(Error::invalid("dat format supports sides up to u32::MAX"));
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&[match t.dtype() {
        Dtype::Real => 0u8,
        Dtype::Complex => 1u8,
    }])?;
    w.write_all(&[shape.channels as u8])?;
    w.write_all(&(shape.height as u32).to_le_bytes())?;
    w.write_all(&(shape.width as u32).to_le_bytes())?;
    w.write_all(&[0u8; 2])?;
    for z in t.data() {
        w.write_all(&z.re.to_le_bytes())?;
        if t.dtype() == Dtype::Complex {
            w.write_all(&z.im.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_dat(path: &Path) -> Result<Tensor> {
    let mut r = BufReader::new(File::open(path)?);
    let mut header = [0u8; 16];
    r.read_exact(&mut header)
        .map_err(|_| Error::format("dat file shorter than 16-byte header"))?;
    if &header[0..4] != MAGIC {
        return Err(Error::format("bad dat magic, expected DAT1"));
    }
    let dtype = match header[4] {
        0 => Dtype::Real,
        1 => Dtype::Complex,
        other => return Err(Error::format(format!("unknown dat dtype code {other}"))),
    };
    let channels = header[5] as usize;
    let height = u32::from_le_bytes(header[6..10].try_into().unwrap()) as usize;
    let width = u32::from_le_bytes(header[10..14].try_into().unwrap()) as usize;
    let shape = Shape::new(channels, height, width);
    let slots = shape.len() * if dtype == Dtype::Complex { 2 } else { 1 };
    let mut payload = vec![0u8; slots * 8];
    r.read_exact(&mut payload)
        .map_err(|_| Error::format("dat payload shorter than header promises"))?;
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::format("dat payload longer than header promises"));
    }
    let mut scalars = payload
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()));
    let mut data = Vec::with_capacity(shape.len());
    for _ in 0..shape.len() {
        let re = scalars.next().unwrap();
        let im = if dtype == Dtype::Complex { scalars.next().unwrap() } else { 0.0 };
        data.push(Complex64::new(re, im));
    }
    Ok(Tensor { dtype, shape, data })
}

/// Writes P5 (1 channel) or P6 (3 channels) with real parts mapped from
/// [0, 1] to [0, 255] and clamped. Complex tensors: export `t.magnitude()`.
pub fn write_pgm(path: &Path, t: &Tensor) -> Result<()> {
    if t.dtype() != Dtype::Real {
        return Err(Error::Dtype { expected: Dtype::Real, got: t.dtype() });
    }
    let shape = t.shape();
    let (c, h, w) = (shape.channels, shape.height, shape.width);
    if c != 1 && c != 3 {
        return Err(Error::invalid("pgm/ppm export needs 1 or 3 channels"));
    }
    let mut out = BufWriter::new(File::create(path)?);
    let magic = if c == 1 { "P5" } else { "P6" };
    write!(out, "{magic}\n{w} {h}\n255\n")?;
    let quant = |v: f64| (v * 255.0).round().clamp(0.0, 255.0) as u8;
    for i in 0..h {
        for j in 0..w {
            for chan in 0..c {
                out.write_all(&[quant(t.at(chan, i, j).re)])?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

fn pnm_token(bytes: &[u8], pos: &mut usize) -> Result<String> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    while *pos < bytes.len() && bytes[*pos] == b'#' {
        while *pos < bytes.len() && bytes[*pos] != b'\n' {
            *pos += 1;
        }
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::format("truncated pnm header"));
    }
    Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

/// Reads P5 into a 1-channel or P6 into a 3-channel real tensor scaled to [0, 1].
pub fn read_pgm(path: &Path) -> Result<Tensor> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    let mut pos = 0;
    let magic = pnm_token(&bytes, &mut pos)?;
    let channels = match magic.as_str() {
        "P5" => 1,
        "P6" => 3,
        other => return Err(Error::format(format!("unsupported pnm magic {other}"))),
    };
    let w: usize = pnm_token(&bytes, &mut pos)?
        .parse()
        .map_err(|_| Error::format("bad pnm width"))?;
    let h: usize = pnm_token(&bytes, &mut pos)?
        .parse()
        .map_err(|_| Error::format("bad pnm height"))?;
    let maxval: usize = pnm_token(&bytes, &mut pos)?
        .parse()
        .map_err(|_| Error::format("bad pnm maxval"))?;
    if maxval != 255 {
        return Err(Error::format("only maxval 255 pnm files are supported"));
    }
    pos += 1; // single whitespace byte after maxval
    let need = w * h * channels;
    if bytes.len() < pos + need {
        return Err(Error::format("pnm payload shorter than header promises"));
    }
    let shape = Shape::new(channels, h, w);
    let mut data = vec![0.0; shape.len()];
    for i in 0..h {
        for j in 0..w {
            for chan in 0..channels {
                let v = bytes[pos + (i * w + j) * channels + chan] as f64 / 255.0;
                data[(chan * h + i) * w + j] = v;
            }
        }
    }
    Tensor::from_real(shape, data)
}
