//! Minimal netpbm grayscale (PGM) reading and writing.
//!
//! Binary (`P5`) and plain (`P2`) variants are read; binary is written.
//! 16-bit samples are big-endian as the format requires.

use std::io::{self, Read, Write};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: u32,
    pub height: u32,
    pub max_value: u16,
    pub pixels: Vec<u16>,
}

pub fn write_u8<W: Write>(mut out: W, width: u32, height: u32, pixels: &[u8]) -> io::Result<()> {
    check_len(width, height, pixels.len())?;
    write!(out, "P5\n{width} {height}\n255\n")?;
    out.write_all(pixels)
}

pub fn write_u16<W: Write>(mut out: W, width: u32, height: u32, pixels: &[u16]) -> io::Result<()> {
    check_len(width, height, pixels.len())?;
    write!(out, "P5\n{width} {height}\n65535\n")?;
    let bytes: Vec<u8> = pixels.iter().flat_map(|p| p.to_be_bytes()).collect();
    out.write_all(&bytes)
}

fn check_len(width: u32, height: u32, len: usize) -> io::Result<()> {
    if width as usize * height as usize != len {
        return Err(invalid(format!("{len} pixels for a {width}x{height} image")));
    }
    Ok(())
}

fn invalid(msg: String) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg)
}

pub fn read<R: Read>(mut input: R) -> io::Result<GrayImage> {
    let mut data = Vec::new();
    input.read_to_end(&mut data)?;
    let mut pos = 0;
    let magic = token(&data, &mut pos)?;
    let binary = match magic.as_str() {
        "P5" => true,
        "P2" => false,
        other => return Err(invalid(format!("unsupported PGM magic `{other}`"))),
    };
    let width: u32 = number(&data, &mut pos)?;
    let height: u32 = number(&data, &mut pos)?;
    let max_value: u32 = number(&data, &mut pos)?;
    if max_value == 0 || max_value > 65535 {
        return Err(invalid(format!("max value {max_value}")));
    }
    let count = width as usize * height as usize;
    let pixels = if binary {
        // Exactly one whitespace byte separates the header from the raster.
        pos += 1;
        let raster = data.get(pos..).unwrap_or(&[]);
        if max_value < 256 {
            if raster.len() < count {
                return Err(invalid("truncated raster".into()));
            }
            raster[..count].iter().map(|&b| u16::from(b)).collect()
        } else {
            if raster.len() < 2 * count {
                return Err(invalid("truncated raster".into()));
            }
            raster[..2 * count]
                .chunks_exact(2)
                .map(|c| u16::from_be_bytes([c[0], c[1]]))
                .collect()
        }
    } else {
        (0..count)
            .map(|_| number::<u16>(&data, &mut pos))
            .collect::<io::Result<Vec<_>>>()?
    };
    Ok(GrayImage {
        width,
        height,
        max_value: max_value as u16,
        pixels,
    })
}

fn token(data: &[u8], pos: &mut usize) -> io::Result<String> {
    loop {
        while *pos < data.len() && data[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < data.len() && data[*pos] == b'#' {
            while *pos < data.len() && data[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < data.len() && !data[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(invalid("unexpected end of PGM header".into()));
    }
    Ok(String::from_utf8_lossy(&data[start..*pos]).into_owned())
}

fn number<T: std::str::FromStr>(data: &[u8], pos: &mut usize) -> io::Result<T> {
    let t = token(data, pos)?;
    t.parse().map_err(|_| invalid(format!("bad PGM number `{t}`")))
}
