//! PFM float images: `PF` header, `width height`, negative scale for
//! little-endian, rows stored bottom-up as interleaved float32 triples.
//! Round trips are bitwise exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::Image;
use crate::error::{Error, Result};

fn read_line_ws(r: &mut impl Read) -> Result<String> {
    // header tokens are newline- or whitespace-delimited single lines
    let mut s = String::new();
    loop {
        let mut b = [0u8; 1];
        r.read_exact(&mut b)?;
        let c = b[0] as char;
        if c == '\n' {
            return Ok(s.trim().to_string());
        }
        s.push(c);
    }
}

pub fn read_pfm(path: &Path) -> Result<Image> {
    let f = File::open(path)
        .map_err(|e| Error::msg(format!("open {}: {e}", path.display())))?;
    let mut r = BufReader::new(f);
    let magic = read_line_ws(&mut r)?;
    let channels = match magic.as_str() {
        "PF" => 3,
        "Pf" => 1,
        other => {
            return Err(Error::Parse(format!(
                "{}: bad PFM magic {other:?}",
                path.display()
            )))
        }
    };
    let dims = read_line_ws(&mut r)?;
    let mut it = dims.split_whitespace();
    let w: usize = it
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::Parse(format!("{}: bad PFM dims {dims:?}", path.display())))?;
    let h: usize = it
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::Parse(format!("{}: bad PFM dims {dims:?}", path.display())))?;
    let scale: f32 = read_line_ws(&mut r)?
        .parse()
        .map_err(|_| Error::Parse(format!("{}: bad PFM scale", path.display())))?;
    let little_endian = scale < 0.0;
    let mut buf = vec![0u8; w * h * channels * 4];
    r.read_exact(&mut buf)
        .map_err(|e| Error::msg(format!("{}: truncated PFM data: {e}", path.display())))?;
    let mut img = Image::new(channels, h, w);
    for row in 0..h {
        let y = h - 1 - row; // bottom-up storage
        for x in 0..w {
            for c in 0..channels {
                let i = ((row * w + x) * channels + c) * 4;
                let bytes = [buf[i], buf[i + 1], buf[i + 2], buf[i + 3]];
                let v = if little_endian {
                    f32::from_le_bytes(bytes)
                } else {
                    f32::from_be_bytes(bytes)
                };
                img.set(c, y, x, v);
            }
        }
    }
    Ok(img)
}

pub fn write_pfm(img: &Image, path: &Path) -> Result<()> {
    let magic = match img.channels {
        3 => "PF",
        1 => "Pf",
        n => {
            return Err(Error::arg(format!("PFM supports 1 or 3 channels, got {n}")));
        }
    };
    if !img.data.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite(format!("write_pfm {}", path.display())));
    }
    let f = File::create(path)
        .map_err(|e| Error::msg(format!("create {}: {e}", path.display())))?;
    let mut w = BufWriter::new(f);
    write!(w, "{magic}\n{} {}\n-1.0\n", img.width, img.height)?;
    for row in 0..img.height {
        let y = img.height - 1 - row;
        for x in 0..img.width {
            for c in 0..img.channels {
                w.write_all(&img.get(c, y, x).to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Header length in bytes for a given image, for size arithmetic.
pub fn pfm_header_len(img: &Image) -> usize {
    format!(
        "{}\n{} {}\n-1.0\n",
        if img.channels == 3 { "PF" } else { "Pf" },
        img.width,
        img.height
    )
    .len()
}
