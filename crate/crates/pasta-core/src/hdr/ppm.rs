//! Binary PPM (P6) reader/writer, 8- and 16-bit, normalized to [0,1].

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::Image;
use crate::error::{Error, Result};

fn read_token(r: &mut impl BufRead) -> Result<String> {
    let mut tok = String::new();
    let mut in_comment = false;
    loop {
        let mut byte = [0u8; 1];
        match r.read_exact(&mut byte) {
            Ok(()) => {}
            Err(e) => {
                if tok.is_empty() {
                    return Err(Error::Io(e));
                }
                return Ok(tok);
            }
        }
        let c = byte[0] as char;
        if in_comment {
            if c == '\n' {
                in_comment = false;
            }
            continue;
        }
        if c == '#' {
            in_comment = true;
            continue;
        }
        if c.is_ascii_whitespace() {
            if tok.is_empty() {
                continue;
            }
            return Ok(tok);
        }
        tok.push(c);
    }
}

pub fn read_ppm(path: &Path) -> Result<Image> {
    let f = File::open(path)
        .map_err(|e| Error::msg(format!("open {}: {e}", path.display())))?;
    let mut r = BufReader::new(f);
    let magic = read_token(&mut r)?;
    if magic != "P6" {
        return Err(Error::Parse(format!(
            "{}: expected P6 magic, got {magic:?}",
            path.display()
        )));
    }
    let parse = |s: String| -> Result<usize> {
        s.parse()
            .map_err(|_| Error::Parse(format!("{}: bad header token {s:?}", path.display())))
    };
    let w = parse(read_token(&mut r)?)?;
    let h = parse(read_token(&mut r)?)?;
    let maxval = parse(read_token(&mut r)?)?;
    if w == 0 || h == 0 {
        return Err(Error::Parse(format!("{}: empty image", path.display())));
    }
    if maxval != 255 && maxval != 65535 {
        return Err(Error::Parse(format!(
            "{}: unsupported maxval {maxval}",
            path.display()
        )));
    }
    let bytes_per = if maxval == 255 { 1 } else { 2 };
    let mut buf = vec![0u8; w * h * 3 * bytes_per];
    r.read_exact(&mut buf)
        .map_err(|e| Error::msg(format!("{}: truncated pixel data: {e}", path.display())))?;
    let mut img = Image::new(3, h, w);
    let scale = 1.0 / maxval as f32;
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let i = (y * w + x) * 3 + c;
                let v = if bytes_per == 1 {
                    buf[i] as u32
                } else {
                    // 16-bit samples are big-endian
                    u16::from_be_bytes([buf[2 * i], buf[2 * i + 1]]) as u32
                };
                img.set(c, y, x, v as f32 * scale);
            }
        }
    }
    Ok(img)
}

/// Write 8-bit P6 (values clamped to [0,1]).
pub fn write_ppm8(img: &Image, path: &Path) -> Result<()> {
    write_ppm(img, path, 255)
}

/// Write 16-bit P6 (values clamped to [0,1]).
pub fn write_ppm16(img: &Image, path: &Path) -> Result<()> {
    write_ppm(img, path, 65535)
}

fn write_ppm(img: &Image, path: &Path, maxval: u32) -> Result<()> {
    if img.channels != 3 {
        return Err(Error::arg(format!(
            "PPM wants 3 channels, image has {}",
            img.channels
        )));
    }
    let f = File::create(path)
        .map_err(|e| Error::msg(format!("create {}: {e}", path.display())))?;
    let mut w = BufWriter::new(f);
    write!(w, "P6\n{} {}\n{}\n", img.width, img.height, maxval)?;
    let mv = maxval as f32;
    for y in 0..img.height {
        for x in 0..img.width {
            for c in 0..3 {
                let v = (img.get(c, y, x).clamp(0.0, 1.0) * mv).round() as u32;
                if maxval == 255 {
                    w.write_all(&[v as u8])?;
                } else {
                    w.write_all(&(v as u16).to_be_bytes())?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}
