//! Binary PPM (P6) and PGM (P5) import/export. Grayscale files are expanded
//! to three channels on import.

use super::{ImageFrame, ImgError};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

pub fn write_ppm(frame: &ImageFrame, path: impl AsRef<Path>) -> Result<(), ImgError> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    let rgb = frame.to_rgb();
    write!(w, "P6\n{} {}\n255\n", rgb.width(), rgb.height())?;
    w.write_all(rgb.data())?;
    w.flush()?;
    Ok(())
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<ImageFrame, ImgError> {
    let file = std::fs::File::open(path)?;
    decode(BufReader::new(file))
}

fn next_token<R: BufRead>(r: &mut R) -> Result<String, ImgError> {
    let mut tok = String::new();
    let mut byte = [0u8; 1];
    loop {
        if r.read(&mut byte)? == 0 {
            break;
        }
        let c = byte[0];
        if c == b'#' && tok.is_empty() {
            let mut skip = Vec::new();
            r.read_until(b'\n', &mut skip)?;
            continue;
        }
        if c.is_ascii_whitespace() {
            if tok.is_empty() {
                continue;
            }
            break;
        }
        tok.push(c as char);
    }
    if tok.is_empty() {
        return Err(ImgError::Format("unexpected end of header".into()));
    }
    Ok(tok)
}

fn parse_dim<R: BufRead>(r: &mut R) -> Result<usize, ImgError> {
    let t = next_token(r)?;
    t.parse()
        .map_err(|_| ImgError::Format(format!("bad header field {t:?}")))
}

pub(crate) fn decode<R: BufRead>(mut r: R) -> Result<ImageFrame, ImgError> {
    let magic = next_token(&mut r)?;
    let channels = match magic.as_str() {
        "P6" => 3,
        "P5" => 1,
        other => return Err(ImgError::Format(format!("unsupported magic {other:?}"))),
    };
    let width = parse_dim(&mut r)?;
    let height = parse_dim(&mut r)?;
    let maxval = parse_dim(&mut r)?;
    if maxval != 255 {
        return Err(ImgError::Format(format!("only 8-bit files are supported (maxval {maxval})")));
    }
    let mut data = vec![0u8; width * height * channels];
    r.read_exact(&mut data)
        .map_err(|_| ImgError::Format("truncated pixel data".into()))?;
    Ok(ImageFrame::new(width, height, channels, data)?.to_rgb())
}
