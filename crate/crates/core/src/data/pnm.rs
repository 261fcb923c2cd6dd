use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Maps a value in `[-1, 1]` to a byte, rounding half to even.
pub fn quantize(v: f64) -> u8 {
    ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round_ties_even() as u8
}

/// Encodes a `(1, h, w)` image as binary PGM (P5) or a `(3, h, w)` image as
/// binary PPM (P6), maxval 255.
pub fn encode_pnm(image: &Tensor) -> Result<Vec<u8>> {
    let [c, h, w] = match image.shape() {
        &[c, h, w] => [c, h, w],
        s => {
            return Err(Error::shape(
                "encode_pnm",
                format!("expected (c, h, w), got {s:?}"),
            ))
        }
    };
    let magic = match c {
        1 => "P5",
        3 => "P6",
        _ => {
            return Err(Error::shape(
                "encode_pnm",
                format!("{c} channels; PGM/PPM need 1 or 3"),
            ))
        }
    };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    let plane = h * w;
    for p in 0..plane {
        for ch in 0..c {
            out.push(quantize(image.data()[ch * plane + p]));
        }
    }
    Ok(out)
}

fn next_token(bytes: &[u8], pos: &mut usize) -> Result<String> {
    loop {
        match bytes.get(*pos) {
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|&b| b != b'\n') {
                    *pos += 1;
                }
            }
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
            None => return Err(Error::Format("truncated PNM header".into())),
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(|b| !b.is_ascii_whitespace()) {
        *pos += 1;
    }
    Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

fn header_number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    let tok = next_token(bytes, pos)?;
    tok.parse()
        .map_err(|_| Error::Format(format!("bad PNM {what} '{tok}'")))
}

/// Decodes binary PGM/PPM bytes into a `(c, h, w)` tensor in `[-1, 1]`.
pub fn decode_pnm(bytes: &[u8]) -> Result<Tensor> {
    let mut pos = 0;
    let channels = match next_token(bytes, &mut pos)?.as_str() {
        "P5" => 1,
        "P6" => 3,
        other => return Err(Error::Format(format!("unsupported PNM magic '{other}'"))),
    };
    let w = header_number(bytes, &mut pos, "width")?;
    let h = header_number(bytes, &mut pos, "height")?;
    let maxval = header_number(bytes, &mut pos, "maxval")?;
    if maxval != 255 {
        return Err(Error::Format(format!(
            "maxval {maxval} unsupported, need 255"
        )));
    }
    if !bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err(Error::Format("missing whitespace after PNM header".into()));
    }
    pos += 1;
    let plane = w
        .checked_mul(h)
        .ok_or_else(|| Error::Format("PNM size overflow".into()))?;
    let payload = &bytes[pos..];
    if payload.len() != plane * channels {
        return Err(Error::Format(format!(
            "PNM payload has {} bytes, expected {}",
            payload.len(),
            plane * channels
        )));
    }
    let mut data = vec![0.0; plane * channels];
    for p in 0..plane {
        for ch in 0..channels {
            data[ch * plane + p] = super::idx::pixel_to_unit(payload[p * channels + ch]);
        }
    }
    Tensor::new([channels, h, w], data)
}

pub fn write_pnm(path: &Path, image: &Tensor) -> Result<()> {
    std::fs::write(path, encode_pnm(image)?)?;
    Ok(())
}

pub fn read_pnm(path: &Path) -> Result<Tensor> {
    decode_pnm(&std::fs::read(path)?)
}
