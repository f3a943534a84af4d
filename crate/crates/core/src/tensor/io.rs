//! On-disk tensor and image formats.
//!
//! `LTVT`: the 4 magic bytes `LTVT`, a `u8` version (1), a `u8` rank, `rank`
//! little-endian `u32` extents, then the little-endian `f64` payload.
//!
//! Grayscale images are binary 16-bit PGM (`P5`, maxval 65535, big-endian
//! samples) with `[0, 1]` mapped linearly onto `0..=65535`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::Tensor;
use crate::error::{LtvError, Result};

const MAGIC: &[u8; 4] = b"LTVT";
const VERSION: u8 = 1;

pub fn encode_ltvt(t: &Tensor) -> Result<Vec<u8>> {
    let rank = u8::try_from(t.rank())
        .map_err(|_| LtvError::Format(format!("rank {} too large for LTVT", t.rank())))?;
    let mut buf = Vec::with_capacity(6 + 4 * t.rank() + 8 * t.len());
    buf.extend_from_slice(MAGIC);
    buf.push(VERSION);
    buf.push(rank);
    for &d in t.shape() {
        let d = u32::try_from(d).map_err(|_| LtvError::Format(format!("extent {d} exceeds u32")))?;
        buf.extend_from_slice(&d.to_le_bytes());
    }
    for &v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    Ok(buf)
}

pub fn decode_ltvt(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < 6 || &bytes[..4] != MAGIC {
        return Err(LtvError::Format("missing LTVT magic".into()));
    }
    if bytes[4] != VERSION {
        return Err(LtvError::Format(format!("unsupported LTVT version {}", bytes[4])));
    }
    let rank = bytes[5] as usize;
    let header = 6 + 4 * rank;
    if bytes.len() < header {
        return Err(LtvError::Format("truncated LTVT header".into()));
    }
    let shape: Vec<usize> = bytes[6..header]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let n: usize = shape.iter().product();
    if bytes.len() != header + 8 * n {
        return Err(LtvError::Format(format!(
            "LTVT payload is {} bytes, shape {shape:?} needs {}",
            bytes.len() - header,
            8 * n
        )));
    }
    let data = bytes[header..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Tensor::new(shape, data)
}

pub fn write_ltvt(path: &Path, t: &Tensor) -> Result<()> {
    fs::write(path, encode_ltvt(t)?)?;
    Ok(())
}

pub fn read_ltvt(path: &Path) -> Result<Tensor> {
    decode_ltvt(&fs::read(path)?)
}

pub fn encode_pgm16(img: &Tensor) -> Result<Vec<u8>> {
    let (h, w) = img.dims2()?;
    let mut buf = format!("P5\n{w} {h}\n65535\n").into_bytes();
    buf.reserve(2 * h * w);
    for &v in img.data() {
        let q = (v.clamp(0.0, 1.0) * 65535.0).round() as u16;
        buf.extend_from_slice(&q.to_be_bytes());
    }
    Ok(buf)
}

fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a str> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            break;
        }
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(LtvError::Format("truncated PGM header".into()));
    }
    std::str::from_utf8(&bytes[start..*pos]).map_err(|_| LtvError::Format("non-ASCII PGM header".into()))
}

/// Decode a binary PGM (8- or 16-bit) into `[0, 1]` intensities.
pub fn decode_pgm(bytes: &[u8]) -> Result<Tensor> {
    let mut pos = 0;
    if next_token(bytes, &mut pos)? != "P5" {
        return Err(LtvError::Format("only binary PGM (P5) is supported".into()));
    }
    let mut num = |name: &str| -> Result<usize> {
        next_token(bytes, &mut pos)?
            .parse::<usize>()
            .map_err(|_| LtvError::Format(format!("bad PGM {name}")))
    };
    let w = num("width")?;
    let h = num("height")?;
    let maxval = num("maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(LtvError::Format(format!("PGM maxval {maxval} out of range")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let bps = if maxval > 255 { 2 } else { 1 };
    let raster = bytes.get(pos..).unwrap_or_default();
    if raster.len() < bps * w * h {
        return Err(LtvError::Format("truncated PGM raster".into()));
    }
    let scale = 1.0 / maxval as f64;
    let data = (0..w * h)
        .map(|k| {
            let v = if bps == 2 {
                u16::from_be_bytes([raster[2 * k], raster[2 * k + 1]]) as f64
            } else {
                raster[k] as f64
            };
            v * scale
        })
        .collect();
    Tensor::new(vec![h, w], data)
}

pub fn write_pgm16(path: &Path, img: &Tensor) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_pgm16(img)?)?;
    Ok(())
}

pub fn read_pgm(path: &Path) -> Result<Tensor> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_pgm(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ltvt_layout() {
        let t = Tensor::new(vec![1, 2], vec![1.0, -0.5]).unwrap();
        let b = encode_ltvt(&t).unwrap();
        assert_eq!(&b[..6], b"LTVT\x01\x02");
        assert_eq!(&b[6..10], &1u32.to_le_bytes());
        assert_eq!(&b[10..14], &2u32.to_le_bytes());
        assert_eq!(&b[14..22], &1.0f64.to_le_bytes());
        assert_eq!(b.len(), 30);
    }

    #[test]
    fn ltvt_rejects_garbage() {
        assert!(decode_ltvt(b"NOPE\x01\x00").is_err());
        assert!(decode_ltvt(b"LTVT\x02\x00").is_err());
        let mut b = encode_ltvt(&Tensor::zeros(&[3])).unwrap();
        b.pop();
        assert!(decode_ltvt(&b).is_err());
    }

    #[test]
    fn pgm_header_and_comments() {
        let bytes = b"P5\n# comment\n2 1\n255\n\x00\xff";
        let t = decode_pgm(bytes).unwrap();
        assert_eq!(t.shape(), &[1, 2]);
        assert_eq!(t.data(), &[0.0, 1.0]);
    }

    proptest! {
        #[test]
        fn ltvt_roundtrip_is_exact(
            shape in proptest::collection::vec(1usize..5, 0..4),
            seed in any::<u64>(),
        ) {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = (0..n).map(|i| f64::from_bits(seed.rotate_left(i as u32) >> 2)).collect();
            let t = Tensor::new(shape, data).unwrap();
            prop_assert_eq!(decode_ltvt(&encode_ltvt(&t).unwrap()).unwrap(), t);
        }

        #[test]
        fn pgm_roundtrip_within_quantization(
            h in 1usize..6, w in 1usize..6,
            vals in proptest::collection::vec(0.0f64..=1.0, 36),
        ) {
            let img = Tensor::new(vec![h, w], vals[..h * w].to_vec()).unwrap();
            let back = decode_pgm(&encode_pgm16(&img).unwrap()).unwrap();
            for (a, b) in img.data().iter().zip(back.data()) {
                prop_assert!((a - b).abs() <= 1.0 / 65535.0);
            }
        }
    }
}
