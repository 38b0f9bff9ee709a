//! Binary PPM (P6) images and PGM (P5) masks, maxval 255 only.
//!
//! Images map byte `b` to `b / 255`. Masks hold only 0 and 255 and map to
//! 0.0 and 1.0. Writing quantises with `round(255 * v)` after clamping to
//! `[0, 1]`, so decode followed by encode reproduces the input bytes.

use std::path::Path;

use crate::error::{Error, RasterError, Result};
use crate::tensor::{Element, Shape, Tensor};

struct Header {
    width: usize,
    height: usize,
    payload_start: usize,
}

fn parse_header(bytes: &[u8], magic: &'static str) -> Result<Header, RasterError> {
    if bytes.len() < 2 || &bytes[..2] != magic.as_bytes() {
        let found = String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned();
        return Err(RasterError::BadMagic {
            found,
            expected: magic,
        });
    }
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for (i, field) in fields.iter_mut().enumerate() {
        // Whitespace and comment lines may separate header fields.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        let digits = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        *field = digits.parse().map_err(|_| {
            RasterError::BadHeader(format!("header field {} is not a number", i + 1))
        })?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => {
            return Err(RasterError::BadHeader(
                "missing whitespace after maxval".into(),
            ))
        }
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(RasterError::BadMaxval(maxval));
    }
    if width == 0 || height == 0 {
        return Err(RasterError::BadHeader(format!(
            "zero dimension {width}x{height}"
        )));
    }
    Ok(Header {
        width: width as usize,
        height: height as usize,
        payload_start: pos,
    })
}

fn payload<'a>(bytes: &'a [u8], h: &Header, channels: usize) -> Result<&'a [u8], RasterError> {
    let expected = h.width * h.height * channels;
    let found = bytes.len() - h.payload_start;
    if found < expected {
        return Err(RasterError::Truncated { expected, found });
    }
    Ok(&bytes[h.payload_start..h.payload_start + expected])
}

/// Decode a P6 image into a `(1, 3, H, W)` tensor in `[0, 1]`.
pub fn decode_ppm<T: Element>(bytes: &[u8]) -> Result<Tensor<T>, RasterError> {
    let h = parse_header(bytes, "P6")?;
    let data = payload(bytes, &h, 3)?;
    let scale = T::from_f64(255.0);
    Ok(Tensor::from_fn(
        Shape::new(1, 3, h.height, h.width),
        |[_, c, y, x]| T::from_f64(f64::from(data[(y * h.width + x) * 3 + c])) / scale,
    ))
}

/// Decode a P5 mask with values {0, 255} into a `(1, 1, H, W)` tensor of {0, 1}.
pub fn decode_pgm_mask<T: Element>(bytes: &[u8]) -> Result<Tensor<T>, RasterError> {
    let h = parse_header(bytes, "P5")?;
    let data = payload(bytes, &h, 1)?;
    if let Some(i) = data.iter().position(|&b| b != 0 && b != 255) {
        return Err(RasterError::NonBinaryMask {
            value: data[i],
            offset: h.payload_start + i,
        });
    }
    let values = data
        .iter()
        .map(|&b| if b == 255 { T::one() } else { T::zero() })
        .collect();
    Ok(Tensor::from_vec(Shape::new(1, 1, h.height, h.width), values).expect("payload length"))
}

/// Decode any P5 raster into `(1, 1, H, W)` values `b / 255`.
pub fn decode_pgm<T: Element>(bytes: &[u8]) -> Result<Tensor<T>, RasterError> {
    let h = parse_header(bytes, "P5")?;
    let data = payload(bytes, &h, 1)?;
    let scale = T::from_f64(255.0);
    let values = data
        .iter()
        .map(|&b| T::from_f64(f64::from(b)) / scale)
        .collect();
    Ok(Tensor::from_vec(Shape::new(1, 1, h.height, h.width), values).expect("payload length"))
}

/// `round(255 * clamp(v, 0, 1))`.
pub fn quantize<T: Element>(v: T) -> u8 {
    (v.to_f64().clamp(0.0, 1.0) * 255.0).round() as u8
}

fn single(t: &Tensor<impl Element>, channels: usize) -> Result<(usize, usize), RasterError> {
    let s = t.shape();
    if s.n != 1 || s.c != channels {
        return Err(RasterError::BadShape(s.to_string()));
    }
    Ok((s.h, s.w))
}

/// Encode a `(1, 3, H, W)` tensor as P6.
pub fn encode_ppm<T: Element>(t: &Tensor<T>) -> Result<Vec<u8>, RasterError> {
    let (h, w) = single(t, 3)?;
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                out.push(quantize(t.at(0, c, y, x)));
            }
        }
    }
    Ok(out)
}

/// Encode a `(1, 1, H, W)` tensor as P5 with quantised values.
pub fn encode_pgm<T: Element>(t: &Tensor<T>) -> Result<Vec<u8>, RasterError> {
    let (h, w) = single(t, 1)?;
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(t.data().iter().map(|&v| quantize(v)));
    Ok(out)
}

/// Encode a binary `(1, 1, H, W)` mask (threshold 0.5) as P5 {0, 255}.
pub fn encode_pgm_mask<T: Element>(t: &Tensor<T>) -> Result<Vec<u8>, RasterError> {
    let (h, w) = single(t, 1)?;
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    let half = T::from_f64(0.5);
    out.extend(t.data().iter().map(|&v| if v >= half { 255u8 } else { 0 }));
    Ok(out)
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn raster_err(path: &Path) -> impl FnOnce(RasterError) -> Error + '_ {
    move |kind| Error::Raster {
        path: path.to_path_buf(),
        kind,
    }
}

pub fn read_image<T: Element>(path: &Path) -> Result<Tensor<T>> {
    decode_ppm(&read_bytes(path)?).map_err(raster_err(path))
}

pub fn read_mask<T: Element>(path: &Path) -> Result<Tensor<T>> {
    decode_pgm_mask(&read_bytes(path)?).map_err(raster_err(path))
}

/// Read a P6 image or P5 mask, chosen by the file's magic.
pub fn read_raster<T: Element>(path: &Path) -> Result<Tensor<T>> {
    let bytes = read_bytes(path)?;
    if bytes.starts_with(b"P5") {
        decode_pgm_mask(&bytes)
    } else {
        decode_ppm(&bytes)
    }
    .map_err(raster_err(path))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Write a 3-channel tensor as P6 or a 1-channel tensor as P5.
pub fn write_raster<T: Element>(path: &Path, t: &Tensor<T>) -> Result<()> {
    let bytes = if t.shape().c == 3 {
        encode_ppm(t)
    } else {
        encode_pgm(t)
    }
    .map_err(raster_err(path))?;
    write_bytes(path, &bytes)
}

pub fn write_mask<T: Element>(path: &Path, t: &Tensor<T>) -> Result<()> {
    let bytes = encode_pgm_mask(t).map_err(raster_err(path))?;
    write_bytes(path, &bytes)
}
