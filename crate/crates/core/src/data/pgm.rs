//! Binary portable graymaps (`P5`, 8-bit).

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Encodes a `[1, H, W]` image with pixels in `[0, 1]`.
pub fn encode_pgm(image: &Tensor) -> Result<Vec<u8>> {
    let [1, h, w] = *image.shape() else {
        return Err(Error::Shape(format!(
            "PGM needs a [1, H, W] image, got {:?}",
            image.shape()
        )));
    };
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(image.data().iter().map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8));
    Ok(out)
}

/// Decodes a `P5` file into a `[1, H, W]` image scaled to `[0, 1]`.
pub fn decode_pgm(bytes: &[u8], what: &str) -> Result<Tensor> {
    let format_err = |offset: usize, detail: &str| Error::Format {
        what: what.to_string(),
        offset,
        detail: detail.to_string(),
    };
    if !bytes.starts_with(b"P5") {
        return Err(format_err(0, "not a binary PGM (expected `P5`)"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format_err(start, "malformed header number"))?;
    }
    let [w, h, maxval] = fields;
    if w == 0 || h == 0 || maxval == 0 || maxval > 255 {
        return Err(format_err(2, &format!("unsupported geometry {w}x{h}, maxval {maxval}")));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(format_err(pos, "missing whitespace after header"));
    }
    pos += 1;
    let body = bytes.get(pos..pos + w * h).ok_or_else(|| Error::Truncated {
        what: what.to_string(),
        offset: bytes.len(),
        needed: pos + w * h - bytes.len(),
    })?;
    let scale = maxval as f64;
    Tensor::new(
        vec![1, h, w],
        body.iter().map(|&b| (f64::from(b) / scale).min(1.0)).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_header() {
        let img = Tensor::new(vec![1, 2, 3], vec![0.0, 1.0, 0.2, 0.4, 0.6, 0.8]).unwrap();
        let bytes = encode_pgm(&img).unwrap();
        assert!(bytes.starts_with(b"P5\n3 2\n255\n"));
        let back = decode_pgm(&bytes, "x").unwrap();
        assert_eq!(back.shape(), &[1, 2, 3]);
        for (a, b) in back.data().iter().zip(img.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0);
        }
    }

    #[test]
    fn comments_and_errors() {
        let back = decode_pgm(b"P5 # c\n2 1\n# more\n15\n\x0f\x00", "x").unwrap();
        assert_eq!(back.data(), &[1.0, 0.0]);
        assert!(matches!(decode_pgm(b"P2\n1 1\n255\n0", "x"), Err(Error::Format { .. })));
        assert!(matches!(
            decode_pgm(b"P5\n2 2\n255\n\x01", "x"),
            Err(Error::Truncated { .. })
        ));
    }
}
