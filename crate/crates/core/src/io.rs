//! Binary PGM (P5), PPM (P6) and single-channel PFM (Pf) codecs.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{DisparityMap, ImageBuffer};

/// Quantizes a unit intensity to a byte, rounding half up.
#[inline]
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

struct Header<'a> {
    magic: &'a [u8],
    fields: Vec<String>,
    payload: &'a [u8],
}

/// Reads the magic plus `n_fields` whitespace-separated ASCII fields,
/// skipping `#` comments. Exactly one whitespace byte separates the last
/// field from the payload.
fn parse_header(bytes: &[u8], n_fields: usize) -> Result<Header<'_>> {
    if bytes.len() < 2 {
        return Err(Error::MalformedHeader("file too short for a magic number".into()));
    }
    let magic = &bytes[..2];
    let mut pos = 2;
    let mut fields = Vec::with_capacity(n_fields);
    while fields.len() < n_fields {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::MalformedHeader(format!("expected {n_fields} header fields, found {}", fields.len())));
        }
        let field = std::str::from_utf8(&bytes[start..pos])
            .map_err(|_| Error::MalformedHeader("non-ASCII header field".into()))?;
        fields.push(field.to_owned());
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::MalformedHeader("missing separator before payload".into()));
    }
    Ok(Header { magic, fields, payload: &bytes[pos + 1..] })
}

fn parse_dim(s: &str, what: &str) -> Result<usize> {
    match s.parse::<usize>() {
        Ok(v) if v > 0 => Ok(v),
        _ => Err(Error::MalformedHeader(format!("invalid {what} {s:?}"))),
    }
}

fn check_payload(payload: &[u8], expected: usize) -> Result<()> {
    if payload.len() < expected {
        return Err(Error::Truncated { expected, found: payload.len() });
    }
    if payload.len() > expected {
        return Err(Error::MalformedHeader(format!("{} trailing bytes after payload", payload.len() - expected)));
    }
    Ok(())
}

pub fn decode_pnm(bytes: &[u8]) -> Result<ImageBuffer> {
    let header = parse_header(bytes, 3)?;
    let channels = match header.magic {
        b"P5" => 1,
        b"P6" => 3,
        other => return Err(Error::MalformedHeader(format!("unsupported magic {:?}", String::from_utf8_lossy(other)))),
    };
    let width = parse_dim(&header.fields[0], "width")?;
    let height = parse_dim(&header.fields[1], "height")?;
    let maxval: u32 = header.fields[2]
        .parse()
        .map_err(|_| Error::MalformedHeader(format!("invalid maxval {:?}", header.fields[2])))?;
    if maxval != 255 {
        return Err(Error::UnsupportedMaxval(maxval));
    }
    check_payload(header.payload, width * height * channels)?;
    let data = header.payload.iter().map(|b| f64::from(*b) / 255.0).collect();
    ImageBuffer::new(height, width, channels, data)
}

pub fn encode_pnm(img: &ImageBuffer) -> Vec<u8> {
    let magic = if img.channels() == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.data().iter().map(|v| quantize(*v)));
    out
}

pub fn load_image(path: impl AsRef<Path>) -> Result<ImageBuffer> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pnm(&bytes)
}

/// Writes P5 for one channel and P6 for three.
pub fn save_image(img: &ImageBuffer, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pnm(img)).map_err(|e| Error::io(path, e))
}

pub fn decode_pfm(bytes: &[u8]) -> Result<DisparityMap> {
    let header = parse_header(bytes, 3)?;
    if header.magic != b"Pf" {
        return Err(Error::MalformedHeader(format!(
            "expected single-channel PFM magic \"Pf\", found {:?}",
            String::from_utf8_lossy(header.magic)
        )));
    }
    let width = parse_dim(&header.fields[0], "width")?;
    let height = parse_dim(&header.fields[1], "height")?;
    let scale: f64 = header.fields[2]
        .parse()
        .map_err(|_| Error::MalformedHeader(format!("invalid scale {:?}", header.fields[2])))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::MalformedHeader(format!("invalid scale {scale}")));
    }
    let little_endian = scale < 0.0;
    check_payload(header.payload, width * height * 4)?;
    let mut data = vec![0.0; width * height];
    for (i, chunk) in header.payload.chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little_endian { f32::from_le_bytes(raw) } else { f32::from_be_bytes(raw) };
        // PFM stores the bottom row first.
        let (file_row, x) = (i / width, i % width);
        data[(height - 1 - file_row) * width + x] = f64::from(v);
    }
    DisparityMap::new(height, width, data)
}

/// Encodes as little-endian `Pf`. Values are narrowed to `f32`; NaN or
/// values outside the `f32` range are rejected.
pub fn encode_pfm(map: &DisparityMap) -> Result<Vec<u8>> {
    let (h, w) = (map.height(), map.width());
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(h * w * 4);
    for row in (0..h).rev() {
        for x in 0..w {
            let v = map.get(row, x);
            let narrowed = v as f32;
            if !narrowed.is_finite() {
                return Err(Error::NonFinite(row * w + x));
            }
            out.extend_from_slice(&narrowed.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn load_pfm(path: impl AsRef<Path>) -> Result<DisparityMap> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pfm(&bytes)
}

pub fn save_pfm(map: &DisparityMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_pfm(map)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn p5_linear_mapping() {
        let mut bytes = b"P5\n2 2\n255\n".to_vec();
        bytes.extend([0u8, 255, 128, 64]);
        let img = decode_pnm(&bytes).unwrap();
        assert_eq!((img.height(), img.width(), img.channels()), (2, 2, 1));
        assert_eq!(img.data(), &[0.0, 1.0, 128.0 / 255.0, 64.0 / 255.0]);
    }

    #[test]
    fn p6_single_red_pixel() {
        let mut bytes = b"P6\n1 1\n255\n".to_vec();
        bytes.extend([255u8, 0, 0]);
        let img = decode_pnm(&bytes).unwrap();
        assert_eq!(img.data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn header_comments_are_skipped() {
        let mut bytes = b"P5\n# made by hand\n1 1\n# another\n255\n".to_vec();
        bytes.push(7);
        assert_eq!(decode_pnm(&bytes).unwrap().data(), &[7.0 / 255.0]);
    }

    #[test]
    fn quantize_rounds_half_up() {
        assert_eq!(quantize(0.5), 128);
        assert_eq!(quantize(0.0), 0);
        assert_eq!(quantize(1.0), 255);
    }

    #[test]
    fn pnm_errors_are_distinct() {
        let mut bad_max = b"P5\n1 1\n65535\n".to_vec();
        bad_max.extend([0, 0]);
        assert!(matches!(decode_pnm(&bad_max), Err(Error::UnsupportedMaxval(65535))));
        assert!(matches!(decode_pnm(b"P3\n1 1\n255\n0"), Err(Error::MalformedHeader(_))));
        assert!(matches!(decode_pnm(b"P5\n1\n"), Err(Error::MalformedHeader(_))));
        assert!(matches!(decode_pnm(b"P5\n2 2\n255\n\x00\x01"), Err(Error::Truncated { expected: 4, found: 2 })));
        assert!(matches!(load_image("/nonexistent/definitely/missing.pgm"), Err(Error::MissingFile(_))));
    }

    #[test]
    fn pfm_header_and_payload_layout() {
        let map = DisparityMap::new(2, 3, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let bytes = encode_pfm(&map).unwrap();
        assert!(bytes.starts_with(b"Pf\n3 2\n-1.0\n"));
        // Bottom row first.
        let payload = &bytes[b"Pf\n3 2\n-1.0\n".len()..];
        assert_eq!(&payload[..4], &3.0f32.to_le_bytes());

        let one = DisparityMap::new(1, 1, vec![2.5]).unwrap();
        let bytes = encode_pfm(&one).unwrap();
        assert_eq!(&bytes[bytes.len() - 4..], &2.5f32.to_le_bytes());
        assert_eq!(bytes.len(), b"Pf\n1 1\n-1.0\n".len() + 4);
    }

    #[test]
    fn pfm_big_endian_is_accepted() {
        let mut bytes = b"Pf\n1 1\n1.0\n".to_vec();
        bytes.extend(2.5f32.to_be_bytes());
        assert_eq!(decode_pfm(&bytes).unwrap().data(), &[2.5]);
    }

    #[test]
    fn pfm_rejects_truncation_and_color() {
        let mut bytes = b"Pf\n2 1\n-1.0\n".to_vec();
        bytes.extend(1.0f32.to_le_bytes());
        assert!(matches!(decode_pfm(&bytes), Err(Error::Truncated { .. })));
        assert!(matches!(decode_pfm(b"PF\n1 1\n-1.0\n"), Err(Error::MalformedHeader(_))));
    }

    #[test]
    fn pfm_rejects_out_of_range_on_save() {
        let map = DisparityMap::new(1, 1, vec![1e300]).unwrap();
        assert!(matches!(encode_pfm(&map), Err(Error::NonFinite(0))));
    }

    proptest! {
        #[test]
        fn pnm_bytes_round_trip(h in 1usize..6, w in 1usize..6, color in any::<bool>(), seed in any::<u64>()) {
            let c = if color { 3 } else { 1 };
            let mut r = crate::rng::Rng::new(seed);
            let magic = if color { "P6" } else { "P5" };
            let mut bytes = format!("{magic}\n{w} {h}\n255\n").into_bytes();
            bytes.extend((0..h * w * c).map(|_| r.below(256) as u8));
            let img = decode_pnm(&bytes).unwrap();
            prop_assert_eq!(encode_pnm(&img), bytes);
        }

        #[test]
        fn pfm_round_trip_is_bitwise(h in 1usize..6, w in 1usize..6, seed in any::<u64>()) {
            let mut r = crate::rng::Rng::new(seed);
            let data: Vec<f64> = (0..h * w).map(|_| f64::from((r.unit() * 50.0) as f32)).collect();
            let map = DisparityMap::new(h, w, data).unwrap();
            let bytes = encode_pfm(&map).unwrap();
            let back = decode_pfm(&bytes).unwrap();
            let a: Vec<u64> = map.data().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = back.data().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
            prop_assert_eq!(encode_pfm(&back).unwrap(), bytes);
        }
    }
}
