//! `ACDK1` checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "ACDK1"                      magic and format version
//! u32 input_channels
//! u64 init seed
//! u32 layer count
//! per layer: u32 cin, u32 cout, u32 k, u32 stride, u8 frozen
//! per layer: weights then biases as f32
//! ```

use std::fs;
use std::path::Path;

use super::{Block, Layer, ModelState};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"ACDK1";

pub fn encode_checkpoint(m: &ModelState) -> Vec<u8> {
    let mut out = CHECKPOINT_MAGIC.to_vec();
    out.extend((m.input_channels as u32).to_le_bytes());
    out.extend(m.seed.to_le_bytes());
    out.extend((m.layers.len() as u32).to_le_bytes());
    for l in &m.layers {
        for v in [l.shape.cin, l.shape.cout, l.shape.k, l.shape.stride] {
            out.extend((v as u32).to_le_bytes());
        }
        out.push(u8::from(l.frozen));
    }
    for l in &m.layers {
        for p in &l.params {
            out.extend(p.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::CorruptCheckpoint(format!("truncated at byte {} (needed {n} more)", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ModelState> {
    if bytes.len() < CHECKPOINT_MAGIC.len() || &bytes[..4] != b"ACDK" {
        return Err(Error::CorruptCheckpoint("missing ACDK magic".into()));
    }
    if &bytes[..5] != CHECKPOINT_MAGIC {
        return Err(Error::VersionMismatch {
            found: String::from_utf8_lossy(&bytes[..5]).into_owned(),
            expected: String::from_utf8_lossy(CHECKPOINT_MAGIC).into_owned(),
        });
    }
    let mut r = Reader { bytes, pos: 5 };
    let input_channels = r.u32()? as usize;
    if input_channels != 1 && input_channels != 3 {
        return Err(Error::CorruptCheckpoint(format!("input channels {input_channels}")));
    }
    let seed = r.u64()?;
    let n_layers = r.u32()? as usize;
    if n_layers != Block::ALL.len() {
        return Err(Error::CorruptCheckpoint(format!("expected 7 layers, found {n_layers}")));
    }
    let mut shapes = Vec::with_capacity(n_layers);
    for block in Block::ALL {
        let expect = block.shape(input_channels);
        let got = [r.u32()?, r.u32()?, r.u32()?, r.u32()?].map(|v| v as usize);
        if got != [expect.cin, expect.cout, expect.k, expect.stride] {
            return Err(Error::CorruptCheckpoint(format!("layer {block} has shape {got:?}")));
        }
        let frozen = match r.take(1)?[0] {
            0 => false,
            1 => true,
            other => return Err(Error::CorruptCheckpoint(format!("frozen flag {other}"))),
        };
        shapes.push((block, expect, frozen));
    }
    let mut layers = Vec::with_capacity(n_layers);
    for (block, shape, frozen) in shapes {
        let raw = r.take(shape.param_len() * 4)?;
        let params: Vec<f32> =
            raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::CorruptCheckpoint(format!("non-finite parameter in {block}")));
        }
        layers.push(Layer::new(block, shape, params, frozen));
    }
    if r.pos != bytes.len() {
        return Err(Error::CorruptCheckpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(ModelState::from_parts(input_channels, seed, layers))
}

pub fn save_checkpoint(m: &ModelState, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(m)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelState> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::ImageBuffer;

    #[test]
    fn round_trip_preserves_parameters_and_output() {
        let mut m = ModelState::init(42, 3).unwrap();
        m.set_encoder_frozen(true);
        let bytes = encode_checkpoint(&m);
        let back = decode_checkpoint(&bytes).unwrap();
        let bits = |m: &ModelState| m.params_flat().iter().map(|p| p.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&m));
        assert!(back.is_frozen(Block::Enc1) && !back.is_frozen(Block::Dec1));
        assert_eq!(back.seed(), 42);
        let img = ImageBuffer::from_fn(16, 16, 3, |y, x, c| ((y * 16 + x) * 3 + c) as f64 / 768.0).unwrap();
        assert_eq!(m.predict(&img).unwrap(), back.predict(&img).unwrap());
        assert_eq!(encode_checkpoint(&back), bytes);
    }

    #[test]
    fn truncation_and_versions_are_rejected() {
        let bytes = encode_checkpoint(&ModelState::init(1, 1).unwrap());
        for cut in [3, 5, 20, bytes.len() - 1] {
            assert!(matches!(decode_checkpoint(&bytes[..cut]), Err(Error::CorruptCheckpoint(_))));
        }
        let mut v2 = bytes.clone();
        v2[4] = b'2';
        assert!(matches!(decode_checkpoint(&v2), Err(Error::VersionMismatch { .. })));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(decode_checkpoint(&extra), Err(Error::CorruptCheckpoint(_))));
        let mut bad_shape = bytes;
        bad_shape[5 + 4 + 8 + 4 + 4] = 9; // enc1 cout
        assert!(matches!(decode_checkpoint(&bad_shape), Err(Error::CorruptCheckpoint(_))));
    }
}
