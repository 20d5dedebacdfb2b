//! Binary weight files.
//!
//! Layout (little-endian): magic `SPCW`, `u32` version (1), `u32` layer count,
//! then `(u32 rows, u32 cols)` per layer. The payload follows, layer by layer:
//! the row-major `f64` weight matrix, then that layer's `rows` biases.
//!
//! Activations are not part of the file; the caller supplies the [`MlpSpec`].

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::mlp::{Layer, Mlp, MlpSpec};

pub const MAGIC: &[u8; 4] = b"SPCW";
pub const VERSION: u32 = 1;

pub fn encode_weights(mlp: &Mlp) -> Vec<u8> {
    let mut buf = Vec::with_capacity(12 + 8 * mlp.layers.len() + 8 * mlp.num_params());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(mlp.layers.len() as u32).to_le_bytes());
    for l in &mlp.layers {
        buf.extend_from_slice(&(l.out_dim() as u32).to_le_bytes());
        buf.extend_from_slice(&(l.in_dim() as u32).to_le_bytes());
    }
    for l in &mlp.layers {
        for v in l.weights.as_slice().iter().chain(&l.biases) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Format(format!("truncated weight file while reading {what} at byte {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("payload size overflow".into()))?, what)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
}

/// Decode raw layers; the spec is checked afterwards by [`decode_weights`].
pub fn decode_layers(bytes: &[u8]) -> Result<Vec<Layer>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Format("bad magic, not an SPCW weight file".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported weight file version {version}")));
    }
    let count = r.u32("layer count")? as usize;
    if count == 0 {
        return Err(Error::Format("weight file declares zero layers".into()));
    }
    let mut dims = Vec::with_capacity(count.min(1024));
    for l in 0..count {
        let rows = r.u32("layer rows")? as usize;
        let cols = r.u32("layer cols")? as usize;
        if rows == 0 || cols == 0 {
            return Err(Error::Format(format!("layer {l} has a zero dimension")));
        }
        if l > 0 && dims.last().map(|&(pr, _)| pr) != Some(cols) {
            return Err(Error::Format(format!("layer {l} input width {cols} does not chain with previous layer")));
        }
        dims.push((rows, cols));
    }
    let mut layers = Vec::with_capacity(count);
    for (l, &(rows, cols)) in dims.iter().enumerate() {
        let w = r.f64s(rows * cols, &format!("layer {l} weights"))?;
        let b = r.f64s(rows, &format!("layer {l} biases"))?;
        layers.push(Layer {
            weights: Matrix::from_vec(rows, cols, w)?,
            biases: b,
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after payload; header dims do not match payload",
            bytes.len() - r.pos
        )));
    }
    Ok(layers)
}

pub fn decode_weights(bytes: &[u8], spec: MlpSpec) -> Result<Mlp> {
    let layers = decode_layers(bytes)?;
    Mlp::from_layers(spec, layers).map_err(|e| Error::Format(format!("weights do not match network spec: {e}")))
}

pub fn save_weights(mlp: &Mlp, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_weights(mlp))?;
    Ok(())
}

pub fn load_weights(path: impl AsRef<Path>, spec: MlpSpec) -> Result<Mlp> {
    let bytes = fs::read(path)?;
    decode_weights(&bytes, spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::mlp::{Activation, OutputActivation};

    fn net() -> Mlp {
        Mlp::new(MlpSpec::new(vec![3, 4, 2], Activation::Tanh, OutputActivation::Softplus, 5)).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mlp = net();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.spcw");
        save_weights(&mlp, &path).unwrap();
        let back = load_weights(&path, mlp.spec.clone()).unwrap();
        assert_eq!(back, mlp);
        let bits = |m: &Mlp| -> Vec<u64> {
            m.layers.iter().flat_map(|l| l.weights.as_slice().iter().chain(&l.biases).map(|v| v.to_bits())).collect()
        };
        assert_eq!(bits(&back), bits(&mlp));
    }

    #[test]
    fn header_layout() {
        let bytes = encode_weights(&net());
        assert_eq!(&bytes[..4], b"SPCW");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        // (4 x 3), (2 x 4)
        let dims: Vec<u32> = bytes[12..28].chunks(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect();
        assert_eq!(dims, vec![4, 3, 2, 4]);
        assert_eq!(bytes.len(), 28 + 8 * (12 + 4 + 8 + 2));
    }

    #[test]
    fn truncated_file_is_format_error() {
        let bytes = encode_weights(&net());
        for cut in [0, 3, 10, 20, bytes.len() - 1] {
            assert!(matches!(decode_layers(&bytes[..cut]), Err(Error::Format(_))), "cut at {cut}");
        }
    }

    #[test]
    fn header_payload_mismatch_is_format_error() {
        let mut bytes = encode_weights(&net());
        // claim the first layer has 5 rows: chain check or payload length must fail
        bytes[12..16].copy_from_slice(&5u32.to_le_bytes());
        assert!(matches!(decode_layers(&bytes), Err(Error::Format(_))));

        let mut extra = encode_weights(&net());
        extra.extend_from_slice(&[0u8; 8]);
        assert!(matches!(decode_layers(&extra), Err(Error::Format(_))));
    }

    #[test]
    fn spec_mismatch_is_format_error() {
        let bytes = encode_weights(&net());
        let wrong = MlpSpec::new(vec![3, 5, 2], Activation::Tanh, OutputActivation::Softplus, 5);
        assert!(matches!(decode_weights(&bytes, wrong), Err(Error::Format(_))));
    }
}
