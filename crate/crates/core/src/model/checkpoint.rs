//! Binary checkpoint format.
//!
//! ```text
//! magic      4 bytes  "VGR1"
//! version    u32 LE
//! config     7 x u32 LE  vocab_size, context_length, hidden_dim, num_layers,
//!                        num_heads, mlp_dim, architecture (0 = decoder)
//! layout     u64 LE byte length, then UTF-8 lines "name offset d0xd1...\n"
//! count      u64 LE number of values
//! values     count x f64 LE, in flattening order
//! ```

use std::path::Path;

use super::{Architecture, ModelConfig, ParamVector, TensorSpec};
use crate::error::{Result, VigorError};
use crate::io::write_atomic;
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"VGR1";
pub const CHECKPOINT_VERSION: u32 = 1;

fn layout_text(layout: &[TensorSpec]) -> String {
    let mut s = String::new();
    for spec in layout {
        let dims: Vec<String> = spec.shape.iter().map(|d| d.to_string()).collect();
        s.push_str(&format!(
            "{} {} {}\n",
            spec.name,
            spec.offset,
            dims.join("x")
        ));
    }
    s
}

pub fn encode_checkpoint<T: Scalar>(params: &ParamVector<T>) -> Vec<u8> {
    let c = &params.config;
    let mut out = Vec::with_capacity(64 + params.len() * 8);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let arch = match c.architecture {
        Architecture::Decoder => 0u32,
    };
    for field in [
        c.vocab_size as u32,
        c.context_length as u32,
        c.hidden_dim as u32,
        c.num_layers as u32,
        c.num_heads as u32,
        c.mlp_dim as u32,
        arch,
    ] {
        out.extend_from_slice(&field.to_le_bytes());
    }
    let text = layout_text(&params.layout);
    out.extend_from_slice(&(text.len() as u64).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for v in &params.values {
        out.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.at + n > self.bytes.len() {
            return Err(VigorError::Format("truncated checkpoint".into()));
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<ParamVector<T>> {
    let mut r = Reader { bytes, at: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(VigorError::Format("bad checkpoint magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(VigorError::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let mut f = [0usize; 7];
    for x in &mut f {
        *x = r.u32()? as usize;
    }
    let architecture = match f[6] {
        0 => Architecture::Decoder,
        other => {
            return Err(VigorError::Format(format!(
                "unknown architecture tag {other}"
            )));
        }
    };
    let config = ModelConfig {
        vocab_size: f[0],
        context_length: f[1],
        hidden_dim: f[2],
        num_layers: f[3],
        num_heads: f[4],
        mlp_dim: f[5],
        architecture,
    };
    let text_len = r.u64()? as usize;
    let text = std::str::from_utf8(r.take(text_len)?)
        .map_err(|e| VigorError::Format(format!("layout block is not UTF-8: {e}")))?;
    let expected = ParamVector::<T>::zeros(&config)?;
    if text != layout_text(&expected.layout) {
        return Err(VigorError::Format(
            "layout block does not match the model configuration".into(),
        ));
    }
    let count = r.u64()? as usize;
    if count != expected.len() {
        return Err(VigorError::Format(format!(
            "checkpoint holds {count} values, configuration needs {}",
            expected.len()
        )));
    }
    let mut values = Vec::with_capacity(count);
    for _ in 0..count {
        let x = f64::from_le_bytes(r.take(8)?.try_into().unwrap());
        values.push(T::of(x));
    }
    if r.at != bytes.len() {
        return Err(VigorError::Format("trailing bytes after checkpoint".into()));
    }
    ParamVector::from_values(&config, values)
}

pub fn write_checkpoint<T: Scalar>(path: &Path, params: &ParamVector<T>) -> Result<()> {
    write_atomic(path, &encode_checkpoint(params))
}

pub fn read_checkpoint<T: Scalar>(path: &Path) -> Result<ParamVector<T>> {
    decode_checkpoint(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;

    fn cfg() -> ModelConfig {
        ModelConfig {
            vocab_size: 5,
            context_length: 6,
            hidden_dim: 4,
            num_layers: 1,
            num_heads: 2,
            mlp_dim: 8,
            ..Default::default()
        }
    }

    #[test]
    fn header_layout() {
        let p = init_params::<f64>(&cfg(), 1).unwrap();
        let bytes = encode_checkpoint(&p);
        assert_eq!(&bytes[..4], b"VGR1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 5);
        let tail = &bytes[bytes.len() - 8..];
        assert_eq!(
            f64::from_le_bytes(tail.try_into().unwrap()),
            *p.values.last().unwrap()
        );
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let p = init_params::<f64>(&cfg(), 9).unwrap();
        let q: ParamVector<f64> = decode_checkpoint(&encode_checkpoint(&p)).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn rejects_corruption() {
        let p = init_params::<f64>(&cfg(), 9).unwrap();
        let mut bytes = encode_checkpoint(&p);
        assert!(decode_checkpoint::<f64>(&bytes[..bytes.len() - 3]).is_err());
        bytes[0] = b'X';
        assert!(matches!(
            decode_checkpoint::<f64>(&bytes),
            Err(VigorError::Format(_))
        ));
    }
}
