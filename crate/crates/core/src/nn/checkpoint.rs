//! Binary parameter container.
//!
//! Layout: the 8-byte magic `EPNCKPT1`, a little-endian `u32` format version,
//! a little-endian `u32` header length, a UTF-8 JSON header, then every array
//! as raw little-endian `f64`. The header lists array shapes in order, so the
//! payload needs no framing of its own.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::nn::network::{Layer, Network, NetworkLayout};
use crate::nn::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"EPNCKPT1";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// Free-form metadata (model kind, loss weights, layouts).
    pub meta: Value,
    pub arrays: Vec<Tensor>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    meta: Value,
    shapes: Vec<Vec<usize>>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            meta: self.meta.clone(),
            shapes: self.arrays.iter().map(|a| a.shape().to_vec()).collect(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let payload: usize = self.arrays.iter().map(|a| a.len() * 8).sum();
        let mut out = Vec::with_capacity(16 + json.len() + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let len = u32::try_from(json.len()).map_err(|_| Error::Checkpoint("header too large".into()))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(&json);
        for a in &self.arrays {
            for v in a.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("missing checkpoint magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let hlen = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
        let body = &bytes[16..];
        if body.len() < hlen {
            return Err(bad("truncated header"));
        }
        let header: Header =
            serde_json::from_slice(&body[..hlen]).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut rest = &body[hlen..];
        let mut arrays = Vec::with_capacity(header.shapes.len());
        for shape in header.shapes {
            let n: usize = shape.iter().product();
            if rest.len() < n * 8 {
                return Err(bad("truncated array payload"));
            }
            let data: Vec<f64> = rest[..n * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            rest = &rest[n * 8..];
            arrays.push(Tensor::new(shape, data).map_err(|e| Error::Checkpoint(e.to_string()))?);
        }
        if !rest.is_empty() {
            return Err(bad("trailing bytes after payload"));
        }
        Ok(Self { meta: header.meta, arrays })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }
}

impl Network {
    /// Layout as JSON plus the parameter arrays in [`Network::parameters`] order.
    pub fn to_parts(&self) -> (Value, Vec<Tensor>) {
        let layout = serde_json::to_value(self.layout()).expect("layout serializes");
        (layout, self.parameters().into_iter().cloned().collect())
    }

    pub fn from_parts(layout: &Value, arrays: &[Tensor]) -> Result<Self> {
        let layout: NetworkLayout =
            serde_json::from_value(layout.clone()).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let n = layout.activations.len();
        if layout.widths.len() != n + 1 || arrays.len() != 2 * n {
            return Err(Error::Checkpoint("layout and array count disagree".into()));
        }
        let mut layers = Vec::with_capacity(n);
        for i in 0..n {
            let (w, b) = (&arrays[2 * i], &arrays[2 * i + 1]);
            if w.dims2() != (layout.widths[i], layout.widths[i + 1]) || b.dims2() != (1, layout.widths[i + 1]) {
                return Err(Error::Checkpoint(format!("layer {i} shape disagrees with layout")));
            }
            layers.push(Layer { weight: w.clone(), bias: b.clone(), activation: layout.activations[i] });
        }
        Network::from_layers(layers, layout.final_layer, layout.dropout)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let (layout, arrays) = self.to_parts();
        Checkpoint { meta: serde_json::json!({ "network": layout }), arrays }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let layout = ck.meta.get("network").ok_or_else(|| Error::Checkpoint("no network layout".into()))?;
        Self::from_parts(layout, &ck.arrays)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::network::{Architecture, FinalLayer};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn network_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut arch = Architecture::mlp(2, &[7, 5], 3);
        arch.final_layer = FinalLayer::NegativeExp;
        arch.dropout = 0.25;
        let net = Network::new(&arch, &mut rng).unwrap();
        let bytes = net.to_checkpoint().to_bytes().unwrap();
        let back = Network::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back, net);
        assert_eq!(back.to_checkpoint().to_bytes().unwrap(), bytes);
    }

    #[test]
    fn corrupt_input_rejected() {
        assert!(Checkpoint::from_bytes(b"nope").is_err());
        let ck = Checkpoint { meta: Value::Null, arrays: vec![Tensor::zeros(vec![2, 2])] };
        let mut bytes = ck.to_bytes().unwrap();
        bytes.pop();
        assert!(Checkpoint::from_bytes(&bytes).is_err());
    }
}
