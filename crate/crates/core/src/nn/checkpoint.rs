//! Versioned binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   8 bytes  "LIDSEGCK"
//! version u32      currently 1
//! hlen    u64      byte length of the JSON header
//! header  hlen     {"input_shape": [..], "layers": [LayerKind..], "extra": any}
//! params  f64 LE   for every conv/linear layer in order: weight then bias
//! ```
//!
//! Floats are stored bit-exactly, so save → load reproduces every value.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::layer::{param_shapes, LayerKind, LayerNode};
use super::network::Network;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"LIDSEGCK";

#[derive(Serialize, Deserialize)]
struct Header {
    input_shape: Vec<usize>,
    layers: Vec<LayerKind>,
    #[serde(default)]
    extra: serde_json::Value,
}

pub fn write_checkpoint(
    out: &mut impl Write,
    network: &Network,
    extra: &serde_json::Value,
) -> Result<()> {
    let header = serde_json::to_vec(&Header {
        input_shape: network.input_shape().to_vec(),
        layers: network.layers().iter().map(|l| l.kind).collect(),
        extra: extra.clone(),
    })?;
    let io = |e| Error::Checkpoint(format!("write failed: {e}"));
    out.write_all(MAGIC).map_err(io)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes()).map_err(io)?;
    out.write_all(&(header.len() as u64).to_le_bytes()).map_err(io)?;
    out.write_all(&header).map_err(io)?;
    for v in network.flat_params() {
        out.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    Ok(())
}

/// Reads a network and the free-form `extra` header value.
pub fn read_checkpoint(input: &mut impl Read) -> Result<(Network, serde_json::Value)> {
    let io = |e: std::io::Error| Error::Checkpoint(format!("truncated or unreadable: {e}"));
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let mut word = [0u8; 4];
    input.read_exact(&mut word).map_err(io)?;
    let version = u32::from_le_bytes(word);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let mut len = [0u8; 8];
    input.read_exact(&mut len).map_err(io)?;
    let len = u64::from_le_bytes(len) as usize;
    let mut header = vec![0u8; len];
    input.read_exact(&mut header).map_err(io)?;
    let header: Header = serde_json::from_slice(&header)?;

    let mut layers = Vec::with_capacity(header.layers.len());
    for kind in header.layers {
        let mut node = LayerNode::zeroed(kind);
        if let Some((ws, bs)) = param_shapes(&kind) {
            node.weight = Some(read_tensor(input, &ws)?);
            node.bias = Some(read_tensor(input, &bs)?);
        }
        layers.push(node);
    }
    let mut rest = [0u8; 1];
    if input.read(&mut rest).map_err(io)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after parameters".into()));
    }
    let network = Network::new(layers, header.input_shape)
        .map_err(|e| Error::Checkpoint(format!("inconsistent layer list: {e}")))?;
    Ok((network, header.extra))
}

fn read_tensor(input: &mut impl Read, shape: &[usize]) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    let mut bytes = vec![0u8; n * 8];
    input
        .read_exact(&mut bytes)
        .map_err(|e| Error::Checkpoint(format!("truncated parameters: {e}")))?;
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Tensor::new(shape.to_vec(), data)
}

pub fn save_checkpoint(path: &Path, network: &Network, extra: &serde_json::Value) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_checkpoint(&mut out, network, extra)?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(Network, serde_json::Value)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&mut BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net() -> Network {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let kinds = [
            LayerKind::Conv2d {
                in_channels: 1,
                out_channels: 3,
                kernel: 3,
                stride: 1,
                padding: 1,
            },
            LayerKind::Relu,
            LayerKind::MaxPool2d { kernel: 2, stride: 2 },
            LayerKind::Flatten,
            LayerKind::Linear {
                in_features: 12,
                out_features: 2,
            },
        ];
        Network::new(
            kinds.into_iter().map(|k| LayerNode::he_init(k, &mut rng)).collect(),
            vec![1, 4, 4],
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let original = net();
        let extra = serde_json::json!({"note": "x"});
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &original, &extra).unwrap();
        let (loaded, extra_back) = read_checkpoint(&mut buf.as_slice()).unwrap();
        assert_eq!(extra_back, extra);
        assert_eq!(loaded.layers(), original.layers());
        let a: Vec<u64> = original.flat_params().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = loaded.flat_params().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_magic_version_and_truncation() {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &net(), &serde_json::Value::Null).unwrap();

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_checkpoint(&mut bad.as_slice()), Err(Error::Checkpoint(_))));

        let mut bad = buf.clone();
        bad[8] = 9;
        assert!(matches!(read_checkpoint(&mut bad.as_slice()), Err(Error::Checkpoint(_))));

        let short = &buf[..buf.len() - 3];
        assert!(matches!(read_checkpoint(&mut &short[..]), Err(Error::Checkpoint(_))));

        let mut long = buf.clone();
        long.push(0);
        assert!(matches!(read_checkpoint(&mut long.as_slice()), Err(Error::Checkpoint(_))));
    }
}
