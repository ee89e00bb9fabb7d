//! Binary model file.
//!
//! ```text
//! "DTBS" | u32 version | u32 len, name bytes | u32 num_classes | u32 layer count
//! per layer: u8 tag, then u32 size fields (conv, dense: 2; softmax: 1; others: 0)
//! per parametric layer: weights then biases, f32
//! u32 CRC-32 of every preceding byte
//! ```
//! All integers and floats are little-endian.

use super::model::{LayerParams, LayerSpec, ModelConfig, ModelParams};
use super::NnError;
use crate::numerics::Tensor;
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"DTBS";
pub const FORMAT_VERSION: u32 = 1;

const TAG_CONV: u8 = 0;
const TAG_POOL: u8 = 1;
const TAG_FLATTEN: u8 = 2;
const TAG_DENSE: u8 = 3;
const TAG_RELU: u8 = 4;
const TAG_SOFTMAX: u8 = 5;

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn encode_model(config: &ModelConfig, params: &ModelParams) -> Result<Vec<u8>, NnError> {
    params.check_against(config)?;
    let mut out = Vec::with_capacity(64 + 4 * config.num_parameters());
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, FORMAT_VERSION as usize);
    put_u32(&mut out, config.name.len());
    out.extend_from_slice(config.name.as_bytes());
    put_u32(&mut out, config.num_classes);
    put_u32(&mut out, config.layers.len());
    for layer in &config.layers {
        match *layer {
            LayerSpec::Conv3x3 { in_channels, out_channels } => {
                out.push(TAG_CONV);
                put_u32(&mut out, in_channels);
                put_u32(&mut out, out_channels);
            }
            LayerSpec::MaxPool2x2 => out.push(TAG_POOL),
            LayerSpec::Flatten => out.push(TAG_FLATTEN),
            LayerSpec::Dense { in_features, out_features } => {
                out.push(TAG_DENSE);
                put_u32(&mut out, in_features);
                put_u32(&mut out, out_features);
            }
            LayerSpec::Relu => out.push(TAG_RELU),
            LayerSpec::SoftmaxOutput { classes } => {
                out.push(TAG_SOFTMAX);
                put_u32(&mut out, classes);
            }
        }
    }
    for t in params.tensors() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| NnError::MalformedFile(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, NnError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize, NnError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<(ModelConfig, ModelParams), NnError> {
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(NnError::MalformedFile("missing DTBS magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(NnError::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(crc_bytes.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(NnError::ChecksumMismatch { stored, computed });
    }

    let mut r = Reader { bytes: body, pos: 8 };
    let name_len = r.u32()?;
    let name = std::str::from_utf8(r.take(name_len)?)
        .map_err(|_| NnError::MalformedFile("model name is not UTF-8".into()))?
        .to_string();
    let num_classes = r.u32()?;
    let layer_count = r.u32()?;
    let mut layers = Vec::with_capacity(layer_count.min(1024));
    for _ in 0..layer_count {
        let layer = match r.u8()? {
            TAG_CONV => LayerSpec::Conv3x3 {
                in_channels: r.u32()?,
                out_channels: r.u32()?,
            },
            TAG_POOL => LayerSpec::MaxPool2x2,
            TAG_FLATTEN => LayerSpec::Flatten,
            TAG_DENSE => LayerSpec::Dense {
                in_features: r.u32()?,
                out_features: r.u32()?,
            },
            TAG_RELU => LayerSpec::Relu,
            TAG_SOFTMAX => LayerSpec::SoftmaxOutput { classes: r.u32()? },
            tag => return Err(NnError::MalformedFile(format!("unknown layer tag {tag}"))),
        };
        layers.push(layer);
    }
    let config = ModelConfig {
        name,
        layers,
        num_classes,
    };
    config
        .validate()
        .map_err(|e| NnError::MalformedFile(format!("stored architecture is invalid: {e}")))?;

    let mut read_tensor = |shape: Vec<usize>| -> Result<Tensor, NnError> {
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(4).ok_or_else(|| NnError::MalformedFile("tensor too large".into()))?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Ok(Tensor::from_vec(&shape, data).expect("sized above"))
    };
    let mut params = Vec::new();
    for (w, b) in config.parametric_layers().filter_map(|l| l.param_shapes()) {
        let weights = read_tensor(w)?;
        let bias = read_tensor(b)?;
        params.push(LayerParams { weights, bias });
    }
    if r.pos != body.len() {
        return Err(NnError::MalformedFile(format!(
            "{} trailing bytes after parameters",
            body.len() - r.pos
        )));
    }
    Ok((config, ModelParams { layers: params }))
}

pub fn save_model(config: &ModelConfig, params: &ModelParams, path: &Path) -> Result<(), NnError> {
    let bytes = encode_model(config, params)?;
    std::fs::write(path, bytes).map_err(|source| NnError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_model(path: &Path) -> Result<(ModelConfig, ModelParams), NnError> {
    let bytes = std::fs::read(path).map_err(|source| NnError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_model(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::model::{build_preset, he_init, predict};
    use crate::numerics::Prng;

    fn fixture() -> (ModelConfig, ModelParams) {
        let c = build_preset("vgg_small", 33).unwrap();
        let p = he_init(&c, 12);
        (c, p)
    }

    #[test]
    fn round_trip_gives_identical_logits() {
        let (c, p) = fixture();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.dtbs");
        save_model(&c, &p, &path).unwrap();
        let (c2, p2) = load_model(&path).unwrap();
        assert_eq!(c2, c);
        assert_eq!(p2, p);
        let mut rng = Prng::new(1);
        let x = Tensor::from_vec(&[3, 1, 50, 50], (0..7500).map(|_| rng.next_f64() as f32).collect()).unwrap();
        let a = predict(&c, &p, &x).unwrap();
        let b = predict(&c2, &p2, &x).unwrap();
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn header_layout() {
        let (c, p) = fixture();
        let bytes = encode_model(&c, &p).unwrap();
        assert_eq!(&bytes[..4], b"DTBS");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 9);
        assert_eq!(&bytes[12..21], b"vgg_small");
        assert_eq!(u32::from_le_bytes(bytes[21..25].try_into().unwrap()), 33);
        let n = bytes.len();
        assert_eq!(
            u32::from_le_bytes(bytes[n - 4..].try_into().unwrap()),
            crc32fast::hash(&bytes[..n - 4])
        );
    }

    #[test]
    fn corrupted_payload_is_detected() {
        let (c, p) = fixture();
        let mut bytes = encode_model(&c, &p).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        assert!(matches!(decode_model(&bytes), Err(NnError::ChecksumMismatch { .. })));
    }

    #[test]
    fn version_99_is_rejected() {
        let (c, p) = fixture();
        let mut bytes = encode_model(&c, &p).unwrap();
        bytes[4..8].copy_from_slice(&99u32.to_le_bytes());
        assert!(matches!(
            decode_model(&bytes),
            Err(NnError::VersionMismatch { found: 99, .. })
        ));
    }

    #[test]
    fn malformed_inputs() {
        assert!(matches!(decode_model(b"nope"), Err(NnError::MalformedFile(_))));
        assert!(matches!(decode_model(b"XXXX\x01\0\0\0\0\0\0\0"), Err(NnError::MalformedFile(_))));
        // valid checksum over a truncated body
        let mut body = b"DTBS".to_vec();
        body.extend(1u32.to_le_bytes());
        body.extend(50u32.to_le_bytes());
        let crc = crc32fast::hash(&body);
        body.extend(crc.to_le_bytes());
        assert!(matches!(decode_model(&body), Err(NnError::MalformedFile(_))));
    }
}
