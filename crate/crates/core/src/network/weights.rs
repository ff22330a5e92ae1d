//! Binary weights file.
//!
//! Little-endian layout, no padding between records:
//!
//! ```text
//! magic "CNWB" | version u32 = 1 | config fingerprint [u8; 32] | tensor count u32
//! per tensor: rank u32 | dims u32 × rank | f32 × product(dims)
//! ```
//!
//! Tensors appear in layer order, weights before bias.

use std::io::{Read, Write};

use thiserror::Error;

use super::{Network, NetworkConfig};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const WEIGHTS_MAGIC: [u8; 4] = *b"CNWB";
pub const WEIGHTS_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum WeightsError {
    #[error("bad magic {0:?}, expected \"CNWB\"")]
    BadMagic([u8; 4]),
    #[error("unsupported weights format version {0}")]
    VersionMismatch(u32),
    #[error("weights were saved for a different network config")]
    FingerprintMismatch,
    #[error("tensor layout mismatch: {0}")]
    ShapeMismatch(String),
    #[error("truncated weights payload")]
    Truncated,
    #[error("trailing bytes after last tensor")]
    TrailingData,
    #[error("io: {0}")]
    Io(#[source] std::io::Error),
}

pub fn save_weights<T: Scalar, W: Write>(net: &Network<T>, sink: &mut W) -> std::io::Result<()> {
    let tensors: Vec<&Tensor<T>> = net.params().iter().flat_map(|p| p.tensors()).collect();
    let mut buf = Vec::new();
    buf.extend_from_slice(&WEIGHTS_MAGIC);
    buf.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
    buf.extend_from_slice(&net.config().fingerprint());
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    sink.write_all(&buf)?;
    for t in tensors {
        buf.clear();
        buf.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        buf.reserve(t.len() * 4);
        for v in t.data() {
            buf.extend_from_slice(&v.to_f32().to_le_bytes());
        }
        sink.write_all(&buf)?;
    }
    sink.flush()
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn exact(&mut self, buf: &mut [u8]) -> Result<(), WeightsError> {
        self.inner.read_exact(buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => WeightsError::Truncated,
            _ => WeightsError::Io(e),
        })
    }

    fn u32(&mut self) -> Result<u32, WeightsError> {
        let mut b = [0u8; 4];
        self.exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }
}

/// Loads weights for `config`; the file must carry the config's fingerprint
/// and exactly its tensor layout.
pub fn load_weights<T: Scalar, R: Read>(config: &NetworkConfig, source: R) -> Result<Network<T>, crate::Error> {
    let mut r = Reader { inner: source };
    let mut magic = [0u8; 4];
    r.exact(&mut magic)?;
    if magic != WEIGHTS_MAGIC {
        return Err(WeightsError::BadMagic(magic).into());
    }
    let version = r.u32()?;
    if version != WEIGHTS_VERSION {
        return Err(WeightsError::VersionMismatch(version).into());
    }
    let mut fingerprint = [0u8; 32];
    r.exact(&mut fingerprint)?;
    if fingerprint != config.fingerprint() {
        return Err(WeightsError::FingerprintMismatch.into());
    }

    let mut net = Network::<T>::zeroed(config)?;
    let expected: usize = net.params().iter().map(|p| p.tensors().len()).sum();
    let count = r.u32()? as usize;
    if count != expected {
        return Err(WeightsError::ShapeMismatch(format!("file has {count} tensors, config needs {expected}")).into());
    }
    let mut raw = Vec::new();
    for (i, t) in net.params_mut().iter_mut().flat_map(|p| p.tensors_mut()).enumerate() {
        let rank = r.u32()? as usize;
        if rank != t.rank() {
            return Err(WeightsError::ShapeMismatch(format!(
                "tensor {i}: rank {rank}, expected {}",
                t.rank()
            ))
            .into());
        }
        let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        if dims != t.shape() {
            return Err(WeightsError::ShapeMismatch(format!(
                "tensor {i}: dims {dims:?}, expected {:?}",
                t.shape()
            ))
            .into());
        }
        raw.resize(t.len() * 4, 0);
        r.exact(&mut raw)?;
        for (dst, chunk) in t.data_mut().iter_mut().zip(raw.chunks_exact(4)) {
            let v = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
            if !v.is_finite() {
                return Err(crate::Error::NonFinite(format!("tensor {i} holds {v}")));
            }
            *dst = T::from_f32(v);
        }
    }
    let mut tail = [0u8; 1];
    match r.inner.read(&mut tail) {
        Ok(0) => Ok(net),
        Ok(_) => Err(WeightsError::TrailingData.into()),
        Err(e) => Err(WeightsError::Io(e).into()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::build_network;
    use crate::Error;

    fn sample() -> (NetworkConfig, Vec<u8>) {
        let c = NetworkConfig::named("toy-classifier").unwrap();
        let net: Network<f32> = build_network(&c, 3).unwrap();
        let mut bytes = Vec::new();
        save_weights(&net, &mut bytes).unwrap();
        (c, bytes)
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let (c, bytes) = sample();
        let net: Network<f32> = load_weights(&c, bytes.as_slice()).unwrap();
        let mut again = Vec::new();
        save_weights(&net, &mut again).unwrap();
        assert_eq!(bytes, again);
        assert_eq!(&bytes[..4], b"CNWB");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
    }

    #[test]
    fn header_size_matches_layout() {
        let (c, bytes) = sample();
        let net: Network<f32> = build_network(&c, 3).unwrap();
        let tensors: Vec<_> = net.params().iter().flat_map(|p| p.tensors()).collect();
        let body: usize = tensors.iter().map(|t| 4 + 4 * t.rank() + 4 * t.len()).sum();
        assert_eq!(bytes.len(), 4 + 4 + 32 + 4 + body);
    }

    #[test]
    fn load_errors() {
        let (c, bytes) = sample();
        let mut bad = bytes.clone();
        bad[..4].copy_from_slice(b"XXXX");
        assert!(matches!(
            load_weights::<f32, _>(&c, bad.as_slice()),
            Err(Error::Weights(WeightsError::BadMagic(_)))
        ));

        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(
            load_weights::<f32, _>(&c, bad.as_slice()),
            Err(Error::Weights(WeightsError::VersionMismatch(2)))
        ));

        let other = NetworkConfig::named("toy-detector").unwrap();
        assert!(matches!(
            load_weights::<f32, _>(&other, bytes.as_slice()),
            Err(Error::Weights(WeightsError::FingerprintMismatch))
        ));

        let cut = &bytes[..bytes.len() - 7];
        assert!(matches!(
            load_weights::<f32, _>(&c, cut),
            Err(Error::Weights(WeightsError::Truncated))
        ));

        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(
            load_weights::<f32, _>(&c, long.as_slice()),
            Err(Error::Weights(WeightsError::TrailingData))
        ));

        // rank field of the first tensor
        let mut bad = bytes;
        bad[44] = 3;
        assert!(matches!(
            load_weights::<f32, _>(&c, bad.as_slice()),
            Err(Error::Weights(WeightsError::ShapeMismatch(_)))
        ));
    }

    #[test]
    fn loads_into_double_precision() {
        let (c, bytes) = sample();
        let a: Network<f32> = load_weights(&c, bytes.as_slice()).unwrap();
        let b: Network<f64> = load_weights(&c, bytes.as_slice()).unwrap();
        let fa: Vec<f32> = a.params().iter().flat_map(|p| p.tensors()).flat_map(|t| t.data().to_vec()).collect();
        let fb: Vec<f32> = b.params().iter().flat_map(|p| p.tensors()).flat_map(|t| t.data().iter().map(|&v| v as f32).collect::<Vec<_>>()).collect();
        assert_eq!(fa, fb);
    }
}
