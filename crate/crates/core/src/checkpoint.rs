//! Binary model checkpoints.
//!
//! Layout (all integers `u32`, all floats `f64`, little endian):
//!
//! ```text
//! "UCCM" version
//! 3 × net: layer_count, then per layer: in out activation(u8) weights[in·out] bias[out]
//!          (nets in order feature, distribution regression, decoder)
//! kde: bins bandwidth range_lo range_hi
//! alpha
//! ucc_lo ucc_hi pooling(u8)
//! ```

use std::path::Path;

use crate::error::{Result, UccError};
use crate::io::write_atomic;
use crate::kde::KdeConfig;
use crate::model::{Pooling, UccModel};
use crate::ndcore::{Activation, Layer, Matrix, MlpParams};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"UCCM";
pub const VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_net<T: Scalar>(out: &mut Vec<u8>, net: &MlpParams<T>) {
    put_u32(out, net.layers().len());
    for l in net.layers() {
        put_u32(out, l.in_dim());
        put_u32(out, l.out_dim());
        out.push(l.activation.tag());
        for &w in l.weight.as_slice() {
            put_f64(out, w.as_f64());
        }
        for &b in &l.bias {
            put_f64(out, b.as_f64());
        }
    }
}

pub fn encode<T: Scalar>(model: &UccModel<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION as usize);
    put_net(&mut out, model.feature_net());
    put_net(&mut out, model.drn_net());
    put_net(&mut out, model.decoder_net());
    let kde = model.kde();
    let (lo, hi) = kde.range();
    put_u32(&mut out, kde.num_bins());
    put_f64(&mut out, kde.bandwidth().as_f64());
    put_f64(&mut out, lo.as_f64());
    put_f64(&mut out, hi.as_f64());
    put_f64(&mut out, model.alpha().as_f64());
    let (ulo, uhi) = model.ucc_range();
    put_u32(&mut out, ulo);
    put_u32(&mut out, uhi);
    out.push(model.pooling().tag());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn err<V>(&self, msg: impl Into<String>) -> Result<V> {
        Err(UccError::Format { offset: self.at, msg: msg.into() })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.at < n {
            return self.err(format!("truncated: need {n} more bytes"));
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        let b = self.take(8)?;
        Ok(f64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn floats<T: Scalar>(&mut self, n: usize) -> Result<Vec<T>> {
        if (self.bytes.len() - self.at) / 8 < n {
            return self.err(format!("truncated: need {n} floats"));
        }
        (0..n).map(|_| self.f64().map(T::lit)).collect()
    }

    fn net<T: Scalar>(&mut self) -> Result<MlpParams<T>> {
        let count = self.u32()?;
        if count == 0 || count > 1024 {
            return self.err(format!("implausible layer count {count}"));
        }
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            let (i, o) = (self.u32()?, self.u32()?);
            let at = self.at;
            let Some(activation) = Activation::from_tag(self.u8()?) else {
                return Err(UccError::Format { offset: at, msg: "unknown activation tag".into() });
            };
            let weight = Matrix::from_vec(i, o, self.floats(i.saturating_mul(o))?)?;
            let bias = self.floats(o)?;
            layers.push(Layer { weight, bias, activation });
        }
        let at = self.at;
        MlpParams::new(layers).map_err(|e| UccError::Format { offset: at, msg: e.to_string() })
    }
}

pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<UccModel<T>> {
    let mut r = Reader { bytes, at: 0 };
    if r.take(4)? != MAGIC {
        return Err(UccError::Format { offset: 0, msg: "bad magic, expected UCCM".into() });
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(UccError::Format { offset: 4, msg: format!("unsupported version {version}") });
    }
    let feature = r.net()?;
    let drn = r.net()?;
    let decoder = r.net()?;
    let kde_at = r.at;
    let bins = r.u32()?;
    let (bw, lo, hi) = (r.f64()?, r.f64()?, r.f64()?);
    let kde = KdeConfig::new(bins, T::lit(bw), T::lit(lo), T::lit(hi))
        .map_err(|e| UccError::Format { offset: kde_at, msg: e.to_string() })?;
    let alpha = T::lit(r.f64()?);
    let (ulo, uhi) = (r.u32()?, r.u32()?);
    let tag_at = r.at;
    let Some(pooling) = Pooling::from_tag(r.u8()?) else {
        return Err(UccError::Format { offset: tag_at, msg: "unknown pooling tag".into() });
    };
    if r.at != bytes.len() {
        return r.err("trailing bytes after checkpoint");
    }
    UccModel::new(feature, drn, decoder, kde, alpha, ulo, uhi, pooling)
        .map_err(|e| UccError::Format { offset: kde_at, msg: e.to_string() })
}

pub fn save<T: Scalar>(model: &UccModel<T>, path: &Path) -> Result<()> {
    write_atomic(path, &encode(model))
}

pub fn load<T: Scalar>(path: &Path) -> Result<UccModel<T>> {
    decode(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model() -> UccModel<f64> {
        let mut spec = ModelSpec::new(4);
        spec.num_features = 3;
        spec.ucc_lo = 2;
        spec.alpha = 0.25;
        UccModel::init(&spec, &mut ChaCha8Rng::seed_from_u64(9)).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = model();
        let bytes = encode(&m);
        assert_eq!(&bytes[..4], b"UCCM");
        let back: UccModel<f64> = decode(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(encode(&back), bytes);
    }

    #[test]
    fn single_precision_round_trip() {
        let m: UccModel<f32> = model().cast();
        let back: UccModel<f32> = decode(&encode(&m)).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn corrupt_inputs_report_offsets() {
        let bytes = encode(&model());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode::<f64>(&bad), Err(UccError::Format { offset: 0, .. })));
        let truncated = &bytes[..bytes.len() - 3];
        assert!(matches!(decode::<f64>(truncated), Err(UccError::Format { .. })));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode::<f64>(&extra).is_err());
        let mut version = bytes;
        version[4] = 9;
        assert!(matches!(decode::<f64>(&version), Err(UccError::Format { offset: 4, .. })));
    }
}
