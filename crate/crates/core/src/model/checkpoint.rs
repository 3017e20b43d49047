//! Binary checkpoint: header, embedded model configuration, tensors.
//!
//! ```text
//! magic    8 bytes  "TSCKPT\0\x01"
//! version  u32
//! config   str      (key = value text)
//! count    u32      number of tensors
//! repeated count times:
//!   section u32     0 = trainable, 1 = running statistic
//!   path    str
//!   rank    u32
//!   dims    u64 × rank
//!   data    f64 × Π dims
//! ```
//! All integers and floats are little-endian; `str` is a u32 byte length
//! followed by UTF-8. Floats are stored bit-exact.

use std::io::{Read, Write};

use super::{Model, ModelConfig, ModelParams, TensorMap};
use crate::binio::{read_header, Reader, Writer};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"TSCKPT\0\x01";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(model: &Model, out: W) -> Result<()> {
    let mut w = Writer::new(out);
    w.bytes(&CHECKPOINT_MAGIC)?;
    w.u32(CHECKPOINT_VERSION)?;
    w.str(&model.config.to_kv().render())?;
    let p = &model.params;
    w.u32((p.weights.len() + p.stats.len()) as u32)?;
    for (section, map) in [(0u32, &p.weights), (1, &p.stats)] {
        for (path, t) in map.iter() {
            w.u32(section)?;
            w.str(path)?;
            w.u32(t.rank() as u32)?;
            for &d in t.shape() {
                w.u64(d as u64)?;
            }
            w.f64s(t.data())?;
        }
    }
    w.finish()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(input: R) -> Result<Model> {
    let mut r = Reader::new(input);
    read_header(&mut r, &CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
    let config = ModelConfig::from_kv_text(&r.str("config")?)?;
    let count = r.u32("tensor count")?;
    let mut params = ModelParams::default();
    for _ in 0..count {
        let section = r.u32("tensor section")?;
        let path = r.str("tensor path")?;
        let rank = r.u32("tensor rank")? as usize;
        if rank > 8 {
            return Err(Error::Format(format!("tensor `{path}` has implausible rank {rank}")));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(usize::try_from(r.u64("tensor dims")?).map_err(|_| Error::Format("dimension overflow".into()))?);
        }
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format(format!("tensor `{path}` is too large")))?;
        let t = Tensor::from_vec(&dims, r.f64s(n, "tensor data")?)?;
        let map: &mut TensorMap = match section {
            0 => &mut params.weights,
            1 => &mut params.stats,
            s => return Err(Error::Format(format!("unknown tensor section {s}"))),
        };
        if map.contains(&path) {
            return Err(Error::Format(format!("duplicate tensor `{path}`")));
        }
        map.insert(path, t);
    }
    r.expect_end()?;
    Model::from_parts(config, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::AblationSpec;
    use crate::rng::Rng;

    fn small() -> ModelConfig {
        ModelConfig {
            num_channels: 4,
            sampling_rate: 32.0,
            segment_len: 64,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut cfg = small();
        cfg.ablation = AblationSpec {
            drop_fusion: true,
            ..AblationSpec::default()
        };
        let mut m = Model::new(cfg, &mut Rng::new(5)).unwrap();
        m.params.stats.get_mut("temporal.bn.running_var").unwrap().data_mut()[0] = f64::MIN_POSITIVE;
        let mut buf = Vec::new();
        write_checkpoint(&m, &mut buf).unwrap();
        let back = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back.config, m.config);
        for (a, b) in [(&m.params.weights, &back.params.weights), (&m.params.stats, &back.params.stats)] {
            assert_eq!(a.len(), b.len());
            for ((pa, ta), (pb, tb)) in a.iter().zip(b.iter()) {
                assert_eq!(pa, pb);
                assert_eq!(ta.shape(), tb.shape());
                let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
                assert_eq!(bits(ta), bits(tb), "{pa}");
            }
        }
    }

    #[test]
    fn distinct_errors() {
        let m = Model::new(small(), &mut Rng::new(1)).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&m, &mut buf).unwrap();

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_checkpoint(bad.as_slice()), Err(Error::BadMagic { .. })));

        let mut bad = buf.clone();
        bad[8..12].copy_from_slice(&99u32.to_le_bytes());
        assert!(matches!(read_checkpoint(bad.as_slice()), Err(Error::UnsupportedVersion(99))));

        let cut = &buf[..buf.len() - 3];
        assert!(matches!(read_checkpoint(cut), Err(Error::Truncated(_))));

        let mut long = buf.clone();
        long.push(0);
        assert!(matches!(read_checkpoint(long.as_slice()), Err(Error::Format(_))));
    }
}
