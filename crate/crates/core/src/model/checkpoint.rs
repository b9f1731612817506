//! Binary parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "CRCTCPRM"
//! version    u32      1
//! cfg_len    u32      length of the encoder config blob
//! cfg        bytes    UTF-8 JSON of the encoder config
//! count      u32      number of tensors
//! per tensor:
//!   name_len u32, name bytes (UTF-8)
//!   ndim     u32, dims u64 x ndim
//!   data     f64 x prod(dims)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::encoder::EncoderConfig;
use super::params::{NamedTensor, ParameterSet};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CRCTCPRM";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Upper bound on any single length field, to fail fast on corrupt input.
const MAX_LEN: u64 = 1 << 32;

pub fn write_checkpoint<W: Write>(mut w: W, cfg: &EncoderConfig, params: &ParameterSet) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    let blob = serde_json::to_vec(cfg)?;
    w.write_all(&(blob.len() as u32).to_le_bytes())?;
    w.write_all(&blob)?;
    w.write_all(&(params.tensors.len() as u32).to_le_bytes())?;
    for t in &params.tensors {
        w.write_all(&(t.name.len() as u32).to_le_bytes())?;
        w.write_all(t.name.as_bytes())?;
        w.write_all(&(t.shape.len() as u32).to_le_bytes())?;
        for &d in &t.shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in &t.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_bytes<R: Read>(r: &mut R, len: u64) -> Result<Vec<u8>> {
    if len > MAX_LEN {
        return Err(Error::invalid("checkpoint length field too large"));
    }
    let mut buf = vec![0u8; len as usize];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(EncoderConfig, ParameterSet)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::invalid("not a parameter checkpoint (bad magic)"));
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::invalid(format!("unsupported checkpoint version {version}")));
    }
    let cfg_len = read_u32(&mut r)?;
    let cfg: EncoderConfig = serde_json::from_slice(&read_bytes(&mut r, cfg_len.into())?)?;
    let count = read_u32(&mut r)?;
    let mut tensors = Vec::with_capacity(count.min(1024) as usize);
    for _ in 0..count {
        let name_len = read_u32(&mut r)?;
        let name = String::from_utf8(read_bytes(&mut r, name_len.into())?)
            .map_err(|_| Error::invalid("tensor name is not UTF-8"))?;
        let ndim = read_u32(&mut r)?;
        let shape = (0..ndim).map(|_| read_u64(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: u64 = shape.iter().map(|&d| d as u64).product();
        let raw = read_bytes(&mut r, n.saturating_mul(8))?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        tensors.push(NamedTensor { name, shape, data });
    }
    let params = ParameterSet { tensors };
    cfg.validate()?;
    cfg.check_params(&params)?;
    Ok((cfg, params))
}

pub fn save_checkpoint(path: &Path, cfg: &EncoderConfig, params: &ParameterSet) -> Result<()> {
    write_checkpoint(BufWriter::new(File::create(path)?), cfg, params)
}

pub fn load_checkpoint(path: &Path) -> Result<(EncoderConfig, ParameterSet)> {
    read_checkpoint(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_bit_exact() {
        let cfg = EncoderConfig { hidden_dim: 4, layers: 2, ..EncoderConfig::new(3, 5) };
        let params = cfg.init(&mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &cfg, &params).unwrap();
        assert_eq!(&buf[..8], CHECKPOINT_MAGIC);
        let (cfg2, params2) = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(cfg, cfg2);
        assert_eq!(params, params2);
    }

    #[test]
    fn rejects_corruption() {
        let cfg = EncoderConfig { hidden_dim: 2, layers: 1, ..EncoderConfig::new(2, 3) };
        let params = cfg.init(&mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &cfg, &params).unwrap();

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_checkpoint(bad.as_slice()).is_err());
        let mut bad = buf.clone();
        bad[8] = 9;
        assert!(read_checkpoint(bad.as_slice()).is_err());
        assert!(read_checkpoint(&buf[..buf.len() - 3]).is_err());
    }
}
