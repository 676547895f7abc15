//! Weight container: `"OEQW"`, version, model-spec digest, config digest,
//! the model spec as text, then named float64 arrays.

use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"OEQW";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Human-readable model spec the arrays belong to.
    pub spec_text: String,
    /// Digest of the experiment configuration that produced the weights.
    pub config_digest: [u8; 32],
    pub params: ParamStore,
}

pub fn sha256(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}

impl Checkpoint {
    pub fn spec_digest(&self) -> [u8; 32] {
        sha256(self.spec_text.as_bytes())
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&self.spec_digest())?;
        w.write_all(&self.config_digest)?;
        write_bytes(w, self.spec_text.as_bytes())?;
        w.write_all(&(self.params.len() as u32).to_le_bytes())?;
        for (name, t) in self.params.iter() {
            write_bytes(w, name.as_bytes())?;
            w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a weight checkpoint (bad magic)".into()));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let mut spec_digest = [0u8; 32];
        r.read_exact(&mut spec_digest)?;
        let mut config_digest = [0u8; 32];
        r.read_exact(&mut config_digest)?;
        let spec_text = String::from_utf8(read_bytes(r)?)
            .map_err(|_| Error::Format("model spec is not UTF-8".into()))?;
        if sha256(spec_text.as_bytes()) != spec_digest {
            return Err(Error::DigestMismatch("model spec digest does not match its text".into()));
        }
        let n = read_u32(r)?;
        let mut params = ParamStore::new();
        for _ in 0..n {
            let name = String::from_utf8(read_bytes(r)?)
                .map_err(|_| Error::Format("array name is not UTF-8".into()))?;
            let rank = read_u32(r)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(read_u64(r)? as usize);
            }
            let count: usize = shape.iter().product();
            let mut raw = vec![0u8; count * 8];
            r.read_exact(&mut raw)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            params.insert(name, Tensor::new(shape, data)?)?;
        }
        Ok(Self {
            spec_text,
            config_digest,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut f)
    }
}

fn write_bytes(w: &mut impl Write, b: &[u8]) -> Result<()> {
    w.write_all(&(b.len() as u32).to_le_bytes())?;
    w.write_all(b)?;
    Ok(())
}

fn read_bytes(r: &mut impl Read) -> Result<Vec<u8>> {
    let n = read_u32(r)? as usize;
    let mut b = vec![0u8; n];
    r.read_exact(&mut b)?;
    Ok(b)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut params = ParamStore::new();
        params
            .insert("a.weight", Tensor::from_fn(vec![2, 3], |i| i as f64 * 0.5 - 1.0))
            .unwrap();
        params.insert("a.bias", Tensor::new(vec![2], vec![f64::MIN_POSITIVE, -0.0]).unwrap()).unwrap();
        Checkpoint {
            spec_text: "kind = \"student\"\n".into(),
            config_digest: [7; 32],
            params,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = sample();
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        let back = Checkpoint::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back.spec_text, c.spec_text);
        assert_eq!(back.config_digest, c.config_digest);
        for ((n1, t1), (n2, t2)) in back.params.iter().zip(c.params.iter()) {
            assert_eq!(n1, n2);
            assert_eq!(t1.shape(), t2.shape());
            let b1: Vec<u64> = t1.data().iter().map(|v| v.to_bits()).collect();
            let b2: Vec<u64> = t2.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(b1, b2);
        }
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let mut buf = Vec::new();
        sample().write_to(&mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::read_from(&mut bad.as_slice()), Err(Error::Format(_))));
        let mut bad = buf.clone();
        bad[8] ^= 1;
        assert!(matches!(
            Checkpoint::read_from(&mut bad.as_slice()),
            Err(Error::DigestMismatch(_))
        ));
        assert!(Checkpoint::read_from(&mut &buf[..buf.len() - 3]).is_err());
    }
}
