//! Binary checkpoint format.
//!
//! ```text
//! magic      8 bytes  "DDSPBWE1"
//! version    u32
//! arch_hash  u64
//! seed       u64
//! step       u64
//! config     u32 length + UTF-8 text (key=value lines)
//! tensors    u32 count, then per tensor:
//!            u16 name length + name, u32 rows, u32 cols, rows*cols f64
//! optimizer  u8 flag; if 1, Adam first and second moments in tensor order
//! ```
//! All integers and floats are little-endian.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::adam::Adam;
use super::params::ParamStore;
use crate::error::{BweError, Result};

pub const MAGIC: &[u8; 8] = b"DDSPBWE1";
pub const FORMAT_VERSION: u32 = 1;

/// Adam first and second moments, in tensor order.
pub type AdamMoments = (Vec<Array2<f64>>, Vec<Array2<f64>>);

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub arch_hash: u64,
    pub seed: u64,
    pub step: u64,
    pub config: String,
    pub tensors: Vec<(String, Array2<f64>)>,
    pub adam: Option<AdamMoments>,
}

impl Checkpoint {
    pub fn from_store(store: &ParamStore, arch_hash: u64, config: String, adam: Option<&Adam>) -> Self {
        Self {
            arch_hash,
            seed: store.seed,
            step: store.step,
            config,
            tensors: store.iter().map(|p| (p.name.clone(), p.value.clone())).collect(),
            adam: adam.map(|a| (a.m.clone(), a.v.clone())),
        }
    }

    /// Copy weights (and step/seed) into `store`, checking the architecture hash.
    pub fn restore(&self, store: &mut ParamStore, expected_hash: u64) -> Result<()> {
        if self.arch_hash != expected_hash {
            return Err(BweError::ArchitectureMismatch { expected: expected_hash, found: self.arch_hash });
        }
        store.load_values(&self.tensors)?;
        store.step = self.step;
        store.seed = self.seed;
        Ok(())
    }

    /// Optimizer state matching `store`, or a fresh one when none was saved.
    pub fn adam_for(&self, store: &ParamStore) -> Result<Adam> {
        let mut adam = Adam::new(store);
        if let Some((m, v)) = &self.adam {
            let shapes_ok = m.len() == store.len()
                && v.len() == store.len()
                && store.iter().zip(m).zip(v).all(|((p, m), v)| p.value.dim() == m.dim() && m.dim() == v.dim());
            if !shapes_ok {
                return Err(BweError::Checkpoint("optimizer state does not match parameters".into()));
            }
            adam.m = m.clone();
            adam.v = v.clone();
        }
        Ok(adam)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&self.arch_hash.to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&self.step.to_le_bytes())?;
        let cfg = self.config.as_bytes();
        w.write_all(&(cfg.len() as u32).to_le_bytes())?;
        w.write_all(cfg)?;
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for (name, t) in &self.tensors {
            let nb = name.as_bytes();
            if nb.len() > u16::MAX as usize {
                return Err(BweError::Checkpoint(format!("tensor name too long: {name}")));
            }
            w.write_all(&(nb.len() as u16).to_le_bytes())?;
            w.write_all(nb)?;
            write_matrix(w, t)?;
        }
        match &self.adam {
            None => w.write_all(&[0u8])?,
            Some((m, v)) => {
                w.write_all(&[1u8])?;
                for t in m.iter().chain(v) {
                    write_matrix(w, t)?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        read_exact(r, &mut magic)?;
        if &magic != MAGIC {
            return Err(BweError::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = read_u32(r)?;
        if version != FORMAT_VERSION {
            return Err(BweError::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let arch_hash = read_u64(r)?;
        let seed = read_u64(r)?;
        let step = read_u64(r)?;
        let cfg_len = read_u32(r)? as usize;
        let mut cfg = vec![0u8; cfg_len];
        read_exact(r, &mut cfg)?;
        let config = String::from_utf8(cfg).map_err(|_| BweError::Checkpoint("config is not UTF-8".into()))?;
        let n = read_u32(r)? as usize;
        let mut tensors = Vec::with_capacity(n.min(4096));
        for _ in 0..n {
            let mut len = [0u8; 2];
            read_exact(r, &mut len)?;
            let mut name = vec![0u8; u16::from_le_bytes(len) as usize];
            read_exact(r, &mut name)?;
            let name = String::from_utf8(name).map_err(|_| BweError::Checkpoint("tensor name is not UTF-8".into()))?;
            tensors.push((name, read_matrix(r)?));
        }
        let mut flag = [0u8; 1];
        read_exact(r, &mut flag)?;
        let adam = match flag[0] {
            0 => None,
            1 => {
                let m = (0..n).map(|_| read_matrix(r)).collect::<Result<Vec<_>>>()?;
                let v = (0..n).map(|_| read_matrix(r)).collect::<Result<Vec<_>>>()?;
                Some((m, v))
            }
            f => return Err(BweError::Checkpoint(format!("bad optimizer flag {f}"))),
        };
        Ok(Self { arch_hash, seed, step, config, tensors, adam })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let tmp = path.with_extension("tmp");
        {
            let mut f = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
            self.write_to(&mut f)?;
            f.flush()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut f)
    }
}

fn write_matrix<W: Write>(w: &mut W, t: &Array2<f64>) -> Result<()> {
    w.write_all(&(t.nrows() as u32).to_le_bytes())?;
    w.write_all(&(t.ncols() as u32).to_le_bytes())?;
    for v in t.iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_matrix<R: Read>(r: &mut R) -> Result<Array2<f64>> {
    let rows = read_u32(r)? as usize;
    let cols = read_u32(r)? as usize;
    let n = rows
        .checked_mul(cols)
        .filter(|&n| n <= 1 << 30)
        .ok_or_else(|| BweError::Checkpoint(format!("implausible tensor shape {rows}x{cols}")))?;
    let mut bytes = vec![0u8; n * 8];
    read_exact(r, &mut bytes)?;
    let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Array2::from_shape_vec((rows, cols), data).map_err(|e| BweError::Checkpoint(e.to_string()))
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => BweError::Checkpoint("truncated checkpoint".into()),
        _ => BweError::Io(e),
    })
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn sample() -> (ParamStore, Adam) {
        let mut s = ParamStore::new(42);
        let a = s.add("enc.w", array![[1.0, -2.5], [3.25, f64::MIN_POSITIVE]]);
        s.add("enc.b", array![[0.1, 0.2]]);
        s.accumulate_grad(a, &array![[1.0, 1.0], [1.0, 1.0]]).unwrap();
        let b = s.find("enc.b").unwrap();
        s.accumulate_grad(b, &array![[0.5, -0.5]]).unwrap();
        let mut adam = Adam::new(&s);
        adam.step(&mut s, 1e-3).unwrap();
        (s, adam)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (s, adam) = sample();
        let ck = Checkpoint::from_store(&s, 7, "variant=mono_dec\n".into(), Some(&adam));
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        let back = Checkpoint::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back.config, "variant=mono_dec\n");
        assert_eq!((back.arch_hash, back.seed, back.step), (7, 42, 1));
        let mut fresh = ParamStore::new(0);
        fresh.add("enc.w", Array2::zeros((2, 2)));
        fresh.add("enc.b", Array2::zeros((1, 2)));
        back.restore(&mut fresh, 7).unwrap();
        for (p, q) in fresh.iter().zip(s.iter()) {
            assert_eq!(p.value, q.value);
        }
        let restored = back.adam_for(&fresh).unwrap();
        assert_eq!(restored.m, adam.m);
        assert_eq!(restored.v, adam.v);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let (s, _) = sample();
        let ck = Checkpoint::from_store(&s, 7, String::new(), None);
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        assert!(matches!(Checkpoint::read_from(&mut &buf[..buf.len() - 3]), Err(BweError::Checkpoint(_))));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::read_from(&mut bad.as_slice()), Err(BweError::Checkpoint(_))));
        let mut other = s.clone();
        assert!(matches!(ck.restore(&mut other, 8), Err(BweError::ArchitectureMismatch { .. })));
    }
}
