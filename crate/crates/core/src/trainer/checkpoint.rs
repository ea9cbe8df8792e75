//! Binary checkpoint container.
//!
//! Layout (little endian): magic `ATTRGAN\0`, `u32` version, 32-byte config
//! hash, `u64` iteration, `u64` seed, `u32` section count, then per section a
//! name and a list of named tensors (`u32` rank, `u64` dims, `f64` data).
//! Strings are `u32` length + UTF-8 bytes.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::Module;
use crate::optim::Adam;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"ATTRGAN\0";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Section {
    pub name: String,
    pub tensors: Vec<(String, Tensor)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub config_hash: [u8; 32],
    pub iteration: u64,
    pub seed: u64,
    pub sections: Vec<Section>,
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("invalid UTF-8 name".into()))
    }
}

impl Checkpoint {
    pub fn new(config_hash: [u8; 32], iteration: u64, seed: u64) -> Self {
        Checkpoint { version: VERSION, config_hash, iteration, seed, sections: Vec::new() }
    }

    pub fn push(&mut self, name: &str, tensors: Vec<(String, Tensor)>) {
        self.sections.push(Section { name: name.to_string(), tensors });
    }

    pub fn section(&self, name: &str) -> Result<&[(String, Tensor)]> {
        self.sections
            .iter()
            .find(|s| s.name == name)
            .map(|s| s.tensors.as_slice())
            .ok_or_else(|| Error::MissingSection(name.to_string()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&self.config_hash);
        out.extend_from_slice(&self.iteration.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&(self.sections.len() as u32).to_le_bytes());
        for s in &self.sections {
            put_str(&mut out, &s.name);
            out.extend_from_slice(&(s.tensors.len() as u32).to_le_bytes());
            for (name, t) in &s.tensors {
                put_str(&mut out, name);
                out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
                for &d in t.shape() {
                    out.extend_from_slice(&(d as u64).to_le_bytes());
                }
                for &v in t.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8).ok() != Some(MAGIC.as_slice()) {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::CheckpointVersion { found: version, expected: VERSION });
        }
        let config_hash: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let iteration = r.u64()?;
        let seed = r.u64()?;
        let n_sections = r.u32()?;
        let mut sections = Vec::new();
        for _ in 0..n_sections {
            let name = r.string()?;
            let n = r.u32()?;
            let mut tensors = Vec::new();
            for _ in 0..n {
                let tname = r.string()?;
                let rank = r.u32()? as usize;
                let shape: Vec<usize> = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<_>>()?;
                let len: usize = shape.iter().product();
                let raw = r.take(len.checked_mul(8).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?)?;
                let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
                tensors.push((tname, Tensor::new(&shape, data)));
            }
            sections.push(Section { name, tensors });
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint { version, config_hash, iteration, seed, sections })
    }

    /// Writes to a temporary sibling and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut tmp = path.as_os_str().to_os_string();
        tmp.push(".tmp");
        fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

pub fn module_tensors(m: &impl Module) -> Vec<(String, Tensor)> {
    m.params().iter().map(|p| (p.name().to_string(), p.value().clone())).collect()
}

pub fn restore_module(m: &mut impl Module, section: &str, tensors: &[(String, Tensor)]) -> Result<()> {
    let mut params = m.params_mut();
    if params.len() != tensors.len() {
        return Err(Error::Checkpoint(format!(
            "section {section}: {} tensors stored, model has {}",
            tensors.len(),
            params.len()
        )));
    }
    for (p, (name, t)) in params.iter_mut().zip(tensors) {
        if p.name() != name || p.value().shape() != t.shape() {
            return Err(Error::Checkpoint(format!(
                "section {section}: stored {name} {:?} does not fit {} {:?}",
                t.shape(),
                p.name(),
                p.value().shape()
            )));
        }
    }
    for (p, (_, t)) in params.into_iter().zip(tensors) {
        p.set_value(t.clone());
    }
    Ok(())
}

pub fn adam_tensors(a: &Adam) -> Vec<(String, Tensor)> {
    let mut out = vec![("step".to_string(), Tensor::scalar(a.step as f64))];
    for (i, (m, v)) in a.m.iter().zip(&a.v).enumerate() {
        out.push((format!("m.{i}"), m.clone()));
        out.push((format!("v.{i}"), v.clone()));
    }
    out
}

pub fn restore_adam(a: &mut Adam, section: &str, tensors: &[(String, Tensor)]) -> Result<()> {
    let bad = |why: String| Error::Checkpoint(format!("section {section}: {why}"));
    let (first, rest) = tensors.split_first().ok_or_else(|| bad("empty".into()))?;
    if first.0 != "step" || rest.len() != 2 * a.m.len() {
        return Err(bad(format!("expected step and {} moment tensors", 2 * a.m.len())));
    }
    for (i, pair) in rest.chunks_exact(2).enumerate() {
        if pair[0].1.shape() != a.m[i].shape() || pair[1].1.shape() != a.v[i].shape() {
            return Err(bad(format!("moment {i} has the wrong shape")));
        }
    }
    a.step = first.1.item() as u64;
    for (i, pair) in rest.chunks_exact(2).enumerate() {
        a.m[i] = pair[0].1.clone();
        a.v[i] = pair[1].1.clone();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::rand_tensor;

    fn sample() -> Checkpoint {
        let mut c = Checkpoint::new([7; 32], 42, 3);
        c.push("a", vec![("w".into(), rand_tensor(&[2, 3], 1)), ("s".into(), Tensor::scalar(1.5))]);
        c.push("b", vec![]);
        c
    }

    #[test]
    fn bytes_round_trip() {
        let c = sample();
        assert_eq!(Checkpoint::from_bytes(&c.to_bytes()).unwrap(), c);
    }

    #[test]
    fn version_and_corruption_are_reported() {
        let mut bytes = sample().to_bytes();
        bytes[8] = 9;
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(Error::CheckpointVersion { found: 9, expected: 1 })
        ));
        let bytes = sample().to_bytes();
        assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]), Err(Error::Checkpoint(_))));
        assert!(matches!(Checkpoint::from_bytes(b"nonsense"), Err(Error::Checkpoint(_))));
        assert!(matches!(sample().section("c"), Err(Error::MissingSection(_))));
    }

    #[test]
    fn atomic_save_leaves_no_temp_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ck.bin");
        sample().save(&p).unwrap();
        assert_eq!(Checkpoint::load(&p).unwrap(), sample());
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
