//! Binary tensor container plus JSON sidecar.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "BALR"  u32 version
//! repeated until EOF:
//!   u32 name_len, name bytes (UTF-8), u32 rows, u32 cols, rows*cols f64 row-major
//! ```
//!
//! Metadata lives next to the tensors in `<file>.json`.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use super::{AdapterKind, AdapterPair};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const MAGIC: &[u8; 4] = b"BALR";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    tensors: Vec<(String, Matrix)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, m: Matrix) {
        self.tensors.push((name.into(), m));
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    pub fn require(&self, name: &str) -> Result<&Matrix> {
        self.get(name)
            .ok_or_else(|| Error::Format(format!("missing tensor {name:?}")))
    }

    pub fn tensors(&self) -> &[(String, Matrix)] {
        &self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        for (name, m) in &self.tensors {
            let len = u32::try_from(name.len())
                .map_err(|_| Error::Format("tensor name too long".into()))?;
            w.write_all(&len.to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            for dim in [m.rows(), m.cols()] {
                let d = u32::try_from(dim).map_err(|_| Error::Format("tensor too large".into()))?;
                w.write_all(&d.to_le_bytes())?;
            }
            for x in m.as_slice() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(truncated)?;
        if &magic != MAGIC {
            return Err(Error::Format("bad magic, expected BALR".into()));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let mut out = Self::new();
        loop {
            let mut first = [0u8; 4];
            if !read_full_or_eof(r, &mut first)? {
                break;
            }
            let name_len = u32::from_le_bytes(first) as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name).map_err(truncated)?;
            let name = String::from_utf8(name)
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
            let rows = read_u32(r)? as usize;
            let cols = read_u32(r)? as usize;
            let count = rows
                .checked_mul(cols)
                .ok_or_else(|| Error::Format("tensor dimensions overflow".into()))?;
            let mut data = Vec::with_capacity(count.min(1 << 24));
            let mut buf = [0u8; 8];
            for _ in 0..count {
                r.read_exact(&mut buf).map_err(truncated)?;
                data.push(f64::from_le_bytes(buf));
            }
            out.push(name, Matrix::from_vec(rows, cols, data)?);
        }
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut v = Vec::new();
        self.write_to(&mut v).expect("writing to a Vec cannot fail");
        v
    }
}

fn truncated(e: io::Error) -> Error {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        Error::Format("truncated checkpoint".into())
    } else {
        Error::Io(e)
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

/// `Ok(false)` on a clean EOF before the first byte, error on a partial read.
fn read_full_or_eof<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<bool> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) if filled == 0 => return Ok(false),
            Ok(0) => return Err(Error::Format("truncated checkpoint".into())),
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(true)
}

/// Sidecar for adapter checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdapterMeta {
    pub kind: AdapterKind,
    pub r: usize,
    pub sigma: f64,
    pub alpha: f64,
    pub seed: u64,
}

/// `<file>.json` next to a checkpoint file.
pub fn sidecar_path(path: impl AsRef<Path>) -> PathBuf {
    let mut s = path.as_ref().as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn write_sidecar<T: Serialize>(path: impl AsRef<Path>, meta: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(meta)?;
    text.push('\n');
    std::fs::write(sidecar_path(path), text)?;
    Ok(())
}

pub fn read_sidecar<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let text = std::fs::read_to_string(sidecar_path(path))?;
    Ok(serde_json::from_str(&text)?)
}

/// Tensors `a`, `b`, `base` of one adapter pair.
pub fn adapter_checkpoint(p: &AdapterPair) -> Checkpoint {
    let mut c = Checkpoint::new();
    c.push("a", p.a.clone());
    c.push("b", p.b.clone());
    c.push("base", p.base().clone());
    c
}

pub fn save_adapter(path: impl AsRef<Path>, p: &AdapterPair, sigma: f64, seed: u64) -> Result<()> {
    let path = path.as_ref();
    adapter_checkpoint(p).save(path)?;
    write_sidecar(
        path,
        &AdapterMeta {
            kind: p.kind(),
            r: p.rank(),
            sigma,
            alpha: p.alpha(),
            seed,
        },
    )
}

pub fn load_adapter(path: impl AsRef<Path>) -> Result<(AdapterPair, AdapterMeta)> {
    let path = path.as_ref();
    let ckpt = Checkpoint::load(path)?;
    let meta: AdapterMeta = read_sidecar(path)?;
    let pair = AdapterPair::from_parts(
        ckpt.require("a")?.clone(),
        ckpt.require("b")?.clone(),
        ckpt.require("base")?.clone(),
        meta.kind,
        meta.alpha,
    )?;
    if pair.rank() != meta.r {
        return Err(Error::Format(format!(
            "sidecar rank {} but tensors have rank {}",
            meta.r,
            pair.rank()
        )));
    }
    Ok((pair, meta))
}
