//! Versioned binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "EXSPCKPT"
//! version  u32      currently 1
//! nparams  u32
//!   per parameter:
//!     id        u32 length + utf-8 bytes
//!     rank      u8, then u32 extents
//!     data      f32 x product(extents)
//!     velocity  u8 flag, then f32 x product when present
//! nbn      u32
//!   per batch-norm layer:
//!     id            u32 length + utf-8 bytes
//!     initialized   u8
//!     channels      u32
//!     running_mean  f32 x channels
//!     running_var   f32 x channels
//! ```
//!
//! Values are serialized as 32-bit floats; loading a file and saving it again
//! reproduces the bytes exactly.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"EXSPCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointParam {
    pub id: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
    pub velocity: Option<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointBn {
    pub id: String,
    pub initialized: bool,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub params: Vec<CheckpointParam>,
    pub bn: Vec<CheckpointBn>,
}

impl Checkpoint {
    pub fn param(&self, id: &str) -> Option<&CheckpointParam> {
        self.params.iter().find(|p| p.id == id)
    }

    pub fn bn_state(&self, id: &str) -> Option<&CheckpointBn> {
        self.bn.iter().find(|b| b.id == id)
    }
}

struct Writer<W: Write> {
    out: W,
}

impl<W: Write> Writer<W> {
    fn u32(&mut self, v: u32) -> std::io::Result<()> {
        self.out.write_all(&v.to_le_bytes())
    }
    fn u8(&mut self, v: u8) -> std::io::Result<()> {
        self.out.write_all(&[v])
    }
    fn str(&mut self, s: &str) -> std::io::Result<()> {
        self.u32(s.len() as u32)?;
        self.out.write_all(s.as_bytes())
    }
    fn floats(&mut self, vals: &[f32]) -> std::io::Result<()> {
        for v in vals {
            self.out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format {
                path: self.path.into(),
                reason: "truncated checkpoint".into(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format {
            path: self.path.into(),
            reason: "invalid utf-8 in identifier".into(),
        })
    }
    fn floats(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n * 4)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = Writer {
        out: std::io::BufWriter::new(file),
    };
    let io = |e: std::io::Error| Error::io(path.display().to_string(), e);
    (|| -> std::io::Result<()> {
        w.out.write_all(MAGIC)?;
        w.u32(VERSION)?;
        w.u32(ckpt.params.len() as u32)?;
        for p in &ckpt.params {
            w.str(&p.id)?;
            w.u8(p.shape.len() as u8)?;
            for &d in &p.shape {
                w.u32(d as u32)?;
            }
            w.floats(&p.data)?;
            match &p.velocity {
                Some(v) => {
                    w.u8(1)?;
                    w.floats(v)?;
                }
                None => w.u8(0)?,
            }
        }
        w.u32(ckpt.bn.len() as u32)?;
        for b in &ckpt.bn {
            w.str(&b.id)?;
            w.u8(b.initialized as u8)?;
            w.u32(b.running_mean.len() as u32)?;
            w.floats(&b.running_mean)?;
            w.floats(&b.running_var)?;
        }
        w.out.flush()
    })()
    .map_err(io)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    let pathstr = path.display().to_string();
    let mut r = Reader {
        buf: &buf,
        pos: 0,
        path: &pathstr,
    };
    if r.take(8)? != MAGIC {
        return Err(Error::Format {
            path: pathstr.clone(),
            reason: "bad magic (not an exprspot checkpoint)".into(),
        });
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format {
            path: pathstr.clone(),
            reason: format!("unsupported checkpoint version {version}"),
        });
    }
    let nparams = r.u32()? as usize;
    let mut params = Vec::with_capacity(nparams);
    for _ in 0..nparams {
        let id = r.str()?;
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        let data = r.floats(n)?;
        let velocity = if r.u8()? == 1 { Some(r.floats(n)?) } else { None };
        params.push(CheckpointParam {
            id,
            shape,
            data,
            velocity,
        });
    }
    let nbn = r.u32()? as usize;
    let mut bn = Vec::with_capacity(nbn);
    for _ in 0..nbn {
        let id = r.str()?;
        let initialized = r.u8()? != 0;
        let c = r.u32()? as usize;
        bn.push(CheckpointBn {
            id,
            initialized,
            running_mean: r.floats(c)?,
            running_var: r.floats(c)?,
        });
    }
    if r.pos != buf.len() {
        return Err(Error::Format {
            path: pathstr,
            reason: "trailing bytes after checkpoint payload".into(),
        });
    }
    Ok(Checkpoint { params, bn })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            params: vec![
                CheckpointParam {
                    id: "block0.depthwise".into(),
                    shape: vec![2, 3, 3, 1],
                    data: (0..18).map(|i| i as f32 * 0.25).collect(),
                    velocity: Some(vec![0.5; 18]),
                },
                CheckpointParam {
                    id: "head.bias".into(),
                    shape: vec![2],
                    data: vec![-1.5, 2.25],
                    velocity: None,
                },
            ],
            bn: vec![CheckpointBn {
                id: "block0.bn".into(),
                initialized: true,
                running_mean: vec![0.1, -0.3],
                running_var: vec![0.9, 1.4],
            }],
        }
    }

    #[test]
    fn save_load_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let ckpt = sample();
        save_checkpoint(&ckpt, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded, ckpt);

        // load -> save reproduces the file byte for byte
        let path2 = dir.path().join("net2.ckpt");
        save_checkpoint(&loaded, &path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"NOTACKPT....").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Format { .. })));

        let good = dir.path().join("good.ckpt");
        save_checkpoint(&sample(), &good).unwrap();
        let bytes = std::fs::read(&good).unwrap();
        let cut = dir.path().join("cut.ckpt");
        std::fs::write(&cut, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_checkpoint(&cut), Err(Error::Format { .. })));
    }
}
