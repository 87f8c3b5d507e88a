//! Parameter checkpoint file, little-endian throughout:
//!
//! ```text
//! 8-byte magic "DOGMCKP\0", u32 version
//! u32 config JSON length, config JSON bytes (model architecture)
//! u32 param count; per param: u16 name length, name bytes,
//!     u32 ndim, u32 dims…, f32 data…
//! u8 adam-state flag; if set: u64 step t, then per param m then v arrays
//! ```

use std::io::Read;
use std::path::Path;

use dogm_core::io::write_atomic;

use crate::adam::{AdamState, Param};
use crate::error::{NnError, Result};

pub const CKPT_MAGIC: &[u8; 8] = b"DOGMCKP\0";
pub const CKPT_VERSION: u32 = 1;

pub struct Checkpoint {
    pub config_json: String,
    pub params: Vec<Param>,
    pub adam: Option<AdamState>,
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CKPT_MAGIC);
    buf.extend_from_slice(&CKPT_VERSION.to_le_bytes());
    let cfg = ckpt.config_json.as_bytes();
    buf.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    buf.extend_from_slice(cfg);
    buf.extend_from_slice(&(ckpt.params.len() as u32).to_le_bytes());
    for p in &ckpt.params {
        let name = p.name.as_bytes();
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name);
        buf.extend_from_slice(&(p.shape.len() as u32).to_le_bytes());
        for d in &p.shape {
            buf.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for v in &p.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    match &ckpt.adam {
        Some(state) => {
            buf.push(1);
            buf.extend_from_slice(&state.t.to_le_bytes());
            for m in &state.m {
                for v in m {
                    buf.extend_from_slice(&v.to_le_bytes());
                }
            }
            for vv in &state.v {
                for v in vv {
                    buf.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        None => buf.push(0),
    }
    write_atomic(path, &buf)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: String,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(NnError::Checkpoint {
                path: self.path.clone(),
                reason: "truncated file".into(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(4 * n)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let display = path.display().to_string();
    let mut file = std::fs::File::open(path).map_err(|e| NnError::io(&display, e))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)
        .map_err(|e| NnError::io(&display, e))?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path: display.clone(),
    };
    if r.take(8)? != CKPT_MAGIC {
        return Err(NnError::Checkpoint {
            path: display,
            reason: "bad magic".into(),
        });
    }
    let version = r.u32()?;
    if version != CKPT_VERSION {
        return Err(NnError::Checkpoint {
            path: display,
            reason: format!("unsupported version {version}"),
        });
    }
    let cfg_len = r.u32()? as usize;
    let config_json = String::from_utf8(r.take(cfg_len)?.to_vec()).map_err(|_| {
        NnError::Checkpoint {
            path: display.clone(),
            reason: "config not utf-8".into(),
        }
    })?;
    let n_params = r.u32()? as usize;
    let mut params = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        let name_len = r.u16()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec()).map_err(|_| {
            NnError::Checkpoint {
                path: display.clone(),
                reason: "param name not utf-8".into(),
            }
        })?;
        let ndim = r.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let data = r.f32s(numel)?;
        params.push(Param { name, shape, data });
    }
    let has_adam = r.take(1)?[0] == 1;
    let adam = if has_adam {
        let t = r.u64()?;
        let mut m = Vec::with_capacity(params.len());
        for p in &params {
            m.push(r.f32s(p.numel())?);
        }
        let mut v = Vec::with_capacity(params.len());
        for p in &params {
            v.push(r.f32s(p.numel())?);
        }
        Some(AdamState { t, m, v })
    } else {
        None
    };
    if r.pos != bytes.len() {
        return Err(NnError::Checkpoint {
            path: display,
            reason: format!("{} trailing bytes", bytes.len() - r.pos),
        });
    }
    Ok(Checkpoint {
        config_json,
        params,
        adam,
    })
}
