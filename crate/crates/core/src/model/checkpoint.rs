//! Checkpoint serialization.
//!
//! Little-endian layout: magic "FCTC", version u32, an architecture block
//! (input u32, stage count u8, channel widths u32 each, repr u32,
//! projector hidden u32, projector out u32, classes u32, residual u8), then
//! every parameter tensor in declaration order as
//! `rank u8 | dims u32 * rank | data f64 * numel`. Round trips are
//! bit-exact.

use super::{ArchitectureConfig, ModelParams, ParamGroup};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::path::Path;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"FCTC";
pub const CHECKPOINT_VERSION: u32 = 1;

const ALL_GROUPS: [ParamGroup; 3] = [
    ParamGroup::Encoder,
    ParamGroup::Projector,
    ParamGroup::Classifier,
];

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());

    let arch = &params.arch;
    buf.extend_from_slice(&(arch.input as u32).to_le_bytes());
    buf.push(arch.channels.len() as u8);
    for &c in &arch.channels {
        buf.extend_from_slice(&(c as u32).to_le_bytes());
    }
    buf.extend_from_slice(&(arch.repr_dim as u32).to_le_bytes());
    buf.extend_from_slice(&(arch.projector_hidden as u32).to_le_bytes());
    buf.extend_from_slice(&(arch.projector_out as u32).to_le_bytes());
    buf.extend_from_slice(&(arch.class_count as u32).to_le_bytes());
    buf.push(u8::from(arch.residual));

    for t in params.tensors(&ALL_GROUPS) {
        buf.push(t.shape.len() as u8);
        for &d in &t.shape {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, buf)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Truncated(what.to_string()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
    fn tensor(&mut self, what: &str) -> Result<Tensor> {
        let rank = self.u8(what)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u32(what)? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = self.take(8 * numel, what)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Tensor::new(data, shape)
    }
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let buf = std::fs::read(path)?;
    let mut r = Reader { buf: &buf, pos: 0 };

    let magic = r.take(4, "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic {
            expected: CHECKPOINT_MAGIC,
            found: [magic[0], magic[1], magic[2], magic[3]],
        });
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::BadVersion {
            expected: CHECKPOINT_VERSION,
            found: version,
        });
    }

    let input = r.u32("arch input")? as usize;
    let n_stages = r.u8("arch stages")? as usize;
    let mut channels = Vec::with_capacity(n_stages);
    for _ in 0..n_stages {
        channels.push(r.u32("arch channels")? as usize);
    }
    let arch = ArchitectureConfig {
        input,
        channels,
        repr_dim: r.u32("arch repr dim")? as usize,
        projector_hidden: r.u32("arch projector hidden")? as usize,
        projector_out: r.u32("arch projector out")? as usize,
        class_count: r.u32("arch classes")? as usize,
        residual: r.u8("arch residual")? != 0,
    };
    arch.validate()?;

    // template gives the expected tensor sequence and shapes
    let mut params = super::init_params(&arch, 0)?;
    for slot in params.tensors_mut(&ALL_GROUPS) {
        let t = r.tensor("parameter tensor")?;
        if t.shape != slot.shape {
            return Err(Error::ShapeMismatch {
                op: "load-checkpoint",
                lhs: slot.shape.clone(),
                rhs: t.shape,
            });
        }
        slot.data = t.data;
    }
    if r.pos != buf.len() {
        return Err(Error::Truncated(format!(
            "{} trailing bytes after the last tensor",
            buf.len() - r.pos
        )));
    }
    Ok(params)
}
