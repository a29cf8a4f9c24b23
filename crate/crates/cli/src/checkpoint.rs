//! Flat binary container of named tensors.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic    8 bytes  "VOXTRCKP"
//! version  u32      currently 1
//! count    u32      number of tensors
//! per tensor:
//!   name_len u32, name bytes (UTF-8)
//!   rank     u32, extents as u64 each
//!   data     numel * f32
//! ```
//!
//! Tensor order is `EncoderParams::named_tensors` order, which makes files
//! byte-identical for identical parameters.

use anyhow::{bail, Context, Result};
use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use voxtr_core::encoder::{EncoderParams, ViTConfig};
use voxtr_core::Tensor;

const MAGIC: &[u8; 8] = b"VOXTRCKP";
const VERSION: u32 = 1;

pub fn write_named_tensors(path: &Path, entries: &[(String, &Tensor)]) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, tensor) in entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(tensor.rank() as u32).to_le_bytes());
        for &extent in tensor.shape() {
            out.extend_from_slice(&(extent as u64).to_le_bytes());
        }
        for value in tensor.data() {
            out.extend_from_slice(&value.to_le_bytes());
        }
    }
    let mut file = fs::File::create(path)
        .with_context(|| format!("creating checkpoint {}", path.display()))?;
    file.write_all(&out)?;
    Ok(())
}

struct Reader {
    buf: Vec<u8>,
    pos: usize,
}

impl Reader {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.buf.len() {
            bail!("checkpoint truncated at byte {}", self.pos);
        }
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn read_named_tensors(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let mut buf = Vec::new();
    fs::File::open(path)
        .with_context(|| format!("opening checkpoint {}", path.display()))?
        .read_to_end(&mut buf)?;
    let mut r = Reader { buf, pos: 0 };
    if r.take(8)? != MAGIC {
        bail!("not a voxtr checkpoint: bad magic");
    }
    let version = r.u32()?;
    if version != VERSION {
        bail!("unsupported checkpoint version {version}");
    }
    let count = r.u32()? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec()).context("tensor name utf-8")?;
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(f32::from_le_bytes(r.take(4)?.try_into().unwrap()));
        }
        entries.push((
            name.clone(),
            Tensor::from_vec(shape, data)
                .with_context(|| format!("tensor {name} violates shape invariants"))?,
        ));
    }
    if r.pos != r.buf.len() {
        bail!("{} trailing bytes after last tensor", r.buf.len() - r.pos);
    }
    Ok(entries)
}

pub fn save_encoder(path: &Path, params: &EncoderParams) -> Result<()> {
    write_named_tensors(path, &params.named_tensors())
}

/// Rebuild encoder parameters for `cfg` from a checkpoint. Every expected
/// name must be present with the right shape; unknown names are rejected.
pub fn load_encoder(path: &Path, cfg: &ViTConfig) -> Result<EncoderParams> {
    let mut by_name: BTreeMap<String, Tensor> = read_named_tensors(path)?.into_iter().collect();

    // Template with the right structure (bias presence, prefix blocks), then
    // overwrite every tensor from the file.
    let mut template = EncoderParams::seeded(cfg, &mut voxtr_core::Rng::new(0))
        .context("config cannot produce a parameter template")?;
    let expected: Vec<(String, Vec<usize>)> = template
        .named_tensors()
        .into_iter()
        .map(|(name, t)| (name, t.shape().to_vec()))
        .collect();
    for (slot, (name, shape)) in template.tensors_mut().into_iter().zip(&expected) {
        let tensor = by_name
            .remove(name)
            .with_context(|| format!("checkpoint is missing tensor {name}"))?;
        if tensor.shape() != shape.as_slice() {
            bail!(
                "tensor {name} has shape {:?}, config expects {:?}",
                tensor.shape(),
                shape
            );
        }
        *slot = tensor;
    }
    if let Some((name, _)) = by_name.into_iter().next() {
        bail!("checkpoint has unexpected tensor {name}");
    }
    Ok(template)
}
