use std::io::{Read, Write};

use super::{ClassifierLayout, ModelConfig, MufiModel, Pooling};
use crate::binio::*;
use crate::error::{MufiError, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MUFICKP1";
pub const CHECKPOINT_VERSION: usize = 1;

/// Magic, version, world spec hash, model config, then named parameter blocks.
pub fn write_checkpoint<W: Write>(w: &mut W, model: &MufiModel, spec_hash: &[u8; 32]) -> Result<()> {
    write_magic(w, CHECKPOINT_MAGIC)?;
    write_u32(w, CHECKPOINT_VERSION)?;
    w.write_all(spec_hash)?;
    let c = &model.config;
    for v in c
        .grid
        .iter()
        .chain(&[c.in_channels, c.hidden, c.out_channels, c.space_dim, c.n_facets])
    {
        write_u32(w, *v)?;
    }
    write_u32(w, usize::from(c.pooling == Pooling::Global))?;
    match &c.classifier {
        None => write_u32(w, 0)?,
        Some(layout) => {
            write_u32(w, layout.code())?;
            let (facets, sizes) = layout.parts();
            write_u32(w, facets.len())?;
            for (f, s) in facets.iter().zip(sizes) {
                write_u32(w, *f)?;
                write_u32(w, *s)?;
            }
        }
    }
    let names = model.param_names();
    write_u32(w, names.len())?;
    for (name, p) in names.iter().zip(model.params()) {
        write_str(w, name)?;
        write_tensor(w, p)?;
    }
    Ok(())
}

/// Loads a checkpoint, rejecting one trained against a different world.
pub fn read_checkpoint<R: Read>(r: &mut R, expected_spec_hash: &[u8; 32]) -> Result<MufiModel> {
    expect_magic(r, CHECKPOINT_MAGIC)?;
    let version = read_u32(r)?;
    if version != CHECKPOINT_VERSION {
        return Err(MufiError::Format(format!(
            "checkpoint version mismatch: expected {CHECKPOINT_VERSION}, found {version}"
        )));
    }
    let mut hash = [0u8; 32];
    r.read_exact(&mut hash)
        .map_err(|_| MufiError::Format("truncated checkpoint header".into()))?;
    if &hash != expected_spec_hash {
        return Err(MufiError::Format(format!(
            "checkpoint was trained on world {} but this world is {}",
            hex::encode(&hash[..8]),
            hex::encode(&expected_spec_hash[..8])
        )));
    }
    let mut v = [0usize; 8];
    for x in &mut v {
        *x = read_u32(r)?;
    }
    let pooling = if read_u32(r)? == 1 {
        Pooling::Global
    } else {
        Pooling::Attention
    };
    let classifier = match read_u32(r)? {
        0 => None,
        code @ (1 | 2) => {
            let n = read_u32(r)?;
            let mut facets = Vec::with_capacity(n);
            let mut sizes = Vec::with_capacity(n);
            for _ in 0..n {
                facets.push(read_u32(r)?);
                sizes.push(read_u32(r)?);
            }
            Some(if code == 1 {
                ClassifierLayout::Merged { facets, sizes }
            } else {
                ClassifierLayout::MultiFc { facets, sizes }
            })
        }
        other => return Err(MufiError::Format(format!("unknown classifier layout code {other}"))),
    };
    let config = ModelConfig {
        grid: [v[0], v[1], v[2]],
        in_channels: v[3],
        hidden: v[4],
        out_channels: v[5],
        space_dim: v[6],
        n_facets: v[7],
        pooling,
        classifier,
    };
    let count = read_u32(r)?;
    let mut params = Vec::with_capacity(count.min(1024));
    let mut names = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        names.push(read_str(r)?);
        params.push(read_tensor(r)?);
    }
    let model = MufiModel::from_params(config, params).map_err(|e| MufiError::Format(e.to_string()))?;
    if model.param_names() != names {
        return Err(MufiError::Format(
            "parameter block names do not match the model config".into(),
        ));
    }
    Ok(model)
}
