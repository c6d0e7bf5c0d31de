//! Model checkpoints: magic string `KANMIX01`, the serialized
//! [`MixerConfig`], then every parameter tensor in declaration order as
//! little-endian 32-bit floats. Files are written atomically (temp file plus
//! rename) so interrupted runs never leave a half-written checkpoint.

use crate::error::{KanError, Result};
use crate::mixer::{KanMixerModel, MixerConfig};
use std::fs;
use std::path::Path;

pub const MAGIC: &[u8; 8] = b"KANMIX01";
/// 10 u32 config fields + residual byte + u64 seed.
const CONFIG_BYTES: usize = 10 * 4 + 1 + 8;

pub fn serialize_model(model: &KanMixerModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    let c = &model.config;
    for field in [
        c.patch_size,
        c.n_channels,
        c.n_hiddens,
        c.depth,
        c.n_output,
        c.in_channels,
        c.image_h,
        c.image_w,
        c.spline_order,
        c.grid_size,
    ] {
        out.extend_from_slice(&(field as u32).to_le_bytes());
    }
    out.push(c.residual as u8);
    out.extend_from_slice(&c.seed.to_le_bytes());
    model.visit_params(&mut |_, t| {
        for &v in &t.data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    });
    out
}

pub fn deserialize_model(bytes: &[u8]) -> Result<KanMixerModel> {
    if bytes.len() < MAGIC.len() {
        return Err(KanError::TruncatedFile(
            "checkpoint shorter than its magic string".to_string(),
        ));
    }
    if &bytes[..MAGIC.len()] != MAGIC {
        return Err(KanError::BadMagic(format!(
            "checkpoint magic {:?}, expected {:?}",
            &bytes[..MAGIC.len()],
            MAGIC
        )));
    }
    let body = &bytes[MAGIC.len()..];
    if body.len() < CONFIG_BYTES {
        return Err(KanError::TruncatedFile(
            "checkpoint ends inside the config header".to_string(),
        ));
    }
    let mut fields = [0usize; 10];
    for (i, field) in fields.iter_mut().enumerate() {
        *field = u32::from_le_bytes(body[i * 4..i * 4 + 4].try_into().unwrap()) as usize;
    }
    let residual = match body[40] {
        0 => false,
        1 => true,
        other => {
            return Err(KanError::BadMagic(format!(
                "residual flag byte {other}, expected 0 or 1"
            )))
        }
    };
    let seed = u64::from_le_bytes(body[41..49].try_into().unwrap());
    let config = MixerConfig {
        patch_size: fields[0],
        n_channels: fields[1],
        n_hiddens: fields[2],
        depth: fields[3],
        n_output: fields[4],
        in_channels: fields[5],
        image_h: fields[6],
        image_w: fields[7],
        spline_order: fields[8],
        grid_size: fields[9],
        residual,
        seed,
    };
    config.validate()?;
    let mut model = KanMixerModel::new(config)?;
    let params = &body[CONFIG_BYTES..];
    let expected = model.param_count() * 4;
    if params.len() != expected {
        return Err(KanError::TruncatedFile(format!(
            "checkpoint has {} parameter bytes, expected {expected}",
            params.len()
        )));
    }
    let mut offset = 0;
    model.visit_params_mut(&mut |_, t| {
        for v in t.data.iter_mut() {
            *v = f32::from_le_bytes(params[offset..offset + 4].try_into().unwrap()) as f64;
            offset += 4;
        }
    });
    Ok(model)
}

pub fn save_model(model: &KanMixerModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("ckpt.tmp");
    fs::write(&tmp, serialize_model(model))?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<KanMixerModel> {
    deserialize_model(&fs::read(path)?)
}
