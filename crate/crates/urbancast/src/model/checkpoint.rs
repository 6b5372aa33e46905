//! Binary model checkpoints.
//!
//! Layout: magic "UCGT", version, the model shape (d_model, heads, layers,
//! context_slots, d_k, d_v), alpha, the weighting/renormalize/block flags
//! and d_ff, the label standardization pair, then every parameter as
//! little-endian f64 in flatten order. Loading rebuilds the config from the
//! header and validates the parameter count, so round trips are bit-exact.

use crate::error::{Error, Result};
use crate::model::{AttentionConfig, BlockVariant, ModelParams, TrainedModel, WeightingMode};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"UCGT";
const VERSION: u32 = 1;

fn weighting_code(mode: WeightingMode) -> u8 {
    match mode {
        WeightingMode::Full => 0,
        WeightingMode::SpatialOnly => 1,
        WeightingMode::EntropyOnly => 2,
        WeightingMode::None => 3,
        WeightingMode::Bypass => 4,
    }
}

fn weighting_from_code(code: u8) -> Result<WeightingMode> {
    match code {
        0 => Ok(WeightingMode::Full),
        1 => Ok(WeightingMode::SpatialOnly),
        2 => Ok(WeightingMode::EntropyOnly),
        3 => Ok(WeightingMode::None),
        4 => Ok(WeightingMode::Bypass),
        other => Err(Error::Checkpoint(format!("unknown weighting code {other}"))),
    }
}

pub fn save_checkpoint(model: &TrainedModel, path: &Path) -> Result<()> {
    let cfg = &model.cfg;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for dim in [cfg.d_model, cfg.heads, cfg.layers, cfg.context_slots, cfg.d_k, cfg.d_v] {
        out.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    out.extend_from_slice(&cfg.alpha.to_le_bytes());
    out.push(weighting_code(cfg.weighting));
    out.push(cfg.renormalize as u8);
    out.push(match cfg.block {
        BlockVariant::Residual => 0,
        BlockVariant::PreNormFfn => 1,
    });
    out.extend_from_slice(&(cfg.d_ff as u32).to_le_bytes());
    out.extend_from_slice(&model.label_mean.to_le_bytes());
    out.extend_from_slice(&model.label_std.to_le_bytes());
    let flat = model.params.flatten();
    out.extend_from_slice(&(flat.len() as u64).to_le_bytes());
    for v in flat {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&out)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<TrainedModel> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut cursor = 0usize;
    let take = |cursor: &mut usize, n: usize| -> Result<&[u8]> {
        if *cursor + n > bytes.len() {
            return Err(Error::Checkpoint("truncated checkpoint".into()));
        }
        let slice = &bytes[*cursor..*cursor + n];
        *cursor += n;
        Ok(slice)
    };

    if take(&mut cursor, 4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic; not a model checkpoint".into()));
    }
    let version = u32::from_le_bytes(take(&mut cursor, 4)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let mut dims = [0usize; 6];
    for d in &mut dims {
        *d = u32::from_le_bytes(take(&mut cursor, 4)?.try_into().unwrap()) as usize;
    }
    let alpha = f64::from_le_bytes(take(&mut cursor, 8)?.try_into().unwrap());
    let weighting = weighting_from_code(take(&mut cursor, 1)?[0])?;
    let renormalize = match take(&mut cursor, 1)?[0] {
        0 => false,
        1 => true,
        other => return Err(Error::Checkpoint(format!("bad renormalize flag {other}"))),
    };
    let block = match take(&mut cursor, 1)?[0] {
        0 => BlockVariant::Residual,
        1 => BlockVariant::PreNormFfn,
        other => return Err(Error::Checkpoint(format!("bad block variant {other}"))),
    };
    let d_ff = u32::from_le_bytes(take(&mut cursor, 4)?.try_into().unwrap()) as usize;
    let label_mean = f64::from_le_bytes(take(&mut cursor, 8)?.try_into().unwrap());
    let label_std = f64::from_le_bytes(take(&mut cursor, 8)?.try_into().unwrap());
    let count = u64::from_le_bytes(take(&mut cursor, 8)?.try_into().unwrap()) as usize;

    let cfg = AttentionConfig {
        d_model: dims[0],
        heads: dims[1],
        layers: dims[2],
        context_slots: dims[3],
        d_k: dims[4],
        d_v: dims[5],
        alpha,
        weighting,
        renormalize,
        block,
        d_ff,
    };
    cfg.validate().map_err(|e| Error::Checkpoint(format!("header rejected: {e}")))?;
    let mut params = ModelParams::zeros(&cfg).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if count != params.n_params() {
        return Err(Error::Checkpoint(format!(
            "header declares {count} parameters but the shape needs {}",
            params.n_params()
        )));
    }
    if bytes.len() - cursor != count * 8 {
        return Err(Error::Checkpoint(format!(
            "expected {} parameter bytes, found {}",
            count * 8,
            bytes.len() - cursor
        )));
    }
    let flat: Vec<f64> = bytes[cursor..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    params.assign_from_flat(&flat).map_err(|e| Error::Checkpoint(e.to_string()))?;
    Ok(TrainedModel { params, cfg, label_mean, label_std })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;

    fn model(block: BlockVariant) -> TrainedModel {
        let mut cfg = AttentionConfig::new(8, 2, 2, 5).unwrap();
        cfg.block = block;
        if block == BlockVariant::PreNormFfn {
            cfg.d_ff = 16;
        }
        cfg.weighting = WeightingMode::SpatialOnly;
        cfg.alpha = 0.25;
        TrainedModel {
            params: init_params(&cfg, 77).unwrap(),
            cfg,
            label_mean: 3.5,
            label_std: 1.25,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for block in [BlockVariant::Residual, BlockVariant::PreNormFfn] {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("model.bin");
            let m = model(block);
            save_checkpoint(&m, &path).unwrap();
            let loaded = load_checkpoint(&path).unwrap();
            assert_eq!(loaded.cfg, m.cfg);
            assert_eq!(loaded.label_mean, m.label_mean);
            assert_eq!(loaded.label_std, m.label_std);
            assert_eq!(loaded.params.flatten(), m.params.flatten());
        }
    }

    #[test]
    fn bad_magic_and_truncation_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        std::fs::write(&path, b"NOPE").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint(_))));

        let m = model(BlockVariant::Residual);
        save_checkpoint(&m, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 9]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint(_))));
    }
}
