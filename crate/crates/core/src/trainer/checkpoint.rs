use std::io::{Read, Write};
use std::path::Path;

use crate::approximator::{read_u64, ParamSet};
use crate::error::{BoomError, Result};
use crate::policy::{Policy, PolicyConfig};
use crate::world_model::WorldModel;

const MAGIC: &[u8; 8] = b"BOOMCK01";

pub struct Checkpoint {
    pub model: WorldModel,
    pub policy: Policy,
    pub config_text: String,
}

fn write_all<W: Write>(w: &mut W, model: &WorldModel, policy: &Policy, config_text: &str) -> Result<()> {
    w.write_all(MAGIC)?;
    model.write_to(w)?;
    let pc = &policy.config;
    let mut head = Vec::new();
    for v in [pc.latent_dim as u64, pc.action_dim as u64, pc.squash as u64] {
        head.extend_from_slice(&v.to_le_bytes());
    }
    head.extend_from_slice(&pc.log_std_min.to_le_bytes());
    head.extend_from_slice(&pc.log_std_max.to_le_bytes());
    w.write_all(&head)?;
    crate::approximator::write_spec(&policy.spec, w)?;
    policy.params.write_to(w)?;
    w.write_all(&(config_text.len() as u64).to_le_bytes())?;
    w.write_all(config_text.as_bytes())?;
    Ok(())
}

/// World model, policy and config echo, written to a temporary file and
/// renamed into place.
pub fn save_checkpoint(path: &Path, model: &WorldModel, policy: &Policy, config_text: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
        write_all(&mut f, model, policy, config_text)?;
        f.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<Checkpoint> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|e| BoomError::Checkpoint(e.to_string()))?;
    if &magic != MAGIC {
        return Err(BoomError::Checkpoint("not a training checkpoint".into()));
    }
    let model = WorldModel::read_from(r)?;
    let latent_dim = read_u64(r)? as usize;
    let action_dim = read_u64(r)? as usize;
    let squash = read_u64(r)? != 0;
    let log_std_min = f64::from_bits(read_u64(r)?);
    let log_std_max = f64::from_bits(read_u64(r)?);
    let spec = crate::approximator::read_spec(r)?;
    let params = ParamSet::read_from(r)?;
    params.check_spec(&spec)?;
    let config = PolicyConfig {
        latent_dim,
        action_dim,
        hidden: spec.hidden_dims.clone(),
        log_std_min,
        log_std_max,
        squash,
        layer_norm: spec.layer_norm,
        activation: spec.activation,
    };
    let n = read_u64(r)? as usize;
    let mut text = vec![0u8; n];
    r.read_exact(&mut text)
        .map_err(|e| BoomError::Checkpoint(e.to_string()))?;
    let config_text =
        String::from_utf8(text).map_err(|e| BoomError::Checkpoint(e.to_string()))?;
    Ok(Checkpoint {
        model,
        policy: Policy {
            config,
            spec,
            params,
        },
        config_text,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_checkpoint(&mut f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world_model::WorldModelConfig;

    #[test]
    fn save_and_load() {
        let mut wc = WorldModelConfig::new(3, 1);
        wc.latent_dim = 4;
        wc.hidden = vec![8];
        wc.encoder_hidden = vec![8];
        let model = WorldModel::new(wc, 3).unwrap();
        let policy = Policy::new(PolicyConfig::new(4, 1, vec![8]), 5);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.bin");
        save_checkpoint(&path, &model, &policy, "seed=3\n").unwrap();
        assert!(!path.with_extension("tmp").exists());
        let ck = load_checkpoint(&path).unwrap();
        assert_eq!(ck.model.params, model.params);
        assert_eq!(ck.policy.params, policy.params);
        assert_eq!(ck.policy.config, policy.config);
        assert_eq!(ck.config_text, "seed=3\n");
    }
}
