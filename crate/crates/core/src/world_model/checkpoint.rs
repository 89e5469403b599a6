use std::io::{Read, Write};

use super::{BinSpec, BinTransform, WorldModel, WorldModelConfig, WorldModelParams};
use crate::approximator::{read_spec, read_u64, write_spec, ParamSet};
use crate::error::{BoomError, Result};

const MAGIC: &[u8; 8] = b"BOOMWM01";
const VERSION: u64 = 1;

fn io_err(e: std::io::Error) -> BoomError {
    BoomError::Checkpoint(e.to_string())
}

pub(crate) fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    Ok(f64::from_bits(read_u64(r)?))
}

impl WorldModel {
    /// Header (magic, version, bins, ensemble size, network specs) followed
    /// by every parameter set.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let b = &self.config.bins;
        let transform = match b.transform {
            BinTransform::Linear => 0u64,
            BinTransform::SymLog => 1,
        };
        let mut header = Vec::new();
        header.extend_from_slice(MAGIC);
        for v in [VERSION, b.num_bins as u64] {
            header.extend_from_slice(&v.to_le_bytes());
        }
        header.extend_from_slice(&b.v_min.to_le_bytes());
        header.extend_from_slice(&b.v_max.to_le_bytes());
        header.extend_from_slice(&transform.to_le_bytes());
        header.extend_from_slice(&(self.params.q_ensemble.len() as u64).to_le_bytes());
        w.write_all(&header).map_err(io_err)?;
        for spec in [&self.encoder_spec, &self.dynamics_spec, &self.reward_spec, &self.q_spec] {
            write_spec(spec, w).map_err(io_err)?;
        }
        let p = &self.params;
        let all = [&p.encoder, &p.dynamics, &p.reward_head]
            .into_iter()
            .chain(p.q_ensemble.iter())
            .chain(p.q_target_ensemble.iter());
        for set in all {
            set.write_to(w).map_err(io_err)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(io_err)?;
        if &magic != MAGIC {
            return Err(BoomError::Checkpoint("not a world model checkpoint".into()));
        }
        let version = read_u64(r)?;
        if version != VERSION {
            return Err(BoomError::Checkpoint(format!("unsupported version {version}")));
        }
        let num_bins = read_u64(r)? as usize;
        let v_min = read_f64(r)?;
        let v_max = read_f64(r)?;
        let transform = match read_u64(r)? {
            0 => BinTransform::Linear,
            1 => BinTransform::SymLog,
            other => return Err(BoomError::Checkpoint(format!("unknown transform {other}"))),
        };
        let bins = BinSpec::new(num_bins, v_min, v_max, transform)?;
        let num_q = read_u64(r)? as usize;
        let encoder_spec = read_spec(r)?;
        let dynamics_spec = read_spec(r)?;
        let reward_spec = read_spec(r)?;
        let q_spec = read_spec(r)?;
        let latent_dim = encoder_spec.output_dim;
        let config = WorldModelConfig {
            obs_dim: encoder_spec.input_dim,
            action_dim: dynamics_spec.input_dim.saturating_sub(latent_dim),
            latent_dim,
            encoder_hidden: encoder_spec.hidden_dims.clone(),
            hidden: dynamics_spec.hidden_dims.clone(),
            num_q,
            bins,
            q_dropout: q_spec.dropout_rate,
            layer_norm: encoder_spec.layer_norm,
            activation: encoder_spec.activation,
        };
        let mut read = |spec: &crate::approximator::MlpSpec| -> Result<ParamSet> {
            let p = ParamSet::read_from(r)?;
            p.check_spec(spec)?;
            Ok(p)
        };
        let encoder = read(&encoder_spec)?;
        let dynamics = read(&dynamics_spec)?;
        let reward_head = read(&reward_spec)?;
        let q_ensemble = (0..num_q).map(|_| read(&q_spec)).collect::<Result<Vec<_>>>()?;
        let q_target_ensemble = (0..num_q).map(|_| read(&q_spec)).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config,
            encoder_spec,
            dynamics_spec,
            reward_spec,
            q_spec,
            params: WorldModelParams {
                encoder,
                dynamics,
                reward_head,
                q_ensemble,
                q_target_ensemble,
            },
        })
    }
}
