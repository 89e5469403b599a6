use std::fs::File;
use std::io::Write;
use std::path::Path;

use crate::error::Result;

pub const METRICS_HEADER: &str = "env_step,episode_return,eval_return,model_loss,policy_loss,\
alignment_loss,q_mean,planner_elite_return_mean,model_grad_norm,policy_grad_norm,\
model_loss_scale,q_scale";

/// One metrics CSV row. Wall-clock time lives in a separate timing file so
/// the metrics stay reproducible.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsRow {
    pub env_step: usize,
    pub episode_return: f64,
    pub eval_return: f64,
    pub model_loss: f64,
    pub policy_loss: f64,
    pub alignment_loss: f64,
    pub q_mean: f64,
    pub planner_elite_return_mean: f64,
    pub model_grad_norm: f64,
    pub policy_grad_norm: f64,
    pub model_loss_scale: f64,
    pub q_scale: f64,
}

impl MetricsRow {
    pub fn diagnostic(env_step: usize) -> Self {
        Self {
            env_step,
            episode_return: f64::NAN,
            eval_return: f64::NAN,
            model_loss: f64::NAN,
            policy_loss: f64::NAN,
            alignment_loss: f64::NAN,
            q_mean: f64::NAN,
            planner_elite_return_mean: f64::NAN,
            model_grad_norm: f64::NAN,
            policy_grad_norm: f64::NAN,
            model_loss_scale: f64::NAN,
            q_scale: f64::NAN,
        }
    }

    /// Every column after `env_step`, in header order.
    pub fn values(&self) -> [f64; 11] {
        [
            self.episode_return,
            self.eval_return,
            self.model_loss,
            self.policy_loss,
            self.alignment_loss,
            self.q_mean,
            self.planner_elite_return_mean,
            self.model_grad_norm,
            self.policy_grad_norm,
            self.model_loss_scale,
            self.q_scale,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.values().iter().all(|v| v.is_finite())
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.env_step.to_string();
        for v in self.values() {
            s.push(',');
            s.push_str(&v.to_string());
        }
        s
    }

    pub fn from_csv(line: &str) -> Option<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 12 {
            return None;
        }
        let v: Vec<f64> = f[1..].iter().map(|x| x.parse().ok()).collect::<Option<_>>()?;
        Some(Self {
            env_step: f[0].parse().ok()?,
            episode_return: v[0],
            eval_return: v[1],
            model_loss: v[2],
            policy_loss: v[3],
            alignment_loss: v[4],
            q_mean: v[5],
            planner_elite_return_mean: v[6],
            model_grad_norm: v[7],
            policy_grad_norm: v[8],
            model_loss_scale: v[9],
            q_scale: v[10],
        })
    }
}

/// Appends whole lines, flushing after each row.
pub struct MetricsWriter {
    metrics: Option<File>,
    timing: Option<File>,
}

impl MetricsWriter {
    pub fn create(metrics: Option<&Path>, timing: Option<&Path>) -> Result<Self> {
        let open = |p: Option<&Path>, header: &str| -> Result<Option<File>> {
            match p {
                Some(p) => {
                    let mut f = File::create(p)?;
                    f.write_all(format!("{header}\n").as_bytes())?;
                    Ok(Some(f))
                }
                None => Ok(None),
            }
        };
        Ok(Self {
            metrics: open(metrics, METRICS_HEADER)?,
            timing: open(timing, "env_step,wall_clock")?,
        })
    }

    pub fn write(&mut self, row: &MetricsRow, wall_clock: f64) -> Result<()> {
        if let Some(f) = self.metrics.as_mut() {
            f.write_all(format!("{}\n", row.to_csv()).as_bytes())?;
            f.flush()?;
        }
        if let Some(f) = self.timing.as_mut() {
            f.write_all(format!("{},{wall_clock:.3}\n", row.env_step).as_bytes())?;
            f.flush()?;
        }
        Ok(())
    }
}

/// Rows of a metrics CSV written by `MetricsWriter`.
pub fn read_metrics(text: &str) -> Result<Vec<MetricsRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == METRICS_HEADER => {}
        _ => {
            return Err(crate::error::BoomError::Config(
                "metrics file has an unexpected header".into(),
            ))
        }
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            MetricsRow::from_csv(l).ok_or_else(|| {
                crate::error::BoomError::Config(format!("malformed metrics row '{l}'"))
            })
        })
        .collect()
}
