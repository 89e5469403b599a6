use std::fmt::Write as _;
use std::path::Path;

use crate::error::Result;
use crate::policy::{AlignMetric, WeightMode};
use crate::trainer::{self, RunPaths, TrainConfig, METRICS_HEADER};

pub const LAMBDA_SCALES: [f64; 3] = [0.1, 1.0, 10.0];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AblationCell {
    pub align_metric: AlignMetric,
    pub weight_mode: WeightMode,
    pub lambda_scale: f64,
}

impl AblationCell {
    pub fn metric_name(&self) -> &'static str {
        match self.align_metric {
            AlignMetric::ForwardKL => "forward_kl",
            AlignMetric::ReverseKLSurrogate => "reverse_kl",
        }
    }

    pub fn weight_name(&self) -> &'static str {
        match self.weight_mode {
            WeightMode::SoftQ => "softq",
            WeightMode::Uniform => "uniform",
        }
    }

    pub fn name(&self) -> String {
        format!("{}_{}_x{}", self.metric_name(), self.weight_name(), self.lambda_scale)
    }

    pub fn apply(&self, cfg: &mut TrainConfig) {
        cfg.align_metric = self.align_metric;
        cfg.weight_mode = self.weight_mode;
        cfg.lambda_scale = self.lambda_scale;
    }
}

/// Metric x weight x lambda scale, 2 x 2 x 3 cells.
pub fn ablation_cells() -> Vec<AblationCell> {
    let mut cells = Vec::new();
    for align_metric in [AlignMetric::ForwardKL, AlignMetric::ReverseKLSurrogate] {
        for weight_mode in [WeightMode::SoftQ, WeightMode::Uniform] {
            for lambda_scale in LAMBDA_SCALES {
                cells.push(AblationCell {
                    align_metric,
                    weight_mode,
                    lambda_scale,
                });
            }
        }
    }
    cells
}

#[derive(Clone, Debug)]
pub struct CellResult {
    pub cell: AblationCell,
    pub seeds: Vec<u64>,
    pub final_eval: Vec<f64>,
}

impl CellResult {
    pub fn mean(&self) -> f64 {
        self.final_eval.iter().sum::<f64>() / self.final_eval.len().max(1) as f64
    }

    /// Sample standard deviation; 0 for a single seed.
    pub fn std(&self) -> f64 {
        let n = self.final_eval.len();
        if n < 2 {
            return 0.0;
        }
        let m = self.mean();
        (self.final_eval.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64).sqrt()
    }
}

/// Runs every cell over the same seeds. Each run lands in
/// `out/<cell>/seed<k>/`; `out/<cell>.csv` holds the cell's rows with a
/// leading seed column, and `out/summary.csv` ranks cells by mean final eval.
pub fn run_ablation(
    base: &TrainConfig,
    seeds: &[u64],
    out: &Path,
    mut progress: impl FnMut(&AblationCell, u64),
) -> Result<Vec<CellResult>> {
    let mut results = Vec::new();
    for cell in ablation_cells() {
        let mut csv = format!("seed,{METRICS_HEADER}\n");
        let mut finals = Vec::new();
        for &seed in seeds {
            progress(&cell, seed);
            let mut cfg = base.clone();
            cell.apply(&mut cfg);
            cfg.seed = seed;
            let dir = out.join(cell.name()).join(format!("seed{seed}"));
            std::fs::create_dir_all(&dir)?;
            std::fs::write(dir.join("config.txt"), cfg.to_text())?;
            let summary = trainer::run(cfg, &RunPaths::in_dir(&dir))?;
            for row in &summary.rows {
                let _ = writeln!(csv, "{seed},{}", row.to_csv());
            }
            finals.push(summary.final_eval_return);
        }
        std::fs::write(out.join(format!("{}.csv", cell.name())), csv)?;
        results.push(CellResult {
            cell,
            seeds: seeds.to_vec(),
            final_eval: finals,
        });
    }
    let ranked = rank(&results);
    std::fs::write(out.join("summary.csv"), summary_csv(&ranked))?;
    std::fs::write(out.join("summary.txt"), summary_text(&results))?;
    Ok(results)
}

/// Best mean final eval first; ties keep matrix order.
fn rank(results: &[CellResult]) -> Vec<&CellResult> {
    let mut r: Vec<&CellResult> = results.iter().collect();
    r.sort_by(|a, b| b.mean().total_cmp(&a.mean()));
    r
}

fn summary_csv(ranked: &[&CellResult]) -> String {
    let mut s = String::from(
        "rank,cell,align_metric,weight_mode,lambda_scale,final_eval_mean,final_eval_std,seeds\n",
    );
    for (i, r) in ranked.iter().enumerate() {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            i + 1,
            r.cell.name(),
            r.cell.metric_name(),
            r.cell.weight_name(),
            r.cell.lambda_scale,
            r.mean(),
            r.std(),
            r.seeds.len()
        );
    }
    s
}

pub fn summary_text(results: &[CellResult]) -> String {
    let mut s = String::new();
    for (i, r) in rank(results).iter().enumerate() {
        let _ = writeln!(
            s,
            "{:2}. {:28} final eval {:10.3} +- {:.3} over {} seeds",
            i + 1,
            r.cell.name(),
            r.mean(),
            r.std(),
            r.seeds.len()
        );
    }
    s
}
