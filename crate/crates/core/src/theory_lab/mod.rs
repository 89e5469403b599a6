//! Numerical checks of the alignment bounds and the KL fitting demo.

mod discrete;
mod gaussian;
mod gmm;
mod kl_fit;
mod mdp;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub use discrete::{
    dirichlet, kl_discrete, pinsker_check, pinsker_sweep, tv_distance, tv_expectation_check,
    tv_expectation_sweep,
};
pub use gaussian::{
    gaussian_concentration_check, gaussian_kl_mean_bound_check, gaussian_kl_mean_sweep,
    DiagGaussian,
};
pub use gmm::{
    d_epsilon, d_epsilon_uncapped, kl_gmm_gaussian, q_gap_bound_check, q_gap_sweep, GmmSpec,
    KlEstimate, COVERAGE_SLACK,
};
pub use kl_fit::{
    bimodal_target, kl_fit_demo, FitMetric, KlFitConfig, KlFitResult, FIT_SEPARATIONS,
};
pub use mdp::{
    mix_within_kl, return_gap_bound_check, return_gap_sweep, Counterexample, FiniteMdp,
};

use crate::error::Result;

pub const REPORT_HEADER: &str = "check,asserted,passed,trials,violations,empirical,bound,epsilon,delta";

/// Outcome of one check. For sweeps `empirical` and `bound` belong to the
/// trial closest to violating; for coverage checks they are the observed
/// and required coverage.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundReport {
    pub check: String,
    pub asserted: bool,
    pub passed: bool,
    pub trials: usize,
    pub violations: usize,
    pub empirical: f64,
    pub bound: f64,
    pub epsilon: f64,
    pub delta: f64,
}

impl BoundReport {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.check,
            self.asserted,
            self.passed,
            self.trials,
            self.violations,
            self.empirical,
            self.bound,
            self.epsilon,
            self.delta
        )
    }

    /// Counts against the exit status.
    pub fn is_failure(&self) -> bool {
        self.asserted && !self.passed
    }
}

/// Running tally of `value <= scale * bound + tol` over trials.
pub(crate) struct Tally {
    check: String,
    scale: f64,
    tol: f64,
    trials: usize,
    violations: usize,
    worst: Option<(f64, f64)>,
}

impl Tally {
    pub(crate) fn new(check: impl Into<String>, scale: f64, tol: f64) -> Self {
        Self {
            check: check.into(),
            scale,
            tol,
            trials: 0,
            violations: 0,
            worst: None,
        }
    }

    /// Returns true when this trial violates the bound.
    pub(crate) fn record(&mut self, value: f64, bound: f64) -> bool {
        let bound = bound * self.scale;
        self.trials += 1;
        let violated = !(value <= bound + self.tol);
        if violated {
            self.violations += 1;
        }
        let slack = value - bound;
        match self.worst {
            Some((v, b)) if v - b >= slack => {}
            _ => self.worst = Some((value, bound)),
        }
        violated
    }

    pub(crate) fn finish(self, epsilon: f64, delta: f64) -> BoundReport {
        let (empirical, bound) = self.worst.unwrap_or((0.0, 0.0));
        BoundReport {
            check: self.check,
            asserted: true,
            passed: self.violations == 0,
            trials: self.trials,
            violations: self.violations,
            empirical,
            bound,
            epsilon,
            delta,
        }
    }
}

#[derive(Clone, Debug)]
pub struct VerifyConfig {
    pub seed: u64,
    pub lemma_trials: usize,
    pub mdp_trials: usize,
    pub epsilons: Vec<f64>,
    pub gamma: f64,
    pub r_max: f64,
    pub q_instances: usize,
    pub q_samples: usize,
    pub delta: f64,
    pub concentration_samples: usize,
    pub fit_seeds: usize,
    pub fit: KlFitConfig,
    /// Multiplies every asserted bound; values below 1 exercise the failure path.
    pub bound_scale: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            lemma_trials: 1000,
            mdp_trials: 200,
            epsilons: vec![0.0, 0.005, 0.02, 0.08],
            gamma: 0.9,
            r_max: 1.0,
            q_instances: 100,
            q_samples: 10_000,
            delta: 0.1,
            concentration_samples: 100_000,
            fit_seeds: 5,
            fit: KlFitConfig::default(),
            bound_scale: 1.0,
        }
    }
}

pub struct VerifyOutput {
    pub reports: Vec<BoundReport>,
    pub counterexamples: Vec<Counterexample>,
    pub fits: Vec<(FitMetric, u64, KlFitResult)>,
}

impl VerifyOutput {
    pub fn failures(&self) -> usize {
        self.reports.iter().filter(|r| r.is_failure()).count()
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{REPORT_HEADER}\n");
        for r in &self.reports {
            s.push_str(&r.to_csv());
            s.push('\n');
        }
        s
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        for r in &self.reports {
            let status = match (r.asserted, r.passed) {
                (true, true) => "PASS",
                (true, false) => "FAIL",
                (false, _) => "REPORT",
            };
            let _ = writeln!(
                s,
                "{status:6} {:40} trials={} violations={} empirical={:.6} bound={:.6}",
                r.check, r.trials, r.violations, r.empirical, r.bound
            );
        }
        let _ = writeln!(
            s,
            "{} checks, {} asserted failures, {} counterexamples",
            self.reports.len(),
            self.failures(),
            self.counterexamples.len()
        );
        s
    }

    /// Writes `reports.csv`, `summary.txt`, the fit traces and any
    /// counterexample dumps under `dir`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let mut put = |name: String, text: String| -> Result<()> {
            let p = dir.join(name);
            std::fs::write(&p, text)?;
            written.push(p);
            Ok(())
        };
        put("reports.csv".into(), self.to_csv())?;
        put("summary.txt".into(), self.summary())?;
        for (metric, seed, fit) in &self.fits {
            put(
                format!("kl_fit_{}_seed{seed}.csv", metric.name()),
                fit.trace_csv(),
            )?;
        }
        for (i, c) in self.counterexamples.iter().enumerate() {
            put(format!("counterexample_{i:03}.txt"), c.to_text())?;
        }
        Ok(written)
    }
}

/// Runs every check with per-check seeds derived from `cfg.seed`.
pub fn run_all(cfg: &VerifyConfig) -> Result<VerifyOutput> {
    let s = cfg.seed;
    let scale = cfg.bound_scale;
    let mut reports = vec![
        pinsker_sweep(cfg.lemma_trials, s.wrapping_add(1), scale),
        tv_expectation_sweep(cfg.lemma_trials, s.wrapping_add(2), scale),
        gaussian_kl_mean_sweep(cfg.lemma_trials, s.wrapping_add(3), scale),
    ];
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(s.wrapping_add(4));
    for std in [vec![1.0], vec![0.3], vec![1.0, 1.0, 1.0, 1.0]] {
        for delta in [0.05, cfg.delta] {
            reports.push(gaussian_concentration_check(
                &std,
                delta,
                cfg.concentration_samples,
                scale,
                &mut rng,
            )?);
        }
    }
    let (t1, counterexamples) = return_gap_sweep(
        cfg.mdp_trials,
        &cfg.epsilons,
        cfg.gamma,
        cfg.r_max,
        s.wrapping_add(5),
        scale,
    )?;
    reports.extend(t1);
    reports.push(q_gap_sweep(
        cfg.q_instances,
        cfg.q_samples,
        cfg.delta,
        s.wrapping_add(6),
        scale,
    )?);
    let (fit_reports, fits) = kl_fit::fit_checks(cfg.fit_seeds, &cfg.fit, s.wrapping_add(7))?;
    reports.extend(fit_reports);
    Ok(VerifyOutput {
        reports,
        counterexamples,
        fits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tally_tracks_worst_trial() {
        let mut t = Tally::new("x", 1.0, 0.0);
        assert!(!t.record(0.1, 1.0));
        assert!(!t.record(0.9, 1.0));
        assert!(t.record(2.0, 1.5));
        let r = t.finish(0.0, 0.0);
        assert_eq!((r.trials, r.violations), (3, 1));
        assert_eq!((r.empirical, r.bound), (2.0, 1.5));
        assert!(r.is_failure());
        let empty = Tally::new("e", 1.0, 0.0).finish(0.0, 0.0);
        assert!(empty.passed);
    }

    #[test]
    fn report_csv_matches_header() {
        let r = Tally::new("a", 1.0, 0.0).finish(0.5, 0.1);
        assert_eq!(
            r.to_csv().split(',').count(),
            REPORT_HEADER.split(',').count()
        );
    }
}
