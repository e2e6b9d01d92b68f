//! Configuration, runs and reports behind the `mfe` binary.

pub mod config;
pub mod run;

pub use config::{load_config, parse_config, parse_damping, CriterionKind, GameConfig, Mode};
pub use run::{run, RunReport};

/// Command-line settings that replace configuration values.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub criterion: Option<CriterionKind>,
    pub mode: Option<Mode>,
    pub beta: Option<f64>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub horizon: Option<usize>,
    pub damping: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<std::path::PathBuf>,
}

impl Overrides {
    /// Call before [`GameConfig::resolve`] so derived defaults follow the
    /// overridden values.
    pub fn apply(&self, cfg: &mut GameConfig) {
        if let Some(c) = self.criterion {
            cfg.criterion = c;
        }
        if let Some(m) = self.mode {
            cfg.solver.mode = m;
        }
        if let Some(b) = self.beta {
            cfg.beta = b;
        }
        if let Some(t) = self.tol {
            cfg.solver.tol_outer = t;
        }
        if let Some(n) = self.max_iter {
            cfg.solver.max_outer = n;
        }
        if let Some(h) = self.horizon {
            cfg.solver.horizon = Some(h);
        }
        if let Some(d) = &self.damping {
            cfg.solver.damping = d.clone();
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.output.dir = o.clone();
        }
    }
}

/// Process exit status for a finished run.
pub fn exit_code(report: &RunReport) -> i32 {
    match (&report.error, report.converged) {
        (Some(_), _) => 1,
        (None, true) => 0,
        (None, false) => 2,
    }
}
