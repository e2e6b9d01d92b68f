//! Validate, solve, verify and write outputs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use mfe_core::equilibrium::{self, IterationRecord};
use mfe_core::model::{validate_assumptions_seeded, CheckStatus};
use mfe_core::{Criterion, GameModel};
use serde::Serialize;

use crate::config::{GameConfig, Mode, Tail};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckSummary {
    pub name: String,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationSummary {
    pub reward_bound: f64,
    pub weight_factor: f64,
    pub growth_factor: f64,
    pub moment_bound: f64,
    pub exact: bool,
    pub passed: bool,
    pub checks: Vec<CheckSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verification {
    pub tol: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta_residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub consistency_residual: Option<f64>,
    pub psi_residual: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationaryPopulation {
    pub population: usize,
    /// Invariant state distribution.
    pub mu: Vec<f64>,
    /// State-action measure over the feasible pairs, state-major.
    pub tau: Vec<f64>,
    /// Action probabilities per state over its feasible actions.
    pub policy: Vec<Vec<f64>>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationaryOutput {
    pub theta_residual: f64,
    pub psi_residual: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transformed_discount: Option<f64>,
    pub populations: Vec<StationaryPopulation>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarkovPopulation {
    pub population: usize,
    /// `mu_0 .. mu_T`.
    pub mu: Vec<Vec<f64>>,
    pub policy: Vec<Vec<Vec<f64>>>,
    pub values: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarkovOutput {
    pub horizon: usize,
    pub consistency_residual: f64,
    pub psi_residual: f64,
    pub populations: Vec<MarkovPopulation>,
}

/// Everything a run produces except wall time, which would break
/// byte-identical reports.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    /// The configuration with every default resolved.
    pub config: GameConfig,
    pub validation: Option<ValidationSummary>,
    /// Solver converged and the independent verification passed.
    pub converged: bool,
    pub solver_converged: bool,
    pub iterations: usize,
    pub exploitability: Option<f64>,
    pub verification: Option<Verification>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stationary: Option<StationaryOutput>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub markov: Option<MarkovOutput>,
    pub error: Option<String>,
    #[serde(skip)]
    pub trace: Vec<IterationRecord>,
}

impl RunReport {
    fn failed(config: GameConfig, validation: Option<ValidationSummary>, err: impl std::fmt::Display) -> Self {
        Self {
            config,
            validation,
            converged: false,
            solver_converged: false,
            iterations: 0,
            exploitability: None,
            verification: None,
            stationary: None,
            markov: None,
            error: Some(err.to_string()),
            trace: Vec::new(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialises");
        s.push('\n');
        s
    }

    pub fn trace_csv(&self) -> String {
        let mut out = String::from("iter,exploitability,l1_change,theta_residual\n");
        for r in &self.trace {
            let _ = writeln!(out, "{},{:e},{:e},{:e}", r.iter, r.exploitability, r.l1_change, r.theta_residual);
        }
        out
    }

    /// Writes the report and trace into `dir`, returning their paths.
    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let report = dir.join(&self.config.output.report);
        let trace = dir.join(&self.config.output.trace);
        std::fs::write(&report, self.to_json()).with_context(|| format!("writing {}", report.display()))?;
        std::fs::write(&trace, self.trace_csv()).with_context(|| format!("writing {}", trace.display()))?;
        Ok((report, trace))
    }
}

fn summarise(model: &GameModel, criterion: Criterion, seed: u64) -> mfe_core::Result<ValidationSummary> {
    let v = validate_assumptions_seeded(model, criterion, seed)?;
    Ok(ValidationSummary {
        reward_bound: v.reward_bound,
        weight_factor: v.weight_factor,
        growth_factor: v.growth_factor,
        moment_bound: v.moment_bound,
        exact: v.exact,
        passed: v.passed(),
        checks: v
            .checks
            .iter()
            .map(|c| CheckSummary {
                name: c.name.to_string(),
                status: match c.status {
                    CheckStatus::Pass => "pass",
                    CheckStatus::Fail => "fail",
                    CheckStatus::Assumed => "assumed",
                }
                .to_string(),
                witness: c.witness.clone(),
            })
            .collect(),
    })
}

/// Runs a resolved configuration. Model and solver errors end up in the
/// report with `converged = false`.
pub fn run(config: &GameConfig) -> RunReport {
    let mut config = config.clone();
    let (model, criterion) = match config.build_model().and_then(|m| Ok((m, config.criterion()?))) {
        Ok(x) => x,
        Err(e) => return RunReport::failed(config, None, format!("{e:#}")),
    };
    let validation = match summarise(&model, criterion, config.seed) {
        Ok(v) => v,
        Err(e) => return RunReport::failed(config, None, e),
    };
    let result = match config.solver.mode {
        Mode::Stationary => solve_stationary(&config, &model, criterion),
        Mode::Markov => solve_markov(&mut config, &model, criterion),
    };
    match result {
        Ok(mut report) => {
            report.config = config;
            report.validation = Some(validation);
            report
        }
        Err(e) => RunReport::failed(config, Some(validation), format!("{e:#}")),
    }
}

fn solve_stationary(config: &GameConfig, model: &GameModel, criterion: Criterion) -> Result<RunReport> {
    let mut opts = config.solver_options()?;
    if config.solver.start.is_some() {
        opts.start = Some(config.global_state(model, config.solver.start.as_ref())?);
    }
    let res = equilibrium::stationary_mfe(model, criterion, &opts)?;
    let tol = opts.tol_outer;
    let check = equilibrium::verify_stationary(model, criterion, &res.tau, tol)?;
    let populations = (0..model.num_populations())
        .map(|i| StationaryPopulation {
            population: i,
            mu: res.mu.population(i).to_vec(),
            tau: res.tau.population(i).to_vec(),
            policy: res.policies[i].rows().to_vec(),
            values: res.values[i].values.clone(),
        })
        .collect();
    Ok(RunReport {
        config: config.clone(),
        validation: None,
        converged: res.converged && check.pass,
        solver_converged: res.converged,
        iterations: res.iterations,
        exploitability: Some(res.exploitability),
        verification: Some(Verification {
            tol,
            theta_residual: Some(check.theta_residual),
            consistency_residual: None,
            psi_residual: check.psi_residual,
            pass: check.pass,
        }),
        stationary: Some(StationaryOutput {
            theta_residual: res.theta_residual,
            psi_residual: res.psi_residual,
            transformed_discount: res.transformed_discount,
            populations,
        }),
        markov: None,
        error: None,
        trace: res.trace,
    })
}

fn solve_markov(config: &mut GameConfig, model: &GameModel, criterion: Criterion) -> Result<RunReport> {
    if config.solver.horizon.is_none() {
        config.solver.horizon = Some(equilibrium::default_horizon(model, criterion, config.solver.tol_outer)?);
    }
    if config.solver.initial.is_none() {
        config.solver.initial = Some(
            model
                .populations()
                .iter()
                .map(|p| vec![1.0 / p.num_states() as f64; p.num_states()])
                .collect(),
        );
    }
    let opts = config.solver_options()?;
    let mu0 = config.global_state(model, config.solver.initial.as_ref())?;
    let res = equilibrium::markov_mfe(model, criterion, &mu0, &opts)?;
    let tol = opts.tol_outer;
    let tail = match config.solver.tail {
        Tail::Stationary => mfe_core::TailMode::Stationary,
        Tail::Zero => mfe_core::TailMode::Zero,
    };
    let check = equilibrium::verify_flow(model, criterion, &res.flow, &mu0, tail, tol)?;
    let populations = (0..model.num_populations())
        .map(|i| MarkovPopulation {
            population: i,
            mu: res.states.iter().map(|m| m.population(i).to_vec()).collect(),
            policy: res.policies[i].layers.iter().map(|f| f.rows().to_vec()).collect(),
            values: res.values[i].layers.iter().map(|v| v.values.clone()).collect(),
        })
        .collect();
    Ok(RunReport {
        config: config.clone(),
        validation: None,
        converged: res.converged && check.pass,
        solver_converged: res.converged,
        iterations: res.iterations,
        exploitability: Some(res.exploitability),
        verification: Some(Verification {
            tol,
            theta_residual: None,
            consistency_residual: Some(check.consistency_residual),
            psi_residual: check.psi_residual,
            pass: check.pass,
        }),
        stationary: None,
        markov: Some(MarkovOutput {
            horizon: res.horizon,
            consistency_residual: res.consistency_residual,
            psi_residual: res.psi_residual,
            populations,
        }),
        error: None,
        trace: res.trace,
    })
}
