//! JSON game configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use mfe_core::model::{build_tabular_model, STAR};
use mfe_core::{Criterion, Damping, GameModel, GlobalState, PopulationSpec, TabularCoupling, TailMode, WeightFunction};
use serde::{Deserialize, Serialize};

/// A state, action or population given by position or by label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Label {
    Index(usize),
    Name(String),
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Index(i) => write!(f, "{i}"),
            Label::Name(s) => write!(f, "{s:?}"),
        }
    }
}

impl Label {
    fn resolve(&self, names: &[String], what: &str) -> Result<usize> {
        match self {
            Label::Index(i) if *i < names.len() => Ok(*i),
            Label::Index(i) => bail!("{what} index {i} out of range (have {})", names.len()),
            Label::Name(s) => names
                .iter()
                .position(|n| n == s)
                .ok_or_else(|| anyhow!("unknown {what} {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValueEntry {
    pub at: Vec<Label>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RowEntry {
    pub at: Vec<Label>,
    pub row: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub states: Vec<String>,
    pub actions: Vec<String>,
    /// Feasible actions per state label. Missing states get every action
    /// except `star`; the `star` state gets only `star`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feasible: Option<BTreeMap<String, Vec<Label>>>,
    /// Defaults to 1 everywhere.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<Vec<f64>>,
    /// Base rewards, `at: [state, action]`. Unlisted pairs earn 0.
    #[serde(default)]
    pub rewards: Vec<ValueEntry>,
    /// Base transition rows, `at: [state, action]`, one per feasible pair.
    #[serde(default)]
    pub transitions: Vec<RowEntry>,
    /// Mixing weights towards the coupled kernel, `at: [state, action]`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub mix: Vec<ValueEntry>,
}

/// Entry coupling population `populations[0]` at `at[0..2]` to population
/// `populations[1]` at `at[2..4]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingValue {
    pub populations: [Label; 2],
    pub at: Vec<Label>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingRow {
    pub populations: [Label; 2],
    pub at: Vec<Label>,
    pub row: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingConfig {
    #[serde(default)]
    pub reward: Vec<CouplingValue>,
    #[serde(default)]
    pub transition: Vec<CouplingRow>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum CriterionKind {
    #[default]
    Discounted,
    Total,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Stationary,
    Markov,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tail {
    #[default]
    Stationary,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default)]
    pub mode: Mode,
    /// `fp` for fictitious play or `fixed:F`.
    #[serde(default = "default_damping")]
    pub damping: String,
    #[serde(default = "default_tol_outer")]
    pub tol_outer: f64,
    /// Defaults to `tol_outer / 1000`.
    #[serde(default)]
    pub tol_inner: Option<f64>,
    #[serde(default = "default_max_outer")]
    pub max_outer: usize,
    #[serde(default = "default_max_inner")]
    pub max_inner: usize,
    /// Markov horizon; derived from the tail bound when absent.
    #[serde(default)]
    pub horizon: Option<usize>,
    /// Start of the stationary iteration, one state distribution per population.
    #[serde(default)]
    pub start: Option<Vec<Vec<f64>>>,
    /// Initial state of the Markov flow; uniform when absent.
    #[serde(default)]
    pub initial: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub tail: Tail,
    #[serde(default)]
    pub strict: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            mode: Mode::default(),
            damping: default_damping(),
            tol_outer: default_tol_outer(),
            tol_inner: None,
            max_outer: default_max_outer(),
            max_inner: default_max_inner(),
            horizon: None,
            start: None,
            initial: None,
            tail: Tail::default(),
            strict: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Not echoed in reports, so runs into different directories compare equal.
    #[serde(default = "default_dir", skip_serializing)]
    pub dir: PathBuf,
    #[serde(default = "default_report")]
    pub report: String,
    #[serde(default = "default_trace")]
    pub trace: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: default_dir(), report: default_report(), trace: default_trace() }
    }
}

fn default_beta() -> f64 {
    0.95
}
fn default_damping() -> String {
    "fp".into()
}
fn default_tol_outer() -> f64 {
    1e-6
}
fn default_max_outer() -> usize {
    5_000
}
fn default_max_inner() -> usize {
    1_000_000
}
fn default_dir() -> PathBuf {
    PathBuf::from("mfe-out")
}
fn default_report() -> String {
    "report.json".into()
}
fn default_trace() -> String {
    "trace.csv".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameConfig {
    pub populations: Vec<PopulationConfig>,
    #[serde(default)]
    pub coupling: CouplingConfig,
    #[serde(default)]
    pub criterion: CriterionKind,
    /// Ignored under the total criterion.
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: OutputConfig,
}

/// Reads, checks and resolves a configuration file.
pub fn parse_config(path: &Path) -> Result<GameConfig> {
    let mut cfg = load_config(path)?;
    cfg.resolve()?;
    Ok(cfg)
}

/// Reads a configuration file without applying defaults that depend on
/// other fields.
pub fn load_config(path: &Path) -> Result<GameConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    GameConfig::from_json(&text).with_context(|| format!("parsing {}", path.display()))
}

/// `fp` or `fixed:F`.
pub fn parse_damping(s: &str) -> Result<Damping> {
    match s {
        "fp" => Ok(Damping::FictitiousPlay),
        _ => {
            let v = s
                .strip_prefix("fixed:")
                .ok_or_else(|| anyhow!("damping must be `fp` or `fixed:F`, got {s:?}"))?;
            let l: f64 = v.parse().with_context(|| format!("damping step {v:?}"))?;
            if !(l > 0.0 && l <= 1.0) {
                bail!("damping step {l} must lie in (0, 1]");
            }
            Ok(Damping::Fixed(l))
        }
    }
}

impl GameConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Fills derived defaults and checks the game builds.
    pub fn resolve(&mut self) -> Result<()> {
        if self.solver.tol_inner.is_none() {
            self.solver.tol_inner = Some(self.solver.tol_outer * 1e-3);
        }
        for pop in &mut self.populations {
            if pop.feasible.is_none() {
                pop.feasible = Some(default_feasible(pop));
            }
        }
        parse_damping(&self.solver.damping)?;
        self.solver_options()?.check()?;
        self.criterion()?;
        self.build_model()?;
        Ok(())
    }

    pub fn criterion(&self) -> Result<Criterion> {
        let c = match self.criterion {
            CriterionKind::Discounted => Criterion::Discounted { beta: self.beta },
            CriterionKind::Total => Criterion::Total,
        };
        if let Criterion::Discounted { beta } = c {
            if !(beta > 0.0 && beta < 1.0) {
                bail!("beta {beta} must lie in (0, 1)");
            }
        }
        Ok(c)
    }

    pub fn solver_options(&self) -> Result<mfe_core::SolverOptions> {
        let s = &self.solver;
        Ok(mfe_core::SolverOptions {
            damping: parse_damping(&s.damping)?,
            tol_outer: s.tol_outer,
            tol_inner: s.tol_inner.unwrap_or(s.tol_outer * 1e-3),
            max_outer: s.max_outer,
            max_inner: s.max_inner,
            horizon: s.horizon,
            start: None,
            seed: self.seed,
            tail: match s.tail {
                Tail::Stationary => TailMode::Stationary,
                Tail::Zero => TailMode::Zero,
            },
            strict: s.strict,
        })
    }

    /// The global state given by `parts`, or uniform.
    pub fn global_state(&self, model: &GameModel, parts: Option<&Vec<Vec<f64>>>) -> Result<GlobalState> {
        match parts {
            Some(p) => Ok(GlobalState::new(model.populations(), p.clone())?),
            None => Ok(GlobalState::uniform(model.populations())),
        }
    }

    pub fn build_model(&self) -> Result<GameModel> {
        if self.populations.is_empty() {
            bail!("at least one population is required");
        }
        let names: Vec<String> = self
            .populations
            .iter()
            .enumerate()
            .map(|(i, p)| p.name.clone().unwrap_or_else(|| i.to_string()))
            .collect();
        let mut pops = Vec::with_capacity(self.populations.len());
        for (i, p) in self.populations.iter().enumerate() {
            let feasible = match &p.feasible {
                Some(map) => {
                    for key in map.keys() {
                        if !p.states.contains(key) {
                            bail!("population {}: feasible lists unknown state {key:?}", names[i]);
                        }
                    }
                    let defaults = default_feasible(p);
                    p.states
                        .iter()
                        .map(|s| {
                            map.get(s)
                                .unwrap_or(&defaults[s])
                                .iter()
                                .map(|a| a.resolve(&p.actions, "action"))
                                .collect::<Result<Vec<_>>>()
                        })
                        .collect::<Result<Vec<_>>>()?
                }
                None => {
                    let defaults = default_feasible(p);
                    p.states
                        .iter()
                        .map(|s| defaults[s].iter().map(|a| a.resolve(&p.actions, "action")).collect())
                        .collect::<Result<Vec<_>>>()?
                }
            };
            let spec = PopulationSpec::new(i, p.states.clone(), p.actions.clone(), feasible)
                .with_context(|| format!("population {}", names[i]))?;
            pops.push(spec);
        }

        let mut c = TabularCoupling::zeros(&pops);
        for (i, p) in self.populations.iter().enumerate() {
            let ctx = |what: &str| format!("population {} {what}", names[i]);
            for e in &p.rewards {
                let (s, a) = pair(&pops[i], &e.at).with_context(|| ctx("rewards"))?;
                c.set_base_reward(i, s, a, e.value).with_context(|| ctx("rewards"))?;
            }
            for e in &p.transitions {
                let (s, a) = pair(&pops[i], &e.at).with_context(|| ctx("transitions"))?;
                c.set_base_transition(i, s, a, &e.row).with_context(|| ctx("transitions"))?;
            }
            for e in &p.mix {
                let (s, a) = pair(&pops[i], &e.at).with_context(|| ctx("mix"))?;
                c.set_mix(i, s, a, e.value).with_context(|| ctx("mix"))?;
            }
        }
        for e in &self.coupling.reward {
            let (i, j, p, q) = coupling_index(&pops, &names, &e.populations, &e.at).context("reward coupling")?;
            c.set_reward_coupling(i, j, p, q, e.value).context("reward coupling")?;
        }
        for e in &self.coupling.transition {
            let (i, j, p, q) = coupling_index(&pops, &names, &e.populations, &e.at).context("transition coupling")?;
            c.set_transition_kernel(i, j, p, q, &e.row).context("transition coupling")?;
        }

        let weight = if self.populations.iter().all(|p| p.weight.is_none()) {
            WeightFunction::unit(&pops)
        } else {
            WeightFunction::new(
                self.populations
                    .iter()
                    .map(|p| p.weight.clone().unwrap_or_else(|| vec![1.0; p.states.len()]))
                    .collect(),
            )?
        };
        Ok(build_tabular_model(pops, weight, c)?)
    }
}

fn default_feasible(p: &PopulationConfig) -> BTreeMap<String, Vec<Label>> {
    let has_star_action = p.actions.iter().any(|a| a == STAR);
    p.states
        .iter()
        .map(|s| {
            let acts = if s == STAR && has_star_action {
                vec![Label::Name(STAR.into())]
            } else {
                p.actions.iter().filter(|a| *a != STAR).map(|a| Label::Name(a.clone())).collect()
            };
            (s.clone(), acts)
        })
        .collect()
}

fn pair(pop: &PopulationSpec, at: &[Label]) -> Result<(usize, usize)> {
    if at.len() != 2 {
        bail!("`at` needs [state, action], got {} entries", at.len());
    }
    Ok((at[0].resolve(pop.states(), "state")?, at[1].resolve(pop.actions(), "action")?))
}

type CouplingIndex = (usize, usize, (usize, usize), (usize, usize));

fn coupling_index(pops: &[PopulationSpec], names: &[String], populations: &[Label; 2], at: &[Label]) -> Result<CouplingIndex> {
    if at.len() != 4 {
        bail!("`at` needs [state, action, state, action], got {} entries", at.len());
    }
    let i = populations[0].resolve(names, "population")?;
    let j = populations[1].resolve(names, "population")?;
    Ok((i, j, pair(&pops[i], &at[..2])?, pair(&pops[j], &at[2..])?))
}
