//! Scenario files and run configuration.
//!
//! A scenario is a TOML document with the sections `[chain]`, `[field]`,
//! `[initial]` and the optional `[study]`, `[check]` and `[residual]`. Unknown
//! keys are rejected. After loading, every default is written back into the
//! scenario so that the manifest emitted with each run is a complete,
//! reloadable description of the experiment.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use switchavg::montecarlo::{DEFAULT_DELTAS, DEFAULT_LEVEL_FACTORS};
use switchavg::{ExperimentSpec, FieldKind, GeneratorMatrix, VelocityField};

use crate::error::{CliError, Result};

pub const DEFAULT_HORIZON: f64 = 1.0;
pub const DEFAULT_EPSILONS: [f64; 3] = [0.1, 0.01, 0.001];
pub const DEFAULT_PATHS: usize = 2000;
pub const DEFAULT_SEED: u64 = 0;
pub const DEFAULT_MAX_STEP: f64 = 0.01;
pub const DEFAULT_CHECK_RADIUS: f64 = 10.0;
pub const DEFAULT_CHECK_POINTS: usize = 201;
pub const DEFAULT_RESIDUAL_RANGE: (f64, f64) = (-10.0, 10.0);
pub const DEFAULT_RESIDUAL_POINTS: usize = 201;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub chain: ChainSection,
    pub field: FieldSection,
    pub initial: InitialSection,
    #[serde(default)]
    pub study: StudySection,
    #[serde(default)]
    pub check: CheckSection,
    #[serde(default)]
    pub residual: ResidualSection,
    /// Run metadata written into manifests; ignored when loading.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<toml::Table>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
    /// Exit rate of each state.
    pub rates: Vec<f64>,
    /// Jump kernel rows, zero diagonal.
    pub jump: Vec<Vec<f64>>,
    /// Label of the starting state.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_state: Option<String>,
}

/// Per-state coefficients: one number per state for a scalar field, or one
/// array per state for a vector field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Coefficients {
    Scalar(Vec<f64>),
    Vector(Vec<Vec<f64>>),
}

impl Coefficients {
    fn rows(&self) -> Vec<Vec<f64>> {
        match self {
            Coefficients::Scalar(v) => v.iter().map(|&a| vec![a]).collect(),
            Coefficients::Vector(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSection {
    /// One of `constant`, `linear`, `bounded-trig`, `logistic`.
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Coefficients>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<Coefficients>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<Coefficients>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<Coefficients>,
    /// Growth constant checked against the sampled field.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub growth: Option<f64>,
    /// Lipschitz constant checked against the sampled field.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lipschitz: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Point {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl Point {
    fn to_vec(&self) -> Vec<f64> {
        match self {
            Point::Scalar(u) => vec![*u],
            Point::Vector(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    pub u0: Point,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paths: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Largest integrator step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_step: Option<f64>,
    /// Thresholds for `P(D > delta)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deltas: Option<Vec<f64>>,
    /// Levels for `P(sup |u| > c)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allow_uncertified: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckSection {
    /// `[lo, hi]` per component of `u`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResidualSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<usize>,
    /// Polynomial test function, ascending coefficients.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<Vec<f64>>,
}

/// Values given on the command line; they replace the scenario's.
#[derive(Debug, Clone, Default, PartialEq, Args)]
pub struct Overrides {
    /// Comma-separated list of time-scale parameters.
    #[arg(long, value_delimiter = ',')]
    pub epsilon: Option<Vec<f64>>,
    /// Paths per epsilon.
    #[arg(long)]
    pub paths: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Largest integrator step.
    #[arg(long)]
    pub max_step: Option<f64>,
    /// Run even if the field fails the condition checks; output is marked uncertified.
    #[arg(long)]
    pub allow_uncertified: bool,
}

/// The objects a scenario describes.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub spec: ExperimentSpec,
    pub residual_grid: Vec<f64>,
    pub phi: Vec<f64>,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut s: Scenario = toml::from_str(text).map_err(|e| CliError::Config(format!("scenario: {e}")))?;
        s.manifest = None;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes to TOML")
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(e) = &o.epsilon {
            self.study.epsilon = Some(e.clone());
        }
        if let Some(n) = o.paths {
            self.study.paths = Some(n);
        }
        if let Some(s) = o.seed {
            self.study.seed = Some(s);
        }
        if let Some(h) = o.max_step {
            self.study.max_step = Some(h);
        }
        if o.allow_uncertified {
            self.study.allow_uncertified = Some(true);
        }
    }

    /// Fills in every default, then validates the result.
    pub fn materialize(&mut self) -> Result<Resolved> {
        let n = self.chain.rates.len();
        let labels =
            self.chain.labels.get_or_insert_with(|| (1..=n).map(|i| format!("s{i}")).collect()).clone();
        if self.chain.initial_state.is_none() {
            self.chain.initial_state = labels.first().cloned();
        }
        let generator = self.generator()?;
        let mut field = self.velocity_field()?;
        if self.field.kind != FieldKind::Constant.name() && self.field.c.is_none() {
            let zeros = vec![0.0; field.dim()];
            self.field.c = Some(if field.dim() == 1 {
                Coefficients::Scalar(vec![0.0; field.n_states()])
            } else {
                Coefficients::Vector(vec![zeros; field.n_states()])
            });
        }
        self.field.growth = self.field.growth.or(field.growth_constant());
        self.field.lipschitz = self.field.lipschitz.or(field.lipschitz_constant());
        field = field.with_declared(self.field.growth, self.field.lipschitz);

        let u0 = self.initial.u0.to_vec();
        let scale = u0.iter().map(|a| a * a).sum::<f64>().sqrt() + 1.0;
        let st = &mut self.study;
        let horizon = *st.horizon.get_or_insert(DEFAULT_HORIZON);
        let epsilons = st.epsilon.get_or_insert_with(|| DEFAULT_EPSILONS.to_vec()).clone();
        let paths = *st.paths.get_or_insert(DEFAULT_PATHS);
        let seed = *st.seed.get_or_insert(DEFAULT_SEED);
        if seed > i64::MAX as u64 {
            return Err(CliError::Config(format!("study.seed: must be at most {}, got {seed}", i64::MAX)));
        }
        let max_step = *st.max_step.get_or_insert(DEFAULT_MAX_STEP);
        let deltas = st.deltas.get_or_insert_with(|| DEFAULT_DELTAS.to_vec()).clone();
        let levels = st
            .levels
            .get_or_insert_with(|| DEFAULT_LEVEL_FACTORS.iter().map(|f| f * scale).collect())
            .clone();
        let allow_uncertified = *st.allow_uncertified.get_or_insert(false);

        let region = self
            .check
            .region
            .get_or_insert_with(|| {
                u0.iter().map(|&u| [u - DEFAULT_CHECK_RADIUS, u + DEFAULT_CHECK_RADIUS]).collect()
            })
            .clone();
        let check_points = *self.check.points.get_or_insert(DEFAULT_CHECK_POINTS);

        let r = &mut self.residual;
        let u_min = *r.u_min.get_or_insert(DEFAULT_RESIDUAL_RANGE.0);
        let u_max = *r.u_max.get_or_insert(DEFAULT_RESIDUAL_RANGE.1);
        let points = *r.points.get_or_insert(DEFAULT_RESIDUAL_POINTS);
        let phi = r.phi.get_or_insert_with(|| vec![0.0, 1.0]).clone();
        if u_min > u_max
            || !u_min.is_finite()
            || !u_max.is_finite()
            || points == 0
            || (points == 1 && u_min != u_max)
        {
            return Err(CliError::Config(format!(
                "residual: need u_min <= u_max and points >= 1 (2 for a range), got [{u_min}, {u_max}] with {points}"
            )));
        }
        let residual_grid = if points == 1 {
            vec![u_min]
        } else {
            (0..points).map(|k| u_min + (u_max - u_min) * k as f64 / (points - 1) as f64).collect()
        };

        let initial_label = self.chain.initial_state.as_deref().unwrap_or_default();
        let initial_state = generator.label_index(initial_label).ok_or_else(|| {
            CliError::Config(format!("chain.initial_state: unknown state `{initial_label}`"))
        })?;

        let mut spec = ExperimentSpec::new(generator, field, u0);
        spec.initial_state = initial_state;
        spec.horizon = horizon;
        spec.epsilons = epsilons;
        spec.paths = paths;
        spec.seed = seed;
        spec.max_step = max_step;
        spec.deltas = deltas;
        spec.levels = levels;
        spec.allow_uncertified = allow_uncertified;
        spec.check_region = region.iter().map(|r| (r[0], r[1])).collect();
        spec.check_points = check_points;
        spec.validate().map_err(|e| CliError::from_core("study", e))?;
        Ok(Resolved { spec, residual_grid, phi })
    }

    fn generator(&self) -> Result<GeneratorMatrix> {
        let n = self.chain.rates.len();
        if self.chain.jump.len() != n || self.chain.jump.iter().any(|row| row.len() != n) {
            return Err(CliError::Config(format!(
                "chain.jump: expected {n} rows of {n} entries to match chain.rates"
            )));
        }
        let jump = DMatrix::from_fn(n, n, |i, j| self.chain.jump[i][j]);
        let labels = self.chain.labels.clone().unwrap_or_default();
        GeneratorMatrix::with_labels(
            labels,
            self.chain.rates.clone(),
            jump,
            switchavg::chain::DEFAULT_MAX_STATES,
        )
        .map_err(|e| CliError::from_core("chain", e))
    }

    fn velocity_field(&self) -> Result<VelocityField> {
        let f = &self.field;
        let kind = FieldKind::from_name(&f.kind).ok_or_else(|| {
            CliError::Config(format!(
                "field.kind: unknown field `{}` (expected constant, linear, bounded-trig or logistic)",
                f.kind
            ))
        })?;
        let (first_key, second_key) = match kind {
            FieldKind::Constant => (None, "c"),
            FieldKind::Linear | FieldKind::BoundedTrig => (Some("a"), "c"),
            FieldKind::Logistic => (Some("r"), "k"),
        };
        for (key, value) in [("a", &f.a), ("c", &f.c), ("r", &f.r), ("k", &f.k)] {
            if value.is_some() && Some(key) != first_key && key != second_key {
                return Err(CliError::Config(format!(
                    "field.{key}: not a parameter of the {} field",
                    kind.name()
                )));
            }
        }
        let get = |key: &str| match key {
            "a" => f.a.as_ref(),
            "c" => f.c.as_ref(),
            "r" => f.r.as_ref(),
            _ => f.k.as_ref(),
        };
        let missing =
            |key: &str| CliError::Config(format!("field.{key}: required for the {} field", kind.name()));
        let first = match first_key {
            Some(key) => get(key).ok_or_else(|| missing(key))?.rows(),
            None => Vec::new(),
        };
        let second = match get(second_key) {
            Some(c) => c.rows(),
            None if second_key == "c" && !first.is_empty() => {
                first.iter().map(|row| vec![0.0; row.len()]).collect()
            }
            None => return Err(missing(second_key)),
        };
        let field =
            VelocityField::catalog(kind, first, second).map_err(|e| CliError::from_core("field", e))?;
        let n = self.chain.rates.len();
        if field.n_states() != n {
            return Err(CliError::Config(format!(
                "field: parameters given for {} states, chain has {n}",
                field.n_states()
            )));
        }
        for (name, v) in [("growth", f.growth), ("lipschitz", f.lipschitz)] {
            if let Some(v) = v {
                if v < 0.0 || !v.is_finite() {
                    return Err(CliError::Config(format!("field.{name}: must be finite and >= 0, got {v}")));
                }
            }
        }
        Ok(field.with_declared(f.growth, f.lipschitz))
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "switchavg",
    version,
    about = "Averaging of evolutionary systems under fast Markov switching"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    ChainAnalyze,
    ResidualCheck,
    Simulate,
    DeviationStudy,
    MomentStudy,
    CccStudy,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::ChainAnalyze => "chain-analyze",
            Task::ResidualCheck => "residual-check",
            Task::Simulate => "simulate",
            Task::DeviationStudy => "deviation-study",
            Task::MomentStudy => "moment-study",
            Task::CccStudy => "ccc-study",
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Stationary law, potential matrix and identity residuals of the chain.
    ChainAnalyze(CommonArgs),
    /// Checks the perturbed-test-function identity on a grid of u.
    ResidualCheck(CommonArgs),
    /// Per-path statistics of the switched system.
    Simulate(CommonArgs),
    /// Distance between switched and averaged trajectories.
    DeviationStudy(CommonArgs),
    /// Second moment of the running supremum against the Gronwall envelope.
    MomentStudy(CommonArgs),
    /// Tail probabilities of the running supremum.
    CccStudy(CommonArgs),
}

impl Command {
    pub fn split(self) -> (Task, CommonArgs) {
        match self {
            Command::ChainAnalyze(a) => (Task::ChainAnalyze, a),
            Command::ResidualCheck(a) => (Task::ResidualCheck, a),
            Command::Simulate(a) => (Task::Simulate, a),
            Command::DeviationStudy(a) => (Task::DeviationStudy, a),
            Command::MomentStudy(a) => (Task::MomentStudy, a),
            Command::CccStudy(a) => (Task::CccStudy, a),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Scenario file (TOML); an emitted manifest also works.
    #[arg(long)]
    pub scenario: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: Overrides,
    /// Worker threads for the path simulations (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Also write the first N trajectories per epsilon to trajectories.csv.
    #[arg(long, value_name = "N", num_args = 0..=1, default_missing_value = "10")]
    pub dump_paths: Option<usize>,
}

/// A fully validated run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub task: Task,
    pub scenario: Scenario,
    pub resolved: Resolved,
    pub out_dir: PathBuf,
    pub threads: Option<usize>,
    pub dump_paths: Option<usize>,
}

/// Loads the scenario, applies the flags and fills in defaults.
pub fn parse_config(task: Task, args: CommonArgs) -> Result<RunConfig> {
    let mut scenario = Scenario::load(&args.scenario)?;
    scenario.apply(&args.overrides);
    let resolved = scenario.materialize()?;
    if args.threads == Some(0) {
        return Err(CliError::Config("--threads must be >= 1".into()));
    }
    Ok(RunConfig {
        task,
        scenario,
        resolved,
        out_dir: args.out,
        threads: args.threads,
        dump_paths: args.dump_paths,
    })
}
