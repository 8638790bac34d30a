//! Monte Carlo studies of the switched system against its averaged limit.
//!
//! Every path owns a ChaCha8 substream keyed by `(seed, epsilon index, path
//! index)`, and per-path results are collected in path order before any
//! reduction, so tables are bit-identical for any number of worker threads.
//!
//! Three studies share the same path engine:
//!
//! - deviation: `D = sup_{t <= T} |u^eps_t - u_hat_t|` per path, summarised by
//!   mean, quantiles and exceedance probabilities `P(D > delta)`;
//! - moment bound: `E sup_{t <= T} |u^eps_t|^2` per `eps` against the Gronwall
//!   envelope `k1 exp(k2 T)` (see [`GronwallEnvelope`]);
//! - compact containment: `P(sup_{t <= T} |u^eps_t| > c)` per level `c`.

use std::time::Instant;

use rayon::prelude::*;

use crate::chain::{ChainAnalysis, GeneratorMatrix, JumpPath, StreamKey};
use crate::error::{Error, Result};
use crate::system::{
    check_conditions, integrate_averaged, integrate_switched, sup_deviation, AveragedPath, ConditionReport,
    SwitchedPath, VelocityField,
};

/// Quantile levels reported for the deviation.
pub const QUANTILE_LEVELS: [f64; 3] = [0.5, 0.9, 0.99];

/// Default exceedance thresholds for the deviation.
pub const DEFAULT_DELTAS: [f64; 3] = [0.05, 0.1, 0.2];

/// Default containment levels, as multiples of `|u0| + 1`.
pub const DEFAULT_LEVEL_FACTORS: [f64; 3] = [2.0, 5.0, 10.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StudyKind {
    Deviation,
    MomentBound,
    Containment,
}

impl StudyKind {
    pub fn name(self) -> &'static str {
        match self {
            StudyKind::Deviation => "deviation",
            StudyKind::MomentBound => "moment",
            StudyKind::Containment => "containment",
        }
    }

    fn needs_lipschitz(self) -> bool {
        matches!(self, StudyKind::Deviation)
    }
}

/// Full description of a Monte Carlo experiment.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub generator: GeneratorMatrix,
    pub initial_state: usize,
    pub field: VelocityField,
    pub u0: Vec<f64>,
    pub horizon: f64,
    pub epsilons: Vec<f64>,
    pub paths: usize,
    pub deltas: Vec<f64>,
    pub levels: Vec<f64>,
    pub seed: u64,
    pub max_step: f64,
    /// Region and grid density for the growth/Lipschitz checks.
    pub check_region: Vec<(f64, f64)>,
    pub check_points: usize,
    /// Run even if the field fails certification; rows are then marked uncertified.
    pub allow_uncertified: bool,
}

impl ExperimentSpec {
    /// Spec with the documented defaults: `T = 1`, `eps in {0.1, 0.01, 0.001}`,
    /// `N = 2000`, `max_step = 0.01`, default thresholds and levels, and a check
    /// region of radius 10 around `u0`.
    pub fn new(generator: GeneratorMatrix, field: VelocityField, u0: Vec<f64>) -> Self {
        let scale = norm(&u0) + 1.0;
        let check_region = u0.iter().map(|&u| (u - 10.0, u + 10.0)).collect();
        Self {
            generator,
            initial_state: 0,
            field,
            u0,
            horizon: 1.0,
            epsilons: vec![0.1, 0.01, 0.001],
            paths: 2000,
            deltas: DEFAULT_DELTAS.to_vec(),
            levels: DEFAULT_LEVEL_FACTORS.iter().map(|f| f * scale).collect(),
            seed: 0,
            max_step: 0.01,
            check_region,
            check_points: 201,
            allow_uncertified: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.horizon <= 0.0 || !self.horizon.is_finite() {
            return bad(format!("horizon must be > 0, got {}", self.horizon));
        }
        if self.paths == 0 {
            return bad("paths must be >= 1".into());
        }
        if self.epsilons.is_empty() {
            return bad("epsilon list is empty".into());
        }
        for (name, list) in [("epsilon", &self.epsilons), ("delta", &self.deltas), ("level", &self.levels)] {
            if let Some(v) = list.iter().find(|v| **v <= 0.0 || !v.is_finite()) {
                return bad(format!("every {name} must be > 0, got {v}"));
            }
        }
        if self.max_step <= 0.0 || !self.max_step.is_finite() {
            return bad(format!("max_step must be > 0, got {}", self.max_step));
        }
        if self.initial_state >= self.generator.len() {
            return bad(format!("initial state {} out of range", self.initial_state));
        }
        if self.field.n_states() != self.generator.len() {
            return Err(Error::Dimension(format!(
                "field has {} states, chain has {}",
                self.field.n_states(),
                self.generator.len()
            )));
        }
        if self.u0.len() != self.field.dim() {
            return Err(Error::Dimension(format!(
                "u0 has {} components, field has dimension {}",
                self.u0.len(),
                self.field.dim()
            )));
        }
        Ok(())
    }

    fn stream(&self, eps_index: usize, path_index: usize) -> StreamKey {
        StreamKey::new(self.seed, ((eps_index as u64) << 32) | path_index as u64)
    }
}

/// Result of checking a field before a study.
#[derive(Debug, Clone, PartialEq)]
pub struct Certification {
    pub conditions: ConditionReport,
    pub certified: bool,
    pub reasons: Vec<String>,
}

/// Checks growth (and Lipschitz for the deviation study) on the spec's
/// region; on-domain fields additionally need `u0` inside their invariant box.
pub fn certify(spec: &ExperimentSpec, kind: StudyKind) -> Result<Certification> {
    let conditions = check_conditions(&spec.field, &spec.check_region, spec.check_points)?;
    let mut reasons = Vec::new();
    if !conditions.growth_ok() {
        reasons.push(format!(
            "linear growth fails: estimate {} exceeds L = {:?}",
            conditions.growth_estimate,
            spec.field.growth_constant()
        ));
    }
    if kind.needs_lipschitz() && !conditions.lipschitz_ok() {
        reasons.push(format!(
            "Lipschitz condition fails: estimate {} exceeds C = {:?}",
            conditions.lipschitz_estimate,
            spec.field.lipschitz_constant()
        ));
    }
    if let Some(domain) = spec.field.domain() {
        let inside = spec.u0.iter().zip(&domain).all(|(u, (lo, hi))| lo <= u && u <= hi);
        if !inside {
            reasons.push(format!(
                "{} field is only admissible on {domain:?}, u0 = {:?} is outside",
                spec.field.id(),
                spec.u0
            ));
        }
    }
    Ok(Certification { conditions, certified: reasons.is_empty(), reasons })
}

/// Per-path summaries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathStats {
    /// `max_t |u^eps_t|` over the integrator grid.
    pub sup_u: f64,
    pub sup_u_sq: f64,
    /// `max_t |u^eps_t - u_hat_t|` over the union grid.
    pub sup_dev: f64,
    pub jumps: usize,
    pub key: StreamKey,
}

/// One path of the switched system: chain sample plus integration.
pub fn sample_switched_path(
    spec: &ExperimentSpec,
    eps_index: usize,
    path_index: usize,
) -> Result<(JumpPath, SwitchedPath)> {
    let eps = *spec
        .epsilons
        .get(eps_index)
        .ok_or_else(|| Error::InvalidArgument(format!("epsilon index {eps_index} out of range")))?;
    let jumps =
        spec.generator.simulate(spec.initial_state, spec.horizon, eps, spec.stream(eps_index, path_index))?;
    let path = integrate_switched(&spec.field, &jumps, &spec.u0, spec.max_step)?;
    Ok((jumps, path))
}

/// Averaged trajectory shared by all paths of a study.
pub fn averaged_trajectory(spec: &ExperimentSpec, analysis: &ChainAnalysis) -> Result<AveragedPath> {
    integrate_averaged(&spec.field, analysis.pi.as_slice(), &spec.u0, spec.horizon, spec.max_step, &[])
}

fn path_stats(
    spec: &ExperimentSpec,
    averaged: &AveragedPath,
    eps_index: usize,
    path_index: usize,
) -> Result<PathStats> {
    let (jumps, path) = sample_switched_path(spec, eps_index, path_index)?;
    let sup_u = path.sup_norm();
    Ok(PathStats {
        sup_u,
        sup_u_sq: sup_u * sup_u,
        sup_dev: sup_deviation(&path, &spec.field, averaged),
        jumps: jumps.jump_count(),
        key: spec.stream(eps_index, path_index),
    })
}

/// All `N` paths for one `epsilon`, in path order. Paths that blow up are
/// returned as errors so the caller can count them.
pub fn simulate_paths(
    spec: &ExperimentSpec,
    averaged: &AveragedPath,
    eps_index: usize,
) -> Vec<Result<PathStats>> {
    (0..spec.paths).into_par_iter().map(|i| path_stats(spec, averaged, eps_index, i)).collect()
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanEstimate {
    pub mean: f64,
    pub std_error: f64,
}

impl MeanEstimate {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: f64::NAN, std_error: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std_error = if n > 1 {
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, std_error }
    }
}

/// Empirical probability with its binomial standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbabilityEstimate {
    pub threshold: f64,
    pub probability: f64,
    pub std_error: f64,
}

impl ProbabilityEstimate {
    fn exceeding(values: &[f64], threshold: f64) -> Self {
        let n = values.len();
        let hits = values.iter().filter(|&&v| v > threshold).count();
        let p = if n == 0 { f64::NAN } else { hits as f64 / n as f64 };
        Self { threshold, probability: p, std_error: (p * (1.0 - p) / n as f64).sqrt() }
    }
}

/// Linear-interpolation quantile of a sorted sample.
pub fn quantile(sorted: &[f64], level: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = level.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Statistics for one `epsilon`.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRow {
    pub epsilon: f64,
    pub paths: usize,
    pub excluded: usize,
    pub certified: bool,
    pub deviation_mean: MeanEstimate,
    /// `(level, value)` for [`QUANTILE_LEVELS`].
    pub deviation_quantiles: Vec<(f64, f64)>,
    pub deviation_exceedance: Vec<ProbabilityEstimate>,
    pub sup_sq_mean: MeanEstimate,
    pub containment: Vec<ProbabilityEstimate>,
    pub mean_jumps: f64,
    pub wall_clock_secs: f64,
}

impl EstimateRow {
    pub fn median_deviation(&self) -> f64 {
        self.deviation_quantiles.iter().find(|(l, _)| *l == 0.5).map_or(f64::NAN, |(_, v)| *v)
    }

    pub fn exceedance(&self, delta: f64) -> Option<&ProbabilityEstimate> {
        self.deviation_exceedance.iter().find(|p| p.threshold == delta)
    }

    fn from_stats(
        epsilon: f64,
        outcomes: Vec<Result<PathStats>>,
        spec: &ExperimentSpec,
        certified: bool,
        wall_clock_secs: f64,
    ) -> Self {
        let stats: Vec<PathStats> = outcomes.iter().filter_map(|o| o.as_ref().ok().copied()).collect();
        let excluded = outcomes.len() - stats.len();
        let mut dev: Vec<f64> = stats.iter().map(|s| s.sup_dev).collect();
        let sup: Vec<f64> = stats.iter().map(|s| s.sup_u).collect();
        let sup_sq: Vec<f64> = stats.iter().map(|s| s.sup_u_sq).collect();
        let deviation_mean = MeanEstimate::of(&dev);
        let deviation_exceedance =
            spec.deltas.iter().map(|&d| ProbabilityEstimate::exceeding(&dev, d)).collect();
        dev.sort_by(f64::total_cmp);
        let deviation_quantiles = QUANTILE_LEVELS.iter().map(|&l| (l, quantile(&dev, l))).collect();
        let mut levels = spec.levels.clone();
        levels.sort_by(f64::total_cmp);
        Self {
            epsilon,
            paths: stats.len(),
            excluded,
            certified: certified && excluded == 0,
            deviation_mean,
            deviation_quantiles,
            deviation_exceedance,
            sup_sq_mean: MeanEstimate::of(&sup_sq),
            containment: levels.iter().map(|&c| ProbabilityEstimate::exceeding(&sup, c)).collect(),
            mean_jumps: stats.iter().map(|s| s.jumps as f64).sum::<f64>() / stats.len().max(1) as f64,
            wall_clock_secs,
        }
    }
}

/// Envelope `E sup_{t <= T} |u_t|^2 <= k1 exp(k2 T)` under linear growth with
/// constant `L`.
///
/// From `u_t = u0 + A_t` with `A_t = int_0^t b ds`:
///
/// ```text
/// (u*_t)^2 <= 2 |u0|^2 + 2 (A*_t)^2                         (sup of a sum)
/// A*_t     <= L int_0^t (1 + u*_s) ds                        (linear growth)
/// (A*_t)^2 <= L^2 t int_0^t (1 + u*_s)^2 ds                  (Cauchy-Schwarz)
///          <= 2 L^2 t^2 + 2 L^2 t int_0^t (u*_s)^2 ds
/// ```
///
/// so `(u*_t)^2 <= k1 + k2 int_0^t (u*_s)^2 ds` for `t <= T` with
/// `k1 = 2 |u0|^2 + 4 L^2 T^2` and `k2 = 4 L^2 T`, and Gronwall gives
/// `E (u*_T)^2 <= k1 exp(k2 T)`. The bound holds pathwise, independently of `eps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GronwallEnvelope {
    pub growth: f64,
    pub k1: f64,
    pub k2: f64,
    pub bound: f64,
}

impl GronwallEnvelope {
    pub fn new(u0: &[f64], growth: f64, horizon: f64) -> Self {
        let u0_sq: f64 = u0.iter().map(|v| v * v).sum();
        let l2 = growth * growth;
        let k1 = 2.0 * u0_sq + 4.0 * l2 * horizon * horizon;
        let k2 = 4.0 * l2 * horizon;
        Self { growth, k1, k2, bound: k1 * (k2 * horizon).exp() }
    }
}

/// Trend of `E sup |u|^2` against `ln(1 / eps)`: ordinary least-squares slope
/// with standard error propagated from the per-`eps` standard errors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrendTest {
    pub slope: f64,
    pub std_error: f64,
}

impl TrendTest {
    pub fn fit(points: &[(f64, MeanEstimate)]) -> Option<Self> {
        if points.len() < 2 {
            return None;
        }
        let xs: Vec<f64> = points.iter().map(|(eps, _)| (1.0 / eps).ln()).collect();
        let n = xs.len() as f64;
        let x_bar = xs.iter().sum::<f64>() / n;
        let sxx: f64 = xs.iter().map(|x| (x - x_bar).powi(2)).sum();
        if sxx == 0.0 {
            return None;
        }
        let slope = xs.iter().zip(points).map(|(x, (_, m))| (x - x_bar) * m.mean).sum::<f64>() / sxx;
        let var =
            xs.iter().zip(points).map(|(x, (_, m))| (x - x_bar).powi(2) * m.std_error.powi(2)).sum::<f64>()
                / (sxx * sxx);
        Some(Self { slope, std_error: var.sqrt() })
    }

    /// No growth as `eps` decreases, at `k` standard errors.
    pub fn no_growth(&self, k: f64) -> bool {
        self.slope <= k * self.std_error
    }
}

/// Output of a study.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateTable {
    pub kind: StudyKind,
    pub rows: Vec<EstimateRow>,
    pub certification: Certification,
    pub envelope: Option<GronwallEnvelope>,
    pub trend: Option<TrendTest>,
    /// `|u0| + sup|b| T + 1`, for fields with a global speed bound.
    pub reachability_level: Option<f64>,
}

impl EstimateTable {
    pub fn certified(&self) -> bool {
        self.certification.certified && self.rows.iter().all(|r| r.certified)
    }

    /// `(epsilon, level)` pairs where `P(sup > c) > E sup^2 / c^2 + k SE`,
    /// with the two standard errors combined in quadrature.
    pub fn chebyshev_violations(&self, k: f64) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        for row in &self.rows {
            for p in &row.containment {
                let c2 = p.threshold * p.threshold;
                let bound = row.sup_sq_mean.mean / c2;
                let se = (p.std_error.powi(2) + (row.sup_sq_mean.std_error / c2).powi(2)).sqrt();
                if p.probability > bound + k * se {
                    out.push((row.epsilon, p.threshold));
                }
            }
        }
        out
    }

    /// CSV records, one per `(epsilon, statistic[, parameter])`.
    pub fn records(&self) -> Vec<Record> {
        let mut out = Vec::new();
        for row in &self.rows {
            let eps = Some(row.epsilon);
            let cert = row.certified && self.certification.certified;
            let mut push = |statistic: &str, parameter: Option<f64>, value: f64, se: Option<f64>| {
                out.push(Record {
                    epsilon: eps,
                    statistic: statistic.to_string(),
                    parameter,
                    value,
                    std_error: se,
                    certified: cert,
                });
            };
            push("paths", None, row.paths as f64, None);
            push("excluded", None, row.excluded as f64, None);
            push("mean_jumps", None, row.mean_jumps, None);
            match self.kind {
                StudyKind::Deviation => {
                    let m = row.deviation_mean;
                    push("deviation_mean", None, m.mean, Some(m.std_error));
                    for &(l, v) in &row.deviation_quantiles {
                        push("deviation_quantile", Some(l), v, None);
                    }
                    for p in &row.deviation_exceedance {
                        push("deviation_exceedance", Some(p.threshold), p.probability, Some(p.std_error));
                    }
                }
                StudyKind::MomentBound => {
                    let m = row.sup_sq_mean;
                    push("sup_sq_mean", None, m.mean, Some(m.std_error));
                    if let Some(env) = self.envelope {
                        push("gronwall_envelope", None, env.bound, None);
                    }
                }
                StudyKind::Containment => {
                    let m = row.sup_sq_mean;
                    push("sup_sq_mean", None, m.mean, Some(m.std_error));
                    for p in &row.containment {
                        push("containment_prob", Some(p.threshold), p.probability, Some(p.std_error));
                        let c2 = p.threshold * p.threshold;
                        push("chebyshev_bound", Some(p.threshold), m.mean / c2, Some(m.std_error / c2));
                    }
                }
            }
        }
        let cert = self.certified();
        if let Some(t) = self.trend {
            out.push(Record {
                epsilon: None,
                statistic: "trend_slope_log_inv_eps".into(),
                parameter: None,
                value: t.slope,
                std_error: Some(t.std_error),
                certified: cert,
            });
        }
        if let Some(env) = self.envelope {
            for (name, v) in
                [("gronwall_k1", env.k1), ("gronwall_k2", env.k2), ("growth_constant", env.growth)]
            {
                out.push(Record {
                    epsilon: None,
                    statistic: name.into(),
                    parameter: None,
                    value: v,
                    std_error: None,
                    certified: cert,
                });
            }
        }
        out
    }
}

/// A flat CSV row: `epsilon, statistic, parameter, value, std_error, certified`.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub epsilon: Option<f64>,
    pub statistic: String,
    pub parameter: Option<f64>,
    pub value: f64,
    pub std_error: Option<f64>,
    pub certified: bool,
}

pub fn run_study(spec: &ExperimentSpec, kind: StudyKind) -> Result<EstimateTable> {
    spec.validate()?;
    let certification = certify(spec, kind)?;
    if !certification.certified && !spec.allow_uncertified {
        return Err(Error::Certification(certification.reasons.join("; ")));
    }
    let analysis = ChainAnalysis::new(&spec.generator)?;
    let averaged = averaged_trajectory(spec, &analysis)?;

    let rows: Vec<EstimateRow> = spec
        .epsilons
        .iter()
        .enumerate()
        .map(|(k, &eps)| {
            let start = Instant::now();
            let outcomes = simulate_paths(spec, &averaged, k);
            EstimateRow::from_stats(
                eps,
                outcomes,
                spec,
                certification.certified,
                start.elapsed().as_secs_f64(),
            )
        })
        .collect();

    let envelope = match kind {
        StudyKind::MomentBound | StudyKind::Containment => {
            spec.field.growth_constant().map(|l| GronwallEnvelope::new(&spec.u0, l, spec.horizon))
        }
        StudyKind::Deviation => None,
    };
    let trend = match kind {
        StudyKind::MomentBound => {
            TrendTest::fit(&rows.iter().map(|r| (r.epsilon, r.sup_sq_mean)).collect::<Vec<_>>())
        }
        _ => None,
    };
    let reachability_level = spec.field.speed_bound().map(|s| norm(&spec.u0) + s * spec.horizon + 1.0);
    Ok(EstimateTable { kind, rows, certification, envelope, trend, reachability_level })
}

/// Deviation study: statistics of `sup_{t <= T} |u^eps_t - u_hat_t|`.
pub fn run_deviation_study(spec: &ExperimentSpec) -> Result<EstimateTable> {
    run_study(spec, StudyKind::Deviation)
}

/// Second-moment study against the Gronwall envelope.
pub fn run_moment_bound_study(spec: &ExperimentSpec) -> Result<EstimateTable> {
    run_study(spec, StudyKind::MomentBound)
}

/// Compact containment study.
pub fn run_ccc_study(spec: &ExperimentSpec) -> Result<EstimateTable> {
    run_study(spec, StudyKind::Containment)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::FieldKind;
    use nalgebra::dmatrix;

    fn two_state() -> GeneratorMatrix {
        GeneratorMatrix::new(vec![1.0, 2.0], dmatrix![0.0, 1.0; 1.0, 0.0]).unwrap()
    }

    fn small_spec(field: VelocityField) -> ExperimentSpec {
        let mut spec = ExperimentSpec::new(two_state(), field, vec![1.0]);
        spec.paths = 64;
        spec.epsilons = vec![0.1, 0.01];
        spec.seed = 11;
        spec
    }

    #[test]
    fn quantile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
        assert_eq!(quantile(&v, 0.5), 2.5);
    }

    #[test]
    fn mean_estimate_of_constant_sample() {
        let m = MeanEstimate::of(&[2.0; 10]);
        assert_eq!(m.mean, 2.0);
        assert_eq!(m.std_error, 0.0);
    }

    #[test]
    fn zero_field_has_no_deviation() {
        let f = VelocityField::scalar(FieldKind::Constant, &[], &[0.0, 0.0]).unwrap();
        let spec = small_spec(f);
        let t = run_deviation_study(&spec).unwrap();
        for row in &t.rows {
            assert_eq!(row.deviation_mean.mean, 0.0);
            assert_eq!(row.deviation_quantiles.last().unwrap().1, 0.0);
            assert_eq!(row.sup_sq_mean.mean, 1.0);
        }
    }

    #[test]
    fn single_state_deviation_is_integrator_error() {
        let g = GeneratorMatrix::new(vec![0.0], dmatrix![0.0]).unwrap();
        let f = VelocityField::scalar(FieldKind::BoundedTrig, &[1.5], &[0.3]).unwrap();
        let mut spec = ExperimentSpec::new(g, f, vec![0.4]);
        spec.paths = 4;
        let t = run_deviation_study(&spec).unwrap();
        for row in &t.rows {
            assert!(row.deviation_quantiles.last().unwrap().1 <= 1e-5);
        }
    }

    #[test]
    fn uncertified_field_is_refused_unless_overridden() {
        let f = VelocityField::scalar(FieldKind::Linear, &[3.0, -3.0], &[0.0, 0.0])
            .unwrap()
            .with_declared(Some(0.5), None);
        let mut spec = small_spec(f);
        assert!(matches!(run_deviation_study(&spec), Err(Error::Certification(_))));
        spec.allow_uncertified = true;
        let t = run_deviation_study(&spec).unwrap();
        assert!(!t.certified());
        assert!(t.records().iter().all(|r| !r.certified));
    }

    #[test]
    fn logistic_outside_its_box_is_not_certified() {
        let f = VelocityField::scalar(FieldKind::Logistic, &[1.0, 0.5], &[2.0, 3.0]).unwrap();
        let mut spec = small_spec(f);
        spec.u0 = vec![-1.0];
        let c = certify(&spec, StudyKind::Deviation).unwrap();
        assert!(!c.certified);
        spec.u0 = vec![1.0];
        assert!(certify(&spec, StudyKind::Deviation).unwrap().certified);
    }

    #[test]
    fn blow_ups_are_counted_and_decertify() {
        // Regime 1 overflows over a long sojourn; the average (600 - 667) u is tame.
        let f = VelocityField::scalar(FieldKind::Linear, &[900.0, -2000.0], &[0.0, 0.0]).unwrap();
        let mut spec = small_spec(f);
        spec.horizon = 2.0;
        spec.epsilons = vec![10.0];
        spec.paths = 16;
        let t = run_moment_bound_study(&spec).unwrap();
        let row = &t.rows[0];
        assert!(row.excluded > 0);
        assert_eq!(row.paths + row.excluded, 16);
        assert!(!row.certified);
    }

    #[test]
    fn containment_below_initial_value_is_certain() {
        let f = VelocityField::scalar(FieldKind::BoundedTrig, &[1.0, -0.5], &[0.5, -0.5]).unwrap();
        let mut spec = small_spec(f);
        spec.u0 = vec![2.0];
        spec.levels = vec![1.0, 1.5];
        let t = run_ccc_study(&spec).unwrap();
        for row in &t.rows {
            assert!(row.containment.iter().all(|p| p.probability == 1.0));
        }
    }

    #[test]
    fn trend_of_flat_means_is_zero() {
        let m = MeanEstimate { mean: 3.0, std_error: 0.1 };
        let t = TrendTest::fit(&[(0.1, m), (0.01, m), (0.001, m)]).unwrap();
        assert!(t.slope.abs() < 1e-12);
        assert!(t.no_growth(2.0));
        assert!(TrendTest::fit(&[(0.1, m)]).is_none());
    }

    #[test]
    fn envelope_constants() {
        let e = GronwallEnvelope::new(&[1.0], 2.0, 0.5);
        assert_eq!(e.k1, 2.0 + 4.0 * 4.0 * 0.25);
        assert_eq!(e.k2, 4.0 * 4.0 * 0.5);
        assert_eq!(e.bound, e.k1 * (e.k2 * 0.5).exp());
    }

    #[test]
    fn validate_rejects_bad_specs() {
        let f = VelocityField::scalar(FieldKind::Linear, &[1.0, 1.0], &[0.0, 0.0]).unwrap();
        let base = small_spec(f);
        let mut s = base.clone();
        s.paths = 0;
        assert!(s.validate().is_err());
        let mut s = base.clone();
        s.epsilons = vec![0.1, -1.0];
        assert!(s.validate().is_err());
        let mut s = base.clone();
        s.levels = vec![0.0];
        assert!(s.validate().is_err());
        let mut s = base;
        s.u0 = vec![1.0, 2.0];
        assert!(s.validate().is_err());
    }
}
