//! Fixed-step classical RK4 for the switched system `du/dt = b(u; kappa(t/eps))`
//! and the averaged system `du/dt = b_hat(u)`.
//!
//! Steps never straddle a breakpoint: on an interval ending at `t_end` the step
//! is `min(max_step, t_end - t)`. For the switched system the breakpoints are
//! the jump times, so the regime is constant within every step.

use crate::chain::JumpPath;
use crate::error::{Error, Result};
use crate::system::VelocityField;

/// Workspace for one RK4 step of a `d`-dimensional field.
struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    fn new(dim: usize) -> Self {
        Self {
            k1: vec![0.0; dim],
            k2: vec![0.0; dim],
            k3: vec![0.0; dim],
            k4: vec![0.0; dim],
            tmp: vec![0.0; dim],
        }
    }

    fn step(&mut self, field: &VelocityField, x: usize, u: &mut [f64], h: f64) {
        let stage = |tmp: &mut [f64], u: &[f64], k: &[f64], c: f64| {
            for ((t, &ui), &ki) in tmp.iter_mut().zip(u).zip(k) {
                *t = ui + c * ki;
            }
        };
        field.eval_into(u, x, &mut self.k1);
        stage(&mut self.tmp, u, &self.k1, 0.5 * h);
        field.eval_into(&self.tmp, x, &mut self.k2);
        stage(&mut self.tmp, u, &self.k2, 0.5 * h);
        field.eval_into(&self.tmp, x, &mut self.k3);
        stage(&mut self.tmp, u, &self.k3, h);
        field.eval_into(&self.tmp, x, &mut self.k4);
        for (i, ui) in u.iter_mut().enumerate() {
            *ui += h / 6.0 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
    }
}

/// Shared storage of a trajectory sampled on a strictly increasing grid.
#[derive(Debug, Clone, PartialEq)]
struct Grid {
    dim: usize,
    times: Vec<f64>,
    /// Row-major `times.len() x dim`.
    values: Vec<f64>,
    /// Regime used on `[times[k], times[k + 1]]`.
    regimes: Vec<usize>,
    max_step_taken: f64,
}

impl Grid {
    fn start(dim: usize, u0: &[f64]) -> Self {
        Self { dim, times: vec![0.0], values: u0.to_vec(), regimes: Vec::new(), max_step_taken: 0.0 }
    }

    fn value(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    /// Integrates regime `x` from the last grid time up to `t_end`.
    fn advance(
        &mut self,
        field: &VelocityField,
        x: usize,
        t_end: f64,
        max_step: f64,
        rk: &mut Rk4,
    ) -> Result<()> {
        let mut t = *self.times.last().expect("grid starts with t = 0");
        let mut u = self.value(self.times.len() - 1).to_vec();
        while t < t_end {
            // Snap to the breakpoint instead of leaving a round-off sliver.
            let next = if t_end - t <= max_step * (1.0 + 1e-12) { t_end } else { t + max_step };
            let h = next - t;
            rk.step(field, x, &mut u, h);
            if u.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { time: next });
            }
            self.max_step_taken = self.max_step_taken.max(h);
            self.times.push(next);
            self.values.extend_from_slice(&u);
            self.regimes.push(x);
            t = next;
        }
        Ok(())
    }

    /// Cubic Hermite interpolation on interval `k` using the regime slopes.
    fn interpolate(&self, field: &VelocityField, k: usize, t: f64, out: &mut [f64]) {
        let (t0, t1) = (self.times[k], self.times[k + 1]);
        let h = t1 - t0;
        let s = ((t - t0) / h).clamp(0.0, 1.0);
        let x = self.regimes[k];
        let (u0, u1) = (self.value(k), self.value(k + 1));
        let f0 = field.eval(u0, x);
        let f1 = field.eval(u1, x);
        let h10 = s * (1.0 - s) * (1.0 - s);
        let h01 = s * s * (3.0 - 2.0 * s);
        let h11 = s * s * (s - 1.0);
        for i in 0..self.dim {
            // h00 = 1 - h01, written so that a constant path interpolates exactly.
            out[i] = u0[i] + h01 * (u1[i] - u0[i]) + h * (h10 * f0[i] + h11 * f1[i]);
        }
    }

    fn interval_of(&self, t: f64) -> usize {
        let k = self.times.partition_point(|&s| s <= t);
        k.saturating_sub(1).min(self.times.len().saturating_sub(2))
    }

    fn sup_norm(&self) -> f64 {
        (0..self.times.len()).map(|k| norm(self.value(k))).fold(0.0, f64::max)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn check_inputs(field: &VelocityField, u0: &[f64], max_step: f64) -> Result<()> {
    if u0.len() != field.dim() {
        return Err(Error::Dimension(format!(
            "initial value has {} components, field has dimension {}",
            u0.len(),
            field.dim()
        )));
    }
    if u0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("initial value must be finite".into()));
    }
    if max_step <= 0.0 || !max_step.is_finite() {
        return Err(Error::InvalidArgument(format!("max_step must be > 0, got {max_step}")));
    }
    Ok(())
}

/// Trajectory of the switched system on the jump-aligned grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchedPath {
    grid: Grid,
    pub epsilon: f64,
}

impl SwitchedPath {
    pub fn dim(&self) -> usize {
        self.grid.dim
    }

    pub fn times(&self) -> &[f64] {
        &self.grid.times
    }

    pub fn value(&self, k: usize) -> &[f64] {
        self.grid.value(k)
    }

    pub fn final_value(&self) -> &[f64] {
        self.grid.value(self.grid.times.len() - 1)
    }

    /// Regime on grid interval `k`, i.e. on `[times[k], times[k + 1]]`.
    pub fn regimes(&self) -> &[usize] {
        &self.grid.regimes
    }

    /// Regime in force at grid point `k`: the one starting there, or the last
    /// one at the final time.
    pub fn regime_at(&self, k: usize) -> usize {
        let r = &self.grid.regimes;
        r[k.min(r.len() - 1)]
    }

    /// Largest step actually taken.
    pub fn max_step_taken(&self) -> f64 {
        self.grid.max_step_taken
    }

    /// Max over grid points of `|u_t|`.
    pub fn sup_norm(&self) -> f64 {
        self.grid.sup_norm()
    }

    /// `u_t` at an arbitrary `t`, by Hermite interpolation within the step.
    pub fn value_at(&self, field: &VelocityField, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        if self.grid.times.len() == 1 {
            out.copy_from_slice(self.grid.value(0));
        } else {
            self.grid.interpolate(field, self.grid.interval_of(t), t, &mut out);
        }
        out
    }
}

/// Trajectory of the averaged system.
#[derive(Debug, Clone)]
pub struct AveragedPath {
    grid: Grid,
    drift: VelocityField,
}

impl AveragedPath {
    pub fn dim(&self) -> usize {
        self.grid.dim
    }

    pub fn times(&self) -> &[f64] {
        &self.grid.times
    }

    pub fn value(&self, k: usize) -> &[f64] {
        self.grid.value(k)
    }

    pub fn final_value(&self) -> &[f64] {
        self.grid.value(self.grid.times.len() - 1)
    }

    pub fn drift(&self) -> &VelocityField {
        &self.drift
    }

    pub fn max_step_taken(&self) -> f64 {
        self.grid.max_step_taken
    }

    pub fn sup_norm(&self) -> f64 {
        self.grid.sup_norm()
    }

    /// `u_hat_t` at an arbitrary `t`, by Hermite interpolation within the step.
    pub fn value_at(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        if self.grid.times.len() == 1 {
            out.copy_from_slice(self.grid.value(0));
        } else {
            self.grid.interpolate(&self.drift, self.grid.interval_of(t), t, &mut out);
        }
        out
    }
}

/// Integrates the switched system along `path` starting from `u0`.
pub fn integrate_switched(
    field: &VelocityField,
    path: &JumpPath,
    u0: &[f64],
    max_step: f64,
) -> Result<SwitchedPath> {
    check_inputs(field, u0, max_step)?;
    if let Some(&x) = path.states.iter().find(|&&x| x >= field.n_states()) {
        return Err(Error::Dimension(format!(
            "path visits state {x} but the field has {} states",
            field.n_states()
        )));
    }
    let mut grid = Grid::start(field.dim(), u0);
    let mut rk = Rk4::new(field.dim());
    for (_, end, x) in path.sojourns() {
        grid.advance(field, x, end, max_step, &mut rk)?;
    }
    Ok(SwitchedPath { grid, epsilon: path.epsilon })
}

/// Integrates `du/dt = b_hat(u)` with `b_hat = sum_x pi[x] b(u; x)` on
/// `[0, horizon]`. The output grid is the step grid `k * max_step` plus every
/// time in `queries`, each of which is hit exactly.
pub fn integrate_averaged(
    field: &VelocityField,
    pi: &[f64],
    u0: &[f64],
    horizon: f64,
    max_step: f64,
    queries: &[f64],
) -> Result<AveragedPath> {
    let drift = if field.is_averaged() { field.clone() } else { field.averaged(pi)? };
    integrate_drift(drift, u0, horizon, max_step, queries)
}

/// Integrates a single-regime field on `[0, horizon]`; see [`integrate_averaged`].
pub fn integrate_drift(
    drift: VelocityField,
    u0: &[f64],
    horizon: f64,
    max_step: f64,
    queries: &[f64],
) -> Result<AveragedPath> {
    check_inputs(&drift, u0, max_step)?;
    if horizon <= 0.0 || !horizon.is_finite() {
        return Err(Error::InvalidArgument(format!("horizon must be > 0, got {horizon}")));
    }
    if drift.n_states() != 1 {
        return Err(Error::InvalidArgument("drift must have a single regime".into()));
    }
    let mut stops: Vec<f64> = queries.iter().copied().filter(|&t| t > 0.0 && t < horizon).collect();
    stops.sort_by(f64::total_cmp);
    stops.dedup();
    stops.push(horizon);

    let mut grid = Grid::start(drift.dim(), u0);
    let mut rk = Rk4::new(drift.dim());
    for stop in stops {
        grid.advance(&drift, 0, stop, max_step, &mut rk)?;
    }
    Ok(AveragedPath { grid, drift })
}

/// `D = sup_t |u_t - u_hat_t|`, taken as the max over the union of both grids.
/// Off-grid values of either path come from its Hermite interpolant.
pub fn sup_deviation(switched: &SwitchedPath, field: &VelocityField, averaged: &AveragedPath) -> f64 {
    let dim = switched.dim();
    let mut buf = vec![0.0; dim];
    let diff = norm_diff;
    let mut best = 0.0_f64;

    let s = &switched.grid;
    let a = &averaged.grid;
    let single = |g: &Grid| g.times.len() == 1;

    // Switched grid points against the averaged interpolant.
    let mut k = 0;
    for (j, &t) in s.times.iter().enumerate() {
        let target = if single(a) {
            a.value(0)
        } else {
            while k + 2 < a.times.len() && a.times[k + 1] <= t {
                k += 1;
            }
            if a.times[k] == t {
                a.value(k)
            } else if a.times[k + 1] == t {
                a.value(k + 1)
            } else {
                a.interpolate(&averaged.drift, k, t, &mut buf);
                &buf
            }
        };
        best = best.max(diff(s.value(j), target));
    }

    // Averaged grid points against the switched interpolant.
    let mut k = 0;
    let mut buf = vec![0.0; dim];
    for (j, &t) in a.times.iter().enumerate() {
        let here = if single(s) {
            s.value(0)
        } else {
            while k + 2 < s.times.len() && s.times[k + 1] <= t {
                k += 1;
            }
            if s.times[k] == t {
                s.value(k)
            } else if s.times[k + 1] == t {
                s.value(k + 1)
            } else {
                s.interpolate(field, k, t, &mut buf);
                &buf
            }
        };
        best = best.max(diff(here, a.value(j)));
    }
    best
}

fn norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}
