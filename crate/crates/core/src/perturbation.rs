//! Operator calculus of the coupled generator `L^eps = eps^-1 Q + B(x)`.
//!
//! For a scalar field (`d = 1`) and a test function `phi`:
//!
//! - `B(x) phi (u) = b(u; x) phi'(u)` and `B_hat phi (u) = b_hat(u) phi'(u)`;
//! - `B_tilde(x) = B(x) - B_hat` is centred under `pi`;
//! - the corrector `phi_1(u; x) = sum_y R0[x, y] (B_tilde(y) phi)(u)` solves
//!   `Q phi_1 = -B_tilde phi` because `Q R0 = Pi - I`;
//! - hence `L^eps (phi + eps phi_1) = B_hat phi + eps theta(x) phi` with
//!   `theta(x) phi = b(u; x) d/du phi_1(u; x)`, which carries no `eps`.
//!
//! Perturbed functions keep the `x`-independent part separate from the
//! per-state part, so `Q` applied to it is an exact zero and no cancellation
//! error is introduced at small `eps`.

use std::sync::Arc;

use crate::chain::{ChainAnalysis, GeneratorMatrix};
use crate::error::{Error, Result};
use crate::system::VelocityField;

type RealFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Shape {
    /// Coefficients in ascending powers of `u`.
    Polynomial(Vec<f64>),
    /// `exp(-1 / (1 - s^2))` for `|s| < 1`, `s = (u - center) / radius`.
    Bump {
        center: f64,
        radius: f64,
    },
    Custom {
        value: RealFn,
        first: Option<RealFn>,
        second: Option<RealFn>,
    },
}

/// A scalar test function with explicit first and second derivatives.
#[derive(Clone)]
pub struct TestFunction {
    descriptor: String,
    shape: Shape,
}

impl std::fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TestFunction").field("descriptor", &self.descriptor).finish()
    }
}

impl TestFunction {
    pub fn polynomial(coeffs: Vec<f64>) -> Self {
        let descriptor = format!("polynomial{coeffs:?}");
        Self { descriptor, shape: Shape::Polynomial(coeffs) }
    }

    /// Smooth compactly supported bump on `(center - radius, center + radius)`.
    pub fn bump(center: f64, radius: f64) -> Result<Self> {
        if radius <= 0.0 || !radius.is_finite() || !center.is_finite() {
            return Err(Error::InvalidArgument(format!("bad bump parameters ({center}, {radius})")));
        }
        Ok(Self {
            descriptor: format!("bump(center={center}, radius={radius})"),
            shape: Shape::Bump { center, radius },
        })
    }

    /// User-supplied function; derivatives that are not given make the
    /// operations needing them fail with [`Error::MissingDerivative`].
    pub fn custom(
        descriptor: impl Into<String>,
        value: impl Fn(f64) -> f64 + Send + Sync + 'static,
        first: Option<RealFn>,
        second: Option<RealFn>,
    ) -> Self {
        Self { descriptor: descriptor.into(), shape: Shape::Custom { value: Arc::new(value), first, second } }
    }

    pub fn descriptor(&self) -> &str {
        &self.descriptor
    }

    pub fn value(&self, u: f64) -> f64 {
        match &self.shape {
            Shape::Polynomial(c) => horner(c, u),
            Shape::Bump { center, radius } => bump_parts(*center, *radius, u).0,
            Shape::Custom { value, .. } => value(u),
        }
    }

    pub fn first(&self, u: f64) -> Option<f64> {
        match &self.shape {
            Shape::Polynomial(c) => Some(horner(&derive(c), u)),
            Shape::Bump { center, radius } => Some(bump_parts(*center, *radius, u).1),
            Shape::Custom { first, .. } => first.as_ref().map(|f| f(u)),
        }
    }

    pub fn second(&self, u: f64) -> Option<f64> {
        match &self.shape {
            Shape::Polynomial(c) => Some(horner(&derive(&derive(c)), u)),
            Shape::Bump { center, radius } => Some(bump_parts(*center, *radius, u).2),
            Shape::Custom { second, .. } => second.as_ref().map(|f| f(u)),
        }
    }

    pub fn has_first(&self) -> bool {
        !matches!(&self.shape, Shape::Custom { first: None, .. })
    }

    pub fn has_second(&self) -> bool {
        !matches!(&self.shape, Shape::Custom { second: None, .. })
    }

    fn require_first(&self) -> Result<()> {
        if self.has_first() {
            Ok(())
        } else {
            Err(Error::MissingDerivative(format!("{} has no first derivative", self.descriptor)))
        }
    }

    fn require_second(&self) -> Result<()> {
        self.require_first()?;
        if self.has_second() {
            Ok(())
        } else {
            Err(Error::MissingDerivative(format!("{} has no second derivative", self.descriptor)))
        }
    }

    fn d1(&self, u: f64) -> f64 {
        self.first(u).unwrap_or(f64::NAN)
    }

    fn d2(&self, u: f64) -> f64 {
        self.second(u).unwrap_or(f64::NAN)
    }
}

fn horner(c: &[f64], u: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &a| acc * u + a)
}

fn derive(c: &[f64]) -> Vec<f64> {
    c.iter().enumerate().skip(1).map(|(k, &a)| k as f64 * a).collect()
}

/// Value, first and second derivative of the bump.
fn bump_parts(center: f64, radius: f64, u: f64) -> (f64, f64, f64) {
    let s = (u - center) / radius;
    if s.abs() >= 1.0 {
        return (0.0, 0.0, 0.0);
    }
    let w = 1.0 - s * s;
    let f = (-1.0 / w).exp();
    // d/ds of -1/w is g = -2s/w^2.
    let g = -2.0 * s / (w * w);
    let dg = -2.0 / (w * w) - 8.0 * s * s / (w * w * w);
    (f, f * g / radius, f * (g * g + dg) / (radius * radius))
}

type BoxFn<'a> = Box<dyn Fn(f64) -> f64 + Send + Sync + 'a>;

/// A function of `u` with an optional derivative.
pub struct ScalarFunction<'a> {
    value: BoxFn<'a>,
    derivative: Option<BoxFn<'a>>,
}

impl<'a> ScalarFunction<'a> {
    pub fn new(value: impl Fn(f64) -> f64 + Send + Sync + 'a, derivative: Option<BoxFn<'a>>) -> Self {
        Self { value: Box::new(value), derivative }
    }

    pub fn value(&self, u: f64) -> f64 {
        (self.value)(u)
    }

    pub fn derivative(&self, u: f64) -> Option<f64> {
        self.derivative.as_ref().map(|d| d(u))
    }

    pub fn has_derivative(&self) -> bool {
        self.derivative.is_some()
    }
}

/// `g(u; x) = common(u) + per_state[x](u)`.
pub struct CoupledFunction<'a> {
    common: Option<ScalarFunction<'a>>,
    per_state: Vec<ScalarFunction<'a>>,
}

impl<'a> CoupledFunction<'a> {
    pub fn new(common: Option<ScalarFunction<'a>>, per_state: Vec<ScalarFunction<'a>>) -> Self {
        Self { common, per_state }
    }

    pub fn n_states(&self) -> usize {
        self.per_state.len()
    }

    pub fn value(&self, u: f64, x: usize) -> f64 {
        self.common.as_ref().map_or(0.0, |c| c.value(u)) + self.per_state[x].value(u)
    }

    pub fn derivative(&self, u: f64, x: usize) -> Option<f64> {
        let c = match &self.common {
            Some(c) => c.derivative(u)?,
            None => 0.0,
        };
        Some(c + self.per_state[x].derivative(u)?)
    }

    fn has_derivative(&self) -> bool {
        self.common.as_ref().is_none_or(ScalarFunction::has_derivative)
            && self.per_state.iter().all(ScalarFunction::has_derivative)
    }

    /// `(Q g)(u; x)` split into the contribution of the common part, which is
    /// an exact zero, and that of the per-state part.
    pub fn q_action(&self, generator: &GeneratorMatrix, u: f64, x: usize) -> (f64, f64) {
        let common = self.common.as_ref().map_or(0.0, |c| {
            let v = c.value(u);
            generator.apply(x, |_| v)
        });
        let values: Vec<f64> = self.per_state.iter().map(|g| g.value(u)).collect();
        (common, generator.apply(x, |y| values[y]))
    }
}

/// Which normalisation of the potential and of `B_tilde` is used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SignConvention {
    /// `Q R0 = Pi - I` with `B_tilde = B - B_hat`.
    #[default]
    Standard,
    /// `Q R0 = I - Pi` with `B_tilde = B_hat - B`.
    Flipped,
}

fn require_scalar(field: &VelocityField) -> Result<()> {
    if field.dim() != 1 {
        return Err(Error::Dimension(format!(
            "operator calculus needs a scalar field, got dimension {}",
            field.dim()
        )));
    }
    Ok(())
}

fn require_states(field: &VelocityField, n: usize, what: &str) -> Result<()> {
    if field.n_states() != n {
        return Err(Error::Dimension(format!("{what} has {n} states, field has {}", field.n_states())));
    }
    Ok(())
}

/// `u -> b(u; x) phi'(u)`, with derivative `b' phi' + b phi''` when `phi''` exists.
pub fn apply_b<'a>(field: &'a VelocityField, x: usize, phi: &'a TestFunction) -> Result<ScalarFunction<'a>> {
    require_scalar(field)?;
    phi.require_first()?;
    if x >= field.n_states() {
        return Err(Error::Dimension(format!("state {x} out of range")));
    }
    let derivative: Option<BoxFn<'a>> = phi.has_second().then(|| {
        Box::new(move |u: f64| field.slope1(u, x) * phi.d1(u) + field.value1(u, x) * phi.d2(u)) as BoxFn<'a>
    });
    Ok(ScalarFunction::new(move |u| field.value1(u, x) * phi.d1(u), derivative))
}

fn averaged_value(field: &VelocityField, pi: &[f64], u: f64) -> f64 {
    pi.iter().enumerate().map(|(y, &p)| p * field.value1(u, y)).sum()
}

fn averaged_slope(field: &VelocityField, pi: &[f64], u: f64) -> f64 {
    pi.iter().enumerate().map(|(y, &p)| p * field.slope1(u, y)).sum()
}

/// `u -> b_hat(u) phi'(u)` with `b_hat = sum_x pi[x] b(.; x)`.
pub fn apply_bhat<'a>(
    field: &'a VelocityField,
    pi: &'a [f64],
    phi: &'a TestFunction,
) -> Result<ScalarFunction<'a>> {
    require_scalar(field)?;
    require_states(field, pi.len(), "stationary vector")?;
    phi.require_first()?;
    let derivative: Option<BoxFn<'a>> = phi.has_second().then(|| {
        Box::new(move |u: f64| {
            averaged_slope(field, pi, u) * phi.d1(u) + averaged_value(field, pi, u) * phi.d2(u)
        }) as BoxFn<'a>
    });
    Ok(ScalarFunction::new(move |u| averaged_value(field, pi, u) * phi.d1(u), derivative))
}

/// `sum_x pi[x] (B_tilde(x) phi)(u)`; zero up to round-off.
pub fn centering_residual(field: &VelocityField, pi: &[f64], phi: &TestFunction, u: f64) -> f64 {
    let bhat = averaged_value(field, pi, u);
    pi.iter().enumerate().map(|(x, &p)| p * (field.value1(u, x) - bhat) * phi.d1(u)).sum()
}

/// Corrector `phi_1(u; x) = sum_y R0[x, y] (B_tilde(y) phi)(u)`.
pub fn build_corrector<'a>(
    phi: &'a TestFunction,
    field: &'a VelocityField,
    analysis: &'a ChainAnalysis,
) -> Result<CoupledFunction<'a>> {
    build_corrector_with(phi, field, analysis, SignConvention::Standard)
}

pub fn build_corrector_with<'a>(
    phi: &'a TestFunction,
    field: &'a VelocityField,
    analysis: &'a ChainAnalysis,
    convention: SignConvention,
) -> Result<CoupledFunction<'a>> {
    require_scalar(field)?;
    require_states(field, analysis.pi.len(), "chain")?;
    phi.require_first()?;
    let n = analysis.pi.len();
    let pi = analysis.pi.as_slice();
    // Flipping both R0 and B_tilde leaves their product unchanged.
    let sign = match convention {
        SignConvention::Standard => 1.0,
        SignConvention::Flipped => -1.0,
    };
    let r0 = &analysis.potential;

    let per_state = (0..n)
        .map(|x| {
            let value = move |u: f64| {
                let bhat = averaged_value(field, pi, u);
                let dphi = phi.d1(u);
                (0..n)
                    .map(|y| {
                        let r = sign * r0[(x, y)];
                        let tilde = sign * (field.value1(u, y) - bhat) * dphi;
                        r * tilde
                    })
                    .sum()
            };
            let derivative: Option<BoxFn<'a>> = phi.has_second().then(|| {
                Box::new(move |u: f64| {
                    let bhat = averaged_value(field, pi, u);
                    let dbhat = averaged_slope(field, pi, u);
                    let (d1, d2) = (phi.d1(u), phi.d2(u));
                    (0..n)
                        .map(|y| {
                            let r = sign * r0[(x, y)];
                            let tilde = (field.slope1(u, y) - dbhat) * d1 + (field.value1(u, y) - bhat) * d2;
                            r * sign * tilde
                        })
                        .sum()
                }) as BoxFn<'a>
            });
            ScalarFunction::new(value, derivative)
        })
        .collect();
    Ok(CoupledFunction::new(None, per_state))
}

/// Second form of the corrector, `phi'(u) sum_y R0[x, y] b(u; y)`, valid
/// because the rows of `R0` sum to zero.
pub fn corrector_via_row_sums(
    phi: &TestFunction,
    field: &VelocityField,
    analysis: &ChainAnalysis,
    u: f64,
    x: usize,
) -> f64 {
    let s: f64 = (0..analysis.pi.len()).map(|y| analysis.potential[(x, y)] * field.value1(u, y)).sum();
    phi.d1(u) * s
}

/// The perturbed test function `phi + eps phi_1`.
pub fn perturbed_test_function<'a>(
    phi: &'a TestFunction,
    epsilon: f64,
    field: &'a VelocityField,
    analysis: &'a ChainAnalysis,
) -> Result<CoupledFunction<'a>> {
    let corrector = build_corrector(phi, field, analysis)?;
    let per_state = corrector
        .per_state
        .into_iter()
        .map(|g| {
            let g = Arc::new(g);
            let gd = Arc::clone(&g);
            let derivative: Option<BoxFn<'a>> = g
                .has_derivative()
                .then(|| Box::new(move |u: f64| epsilon * gd.derivative(u).unwrap_or(f64::NAN)) as BoxFn<'a>);
            ScalarFunction::new(move |u| epsilon * g.value(u), derivative)
        })
        .collect();
    let common_derivative: Option<BoxFn<'a>> =
        phi.has_first().then(|| Box::new(move |u: f64| phi.d1(u)) as BoxFn<'a>);
    let common = ScalarFunction::new(move |u| phi.value(u), common_derivative);
    Ok(CoupledFunction::new(Some(common), per_state))
}

/// `(u; x) -> eps^-1 (Q g)(u; x) + b(u; x) d/du g(u; x)`.
pub fn apply_coupled_generator<'a>(
    epsilon: f64,
    generator: &'a GeneratorMatrix,
    field: &'a VelocityField,
    g: &'a CoupledFunction<'a>,
) -> Result<CoupledFunction<'a>> {
    if epsilon <= 0.0 || !epsilon.is_finite() {
        return Err(Error::InvalidArgument(format!("epsilon must be > 0, got {epsilon}")));
    }
    require_scalar(field)?;
    require_states(field, generator.len(), "generator")?;
    if g.n_states() != generator.len() {
        return Err(Error::Dimension(format!(
            "coupled function has {} states, generator has {}",
            g.n_states(),
            generator.len()
        )));
    }
    if !g.has_derivative() {
        return Err(Error::MissingDerivative("coupled function has no u-derivative".into()));
    }
    let per_state = (0..generator.len())
        .map(|x| {
            ScalarFunction::new(
                move |u| {
                    let (common, states) = g.q_action(generator, u, x);
                    (common + states) / epsilon + field.value1(u, x) * g.derivative(u, x).unwrap_or(f64::NAN)
                },
                None,
            )
        })
        .collect();
    Ok(CoupledFunction::new(None, per_state))
}

/// `theta(x) phi (u) = b(u; x) d/du phi_1(u; x)`.
pub fn theta<'a>(
    field: &'a VelocityField,
    analysis: &'a ChainAnalysis,
    x: usize,
    phi: &'a TestFunction,
) -> Result<ScalarFunction<'a>> {
    phi.require_second()?;
    if x >= analysis.pi.len() {
        return Err(Error::Dimension(format!("state {x} out of range")));
    }
    let corrector = build_corrector(phi, field, analysis)?;
    let phi1 = corrector.per_state.into_iter().nth(x).expect("state checked");
    Ok(ScalarFunction::new(move |u| field.value1(u, x) * phi1.derivative(u).unwrap_or(f64::NAN), None))
}

/// One evaluation of both sides of the perturbation identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualRow {
    pub u: f64,
    pub state: usize,
    /// `L^eps phi^eps (u; x)`.
    pub lhs: f64,
    /// `B_hat phi (u) + eps theta(x) phi (u)`.
    pub rhs: f64,
    pub residual: f64,
}

/// Grid check of `L^eps (phi + eps phi_1) = B_hat phi + eps theta phi`.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationReport {
    pub epsilon: f64,
    pub rows: Vec<ResidualRow>,
    /// Max `|lhs - rhs|` per state.
    pub max_residual_per_state: Vec<f64>,
    pub max_residual: f64,
    /// Max `|theta(x) phi (u)|` over the grid and states.
    pub theta_sup: f64,
    /// Max `|eps^-1 Q phi|`; exactly zero since `phi` does not depend on `x`.
    pub fast_term_max: f64,
    /// Max disagreement between the two algebraic forms of `phi_1`.
    pub corrector_form_gap: f64,
}

pub fn residual_check(
    phi: &TestFunction,
    epsilon: f64,
    generator: &GeneratorMatrix,
    field: &VelocityField,
    analysis: &ChainAnalysis,
    u_grid: &[f64],
) -> Result<PerturbationReport> {
    require_scalar(field)?;
    require_states(field, generator.len(), "generator")?;
    require_states(field, analysis.pi.len(), "chain analysis")?;
    phi.require_second()?;
    if u_grid.is_empty() {
        return Err(Error::InvalidArgument("empty u grid".into()));
    }
    let n = generator.len();
    let pi = analysis.pi.as_slice();
    let perturbed = perturbed_test_function(phi, epsilon, field, analysis)?;
    let generated = apply_coupled_generator(epsilon, generator, field, &perturbed)?;
    let corrector = build_corrector(phi, field, analysis)?;
    let bhat = apply_bhat(field, pi, phi)?;
    let thetas = (0..n).map(|x| theta(field, analysis, x, phi)).collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::with_capacity(u_grid.len() * n);
    let mut per_state = vec![0.0_f64; n];
    let mut theta_sup = 0.0_f64;
    let mut fast_term_max = 0.0_f64;
    let mut corrector_form_gap = 0.0_f64;
    for &u in u_grid {
        let b_hat_phi = bhat.value(u);
        for x in 0..n {
            let lhs = generated.value(u, x);
            let th = thetas[x].value(u);
            let rhs = b_hat_phi + epsilon * th;
            let residual = (lhs - rhs).abs();
            per_state[x] = per_state[x].max(residual);
            theta_sup = theta_sup.max(th.abs());
            fast_term_max = fast_term_max.max((perturbed.q_action(generator, u, x).0 / epsilon).abs());
            corrector_form_gap = corrector_form_gap
                .max((corrector.value(u, x) - corrector_via_row_sums(phi, field, analysis, u, x)).abs());
            rows.push(ResidualRow { u, state: x, lhs, rhs, residual });
        }
    }
    let max_residual = per_state.iter().copied().fold(0.0, f64::max);
    Ok(PerturbationReport {
        epsilon,
        rows,
        max_residual_per_state: per_state,
        max_residual,
        theta_sup,
        fast_term_max,
        corrector_form_gap,
    })
}
