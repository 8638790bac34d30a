use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Shape of a catalog velocity field. Each component `i` of `b(u; x)` depends
/// only on `u_i` through two per-state coefficients `(p, s)`:
///
/// | kind           | `b_i(u; x)`                 | `(p, s)`  |
/// |----------------|-----------------------------|-----------|
/// | `Constant`     | `c`                         | `(-, c)`  |
/// | `Linear`       | `a u_i + c`                 | `(a, c)`  |
/// | `BoundedTrig`  | `a sin(u_i) + c`            | `(a, c)`  |
/// | `Logistic`     | `r u_i (1 - u_i / K)`       | `(r, K)`  |
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FieldKind {
    Constant,
    Linear,
    BoundedTrig,
    Logistic,
}

impl FieldKind {
    pub fn name(self) -> &'static str {
        match self {
            FieldKind::Constant => "constant",
            FieldKind::Linear => "linear",
            FieldKind::BoundedTrig => "bounded-trig",
            FieldKind::Logistic => "logistic",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "constant" => Some(FieldKind::Constant),
            "linear" => Some(FieldKind::Linear),
            "bounded-trig" => Some(FieldKind::BoundedTrig),
            "logistic" => Some(FieldKind::Logistic),
            _ => None,
        }
    }

    fn value(self, (p, s): (f64, f64), u: f64) -> f64 {
        match self {
            FieldKind::Constant => s,
            FieldKind::Linear => p * u + s,
            FieldKind::BoundedTrig => p * u.sin() + s,
            FieldKind::Logistic => p * u * (1.0 - u / s),
        }
    }

    fn slope(self, (p, s): (f64, f64), u: f64) -> f64 {
        match self {
            FieldKind::Constant => 0.0,
            FieldKind::Linear => p,
            FieldKind::BoundedTrig => p * u.cos(),
            FieldKind::Logistic => p * (1.0 - 2.0 * u / s),
        }
    }
}

#[derive(Debug, Clone)]
enum Repr {
    Catalog {
        kind: FieldKind,
        /// `coeffs[x][i]`: coefficients of component `i` in state `x`.
        coeffs: Vec<Vec<(f64, f64)>>,
    },
    Averaged {
        base: Box<VelocityField>,
        weights: Vec<f64>,
    },
}

/// The family of velocities `b(u; x)`, `u` in `R^d`, `x` in a finite state set.
#[derive(Debug, Clone)]
pub struct VelocityField {
    id: String,
    dim: usize,
    repr: Repr,
    declared_growth: Option<f64>,
    declared_lipschitz: Option<f64>,
}

impl VelocityField {
    /// Catalog field from per-state, per-component coefficients `(p, s)`.
    /// See [`FieldKind`] for their meaning.
    pub fn catalog(kind: FieldKind, first: Vec<Vec<f64>>, second: Vec<Vec<f64>>) -> Result<Self> {
        let n = first.len().max(second.len());
        if n == 0 {
            return Err(Error::Dimension("field needs parameters for at least one state".into()));
        }
        let dim = first.first().or(second.first()).map_or(0, Vec::len);
        if dim == 0 {
            return Err(Error::Dimension("field dimension must be at least 1".into()));
        }
        let expect = |v: &Vec<Vec<f64>>, what: &str| -> Result<()> {
            if v.len() != n || v.iter().any(|row| row.len() != dim) {
                return Err(Error::Dimension(format!(
                    "parameter `{what}` must have {n} states x {dim} components"
                )));
            }
            Ok(())
        };
        let first =
            if kind == FieldKind::Constant && first.is_empty() { vec![vec![0.0; dim]; n] } else { first };
        expect(&first, "first")?;
        expect(&second, "second")?;
        if first.iter().chain(&second).flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("field parameters must be finite".into()));
        }
        if kind == FieldKind::Logistic && second.iter().flatten().any(|&k| k <= 0.0) {
            return Err(Error::InvalidArgument("logistic capacity K must be > 0".into()));
        }
        let coeffs = first
            .iter()
            .zip(&second)
            .map(|(p, s)| p.iter().copied().zip(s.iter().copied()).collect())
            .collect();
        Ok(Self {
            id: kind.name().to_string(),
            dim,
            repr: Repr::Catalog { kind, coeffs },
            declared_growth: None,
            declared_lipschitz: None,
        })
    }

    /// `b(u; x) = c_x`.
    pub fn constant(c: Vec<Vec<f64>>) -> Result<Self> {
        Self::catalog(FieldKind::Constant, Vec::new(), c)
    }

    /// `b(u; x) = a_x u + c_x`, componentwise.
    pub fn linear(a: Vec<Vec<f64>>, c: Vec<Vec<f64>>) -> Result<Self> {
        Self::catalog(FieldKind::Linear, a, c)
    }

    /// `b(u; x) = a_x sin(u) + c_x`, componentwise.
    pub fn bounded_trig(a: Vec<Vec<f64>>, c: Vec<Vec<f64>>) -> Result<Self> {
        Self::catalog(FieldKind::BoundedTrig, a, c)
    }

    /// `b(u; x) = r_x u (1 - u / K_x)`, componentwise.
    pub fn logistic(r: Vec<Vec<f64>>, k: Vec<Vec<f64>>) -> Result<Self> {
        Self::catalog(FieldKind::Logistic, r, k)
    }

    /// Scalar (`d = 1`) catalog field from one coefficient pair per state.
    pub fn scalar(kind: FieldKind, first: &[f64], second: &[f64]) -> Result<Self> {
        let wrap = |v: &[f64]| v.iter().map(|&a| vec![a]).collect::<Vec<_>>();
        let first = if kind == FieldKind::Constant && first.is_empty() {
            vec![vec![0.0]; second.len()]
        } else {
            wrap(first)
        };
        Self::catalog(kind, first, wrap(second))
    }

    /// Overrides the growth constant `L` and Lipschitz constant `C` that the
    /// condition checker compares against.
    pub fn with_declared(mut self, growth: Option<f64>, lipschitz: Option<f64>) -> Self {
        if growth.is_some() {
            self.declared_growth = growth;
        }
        if lipschitz.is_some() {
            self.declared_lipschitz = lipschitz;
        }
        self
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> FieldKind {
        match &self.repr {
            Repr::Catalog { kind, .. } => *kind,
            Repr::Averaged { base, .. } => base.kind(),
        }
    }

    pub fn n_states(&self) -> usize {
        match &self.repr {
            Repr::Catalog { coeffs, .. } => coeffs.len(),
            Repr::Averaged { .. } => 1,
        }
    }

    pub fn is_averaged(&self) -> bool {
        matches!(self.repr, Repr::Averaged { .. })
    }

    /// Writes `b(u; x)` into `out`.
    pub fn eval_into(&self, u: &[f64], x: usize, out: &mut [f64]) {
        match &self.repr {
            Repr::Catalog { kind, coeffs } => {
                for ((o, &ui), &c) in out.iter_mut().zip(u).zip(&coeffs[x]) {
                    *o = kind.value(c, ui);
                }
            }
            Repr::Averaged { base, weights } => {
                out.fill(0.0);
                let (kind, coeffs) = base.catalog_parts();
                for (&w, row) in weights.iter().zip(coeffs) {
                    for ((o, &ui), &c) in out.iter_mut().zip(u).zip(row) {
                        *o += w * kind.value(c, ui);
                    }
                }
            }
        }
    }

    pub fn eval(&self, u: &[f64], x: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.eval_into(u, x, &mut out);
        out
    }

    /// Derivative `d b_i / d u_i` for each component; the Jacobian of every
    /// catalog field is diagonal.
    pub fn diagonal_slope(&self, u: &[f64], x: usize) -> Vec<f64> {
        match &self.repr {
            Repr::Catalog { kind, coeffs } => {
                u.iter().zip(&coeffs[x]).map(|(&ui, &c)| kind.slope(c, ui)).collect()
            }
            Repr::Averaged { base, weights } => {
                let mut out = vec![0.0; self.dim];
                for (y, &w) in weights.iter().enumerate() {
                    for (o, s) in out.iter_mut().zip(base.diagonal_slope(u, y)) {
                        *o += w * s;
                    }
                }
                out
            }
        }
    }

    /// Jacobian `db/du` at `(u, x)`.
    pub fn jacobian(&self, u: &[f64], x: usize) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_vec(self.diagonal_slope(u, x)))
    }

    /// `b(u; x)` for a scalar field.
    pub fn value1(&self, u: f64, x: usize) -> f64 {
        let mut out = [0.0];
        self.eval_into(&[u], x, &mut out);
        out[0]
    }

    /// `db/du (u; x)` for a scalar field.
    pub fn slope1(&self, u: f64, x: usize) -> f64 {
        self.diagonal_slope(&[u], x)[0]
    }

    /// Averaged drift `b_hat(u) = sum_x pi[x] b(u; x)` as a single-state field.
    pub fn averaged(&self, pi: &[f64]) -> Result<VelocityField> {
        if self.is_averaged() {
            return Err(Error::InvalidArgument("field is already averaged".into()));
        }
        if pi.len() != self.n_states() {
            return Err(Error::Dimension(format!(
                "stationary vector has length {}, field has {} states",
                pi.len(),
                self.n_states()
            )));
        }
        Ok(VelocityField {
            id: format!("averaged-{}", self.id),
            dim: self.dim,
            declared_growth: self.declared_growth,
            declared_lipschitz: self.declared_lipschitz,
            repr: Repr::Averaged { base: Box::new(self.clone()), weights: pi.to_vec() },
        })
    }

    /// Invariant box on which the field is certified, if it is not global.
    /// For the logistic field this is `[0, max_x K_x]` per component.
    pub fn domain(&self) -> Option<Vec<(f64, f64)>> {
        match &self.repr {
            Repr::Catalog { kind: FieldKind::Logistic, coeffs } => Some(
                (0..self.dim).map(|i| (0.0, coeffs.iter().map(|c| c[i].1).fold(0.0, f64::max))).collect(),
            ),
            Repr::Catalog { .. } => None,
            Repr::Averaged { base, .. } => base.domain(),
        }
    }

    /// Growth constant `L` with `|b(u; x)| <= L (1 + |u|)`: the declared value if
    /// any, otherwise the analytic bound of the catalog shape (on its domain).
    pub fn growth_constant(&self) -> Option<f64> {
        self.declared_growth.or_else(|| self.analytic_growth())
    }

    /// Lipschitz constant `C` with `|b(u; x) - b(u'; x)| <= C |u - u'|`.
    pub fn lipschitz_constant(&self) -> Option<f64> {
        self.declared_lipschitz.or_else(|| self.analytic_lipschitz())
    }

    pub fn declared_growth(&self) -> Option<f64> {
        self.declared_growth
    }

    pub fn declared_lipschitz(&self) -> Option<f64> {
        self.declared_lipschitz
    }

    fn catalog_parts(&self) -> (FieldKind, &[Vec<(f64, f64)>]) {
        match &self.repr {
            Repr::Catalog { kind, coeffs } => (*kind, coeffs),
            Repr::Averaged { base, .. } => base.catalog_parts(),
        }
    }

    /// Per-component bounds combined in the Euclidean norm: if
    /// `|b_i(u_i)| <= L_i (1 + |u_i|)` then `|b(u)| <= sqrt(sum L_i^2) (1 + |u|)`.
    fn analytic_growth(&self) -> Option<f64> {
        let (kind, coeffs) = self.catalog_parts();
        let domain = self.domain();
        let per_component = |i: usize| {
            coeffs
                .iter()
                .map(|c| {
                    let (p, s) = c[i];
                    match kind {
                        FieldKind::Constant => s.abs(),
                        // |a u + c| and |a sin u + c| are both <= |c| + |a| |u|.
                        FieldKind::Linear | FieldKind::BoundedTrig => p.abs().max(s.abs()),
                        // u / (1 + u) <= 1 and |1 - u/K| <= max(1, Kmax/K - 1) on [0, Kmax].
                        FieldKind::Logistic => {
                            let kmax = domain.as_ref().map_or(s, |d| d[i].1);
                            p.abs() * (kmax / s - 1.0).max(1.0)
                        }
                    }
                })
                .fold(0.0, f64::max)
        };
        Some((0..self.dim).map(|i| per_component(i).powi(2)).sum::<f64>().sqrt())
    }

    /// Diagonal Jacobian: the Lipschitz constant is the largest component one.
    fn analytic_lipschitz(&self) -> Option<f64> {
        let (kind, coeffs) = self.catalog_parts();
        let domain = self.domain();
        let mut best = 0.0_f64;
        for i in 0..self.dim {
            for c in coeffs {
                let (p, s) = c[i];
                let l = match kind {
                    FieldKind::Constant => 0.0,
                    FieldKind::Linear | FieldKind::BoundedTrig => p.abs(),
                    FieldKind::Logistic => {
                        let kmax = domain.as_ref().map_or(s, |d| d[i].1);
                        p.abs() * (2.0 * kmax / s - 1.0).abs().max(1.0)
                    }
                };
                best = best.max(l);
            }
        }
        Some(best)
    }

    /// Global bound on `|b(u; x)|`, available for fields that are bounded on `R^d`.
    pub fn speed_bound(&self) -> Option<f64> {
        let (kind, coeffs) = self.catalog_parts();
        let per = |c: (f64, f64)| match kind {
            FieldKind::Constant => Some(c.1.abs()),
            FieldKind::BoundedTrig => Some(c.0.abs() + c.1.abs()),
            FieldKind::Linear if c.0 == 0.0 => Some(c.1.abs()),
            _ => None,
        };
        let mut total = 0.0;
        for i in 0..self.dim {
            let mut m = 0.0_f64;
            for c in coeffs {
                m = m.max(per(c[i])?);
            }
            total += m * m;
        }
        Some(f64::sqrt(total))
    }

    /// True when `b` vanishes identically in every state.
    pub fn is_zero(&self) -> bool {
        let (kind, coeffs) = self.catalog_parts();
        coeffs.iter().flatten().all(|&(p, s)| match kind {
            FieldKind::Constant => s == 0.0,
            FieldKind::Linear | FieldKind::BoundedTrig => p == 0.0 && s == 0.0,
            FieldKind::Logistic => p == 0.0,
        })
    }
}
