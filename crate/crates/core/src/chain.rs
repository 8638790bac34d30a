//! Finite-state continuous-time Markov chains.
//!
//! A chain is given by exit rates `q[x]` and a jump kernel `P[x, y]` with zero
//! diagonal; the generator is `Q[x, y] = q[x] P[x, y]` off the diagonal and
//! `Q[x, x] = -q[x]`. From an irreducible generator we derive the stationary
//! law `pi`, the projector `Pi` (every row equal to `pi`) and the potential
//! `R0 = int_0^inf (P_t - Pi) dt`, normalised so that `Q R0 = R0 Q = Pi - I`.

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use crate::error::{Error, Result};

/// Default bound on the number of states accepted by [`GeneratorMatrix::new`].
pub const DEFAULT_MAX_STATES: usize = 64;

const ROW_SUM_TOL: f64 = 1e-12;

/// Generator of an irreducible finite-state Markov chain.
#[derive(Debug, Clone)]
pub struct GeneratorMatrix {
    labels: Vec<String>,
    rates: Vec<f64>,
    jump: DMatrix<f64>,
    q: DMatrix<f64>,
    next_state: Vec<Option<WeightedIndex<f64>>>,
}

impl GeneratorMatrix {
    /// Builds `Q = q P` with default labels `s1, s2, ...`.
    pub fn new(rates: Vec<f64>, jump: DMatrix<f64>) -> Result<Self> {
        let labels = (1..=rates.len()).map(|i| format!("s{i}")).collect();
        Self::with_labels(labels, rates, jump, DEFAULT_MAX_STATES)
    }

    pub fn with_labels(
        labels: Vec<String>,
        rates: Vec<f64>,
        jump: DMatrix<f64>,
        max_states: usize,
    ) -> Result<Self> {
        let n = rates.len();
        if n == 0 {
            return Err(Error::Dimension("chain must have at least one state".into()));
        }
        if labels.len() != n {
            return Err(Error::Dimension(format!("{} labels for {} exit rates", labels.len(), n)));
        }
        if jump.nrows() != n || jump.ncols() != n {
            return Err(Error::Dimension(format!(
                "jump kernel is {}x{}, expected {n}x{n}",
                jump.nrows(),
                jump.ncols()
            )));
        }
        if n > max_states {
            return Err(Error::TooManyStates { n, limit: max_states });
        }
        for (x, &rate) in rates.iter().enumerate() {
            if !rate.is_finite() || rate < 0.0 {
                return Err(Error::NegativeRate { state: labels[x].clone(), rate });
            }
            if n > 1 && rate == 0.0 {
                return Err(Error::AbsorbingState { state: labels[x].clone() });
            }
        }
        if n > 1 {
            for x in 0..n {
                let row = jump.row(x);
                let bad = |reason: String| Error::InvalidKernel { state: labels[x].clone(), reason };
                if row[x] != 0.0 {
                    return Err(bad(format!("diagonal entry is {}, must be 0", row[x])));
                }
                if let Some(y) = row.iter().position(|p| !p.is_finite() || *p < 0.0) {
                    return Err(bad(format!("entry for `{}` is {}", labels[y], row[y])));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > ROW_SUM_TOL {
                    return Err(bad(format!("row sums to {sum}, expected 1")));
                }
            }
        } else if jump[(0, 0)] != 0.0 {
            return Err(Error::InvalidKernel {
                state: labels[0].clone(),
                reason: format!("diagonal entry is {}, must be 0", jump[(0, 0)]),
            });
        }
        if n == 1 && rates[0] != 0.0 {
            return Err(Error::InvalidKernel {
                state: labels[0].clone(),
                reason: "a single-state chain has no jumps; its exit rate must be 0".into(),
            });
        }

        let mut q = DMatrix::zeros(n, n);
        for x in 0..n {
            for y in 0..n {
                if y != x {
                    q[(x, y)] = rates[x] * jump[(x, y)];
                }
            }
            q[(x, x)] = -rates[x];
        }

        check_irreducible(&q, &labels)?;

        let next_state = (0..n)
            .map(|x| if n == 1 { None } else { WeightedIndex::new(jump.row(x).iter().copied()).ok() })
            .collect();

        Ok(Self { labels, rates, jump, q, next_state })
    }

    pub fn len(&self) -> usize {
        self.rates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rates.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn jump_kernel(&self) -> &DMatrix<f64> {
        &self.jump
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.q
    }

    /// Applies `Q` to a function on the state space in the jump form
    /// `(Q g)(x) = sum_y Q[x, y] (g(y) - g(x))`, so that a constant `g` maps to
    /// an exact zero.
    pub fn apply(&self, x: usize, g: impl Fn(usize) -> f64) -> f64 {
        let gx = g(x);
        let mut acc = 0.0;
        for y in 0..self.len() {
            if y != x {
                let rate = self.q[(x, y)];
                if rate != 0.0 {
                    acc += rate * (g(y) - gx);
                }
            }
        }
        acc
    }

    /// Stationary distribution: solves `pi Q = 0`, `sum pi = 1`.
    pub fn stationary_distribution(&self) -> Result<DVector<f64>> {
        let n = self.len();
        if n == 1 {
            return Ok(DVector::from_element(1, 1.0));
        }
        // Replace the last balance equation with the normalisation.
        let mut a = self.q.transpose();
        a.row_mut(n - 1).fill(1.0);
        let mut rhs = DVector::zeros(n);
        rhs[n - 1] = 1.0;
        let pi = a
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Numerical("singular system for the stationary distribution".into()))?;

        if pi.iter().any(|p| !p.is_finite() || *p <= 0.0) {
            return Err(Error::Numerical(format!(
                "stationary solve produced a non-positive entry: {:?}",
                pi.as_slice()
            )));
        }
        let scale = self.rates.iter().fold(0.0_f64, |m, r| m.max(*r));
        let residual = (pi.transpose() * &self.q).amax();
        if residual > 1e-9 * scale.max(1.0) {
            return Err(Error::Numerical(format!(
                "stationary solve is ill-conditioned: |pi Q| = {residual:e}"
            )));
        }
        Ok(pi)
    }

    /// Potential matrix `R0 = (Pi - Q)^-1 - Pi` for the stationary law `pi`.
    pub fn potential_matrix(&self, pi: &DVector<f64>) -> Result<DMatrix<f64>> {
        let n = self.len();
        if pi.len() != n {
            return Err(Error::Dimension(format!(
                "stationary vector has length {}, chain has {n} states",
                pi.len()
            )));
        }
        let projector = projector(pi);
        let inverse = (&projector - &self.q)
            .try_inverse()
            .ok_or_else(|| Error::Numerical("Pi - Q is singular".into()))?;
        Ok(inverse - projector)
    }

    /// Transition matrix `P_t = exp(t Q)`.
    pub fn transition_semigroup(&self, t: f64) -> Result<DMatrix<f64>> {
        if t < 0.0 || !t.is_finite() {
            return Err(Error::InvalidArgument(format!("semigroup time must be >= 0, got {t}")));
        }
        Ok((&self.q * t).exp())
    }

    /// Exact sample of the switching process `kappa(t / epsilon)` on `[0, horizon]`.
    ///
    /// The holding time in state `x` is exponential with rate `q[x] / epsilon`;
    /// the next state is drawn from row `x` of the jump kernel.
    pub fn simulate(&self, initial: usize, horizon: f64, epsilon: f64, key: StreamKey) -> Result<JumpPath> {
        let mut rng = key.rng();
        let mut path = self.sample_path(initial, horizon, epsilon, &mut rng)?;
        path.key = Some(key);
        Ok(path)
    }

    /// As [`simulate`](Self::simulate) but drawing from a caller-owned generator.
    pub fn sample_path<R: Rng + ?Sized>(
        &self,
        initial: usize,
        horizon: f64,
        epsilon: f64,
        rng: &mut R,
    ) -> Result<JumpPath> {
        if initial >= self.len() {
            return Err(Error::InvalidArgument(format!(
                "initial state index {initial} out of range for {} states",
                self.len()
            )));
        }
        if horizon <= 0.0 || !horizon.is_finite() {
            return Err(Error::InvalidArgument(format!("horizon must be > 0, got {horizon}")));
        }
        if epsilon <= 0.0 || !epsilon.is_finite() {
            return Err(Error::InvalidArgument(format!("epsilon must be > 0, got {epsilon}")));
        }

        let mut jump_times = Vec::new();
        let mut states = vec![initial];
        let mut t = 0.0;
        let mut x = initial;
        while let Some(next) = &self.next_state[x] {
            let holding = Exp::new(self.rates[x] / epsilon)
                .map_err(|e| Error::Numerical(format!("holding-time law: {e}")))?;
            t += holding.sample(rng);
            if t >= horizon {
                break;
            }
            x = next.sample(rng);
            jump_times.push(t);
            states.push(x);
        }
        Ok(JumpPath { horizon, epsilon, jump_times, states, key: None })
    }
}

/// Rank-one projector with every row equal to `pi`.
pub fn projector(pi: &DVector<f64>) -> DMatrix<f64> {
    let n = pi.len();
    DMatrix::from_fn(n, n, |_, y| pi[y])
}

fn check_irreducible(q: &DMatrix<f64>, labels: &[String]) -> Result<()> {
    let n = q.nrows();
    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(x) = stack.pop() {
            for y in 0..n {
                let rate = if forward { q[(x, y)] } else { q[(y, x)] };
                if y != x && rate > 0.0 && !seen[y] {
                    seen[y] = true;
                    stack.push(y);
                }
            }
        }
        seen
    };
    if let Some(y) = reach(true).iter().position(|s| !s) {
        return Err(Error::Reducible { from: labels[0].clone(), to: labels[y].clone() });
    }
    if let Some(y) = reach(false).iter().position(|s| !s) {
        return Err(Error::Reducible { from: labels[y].clone(), to: labels[0].clone() });
    }
    Ok(())
}

/// Stationary law, projector and potential of an irreducible generator.
#[derive(Debug, Clone)]
pub struct ChainAnalysis {
    pub pi: DVector<f64>,
    pub projector: DMatrix<f64>,
    pub potential: DMatrix<f64>,
}

impl ChainAnalysis {
    pub fn new(generator: &GeneratorMatrix) -> Result<Self> {
        let pi = generator.stationary_distribution()?;
        let potential = generator.potential_matrix(&pi)?;
        Ok(Self { projector: projector(&pi), pi, potential })
    }

    /// Max-norm residuals of the defining identities.
    pub fn identity_residuals(&self, generator: &GeneratorMatrix) -> IdentityResiduals {
        let q = generator.matrix();
        let n = q.nrows();
        let target = &self.projector - DMatrix::<f64>::identity(n, n);
        IdentityResiduals {
            balance: (self.pi.transpose() * q).amax(),
            normalisation: (self.pi.sum() - 1.0).abs(),
            q_r0: (q * &self.potential - &target).amax(),
            r0_q: (&self.potential * q - &target).amax(),
            pi_r0: (&self.projector * &self.potential).amax(),
            r0_pi: (&self.potential * &self.projector).amax(),
            r0_row_sums: self.potential.column_sum().amax(),
        }
    }
}

/// Residuals of `pi Q = 0`, `sum pi = 1`, `Q R0 = R0 Q = Pi - I`,
/// `Pi R0 = R0 Pi = 0` and zero row sums of `R0`, all in the max norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentityResiduals {
    pub balance: f64,
    pub normalisation: f64,
    pub q_r0: f64,
    pub r0_q: f64,
    pub pi_r0: f64,
    pub r0_pi: f64,
    pub r0_row_sums: f64,
}

/// Identifies an independent random stream: a ChaCha8 generator seeded from
/// `seed` and positioned on stream `stream`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    pub stream: u64,
}

impl StreamKey {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

/// A sample of the switching process on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpPath {
    pub horizon: f64,
    pub epsilon: f64,
    /// Strictly increasing jump times in `(0, horizon)`.
    pub jump_times: Vec<f64>,
    /// Visited state indices; `states.len() == jump_times.len() + 1`.
    pub states: Vec<usize>,
    pub key: Option<StreamKey>,
}

impl JumpPath {
    /// Path with prescribed jump times, mostly for tests and replays.
    pub fn from_jumps(horizon: f64, epsilon: f64, jump_times: Vec<f64>, states: Vec<usize>) -> Result<Self> {
        if states.len() != jump_times.len() + 1 {
            return Err(Error::Dimension(format!("{} states for {} jumps", states.len(), jump_times.len())));
        }
        let mut prev = 0.0;
        for &t in &jump_times {
            if t <= prev || !t.is_finite() || t >= horizon {
                return Err(Error::InvalidArgument(format!(
                    "jump times must be strictly increasing in (0, {horizon})"
                )));
            }
            prev = t;
        }
        if states.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument("consecutive states must differ".into()));
        }
        Ok(Self { horizon, epsilon, jump_times, states, key: None })
    }

    pub fn jump_count(&self) -> usize {
        self.jump_times.len()
    }

    pub fn initial_state(&self) -> usize {
        self.states[0]
    }

    pub fn state_at(&self, t: f64) -> usize {
        let k = self.jump_times.partition_point(|&s| s <= t);
        self.states[k]
    }

    /// Iterates over `(start, end, state)` sojourn intervals covering `[0, horizon]`.
    pub fn sojourns(&self) -> impl Iterator<Item = (f64, f64, usize)> + '_ {
        let n = self.states.len();
        (0..n).map(move |k| {
            let start = if k == 0 { 0.0 } else { self.jump_times[k - 1] };
            let end = if k + 1 == n { self.horizon } else { self.jump_times[k] };
            (start, end, self.states[k])
        })
    }

    /// Time spent in each state, for a chain with `n_states` states.
    pub fn occupation_times(&self, n_states: usize) -> Vec<f64> {
        let mut occ = vec![0.0; n_states];
        for (a, b, x) in self.sojourns() {
            occ[x] += b - a;
        }
        occ
    }
}
