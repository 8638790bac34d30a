#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::Rng;
use switchavg::{FieldKind, GeneratorMatrix, VelocityField};

/// Random irreducible generator: rates in [0.2, 3], sparse random jump
/// kernel that always contains the cycle x -> x + 1.
pub fn random_generator<R: Rng>(n: usize, rng: &mut R) -> GeneratorMatrix {
    let rates: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..3.0)).collect();
    let mut jump = DMatrix::zeros(n, n);
    for x in 0..n {
        for y in 0..n {
            if y != x && rng.random_bool(0.6) {
                jump[(x, y)] = rng.random_range(0.05..1.0);
            }
        }
        jump[(x, (x + 1) % n)] += 0.5;
        let s: f64 = jump.row(x).iter().sum();
        for y in 0..n {
            jump[(x, y)] /= s;
        }
    }
    // Renormalisation can leave the row a few ulps off 1; fold it into the cycle entry.
    for x in 0..n {
        let s: f64 = jump.row(x).iter().sum();
        jump[(x, (x + 1) % n)] += 1.0 - s;
    }
    GeneratorMatrix::new(rates, jump).expect("random generator is valid")
}

pub fn random_linear_field<R: Rng>(n: usize, rng: &mut R) -> VelocityField {
    let a: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let c: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    VelocityField::scalar(FieldKind::Linear, &a, &c).unwrap()
}

pub fn random_polynomial<R: Rng>(rng: &mut R) -> Vec<f64> {
    let degree = rng.random_range(0..=4);
    (0..=degree).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Independent route to the potential: composite Simpson quadrature of
/// `exp(Q t) - Pi` over `[0, T*]`, with `T*` chosen from the spectral gap so
/// that the neglected tail is below `1e-8`.
pub fn potential_by_quadrature(g: &GeneratorMatrix, pi: &nalgebra::DVector<f64>) -> DMatrix<f64> {
    let n = g.len();
    let q = g.matrix();
    let projector = DMatrix::from_fn(n, n, |_, y| pi[y]);
    let eig = q.complex_eigenvalues();
    let gap = eig.iter().map(|z| -z.re).filter(|&r| r > 1e-9).fold(f64::INFINITY, f64::min);
    // |P_t - Pi| <= K exp(-gap t); K = 100 leaves room for non-normality.
    let k = 100.0;
    let t_star = ((k / (gap * 1e-8)).ln() / gap).max(1.0);
    let tail = g.transition_semigroup(t_star).unwrap() - &projector;
    assert!(tail.amax() < 1e-9, "tail not converged: {}", tail.amax());

    let norm_q = q.amax() * n as f64;
    let h_target = 0.02 / norm_q.max(1.0);
    let mut m = (t_star / h_target).ceil() as usize;
    if m % 2 == 1 {
        m += 1;
    }
    let h = t_star / m as f64;
    let step = g.transition_semigroup(h).unwrap();
    let mut p = DMatrix::<f64>::identity(n, n);
    let mut acc = DMatrix::<f64>::zeros(n, n);
    for j in 0..=m {
        let w = if j == 0 || j == m {
            1.0
        } else if j % 2 == 1 {
            4.0
        } else {
            2.0
        };
        acc += (&p - &projector) * w;
        p = &p * &step;
    }
    acc * (h / 3.0)
}
