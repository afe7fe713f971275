#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use wdrc_core::hinf::{lambda_star, FeasibilityMode};
use wdrc_core::linalg::{eigenvalues, modulus, spectral_radius};
use wdrc_core::model::normalize_samples;
use wdrc_core::{DisturbanceModel64, SystemModel64};

pub fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal) * scale)
}

pub struct Case {
    pub model: SystemModel64,
    pub data: DisturbanceModel64,
    pub lambda_star: f64,
    pub lambda: f64,
    pub seed: u64,
}

/// Random controllable, observable system with nonsingular `A` and `range(Xi)` inside `range(B)`,
/// so `W >= 0` once the penalty is large enough.
pub fn random_model(seed: u64, n: usize, m: usize, k: usize, zero_qf: bool) -> SystemModel64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let radius = 0.5 + 0.7 * rng.random::<f64>();
    let a = loop {
        let a = gaussian(&mut rng, n, n, 1.0 / (n as f64).sqrt());
        let eigs = eigenvalues(&a).unwrap();
        let rho = eigs.iter().map(|z| modulus(*z)).fold(0.0, f64::max);
        let smallest = eigs.iter().map(|z| modulus(*z)).fold(f64::INFINITY, f64::min);
        if smallest > 0.05 * rho {
            break a * (radius / rho);
        }
    };
    let b = gaussian(&mut rng, n, m, 1.0);
    let xi = &b * gaussian(&mut rng, m, k, 0.5);
    let c = gaussian(&mut rng, n, n, 1.0 / (n as f64).sqrt());
    let q = c.transpose() * c + DMatrix::identity(n, n) * 0.1;
    let d = gaussian(&mut rng, m, m, 0.5);
    let r = d.transpose() * d + DMatrix::identity(m, m) * 0.5;
    let qf = if zero_qf { DMatrix::zeros(n, n) } else { q.clone() };
    SystemModel64::new(a, b, xi, q, r, qf).unwrap()
}

/// Zero-mean samples, so the mean shift vanishes.
pub fn centered_samples(seed: u64, k: usize, count: usize, scale: f64) -> DisturbanceModel64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let raw: Vec<DVector<f64>> = (0..count)
        .map(|_| DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal) * scale))
        .collect();
    let mean = raw.iter().fold(DVector::zeros(k), |acc, w| acc + w) / count as f64;
    let centered: Vec<_> = raw.iter().map(|w| w - &mean).collect();
    normalize_samples(&centered).unwrap()
}

/// Random case with sizes drawn from the seed and a penalty `factor * lambda*`.
pub fn random_case(seed: u64, max_n: usize, factor: f64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(31).wrapping_add(7));
    let n = rng.random_range(1..=max_n);
    let m = rng.random_range(1..=n);
    let k = rng.random_range(1..=m);
    let count = rng.random_range(1..=5);
    let model = random_model(seed, n, m, k, false);
    let data = centered_samples(seed, k, count, 0.3);
    let star = lambda_star(&model, FeasibilityMode::Infinite, None, None, 1e-8).unwrap().lambda_star;
    Case {
        model,
        data,
        lambda_star: star,
        lambda: factor * star,
        seed,
    }
}

pub fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / (1.0 + b.norm())
}

/// Standard-form LQG Riccati iteration `P = Q + A'PA - A'PB (R + B'PB)^-1 B'PA`.
pub fn lqg_oracle(model: &SystemModel64) -> DMatrix<f64> {
    let (a, b, q, r) = (&model.a, &model.b, &model.q, &model.r);
    let mut p = q.clone();
    for _ in 0..200_000 {
        let bpb = r + b.transpose() * &p * b;
        let gain = bpb.lu().solve(&(b.transpose() * &p * a)).unwrap();
        let next = q + a.transpose() * &p * a - a.transpose() * &p * b * gain;
        let next = (&next + next.transpose()) * 0.5;
        let step = (&next - &p).norm();
        p = next;
        if step <= 1e-15 * (1.0 + p.norm()) {
            break;
        }
    }
    p
}

pub fn closed_loop_radius(m: &DMatrix<f64>) -> f64 {
    spectral_radius(m).unwrap()
}
