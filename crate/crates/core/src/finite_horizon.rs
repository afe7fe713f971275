//! Backward Riccati recursion for the finite-horizon minimax problem.
//!
//! With `W = B R^-1 B' - Xi Xi' / lambda`, one stage maps `(P+, z+)` to
//!
//! ```text
//! P = Q + A' [I + P+ W]^-1 P+ A
//! z = z+ + tr[(I - Xi' P+ Xi / lambda)^-1 Xi' P+ Xi Sigma]
//! ```
//!
//! and the optimal gain is `K = -R^-1 B' [I + P+ W]^-1 P+ A`. Letting
//! `1 / lambda -> 0` recovers the LQG recursion.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{max_eigenvalue, solve_checked, symmetrize};
use crate::model::{DisturbanceModel, SystemModel};
use crate::scalar::{lit, to_f64, Real};

/// Stage-indexed solution: `p[t]`, `z[t]` for `t = 0..=T`, `k[t]` and `margins[t]` for `t = 0..T`.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteHorizonSolution<T: Real> {
    pub horizon: usize,
    pub p: Vec<DMatrix<T>>,
    pub z: Vec<T>,
    pub k: Vec<DMatrix<T>>,
    /// `lambda - max eig(Xi' P_{t+1} Xi)` for each stage.
    pub margins: Vec<T>,
}

/// Worst-case opponent: support points `S x + b_i`, each with weight `1/N`.
#[derive(Debug, Clone, PartialEq)]
pub struct WorstCasePolicy<T: Real> {
    pub s: DMatrix<T>,
    pub b: Vec<DVector<T>>,
    /// Zero-mean empirical samples the support points are paired with.
    pub samples: Vec<DVector<T>>,
    /// Mean removed from the raw samples; re-added to every simulated disturbance.
    pub mean_shift: DVector<T>,
}

impl<T: Real> WorstCasePolicy<T> {
    pub fn weight(&self) -> T {
        T::one() / lit::<T>(self.b.len() as f64)
    }

    /// Support points `S x + b_i` of the worst-case distribution at state `x`.
    pub fn support(&self, x: &DVector<T>) -> Vec<DVector<T>> {
        let sx = &self.s * x;
        self.b.iter().map(|b| &sx + b).collect()
    }

    /// Squared transport cost of pairing `S x + b_i` with sample `i`.
    pub fn identity_coupling_cost(&self, x: &DVector<T>) -> T {
        let sx = &self.s * x;
        let total = self
            .b
            .iter()
            .zip(&self.samples)
            .fold(T::zero(), |acc, (b, w)| acc + (&sx + b - w).norm_squared());
        total * self.weight()
    }
}

pub(crate) fn check_lambda<T: Real>(lambda: T) -> Result<()> {
    if lambda > T::zero() && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidPenalty(to_f64(lambda)))
    }
}

/// `lambda - max eig(Xi' P Xi)`; positive iff the stage is well posed.
pub fn feasibility_margin<T: Real>(p: &DMatrix<T>, model: &SystemModel<T>, lambda: T) -> T {
    if model.k() == 0 {
        return lambda;
    }
    lambda - max_eigenvalue(&(model.xi.transpose() * p * &model.xi))
}

/// `[I + P+ W]^-1 P+ A` with `W = B R^-1 B' - inv_lambda Xi Xi'`.
fn feedback_core<T: Real>(p_next: &DMatrix<T>, model: &SystemModel<T>, inv_lambda: T) -> Result<DMatrix<T>> {
    let n = model.n();
    let w = model.control_weight() - &model.xi * model.xi.transpose() * inv_lambda;
    let bracket = DMatrix::identity(n, n) + p_next * w;
    solve_checked(&bracket, &(p_next * &model.a))
}

pub(crate) fn noise_increment<T: Real>(
    p_next: &DMatrix<T>,
    model: &SystemModel<T>,
    inv_lambda: T,
    sigma: &DMatrix<T>,
) -> Result<T> {
    let k = model.k();
    if sigma.shape() != (k, k) {
        return Err(Error::Dimension(format!(
            "Sigma is {}x{}, expected {k}x{k}",
            sigma.nrows(),
            sigma.ncols()
        )));
    }
    if k == 0 {
        return Ok(T::zero());
    }
    let xpx = model.xi.transpose() * p_next * &model.xi;
    let scaled = DMatrix::identity(k, k) - &xpx * inv_lambda;
    Ok(solve_checked(&scaled, &(xpx * sigma))?.trace())
}

fn step_with<T: Real>(
    p_next: &DMatrix<T>,
    z_next: T,
    model: &SystemModel<T>,
    inv_lambda: T,
    sigma: &DMatrix<T>,
) -> Result<(DMatrix<T>, T, DMatrix<T>)> {
    let core = feedback_core(p_next, model, inv_lambda)?;
    let p = symmetrize(&(&model.q + model.a.transpose() * &core));
    let z = z_next + noise_increment(p_next, model, inv_lambda, sigma)?;
    let k = -(model.r_inverse() * model.b.transpose() * core);
    Ok((p, z, k))
}

fn require_feasible<T: Real>(p_next: &DMatrix<T>, model: &SystemModel<T>, lambda: T, stage: Option<usize>) -> Result<T> {
    check_lambda(lambda)?;
    let margin = feasibility_margin(p_next, model, lambda);
    if margin > T::zero() {
        Ok(margin)
    } else {
        Err(Error::Feasibility {
            stage,
            margin: to_f64(margin),
        })
    }
}

/// One step of the minimax Riccati recursion.
pub fn riccati_step<T: Real>(
    p_next: &DMatrix<T>,
    z_next: T,
    model: &SystemModel<T>,
    lambda: T,
    sigma: &DMatrix<T>,
) -> Result<(DMatrix<T>, T)> {
    require_feasible(p_next, model, lambda, None)?;
    let (p, z, _) = step_with(p_next, z_next, model, T::one() / lambda, sigma)?;
    Ok((p, z))
}

/// One step of the standard LQG recursion.
pub fn lqg_riccati_step<T: Real>(
    p_next: &DMatrix<T>,
    z_next: T,
    model: &SystemModel<T>,
    sigma: &DMatrix<T>,
) -> Result<(DMatrix<T>, T)> {
    let (p, z, _) = step_with(p_next, z_next, model, T::zero(), sigma)?;
    Ok((p, z))
}

/// Minimax feedback gain computed from the value matrix one stage ahead.
pub fn gain<T: Real>(p_next: &DMatrix<T>, model: &SystemModel<T>, lambda: T) -> Result<DMatrix<T>> {
    require_feasible(p_next, model, lambda, None)?;
    let core = feedback_core(p_next, model, T::one() / lambda)?;
    Ok(-(model.r_inverse() * model.b.transpose() * core))
}

pub fn lqg_gain<T: Real>(p_next: &DMatrix<T>, model: &SystemModel<T>) -> Result<DMatrix<T>> {
    let core = feedback_core(p_next, model, T::zero())?;
    Ok(-(model.r_inverse() * model.b.transpose() * core))
}

/// Runs the recursion backward from `P_T = Qf`, `z_T = 0`.
pub fn solve_finite<T: Real>(
    model: &SystemModel<T>,
    data: &DisturbanceModel<T>,
    lambda: T,
    horizon: usize,
) -> Result<FiniteHorizonSolution<T>> {
    check_lambda(lambda)?;
    backward(model, data, horizon, Some(lambda))
}

/// Finite-horizon LQG solution (the `lambda -> infinity` limit).
pub fn solve_finite_lqg<T: Real>(
    model: &SystemModel<T>,
    data: &DisturbanceModel<T>,
    horizon: usize,
) -> Result<FiniteHorizonSolution<T>> {
    backward(model, data, horizon, None)
}

fn backward<T: Real>(
    model: &SystemModel<T>,
    data: &DisturbanceModel<T>,
    horizon: usize,
    lambda: Option<T>,
) -> Result<FiniteHorizonSolution<T>> {
    if horizon == 0 {
        return Err(Error::Dimension("horizon must be at least 1".into()));
    }
    if data.k() != model.k() {
        return Err(Error::Dimension(format!(
            "samples have dimension {}, model expects {}",
            data.k(),
            model.k()
        )));
    }
    let n = model.n();
    let mut p = vec![DMatrix::zeros(n, n); horizon + 1];
    let mut z = vec![T::zero(); horizon + 1];
    let mut k = vec![DMatrix::zeros(model.m(), n); horizon];
    let mut margins = vec![T::zero(); horizon];
    p[horizon] = model.qf.clone();
    for t in (0..horizon).rev() {
        let inv_lambda = match lambda {
            Some(l) => {
                margins[t] = require_feasible(&p[t + 1], model, l, Some(t))?;
                T::one() / l
            }
            None => {
                margins[t] = lit(f64::INFINITY);
                T::zero()
            }
        };
        let (pt, zt, kt) = step_with(&p[t + 1], z[t + 1], model, inv_lambda, &data.sigma)?;
        p[t] = pt;
        z[t] = zt;
        k[t] = kt;
    }
    Ok(FiniteHorizonSolution {
        horizon,
        p,
        z,
        k,
        margins,
    })
}

/// Worst-case distribution policy for the stage whose value-ahead matrix is `p_next`.
pub fn worst_case_policy<T: Real>(
    p_next: &DMatrix<T>,
    k: &DMatrix<T>,
    model: &SystemModel<T>,
    lambda: T,
    data: &DisturbanceModel<T>,
) -> Result<WorstCasePolicy<T>> {
    require_feasible(p_next, model, lambda, None)?;
    let kdim = model.k();
    let xp = model.xi.transpose() * p_next;
    let shifted = DMatrix::identity(kdim, kdim) * lambda - &xp * &model.xi;
    let closed = &model.a + &model.b * k;
    let s = solve_checked(&shifted, &(&xp * closed))?;
    let mut rhs = DMatrix::zeros(kdim, data.len());
    for (j, w) in data.samples.iter().enumerate() {
        rhs.set_column(j, &(w * lambda));
    }
    let offsets = solve_checked(&shifted, &rhs)?;
    Ok(WorstCasePolicy {
        s,
        b: offsets.column_iter().map(|c| c.into_owned()).collect(),
        samples: data.samples.clone(),
        mean_shift: data.mean_shift.clone(),
    })
}

/// State-feedback part of the worst-case disturbance: `(lambda I - Xi' P Xi)^-1 Xi' P (A + B K)`.
pub fn disturbance_gain<T: Real>(
    p_next: &DMatrix<T>,
    k: &DMatrix<T>,
    model: &SystemModel<T>,
    lambda: T,
) -> Result<DMatrix<T>> {
    require_feasible(p_next, model, lambda, None)?;
    let kdim = model.k();
    let xp = model.xi.transpose() * p_next;
    let shifted = DMatrix::identity(kdim, kdim) * lambda - &xp * &model.xi;
    solve_checked(&shifted, &(&xp * (&model.a + &model.b * k)))
}

/// Worst-case policies for every stage of a finite-horizon solution.
pub fn stage_policies<T: Real>(
    solution: &FiniteHorizonSolution<T>,
    model: &SystemModel<T>,
    lambda: T,
    data: &DisturbanceModel<T>,
) -> Result<Vec<WorstCasePolicy<T>>> {
    (0..solution.horizon)
        .map(|t| worst_case_policy(&solution.p[t + 1], &solution.k[t], model, lambda, data))
        .collect()
}

/// Unique maximizer of `V+(A x + B u + Xi w) - lambda |w_hat - w|^2` over `w`.
pub fn inner_maximizer<T: Real>(
    p_next: &DMatrix<T>,
    model: &SystemModel<T>,
    lambda: T,
    x: &DVector<T>,
    u: &DVector<T>,
    w_hat: &DVector<T>,
) -> Result<DVector<T>> {
    require_feasible(p_next, model, lambda, None)?;
    let kdim = model.k();
    let xp = model.xi.transpose() * p_next;
    let shifted = DMatrix::identity(kdim, kdim) * lambda - &xp * &model.xi;
    let rhs = &xp * (&model.a * x + &model.b * u) + w_hat * lambda;
    let sol = solve_checked(&shifted, &DMatrix::from_column_slice(kdim, 1, rhs.as_slice()))?;
    Ok(sol.column(0).into_owned())
}

/// `x' P_t x + z_t`.
pub fn value<T: Real>(solution: &FiniteHorizonSolution<T>, x: &DVector<T>, t: usize) -> Result<T> {
    if t > solution.horizon {
        return Err(Error::StageOutOfRange {
            stage: t,
            horizon: solution.horizon,
        });
    }
    Ok((x.transpose() * &solution.p[t] * x)[(0, 0)] + solution.z[t])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::normalize_samples;

    // Positive root of 0.8 P^2 - 0.8 P - 1 = 0.
    fn scalar_are_root() -> f64 {
        (0.8 + (0.64f64 + 3.2).sqrt()) / 1.6
    }

    fn scalar(qf: f64) -> SystemModel<f64> {
        SystemModel::scalar(1.0, 1.0, 1.0, 1.0, 1.0, qf).unwrap()
    }

    fn m1(x: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, x)
    }

    fn samples(xs: &[f64]) -> DisturbanceModel<f64> {
        normalize_samples(&xs.iter().map(|&x| DVector::from_vec(vec![x])).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn margin_examples() {
        let m: SystemModel<f64> = SystemModel::new(
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 1),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::identity(1, 1),
            DMatrix::zeros(2, 2),
        )
        .unwrap();
        let p = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 3.0]));
        assert!((feasibility_margin(&p, &m, 5.0) - 2.0).abs() < 1e-14);

        let zero_xi = SystemModel::scalar(1.0, 1.0, 0.0, 1.0, 1.0, 0.0).unwrap();
        assert_eq!(feasibility_margin(&m1(123.0), &zero_xi, 0.7), 0.7);

        let margin = feasibility_margin(&m1(1.724745), &scalar(0.0), 2.0);
        assert!((margin - 0.275255).abs() < 1e-12);
    }

    #[test]
    fn step_without_inputs_is_lyapunov() {
        let m = SystemModel::scalar(0.9, 0.0, 0.0, 2.0, 1.0, 0.0).unwrap();
        let (p, z) = riccati_step(&m1(3.0), 0.25, &m, 1.0, &m1(1.0)).unwrap();
        assert!((p[(0, 0)] - (2.0 + 0.81 * 3.0)).abs() < 1e-14);
        assert_eq!(z, 0.25);
    }

    #[test]
    fn step_scalar_examples() {
        let m = scalar(0.0);
        let (p, z) = riccati_step(&m1(0.0), 0.5, &m, 5.0, &m1(2.0)).unwrap();
        assert_eq!((p[(0, 0)], z), (1.0, 0.5));

        let (p, z) = riccati_step(&m1(1.0), 0.0, &m, 5.0, &m1(2.0)).unwrap();
        assert!((p[(0, 0)] - (1.0 + 1.0 / 1.8)).abs() < 1e-14);
        assert!((z - 1.25 * 2.0).abs() < 1e-14);
    }

    #[test]
    fn step_rejects_infeasible_penalty() {
        let err = riccati_step(&m1(6.0), 0.0, &scalar(0.0), 5.0, &m1(1.0)).unwrap_err();
        assert!(matches!(err, Error::Feasibility { stage: None, .. }));
    }

    #[test]
    fn lqg_step_examples() {
        let m = scalar(0.0);
        let (p, z) = lqg_riccati_step(&m1(1.0), 0.0, &m, &m1(1.0)).unwrap();
        assert_eq!(p[(0, 0)], 1.5);
        assert_eq!(z, 1.0);

        let uncontrolled = SystemModel::scalar(2.0, 0.0, 1.0, 1.0, 1.0, 0.0).unwrap();
        let (p, _) = lqg_riccati_step(&m1(1.0), 0.0, &uncontrolled, &m1(1.0)).unwrap();
        assert_eq!(p[(0, 0)], 5.0);

        let mut p = m1(0.0);
        for _ in 0..200 {
            p = lqg_riccati_step(&p, 0.0, &m, &m1(0.0)).unwrap().0;
        }
        let golden = (1.0 + 5f64.sqrt()) / 2.0;
        assert!((p[(0, 0)] - golden).abs() < 1e-12);
    }

    #[test]
    fn gain_examples() {
        let m = scalar(0.0);
        assert_eq!(gain(&m1(0.0), &m, 5.0).unwrap()[(0, 0)], 0.0);

        let root = scalar_are_root();
        let k = gain(&m1(root), &m, 5.0).unwrap()[(0, 0)];
        assert!((k + root / (1.0 + 0.8 * root)).abs() < 1e-14);
        assert!((k + 0.724745).abs() < 1e-6);

        let p = m1(1.3);
        let robust = gain(&p, &m, 1e8).unwrap()[(0, 0)];
        let lqg = lqg_gain(&p, &m).unwrap()[(0, 0)];
        assert!((robust - lqg).abs() <= 1e-6 * lqg.abs());
    }

    #[test]
    fn solve_finite_examples() {
        let data = samples(&[-1.0, 1.0]);
        let one_step = solve_finite(&scalar(0.0), &data, 5.0, 1).unwrap();
        assert_eq!(one_step.p[0][(0, 0)], 1.0);
        assert_eq!(one_step.z[0], 0.0);
        assert_eq!(one_step.k[0][(0, 0)], 0.0);

        let long = solve_finite(&scalar(0.0), &data, 5.0, 50).unwrap();
        assert!((long.p[0][(0, 0)] - scalar_are_root()).abs() < 1e-8);
        assert!(long.margins.iter().all(|&m| m > 0.0));
        assert_eq!(long.p[50][(0, 0)], 0.0);
        assert_eq!(long.z[50], 0.0);
    }

    #[test]
    fn solve_finite_reports_failing_stage() {
        let err = solve_finite(&scalar(0.0), &samples(&[0.0]), 1.5, 20).unwrap_err();
        match err {
            Error::Feasibility { stage: Some(t), margin } => {
                assert!(t < 20);
                assert!(margin <= 0.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn worst_case_examples() {
        let m = scalar(0.0);
        let zeros = samples(&[0.0, 0.0]);
        let policy = worst_case_policy(&m1(1.0), &m1(-0.3), &m, 5.0, &zeros).unwrap();
        assert!(policy.support(&DVector::zeros(1)).iter().all(|w| w[0] == 0.0));

        let root = scalar_are_root();
        let k = -root / (1.0 + 0.8 * root);
        let data = samples(&[-0.5, 0.5]);
        let policy = worst_case_policy(&m1(root), &m1(k), &m, 5.0, &data).unwrap();
        let expect_s = root * (1.0 + k) / (5.0 - root);
        assert!((policy.s[(0, 0)] - expect_s).abs() < 1e-14);
        assert!((policy.s[(0, 0)] - 0.144949).abs() < 1e-6);
        for (b, w) in policy.b.iter().zip(&data.samples) {
            assert!((b[0] - 5.0 / (5.0 - root) * w[0]).abs() < 1e-14);
            assert!((b[0] / w[0] - 1.526598).abs() < 1e-5);
        }

        let policy = worst_case_policy(&m1(root), &m1(-0.618), &m, 1e8, &data).unwrap();
        assert!(policy.s[(0, 0)].abs() < 1e-7);
        for (b, w) in policy.b.iter().zip(&data.samples) {
            assert!((b[0] - w[0]).abs() < 1e-7);
        }
    }

    #[test]
    fn value_examples() {
        let data = samples(&[-1.0, 1.0]);
        let sol = solve_finite(&SystemModel::scalar(1.0, 1.0, 1.0, 1.0, 1.0, 0.5).unwrap(), &data, 5.0, 3).unwrap();
        let zero = DVector::zeros(1);
        assert_eq!(value(&sol, &zero, 1).unwrap(), sol.z[1]);
        let x = DVector::from_vec(vec![2.0]);
        assert_eq!(value(&sol, &x, 3).unwrap(), 4.0 * 0.5);
        assert!(matches!(value(&sol, &x, 4), Err(Error::StageOutOfRange { .. })));

        let one = solve_finite(&scalar(0.0), &data, 5.0, 1).unwrap();
        assert_eq!(value(&one, &x, 0).unwrap(), 4.0);
    }
}
