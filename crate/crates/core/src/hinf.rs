//! H-infinity view of the penalty parameter: the smallest `lambda` for which the
//! game is well posed, and the deterministic worst-case disturbance `D x`.
//!
//! The worst-case distribution differs from the H-infinity disturbance only by a
//! state-independent shift of each support point:
//!
//! ```text
//! S x + b_i = D x + (I - Xi' P Xi / lambda)^-1 w_i
//! ```

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::finite_horizon::{check_lambda, disturbance_gain, feasibility_margin, solve_finite, FiniteHorizonSolution, WorstCasePolicy};
use crate::linalg::{max_eigenvalue, solve_checked};
use crate::model::{DisturbanceModel, SystemModel, Tolerances};
use crate::scalar::{lit, to_f64, Real};
use crate::steady_state::{check_assumptions, solve_iterative, IterOptions, SteadyStateSolution};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FeasibilityMode {
    /// Backward recursion over the given number of stages.
    Finite(usize),
    Infinite,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Certificate<T: Real> {
    Finite(FiniteHorizonSolution<T>),
    Steady(SteadyStateSolution<T>),
}

impl<T: Real> Certificate<T> {
    /// Smallest feasibility margin of the certified solution.
    pub fn margin(&self, model: &SystemModel<T>, lambda: T) -> T {
        match self {
            Certificate::Finite(sol) => sol.margins.iter().copied().fold(lit(f64::INFINITY), |a: T, b| a.min(b)),
            Certificate::Steady(sol) => feasibility_margin(&sol.p, model, lambda),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaStarResult<T: Real> {
    pub lambda_star: T,
    pub bracket: (T, T),
    pub iterations: usize,
    pub mode: FeasibilityMode,
    /// Solution at `lambda_star`, which is feasible.
    pub certificate: Certificate<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceGain<T: Real> {
    pub d: DMatrix<T>,
}

const STEADY_MARGIN_REL: f64 = 1e-9;

fn probe<T: Real>(model: &SystemModel<T>, lambda: T, mode: FeasibilityMode) -> Option<Certificate<T>> {
    if check_lambda(lambda).is_err() {
        return None;
    }
    let zero = DisturbanceModel::zeros(model.k());
    match mode {
        FeasibilityMode::Finite(horizon) => solve_finite(model, &zero, lambda, horizon)
            .ok()
            .filter(|sol| sol.margins.iter().all(|m| *m > T::zero()))
            .map(Certificate::Finite),
        FeasibilityMode::Infinite => {
            if !check_assumptions(model, lambda, &Tolerances::default()).convergence_ok() {
                return None;
            }
            let sol = solve_iterative(model, &zero, lambda, &IterOptions::default()).ok()?;
            let margin = feasibility_margin(&sol.p, model, lambda);
            (margin > lit::<T>(STEADY_MARGIN_REL) * (T::one() + lambda)).then_some(Certificate::Steady(sol))
        }
    }
}

/// Whether the minimax problem is well posed at `lambda`.
///
/// In infinite mode this also requires `W >= 0`, stabilizability of `(A, sqrt W)`
/// and a strictly positive margin at the fixed point.
pub fn is_feasible<T: Real>(model: &SystemModel<T>, lambda: T, mode: FeasibilityMode) -> bool {
    probe(model, lambda, mode).is_some()
}

/// `max(1e-9, max eig(Xi' Qf Xi))`: no smaller penalty can be feasible.
pub fn default_lower_bound<T: Real>(model: &SystemModel<T>) -> T {
    let bound = if model.k() == 0 {
        T::zero()
    } else {
        max_eigenvalue(&(model.xi.transpose() * &model.qf * &model.xi))
    };
    bound.max(lit(1e-9))
}

/// Doubles from 1 until feasible.
fn find_upper<T: Real>(model: &SystemModel<T>, mode: FeasibilityMode, lo: T) -> Result<T> {
    let mut hi = T::one().max(lo);
    for _ in 0..=60 {
        if is_feasible(model, hi, mode) {
            return Ok(hi);
        }
        hi *= lit(2.0);
    }
    Err(Error::BadBracket { hi: to_f64(hi) })
}

/// Bisection for the smallest feasible penalty, to relative width `tol`.
///
/// Returns the upper endpoint of the final bracket, which is certified feasible.
pub fn lambda_star<T: Real>(
    model: &SystemModel<T>,
    mode: FeasibilityMode,
    lo: Option<T>,
    hi: Option<T>,
    tol: f64,
) -> Result<LambdaStarResult<T>> {
    let mut lo = lo.unwrap_or_else(|| default_lower_bound(model));
    check_lambda(lo)?;
    let mut hi = match hi {
        Some(h) => h,
        None => find_upper(model, mode, lo)?,
    };
    let mut certificate = probe(model, hi, mode).ok_or(Error::BadBracket { hi: to_f64(hi) })?;
    if let Some(c) = probe(model, lo, mode) {
        return Ok(LambdaStarResult {
            lambda_star: lo,
            bracket: (lo, lo),
            iterations: 0,
            mode,
            certificate: c,
        });
    }
    let tol = lit::<T>(tol);
    let mut iterations = 0;
    while hi - lo > tol * hi {
        let mid = (lo + hi) * lit(0.5);
        match probe(model, mid, mode) {
            Some(c) => {
                hi = mid;
                certificate = c;
            }
            None => lo = mid,
        }
        iterations += 1;
    }
    Ok(LambdaStarResult {
        lambda_star: hi,
        bracket: (lo, hi),
        iterations,
        mode,
        certificate,
    })
}

/// Worst-case deterministic disturbance gain `D = (lambda I - Xi' P Xi)^-1 Xi' P (A + B K)`.
pub fn hinf_disturbance<T: Real>(
    p: &DMatrix<T>,
    k: &DMatrix<T>,
    model: &SystemModel<T>,
    lambda: T,
) -> Result<DisturbanceGain<T>> {
    Ok(DisturbanceGain {
        d: disturbance_gain(p, k, model, lambda)?,
    })
}

/// `x0' P_0 x0`: the game value without the noise term, zero at the origin.
pub fn hinf_game_value<T: Real>(solution: &FiniteHorizonSolution<T>, x0: &DVector<T>) -> T {
    (x0.transpose() * &solution.p[0] * x0)[(0, 0)]
}

const CORRESPONDENCE_DRAWS: usize = 32;

/// Largest `|(S x + b_i) - (D x + (I - Xi' P Xi / lambda)^-1 w_i)|` over samples and
/// a fixed set of random unit vectors `x`.
pub fn correspondence_residual<T: Real>(
    policy: &WorstCasePolicy<T>,
    gain: &DisturbanceGain<T>,
    model: &SystemModel<T>,
    p: &DMatrix<T>,
    lambda: T,
    data: &DisturbanceModel<T>,
) -> Result<T> {
    let k = model.k();
    let n = model.n();
    let xpx = model.xi.transpose() * p * &model.xi;
    let scaled = DMatrix::identity(k, k) - xpx / lambda;
    let mut rhs = DMatrix::zeros(k, data.len());
    for (j, w) in data.samples.iter().enumerate() {
        rhs.set_column(j, w);
    }
    let shifts = solve_checked(&scaled, &rhs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut worst = T::zero();
    for _ in 0..CORRESPONDENCE_DRAWS {
        let raw = DVector::<f64>::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        let x = raw.map(lit::<T>);
        let x = if n == 0 { x } else { &x / x.norm() };
        let sx = &policy.s * &x;
        let dx = &gain.d * &x;
        for (i, b) in policy.b.iter().enumerate() {
            let diff = (&sx + b) - (&dx + shifts.column(i));
            worst = worst.max(diff.norm());
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::finite_horizon::worst_case_policy;
    use crate::model::normalize_samples;
    use crate::steady_state::solve_spectral;

    fn scalar() -> SystemModel<f64> {
        SystemModel::scalar(1.0, 1.0, 1.0, 1.0, 1.0, 0.0).unwrap()
    }

    #[test]
    fn feasibility_examples() {
        assert!(is_feasible(&scalar(), 5.0, FeasibilityMode::Infinite));
        assert!(!is_feasible(&scalar(), 1.5, FeasibilityMode::Infinite));
        let no_channel = SystemModel::scalar(1.0, 1.0, 0.0, 1.0, 1.0, 0.0).unwrap();
        for lambda in [1e-6, 0.1, 1.0, 10.0] {
            assert!(is_feasible(&no_channel, lambda, FeasibilityMode::Infinite));
            assert!(is_feasible(&no_channel, lambda, FeasibilityMode::Finite(10)));
        }
        assert!(!is_feasible(&scalar(), -1.0, FeasibilityMode::Infinite));
    }

    #[test]
    fn scalar_threshold_is_two() {
        let res = lambda_star(&scalar(), FeasibilityMode::Infinite, None, None, 1e-6).unwrap();
        assert!((res.lambda_star - 2.0).abs() < 1e-5, "{}", res.lambda_star);
        assert!(res.bracket.0 <= 2.0 + 1e-8 && 2.0 <= res.bracket.1 + 1e-12, "{:?}", res.bracket);
        assert!(res.certificate.margin(&scalar(), res.lambda_star) > 0.0);
    }

    #[test]
    fn degenerate_channel_returns_lower_bound() {
        let m = SystemModel::scalar(1.0, 1.0, 0.0, 1.0, 1.0, 0.0).unwrap();
        let res = lambda_star(&m, FeasibilityMode::Infinite, None, None, 1e-6).unwrap();
        assert!((res.lambda_star - 1e-9f64).abs() < 1e-15);
    }

    #[test]
    fn bad_bracket() {
        let err = lambda_star(&scalar(), FeasibilityMode::Infinite, Some(0.5), Some(1.5), 1e-6).unwrap_err();
        assert!(matches!(err, Error::BadBracket { .. }));
    }

    #[test]
    fn disturbance_gain_examples() {
        let sol = solve_spectral(&scalar(), &DisturbanceModel::zeros(1), 5.0).unwrap();
        let g = hinf_disturbance(&sol.p, &sol.k, &scalar(), 5.0).unwrap();
        assert!((g.d[(0, 0)] - 0.1449489742783178).abs() < 1e-12);
        let zero = DMatrix::zeros(1, 1);
        assert_eq!(hinf_disturbance(&zero, &sol.k, &scalar(), 5.0).unwrap().d[(0, 0)], 0.0);
        let a0 = SystemModel::scalar(0.0, 1.0, 1.0, 1.0, 1.0, 0.0).unwrap();
        assert_eq!(hinf_disturbance(&sol.p, &zero, &a0, 5.0).unwrap().d[(0, 0)], 0.0);
    }

    #[test]
    fn correspondence_scalar() {
        let data = normalize_samples(&[DVector::from_vec(vec![-0.4]), DVector::from_vec(vec![0.1]), DVector::from_vec(vec![0.6])]).unwrap();
        let sol = solve_spectral(&scalar(), &data, 5.0).unwrap();
        let policy = worst_case_policy(&sol.p, &sol.k, &scalar(), 5.0, &data).unwrap();
        let gain = hinf_disturbance(&sol.p, &sol.k, &scalar(), 5.0).unwrap();
        assert!(correspondence_residual(&policy, &gain, &scalar(), &sol.p, 5.0, &data).unwrap() < 1e-12);

        let other = hinf_disturbance(&sol.p, &sol.k, &scalar(), 3.0).unwrap();
        assert!(correspondence_residual(&policy, &other, &scalar(), &sol.p, 5.0, &data).unwrap() > 1e-3);
    }

    #[test]
    fn game_value_zero_at_origin() {
        let sol = solve_finite(&scalar(), &DisturbanceModel::zeros(1), 5.0, 10).unwrap();
        assert_eq!(hinf_game_value(&sol, &DVector::zeros(1)), 0.0);
    }
}
