//! Infinite-horizon solution of the minimax Riccati equation.
//!
//! Two independent routes reach the same stabilizing solution `P_ss`:
//! value iteration of the finite-horizon recursion, and the stable invariant
//! subspace of `H' = G^-1 F` built from the symplectic pencil
//!
//! ```text
//! F = [[A, 0], [-Q, I]]      G = [[I, W], [0, A']]
//! ```
//!
//! with `W = B R^-1 B' - Xi Xi' / lambda`. The spectral route needs `A`
//! nonsingular; otherwise it falls back to iteration.

use std::cmp::Ordering;

use nalgebra::{Complex, DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::finite_horizon::{check_lambda, disturbance_gain, feasibility_margin, noise_increment, worst_case_policy, WorstCasePolicy};
use crate::linalg::{
    block2, complex_rank, cond2, eigenvalues, inverse_with_cond, min_eigenvalue, modulus, null_vectors, null_vectors_real,
    solve_checked, spectral_radius, symmetrize, to_complex,
};
use crate::model::{DisturbanceModel, SystemModel, Tolerances};
use crate::scalar::{lit, to_f64, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SolveMethod {
    Iterative,
    Spectral,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteadyStateSolution<T: Real> {
    pub p: DMatrix<T>,
    /// Per-stage constant increment of the value function.
    pub z_rate: T,
    pub k: DMatrix<T>,
    /// Mean-state dynamics `(I + W P)^-1 A`.
    pub closed_loop: DMatrix<T>,
    pub spectral_radius: T,
    pub method: SolveMethod,
    pub iterations: usize,
    pub are_residual: T,
    /// Selected stable eigenvalues of `H'` (spectral route only).
    pub stable_eigenvalues: Vec<Complex<T>>,
    /// Upper block `U1` of the real stable-subspace basis (spectral route only).
    pub stable_basis: Option<DMatrix<T>>,
    /// Why the spectral route handed over to iteration, if it did.
    pub fallback: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PencilPair<T: Real> {
    pub f: DMatrix<T>,
    pub g: DMatrix<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PbhTest {
    pub eigenvalue: (f64, f64),
    pub rank: usize,
    pub required: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PbhReport {
    pub passed: bool,
    pub tests: Vec<PbhTest>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionReport<T: Real> {
    pub w: DMatrix<T>,
    pub w_psd_margin: T,
    pub w_psd: bool,
    /// `(A, sqrt(W))` stabilizable.
    pub stabilizable: PbhReport,
    /// `(A, sqrt(Q))` observable.
    pub observable: PbhReport,
}

impl<T: Real> AssumptionReport<T> {
    /// `W` PSD and `(A, sqrt W)` stabilizable: enough for the recursion to converge.
    pub fn convergence_ok(&self) -> bool {
        self.w_psd && self.stabilizable.passed
    }

    /// Convergence conditions plus observability: the stabilizing solution is unique.
    pub fn passed(&self) -> bool {
        self.convergence_ok() && self.observable.passed
    }

    pub fn summary(&self) -> String {
        let mut failed = Vec::new();
        if !self.w_psd {
            failed.push(format!("W not PSD (min eig {:e})", to_f64(self.w_psd_margin)));
        }
        if !self.stabilizable.passed {
            failed.push("(A, sqrt W) not stabilizable".to_string());
        }
        if !self.observable.passed {
            failed.push("(A, sqrt Q) not observable".to_string());
        }
        if failed.is_empty() {
            "all assumptions hold".into()
        } else {
            failed.join("; ")
        }
    }
}

const PBH_RANK_REL: f64 = 1e-12;

fn pbh(
    a: &DMatrix<Complex<f64>>,
    extra: &DMatrix<Complex<f64>>,
    eigs: &[Complex<f64>],
    stacked_rows: bool,
) -> PbhReport {
    let n = a.nrows();
    let mut tests = Vec::new();
    for &gamma in eigs {
        let shifted = a - DMatrix::identity(n, n) * gamma;
        let m = if stacked_rows {
            let mut m = DMatrix::zeros(n + extra.nrows(), n);
            m.view_mut((0, 0), (n, n)).copy_from(&shifted);
            m.view_mut((n, 0), (extra.nrows(), n)).copy_from(extra);
            m
        } else {
            let mut m = DMatrix::zeros(n, n + extra.ncols());
            m.view_mut((0, 0), (n, n)).copy_from(&shifted);
            m.view_mut((0, n), (n, extra.ncols())).copy_from(extra);
            m
        };
        let (rank, _) = complex_rank(m, PBH_RANK_REL);
        tests.push(PbhTest {
            eigenvalue: (gamma.re, gamma.im),
            rank,
            required: n,
        });
    }
    PbhReport {
        passed: tests.iter().all(|t| t.rank == t.required),
        tests,
        note: None,
    }
}

/// Checks `W >= 0`, stabilizability of `(A, sqrt W)` and observability of `(A, sqrt Q)`.
///
/// PBH ranks are evaluated in `f64` regardless of `T`.
pub fn check_assumptions<T: Real>(model: &SystemModel<T>, lambda: T, tol: &Tolerances) -> AssumptionReport<T> {
    let w = model.w_matrix(lambda);
    let w_psd_margin = min_eigenvalue(&w);
    let w_tol = tol.psd_tol(&w);
    let w_psd = w_psd_margin >= -w_tol;
    let a64 = model.a.map(to_f64);
    let eigs: Vec<Complex<f64>> = eigenvalues(&a64).unwrap_or_default();
    let a_c = to_complex(&a64);

    // range(W) = range(sqrt W), so the PBH ranks can use W and Q directly,
    // which avoids amplifying rounding in near-zero eigenvalues.
    let stabilizable = if w_psd {
        let unstable: Vec<_> = eigs.iter().copied().filter(|z| modulus(*z) >= 1.0 - 1e-10).collect();
        pbh(&a_c, &to_complex(&w.map(to_f64)), &unstable, false)
    } else {
        PbhReport {
            passed: false,
            tests: Vec::new(),
            note: Some("W is not PSD; sqrt(W) undefined".into()),
        }
    };
    let observable = if min_eigenvalue(&model.q) >= -tol.psd_tol(&model.q) {
        pbh(&a_c, &to_complex(&model.q.map(to_f64)), &eigs, true)
    } else {
        PbhReport {
            passed: false,
            tests: Vec::new(),
            note: Some("Q is not PSD".into()),
        }
    };
    AssumptionReport {
        w,
        w_psd_margin,
        w_psd,
        stabilizable,
        observable,
    }
}

/// Options for value iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterOptions<T: Real> {
    /// Stop when `|P_t - P_{t+1}|_F <= tol (1 + |P_t|_F)`; never tighter than 16 machine epsilons.
    pub tol: f64,
    pub max_iter: usize,
    /// Starting matrix; defaults to `Qf`.
    pub p_init: Option<DMatrix<T>>,
}

impl<T: Real> Default for IterOptions<T> {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 100_000,
            p_init: None,
        }
    }
}

/// `|P - Q - A' [I + P W]^-1 P A|_F`.
pub fn are_residual<T: Real>(p: &DMatrix<T>, model: &SystemModel<T>, lambda: T) -> Result<T> {
    let n = model.n();
    let w = model.w_matrix(lambda);
    let core = solve_checked(&(DMatrix::identity(n, n) + p * w), &(p * &model.a))?;
    Ok((p - &model.q - model.a.transpose() * core).norm())
}

/// Fixed-point iteration of the Riccati map; `inv_lambda = 0` gives LQG.
fn iterate<T: Real>(
    model: &SystemModel<T>,
    sigma: &DMatrix<T>,
    lambda: Option<T>,
    opts: &IterOptions<T>,
) -> Result<(DMatrix<T>, usize)> {
    let mut p = opts.p_init.clone().unwrap_or_else(|| model.qf.clone());
    let tol = lit::<T>(opts.tol).max(T::eps() * lit(16.0));
    let mut last = f64::INFINITY;
    for iter in 1..=opts.max_iter {
        let (next, _) = match lambda {
            Some(l) => {
                let margin = feasibility_margin(&p, model, l);
                if margin <= T::zero() {
                    return Err(Error::Feasibility {
                        stage: Some(iter - 1),
                        margin: to_f64(margin),
                    });
                }
                crate::finite_horizon::riccati_step(&p, T::zero(), model, l, sigma)?
            }
            None => crate::finite_horizon::lqg_riccati_step(&p, T::zero(), model, sigma)?,
        };
        let diff = (&next - &p).norm();
        if !diff.is_finite() {
            return Err(Error::NoConvergence {
                iterations: iter,
                residual: f64::INFINITY,
            });
        }
        last = to_f64(diff);
        let converged = diff <= tol * (T::one() + p.norm());
        p = next;
        if converged {
            return Ok((p, iter));
        }
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iter,
        residual: last,
    })
}

fn finalize<T: Real>(
    p: DMatrix<T>,
    model: &SystemModel<T>,
    data: &DisturbanceModel<T>,
    lambda: Option<T>,
    method: SolveMethod,
    iterations: usize,
) -> Result<SteadyStateSolution<T>> {
    let n = model.n();
    let (k, w, inv_lambda) = match lambda {
        Some(l) => (crate::finite_horizon::gain(&p, model, l)?, model.w_matrix(l), T::one() / l),
        None => (crate::finite_horizon::lqg_gain(&p, model)?, model.control_weight(), T::zero()),
    };
    let closed_loop = solve_checked(&(DMatrix::identity(n, n) + &w * &p), &model.a)?;
    let spectral_radius = spectral_radius(&closed_loop)?;
    let z_rate = noise_increment(&p, model, inv_lambda, &data.sigma)?;
    let core = solve_checked(&(DMatrix::identity(n, n) + &p * &w), &(&p * &model.a))?;
    let are_residual = (&p - &model.q - model.a.transpose() * core).norm();
    Ok(SteadyStateSolution {
        p,
        z_rate,
        k,
        closed_loop,
        spectral_radius,
        method,
        iterations,
        are_residual,
        stable_eigenvalues: Vec::new(),
        stable_basis: None,
        fallback: None,
    })
}

fn check_data<T: Real>(model: &SystemModel<T>, data: &DisturbanceModel<T>) -> Result<()> {
    if data.k() != model.k() {
        return Err(Error::Dimension(format!(
            "samples have dimension {}, model expects {}",
            data.k(),
            model.k()
        )));
    }
    Ok(())
}

/// Steady state by iterating the Riccati recursion to its fixed point.
///
/// Requires `W >= 0` and `(A, sqrt W)` stabilizable; observability is not needed for convergence.
pub fn solve_iterative<T: Real>(
    model: &SystemModel<T>,
    data: &DisturbanceModel<T>,
    lambda: T,
    opts: &IterOptions<T>,
) -> Result<SteadyStateSolution<T>> {
    check_lambda(lambda)?;
    check_data(model, data)?;
    let report = check_assumptions(model, lambda, &Tolerances::default());
    if !report.convergence_ok() {
        return Err(Error::Assumption(report.summary()));
    }
    let (p, iterations) = iterate(model, &data.sigma, Some(lambda), opts)?;
    let margin = feasibility_margin(&p, model, lambda);
    if margin <= T::zero() {
        return Err(Error::Feasibility {
            stage: None,
            margin: to_f64(margin),
        });
    }
    finalize(p, model, data, Some(lambda), SolveMethod::Iterative, iterations)
}

/// Steady-state LQG solution by value iteration (the `lambda -> infinity` limit).
pub fn solve_lqg<T: Real>(
    model: &SystemModel<T>,
    data: &DisturbanceModel<T>,
    opts: &IterOptions<T>,
) -> Result<SteadyStateSolution<T>> {
    check_data(model, data)?;
    let (p, iterations) = iterate(model, &data.sigma, None, opts)?;
    finalize(p, model, data, None, SolveMethod::Iterative, iterations)
}

pub fn build_pencil<T: Real>(model: &SystemModel<T>, lambda: T) -> PencilPair<T> {
    let n = model.n();
    let i = DMatrix::identity(n, n);
    let z = DMatrix::zeros(n, n);
    PencilPair {
        f: block2(&model.a, &z, &(-&model.q), &i),
        g: block2(&i, &model.w_matrix(lambda), &z, &model.a.transpose()),
    }
}

/// `max(|F Ω F' - J|_F, |G Ω G' - J|_F)` with `J = [[0, A], [-A', 0]]`.
pub fn symplectic_residual<T: Real>(pencil: &PencilPair<T>, a: &DMatrix<T>) -> T {
    let n = a.nrows();
    let i = DMatrix::<T>::identity(n, n);
    let z = DMatrix::<T>::zeros(n, n);
    let omega = block2(&z, &i, &(-&i), &z);
    let target = block2(&z, a, &(-a.transpose()), &z);
    let f = (&pencil.f * &omega * pencil.f.transpose() - &target).norm();
    let g = (&pencil.g * &omega * pencil.g.transpose() - &target).norm();
    f.max(g)
}

const SINGULAR_A_COND: f64 = 1e12;
const UNIT_CIRCLE_TOL: f64 = 1e-9;
const DEFECTIVE_COND: f64 = 1e10;
const SUBSPACE_COND: f64 = 1e12;

/// `H' = G^-1 F = [[A + W A^-T Q, -W A^-T], [-A^-T Q, A^-T]]`.
pub fn inverse_hamiltonian<T: Real>(model: &SystemModel<T>, lambda: T) -> Result<DMatrix<T>> {
    let (a_inv, cond) = inverse_with_cond(&model.a).map_err(|_| Error::SingularA { cond: f64::INFINITY })?;
    if cond > lit(SINGULAR_A_COND) {
        return Err(Error::SingularA { cond: to_f64(cond) });
    }
    let a_inv_t = a_inv.transpose();
    let w = model.w_matrix(lambda);
    Ok(block2(
        &(&model.a + &w * &a_inv_t * &model.q),
        &(-(&w * &a_inv_t)),
        &(-(&a_inv_t * &model.q)),
        &a_inv_t,
    ))
}

/// Eigenvalues of `H'`, i.e. the generalized eigenvalues of `(F, G)` when `A` is nonsingular.
pub fn pencil_eigenvalues<T: Real>(model: &SystemModel<T>, lambda: T) -> Result<Vec<Complex<T>>> {
    eigenvalues(&inverse_hamiltonian(model, lambda)?)
}

/// Raw spectral solution without fallback.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralAre<T: Real> {
    pub p: DMatrix<T>,
    pub stable_eigenvalues: Vec<Complex<T>>,
    pub u1: DMatrix<T>,
    pub u2: DMatrix<T>,
}

fn order_by_modulus<T: Real>(a: &Complex<T>, b: &Complex<T>) -> Ordering {
    modulus(*a)
        .partial_cmp(&modulus(*b))
        .unwrap_or(Ordering::Equal)
        .then_with(|| {
            let arg = |z: &Complex<T>| z.im.atan2(z.re);
            arg(a).partial_cmp(&arg(b)).unwrap_or(Ordering::Equal)
        })
}

/// Real and imaginary parts of `e^{i theta} v`, with `theta` chosen so they are orthogonal.
fn orthogonal_parts<T: Real>(v: &DVector<Complex<T>>) -> (DVector<T>, DVector<T>) {
    let scaled = v / Complex::new(v.norm(), T::zero());
    let p = scaled.map(|z| z.re);
    let q = scaled.map(|z| z.im);
    let two = lit::<T>(2.0);
    let theta = (-(two * p.dot(&q))).atan2(p.norm_squared() - q.norm_squared()) / two;
    let (sin, cos) = theta.sin_cos();
    (&p * cos - &q * sin, &p * sin + &q * cos)
}

/// `P_ss = U2 U1^-1` from a real basis of the stable eigenspace of `H'`.
pub fn spectral_are<T: Real>(model: &SystemModel<T>, lambda: T) -> Result<SpectralAre<T>> {
    check_lambda(lambda)?;
    let n = model.n();
    let h = inverse_hamiltonian(model, lambda)?;
    let eigs = eigenvalues(&h)?;
    if let Some(z) = eigs
        .iter()
        .find(|z| (T::one() - modulus(**z)).abs() < lit(UNIT_CIRCLE_TOL))
    {
        return Err(Error::UnitCircleEigenvalue {
            modulus: to_f64(modulus(*z)),
        });
    }
    let mut stable: Vec<Complex<T>> = eigs.into_iter().filter(|z| modulus(*z) < T::one()).collect();
    stable.sort_by(order_by_modulus);
    if stable.len() != n {
        return Err(Error::Eigen(format!("expected {n} stable eigenvalues, found {}", stable.len())));
    }

    let mut columns: Vec<DVector<T>> = Vec::with_capacity(n);
    let mut used = vec![false; n];
    for i in 0..n {
        if used[i] {
            continue;
        }
        let gamma = stable[i];
        let cluster_tol = lit::<T>(1e-7) * (T::one() + modulus(gamma));
        let is_real = gamma.im.abs() <= cluster_tol;
        let members: Vec<usize> = (i..n)
            .filter(|&j| !used[j] && modulus(stable[j] - gamma) <= cluster_tol)
            .collect();
        for &j in &members {
            used[j] = true;
        }
        if is_real {
            let shifted = &h - DMatrix::identity(2 * n, 2 * n) * gamma.re;
            columns.extend(null_vectors_real(shifted, members.len())?);
        } else {
            let conj = gamma.conj();
            let partners: Vec<usize> = (0..n)
                .filter(|&j| !used[j] && modulus(stable[j] - conj) <= cluster_tol)
                .collect();
            if partners.len() != members.len() {
                return Err(Error::Eigen("unpaired complex eigenvalue".into()));
            }
            for &j in &partners {
                used[j] = true;
            }
            let rep = if gamma.im > T::zero() { gamma } else { conj };
            let shifted = to_complex(&h) - DMatrix::identity(2 * n, 2 * n) * rep;
            for v in null_vectors(shifted, members.len())? {
                let (re, im) = orthogonal_parts(&v);
                columns.push(re);
                columns.push(im);
            }
        }
    }
    if columns.len() != n {
        return Err(Error::Eigen(format!("built {} basis vectors, expected {n}", columns.len())));
    }
    // Pairs keep a common scale so the closed loop is block diagonal with
    // normal 2x2 blocks in this basis.
    let basis = DMatrix::from_columns(&columns);
    let basis_cond = cond2(&basis);
    if !basis_cond.is_finite() || basis_cond > lit(DEFECTIVE_COND) {
        return Err(Error::IllConditionedSubspace {
            cond: to_f64(basis_cond),
        });
    }
    let u1 = basis.rows(0, n).into_owned();
    let u2 = basis.rows(n, n).into_owned();
    let u1_cond = cond2(&u1);
    if !u1_cond.is_finite() || u1_cond > lit(SUBSPACE_COND) {
        return Err(Error::IllConditionedSubspace {
            cond: to_f64(u1_cond),
        });
    }
    // P U1 = U2  <=>  U1' P' = U2'
    let p = solve_checked(&u1.transpose(), &u2.transpose())?.transpose();
    Ok(SpectralAre {
        p: symmetrize(&p),
        stable_eigenvalues: stable,
        u1,
        u2,
    })
}

/// Steady state from the stable eigenspace of `H'`, falling back to iteration
/// when `A` is singular or the eigenvector basis is ill-conditioned.
pub fn solve_spectral<T: Real>(
    model: &SystemModel<T>,
    data: &DisturbanceModel<T>,
    lambda: T,
) -> Result<SteadyStateSolution<T>> {
    check_lambda(lambda)?;
    check_data(model, data)?;
    let report = check_assumptions(model, lambda, &Tolerances::default());
    if !report.passed() {
        return Err(Error::Assumption(report.summary()));
    }
    match spectral_are(model, lambda) {
        Ok(spec) => {
            let mut sol = finalize(spec.p, model, data, Some(lambda), SolveMethod::Spectral, 0)?;
            sol.stable_eigenvalues = spec.stable_eigenvalues;
            sol.stable_basis = Some(spec.u1);
            Ok(sol)
        }
        Err(e @ (Error::SingularA { .. } | Error::IllConditionedSubspace { .. } | Error::Singular { .. })) => {
            let mut sol = solve_iterative(model, data, lambda, &IterOptions::default())?;
            sol.fallback = Some(e.to_string());
            Ok(sol)
        }
        Err(e) => Err(e),
    }
}

/// Spectral solution when every assumption holds; otherwise value iteration,
/// which needs only `W >= 0` and stabilizability.
pub fn solve_steady<T: Real>(
    model: &SystemModel<T>,
    data: &DisturbanceModel<T>,
    lambda: T,
) -> Result<SteadyStateSolution<T>> {
    check_lambda(lambda)?;
    let report = check_assumptions(model, lambda, &Tolerances::default());
    if report.passed() {
        return solve_spectral(model, data, lambda);
    }
    if !report.convergence_ok() {
        return Err(Error::Assumption(report.summary()));
    }
    let mut sol = solve_iterative(model, data, lambda, &IterOptions::default())?;
    sol.fallback = Some(report.summary());
    Ok(sol)
}

/// Optimal steady-state gain and the matching worst-case distribution policy.
pub fn steady_policy<T: Real>(
    p: &DMatrix<T>,
    model: &SystemModel<T>,
    lambda: T,
    data: &DisturbanceModel<T>,
) -> Result<(DMatrix<T>, WorstCasePolicy<T>)> {
    let k = crate::finite_horizon::gain(p, model, lambda)?;
    let policy = worst_case_policy(p, &k, model, lambda, data)?;
    Ok((k, policy))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityCertificate {
    pub spectral_radius: f64,
    /// `|(A + B K) + Xi S - (I + W P)^-1 A|_F`.
    pub identity_residual: f64,
    pub closed_loop_eigenvalues: Vec<(f64, f64)>,
}

const IDENTITY_TOL: f64 = 1e-9;

/// Certifies that the mean state under the worst-case distribution is stable.
///
/// Refuses when observability fails, since the stabilizing solution is then not known to be unique.
pub fn certify_stability<T: Real>(
    solution: &SteadyStateSolution<T>,
    model: &SystemModel<T>,
    lambda: T,
) -> Result<StabilityCertificate> {
    let report = check_assumptions(model, lambda, &Tolerances::default());
    if !report.passed() {
        return Err(Error::Certification(report.summary()));
    }
    let n = model.n();
    let w = model.w_matrix(lambda);
    let closed = solve_checked(&(DMatrix::identity(n, n) + &w * &solution.p), &model.a)?;
    let eigs = eigenvalues(&closed)?;
    let rho = eigs.iter().map(|z| modulus(*z)).fold(T::zero(), |a, b| a.max(b));
    if rho >= T::one() {
        return Err(Error::Certification(format!("spectral radius {} >= 1", to_f64(rho))));
    }
    let s = disturbance_gain(&solution.p, &solution.k, model, lambda)?;
    let via_policies = &model.a + &model.b * &solution.k + &model.xi * s;
    let residual = (&via_policies - &closed).norm();
    if residual > lit::<T>(IDENTITY_TOL) * (T::one() + closed.norm()) {
        return Err(Error::Certification(format!(
            "mean-dynamics identity residual {:e}",
            to_f64(residual)
        )));
    }
    Ok(StabilityCertificate {
        spectral_radius: to_f64(rho),
        identity_residual: to_f64(residual),
        closed_loop_eigenvalues: eigs.iter().map(|z| (to_f64(z.re), to_f64(z.im))).collect(),
    })
}

/// Residual of `P = Ā' P Ā + Q̄` with `Ā = (I + W P)^-1 A` and `Q̄ = Q + (P Ā)' W (P Ā)`.
pub fn lyapunov_residual<T: Real>(p: &DMatrix<T>, model: &SystemModel<T>, lambda: T) -> Result<T> {
    let n = model.n();
    let w = model.w_matrix(lambda);
    let abar = solve_checked(&(DMatrix::identity(n, n) + &w * p), &model.a)?;
    let pa = p * &abar;
    let qbar = &model.q + pa.transpose() * &w * &pa;
    Ok((p - abar.transpose() * p * &abar - qbar).norm())
}
