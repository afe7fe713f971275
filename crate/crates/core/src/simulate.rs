//! Closed-loop rollouts, cost evaluation, exact moment propagation and a
//! brute-force discrete Wasserstein distance.

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::finite_horizon::{FiniteHorizonSolution, WorstCasePolicy};
use crate::model::{DisturbanceModel, SystemModel};
use crate::scalar::{lit, to_f64, Real};

#[derive(Debug, Clone, PartialEq)]
pub enum GainSchedule<T: Real> {
    Constant(DMatrix<T>),
    /// One gain per stage; must cover the whole horizon.
    TimeVarying(Vec<DMatrix<T>>),
}

impl<T: Real> GainSchedule<T> {
    pub fn from_finite(solution: &FiniteHorizonSolution<T>) -> Self {
        GainSchedule::TimeVarying(solution.k.clone())
    }

    pub fn at(&self, t: usize) -> Result<&DMatrix<T>> {
        match self {
            GainSchedule::Constant(k) => Ok(k),
            GainSchedule::TimeVarying(ks) => ks.get(t).ok_or(Error::StageOutOfRange {
                stage: t,
                horizon: ks.len(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DisturbanceSource<T: Real> {
    /// Uniform draws from the samples (mean included).
    Empirical(DisturbanceModel<T>),
    /// Uniform draws from `S_t x_t + b_i` plus the sample mean.
    /// A single policy is used at every stage.
    WorstCase(Vec<WorstCasePolicy<T>>),
    /// Fixed disturbance sequence.
    External(Vec<DVector<T>>),
}

impl<T: Real> DisturbanceSource<T> {
    pub fn policy_at(&self, t: usize) -> Option<&WorstCasePolicy<T>> {
        match self {
            DisturbanceSource::WorstCase(ps) if ps.len() == 1 => ps.first(),
            DisturbanceSource::WorstCase(ps) => ps.get(t),
            _ => None,
        }
    }

    fn check(&self, model: &SystemModel<T>, steps: usize) -> Result<()> {
        let k = model.k();
        let bad = |what: &str, found: usize| Error::Dimension(format!("{what} has dimension {found}, model expects {k}"));
        match self {
            DisturbanceSource::Empirical(d) if d.k() != k => Err(bad("sample", d.k())),
            DisturbanceSource::WorstCase(ps) => {
                if ps.is_empty() || (ps.len() != 1 && ps.len() < steps) {
                    return Err(Error::Dimension(format!("{} worst-case policies for {steps} steps", ps.len())));
                }
                for p in ps {
                    if p.s.shape() != (k, model.n()) {
                        return Err(bad("worst-case gain", p.s.nrows()));
                    }
                }
                Ok(())
            }
            DisturbanceSource::External(ws) => {
                if ws.len() < steps {
                    return Err(Error::Dimension(format!("{} external disturbances for {steps} steps", ws.len())));
                }
                match ws.iter().find(|w| w.len() != k) {
                    Some(w) => Err(bad("external disturbance", w.len())),
                    None => Ok(()),
                }
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T: Real> {
    /// `T + 1` states.
    pub states: Vec<DVector<T>>,
    pub inputs: Vec<DVector<T>>,
    pub disturbances: Vec<DVector<T>>,
    pub seed: u64,
    pub trial: u64,
}

impl<T: Real> Trajectory<T> {
    pub fn steps(&self) -> usize {
        self.inputs.len()
    }

    /// CSV with columns `t, x_1..x_n, u_1..u_m, w_1..w_k`; the last row has only states.
    pub fn to_csv(&self) -> String {
        let n = self.states.first().map_or(0, |x| x.len());
        let m = self.inputs.first().map_or(0, |u| u.len());
        let k = self.disturbances.first().map_or(0, |w| w.len());
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("x_{i}")));
        header.extend((1..=m).map(|i| format!("u_{i}")));
        header.extend((1..=k).map(|i| format!("w_{i}")));
        let mut out = header.join(",");
        out.push('\n');
        for (t, x) in self.states.iter().enumerate() {
            let mut row = vec![t.to_string()];
            row.extend(x.iter().map(|v| fmt17(to_f64(*v))));
            match (self.inputs.get(t), self.disturbances.get(t)) {
                (Some(u), Some(w)) => {
                    row.extend(u.iter().map(|v| fmt17(to_f64(*v))));
                    row.extend(w.iter().map(|v| fmt17(to_f64(*v))));
                }
                _ => row.extend(std::iter::repeat_n(String::new(), m + k)),
            }
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// 17 significant digits.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Per-trial generator: stream `trial` of the ChaCha8 generator keyed by `seed`.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// Simulates `x_{t+1} = A x_t + B u_t + Xi w_t` with `u_t = K_t x_t`.
pub fn rollout<T: Real>(
    model: &SystemModel<T>,
    gains: &GainSchedule<T>,
    source: &DisturbanceSource<T>,
    x0: &DVector<T>,
    steps: usize,
    seed: u64,
) -> Result<Trajectory<T>> {
    rollout_trial(model, gains, source, x0, steps, seed, 0)
}

pub fn rollout_trial<T: Real>(
    model: &SystemModel<T>,
    gains: &GainSchedule<T>,
    source: &DisturbanceSource<T>,
    x0: &DVector<T>,
    steps: usize,
    seed: u64,
    trial: u64,
) -> Result<Trajectory<T>> {
    if x0.len() != model.n() {
        return Err(Error::Dimension(format!("x0 has length {}, model expects {}", x0.len(), model.n())));
    }
    source.check(model, steps)?;
    for t in 0..steps {
        let k = gains.at(t)?;
        if k.shape() != (model.m(), model.n()) {
            return Err(Error::Dimension(format!("gain at stage {t} is {}x{}", k.nrows(), k.ncols())));
        }
    }
    let mut rng = trial_rng(seed, trial);
    let mut states = Vec::with_capacity(steps + 1);
    let mut inputs = Vec::with_capacity(steps);
    let mut disturbances = Vec::with_capacity(steps);
    let mut x = x0.clone();
    for t in 0..steps {
        let u = gains.at(t)? * &x;
        let w = match source {
            DisturbanceSource::Empirical(d) => {
                let i = rng.random_range(0..d.len());
                &d.samples[i] + &d.mean_shift
            }
            DisturbanceSource::WorstCase(_) => {
                let p = source.policy_at(t).expect("checked above");
                let i = rng.random_range(0..p.b.len());
                &p.s * &x + &p.b[i] + &p.mean_shift
            }
            DisturbanceSource::External(ws) => ws[t].clone(),
        };
        let next = &model.a * &x + &model.b * &u + &model.xi * &w;
        states.push(x);
        inputs.push(u);
        disturbances.push(w);
        x = next;
    }
    states.push(x);
    Ok(Trajectory {
        states,
        inputs,
        disturbances,
        seed,
        trial,
    })
}

/// Independent trials `0..trials`, run in parallel and returned in trial order.
pub fn rollout_batch<T: Real + Send + Sync>(
    model: &SystemModel<T>,
    gains: &GainSchedule<T>,
    source: &DisturbanceSource<T>,
    x0: &DVector<T>,
    steps: usize,
    seed: u64,
    trials: usize,
) -> Result<Vec<Trajectory<T>>> {
    (0..trials as u64)
        .into_par_iter()
        .map(|trial| rollout_trial(model, gains, source, x0, steps, seed, trial))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostReport {
    pub state_input_cost: f64,
    pub penalty_term: f64,
    /// `state_input_cost - lambda * penalty_term`.
    pub total: f64,
    /// Mean squared input norm per step.
    pub control_energy: f64,
}

/// Realized cost of a trajectory. The penalty pairs each worst-case support point
/// with its own sample; it is zero for empirical and external sources.
pub fn evaluate_cost<T: Real>(
    traj: &Trajectory<T>,
    model: &SystemModel<T>,
    lambda: T,
    source: &DisturbanceSource<T>,
    terminal: bool,
) -> CostReport {
    let quad = |m: &DMatrix<T>, v: &DVector<T>| (v.transpose() * m * v)[(0, 0)];
    let steps = traj.steps();
    let mut state_input = T::zero();
    let mut penalty = T::zero();
    let mut energy = T::zero();
    for t in 0..steps {
        let (x, u) = (&traj.states[t], &traj.inputs[t]);
        state_input += quad(&model.q, x) + quad(&model.r, u);
        energy += u.norm_squared();
        if let Some(p) = source.policy_at(t) {
            penalty += p.identity_coupling_cost(x);
        }
    }
    if terminal {
        state_input += quad(&model.qf, &traj.states[steps]);
    }
    let control_energy = if steps == 0 { 0.0 } else { to_f64(energy) / steps as f64 };
    CostReport {
        state_input_cost: to_f64(state_input),
        penalty_term: to_f64(penalty),
        total: to_f64(state_input - lambda * penalty),
        control_energy,
    }
}

pub const W2_MAX_POINTS: usize = 8;

/// Order-2 Wasserstein distance between uniform measures on equally many points,
/// by exhaustive search over assignments.
pub fn w2_discrete<T: Real>(mu: &[DVector<T>], nu: &[DVector<T>]) -> Result<T> {
    if mu.len() != nu.len() {
        return Err(Error::SizeMismatch(mu.len(), nu.len()));
    }
    let n = mu.len();
    if n > W2_MAX_POINTS {
        return Err(Error::TooManyPoints(n));
    }
    if n == 0 {
        return Ok(T::zero());
    }
    let cost: Vec<Vec<T>> = mu.iter().map(|x| nu.iter().map(|y| (x - y).norm_squared()).collect()).collect();
    let best = (0..n)
        .permutations(n)
        .map(|perm| perm.iter().enumerate().fold(T::zero(), |acc, (i, &j)| acc + cost[i][j]))
        .fold(lit::<T>(f64::INFINITY), |a, b| a.min(b));
    Ok((best / lit(n as f64)).sqrt())
}

/// Exact first and second moments of the state under a worst-case source.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments<T: Real> {
    pub means: Vec<DVector<T>>,
    /// `E[x_t x_t']`.
    pub second: Vec<DMatrix<T>>,
}

/// Propagates `x_{t+1} = (A + B K_t + Xi S_t) x_t + Xi c_i` with `c_i = b_i + mean shift`
/// and `i` uniform, starting from the point mass at `x0`.
pub fn moment_propagation<T: Real>(
    model: &SystemModel<T>,
    gains: &GainSchedule<T>,
    policies: &[WorstCasePolicy<T>],
    x0: &DVector<T>,
    steps: usize,
) -> Result<Moments<T>> {
    let source = DisturbanceSource::WorstCase(policies.to_vec());
    source.check(model, steps)?;
    let mut means = vec![x0.clone()];
    let mut second = vec![x0 * x0.transpose()];
    for t in 0..steps {
        let p = source.policy_at(t).expect("checked above");
        let closed = &model.a + &model.b * gains.at(t)? + &model.xi * &p.s;
        let offsets: Vec<DVector<T>> = p.b.iter().map(|b| &model.xi * (b + &p.mean_shift)).collect();
        let weight = p.weight();
        let c_bar = offsets.iter().fold(DVector::zeros(model.n()), |acc, c| acc + c) * weight;
        let c_outer = offsets.iter().fold(DMatrix::zeros(model.n(), model.n()), |acc, c| acc + c * c.transpose()) * weight;
        let (m, x) = (&means[t], &second[t]);
        let mm = &closed * m;
        let cross = &mm * c_bar.transpose();
        let x_next = &closed * x * closed.transpose() + &cross + cross.transpose() + c_outer;
        means.push(mm + c_bar);
        second.push(x_next);
    }
    Ok(Moments { means, second })
}

/// Expected cost `E[sum x'Qx + u'Ru + x_T' Qf x_T] - lambda E[sum penalty]` from exact moments.
pub fn expected_cost<T: Real>(
    model: &SystemModel<T>,
    lambda: T,
    gains: &GainSchedule<T>,
    policies: &[WorstCasePolicy<T>],
    moments: &Moments<T>,
) -> Result<T> {
    let steps = moments.means.len() - 1;
    let source = DisturbanceSource::WorstCase(policies.to_vec());
    let mut total = T::zero();
    for t in 0..steps {
        let x = &moments.second[t];
        let m = &moments.means[t];
        let k = gains.at(t)?;
        total += (&model.q * x).trace() + (k.transpose() * &model.r * k * x).trace();
        let p = source.policy_at(t).ok_or(Error::StageOutOfRange { stage: t, horizon: policies.len() })?;
        let sts = p.s.transpose() * &p.s;
        let sm = &p.s * m;
        let mut pen = T::zero();
        for (b, w) in p.b.iter().zip(&p.samples) {
            let d = b - w;
            pen += (&sts * x).trace() + lit::<T>(2.0) * d.dot(&sm) + d.norm_squared();
        }
        total -= lambda * pen * p.weight();
    }
    total += (&model.qf * &moments.second[steps]).trace();
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Quantiles {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl Quantiles {
    /// Linear interpolation between order statistics.
    pub fn of(values: &[f64]) -> Quantiles {
        let mut v: Vec<f64> = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            if v.is_empty() {
                return f64::NAN;
            }
            let pos = p * (v.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
        };
        Quantiles {
            min: q(0.0),
            q1: q(0.25),
            median: q(0.5),
            q3: q(0.75),
            max: q(1.0),
        }
    }

    pub fn iqr(&self) -> f64 {
        self.q3 - self.q1
    }
}

/// Per-time box-plot statistics of one state component across trials.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchStats {
    pub component: usize,
    pub trials: usize,
    pub quantiles: Vec<Quantiles>,
    pub mean_control_energy: f64,
}

impl BatchStats {
    pub fn from_trajectories<T: Real>(trajs: &[Trajectory<T>], component: usize) -> BatchStats {
        let steps = trajs.first().map_or(0, |t| t.states.len());
        let quantiles = (0..steps)
            .map(|t| Quantiles::of(&trajs.iter().map(|tr| to_f64(tr.states[t][component])).collect::<Vec<_>>()))
            .collect();
        let mean_control_energy = trajs.iter().map(control_energy).sum::<f64>() / trajs.len().max(1) as f64;
        BatchStats {
            component,
            trials: trajs.len(),
            quantiles,
            mean_control_energy,
        }
    }

    /// Average interquartile range over `t >= from`.
    pub fn mean_iqr(&self, from: usize) -> f64 {
        let tail = &self.quantiles[from.min(self.quantiles.len())..];
        tail.iter().map(Quantiles::iqr).sum::<f64>() / tail.len().max(1) as f64
    }

    /// CSV with columns `t, min, q1, median, q3, max`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,min,q1,median,q3,max\n");
        for (t, q) in self.quantiles.iter().enumerate() {
            let row = [q.min, q.q1, q.median, q.q3, q.max].map(fmt17).join(",");
            out.push_str(&format!("{t},{row}\n"));
        }
        out
    }
}

/// `sum_t |u_t|^2 / T`.
pub fn control_energy<T: Real>(traj: &Trajectory<T>) -> f64 {
    let steps = traj.steps();
    if steps == 0 {
        return 0.0;
    }
    traj.inputs.iter().map(|u| to_f64(u.norm_squared())).sum::<f64>() / steps as f64
}
