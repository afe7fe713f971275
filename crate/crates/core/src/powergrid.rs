//! Frequency-regulation benchmark built from linearized swing equations
//!
//! ```text
//! M dd(delta) + D d(delta) + L delta = P
//! ```
//!
//! with state `x = (delta, omega)` and one power injection per generator.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{SystemModel, Tolerances};
use crate::scalar::{lit, to_f64, Real};
use crate::simulate::trial_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    /// Inertia constant in seconds.
    #[serde(rename = "H")]
    pub h: f64,
    /// Damping in p.u.
    pub d: f64,
    /// Internal voltage magnitude in p.u.
    #[serde(rename = "E")]
    pub e: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub generators: Vec<Generator>,
    /// Admittance magnitudes `|Y_ij|`; the diagonal is ignored.
    #[serde(rename = "Y_abs")]
    pub y_abs: Vec<Vec<f64>>,
    pub omega_s: f64,
    /// Rotor angles at the operating point, in radians.
    pub delta_star: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_star: Option<Vec<f64>>,
}

impl GridSpec {
    pub fn g(&self) -> usize {
        self.generators.len()
    }

    pub fn validate(&self) -> Result<()> {
        let g = self.g();
        if g == 0 {
            return Err(Error::InvalidGrid("no generators".into()));
        }
        for (i, gen) in self.generators.iter().enumerate() {
            if !(gen.h > 0.0 && gen.h.is_finite()) {
                return Err(Error::InvalidGrid(format!("generator {i} has nonpositive inertia {}", gen.h)));
            }
            if !(gen.d >= 0.0 && gen.d.is_finite()) {
                return Err(Error::InvalidGrid(format!("generator {i} has negative damping {}", gen.d)));
            }
            if !(gen.e > 0.0 && gen.e.is_finite()) {
                return Err(Error::InvalidGrid(format!("generator {i} has nonpositive voltage {}", gen.e)));
            }
        }
        if !(self.omega_s > 0.0 && self.omega_s.is_finite()) {
            return Err(Error::InvalidGrid(format!("omega_s must be positive, got {}", self.omega_s)));
        }
        if self.y_abs.len() != g || self.y_abs.iter().any(|r| r.len() != g) {
            return Err(Error::InvalidGrid(format!("Y_abs must be {g}x{g}")));
        }
        if self.delta_star.len() != g {
            return Err(Error::InvalidGrid(format!("delta_star must have {g} entries")));
        }
        if let Some(w) = &self.omega_star {
            if w.len() != g {
                return Err(Error::InvalidGrid(format!("omega_star must have {g} entries")));
            }
        }
        for i in 0..g {
            for j in 0..g {
                let (a, b) = (self.y_abs[i][j], self.y_abs[j][i]);
                if !a.is_finite() || a < 0.0 {
                    return Err(Error::InvalidGrid(format!("Y_abs[{i}][{j}] = {a} is not a magnitude")));
                }
                if (a - b).abs() > 1e-12 * (1.0 + a.abs()) {
                    return Err(Error::InvalidGrid(format!("Y_abs not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(())
    }
}

pub fn parse_grid(text: &str) -> Result<GridSpec> {
    let spec: GridSpec = serde_json::from_str(text).map_err(|e| Error::Parse(format!("grid file: {e}")))?;
    spec.validate()?;
    Ok(spec)
}

pub fn load_grid(path: impl AsRef<Path>) -> Result<GridSpec> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_grid(&text)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearGridModel<T: Real> {
    pub m: DMatrix<T>,
    pub d: DMatrix<T>,
    pub l: DMatrix<T>,
    pub a_c: DMatrix<T>,
    pub b_c: DMatrix<T>,
}

/// Continuous-time model `A_c = [[0, I], [-M^-1 L, -M^-1 D]]`, `B_c = [[0], [M^-1]]`
/// with `M = diag(2 H_i / omega_s)`.
pub fn linearize<T: Real>(spec: &GridSpec) -> Result<LinearGridModel<T>> {
    spec.validate()?;
    let g = spec.g();
    let m = DMatrix::from_diagonal(&DVector::from_iterator(
        g,
        spec.generators.iter().map(|gen| lit::<T>(2.0 * gen.h / spec.omega_s)),
    ));
    let d = DMatrix::from_diagonal(&DVector::from_iterator(g, spec.generators.iter().map(|gen| lit::<T>(gen.d))));
    let mut l = DMatrix::<T>::zeros(g, g);
    for i in 0..g {
        for j in 0..g {
            if i != j {
                let (ei, ej) = (spec.generators[i].e, spec.generators[j].e);
                l[(i, j)] = lit(-spec.y_abs[i][j] * ei * ej * (spec.delta_star[i] - spec.delta_star[j]).cos());
            }
        }
        let off: T = (0..g).filter(|&j| j != i).fold(T::zero(), |acc, j| acc + l[(i, j)]);
        l[(i, i)] = -off;
    }
    let m_inv = DMatrix::from_diagonal(&m.diagonal().map(|v| T::one() / v));
    let mut a_c = DMatrix::zeros(2 * g, 2 * g);
    a_c.view_mut((0, g), (g, g)).copy_from(&DMatrix::identity(g, g));
    a_c.view_mut((g, 0), (g, g)).copy_from(&(-(&m_inv * &l)));
    a_c.view_mut((g, g), (g, g)).copy_from(&(-(&m_inv * &d)));
    let mut b_c = DMatrix::zeros(2 * g, g);
    b_c.view_mut((g, 0), (g, g)).copy_from(&m_inv);
    Ok(LinearGridModel { m, d, l, a_c, b_c })
}

/// Zero-order hold: `exp([[A_c, B_c], [0, 0]] dt) = [[A, B], [0, I]]`.
pub fn discretize_zoh<T: Real>(a_c: &DMatrix<T>, b_c: &DMatrix<T>, dt: f64) -> Result<(DMatrix<T>, DMatrix<T>)> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidGrid(format!("sampling time must be positive, got {dt}")));
    }
    let n = a_c.nrows();
    let m = b_c.ncols();
    if a_c.ncols() != n || b_c.nrows() != n {
        return Err(Error::Dimension("A_c must be square with as many rows as B_c".into()));
    }
    let mut aug = DMatrix::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(a_c);
    aug.view_mut((0, n), (n, m)).copy_from(b_c);
    let e = (aug * lit::<T>(dt)).exp();
    if e.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matrix exponential"));
    }
    Ok((e.view((0, 0), (n, n)).into_owned(), e.view((0, n), (n, m)).into_owned()))
}

/// Protocol parameters for the closed-loop experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Generator whose initial frequency deviation is perturbed; defaults to the last.
    pub perturbed_generator: Option<usize>,
    pub perturbation: f64,
    pub num_samples: usize,
    pub sample_std: f64,
    pub trials: usize,
    pub horizon_seconds: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            perturbed_generator: None,
            perturbation: 0.5,
            num_samples: 10,
            sample_std: 0.1,
            trials: 100,
            horizon_seconds: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentMeta {
    pub dt: f64,
    pub generators: usize,
    pub perturbed_generator: usize,
    pub x0: Vec<f64>,
    pub num_samples: usize,
    pub sample_std: f64,
    pub trials: usize,
    pub steps: usize,
}

impl ExperimentMeta {
    pub fn x0<T: Real>(&self) -> DVector<T> {
        DVector::from_iterator(self.x0.len(), self.x0.iter().map(|v| lit::<T>(*v)))
    }

    /// State index of the perturbed generator's frequency deviation.
    pub fn omega_index(&self) -> usize {
        self.generators + self.perturbed_generator
    }

    /// `num_samples` draws from `N(0, sample_std^2 I)`.
    pub fn draw_samples<T: Real>(&self, seed: u64) -> Vec<DVector<T>> {
        let mut rng = trial_rng(seed, 0);
        let normal = Normal::new(0.0, self.sample_std).expect("finite standard deviation");
        (0..self.num_samples)
            .map(|_| DVector::from_iterator(self.generators, (0..self.generators).map(|_| lit::<T>(normal.sample(&mut rng)))))
            .collect()
    }
}

/// Discretized grid with `Q = blockdiag((I - 11'/g) / 2, I / 2)`, `R = I`, `Xi = B`, `Qf = Q`.
pub fn build_experiment<T: Real>(
    spec: &GridSpec,
    dt: f64,
    config: &ExperimentConfig,
) -> Result<(SystemModel<T>, ExperimentMeta)> {
    let lin = linearize::<T>(spec)?;
    let (a, b) = discretize_zoh(&lin.a_c, &lin.b_c, dt)?;
    let g = spec.g();
    let half = lit::<T>(0.5);
    let projector = DMatrix::identity(g, g) - DMatrix::from_element(g, g, T::one() / lit(g as f64));
    let mut q = DMatrix::zeros(2 * g, 2 * g);
    q.view_mut((0, 0), (g, g)).copy_from(&(projector * half));
    q.view_mut((g, g), (g, g)).copy_from(&(DMatrix::identity(g, g) * half));
    let model = SystemModel::with_tolerances(a, b.clone(), b, q.clone(), DMatrix::identity(g, g), q, &Tolerances::default())?;
    let model = SystemModel { dt: Some(dt), ..model };

    let perturbed = config.perturbed_generator.unwrap_or(g - 1);
    if perturbed >= g {
        return Err(Error::InvalidGrid(format!("perturbed generator {perturbed} out of range")));
    }
    let mut x0 = vec![0.0; 2 * g];
    x0[g + perturbed] = config.perturbation;
    let meta = ExperimentMeta {
        dt,
        generators: g,
        perturbed_generator: perturbed,
        x0,
        num_samples: config.num_samples,
        sample_std: config.sample_std,
        trials: config.trials,
        steps: (config.horizon_seconds / dt).round() as usize,
    };
    Ok((model, meta))
}

/// Maximum entry of `|exp(A dt) exp(-A dt) - I|`.
pub fn exp_inverse_residual<T: Real>(a_c: &DMatrix<T>, dt: f64) -> T {
    let n = a_c.nrows();
    let fwd = (a_c * lit::<T>(dt)).exp();
    let back = (a_c * lit::<T>(-dt)).exp();
    (fwd * back - DMatrix::identity(n, n)).amax()
}

pub fn summary(spec: &GridSpec) -> String {
    let h: Vec<String> = spec.generators.iter().map(|g| format!("{:.1}", g.h)).collect();
    format!("{} generators, omega_s = {:.4}, H = [{}]", spec.g(), to_f64(spec.omega_s), h.join(", "))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_machine(c: f64) -> GridSpec {
        GridSpec {
            description: None,
            generators: vec![Generator { h: 3.0, d: 1.0, e: 1.0 }; 2],
            y_abs: vec![vec![0.0, c], vec![c, 0.0]],
            omega_s: 1.0,
            delta_star: vec![0.0, 0.0],
            omega_star: None,
        }
    }

    #[test]
    fn two_identical_generators() {
        let lin = linearize::<f64>(&two_machine(2.5)).unwrap();
        assert_eq!(lin.l, DMatrix::from_row_slice(2, 2, &[2.5, -2.5, -2.5, 2.5]));
        assert_eq!(lin.m, DMatrix::from_diagonal_element(2, 2, 6.0));
    }

    #[test]
    fn single_generator() {
        let spec = GridSpec {
            description: None,
            generators: vec![Generator { h: 2.0, d: 0.8, e: 1.0 }],
            y_abs: vec![vec![0.0]],
            omega_s: 2.0,
            delta_star: vec![0.3],
            omega_star: None,
        };
        let lin = linearize::<f64>(&spec).unwrap();
        assert_eq!(lin.l, DMatrix::zeros(1, 1));
        assert_eq!(lin.a_c, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, -0.4]));
        assert_eq!(lin.b_c, DMatrix::from_row_slice(2, 1, &[0.0, 0.5]));
    }

    #[test]
    fn invalid_specs() {
        let mut spec = two_machine(1.0);
        spec.generators[0].h = 0.0;
        assert!(matches!(linearize::<f64>(&spec), Err(Error::InvalidGrid(_))));
        let mut spec = two_machine(1.0);
        spec.y_abs[0][1] = 2.0;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn zoh_examples() {
        let (a, b) = discretize_zoh(&DMatrix::zeros(1, 1), &DMatrix::from_element(1, 1, 1.0), 0.1).unwrap();
        assert!((a[(0, 0)] - 1.0f64).abs() < 1e-15 && (b[(0, 0)] - 0.1).abs() < 1e-15);

        let a_c = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let b_c = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let (a, b) = discretize_zoh(&a_c, &b_c, 0.1).unwrap();
        assert!((a - DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0])).amax() < 1e-15);
        assert!((b - DMatrix::from_row_slice(2, 1, &[0.005, 0.1])).amax() < 1e-15);

        let (a, _) = discretize_zoh(&DMatrix::from_element(1, 1, -1.0), &DMatrix::zeros(1, 1), 0.1).unwrap();
        assert!((a[(0, 0)] - (-0.1f64).exp()).abs() < 1e-15);

        assert!(discretize_zoh(&a_c, &b_c, 0.0).is_err());
    }

    #[test]
    fn experiment_weights() {
        let spec = GridSpec {
            description: None,
            generators: (0..10).map(|i| Generator { h: 20.0 + i as f64, d: 1.0, e: 1.0 }).collect(),
            y_abs: (0..10)
                .map(|i: usize| (0..10).map(|j| if i.abs_diff(j) == 1 { 5.0 } else { 0.0 }).collect())
                .collect(),
            omega_s: 376.99111843077515,
            delta_star: vec![0.0; 10],
            omega_star: None,
        };
        let (model, meta) = build_experiment::<f64>(&spec, 0.1, &ExperimentConfig::default()).unwrap();
        assert_eq!(model.r, DMatrix::identity(10, 10));
        assert_eq!(model.xi, model.b);
        assert_eq!(meta.dt, 0.1);
        assert_eq!(model.dt, Some(0.1));
        assert_eq!(meta.steps, 50);
        assert_eq!(meta.x0[19], 0.5);
        let mut kernel = DVector::zeros(20);
        kernel.rows_mut(0, 10).fill(1.0);
        assert!((&model.q * kernel).amax() < 1e-15);
        let eigs = crate::linalg::sym_eigenvalues(&model.q);
        assert_eq!(eigs.iter().filter(|e| e.abs() < 1e-12).count(), 1);
    }
}
