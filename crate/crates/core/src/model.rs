//! System and disturbance data: ingestion, validation and sample normalization.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{max_abs, max_asymmetry, min_eigenvalue, symmetrize};
use crate::scalar::{lit, to_f64, Real};

/// Numerical tolerances used when validating a model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// PSD threshold is `psd_rel * (1 + |trace|)`.
    pub psd_rel: f64,
    /// Smallest admissible eigenvalue of `R`.
    pub pd: f64,
    /// Admissible asymmetry relative to the largest entry.
    pub sym_rel: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            psd_rel: 1e-9,
            pd: 1e-12,
            sym_rel: 1e-9,
        }
    }
}

impl Tolerances {
    pub fn psd_tol<T: Real>(&self, m: &DMatrix<T>) -> T {
        lit::<T>(self.psd_rel) * (T::one() + m.trace().abs())
    }

    fn sym_tol<T: Real>(&self, m: &DMatrix<T>) -> T {
        lit::<T>(self.sym_rel) * max_abs(m).max(T::one())
    }
}

/// Linear system `x+ = A x + B u + Xi w` with quadratic stage and terminal weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel<T: Real> {
    pub a: DMatrix<T>,
    pub b: DMatrix<T>,
    pub xi: DMatrix<T>,
    pub q: DMatrix<T>,
    pub r: DMatrix<T>,
    pub qf: DMatrix<T>,
    /// Sampling time, carried as metadata only.
    pub dt: Option<f64>,
}

impl<T: Real> SystemModel<T> {
    /// Builds and validates a model with default tolerances.
    pub fn new(
        a: DMatrix<T>,
        b: DMatrix<T>,
        xi: DMatrix<T>,
        q: DMatrix<T>,
        r: DMatrix<T>,
        qf: DMatrix<T>,
    ) -> Result<Self> {
        Self::with_tolerances(a, b, xi, q, r, qf, &Tolerances::default())
    }

    pub fn with_tolerances(
        a: DMatrix<T>,
        b: DMatrix<T>,
        xi: DMatrix<T>,
        q: DMatrix<T>,
        r: DMatrix<T>,
        qf: DMatrix<T>,
        tol: &Tolerances,
    ) -> Result<Self> {
        let mut model = Self {
            a,
            b,
            xi,
            q,
            r,
            qf,
            dt: None,
        };
        model.check_dimensions()?;
        if model.iter_matrices().any(|(_, m)| m.iter().any(|x| !x.is_finite())) {
            return Err(Error::NonFinite("model matrices"));
        }
        for (name, m) in [("Q", &mut model.q), ("R", &mut model.r), ("Qf", &mut model.qf)] {
            let asym = max_asymmetry(m);
            if asym > tol.sym_tol(m) {
                return Err(Error::NotSymmetric {
                    name,
                    residual: to_f64(asym),
                });
            }
            *m = symmetrize(m);
        }
        let report = validate_model(&model, tol);
        if let Some(fail) = report.checks.iter().find(|c| !c.passed) {
            let (name, property) = match fail.name.as_str() {
                "R positive definite" => ("R", "positive definite"),
                "Q positive semidefinite" => ("Q", "positive semidefinite"),
                "Qf positive semidefinite" => ("Qf", "positive semidefinite"),
                _ => ("model", "valid"),
            };
            return Err(Error::Definiteness {
                name,
                property,
                margin: fail.margin,
            });
        }
        Ok(model)
    }

    /// Scalar model `x+ = a x + b u + xi w` with weights `q`, `r`, `qf`.
    pub fn scalar(a: T, b: T, xi: T, q: T, r: T, qf: T) -> Result<Self> {
        let s = |v| DMatrix::from_element(1, 1, v);
        Self::new(s(a), s(b), s(xi), s(q), s(r), s(qf))
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn k(&self) -> usize {
        self.xi.ncols()
    }

    fn iter_matrices(&self) -> impl Iterator<Item = (&'static str, &DMatrix<T>)> {
        [
            ("A", &self.a),
            ("B", &self.b),
            ("Xi", &self.xi),
            ("Q", &self.q),
            ("R", &self.r),
            ("Qf", &self.qf),
        ]
        .into_iter()
    }

    pub fn check_dimensions(&self) -> Result<()> {
        let n = self.a.nrows();
        let m = self.b.ncols();
        let expect = |name: &str, mat: &DMatrix<T>, rows: usize, cols: usize| {
            if mat.shape() != (rows, cols) {
                Err(Error::Dimension(format!(
                    "{name} is {}x{}, expected {rows}x{cols}",
                    mat.nrows(),
                    mat.ncols()
                )))
            } else {
                Ok(())
            }
        };
        if n == 0 {
            return Err(Error::Dimension("state dimension must be positive".into()));
        }
        expect("A", &self.a, n, n)?;
        expect("B", &self.b, n, m)?;
        expect("Xi", &self.xi, n, self.xi.ncols())?;
        expect("Q", &self.q, n, n)?;
        expect("R", &self.r, m, m)?;
        expect("Qf", &self.qf, n, n)?;
        Ok(())
    }

    /// `B R^-1 B'`, symmetrized.
    pub fn control_weight(&self) -> DMatrix<T> {
        let rinv = self
            .r
            .clone()
            .cholesky()
            .map(|c| c.inverse())
            .unwrap_or_else(|| self.r.clone().try_inverse().expect("R is positive definite"));
        symmetrize(&(&self.b * rinv * self.b.transpose()))
    }

    /// `W = B R^-1 B' - Xi Xi' / lambda`, symmetrized.
    pub fn w_matrix(&self, lambda: T) -> DMatrix<T> {
        symmetrize(&(self.control_weight() - &self.xi * self.xi.transpose() / lambda))
    }

    /// `R^-1`.
    pub fn r_inverse(&self) -> DMatrix<T> {
        self.r
            .clone()
            .cholesky()
            .map(|c| c.inverse())
            .unwrap_or_else(|| self.r.clone().try_inverse().expect("R is positive definite"))
    }

    pub fn to_file(&self) -> ModelFile {
        ModelFile {
            a: to_rows(&self.a),
            b: to_rows(&self.b),
            xi: to_rows(&self.xi),
            q: to_rows(&self.q),
            r: to_rows(&self.r),
            qf: to_rows(&self.qf),
            dt: self.dt,
        }
    }

    pub fn from_file(file: &ModelFile, tol: &Tolerances) -> Result<Self> {
        let mut model = Self::with_tolerances(
            from_rows("A", &file.a)?,
            from_rows("B", &file.b)?,
            from_rows("Xi", &file.xi)?,
            from_rows("Q", &file.q)?,
            from_rows("R", &file.r)?,
            from_rows("Qf", &file.qf)?,
            tol,
        )?;
        model.dt = file.dt;
        Ok(model)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("model serializes")
    }
}

/// On-disk model: row-major arrays of arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "Xi")]
    pub xi: Vec<Vec<f64>>,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    pub r: Vec<Vec<f64>>,
    #[serde(rename = "Qf")]
    pub qf: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
}

pub fn to_rows<T: Real>(m: &DMatrix<T>) -> Vec<Vec<f64>> {
    m.row_iter()
        .map(|r| r.iter().map(|&x| to_f64(x)).collect())
        .collect()
}

pub fn from_rows<T: Real>(name: &str, rows: &[Vec<f64>]) -> Result<DMatrix<T>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != ncols) {
        return Err(Error::Dimension(format!(
            "{name} row {i} has {} entries, expected {ncols}",
            r.len()
        )));
    }
    if rows.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::Parse(format!("{name} contains a non-finite entry")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| lit::<T>(rows[i][j])))
}

/// Parses a model from JSON text.
pub fn parse_model<T: Real>(text: &str, tol: &Tolerances) -> Result<SystemModel<T>> {
    let file: ModelFile = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    SystemModel::from_file(&file, tol)
}

/// Loads a JSON model file with default tolerances.
pub fn load_model<T: Real>(path: impl AsRef<Path>) -> Result<SystemModel<T>> {
    load_model_with(path, &Tolerances::default())
}

pub fn load_model_with<T: Real>(path: impl AsRef<Path>, tol: &Tolerances) -> Result<SystemModel<T>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_model(&text, tol)
}

/// One named check of a [`ValidationReport`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Symmetry residuals and definiteness margins of `Q`, `R` and `Qf`.
pub fn validate_model<T: Real>(model: &SystemModel<T>, tol: &Tolerances) -> ValidationReport {
    let mut checks = Vec::new();
    for (name, m) in [("Q", &model.q), ("R", &model.r), ("Qf", &model.qf)] {
        let asym = max_asymmetry(m);
        checks.push(Check {
            name: format!("{name} symmetric"),
            passed: asym <= tol.sym_tol(m),
            margin: to_f64(asym),
        });
    }
    for (name, m) in [("Q", &model.q), ("Qf", &model.qf)] {
        let margin = min_eigenvalue(m);
        checks.push(Check {
            name: format!("{name} positive semidefinite"),
            passed: margin >= -tol.psd_tol(m),
            margin: to_f64(margin),
        });
    }
    let margin = min_eigenvalue(&model.r);
    checks.push(Check {
        name: "R positive definite".into(),
        passed: margin > lit::<T>(tol.pd),
        margin: to_f64(margin),
    });
    ValidationReport { checks }
}

/// Empirical disturbance data normalized to zero mean.
#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceModel<T: Real> {
    pub raw_samples: Vec<DVector<T>>,
    /// Sample mean subtracted from the raw data.
    pub mean_shift: DVector<T>,
    /// Zero-mean samples used by the solvers.
    pub samples: Vec<DVector<T>>,
    /// Second moment of the normalized samples.
    pub sigma: DMatrix<T>,
}

impl<T: Real> DisturbanceModel<T> {
    /// A single zero sample in dimension `k`.
    pub fn zeros(k: usize) -> Self {
        normalize_samples(&[DVector::zeros(k)]).expect("single zero sample is valid")
    }

    pub fn k(&self) -> usize {
        self.mean_shift.len()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

pub fn normalize_samples<T: Real>(raw: &[DVector<T>]) -> Result<DisturbanceModel<T>> {
    let first = raw.first().ok_or(Error::EmptySamples)?;
    let k = first.len();
    if let Some((index, w)) = raw.iter().enumerate().find(|(_, w)| w.len() != k) {
        return Err(Error::InconsistentSample {
            index,
            found: w.len(),
            expected: k,
        });
    }
    let count = lit::<T>(raw.len() as f64);
    let mean = raw.iter().fold(DVector::zeros(k), |acc, w| acc + w) / count;
    let samples: Vec<DVector<T>> = raw.iter().map(|w| w - &mean).collect();
    let sigma = samples
        .iter()
        .fold(DMatrix::zeros(k, k), |acc, w| acc + w * w.transpose())
        / count;
    Ok(DisturbanceModel {
        raw_samples: raw.to_vec(),
        mean_shift: mean,
        samples,
        sigma: symmetrize(&sigma),
    })
}

/// Reads disturbance samples from CSV: one vector per row, optional header.
pub fn parse_samples<T: Real>(text: &str) -> Result<Vec<DVector<T>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse(e.to_string()))?;
        if record.iter().all(str::is_empty) {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(values) => {
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Parse(format!("non-finite sample on row {}", line + 1)));
                }
                out.push(DVector::from_iterator(values.len(), values.into_iter().map(lit::<T>)));
            }
            Err(_) if line == 0 => continue,
            Err(e) => return Err(Error::Parse(format!("row {}: {e}", line + 1))),
        }
    }
    Ok(out)
}

pub fn load_samples<T: Real>(path: impl AsRef<Path>) -> Result<Vec<DVector<T>>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_samples(&text)
}
