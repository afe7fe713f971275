//! Versioned JSON output with every number written to 17 significant digits.

use std::io;

use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};
use serde_json::{json, Value};

use crate::finite_horizon::FiniteHorizonSolution;
use crate::hinf::{Certificate, FeasibilityMode, LambdaStarResult};
use crate::model::to_rows;
use crate::scalar::{to_f64, Real};
use crate::steady_state::{AssumptionReport, StabilityCertificate, SteadyStateSolution};

pub const SCHEMA: &str = "wdrc/1";

/// Pretty printer that writes floats as `d.ddddddddddddddddde±x`.
struct Precise<'a>(PrettyFormatter<'a>);

impl Formatter for Precise<'_> {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }
    fn write_f32<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, value as f64)
    }
    fn begin_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

/// Serializes `value` as indented JSON with a trailing newline.
pub fn to_json<S: Serialize + ?Sized>(value: &S) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Precise(PrettyFormatter::new()));
    value.serialize(&mut ser).expect("serializing to memory cannot fail");
    buf.push(b'\n');
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

/// Adds the schema tag to an object.
pub fn tagged(kind: &str, mut body: Value) -> Value {
    if let Value::Object(map) = &mut body {
        map.insert("schema".into(), json!(SCHEMA));
        map.insert("kind".into(), json!(kind));
    }
    body
}

pub fn finite_solution_json<T: Real>(sol: &FiniteHorizonSolution<T>, lambda: Option<T>) -> Value {
    tagged(
        "finite_horizon",
        json!({
            "lambda": lambda.map(to_f64),
            "horizon": sol.horizon,
            "P": sol.p.iter().map(to_rows).collect::<Vec<_>>(),
            "z": sol.z.iter().map(|v| to_f64(*v)).collect::<Vec<_>>(),
            "K": sol.k.iter().map(to_rows).collect::<Vec<_>>(),
            "margins": sol.margins.iter().map(|v| to_f64(*v)).collect::<Vec<_>>(),
        }),
    )
}

pub fn assumption_json<T: Real>(report: &AssumptionReport<T>) -> Value {
    json!({
        "passed": report.passed(),
        "W": to_rows(&report.w),
        "W_min_eigenvalue": to_f64(report.w_psd_margin),
        "W_psd": report.w_psd,
        "stabilizable": report.stabilizable,
        "observable": report.observable,
    })
}

pub fn steady_solution_json<T: Real>(
    sol: &SteadyStateSolution<T>,
    lambda: Option<T>,
    report: Option<&AssumptionReport<T>>,
    certificate: Option<&StabilityCertificate>,
) -> Value {
    tagged(
        "steady_state",
        json!({
            "lambda": lambda.map(to_f64),
            "method": sol.method,
            "fallback": sol.fallback,
            "iterations": sol.iterations,
            "P_ss": to_rows(&sol.p),
            "K_ss": to_rows(&sol.k),
            "z_rate": to_f64(sol.z_rate),
            "closed_loop": to_rows(&sol.closed_loop),
            "spectral_radius": to_f64(sol.spectral_radius),
            "are_residual": to_f64(sol.are_residual),
            "stable_eigenvalues": sol.stable_eigenvalues.iter().map(|z| [to_f64(z.re), to_f64(z.im)]).collect::<Vec<_>>(),
            "assumption_report": report.map(assumption_json),
            "certificate": certificate,
        }),
    )
}

pub fn lambda_star_json<T: Real>(res: &LambdaStarResult<T>) -> Value {
    let mode = match res.mode {
        FeasibilityMode::Finite(h) => json!({"finite": h}),
        FeasibilityMode::Infinite => json!("infinite"),
    };
    let certificate = match &res.certificate {
        Certificate::Finite(sol) => finite_solution_json(sol, Some(res.lambda_star)),
        Certificate::Steady(sol) => steady_solution_json(sol, Some(res.lambda_star), None, None),
    };
    tagged(
        "lambda_star",
        json!({
            "lambda_star": to_f64(res.lambda_star),
            "bracket": [to_f64(res.bracket.0), to_f64(res.bracket.1)],
            "iterations": res.iterations,
            "mode": mode,
            "certificate": certificate,
        }),
    )
}

/// Human-readable matrix, one row per line.
pub fn fmt_matrix<T: Real>(m: &DMatrix<T>) -> String {
    m.row_iter()
        .map(|r| r.iter().map(|v| format!("{:>24.16e}", to_f64(*v))).collect::<Vec<_>>().join(" "))
        .collect::<Vec<_>>()
        .join("\n")
}
