use nalgebra::DMatrix;
use proptest::prelude::*;

use wdrc_core::linalg::sym_eigenvalues;
use wdrc_core::powergrid::{
    build_experiment, discretize_zoh, exp_inverse_residual, linearize, load_grid, ExperimentConfig, Generator, GridSpec,
};
use wdrc_core::steady_state::{check_assumptions, solve_steady, SolveMethod};
use wdrc_core::model::{normalize_samples, Tolerances};

fn shipped() -> GridSpec {
    load_grid(concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/grid39.json")).unwrap()
}

fn spec_strategy() -> impl Strategy<Value = GridSpec> {
    (2usize..6).prop_flat_map(|g| {
        (
            prop::collection::vec((1.0f64..50.0, 0.0f64..2.0, 0.9f64..1.1), g),
            prop::collection::vec(0.0f64..8.0, g * g),
            prop::collection::vec(-0.5f64..0.5, g),
        )
            .prop_map(move |(gens, y, delta)| {
                let mut y_abs = vec![vec![0.0; g]; g];
                for i in 0..g {
                    for j in i + 1..g {
                        y_abs[i][j] = y[i * g + j];
                        y_abs[j][i] = y[i * g + j];
                    }
                }
                GridSpec {
                    description: None,
                    generators: gens.into_iter().map(|(h, d, e)| Generator { h, d, e }).collect(),
                    y_abs,
                    omega_s: 2.0 * std::f64::consts::PI * 60.0,
                    delta_star: delta,
                    omega_star: None,
                }
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

    #[test]
    fn synchronizing_rows_sum_to_zero(spec in spec_strategy()) {
        let lin = linearize::<f64>(&spec).unwrap();
        for row in lin.l.row_iter() {
            prop_assert!(row.sum().abs() < 1e-12 * (1.0 + row.amax()));
        }
        prop_assert!((&lin.l - lin.l.transpose()).amax() < 1e-12);
    }

    #[test]
    fn zoh_composes_over_half_steps(spec in spec_strategy(), dt in 0.01f64..0.5) {
        let lin = linearize::<f64>(&spec).unwrap();
        let (a, b) = discretize_zoh(&lin.a_c, &lin.b_c, dt).unwrap();
        let (ah, bh) = discretize_zoh(&lin.a_c, &lin.b_c, dt / 2.0).unwrap();
        let scale = 1.0 + a.amax();
        prop_assert!((&a - &ah * &ah).amax() < 1e-9 * scale);
        prop_assert!((&b - (&ah * &bh + &bh)).amax() < 1e-9 * (1.0 + b.amax()));
        let growth = a.norm() * (&lin.a_c * -dt).exp().norm();
        prop_assert!(exp_inverse_residual(&lin.a_c, dt) < 1e-12 * growth.max(1.0));
    }
}

#[test]
fn shipped_grid_weights() {
    let spec = shipped();
    assert_eq!(spec.g(), 10);
    let (model, meta) = build_experiment::<f64>(&spec, 0.1, &ExperimentConfig::default()).unwrap();
    assert_eq!((model.n(), model.m(), model.k()), (20, 10, 10));
    assert_eq!(model.r, DMatrix::identity(10, 10));
    assert_eq!(meta.trials, 100);
    assert_eq!(meta.num_samples, 10);
    assert_eq!(meta.omega_index(), 19);

    let angle_block = model.q.view((0, 0), (10, 10)).into_owned();
    let eigs = sym_eigenvalues(&angle_block);
    assert!(eigs[0].abs() < 1e-12);
    assert!(eigs[1] > 0.4);
}

#[test]
fn shipped_grid_is_not_observable_and_uses_iteration() {
    let spec = shipped();
    let (model, meta) = build_experiment::<f64>(&spec, 0.1, &ExperimentConfig::default()).unwrap();
    let report = check_assumptions(&model, 2.0, &Tolerances::default());
    assert!(report.convergence_ok());
    assert!(!report.observable.passed);
    let data = normalize_samples(&meta.draw_samples::<f64>(3)).unwrap();
    let sol = solve_steady(&model, &data, 2.0).unwrap();
    assert_eq!(sol.method, SolveMethod::Iterative);
    assert!(sol.fallback.is_some());
    assert!(sol.are_residual < 1e-9 * sol.p.norm());
}

#[test]
fn samples_follow_protocol() {
    let (_, meta) = build_experiment::<f64>(&shipped(), 0.1, &ExperimentConfig::default()).unwrap();
    let a = meta.draw_samples::<f64>(11);
    assert_eq!(a, meta.draw_samples::<f64>(11));
    assert_ne!(a, meta.draw_samples::<f64>(12));
    assert_eq!(a.len(), 10);
    let all: Vec<f64> = a.iter().flat_map(|w| w.iter().copied()).collect();
    let std = (all.iter().map(|v| v * v).sum::<f64>() / all.len() as f64).sqrt();
    assert!(std > 0.05 && std < 0.2, "{std}");
}
