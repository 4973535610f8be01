use std::sync::Arc;

use proptest::prelude::*;
use turnpike::benchmarks::{
    fish_problem, fish_singular_arc, lq_problem, riccati_oracle, FishParams, FishVariant, LqParams,
};
use turnpike::dissipativity::{
    check_dissipation, max_alpha_coefficient, value_bound_check, GridSpec, Samples,
    StorageFunction, Strictness, WorkingBox,
};
use turnpike::nlp::{solve_trajectory, Solution};
use turnpike::ocp::{solve_steady_state, Equilibrium, KFunction, OcpProblem, TimeGrid, TimeMode};

fn solve(problem: &OcpProblem, x0: f64, horizon: f64, n: usize) -> Solution {
    let p = problem
        .clone()
        .with_initial_state(vec![x0])
        .with_horizon(horizon);
    solve_trajectory(&p, &TimeGrid::uniform(horizon, n).unwrap(), None).unwrap()
}

fn lq() -> (OcpProblem, Equilibrium) {
    let p = lq_problem(&LqParams::default()).unwrap();
    let eq = solve_steady_state(&p, (&[0.1], &[-0.1])).unwrap();
    (p, eq)
}

#[test]
fn lq_value_is_flat_in_the_horizon() {
    let (p, eq) = lq();
    let batch: Vec<Solution> = [4.0, 8.0, 12.0]
        .iter()
        .map(|&t| solve(&p, 1.0, t, 200))
        .collect();
    let storage = StorageFunction::zero(1)
        .certified(&WorkingBox::new(vec![-2.0], vec![2.0]).unwrap())
        .unwrap();
    let alpha = KFunction::new(0.25, 2.0).unwrap();
    let report = value_bound_check(&p, &batch, &eq, &storage, &alpha, 0.1).unwrap();
    assert!(report.lower_bounds_hold, "{report:?}");
    assert!(report.horizon_flat, "{report:?}");
    let v_inf = 0.5 * riccati_oracle(&LqParams::default()).unwrap().p;
    assert!((report.c_tilde - v_inf).abs() <= 2e-3, "{report:?}");

    // the Riccati storage is tight along the optimal feedback
    let storage = StorageFunction::riccati(2.0 * v_inf)
        .certified(&WorkingBox::new(vec![-2.0], vec![2.0]).unwrap())
        .unwrap();
    let zero = KFunction::new(1e-12, 2.0).unwrap();
    let report = value_bound_check(&p, &batch, &eq, &storage, &zero, 0.1).unwrap();
    assert!(report.lower_bounds_hold, "{report:?}");
}

#[test]
fn fish_value_is_flat_in_the_horizon() {
    let params = FishParams::default();
    let p = fish_problem(FishVariant::Bilinear, &params).unwrap();
    let eq = fish_singular_arc(&params).unwrap();
    let batch: Vec<Solution> = [1.0, 2.0, 3.0]
        .iter()
        .map(|&t| solve(&p, 2.5, t, 200))
        .collect();
    let storage = StorageFunction::steady_costate(&eq)
        .certified(&WorkingBox::new(vec![0.0], vec![6.0]).unwrap())
        .unwrap();
    let zero = KFunction::new(1e-12, 2.0).unwrap();
    let report = value_bound_check(&p, &batch, &eq, &storage, &zero, 0.1).unwrap();
    assert!(report.horizon_flat, "{report:?}");
    assert!(report.lower_bounds_hold, "{report:?}");
}

#[test]
fn value_bounds_need_three_horizons_and_common_start() {
    let (p, eq) = lq();
    let s = StorageFunction::zero(1)
        .certified(&WorkingBox::new(vec![-2.0], vec![2.0]).unwrap())
        .unwrap();
    let a = KFunction::new(0.25, 2.0).unwrap();
    let two: Vec<Solution> = [4.0, 8.0].iter().map(|&t| solve(&p, 1.0, t, 50)).collect();
    assert!(value_bound_check(&p, &two, &eq, &s, &a, 0.1).is_err());
    let mixed = vec![
        solve(&p, 1.0, 4.0, 50),
        solve(&p, 0.5, 8.0, 50),
        solve(&p, 1.0, 12.0, 50),
    ];
    assert!(value_bound_check(&p, &mixed, &eq, &s, &a, 0.1).is_err());
    let uncertified = StorageFunction::zero(1);
    let three: Vec<Solution> = [4.0, 8.0, 12.0]
        .iter()
        .map(|&t| solve(&p, 1.0, t, 50))
        .collect();
    assert!(value_bound_check(&p, &three, &eq, &uncertified, &a, 0.1).is_err());
}

#[test]
fn fish_trajectory_alpha_search() {
    let params = FishParams::default();
    let p = fish_problem(FishVariant::Bilinear, &params).unwrap();
    let eq = fish_singular_arc(&params).unwrap();
    let s = solve(&p, 2.5, 1.1, 200);
    let storage = StorageFunction::steady_costate(&eq);
    let found = max_alpha_coefficient(
        &p,
        &eq,
        &storage,
        2.0,
        Samples::Trajectory(&s),
        Strictness::State,
    )
    .unwrap();
    // the rotated cost ℓ − ℓ̄ + λ̄f is negative while u = 0 below x̄, so the
    // linear storage certifies nothing along this trajectory
    assert_eq!(found.coefficient, 0.0);
    assert!(!found.report.pass);
    assert!(
        (found.report.worst_residual - 7.13e-3).abs() <= 2e-4,
        "{found:?}"
    );
    assert!(found.report.worst_time.unwrap() < 0.1);

    // from x̄ the same trajectory check passes for any α: it never leaves
    let s = solve(&p, eq.x_bar[0], 1.1, 100);
    let found = max_alpha_coefficient(
        &p,
        &eq,
        &storage,
        2.0,
        Samples::Trajectory(&s),
        Strictness::State,
    )
    .unwrap();
    assert!(found.report.pass);
    assert!(found.coefficient > 1.0, "{found:?}");
}

#[test]
fn discrete_grid_storage_check() {
    // x⁺ = 0.9x + u, ℓ = x² + u²: steady state at the origin, S ≡ 0 gives
    // x² + u² ≥ c(|x| + |u|)² with c = ½
    let p = OcpProblem::new(
        "discrete",
        TimeMode::Discrete,
        1,
        1,
        Arc::new(|x: &[f64], u: &[f64]| vec![0.9 * x[0] + u[0]]),
        Arc::new(|x: &[f64], u: &[f64]| x[0] * x[0] + u[0] * u[0]),
    )
    .with_horizon(12.0)
    .with_initial_state(vec![3.0]);
    let eq = solve_steady_state(&p, (&[0.1], &[0.0])).unwrap();
    let spec = GridSpec {
        lower: vec![-1.0, -0.3],
        upper: vec![1.0, 0.3],
        points_per_axis: 31,
    };
    let found = max_alpha_coefficient(
        &p,
        &eq,
        &StorageFunction::zero(1),
        2.0,
        Samples::Grid(&spec),
        Strictness::InputState,
    )
    .unwrap();
    assert!(
        found.coefficient <= 0.5 + 1e-6 && found.coefficient >= 0.5 - 1e-2,
        "{found:?}"
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn passing_is_monotone_in_alpha(c1 in 1e-6f64..1.0, d in 0.0f64..1.0, shift in -10.0f64..10.0) {
        let (p, eq) = lq();
        let spec = GridSpec { lower: vec![-2.0, -2.0], upper: vec![2.0, 2.0], points_per_axis: 9 };
        let s = StorageFunction::quadratic(vec![vec![-0.5]], vec![0.0], shift).unwrap();
        let check = |c: f64| check_dissipation(
            &p, &eq, &s, &KFunction::new(c, 2.0).unwrap(), Samples::Grid(&spec), Strictness::InputState,
        ).unwrap();
        let low = check(c1);
        let high = check(c1 + d);
        prop_assert!(high.worst_residual >= low.worst_residual);
        prop_assert!(!high.pass || low.pass);
        let unshifted = StorageFunction::quadratic(vec![vec![-0.5]], vec![0.0], 0.0).unwrap();
        let r = check_dissipation(
            &p, &eq, &unshifted, &KFunction::new(c1, 2.0).unwrap(), Samples::Grid(&spec), Strictness::InputState,
        ).unwrap();
        prop_assert_eq!(r.worst_residual, low.worst_residual);
    }
}
