use turnpike::benchmarks::{
    fish_problem, fish_singular_arc, lq_problem, riccati_oracle, FishParams, FishVariant, LqParams,
};
use turnpike::long_horizon::{
    mpc_run, split_solve, Coarsening, MpcHorizon, MpcOptions, SplitOptions,
};
use turnpike::nlp::solve_trajectory;
use turnpike::ocp::{solve_steady_state, Equilibrium, OcpProblem, TimeGrid};
use turnpike::Error;

fn fish_i() -> (OcpProblem, Equilibrium) {
    let params = FishParams::default();
    (
        fish_problem(FishVariant::Bilinear, &params).unwrap(),
        fish_singular_arc(&params).unwrap(),
    )
}

#[test]
fn split_matches_direct_solve() {
    let (p, eq) = fish_i();
    let p = p.with_horizon(5.0);
    let direct = solve_trajectory(&p, &TimeGrid::uniform(5.0, 500).unwrap(), None).unwrap();
    let s = split_solve(&p, &eq, 1.0, 1.0, &SplitOptions::default()).unwrap();
    let rel = (s.cost.total - direct.objective).abs() / direct.objective.abs();
    assert!(rel <= 1e-2, "{rel}");
    assert!(
        s.jumps.entry_state <= 5e-2 && s.jumps.leaving_state <= 5e-2,
        "{:?}",
        s.jumps
    );
    assert_eq!(s.cost.total, s.cost.leg1 + s.cost.middle + s.cost.leg2);
    assert_eq!(s.cost.middle, 3.0 * p.l(&eq.x_bar, &eq.u_bar));
    assert_eq!(s.solution.objective, s.cost.total);

    let sol = &s.solution;
    assert_eq!(sol.grid.horizon(), 5.0);
    assert_eq!(sol.states.len(), sol.grid.intervals() + 1);
    assert_eq!(sol.inputs.len(), sol.grid.intervals());
    assert_eq!(sol.adjoints.len(), sol.states.len());
    assert_eq!(sol.multipliers.len(), sol.states.len());
    for (k, &t) in sol.grid.nodes().iter().enumerate() {
        if t > 1.0 + 1e-9 && t < 4.0 - 1e-9 {
            assert_eq!(sol.states[k], eq.x_bar);
        }
    }
    for (k, w) in sol.grid.nodes().windows(2).enumerate() {
        if w[0] >= 1.0 - 1e-9 && w[1] <= 4.0 + 1e-9 {
            assert_eq!(sol.inputs[k], eq.u_bar);
        }
    }
}

#[test]
fn split_from_the_turnpike_is_constant() {
    let (p, eq) = fish_i();
    let p = p.with_initial_state(eq.x_bar.clone()).with_horizon(3.0);
    let s = split_solve(
        &p,
        &eq,
        0.5,
        0.0,
        &SplitOptions {
            intervals: 60,
            ..Default::default()
        },
    )
    .unwrap();
    for x in &s.solution.states {
        assert!((x[0] - eq.x_bar[0]).abs() <= 1e-6);
    }
    let expected = 3.0 * p.l(&eq.x_bar, &eq.u_bar) + p.phi(&eq.x_bar);
    assert!(
        (s.cost.total - expected).abs() <= 1e-6 * expected.abs(),
        "{:?}",
        s.cost
    );
    assert!(s.leg2.is_none());
}

#[test]
fn split_reports_the_failing_leg() {
    let (p, eq) = fish_i();
    let p = p.with_horizon(5.0);
    // fastest growth is u = 0; integrate it over 0.05 from x₀ = 0.5
    let f = |x: f64| x * (5.0 - x);
    let mut x: f64 = 0.5;
    let h = 0.05 / 1000.0;
    for _ in 0..1000 {
        let k1 = f(x);
        let k2 = f(x + 0.5 * h * k1);
        let k3 = f(x + 0.5 * h * k2);
        let k4 = f(x + h * k3);
        x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    assert!(x < eq.x_bar[0], "reachable: {x}");
    match split_solve(&p, &eq, 0.05, 1.0, &SplitOptions::default()) {
        Err(Error::SplitLeg { leg, .. }) => assert_eq!(leg, 1),
        other => panic!("{other:?}"),
    }
    assert!(split_solve(&p, &eq, 3.0, 2.0, &SplitOptions::default()).is_err());
}

#[test]
fn mpc_closed_loop_has_the_turnpike_property() {
    let (p, eq) = fish_i();
    let opts = MpcOptions {
        keep_open_loop: true,
        ..Default::default()
    };
    let cl = mpc_run(&p, Some(&eq), MpcHorizon::Finite(10.0), 1.0, 0.1, &opts).unwrap();
    let entry = cl.entry_time(&eq.x_bar, 0.05, 9.0).unwrap();
    assert!(entry <= 1.5, "{entry}");
    let avg = cl.average_stage_cost(2.0, 9.0).unwrap();
    let steady = p.l(&eq.x_bar, &eq.u_bar);
    assert!((avg - steady).abs() <= 0.02 * steady.abs(), "{avg}");

    // shrinking rule and stitching
    assert_eq!(*cl.times.last().unwrap(), 10.0);
    assert_eq!(cl.steps.len(), 100);
    assert!((cl.steps.last().unwrap().prediction_horizon - 0.1).abs() <= 1e-9);
    for (step, open) in cl.steps.iter().zip(&cl.open_loop) {
        let k = cl
            .times
            .iter()
            .position(|&t| (t - step.start).abs() <= 1e-9)
            .unwrap();
        assert_eq!(open.states[0], cl.states[k]);
    }
    let sum: f64 = cl.step_costs.iter().sum();
    assert_eq!(cl.total_cost, sum + cl.terminal_cost);
    assert!(cl.to_csv().starts_with("t,x0,u0,cost\n"));
    let summary = cl.summary(Some(&eq.x_bar), 0.05);
    assert_eq!(summary.steps.len(), 100);
    assert_eq!(summary.entry_time, Some(entry));
}

#[test]
fn mpc_from_the_turnpike_stays() {
    let (p, eq) = fish_i();
    let p = p.with_initial_state(eq.x_bar.clone());
    let opts = MpcOptions {
        intervals: 20,
        ..Default::default()
    };
    let cl = mpc_run(
        &p,
        Some(&eq),
        MpcHorizon::Infinite { window: 2.0 },
        1.0,
        0.1,
        &opts,
    )
    .unwrap();
    for x in &cl.states {
        assert!((x[0] - eq.x_bar[0]).abs() <= 1e-6, "{x:?}");
    }
    assert_eq!(cl.terminal_cost, 0.0);
}

#[test]
fn lq_infinite_mode_matches_riccati() {
    let params = LqParams::default();
    let p = lq_problem(&params).unwrap();
    let eq = solve_steady_state(&p, (&[0.1], &[-0.1])).unwrap();
    let cl = mpc_run(
        &p,
        Some(&eq),
        MpcHorizon::Infinite { window: 20.0 },
        5.0,
        0.5,
        &MpcOptions::default(),
    )
    .unwrap();
    let v = riccati_oracle(&params).unwrap().value(1.0);
    assert!(
        (cl.total_cost - v).abs() <= 0.03 * v,
        "{} vs {v}",
        cl.total_cost
    );
}

#[test]
fn coarsened_predictions_are_no_worse() {
    let (p, eq) = fish_i();
    let run = |coarsening| {
        let opts = MpcOptions {
            intervals: 25,
            coarsening,
            ..Default::default()
        };
        mpc_run(&p, Some(&eq), MpcHorizon::Finite(10.0), 1.0, 0.1, &opts)
            .unwrap()
            .total_cost
    };
    let uniform = run(None);
    let coarse = run(Some(Coarsening::default()));
    assert!(
        coarse <= uniform + 0.005 * uniform.abs(),
        "{coarse} vs {uniform}"
    );
}

#[test]
fn mpc_failure_carries_the_partial_loop() {
    let (p, eq) = fish_i();
    let opts = MpcOptions {
        intervals: 10,
        terminal_equality: true,
        ..Default::default()
    };
    match mpc_run(&p, Some(&eq), MpcHorizon::Finite(1.0), 0.05, 0.01, &opts) {
        Err(Error::MpcStep { step, partial, .. }) => {
            assert_eq!(step, 0);
            assert_eq!(partial.states.len(), 1);
        }
        other => panic!("{other:?}"),
    }
    assert!(mpc_run(&p, Some(&eq), MpcHorizon::Finite(1.0), 0.5, 0.01, &opts).is_err());
}
