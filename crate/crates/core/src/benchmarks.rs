//! Reference problems: the fish-harvest problem in three cost variants with
//! its analytic singular arc, and a scalar linear-quadratic problem with a
//! Riccati oracle.

use std::str::FromStr;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ocp::{solve_steady_state, Derivatives, Equilibrium, OcpProblem, TimeMode};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FishParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// Highest sustainable density.
    pub x_s: f64,
    pub u_max: f64,
    pub x_min: f64,
}

impl Default for FishParams {
    fn default() -> Self {
        FishParams {
            a: 1.0,
            b: 2.0,
            c: 2.0,
            x_s: 5.0,
            u_max: 5.0,
            x_min: 0.1,
        }
    }
}

impl FishParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.a, self.b, self.c, self.x_s, self.u_max, self.x_min];
        if all.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::invalid(
                "fish params",
                "all parameters must be positive",
            ));
        }
        if self.x_min >= self.x_s {
            return Err(Error::invalid("fish params", "x_min must be below x_s"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FishVariant {
    /// `ℓ = ax + bu − cxu`, no terminal terms.
    Bilinear,
    /// Quadratic tracking cost with Mayer term `φ = −½x²`.
    QuadMayer,
    /// Quadratic tracking cost with terminal equality `x(T) = x_f`.
    QuadTerminal,
}

impl FromStr for FishVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bilinear" => Ok(FishVariant::Bilinear),
            "quad_mayer" => Ok(FishVariant::QuadMayer),
            "quad_terminal" => Ok(FishVariant::QuadTerminal),
            other => Err(Error::invalid(
                "variant",
                format!("unknown fish variant `{other}`"),
            )),
        }
    }
}

/// Tracking-cost data of the quadratic variants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadParams {
    pub x_c: f64,
    pub u_c: f64,
    pub q: f64,
    /// Terminal target, only used by the terminal-equality variant.
    pub x_f: f64,
}

impl QuadParams {
    pub fn for_variant(variant: FishVariant) -> Self {
        match variant {
            FishVariant::QuadTerminal => QuadParams {
                x_c: 3.64,
                u_c: 1.37,
                q: 10.0,
                x_f: 3.0,
            },
            _ => QuadParams {
                x_c: 4.0,
                u_c: 5.0,
                q: 10.0,
                x_f: 3.0,
            },
        }
    }
}

/// Continuous-time fish harvest problem `ẋ = x(x_s − x − u)` with
/// `u ∈ [0, u_max]` and `x ≥ x_min`. Defaults to `x₀ = 0.5`, `T = 1`.
pub fn fish_problem(variant: FishVariant, params: &FishParams) -> Result<OcpProblem> {
    fish_problem_with(variant, params, &QuadParams::for_variant(variant))
}

pub fn fish_problem_with(
    variant: FishVariant,
    params: &FishParams,
    quad: &QuadParams,
) -> Result<OcpProblem> {
    params.validate()?;
    let FishParams {
        a,
        b,
        c,
        x_s,
        u_max,
        x_min,
    } = *params;
    let QuadParams { x_c, u_c, q, x_f } = *quad;

    let dynamics = Arc::new(move |x: &[f64], u: &[f64]| vec![x[0] * (x_s - x[0] - u[0])]);
    let f_x =
        Arc::new(move |x: &[f64], u: &[f64]| DMatrix::from_element(1, 1, x_s - 2.0 * x[0] - u[0]));
    let f_u = Arc::new(move |x: &[f64], _u: &[f64]| DMatrix::from_element(1, 1, -x[0]));

    let mut derivatives = Derivatives {
        f_x: Some(f_x),
        f_u: Some(f_u),
        ..Derivatives::default()
    };

    let (name, stage_cost): (&str, crate::ocp::ScalarMap) = match variant {
        FishVariant::Bilinear => {
            derivatives.l_x = Some(Arc::new(move |_x: &[f64], u: &[f64]| vec![a - c * u[0]]));
            derivatives.l_u = Some(Arc::new(move |x: &[f64], _u: &[f64]| vec![b - c * x[0]]));
            (
                "fish:bilinear",
                Arc::new(move |x: &[f64], u: &[f64]| a * x[0] + b * u[0] - c * x[0] * u[0]),
            )
        }
        FishVariant::QuadMayer | FishVariant::QuadTerminal => {
            derivatives.l_x = Some(Arc::new(move |x: &[f64], _u: &[f64]| {
                vec![q * (x[0] - x_c)]
            }));
            derivatives.l_u = Some(Arc::new(move |_x: &[f64], u: &[f64]| vec![u[0] - u_c]));
            let name = if variant == FishVariant::QuadMayer {
                "fish:quad_mayer"
            } else {
                "fish:quad_terminal"
            };
            (
                name,
                Arc::new(move |x: &[f64], u: &[f64]| {
                    0.5 * ((x[0] - x_c).powi(2) * q + (u[0] - u_c).powi(2))
                }),
            )
        }
    };

    // g = [x_min − x, −u, u − u_max] (+ [x − x_s] for the Mayer variant, whose
    // terminal reward is unbounded in x; the cap is inactive from x₀ ≤ x_s)
    let capped = variant == FishVariant::QuadMayer;
    let rows = if capped { 4 } else { 3 };
    let g = Arc::new(move |x: &[f64], u: &[f64]| {
        let mut v = vec![x_min - x[0], -u[0], u[0] - u_max];
        if capped {
            v.push(x[0] - x_s);
        }
        v
    });
    derivatives.g_x = Some(Arc::new(move |_x: &[f64], _u: &[f64]| {
        let mut m = DMatrix::zeros(rows, 1);
        m[(0, 0)] = -1.0;
        if capped {
            m[(3, 0)] = 1.0;
        }
        m
    }));
    derivatives.g_u = Some(Arc::new(move |_x: &[f64], _u: &[f64]| {
        let mut m = DMatrix::zeros(rows, 1);
        m[(1, 0)] = -1.0;
        m[(2, 0)] = 1.0;
        m
    }));
    let state_rows = if capped { vec![0, 3] } else { vec![0] };

    let mut problem = OcpProblem::new(name, TimeMode::Continuous, 1, 1, dynamics, stage_cost)
        .with_path_constraints(rows, g, state_rows)
        .with_input_box(vec![0.0], vec![u_max])
        .with_horizon(1.0)
        .with_initial_state(vec![0.5]);

    match variant {
        FishVariant::Bilinear => {}
        FishVariant::QuadMayer => {
            problem = problem.with_mayer(Arc::new(|x: &[f64]| -0.5 * x[0] * x[0]));
            derivatives.phi_x = Some(Arc::new(|x: &[f64]| vec![-x[0]]));
        }
        FishVariant::QuadTerminal => {
            problem = problem.with_terminal_constraints(
                1,
                Arc::new(move |x: &[f64]| vec![x[0] - x_f]),
                vec![0],
            );
            derivatives.psi_x = Some(Arc::new(|_x: &[f64]| DMatrix::from_element(1, 1, 1.0)));
        }
    }
    Ok(problem.with_derivatives(derivatives))
}

/// Closed-form singular arc of the bilinear fish problem, cross-checked
/// against the steady-state KKT solve.
///
/// The costate is reported in the convention of [`crate::ocp`], i.e.
/// `λ̄ = b/x̄ − c` (the gradient of the cost-to-go), which is the negative
/// of the maximum-principle form `c − b/x̄`.
pub fn fish_singular_arc(params: &FishParams) -> Result<Equilibrium> {
    params.validate()?;
    let x_bar = 0.5 * params.x_s + (params.b - params.a) / (2.0 * params.c);
    if x_bar <= params.x_min {
        return Err(Error::invalid(
            "fish params",
            format!(
                "singular arc x̄ = {x_bar} does not exceed x_min = {}",
                params.x_min
            ),
        ));
    }
    let u_bar = params.x_s - x_bar;
    if u_bar < 0.0 || u_bar > params.u_max {
        return Err(Error::invalid(
            "fish params",
            format!("singular input ū = {u_bar} outside [0, u_max]"),
        ));
    }
    let lambda_bar = params.b / x_bar - params.c;
    let problem = fish_problem(FishVariant::Bilinear, params)?;
    let eq = Equilibrium {
        cost: problem.l(&[x_bar], &[u_bar]),
        x_bar: vec![x_bar],
        u_bar: vec![u_bar],
        lambda_bar: vec![lambda_bar],
        mu_bar: vec![0.0; problem.path_dim],
    };
    let solved = solve_steady_state(&problem, (&[x_bar * 0.9], &[u_bar * 0.9]))?;
    let gap = crate::ocp::distance(&solved.x_bar, &eq.x_bar)
        .max(crate::ocp::distance(&solved.u_bar, &eq.u_bar))
        .max(crate::ocp::distance(&solved.lambda_bar, &eq.lambda_bar));
    if gap > 1e-6 {
        return Err(Error::Numerical(format!(
            "closed-form singular arc disagrees with steady-state solve by {gap:.3e}"
        )));
    }
    Ok(eq)
}

/// `ẋ = a·x + b·u`, `ℓ = ½(q·x² + r·u²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LqParams {
    pub a: f64,
    pub b: f64,
    pub q: f64,
    pub r: f64,
}

impl Default for LqParams {
    fn default() -> Self {
        LqParams {
            a: 1.0,
            b: 1.0,
            q: 1.0,
            r: 1.0,
        }
    }
}

impl LqParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.r > 0.0) || !(self.q >= 0.0) {
            return Err(Error::invalid("lq params", "need q ≥ 0 and r > 0"));
        }
        if self.b == 0.0 && self.a >= 0.0 {
            return Err(Error::invalid("lq params", "(a, b) is not stabilizable"));
        }
        Ok(())
    }
}

/// Unconstrained scalar LQ problem; defaults to `x₀ = 1`, `T = 10`.
pub fn lq_problem(params: &LqParams) -> Result<OcpProblem> {
    params.validate()?;
    let LqParams { a, b, q, r } = *params;
    let derivatives = Derivatives {
        f_x: Some(Arc::new(move |_x: &[f64], _u: &[f64]| {
            DMatrix::from_element(1, 1, a)
        })),
        f_u: Some(Arc::new(move |_x: &[f64], _u: &[f64]| {
            DMatrix::from_element(1, 1, b)
        })),
        l_x: Some(Arc::new(move |x: &[f64], _u: &[f64]| vec![q * x[0]])),
        l_u: Some(Arc::new(move |_x: &[f64], u: &[f64]| vec![r * u[0]])),
        ..Derivatives::default()
    };
    Ok(OcpProblem::new(
        "lq",
        TimeMode::Continuous,
        1,
        1,
        Arc::new(move |x: &[f64], u: &[f64]| vec![a * x[0] + b * u[0]]),
        Arc::new(move |x: &[f64], u: &[f64]| 0.5 * (q * x[0] * x[0] + r * u[0] * u[0])),
    )
    .with_horizon(10.0)
    .with_initial_state(vec![1.0])
    .with_derivatives(derivatives))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiccatiSolution {
    /// Stabilizing root of `2ap − b²p²/r + q = 0`.
    pub p: f64,
    /// `|a − b²p/r|`
    pub closed_loop_rate: f64,
}

impl RiccatiSolution {
    /// Infinite-horizon value `½p·x₀²`.
    pub fn value(&self, x0: f64) -> f64 {
        0.5 * self.p * x0 * x0
    }

    pub fn value_gradient(&self, x: f64) -> f64 {
        self.p * x
    }
}

pub fn riccati_oracle(params: &LqParams) -> Result<RiccatiSolution> {
    params.validate()?;
    let LqParams { a, b, q, r } = *params;
    let p = if b == 0.0 {
        -q / (2.0 * a)
    } else {
        let s = b * b / r;
        (a + (a * a + s * q).sqrt()) / s
    };
    let rate = a - b * b * p / r;
    if !(rate < 0.0) && !(b == 0.0 && a < 0.0) {
        return Err(Error::Numerical("no stabilizing Riccati root".into()));
    }
    Ok(RiccatiSolution {
        p,
        closed_loop_rate: rate.abs(),
    })
}

/// Names accepted by the config loader.
pub const BENCHMARK_NAMES: [&str; 4] = [
    "fish:bilinear",
    "fish:quad_mayer",
    "fish:quad_terminal",
    "lq",
];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ocp::hamiltonian;

    #[test]
    fn singular_arc_defaults() {
        let eq = fish_singular_arc(&FishParams::default()).unwrap();
        assert!((eq.x_bar[0] - 2.75).abs() < 1e-12);
        assert!((eq.u_bar[0] - 2.25).abs() < 1e-12);
        assert!((eq.lambda_bar[0] + (2.0 - 2.0 / 2.75)).abs() < 1e-12);
        assert_eq!(eq.mu_bar, vec![0.0; 3]);
        assert!((eq.cost + 5.125).abs() < 1e-12);
    }

    #[test]
    fn symmetric_cost_puts_arc_at_half_capacity() {
        let p = FishParams {
            a: 2.0,
            ..FishParams::default()
        };
        let eq = fish_singular_arc(&p).unwrap();
        assert_eq!(eq.x_bar[0], 2.5);
    }

    #[test]
    fn singular_arc_rejects_low_density() {
        let p = FishParams {
            a: 12.0,
            ..FishParams::default()
        };
        assert!(fish_singular_arc(&p).is_err());
    }

    #[test]
    fn state_constraint_arc_input() {
        // on x ≡ x_min the dynamics force u = x_s − x_min
        let p = FishParams::default();
        let prob = fish_problem(FishVariant::Bilinear, &p).unwrap();
        let u = p.x_s - p.x_min;
        assert!((u - 4.9).abs() < 1e-12);
        assert_eq!(prob.f(&[p.x_min], &[u])[0], 0.0);
    }

    #[test]
    fn variant_values() {
        let p = FishParams::default();
        let bil = fish_problem(FishVariant::Bilinear, &p).unwrap();
        assert!((bil.l(&[2.75], &[2.25]) + 5.125).abs() < 1e-12);
        assert_eq!(bil.phi(&[3.0]), 0.0);
        assert!(bil.psi(&[3.0]).is_empty());

        let mayer = fish_problem(FishVariant::QuadMayer, &p).unwrap();
        assert_eq!(mayer.phi(&[2.0]), -2.0);
        assert_eq!(mayer.l(&[4.0], &[5.0]), 0.0);

        let term = fish_problem(FishVariant::QuadTerminal, &p).unwrap();
        assert_eq!(term.psi(&[3.0]), vec![0.0]);
        assert_eq!(term.terminal_equalities, vec![0]);
        assert!("nonsense".parse::<FishVariant>().is_err());
    }

    #[test]
    fn hamiltonian_reduces_to_stage_cost() {
        let prob = fish_problem(FishVariant::Bilinear, &FishParams::default()).unwrap();
        let h = hamiltonian(&prob, &[2.75], &[2.25], &[0.0], &[0.0; 3]).unwrap();
        assert!((h + 5.125).abs() < 1e-12);
        let err = hamiltonian(&prob, &[2.75], &[2.25], &[0.0, 1.0], &[0.0; 3]).unwrap_err();
        assert!(err.to_string().contains("lambda"));
        let lq = lq_problem(&LqParams::default()).unwrap();
        assert_eq!(hamiltonian(&lq, &[0.0], &[0.0], &[3.7], &[]).unwrap(), 0.0);
    }

    #[test]
    fn riccati_examples() {
        let s = riccati_oracle(&LqParams::default()).unwrap();
        assert!((s.p - (1.0 + 2f64.sqrt())).abs() < 1e-12);
        assert!((s.closed_loop_rate - 2f64.sqrt()).abs() < 1e-12);
        assert!((s.value(1.0) - 1.207_106_781).abs() < 1e-9);

        let stable = riccati_oracle(&LqParams {
            a: -1.0,
            b: 0.0,
            q: 1.0,
            r: 1.0,
        })
        .unwrap();
        assert!((stable.p - 0.5).abs() < 1e-15);
        assert!((stable.closed_loop_rate - 1.0).abs() < 1e-15);

        let free = riccati_oracle(&LqParams {
            a: -1.0,
            b: 1.0,
            q: 0.0,
            r: 1.0,
        })
        .unwrap();
        assert_eq!(free.p, 0.0);
        assert!(riccati_oracle(&LqParams {
            a: 1.0,
            b: 0.0,
            q: 1.0,
            r: 1.0
        })
        .is_err());
    }

    #[test]
    fn riccati_root_by_bisection() {
        // independent check of the stabilizing root of 2ap − b²p²/r + q
        for &(a, b, q, r) in &[
            (1.0, 1.0, 1.0, 1.0),
            (-0.5, 2.0, 3.0, 0.5),
            (2.0, 0.5, 1.0, 4.0),
        ] {
            let res = |p: f64| 2.0 * a * p - b * b * p * p / r + q;
            let (mut lo, mut hi) = (0.0f64.max(a * r / (b * b)), 1e6);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if res(mid) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let s = riccati_oracle(&LqParams { a, b, q, r }).unwrap();
            assert!((s.p - lo).abs() < 1e-8 * lo.max(1.0), "{a} {b} {q} {r}");
        }
    }
}
