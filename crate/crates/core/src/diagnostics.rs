//! Executable checks: observed order, symmetry, symplecticity, energy
//! behaviour and dissipation.

use crate::control::{sequence_source, ControlSource, ZeroControl};
use crate::error::{Error, Result};
use crate::flows::UnconstrainedMethod;
use crate::linalg::{canonical_j, mat_inf_norm, Matrix, Vector};
use crate::par;
use crate::state::State;
use crate::stepper::{simulate, IntegratorConfig, Trajectory};
use crate::system::ImplicitPhSystem;

/// Errors below this are treated as rounding noise when estimating orders.
pub const ROUNDING_FLOOR: f64 = 1e-13;

/// Largest energy increase tolerated by [`dissipation_check`].
pub const DISSIPATION_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrderEntry {
    pub h: f64,
    pub steps: usize,
    /// `‖x_h(T) - x_ref(T)‖∞` in ambient coordinates.
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderStudyReport {
    pub entries: Vec<OrderEntry>,
    /// `log₂(e_i / e_{i+1})` per adjacent pair; `None` when either error is
    /// at rounding level.
    pub observed_orders: Vec<Option<f64>>,
}

impl OrderStudyReport {
    pub fn min_order(&self) -> Option<f64> {
        self.observed_orders
            .iter()
            .flatten()
            .copied()
            .reduce(f64::min)
    }
}

/// Produces the reference state at the horizon.
pub type ReferenceFn<'a> = dyn Fn(f64) -> Result<State> + Sync + 'a;

fn steps_for(h: f64, horizon: f64) -> Result<usize> {
    let n = (horizon / h).round();
    if !(h > 0.0) || n < 1.0 || (n * h - horizon).abs() > 1e-9 * horizon.abs().max(1.0) {
        return Err(Error::InvalidInput(format!(
            "step size {h} does not divide the horizon {horizon}"
        )));
    }
    Ok(n as usize)
}

/// Final state of a run of `steps` steps, or the underlying error.
pub fn final_state(
    sys: &dyn ImplicitPhSystem,
    method: &dyn UnconstrainedMethod,
    x0: &State,
    source: &dyn ControlSource,
    cfg: &IntegratorConfig,
    steps: usize,
) -> Result<State> {
    let cfg = IntegratorConfig {
        log_every: steps.max(1),
        ..*cfg
    };
    let traj = simulate(sys, method, x0, source, &cfg, steps).map_err(|f| f.error)?;
    Ok(traj.last_state().cloned().unwrap_or_else(|| x0.clone()))
}

/// Global error at `horizon` for each step size in `h_list`, which must
/// halve from one entry to the next. Runs are independent and execute
/// concurrently under the `parallel` feature.
pub fn order_study(
    sys: &dyn ImplicitPhSystem,
    method: &dyn UnconstrainedMethod,
    x0: &State,
    source: &dyn ControlSource,
    horizon: f64,
    h_list: &[f64],
    newton: &crate::projection::NewtonConfig,
    reference: &ReferenceFn<'_>,
) -> Result<OrderStudyReport> {
    if h_list.is_empty() {
        return Err(Error::InvalidInput(
            "order study needs at least one step size".into(),
        ));
    }
    for w in h_list.windows(2) {
        if ((w[0] / w[1]) - 2.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "step sizes must halve, got {} then {}",
                w[0], w[1]
            )));
        }
    }
    let steps = h_list
        .iter()
        .map(|&h| steps_for(h, horizon))
        .collect::<Result<Vec<_>>>()?;
    let x_ref = reference(horizon)?;

    let jobs: Vec<(f64, usize)> = h_list.iter().copied().zip(steps).collect();
    let runs = par::map(&jobs, |&(h, n)| {
        let cfg = IntegratorConfig {
            newton: *newton,
            ..IntegratorConfig::new(h)
        };
        final_state(sys, method, x0, source, &cfg, n).map(|x| OrderEntry {
            h,
            steps: n,
            error: x.distance(&x_ref),
        })
    });
    let entries = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let observed_orders = entries
        .windows(2)
        .map(|w| {
            (w[0].error > ROUNDING_FLOOR && w[1].error > ROUNDING_FLOOR)
                .then(|| (w[0].error / w[1].error).log2())
        })
        .collect();
    Ok(OrderStudyReport {
        entries,
        observed_orders,
    })
}

/// Reference obtained from the method itself at step `h_fine`. The source
/// is queried on the fine grid, so this is only meaningful for sources
/// that do not depend on the step index.
pub fn self_reference<'a>(
    sys: &'a dyn ImplicitPhSystem,
    method: &'a dyn UnconstrainedMethod,
    x0: &'a State,
    source: &'a dyn ControlSource,
    h_fine: f64,
    newton: crate::projection::NewtonConfig,
) -> impl Fn(f64) -> Result<State> + Sync + 'a {
    move |horizon| {
        let n = steps_for(h_fine, horizon)?;
        let cfg = IntegratorConfig {
            newton,
            ..IntegratorConfig::new(h_fine)
        };
        final_state(sys, method, x0, source, &cfg, n)
    }
}

/// Runs `steps` steps forward with step `h`, then the same number backward
/// with `-h` replaying the forward commands in reverse order, and returns
/// `‖x_final - x0‖∞`.
pub fn symmetry_roundtrip(
    sys: &dyn ImplicitPhSystem,
    method: &dyn UnconstrainedMethod,
    x0: &State,
    source: &dyn ControlSource,
    cfg: &IntegratorConfig,
    steps: usize,
) -> Result<f64> {
    if steps == 0 {
        return Ok(0.0);
    }
    let fwd = simulate(
        sys,
        method,
        x0,
        source,
        &IntegratorConfig {
            log_every: 1,
            ..*cfg
        },
        steps,
    )
    .map_err(|f| f.error)?;
    let mut applied = fwd.commands();
    applied.truncate(steps);
    let replay = sequence_source(applied)?.reversed();
    let x_mid = fwd.last_state().cloned().unwrap_or_else(|| x0.clone());
    let x_back = final_state(sys, method, &x_mid, &replay, &cfg.reversed(), steps)?;
    Ok(x_back.distance(x0))
}

/// `‖MᵀJM - J‖∞` for the central-difference Jacobian `M` of one
/// unconstrained step at fixed `u`.
pub fn symplecticity_check(
    sys: &dyn ImplicitPhSystem,
    method: &dyn UnconstrainedMethod,
    x: &State,
    u: &Vector,
    h: f64,
) -> Result<f64> {
    let z = x.to_vector();
    let dim = z.len();
    let delta = 1e-6 * (1.0 + z.amax());
    let mut jac = Matrix::zeros(dim, dim);
    for j in 0..dim {
        let mut plus = z.clone();
        let mut minus = z.clone();
        plus[j] += delta;
        minus[j] -= delta;
        let fp = method
            .step(sys, &State::from_vector(&plus), u, h)?
            .to_vector();
        let fm = method
            .step(sys, &State::from_vector(&minus), u, h)?
            .to_vector();
        jac.set_column(j, &((fp - fm) / (2.0 * delta)));
    }
    let j = canonical_j(dim / 2);
    Ok(mat_inf_norm(&(jac.transpose() * &j * &jac - &j)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyDrift {
    pub h: f64,
    pub steps: usize,
    /// `max_α |H_α - H_0|`.
    pub max_deviation: f64,
    /// Least-squares slope of `H_α` against `t_α`.
    pub slope: f64,
}

impl EnergyDrift {
    /// `|slope| · T`, the secular change predicted over the whole run.
    pub fn secular_change(&self) -> f64 {
        self.slope.abs() * self.h.abs() * self.steps as f64
    }
}

/// Energy behaviour of an unforced run.
pub fn energy_drift_study(
    sys: &dyn ImplicitPhSystem,
    method: &dyn UnconstrainedMethod,
    x0: &State,
    cfg: &IntegratorConfig,
    steps: usize,
) -> Result<EnergyDrift> {
    let zero = ZeroControl { m: sys.dims().m };
    let traj = simulate(
        sys,
        method,
        x0,
        &zero,
        &IntegratorConfig {
            log_every: 1,
            ..*cfg
        },
        steps,
    )
    .map_err(|f| f.error)?;
    let energies = traj.energies();
    let h0 = energies[0];
    let max_deviation = energies.iter().map(|e| (e - h0).abs()).fold(0.0, f64::max);
    Ok(EnergyDrift {
        h: cfg.h,
        steps,
        max_deviation,
        slope: least_squares_slope(&traj.times(), &energies),
    })
}

/// [`energy_drift_study`] at several step sizes over a common horizon.
pub fn energy_drift_sweep(
    sys: &dyn ImplicitPhSystem,
    method: &dyn UnconstrainedMethod,
    x0: &State,
    newton: &crate::projection::NewtonConfig,
    h_list: &[f64],
    horizon: f64,
) -> Result<Vec<EnergyDrift>> {
    let steps = h_list
        .iter()
        .map(|&h| steps_for(h, horizon))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(f64, usize)> = h_list.iter().copied().zip(steps).collect();
    par::map(&jobs, |&(h, n)| {
        let cfg = IntegratorConfig {
            newton: *newton,
            ..IntegratorConfig::new(h)
        };
        energy_drift_study(sys, method, x0, &cfg, n)
    })
    .into_iter()
    .collect()
}

fn least_squares_slope(t: &[f64], v: &[f64]) -> f64 {
    let n = t.len() as f64;
    if t.len() < 2 {
        return 0.0;
    }
    let tm = t.iter().sum::<f64>() / n;
    let vm = v.iter().sum::<f64>() / n;
    let (num, den) = t.iter().zip(v).fold((0.0, 0.0), |(num, den), (ti, vi)| {
        (num + (ti - tm) * (vi - vm), den + (ti - tm) * (ti - tm))
    });
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DissipationReport {
    pub passed: bool,
    /// Index `α` of the first interval with `H_{α+1} - H_α > DISSIPATION_TOL`.
    pub first_violation: Option<usize>,
    /// Largest `H_{α+1} - H_α` over the trajectory.
    pub max_increase: f64,
}

pub fn dissipation_check(traj: &Trajectory) -> DissipationReport {
    let energies = traj.energies();
    let increases: Vec<f64> = energies.windows(2).map(|w| w[1] - w[0]).collect();
    let first_violation = increases.iter().position(|&d| d > DISSIPATION_TOL);
    DissipationReport {
        passed: first_violation.is_none(),
        first_violation,
        max_increase: increases.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::{damping_source, DampingGain};
    use crate::flows::{kick_drift_euler, stormer_verlet, Composition, MethodTraits};
    use crate::pendulum::{
        embedding, lift_momentum, pendulum_method, DoublePendulum, PendulumParams,
    };
    use crate::stepper::Record;

    fn sys() -> DoublePendulum {
        DoublePendulum::new(PendulumParams::default()).unwrap()
    }

    fn swinging() -> State {
        let p = PendulumParams::default();
        let q = [-std::f64::consts::FRAC_PI_2 + 0.5, 0.3];
        State::new(embedding(&p, q), lift_momentum(&p, q, [0.0, 0.0]).unwrap())
    }

    fn hanging() -> State {
        State::from_slices(&[0.0, -0.6, 0.0, -0.9], &[0.0; 4])
    }

    #[test]
    fn identity_map_is_symplectic() {
        let s = sys();
        let identity = Composition::new(
            vec![],
            MethodTraits {
                order: 2,
                symmetric: true,
                symplectic_at_zero_input: true,
            },
        );
        let d = symplecticity_check(&s, &identity, &swinging(), &Vector::zeros(2), 0.01).unwrap();
        assert!(d < 1e-9, "{d}");
    }

    #[test]
    fn verlet_is_symplectic() {
        let s = sys();
        let sv = stormer_verlet(&s).unwrap();
        let d = symplecticity_check(&s, sv.as_ref(), &swinging(), &Vector::zeros(2), 0.01).unwrap();
        assert!(d <= 1e-6, "{d}");
    }

    #[test]
    fn input_breaks_symplecticity() {
        let s = sys();
        let m = pendulum_method(*s.params());
        let at_zero =
            symplecticity_check(&s, m.as_ref(), &swinging(), &Vector::zeros(2), 0.01).unwrap();
        let forced = symplecticity_check(
            &s,
            m.as_ref(),
            &swinging(),
            &Vector::from_vec(vec![1.0, 0.0]),
            0.01,
        )
        .unwrap();
        assert!(at_zero <= 1e-6, "{at_zero}");
        assert!(forced > 1e-3, "{forced}");
    }

    #[test]
    fn roundtrip_zero_steps() {
        let s = sys();
        let m = pendulum_method(*s.params());
        let e = symmetry_roundtrip(
            &s,
            m.as_ref(),
            &swinging(),
            &ZeroControl { m: 2 },
            &IntegratorConfig::new(0.01),
            0,
        )
        .unwrap();
        assert_eq!(e, 0.0);
    }

    #[test]
    fn roundtrip_symmetric_vs_not() {
        let s = sys();
        let cfg = IntegratorConfig::new(0.01);
        let sym = pendulum_method(*s.params());
        let e_sym = symmetry_roundtrip(
            &s,
            sym.as_ref(),
            &swinging(),
            &ZeroControl { m: 2 },
            &cfg,
            50,
        )
        .unwrap();
        let euler = kick_drift_euler();
        let e_euler = symmetry_roundtrip(
            &s,
            euler.as_ref(),
            &swinging(),
            &ZeroControl { m: 2 },
            &cfg,
            50,
        )
        .unwrap();
        assert!(e_sym <= 1e-9, "{e_sym}");
        assert!(e_euler > 1e3 * e_sym.max(1e-12), "{e_euler}");
    }

    #[test]
    fn roundtrip_under_input() {
        let s = sys();
        let m = pendulum_method(*s.params());
        let src = |step: usize, _y: &Vector| {
            Vector::from_vec(vec![0.1 * (step as f64 * 0.3).sin(), 0.05])
        };
        let e = symmetry_roundtrip(
            &s,
            m.as_ref(),
            &swinging(),
            &src,
            &IntegratorConfig::new(0.01),
            40,
        )
        .unwrap();
        assert!(e <= 1e-9, "{e}");
    }

    #[test]
    fn order_study_bookkeeping() {
        let s = sys();
        let m = pendulum_method(*s.params());
        let x0 = swinging();
        let zero = ZeroControl { m: 2 };
        let newton = Default::default();
        let reference = self_reference(&s, m.as_ref(), &x0, &zero, 0.02 / 8.0, newton);
        let rep = order_study(
            &s,
            m.as_ref(),
            &x0,
            &zero,
            0.2,
            &[0.04, 0.02],
            &newton,
            &reference,
        )
        .unwrap();
        assert_eq!(rep.entries[0].steps * 2, rep.entries[1].steps);
        assert_eq!(rep.observed_orders.len(), 1);
    }

    #[test]
    fn order_study_rejects_bad_grids() {
        let s = sys();
        let m = pendulum_method(*s.params());
        let x0 = swinging();
        let zero = ZeroControl { m: 2 };
        let newton = Default::default();
        let reference = |_: f64| Ok(swinging());
        assert!(order_study(&s, m.as_ref(), &x0, &zero, 1.0, &[0.3], &newton, &reference).is_err());
        assert!(order_study(
            &s,
            m.as_ref(),
            &x0,
            &zero,
            1.0,
            &[0.1, 0.04],
            &newton,
            &reference
        )
        .is_err());
        assert!(order_study(&s, m.as_ref(), &x0, &zero, 1.0, &[], &newton, &reference).is_err());
    }

    #[test]
    fn order_at_rounding_level_is_undefined() {
        let s = sys();
        let m = pendulum_method(*s.params());
        let x0 = hanging();
        let zero = ZeroControl { m: 2 };
        let newton = Default::default();
        let reference = |_: f64| Ok(hanging());
        let rep = order_study(
            &s,
            m.as_ref(),
            &x0,
            &zero,
            0.2,
            &[0.02, 0.01],
            &newton,
            &reference,
        )
        .unwrap();
        assert_eq!(rep.observed_orders, vec![None]);
        assert_eq!(rep.min_order(), None);
    }

    #[test]
    fn equilibrium_energy_is_flat() {
        let s = sys();
        let m = pendulum_method(*s.params());
        let d = energy_drift_study(
            &s,
            m.as_ref(),
            &hanging(),
            &IntegratorConfig::new(0.01),
            200,
        )
        .unwrap();
        assert!(d.max_deviation <= 1e-12);
    }

    #[test]
    fn slope_of_a_line() {
        let t = [0.0, 1.0, 2.0, 3.0];
        let v = [1.0, 3.0, 5.0, 7.0];
        assert!((least_squares_slope(&t, &v) - 2.0).abs() < 1e-14);
        assert_eq!(least_squares_slope(&[1.0], &[2.0]), 0.0);
    }

    fn traj_with(energies: &[f64]) -> Trajectory {
        let sample = crate::stepper::StepResult {
            state: hanging(),
            multipliers: crate::projection::MultiplierSolution::zero(2),
            y: Vector::zeros(2),
            u: Vector::zeros(2),
            energy: 0.0,
        };
        Trajectory {
            h: 0.01,
            log_every: 1,
            records: energies
                .iter()
                .enumerate()
                .map(|(i, &e)| Record {
                    t: i as f64 * 0.01,
                    step: i,
                    result: crate::stepper::StepResult {
                        energy: e,
                        ..sample.clone()
                    },
                })
                .collect(),
        }
    }

    #[test]
    fn dissipation_semantics() {
        assert!(dissipation_check(&traj_with(&[])).passed);
        assert!(dissipation_check(&traj_with(&[1.0, 0.9, 0.9 + 1e-13, 0.5])).passed);
        let rep = dissipation_check(&traj_with(&[1.0, 0.9, 0.95, 0.5]));
        assert!(!rep.passed);
        assert_eq!(rep.first_violation, Some(1));
    }

    #[test]
    fn damping_dissipates_and_free_motion_does_not() {
        let s = sys();
        let m = pendulum_method(*s.params());
        let cfg = IntegratorConfig::new(0.01);
        let damped = simulate(
            &s,
            m.as_ref(),
            &swinging(),
            &damping_source(DampingGain::scalar(0.3, 2).unwrap()),
            &cfg,
            300,
        )
        .unwrap();
        assert!(dissipation_check(&damped).passed);
        let free = simulate(
            &s,
            m.as_ref(),
            &swinging(),
            &ZeroControl { m: 2 },
            &cfg,
            300,
        )
        .unwrap();
        assert!(!dissipation_check(&free).passed);
    }
}
