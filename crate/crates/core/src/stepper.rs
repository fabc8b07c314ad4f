//! Constrained step and the sample-and-hold simulation loop.

use thiserror::Error;

use crate::control::ControlSource;
use crate::error::{Error, Result};
use crate::flows::UnconstrainedMethod;
use crate::linalg::Vector;
use crate::projection::{
    solve_momentum_multiplier, solve_position_multiplier, MultiplierSolution, NewtonConfig,
};
use crate::state::State;
use crate::system::{energy, output, residuals, ImplicitPhSystem};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig {
    /// Sampling period; negative values integrate backwards in time.
    pub h: f64,
    pub newton: NewtonConfig,
    /// Keep every `log_every`-th sample in the trajectory.
    pub log_every: usize,
}

impl IntegratorConfig {
    pub fn new(h: f64) -> Self {
        Self {
            h,
            newton: NewtonConfig::default(),
            log_every: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h != 0.0 && self.h.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "step size must be finite and non-zero, got {}",
                self.h
            )));
        }
        if self.log_every == 0 {
            return Err(Error::InvalidInput("log_every must be at least 1".into()));
        }
        self.newton.validate()
    }

    pub fn reversed(&self) -> Self {
        Self {
            h: -self.h,
            ..*self
        }
    }
}

/// Outcome of one constrained step, or one logged sample of a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub state: State,
    pub multipliers: MultiplierSolution,
    /// Output at `state`.
    pub y: Vector,
    /// For a step: the command that was held during it. For a trajectory
    /// sample: the command issued at that sample.
    pub u: Vector,
    pub energy: f64,
}

/// Constrained integrator with a warm-start cache for `ν`.
pub struct ConstrainedStepper<'a> {
    sys: &'a dyn ImplicitPhSystem,
    method: &'a dyn UnconstrainedMethod,
    cfg: IntegratorConfig,
    warm_nu: Option<Vector>,
}

impl<'a> ConstrainedStepper<'a> {
    pub fn new(
        sys: &'a dyn ImplicitPhSystem,
        method: &'a dyn UnconstrainedMethod,
        cfg: IntegratorConfig,
    ) -> Self {
        Self {
            sys,
            method,
            cfg,
            warm_nu: None,
        }
    }

    pub fn config(&self) -> &IntegratorConfig {
        &self.cfg
    }

    /// `Φ_{μ,h/2} ∘ ψ_h ∘ Φ_{ν,h/2}` with `u` held constant.
    pub fn step(&mut self, x: &State, u: &Vector) -> Result<StepResult> {
        let (sys, cfg) = (self.sys, &self.cfg);
        let position = solve_position_multiplier(
            sys,
            self.method,
            x,
            u,
            cfg.h,
            &cfg.newton,
            self.warm_nu.as_ref(),
        )?;
        let momentum = solve_momentum_multiplier(sys, &position.mid, cfg.h, &cfg.newton)?;
        let state = momentum.next;
        if !state.is_finite() {
            return Err(Error::NonFinite {
                quantity: "state",
                r: state.r.iter().copied().collect(),
                p: state.p.iter().copied().collect(),
            });
        }
        let res = residuals(sys, &state);
        self.warm_nu = Some(position.nu.clone());
        Ok(StepResult {
            y: output(sys, &state),
            energy: energy(sys, &state)?,
            u: u.clone(),
            multipliers: MultiplierSolution {
                nu: position.nu,
                mu: momentum.mu,
                newton_iters: position.iterations + momentum.iterations,
                g_residual: res.g,
                f_residual: res.f,
            },
            state,
        })
    }
}

/// One constrained step without warm start.
pub fn constrained_step(
    sys: &dyn ImplicitPhSystem,
    method: &dyn UnconstrainedMethod,
    x: &State,
    u: &Vector,
    cfg: &IntegratorConfig,
) -> Result<StepResult> {
    ConstrainedStepper::new(sys, method, *cfg).step(x, u)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    /// `step · h`.
    pub t: f64,
    pub step: usize,
    pub result: StepResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub h: f64,
    pub log_every: usize,
    pub records: Vec<Record>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last_state(&self) -> Option<&State> {
        self.records.last().map(|r| &r.result.state)
    }

    pub fn energies(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.result.energy).collect()
    }

    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.t).collect()
    }

    /// Commands issued at each logged sample.
    pub fn commands(&self) -> Vec<Vector> {
        self.records.iter().map(|r| r.result.u.clone()).collect()
    }

    /// Largest `‖g‖∞` or `‖f‖∞` over all logged states.
    pub fn max_residual(&self) -> f64 {
        self.records
            .iter()
            .map(|r| {
                r.result
                    .multipliers
                    .g_residual
                    .max(r.result.multipliers.f_residual)
            })
            .fold(0.0, f64::max)
    }
}

/// A simulation that stopped early; `partial` holds every sample logged
/// before the failure.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("simulation aborted: {error}")]
pub struct SimulationFailure {
    pub error: Error,
    pub partial: Trajectory,
}

/// Sample-and-hold loop: at each sample the output is read, the source
/// issues a command, and one constrained step is taken with it held.
pub fn simulate(
    sys: &dyn ImplicitPhSystem,
    method: &dyn UnconstrainedMethod,
    x0: &State,
    source: &dyn ControlSource,
    cfg: &IntegratorConfig,
    steps: usize,
) -> std::result::Result<Trajectory, SimulationFailure> {
    let mut traj = Trajectory {
        h: cfg.h,
        log_every: cfg.log_every.max(1),
        records: Vec::with_capacity(steps / cfg.log_every.max(1) + 1),
    };
    let fail = |error: Error, partial: Trajectory| SimulationFailure { error, partial };

    if let Err(e) = cfg.validate() {
        return Err(fail(e, traj));
    }
    let m = sys.dims().m;
    let res0 = residuals(sys, x0);
    if !res0.within(cfg.newton.tol, cfg.newton.tol) {
        return Err(fail(
            Error::InvalidInput(format!(
                "initial state is off the constraint manifold (‖g‖∞ = {:.3e}, ‖f‖∞ = {:.3e})",
                res0.g, res0.f
            )),
            traj,
        ));
    }
    let energy0 = match energy(sys, x0) {
        Ok(e) => e,
        Err(e) => return Err(fail(e, traj)),
    };

    let mut stepper = ConstrainedStepper::new(sys, method, *cfg);
    let mut current = StepResult {
        state: x0.clone(),
        multipliers: MultiplierSolution {
            g_residual: res0.g,
            f_residual: res0.f,
            ..MultiplierSolution::zero(sys.dims().k)
        },
        y: output(sys, x0),
        u: Vector::zeros(m),
        energy: energy0,
    };

    for alpha in 0..=steps {
        let u = source.next(alpha, &current.y);
        if u.len() != m {
            return Err(fail(
                Error::Dimension {
                    what: "control output",
                    expected: m.to_string(),
                    got: u.len().to_string(),
                }
                .at_step(alpha),
                traj,
            ));
        }
        current.u = u;
        if alpha % traj.log_every == 0 {
            traj.records.push(Record {
                t: alpha as f64 * cfg.h,
                step: alpha,
                result: current.clone(),
            });
        }
        if alpha == steps {
            break;
        }
        match stepper.step(&current.state, &current.u) {
            Ok(next) => current = next,
            Err(e) => return Err(fail(e.at_step(alpha), traj)),
        }
    }
    Ok(traj)
}

/// Per-interval error of the sampled power balance,
/// `e_α = (H_{α+1} - H_α) - Δt · u_α · (y_α + y_{α+1}) / 2`,
/// with energies and outputs re-evaluated from the logged states.
pub fn power_balance_audit(sys: &dyn ImplicitPhSystem, traj: &Trajectory) -> Vec<f64> {
    let samples: Vec<(f64, f64, Vector, &Vector)> = traj
        .records
        .iter()
        .map(|rec| {
            let x = &rec.result.state;
            (
                rec.t,
                sys.hamiltonian(&x.r, &x.p),
                output(sys, x),
                &rec.result.u,
            )
        })
        .collect();
    samples
        .windows(2)
        .map(|w| {
            let (t0, h0, y0, u0) = &w[0];
            let (t1, h1, y1, _) = &w[1];
            (h1 - h0) - (t1 - t0) * u0.dot(&((y0 + y1) * 0.5))
        })
        .collect()
}
