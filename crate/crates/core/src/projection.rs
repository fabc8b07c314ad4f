//! Multiplier projections that pin a step back onto the constraint manifold.
//!
//! A constrained step is `Φ_{μ,h/2} ∘ ψ_h ∘ Φ_{ν,h/2}` where
//! `Φ_{Λ,h}(r, p) = (r, p - h G(r)ᵀ Λ)`. Because `Φ` leaves `r` alone, the
//! position after the step depends on `ν` only, so `ν` is found first from
//! `g(r₊) = 0` and `μ` afterwards from `f(r₊, p₊) = 0`.

use crate::error::{Error, Result};
use crate::flows::UnconstrainedMethod;
use crate::linalg::{all_finite, inf_norm, solve, Matrix, Vector};
use crate::state::State;
use crate::system::{
    continuous_multipliers, hidden_constraint, multiplier_matrix, ImplicitPhSystem,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonConfig {
    /// Absolute tolerance on `‖g‖∞` and `‖f‖∞`.
    pub tol: f64,
    pub max_iter: usize,
    /// Relative forward-difference step for the Newton Jacobian, scaled by
    /// `1 + ‖ν‖∞`.
    pub fd_step: f64,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 50,
            fd_step: 1e-7,
        }
    }
}

impl NewtonConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::InvalidInput(format!(
                "Newton tolerance must be positive, got {}",
                self.tol
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidInput(
                "Newton max_iter must be at least 1".into(),
            ));
        }
        if !(self.fd_step > 0.0) {
            return Err(Error::InvalidInput(format!(
                "Newton fd_step must be positive, got {}",
                self.fd_step
            )));
        }
        Ok(())
    }
}

/// Converged multipliers of one constrained step.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiplierSolution {
    pub nu: Vector,
    pub mu: Vector,
    pub newton_iters: usize,
    pub g_residual: f64,
    pub f_residual: f64,
}

impl MultiplierSolution {
    pub fn zero(k: usize) -> Self {
        Self {
            nu: Vector::zeros(k),
            mu: Vector::zeros(k),
            newton_iters: 0,
            g_residual: 0.0,
            f_residual: 0.0,
        }
    }
}

/// `Φ_{Λ,h}(r, p) = (r, p - h G(r)ᵀ Λ)`.
pub fn projection_map(sys: &dyn ImplicitPhSystem, x: &State, lam: &Vector, h: f64) -> State {
    if h == 0.0 || lam.iter().all(|v| *v == 0.0) {
        return x.clone();
    }
    let shift = sys.constraint_jacobian(&x.r).transpose() * lam * h;
    State::new(x.r.clone(), &x.p - shift)
}

struct NewtonOutcome {
    solution: Vector,
    iterations: usize,
    residual: f64,
}

/// Newton iteration with a forward-difference Jacobian on a k-dimensional
/// residual. `residual` returns the residual vector for a multiplier guess.
fn newton<F>(
    what: &'static str,
    guess: Vector,
    cfg: &NewtonConfig,
    mut residual: F,
) -> Result<NewtonOutcome>
where
    F: FnMut(&Vector) -> Result<Vector>,
{
    let k = guess.len();
    let mut x = guess;
    let mut res = residual(&x)?;
    let mut norm = inf_norm(&res);
    let mut iterations = 0;
    while norm > cfg.tol {
        if iterations >= cfg.max_iter || !norm.is_finite() {
            return Err(Error::NoConvergence {
                what,
                iterations,
                residual: norm,
            });
        }
        let delta = cfg.fd_step * (1.0 + inf_norm(&x));
        let mut jac = Matrix::zeros(k, k);
        for j in 0..k {
            let mut shifted = x.clone();
            shifted[j] += delta;
            let col = (residual(&shifted)? - &res) / delta;
            jac.set_column(j, &col);
        }
        let step = solve(&jac, &res, "Newton Jacobian").map_err(|_| Error::NoConvergence {
            what,
            iterations,
            residual: norm,
        })?;
        x -= step;
        res = residual(&x)?;
        norm = inf_norm(&res);
        iterations += 1;
    }
    if !all_finite(&x) {
        return Err(Error::NoConvergence {
            what,
            iterations,
            residual: f64::NAN,
        });
    }
    Ok(NewtonOutcome {
        solution: x,
        iterations,
        residual: norm,
    })
}

/// Position multiplier solve.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionSolve {
    pub nu: Vector,
    /// State after `ψ_h ∘ Φ_{ν,h/2}`, before the momentum projection.
    pub mid: State,
    pub iterations: usize,
    pub residual: f64,
}

/// Find `ν` such that the position after `ψ_h ∘ Φ_{ν,h/2}` satisfies
/// `‖g‖∞ ≤ tol`. Starts from `guess` when given, otherwise from the
/// continuous multipliers at `x`.
pub fn solve_position_multiplier(
    sys: &dyn ImplicitPhSystem,
    method: &dyn UnconstrainedMethod,
    x: &State,
    u: &Vector,
    h: f64,
    cfg: &NewtonConfig,
    guess: Option<&Vector>,
) -> Result<PositionSolve> {
    let k = sys.dims().k;
    if h == 0.0 {
        return Ok(PositionSolve {
            nu: Vector::zeros(k),
            mid: x.clone(),
            iterations: 0,
            residual: inf_norm(&sys.constraint(&x.r)),
        });
    }
    let start = match guess {
        Some(g) if g.len() == k && all_finite(g) => g.clone(),
        _ => continuous_multipliers(sys, x, u)
            .map(|m| m.lambda)
            .unwrap_or_else(|_| Vector::zeros(k)),
    };
    let advance = |nu: &Vector| method.step(sys, &projection_map(sys, x, nu, h / 2.0), u, h);
    let outcome = newton("position multiplier solve", start, cfg, |nu| {
        Ok(sys.constraint(&advance(nu)?.r))
    })?;
    let mid = advance(&outcome.solution)?;
    Ok(PositionSolve {
        nu: outcome.solution,
        mid,
        iterations: outcome.iterations,
        residual: outcome.residual,
    })
}

/// Momentum multiplier solve.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumSolve {
    pub mu: Vector,
    pub next: State,
    pub iterations: usize,
    pub residual: f64,
}

/// Find `μ` with `f(r₊, p̃ - (h/2) G(r₊)ᵀ μ) = 0`. Separable systems give a
/// linear system solved directly; others go through Newton.
pub fn solve_momentum_multiplier(
    sys: &dyn ImplicitPhSystem,
    mid: &State,
    h: f64,
    cfg: &NewtonConfig,
) -> Result<MomentumSolve> {
    let k = sys.dims().k;
    if h == 0.0 || k == 0 {
        return Ok(MomentumSolve {
            mu: Vector::zeros(k),
            next: mid.clone(),
            iterations: 0,
            residual: inf_norm(&hidden_constraint(sys, mid)),
        });
    }
    let half = h / 2.0;
    if sys.is_separable() {
        let a = multiplier_matrix(sys, mid)?;
        let rhs = hidden_constraint(sys, mid) / half;
        let mu = solve(&a, &rhs, "momentum multiplier matrix")?;
        let next = projection_map(sys, mid, &mu, half);
        let residual = inf_norm(&hidden_constraint(sys, &next));
        return Ok(MomentumSolve {
            mu,
            next,
            iterations: 0,
            residual,
        });
    }
    multiplier_matrix(sys, mid)?;
    let outcome = newton("momentum multiplier solve", Vector::zeros(k), cfg, |mu| {
        Ok(hidden_constraint(sys, &projection_map(sys, mid, mu, half)))
    })?;
    let next = projection_map(sys, mid, &outcome.solution, half);
    Ok(MomentumSolve {
        mu: outcome.solution,
        next,
        iterations: outcome.iterations,
        residual: outcome.residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flows::UnconstrainedMethod;
    use crate::linalg::canonical_j;
    use crate::pendulum::{
        embedding, lift_momentum, pendulum_method, DoublePendulum, PendulumParams,
    };
    use crate::system::residuals;

    fn sys() -> DoublePendulum {
        DoublePendulum::new(PendulumParams::default()).unwrap()
    }

    fn hanging() -> State {
        State::from_slices(&[0.0, -0.6, 0.0, -0.9], &[0.0; 4])
    }

    fn swinging() -> State {
        let p = PendulumParams::default();
        let q = [-std::f64::consts::FRAC_PI_2 + 0.5, 0.3];
        State::new(embedding(&p, q), lift_momentum(&p, q, [0.2, -0.1]).unwrap())
    }

    #[test]
    fn projection_identities() {
        let s = sys();
        let x = State::from_slices(&[0.0, -0.6, 0.0, -0.9], &[0.3, 0.1, -0.2, 0.4]);
        assert_eq!(projection_map(&s, &x, &Vector::zeros(2), 1.0), x);
        assert_eq!(
            projection_map(&s, &x, &Vector::from_vec(vec![1.0, 2.0]), 0.0),
            x
        );

        let out = projection_map(&s, &hanging(), &Vector::from_vec(vec![1.0, 0.0]), 1.0);
        assert_eq!(out.r, hanging().r);
        assert_eq!(out.p.as_slice(), &[0.0, 1.2, 0.0, 0.0]);
    }

    #[test]
    fn projection_is_symplectic_with_frozen_position() {
        // Jacobian of (r, p) ↦ (r, p - h G(r)ᵀΛ) at on-manifold r.
        let s = sys();
        let x = swinging();
        let lam = Vector::from_vec(vec![3.0, -1.5]);
        let h = 0.05;
        let n = 4;
        let mut jac = Matrix::zeros(8, 8);
        let base = x.to_vector();
        for j in 0..8 {
            let eps = 1e-6;
            let mut plus = base.clone();
            let mut minus = base.clone();
            plus[j] += eps;
            minus[j] -= eps;
            let fp = projection_map(&s, &State::from_vector(&plus), &lam, h).to_vector();
            let fm = projection_map(&s, &State::from_vector(&minus), &lam, h).to_vector();
            jac.set_column(j, &((fp - fm) / (2.0 * eps)));
        }
        let j = canonical_j(n);
        let defect = (jac.transpose() * &j * &jac - &j).amax();
        assert!(defect < 1e-6, "{defect}");
    }

    #[test]
    fn zero_step_gives_zero_multipliers() {
        let s = sys();
        let m = pendulum_method(PendulumParams::default());
        let cfg = NewtonConfig::default();
        let pos = solve_position_multiplier(
            &s,
            m.as_ref(),
            &swinging(),
            &Vector::zeros(2),
            0.0,
            &cfg,
            None,
        )
        .unwrap();
        assert_eq!(pos.nu, Vector::zeros(2));
        assert_eq!(pos.mid, swinging());
        let mom = solve_momentum_multiplier(&s, &swinging(), 0.0, &cfg).unwrap();
        assert_eq!(mom.mu, Vector::zeros(2));
    }

    #[test]
    fn position_solve_keeps_equilibrium() {
        let s = sys();
        let m = pendulum_method(PendulumParams::default());
        let cfg = NewtonConfig::default();
        let pos = solve_position_multiplier(
            &s,
            m.as_ref(),
            &hanging(),
            &Vector::zeros(2),
            0.01,
            &cfg,
            None,
        )
        .unwrap();
        assert!((&pos.mid.r - &hanging().r).amax() < 1e-12);
        // ν balances gravity: same force balance as the continuous λ.
        assert!(
            (pos.nu[0] - 6.54).abs() < 1e-6 && (pos.nu[1] - 9.81).abs() < 1e-6,
            "{}",
            pos.nu
        );
    }

    #[test]
    fn position_solve_converges_on_swinging_state() {
        let s = sys();
        let m = pendulum_method(PendulumParams::default());
        let cfg = NewtonConfig::default();
        let pos = solve_position_multiplier(
            &s,
            m.as_ref(),
            &swinging(),
            &Vector::zeros(2),
            0.01,
            &cfg,
            None,
        )
        .unwrap();
        assert!(inf_norm(&s.constraint(&pos.mid.r)) <= 1e-12);
        assert!(pos.iterations >= 1);
    }

    #[test]
    fn position_solve_reports_non_convergence() {
        let s = sys();
        let m = pendulum_method(PendulumParams::default());
        let cfg = NewtonConfig {
            max_iter: 1,
            tol: 1e-300,
            ..NewtonConfig::default()
        };
        let err = solve_position_multiplier(
            &s,
            m.as_ref(),
            &swinging(),
            &Vector::zeros(2),
            0.01,
            &cfg,
            None,
        )
        .unwrap_err();
        assert!(matches!(err, Error::NoConvergence { .. }));
        assert!(err.to_string().contains("smaller step"));
    }

    #[test]
    fn momentum_solve_with_satisfied_constraint_is_zero() {
        let s = sys();
        let mom =
            solve_momentum_multiplier(&s, &swinging(), 0.02, &NewtonConfig::default()).unwrap();
        assert!(inf_norm(&mom.mu) < 1e-12);
    }

    #[test]
    fn momentum_solve_hanging_example() {
        let s = sys();
        let mid = State::from_slices(&[0.0, -0.6, 0.0, -0.9], &[0.0, 1.0, 0.0, 0.0]);
        let h = 0.02;
        let mom = solve_momentum_multiplier(&s, &mid, h, &NewtonConfig::default()).unwrap();
        // Substitute back into (h/2) A μ = f.
        let a = Matrix::from_row_slice(2, 2, &[7.2, -3.6, -3.6, 2.4]);
        let lhs = a * &mom.mu * (h / 2.0);
        assert!(
            (lhs[0] + 6.0).abs() < 1e-10 && (lhs[1] - 3.0).abs() < 1e-10,
            "{lhs}"
        );
        assert!(mom.residual <= 1e-12);
    }

    #[test]
    fn momentum_solve_is_linear_for_separable_systems() {
        let s = sys();
        let base = State::from_slices(&[0.0, -0.6, 0.0, -0.9], &[0.0, 1.0, 0.0, 0.0]);
        let doubled = State::new(base.r.clone(), &base.p * 2.0);
        let cfg = NewtonConfig::default();
        let a = solve_momentum_multiplier(&s, &base, 0.02, &cfg).unwrap();
        let b = solve_momentum_multiplier(&s, &doubled, 0.02, &cfg).unwrap();
        assert!((&b.mu - &a.mu * 2.0).amax() < 1e-10);
    }

    #[test]
    fn solves_are_idempotent_on_the_manifold() {
        let s = sys();
        let m = pendulum_method(PendulumParams::default());
        let cfg = NewtonConfig::default();
        let x = swinging();
        let u = Vector::zeros(2);
        let pos = solve_position_multiplier(&s, m.as_ref(), &x, &u, 0.01, &cfg, None).unwrap();
        let mom = solve_momentum_multiplier(&s, &pos.mid, 0.01, &cfg).unwrap();
        let res = residuals(&s, &mom.next);
        assert!(res.g <= cfg.tol && res.f <= cfg.tol, "{res:?}");

        // An identity method leaves the converged state on the manifold,
        // so both projections vanish.
        struct Identity;
        impl UnconstrainedMethod for Identity {
            fn step(
                &self,
                _s: &dyn ImplicitPhSystem,
                x: &State,
                _u: &Vector,
                _h: f64,
            ) -> Result<State> {
                Ok(x.clone())
            }
            fn declared_order(&self) -> u32 {
                1
            }
            fn is_symmetric(&self) -> bool {
                true
            }
            fn symplectic_at_zero_input(&self) -> bool {
                true
            }
            fn name(&self) -> String {
                "identity".into()
            }
        }
        let again = solve_position_multiplier(
            &s,
            &Identity,
            &mom.next,
            &u,
            0.01,
            &cfg,
            Some(&Vector::zeros(2)),
        )
        .unwrap();
        assert!(inf_norm(&again.nu) <= 1e-9, "{}", again.nu);
        let again_mu = solve_momentum_multiplier(&s, &again.mid, 0.01, &cfg).unwrap();
        assert!(inf_norm(&again_mu.mu) <= 1e-9);
    }

    #[test]
    fn non_separable_momentum_solve_uses_newton() {
        // Kinetic energy ½|p|² + ¼|p|⁴ on the line r1 = 0.
        struct Quartic;
        impl ImplicitPhSystem for Quartic {
            fn dims(&self) -> crate::system::Dims {
                crate::system::Dims { n: 2, k: 1, m: 1 }
            }
            fn hamiltonian(&self, r: &Vector, p: &Vector) -> f64 {
                0.5 * p.norm_squared() + 0.25 * p.norm_squared().powi(2) + r[1]
            }
            fn grad_r(&self, _r: &Vector, _p: &Vector) -> Vector {
                Vector::from_vec(vec![0.0, 1.0])
            }
            fn grad_p(&self, _r: &Vector, p: &Vector) -> Vector {
                p * (1.0 + p.norm_squared())
            }
            fn constraint(&self, r: &Vector) -> Vector {
                Vector::from_vec(vec![r[0]])
            }
            fn constraint_jacobian(&self, _r: &Vector) -> Matrix {
                Matrix::from_row_slice(1, 2, &[1.0, 0.0])
            }
            fn input_map(&self, _r: &Vector) -> Matrix {
                Matrix::zeros(2, 1)
            }
        }
        let mid = State::from_slices(&[0.0, 0.0], &[0.3, 0.5]);
        let mom = solve_momentum_multiplier(&Quartic, &mid, 0.1, &NewtonConfig::default()).unwrap();
        assert!(mom.next.p[0].abs() < 1e-12);
        assert!(mom.iterations >= 1);
        assert!((mom.mu[0] - 0.3 / 0.05).abs() < 1e-9);
    }
}
