//! Unconstrained one-step maps and their compositions.
//!
//! An [`UnconstrainedMethod`] approximates the flow of the unconstrained
//! field `X_{H,u} = D_H + u·U ∂/∂p` over one step with the input held
//! constant. The constrained integrator in [`crate::stepper`] wraps any
//! such method with multiplier projections.
//!
//! Compositions are written left to right in application order: the
//! first stage of a [`Composition`] is applied first.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{inf_norm, Vector};
use crate::state::State;
use crate::system::ImplicitPhSystem;

pub trait UnconstrainedMethod: Send + Sync {
    fn step(&self, sys: &dyn ImplicitPhSystem, x: &State, u: &Vector, h: f64) -> Result<State>;

    fn declared_order(&self) -> u32;

    /// Whether `step(·, u, -h)` inverts `step(·, u, h)`.
    fn is_symmetric(&self) -> bool;

    /// Whether the map is symplectic when `u = 0`.
    fn symplectic_at_zero_input(&self) -> bool;

    /// Closed-form inverse of `step` at the same `(u, h)`, when known.
    fn inverse_step(
        &self,
        _sys: &dyn ImplicitPhSystem,
        _x: &State,
        _u: &Vector,
        _h: f64,
    ) -> Option<Result<State>> {
        None
    }

    fn name(&self) -> String;
}

pub type MethodRef = Arc<dyn UnconstrainedMethod>;

impl fmt::Debug for dyn UnconstrainedMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

fn require_separable(sys: &dyn ImplicitPhSystem, what: &str) -> Result<()> {
    if sys.is_separable() {
        Ok(())
    } else {
        Err(Error::Unsupported(format!(
            "{what} needs a separable Hamiltonian (declared mass inverse)"
        )))
    }
}

/// Exact flow of the potential-plus-input field with `r` frozen:
/// `p ← p + h (-∇V(r) + U(r) u)`.
pub fn kick(sys: &dyn ImplicitPhSystem, x: &State, u: &Vector, h: f64) -> Result<State> {
    require_separable(sys, "kick")?;
    let force = -sys.grad_r(&x.r, &x.p) + sys.input_map(&x.r) * u;
    Ok(State::new(x.r.clone(), &x.p + force * h))
}

/// Exact flow of the kinetic field: `r ← r + h M⁻¹ p`.
pub fn drift(sys: &dyn ImplicitPhSystem, x: &State, h: f64) -> Result<State> {
    require_separable(sys, "drift")?;
    let minv = sys.mass_inverse().expect("separable system declares M⁻¹");
    Ok(State::new(&x.r + minv * &x.p * h, x.p.clone()))
}

/// Exact flows are symmetric, first order as splitting stages, and their
/// own inverse under `h ↦ -h`.
macro_rules! exact_flow {
    ($ty:ident, $name:literal, $symplectic:expr, |$sys:ident, $x:ident, $u:ident, $h:ident| $body:expr) => {
        #[derive(Debug, Clone, Copy, Default)]
        pub struct $ty;

        impl UnconstrainedMethod for $ty {
            fn step(
                &self,
                $sys: &dyn ImplicitPhSystem,
                $x: &State,
                $u: &Vector,
                $h: f64,
            ) -> Result<State> {
                $body
            }
            fn declared_order(&self) -> u32 {
                1
            }
            fn is_symmetric(&self) -> bool {
                true
            }
            fn symplectic_at_zero_input(&self) -> bool {
                $symplectic
            }
            fn inverse_step(
                &self,
                sys: &dyn ImplicitPhSystem,
                x: &State,
                u: &Vector,
                h: f64,
            ) -> Option<Result<State>> {
                Some(self.step(sys, x, u, -h))
            }
            fn name(&self) -> String {
                $name.to_string()
            }
        }
    };
}

exact_flow!(KickFlow, "kick", true, |sys, x, u, h| kick(sys, x, u, h));
exact_flow!(DriftFlow, "drift", true, |sys, x, _u, h| drift(sys, x, h));

/// `inner` stepped with `factor · h`.
#[derive(Clone)]
pub struct Scaled {
    inner: MethodRef,
    factor: f64,
}

impl UnconstrainedMethod for Scaled {
    fn step(&self, sys: &dyn ImplicitPhSystem, x: &State, u: &Vector, h: f64) -> Result<State> {
        self.inner.step(sys, x, u, self.factor * h)
    }
    fn declared_order(&self) -> u32 {
        self.inner.declared_order()
    }
    fn is_symmetric(&self) -> bool {
        self.inner.is_symmetric()
    }
    fn symplectic_at_zero_input(&self) -> bool {
        self.inner.symplectic_at_zero_input()
    }
    fn inverse_step(
        &self,
        sys: &dyn ImplicitPhSystem,
        x: &State,
        u: &Vector,
        h: f64,
    ) -> Option<Result<State>> {
        self.inner.inverse_step(sys, x, u, self.factor * h)
    }
    fn name(&self) -> String {
        format!("{}({}h)", self.inner.name(), self.factor)
    }
}

pub fn scaled(inner: MethodRef, factor: f64) -> MethodRef {
    Arc::new(Scaled { inner, factor })
}

/// Properties a composition cannot infer from its stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MethodTraits {
    pub order: u32,
    pub symmetric: bool,
    pub symplectic_at_zero_input: bool,
}

/// Stages applied in sequence, each with the full step `h`
/// (wrap stages in [`scaled`] for fractional steps).
#[derive(Clone)]
pub struct Composition {
    stages: Vec<MethodRef>,
    traits: MethodTraits,
    name: Option<String>,
}

impl Composition {
    pub fn new(stages: Vec<MethodRef>, traits: MethodTraits) -> Self {
        Self {
            stages,
            traits,
            name: None,
        }
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    pub fn into_ref(self) -> MethodRef {
        Arc::new(self)
    }
}

impl UnconstrainedMethod for Composition {
    fn step(&self, sys: &dyn ImplicitPhSystem, x: &State, u: &Vector, h: f64) -> Result<State> {
        let mut state = x.clone();
        for stage in &self.stages {
            state = stage.step(sys, &state, u, h)?;
        }
        Ok(state)
    }
    fn declared_order(&self) -> u32 {
        self.traits.order
    }
    fn is_symmetric(&self) -> bool {
        self.traits.symmetric
    }
    fn symplectic_at_zero_input(&self) -> bool {
        self.traits.symplectic_at_zero_input
    }
    fn inverse_step(
        &self,
        sys: &dyn ImplicitPhSystem,
        x: &State,
        u: &Vector,
        h: f64,
    ) -> Option<Result<State>> {
        let mut state = x.clone();
        for stage in self.stages.iter().rev() {
            state = match stage.inverse_step(sys, &state, u, h)? {
                Ok(s) => s,
                Err(e) => return Some(Err(e)),
            };
        }
        Some(Ok(state))
    }
    fn name(&self) -> String {
        self.name.clone().unwrap_or_else(|| {
            let parts: Vec<String> = self.stages.iter().map(|s| s.name()).collect();
            format!("[{}]", parts.join(" > "))
        })
    }
}

/// First-order composition: drift then kick.
pub fn kick_drift_euler() -> MethodRef {
    Composition::new(
        vec![Arc::new(DriftFlow), Arc::new(KickFlow)],
        MethodTraits {
            order: 1,
            symmetric: false,
            symplectic_at_zero_input: true,
        },
    )
    .named("symplectic-euler")
    .into_ref()
}

/// Störmer–Verlet: half kick, full drift, half kick.
pub fn stormer_verlet(sys: &dyn ImplicitPhSystem) -> Result<MethodRef> {
    require_separable(sys, "Störmer–Verlet")?;
    Ok(stormer_verlet_method())
}

pub(crate) fn stormer_verlet_method() -> MethodRef {
    Composition::new(
        vec![
            scaled(Arc::new(KickFlow), 0.5),
            Arc::new(DriftFlow),
            scaled(Arc::new(KickFlow), 0.5),
        ],
        MethodTraits {
            order: 2,
            symmetric: true,
            symplectic_at_zero_input: true,
        },
    )
    .named("stormer-verlet")
    .into_ref()
}

/// Settings for the fallback inverse solve of [`adjoint`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InverseSolveConfig {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for InverseSolveConfig {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 100,
        }
    }
}

/// Solve `method.step(y, u, h) = target` for `y` by damped fixed-point
/// iteration, starting from `guess`.
pub fn invert_step(
    method: &dyn UnconstrainedMethod,
    sys: &dyn ImplicitPhSystem,
    target: &State,
    u: &Vector,
    h: f64,
    guess: State,
    cfg: InverseSolveConfig,
) -> Result<State> {
    let target_v = target.to_vector();
    let scale = 1.0 + inf_norm(&target_v);
    let residual_of = |y: &Vector| -> Result<Vector> {
        Ok(method.step(sys, &State::from_vector(y), u, h)?.to_vector() - &target_v)
    };

    let mut y = guess.to_vector();
    let mut res = residual_of(&y)?;
    let mut norm = inf_norm(&res);
    let mut damping = 1.0;
    for _ in 0..cfg.max_iter {
        if norm <= cfg.tol * scale {
            return Ok(State::from_vector(&y));
        }
        let trial = &y - &res * damping;
        let trial_res = residual_of(&trial)?;
        let trial_norm = inf_norm(&trial_res);
        if trial_norm.is_finite() && trial_norm < norm {
            y = trial;
            res = trial_res;
            norm = trial_norm;
            damping = (damping * 2.0).min(1.0);
        } else {
            damping *= 0.5;
            if damping < 1e-8 {
                break;
            }
        }
    }
    if norm <= cfg.tol * scale {
        return Ok(State::from_vector(&y));
    }
    Err(Error::NoConvergence {
        what: "adjoint inverse solve",
        iterations: cfg.max_iter,
        residual: norm,
    })
}

/// The adjoint `ψ*_h = (ψ_{-h})⁻¹`.
#[derive(Clone)]
pub struct Adjoint {
    inner: MethodRef,
    solve: InverseSolveConfig,
}

impl UnconstrainedMethod for Adjoint {
    fn step(&self, sys: &dyn ImplicitPhSystem, x: &State, u: &Vector, h: f64) -> Result<State> {
        if let Some(closed) = self.inner.inverse_step(sys, x, u, -h) {
            return closed;
        }
        let guess = self.inner.step(sys, x, u, h)?;
        invert_step(self.inner.as_ref(), sys, x, u, -h, guess, self.solve)
    }
    fn declared_order(&self) -> u32 {
        self.inner.declared_order()
    }
    fn is_symmetric(&self) -> bool {
        self.inner.is_symmetric()
    }
    fn symplectic_at_zero_input(&self) -> bool {
        self.inner.symplectic_at_zero_input()
    }
    fn inverse_step(
        &self,
        sys: &dyn ImplicitPhSystem,
        x: &State,
        u: &Vector,
        h: f64,
    ) -> Option<Result<State>> {
        // (ψ*_h)⁻¹ = ψ_{-h}
        Some(self.inner.step(sys, x, u, -h))
    }
    fn name(&self) -> String {
        format!("adjoint({})", self.inner.name())
    }
}

pub fn adjoint(method: MethodRef) -> MethodRef {
    adjoint_with(method, InverseSolveConfig::default())
}

pub fn adjoint_with(method: MethodRef, solve: InverseSolveConfig) -> MethodRef {
    Arc::new(Adjoint {
        inner: method,
        solve,
    })
}

/// Symmetric composition `Ψ_h = ψ_{h/2} ∘ ψ*_{h/2}` (adjoint applied first).
pub fn symmetrize(method: MethodRef) -> MethodRef {
    let order = method.declared_order();
    let order = (order + order % 2).max(2);
    let symplectic = method.symplectic_at_zero_input();
    let name = format!("symmetrized({})", method.name());
    Composition::new(
        vec![scaled(adjoint(method.clone()), 0.5), scaled(method, 0.5)],
        MethodTraits {
            order,
            symmetric: true,
            symplectic_at_zero_input: symplectic,
        },
    )
    .named(name)
    .into_ref()
}
