//! Double planar pendulum in two representations.
//!
//! The implicit model uses the Cartesian positions of the two point
//! masses, `r = (r_a, r_b) ∈ R⁴`, with bar-length constraints
//!
//! ```text
//!   g¹(r) = ‖r_a‖² - l_a²,   g²(r) = ‖r_b - r_a‖² - l_b²
//! ```
//!
//! Its Hamiltonian is separable with constant mass matrix and linear
//! potential, so the kinetic and gravity-plus-input flows are both exact.
//! The explicit model uses the joint angles `q = (q¹, q²)` (absolute angle
//! of the first bar, relative angle of the second) and serves as the
//! reference oracle.

use std::sync::Arc;

use nalgebra::{Matrix2, Vector2};

use crate::control::ControlSource;
use crate::error::{Error, Result};
use crate::flows::{MethodRef, UnconstrainedMethod};
use crate::linalg::{inf_norm, Matrix, Vector};
use crate::state::State;
use crate::system::{Dims, ImplicitPhSystem};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendulumParams {
    /// Length of the first bar [m].
    pub l_a: f64,
    /// Length of the second bar [m].
    pub l_b: f64,
    /// First mass [kg].
    pub m_a: f64,
    /// Second mass [kg].
    pub m_b: f64,
    /// Gravitational acceleration [m/s²].
    pub g_bar: f64,
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self {
            l_a: 0.6,
            l_b: 0.3,
            m_a: 0.2,
            m_b: 0.6,
            g_bar: 9.81,
        }
    }
}

impl PendulumParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("l_a", self.l_a),
            ("l_b", self.l_b),
            ("m_a", self.m_a),
            ("m_b", self.m_b),
            ("g_bar", self.g_bar),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "pendulum parameter {name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn total_mass(&self) -> f64 {
        self.m_a + self.m_b
    }
}

/// Hanging equilibrium angles.
pub const HANGING: [f64; 2] = [-std::f64::consts::FRAC_PI_2, 0.0];

/// Implicit Cartesian model.
#[derive(Debug, Clone)]
pub struct DoublePendulum {
    params: PendulumParams,
    minv: Matrix,
}

impl DoublePendulum {
    pub fn new(params: PendulumParams) -> Result<Self> {
        params.validate()?;
        let minv = Matrix::from_diagonal(&Vector::from_vec(vec![
            1.0 / params.m_a,
            1.0 / params.m_a,
            1.0 / params.m_b,
            1.0 / params.m_b,
        ]));
        Ok(Self { params, minv })
    }

    pub fn params(&self) -> &PendulumParams {
        &self.params
    }

    /// Ambient state from joint angles and generalized momenta.
    pub fn state_from_explicit(&self, x: &ExplicitState) -> Result<State> {
        to_ambient(&self.params, x)
    }
}

/// Same as [`DoublePendulum::new`].
pub fn build_implicit(params: PendulumParams) -> Result<DoublePendulum> {
    DoublePendulum::new(params)
}

impl ImplicitPhSystem for DoublePendulum {
    fn dims(&self) -> Dims {
        Dims { n: 4, k: 2, m: 2 }
    }

    fn hamiltonian(&self, r: &Vector, p: &Vector) -> f64 {
        let kinetic = 0.5 * p.dot(&(&self.minv * p));
        kinetic + self.potential(r).unwrap_or(0.0)
    }

    fn grad_r(&self, _r: &Vector, _p: &Vector) -> Vector {
        let PendulumParams {
            m_a, m_b, g_bar, ..
        } = self.params;
        Vector::from_vec(vec![0.0, g_bar * m_a, 0.0, g_bar * m_b])
    }

    fn grad_p(&self, _r: &Vector, p: &Vector) -> Vector {
        &self.minv * p
    }

    fn mass_inverse(&self) -> Option<&Matrix> {
        Some(&self.minv)
    }

    fn potential(&self, r: &Vector) -> Option<f64> {
        let PendulumParams {
            m_a, m_b, g_bar, ..
        } = self.params;
        Some(g_bar * (m_a * r[1] + m_b * r[3]))
    }

    fn constraint(&self, r: &Vector) -> Vector {
        let (dx, dy) = (r[2] - r[0], r[3] - r[1]);
        Vector::from_vec(vec![
            r[0] * r[0] + r[1] * r[1] - self.params.l_a * self.params.l_a,
            dx * dx + dy * dy - self.params.l_b * self.params.l_b,
        ])
    }

    fn constraint_jacobian(&self, r: &Vector) -> Matrix {
        let (dx, dy) = (r[2] - r[0], r[3] - r[1]);
        Matrix::from_row_slice(
            2,
            4,
            &[
                2.0 * r[0],
                2.0 * r[1],
                0.0,
                0.0,
                -2.0 * dx,
                -2.0 * dy,
                2.0 * dx,
                2.0 * dy,
            ],
        )
    }

    fn input_map(&self, r: &Vector) -> Matrix {
        let la2 = self.params.l_a * self.params.l_a;
        let lb2 = self.params.l_b * self.params.l_b;
        let (dx, dy) = (r[2] - r[0], r[3] - r[1]);
        let u1 = [-r[1] / la2, r[0] / la2, 0.0, 0.0];
        let rel = [dy / lb2, -dx / lb2, -dy / lb2, dx / lb2];
        let mut u = Matrix::zeros(4, 2);
        for i in 0..4 {
            u[(i, 0)] = u1[i];
            u[(i, 1)] = rel[i] - u1[i];
        }
        u
    }
}

/// Exact flow of the unconstrained, unactuated dynamics: free fall.
pub fn exact_drift(params: &PendulumParams, x: &State, h: f64) -> State {
    let PendulumParams {
        m_a, m_b, g_bar, ..
    } = *params;
    let fall = g_bar * h * h / 2.0;
    let r = Vector::from_vec(vec![
        x.r[0] + h / m_a * x.p[0],
        x.r[1] + h / m_a * x.p[1] - fall,
        x.r[2] + h / m_b * x.p[2],
        x.r[3] + h / m_b * x.p[3] - fall,
    ]);
    let p = Vector::from_vec(vec![
        x.p[0],
        x.p[1] - m_a * g_bar * h,
        x.p[2],
        x.p[3] - m_b * g_bar * h,
    ]);
    State::new(r, p)
}

/// Exact flow of the input field `U(r) u ∂/∂p`; positions are frozen.
pub fn exact_kick(params: &PendulumParams, x: &State, u: &Vector, h: f64) -> State {
    let la2 = params.l_a * params.l_a;
    let lb2 = params.l_b * params.l_b;
    let (dx, dy) = (x.r[2] - x.r[0], x.r[3] - x.r[1]);
    let shoulder = h / la2 * (u[0] - u[1]);
    let elbow = h / lb2 * u[1];
    // The elbow torque reacts on the first mass with the opposite force.
    let p = Vector::from_vec(vec![
        x.p[0] - shoulder * x.r[1] + elbow * dy,
        x.p[1] + shoulder * x.r[0] - elbow * dx,
        x.p[2] - elbow * dy,
        x.p[3] + elbow * dx,
    ]);
    State::new(x.r.clone(), p)
}

/// Symmetric second-order method `drift(h/2) ∘ kick(h) ∘ drift(h/2)` built
/// from the two exact flows.
#[derive(Debug, Clone, Copy)]
pub struct PendulumMethod {
    params: PendulumParams,
}

impl PendulumMethod {
    fn params_of(&self, sys: &dyn ImplicitPhSystem) -> Result<()> {
        if sys.dims() != (Dims { n: 4, k: 2, m: 2 }) {
            return Err(Error::Unsupported(
                "the pendulum method only applies to the double pendulum".into(),
            ));
        }
        Ok(())
    }
}

impl UnconstrainedMethod for PendulumMethod {
    fn step(&self, sys: &dyn ImplicitPhSystem, x: &State, u: &Vector, h: f64) -> Result<State> {
        self.params_of(sys)?;
        let half = exact_drift(&self.params, x, h / 2.0);
        let kicked = exact_kick(&self.params, &half, u, h);
        Ok(exact_drift(&self.params, &kicked, h / 2.0))
    }
    fn declared_order(&self) -> u32 {
        2
    }
    fn is_symmetric(&self) -> bool {
        true
    }
    fn symplectic_at_zero_input(&self) -> bool {
        true
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
        "pendulum-strang".to_string()
    }
}

pub fn pendulum_method(params: PendulumParams) -> MethodRef {
    Arc::new(PendulumMethod { params })
}

/// Cartesian positions of the two masses for joint angles `q`.
pub fn embedding(params: &PendulumParams, q: [f64; 2]) -> Vector {
    let qt = q[0] + q[1];
    let (ax, ay) = (params.l_a * q[0].cos(), params.l_a * q[0].sin());
    Vector::from_vec(vec![
        ax,
        ay,
        ax + params.l_b * qt.cos(),
        ay + params.l_b * qt.sin(),
    ])
}

/// Jacobian of [`embedding`], 4×2.
pub fn embedding_jacobian(params: &PendulumParams, q: [f64; 2]) -> Matrix {
    let qt = q[0] + q[1];
    let (s1, c1) = q[0].sin_cos();
    let (st, ct) = qt.sin_cos();
    let (la, lb) = (params.l_a, params.l_b);
    Matrix::from_row_slice(
        4,
        2,
        &[
            -la * s1,
            0.0,
            la * c1,
            0.0,
            -la * s1 - lb * st,
            -lb * st,
            la * c1 + lb * ct,
            lb * ct,
        ],
    )
}

/// Max constraint residual accepted by [`chart`].
pub const CHART_TOL: f64 = 1e-8;

/// Joint angles of an on-manifold configuration, both in `(-π, π]`.
pub fn chart(params: &PendulumParams, r: &Vector) -> Result<[f64; 2]> {
    let sys = DoublePendulum::new(*params)?;
    let res = inf_norm(&sys.constraint(r));
    if !(res <= CHART_TOL) {
        return Err(Error::InvalidInput(format!(
            "configuration is off the constraint manifold (‖g‖∞ = {res:.3e})"
        )));
    }
    let q1 = r[1].atan2(r[0]);
    let qt = (r[3] - r[1]).atan2(r[2] - r[0]);
    let mut q2 = qt - q1;
    if q2 > std::f64::consts::PI {
        q2 -= 2.0 * std::f64::consts::PI;
    } else if q2 <= -std::f64::consts::PI {
        q2 += 2.0 * std::f64::consts::PI;
    }
    Ok([q1, q2])
}

/// Configuration-dependent mass matrix `M̂(q)` of the explicit model.
pub fn mass_matrix_hat(params: &PendulumParams, q: [f64; 2]) -> Matrix2<f64> {
    let PendulumParams { l_a, l_b, m_b, .. } = *params;
    let mt = params.total_mass();
    let c2 = q[1].cos();
    let off = m_b * l_b * l_b + m_b * l_a * l_b * c2;
    Matrix2::new(
        mt * l_a * l_a + m_b * l_b * l_b + 2.0 * m_b * l_a * l_b * c2,
        off,
        off,
        m_b * l_b * l_b,
    )
}

fn inverse_mass_hat(params: &PendulumParams, q: [f64; 2]) -> Result<Matrix2<f64>> {
    mass_matrix_hat(params, q)
        .try_inverse()
        .ok_or_else(|| Error::Assumption(format!("explicit mass matrix singular at q = {q:?}")))
}

/// Momentum lift `p = M Dι(q) M̂(q)⁻¹ p̂`: the ambient momentum of the
/// configuration velocity `Dι q̇`.
pub fn lift_momentum(params: &PendulumParams, q: [f64; 2], p_hat: [f64; 2]) -> Result<Vector> {
    let qdot = inverse_mass_hat(params, q)? * Vector2::new(p_hat[0], p_hat[1]);
    let rdot = embedding_jacobian(params, q) * Vector::from_column_slice(qdot.as_slice());
    let masses = [params.m_a, params.m_a, params.m_b, params.m_b];
    Ok(Vector::from_iterator(
        4,
        rdot.iter().zip(masses).map(|(v, m)| v * m),
    ))
}

/// Pullback `p̂ = Dι(q)ᵀ p`.
pub fn pullback_momentum(params: &PendulumParams, q: [f64; 2], p: &Vector) -> [f64; 2] {
    let v = embedding_jacobian(params, q).transpose() * p;
    [v[0], v[1]]
}

/// Joint angles and generalized momenta.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExplicitState {
    pub q: [f64; 2],
    pub p_hat: [f64; 2],
}

pub fn to_ambient(params: &PendulumParams, x: &ExplicitState) -> Result<State> {
    Ok(State::new(
        embedding(params, x.q),
        lift_momentum(params, x.q, x.p_hat)?,
    ))
}

pub fn from_ambient(params: &PendulumParams, x: &State) -> Result<ExplicitState> {
    let q = chart(params, &x.r)?;
    Ok(ExplicitState {
        q,
        p_hat: pullback_momentum(params, q, &x.p),
    })
}

/// Explicit model in joint coordinates:
/// `q̇ = M̂⁻¹ p̂`, `ṗ̂ = -∇V - ∇_q(½ p̂ᵀ M̂⁻¹ p̂) + u`.
#[derive(Debug, Clone, Copy)]
pub struct ExplicitPendulum {
    pub params: PendulumParams,
}

pub fn build_explicit(params: PendulumParams) -> Result<ExplicitPendulum> {
    params.validate()?;
    Ok(ExplicitPendulum { params })
}

impl ExplicitPendulum {
    pub fn energy(&self, x: &ExplicitState) -> Result<f64> {
        let PendulumParams {
            l_a,
            l_b,
            m_b,
            g_bar,
            ..
        } = self.params;
        let p = Vector2::new(x.p_hat[0], x.p_hat[1]);
        let kinetic = 0.5 * p.dot(&(inverse_mass_hat(&self.params, x.q)? * p));
        let qt = x.q[0] + x.q[1];
        Ok(
            kinetic
                + g_bar * (self.params.total_mass() * l_a * x.q[0].sin() + m_b * l_b * qt.sin()),
        )
    }

    /// Joint rates `q̇`; these are also the port outputs.
    pub fn velocity(&self, x: &ExplicitState) -> Result<[f64; 2]> {
        let v = inverse_mass_hat(&self.params, x.q)? * Vector2::new(x.p_hat[0], x.p_hat[1]);
        Ok([v[0], v[1]])
    }

    pub fn rhs(&self, x: &ExplicitState, u: [f64; 2]) -> Result<ExplicitState> {
        let PendulumParams {
            l_a,
            l_b,
            m_b,
            g_bar,
            ..
        } = self.params;
        let qdot = self.velocity(x)?;
        let c1 = x.q[0].cos();
        let ct = (x.q[0] + x.q[1]).cos();
        let s2 = x.q[1].sin();
        // -∂/∂q² of the kinetic energy is ½ q̇ᵀ (∂M̂/∂q²) q̇.
        let centrifugal = -m_b * l_a * l_b * s2 * qdot[0] * (qdot[0] + qdot[1]);
        let pdot = [
            -g_bar * (self.params.total_mass() * l_a * c1 + m_b * l_b * ct) + u[0],
            -g_bar * m_b * l_b * ct + centrifugal + u[1],
        ];
        Ok(ExplicitState {
            q: qdot,
            p_hat: pdot,
        })
    }

    pub fn rk4_step(&self, x: &ExplicitState, u: [f64; 2], h: f64) -> Result<ExplicitState> {
        let axpy = |a: &ExplicitState, s: f64, d: &ExplicitState| ExplicitState {
            q: [a.q[0] + s * d.q[0], a.q[1] + s * d.q[1]],
            p_hat: [a.p_hat[0] + s * d.p_hat[0], a.p_hat[1] + s * d.p_hat[1]],
        };
        let k1 = self.rhs(x, u)?;
        let k2 = self.rhs(&axpy(x, h / 2.0, &k1), u)?;
        let k3 = self.rhs(&axpy(x, h / 2.0, &k2), u)?;
        let k4 = self.rhs(&axpy(x, h, &k3), u)?;
        let comb = |i: usize, f: fn(&ExplicitState) -> [f64; 2]| {
            (f(&k1)[i] + 2.0 * f(&k2)[i] + 2.0 * f(&k3)[i] + f(&k4)[i]) * h / 6.0
        };
        let q_of = |s: &ExplicitState| s.q;
        let p_of = |s: &ExplicitState| s.p_hat;
        Ok(ExplicitState {
            q: [x.q[0] + comb(0, q_of), x.q[1] + comb(1, q_of)],
            p_hat: [x.p_hat[0] + comb(0, p_of), x.p_hat[1] + comb(1, p_of)],
        })
    }
}

/// Fixed-step RK4 on the explicit model with zero input. Returns all
/// `steps + 1` states.
pub fn rk4_reference(
    params: &PendulumParams,
    q0: [f64; 2],
    p_hat0: [f64; 2],
    h_ref: f64,
    steps: usize,
) -> Result<Vec<ExplicitState>> {
    if !(h_ref > 0.0) {
        return Err(Error::InvalidInput(format!(
            "reference step must be positive, got {h_ref}"
        )));
    }
    let model = build_explicit(*params)?;
    let mut x = ExplicitState {
        q: q0,
        p_hat: p_hat0,
    };
    let mut out = Vec::with_capacity(steps + 1);
    out.push(x);
    for _ in 0..steps {
        x = model.rk4_step(&x, [0.0, 0.0], h_ref)?;
        out.push(x);
    }
    Ok(out)
}

/// RK4 reference under sample-and-hold: at each of `samples` instants the
/// output `q̇` is sampled, the source is queried, and the command is held
/// for `substeps` RK4 steps of size `h_ref`. Returns the state at every
/// sampling instant.
pub fn rk4_reference_sampled(
    params: &PendulumParams,
    x0: ExplicitState,
    h_ref: f64,
    substeps: usize,
    samples: usize,
    source: &dyn ControlSource,
) -> Result<Vec<ExplicitState>> {
    if !(h_ref > 0.0) || substeps == 0 {
        return Err(Error::InvalidInput(
            "reference needs a positive step and at least one substep per sample".into(),
        ));
    }
    let model = build_explicit(*params)?;
    let mut x = x0;
    let mut out = Vec::with_capacity(samples + 1);
    out.push(x);
    for alpha in 0..samples {
        let y = model.velocity(&x)?;
        let u = source.next(alpha, &Vector::from_column_slice(&y));
        if u.len() != 2 {
            return Err(Error::Dimension {
                what: "control output",
                expected: "2".into(),
                got: u.len().to_string(),
            });
        }
        for _ in 0..substeps {
            x = model.rk4_step(&x, [u[0], u[1]], h_ref)?;
        }
        out.push(x);
    }
    Ok(out)
}
