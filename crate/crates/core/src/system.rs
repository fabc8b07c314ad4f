//! Implicit port-Hamiltonian systems.
//!
//! A system lives in an ambient phase space `(r, p) ∈ R^n × R^n` and is
//! confined to the level set `g(r) = 0` of `k` holonomic constraints by
//! Lagrange multipliers. Its dynamics are
//!
//! ```text
//!   ṙ = ∇_p H(r, p)
//!   ṗ = -∇_r H(r, p) - G(r)ᵀ λ + U(r) u
//!   y = U(r)ᵀ ∇_p H(r, p)
//!   0 = g(r)
//! ```
//!
//! with `G = ∂g/∂r`. Differentiating `g` along the flow yields the hidden
//! constraint `f(r, p) = G(r) ∇_p H(r, p) = 0`, and differentiating once
//! more fixes `λ` uniquely as long as `G H_pp Gᵀ` is non-singular.

use crate::error::{Error, Result};
use crate::linalg::{inf_norm, is_spd, mat_inf_norm, numerical_rank, solve, Matrix, Vector};
use crate::par;
use crate::state::{Multipliers, Residuals, State};

/// Dimensions of an implicit system.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    /// Ambient configuration dimension.
    pub n: usize,
    /// Number of holonomic constraints.
    pub k: usize,
    /// Number of input/output ports.
    pub m: usize,
}

/// Callbacks defining an implicit port-Hamiltonian system.
///
/// Implementations must be pure; systems are shared read-only between
/// threads by the parallel studies.
pub trait ImplicitPhSystem: Send + Sync {
    fn dims(&self) -> Dims;

    fn hamiltonian(&self, r: &Vector, p: &Vector) -> f64;

    fn grad_r(&self, r: &Vector, p: &Vector) -> Vector;

    fn grad_p(&self, r: &Vector, p: &Vector) -> Vector;

    /// Constant inverse mass matrix of a separable Hamiltonian
    /// `H = ½ pᵀ M⁻¹ p + V(r)`. Declaring it asserts separability: the
    /// split flows and the linear momentum solve rely on it.
    fn mass_inverse(&self) -> Option<&Matrix> {
        None
    }

    fn potential(&self, _r: &Vector) -> Option<f64> {
        None
    }

    /// The constraint map `g`.
    fn constraint(&self, r: &Vector) -> Vector;

    /// True Jacobian `∂g/∂r`, k×n.
    fn constraint_jacobian(&self, r: &Vector) -> Matrix;

    /// Input map `U(r)`, n×m.
    fn input_map(&self, r: &Vector) -> Matrix;

    fn is_separable(&self) -> bool {
        self.mass_inverse().is_some()
    }
}

pub fn energy(sys: &dyn ImplicitPhSystem, x: &State) -> Result<f64> {
    let h = sys.hamiltonian(&x.r, &x.p);
    if h.is_finite() {
        Ok(h)
    } else {
        Err(Error::NonFinite {
            quantity: "energy",
            r: x.r.iter().copied().collect(),
            p: x.p.iter().copied().collect(),
        })
    }
}

/// `f(r, p) = G(r) ∇_p H(r, p)`.
pub fn hidden_constraint(sys: &dyn ImplicitPhSystem, x: &State) -> Vector {
    sys.constraint_jacobian(&x.r) * sys.grad_p(&x.r, &x.p)
}

/// `y = U(r)ᵀ ∇_p H(r, p)`.
pub fn output(sys: &dyn ImplicitPhSystem, x: &State) -> Vector {
    sys.input_map(&x.r).transpose() * sys.grad_p(&x.r, &x.p)
}

pub fn residuals(sys: &dyn ImplicitPhSystem, x: &State) -> Residuals {
    Residuals {
        g: inf_norm(&sys.constraint(&x.r)),
        f: inf_norm(&hidden_constraint(sys, x)),
    }
}

pub fn is_on_manifold(sys: &dyn ImplicitPhSystem, x: &State, tol_g: f64, tol_f: f64) -> bool {
    residuals(sys, x).within(tol_g, tol_f)
}

fn hessian_step(p: &Vector) -> f64 {
    1e-5 * (1.0 + inf_norm(p))
}

/// `H_pp(r, p)`: exact `M⁻¹` for separable systems, otherwise a
/// symmetrized central difference of `∇_p H`.
pub fn momentum_hessian(sys: &dyn ImplicitPhSystem, x: &State) -> Matrix {
    if let Some(minv) = sys.mass_inverse() {
        return minv.clone();
    }
    let n = x.p.len();
    let eps = hessian_step(&x.p);
    let mut hess = Matrix::zeros(n, n);
    for j in 0..n {
        let mut plus = x.p.clone();
        let mut minus = x.p.clone();
        plus[j] += eps;
        minus[j] -= eps;
        let col = (sys.grad_p(&x.r, &plus) - sys.grad_p(&x.r, &minus)) / (2.0 * eps);
        hess.set_column(j, &col);
    }
    (&hess + hess.transpose()) * 0.5
}

/// `A(r, p) = G H_pp Gᵀ`, the matrix that determines the multipliers.
pub fn multiplier_matrix(sys: &dyn ImplicitPhSystem, x: &State) -> Result<Matrix> {
    let g = sys.constraint_jacobian(&x.r);
    let a = &g * momentum_hessian(sys, x) * g.transpose();
    let cond = crate::linalg::condition_number(&a);
    if a.nrows() > 0 && !(cond <= crate::linalg::MAX_CONDITION) {
        return Err(Error::Assumption(format!(
            "multiplier matrix G H_pp Gᵀ is singular (condition {cond:.3e})"
        )));
    }
    Ok(a)
}

/// Central difference of the constraint Jacobian along `dir`.
fn jacobian_directional(sys: &dyn ImplicitPhSystem, r: &Vector, dir: &Vector) -> Matrix {
    let (k, n) = (sys.dims().k, r.len());
    let scale = inf_norm(dir);
    if scale == 0.0 {
        return Matrix::zeros(k, n);
    }
    let eps = 1e-5 * (1.0 + inf_norm(r)) / scale;
    (sys.constraint_jacobian(&(r + dir * eps)) - sys.constraint_jacobian(&(r - dir * eps)))
        / (2.0 * eps)
}

/// Unconstrained vector field `X_{H,u}` at `x`: `(∇_p H, -∇_r H + U u)`.
pub fn unconstrained_field(sys: &dyn ImplicitPhSystem, x: &State, u: &Vector) -> (Vector, Vector) {
    let rdot = sys.grad_p(&x.r, &x.p);
    let pdot = -sys.grad_r(&x.r, &x.p) + sys.input_map(&x.r) * u;
    (rdot, pdot)
}

/// Multipliers `λ` of the continuous dynamics with input `u`: the unique
/// values for which the time derivative of the hidden constraint vanishes.
pub fn continuous_multipliers(
    sys: &dyn ImplicitPhSystem,
    x: &State,
    u: &Vector,
) -> Result<Multipliers> {
    let k = sys.dims().k;
    if k == 0 {
        return Ok(Multipliers {
            lambda: Vector::zeros(0),
        });
    }
    let a = multiplier_matrix(sys, x)?;
    let (rdot, pdot) = unconstrained_field(sys, x, u);
    let g = sys.constraint_jacobian(&x.r);

    // d/dt ∇_p H along the unconstrained field.
    let dgrad_p = match sys.mass_inverse() {
        Some(minv) => minv * &pdot,
        None => {
            let scale = inf_norm(&rdot).max(inf_norm(&pdot));
            if scale == 0.0 {
                Vector::zeros(x.p.len())
            } else {
                let eps = 1e-5 * (1.0 + inf_norm(&x.r).max(inf_norm(&x.p))) / scale;
                let plus = sys.grad_p(&(&x.r + &rdot * eps), &(&x.p + &pdot * eps));
                let minus = sys.grad_p(&(&x.r - &rdot * eps), &(&x.p - &pdot * eps));
                (plus - minus) / (2.0 * eps)
            }
        }
    };
    let rhs = jacobian_directional(sys, &x.r, &rdot) * &rdot + &g * dgrad_p;
    let lambda = solve(&a, &rhs, "multiplier matrix")?;
    if !crate::linalg::all_finite(&lambda) {
        return Err(Error::NonFinite {
            quantity: "multipliers",
            r: x.r.iter().copied().collect(),
            p: x.p.iter().copied().collect(),
        });
    }
    Ok(Multipliers { lambda })
}

/// `|dH/dt - u·y|` along the constrained field, with `λ` from
/// [`continuous_multipliers`]. Vanishes on the constraint manifold.
pub fn power_balance_residual(sys: &dyn ImplicitPhSystem, x: &State, u: &Vector) -> Result<f64> {
    let lambda = continuous_multipliers(sys, x, u)?.lambda;
    let (rdot, free_pdot) = unconstrained_field(sys, x, u);
    let pdot = free_pdot - sys.constraint_jacobian(&x.r).transpose() * lambda;
    let dh = sys.grad_r(&x.r, &x.p).dot(&rdot) + sys.grad_p(&x.r, &x.p).dot(&pdot);
    Ok((dh - u.dot(&output(sys, x))).abs())
}

/// One failed check from [`check_assumptions`].
#[derive(Debug, Clone, PartialEq)]
pub enum AssumptionFailure {
    /// A callback returned an object of the wrong shape.
    Dimension {
        what: &'static str,
        expected: String,
        got: String,
    },
    /// `G(r)` has numerical rank below `k`.
    RankDeficient { rank: usize, required: usize },
    /// `H_pp` failed the positive-definiteness test.
    NotPositiveDefinite,
    /// The declared `M⁻¹` is not symmetric or disagrees with `∇_p H`.
    MassInverseMismatch { error: f64 },
    /// `constraint_jacobian` disagrees with a central difference of `constraint`.
    JacobianMismatch { relative_error: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleFailure {
    pub sample: usize,
    pub failure: AssumptionFailure,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AssumptionReport {
    pub samples_checked: usize,
    pub failures: Vec<SampleFailure>,
}

impl AssumptionReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

pub const JACOBIAN_REL_TOL: f64 = 1e-6;

/// Max relative error between `constraint_jacobian` and a central
/// difference of `constraint` at `r`.
pub fn jacobian_fd_error(sys: &dyn ImplicitPhSystem, r: &Vector) -> f64 {
    let analytic = sys.constraint_jacobian(r);
    let n = r.len();
    let mut fd = Matrix::zeros(analytic.nrows(), n);
    for j in 0..n {
        let eps = 1e-6 * (1.0 + r[j].abs());
        let mut plus = r.clone();
        let mut minus = r.clone();
        plus[j] += eps;
        minus[j] -= eps;
        let col = (sys.constraint(&plus) - sys.constraint(&minus)) / (2.0 * eps);
        fd.set_column(j, &col);
    }
    mat_inf_norm(&(&fd - &analytic)) / mat_inf_norm(&analytic).max(1.0)
}

fn check_sample(sys: &dyn ImplicitPhSystem, x: &State) -> Vec<AssumptionFailure> {
    let Dims { n, k, m } = sys.dims();
    let mut out = Vec::new();
    let mut shape = |what: &'static str, expected: (usize, usize), got: (usize, usize)| {
        if expected != got {
            out.push(AssumptionFailure::Dimension {
                what,
                expected: format!("{}x{}", expected.0, expected.1),
                got: format!("{}x{}", got.0, got.1),
            });
        }
    };
    shape("state r", (n, 1), (x.r.len(), 1));
    shape("state p", (n, 1), (x.p.len(), 1));
    if x.r.len() != n || x.p.len() != n {
        return out;
    }
    let gjac = sys.constraint_jacobian(&x.r);
    shape("grad_r", (n, 1), (sys.grad_r(&x.r, &x.p).len(), 1));
    shape("grad_p", (n, 1), (sys.grad_p(&x.r, &x.p).len(), 1));
    shape("constraint", (k, 1), (sys.constraint(&x.r).len(), 1));
    shape("constraint_jacobian", (k, n), gjac.shape());
    shape("input_map", (n, m), sys.input_map(&x.r).shape());
    if let Some(minv) = sys.mass_inverse() {
        shape("mass_inverse", (n, n), minv.shape());
    }
    if !out.is_empty() {
        return out;
    }

    let rank = numerical_rank(&gjac);
    if rank < k {
        out.push(AssumptionFailure::RankDeficient { rank, required: k });
    }
    if !is_spd(&momentum_hessian(sys, x)) {
        out.push(AssumptionFailure::NotPositiveDefinite);
    }
    if let Some(minv) = sys.mass_inverse() {
        let asym = mat_inf_norm(&(minv - minv.transpose()));
        let grad_err =
            inf_norm(&(sys.grad_p(&x.r, &x.p) - minv * &x.p)) / (1.0 + inf_norm(&(minv * &x.p)));
        let error = asym.max(grad_err);
        if error > 1e-12 {
            out.push(AssumptionFailure::MassInverseMismatch { error });
        }
    }
    let relative_error = jacobian_fd_error(sys, &x.r);
    if !(relative_error <= JACOBIAN_REL_TOL) {
        out.push(AssumptionFailure::JacobianMismatch { relative_error });
    }
    out
}

/// Check the standing assumptions (full-rank `G`, positive-definite
/// `H_pp`) and callback consistency at each sample. Failures are
/// collected, never raised.
pub fn check_assumptions(sys: &dyn ImplicitPhSystem, samples: &[State]) -> AssumptionReport {
    let per_sample = par::map(samples, |x| check_sample(sys, x));
    let failures = per_sample
        .into_iter()
        .enumerate()
        .flat_map(|(sample, fs)| {
            fs.into_iter()
                .map(move |failure| SampleFailure { sample, failure })
        })
        .collect();
    AssumptionReport {
        samples_checked: samples.len(),
        failures,
    }
}
