use crate::linalg::{all_finite, inf_norm, Vector};

/// Phase point `(r, p)` in the ambient cotangent space.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub r: Vector,
    pub p: Vector,
}

impl State {
    pub fn new(r: Vector, p: Vector) -> Self {
        Self { r, p }
    }

    pub fn from_slices(r: &[f64], p: &[f64]) -> Self {
        Self {
            r: Vector::from_column_slice(r),
            p: Vector::from_column_slice(p),
        }
    }

    pub fn dim(&self) -> usize {
        self.r.len()
    }

    pub fn is_finite(&self) -> bool {
        all_finite(&self.r) && all_finite(&self.p)
    }

    /// Stacked `(r, p)` vector of length 2n.
    pub fn to_vector(&self) -> Vector {
        let n = self.r.len();
        let mut v = Vector::zeros(2 * n);
        v.rows_mut(0, n).copy_from(&self.r);
        v.rows_mut(n, n).copy_from(&self.p);
        v
    }

    pub fn from_vector(v: &Vector) -> Self {
        let n = v.len() / 2;
        Self {
            r: v.rows(0, n).into_owned(),
            p: v.rows(n, n).into_owned(),
        }
    }

    /// Max-norm distance in the ambient space.
    pub fn distance(&self, other: &State) -> f64 {
        inf_norm(&(&self.r - &other.r)).max(inf_norm(&(&self.p - &other.p)))
    }
}

/// Constraint-force magnitudes λ of the continuous dynamics.
#[derive(Debug, Clone, PartialEq)]
pub struct Multipliers {
    pub lambda: Vector,
}

/// Power-conjugated port pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PortSignals {
    pub u: Vector,
    pub y: Vector,
}

/// Constraint residuals `‖g‖∞` and `‖f‖∞` of a state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residuals {
    pub g: f64,
    pub f: f64,
}

impl Residuals {
    pub fn within(&self, tol_g: f64, tol_f: f64) -> bool {
        self.g <= tol_g && self.f <= tol_f
    }

    pub fn max(&self) -> f64 {
        self.g.max(self.f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stacking_roundtrip() {
        let x = State::from_slices(&[1.0, 2.0], &[3.0, 4.0]);
        assert_eq!(x.to_vector().as_slice(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(State::from_vector(&x.to_vector()), x);
    }

    #[test]
    fn finiteness() {
        assert!(State::from_slices(&[0.0], &[1.0]).is_finite());
        assert!(!State::from_slices(&[f64::NAN], &[1.0]).is_finite());
    }
}
