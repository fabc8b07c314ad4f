//! Command sources for the sample-and-hold loop.

use crate::error::{Error, Result};
use crate::linalg::{mat_inf_norm, Matrix, Vector};

/// Produces the command `u_α` held over `[αh, (α+1)h)` from the step
/// index and the output sampled at `αh`. Must be deterministic.
pub trait ControlSource: Send + Sync {
    fn next(&self, step: usize, y: &Vector) -> Vector;
}

impl<F> ControlSource for F
where
    F: Fn(usize, &Vector) -> Vector + Send + Sync,
{
    fn next(&self, step: usize, y: &Vector) -> Vector {
        self(step, y)
    }
}

/// Zero command of dimension `m`.
#[derive(Debug, Clone, Copy)]
pub struct ZeroControl {
    pub m: usize,
}

impl ControlSource for ZeroControl {
    fn next(&self, _step: usize, _y: &Vector) -> Vector {
        Vector::zeros(self.m)
    }
}

/// Symmetric positive semi-definite damping gain.
#[derive(Debug, Clone, PartialEq)]
pub struct DampingGain(Matrix);

impl DampingGain {
    pub fn new(k: Matrix) -> Result<Self> {
        if k.nrows() != k.ncols() {
            return Err(Error::InvalidInput(format!(
                "damping gain must be square, got {}x{}",
                k.nrows(),
                k.ncols()
            )));
        }
        if k.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "damping gain has non-finite entries".into(),
            ));
        }
        let asym = mat_inf_norm(&(&k - k.transpose()));
        if asym > 1e-12 {
            return Err(Error::InvalidInput(format!(
                "damping gain is not symmetric (asymmetry {asym:.3e})"
            )));
        }
        if k.nrows() > 0 {
            let min_eig = k.clone().symmetric_eigenvalues().min();
            if min_eig < -1e-12 {
                return Err(Error::InvalidInput(format!(
                    "damping gain is indefinite (eigenvalue {min_eig:.3e})"
                )));
            }
        }
        Ok(Self(k))
    }

    /// `gain · I_m`.
    pub fn scalar(gain: f64, m: usize) -> Result<Self> {
        Self::new(Matrix::identity(m, m) * gain)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }
}

/// Output feedback `u_α = -K y_α`.
#[derive(Debug, Clone)]
pub struct DampingSource {
    gain: DampingGain,
}

impl ControlSource for DampingSource {
    fn next(&self, _step: usize, y: &Vector) -> Vector {
        -(self.gain.matrix() * y)
    }
}

pub fn damping_source(gain: DampingGain) -> DampingSource {
    DampingSource { gain }
}

/// Open-loop replay of recorded commands; the last row is held once the
/// sequence runs out.
#[derive(Debug, Clone)]
pub struct SequenceSource {
    rows: Vec<Vector>,
}

impl SequenceSource {
    pub fn rows(&self) -> &[Vector] {
        &self.rows
    }

    /// The same commands in reverse order.
    pub fn reversed(&self) -> Self {
        Self {
            rows: self.rows.iter().rev().cloned().collect(),
        }
    }
}

impl ControlSource for SequenceSource {
    fn next(&self, step: usize, _y: &Vector) -> Vector {
        self.rows[step.min(self.rows.len() - 1)].clone()
    }
}

pub fn sequence_source(rows: Vec<Vector>) -> Result<SequenceSource> {
    let Some(first) = rows.first() else {
        return Err(Error::InvalidInput("command sequence is empty".into()));
    };
    let m = first.len();
    if let Some((i, bad)) = rows.iter().enumerate().find(|(_, r)| r.len() != m) {
        return Err(Error::InvalidInput(format!(
            "command row {i} has {} entries, expected {m}",
            bad.len()
        )));
    }
    Ok(SequenceSource { rows })
}
