use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{shape_err, Error, Result};

/// Whether a step climbs or descends the objective whose gradient is supplied.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Ascent,
    Descent,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Ascent => 1.0,
            Direction::Descent => -1.0,
        }
    }
}

/// RMSprop: `m ← ρ m + (1 − ρ) g²`, `θ ← θ + direction · α · g / sqrt(m + ε)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RmsProp {
    pub learning_rate: f64,
    pub smoothing: f64,
    pub epsilon: f64,
    pub steps: u64,
    mean_square: Vec<Array2<f64>>,
}

impl RmsProp {
    pub const DEFAULT_SMOOTHING: f64 = 0.99;
    pub const DEFAULT_EPSILON: f64 = 1e-8;

    pub fn new(learning_rate: f64) -> Self {
        Self::with_constants(learning_rate, Self::DEFAULT_SMOOTHING, Self::DEFAULT_EPSILON)
    }

    pub fn with_constants(learning_rate: f64, smoothing: f64, epsilon: f64) -> Self {
        Self { learning_rate, smoothing, epsilon, steps: 0, mean_square: Vec::new() }
    }

    pub fn mean_square(&self) -> &[Array2<f64>] {
        &self.mean_square
    }

    /// Applies one step to `params` using their attached gradients.
    pub fn step(&mut self, params: &mut [&mut Tensor], direction: Direction) -> Result<()> {
        let grads = params
            .iter()
            .map(|p| p.grad().cloned().ok_or_else(|| Error::Usage("parameter has no gradient".into())))
            .collect::<Result<Vec<_>>>()?;
        self.step_with(params, &grads, direction)
    }

    /// Applies one step with explicitly supplied gradients.
    pub fn step_with(&mut self, params: &mut [&mut Tensor], grads: &[Array2<f64>], direction: Direction) -> Result<()> {
        if params.len() != grads.len() {
            return Err(shape_err(format!("{} params but {} gradients", params.len(), grads.len())));
        }
        if self.mean_square.is_empty() {
            self.mean_square = params.iter().map(|p| Array2::zeros(p.value().dim())).collect();
        }
        if self.mean_square.len() != params.len() {
            return Err(shape_err("optimizer was initialised for a different parameter set"));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.mean_square) {
            if p.value().dim() != g.dim() || m.dim() != g.dim() {
                return Err(shape_err(format!(
                    "gradient shape {:?} does not match parameter {:?}",
                    g.dim(),
                    p.value().dim()
                )));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("optimizer gradient".into()));
            }
        }
        let (rho, eps) = (self.smoothing, self.epsilon);
        let scale = direction.sign() * self.learning_rate;
        for ((p, g), m) in params.iter_mut().zip(grads).zip(self.mean_square.iter_mut()) {
            Zip::from(p.value_mut()).and(m).and(g).for_each(|theta, m, &g| {
                *m = rho * *m + (1.0 - rho) * g * g;
                *theta += scale * g / (*m + eps).sqrt();
            });
        }
        self.steps += 1;
        Ok(())
    }
}
