//! Activations and their derivatives.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_SMOOTHING: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    Relu,
    /// `tau * softplus(z / tau)`; converges to ReLU as `tau -> 0`.
    SmoothedRelu { tau: f64 },
}

impl Default for Activation {
    fn default() -> Self {
        Activation::Relu
    }
}

#[inline]
fn softplus(u: f64) -> f64 {
    u.max(0.0) + (-u.abs()).exp().ln_1p()
}

#[inline]
fn logistic(u: f64) -> f64 {
    let e = (-u.abs()).exp();
    if u >= 0.0 {
        1.0 / (1.0 + e)
    } else {
        e / (1.0 + e)
    }
}

impl Activation {
    pub fn smoothed(tau: f64) -> Self {
        Activation::SmoothedRelu { tau }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::SmoothedRelu { .. } => "smoothed_relu",
        }
    }

    pub fn has_second_derivative(&self) -> bool {
        matches!(self, Activation::SmoothedRelu { .. })
    }

    #[inline]
    pub fn value(&self, z: f64) -> f64 {
        match *self {
            Activation::Relu => z.max(0.0),
            Activation::SmoothedRelu { tau } => tau * softplus(z / tau),
        }
    }

    /// First derivative; ReLU uses `σ'(0) = 0`.
    #[inline]
    pub fn deriv(&self, z: f64) -> f64 {
        match *self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::SmoothedRelu { tau } => logistic(z / tau),
        }
    }

    #[inline]
    pub fn second_deriv(&self, z: f64) -> Result<f64> {
        match *self {
            Activation::Relu => Err(Error::UnsupportedDerivative { activation: "relu", order: 2 }),
            Activation::SmoothedRelu { tau } => {
                let s = logistic(z / tau);
                Ok(s * (1.0 - s) / tau)
            }
        }
    }

    /// `σ(z)` and `σ'(z)` sharing one exponential.
    #[inline]
    pub fn value_and_deriv(&self, z: f64) -> (f64, f64) {
        match *self {
            Activation::Relu => {
                if z > 0.0 {
                    (z, 1.0)
                } else {
                    (0.0, 0.0)
                }
            }
            Activation::SmoothedRelu { tau } => {
                let u = z / tau;
                let e = (-u.abs()).exp();
                let d = if u >= 0.0 { 1.0 / (1.0 + e) } else { e / (1.0 + e) };
                (tau * (u.max(0.0) + e.ln_1p()), d)
            }
        }
    }

    pub fn eval(&self, order: u8, z: f64) -> Result<f64> {
        match order {
            0 => Ok(self.value(z)),
            1 => Ok(self.deriv(z)),
            2 => self.second_deriv(z),
            _ => Err(Error::UnsupportedDerivative { activation: self.name(), order }),
        }
    }
}
