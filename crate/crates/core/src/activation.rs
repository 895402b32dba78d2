//! Smooth hidden-layer activations with first and second derivatives.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Softplus,
    Sigmoid,
    Elu,
    Swish,
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Softplus => "softplus",
            Activation::Sigmoid => "sigmoid",
            Activation::Elu => "elu",
            Activation::Swish => "swish",
        }
    }

    pub fn from_name(s: &str) -> Option<Activation> {
        match s {
            "softplus" => Some(Activation::Softplus),
            "sigmoid" => Some(Activation::Sigmoid),
            "elu" => Some(Activation::Elu),
            "swish" => Some(Activation::Swish),
            _ => None,
        }
    }

    #[inline]
    pub fn value(self, x: f64) -> f64 {
        match self {
            Activation::Softplus => x.max(0.0) + (-x.abs()).exp().ln_1p(),
            Activation::Sigmoid => sigmoid(x),
            Activation::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
            Activation::Swish => x * sigmoid(x),
        }
    }

    #[inline]
    pub fn d1(self, x: f64) -> f64 {
        match self {
            Activation::Softplus => sigmoid(x),
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            Activation::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    x.exp()
                }
            }
            Activation::Swish => {
                let s = sigmoid(x);
                s + x * s * (1.0 - s)
            }
        }
    }

    #[inline]
    pub fn d2(self, x: f64) -> f64 {
        match self {
            Activation::Softplus => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s) * (1.0 - 2.0 * s)
            }
            Activation::Elu => {
                if x > 0.0 {
                    0.0
                } else {
                    x.exp()
                }
            }
            Activation::Swish => {
                let s = sigmoid(x);
                s * (1.0 - s) * (2.0 + x * (1.0 - 2.0 * s))
            }
        }
    }
}
