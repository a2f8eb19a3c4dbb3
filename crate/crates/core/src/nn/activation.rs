use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::tensor::Tensor;

const LEAKY_SLOPE: f64 = 0.01;
const ELU_ALPHA: f64 = 1.0;
const CELU_ALPHA: f64 = 1.0;
const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;
const SELU_ALPHA: f64 = 1.673_263_242_354_377_3;

/// The eleven activation functions of the activation design space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ActKind {
    ReLU,
    GELU,
    SiLU,
    LeakyReLU,
    ReLU6,
    Mish,
    Hardswish,
    CELU,
    ELU,
    Hardtanh,
    SELU,
}

impl ActKind {
    pub const ALL: [ActKind; 11] = [
        ActKind::ReLU,
        ActKind::GELU,
        ActKind::SiLU,
        ActKind::LeakyReLU,
        ActKind::ReLU6,
        ActKind::Mish,
        ActKind::Hardswish,
        ActKind::CELU,
        ActKind::ELU,
        ActKind::Hardtanh,
        ActKind::SELU,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ActKind::ReLU => "ReLU",
            ActKind::GELU => "GELU",
            ActKind::SiLU => "SiLU",
            ActKind::LeakyReLU => "LeakyReLU",
            ActKind::ReLU6 => "ReLU6",
            ActKind::Mish => "Mish",
            ActKind::Hardswish => "Hardswish",
            ActKind::CELU => "CELU",
            ActKind::ELU => "ELU",
            ActKind::Hardtanh => "Hardtanh",
            ActKind::SELU => "SELU",
        }
    }

    /// Scalar evaluation.
    pub fn eval(self, x: f64) -> f64 {
        match self {
            ActKind::ReLU => x.max(0.0),
            ActKind::GELU => 0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2)),
            ActKind::SiLU => x * sigmoid(x),
            ActKind::LeakyReLU => {
                if x >= 0.0 {
                    x
                } else {
                    LEAKY_SLOPE * x
                }
            }
            ActKind::ReLU6 => x.clamp(0.0, 6.0),
            ActKind::Mish => x * softplus(x).tanh(),
            ActKind::Hardswish => x * (x + 3.0).clamp(0.0, 6.0) / 6.0,
            ActKind::CELU => x.max(0.0) + (CELU_ALPHA * (x / CELU_ALPHA).exp_m1()).min(0.0),
            ActKind::ELU => {
                if x > 0.0 {
                    x
                } else {
                    ELU_ALPHA * x.exp_m1()
                }
            }
            ActKind::Hardtanh => x.clamp(-1.0, 1.0),
            ActKind::SELU => {
                if x > 0.0 {
                    SELU_LAMBDA * x
                } else {
                    SELU_LAMBDA * SELU_ALPHA * x.exp_m1()
                }
            }
        }
    }

    pub fn apply(self, x: &Tensor) -> Tensor {
        x.map(|v| self.eval(v))
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

// ln(1 + e^x) without overflow for large x.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl fmt::Display for ActKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ActKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ActKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidSpec(format!("unknown activation {s:?}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_points() {
        assert_eq!(ActKind::GELU.eval(0.0), 0.0);
        assert_eq!(ActKind::SELU.eval(0.0), 0.0);
        assert_eq!(ActKind::Mish.eval(0.0), 0.0);
        assert_eq!(ActKind::Hardtanh.eval(3.0), 1.0);
        assert_eq!(ActKind::Hardtanh.eval(-3.0), -1.0);
        assert_eq!(ActKind::ReLU6.eval(8.0), 6.0);
        assert_eq!(ActKind::Hardswish.eval(-4.0), 0.0);
        assert_eq!(ActKind::Hardswish.eval(4.0), 4.0);
    }

    #[test]
    fn relu_on_small_vector() {
        let x = Tensor::new(vec![1, 2], vec![-1.0, 2.0]).unwrap();
        assert_eq!(ActKind::ReLU.apply(&x).data(), &[0.0, 2.0]);
    }

    #[test]
    fn elu_negative_one() {
        // alpha * (e^-1 - 1)
        let expected = (-1.0f64).exp() - 1.0;
        assert!((ActKind::ELU.eval(-1.0) - expected).abs() < 1e-15);
        assert!((ActKind::ELU.eval(-1.0) - (-0.632_121)).abs() < 1e-6);
    }

    #[test]
    fn known_values() {
        assert!((ActKind::LeakyReLU.eval(-2.0) + 0.02).abs() < 1e-15);
        assert!((ActKind::SiLU.eval(1.0) - 1.0 / (1.0 + (-1.0f64).exp())).abs() < 1e-15);
        // GELU(1) = 0.5 * (1 + erf(1/sqrt 2)) = Phi(1)
        assert!((ActKind::GELU.eval(1.0) - 0.841_344_746_068_542_9).abs() < 1e-12);
        let softplus1 = (1.0 + 1.0f64.exp()).ln();
        assert!((ActKind::Mish.eval(1.0) - softplus1.tanh()).abs() < 1e-15);
        assert!((ActKind::SELU.eval(1.0) - SELU_LAMBDA).abs() < 1e-15);
    }

    #[test]
    fn large_inputs_stay_finite() {
        for k in ActKind::ALL {
            for x in [-800.0, -50.0, 50.0, 800.0] {
                assert!(k.eval(x).is_finite(), "{k} at {x}");
            }
        }
    }

    #[test]
    fn names_round_trip() {
        for k in ActKind::ALL {
            assert_eq!(k.name().parse::<ActKind>().unwrap(), k);
        }
        assert!("Tanh".parse::<ActKind>().is_err());
    }
}
