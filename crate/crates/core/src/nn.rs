//! Dense layers and dropout on top of the tape.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Sigmoid,
    Identity,
}

/// Whether stochastic layers are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Training,
    Inference,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DropoutSpec {
    pub rate: f64,
    pub mode: Mode,
}

impl DropoutSpec {
    pub fn new(rate: f64, mode: Mode) -> Result<Self> {
        validate_rate(rate)?;
        Ok(DropoutSpec { rate, mode })
    }
}

pub(crate) fn validate_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
    }
    Ok(())
}

/// `activation(input * weights + bias)`.
pub fn dense_forward(
    tape: &mut Tape,
    input: Var,
    weights: Var,
    bias: Var,
    activation: Activation,
) -> Result<Var> {
    let h = tape.matmul(input, weights)?;
    let h = tape.add_bias(h, bias)?;
    match activation {
        Activation::Relu => tape.relu(h),
        Activation::Sigmoid => tape.sigmoid(h),
        Activation::Identity => Ok(h),
    }
}

/// Inverted dropout: survivors are scaled by `1 / (1 - rate)` so that
/// inference is the identity.
pub fn dropout_apply<R: Rng + ?Sized>(
    tape: &mut Tape,
    input: Var,
    spec: DropoutSpec,
    rng: &mut R,
) -> Result<Var> {
    validate_rate(spec.rate)?;
    if spec.mode == Mode::Inference || spec.rate == 0.0 {
        return Ok(input);
    }
    let keep = 1.0 / (1.0 - spec.rate);
    let mask = (0..tape.value(input).len())
        .map(|_| if rng.gen::<f64>() < spec.rate { 0.0 } else { keep })
        .collect();
    tape.mask(input, mask)
}
