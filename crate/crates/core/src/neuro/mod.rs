//! Discrete-time spiking layers trained with backpropagation through time.
//!
//! Every layer is driven one simulation step at a time through
//! `forward_step`, recording what it needs on a per-step tape. `backward`
//! then walks the tape in reverse time order. The same layers run in ANN mode
//! (ReLU, standard batch norm) with a single step.

mod layer;
mod network;
mod neuron;
mod norm;
mod optim;
mod synapse;

pub use layer::{AvgPool, Layer, Projection, Readout, Residual, SpikingLayer, Unit};
pub use network::{EnergyProbe, Network};
pub use neuron::{
    relaxed_spike, surrogate_spike_grad, surrogate_value, BpttTape, LifConfig, LifNeuron, Neuron,
    ReluNeuron,
};
pub use norm::{NormConfig, TemporalNorm};
pub use optim::{sgd_update, SgdConfig};
pub use synapse::{Synapse, SynapseKind};

use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Train,
    Eval,
}

/// How the spike nonlinearity is evaluated in the forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpikeMode {
    /// Heaviside threshold; the surrogate only appears in the backward pass.
    Hard,
    /// Testing mode: the spike is the smooth primitive of the surrogate and
    /// the reset path is differentiated, so the backward pass is the exact
    /// derivative of the forward pass.
    Relaxed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunMode {
    pub phase: Phase,
    pub spike: SpikeMode,
}

impl RunMode {
    pub const TRAIN: RunMode = RunMode {
        phase: Phase::Train,
        spike: SpikeMode::Hard,
    };
    pub const EVAL: RunMode = RunMode {
        phase: Phase::Eval,
        spike: SpikeMode::Hard,
    };
    pub const RELAXED_TRAIN: RunMode = RunMode {
        phase: Phase::Train,
        spike: SpikeMode::Relaxed,
    };
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Regime {
    Spiking,
    Ann,
}

impl Regime {
    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::Spiking => "snn",
            Regime::Ann => "ann",
        }
    }
}

/// A learnable tensor with its gradient accumulator and momentum buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<F = f32> {
    pub value: Tensor<F>,
    pub grad: Tensor<F>,
    velocity: Tensor<F>,
}

impl<F: Real> Param<F> {
    pub fn new(value: Tensor<F>) -> Self {
        let grad = Tensor::zeros(value.shape());
        let velocity = Tensor::zeros(value.shape());
        Self {
            value,
            grad,
            velocity,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().iter_mut().for_each(|g| *g = F::zero());
    }

    pub fn velocity(&self) -> &Tensor<F> {
        &self.velocity
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}
