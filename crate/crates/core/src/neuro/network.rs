use crate::error::{Error, Result};
use crate::neuro::{Layer, Param, Regime, RunMode, TemporalNorm};
use crate::tensor::{Real, Tensor};

/// Per-synapse energy counters collected after a pass.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyProbe {
    pub name: String,
    /// MAC positions per sample per step.
    pub ops: u64,
    /// Total input activity delivered over all steps and samples. For binary
    /// inputs this is the exact spike count.
    pub activity: f64,
    /// Input neurons per sample.
    pub neurons: usize,
    pub samples: u64,
}

/// An ordered stack of layers simulated over a fixed number of steps.
/// The output is the last layer's output accumulated over all steps.
#[derive(Clone, Debug)]
pub struct Network<F = f32> {
    layers: Vec<Layer<F>>,
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
    regime: Regime,
    steps: usize,
    last_batch: Option<usize>,
}

impl<F: Real> Network<F> {
    pub fn new(
        layers: Vec<Layer<F>>,
        input_shape: Vec<usize>,
        output_shape: Vec<usize>,
        regime: Regime,
        steps: usize,
    ) -> Self {
        Self {
            layers,
            input_shape,
            output_shape,
            regime,
            steps,
            last_batch: None,
        }
    }

    pub fn layers(&self) -> &[Layer<F>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<F>] {
        &mut self.layers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    /// Per-sample shape of the last layer's output.
    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }

    pub fn output_width(&self) -> usize {
        self.output_shape.iter().product()
    }

    pub fn regime(&self) -> Regime {
        self.regime
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Runs every step and returns `sum_t output_t` flattened to `[B, F]`.
    pub fn forward(&mut self, frames: &[Tensor<F>], mode: RunMode) -> Result<Tensor<F>> {
        if frames.len() != self.steps {
            return Err(Error::shape(
                "network_forward",
                format!(
                    "{} input frames for a {}-step network",
                    frames.len(),
                    self.steps
                ),
            ));
        }
        let batch = frames[0].dim(0);
        for layer in &mut self.layers {
            layer.reset_state();
        }
        let mut acc = Tensor::zeros(&[batch, self.output_width()]);
        for (t, frame) in frames.iter().enumerate() {
            if frame.dim(0) != batch {
                return Err(Error::shape(
                    "network_forward",
                    "batch size changed between steps",
                ));
            }
            let mut x = frame.clone();
            for layer in &mut self.layers {
                x = layer.forward_step(&x, t, mode)?;
            }
            acc.add_assign(&x.flatten_batch())?;
        }
        self.last_batch = Some(batch);
        Ok(acc)
    }

    /// Backpropagation through time from `dL/d(accumulated output)`.
    /// Returns per-step input gradients when `need_input_grad`.
    pub fn backward(
        &mut self,
        grad_acc: &Tensor<F>,
        need_input_grad: bool,
    ) -> Result<Option<Vec<Tensor<F>>>> {
        let batch = self
            .last_batch
            .ok_or_else(|| Error::State("backward called before forward".into()))?;
        if grad_acc.shape() != [batch, self.output_width()] {
            return Err(Error::shape(
                "network_backward",
                format!(
                    "gradient {:?} does not match the recorded output [{batch}, {}]",
                    grad_acc.shape(),
                    self.output_width()
                ),
            ));
        }
        let mut shape = vec![batch];
        shape.extend_from_slice(&self.output_shape);
        let per_step = grad_acc.clone().reshape(&shape)?;
        let mut grads = vec![per_step; self.steps];
        for (i, layer) in self.layers.iter_mut().enumerate().rev() {
            let want = i > 0 || need_input_grad;
            match layer.backward(&grads, want)? {
                Some(g) => grads = g,
                None => return Ok(None),
            }
        }
        Ok(Some(grads))
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.params_mut())
            .collect()
    }

    pub fn params(&self) -> Vec<&Param<F>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn norms(&self) -> Vec<&TemporalNorm<F>> {
        self.layers.iter().flat_map(|l| l.norms()).collect()
    }

    pub fn spike_count(&self) -> u64 {
        self.layers
            .iter()
            .flat_map(|l| l.neurons())
            .map(|n| n.spike_count())
            .sum()
    }

    pub fn energy_probes(&self) -> Vec<EnergyProbe> {
        self.layers
            .iter()
            .flat_map(|l| l.synapses())
            .map(|s| EnergyProbe {
                name: s.name().to_string(),
                ops: s.ops(),
                activity: s.activity(),
                neurons: s.input_neurons(),
                samples: s.samples(),
            })
            .collect()
    }

    pub fn reset_counters(&mut self) {
        for l in &mut self.layers {
            l.reset_counters();
        }
    }
}
