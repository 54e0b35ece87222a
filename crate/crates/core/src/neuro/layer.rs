use crate::error::{Error, Result};
use crate::neuro::{Neuron, Param, RunMode, Synapse, TemporalNorm};
use crate::tensor::{avg_pool2d, avg_pool2d_backward, Real, Tensor};

/// Synapse followed by (temporal) batch normalisation. Produces the input
/// current of a neuron population.
#[derive(Clone, Debug)]
pub struct Projection<F = f32> {
    pub synapse: Synapse<F>,
    pub norm: TemporalNorm<F>,
}

impl<F: Real> Projection<F> {
    pub fn forward_step(&mut self, x: &Tensor<F>, t: usize, mode: RunMode) -> Result<Tensor<F>> {
        let z = self.synapse.forward_step(x, t)?;
        self.norm.forward_step(&z, t, mode.phase)
    }

    pub fn backward(
        &mut self,
        grad: &[Tensor<F>],
        need_input_grad: bool,
    ) -> Result<Option<Vec<Tensor<F>>>> {
        check_tape_len("projection", grad.len(), self.synapse.tape_len())?;
        let mut dx = need_input_grad.then(|| Vec::with_capacity(grad.len()));
        for (t, g) in grad.iter().enumerate() {
            let dz = self.norm.backward_step(g, t)?;
            let d = self.synapse.backward_step(&dz, t, need_input_grad)?;
            if let (Some(all), Some(d)) = (dx.as_mut(), d) {
                all.push(d);
            }
        }
        Ok(dx)
    }

    fn reset_state(&mut self) {
        self.synapse.reset_tape();
        self.norm.reset_tape();
    }

    fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        let mut out = vec![&mut self.synapse.weight];
        out.extend(self.norm.params_mut());
        out
    }

    fn params(&self) -> Vec<&Param<F>> {
        let mut out = vec![&self.synapse.weight];
        out.extend(self.norm.params());
        out
    }
}

/// Conv or linear layer with normalisation and a neuron population: in
/// spiking mode this is the BNTT + LIF layer.
#[derive(Clone, Debug)]
pub struct Unit<F = f32> {
    pub projection: Projection<F>,
    pub neuron: Neuron<F>,
}

pub type SpikingLayer<F = f32> = Unit<F>;

impl<F: Real> Unit<F> {
    /// One simulation step: weighted input, BNTT, membrane update, firing.
    pub fn forward_step(&mut self, x: &Tensor<F>, t: usize, mode: RunMode) -> Result<Tensor<F>> {
        let current = self.projection.forward_step(x, t, mode)?;
        self.neuron.step(&current, t, mode)
    }

    pub fn backward(
        &mut self,
        grad: &[Tensor<F>],
        need_input_grad: bool,
    ) -> Result<Option<Vec<Tensor<F>>>> {
        let d_current = self.neuron.backward(grad)?;
        self.projection.backward(&d_current, need_input_grad)
    }

    pub fn reset_state(&mut self) {
        self.projection.reset_state();
        self.neuron.reset_state();
    }

    pub fn spike_count(&self) -> u64 {
        self.neuron.spike_count()
    }
}

/// Two-convolution residual block. The skip path (identity or a projected
/// 1x1 convolution) is added to the second convolution's normalised current
/// before the output neurons integrate and fire.
#[derive(Clone, Debug)]
pub struct Residual<F = f32> {
    pub first: Unit<F>,
    pub second: Projection<F>,
    pub skip: Option<Projection<F>>,
    pub neuron: Neuron<F>,
}

impl<F: Real> Residual<F> {
    pub fn forward_step(&mut self, x: &Tensor<F>, t: usize, mode: RunMode) -> Result<Tensor<F>> {
        let h = self.first.forward_step(x, t, mode)?;
        let mut current = self.second.forward_step(&h, t, mode)?;
        match self.skip.as_mut() {
            Some(p) => current.add_assign(&p.forward_step(x, t, mode)?)?,
            None => current.add_assign(x)?,
        }
        self.neuron.step(&current, t, mode)
    }

    pub fn backward(
        &mut self,
        grad: &[Tensor<F>],
        need_input_grad: bool,
    ) -> Result<Option<Vec<Tensor<F>>>> {
        let d_current = self.neuron.backward(grad)?;
        let d_hidden = self
            .second
            .backward(&d_current, true)?
            .expect("input gradient requested");
        let d_main = self.first.backward(&d_hidden, need_input_grad)?;
        if !need_input_grad {
            if let Some(p) = self.skip.as_mut() {
                p.backward(&d_current, false)?;
            }
            return Ok(None);
        }
        let d_skip = match self.skip.as_mut() {
            Some(p) => p
                .backward(&d_current, true)?
                .expect("input gradient requested"),
            None => d_current,
        };
        let mut d_main = d_main.expect("input gradient requested");
        for (a, b) in d_main.iter_mut().zip(&d_skip) {
            a.add_assign(b)?;
        }
        Ok(Some(d_main))
    }

    pub fn reset_state(&mut self) {
        self.first.reset_state();
        self.second.reset_state();
        if let Some(p) = self.skip.as_mut() {
            p.reset_state();
        }
        self.neuron.reset_state();
    }
}

#[derive(Clone, Debug)]
pub struct AvgPool {
    pub kernel: usize,
    pub stride: usize,
    input_shapes: Vec<Vec<usize>>,
}

impl AvgPool {
    pub fn new(kernel: usize, stride: usize) -> Self {
        Self {
            kernel,
            stride,
            input_shapes: Vec::new(),
        }
    }

    pub fn forward_step<F: Real>(&mut self, x: &Tensor<F>, t: usize) -> Result<Tensor<F>> {
        if t != self.input_shapes.len() {
            return Err(Error::State(format!(
                "pool expected step {} but got {t}",
                self.input_shapes.len()
            )));
        }
        self.input_shapes.push(x.shape().to_vec());
        avg_pool2d(x, self.kernel, self.stride)
    }

    pub fn backward<F: Real>(&mut self, grad: &[Tensor<F>]) -> Result<Vec<Tensor<F>>> {
        check_tape_len("pool", grad.len(), self.input_shapes.len())?;
        grad.iter()
            .zip(&self.input_shapes)
            .map(|(g, s)| avg_pool2d_backward(s, g, self.kernel, self.stride))
            .collect()
    }
}

/// Output layer: weighted input only, no normalisation, no firing. The
/// network accumulates its per-step output as the final membrane potential.
#[derive(Clone, Debug)]
pub struct Readout<F = f32> {
    pub synapse: Synapse<F>,
}

#[derive(Clone, Debug)]
#[allow(clippy::large_enum_variant)]
pub enum Layer<F = f32> {
    Unit(Unit<F>),
    Residual(Residual<F>),
    Pool(AvgPool),
    Readout(Readout<F>),
}

impl<F: Real> Layer<F> {
    pub fn name(&self) -> &str {
        match self {
            Layer::Unit(u) => u.projection.synapse.name(),
            Layer::Residual(r) => r.first.projection.synapse.name(),
            Layer::Pool(_) => "pool",
            Layer::Readout(r) => r.synapse.name(),
        }
    }

    pub fn forward_step(&mut self, x: &Tensor<F>, t: usize, mode: RunMode) -> Result<Tensor<F>> {
        match self {
            Layer::Unit(u) => u.forward_step(x, t, mode),
            Layer::Residual(r) => r.forward_step(x, t, mode),
            Layer::Pool(p) => p.forward_step(x, t),
            Layer::Readout(r) => r.synapse.forward_step(x, t),
        }
    }

    /// Input gradients are returned for every step when `need_input_grad`.
    pub fn backward(
        &mut self,
        grad: &[Tensor<F>],
        need_input_grad: bool,
    ) -> Result<Option<Vec<Tensor<F>>>> {
        match self {
            Layer::Unit(u) => u.backward(grad, need_input_grad),
            Layer::Residual(r) => r.backward(grad, need_input_grad),
            Layer::Pool(p) => {
                let d = p.backward(grad)?;
                Ok(need_input_grad.then_some(d))
            }
            Layer::Readout(r) => {
                check_tape_len("readout", grad.len(), r.synapse.tape_len())?;
                let mut dx = need_input_grad.then(Vec::new);
                for (t, g) in grad.iter().enumerate() {
                    let d = r.synapse.backward_step(g, t, need_input_grad)?;
                    if let (Some(all), Some(d)) = (dx.as_mut(), d) {
                        all.push(d);
                    }
                }
                Ok(dx)
            }
        }
    }

    pub fn reset_state(&mut self) {
        match self {
            Layer::Unit(u) => u.reset_state(),
            Layer::Residual(r) => r.reset_state(),
            Layer::Pool(p) => p.input_shapes.clear(),
            Layer::Readout(r) => r.synapse.reset_tape(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        match self {
            Layer::Unit(u) => u.projection.params_mut(),
            Layer::Residual(r) => {
                let mut out = r.first.projection.params_mut();
                out.extend(r.second.params_mut());
                if let Some(p) = r.skip.as_mut() {
                    out.extend(p.params_mut());
                }
                out
            }
            Layer::Pool(_) => Vec::new(),
            Layer::Readout(r) => vec![&mut r.synapse.weight],
        }
    }

    pub fn params(&self) -> Vec<&Param<F>> {
        match self {
            Layer::Unit(u) => u.projection.params(),
            Layer::Residual(r) => {
                let mut out = r.first.projection.params();
                out.extend(r.second.params());
                if let Some(p) = r.skip.as_ref() {
                    out.extend(p.params());
                }
                out
            }
            Layer::Pool(_) => Vec::new(),
            Layer::Readout(r) => vec![&r.synapse.weight],
        }
    }

    /// Synapses in forward order, for energy accounting.
    pub fn synapses(&self) -> Vec<&Synapse<F>> {
        match self {
            Layer::Unit(u) => vec![&u.projection.synapse],
            Layer::Residual(r) => {
                let mut out = vec![&r.first.projection.synapse, &r.second.synapse];
                if let Some(p) = r.skip.as_ref() {
                    out.push(&p.synapse);
                }
                out
            }
            Layer::Pool(_) => Vec::new(),
            Layer::Readout(r) => vec![&r.synapse],
        }
    }

    pub fn synapses_mut(&mut self) -> Vec<&mut Synapse<F>> {
        match self {
            Layer::Unit(u) => vec![&mut u.projection.synapse],
            Layer::Residual(r) => {
                let mut out = vec![&mut r.first.projection.synapse, &mut r.second.synapse];
                if let Some(p) = r.skip.as_mut() {
                    out.push(&mut p.synapse);
                }
                out
            }
            Layer::Pool(_) => Vec::new(),
            Layer::Readout(r) => vec![&mut r.synapse],
        }
    }

    /// Batch-norm instances in forward order.
    pub fn norms(&self) -> Vec<&TemporalNorm<F>> {
        match self {
            Layer::Unit(u) => vec![&u.projection.norm],
            Layer::Residual(r) => {
                let mut out = vec![&r.first.projection.norm, &r.second.norm];
                if let Some(p) = r.skip.as_ref() {
                    out.push(&p.norm);
                }
                out
            }
            Layer::Pool(_) | Layer::Readout(_) => Vec::new(),
        }
    }

    /// Neuron populations in forward order.
    pub fn neurons(&self) -> Vec<&Neuron<F>> {
        match self {
            Layer::Unit(u) => vec![&u.neuron],
            Layer::Residual(r) => vec![&r.first.neuron, &r.neuron],
            Layer::Pool(_) | Layer::Readout(_) => Vec::new(),
        }
    }

    pub fn reset_counters(&mut self) {
        for s in self.synapses_mut() {
            s.reset_counters();
        }
        match self {
            Layer::Unit(u) => u.neuron.reset_counters(),
            Layer::Residual(r) => {
                r.first.neuron.reset_counters();
                r.neuron.reset_counters();
            }
            Layer::Pool(_) | Layer::Readout(_) => {}
        }
    }
}

fn check_tape_len(what: &str, got: usize, recorded: usize) -> Result<()> {
    if got != recorded {
        return Err(Error::shape(
            "backward",
            format!("{what}: {got} gradient steps but the tape holds {recorded}"),
        ));
    }
    Ok(())
}
