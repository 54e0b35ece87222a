use crate::error::{Error, Result};
use crate::neuro::{RunMode, SpikeMode};
use crate::tensor::{Real, Tensor};

/// Leaky integrate-and-fire parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LifConfig {
    /// Fraction of membrane potential kept from one step to the next.
    pub leak: f64,
    pub threshold: f64,
    pub steps: usize,
    /// Half-width of the triangular surrogate derivative.
    pub surrogate_width: f64,
}

impl LifConfig {
    pub fn new(leak: f64, threshold: f64, steps: usize) -> Result<Self> {
        let cfg = Self {
            leak,
            threshold,
            steps,
            surrogate_width: 1.0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_surrogate_width(mut self, width: f64) -> Result<Self> {
        self.surrogate_width = width;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.leak) {
            return Err(Error::invalid(format!("leak {} outside [0, 1]", self.leak)));
        }
        if self.threshold.is_nan() || self.threshold <= 0.0 {
            return Err(Error::invalid(format!(
                "threshold {} must be positive",
                self.threshold
            )));
        }
        if self.steps == 0 {
            return Err(Error::invalid("time steps must be at least 1"));
        }
        if self.surrogate_width.is_nan() || self.surrogate_width <= 0.0 {
            return Err(Error::invalid("surrogate width must be positive"));
        }
        Ok(())
    }
}

impl Default for LifConfig {
    fn default() -> Self {
        Self {
            leak: 0.99,
            threshold: 1.0,
            steps: 32,
            surrogate_width: 1.0,
        }
    }
}

/// Triangular pseudo-derivative of the spike: `max(0, 1 - |v - thr| / w) / w`.
pub fn surrogate_value(v: f64, threshold: f64, width: f64) -> f64 {
    (1.0 - (v - threshold).abs() / width).max(0.0) / width
}

pub fn surrogate_spike_grad<F: Real>(v: &Tensor<F>, threshold: f64, width: f64) -> Tensor<F> {
    v.map(|x| F::lit(surrogate_value(x.as_f64(), threshold, width)))
}

/// Integral of [`surrogate_value`] from `-inf` to `v`: a piecewise-quadratic
/// ramp from 0 to 1 centred on the threshold.
pub fn relaxed_spike(v: f64, threshold: f64, width: f64) -> f64 {
    let d = v - threshold;
    if d <= -width {
        0.0
    } else if d <= 0.0 {
        (d + width).powi(2) / (2.0 * width * width)
    } else if d < width {
        1.0 - (width - d).powi(2) / (2.0 * width * width)
    } else {
        1.0
    }
}

/// What a LIF population keeps per step for the backward pass.
#[derive(Clone, Debug, Default)]
pub struct BpttTape<F = f32> {
    /// Membrane potential after integration, before firing and reset.
    pub membranes: Vec<Tensor<F>>,
    pub spikes: Vec<Tensor<F>>,
    pub mode: Option<SpikeMode>,
}

impl<F> BpttTape<F> {
    pub fn len(&self) -> usize {
        self.spikes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spikes.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct LifNeuron<F = f32> {
    config: LifConfig,
    membrane: Option<Tensor<F>>,
    spike_count: u64,
    tape: BpttTape<F>,
}

impl<F: Real> LifNeuron<F> {
    pub fn new(config: LifConfig) -> Self {
        Self {
            config,
            membrane: None,
            spike_count: 0,
            tape: BpttTape::default(),
        }
    }

    pub fn config(&self) -> &LifConfig {
        &self.config
    }

    pub fn membrane(&self) -> Option<&Tensor<F>> {
        self.membrane.as_ref()
    }

    pub fn spike_count(&self) -> u64 {
        self.spike_count
    }

    pub fn reset_counters(&mut self) {
        self.spike_count = 0;
    }

    pub fn tape(&self) -> &BpttTape<F> {
        &self.tape
    }

    pub fn reset_state(&mut self) {
        self.membrane = None;
        self.tape = BpttTape::default();
    }

    /// `u = leak * v + current`; fire where `u >= threshold` and reset the
    /// fired entries to zero.
    pub fn step(&mut self, current: &Tensor<F>, t: usize, mode: RunMode) -> Result<Tensor<F>> {
        if t != self.tape.len() {
            return Err(Error::State(format!(
                "LIF expected step {} but got {t}",
                self.tape.len()
            )));
        }
        if t >= self.config.steps {
            return Err(Error::invalid(format!(
                "step {t} outside LIF horizon {}",
                self.config.steps
            )));
        }
        let prev = match self.membrane.take() {
            Some(m) if m.shape() == current.shape() => m,
            Some(m) => {
                return Err(Error::shape(
                    "lif_step",
                    format!("membrane {:?} vs input {:?}", m.shape(), current.shape()),
                ))
            }
            None => Tensor::zeros(current.shape()),
        };
        let leak = F::lit(self.config.leak);
        let thr = self.config.threshold;
        let width = self.config.surrogate_width;
        let n = current.len();
        let mut u = Vec::with_capacity(n);
        let mut s = Vec::with_capacity(n);
        let mut v = Vec::with_capacity(n);
        let mut fired = 0u64;
        for (&p, &c) in prev.data().iter().zip(current.data()) {
            let ui = leak * p + c;
            let si = match mode.spike {
                SpikeMode::Hard => {
                    if ui.as_f64() >= thr {
                        F::one()
                    } else {
                        F::zero()
                    }
                }
                SpikeMode::Relaxed => F::lit(relaxed_spike(ui.as_f64(), thr, width)),
            };
            if si == F::one() {
                fired += 1;
            }
            u.push(ui);
            v.push(ui * (F::one() - si));
            s.push(si);
        }
        self.spike_count += fired;
        let shape = current.shape().to_vec();
        let spikes = Tensor::new(shape.clone(), s)?;
        self.tape.membranes.push(Tensor::new(shape.clone(), u)?);
        self.tape.spikes.push(spikes.clone());
        self.tape.mode = Some(mode.spike);
        let membrane = Tensor::new(shape, v)?;
        membrane.check_finite("lif_step")?;
        self.membrane = Some(membrane);
        Ok(spikes)
    }

    /// Reverse-time pass. Spike derivatives use the surrogate; the leak path
    /// carries gradient; a hard reset is treated as a constant. In relaxed
    /// mode the reset is differentiated as well.
    pub fn backward(&mut self, grad_spikes: &[Tensor<F>]) -> Result<Vec<Tensor<F>>> {
        let steps = self.tape.len();
        if grad_spikes.len() != steps {
            return Err(Error::shape(
                "lif_backward",
                format!("{} gradient steps for a tape of {steps}", grad_spikes.len()),
            ));
        }
        let leak = self.config.leak;
        let thr = self.config.threshold;
        let width = self.config.surrogate_width;
        let relaxed = self.tape.mode == Some(SpikeMode::Relaxed);
        let mut grad_current = vec![Tensor::zeros(&[0]); steps];
        let mut grad_v_next: Option<Vec<f64>> = None;
        for t in (0..steps).rev() {
            let u = &self.tape.membranes[t];
            let s = &self.tape.spikes[t];
            let g = &grad_spikes[t];
            if g.shape() != u.shape() {
                return Err(Error::shape(
                    "lif_backward",
                    format!(
                        "gradient {:?} vs recorded {:?} at step {t}",
                        g.shape(),
                        u.shape()
                    ),
                ));
            }
            let mut du = Vec::with_capacity(u.len());
            for i in 0..u.len() {
                let ui = u.data()[i].as_f64();
                let si = s.data()[i].as_f64();
                let sg = surrogate_value(ui, thr, width);
                let dv_du = if relaxed {
                    1.0 - si - ui * sg
                } else {
                    1.0 - si
                };
                let from_future = grad_v_next.as_ref().map_or(0.0, |dv| dv[i]);
                du.push(g.data()[i].as_f64() * sg + from_future * dv_du);
            }
            grad_v_next = Some(du.iter().map(|d| leak * d).collect());
            grad_current[t] =
                Tensor::new(u.shape().to_vec(), du.into_iter().map(F::lit).collect())?;
        }
        Ok(grad_current)
    }
}

#[derive(Clone, Debug, Default)]
pub struct ReluNeuron<F = f32> {
    masks: Vec<Tensor<F>>,
}

impl<F: Real> ReluNeuron<F> {
    pub fn step(&mut self, current: &Tensor<F>, t: usize) -> Result<Tensor<F>> {
        if t != self.masks.len() {
            return Err(Error::State(format!(
                "ReLU expected step {} but got {t}",
                self.masks.len()
            )));
        }
        let mask = current.map(|x| if x > F::zero() { F::one() } else { F::zero() });
        let out = current.map(|x| x.max(F::zero()));
        self.masks.push(mask);
        Ok(out)
    }

    pub fn backward(&mut self, grad: &[Tensor<F>]) -> Result<Vec<Tensor<F>>> {
        if grad.len() != self.masks.len() {
            return Err(Error::shape(
                "relu_backward",
                format!(
                    "{} gradient steps for a tape of {}",
                    grad.len(),
                    self.masks.len()
                ),
            ));
        }
        grad.iter()
            .zip(&self.masks)
            .map(|(g, m)| {
                if g.shape() != m.shape() {
                    return Err(Error::shape(
                        "relu_backward",
                        "gradient shape differs from tape",
                    ));
                }
                Tensor::new(
                    g.shape().to_vec(),
                    g.data()
                        .iter()
                        .zip(m.data())
                        .map(|(&a, &b)| a * b)
                        .collect(),
                )
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
pub enum Neuron<F = f32> {
    Lif(LifNeuron<F>),
    Relu(ReluNeuron<F>),
}

impl<F: Real> Neuron<F> {
    pub fn step(&mut self, current: &Tensor<F>, t: usize, mode: RunMode) -> Result<Tensor<F>> {
        match self {
            Neuron::Lif(n) => n.step(current, t, mode),
            Neuron::Relu(n) => n.step(current, t),
        }
    }

    pub fn backward(&mut self, grad: &[Tensor<F>]) -> Result<Vec<Tensor<F>>> {
        match self {
            Neuron::Lif(n) => n.backward(grad),
            Neuron::Relu(n) => n.backward(grad),
        }
    }

    pub fn reset_state(&mut self) {
        match self {
            Neuron::Lif(n) => n.reset_state(),
            Neuron::Relu(n) => n.masks.clear(),
        }
    }

    pub fn spike_count(&self) -> u64 {
        match self {
            Neuron::Lif(n) => n.spike_count(),
            Neuron::Relu(_) => 0,
        }
    }

    pub fn reset_counters(&mut self) {
        if let Neuron::Lif(n) = self {
            n.reset_counters();
        }
    }

    pub fn as_lif(&self) -> Option<&LifNeuron<F>> {
        match self {
            Neuron::Lif(n) => Some(n),
            Neuron::Relu(_) => None,
        }
    }
}
