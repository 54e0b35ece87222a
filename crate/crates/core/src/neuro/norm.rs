use crate::error::{Error, Result};
use crate::neuro::{Param, Phase};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormConfig {
    pub eps: f64,
    /// Weight of the newest batch statistic in the running averages.
    pub momentum: f64,
}

impl Default for NormConfig {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            momentum: 0.1,
        }
    }
}

#[derive(Clone, Debug)]
struct NormTape<F> {
    normalized: Tensor<F>,
    inv_std: Vec<f64>,
    phase: Phase,
}

/// Batch normalisation with a separate scale (and running statistics) for
/// every simulation step:
///
/// `y = gamma[t, c] * (z - mu[t, c]) / sqrt(var[t, c] + eps) (+ beta[t, c])`
///
/// Spiking layers use it scale-only with `steps = T` (BNTT); ANN layers use
/// `steps = 1` with a shift, which is ordinary batch norm. Batch variance is
/// the biased estimate (divide by the number of reduced elements), and the
/// running variance tracks that same estimate.
#[derive(Clone, Debug)]
pub struct TemporalNorm<F = f32> {
    channels: usize,
    steps: usize,
    pub gamma: Param<F>,
    pub beta: Option<Param<F>>,
    running_mean: Tensor<F>,
    running_var: Tensor<F>,
    initialized: Vec<bool>,
    config: NormConfig,
    tape: Vec<NormTape<F>>,
}

impl<F: Real> TemporalNorm<F> {
    pub fn new(channels: usize, steps: usize, with_shift: bool, config: NormConfig) -> Self {
        Self {
            channels,
            steps,
            gamma: Param::new(Tensor::full(&[steps, channels], F::one())),
            beta: with_shift.then(|| Param::new(Tensor::zeros(&[steps, channels]))),
            running_mean: Tensor::zeros(&[steps, channels]),
            running_var: Tensor::full(&[steps, channels], F::one()),
            initialized: vec![false; steps],
            config,
            tape: Vec::with_capacity(steps),
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn config(&self) -> NormConfig {
        self.config
    }

    pub fn running_mean(&self) -> &Tensor<F> {
        &self.running_mean
    }

    pub fn running_var(&self) -> &Tensor<F> {
        &self.running_var
    }

    /// Overrides the running statistics for step `t` and marks them usable.
    pub fn set_running_stats(&mut self, t: usize, mean: &[F], var: &[F]) -> Result<()> {
        if t >= self.steps || mean.len() != self.channels || var.len() != self.channels {
            return Err(Error::invalid("running statistics do not match the layer"));
        }
        if var.iter().any(|&v| v < F::zero()) {
            return Err(Error::invalid("running variance must be non-negative"));
        }
        let c = self.channels;
        self.running_mean.data_mut()[t * c..(t + 1) * c].copy_from_slice(mean);
        self.running_var.data_mut()[t * c..(t + 1) * c].copy_from_slice(var);
        self.initialized[t] = true;
        Ok(())
    }

    pub fn reset_tape(&mut self) {
        self.tape.clear();
    }

    pub fn tape_len(&self) -> usize {
        self.tape.len()
    }

    /// Normalised pre-activation recorded at step `t` (before scaling).
    pub fn normalized(&self, t: usize) -> Option<&Tensor<F>> {
        self.tape.get(t).map(|s| &s.normalized)
    }

    fn layout(&self, z: &Tensor<F>) -> Result<(usize, usize)> {
        if z.rank() < 2 || z.dim(1) != self.channels {
            return Err(Error::shape(
                "batch_norm",
                format!(
                    "expected [batch, {}, ...], got {:?}",
                    self.channels,
                    z.shape()
                ),
            ));
        }
        Ok((z.dim(0), z.shape()[2..].iter().product()))
    }

    pub fn forward_step(&mut self, z: &Tensor<F>, t: usize, phase: Phase) -> Result<Tensor<F>> {
        if t >= self.steps {
            return Err(Error::invalid(format!(
                "step {t} outside normalisation horizon {}",
                self.steps
            )));
        }
        if t != self.tape.len() {
            return Err(Error::State(format!(
                "batch norm expected step {} but got {t}",
                self.tape.len()
            )));
        }
        let (batch, spatial) = self.layout(z)?;
        let c = self.channels;
        let per_channel = (batch * spatial) as f64;
        let zd = z.data();

        let (mean, var): (Vec<f64>, Vec<f64>) = match phase {
            Phase::Train => {
                if batch < 2 {
                    return Err(Error::invalid(
                        "training-mode batch statistics need a batch of at least 2",
                    ));
                }
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for b in 0..batch {
                    for (ch, m) in mean.iter_mut().enumerate() {
                        let base = (b * c + ch) * spatial;
                        *m += zd[base..base + spatial]
                            .iter()
                            .map(|v| v.as_f64())
                            .sum::<f64>();
                    }
                }
                mean.iter_mut().for_each(|m| *m /= per_channel);
                for b in 0..batch {
                    for ch in 0..c {
                        let base = (b * c + ch) * spatial;
                        var[ch] += zd[base..base + spatial]
                            .iter()
                            .map(|v| {
                                let d = v.as_f64() - mean[ch];
                                d * d
                            })
                            .sum::<f64>();
                    }
                }
                var.iter_mut().for_each(|v| *v /= per_channel);

                let m = self.config.momentum;
                let rm = &mut self.running_mean.data_mut()[t * c..(t + 1) * c];
                for (r, &mu) in rm.iter_mut().zip(&mean) {
                    *r = F::lit((1.0 - m) * r.as_f64() + m * mu);
                }
                let rv = &mut self.running_var.data_mut()[t * c..(t + 1) * c];
                for (r, &s2) in rv.iter_mut().zip(&var) {
                    *r = F::lit((1.0 - m) * r.as_f64() + m * s2);
                }
                self.initialized[t] = true;
                (mean, var)
            }
            Phase::Eval => {
                if !self.initialized[t] {
                    return Err(Error::State(format!(
                        "running statistics for step {t} are uninitialised; train before evaluating"
                    )));
                }
                let rm = &self.running_mean.data()[t * c..(t + 1) * c];
                let rv = &self.running_var.data()[t * c..(t + 1) * c];
                (
                    rm.iter().map(|v| v.as_f64()).collect(),
                    rv.iter().map(|v| v.as_f64()).collect(),
                )
            }
        };

        let inv_std: Vec<f64> = var
            .iter()
            .map(|&v| 1.0 / (v + self.config.eps).sqrt())
            .collect();
        let gamma = &self.gamma.value.data()[t * c..(t + 1) * c];
        let beta = self
            .beta
            .as_ref()
            .map(|p| &p.value.data()[t * c..(t + 1) * c]);
        let mut normalized = vec![F::zero(); zd.len()];
        let mut out = vec![F::zero(); zd.len()];
        for b in 0..batch {
            for ch in 0..c {
                let base = (b * c + ch) * spatial;
                let shift = beta.map_or(F::zero(), |bt| bt[ch]);
                for i in base..base + spatial {
                    let n = F::lit((zd[i].as_f64() - mean[ch]) * inv_std[ch]);
                    normalized[i] = n;
                    out[i] = gamma[ch] * n + shift;
                }
            }
        }
        let normalized = Tensor::new(z.shape().to_vec(), normalized)?;
        self.tape.push(NormTape {
            normalized,
            inv_std,
            phase,
        });
        let out = Tensor::new(z.shape().to_vec(), out)?;
        out.check_finite("batch_norm")?;
        Ok(out)
    }

    /// Backward through step `t`; accumulates scale/shift gradients and
    /// returns the gradient with respect to the step's input.
    pub fn backward_step(&mut self, grad_out: &Tensor<F>, t: usize) -> Result<Tensor<F>> {
        let record = self
            .tape
            .get(t)
            .ok_or_else(|| Error::State(format!("no batch-norm tape entry for step {t}")))?;
        if record.normalized.shape() != grad_out.shape() {
            return Err(Error::shape(
                "batch_norm_backward",
                format!(
                    "gradient {:?} does not match recorded batch {:?}",
                    grad_out.shape(),
                    record.normalized.shape()
                ),
            ));
        }
        let (batch, spatial) = self.layout(grad_out)?;
        let c = self.channels;
        let per_channel = (batch * spatial) as f64;
        let g = grad_out.data();
        let n = record.normalized.data();

        let mut sum_g = vec![0.0f64; c];
        let mut sum_gn = vec![0.0f64; c];
        for b in 0..batch {
            for ch in 0..c {
                let base = (b * c + ch) * spatial;
                for i in base..base + spatial {
                    let gi = g[i].as_f64();
                    sum_g[ch] += gi;
                    sum_gn[ch] += gi * n[i].as_f64();
                }
            }
        }
        {
            let dgamma = &mut self.gamma.grad.data_mut()[t * c..(t + 1) * c];
            for (d, &s) in dgamma.iter_mut().zip(&sum_gn) {
                *d += F::lit(s);
            }
        }
        if let Some(beta) = self.beta.as_mut() {
            let dbeta = &mut beta.grad.data_mut()[t * c..(t + 1) * c];
            for (d, &s) in dbeta.iter_mut().zip(&sum_g) {
                *d += F::lit(s);
            }
        }

        let gamma = &self.gamma.value.data()[t * c..(t + 1) * c];
        let mut dz = vec![F::zero(); g.len()];
        for b in 0..batch {
            for ch in 0..c {
                let base = (b * c + ch) * spatial;
                let gm = gamma[ch].as_f64();
                let is = record.inv_std[ch];
                match record.phase {
                    Phase::Train => {
                        // d(normalized)/dz with batch statistics, scaled by gamma.
                        let mean_g = sum_g[ch] / per_channel;
                        let mean_gn = sum_gn[ch] / per_channel;
                        for i in base..base + spatial {
                            let ni = n[i].as_f64();
                            dz[i] = F::lit(gm * is * (g[i].as_f64() - mean_g - ni * mean_gn));
                        }
                    }
                    Phase::Eval => {
                        for i in base..base + spatial {
                            dz[i] = F::lit(gm * is * g[i].as_f64());
                        }
                    }
                }
            }
        }
        let dz = Tensor::new(grad_out.shape().to_vec(), dz)?;
        dz.check_finite("batch_norm_backward")?;
        Ok(dz)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        let mut out = vec![&mut self.gamma];
        if let Some(b) = self.beta.as_mut() {
            out.push(b);
        }
        out
    }

    pub fn params(&self) -> Vec<&Param<F>> {
        let mut out = vec![&self.gamma];
        if let Some(b) = self.beta.as_ref() {
            out.push(b);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_zero_batch_normalises_to_zero() {
        let mut bn = TemporalNorm::<f32>::new(2, 3, false, NormConfig::default());
        let z = Tensor::zeros(&[4, 2, 3, 3]);
        let y = bn.forward_step(&z, 0, Phase::Train).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn eval_before_training_fails() {
        let mut bn = TemporalNorm::<f32>::new(1, 2, false, NormConfig::default());
        let z = Tensor::full(&[2, 1], 1.0);
        assert!(matches!(
            bn.forward_step(&z, 0, Phase::Eval),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn train_step_needs_two_samples() {
        let mut bn = TemporalNorm::<f32>::new(1, 1, false, NormConfig::default());
        assert!(bn
            .forward_step(&Tensor::full(&[1, 1], 1.0), 0, Phase::Train)
            .is_err());
    }

    #[test]
    fn running_stats_follow_ema() {
        let mut bn = TemporalNorm::<f64>::new(
            1,
            1,
            false,
            NormConfig {
                eps: 1e-5,
                momentum: 0.1,
            },
        );
        let z = Tensor::new(vec![2, 1], vec![1.0, 3.0]).unwrap();
        bn.forward_step(&z, 0, Phase::Train).unwrap();
        // batch mean 2, biased var 1
        assert!((bn.running_mean().data()[0] - 0.2).abs() < 1e-12);
        assert!((bn.running_var().data()[0] - 1.0).abs() < 1e-12);
        assert!(bn.running_var().data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn steps_must_arrive_in_order() {
        let mut bn = TemporalNorm::<f32>::new(1, 3, false, NormConfig::default());
        let z = Tensor::new(vec![2, 1], vec![0.0, 1.0]).unwrap();
        assert!(bn.forward_step(&z, 1, Phase::Train).is_err());
    }
}
