use crate::energy::{ops_conv_rect, ops_fc};
use crate::error::{Error, Result};
use crate::neuro::Param;
use crate::tensor::{conv2d, conv2d_backward, matmul, matmul_nt, matmul_tn, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SynapseKind {
    /// Kernel `[O, I, k, k]` applied by cross-correlation.
    Conv { padding: usize, stride: usize },
    /// Weight `[I, O]`; inputs are flattened to `[B, I]`.
    Linear,
}

/// The weighted-sum stage of a layer: `sum_j w_ij * o_j` for every step.
///
/// Also keeps the energy counters for the layer: how much input activity
/// (spike events, for binary inputs) arrived and over how many samples.
#[derive(Clone, Debug)]
pub struct Synapse<F = f32> {
    name: String,
    kind: SynapseKind,
    pub weight: Param<F>,
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
    ops: u64,
    count_activity: bool,
    activity: f64,
    samples: u64,
    inputs: Vec<Tensor<F>>,
}

impl<F: Real> Synapse<F> {
    /// `input_shape` excludes the batch axis.
    pub fn new(
        name: impl Into<String>,
        kind: SynapseKind,
        weight: Tensor<F>,
        input_shape: &[usize],
        count_activity: bool,
    ) -> Result<Self> {
        let name = name.into();
        let (output_shape, ops) = match kind {
            SynapseKind::Conv { padding, stride } => {
                if input_shape.len() != 3 || weight.rank() != 4 {
                    return Err(Error::shape(
                        "synapse",
                        format!("{name}: conv needs [C, H, W] input and a rank-4 kernel"),
                    ));
                }
                let probe =
                    Tensor::<F>::zeros(&[1, input_shape[0], input_shape[1], input_shape[2]]);
                let out = conv2d(&probe, &weight, padding, stride)
                    .map_err(|e| Error::invalid(format!("{name}: {e}")))?;
                let (o, i, k) = (weight.dim(0), weight.dim(1), weight.dim(2));
                let ops = ops_conv_rect(input_shape[1], input_shape[2], k, padding, stride, i, o)?;
                (out.shape()[1..].to_vec(), ops)
            }
            SynapseKind::Linear => {
                let fan_in: usize = input_shape.iter().product();
                if weight.rank() != 2 || weight.dim(0) != fan_in {
                    return Err(Error::shape(
                        "synapse",
                        format!(
                            "{name}: linear weight {:?} does not accept {fan_in} inputs",
                            weight.shape()
                        ),
                    ));
                }
                (
                    vec![weight.dim(1)],
                    ops_fc(fan_in as u64, weight.dim(1) as u64),
                )
            }
        };
        Ok(Self {
            name,
            kind,
            weight: Param::new(weight),
            input_shape: input_shape.to_vec(),
            output_shape,
            ops,
            count_activity,
            activity: 0.0,
            samples: 0,
            inputs: Vec::new(),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> SynapseKind {
        self.kind
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }

    pub fn output_channels(&self) -> usize {
        self.output_shape[0]
    }

    /// Multiply-accumulate positions per sample per step.
    pub fn ops(&self) -> u64 {
        self.ops
    }

    pub fn input_neurons(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn activity(&self) -> f64 {
        self.activity
    }

    pub fn samples(&self) -> u64 {
        self.samples
    }

    pub fn reset_counters(&mut self) {
        self.activity = 0.0;
        self.samples = 0;
    }

    pub fn reset_tape(&mut self) {
        self.inputs.clear();
    }

    pub fn tape_len(&self) -> usize {
        self.inputs.len()
    }

    pub fn recorded_input(&self, t: usize) -> Option<&Tensor<F>> {
        self.inputs.get(t)
    }

    fn check_input(&self, x: &Tensor<F>) -> Result<()> {
        if x.rank() < 2 || x.item_len() != self.input_neurons() {
            return Err(Error::shape(
                "synapse",
                format!(
                    "{}: input {:?} does not match expected per-sample shape {:?}",
                    self.name,
                    x.shape(),
                    self.input_shape
                ),
            ));
        }
        Ok(())
    }

    pub fn forward_step(&mut self, x: &Tensor<F>, t: usize) -> Result<Tensor<F>> {
        if t != self.inputs.len() {
            return Err(Error::State(format!(
                "{}: expected step {} but got {t}",
                self.name,
                self.inputs.len()
            )));
        }
        self.check_input(x)?;
        let batch = x.dim(0);
        if t == 0 {
            self.samples += batch as u64;
        }
        if self.count_activity {
            self.activity += x.sum_f64();
        }
        let out = match self.kind {
            SynapseKind::Conv { padding, stride } => {
                let mut shape = vec![batch];
                shape.extend_from_slice(&self.input_shape);
                let x4 = x.clone().reshape(&shape)?;
                let y = conv2d(&x4, &self.weight.value, padding, stride)?;
                self.inputs.push(x4);
                y
            }
            SynapseKind::Linear => {
                let flat = x.clone().flatten_batch();
                let y = matmul(&flat, &self.weight.value)?;
                self.inputs.push(flat);
                y
            }
        };
        Ok(out)
    }

    /// Accumulates the weight gradient for step `t`; returns the input
    /// gradient (shaped `[B, ...input_shape]`) when requested.
    pub fn backward_step(
        &mut self,
        grad_out: &Tensor<F>,
        t: usize,
        need_input_grad: bool,
    ) -> Result<Option<Tensor<F>>> {
        let x = self
            .inputs
            .get(t)
            .ok_or_else(|| Error::State(format!("{}: no tape entry for step {t}", self.name)))?;
        let batch = x.dim(0);
        let mut expected = vec![batch];
        expected.extend_from_slice(&self.output_shape);
        if grad_out.shape() != expected.as_slice() {
            return Err(Error::shape(
                "synapse_backward",
                format!(
                    "{}: gradient {:?} does not match recorded batch output {expected:?}",
                    self.name,
                    grad_out.shape()
                ),
            ));
        }
        let mut in_shape = vec![batch];
        in_shape.extend_from_slice(&self.input_shape);
        match self.kind {
            SynapseKind::Conv { padding, stride } => {
                let (dx, dw) = conv2d_backward(
                    x,
                    &self.weight.value,
                    grad_out,
                    padding,
                    stride,
                    need_input_grad,
                )?;
                self.weight.grad.add_assign(&dw)?;
                Ok(dx)
            }
            SynapseKind::Linear => {
                let dw = matmul_tn(x, grad_out)?;
                self.weight.grad.add_assign(&dw)?;
                if need_input_grad {
                    let dx = matmul_nt(grad_out, &self.weight.value)?;
                    Ok(Some(dx.reshape(&in_shape)?))
                } else {
                    Ok(None)
                }
            }
        }
    }
}
