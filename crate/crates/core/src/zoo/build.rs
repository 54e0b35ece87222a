use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec::RngStream;
use crate::error::{Error, Result};
use crate::neuro::{
    AvgPool, Layer, LifConfig, LifNeuron, Network, Neuron, NormConfig, Projection, Readout, Regime,
    ReluNeuron, Residual, Synapse, SynapseKind, TemporalNorm, Unit,
};
use crate::tensor::{Real, Tensor};
use crate::zoo::{LayerSpec, SkipKind, TopologySpec};

const INIT_TAG: u64 = 0x1417;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BuildOptions {
    pub regime: Regime,
    /// Simulation steps; ANN networks always run a single step.
    pub steps: usize,
    pub lif: LifConfig,
    pub norm: NormConfig,
}

impl BuildOptions {
    pub fn spiking(steps: usize) -> Self {
        Self {
            regime: Regime::Spiking,
            steps,
            lif: LifConfig::default(),
            norm: NormConfig::default(),
        }
    }

    pub fn ann() -> Self {
        Self {
            regime: Regime::Ann,
            steps: 1,
            lif: LifConfig::default(),
            norm: NormConfig::default(),
        }
    }

    pub fn effective_steps(&self) -> usize {
        match self.regime {
            Regime::Spiking => self.steps,
            Regime::Ann => 1,
        }
    }

    /// Parameter count of a spec built with these options.
    pub fn param_count(&self, spec: &TopologySpec) -> Result<usize> {
        spec.param_count(self.effective_steps(), self.regime == Regime::Ann)
    }

    fn validate(&self) -> Result<()> {
        if self.regime == Regime::Spiking {
            LifConfig {
                steps: self.steps,
                ..self.lif
            }
            .validate()?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FragmentRole {
    Monolithic,
    /// Bottom model (or full local model) of client `k`.
    Bottom(usize),
    Top,
}

#[derive(Clone, Debug)]
pub struct ModelFragment<F = f32> {
    pub role: FragmentRole,
    pub network: Network<F>,
    /// Descriptors of the source spec this fragment implements.
    pub layers: Range<usize>,
}

impl<F: Real> ModelFragment<F> {
    pub fn partition(&self) -> Option<usize> {
        match self.role {
            FragmentRole::Bottom(k) => Some(k),
            _ => None,
        }
    }
}

pub struct SplitModel<F = f32> {
    pub bottoms: Vec<ModelFragment<F>>,
    pub top: ModelFragment<F>,
}

/// Kaiming-uniform, `U(-b, b)` with `b = sqrt(6 / fan_in)`.
fn kaiming<F: Real>(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor<F> {
    let bound = (6.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| F::lit(rng.random_range(-bound..bound)))
}

struct Builder<'a> {
    opts: &'a BuildOptions,
    seed: u64,
    key: u64,
}

impl Builder<'_> {
    fn rng(&self, index: usize) -> ChaCha8Rng {
        let stream = RngStream::new(self.seed).derive_path(&[INIT_TAG, self.key, index as u64]);
        ChaCha8Rng::seed_from_u64(stream.seed())
    }

    fn norm<F: Real>(&self, channels: usize) -> TemporalNorm<F> {
        let ann = self.opts.regime == Regime::Ann;
        TemporalNorm::new(channels, self.opts.effective_steps(), ann, self.opts.norm)
    }

    fn neuron<F: Real>(&self) -> Neuron<F> {
        match self.opts.regime {
            Regime::Spiking => Neuron::Lif(LifNeuron::new(LifConfig {
                steps: self.opts.steps,
                ..self.opts.lif
            })),
            Regime::Ann => Neuron::Relu(ReluNeuron::default()),
        }
    }

    fn conv_projection<F: Real>(
        &self,
        name: String,
        input: &[usize],
        out_channels: usize,
        (kernel, padding, stride): (usize, usize, usize),
        rng: &mut ChaCha8Rng,
    ) -> Result<Projection<F>> {
        let fan_in = input[0] * kernel * kernel;
        let w = kaiming(&[out_channels, input[0], kernel, kernel], fan_in, rng);
        let kind = SynapseKind::Conv { padding, stride };
        let counting = self.opts.regime == Regime::Spiking;
        Ok(Projection {
            synapse: Synapse::new(name, kind, w, input, counting)?,
            norm: self.norm(out_channels),
        })
    }

    fn layer<F: Real>(
        &self,
        index: usize,
        spec: &LayerSpec,
        input: &[usize],
        readout: bool,
    ) -> Result<Layer<F>> {
        let mut rng = self.rng(index);
        let counting = self.opts.regime == Regime::Spiking;
        Ok(match *spec {
            LayerSpec::Conv {
                out_channels,
                kernel,
                padding,
                stride,
            } => Layer::Unit(Unit {
                projection: self.conv_projection(
                    format!("conv{index}"),
                    input,
                    out_channels,
                    (kernel, padding, stride),
                    &mut rng,
                )?,
                neuron: self.neuron(),
            }),
            LayerSpec::Pool { kernel, stride } => Layer::Pool(AvgPool::new(kernel, stride)),
            LayerSpec::Linear { out_features } => {
                let fan_in: usize = input.iter().product();
                let w = kaiming(&[fan_in, out_features], fan_in, &mut rng);
                let synapse = Synapse::new(
                    format!("fc{index}"),
                    SynapseKind::Linear,
                    w,
                    input,
                    counting,
                )?;
                if readout {
                    Layer::Readout(Readout { synapse })
                } else {
                    Layer::Unit(Unit {
                        projection: Projection {
                            synapse,
                            norm: self.norm(out_features),
                        },
                        neuron: self.neuron(),
                    })
                }
            }
            LayerSpec::Residual { channels, skip } => {
                let hidden = [channels, input[1], input[2]];
                let first = Unit {
                    projection: self.conv_projection(
                        format!("res{index}.a"),
                        input,
                        channels,
                        (3, 1, 1),
                        &mut rng,
                    )?,
                    neuron: self.neuron(),
                };
                let second = self.conv_projection(
                    format!("res{index}.b"),
                    &hidden,
                    channels,
                    (3, 1, 1),
                    &mut rng,
                )?;
                let skip = match skip {
                    SkipKind::Identity => None,
                    SkipKind::Projection => Some(self.conv_projection(
                        format!("res{index}.skip"),
                        input,
                        channels,
                        (1, 0, 1),
                        &mut rng,
                    )?),
                };
                Layer::Residual(Residual {
                    first,
                    second,
                    skip,
                    neuron: self.neuron(),
                })
            }
        })
    }

    /// Builds descriptors `range` of `spec` for the given input shape. The
    /// spec's final linear layer becomes a readout.
    fn network<F: Real>(
        &self,
        spec: &TopologySpec,
        range: Range<usize>,
        input: &[usize],
    ) -> Result<Network<F>> {
        let shapes = spec.shapes_from(range.start, input)?;
        let last = spec.layers.len() - 1;
        let mut layers = Vec::with_capacity(range.len());
        let mut shape = input.to_vec();
        for (offset, index) in range.clone().enumerate() {
            layers.push(self.layer(index, &spec.layers[index], &shape, index == last)?);
            shape = shapes[offset].clone();
        }
        Ok(Network::new(
            layers,
            input.to_vec(),
            shape,
            self.opts.regime,
            self.opts.effective_steps(),
        ))
    }
}

/// Monolithic model over the spec's full input. Weights are a pure
/// function of `(spec, options, seed)`.
pub fn build_model<F: Real>(
    spec: &TopologySpec,
    opts: &BuildOptions,
    seed: u64,
) -> Result<ModelFragment<F>> {
    spec.validate()?;
    opts.validate()?;
    let b = Builder { opts, seed, key: 0 };
    Ok(ModelFragment {
        role: FragmentRole::Monolithic,
        network: b.network(spec, 0..spec.layers.len(), &spec.input)?,
        layers: 0..spec.layers.len(),
    })
}

/// Full-depth local model for client `k` over its region's input shape.
/// Client 0 gets the same weights as [`build_model`] for the same seed.
pub fn build_local_model<F: Real>(
    spec: &TopologySpec,
    opts: &BuildOptions,
    seed: u64,
    client: usize,
    input: [usize; 3],
) -> Result<ModelFragment<F>> {
    spec.validate()?;
    opts.validate()?;
    let b = Builder {
        opts,
        seed,
        key: client as u64,
    };
    Ok(ModelFragment {
        role: FragmentRole::Bottom(client),
        network: b.network(spec, 0..spec.layers.len(), &input)?,
        layers: 0..spec.layers.len(),
    })
}

/// Splits `spec` after `cut` positions (conv, pool and linear layers count
/// one, residual blocks two). Bottom `k` is built for `bottom_inputs[k]`; the
/// top consumes the bottoms' outputs concatenated along channels in client
/// order.
pub fn split_model<F: Real>(
    spec: &TopologySpec,
    cut: usize,
    bottom_inputs: &[[usize; 3]],
    opts: &BuildOptions,
    seed: u64,
) -> Result<SplitModel<F>> {
    spec.validate()?;
    opts.validate()?;
    if bottom_inputs.is_empty() {
        return Err(Error::invalid("split model needs at least one bottom"));
    }
    let boundary = spec.cut_index(cut)?;
    let bottoms = bottom_inputs
        .iter()
        .enumerate()
        .map(|(k, input)| {
            let b = Builder {
                opts,
                seed,
                key: k as u64,
            };
            Ok(ModelFragment {
                role: FragmentRole::Bottom(k),
                network: b.network(spec, 0..boundary, input)?,
                layers: 0..boundary,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let first = bottoms[0].network.output_shape().to_vec();
    let mut top_input = first.clone();
    for (k, b) in bottoms.iter().enumerate().skip(1) {
        let shape = b.network.output_shape();
        if shape.len() != first.len() || shape[1..] != first[1..] {
            return Err(Error::shape(
                "split_model",
                format!("bottom {k} emits {shape:?} which cannot be concatenated with {first:?}"),
            ));
        }
        top_input[0] += shape[0];
    }
    let b = Builder { opts, seed, key: 0 };
    let top = ModelFragment {
        role: FragmentRole::Top,
        network: b.network(spec, boundary..spec.layers.len(), &top_input)?,
        layers: boundary..spec.layers.len(),
    };
    Ok(SplitModel { bottoms, top })
}
