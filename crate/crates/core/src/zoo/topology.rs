use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::conv_output_extent;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SkipKind {
    Identity,
    /// 1x1 convolution with its own normalisation.
    Projection,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LayerSpec {
    Conv {
        out_channels: usize,
        kernel: usize,
        padding: usize,
        stride: usize,
    },
    Pool {
        kernel: usize,
        stride: usize,
    },
    Linear {
        out_features: usize,
    },
    /// Two 3x3 convolutions plus a skip path.
    Residual {
        channels: usize,
        skip: SkipKind,
    },
}

impl LayerSpec {
    pub fn conv(out_channels: usize) -> Self {
        LayerSpec::Conv {
            out_channels,
            kernel: 3,
            padding: 1,
            stride: 1,
        }
    }

    pub fn pool() -> Self {
        LayerSpec::Pool {
            kernel: 2,
            stride: 2,
        }
    }

    pub fn linear(out_features: usize) -> Self {
        LayerSpec::Linear { out_features }
    }

    pub fn residual(channels: usize, skip: SkipKind) -> Self {
        LayerSpec::Residual { channels, skip }
    }

    /// Number of cut positions the descriptor occupies.
    pub fn positions(&self) -> usize {
        match self {
            LayerSpec::Residual { .. } => 2,
            _ => 1,
        }
    }

    /// Output shape (without batch) for a given input shape.
    pub fn output_shape(&self, input: &[usize]) -> std::result::Result<Vec<usize>, String> {
        let spatial = |what: &str| -> std::result::Result<(usize, usize, usize), String> {
            match *input {
                [c, h, w] => Ok((c, h, w)),
                _ => Err(format!("{what} needs a [C, H, W] input, got {input:?}")),
            }
        };
        match *self {
            LayerSpec::Conv {
                out_channels,
                kernel,
                padding,
                stride,
            } => {
                let (_, h, w) = spatial("conv")?;
                if out_channels == 0 || kernel == 0 {
                    return Err("conv needs positive channels and kernel".into());
                }
                let extent = |n| {
                    conv_output_extent(n, kernel, padding, stride).ok_or_else(|| {
                        format!("conv kernel {kernel} (padding {padding}, stride {stride}) does not fit input {h}x{w}")
                    })
                };
                Ok(vec![out_channels, extent(h)?, extent(w)?])
            }
            LayerSpec::Pool { kernel, stride } => {
                let (c, h, w) = spatial("pool")?;
                let extent = |n| {
                    conv_output_extent(n, kernel, 0, stride)
                        .ok_or_else(|| format!("pool window {kernel} does not fit input {h}x{w}"))
                };
                Ok(vec![c, extent(h)?, extent(w)?])
            }
            LayerSpec::Linear { out_features } => {
                if out_features == 0 {
                    return Err("linear needs at least one output".into());
                }
                Ok(vec![out_features])
            }
            LayerSpec::Residual { channels, skip } => {
                let (c, h, w) = spatial("residual block")?;
                if channels == 0 {
                    return Err("residual block needs positive channels".into());
                }
                if skip == SkipKind::Identity && c != channels {
                    return Err(format!(
                        "identity skip cannot map {c} channels to {channels}; use a projection"
                    ));
                }
                Ok(vec![channels, h, w])
            }
        }
    }

    /// Learnable parameters for the descriptor given its input shape.
    /// `affine_norm` adds a per-channel shift to every normalisation.
    pub fn param_count(&self, input: &[usize], steps: usize, affine_norm: bool) -> usize {
        let norm = |c: usize| c * steps * if affine_norm { 2 } else { 1 };
        match *self {
            LayerSpec::Conv {
                out_channels,
                kernel,
                ..
            } => input[0] * out_channels * kernel * kernel + norm(out_channels),
            LayerSpec::Pool { .. } => 0,
            LayerSpec::Linear { out_features } => input.iter().product::<usize>() * out_features,
            LayerSpec::Residual { channels, skip } => {
                let a = input[0] * channels * 9 + norm(channels);
                let b = channels * channels * 9 + norm(channels);
                let s = match skip {
                    SkipKind::Identity => 0,
                    SkipKind::Projection => input[0] * channels + norm(channels),
                };
                a + b + s
            }
        }
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            LayerSpec::Conv {
                out_channels,
                kernel,
                padding,
                stride,
            } => write!(f, "conv:{out_channels}:{kernel}:{padding}:{stride}"),
            LayerSpec::Pool { kernel, stride } => write!(f, "pool:{kernel}:{stride}"),
            LayerSpec::Linear { out_features } => write!(f, "linear:{out_features}"),
            LayerSpec::Residual { channels, skip } => {
                let s = match skip {
                    SkipKind::Identity => "id",
                    SkipKind::Projection => "proj",
                };
                write!(f, "res:{channels}:{s}")
            }
        }
    }
}

/// Parses `conv:O[:k[:p[:s]]]`, `pool[:k[:s]]`, `linear:O` or
/// `res:C[:id|proj]`. Omitted conv fields default to 3/1/1, pool to 2/2.
impl FromStr for LayerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').map(str::trim).collect();
        let num = |i: usize, default: Option<usize>| -> Result<usize> {
            match parts.get(i) {
                Some(v) => v
                    .parse()
                    .map_err(|_| Error::invalid(format!("layer `{s}`: `{v}` is not a count"))),
                None => {
                    default.ok_or_else(|| Error::invalid(format!("layer `{s}` is missing a field")))
                }
            }
        };
        let spec = match parts[0] {
            "conv" if parts.len() <= 5 => LayerSpec::Conv {
                out_channels: num(1, None)?,
                kernel: num(2, Some(3))?,
                padding: num(3, Some(1))?,
                stride: num(4, Some(1))?,
            },
            "pool" if parts.len() <= 3 => LayerSpec::Pool {
                kernel: num(1, Some(2))?,
                stride: num(2, Some(2))?,
            },
            "linear" if parts.len() == 2 => LayerSpec::Linear {
                out_features: num(1, None)?,
            },
            "res" if parts.len() <= 3 => LayerSpec::Residual {
                channels: num(1, None)?,
                skip: match parts.get(2).copied().unwrap_or("id") {
                    "id" => SkipKind::Identity,
                    "proj" => SkipKind::Projection,
                    other => return Err(Error::invalid(format!("unknown skip kind `{other}`"))),
                },
            },
            _ => return Err(Error::invalid(format!("cannot parse layer `{s}`"))),
        };
        if let LayerSpec::Conv { stride: 0, .. } | LayerSpec::Pool { stride: 0, .. } = spec {
            return Err(Error::invalid(format!(
                "layer `{s}`: stride must be positive"
            )));
        }
        Ok(spec)
    }
}

/// An ordered layer stack over a fixed `[C, H, W]` input. The last
/// descriptor is the linear classifier.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TopologySpec {
    pub name: String,
    pub input: [usize; 3],
    pub layers: Vec<LayerSpec>,
}

impl TopologySpec {
    pub fn new(name: impl Into<String>, input: [usize; 3], layers: Vec<LayerSpec>) -> Result<Self> {
        let spec = Self {
            name: name.into(),
            input,
            layers,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Comma-separated layer descriptors, e.g. `conv:8, pool, linear:10`.
    pub fn parse(name: impl Into<String>, input: [usize; 3], layers: &str) -> Result<Self> {
        let layers = layers
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(str::parse)
            .collect::<Result<Vec<_>>>()?;
        Self::new(name, input, layers)
    }

    pub fn describe(&self) -> String {
        self.layers
            .iter()
            .map(|l| l.to_string())
            .collect::<Vec<_>>()
            .join(",")
    }

    pub fn classes(&self) -> usize {
        match self.layers.last() {
            Some(LayerSpec::Linear { out_features }) => *out_features,
            _ => 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.layers.last() {
            None => {
                return Err(Error::Topology {
                    index: 0,
                    detail: "topology has no layers".into(),
                })
            }
            Some(LayerSpec::Linear { .. }) => {}
            Some(_) => {
                return Err(Error::Topology {
                    index: self.layers.len() - 1,
                    detail: "the last layer must be the linear classifier".into(),
                })
            }
        }
        self.shapes_from(0, &self.input).map(|_| ())
    }

    /// Shape after each descriptor from `start` on, given the input shape
    /// of descriptor `start`.
    pub fn shapes_from(&self, start: usize, input: &[usize]) -> Result<Vec<Vec<usize>>> {
        let mut shape = input.to_vec();
        let mut out = Vec::with_capacity(self.layers.len() - start);
        for (i, layer) in self.layers.iter().enumerate().skip(start) {
            shape = layer
                .output_shape(&shape)
                .map_err(|detail| Error::Topology { index: i, detail })?;
            out.push(shape.clone());
        }
        Ok(out)
    }

    pub fn positions(&self) -> usize {
        self.layers.iter().map(LayerSpec::positions).sum()
    }

    /// Bottoms take every descriptor before the trailing linear head.
    pub fn default_cut(&self) -> usize {
        let head = self
            .layers
            .iter()
            .rev()
            .take_while(|l| matches!(l, LayerSpec::Linear { .. }))
            .count();
        self.layers[..self.layers.len() - head]
            .iter()
            .map(LayerSpec::positions)
            .sum()
    }

    /// Descriptor index where the top begins for a cut after `cut`
    /// positions.
    pub fn cut_index(&self, cut: usize) -> Result<usize> {
        let total = self.positions();
        if cut == 0 || cut >= total {
            return Err(Error::invalid(format!(
                "cut layer {cut} outside [1, {total})"
            )));
        }
        let mut seen = 0;
        for (i, layer) in self.layers.iter().enumerate() {
            if seen == cut {
                return Ok(i);
            }
            seen += layer.positions();
            if seen > cut {
                return Err(Error::Topology {
                    index: i,
                    detail: format!("cut layer {cut} falls inside a residual block"),
                });
            }
        }
        unreachable!("cut < total positions")
    }

    /// Learnable parameter count from the descriptors alone.
    pub fn param_count(&self, steps: usize, affine_norm: bool) -> Result<usize> {
        self.range_param_count(0, self.layers.len(), &self.input, steps, affine_norm)
    }

    pub fn range_param_count(
        &self,
        start: usize,
        end: usize,
        input: &[usize],
        steps: usize,
        affine_norm: bool,
    ) -> Result<usize> {
        let shapes = self.shapes_from(start, input)?;
        let mut shape = input.to_vec();
        let mut total = 0;
        for (layer, out) in self.layers[start..end].iter().zip(&shapes) {
            total += layer.param_count(&shape, steps, affine_norm);
            shape = out.clone();
        }
        Ok(total)
    }
}
