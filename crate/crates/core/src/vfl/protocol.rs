use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::neuro::{sgd_update, EnergyProbe, RunMode, SgdConfig};
use crate::tensor::{concat_features, split_features, Real, Tensor};
use crate::zoo::{build_local_model, split_model, BuildOptions, ModelFragment, TopologySpec};

/// Server-side half of a protocol: turns the clients' accumulated outputs
/// into class scores and routes the loss gradient back to each client.
pub trait ServerStrategy: Send {
    fn name(&self) -> &'static str;

    /// Accumulated class scores `[B, C]` from the clients' outputs, in
    /// client order.
    fn combine(&mut self, outputs: &[Tensor<f32>], mode: RunMode) -> Result<Tensor<f32>>;

    /// `dL/d(o_k)` for every client, given `dL/d(scores)` for the last
    /// training-mode [`combine`](Self::combine).
    fn distribute(&mut self, grad: &Tensor<f32>) -> Result<Vec<Tensor<f32>>>;

    /// Applies the server's own parameter update, if it has parameters.
    fn update(&mut self, sgd: &SgdConfig);

    fn top(&self) -> Option<&ModelFragment>;

    fn energy_probes(&self) -> Vec<EnergyProbe> {
        self.top()
            .map(|t| t.network.energy_probes())
            .unwrap_or_default()
    }

    fn reset_counters(&mut self) {}
}

/// Model splitting: the top model runs on the clients' outputs concatenated
/// in client order. Each of its steps sees the concatenation divided by its
/// step count, so its accumulated input equals the concatenation.
#[derive(Clone, Debug)]
pub struct ConcatTop<F = f32> {
    top: ModelFragment<F>,
    widths: Vec<usize>,
}

impl<F: Real> ConcatTop<F> {
    pub fn new(top: ModelFragment<F>, widths: Vec<usize>) -> Result<Self> {
        let total: usize = widths.iter().sum();
        let want: usize = top.network.input_shape().iter().product();
        if total != want {
            return Err(Error::shape(
                "concat_top",
                format!("bottom widths {widths:?} sum to {total} but the top takes {want}"),
            ));
        }
        Ok(Self { top, widths })
    }

    pub fn fragment(&self) -> &ModelFragment<F> {
        &self.top
    }

    pub fn fragment_mut(&mut self) -> &mut ModelFragment<F> {
        &mut self.top
    }

    pub fn combine(&mut self, outputs: &[Tensor<F>], mode: RunMode) -> Result<Tensor<F>> {
        check_widths("split", outputs, &self.widths)?;
        let steps = self.top.network.steps();
        let mut replay = concat_features(outputs)?;
        replay.scale_in_place(F::lit(1.0 / steps as f64));
        let mut shape = vec![replay.dim(0)];
        shape.extend_from_slice(self.top.network.input_shape());
        let replay = replay.reshape(&shape)?;
        let frames = vec![replay; steps];
        self.top.network.forward(&frames, mode)
    }

    pub fn distribute(&mut self, grad: &Tensor<F>) -> Result<Vec<Tensor<F>>> {
        self.top.network.zero_grad();
        let per_step = self
            .top
            .network
            .backward(grad, true)?
            .expect("input gradient requested");
        let steps = per_step.len();
        let mut total = per_step[0].clone().flatten_batch();
        for g in &per_step[1..] {
            total.add_assign(&g.clone().flatten_batch())?;
        }
        total.scale_in_place(F::lit(1.0 / steps as f64));
        split_features(&total, &self.widths)
    }
}

impl ServerStrategy for ConcatTop<f32> {
    fn name(&self) -> &'static str {
        "split"
    }

    fn combine(&mut self, outputs: &[Tensor<f32>], mode: RunMode) -> Result<Tensor<f32>> {
        ConcatTop::combine(self, outputs, mode)
    }

    fn distribute(&mut self, grad: &Tensor<f32>) -> Result<Vec<Tensor<f32>>> {
        ConcatTop::distribute(self, grad)
    }

    fn update(&mut self, sgd: &SgdConfig) {
        sgd_update(self.top.network.params_mut(), sgd);
    }

    fn top(&self) -> Option<&ModelFragment> {
        Some(&self.top)
    }

    fn reset_counters(&mut self) {
        self.top.network.reset_counters();
    }
}

/// No model splitting: the clients' class scores are summed in client
/// order, so every client receives the same gradient.
#[derive(Clone, Debug)]
pub struct SumAggregator {
    clients: usize,
    classes: usize,
}

impl SumAggregator {
    pub fn new(clients: usize, classes: usize) -> Self {
        Self { clients, classes }
    }

    pub fn sum<F: Real>(&self, outputs: &[Tensor<F>]) -> Result<Tensor<F>> {
        check_widths("no-split", outputs, &vec![self.classes; self.clients])?;
        let mut total = Tensor::zeros(outputs[0].shape());
        for o in outputs {
            total.add_assign(o)?;
        }
        Ok(total)
    }
}

impl ServerStrategy for SumAggregator {
    fn name(&self) -> &'static str {
        "no-split"
    }

    fn combine(&mut self, outputs: &[Tensor<f32>], _mode: RunMode) -> Result<Tensor<f32>> {
        self.sum(outputs)
    }

    fn distribute(&mut self, grad: &Tensor<f32>) -> Result<Vec<Tensor<f32>>> {
        Ok(vec![grad.clone(); self.clients])
    }

    fn update(&mut self, _sgd: &SgdConfig) {}

    fn top(&self) -> Option<&ModelFragment> {
        None
    }
}

fn check_widths<F: Real>(protocol: &str, outputs: &[Tensor<F>], widths: &[usize]) -> Result<()> {
    if outputs.len() != widths.len() {
        return Err(Error::Protocol(format!(
            "{protocol}: {} client outputs for {} clients",
            outputs.len(),
            widths.len()
        )));
    }
    let batch = outputs[0].dim(0);
    for (k, (o, &w)) in outputs.iter().zip(widths).enumerate() {
        if o.rank() != 2 || o.dim(1) != w || o.dim(0) != batch {
            return Err(Error::Protocol(format!(
                "{protocol}: client {k} sent {:?}, expected [{batch}, {w}]",
                o.shape()
            )));
        }
    }
    Ok(())
}

/// Client models plus the server strategy they were built for.
pub struct Assembly {
    pub clients: Vec<ModelFragment>,
    pub server: Box<dyn ServerStrategy>,
}

/// A way of distributing one topology across clients and a server.
pub trait Protocol: Send + Sync {
    fn name(&self) -> &'static str;

    /// `inputs[k]` is client `k`'s per-sample input shape. `cut` only
    /// applies to protocols that split the topology.
    fn assemble(
        &self,
        spec: &TopologySpec,
        opts: &BuildOptions,
        inputs: &[[usize; 3]],
        seed: u64,
        cut: Option<usize>,
    ) -> Result<Assembly>;
}

pub struct SplitProtocol;
pub struct NoSplitProtocol;

impl Protocol for SplitProtocol {
    fn name(&self) -> &'static str {
        "split"
    }

    fn assemble(
        &self,
        spec: &TopologySpec,
        opts: &BuildOptions,
        inputs: &[[usize; 3]],
        seed: u64,
        cut: Option<usize>,
    ) -> Result<Assembly> {
        let cut = cut.unwrap_or_else(|| spec.default_cut());
        let model = split_model(spec, cut, inputs, opts, seed)?;
        let widths = model
            .bottoms
            .iter()
            .map(|b| b.network.output_width())
            .collect();
        Ok(Assembly {
            clients: model.bottoms,
            server: Box::new(ConcatTop::new(model.top, widths)?),
        })
    }
}

impl Protocol for NoSplitProtocol {
    fn name(&self) -> &'static str {
        "no-split"
    }

    fn assemble(
        &self,
        spec: &TopologySpec,
        opts: &BuildOptions,
        inputs: &[[usize; 3]],
        seed: u64,
        _cut: Option<usize>,
    ) -> Result<Assembly> {
        let clients = inputs
            .iter()
            .enumerate()
            .map(|(k, &input)| build_local_model(spec, opts, seed, k, input))
            .collect::<Result<Vec<_>>>()?;
        Ok(Assembly {
            server: Box::new(SumAggregator::new(clients.len(), spec.classes())),
            clients,
        })
    }
}

#[derive(Clone)]
pub struct ProtocolRegistry {
    protocols: BTreeMap<&'static str, Arc<dyn Protocol>>,
}

impl Default for ProtocolRegistry {
    fn default() -> Self {
        let mut r = Self {
            protocols: BTreeMap::new(),
        };
        r.register(Arc::new(SplitProtocol));
        r.register(Arc::new(NoSplitProtocol));
        r
    }
}

impl ProtocolRegistry {
    pub fn register(&mut self, protocol: Arc<dyn Protocol>) {
        self.protocols.insert(protocol.name(), protocol);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn Protocol>> {
        self.protocols.get(name).cloned().ok_or_else(|| {
            Error::invalid(format!(
                "unknown protocol `{name}` (known: {})",
                self.names().join(", ")
            ))
        })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.protocols.keys().copied().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_checks_logit_width() {
        let agg = SumAggregator::new(2, 3);
        let ok = [
            Tensor::<f32>::full(&[2, 3], 1.0),
            Tensor::full(&[2, 3], 2.0),
        ];
        assert_eq!(agg.sum(&ok).unwrap().data(), &[3.0; 6]);
        let bad = [Tensor::<f32>::zeros(&[2, 3]), Tensor::zeros(&[2, 4])];
        assert!(matches!(agg.sum(&bad), Err(Error::Protocol(_))));
        assert!(agg.sum(&ok[..1]).is_err());
    }

    #[test]
    fn registry_lookup() {
        let reg = ProtocolRegistry::default();
        assert_eq!(reg.names(), vec!["no-split", "split"]);
        assert!(reg.get("gossip").is_err());
    }
}
