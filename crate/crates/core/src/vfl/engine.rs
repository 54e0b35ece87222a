use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::codec::{decode_rate, poisson_encode, RngStream};
use crate::data::{partition, Dataset, PartitionSpec, VerticalView};
use crate::energy::{EnergyConstants, EnergyLedger};
use crate::error::{Error, Result};
use crate::neuro::{sgd_update, Regime, RunMode, SgdConfig};
use crate::tensor::Tensor;
use crate::vfl::{
    cross_entropy, Assembly, Endpoint, GradientMessage, MessageChannel, MetricsReport,
    OutputMessage, Payload, ProtocolRegistry, ServerStrategy,
};
use crate::zoo::{BuildOptions, ModelFragment, TopologySpec};

const SHUFFLE_TAG: u64 = 0x5348;
const ENCODE_TAG: u64 = 0x454e;
const TRAIN_PHASE: u64 = 0;
const EVAL_PHASE: u64 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Client work within a batch runs on the rayon pool.
    Parallel,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub steps: usize,
    /// Client-side learning rate.
    pub bottom_lr: f64,
    /// Server-side (top model) learning rate.
    pub top_lr: f64,
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub regime: Regime,
    pub seed: u64,
    pub execution: Execution,
}

impl TrainConfig {
    /// Learning rates may be zero here (frozen parameters); everything else
    /// must be a usable training setup.
    pub fn validate(&self) -> Result<()> {
        let fail = |field: &str, why: &str| Err(Error::invalid(format!("{field}: {why}")));
        if self.epochs == 0 {
            return fail("epochs", "must be at least 1");
        }
        if self.steps == 0 {
            return fail("time steps", "must be at least 1");
        }
        if self.regime == Regime::Ann && self.steps != 1 {
            return fail("time steps", "ANN training runs exactly one step");
        }
        if self.batch_size < 2 {
            return fail("batch size", "batch statistics need at least 2 samples");
        }
        for (field, v) in [
            ("bottom learning rate", self.bottom_lr),
            ("top learning rate", self.top_lr),
            ("momentum", self.momentum),
            ("weight decay", self.weight_decay),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return fail(field, "must be finite and non-negative");
            }
        }
        Ok(())
    }

    fn client_sgd(&self) -> SgdConfig {
        SgdConfig {
            lr: self.bottom_lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
        }
    }

    fn server_sgd(&self) -> SgdConfig {
        SgdConfig {
            lr: self.top_lr,
            ..self.client_sgd()
        }
    }
}

/// Training-set order for `epoch`: a seeded shuffle of `0..n`.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let stream = RngStream::new(seed).derive_path(&[SHUFFLE_TAG, epoch as u64]);
    let mut rng = ChaCha8Rng::seed_from_u64(stream.seed());
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Training batches for `epoch`. A trailing batch too small for batch
/// statistics is dropped.
pub fn train_batches(n: usize, cfg: &TrainConfig, epoch: usize) -> Vec<Vec<usize>> {
    epoch_order(n, cfg.seed, epoch)
        .chunks(cfg.batch_size)
        .filter(|c| c.len() >= 2)
        .map(<[usize]>::to_vec)
        .collect()
}

fn eval_batches(n: usize, batch_size: usize) -> Vec<Vec<usize>> {
    (0..n)
        .collect::<Vec<_>>()
        .chunks(batch_size)
        .map(<[usize]>::to_vec)
        .collect()
}

/// Network input frames for one client's crop of a batch: a Poisson spike
/// train for spiking models, the raw pixels for ANN models.
/// Which pass a client forward belongs to; keys the encoder stream.
#[derive(Clone, Copy)]
struct Pass {
    phase: u64,
    epoch: usize,
    mode: RunMode,
}

fn encode(
    pixels: Tensor<f32>,
    cfg: &TrainConfig,
    client: usize,
    phase: u64,
    epoch: usize,
    batch: usize,
) -> Result<Vec<Tensor<f32>>> {
    match cfg.regime {
        Regime::Ann => Ok(vec![pixels]),
        Regime::Spiking => {
            let stream = RngStream::new(cfg.seed).derive_path(&[
                ENCODE_TAG,
                client as u64,
                phase,
                epoch as u64,
                batch as u64,
            ]);
            Ok(poisson_encode(&pixels, cfg.steps, &stream)?.into_frames())
        }
    }
}

/// What the server can see: the labels. Clients get only their own view.
pub struct FederatedData<'a> {
    views: Vec<VerticalView<'a>>,
    labels: &'a [usize],
    classes: usize,
}

impl<'a> FederatedData<'a> {
    pub fn new(ds: &'a Dataset, spec: &PartitionSpec) -> Result<Self> {
        Ok(Self {
            views: partition(ds, spec)?,
            labels: ds.labels(),
            classes: ds.classes(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn views(&self) -> &[VerticalView<'a>] {
        &self.views
    }
}

#[derive(Clone, Debug)]
pub struct EpochReport {
    pub epoch: usize,
    pub batch_losses: Vec<f64>,
    /// Mean of `batch_losses`.
    pub loss: f64,
    /// Predictions made on the training batches while training.
    pub metrics: MetricsReport,
    pub ledger: EnergyLedger,
}

#[derive(Clone, Debug)]
pub struct EvalReport {
    pub loss: f64,
    pub metrics: MetricsReport,
    pub ledger: EnergyLedger,
}

pub struct Client {
    id: usize,
    model: ModelFragment,
}

impl Client {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn model(&self) -> &ModelFragment {
        &self.model
    }

    pub fn model_mut(&mut self) -> &mut ModelFragment {
        &mut self.model
    }

    fn forward(
        &mut self,
        view: &VerticalView<'_>,
        indices: &[usize],
        cfg: &TrainConfig,
        pass: Pass,
        batch: usize,
    ) -> Result<OutputMessage> {
        let frames = encode(
            view.batch(indices)?,
            cfg,
            self.id,
            pass.phase,
            pass.epoch,
            batch,
        )?;
        let output = self.model.network.forward(&frames, pass.mode)?;
        Ok(OutputMessage {
            client: self.id,
            batch,
            output,
        })
    }

    fn apply_gradient(&mut self, msg: &GradientMessage, sgd: &SgdConfig) -> Result<()> {
        self.model.network.zero_grad();
        self.model.network.backward(&msg.grad, false)?;
        sgd_update(self.model.network.params_mut(), sgd);
        Ok(())
    }
}

/// `K` clients and a server exchanging messages over an in-process channel.
pub struct Federation {
    clients: Vec<Client>,
    server: Box<dyn ServerStrategy>,
    channel: MessageChannel,
    cfg: TrainConfig,
    constants: EnergyConstants,
}

impl Federation {
    pub fn new(assembly: Assembly, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if assembly.clients.is_empty() {
            return Err(Error::invalid("a federation needs at least one client"));
        }
        for (k, m) in assembly.clients.iter().enumerate() {
            if m.network.steps() != cfg.steps || m.network.regime() != cfg.regime {
                return Err(Error::invalid(format!(
                    "client {k} model was built for {} {} steps, config asks for {} {}",
                    m.network.steps(),
                    m.network.regime().as_str(),
                    cfg.steps,
                    cfg.regime.as_str()
                )));
            }
        }
        Ok(Self {
            clients: assembly
                .clients
                .into_iter()
                .enumerate()
                .map(|(id, model)| Client { id, model })
                .collect(),
            server: assembly.server,
            channel: MessageChannel::new(),
            cfg,
            constants: EnergyConstants::default(),
        })
    }

    /// Builds client and server models for `protocol` from the registry.
    pub fn assemble(
        registry: &ProtocolRegistry,
        protocol: &str,
        spec: &TopologySpec,
        partition: &PartitionSpec,
        opts: &BuildOptions,
        cut: Option<usize>,
        cfg: TrainConfig,
    ) -> Result<Self> {
        let inputs: Vec<[usize; 3]> = (0..partition.k())
            .map(|k| partition.input_shape(spec.input[0], k))
            .collect();
        let assembly = registry
            .get(protocol)?
            .assemble(spec, opts, &inputs, cfg.seed, cut)?;
        Self::new(assembly, cfg)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn set_execution(&mut self, execution: Execution) {
        self.cfg.execution = execution;
    }

    pub fn protocol(&self) -> &'static str {
        self.server.name()
    }

    pub fn clients(&self) -> &[Client] {
        &self.clients
    }

    pub fn clients_mut(&mut self) -> &mut [Client] {
        &mut self.clients
    }

    pub fn server(&self) -> &dyn ServerStrategy {
        self.server.as_ref()
    }

    pub fn channel_mut(&mut self) -> &mut MessageChannel {
        &mut self.channel
    }

    pub fn channel(&self) -> &MessageChannel {
        &self.channel
    }

    fn for_each_client<T: Send>(
        &mut self,
        f: impl Fn(&mut Client) -> Result<T> + Sync + Send,
    ) -> Result<Vec<T>> {
        match self.cfg.execution {
            Execution::Sequential => self.clients.iter_mut().map(f).collect(),
            Execution::Parallel => self.clients.par_iter_mut().map(f).collect(),
        }
    }

    fn check_data(&self, data: &FederatedData<'_>) -> Result<()> {
        if data.views.len() != self.clients.len() {
            return Err(Error::invalid(format!(
                "{} data views for {} clients",
                data.views.len(),
                self.clients.len()
            )));
        }
        if data.is_empty() {
            return Err(Error::invalid("empty dataset"));
        }
        Ok(())
    }

    /// Clients post their outputs; the server collects them in client order.
    fn gather_outputs(
        &mut self,
        outputs: Vec<OutputMessage>,
        batch: usize,
    ) -> Result<Vec<Tensor<f32>>> {
        for m in outputs {
            self.channel.send(
                Endpoint::Client(m.client),
                Endpoint::Server,
                Payload::Output(m),
            )?;
        }
        let mut received = Vec::with_capacity(self.clients.len());
        for k in 0..self.clients.len() {
            match self.channel.recv(Endpoint::Server) {
                Some((_, Payload::Output(m))) if m.client == k && m.batch == batch => {
                    received.push(m.output)
                }
                Some((from, p)) => {
                    return Err(Error::Protocol(format!(
                        "server expected output of client {k} for batch {batch}, got {:?} of client {} for batch {} from {from:?}",
                        p.kind(),
                        p.client(),
                        p.batch()
                    )))
                }
                None => {
                    return Err(Error::Protocol(format!(
                        "client {k} sent no output for batch {batch}"
                    )))
                }
            }
        }
        Ok(received)
    }

    fn collect_ledger(&self) -> EnergyLedger {
        let mut ledger = EnergyLedger::new(self.cfg.steps);
        for c in &self.clients {
            ledger.record(
                &format!("client{}/", c.id),
                &c.model.network.energy_probes(),
                &self.constants,
            );
        }
        ledger.record("server/", &self.server.energy_probes(), &self.constants);
        ledger
    }

    fn reset_counters(&mut self) {
        for c in &mut self.clients {
            c.model.network.reset_counters();
        }
        self.server.reset_counters();
    }

    /// One pass over `data`: per batch, client forwards, server loss and
    /// update, gradient fan-out, client updates.
    pub fn train_epoch(&mut self, data: &FederatedData<'_>, epoch: usize) -> Result<EpochReport> {
        self.check_data(data)?;
        self.reset_counters();
        let cfg = self.cfg;
        let client_sgd = cfg.client_sgd();
        let mut losses = Vec::new();
        let mut predictions = Vec::new();
        let mut seen = Vec::new();
        for (batch, indices) in train_batches(data.len(), &cfg, epoch).iter().enumerate() {
            let views = &data.views;
            let outputs = self.for_each_client(|c| {
                let pass = Pass {
                    phase: TRAIN_PHASE,
                    epoch,
                    mode: RunMode::TRAIN,
                };
                c.forward(&views[c.id], indices, &cfg, pass, batch)
            })?;
            let shapes: Vec<Vec<usize>> =
                outputs.iter().map(|m| m.output.shape().to_vec()).collect();
            let received = self.gather_outputs(outputs, batch)?;

            let labels: Vec<usize> = indices.iter().map(|&i| data.labels[i]).collect();
            let scores = self.server.combine(&received, RunMode::TRAIN)?;
            let (rates, preds) = decode_rate(&scores, cfg.steps)?;
            let (loss, mut grad) = cross_entropy(&rates, &labels)?;
            grad.scale_in_place(1.0 / cfg.steps as f32);
            let grads = self.server.distribute(&grad)?;
            self.server.update(&cfg.server_sgd());
            for (k, g) in grads.into_iter().enumerate() {
                let msg = GradientMessage {
                    client: k,
                    batch,
                    grad: g,
                };
                self.channel.send(
                    Endpoint::Server,
                    Endpoint::Client(k),
                    Payload::Gradient(msg),
                )?;
            }

            let mut inbox = Vec::with_capacity(self.clients.len());
            for (k, shape) in shapes.iter().enumerate() {
                match self.channel.recv(Endpoint::Client(k)) {
                    Some((_, Payload::Gradient(m)))
                        if m.batch == batch && m.grad.shape() == shape.as_slice() =>
                    {
                        inbox.push(m)
                    }
                    other => {
                        return Err(Error::Protocol(format!(
                        "client {k} expected a {shape:?} gradient for batch {batch}, got {other:?}"
                    )))
                    }
                }
            }
            let inbox = &inbox;
            self.for_each_client(|c| c.apply_gradient(&inbox[c.id], &client_sgd))?;

            losses.push(loss);
            predictions.extend(preds);
            seen.extend(labels);
        }
        if losses.is_empty() {
            return Err(Error::invalid(
                "dataset too small for a single training batch",
            ));
        }
        let loss = losses.iter().sum::<f64>() / losses.len() as f64;
        Ok(EpochReport {
            epoch,
            loss,
            batch_losses: losses,
            metrics: MetricsReport::from_predictions(&predictions, &seen, data.classes)?,
            ledger: self.collect_ledger(),
        })
    }

    /// Inference with frozen normalisation statistics over all of `data`.
    pub fn evaluate(&mut self, data: &FederatedData<'_>) -> Result<EvalReport> {
        self.check_data(data)?;
        self.reset_counters();
        let cfg = self.cfg;
        let mut predictions = Vec::with_capacity(data.len());
        let mut loss_sum = 0.0;
        for (batch, indices) in eval_batches(data.len(), cfg.batch_size).iter().enumerate() {
            let views = &data.views;
            let outputs = self.for_each_client(|c| {
                let pass = Pass {
                    phase: EVAL_PHASE,
                    epoch: 0,
                    mode: RunMode::EVAL,
                };
                c.forward(&views[c.id], indices, &cfg, pass, batch)
            })?;
            let received = self.gather_outputs(outputs, batch)?;
            let labels: Vec<usize> = indices.iter().map(|&i| data.labels[i]).collect();
            let scores = self.server.combine(&received, RunMode::EVAL)?;
            let (rates, preds) = decode_rate(&scores, cfg.steps)?;
            let (loss, _) = cross_entropy(&rates, &labels)?;
            loss_sum += loss * indices.len() as f64;
            predictions.extend(preds);
        }
        Ok(EvalReport {
            loss: loss_sum / data.len() as f64,
            metrics: MetricsReport::from_predictions(&predictions, data.labels, data.classes)?,
            ledger: self.collect_ledger(),
        })
    }
}

/// [`Federation::train_epoch`] for a federation built with model splitting.
pub fn train_epoch_split(
    fed: &mut Federation,
    data: &FederatedData<'_>,
    epoch: usize,
) -> Result<EpochReport> {
    if fed.protocol() != "split" {
        return Err(Error::invalid(format!(
            "federation runs `{}`, not split",
            fed.protocol()
        )));
    }
    fed.train_epoch(data, epoch)
}

/// [`Federation::train_epoch`] for a federation built without model splitting.
pub fn train_epoch_nosplit(
    fed: &mut Federation,
    data: &FederatedData<'_>,
    epoch: usize,
) -> Result<EpochReport> {
    if fed.protocol() != "no-split" {
        return Err(Error::invalid(format!(
            "federation runs `{}`, not no-split",
            fed.protocol()
        )));
    }
    fed.train_epoch(data, epoch)
}

/// Conventional single-party training on whole images, drawing batches and
/// spike trains exactly as client 0 of a federation would.
pub fn train_epoch_centralized(
    model: &mut ModelFragment,
    ds: &Dataset,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<EpochReport> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::invalid("empty dataset"));
    }
    model.network.reset_counters();
    let sgd = cfg.client_sgd();
    let mut losses = Vec::new();
    let mut predictions = Vec::new();
    let mut seen = Vec::new();
    for (batch, indices) in train_batches(ds.len(), cfg, epoch).iter().enumerate() {
        let frames = encode(ds.gather(indices)?, cfg, 0, TRAIN_PHASE, epoch, batch)?;
        let scores = model.network.forward(&frames, RunMode::TRAIN)?;
        let labels: Vec<usize> = indices.iter().map(|&i| ds.labels()[i]).collect();
        let (rates, preds) = decode_rate(&scores, cfg.steps)?;
        let (loss, mut grad) = cross_entropy(&rates, &labels)?;
        grad.scale_in_place(1.0 / cfg.steps as f32);
        model.network.zero_grad();
        model.network.backward(&grad, false)?;
        sgd_update(model.network.params_mut(), &sgd);
        losses.push(loss);
        predictions.extend(preds);
        seen.extend(labels);
    }
    if losses.is_empty() {
        return Err(Error::invalid(
            "dataset too small for a single training batch",
        ));
    }
    let mut ledger = EnergyLedger::new(cfg.steps);
    ledger.record(
        "",
        &model.network.energy_probes(),
        &EnergyConstants::default(),
    );
    Ok(EpochReport {
        epoch,
        loss: losses.iter().sum::<f64>() / losses.len() as f64,
        batch_losses: losses,
        metrics: MetricsReport::from_predictions(&predictions, &seen, ds.classes())?,
        ledger,
    })
}
