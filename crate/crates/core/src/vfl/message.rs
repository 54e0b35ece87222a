use std::collections::{BTreeMap, VecDeque};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Endpoint {
    Server,
    Client(usize),
}

/// Client to server: the bottom (or local) model's output accumulated over
/// all steps, `[B, F]`.
#[derive(Clone, Debug, PartialEq)]
pub struct OutputMessage {
    pub client: usize,
    pub batch: usize,
    pub output: Tensor<f32>,
}

/// Server to client: `dL/d(output)` for the matching [`OutputMessage`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradientMessage {
    pub client: usize,
    pub batch: usize,
    pub grad: Tensor<f32>,
}

/// Everything that may cross the client/server boundary.
#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    Output(OutputMessage),
    Gradient(GradientMessage),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PayloadKind {
    Output,
    Gradient,
}

impl Payload {
    pub fn kind(&self) -> PayloadKind {
        match self {
            Payload::Output(_) => PayloadKind::Output,
            Payload::Gradient(_) => PayloadKind::Gradient,
        }
    }

    pub fn client(&self) -> usize {
        match self {
            Payload::Output(m) => m.client,
            Payload::Gradient(m) => m.client,
        }
    }

    pub fn batch(&self) -> usize {
        match self {
            Payload::Output(m) => m.batch,
            Payload::Gradient(m) => m.batch,
        }
    }

    pub fn tensor(&self) -> &Tensor<f32> {
        match self {
            Payload::Output(m) => &m.output,
            Payload::Gradient(m) => &m.grad,
        }
    }
}

/// What the channel saw, recorded when auditing is on.
#[derive(Clone, Debug, PartialEq)]
pub struct AuditRecord {
    pub from: Endpoint,
    pub to: Endpoint,
    pub payload: Payload,
}

/// In-process FIFO queues, one per receiving endpoint. Outputs may only
/// travel from their own client to the server and gradients only from the
/// server to their addressee.
#[derive(Debug, Default)]
pub struct MessageChannel {
    queues: BTreeMap<Endpoint, VecDeque<(Endpoint, Payload)>>,
    audit: Option<Vec<AuditRecord>>,
}

impl MessageChannel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn enable_audit(&mut self) {
        self.audit.get_or_insert_with(Vec::new);
    }

    pub fn audit_log(&self) -> &[AuditRecord] {
        self.audit.as_deref().unwrap_or(&[])
    }

    pub fn take_audit_log(&mut self) -> Vec<AuditRecord> {
        self.audit.as_mut().map(std::mem::take).unwrap_or_default()
    }

    pub fn send(&mut self, from: Endpoint, to: Endpoint, payload: Payload) -> Result<()> {
        let routed = match payload.kind() {
            PayloadKind::Output => {
                from == Endpoint::Client(payload.client()) && to == Endpoint::Server
            }
            PayloadKind::Gradient => {
                from == Endpoint::Server && to == Endpoint::Client(payload.client())
            }
        };
        if !routed {
            return Err(Error::Protocol(format!(
                "{:?} for client {} cannot travel {from:?} -> {to:?}",
                payload.kind(),
                payload.client()
            )));
        }
        if let Some(log) = self.audit.as_mut() {
            log.push(AuditRecord {
                from,
                to,
                payload: payload.clone(),
            });
        }
        self.queues
            .entry(to)
            .or_default()
            .push_back((from, payload));
        Ok(())
    }

    pub fn recv(&mut self, at: Endpoint) -> Option<(Endpoint, Payload)> {
        self.queues.get_mut(&at)?.pop_front()
    }

    pub fn pending(&self) -> usize {
        self.queues.values().map(VecDeque::len).sum()
    }
}
