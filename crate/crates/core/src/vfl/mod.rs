//! Vertical federated training: clients own image regions and bottom (or
//! local) models, the server owns the labels and combines client outputs.
//! Only [`OutputMessage`] and [`GradientMessage`] cross between them.

mod engine;
mod loss;
mod message;
mod metrics;
mod protocol;

pub use engine::{
    epoch_order, train_batches, train_epoch_centralized, train_epoch_nosplit, train_epoch_split,
    Client, EpochReport, EvalReport, Execution, FederatedData, Federation, TrainConfig,
};
pub use loss::cross_entropy;
pub use message::{
    AuditRecord, Endpoint, GradientMessage, MessageChannel, OutputMessage, Payload, PayloadKind,
};
pub use metrics::MetricsReport;
pub use protocol::{
    Assembly, ConcatTop, NoSplitProtocol, Protocol, ProtocolRegistry, ServerStrategy,
    SplitProtocol, SumAggregator,
};
