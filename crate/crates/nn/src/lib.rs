//! Double-precision neural-network primitives and the regression model zoo.
//!
//! Sequences are `(batch, timesteps, channels)` arrays paired with a boolean
//! mask; every layer treats masked steps as absent.

pub mod error;
pub mod gradcheck;
pub mod init;
pub mod layers;
pub mod loss;
pub mod model;
pub mod optim;
pub mod param;
pub mod snapshot;
pub mod spec;
pub mod tensor;
pub mod zoo;

pub use error::{NnError, Result};
pub use layers::{CellKind, Context, Layer};
pub use loss::weighted_mse;
pub use model::{LayerSummary, Model};
pub use optim::Adam;
pub use param::{Param, Regularizer};
pub use snapshot::Snapshot;
pub use spec::{LayerSpec, ModelKind, ModelSpec};
pub use tensor::Batch;
pub use zoo::ZooParams;
