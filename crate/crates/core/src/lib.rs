//! Single-step radar precipitation nowcasting on a regular grid.
//!
//! The engine treats every grid cell as a node of a graph whose adjacency is
//! *learned* from data rather than taken from spatial proximity. A forecast
//! model combines three ingredients:
//!
//! * a sparse directed adjacency built from trainable node embeddings,
//!   pruned to the strongest `k` neighbours per row ([`graph`]);
//! * graph convolutions that propagate cell state along that adjacency and
//!   mix the propagation depths with learned weights ([`gcn`]);
//! * gated inception convolutions over the time axis that collapse an input
//!   window into a single-step prediction ([`temporal`]).
//!
//! Everything is trained with reverse-mode automatic differentiation on a
//! small tape-based tensor substrate ([`tensor`]) using Adam with decoupled
//! weight decay. The [`data`] module synthesizes and prepares radar
//! sequences (channel augmentation, downsampling, reflectivity/rain-rate
//! conversion, chronological splits), and [`verify`] scores forecasts with
//! masked error statistics, categorical skill, and radially averaged power
//! spectra.
//!
//! All randomness flows from explicit `u64` seeds through a counter-based
//! generator, and every kernel is sequential with a fixed reduction order,
//! so repeated runs with the same seed produce bitwise-identical models,
//! logs, and files.

pub mod data;
pub mod error;
pub mod gcn;
pub mod graph;
pub mod model;
pub mod scalar;
pub mod temporal;
pub mod tensor;
pub mod verify;

pub use data::{Normalizer, NowcastDataset, RadarSequence, Split};
pub use error::{CoreError, Result};
pub use model::{train, NowcastConfig, NowcastModel, TrainingLog};
pub use scalar::Scalar;
pub use tensor::{Param, Tape, Tensor, TensorRef};
pub use verify::{evaluate, evaluate_split, EvalOptions, Forecaster, MetricReport};
