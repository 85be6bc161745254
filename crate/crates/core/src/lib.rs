//! Fit runtime monitors on exported classifier tensors and evaluate them
//! both as out-of-distribution detectors and as detectors of the
//! classifier's own mistakes (out-of-model-scope).

pub mod bundle;
pub mod error;
pub mod eval;
pub mod monitors;
pub mod pipeline;
pub mod report;
pub mod stats;
pub mod synth;
pub mod tensor_io;

pub use bundle::{load_bundle, ClassifierHead, Matrix, OodKind, ScenarioBundle, Split};
pub use error::{Error, Result};
pub use monitors::{fit, MonitorConfig, MonitorKind, MonitorModel, ScoreVector};
pub use pipeline::{BenchmarkConfig, ScenarioSource};
pub use synth::{generate, SynthConfig};
pub use tensor_io::{read_container, write_container, Tensor, TensorContainer};
