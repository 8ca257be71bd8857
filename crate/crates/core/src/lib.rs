pub mod autograd;
pub mod checkpoint;
pub mod corpus;
pub mod detector;
pub mod encoder;
pub mod error;
pub mod fixtures;
pub mod metrics;
pub mod pipeline;
pub mod sentiment;
pub mod templating;
pub mod trainer;

pub use error::{Error, Result};
pub use corpus::{AbsaRecord, AspectInventory, Polarity};
pub use detector::AspectDetector;
pub use encoder::{BackboneKind, EncoderSpec};
pub use metrics::MetricReport;
pub use pipeline::{EvalMode, PipelineConfig};
pub use sentiment::{PolarityDistribution, SentimentPredictor};
pub use templating::{AspectMode, AspectModeKind, PairedText};
pub use trainer::Hyperparameters;
