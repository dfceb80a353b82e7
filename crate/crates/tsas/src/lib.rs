//! Test-time self-adaptation runner: dataset handling, synthetic corpora,
//! generation backends, the adaptation pipeline, and checkpointing. The
//! algorithmic core lives in `tsas-core`; this crate supplies everything
//! that touches the outside world.

pub mod backends;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod pipeline;
pub mod synth;

pub use backends::{HttpGenerator, HttpOptions, MockGenerator};
pub use config::AppConfig;
pub use pipeline::{
    pretrain_supervised, run_variant, sweep, AdaptiveBackend, PipelineError, RunOutcome,
    SweepPoint, SweepValues, Unlabeled,
};
pub use synth::{synthesize, SynthCorpus, SynthSpec};
