pub mod channel;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod learn;
pub mod link;
pub mod oracle;
pub mod pipeline;
pub mod rng;
pub mod scenario;
