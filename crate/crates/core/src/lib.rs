pub mod cli;
pub mod corpus;
pub mod dsp;
pub mod embio;
pub mod encoder;
pub mod eval;
pub mod nn;
pub mod probe;
pub mod rng;
pub mod synth;
pub mod wav;
