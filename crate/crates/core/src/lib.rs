pub mod audio;
pub mod bpe;
pub mod cfm;
pub mod codec;
pub mod context;
pub mod corpus;
pub mod emcap;
pub mod embed;
pub mod emgpt;
pub mod metrics;
pub mod nn;
pub mod prosody;
pub mod toy;
pub mod harness;
