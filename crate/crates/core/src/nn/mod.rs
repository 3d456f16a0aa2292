//! Minimal dense autograd shared by the autoregressive model and the flow-matching field.

mod adam;
mod params;
mod tape;

pub use adam::{Adam, AdamConfig};
pub use params::{Grads, ParamId, ParamStore};
pub use tape::{Mat, Tape, Var};

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("parameter layout mismatch: {0}")]
    Layout(String),
}

/// Column-wise sinusoidal embedding of a scalar, `[sin(f_k s), cos(f_k s)]` with
/// geometrically spaced frequencies.
pub fn sinusoidal_embedding(value: f64, dim: usize, max_freq: f64) -> Vec<f64> {
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for k in 0..half {
        let freq = max_freq.powf(k as f64 / half.max(1) as f64);
        out.push((value * freq).sin());
    }
    for k in 0..half {
        let freq = max_freq.powf(k as f64 / half.max(1) as f64);
        out.push((value * freq).cos());
    }
    out.resize(dim, 0.0);
    out
}
