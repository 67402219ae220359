//! Small CPU neural-network toolkit for volumetric models: a dense tensor,
//! layers with hand-written backward passes, Adam, and a flat parameter
//! checkpoint format. Generic over `f32`/`f64`.

pub mod checkpoint;
pub mod init;
pub mod layers;
pub mod optim;
pub mod real;
pub mod tensor;

pub use layers::{Layer, Param, Sequential};
pub use optim::Adam;
pub use real::Real;
pub use tensor::Tensor;

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed checkpoint {path}: {message}")]
    Format { path: PathBuf, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Zero the gradients of every parameter in the list.
pub fn zero_grads<T: Real>(params: Vec<&mut Param<T>>) {
    for p in params {
        p.zero_grad();
    }
}
