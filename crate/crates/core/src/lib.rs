//! Toy-scale laboratory for flow matching on low-dimensional manifolds
//! embedded in high-dimensional spaces, with semantic latent codecs.

pub mod codec;
pub mod error;
pub mod flow;
pub mod lab;
pub mod manifold;
pub mod metrics;
pub mod numeric;
pub mod oracle;
pub mod par;
pub mod rng;

pub use error::{LabError, Result};
