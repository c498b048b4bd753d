//! Explicit ReLU network constructions for products, maxima and Lipschitz
//! functions, a calculus for composing and parallelizing them, a pipeline
//! that compiles staged function specifications into single networks, and
//! sampled certification of error and Lipschitz bounds.
//!
//! ```
//! use relu_forge::constructors::max_net;
//!
//! let net = max_net(3);
//! assert_eq!(net.evaluate(&[-1.0, 2.0, 0.5]).unwrap(), vec![2.0]);
//! ```

pub mod calculus;
pub mod certifier;
pub mod constructors;
pub mod error;
pub mod network;
pub mod pipeline;

pub use error::{Error, Result};
pub use network::{AffineMap, Hypercube, Network, Norm};
