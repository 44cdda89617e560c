//! Dense tensors with define-by-run reverse-mode autodiff, plus the layer
//! and optimizer inventory used by the tactile gesture classifier and the
//! gesture-to-action translator.
//!
//! ```
//! use tactile_nn::{Graph, ParamStore, Tensor};
//!
//! let mut store = ParamStore::<f64>::new();
//! let w = store.add("w", Tensor::from_f64(vec![3], &[1.0, -2.0, 0.5]).unwrap()).unwrap();
//! let mut g = Graph::new();
//! let wv = g.param(&store, w);
//! let sq = g.mul(wv, wv).unwrap();
//! let loss = g.sum(sq);
//! g.backward(loss, &mut store).unwrap();
//! assert_eq!(store.get(w).grad.as_ref().unwrap().data(), &[2.0, -4.0, 1.0]);
//! ```

pub mod checkpoint;
mod error;
pub mod gradcheck;
mod graph;
pub mod init;
pub mod layers;
mod ops;
pub mod optim;
mod params;
mod real;
mod tensor;

pub use error::{NnError, Result};
pub use graph::{AttentionMask, Gradients, Graph, Var};
pub use params::{ParamId, ParamStore, Parameter};
pub use real::Real;
pub use tensor::Tensor;
