//! Dense row-major tensors with a tape-based reverse-mode autodiff engine.
//!
//! Forward ops live on [`Graph`]; each op computes its value eagerly and, when the
//! graph is tracing, records what [`Graph::backward`] needs to replay it in reverse.
//! Values are checked for NaN/Inf as they are produced.
//!
//! ```
//! use swtensor::{Graph, ParamSet, Tensor};
//!
//! let mut params = ParamSet::<f64>::new();
//! params.insert("w", Tensor::new(&[2], vec![1.0, 2.0]).unwrap()).unwrap();
//! let mut g = Graph::new();
//! let w = g.param(&params, "w").unwrap();
//! let sq = g.mul(w, w).unwrap();
//! let loss = g.sum(sq).unwrap();
//! let grads = g.backward(loss, &params).unwrap();
//! assert_eq!(grads.get("w").unwrap().data(), &[2.0, 4.0]);
//! ```

mod element;
mod error;
mod graph;
mod params;
mod tensor;

pub mod gradcheck;
pub mod kernels;
pub mod par;

pub use element::{DType, Element};
pub use error::{Result, TensorError};
pub use gradcheck::{finite_diff_check, GradReport, ParamCheck};
pub use graph::{Gradients, Graph, RecordEntry, Var};
pub use params::{Adam, ParamSet};
pub use tensor::{numel, strides, Tensor};
