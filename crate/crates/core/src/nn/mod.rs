//! Dense numerics: tensors, differentiable primitives, initialization,
//! Adam and checkpoints.

mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod ops;
mod param;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use param::{glorot_bound, init_parameters, ParamId, ParamStore, Parameter};
pub use tape::{Eval, Exec, Tape, Var};
pub use tensor::{matmul, Tensor2};
