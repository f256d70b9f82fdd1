//! Reverse-mode gradients over the tensorcore op set, the Adam optimizer and
//! the L1 training loss.

mod adam;
pub mod check;
mod loss;
mod tape;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use loss::{l1_loss, l1_loss_grad};
pub use tape::{Gradients, Op, Tape, TapeNode, Var};
