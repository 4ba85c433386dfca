//! Losses, gradient passes, the optimizer and the training loop.

mod adam;
mod check;
mod fit;
mod grad;
mod loss;

pub use adam::*;
pub use check::*;
pub use fit::*;
pub use grad::*;
pub use loss::*;
