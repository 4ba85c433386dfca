//! Model definitions: configuration, cells, vector fields and the forward pass.

mod cells;
mod checkpoint;
mod config;
mod dynamics;
mod forward;

pub use cells::*;
pub use checkpoint::*;
pub use config::*;
pub use dynamics::*;
pub use forward::*;
