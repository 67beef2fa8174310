//! Function approximators with exact reverse-mode gradients.

pub mod fdcheck;
pub mod gaussian;
pub mod gru;
pub mod init;
pub mod kernels;
pub mod mlp;
pub mod params;
pub mod tape;

pub use fdcheck::{fd_check, FdReport};
pub use gaussian::gaussian_head;
pub use gru::{Gru, GruState, HIDDEN_SIZE};
pub use mlp::{mlp_forward, Activation, Mlp, MlpSpec};
pub use params::ParamSet;
pub use tape::{Mat, Tape, Var};
