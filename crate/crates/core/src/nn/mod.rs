//! Minimal reverse-mode differentiable core: parameter store, tape,
//! recurrent and stack-recurrent cells, AdaGrad, and gradient checking.

pub mod gradcheck;
pub mod lstm;
pub mod params;
pub mod stack_rnn;
pub mod tape;

pub use gradcheck::{grad_check, GradCheckReport};
pub use lstm::{LstmCell, LstmLayer, LstmState};
pub use params::{GradBuffer, Init, MatId, ParamDump, ParamStore, VecId};
pub use stack_rnn::StackRnn;
pub use tape::{masked_log_softmax_values, masked_softmax, NodeId, Tape};
