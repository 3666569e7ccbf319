//! Cycle-counting model of the smallNet accelerator datapath.
//!
//! The input image enters as a stream of valid-flagged beats through a FIFO,
//! a line-buffer windowing unit turns the raster into 2x2 windows, a parallel
//! MAC with bias feeds the sigmoid ROM, and each layer is sequenced by its own
//! controller FSM. Results land in a 4-bit result register and raise a single
//! done interrupt per image.
//!
//! Scores are bit-identical to [`crate::netcore::forward`] over [`Fx32`]
//! parameters; the datapath here is an independent implementation of the same
//! arithmetic.
//!
//! [`Fx32`]: crate::fixedpoint::Fx32

mod fsm;
mod mac;
mod pipeline;
mod stream;
mod window;

pub use fsm::{is_permitted_edge, FsmState, Stage, StageFsm, Visit};
pub use mac::{mac_fire, Datapath};
pub use pipeline::{
    check_trace, latency_at, run_pipeline, write_cycle_trace, CycleReport, PipelineRun, PipelineSim,
    ResultRegister, CYCLE_OVERHEAD_PER_STAGE,
};
pub use stream::{stream_image, BeatSource, BramSource, DmaSource, InputFifo, StreamBeat, FIFO_CAPACITY};
pub use window::{Window, WindowUnit};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HwError {
    #[error("beat {index}: TLAST {found} but frame of {total} beats expects {expected}")]
    Protocol { index: usize, total: usize, found: bool, expected: bool },
    #[error("beat arrived after the {total}-pixel frame completed")]
    Overrun { total: usize },
    #[error("flush requested after {received} of {total} beats")]
    Underrun { received: usize, total: usize },
    #[error("{stage} stage ran out of input after {windows} windows")]
    Starved { stage: Stage, windows: usize },
    #[error("illegal FSM transition {from:?} -> {to:?} in {stage}")]
    IllegalTransition { stage: Stage, from: FsmState, to: FsmState },
    #[error("clock frequency must be positive")]
    ZeroClock,
    #[error("input must be {expected}x{expected}, got {height}x{width}")]
    Shape { expected: usize, height: usize, width: usize },
}
