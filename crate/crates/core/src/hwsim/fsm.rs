use std::fmt;

use super::HwError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FsmState {
    Idle,
    Load,
    Window,
    Mac,
    Activate,
    Write,
    Done,
}

impl FsmState {
    pub fn name(self) -> &'static str {
        match self {
            FsmState::Idle => "IDLE",
            FsmState::Load => "LOAD",
            FsmState::Window => "WINDOW",
            FsmState::Mac => "MAC",
            FsmState::Activate => "ACTIVATE",
            FsmState::Write => "WRITE",
            FsmState::Done => "DONE",
        }
    }
}

/// IDLE -> LOAD -> (WINDOW -> MAC -> ACTIVATE -> WRITE)* -> DONE
pub fn is_permitted_edge(from: FsmState, to: FsmState) -> bool {
    use FsmState::*;
    matches!(
        (from, to),
        (Idle, Load) | (Load, Window) | (Window, Mac) | (Mac, Activate) | (Activate, Write) | (Write, Window) | (Write, Done)
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    Conv1,
    Pool1,
    Conv2,
    Pool2,
    Dense,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::Conv1, Stage::Pool1, Stage::Conv2, Stage::Pool2, Stage::Dense];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Conv1 => "conv1",
            Stage::Pool1 => "pool1",
            Stage::Conv2 => "conv2",
            Stage::Pool2 => "pool2",
            Stage::Dense => "dense",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One stay in a state. `cycles` may be zero for states a stage passes
/// through without using (e.g. WINDOW in the dense stage).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Visit {
    pub stage: Stage,
    pub state: FsmState,
    pub start_cycle: u64,
    pub cycles: u64,
}

/// Controller for one layer. Every state change is checked against the
/// permitted edge set as it happens.
#[derive(Debug)]
pub struct StageFsm<'a> {
    stage: Stage,
    state: Option<FsmState>,
    clock: &'a mut u64,
    trace: &'a mut Vec<Visit>,
}

impl<'a> StageFsm<'a> {
    pub fn new(stage: Stage, clock: &'a mut u64, trace: &'a mut Vec<Visit>) -> Self {
        StageFsm { stage, state: None, clock, trace }
    }

    /// Moves to `to` and holds it for `cycles`; returns the cycle the state was entered.
    pub fn enter(&mut self, to: FsmState, cycles: u64) -> Result<u64, HwError> {
        let legal = match self.state {
            None => to == FsmState::Idle,
            Some(from) => is_permitted_edge(from, to),
        };
        if !legal {
            return Err(HwError::IllegalTransition { stage: self.stage, from: self.state.unwrap_or(FsmState::Done), to });
        }
        let start = *self.clock;
        self.trace.push(Visit { stage: self.stage, state: to, start_cycle: start, cycles });
        *self.clock += cycles;
        self.state = Some(to);
        Ok(start)
    }

    pub fn state(&self) -> Option<FsmState> {
        self.state
    }
}
