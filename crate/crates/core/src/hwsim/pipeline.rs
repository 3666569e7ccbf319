use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use super::fsm::{is_permitted_edge, FsmState, Stage, StageFsm, Visit};
use super::mac::Datapath;
use super::stream::{stream_image, BeatSource, BramSource, DmaSource, FIFO_CAPACITY};
use super::window::WindowUnit;
use super::HwError;
use crate::dataio::IMAGE_SIDE;
use crate::fixedpoint::{Fx32, SigmoidLut};
use crate::netcore::{ConvParams, DenseParams, FeatureMap, Params, DENSE_IN, DENSE_OUT};

/// IDLE (1) + LOAD (2) + DONE (1) cycles spent by every stage controller.
pub const CYCLE_OVERHEAD_PER_STAGE: u64 = 4;

const IDLE_CYCLES: u64 = 1;
const LOAD_CYCLES: u64 = 2;
const DONE_CYCLES: u64 = 1;

/// GPIO-visible result: a 4-bit class code and the interrupt line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ResultRegister {
    pub class_code: u8,
    pub done_flag: bool,
}

/// Cycle accounting for one image.
///
/// Per stage: conv spends WINDOW, MAC, ACTIVATE and WRITE one cycle each per
/// output pixel; pooling spends one comparator cycle per output; dense spends
/// 49 MAC cycles plus one ACTIVATE and one WRITE per neuron, neurons in
/// sequence. Every stage adds [`CYCLE_OVERHEAD_PER_STAGE`] handshake cycles,
/// reported separately in `overhead`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleReport {
    pub cycles_conv1: u64,
    pub cycles_pool1: u64,
    pub cycles_conv2: u64,
    pub cycles_pool2: u64,
    pub cycles_dense: u64,
    pub overhead: u64,
    pub cycles_total: u64,
    /// FSM visits per stage, in [`Stage::ALL`] order.
    pub trace_lengths: [usize; 5],
    /// Times the input DMA found the FIFO full.
    pub fifo_stalls: usize,
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub scores: [Fx32; DENSE_OUT],
    pub result: ResultRegister,
    pub report: CycleReport,
    pub trace: Vec<Visit>,
    /// How many times the done interrupt was raised.
    pub interrupts: u32,
    pub done_cycle: u64,
    pub last_score_write_cycle: u64,
    /// Adder/multiplier results that hit a saturation bound.
    pub saturations: u64,
}

impl PipelineRun {
    pub fn states(&self) -> Vec<FsmState> {
        self.trace.iter().map(|v| v.state).collect()
    }
}

/// Simulator configuration. Instances share nothing, so separate images may
/// run on separate instances concurrently.
#[derive(Debug, Clone)]
pub struct PipelineSim<'a> {
    lut: &'a SigmoidLut,
    fifo_capacity: usize,
}

impl Default for PipelineSim<'static> {
    fn default() -> Self {
        PipelineSim { lut: SigmoidLut::shared(), fifo_capacity: FIFO_CAPACITY }
    }
}

struct Run<'a> {
    dp: Datapath<'a>,
    clock: u64,
    trace: Vec<Visit>,
}

impl<'a> PipelineSim<'a> {
    pub fn new(lut: &'a SigmoidLut, fifo_capacity: usize) -> Self {
        PipelineSim { lut, fifo_capacity }
    }

    pub fn run(&self, image: &FeatureMap<Fx32>, q: &Params<Fx32>) -> Result<PipelineRun, HwError> {
        if image.shape() != (IMAGE_SIDE, IMAGE_SIDE) {
            return Err(HwError::Shape { expected: IMAGE_SIDE, height: image.height(), width: image.width() });
        }
        let mut run = Run { dp: Datapath::new(self.lut), clock: 0, trace: Vec::new() };

        let mut dma = DmaSource::new(stream_image(image), self.fifo_capacity);
        let conv1 = run.conv_stage(Stage::Conv1, &mut dma, IMAGE_SIDE, IMAGE_SIDE, &q.conv1)?;
        let pool1 = run.pool_stage(Stage::Pool1, &conv1, IMAGE_SIDE, IMAGE_SIDE)?;
        let half = IMAGE_SIDE / 2;
        let conv2 = run.conv_stage(Stage::Conv2, &mut BramSource::new(&pool1), half, half, &q.conv2)?;
        let pool2 = run.pool_stage(Stage::Pool2, &conv2, half, half)?;
        let dense = run.dense_stage(&pool2, &q.dense)?;

        let stage_cycles = |s: Stage| -> u64 {
            run.trace
                .iter()
                .filter(|v| v.stage == s && !matches!(v.state, FsmState::Idle | FsmState::Load | FsmState::Done))
                .map(|v| v.cycles)
                .sum()
        };
        let overhead: u64 = run
            .trace
            .iter()
            .filter(|v| matches!(v.state, FsmState::Idle | FsmState::Load | FsmState::Done))
            .map(|v| v.cycles)
            .sum();
        let report = CycleReport {
            cycles_conv1: stage_cycles(Stage::Conv1),
            cycles_pool1: stage_cycles(Stage::Pool1),
            cycles_conv2: stage_cycles(Stage::Conv2),
            cycles_pool2: stage_cycles(Stage::Pool2),
            cycles_dense: stage_cycles(Stage::Dense),
            overhead,
            cycles_total: run.clock,
            trace_lengths: Stage::ALL.map(|s| run.trace.iter().filter(|v| v.stage == s).count()),
            fifo_stalls: dma.stalls(),
        };
        Ok(PipelineRun {
            scores: dense.scores,
            result: dense.result,
            report,
            trace: run.trace,
            interrupts: dense.interrupts,
            done_cycle: dense.done_cycle,
            last_score_write_cycle: dense.last_write,
            saturations: run.dp.saturations(),
        })
    }
}

struct DenseOut {
    scores: [Fx32; DENSE_OUT],
    result: ResultRegister,
    interrupts: u32,
    done_cycle: u64,
    last_write: u64,
}

impl Run<'_> {
    fn conv_stage(
        &mut self,
        stage: Stage,
        source: &mut dyn BeatSource,
        height: usize,
        width: usize,
        p: &ConvParams<Fx32>,
    ) -> Result<Vec<Fx32>, HwError> {
        let mut fsm = StageFsm::new(stage, &mut self.clock, &mut self.trace);
        fsm.enter(FsmState::Idle, IDLE_CYCLES)?;
        fsm.enter(FsmState::Load, LOAD_CYCLES)?;
        let mut unit = WindowUnit::new(height, width);
        let mut bram = vec![Fx32::ZERO; height * width];
        for n in 0..height * width {
            let window = loop {
                let next = match source.next_beat() {
                    Some(beat) => unit.window_step(beat)?,
                    None => match unit.flush_step()? {
                        Some(w) => Some(w),
                        None => return Err(HwError::Starved { stage, windows: n }),
                    },
                };
                if let Some(w) = next {
                    break w;
                }
            };
            debug_assert_eq!(window.row * width + window.col, n);
            fsm.enter(FsmState::Window, 1)?;
            let pre = self.dp.mac_fire(&window.taps, p);
            fsm.enter(FsmState::Mac, 1)?;
            let act = self.dp.activate(pre);
            fsm.enter(FsmState::Activate, 1)?;
            bram[n] = act;
            fsm.enter(FsmState::Write, 1)?;
        }
        fsm.enter(FsmState::Done, DONE_CYCLES)?;
        Ok(bram)
    }

    fn pool_stage(&mut self, stage: Stage, input: &[Fx32], height: usize, width: usize) -> Result<Vec<Fx32>, HwError> {
        let mut fsm = StageFsm::new(stage, &mut self.clock, &mut self.trace);
        fsm.enter(FsmState::Idle, IDLE_CYCLES)?;
        fsm.enter(FsmState::Load, LOAD_CYCLES)?;
        let (oh, ow) = (height / 2, width / 2);
        let mut out = Vec::with_capacity(oh * ow);
        for i in 0..oh {
            for j in 0..ow {
                // four BRAM reads, registered comparator tree: one cycle
                fsm.enter(FsmState::Window, 0)?;
                let at = |di: usize, dj: usize| input[(2 * i + di) * width + 2 * j + dj];
                let mut best = at(0, 0);
                for v in [at(0, 1), at(1, 0), at(1, 1)] {
                    if v > best {
                        best = v;
                    }
                }
                fsm.enter(FsmState::Mac, 1)?;
                fsm.enter(FsmState::Activate, 0)?;
                out.push(best);
                fsm.enter(FsmState::Write, 0)?;
            }
        }
        fsm.enter(FsmState::Done, DONE_CYCLES)?;
        Ok(out)
    }

    fn dense_stage(&mut self, input: &[Fx32], p: &DenseParams<Fx32>) -> Result<DenseOut, HwError> {
        debug_assert_eq!(input.len(), DENSE_IN);
        let mut fsm = StageFsm::new(Stage::Dense, &mut self.clock, &mut self.trace);
        fsm.enter(FsmState::Idle, IDLE_CYCLES)?;
        fsm.enter(FsmState::Load, LOAD_CYCLES)?;
        let mut scores = [Fx32::ZERO; DENSE_OUT];
        // max finder: comparator chain, strict greater, ascending index
        let mut best = 0usize;
        let mut last_write = 0;
        for o in 0..DENSE_OUT {
            fsm.enter(FsmState::Window, 0)?;
            let mut acc = Fx32::ZERO;
            for (&w, &x) in p.weights[o].iter().zip(input) {
                let prod = self.dp.mul(w, x);
                acc = self.dp.add(acc, prod);
            }
            fsm.enter(FsmState::Mac, DENSE_IN as u64)?;
            let pre = self.dp.add(acc, p.biases[o]);
            let score = self.dp.activate(pre);
            fsm.enter(FsmState::Activate, 1)?;
            scores[o] = score;
            if o > 0 && score > scores[best] {
                best = o;
            }
            last_write = fsm.enter(FsmState::Write, 1)?;
        }
        let done_cycle = fsm.enter(FsmState::Done, DONE_CYCLES)?;
        debug_assert!(best < 16);
        Ok(DenseOut {
            scores,
            result: ResultRegister { class_code: (best & 0xF) as u8, done_flag: true },
            interrupts: 1,
            done_cycle,
            last_write,
        })
    }
}

/// Runs one image through the default simulator.
pub fn run_pipeline(image: &FeatureMap<Fx32>, q: &Params<Fx32>) -> Result<PipelineRun, HwError> {
    PipelineSim::default().run(image, q)
}

/// Wall-clock seconds for the reported cycle count at `clock_hz`.
pub fn latency_at(report: &CycleReport, clock_hz: u64) -> Result<f64, HwError> {
    if clock_hz == 0 {
        return Err(HwError::ZeroClock);
    }
    Ok(report.cycles_total as f64 / clock_hz as f64)
}

/// Checks a trace against the per-stage controller rules: each stage starts
/// in IDLE, moves only along permitted edges and ends in DONE.
pub fn check_trace(trace: &[Visit]) -> Result<(), HwError> {
    let mut i = 0;
    while i < trace.len() {
        let stage = trace[i].stage;
        let end = trace[i..].iter().position(|v| v.stage != stage).map_or(trace.len(), |k| i + k);
        let seg = &trace[i..end];
        if seg[0].state != FsmState::Idle {
            return Err(HwError::IllegalTransition { stage, from: FsmState::Done, to: seg[0].state });
        }
        for pair in seg.windows(2) {
            if !is_permitted_edge(pair[0].state, pair[1].state) {
                return Err(HwError::IllegalTransition { stage, from: pair[0].state, to: pair[1].state });
            }
        }
        let last = seg[seg.len() - 1].state;
        if last != FsmState::Done {
            return Err(HwError::IllegalTransition { stage, from: last, to: FsmState::Done });
        }
        i = end;
    }
    Ok(())
}

/// One `cycle,state,stage` line per clock cycle.
pub fn write_cycle_trace(trace: &[Visit], out: &mut impl Write) -> io::Result<()> {
    for v in trace {
        for c in v.start_cycle..v.start_cycle + v.cycles {
            writeln!(out, "{},{},{}", c, v.state.name(), v.stage.name())?;
        }
    }
    Ok(())
}
