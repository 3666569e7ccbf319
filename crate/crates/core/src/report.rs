//! Per-engine evaluation and the three-way comparison report.
//!
//! All engines score the same images; per-image work runs in parallel and is
//! collected in image order before any counting, so every aggregate is
//! independent of scheduling.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{LabeledImageSet, NUM_CLASSES};
use crate::fixedpoint::Fx32;
use crate::hwsim::{run_pipeline, HwError};
use crate::netcore::{forward, FeatureMap, NetError, NetworkParams, DENSE_OUT};
use crate::quantizer::QuantizedParams;

pub type ConfusionMatrix = [[u64; NUM_CLASSES]; NUM_CLASSES];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    /// f64 reference network.
    Float,
    /// Functional Q16.16 network.
    Fixed,
    /// Cycle-counting hardware model.
    Pipeline,
}

impl Engine {
    pub const ALL: [Engine; 3] = [Engine::Float, Engine::Fixed, Engine::Pipeline];

    pub fn name(self) -> &'static str {
        match self {
            Engine::Float => "float",
            Engine::Fixed => "fixed",
            Engine::Pipeline => "pipeline",
        }
    }
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Engine {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Engine::ALL.into_iter().find(|e| e.name() == s).ok_or_else(|| ReportError::UnknownEngine(s.to_string()))
    }
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("unknown engine {0:?} (expected float, fixed or pipeline)")]
    UnknownEngine(String),
    #[error("nothing to evaluate: image count must be at least 1")]
    Empty,
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Hw(#[from] HwError),
}

/// Result of one engine over a set of images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub engine: Engine,
    pub images: usize,
    pub correct: usize,
    pub accuracy: f64,
    /// `confusion[label][predicted]`.
    pub confusion: ConfusionMatrix,
    /// Predicted class per image, in input order.
    pub predictions: Vec<u8>,
    /// Raw Q16.16 output words per image (fixed-point engines only).
    #[serde(skip)]
    pub raw_scores: Option<Vec<[i32; DENSE_OUT]>>,
    /// Pipeline engine only.
    pub mean_cycles: Option<f64>,
    /// Pipeline engine only: saturating add/multiply events over all images.
    pub saturations: Option<u64>,
}

/// Which parameters each engine runs on.
#[derive(Debug, Clone, Copy)]
pub struct Weights<'a> {
    pub float: &'a NetworkParams,
    pub fixed: &'a QuantizedParams,
}

struct Scored {
    class: usize,
    raw: Option<[i32; DENSE_OUT]>,
    cycles: u64,
    saturations: u64,
}

fn raw_words(scores: &[Fx32; DENSE_OUT]) -> [i32; DENSE_OUT] {
    scores.map(Fx32::raw)
}

fn score_one(engine: Engine, w: Weights<'_>, data: &LabeledImageSet, i: usize) -> Result<Scored, ReportError> {
    let (img, _) = data.get(i);
    Ok(match engine {
        Engine::Float => {
            let (_, class) = forward(&FeatureMap::from_image(img), w.float)?;
            Scored { class, raw: None, cycles: 0, saturations: 0 }
        }
        Engine::Fixed => {
            let (scores, class) = forward(&FeatureMap::from_image_fixed(img), w.fixed)?;
            Scored { class, raw: Some(raw_words(&scores)), cycles: 0, saturations: 0 }
        }
        Engine::Pipeline => {
            let run = run_pipeline(&FeatureMap::from_image_fixed(img), w.fixed)?;
            Scored {
                class: run.result.class_code as usize,
                raw: Some(raw_words(&run.scores)),
                cycles: run.report.cycles_total,
                saturations: run.saturations,
            }
        }
    })
}

/// Scores the first `limit` images of `data` (all of them if fewer).
pub fn evaluate_engine(
    engine: Engine,
    weights: Weights<'_>,
    data: &LabeledImageSet,
    limit: usize,
) -> Result<Evaluation, ReportError> {
    let n = limit.min(data.len());
    if n == 0 {
        return Err(ReportError::Empty);
    }
    let scored: Vec<Scored> =
        (0..n).into_par_iter().map(|i| score_one(engine, weights, data, i)).collect::<Result<_, _>>()?;

    let mut confusion = [[0u64; NUM_CLASSES]; NUM_CLASSES];
    let mut correct = 0;
    let mut cycles = 0u64;
    let mut saturations = 0u64;
    for (s, &label) in scored.iter().zip(data.labels()) {
        confusion[label as usize][s.class] += 1;
        correct += (s.class == label as usize) as usize;
        cycles += s.cycles;
        saturations += s.saturations;
    }
    let is_pipeline = engine == Engine::Pipeline;
    Ok(Evaluation {
        engine,
        images: n,
        correct,
        accuracy: correct as f64 / n as f64,
        confusion,
        predictions: scored.iter().map(|s| s.class as u8).collect(),
        raw_scores: scored.iter().map(|s| s.raw).collect(),
        mean_cycles: is_pipeline.then(|| cycles as f64 / n as f64),
        saturations: is_pipeline.then_some(saturations),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineSummary {
    pub accuracy: f64,
    pub correct: usize,
    pub confusion: ConfusionMatrix,
}

impl From<&Evaluation> for EngineSummary {
    fn from(e: &Evaluation) -> Self {
        EngineSummary { accuracy: e.accuracy, correct: e.correct, confusion: e.confusion }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub images: usize,
    pub float_accuracy: f64,
    pub fixed_accuracy: f64,
    pub pipeline_accuracy: f64,
    /// Fixed minus float accuracy, in percentage points.
    pub fixed_minus_float_pp: f64,
    /// Fraction of images whose fixed and pipeline output words are identical.
    pub agreement_rate: f64,
    pub float: EngineSummary,
    pub fixed: EngineSummary,
    pub pipeline: EngineSummary,
    pub mean_cycles: f64,
    pub clock_hz: u64,
    pub mean_latency_s: f64,
    /// Saturating add/multiply events in the pipeline datapath.
    pub saturation_events: u64,
    /// Weights clamped when converting to Q16.16.
    pub weight_saturations: usize,
}

/// Runs all three engines on the first `limit` images.
pub fn compare(
    weights: Weights<'_>,
    data: &LabeledImageSet,
    limit: usize,
    clock_hz: u64,
    weight_saturations: usize,
) -> Result<ComparisonReport, ReportError> {
    let float = evaluate_engine(Engine::Float, weights, data, limit)?;
    let fixed = evaluate_engine(Engine::Fixed, weights, data, limit)?;
    let pipeline = evaluate_engine(Engine::Pipeline, weights, data, limit)?;
    let n = float.images;

    let agree = match (&fixed.raw_scores, &pipeline.raw_scores) {
        (Some(a), Some(b)) => a.iter().zip(b).filter(|(x, y)| x == y).count(),
        _ => unreachable!("fixed-point engines always record raw scores"),
    };
    let mean_cycles = pipeline.mean_cycles.unwrap_or_default();
    let mean_latency_s = latency_at_mean(mean_cycles, clock_hz)?;
    Ok(ComparisonReport {
        images: n,
        float_accuracy: float.accuracy,
        fixed_accuracy: fixed.accuracy,
        pipeline_accuracy: pipeline.accuracy,
        fixed_minus_float_pp: (fixed.accuracy - float.accuracy) * 100.0,
        agreement_rate: agree as f64 / n as f64,
        float: (&float).into(),
        fixed: (&fixed).into(),
        pipeline: (&pipeline).into(),
        mean_cycles,
        clock_hz,
        mean_latency_s,
        saturation_events: pipeline.saturations.unwrap_or_default(),
        weight_saturations,
    })
}

fn latency_at_mean(mean_cycles: f64, clock_hz: u64) -> Result<f64, HwError> {
    if clock_hz == 0 {
        return Err(HwError::ZeroClock);
    }
    Ok(mean_cycles / clock_hz as f64)
}

/// Confusion matrix as CSV: header `label,p0..p9`, one row per true label.
pub fn confusion_csv(m: &ConfusionMatrix) -> String {
    let mut out = String::from("label");
    for p in 0..NUM_CLASSES {
        out.push_str(&format!(",p{p}"));
    }
    out.push('\n');
    for (label, row) in m.iter().enumerate() {
        out.push_str(&label.to_string());
        for c in row {
            out.push_str(&format!(",{c}"));
        }
        out.push('\n');
    }
    out
}
