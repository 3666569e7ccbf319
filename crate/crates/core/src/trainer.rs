//! Double-precision training of smallNet: analytic backpropagation through
//! the conv/pool/dense stack, categorical crossentropy and Adam.

use rand::distributions::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{one_hot, LabeledImageSet, NUM_CLASSES};
use crate::netcore::{
    forward, forward_trace, pool_argmax, ConvParams, FeatureMap, NetError, NetworkParams, Params, DENSE_IN,
    DENSE_OUT, POOLED_SIDE,
};

/// Probability clipping applied before the logarithm.
pub const PROB_EPSILON: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Net(#[from] NetError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub seed: u64,
    /// Trailing training images held out for per-epoch validation accuracy.
    pub validation_holdout: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 8,
            batch_size: 64,
            learning_rate: 0.001,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            seed: 0,
            validation_holdout: 5000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch size must be at least 1".into()));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(TrainError::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        Ok(())
    }
}

/// Gradients laid out exactly like the parameters they belong to.
pub type GradientSet = Params<f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: GradientSet,
    pub v: GradientSet,
    pub t: u64,
}

impl Default for AdamState {
    fn default() -> Self {
        AdamState { m: GradientSet::zeros(), v: GradientSet::zeros(), t: 0 }
    }
}

/// Glorot-uniform weights, zero biases.
pub fn init_params(seed: u64) -> NetworkParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = NetworkParams::zeros();
    // conv: fan_in = fan_out = 2*2*1
    let conv = Uniform::new_inclusive(-glorot_bound(4, 4), glorot_bound(4, 4));
    for w in p.conv1.kernel.iter_mut().flatten() {
        *w = conv.sample(&mut rng);
    }
    for w in p.conv2.kernel.iter_mut().flatten() {
        *w = conv.sample(&mut rng);
    }
    let dense = Uniform::new_inclusive(-glorot_bound(DENSE_IN, DENSE_OUT), glorot_bound(DENSE_IN, DENSE_OUT));
    for w in p.dense.weights.iter_mut().flatten() {
        *w = dense.sample(&mut rng);
    }
    p
}

pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Categorical crossentropy of a sigmoid score vector.
///
/// The scores are first rescaled to sum to one (they are independent
/// sigmoids, not a distribution), clipped to `[1e-7, 1 - 1e-7]`, and then
/// `-sum(target * ln p)` is taken.
pub fn cross_entropy_loss(scores: &[f64; NUM_CLASSES], target: &[f64; NUM_CLASSES]) -> f64 {
    loss_and_score_grad(scores, target).0
}

/// Loss together with dL/dscore.
fn loss_and_score_grad(scores: &[f64; NUM_CLASSES], target: &[f64; NUM_CLASSES]) -> (f64, [f64; NUM_CLASSES]) {
    let total: f64 = scores.iter().sum();
    let mut loss = 0.0;
    let mut grad = [0.0; NUM_CLASSES];
    // weight of unclipped targets; each contributes t_i / S to every score gradient
    let mut live_target = 0.0;
    for i in 0..NUM_CLASSES {
        if target[i] == 0.0 {
            continue;
        }
        let p = scores[i] / total;
        let clipped = p.clamp(PROB_EPSILON, 1.0 - PROB_EPSILON);
        loss -= target[i] * clipped.ln();
        if clipped == p {
            grad[i] -= target[i] / scores[i];
            live_target += target[i];
        }
    }
    for g in grad.iter_mut() {
        *g += live_target / total;
    }
    (loss, grad)
}

fn maxpool_backward(act: &FeatureMap<f64>, dout: &FeatureMap<f64>) -> FeatureMap<f64> {
    let mut din = FeatureMap::zeros(act.height(), act.width()).expect("non-empty");
    for i in 0..dout.height() {
        for j in 0..dout.width() {
            let (r, c) = pool_argmax(act, i, j);
            din.set(r, c, din.get(r, c) + dout.get(i, j));
        }
    }
    din
}

/// Gradient through the sigmoid given its output.
fn sigmoid_backward(act: &FeatureMap<f64>, dact: &FeatureMap<f64>) -> FeatureMap<f64> {
    let data = act.data().iter().zip(dact.data()).map(|(&a, &d)| d * a * (1.0 - a)).collect();
    FeatureMap::new(act.height(), act.width(), data).expect("same shape")
}

/// Kernel/bias gradients of a same-padded 2x2 conv, plus the input gradient when asked.
fn conv_backward(
    input: &FeatureMap<f64>,
    p: &ConvParams<f64>,
    dpre: &FeatureMap<f64>,
    want_input: bool,
) -> (ConvParams<f64>, Option<FeatureMap<f64>>) {
    let (h, w) = input.shape();
    let mut g = ConvParams::zeros();
    for i in 0..h {
        for j in 0..w {
            let d = dpre.get(i, j);
            g.bias += d;
            for di in 0..2 {
                for dj in 0..2 {
                    g.kernel[di][dj] += d * input.get_padded(i + di, j + dj);
                }
            }
        }
    }
    let dinput = want_input.then(|| {
        let mut din = FeatureMap::zeros(h, w).expect("non-empty");
        for r in 0..h {
            for c in 0..w {
                let mut acc = 0.0;
                for di in 0..2 {
                    for dj in 0..2 {
                        if r >= di && c >= dj {
                            acc += dpre.get(r - di, c - dj) * p.kernel[di][dj];
                        }
                    }
                }
                din.set(r, c, acc);
            }
        }
        din
    });
    (g, dinput)
}

/// Loss and exact gradients for one image.
pub fn backward(
    image: &FeatureMap<f64>,
    target: &[f64; NUM_CLASSES],
    params: &NetworkParams,
) -> Result<(f64, GradientSet), NetError> {
    let t = forward_trace(image, params)?;
    let (loss, dscores) = loss_and_score_grad(&t.scores, target);

    let mut grads = GradientSet::zeros();
    let dz: [f64; DENSE_OUT] = std::array::from_fn(|o| dscores[o] * t.scores[o] * (1.0 - t.scores[o]));
    let mut dflat = [0.0; DENSE_IN];
    for o in 0..DENSE_OUT {
        grads.dense.biases[o] = dz[o];
        for i in 0..DENSE_IN {
            grads.dense.weights[o][i] = dz[o] * t.flat[i];
            dflat[i] += dz[o] * params.dense.weights[o][i];
        }
    }

    let dpool2 = FeatureMap::new(POOLED_SIDE, POOLED_SIDE, dflat.to_vec())?;
    let dpre2 = sigmoid_backward(&t.conv2_act, &maxpool_backward(&t.conv2_act, &dpool2));
    let (g2, dpool1) = conv_backward(&t.pool1, &params.conv2, &dpre2, true);
    grads.conv2 = g2;

    let dpool1 = dpool1.expect("requested");
    let dpre1 = sigmoid_backward(&t.conv1_act, &maxpool_backward(&t.conv1_act, &dpool1));
    let (g1, _) = conv_backward(image, &params.conv1, &dpre1, false);
    grads.conv1 = g1;

    Ok((loss, grads))
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut NetworkParams, grads: &GradientSet, state: &mut AdamState, config: &TrainConfig) {
    state.t += 1;
    let (b1, b2) = (config.adam_beta1, config.adam_beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    let slots = params.scalars_mut().zip(grads.scalars()).zip(state.m.scalars_mut()).zip(state.v.scalars_mut());
    for (((theta, &g), m), v) in slots {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *theta -= config.learning_rate * m_hat / (v_hat.sqrt() + config.adam_epsilon);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training loss over the epoch's mini-batches (sample weighted).
    pub loss: f64,
    /// Accuracy on the held-out tail; `None` when nothing is held out.
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: NetworkParams,
    pub history: Vec<EpochRecord>,
}

/// Mean loss and summed gradients over a batch, reduced in batch order.
pub fn batch_gradient(
    data: &LabeledImageSet,
    indices: &[usize],
    params: &NetworkParams,
) -> Result<(f64, GradientSet), TrainError> {
    let per_image: Vec<(f64, GradientSet)> = indices
        .par_iter()
        .map(|&i| {
            let (img, label) = data.get(i);
            let target = one_hot(label as usize).expect("labels validated on load");
            backward(&FeatureMap::from_image(img), &target, params)
        })
        .collect::<Result<_, _>>()?;

    let n = indices.len() as f64;
    let mut loss = 0.0;
    let mut sum = GradientSet::zeros();
    for (l, g) in &per_image {
        loss += l;
        for (s, v) in sum.scalars_mut().zip(g.scalars()) {
            *s += v;
        }
    }
    for s in sum.scalars_mut() {
        *s /= n;
    }
    Ok((loss / n, sum))
}

/// Trains from a fresh Glorot initialization. The last
/// `config.validation_holdout` images are held out and only scored.
pub fn train(data: &LabeledImageSet, config: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    train_with_progress(data, config, |_| {})
}

pub fn train_with_progress(
    data: &LabeledImageSet,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let (fit, holdout) = data.split_tail(config.validation_holdout);
    if fit.is_empty() {
        return Err(TrainError::Config(format!(
            "validation holdout {} leaves no training images out of {}",
            config.validation_holdout,
            data.len()
        )));
    }

    let mut params = init_params(config.seed);
    let mut state = AdamState::default();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..fit.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let (loss, grads) = batch_gradient(&fit, batch, &params)?;
            loss_sum += loss * batch.len() as f64;
            adam_step(&mut params, &grads, &mut state, config);
        }
        let val_accuracy = if holdout.is_empty() { None } else { Some(evaluate(&params, &holdout)?) };
        let record = EpochRecord { epoch, loss: loss_sum / fit.len() as f64, val_accuracy };
        on_epoch(&record);
        history.push(record);
    }
    Ok(TrainOutcome { params, history })
}

/// Fraction of images whose predicted class matches the label.
pub fn evaluate(params: &NetworkParams, data: &LabeledImageSet) -> Result<f64, TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let correct: usize = data
        .images()
        .par_iter()
        .zip(data.labels())
        .map(|(img, &label)| forward(&FeatureMap::from_image(img), params).map(|(_, c)| (c == label as usize) as usize))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .sum();
    Ok(correct as f64 / data.len() as f64)
}

/// Mean loss over a dataset.
pub fn dataset_loss(params: &NetworkParams, data: &LabeledImageSet) -> Result<f64, TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let losses = data
        .images()
        .par_iter()
        .zip(data.labels())
        .map(|(img, &label)| {
            let (scores, _) = forward(&FeatureMap::from_image(img), params)?;
            Ok(cross_entropy_loss(&scores, &one_hot(label as usize).expect("validated")))
        })
        .collect::<Result<Vec<f64>, NetError>>()?;
    Ok(losses.iter().sum::<f64>() / data.len() as f64)
}

/// `epoch,loss,val_accuracy` with a header row; missing accuracy is left blank.
pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,loss,val_accuracy\n");
    for r in history {
        let acc = r.val_accuracy.map(|a| format!("{a:.6}")).unwrap_or_default();
        out.push_str(&format!("{},{:.8},{}\n", r.epoch, r.loss, acc));
    }
    out
}
