//! smallNet layer functions, generic over the number domain.
//!
//! The same code runs in `f64` for training and in [`Fx32`] for quantized
//! inference. Accumulation order is pinned because saturating fixed-point
//! addition is not associative:
//!
//! * conv: `((x00*k00 + x01*k01) + (x10*k10 + x11*k11)) + bias`
//! * dense: `(((0 + w0*x0) + w1*x1) + ... + w48*x48) + bias`

use std::fmt::Debug;
use std::ops::{Add, Mul};

use thiserror::Error;

use crate::dataio::{normalize, Image, IMAGE_SIDE, NUM_CLASSES};
use crate::fixedpoint::Fx32;

pub const KERNEL: usize = 2;
pub const POOLED_SIDE: usize = 7;
pub const DENSE_IN: usize = POOLED_SIDE * POOLED_SIDE;
pub const DENSE_OUT: usize = NUM_CLASSES;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NetError {
    #[error("feature map data length {len} does not match {height}x{width}")]
    DataLength { height: usize, width: usize, len: usize },
    #[error("feature map dimensions must be positive, got {height}x{width}")]
    EmptyMap { height: usize, width: usize },
    #[error("max pooling needs even dimensions, got {height}x{width}")]
    OddPool { height: usize, width: usize },
    #[error("expected a {expected_h}x{expected_w} map, got {height}x{width}")]
    Shape { expected_h: usize, expected_w: usize, height: usize, width: usize },
    #[error("expected {expected} parameters, got {actual}")]
    ParamCount { expected: usize, actual: usize },
}

/// Number domain the layers run in.
pub trait Scalar:
    Copy + PartialOrd + Debug + Send + Sync + Add<Output = Self> + Mul<Output = Self> + 'static
{
    const ZERO: Self;
    fn sigmoid(self) -> Self;
}

impl Scalar for f64 {
    const ZERO: f64 = 0.0;
    fn sigmoid(self) -> f64 {
        1.0 / (1.0 + (-self).exp())
    }
}

impl Scalar for Fx32 {
    const ZERO: Fx32 = Fx32::ZERO;
    fn sigmoid(self) -> Fx32 {
        Fx32::sigmoid(self)
    }
}

/// Row-major 2-D grid of values.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Scalar> FeatureMap<T> {
    pub fn new(height: usize, width: usize, data: Vec<T>) -> Result<Self, NetError> {
        if height == 0 || width == 0 {
            return Err(NetError::EmptyMap { height, width });
        }
        if data.len() != height * width {
            return Err(NetError::DataLength { height, width, len: data.len() });
        }
        Ok(FeatureMap { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: T) -> Result<Self, NetError> {
        FeatureMap::new(height, width, vec![value; height * width])
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self, NetError> {
        FeatureMap::filled(height, width, T::ZERO)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> T {
        self.data[row * self.width + col]
    }

    /// Reads past the bottom or right edge return zero.
    pub fn get_padded(&self, row: usize, col: usize) -> T {
        if row < self.height && col < self.width {
            self.get(row, col)
        } else {
            T::ZERO
        }
    }

    pub fn set(&mut self, row: usize, col: usize, value: T) {
        self.data[row * self.width + col] = value;
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> FeatureMap<U> {
        FeatureMap { height: self.height, width: self.width, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }
}

impl FeatureMap<f64> {
    /// Pixels scaled to [0, 1].
    pub fn from_image(image: &Image) -> Self {
        FeatureMap { height: IMAGE_SIDE, width: IMAGE_SIDE, data: image.0.iter().map(|&p| normalize(p)).collect() }
    }
}

impl FeatureMap<Fx32> {
    /// Normalized pixels rounded to Q16.16.
    pub fn from_image_fixed(image: &Image) -> Self {
        FeatureMap {
            height: IMAGE_SIDE,
            width: IMAGE_SIDE,
            data: image.0.iter().map(|&p| quantize_pixel(p)).collect(),
        }
    }
}

pub fn quantize_pixel(p: u8) -> Fx32 {
    Fx32::from_real(normalize(p)).expect("pixel is finite")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvParams<T> {
    pub kernel: [[T; KERNEL]; KERNEL],
    pub bias: T,
}

impl<T: Scalar> ConvParams<T> {
    pub const COUNT: usize = KERNEL * KERNEL + 1;

    pub fn zeros() -> Self {
        ConvParams { kernel: [[T::ZERO; KERNEL]; KERNEL], bias: T::ZERO }
    }
}

/// Output-major weights: `weights[o][i]` connects flattened input `i` to class `o`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DenseParams<T> {
    pub weights: [[T; DENSE_IN]; DENSE_OUT],
    pub biases: [T; DENSE_OUT],
}

impl<T: Scalar> DenseParams<T> {
    pub const COUNT: usize = DENSE_IN * DENSE_OUT + DENSE_OUT;

    pub fn zeros() -> Self {
        DenseParams { weights: [[T::ZERO; DENSE_IN]; DENSE_OUT], biases: [T::ZERO; DENSE_OUT] }
    }
}

/// All trainable values of smallNet.
///
/// The canonical scalar order (used by [`Params::scalars`], the optimizer and
/// the weight file) is conv1 kernel row-major then bias, the same for conv2,
/// then dense weights output-major, then dense biases.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Params<T> {
    pub conv1: ConvParams<T>,
    pub conv2: ConvParams<T>,
    pub dense: DenseParams<T>,
}

pub type NetworkParams = Params<f64>;

impl<T: Scalar> Params<T> {
    pub const COUNT: usize = 2 * ConvParams::<T>::COUNT + DenseParams::<T>::COUNT;

    pub fn zeros() -> Self {
        Params { conv1: ConvParams::zeros(), conv2: ConvParams::zeros(), dense: DenseParams::zeros() }
    }

    pub fn scalars(&self) -> impl Iterator<Item = &T> {
        fn conv<T>(c: &ConvParams<T>) -> impl Iterator<Item = &T> {
            c.kernel.iter().flatten().chain(std::iter::once(&c.bias))
        }
        conv(&self.conv1)
            .chain(conv(&self.conv2))
            .chain(self.dense.weights.iter().flatten())
            .chain(self.dense.biases.iter())
    }

    pub fn scalars_mut(&mut self) -> impl Iterator<Item = &mut T> {
        let Params { conv1, conv2, dense } = self;
        conv1
            .kernel
            .iter_mut()
            .flatten()
            .chain(std::iter::once(&mut conv1.bias))
            .chain(conv2.kernel.iter_mut().flatten())
            .chain(std::iter::once(&mut conv2.bias))
            .chain(dense.weights.iter_mut().flatten())
            .chain(dense.biases.iter_mut())
    }

    pub fn to_flat(&self) -> Vec<T> {
        self.scalars().copied().collect()
    }

    pub fn from_flat(values: &[T]) -> Result<Self, NetError> {
        if values.len() != Self::COUNT {
            return Err(NetError::ParamCount { expected: Self::COUNT, actual: values.len() });
        }
        let mut p = Params::zeros();
        for (slot, &v) in p.scalars_mut().zip(values) {
            *slot = v;
        }
        Ok(p)
    }

    pub fn map<U: Scalar>(&self, mut f: impl FnMut(T) -> U) -> Params<U> {
        let flat: Vec<U> = self.scalars().map(|&v| f(v)).collect();
        Params::from_flat(&flat).expect("same scalar count")
    }
}

pub fn param_count<T: Scalar>(params: &Params<T>) -> usize {
    params.scalars().count()
}

/// 2x2 stride-1 "same" convolution (cross-correlation), zero padding on the
/// bottom row and right column. Returns the pre-activation map.
pub fn conv2d_same<T: Scalar>(input: &FeatureMap<T>, p: &ConvParams<T>) -> FeatureMap<T> {
    let (h, w) = input.shape();
    let k = &p.kernel;
    let mut data = Vec::with_capacity(h * w);
    for i in 0..h {
        for j in 0..w {
            let top = input.get(i, j) * k[0][0] + input.get_padded(i, j + 1) * k[0][1];
            let bottom = input.get_padded(i + 1, j) * k[1][0] + input.get_padded(i + 1, j + 1) * k[1][1];
            data.push((top + bottom) + p.bias);
        }
    }
    FeatureMap { height: h, width: w, data }
}

pub fn sigmoid_map<T: Scalar>(input: &FeatureMap<T>) -> FeatureMap<T> {
    input.map(T::sigmoid)
}

/// Position of the first maximum (row-major) in the 2x2 block at (2i, 2j).
pub fn pool_argmax<T: Scalar>(input: &FeatureMap<T>, i: usize, j: usize) -> (usize, usize) {
    let mut best = (2 * i, 2 * j);
    for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
        let cand = (2 * i + di, 2 * j + dj);
        if input.get(cand.0, cand.1) > input.get(best.0, best.1) {
            best = cand;
        }
    }
    best
}

/// Non-overlapping 2x2 max pooling.
pub fn maxpool2<T: Scalar>(input: &FeatureMap<T>) -> Result<FeatureMap<T>, NetError> {
    let (h, w) = input.shape();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(NetError::OddPool { height: h, width: w });
    }
    let mut data = Vec::with_capacity(h * w / 4);
    for i in 0..h / 2 {
        for j in 0..w / 2 {
            let (r, c) = pool_argmax(input, i, j);
            data.push(input.get(r, c));
        }
    }
    Ok(FeatureMap { height: h / 2, width: w / 2, data })
}

pub fn flatten<T: Scalar>(input: &FeatureMap<T>) -> Result<[T; DENSE_IN], NetError> {
    if input.shape() != (POOLED_SIDE, POOLED_SIDE) {
        return Err(NetError::Shape {
            expected_h: POOLED_SIDE,
            expected_w: POOLED_SIDE,
            height: input.height,
            width: input.width,
        });
    }
    Ok(input.data.as_slice().try_into().expect("49 values"))
}

pub fn dense_preactivation<T: Scalar>(x: &[T; DENSE_IN], p: &DenseParams<T>) -> [T; DENSE_OUT] {
    std::array::from_fn(|o| {
        let acc = p.weights[o].iter().zip(x).fold(T::ZERO, |acc, (&w, &v)| acc + w * v);
        acc + p.biases[o]
    })
}

pub fn dense_forward<T: Scalar>(x: &[T; DENSE_IN], p: &DenseParams<T>) -> [T; DENSE_OUT] {
    dense_preactivation(x, p).map(T::sigmoid)
}

/// Index of the largest score; ties go to the lowest index.
pub fn max_finder<T: Scalar>(scores: &[T; DENSE_OUT]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate().skip(1) {
        if *s > scores[best] {
            best = i;
        }
    }
    best
}

/// Every intermediate of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T> {
    pub conv1_act: FeatureMap<T>,
    pub pool1: FeatureMap<T>,
    pub conv2_act: FeatureMap<T>,
    pub pool2: FeatureMap<T>,
    pub flat: [T; DENSE_IN],
    pub scores: [T; DENSE_OUT],
    pub class: usize,
}

pub fn forward_trace<T: Scalar>(image: &FeatureMap<T>, params: &Params<T>) -> Result<ForwardTrace<T>, NetError> {
    if image.shape() != (IMAGE_SIDE, IMAGE_SIDE) {
        return Err(NetError::Shape {
            expected_h: IMAGE_SIDE,
            expected_w: IMAGE_SIDE,
            height: image.height,
            width: image.width,
        });
    }
    let conv1_act = sigmoid_map(&conv2d_same(image, &params.conv1));
    let pool1 = maxpool2(&conv1_act)?;
    let conv2_act = sigmoid_map(&conv2d_same(&pool1, &params.conv2));
    let pool2 = maxpool2(&conv2_act)?;
    let flat = flatten(&pool2)?;
    let scores = dense_forward(&flat, &params.dense);
    let class = max_finder(&scores);
    Ok(ForwardTrace { conv1_act, pool1, conv2_act, pool2, flat, scores, class })
}

/// Full smallNet inference: scores and predicted class.
pub fn forward<T: Scalar>(image: &FeatureMap<T>, params: &Params<T>) -> Result<([T; DENSE_OUT], usize), NetError> {
    let t = forward_trace(image, params)?;
    Ok((t.scores, t.class))
}
