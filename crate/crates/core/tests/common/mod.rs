//! Shared fixtures and brute-force oracles. The oracles use plain integer and
//! float arithmetic and never call the library's layer code.
#![allow(dead_code)]

use std::path::PathBuf;

use rand::Rng;
use smallnet::dataio::{Image, LabeledImageSet};
use smallnet::fixedpoint::Fx32;
use smallnet::netcore::{ConvParams, DenseParams, FeatureMap};

/// MNIST IDX directory: `SMALLNET_MNIST_DIR` or `<workspace>/data/mnist`.
pub fn mnist_dir() -> Option<PathBuf> {
    let dir = std::env::var_os("SMALLNET_MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"));
    dir.join("t10k-images-idx3-ubyte").is_file().then_some(dir)
}

pub struct Mnist {
    pub train: LabeledImageSet,
    pub test: LabeledImageSet,
}

pub fn load_mnist() -> Option<Mnist> {
    let d = mnist_dir()?;
    let train = LabeledImageSet::load(&d.join("train-images-idx3-ubyte"), &d.join("train-labels-idx1-ubyte")).ok()?;
    let test = LabeledImageSet::load(&d.join("t10k-images-idx3-ubyte"), &d.join("t10k-labels-idx1-ubyte")).ok()?;
    Some(Mnist { train, test })
}

pub fn random_image(rng: &mut impl Rng) -> Image {
    let mut px = [0u8; 784];
    rng.fill(&mut px[..]);
    Image(px)
}

/// Raw word drawn so that moderate values dominate but extremes appear.
pub fn random_fx(rng: &mut impl Rng) -> Fx32 {
    match rng.gen_range(0..10) {
        0 => Fx32::from_raw(rng.gen()),
        1 => Fx32::from_raw(*[i32::MIN, i32::MAX, 0, 1, -1].get(rng.gen_range(0..5)).unwrap()),
        _ => Fx32::from_raw(rng.gen_range(-(4 << 16)..=(4 << 16))),
    }
}

pub fn random_fx_map(rng: &mut impl Rng, h: usize, w: usize) -> FeatureMap<Fx32> {
    FeatureMap::new(h, w, (0..h * w).map(|_| random_fx(rng)).collect()).unwrap()
}

pub fn random_f64_map(rng: &mut impl Rng, h: usize, w: usize) -> FeatureMap<f64> {
    FeatureMap::new(h, w, (0..h * w).map(|_| rng.gen_range(-3.0..3.0)).collect()).unwrap()
}

pub fn random_fx_conv(rng: &mut impl Rng) -> ConvParams<Fx32> {
    ConvParams { kernel: [[random_fx(rng), random_fx(rng)], [random_fx(rng), random_fx(rng)]], bias: random_fx(rng) }
}

pub fn random_fx_dense(rng: &mut impl Rng) -> DenseParams<Fx32> {
    DenseParams {
        weights: std::array::from_fn(|_| std::array::from_fn(|_| random_fx(rng))),
        biases: std::array::from_fn(|_| random_fx(rng)),
    }
}

// ---- fixed-point oracle on bare i32 words ----

pub fn sat(v: i128) -> i32 {
    if v > i32::MAX as i128 {
        i32::MAX
    } else if v < i32::MIN as i128 {
        i32::MIN
    } else {
        v as i32
    }
}

pub fn o_add(a: i32, b: i32) -> i32 {
    sat(a as i128 + b as i128)
}

/// floor(a*b / 2^16), saturated.
pub fn o_mul(a: i32, b: i32) -> i32 {
    sat((a as i128 * b as i128).div_euclid(65536))
}

fn round_half_away(x: f64) -> i32 {
    let r = if x >= 0.0 { (x + 0.5).floor() } else { -((-x + 0.5).floor()) };
    r as i32
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Table sigmoid: sample point floor(x*64)/64 inside [-8, 8), clamps outside.
pub fn o_sigmoid(raw: i32) -> i32 {
    let x = raw as f64 / 65536.0;
    let sample = if x < -8.0 {
        -8.0
    } else if x >= 8.0 {
        8.0
    } else {
        (x * 64.0).floor() / 64.0
    };
    round_half_away(logistic(sample) * 65536.0)
}

/// Zero-extended grid lookup for the "same" convolution.
fn padded<T: Copy>(data: &[T], h: usize, w: usize, r: usize, c: usize, zero: T) -> T {
    if r < h && c < w {
        data[r * w + c]
    } else {
        zero
    }
}

/// Pre-activation of the 2x2 conv in the fixed domain, adder tree order.
pub fn o_conv_fx(data: &[i32], h: usize, w: usize, k: [[i32; 2]; 2], bias: i32) -> Vec<i32> {
    let mut out = Vec::new();
    for r in 0..h {
        for c in 0..w {
            let m = |dr: usize, dc: usize| o_mul(padded(data, h, w, r + dr, c + dc, 0), k[dr][dc]);
            out.push(o_add(o_add(o_add(m(0, 0), m(0, 1)), o_add(m(1, 0), m(1, 1))), bias));
        }
    }
    out
}

pub fn o_conv_f64(data: &[f64], h: usize, w: usize, k: [[f64; 2]; 2], bias: f64) -> Vec<f64> {
    let mut out = Vec::new();
    for r in 0..h {
        for c in 0..w {
            let mut s = bias;
            for (dr, row) in k.iter().enumerate() {
                for (dc, kv) in row.iter().enumerate() {
                    s += padded(data, h, w, r + dr, c + dc, 0.0) * kv;
                }
            }
            out.push(s);
        }
    }
    out
}

pub fn o_pool<T: Copy + PartialOrd>(data: &[T], h: usize, w: usize) -> Vec<T> {
    let mut out = Vec::new();
    for r in (0..h).step_by(2) {
        for c in (0..w).step_by(2) {
            let block = [data[r * w + c], data[r * w + c + 1], data[(r + 1) * w + c], data[(r + 1) * w + c + 1]];
            let mut m = block[0];
            for v in block {
                if v > m {
                    m = v;
                }
            }
            out.push(m);
        }
    }
    out
}

pub fn o_dense_fx(x: &[i32], weights: &[[i32; 49]; 10], biases: &[i32; 10]) -> [i32; 10] {
    std::array::from_fn(|o| {
        let mut acc = 0;
        for i in 0..49 {
            acc = o_add(acc, o_mul(weights[o][i], x[i]));
        }
        o_sigmoid(o_add(acc, biases[o]))
    })
}

pub fn o_dense_f64(x: &[f64], weights: &[[f64; 49]; 10], biases: &[f64; 10]) -> [f64; 10] {
    std::array::from_fn(|o| logistic(biases[o] + (0..49).map(|i| weights[o][i] * x[i]).sum::<f64>()))
}

pub fn raws(v: &[Fx32]) -> Vec<i32> {
    v.iter().map(|x| x.raw()).collect()
}

pub mod checks;

/// Learnable toy digits: class `k` lights a 6x6 block at a class-specific
/// spot, with pixel noise everywhere.
pub fn synthetic_set(n: usize, seed: u64) -> LabeledImageSet {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let k = (i * 7 + rng.gen_range(0..10)) % 10;
        let mut px = [0u8; 784];
        for p in px.iter_mut() {
            *p = rng.gen_range(0..40);
        }
        let (r0, c0) = (2 + (k / 5) * 12, 1 + (k % 5) * 5);
        for r in r0..r0 + 6 {
            for c in c0..(c0 + 6).min(28) {
                px[r * 28 + c] = rng.gen_range(180..=255);
            }
        }
        images.push(Image(px));
        labels.push(k as u8);
    }
    LabeledImageSet::new(images, labels).unwrap()
}
