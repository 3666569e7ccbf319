//! Whole-property checks shared by the focused tests and the acceptance run.
//! Each returns a list of human-readable failures; empty means the property held.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smallnet::dataio::{one_hot, Image};
use smallnet::fixedpoint::Fx32;
use smallnet::hwsim::{check_trace, run_pipeline, FsmState, Stage};
use smallnet::netcore::{
    conv2d_same, dense_forward, forward, maxpool2, ConvParams, DenseParams, FeatureMap, NetworkParams, Params,
};
use smallnet::quantizer::quantize_params;
use smallnet::trainer::{backward, cross_entropy_loss, init_params};

use super::*;

/// conv2d_same, maxpool2 and dense_forward against the brute-force oracles.
pub fn layer_oracles(seed: u64, instances: usize) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = Vec::new();
    for n in 0..instances {
        let (h, w) = (rng.gen_range(1..=9), rng.gen_range(1..=9));

        // conv, fixed
        let x = random_fx_map(&mut rng, h, w);
        let p = random_fx_conv(&mut rng);
        let got = raws(conv2d_same(&x, &p).data());
        let k = [[p.kernel[0][0].raw(), p.kernel[0][1].raw()], [p.kernel[1][0].raw(), p.kernel[1][1].raw()]];
        if got != o_conv_fx(&raws(x.data()), h, w, k, p.bias.raw()) {
            bad.push(format!("fixed conv {n} ({h}x{w})"));
        }

        // conv, real
        let xf = random_f64_map(&mut rng, h, w);
        let kf = [[rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)], [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)]];
        let pf = ConvParams { kernel: kf, bias: rng.gen_range(-2.0..2.0) };
        let want = o_conv_f64(xf.data(), h, w, kf, pf.bias);
        if conv2d_same(&xf, &pf).data().iter().zip(&want).any(|(a, b)| (a - b).abs() > 1e-12) {
            bad.push(format!("real conv {n} ({h}x{w})"));
        }

        // pool, both domains, with forced ties
        let (ph, pw) = (2 * rng.gen_range(1..=5), 2 * rng.gen_range(1..=5));
        let mut px = random_fx_map(&mut rng, ph, pw);
        if rng.gen_bool(0.3) {
            let v = px.get(0, 0);
            px.set(0, 1, v);
        }
        if raws(maxpool2(&px).unwrap().data()) != o_pool(&raws(px.data()), ph, pw) {
            bad.push(format!("fixed pool {n} ({ph}x{pw})"));
        }
        let pxf = random_f64_map(&mut rng, ph, pw);
        let want = o_pool(pxf.data(), ph, pw);
        if maxpool2(&pxf).unwrap().data().iter().zip(&want).any(|(a, b)| (a - b).abs() > 1e-12) {
            bad.push(format!("real pool {n} ({ph}x{pw})"));
        }

        // dense, fixed
        let xd: [Fx32; 49] = std::array::from_fn(|_| random_fx(&mut rng));
        let dp = random_fx_dense(&mut rng);
        let wr: [[i32; 49]; 10] = std::array::from_fn(|o| std::array::from_fn(|i| dp.weights[o][i].raw()));
        let br: [i32; 10] = std::array::from_fn(|o| dp.biases[o].raw());
        if raws(&dense_forward(&xd, &dp)) != o_dense_fx(&raws(&xd), &wr, &br) {
            bad.push(format!("fixed dense {n}"));
        }

        // dense, real
        let xr: [f64; 49] = std::array::from_fn(|_| rng.gen_range(0.0..1.0));
        let dpf = DenseParams {
            weights: std::array::from_fn(|_| std::array::from_fn(|_| rng.gen_range(-1.0..1.0))),
            biases: std::array::from_fn(|_| rng.gen_range(-1.0..1.0)),
        };
        let want = o_dense_f64(&xr, &dpf.weights, &dpf.biases);
        if dense_forward(&xr, &dpf).iter().zip(&want).any(|(a, b)| (a - b).abs() > 1e-12) {
            bad.push(format!("real dense {n}"));
        }
    }
    bad
}

/// Largest relative error of one image's analytic gradient against central
/// differences, and the failures above `tol`.
pub fn gradient_check(image: &FeatureMap<f64>, label: usize, params: &NetworkParams, h: f64, tol: f64) -> (f64, Vec<String>) {
    let target = one_hot(label).unwrap();
    let loss_at = |p: &NetworkParams| {
        let (scores, _) = forward(image, p).unwrap();
        cross_entropy_loss(&scores, &target)
    };
    let (_, grads) = backward(image, &target, params).unwrap();
    let analytic = grads.to_flat();
    let base = params.to_flat();
    let mut worst = 0.0f64;
    let mut bad = Vec::new();
    for k in 0..base.len() {
        let mut plus = base.clone();
        plus[k] += h;
        let mut minus = base.clone();
        minus[k] -= h;
        let numeric =
            (loss_at(&Params::from_flat(&plus).unwrap()) - loss_at(&Params::from_flat(&minus).unwrap())) / (2.0 * h);
        let a = analytic[k];
        let denom = a.abs().max(numeric.abs());
        let rel = if denom == 0.0 { 0.0 } else { (a - numeric).abs() / denom };
        worst = worst.max(rel);
        if rel > tol {
            bad.push(format!("param {k}: analytic {a:e} numeric {numeric:e} rel {rel:e}"));
        }
    }
    (worst, bad)
}

/// Random image, label and freshly initialized parameters, with nonzero
/// biases so every parameter carries gradient.
pub fn gradient_case(seed: u64) -> (FeatureMap<f64>, usize, NetworkParams) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let img = random_image(&mut rng);
    let mut params = init_params(seed);
    params.conv1.bias = rng.gen_range(-0.5..0.5);
    params.conv2.bias = rng.gen_range(-0.5..0.5);
    for b in params.dense.biases.iter_mut() {
        *b = rng.gen_range(-0.5..0.5);
    }
    (FeatureMap::from_image(&img), rng.gen_range(0..10), params)
}

/// Pipeline against the functional fixed-point forward pass, raw-bit equality.
pub fn pipeline_equivalence<'a>(
    images: impl IntoIterator<Item = &'a Image>,
    q: &Params<Fx32>,
) -> (usize, usize, Vec<String>) {
    let mut agree = 0;
    let mut total = 0;
    let mut bad = Vec::new();
    for (n, img) in images.into_iter().enumerate() {
        let x = FeatureMap::from_image_fixed(img);
        let (want, class) = forward(&x, q).unwrap();
        let run = run_pipeline(&x, q).unwrap();
        total += 1;
        if run.scores == want && run.result.class_code as usize == class {
            agree += 1;
        } else if bad.len() < 5 {
            bad.push(format!("image {n}: pipeline {:?} vs functional {:?}", run.scores, want));
        }
    }
    (agree, total, bad)
}

/// FSM edge legality and one interrupt per image.
pub fn fsm_discipline<'a>(images: impl IntoIterator<Item = &'a Image>, q: &Params<Fx32>) -> (usize, Vec<String>) {
    let mut bad = Vec::new();
    let mut count = 0;
    for (n, img) in images.into_iter().enumerate() {
        count += 1;
        let run = run_pipeline(&FeatureMap::from_image_fixed(img), q).unwrap();
        if let Err(e) = check_trace(&run.trace) {
            bad.push(format!("image {n}: {e}"));
        }
        let dones = run.trace.iter().filter(|v| v.stage == Stage::Dense && v.state == FsmState::Done).count();
        if run.interrupts != 1 || dones != 1 || !run.result.done_flag {
            bad.push(format!("image {n}: {} interrupts, {dones} dense DONE visits", run.interrupts));
        }
        if run.done_cycle <= run.last_score_write_cycle {
            bad.push(format!("image {n}: interrupt at {} before last score write {}", run.done_cycle, run.last_score_write_cycle));
        }
        if run.result.class_code > 9 {
            bad.push(format!("image {n}: class code {}", run.result.class_code));
        }
    }
    (count, bad)
}

/// A trained-looking parameter set without training: Glorot init, quantized.
pub fn sample_quantized(seed: u64) -> Params<Fx32> {
    quantize_params(&init_params(seed)).unwrap().params
}

/// Hex decode oracle: two's-complement reading of 8 hex digits.
fn hex_word(line: &str) -> Option<i32> {
    if line.len() != 8 {
        return None;
    }
    let mut v: u32 = 0;
    for ch in line.chars() {
        v = v * 16 + ch.to_digit(16)?;
    }
    Some(v as i32)
}

/// SNW1 and ROM round trips for `params`, written under `dir`.
pub fn weight_format_roundtrips(params: &NetworkParams, dir: &std::path::Path) -> Vec<String> {
    use smallnet::quantizer::{emit_rom_hex, read_rom_hex, read_weight_file, write_weight_file, ROM_FILES};
    let mut bad = Vec::new();
    let q = quantize_params(params).unwrap().params;

    let path = dir.join("w.snw");
    write_weight_file(params, &q, &path).unwrap();
    let (back_f, back_q) = read_weight_file(&path).unwrap();
    let same_bits = back_f.to_flat().iter().zip(params.to_flat()).all(|(a, b)| a.to_bits() == b.to_bits());
    if !same_bits {
        bad.push("SNW1 real values changed".into());
    }
    if back_q != q {
        bad.push("SNW1 fixed words changed".into());
    }

    let rom = dir.join("rom");
    let counts = emit_rom_hex(&q, &rom).unwrap();
    if counts != [5, 5, 490, 10] {
        bad.push(format!("line counts {counts:?}"));
    }
    // independent decode, in the documented line order
    let mut words = Vec::new();
    for name in ROM_FILES {
        let text = std::fs::read_to_string(rom.join(name)).unwrap();
        for line in text.lines().filter(|l| !l.starts_with("//")) {
            match hex_word(line) {
                Some(w) => words.push(w),
                None => bad.push(format!("{name}: bad line {line:?}")),
            }
        }
    }
    let mut want: Vec<i32> = Vec::new();
    for c in [&q.conv1, &q.conv2] {
        want.extend(c.kernel.iter().flatten().map(|w| w.raw()));
        want.push(c.bias.raw());
    }
    want.extend(q.dense.weights.iter().flatten().map(|w| w.raw()));
    want.extend(q.dense.biases.iter().map(|w| w.raw()));
    if words != want {
        bad.push("ROM words differ from the quantized parameters".into());
    }
    if read_rom_hex(&rom).unwrap() != q {
        bad.push("read_rom_hex does not invert emit_rom_hex".into());
    }
    let first: Vec<Vec<u8>> = ROM_FILES.iter().map(|n| std::fs::read(rom.join(n)).unwrap()).collect();
    emit_rom_hex(&q, &rom).unwrap();
    let second: Vec<Vec<u8>> = ROM_FILES.iter().map(|n| std::fs::read(rom.join(n)).unwrap()).collect();
    if first != second {
        bad.push("re-emitted ROM files differ".into());
    }
    bad
}

/// IDX parse then serialize must reproduce the input bytes.
pub fn idx_roundtrip(image_bytes: &[u8], label_bytes: &[u8]) -> Vec<String> {
    use smallnet::dataio::{parse_idx_images, parse_idx_labels, serialize_idx_images, serialize_idx_labels};
    let mut bad = Vec::new();
    if serialize_idx_images(&parse_idx_images(image_bytes).unwrap()) != image_bytes {
        bad.push("image file bytes changed".into());
    }
    if serialize_idx_labels(&parse_idx_labels(label_bytes).unwrap()) != label_bytes {
        bad.push("label file bytes changed".into());
    }
    bad
}
