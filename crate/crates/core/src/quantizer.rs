//! Float-to-Q16.16 conversion, the `SNW1` weight file, and ROM hex images.
//!
//! # SNW1 layout (all scalars little-endian)
//!
//! ```text
//! magic      4 bytes  "SNW1"
//! version    u16      1
//! int_bits   u8       16
//! frac_bits  u8       16
//! records    u16      3
//! per record:
//!   tag      u8       1 = conv1, 2 = conv2, 3 = dense
//!   ndims    u8
//!   dims     ndims x u32   weight tensor shape ([2,2] conv, [10,49] dense)
//!   nbias    u32           bias count (1 conv, 10 dense)
//!   raw      (prod(dims) + nbias) x i32   fixed-point words, weights then biases
//!   real     (prod(dims) + nbias) x f64   original values, same order
//! ```
//!
//! # ROM hex images
//!
//! One 32-bit word per line as 8 uppercase hex digits, no prefix, in the
//! format read by `$readmemh`. Lines starting with `//` are comments.
//! `conv1.mem`/`conv2.mem` hold k00 k01 k10 k11 bias; `dense_w.mem` holds
//! the 490 weights output-major with each row in flatten order
//! (`line = 49*o + 7*r + c`); `dense_b.mem` holds the 10 biases.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::fixedpoint::{FixedPointError, Fx32, FRAC_BITS, INT_BITS};
use crate::netcore::{ConvParams, DenseParams, NetworkParams, Params, DENSE_IN, DENSE_OUT, KERNEL};

pub const WEIGHT_MAGIC: [u8; 4] = *b"SNW1";
pub const WEIGHT_VERSION: u16 = 1;

pub type QuantizedParams = Params<Fx32>;

#[derive(Debug, Error)]
pub enum QuantError {
    #[error("bad weight file magic {0:?}")]
    Magic([u8; 4]),
    #[error("unsupported weight file version {0}")]
    Version(u16),
    #[error("unsupported q-format Q{int_bits}.{frac_bits}")]
    QFormat { int_bits: u8, frac_bits: u8 },
    #[error("weight file truncated at byte {0}")]
    Truncated(usize),
    #[error("record {tag}: declared {declared} values, expected {expected}")]
    Count { tag: u8, declared: u64, expected: usize },
    #[error("unexpected record tag {found}, expected {expected}")]
    Tag { expected: u8, found: u8 },
    #[error("{0} trailing bytes after last record")]
    Trailing(usize),
    #[error("{file}:{line}: {reason}")]
    Hex { file: String, line: usize, reason: String },
    #[error(transparent)]
    Fixed(#[from] FixedPointError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> QuantError + '_ {
    move |source| QuantError::Io { path: path.display().to_string(), source }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Quantized {
    pub params: QuantizedParams,
    /// Scalars that fell outside the Q16.16 range and were clamped.
    pub saturated: usize,
}

pub fn quantize_params(params: &NetworkParams) -> Result<Quantized, QuantError> {
    let mut out = QuantizedParams::zeros();
    let mut saturated = 0;
    for (slot, &v) in out.scalars_mut().zip(params.scalars()) {
        let (q, clamped) = Fx32::from_real_checked(v)?;
        saturated += clamped as usize;
        *slot = q;
    }
    Ok(Quantized { params: out, saturated })
}

pub fn dequantize_params(q: &QuantizedParams) -> NetworkParams {
    q.map(Fx32::to_real)
}

struct Record<'a> {
    tag: u8,
    dims: &'a [u32],
    nbias: u32,
}

const RECORDS: [Record<'static>; 3] = [
    Record { tag: 1, dims: &[KERNEL as u32, KERNEL as u32], nbias: 1 },
    Record { tag: 2, dims: &[KERNEL as u32, KERNEL as u32], nbias: 1 },
    Record { tag: 3, dims: &[DENSE_OUT as u32, DENSE_IN as u32], nbias: DENSE_OUT as u32 },
];

fn record_len(r: &Record<'_>) -> usize {
    r.dims.iter().product::<u32>() as usize + r.nbias as usize
}

/// Serializes both parameter forms to SNW1 bytes.
pub fn encode_weight_file(params: &NetworkParams, qparams: &QuantizedParams) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&WEIGHT_MAGIC);
    out.extend_from_slice(&WEIGHT_VERSION.to_le_bytes());
    out.push(INT_BITS as u8);
    out.push(FRAC_BITS as u8);
    out.extend_from_slice(&(RECORDS.len() as u16).to_le_bytes());

    let reals = params.to_flat();
    let raws = qparams.to_flat();
    let mut at = 0;
    for r in &RECORDS {
        let n = record_len(r);
        out.push(r.tag);
        out.push(r.dims.len() as u8);
        for d in r.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        out.extend_from_slice(&r.nbias.to_le_bytes());
        for q in &raws[at..at + n] {
            out.extend_from_slice(&q.raw().to_le_bytes());
        }
        for v in &reals[at..at + n] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        at += n;
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], QuantError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(QuantError::Truncated(self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], QuantError> {
        Ok(self.take(N)?.try_into().expect("exact length"))
    }

    fn u8(&mut self) -> Result<u8, QuantError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, QuantError> {
        self.array().map(u16::from_le_bytes)
    }

    fn u32(&mut self) -> Result<u32, QuantError> {
        self.array().map(u32::from_le_bytes)
    }
}

pub fn decode_weight_file(bytes: &[u8]) -> Result<(NetworkParams, QuantizedParams), QuantError> {
    let mut c = Cursor { bytes, pos: 0 };
    let magic: [u8; 4] = c.array()?;
    if magic != WEIGHT_MAGIC {
        return Err(QuantError::Magic(magic));
    }
    let version = c.u16()?;
    if version != WEIGHT_VERSION {
        return Err(QuantError::Version(version));
    }
    let (int_bits, frac_bits) = (c.u8()?, c.u8()?);
    if int_bits as u32 != INT_BITS || frac_bits as u32 != FRAC_BITS {
        return Err(QuantError::QFormat { int_bits, frac_bits });
    }
    let nrec = c.u16()?;
    if nrec as usize != RECORDS.len() {
        return Err(QuantError::Count { tag: 0, declared: nrec as u64, expected: RECORDS.len() });
    }

    let mut raws = Vec::with_capacity(NetworkParams::COUNT);
    let mut reals = Vec::with_capacity(NetworkParams::COUNT);
    for r in &RECORDS {
        let tag = c.u8()?;
        if tag != r.tag {
            return Err(QuantError::Tag { expected: r.tag, found: tag });
        }
        let ndims = c.u8()?;
        let mut declared: u64 = 1;
        for _ in 0..ndims {
            declared = declared.saturating_mul(c.u32()? as u64);
        }
        declared = declared.saturating_add(c.u32()? as u64);
        let expected = record_len(r);
        if declared != expected as u64 {
            return Err(QuantError::Count { tag, declared, expected });
        }
        for chunk in c.take(4 * expected)?.chunks_exact(4) {
            raws.push(Fx32::from_raw(i32::from_le_bytes(chunk.try_into().expect("4 bytes"))));
        }
        for chunk in c.take(8 * expected)?.chunks_exact(8) {
            reals.push(f64::from_le_bytes(chunk.try_into().expect("8 bytes")));
        }
    }
    if c.pos != bytes.len() {
        return Err(QuantError::Trailing(bytes.len() - c.pos));
    }
    let params = NetworkParams::from_flat(&reals).expect("record sizes sum to 510");
    let qparams = QuantizedParams::from_flat(&raws).expect("record sizes sum to 510");
    Ok((params, qparams))
}

/// Writes `bytes` to `path` via a sibling temp file and rename, so a failed
/// write never leaves a partial file behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), QuantError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(io_err(path))
}

pub fn write_weight_file(params: &NetworkParams, qparams: &QuantizedParams, path: &Path) -> Result<(), QuantError> {
    write_atomic(path, &encode_weight_file(params, qparams))
}

pub fn read_weight_file(path: &Path) -> Result<(NetworkParams, QuantizedParams), QuantError> {
    decode_weight_file(&fs::read(path).map_err(io_err(path))?)
}

pub const ROM_FILES: [&str; 4] = ["conv1.mem", "conv2.mem", "dense_w.mem", "dense_b.mem"];

fn conv_words(c: &ConvParams<Fx32>) -> Vec<Fx32> {
    c.kernel.iter().flatten().copied().chain(std::iter::once(c.bias)).collect()
}

/// The four ROM images as (file name, text).
pub fn rom_images(q: &QuantizedParams) -> Vec<(&'static str, String)> {
    let render = |header: &str, words: &[Fx32]| {
        let mut s = format!("// {header}\n");
        for w in words {
            s.push_str(&format!("{:08X}\n", w.bits()));
        }
        s
    };
    let dense_w: Vec<Fx32> = q.dense.weights.iter().flatten().copied().collect();
    vec![
        (ROM_FILES[0], render("conv1 Q16.16: k00 k01 k10 k11 bias", &conv_words(&q.conv1))),
        (ROM_FILES[1], render("conv2 Q16.16: k00 k01 k10 k11 bias", &conv_words(&q.conv2))),
        (
            ROM_FILES[2],
            render("dense weights Q16.16: 10x49 output-major, line = 49*o + 7*r + c (row-major flatten)", &dense_w),
        ),
        (ROM_FILES[3], render("dense biases Q16.16: classes 0..9", &q.dense.biases)),
    ]
}

/// Writes the ROM images into `dir`; returns the data-line count per file.
pub fn emit_rom_hex(q: &QuantizedParams, dir: &Path) -> Result<[usize; 4], QuantError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut counts = [0; 4];
    for (i, (name, text)) in rom_images(q).into_iter().enumerate() {
        write_atomic(&dir.join(name), text.as_bytes())?;
        counts[i] = text.lines().filter(|l| !l.starts_with("//")).count();
    }
    Ok(counts)
}

/// Parses one ROM image, skipping blank and `//` lines.
pub fn parse_rom_hex(name: &str, text: &str) -> Result<Vec<Fx32>, QuantError> {
    let mut words = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with("//") {
            continue;
        }
        let bad = |reason: String| QuantError::Hex { file: name.to_string(), line: n + 1, reason };
        if line.len() != 8 || !line.bytes().all(|b| b.is_ascii_digit() || (b'A'..=b'F').contains(&b)) {
            return Err(bad(format!("expected 8 uppercase hex digits, got {line:?}")));
        }
        let bits = u32::from_str_radix(line, 16).map_err(|e| bad(e.to_string()))?;
        words.push(Fx32::from_bits(bits));
    }
    Ok(words)
}

pub fn read_rom_hex(dir: &Path) -> Result<QuantizedParams, QuantError> {
    let expected = [5, 5, DENSE_IN * DENSE_OUT, DENSE_OUT];
    let mut flat = Vec::with_capacity(NetworkParams::COUNT);
    let mut dense_w = Vec::new();
    let mut dense_b = Vec::new();
    for (i, name) in ROM_FILES.iter().enumerate() {
        let path = dir.join(name);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let words = parse_rom_hex(name, &text)?;
        if words.len() != expected[i] {
            return Err(QuantError::Hex {
                file: name.to_string(),
                line: 0,
                reason: format!("{} values, expected {}", words.len(), expected[i]),
            });
        }
        match i {
            0 | 1 => flat.extend(words),
            2 => dense_w = words,
            _ => dense_b = words,
        }
    }
    let mut dense = DenseParams::<Fx32>::zeros();
    for (slot, w) in dense.weights.iter_mut().flatten().zip(dense_w) {
        *slot = w;
    }
    dense.biases.copy_from_slice(&dense_b);
    let mut q = QuantizedParams::from_flat(&[flat, vec![Fx32::ZERO; DenseParams::<Fx32>::COUNT]].concat())
        .expect("510 values");
    q.dense = dense;
    Ok(q)
}
