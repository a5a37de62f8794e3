//! Fixed-point GRU-FC classifier: two 48-unit GRU layers on 16 inputs, a
//! 12-way fully connected head, LUT activations and Q6.8 activations.
//!
//! Arithmetic contract (bit-exact, shared with the weight exporter):
//!
//! * weights are `i8` with a per-tensor power-of-two scale `2^e`; biases
//!   and activations are Q6.8 (`raw / 256`, raw in `[-8192, 8191]`);
//! * each `w·x` product is shifted right by 4 with round-half-away before
//!   accumulation, which keeps a 48-term dot product inside a signed
//!   24-bit accumulator;
//! * the accumulator is requantized to Q6.8 by a shift of `e + 4` (round
//!   half away), and every sum saturates to the Q6.8 range;
//! * gate values `r`, `z` are Q0.8 in `[0, 256]`;
//!   `h' = ((256 − z)·n + z·h) / 256` rounded once, half away from zero.

use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::N_CLASSES;

pub const INPUT_DIM: usize = 16;
pub const HIDDEN: usize = 48;
pub const LAYERS: usize = 2;
pub const CLASSES: usize = N_CLASSES;
pub const MAGIC: &[u8; 4] = b"TDKW";
pub const VERSION: u16 = 1;
/// On-chip weight memory budget.
pub const WMEM_BYTES: usize = 24 * 1024;
const PRODUCT_SHIFT: u32 = 4;
const ACC_LIMIT: i64 = 1 << 23;

/// Signed 14-bit fixed point with 8 fractional bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Q6p8(i16);

impl Q6p8 {
    pub const MIN_RAW: i32 = -8192;
    pub const MAX_RAW: i32 = 8191;
    pub const ONE: Q6p8 = Q6p8(256);
    pub const ZERO: Q6p8 = Q6p8(0);

    /// Saturating constructor.
    pub fn from_raw(raw: i64) -> Self {
        Q6p8(raw.clamp(Self::MIN_RAW as i64, Self::MAX_RAW as i64) as i16)
    }

    pub fn from_f64(v: f64) -> Self {
        Self::from_raw((v * 256.0).round() as i64)
    }

    pub fn raw(self) -> i16 {
        self.0
    }

    pub fn to_f64(self) -> f64 {
        self.0 as f64 / 256.0
    }

    pub fn saturating_add(self, other: Q6p8) -> Q6p8 {
        Self::from_raw(self.0 as i64 + other.0 as i64)
    }

    pub fn saturating_mul(self, other: Q6p8) -> Q6p8 {
        Self::from_raw(shift_round(self.0 as i64 * other.0 as i64, 8))
    }
}

/// Arithmetic shift right by `s` with round-half-away-from-zero.
pub fn shift_round(v: i64, s: u32) -> i64 {
    if s == 0 {
        return v;
    }
    let half = 1i64 << (s - 1);
    if v >= 0 {
        (v + half) >> s
    } else {
        -((-v + half) >> s)
    }
}

/// Multiplies by `2^shift` (shift may be negative), rounding half away.
fn scale_pow2(v: i64, shift: i32) -> i64 {
    if shift >= 0 {
        v.saturating_mul(1 << shift.min(40))
    } else {
        shift_round(v, (-shift) as u32)
    }
}

/// Weight matrix with one power-of-two scale.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantMatrix {
    pub rows: usize,
    pub cols: usize,
    /// Row-major.
    pub data: Vec<i8>,
    pub exponent: i8,
}

impl QuantMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        QuantMatrix {
            rows,
            cols,
            data: vec![0; rows * cols],
            exponent: 0,
        }
    }

    /// Row `i` dot `x`, requantized to Q6.8 (not yet saturated).
    pub fn dot_row(&self, i: usize, x: &[Q6p8]) -> i64 {
        let row = &self.data[i * self.cols..(i + 1) * self.cols];
        let acc: i64 = row
            .iter()
            .zip(x)
            .map(|(&w, &v)| shift_round(w as i64 * v.0 as i64, PRODUCT_SHIFT))
            .sum();
        debug_assert!(acc.abs() < ACC_LIMIT, "accumulator overflow: {acc}");
        scale_pow2(acc, self.exponent as i32 + PRODUCT_SHIFT as i32)
    }

    pub fn value(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c] as f64 * 2f64.powi(self.exponent as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GateWeights {
    pub w_ih: QuantMatrix,
    pub w_hh: QuantMatrix,
    /// Q6.8. For r and z this is `b_i + b_h`; for n it is `b_in` only.
    pub bias: Vec<i16>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GruLayer {
    pub input_dim: usize,
    /// Gate order r, z, n.
    pub gates: [GateWeights; 3],
    /// Hidden-side candidate bias, applied inside the reset product.
    pub bias_hn: Vec<i16>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FcLayer {
    pub w: QuantMatrix,
    pub bias: Vec<i16>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GruFcWeights {
    pub layers: Vec<GruLayer>,
    pub fc: FcLayer,
}

fn sigmoid_table() -> &'static [i32; 257] {
    static T: OnceLock<[i32; 257]> = OnceLock::new();
    T.get_or_init(|| {
        std::array::from_fn(|i| {
            let x = i as f64 / 16.0;
            ((65536.0 / (1.0 + (-x).exp())).round() as i32).clamp(1, 65535)
        })
    })
}

fn tanh_table() -> &'static [i32; 257] {
    static T: OnceLock<[i32; 257]> = OnceLock::new();
    T.get_or_init(|| std::array::from_fn(|i| (65536.0 * (i as f64 / 32.0).tanh()).round() as i32))
}

/// Piecewise-linear lookup on `|raw|` with `seg` raw units per segment;
/// returns Q0.16.
fn lut_interp(table: &[i32; 257], magnitude: i32, seg: i32) -> i32 {
    let idx = (magnitude / seg) as usize;
    if idx >= 256 {
        return table[256];
    }
    let frac = magnitude % seg;
    let (a, b) = (table[idx], table[idx + 1]);
    a + shift_round(((b - a) * frac) as i64, seg.trailing_zeros()) as i32
}

/// Sigmoid of a Q6.8 value as Q0.8 in `[0, 256]`. The table spans
/// `[0, 16)` in 256 segments; negative inputs use `σ(−x) = 1 − σ(x)`.
pub fn sigmoid_q8(x: Q6p8) -> i32 {
    let pos = lut_interp(sigmoid_table(), (x.0 as i32).abs(), 16);
    let v = if x.0 < 0 { 65536 - pos } else { pos }.clamp(1, 65535);
    shift_round(v as i64, 8) as i32
}

/// Tanh of a Q6.8 value as Q6.8 in `[-256, 256]`; the table spans `[0, 8)`
/// in 256 segments and the function is odd by construction.
pub fn tanh_q8(x: Q6p8) -> Q6p8 {
    let pos = shift_round(lut_interp(tanh_table(), (x.0 as i32).abs(), 8) as i64, 8);
    Q6p8::from_raw(if x.0 < 0 { -pos } else { pos })
}

impl GruLayer {
    pub fn zeros(input_dim: usize) -> Self {
        let gate = || GateWeights {
            w_ih: QuantMatrix::zeros(HIDDEN, input_dim),
            w_hh: QuantMatrix::zeros(HIDDEN, HIDDEN),
            bias: vec![0; HIDDEN],
        };
        GruLayer {
            input_dim,
            gates: [gate(), gate(), gate()],
            bias_hn: vec![0; HIDDEN],
        }
    }

    /// One time step of the cell.
    pub fn step(&self, x: &[Q6p8], h: &[Q6p8]) -> Result<Vec<Q6p8>> {
        if x.len() != self.input_dim || h.len() != HIDDEN {
            return Err(Error::contract(format!(
                "GRU step expects x[{}], h[{HIDDEN}], got x[{}], h[{}]",
                self.input_dim,
                x.len(),
                h.len()
            )));
        }
        let [gr, gz, gn] = &self.gates;
        let mut out = Vec::with_capacity(HIDDEN);
        for k in 0..HIDDEN {
            let pre_r = Q6p8::from_raw(gr.w_ih.dot_row(k, x) + gr.w_hh.dot_row(k, h) + gr.bias[k] as i64);
            let pre_z = Q6p8::from_raw(gz.w_ih.dot_row(k, x) + gz.w_hh.dot_row(k, h) + gz.bias[k] as i64);
            let r = sigmoid_q8(pre_r) as i64;
            let z = sigmoid_q8(pre_z) as i64;
            let hn = Q6p8::from_raw(gn.w_hh.dot_row(k, h) + self.bias_hn[k] as i64);
            let pre_n = Q6p8::from_raw(gn.w_ih.dot_row(k, x) + gn.bias[k] as i64 + shift_round(r * hn.0 as i64, 8));
            let n = tanh_q8(pre_n).0 as i64;
            out.push(Q6p8::from_raw(shift_round((256 - z) * n + z * h[k].0 as i64, 8)));
        }
        Ok(out)
    }
}

impl GruFcWeights {
    pub fn zeros() -> Self {
        GruFcWeights {
            layers: vec![GruLayer::zeros(INPUT_DIM), GruLayer::zeros(HIDDEN)],
            fc: FcLayer {
                w: QuantMatrix::zeros(CLASSES, HIDDEN),
                bias: vec![0; CLASSES],
            },
        }
    }

    /// Uniform random weights for tests and benchmarks. Exponents are
    /// chosen so pre-activations stay around unit scale for unit-variance
    /// inputs.
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = Self::zeros();
        let fill = |m: &mut QuantMatrix, e: i8, rng: &mut ChaCha8Rng| {
            m.exponent = e;
            m.data.iter_mut().for_each(|v| *v = rng.random_range(-127..=127));
        };
        for layer in &mut w.layers {
            for g in &mut layer.gates {
                fill(&mut g.w_ih, -8, &mut rng);
                fill(&mut g.w_hh, -8, &mut rng);
                g.bias.iter_mut().for_each(|b| *b = rng.random_range(-128..=128));
            }
            layer.bias_hn.iter_mut().for_each(|b| *b = rng.random_range(-128..=128));
        }
        fill(&mut w.fc.w, -7, &mut rng);
        w.fc.bias.iter_mut().for_each(|b| *b = rng.random_range(-128..=128));
        w
    }

    /// Bytes of weights, biases and exponents (header and CRC excluded).
    pub fn parameter_bytes(&self) -> usize {
        let mut n = 0;
        for l in &self.layers {
            for g in &l.gates {
                n += g.w_ih.data.len() + g.w_hh.data.len() + 2 * g.bias.len() + 2;
            }
            n += 2 * l.bias_hn.len();
        }
        n + self.fc.w.data.len() + 1 + 2 * self.fc.bias.len()
    }

    /// Multiply-accumulates per input frame (both GRU layers).
    pub fn macs_per_frame(&self) -> usize {
        self.layers
            .iter()
            .map(|l| 3 * HIDDEN * (l.input_dim + HIDDEN))
            .sum()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &'static str, detail: String| Err(Error::WeightLoad { field, detail });
        if self.layers.len() != LAYERS {
            return bad("layers", format!("expected {LAYERS}, found {}", self.layers.len()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            let want_in = if i == 0 { INPUT_DIM } else { HIDDEN };
            if l.input_dim != want_in {
                return bad("input", format!("layer {i} input {} != {want_in}", l.input_dim));
            }
            for g in &l.gates {
                if g.w_ih.rows != HIDDEN || g.w_ih.cols != want_in || g.w_hh.rows != HIDDEN || g.w_hh.cols != HIDDEN {
                    return bad("hidden", format!("layer {i} gate matrix shape mismatch"));
                }
                if g.bias.len() != HIDDEN {
                    return bad("bias", format!("layer {i} gate bias length {}", g.bias.len()));
                }
            }
            for b in l.gates.iter().flat_map(|g| &g.bias).chain(&l.bias_hn) {
                if (*b as i32) < Q6p8::MIN_RAW || (*b as i32) > Q6p8::MAX_RAW {
                    return bad("bias", format!("layer {i} bias {b} outside Q6.8"));
                }
            }
        }
        if self.fc.w.rows != CLASSES || self.fc.w.cols != HIDDEN || self.fc.bias.len() != CLASSES {
            return bad("classes", "FC shape mismatch".into());
        }
        if self.fc.bias.iter().any(|&b| (b as i32) < Q6p8::MIN_RAW || (b as i32) > Q6p8::MAX_RAW) {
            return bad("bias", "FC bias outside Q6.8".into());
        }
        let n = self.parameter_bytes();
        if n > WMEM_BYTES {
            return bad("size", format!("{n} parameter bytes exceed {WMEM_BYTES}"));
        }
        Ok(())
    }

    /// Little-endian `TDKW` v1 image with trailing CRC32.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.parameter_bytes() + 18);
        out.extend_from_slice(MAGIC);
        for v in [VERSION, LAYERS as u16, INPUT_DIM as u16, HIDDEN as u16, CLASSES as u16] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let push_i8 = |out: &mut Vec<u8>, d: &[i8]| out.extend(d.iter().map(|&v| v as u8));
        let push_i16 = |out: &mut Vec<u8>, d: &[i16]| d.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        for l in &self.layers {
            for g in &l.gates {
                push_i8(&mut out, &g.w_ih.data);
                push_i8(&mut out, &g.w_hh.data);
                push_i16(&mut out, &g.bias);
                out.push(g.w_ih.exponent as u8);
                out.push(g.w_hh.exponent as u8);
            }
            push_i16(&mut out, &l.bias_hn);
        }
        push_i8(&mut out, &self.fc.w.data);
        out.push(self.fc.w.exponent as u8);
        push_i16(&mut out, &self.fc.bias);
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let err = |field: &'static str, detail: String| Error::WeightLoad { field, detail };
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(err("magic", "expected `TDKW`".into()));
        }
        if bytes.len() < 14 + 4 {
            return Err(err("header", format!("file truncated at {} bytes", bytes.len())));
        }
        let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
        let checks: [(&'static str, usize, u16); 5] = [
            ("version", 4, VERSION),
            ("layers", 6, LAYERS as u16),
            ("input", 8, INPUT_DIM as u16),
            ("hidden", 10, HIDDEN as u16),
            ("classes", 12, CLASSES as u16),
        ];
        for (field, off, want) in checks {
            let got = u16_at(off);
            if got != want {
                return Err(err(field, format!("expected {want}, found {got}")));
            }
        }
        let expected_len = 14 + Self::zeros().parameter_bytes() + 4;
        if bytes.len() != expected_len {
            return Err(err(
                "payload",
                format!("expected {expected_len} bytes, found {}", bytes.len()),
            ));
        }
        let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(crc_bytes.try_into().expect("4 bytes"));
        let actual = crc32fast::hash(body);
        if stored != actual {
            return Err(err("crc32", format!("stored {stored:08x}, computed {actual:08x}")));
        }

        let mut pos = 14;
        let mut take = |n: usize| {
            let s = &body[pos..pos + n];
            pos += n;
            s
        };
        let mut w = Self::zeros();
        for layer in &mut w.layers {
            for g in &mut layer.gates {
                let n_ih = g.w_ih.data.len();
                g.w_ih.data = take(n_ih).iter().map(|&b| b as i8).collect();
                g.w_hh.data = take(HIDDEN * HIDDEN).iter().map(|&b| b as i8).collect();
                g.bias = take(2 * HIDDEN)
                    .chunks_exact(2)
                    .map(|c| i16::from_le_bytes([c[0], c[1]]))
                    .collect();
                g.w_ih.exponent = take(1)[0] as i8;
                g.w_hh.exponent = take(1)[0] as i8;
            }
            layer.bias_hn = take(2 * HIDDEN)
                .chunks_exact(2)
                .map(|c| i16::from_le_bytes([c[0], c[1]]))
                .collect();
        }
        w.fc.w.data = take(CLASSES * HIDDEN).iter().map(|&b| b as i8).collect();
        w.fc.w.exponent = take(1)[0] as i8;
        w.fc.bias = take(2 * CLASSES)
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]))
            .collect();
        w.validate()?;
        Ok(w)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// SHA-256 of the serialized image, hex encoded.
    pub fn digest(&self) -> String {
        Sha256::digest(self.to_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// FC scores for a hidden state.
    pub fn fc_scores(&self, h: &[Q6p8]) -> [Q6p8; CLASSES] {
        std::array::from_fn(|c| Q6p8::from_raw(self.fc.w.dot_row(c, h) + self.fc.bias[c] as i64))
    }
}

/// Index of the largest score; ties go to the lower index.
pub fn argmax<T: PartialOrd + Copy>(scores: &[T]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate().skip(1) {
        if *s > scores[best] {
            best = i;
        }
    }
    best
}

/// Runs a whole stream from zero state and classifies on the last hidden
/// state of the top layer.
///
/// Cost is [`GruFcWeights::macs_per_frame`] (23,040) multiply-accumulates
/// per frame plus 576 for the head; frames arrive every 16.384 ms, so the
/// recurrence is never the latency bottleneck of the chain.
pub fn classify_stream(frames: &[[i16; INPUT_DIM]], weights: &GruFcWeights) -> Result<(usize, [Q6p8; CLASSES])> {
    if frames.is_empty() {
        return Err(Error::Empty("feature stream has no frames".into()));
    }
    let mut h: Vec<Vec<Q6p8>> = vec![vec![Q6p8::ZERO; HIDDEN]; weights.layers.len()];
    for f in frames {
        let mut x: Vec<Q6p8> = f.iter().map(|&v| Q6p8::from_raw(v as i64)).collect();
        for (l, layer) in weights.layers.iter().enumerate() {
            h[l] = layer.step(&x, &h[l])?;
            x = h[l].clone();
        }
    }
    let scores = weights.fc_scores(h.last().expect("at least one layer"));
    Ok((argmax(&scores), scores))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shift_round_is_half_away() {
        assert_eq!(shift_round(8, 4), 1);
        assert_eq!(shift_round(7, 4), 0);
        assert_eq!(shift_round(-8, 4), -1);
        assert_eq!(shift_round(-7, 4), 0);
        assert_eq!(shift_round(3, 1), 2);
        assert_eq!(shift_round(-3, 1), -2);
    }

    #[test]
    fn q6p8_saturates() {
        assert_eq!(Q6p8::from_f64(100.0).raw(), 8191);
        assert_eq!(Q6p8::from_f64(-100.0).raw(), -8192);
        assert_eq!(Q6p8::from_raw(8000).saturating_add(Q6p8::from_raw(8000)).raw(), 8191);
        assert_eq!(Q6p8::ONE.saturating_mul(Q6p8::from_f64(1.5)).to_f64(), 1.5);
    }

    #[test]
    fn lut_accuracy_and_symmetry() {
        let mut worst_s: f64 = 0.0;
        let mut worst_t: f64 = 0.0;
        for raw in Q6p8::MIN_RAW..=Q6p8::MAX_RAW {
            let x = Q6p8::from_raw(raw as i64);
            let xf = x.to_f64();
            let s = sigmoid_q8(x) as f64 / 256.0;
            worst_s = worst_s.max((s - 1.0 / (1.0 + (-xf).exp())).abs());
            let t = tanh_q8(x).to_f64();
            worst_t = worst_t.max((t - xf.tanh()).abs());
            if raw > Q6p8::MIN_RAW {
                let neg = Q6p8::from_raw(-raw as i64);
                assert_eq!(tanh_q8(neg).raw(), -tanh_q8(x).raw());
            }
        }
        assert!(worst_s <= 1.0 / 256.0, "sigmoid error {worst_s}");
        assert!(worst_t <= 1.0 / 256.0, "tanh error {worst_t}");
        assert_eq!(sigmoid_q8(Q6p8::ZERO), 128);
        assert!(sigmoid_table().iter().all(|&v| v > 0 && v < 65536));
    }

    #[test]
    fn zero_weights_halve_hidden_state() {
        let layer = GruLayer::zeros(INPUT_DIM);
        let x = vec![Q6p8::from_raw(1234); INPUT_DIM];
        let h: Vec<Q6p8> = (0..HIDDEN as i64).map(|i| Q6p8::from_raw(i * 171 - 4000)).collect();
        let out = layer.step(&x, &h).unwrap();
        for (a, b) in h.iter().zip(&out) {
            assert_eq!(b.raw() as i64, shift_round(a.raw() as i64, 1));
        }
        let zeros = vec![Q6p8::ZERO; HIDDEN];
        assert_eq!(layer.step(&vec![Q6p8::ZERO; INPUT_DIM], &zeros).unwrap(), zeros);
    }

    #[test]
    fn step_rejects_bad_dims() {
        let layer = GruLayer::zeros(INPUT_DIM);
        assert!(matches!(
            layer.step(&[Q6p8::ZERO; 3], &[Q6p8::ZERO; HIDDEN]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn convex_update_bound() {
        let w = GruFcWeights::random(5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let x: Vec<Q6p8> = (0..INPUT_DIM).map(|_| Q6p8::from_raw(rng.random_range(-8192..=8191))).collect();
            let h: Vec<Q6p8> = (0..HIDDEN).map(|_| Q6p8::from_raw(rng.random_range(-300..=300))).collect();
            let out = w.layers[0].step(&x, &h).unwrap();
            for (k, v) in out.iter().enumerate() {
                assert!(v.raw().abs() <= h[k].raw().abs().max(256));
            }
        }
    }

    #[test]
    fn one_hot_bias_and_ties() {
        let mut w = GruFcWeights::zeros();
        w.fc.bias[7] = 256;
        let frames = vec![[100i16; INPUT_DIM]; 5];
        assert_eq!(classify_stream(&frames, &w).unwrap().0, 7);
        let tie = GruFcWeights::zeros();
        assert_eq!(classify_stream(&frames, &tie).unwrap().0, 0);
        assert_eq!(argmax(&[1, 5, 5, 2]), 1);
        assert!(matches!(classify_stream(&[], &w), Err(Error::Empty(_))));
    }

    #[test]
    fn file_roundtrip_and_size() {
        let w = GruFcWeights::random(11);
        assert_eq!(w.parameter_bytes(), 24_421);
        assert!(w.parameter_bytes() <= WMEM_BYTES);
        let bytes = w.to_bytes();
        assert_eq!(GruFcWeights::from_bytes(&bytes).unwrap(), w);
        assert_eq!(w.macs_per_frame(), 23_040);
    }

    #[test]
    fn load_errors_name_the_field() {
        let bytes = GruFcWeights::random(2).to_bytes();
        let field = |b: &[u8]| match GruFcWeights::from_bytes(b) {
            Err(Error::WeightLoad { field, .. }) => field,
            other => panic!("expected load error, got {other:?}"),
        };
        assert_eq!(field(&bytes[..100]), "payload");
        let mut b = bytes.clone();
        b[0] = b'X';
        assert_eq!(field(&b), "magic");
        let mut b = bytes.clone();
        b[4] = 2;
        assert_eq!(field(&b), "version");
        let mut b = bytes.clone();
        b[10] = 47;
        assert_eq!(field(&b), "hidden");
        let mut b = bytes.clone();
        b[500] ^= 0x40;
        assert_eq!(field(&b), "crc32");
    }

    #[test]
    fn deterministic_across_threads() {
        use rayon::prelude::*;
        let w = GruFcWeights::random(3);
        let streams: Vec<Vec<[i16; INPUT_DIM]>> = (0..8)
            .map(|s| (0..20).map(|i| [((s * 31 + i * 7) % 512 - 256) as i16; INPUT_DIM]).collect())
            .collect();
        let serial: Vec<_> = streams.iter().map(|s| classify_stream(s, &w).unwrap()).collect();
        let parallel: Vec<_> = streams.par_iter().map(|s| classify_stream(s, &w).unwrap()).collect();
        assert_eq!(serial, parallel);
    }
}
