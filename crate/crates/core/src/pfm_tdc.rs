//! Rectified-PWM to digital: PFM encoder SRO, 15 sampled lanes with 1-bit
//! XOR differentiators, and a first-order CIC decimator. Together they form
//! a first-order noise-shaped time-to-digital converter.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::td_fex::{ANALOG_RATE, N_LANES};

/// Lane sampling clock.
pub const F_S_OVER: u32 = 62_500;
/// CIC decimation ratio.
pub const DECIMATION: usize = 1024;
/// Frame shift implied by the decimator (reported as 16 ms).
pub const FRAME_SHIFT_S: f64 = DECIMATION as f64 / F_S_OVER as f64;
pub const FRAME_RATE_HZ: f64 = F_S_OVER as f64 / DECIMATION as f64;

/// Common tick of the analog and sampling grids (LCM of both rates).
const TICK_RATE: u64 = 32_000_000;
const TICKS_PER_BIN: u64 = TICK_RATE / ANALOG_RATE as u64;
const TICKS_PER_SAMPLE: u64 = TICK_RATE / F_S_OVER as u64;

/// Free-running frequency that puts the zero-input count at 2048.
pub fn mid_scale_free_run_hz() -> f64 {
    2048.0 / (N_LANES as f64 * FRAME_SHIFT_S)
}

/// Gain that maps a full-scale rectified sine (mean duty 2/π) to 4095
/// counts above the offset.
pub fn full_scale_gain_hz() -> f64 {
    4095.0 / (N_LANES as f64 * FRAME_SHIFT_S * 2.0 / PI)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PfmConfig {
    pub f_free_hz: f64,
    /// `k_pfm · f_fll`: Hz per unit of summed BPF duty.
    pub gain_hz: f64,
    /// White frequency noise on the encoder SRO, RMS Hz per analog sample.
    pub fm_dither_hz: f64,
    /// RMS jitter of the lane sampling instants, seconds.
    pub sampling_jitter_s: f64,
    /// Encoder phase at t = 0, in lane units.
    pub initial_phase: f64,
    pub seed: u64,
}

impl Default for PfmConfig {
    fn default() -> Self {
        PfmConfig {
            f_free_hz: mid_scale_free_run_hz(),
            gain_hz: full_scale_gain_hz(),
            fm_dither_hz: 0.0,
            sampling_jitter_s: 0.0,
            initial_phase: 0.5,
            seed: 0,
        }
    }
}

impl PfmConfig {
    /// Encoder frequency at full rectified duty (UP and DN are never
    /// active together, so `p + n <= 1`).
    pub fn max_freq_hz(&self) -> f64 {
        self.f_free_hz + self.gain_hz
    }

    /// Rejects encoders that could move a lane more than once per sample
    /// (phase advance of a full cycle between samples).
    pub fn validate(&self) -> Result<()> {
        if !(self.f_free_hz >= 0.0 && self.gain_hz >= 0.0) {
            return Err(Error::contract("PFM free-run frequency and gain must be non-negative"));
        }
        if !(self.fm_dither_hz >= 0.0 && self.sampling_jitter_s >= 0.0) {
            return Err(Error::contract("dither and jitter must be non-negative"));
        }
        let f_top = self.max_freq_hz();
        if f_top >= F_S_OVER as f64 {
            return Err(Error::contract(format!(
                "encoder reaches {f_top:.0} Hz; must stay below the {F_S_OVER} Hz lane clock"
            )));
        }
        Ok(())
    }
}

/// Lane levels (bit `i` = lane `i`) after `k` lane transitions, sampled
/// thermometer-style: transition `m` (1-based) toggles lane `(m−1) mod 15`.
pub fn lane_states(k: i64) -> u16 {
    let k = k.rem_euclid(2 * N_LANES as i64);
    let mut mask = 0u16;
    for lane in 0..N_LANES as i64 {
        let toggles = (k + N_LANES as i64 - 1 - lane) / N_LANES as i64;
        if toggles & 1 == 1 {
            mask |= 1 << lane;
        }
    }
    mask
}

/// Per-sample count: number of lanes whose sampled level changed.
pub fn xor_differentiate(prev: u16, cur: u16) -> u8 {
    (prev ^ cur).count_ones() as u8
}

/// Sums consecutive groups of `r` increments; a trailing partial group is
/// dropped.
pub fn cic_decimate(increments: &[u8], r: usize) -> Result<Vec<u32>> {
    if r == 0 {
        return Err(Error::contract("decimation ratio must be at least 1"));
    }
    Ok(increments
        .chunks_exact(r)
        .map(|c| c.iter().map(|&v| v as u32).sum())
        .collect())
}

/// Output of one encoder + TDC channel.
#[derive(Debug, Clone, PartialEq)]
pub struct TdcStream {
    /// XOR-array count per lane-clock sample.
    pub increments: Vec<u8>,
    /// True phase advance between samples in lane units (15 per cycle).
    pub ideal: Vec<f64>,
    pub frames: Vec<u32>,
    /// All lane transitions between t = 0 and the last sample.
    pub total_edges: i64,
    pub freq_clamps: u64,
}

impl TdcStream {
    /// `increments − ideal`, the pre-decimation quantization error.
    pub fn quantization_error(&self) -> Vec<f64> {
        self.increments
            .iter()
            .zip(&self.ideal)
            .map(|(&i, &d)| i as f64 - d)
            .collect()
    }
}

/// Runs the encoder on BPF duties (one value per analog sample; `bpf_p`
/// and `bpf_n` both raise the frequency) and samples its lanes.
pub fn pfm_encode(bpf_p: &[f64], bpf_n: &[f64], cfg: &PfmConfig) -> Result<TdcStream> {
    if bpf_p.len() != bpf_n.len() {
        return Err(Error::contract("BPF_P and BPF_N streams differ in length"));
    }
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dither = (cfg.fm_dither_hz > 0.0).then(|| Normal::new(0.0, cfg.fm_dither_hz).expect("finite sigma"));
    let lanes = N_LANES as f64;
    let bin_dt = 1.0 / ANALOG_RATE as f64;

    // phase (lane units) at each bin boundary and rate within each bin
    let mut freq_clamps = 0;
    let mut rate = Vec::with_capacity(bpf_p.len());
    for (&p, &n) in bpf_p.iter().zip(bpf_n) {
        if !(0.0..=1.0).contains(&p) || !(0.0..=1.0).contains(&n) || p + n > 1.0 + 1e-9 {
            return Err(Error::contract(format!("BPF duty out of [0, 1]: p={p}, n={n}")));
        }
        let mut f = cfg.f_free_hz + cfg.gain_hz * (p + n);
        if let Some(d) = &dither {
            f += d.sample(&mut rng);
        }
        if f < 0.0 {
            freq_clamps += 1;
            f = 0.0;
        }
        rate.push(lanes * f);
    }
    let mut boundary = Vec::with_capacity(rate.len() + 1);
    let mut acc = cfg.initial_phase;
    boundary.push(acc);
    for &r in &rate {
        acc += r * bin_dt;
        boundary.push(acc);
    }

    let total_ticks = rate.len() as u64 * TICKS_PER_BIN;
    let n_samples = (total_ticks / TICKS_PER_SAMPLE) as usize;
    let jitter = (cfg.sampling_jitter_s > 0.0)
        .then(|| Normal::new(0.0, cfg.sampling_jitter_s).expect("finite sigma"));
    let end_time = rate.len() as f64 * bin_dt;
    let phase_at_ticks = |ticks: u64| {
        let bin = (ticks / TICKS_PER_BIN) as usize;
        let rem = ticks % TICKS_PER_BIN;
        if bin >= rate.len() {
            boundary[rate.len()]
        } else {
            boundary[bin] + rate[bin] * rem as f64 / TICK_RATE as f64
        }
    };
    let phase_at_time = |t: f64| {
        let t = t.clamp(0.0, end_time);
        let bin = ((t / bin_dt) as usize).min(rate.len().saturating_sub(1));
        boundary[bin] + rate.get(bin).copied().unwrap_or(0.0) * (t - bin as f64 * bin_dt)
    };

    let mut increments = Vec::with_capacity(n_samples);
    let mut ideal = Vec::with_capacity(n_samples);
    let mut prev_phase = cfg.initial_phase;
    let mut prev_k = prev_phase.floor() as i64;
    let mut prev_mask = lane_states(prev_k);
    let first_k = prev_k;
    for s in 1..=n_samples {
        let ticks = s as u64 * TICKS_PER_SAMPLE;
        let phase = match &jitter {
            None => phase_at_ticks(ticks),
            Some(j) => phase_at_time(ticks as f64 / TICK_RATE as f64 + j.sample(&mut rng)),
        };
        let k = phase.floor() as i64;
        if k - prev_k > N_LANES as i64 {
            return Err(Error::contract(format!(
                "sample {s}: {} lane transitions in one clock period",
                k - prev_k
            )));
        }
        let mask = lane_states(k);
        increments.push(xor_differentiate(prev_mask, mask));
        ideal.push(phase - prev_phase);
        prev_mask = mask;
        prev_k = k;
        prev_phase = phase;
    }
    let frames = cic_decimate(&increments, DECIMATION)?;
    Ok(TdcStream {
        increments,
        ideal,
        frames,
        total_edges: prev_k - first_k,
        freq_clamps,
    })
}

/// Number of whole frames produced from `analog_samples` BPF samples.
pub fn frame_count(analog_samples: usize) -> usize {
    (analog_samples as u64 * TICKS_PER_BIN / TICKS_PER_SAMPLE) as usize / DECIMATION
}
