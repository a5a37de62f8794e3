//! Voltage-domain reference feature extractor: band-pass bank, full-wave
//! rectifier, boxcar averaging, subsampling and a 12-bit quantizer.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::postproc::FeatureVector;
use crate::signal_io::PcmClip;
use crate::N_CHANNELS;

pub const DEFAULT_F_LO: f64 = 100.0;
pub const DEFAULT_F_HI: f64 = 8000.0;
pub const DEFAULT_Q: f64 = 2.0;
pub const RAW_MAX: u16 = 4095;

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// `n` frequencies equally spaced on the mel axis, endpoints exact.
pub fn mel_centers(n: usize, f_lo: f64, f_hi: f64) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::contract(format!("need at least 2 channels, got {n}")));
    }
    if !(f_lo > 0.0 && f_lo < f_hi) {
        return Err(Error::contract(format!("invalid band {f_lo}..{f_hi} Hz")));
    }
    let (m_lo, m_hi) = (hz_to_mel(f_lo), hz_to_mel(f_hi));
    let step = (m_hi - m_lo) / (n - 1) as f64;
    let mut out: Vec<f64> = (0..n).map(|i| mel_to_hz(m_lo + step * i as f64)).collect();
    out[0] = f_lo;
    out[n - 1] = f_hi;
    Ok(out)
}

/// Direct-form-I second-order section, `a0` normalized to one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Biquad {
    /// Magnitude response at `freq` for sample rate `rate`.
    pub fn magnitude(&self, freq: f64, rate: f64) -> f64 {
        let w = 2.0 * PI * freq / rate;
        let (c1, s1) = (w.cos(), -w.sin());
        let (c2, s2) = ((2.0 * w).cos(), -(2.0 * w).sin());
        let nr = self.b0 + self.b1 * c1 + self.b2 * c2;
        let ni = self.b1 * s1 + self.b2 * s2;
        let dr = 1.0 + self.a1 * c1 + self.a2 * c2;
        let di = self.a1 * s1 + self.a2 * s2;
        ((nr * nr + ni * ni) / (dr * dr + di * di)).sqrt()
    }

    pub fn filter(&self, input: &[f64]) -> Vec<f64> {
        let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
        input
            .iter()
            .map(|&x| {
                let y = self.b0 * x + self.b1 * x1 + self.b2 * x2 - self.a1 * y1 - self.a2 * y2;
                x2 = x1;
                x1 = x;
                y2 = y1;
                y1 = y;
                y
            })
            .collect()
    }
}

/// Second-order band-pass with unity peak gain at `center` and a −3 dB
/// bandwidth of exactly `center / q` Hz after the bilinear transform.
///
/// Both band edges are pre-warped: the digital edges are placed at
/// `w_hi - w_lo = bw` with `tan(w_lo/2) tan(w_hi/2) = tan²(w0/2)`, which is
/// the condition for the bilinear image of an analog resonator to peak at
/// `w0`.
pub fn design_bandpass(center: f64, q: f64, rate: f64) -> Result<Biquad> {
    if !(center > 0.0 && center < rate / 2.0) {
        return Err(Error::contract(format!(
            "center {center} Hz is not below Nyquist ({} Hz)",
            rate / 2.0
        )));
    }
    if q <= 0.0 {
        return Err(Error::contract(format!("q must be positive, got {q}")));
    }
    let w0 = 2.0 * PI * center / rate;
    let bw = 2.0 * PI * (center / q) / rate;
    if bw >= PI {
        return Err(Error::contract(format!(
            "bandwidth {} Hz does not fit below Nyquist",
            center / q
        )));
    }
    let t0 = (w0 / 2.0).tan();
    let target = t0 * t0;
    let g = |wl: f64| (wl / 2.0).tan() * ((wl + bw) / 2.0).tan() - target;
    let (mut lo, mut hi) = (0.0, (PI - bw).min(w0));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let wl = 0.5 * (lo + hi);
    let b = ((wl + bw) / 2.0).tan() - (wl / 2.0).tan();
    let a0 = 1.0 + b + target;
    Ok(Biquad {
        b0: b / a0,
        b1: 0.0,
        b2: -b / a0,
        a1: (2.0 * target - 2.0) / a0,
        a2: (1.0 - b + target) / a0,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MelBank {
    pub centers: Vec<f64>,
    pub q_factor: f64,
    pub biquad_coeffs: Vec<Biquad>,
    pub rate: f64,
}

impl MelBank {
    pub fn new(centers: Vec<f64>, q_factor: f64, rate: f64) -> Result<Self> {
        if centers.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::contract("centers must be strictly increasing"));
        }
        let biquad_coeffs = centers
            .iter()
            .map(|&c| design_bandpass(c, q_factor, rate))
            .collect::<Result<_>>()?;
        Ok(MelBank {
            centers,
            q_factor,
            biquad_coeffs,
            rate,
        })
    }

    /// 16 mel-spaced channels from 100 Hz to 8 kHz with Q = 2.
    pub fn default_for_rate(rate: f64) -> Result<Self> {
        Self::new(mel_centers(N_CHANNELS, DEFAULT_F_LO, DEFAULT_F_HI)?, DEFAULT_Q, rate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefFexConfig {
    pub sample_rate: u32,
    pub frame_shift: f64,
    pub quant_bits: u32,
    /// Tone amplitude whose rectified mean maps to the top code.
    pub full_scale: f64,
}

impl Default for RefFexConfig {
    fn default() -> Self {
        RefFexConfig {
            sample_rate: 32_000,
            frame_shift: 0.016,
            quant_bits: 12,
            full_scale: 1.0,
        }
    }
}

impl RefFexConfig {
    pub fn frame_len(&self) -> Result<usize> {
        let n = self.frame_shift * self.sample_rate as f64;
        if (n - n.round()).abs() > 1e-9 || n < 1.0 {
            return Err(Error::contract(format!(
                "frame_shift * sample_rate = {n} is not a positive integer"
            )));
        }
        Ok(n.round() as usize)
    }

    pub fn max_code(&self) -> u32 {
        (1 << self.quant_bits) - 1
    }

    /// Rectified mean of a full-scale sinusoid.
    pub fn full_scale_mean(&self) -> f64 {
        self.full_scale * 2.0 / PI
    }
}

/// Per-channel frame means of `|bpf(x)|` before quantization, indexed
/// `[frame][channel]`.
pub fn ref_extract_linear(clip: &PcmClip, bank: &MelBank, cfg: &RefFexConfig) -> Result<Vec<[f64; N_CHANNELS]>> {
    if clip.sample_rate != cfg.sample_rate {
        return Err(Error::contract(format!(
            "clip at {} Hz, extractor configured for {} Hz",
            clip.sample_rate, cfg.sample_rate
        )));
    }
    if bank.biquad_coeffs.len() != N_CHANNELS {
        return Err(Error::contract(format!("bank has {} channels", bank.biquad_coeffs.len())));
    }
    let frame_len = cfg.frame_len()?;
    let n_frames = clip.samples.len() / frame_len;
    let per_channel: Vec<Vec<f64>> = bank
        .biquad_coeffs
        .par_iter()
        .map(|bq| {
            let y = bq.filter(&clip.samples[..n_frames * frame_len]);
            y.chunks_exact(frame_len)
                .map(|w| w.iter().map(|v| v.abs()).sum::<f64>() / frame_len as f64)
                .collect()
        })
        .collect();
    Ok((0..n_frames)
        .map(|f| std::array::from_fn(|ch| per_channel[ch][f]))
        .collect())
}

/// Maps a rectified mean onto the unsigned quantizer code.
pub fn quantize(mean: f64, cfg: &RefFexConfig) -> u16 {
    let max = cfg.max_code() as f64;
    (mean / cfg.full_scale_mean() * max).round().clamp(0.0, max) as u16
}

/// RAW features, one 16-channel frame per frame shift (`floor(len/shift)`
/// frames).
pub fn ref_extract(clip: &PcmClip, bank: &MelBank, cfg: &RefFexConfig) -> Result<Vec<FeatureVector>> {
    Ok(ref_extract_linear(clip, bank, cfg)?
        .into_iter()
        .enumerate()
        .map(|(i, means)| FeatureVector::raw(i, std::array::from_fn(|ch| quantize(means[ch], cfg) as i16)))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tone(freq: f64, amp: f64, n: usize) -> PcmClip {
        PcmClip::new(
            (0..n)
                .map(|i| amp * (2.0 * PI * freq * i as f64 / 32000.0).sin())
                .collect(),
            32000,
        )
        .unwrap()
    }

    #[test]
    fn mel_endpoints_and_interior() {
        let c = mel_centers(16, 100.0, 8000.0).unwrap();
        assert_eq!(c[0], 100.0);
        assert_eq!(c[15], 8000.0);
        assert_eq!(mel_centers(2, 100.0, 8000.0).unwrap(), vec![100.0, 8000.0]);
        // closed-form inversion for the 8th interior point
        let m = |f: f64| 2595.0 * (1.0 + f / 700.0).log10();
        let target = m(100.0) + 7.0 * (m(8000.0) - m(100.0)) / 15.0;
        let expected = 700.0 * (10f64.powf(target / 2595.0) - 1.0);
        assert!((c[7] - expected).abs() < 1e-9, "{} vs {expected}", c[7]);
        assert!(c.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn mel_preconditions() {
        assert!(mel_centers(1, 100.0, 8000.0).is_err());
        assert!(mel_centers(4, 0.0, 8000.0).is_err());
        assert!(mel_centers(4, 9000.0, 8000.0).is_err());
    }

    #[test]
    fn bandpass_rejects_dc_and_nyquist() {
        for &c in &mel_centers(16, 100.0, 8000.0).unwrap() {
            let bq = design_bandpass(c, 2.0, 32000.0).unwrap();
            assert!(20.0 * bq.magnitude(1e-6, 32000.0).log10() < -60.0);
            assert!(20.0 * bq.magnitude(16000.0, 32000.0).log10() < -40.0);
        }
    }

    fn half_power_points(bq: &Biquad, center: f64) -> (f64, f64) {
        // independent bisection on |H| = 1/sqrt(2) on each side of the peak
        let target = 1.0 / 2f64.sqrt();
        let solve = |mut a: f64, mut b: f64| {
            for _ in 0..100 {
                let m = 0.5 * (a + b);
                let above = bq.magnitude(m, 32000.0) > target;
                let left_of_peak = m < center;
                if above == left_of_peak {
                    b = m;
                } else {
                    a = m;
                }
            }
            0.5 * (a + b)
        };
        (solve(1.0, center), solve(center, 15999.0))
    }

    #[test]
    fn bandpass_1k_edges() {
        let bq = design_bandpass(1000.0, 2.0, 32000.0).unwrap();
        let (lo, hi) = half_power_points(&bq, 1000.0);
        assert!((lo - 780.0).abs() < 10.0, "{lo}");
        assert!((hi - 1280.0).abs() < 10.0, "{hi}");
        assert!((hi - lo - 500.0).abs() < 0.05 * 500.0);
    }

    #[test]
    fn bandpass_peak_and_bandwidth_across_bank() {
        for &c in &mel_centers(16, 100.0, 8000.0).unwrap() {
            let bq = design_bandpass(c, 2.0, 32000.0).unwrap();
            // peak location via dense log grid
            let (peak_f, _) = (0..20000)
                .map(|i| c * 0.5 * 4f64.powf(i as f64 / 20000.0))
                .map(|f| (f, bq.magnitude(f, 32000.0)))
                .fold((0.0, 0.0), |a, b| if b.1 > a.1 { b } else { a });
            assert!((peak_f / c - 1.0).abs() < 0.01, "{c}: peak at {peak_f}");
            let (lo, hi) = half_power_points(&bq, c);
            assert!(((hi - lo) / (c / 2.0) - 1.0).abs() < 0.05, "{c}: bw {}", hi - lo);
        }
    }

    #[test]
    fn bandpass_rejects_above_nyquist() {
        assert!(design_bandpass(16000.0, 2.0, 32000.0).is_err());
        assert!(design_bandpass(20000.0, 2.0, 32000.0).is_err());
    }

    #[test]
    fn one_second_gives_62_frames_of_zero() {
        let bank = MelBank::default_for_rate(32000.0).unwrap();
        let clip = PcmClip::new(vec![0.0; 32000], 32000).unwrap();
        let f = ref_extract(&clip, &bank, &RefFexConfig::default()).unwrap();
        assert_eq!(f.len(), 62);
        assert!(f.iter().all(|v| v.values.iter().all(|&x| x == 0)));
        let empty = PcmClip::new(vec![], 32000).unwrap();
        assert!(ref_extract(&empty, &bank, &RefFexConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn tone_at_each_center_selects_its_channel() {
        let bank = MelBank::default_for_rate(32000.0).unwrap();
        let cfg = RefFexConfig::default();
        // the top center sits at fs/4, where a sampled rectified mean
        // depends on tone phase, so average over eight starting phases
        for (k, &c) in bank.centers.iter().enumerate() {
            let mut last = [0.0; N_CHANNELS];
            for j in 0..8 {
                let phi = j as f64 * PI / 8.0;
                let clip = PcmClip::new(
                    (0..16000)
                        .map(|i| 0.9 * (2.0 * PI * c * i as f64 / 32000.0 + phi).sin())
                        .collect(),
                    32000,
                )
                .unwrap();
                let lin = ref_extract_linear(&clip, &bank, &cfg).unwrap();
                for ch in 0..N_CHANNELS {
                    last[ch] += lin.last().unwrap()[ch];
                }
            }
            let arg = (0..16).max_by(|&a, &b| last[a].total_cmp(&last[b])).unwrap();
            assert_eq!(arg, k, "tone at {c} Hz");
        }
    }

    #[test]
    fn rectified_mean_is_linear_in_amplitude() {
        let bank = MelBank::default_for_rate(32000.0).unwrap();
        let cfg = RefFexConfig::default();
        let c = bank.centers[6];
        let a = ref_extract_linear(&tone(c, 0.2, 16000), &bank, &cfg).unwrap();
        let b = ref_extract_linear(&tone(c, 0.4, 16000), &bank, &cfg).unwrap();
        let ratio = b.last().unwrap()[6] / a.last().unwrap()[6];
        assert!((ratio - 2.0).abs() < 0.02, "{ratio}");
    }

    #[test]
    fn quantizer_saturates_and_rounds() {
        let cfg = RefFexConfig::default();
        assert_eq!(quantize(0.0, &cfg), 0);
        assert_eq!(quantize(cfg.full_scale_mean(), &cfg), 4095);
        assert_eq!(quantize(10.0, &cfg), 4095);
        let half = cfg.full_scale_mean() * 100.0 / 4095.0;
        assert_eq!(quantize(half, &cfg), 100);
    }

    #[test]
    fn frame_len_must_be_integral() {
        let cfg = RefFexConfig {
            frame_shift: 0.016384,
            ..RefFexConfig::default()
        };
        assert!(cfg.frame_len().is_err());
    }

    proptest! {
        #[test]
        fn quantizer_is_monotone(a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let cfg = RefFexConfig::default();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(quantize(lo, &cfg) <= quantize(hi, &cfg));
        }

        #[test]
        fn rectifier_is_even(x in proptest::collection::vec(-1.0f64..1.0, 1024)) {
            let bank = MelBank::default_for_rate(32000.0).unwrap();
            let cfg = RefFexConfig::default();
            let neg: Vec<f64> = x.iter().map(|v| -v).collect();
            let p = ref_extract(&PcmClip::new(x, 32000).unwrap(), &bank, &cfg).unwrap();
            let n = ref_extract(&PcmClip::new(neg, 32000).unwrap(), &bank, &cfg).unwrap();
            prop_assert_eq!(p, n);
        }
    }
}
