//! Digital post-processing between the TDC and the classifier: β offset
//! removal, α gain correction, log compression and μ/σ normalization.

use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::feature_file::Stage;
use crate::ini::{self, Section};
use crate::N_CHANNELS;

pub const RAW_MAX: i32 = 4095;
pub const LOG_MAX: i32 = 1023;
/// Saturation bound of the signed 14-bit normalized features.
pub const NORM_LIMIT: i32 = (1 << 13) - 1;
pub const NORM_FRAC_BITS: u32 = 8;

/// One 16-channel feature frame. `values` are stage-dependent integers:
/// RAW in [0, 4095], LOG in [0, 1023], NORM in Q6.8.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureVector {
    pub stage: Stage,
    pub values: [i16; N_CHANNELS],
    pub frame_index: usize,
}

impl FeatureVector {
    pub fn raw(frame_index: usize, values: [i16; N_CHANNELS]) -> Self {
        FeatureVector {
            stage: Stage::Raw,
            values,
            frame_index,
        }
    }

    pub fn norm_value(&self, ch: usize) -> f64 {
        self.values[ch] as f64 / (1 << NORM_FRAC_BITS) as f64
    }
}

/// Per-channel correction parameters. `alpha_q16` is α in unsigned Q16.16.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub beta: [i32; N_CHANNELS],
    pub alpha_q16: [u32; N_CHANNELS],
    pub mu: [f64; N_CHANNELS],
    pub sigma: [f64; N_CHANNELS],
    pub corpus_hash: String,
    pub date: String,
}

impl Calibration {
    /// β = 0, α = 1, μ = 0, σ = 1.
    pub fn identity() -> Self {
        Calibration {
            beta: [0; N_CHANNELS],
            alpha_q16: [1 << 16; N_CHANNELS],
            mu: [0.0; N_CHANNELS],
            sigma: [1.0; N_CHANNELS],
            corpus_hash: String::new(),
            date: String::new(),
        }
    }

    pub fn alpha(&self, ch: usize) -> f64 {
        self.alpha_q16[ch] as f64 / 65536.0
    }

    pub fn validate(&self) -> Result<()> {
        for ch in 0..N_CHANNELS {
            if self.alpha_q16[ch] == 0 {
                return Err(Error::Calibration(format!("alpha[{ch}] must be positive")));
            }
            if !(self.sigma[ch] > 0.0) || !self.sigma[ch].is_finite() {
                return Err(Error::Calibration(format!("sigma[{ch}] must be positive")));
            }
            if !self.mu[ch].is_finite() {
                return Err(Error::Calibration(format!("mu[{ch}] is not finite")));
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let join = |v: Vec<String>| v.join(",");
        let mut s = Section::new("");
        s.push("version", 1);
        s.push("beta", join(self.beta.iter().map(|v| v.to_string()).collect()));
        s.push("alpha_q16", join(self.alpha_q16.iter().map(|v| v.to_string()).collect()));
        s.push("mu", join(self.mu.iter().map(|v| format!("{v:.6}")).collect()));
        s.push("sigma", join(self.sigma.iter().map(|v| format!("{v:.6}")).collect()));
        s.push("corpus_hash", &self.corpus_hash);
        s.push("date", &self.date);
        format!("# tdkws calibration\n{}", ini::render(&[s]))
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let sections = ini::parse(text)?;
        let s = sections
            .first()
            .ok_or_else(|| Error::format("empty calibration file"))?;
        let version: u32 = s.parse_num("version")?;
        if version != 1 {
            return Err(Error::format(format!("unsupported calibration version {version}")));
        }
        fn arr<T: Copy + std::str::FromStr>(s: &Section, key: &str) -> Result<[T; N_CHANNELS]> {
            let v: Vec<T> = s.parse_array(key)?;
            v.try_into()
                .map_err(|v: Vec<T>| Error::format(format!("{key}: expected {N_CHANNELS} values, got {}", v.len())))
        }
        let cal = Calibration {
            beta: arr(s, "beta")?,
            alpha_q16: arr(s, "alpha_q16")?,
            mu: arr(s, "mu")?,
            sigma: arr(s, "sigma")?,
            corpus_hash: s.get("corpus_hash").unwrap_or_default().to_string(),
            date: s.get("date").unwrap_or_default().to_string(),
        };
        cal.validate()?;
        Ok(cal)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

/// `clamp(round(α · (count − β)), 0, 4095)` per channel.
pub fn apply_offset_gain(counts: &[u32; N_CHANNELS], frame_index: usize, cal: &Calibration) -> FeatureVector {
    let values = std::array::from_fn(|ch| {
        let diff = counts[ch] as i64 - cal.beta[ch] as i64;
        // α in Q16.16: round-half-away on the product
        let prod = diff * cal.alpha_q16[ch] as i64;
        let rounded = if prod >= 0 {
            (prod + (1 << 15)) >> 16
        } else {
            -((-prod + (1 << 15)) >> 16)
        };
        rounded.clamp(0, RAW_MAX as i64) as i16
    });
    FeatureVector::raw(frame_index, values)
}

fn log_lut() -> &'static [u16; 4096] {
    static LUT: OnceLock<[u16; 4096]> = OnceLock::new();
    LUT.get_or_init(|| {
        std::array::from_fn(|x| (LOG_MAX as f64 * (1.0 + x as f64).log2() / 12.0).round() as u16)
    })
}

/// `round(1023 · log2(1 + x) / 12)` through a 4096-entry table.
pub fn log_compress_value(raw: i16) -> i16 {
    log_lut()[raw.clamp(0, RAW_MAX as i16) as usize] as i16
}

pub fn log_compress(frame: &FeatureVector) -> FeatureVector {
    FeatureVector {
        stage: Stage::Log,
        values: frame.values.map(log_compress_value),
        frame_index: frame.frame_index,
    }
}

pub fn normalize_value(log: i16, mu: f64, sigma: f64) -> i16 {
    let scaled = (log as f64 - mu) / sigma * (1 << NORM_FRAC_BITS) as f64;
    scaled.round().clamp(-NORM_LIMIT as f64, NORM_LIMIT as f64) as i16
}

/// `(x − μ) / σ` quantized to Q6.8, saturating at ±(2^13 − 1).
pub fn normalize(frame: &FeatureVector, cal: &Calibration) -> FeatureVector {
    FeatureVector {
        stage: Stage::Norm,
        values: std::array::from_fn(|ch| normalize_value(frame.values[ch], cal.mu[ch], cal.sigma[ch])),
        frame_index: frame.frame_index,
    }
}

/// Full post-processing of one TDC frame down to FV_Norm.
pub fn process_counts(counts: &[u32; N_CHANNELS], frame_index: usize, cal: &Calibration) -> [FeatureVector; 3] {
    let raw = apply_offset_gain(counts, frame_index, cal);
    let log = log_compress(&raw);
    let norm = normalize(&log, cal);
    [raw, log, norm]
}

/// Inputs to [`calibrate`], all as TDC counts per frame.
#[derive(Debug, Clone, Default)]
pub struct CalibrationCorpus {
    /// Frames recorded with zero input.
    pub silence: Vec<[u32; N_CHANNELS]>,
    /// `tones[ch]`: frames recorded with a tone at channel `ch`'s center.
    pub tones: Vec<Vec<[u32; N_CHANNELS]>>,
    /// Training clips, each a frame sequence.
    pub training: Vec<Vec<[u32; N_CHANNELS]>>,
}

impl CalibrationCorpus {
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        let mut feed = |frames: &[[u32; N_CHANNELS]]| {
            h.update((frames.len() as u64).to_le_bytes());
            for f in frames {
                for v in f {
                    h.update(v.to_le_bytes());
                }
            }
        };
        feed(&self.silence);
        for t in &self.tones {
            feed(t);
        }
        for t in &self.training {
            feed(t);
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Two-pass calibration: β from silence, α relative to channel 0's
/// mid-band gain, then per-channel μ/σ of the LOG features.
pub fn calibrate(corpus: &CalibrationCorpus, date: &str) -> Result<Calibration> {
    if corpus.silence.is_empty() {
        return Err(Error::Calibration("no silence frames for offset estimation".into()));
    }
    if corpus.tones.len() != N_CHANNELS || corpus.tones.iter().any(Vec::is_empty) {
        return Err(Error::Calibration(format!(
            "need center-frequency tone frames for all {N_CHANNELS} channels"
        )));
    }
    let n_train: usize = corpus.training.iter().map(Vec::len).sum();
    if n_train < 2 {
        return Err(Error::Calibration("training corpus has fewer than 2 frames".into()));
    }

    let mut beta_f = [0.0f64; N_CHANNELS];
    for f in &corpus.silence {
        for ch in 0..N_CHANNELS {
            beta_f[ch] += f[ch] as f64;
        }
    }
    let beta: [i32; N_CHANNELS] = beta_f.map(|s| (s / corpus.silence.len() as f64).round() as i32);

    let gains: Vec<f64> = (0..N_CHANNELS)
        .map(|ch| {
            let frames = &corpus.tones[ch];
            frames.iter().map(|f| f[ch] as f64 - beta[ch] as f64).sum::<f64>() / frames.len() as f64
        })
        .collect();
    if let Some(ch) = gains.iter().position(|&g| g <= 0.0) {
        return Err(Error::Calibration(format!(
            "channel {ch} shows no response to its center tone (gain {:.3})",
            gains[ch]
        )));
    }
    let alpha_q16: [u32; N_CHANNELS] = std::array::from_fn(|ch| ((gains[0] / gains[ch]) * 65536.0).round() as u32);

    let mut cal = Calibration {
        beta,
        alpha_q16,
        mu: [0.0; N_CHANNELS],
        sigma: [1.0; N_CHANNELS],
        corpus_hash: corpus.hash(),
        date: date.to_string(),
    };

    let mut sum = [0.0f64; N_CHANNELS];
    let mut sum_sq = [0.0f64; N_CHANNELS];
    for (i, f) in corpus.training.iter().flatten().enumerate() {
        let log = log_compress(&apply_offset_gain(f, i, &cal));
        for ch in 0..N_CHANNELS {
            let v = log.values[ch] as f64;
            sum[ch] += v;
            sum_sq[ch] += v * v;
        }
    }
    for ch in 0..N_CHANNELS {
        let mean = sum[ch] / n_train as f64;
        let var = (sum_sq[ch] / n_train as f64 - mean * mean).max(0.0);
        if var <= 1e-12 {
            return Err(Error::Calibration(format!(
                "channel {ch} has zero variance in the training corpus (constant {mean})"
            )));
        }
        cal.mu[ch] = mean;
        cal.sigma[ch] = var.sqrt();
    }
    Ok(cal)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cal_with(beta: i32, alpha: f64) -> Calibration {
        Calibration {
            beta: [beta; N_CHANNELS],
            alpha_q16: [(alpha * 65536.0).round() as u32; N_CHANNELS],
            ..Calibration::identity()
        }
    }

    #[test]
    fn offset_gain_examples() {
        let c = cal_with(2048, 1.0);
        assert_eq!(apply_offset_gain(&[2048; N_CHANNELS], 0, &c).values, [0; N_CHANNELS]);
        let id = Calibration::identity();
        let counts: [u32; N_CHANNELS] = std::array::from_fn(|i| i as u32 * 100);
        let out = apply_offset_gain(&counts, 0, &id);
        assert_eq!(out.values, std::array::from_fn(|i| i as i16 * 100));
        let c = cal_with(2048, 1.5);
        let scalar_oracle = ((2148.0 - 2048.0) * 1.5f64).round() as i16;
        assert_eq!(apply_offset_gain(&[2148; N_CHANNELS], 0, &c).values[3], scalar_oracle);
        assert_eq!(scalar_oracle, 150);
        // saturation on both sides
        assert_eq!(apply_offset_gain(&[0; N_CHANNELS], 0, &c).values[0], 0);
        assert_eq!(apply_offset_gain(&[100_000; N_CHANNELS], 0, &c).values[0], 4095);
    }

    #[test]
    fn log_examples() {
        assert_eq!(log_compress_value(0), 0);
        assert_eq!(log_compress_value(4095), 1023);
        assert_eq!(log_compress_value(63), 512);
        let lut = log_lut();
        assert!(lut.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_value(500, 500.0, 20.0), 0);
        assert_eq!(normalize_value(520, 500.0, 20.0), 256);
        assert_eq!(normalize_value(1000, 0.0, 1.0), 8191);
        assert_eq!(normalize_value(0, 1000.0, 1.0), -8191);
        // mu + 100 sigma saturates
        assert_eq!(normalize_value(600, 500.0, 1.0), 8191);
    }

    #[test]
    fn calibration_recovers_offset_and_unit_gains() {
        let silence = vec![[2048u32; N_CHANNELS]; 50];
        let tones: Vec<Vec<[u32; N_CHANNELS]>> = (0..N_CHANNELS)
            .map(|_| vec![[2048 + 600; N_CHANNELS]; 10])
            .collect();
        let training: Vec<Vec<[u32; N_CHANNELS]>> = (0..4)
            .map(|k| (0..20).map(|i| [2048 + (i * 37 + k * 11) as u32 % 900; N_CHANNELS]).collect())
            .collect();
        let corpus = CalibrationCorpus {
            silence,
            tones,
            training,
        };
        let cal = calibrate(&corpus, "2026-01-01").unwrap();
        assert!(cal.beta.iter().all(|&b| (b - 2048).abs() <= 1));
        assert!(cal.alpha_q16.iter().all(|&a| a == 65536));
        assert!(cal.sigma.iter().all(|&s| s > 0.0));
        let back = Calibration::from_text(&cal.to_text()).unwrap();
        assert_eq!(back.beta, cal.beta);
        assert_eq!(back.alpha_q16, cal.alpha_q16);
        for ch in 0..N_CHANNELS {
            assert!((back.mu[ch] - cal.mu[ch]).abs() < 1e-6);
        }
        assert_eq!(back.corpus_hash, cal.corpus_hash);
    }

    #[test]
    fn calibration_alpha_reference_is_channel_zero() {
        let tones: Vec<Vec<[u32; N_CHANNELS]>> = (0..N_CHANNELS)
            .map(|ch| {
                let mut f = [100u32; N_CHANNELS];
                f[ch] = 100 + if ch == 3 { 200 } else { 400 };
                vec![f; 4]
            })
            .collect();
        let corpus = CalibrationCorpus {
            silence: vec![[100; N_CHANNELS]; 4],
            tones,
            training: vec![(0..10).map(|i| [100 + i * 40; N_CHANNELS]).collect()],
        };
        let cal = calibrate(&corpus, "").unwrap();
        assert_eq!(cal.alpha_q16[0], 65536);
        assert_eq!(cal.alpha_q16[3], 131072);
    }

    #[test]
    fn calibration_error_paths() {
        let ok_tones = vec![vec![[10u32; N_CHANNELS]]; N_CHANNELS];
        let constant = CalibrationCorpus {
            silence: vec![[0; N_CHANNELS]; 4],
            tones: ok_tones.clone(),
            training: vec![vec![[5; N_CHANNELS]; 10]],
        };
        assert!(matches!(calibrate(&constant, ""), Err(Error::Calibration(m)) if m.contains("zero variance")));
        let no_silence = CalibrationCorpus {
            silence: vec![],
            ..constant.clone()
        };
        assert!(calibrate(&no_silence, "").is_err());
        let few_tones = CalibrationCorpus {
            tones: vec![vec![[10; N_CHANNELS]]; 3],
            ..constant
        };
        assert!(calibrate(&few_tones, "").is_err());
    }

    #[test]
    fn calibration_file_rejects_bad_arrays() {
        let mut text = Calibration::identity().to_text();
        assert!(Calibration::from_text(&text).is_ok());
        text = text.replace("sigma=1.000000,", "sigma=");
        assert!(Calibration::from_text(&text).is_err());
    }

    proptest! {
        #[test]
        fn pipeline_is_monotone(a in 0u32..6000, b in 0u32..6000, beta in 0i32..3000, alpha in 0.5f64..3.0, mu in 0.0f64..1023.0, sigma in 1.0f64..200.0) {
            let cal = Calibration {
                mu: [mu; N_CHANNELS],
                sigma: [sigma; N_CHANNELS],
                ..cal_with(beta, alpha)
            };
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let [_, _, n_lo] = process_counts(&[lo; N_CHANNELS], 0, &cal);
            let [_, _, n_hi] = process_counts(&[hi; N_CHANNELS], 0, &cal);
            prop_assert!(n_lo.values[0] <= n_hi.values[0]);
        }

        #[test]
        fn self_statistics_normalize_to_zero(x in 0i16..=4095) {
            let log = log_compress_value(x);
            prop_assert_eq!(normalize_value(log, log as f64, 1.0), 0);
        }
    }
}
