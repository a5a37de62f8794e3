//! Seeded synthetic test signals: tones, noise, speech-like utterances
//! and a small speech-commands style corpus on disk.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ref_fex::{design_bandpass, Biquad};
use crate::signal_io::{self, PcmClip, BACKGROUND_DIR, CORPUS_RATE};

pub fn tone(freq_hz: f64, amplitude: f64, seconds: f64, rate: u32) -> Result<PcmClip> {
    let n = (seconds * rate as f64).round() as usize;
    PcmClip::new(
        (0..n)
            .map(|i| amplitude * (2.0 * PI * freq_hz * i as f64 / rate as f64).sin())
            .collect(),
        rate,
    )
}

pub fn silence(seconds: f64, rate: u32) -> Result<PcmClip> {
    PcmClip::new(vec![0.0; (seconds * rate as f64).round() as usize], rate)
}

pub fn white_noise(sigma: f64, seconds: f64, rate: u32, seed: u64) -> Result<PcmClip> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Normal::new(0.0, sigma).map_err(|e| Error::contract(format!("noise sigma: {e}")))?;
    let n = (seconds * rate as f64).round() as usize;
    PcmClip::new((0..n).map(|_| dist.sample(&mut rng).clamp(-1.0, 1.0)).collect(), rate)
}

/// Vowel-ish spectral plan of one utterance.
#[derive(Debug, Clone, PartialEq)]
struct Plan {
    /// `(formants, voiced, relative duration)` per segment.
    segments: Vec<([f64; 3], bool, f64)>,
}

fn plan_from_rng(rng: &mut ChaCha8Rng) -> Plan {
    let n = rng.random_range(2..=4);
    let segments = (0..n)
        .map(|_| {
            let voiced = rng.random::<f64>() < 0.75;
            let f = [
                rng.random_range(280.0..900.0),
                rng.random_range(900.0..2500.0),
                rng.random_range(2300.0..3600.0),
            ];
            (f, voiced, rng.random_range(0.6..1.4))
        })
        .collect();
    Plan { segments }
}

fn envelope(i: usize, n: usize, ramp: usize) -> f64 {
    let r = ramp.min(n / 2).max(1);
    if i < r {
        0.5 - 0.5 * (PI * i as f64 / r as f64).cos()
    } else if i >= n - r {
        0.5 - 0.5 * (PI * (n - i) as f64 / r as f64).cos()
    } else {
        1.0
    }
}

fn one_pole_lowpass(x: &[f64], fc: f64, rate: f64) -> Vec<f64> {
    let a = (-2.0 * PI * fc / rate).exp();
    let mut y = 0.0;
    x.iter()
        .map(|&v| {
            y = (1.0 - a) * v + a * y;
            y
        })
        .collect()
}

/// Renders a plan: glottal pulse trains through formant resonators for
/// voiced segments, band-passed noise for fricatives, short pauses
/// between segments, peak-normalized to `peak`.
fn render(plan: &Plan, f0: f64, seconds: f64, rate: u32, peak: f64, rng: &mut ChaCha8Rng) -> Result<PcmClip> {
    let fs = rate as f64;
    let total = (seconds * fs).round() as usize;
    let mut out = vec![0.0; total];
    let lead = (rng.random_range(0.05..0.2) * fs) as usize;
    let speech_len = ((seconds * rng.random_range(0.55..0.75)) * fs) as usize;
    let weight: f64 = plan.segments.iter().map(|s| s.2).sum();
    let gap = (0.03 * fs) as usize;
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut pos = lead;
    for (formants, voiced, share) in &plan.segments {
        let len = ((speech_len as f64 * share / weight) as usize).saturating_sub(gap).max(64);
        if pos + len > total {
            break;
        }
        let seg: Vec<f64> = if *voiced {
            let mut src = vec![0.0; len];
            let mut t = 0.0;
            while (t as usize) < len {
                src[t as usize] = 1.0;
                t += fs / (f0 * (1.0 + 0.02 * noise.sample(rng)));
            }
            let mut y = one_pole_lowpass(&src, 2.0 * f0, fs)
                .into_iter()
                .map(|v| v * 4.0)
                .collect::<Vec<_>>();
            for (k, &f) in formants.iter().enumerate() {
                let bq: Biquad = design_bandpass(f, 6.0, fs)?;
                let g = [1.0, 0.6, 0.35][k];
                for (acc, v) in y.iter_mut().zip(bq.filter(&src)) {
                    *acc += g * v;
                }
            }
            // a little breath noise keeps the top channels alive
            let hi_center = (0.3 * fs).min(6000.0);
            let bq = design_bandpass(hi_center, 1.5, fs)?;
            let breath: Vec<f64> = (0..len).map(|_| 0.03 * noise.sample(rng)).collect();
            for (acc, v) in y.iter_mut().zip(bq.filter(&breath)) {
                *acc += v;
            }
            y
        } else {
            let center = rng.random_range(0.22..0.4) * fs;
            let bq = design_bandpass(center.min(7000.0), 1.5, fs)?;
            let src: Vec<f64> = (0..len).map(|_| 0.3 * noise.sample(rng)).collect();
            bq.filter(&src)
        };
        for (i, v) in seg.iter().enumerate() {
            out[pos + i] += v * envelope(i, len, (0.015 * fs) as usize);
        }
        pos += len + gap;
    }
    let max = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max > 0.0 {
        out.iter_mut().for_each(|v| *v *= peak / max);
    }
    // low noise floor
    for v in out.iter_mut() {
        *v += 1e-4 * noise.sample(rng);
    }
    PcmClip::new(out, rate)
}

/// A random utterance-like clip with pauses, voiced and unvoiced segments.
pub fn speech_like(seed: u64, seconds: f64, rate: u32) -> Result<PcmClip> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let plan = plan_from_rng(&mut rng);
    let f0 = rng.random_range(85.0..220.0);
    let peak = rng.random_range(0.15..0.3);
    render(&plan, f0, seconds, rate, peak, &mut rng)
}

fn word_seed(word: &str) -> u64 {
    let d = Sha256::digest(word.as_bytes());
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// One take of a word: the segment plan is fixed by the word, speaker
/// pitch, level and timing vary with `take`.
pub fn word_clip(word: &str, take: u64, rate: u32) -> Result<PcmClip> {
    let mut plan_rng = ChaCha8Rng::seed_from_u64(word_seed(word));
    let mut plan = plan_from_rng(&mut plan_rng);
    let mut rng = ChaCha8Rng::seed_from_u64(word_seed(word) ^ take.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    for seg in &mut plan.segments {
        for f in &mut seg.0 {
            *f *= rng.random_range(0.92..1.08);
        }
    }
    let f0 = rng.random_range(85.0..220.0);
    let peak = rng.random_range(0.1..0.3);
    Ok(render(&plan, f0, 1.0, rate, peak, &mut rng)?.with_label(word))
}

/// Writes a miniature speech-commands tree: `per_word` one-second takes
/// per word, two background-noise tracks, and test/validation lists
/// (every 4th take tests, every 7th remaining take validates).
pub fn write_toy_corpus(root: impl AsRef<Path>, words: &[&str], per_word: usize, seed: u64) -> Result<()> {
    let root = root.as_ref();
    let mut testing = String::new();
    let mut validation = String::new();
    for word in words {
        let dir = root.join(word);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for take in 0..per_word {
            let name = format!("{:08x}_nohash_{take}.wav", seed as u32);
            let clip = word_clip(word, seed.wrapping_add(take as u64), CORPUS_RATE)?;
            signal_io::save_clip(dir.join(&name), &clip)?;
            let rel = format!("{word}/{name}\n");
            if take % 4 == 3 {
                testing.push_str(&rel);
            } else if take % 7 == 6 {
                validation.push_str(&rel);
            }
        }
    }
    let bg = root.join(BACKGROUND_DIR);
    fs::create_dir_all(&bg).map_err(|e| Error::io(&bg, e))?;
    signal_io::save_clip(bg.join("white_noise.wav"), &white_noise(0.05, 3.0, CORPUS_RATE, seed)?)?;
    let hum = white_noise(0.2, 3.0, CORPUS_RATE, seed ^ 1)?;
    let hum = PcmClip::new(one_pole_lowpass(&hum.samples, 300.0, CORPUS_RATE as f64), CORPUS_RATE)?;
    signal_io::save_clip(bg.join("low_rumble.wav"), &hum)?;
    for (name, text) in [("testing_list.txt", testing), ("validation_list.txt", validation)] {
        let p = root.join(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn speech_like_is_seeded_and_bounded() {
        let a = speech_like(7, 1.0, 16_000).unwrap();
        let b = speech_like(7, 1.0, 16_000).unwrap();
        let c = speech_like(8, 1.0, 16_000).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.samples.len(), 16_000);
        let peak = a.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(peak > 0.1 && peak < 0.31, "{peak}");
    }

    #[test]
    fn speech_like_has_pauses() {
        let a = speech_like(3, 1.0, 16_000).unwrap();
        let frame_energy: Vec<f64> = a
            .samples
            .chunks(256)
            .map(|c| c.iter().map(|v| v * v).sum::<f64>() / c.len() as f64)
            .collect();
        let max = frame_energy.iter().cloned().fold(0.0, f64::max);
        let quiet = frame_energy.iter().filter(|&&e| e < max * 1e-4).count();
        assert!(quiet >= 5, "{quiet}");
    }

    #[test]
    fn word_takes_differ_but_share_plan() {
        let a = word_clip("yes", 0, 16_000).unwrap();
        let b = word_clip("yes", 1, 16_000).unwrap();
        assert_ne!(a.samples, b.samples);
        assert_eq!(a.label.as_deref(), Some("yes"));
    }
}
