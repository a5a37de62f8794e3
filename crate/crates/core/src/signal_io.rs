//! Audio ingestion, band-limited upsampling and dataset manifests.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sample rate of the speech corpus.
pub const CORPUS_RATE: u32 = 16_000;
/// Rate of the feature extractors after 2x oversampling.
pub const MODEL_RATE: u32 = 32_000;

pub const SILENCE_LABEL: &str = "Silence";
pub const UNKNOWN_LABEL: &str = "Unknown";
pub const BACKGROUND_DIR: &str = "_background_noise_";

const PCM16_SCALE: f64 = 32768.0;

/// A mono audio clip with samples normalized to [-1, +1].
#[derive(Debug, Clone, PartialEq)]
pub struct PcmClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub label: Option<String>,
}

impl PcmClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate != CORPUS_RATE && sample_rate != MODEL_RATE {
            return Err(Error::contract(format!(
                "sample rate {sample_rate} Hz is not one of {CORPUS_RATE}/{MODEL_RATE}"
            )));
        }
        if let Some(bad) = samples.iter().position(|s| !s.is_finite() || s.abs() > 1.0) {
            return Err(Error::contract(format!(
                "sample {bad} = {} is outside [-1, 1]",
                samples[bad]
            )));
        }
        Ok(PcmClip {
            samples,
            sample_rate,
            label: None,
        })
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

fn hound_err(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::format(format!("{}: {other}", path.display())),
    }
}

fn open_pcm16(path: &Path, expected_rate: u32) -> Result<hound::WavReader<BufReader<fs::File>>> {
    let reader = hound::WavReader::open(path).map_err(|e| hound_err(path, e))?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::format(format!(
            "{}: expected 16-bit PCM, found {:?} {} bit",
            path.display(),
            spec.sample_format,
            spec.bits_per_sample
        )));
    }
    if spec.channels != 1 {
        return Err(Error::contract(format!(
            "{}: expected mono, found {} channels",
            path.display(),
            spec.channels
        )));
    }
    if spec.sample_rate != expected_rate {
        return Err(Error::contract(format!(
            "{}: expected {expected_rate} Hz, found {} Hz",
            path.display(),
            spec.sample_rate
        )));
    }
    Ok(reader)
}

/// Reads a 16-bit mono PCM WAV file, scaling samples by 2^-15.
pub fn load_clip(path: impl AsRef<Path>, expected_rate: u32) -> Result<PcmClip> {
    load_clip_window(path, expected_rate, 0, None)
}

/// Reads a clip at whichever supported rate (16 or 32 kHz) it was written.
pub fn load_clip_any(path: impl AsRef<Path>) -> Result<PcmClip> {
    let path = path.as_ref();
    let rate = hound::WavReader::open(path).map_err(|e| hound_err(path, e))?.spec().sample_rate;
    load_clip(path, rate)
}

/// Reads `len` samples starting at `start` (or everything from `start` when
/// `len` is `None`).
pub fn load_clip_window(
    path: impl AsRef<Path>,
    expected_rate: u32,
    start: usize,
    len: Option<usize>,
) -> Result<PcmClip> {
    let path = path.as_ref();
    let mut reader = open_pcm16(path, expected_rate)?;
    let total = reader.duration() as usize;
    if start > total {
        return Err(Error::contract(format!(
            "{}: window start {start} beyond {total} samples",
            path.display()
        )));
    }
    let take = len.unwrap_or(total - start);
    if start + take > total {
        return Err(Error::contract(format!(
            "{}: window [{start}, {}) beyond {total} samples",
            path.display(),
            start + take
        )));
    }
    reader.seek(start as u32).map_err(|e| Error::io(path, e))?;
    let samples = reader
        .samples::<i16>()
        .take(take)
        .map(|s| s.map(|v| v as f64 / PCM16_SCALE))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| hound_err(path, e))?;
    if samples.len() != take {
        return Err(Error::format(format!("{}: truncated sample data", path.display())));
    }
    PcmClip::new(samples, expected_rate)
}

/// Writes a clip as 16-bit mono PCM, rounding and saturating to i16.
pub fn save_clip(path: impl AsRef<Path>, clip: &PcmClip) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| hound_err(path, e))?;
    for &s in &clip.samples {
        let v = (s * PCM16_SCALE).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16;
        writer.write_sample(v).map_err(|e| hound_err(path, e))?;
    }
    writer.finalize().map_err(|e| hound_err(path, e))
}

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let half = x / 2.0;
    for k in 1..64 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Integer-factor windowed-sinc interpolator in polyphase form.
///
/// Each output phase is normalized to unit DC gain. Samples outside the
/// input are treated as zero.
#[derive(Debug, Clone)]
pub struct PolyphaseInterpolator {
    factor: usize,
    half_taps: usize,
    /// `phases[p][d + half_taps]` weights input `x[n - d]` for output `n*L + p`.
    phases: Vec<Vec<f64>>,
}

impl PolyphaseInterpolator {
    /// `cutoff` is the pass-band edge as a fraction of the input Nyquist
    /// frequency; `kaiser_beta` sets the stop-band attenuation.
    pub fn new(factor: usize, half_taps: usize, cutoff: f64, kaiser_beta: f64) -> Self {
        assert!(factor >= 1 && half_taps >= 1 && cutoff > 0.0 && cutoff <= 1.0);
        let span = (half_taps * factor) as f64;
        let norm = bessel_i0(kaiser_beta);
        let mut phases = Vec::with_capacity(factor);
        for p in 0..factor {
            let mut taps = Vec::with_capacity(2 * half_taps + 1);
            for d in -(half_taps as i64)..=(half_taps as i64) {
                let n = (d * factor as i64 + p as i64) as f64;
                let h = if n.abs() > span {
                    0.0
                } else {
                    let r = n / span;
                    let w = bessel_i0(kaiser_beta * (1.0 - r * r).max(0.0).sqrt()) / norm;
                    cutoff * sinc(cutoff * n / factor as f64) * w
                };
                taps.push(h);
            }
            let dc: f64 = taps.iter().sum();
            taps.iter_mut().for_each(|t| *t /= dc);
            phases.push(taps);
        }
        PolyphaseInterpolator {
            factor,
            half_taps,
            phases,
        }
    }

    pub fn factor(&self) -> usize {
        self.factor
    }

    /// Worst-case peak gain minus one: `max|y| <= max|x| * (1 + bound)`.
    pub fn overshoot_bound(&self) -> f64 {
        self.phases
            .iter()
            .map(|t| t.iter().map(|h| h.abs()).sum::<f64>())
            .fold(0.0, f64::max)
            - 1.0
    }

    pub fn process(&self, input: &[f64]) -> Vec<f64> {
        let m = self.half_taps as i64;
        let len = input.len() as i64;
        let mut out = Vec::with_capacity(input.len() * self.factor);
        for n in 0..len {
            for taps in &self.phases {
                let mut acc = 0.0;
                let lo = (n - len + 1).max(-m);
                let hi = n.min(m);
                for d in lo..=hi {
                    acc += input[(n - d) as usize] * taps[(d + m) as usize];
                }
                out.push(acc);
            }
        }
        out
    }
}

/// Kaiser beta giving roughly 70 dB of stop-band attenuation.
const INTERP_BETA: f64 = 6.76;
const INTERP_HALF_TAPS: usize = 32;

/// The 16 kHz to 32 kHz half-band interpolator used by [`resample_2x`].
pub fn half_band_interpolator() -> PolyphaseInterpolator {
    PolyphaseInterpolator::new(2, INTERP_HALF_TAPS, 1.0, INTERP_BETA)
}

/// Upsamples a 16 kHz clip to 32 kHz.
///
/// Output samples are saturated to [-1, 1]; this only triggers for inputs
/// within [`PolyphaseInterpolator::overshoot_bound`] of full scale.
pub fn resample_2x(clip: &PcmClip) -> Result<PcmClip> {
    if clip.sample_rate != CORPUS_RATE {
        return Err(Error::contract(format!(
            "resample_2x expects {CORPUS_RATE} Hz input, got {} Hz",
            clip.sample_rate
        )));
    }
    let mut samples = half_band_interpolator().process(&clip.samples);
    samples.iter_mut().for_each(|s| *s = s.clamp(-1.0, 1.0));
    Ok(PcmClip {
        samples,
        sample_rate: MODEL_RATE,
        label: clip.label.clone(),
    })
}

/// Brings any corpus clip to the model rate.
pub fn to_model_rate(clip: &PcmClip) -> Result<PcmClip> {
    match clip.sample_rate {
        MODEL_RATE => Ok(clip.clone()),
        CORPUS_RATE => resample_2x(clip),
        r => Err(Error::contract(format!("unsupported sample rate {r} Hz"))),
    }
}

/// Global mean/std amplitude normalization.
///
/// Maps `(x - mean) / std` through a single gain chosen so that the average
/// per-clip peak lands on `target_peak` (0.25 corresponds to 250 mV
/// peak-to-peak at a 0.5 V full scale).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmplitudeNormalizer {
    pub mean: f64,
    pub std: f64,
    pub gain: f64,
}

impl AmplitudeNormalizer {
    pub const DEFAULT_TARGET_PEAK: f64 = 0.25;

    pub fn fit(clips: &[PcmClip], target_peak: f64) -> Result<Self> {
        let n: usize = clips.iter().map(|c| c.samples.len()).sum();
        if n == 0 {
            return Err(Error::Empty("no samples to fit amplitude normalization".into()));
        }
        let mean = clips.iter().flat_map(|c| &c.samples).sum::<f64>() / n as f64;
        let var = clips
            .iter()
            .flat_map(|c| &c.samples)
            .map(|s| (s - mean) * (s - mean))
            .sum::<f64>()
            / n as f64;
        let std = var.sqrt();
        if std <= 0.0 {
            return Err(Error::contract("corpus has zero variance"));
        }
        let peaks: Vec<f64> = clips
            .iter()
            .filter(|c| !c.is_empty())
            .map(|c| c.samples.iter().map(|s| ((s - mean) / std).abs()).fold(0.0, f64::max))
            .collect();
        let mean_peak = peaks.iter().sum::<f64>() / peaks.len() as f64;
        Ok(AmplitudeNormalizer {
            mean,
            std,
            gain: target_peak / mean_peak,
        })
    }

    pub fn apply(&self, clip: &PcmClip) -> PcmClip {
        let samples = clip
            .samples
            .iter()
            .map(|s| ((s - self.mean) / self.std * self.gain).clamp(-1.0, 1.0))
            .collect();
        PcmClip {
            samples,
            sample_rate: clip.sample_rate,
            label: clip.label.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// One manifest line. Silence windows use a `#start=<sample>` suffix on
/// the background-track path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub label: String,
    pub split: Split,
}

impl ManifestEntry {
    /// Splits `path#start=N` into the file path and window start.
    pub fn file_and_window(&self) -> (&str, Option<usize>) {
        match self.path.rsplit_once("#start=") {
            Some((file, start)) => (file, start.parse().ok()),
            None => (self.path.as_str(), None),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub class_names: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ManifestConfig {
    pub silence_count: usize,
    pub unknown_count: usize,
}

impl Default for ManifestConfig {
    fn default() -> Self {
        ManifestConfig {
            silence_count: 4044,
            unknown_count: 4044,
        }
    }
}

/// Ten keywords of the standard 12-class task.
pub const DEFAULT_KEYWORDS: [&str; 10] = [
    "yes", "no", "up", "down", "left", "right", "on", "off", "stop", "go",
];

fn read_list(path: &Path) -> Result<HashSet<String>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut set = HashSet::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if !line.is_empty() {
            set.insert(line.replace('\\', "/"));
        }
    }
    Ok(set)
}

fn sorted_wavs(dir: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.ends_with(".wav") && entry.path().is_file() {
            names.push(name);
        }
    }
    names.sort();
    Ok(names)
}

fn sorted_subdirs(root: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        if entry.path().is_dir() {
            names.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    names.sort();
    Ok(names)
}

fn sample_silence(
    rng: &mut ChaCha8Rng,
    tracks: &[(String, usize)],
    count: usize,
    taken: &mut BTreeSet<String>,
) -> Result<Vec<String>> {
    let usable: Vec<&(String, usize)> = tracks.iter().filter(|(_, n)| *n >= CORPUS_RATE as usize).collect();
    if usable.is_empty() {
        return Err(Error::Ingestion(
            "no background-noise track is at least one second long".into(),
        ));
    }
    let capacity: usize = usable.iter().map(|(_, n)| n - CORPUS_RATE as usize + 1).sum();
    if count > capacity {
        return Err(Error::Ingestion(format!(
            "cannot cut {count} distinct silence windows from {capacity} offsets"
        )));
    }
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let (name, len) = usable[rng.random_range(0..usable.len())];
        let start = rng.random_range(0..=len - CORPUS_RATE as usize);
        let path = format!("{BACKGROUND_DIR}/{name}#start={start}");
        if taken.insert(path.clone()) {
            out.push(path);
        }
    }
    Ok(out)
}

/// Assembles the 12-class manifest from a speech-commands style tree.
///
/// Expected layout: one directory per word, `_background_noise_/` with
/// long noise tracks, `testing_list.txt` and optionally
/// `validation_list.txt` (validation clips are left out of both splits).
pub fn build_manifest(
    dataset_root: impl AsRef<Path>,
    keywords: &[String],
    rng_seed: u64,
    cfg: &ManifestConfig,
) -> Result<DatasetManifest> {
    let root = dataset_root.as_ref();
    if keywords.len() != 10 {
        return Err(Error::contract(format!(
            "expected 10 keywords, got {}",
            keywords.len()
        )));
    }
    let distinct: BTreeSet<&String> = keywords.iter().collect();
    if distinct.len() != 10 {
        return Err(Error::contract("keywords must be distinct"));
    }
    for k in keywords {
        if k.starts_with('_') || k == SILENCE_LABEL || k == UNKNOWN_LABEL {
            return Err(Error::contract(format!("`{k}` cannot be used as a keyword")));
        }
    }
    if !root.is_dir() {
        return Err(Error::Ingestion(format!("{} is not a directory", root.display())));
    }
    let test_list_path = root.join("testing_list.txt");
    if !test_list_path.is_file() {
        return Err(Error::Ingestion(format!("missing {}", test_list_path.display())));
    }
    let test_list = read_list(&test_list_path)?;
    let val_path = root.join("validation_list.txt");
    let val_list = if val_path.is_file() {
        read_list(&val_path)?
    } else {
        HashSet::new()
    };
    let bg_dir = root.join(BACKGROUND_DIR);
    if !bg_dir.is_dir() {
        return Err(Error::Ingestion(format!("missing {}", bg_dir.display())));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let keyword_set: HashSet<&str> = keywords.iter().map(String::as_str).collect();
    let mut entries = Vec::new();
    let mut unknown_train = Vec::new();
    let mut unknown_test = Vec::new();
    let mut keyword_test_counts = Vec::new();

    for k in keywords {
        if !root.join(k).is_dir() {
            return Err(Error::Ingestion(format!("missing keyword directory `{k}`")));
        }
    }
    for word in sorted_subdirs(root)? {
        if word.starts_with('_') {
            continue;
        }
        let is_keyword = keyword_set.contains(word.as_str());
        let mut n_test = 0;
        for file in sorted_wavs(&root.join(&word))? {
            let rel = format!("{word}/{file}");
            if val_list.contains(&rel) {
                continue;
            }
            let split = if test_list.contains(&rel) {
                Split::Test
            } else {
                Split::Train
            };
            if is_keyword {
                if split == Split::Test {
                    n_test += 1;
                }
                entries.push(ManifestEntry {
                    path: rel,
                    label: word.clone(),
                    split,
                });
            } else if split == Split::Test {
                unknown_test.push(rel);
            } else {
                unknown_train.push(rel);
            }
        }
        if is_keyword {
            keyword_test_counts.push(n_test);
        }
    }

    let per_class_test = (keyword_test_counts.iter().sum::<usize>() as f64 / 10.0).round() as usize;

    unknown_train.shuffle(&mut rng);
    if unknown_train.len() < cfg.unknown_count {
        log::warn!(
            "only {} unknown-word clips available for {} requested",
            unknown_train.len(),
            cfg.unknown_count
        );
    }
    unknown_train.truncate(cfg.unknown_count);
    unknown_train.sort();
    for path in unknown_train {
        entries.push(ManifestEntry {
            path,
            label: UNKNOWN_LABEL.into(),
            split: Split::Train,
        });
    }
    unknown_test.shuffle(&mut rng);
    unknown_test.truncate(per_class_test);
    unknown_test.sort();
    for path in unknown_test {
        entries.push(ManifestEntry {
            path,
            label: UNKNOWN_LABEL.into(),
            split: Split::Test,
        });
    }

    let mut tracks = Vec::new();
    for name in sorted_wavs(&bg_dir)? {
        let path = bg_dir.join(&name);
        let reader = open_pcm16(&path, CORPUS_RATE)?;
        tracks.push((name, reader.duration() as usize));
    }
    let mut taken = BTreeSet::new();
    for (split, count) in [(Split::Train, cfg.silence_count), (Split::Test, per_class_test)] {
        for path in sample_silence(&mut rng, &tracks, count, &mut taken)? {
            entries.push(ManifestEntry {
                path,
                label: SILENCE_LABEL.into(),
                split,
            });
        }
    }

    let mut class_names: Vec<String> = keywords.to_vec();
    class_names.push(SILENCE_LABEL.into());
    class_names.push(UNKNOWN_LABEL.into());
    let manifest = DatasetManifest {
        entries,
        class_names,
    };
    manifest.validate()?;
    Ok(manifest)
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        let names: BTreeSet<&String> = self.class_names.iter().collect();
        if self.class_names.len() != 12 || names.len() != 12 {
            return Err(Error::contract("manifest needs exactly 12 distinct classes"));
        }
        for required in [SILENCE_LABEL, UNKNOWN_LABEL] {
            if !self.class_names.iter().any(|c| c == required) {
                return Err(Error::contract(format!("class `{required}` missing")));
            }
        }
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.path.as_str()) {
                return Err(Error::contract(format!("duplicate manifest path {}", e.path)));
            }
            if !names.contains(&e.label) {
                return Err(Error::contract(format!("unknown label `{}`", e.label)));
            }
        }
        Ok(())
    }

    pub fn class_index(&self, label: &str) -> Option<usize> {
        self.class_names.iter().position(|c| c == label)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// JSON-lines form: a `{"classes": [...]}` header line, then one entry
    /// per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::json!({ "classes": self.class_names }).to_string();
        out.push('\n');
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("entry serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::format("empty manifest"))?;
        let header: serde_json::Value =
            serde_json::from_str(header).map_err(|e| Error::format(format!("manifest header: {e}")))?;
        let class_names: Vec<String> = serde_json::from_value(header["classes"].clone())
            .map_err(|e| Error::format(format!("manifest classes: {e}")))?;
        let entries = lines
            .enumerate()
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| Error::format(format!("manifest line {}: {e}", i + 2)))
            })
            .collect::<Result<Vec<ManifestEntry>>>()?;
        let m = DatasetManifest {
            entries,
            class_names,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl().as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_jsonl(&text)
    }
}

/// Loads the audio behind a manifest entry (including silence windows).
pub fn load_entry(root: &Path, entry: &ManifestEntry) -> Result<PcmClip> {
    let (file, start) = entry.file_and_window();
    let path: PathBuf = root.join(file);
    let clip = match start {
        Some(s) => load_clip_window(&path, CORPUS_RATE, s, Some(CORPUS_RATE as usize))?,
        None => load_clip(&path, CORPUS_RATE)?,
    };
    Ok(clip.with_label(entry.label.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rustfft::{num_complex::Complex, FftPlanner};

    fn tone(freq: f64, amp: f64, rate: u32, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / rate as f64).sin())
            .collect()
    }

    #[test]
    fn zero_wav_reads_back_as_zeros() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("z.wav");
        save_clip(&path, &PcmClip::new(vec![0.0; 16000], 16000).unwrap()).unwrap();
        let clip = load_clip(&path, 16000).unwrap();
        assert_eq!(clip.samples.len(), 16000);
        assert!(clip.samples.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn full_scale_square_scales_by_2_pow_15() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sq.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 16000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        for i in 0..1600 {
            w.write_sample(if (i / 8) % 2 == 0 { 32767i16 } else { -32767 }).unwrap();
        }
        w.finalize().unwrap();
        let clip = load_clip(&path, 16000).unwrap();
        for s in clip.samples {
            assert_eq!(s.abs(), 32767.0 / 32768.0);
        }
    }

    #[test]
    fn sine_of_16384_reads_back_at_half_scale() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 16000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        for i in 0..16000 {
            let v = (16384.0 * (2.0 * std::f64::consts::PI * 1000.0 * i as f64 / 16000.0).sin()).round();
            w.write_sample(v as i16).unwrap();
        }
        w.finalize().unwrap();
        let clip = load_clip(&path, 16000).unwrap();
        let peak = clip.samples.iter().fold(0.0f64, |m, s| m.max(s.abs()));
        assert!((peak - 0.5).abs() <= 1.0 / 32768.0, "peak {peak}");
    }

    #[test]
    fn wrong_rate_and_channels_are_contract_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("st.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 16000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        w.write_sample(0i16).unwrap();
        w.write_sample(0i16).unwrap();
        w.finalize().unwrap();
        assert!(matches!(load_clip(&path, 16000), Err(Error::Contract(_))));

        let mono = dir.path().join("m.wav");
        save_clip(&mono, &PcmClip::new(vec![0.0; 10], 32000).unwrap()).unwrap();
        assert!(matches!(load_clip(&mono, 16000), Err(Error::Contract(_))));
    }

    #[test]
    fn malformed_header_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.wav");
        fs::write(&path, b"RIFX\x00\x00\x00\x00garbage").unwrap();
        assert!(matches!(load_clip(&path, 16000), Err(Error::Format(_))));
    }

    #[test]
    fn resample_zero_and_dc() {
        let z = resample_2x(&PcmClip::new(vec![0.0; 400], 16000).unwrap()).unwrap();
        assert_eq!(z.samples.len(), 800);
        assert_eq!(z.sample_rate, 32000);
        assert!(z.samples.iter().all(|&s| s == 0.0));

        let dc = resample_2x(&PcmClip::new(vec![0.1; 400], 16000).unwrap()).unwrap();
        // away from the zero-padded edges
        for &s in &dc.samples[100..700] {
            assert!((s - 0.1).abs() < 1e-3, "{s}");
        }
    }

    #[test]
    fn resample_rejects_non_16k() {
        let c = PcmClip::new(vec![0.0; 4], 32000).unwrap();
        assert!(matches!(resample_2x(&c), Err(Error::Contract(_))));
    }

    fn fft_peak(x: &[f64]) -> (usize, f64) {
        let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
        buf[..x.len() / 2]
            .iter()
            .enumerate()
            .map(|(i, c)| (i, c.norm()))
            .fold((0, 0.0), |a, b| if b.1 > a.1 { b } else { a })
    }

    #[test]
    fn resample_preserves_tone_amplitude() {
        // 2 kHz lands on an exact FFT bin for both rates.
        for freq in [2000.0, 7000.0] {
            let input = tone(freq, 0.5, 16000, 16000);
            let out = resample_2x(&PcmClip::new(input.clone(), 16000).unwrap()).unwrap();
            let (bin_in, mag_in) = fft_peak(&input);
            let (bin_out, mag_out) = fft_peak(&out.samples);
            assert_eq!(bin_in as f64, freq);
            assert_eq!(bin_out as f64, freq);
            // output has twice the samples: normalize by length
            let ratio_db = 20.0 * ((mag_out / 2.0) / mag_in).log10();
            assert!(ratio_db.abs() < 0.5, "{freq} Hz: {ratio_db} dB");
        }
    }

    #[test]
    fn resample_image_rejection_at_least_60_db() {
        let input = tone(7000.0, 0.5, 16000, 16000);
        let out = resample_2x(&PcmClip::new(input, 16000).unwrap()).unwrap();
        let mut buf: Vec<Complex<f64>> = out.samples.iter().map(|&v| Complex::new(v, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
        let main = buf[7000].norm();
        let image = buf[9000].norm();
        assert!(20.0 * (image / main).log10() < -60.0);
    }

    #[test]
    fn overshoot_is_bounded() {
        let interp = half_band_interpolator();
        let bound = interp.overshoot_bound();
        // windowed-sinc phases have an L1 norm of a few units
        assert!(bound > 0.0 && bound < 3.0, "{bound}");
        let square: Vec<f64> = (0..512).map(|i| if (i / 5) % 2 == 0 { 0.6 } else { -0.6 }).collect();
        let out = interp.process(&square);
        let peak = out.iter().fold(0.0f64, |m, s| m.max(s.abs()));
        assert!(peak <= 0.6 * (1.0 + bound) + 1e-12);
    }

    proptest! {
        #[test]
        fn resampler_is_linear(
            x in proptest::collection::vec(-0.4f64..0.4, 64),
            y in proptest::collection::vec(-0.4f64..0.4, 64),
            a in -1.0f64..1.0,
            b in -1.0f64..1.0,
        ) {
            let interp = half_band_interpolator();
            let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
            let lhs = interp.process(&mix);
            let rx = interp.process(&x);
            let ry = interp.process(&y);
            for i in 0..lhs.len() {
                prop_assert!((lhs[i] - (a * rx[i] + b * ry[i])).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn amplitude_normalizer_hits_target_peak() {
        let clips: Vec<PcmClip> = (1..=4)
            .map(|k| PcmClip::new(tone(440.0, 0.1 * k as f64, 16000, 1600), 16000).unwrap())
            .collect();
        let norm = AmplitudeNormalizer::fit(&clips, 0.25).unwrap();
        let peaks: Vec<f64> = clips
            .iter()
            .map(|c| norm.apply(c).samples.iter().fold(0.0f64, |m, s| m.max(s.abs())))
            .collect();
        let mean_peak = peaks.iter().sum::<f64>() / 4.0;
        assert!((mean_peak - 0.25).abs() < 1e-9);
    }

    #[test]
    fn entry_window_parsing() {
        let e = ManifestEntry {
            path: "_background_noise_/a.wav#start=123".into(),
            label: "Silence".into(),
            split: Split::Train,
        };
        assert_eq!(e.file_and_window(), ("_background_noise_/a.wav", Some(123)));
    }
}
