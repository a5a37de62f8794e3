//! `tdkws`: batch front end for the time-domain feature extractor, the
//! reference model, calibration, the GRU classifier and the measurement
//! suite.
//!
//! Exit codes: 0 success, 2 usage, 3 I/O or file format, 4 contract
//! violation (bad parameters, failed calibration, loop instability, empty
//! input).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use tdkws_core::metrics::{self, FomInput, NoiseInjector};
use tdkws_core::pipeline::TdFex;
use tdkws_core::signal_io::{self, ManifestConfig, Split, DEFAULT_KEYWORDS};
use tdkws_core::{
    gru, postproc, synth, td_fex, Calibration, DatasetManifest, Error, FeatureFile, FexModel, Fidelity,
    GruFcWeights, PcmClip, Stage, N_CHANNELS,
};

/// `println!` that ends the process quietly when stdout is a closed pipe.
macro_rules! out {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        if let Err(e) = writeln!(std::io::stdout(), $($arg)*) {
            if e.kind() == std::io::ErrorKind::BrokenPipe {
                std::process::exit(0);
            }
            return Err(io_err(Path::new("<stdout>"), e));
        }
    }};
}

#[derive(Parser)]
#[command(name = "tdkws", version, about = "Time-domain keyword-spotting feature extractor simulator")]
struct Cli {
    /// Print per-stage throughput to stderr.
    #[arg(long, global = true)]
    profile: bool,
    /// Repeat for more log output.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum ModelKind {
    Ref,
    Td,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum FidelityArg {
    Averaged,
    Edge,
}

impl From<FidelityArg> for Fidelity {
    fn from(f: FidelityArg) -> Self {
        match f {
            FidelityArg::Averaged => Fidelity::Averaged,
            FidelityArg::Edge => Fidelity::Edge,
        }
    }
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum StageArg {
    Raw,
    Log,
    Norm,
    RawTdc,
}

#[derive(Args, Clone)]
struct ModelArgs {
    #[arg(long, value_enum, default_value = "td")]
    model: ModelKind,
    #[arg(long, value_enum, default_value = "averaged")]
    fidelity: FidelityArg,
    /// Channel configuration file (defaults to the built-in mel bank).
    #[arg(long)]
    channels: Option<PathBuf>,
    /// Seeds the encoder dither and sampling jitter.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl ModelArgs {
    fn build(&self) -> Result<FexModel, Error> {
        match self.model {
            ModelKind::Ref => FexModel::reference(),
            ModelKind::Td => {
                let mut td = match &self.channels {
                    Some(p) => TdFex::with_channels(td_fex::load_channels(p)?)?,
                    None => TdFex::new(self.fidelity.into())?,
                };
                if self.channels.is_none() {
                    td.set_fidelity(self.fidelity.into());
                }
                td.pfm.seed = self.seed;
                Ok(FexModel::Td(td))
            }
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Extract features from a WAV file or every clip of a manifest.
    Features {
        #[arg(long, conflicts_with = "manifest")]
        input: Option<PathBuf>,
        #[arg(long, requires = "root")]
        manifest: Option<PathBuf>,
        /// Dataset root the manifest paths are relative to.
        #[arg(long)]
        root: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "norm")]
        stage: StageArg,
        #[arg(long)]
        calibration: Option<PathBuf>,
        /// Output file (single input) or directory (manifest).
        #[arg(short, long)]
        out: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Classify a WAV file or a NORM feature file.
    Classify {
        #[arg(long, conflicts_with = "features", required_unless_present = "features")]
        input: Option<PathBuf>,
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        calibration: Option<PathBuf>,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Estimate β, α, μ and σ from silence, center tones and training clips.
    Calibrate {
        #[arg(long, requires = "root")]
        manifest: Option<PathBuf>,
        #[arg(long)]
        root: Option<PathBuf>,
        /// Use this many synthetic utterances instead of a manifest.
        #[arg(long, default_value_t = 16)]
        synthetic: usize,
        /// Cap on training clips, taken in manifest order.
        #[arg(long, default_value_t = 200)]
        max_clips: usize,
        #[arg(long, default_value_t = 0.25)]
        tone_amplitude: f64,
        /// Date stamp (defaults to SOURCE_DATE_EPOCH, then today).
        #[arg(long)]
        date: Option<String>,
        #[arg(short, long)]
        out: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Sine sweep: per-channel gain curves and a center/Q report.
    Sweep {
        #[arg(long, default_value_t = 50.0)]
        f_lo: f64,
        #[arg(long, default_value_t = 15_000.0)]
        f_hi: f64,
        #[arg(long, default_value_t = 160)]
        points: usize,
        #[arg(long, default_value_t = 0.25)]
        amplitude: f64,
        /// Gain curves CSV.
        #[arg(short, long)]
        out: PathBuf,
        /// Center/Q report CSV.
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Zero-input TDC quantization-error spectrum and its slope.
    Spectrum {
        #[arg(long, default_value_t = 1 << 18)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        channel: usize,
        /// Encoder FM dither, RMS Hz per analog sample.
        #[arg(long, default_value_t = 5_000.0)]
        dither_hz: f64,
        #[arg(short, long)]
        out: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Figure of merit for the published comparison rows or a custom design.
    Fom {
        #[arg(long, requires_all = ["power_uw", "channels", "f_lo", "f_hi", "frame_shift_ms"])]
        dr_db: Option<f64>,
        #[arg(long)]
        power_uw: Option<f64>,
        #[arg(long)]
        channels: Option<u32>,
        #[arg(long)]
        f_lo: Option<f64>,
        #[arg(long)]
        f_hi: Option<f64>,
        #[arg(long)]
        frame_shift_ms: Option<f64>,
        #[arg(long)]
        json: bool,
    },
    /// Accuracy and confusion matrix over a manifest's test split.
    Evaluate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        root: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        calibration: PathBuf,
        /// Additive white noise on RAW features at this SNR.
        #[arg(long)]
        snr_db: Option<f64>,
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long)]
        confusion: PathBuf,
        #[arg(long)]
        summary: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Per-channel correlation of two feature files (frame grids may differ).
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Build the 12-class train/test manifest of a speech-commands tree.
    Manifest {
        #[arg(long)]
        root: PathBuf,
        /// Ten comma-separated keywords.
        #[arg(long, value_delimiter = ',')]
        keywords: Option<Vec<String>>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 4044)]
        silence: usize,
        #[arg(long, default_value_t = 4044)]
        unknown: usize,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Write seeded random GRU-FC weights.
    RandomWeights {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Write a small synthetic speech-commands style corpus.
    SynthCorpus {
        #[arg(long)]
        root: PathBuf,
        #[arg(long, value_delimiter = ',')]
        words: Option<Vec<String>>,
        #[arg(long, default_value_t = 8)]
        per_word: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

struct Profiler {
    enabled: bool,
    rows: Vec<(String, f64, usize)>,
}

impl Profiler {
    fn time<T>(&mut self, stage: &str, frames: impl Fn(&T) -> usize, f: impl FnOnce() -> T) -> T {
        let t0 = Instant::now();
        let out = f();
        if self.enabled {
            self.rows.push((stage.to_string(), t0.elapsed().as_secs_f64(), frames(&out)));
        }
        out
    }

    fn report(&self) {
        for (stage, secs, frames) in &self.rows {
            let rate = if *secs > 0.0 { *frames as f64 / secs } else { f64::INFINITY };
            eprintln!("profile {stage:<12} {secs:>9.4} s {frames:>8} frames {rate:>12.1} frames/s");
        }
    }
}

fn stage_of(s: StageArg) -> Stage {
    match s {
        StageArg::Raw => Stage::Raw,
        StageArg::Log => Stage::Log,
        StageArg::Norm => Stage::Norm,
        StageArg::RawTdc => Stage::RawTdc,
    }
}

fn load_calibration(path: Option<&Path>, stage: Stage) -> Result<Calibration, Error> {
    match path {
        Some(p) => Calibration::load(p),
        None if matches!(stage, Stage::Raw | Stage::Log | Stage::RawTdc) => Ok(Calibration::identity()),
        None => Err(Error::Calibration(
            "NORM features need --calibration (μ/σ are corpus statistics)".into(),
        )),
    }
}

fn extract(model: &FexModel, clip: &PcmClip, stage: Stage, cal: &Calibration) -> Result<FeatureFile, Error> {
    let frames: Vec<[i64; N_CHANNELS]> = if stage == Stage::RawTdc {
        model.counts(clip)?.iter().map(|c| c.map(i64::from)).collect()
    } else {
        let idx = match stage {
            Stage::Raw => 0,
            Stage::Log => 1,
            _ => 2,
        };
        model
            .features(clip, cal)?
            .iter()
            .map(|f| f[idx].values.map(i64::from))
            .collect()
    };
    Ok(FeatureFile {
        stage,
        frame_shift_us: (model.frame_shift_s() * 1e6).round() as u32,
        frames,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Error> {
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Date stamp from `SOURCE_DATE_EPOCH` when set, so reruns are identical.
fn build_date(explicit: Option<String>) -> String {
    if let Some(d) = explicit {
        return d;
    }
    let now = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.parse::<i64>().ok())
        .and_then(|t| chrono::DateTime::from_timestamp(t, 0))
        .unwrap_or_else(chrono::Utc::now);
    now.format("%Y-%m-%d").to_string()
}

fn manifest_clips(
    manifest: &DatasetManifest,
    root: &Path,
    split: Split,
    limit: Option<usize>,
) -> Result<Vec<(PcmClip, usize)>, Error> {
    let entries: Vec<_> = manifest.split(split).take(limit.unwrap_or(usize::MAX)).collect();
    entries
        .par_iter()
        .map(|e| {
            let label = manifest
                .class_index(&e.label)
                .ok_or_else(|| Error::Contract(format!("label `{}` not in class list", e.label)))?;
            Ok((signal_io::load_entry(root, e)?, label))
        })
        .collect()
}

fn sanitize(path: &str) -> String {
    path.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect()
}

fn run(cli: Cli, prof: &mut Profiler) -> Result<(), Error> {
    match cli.command {
        Command::Features {
            input,
            manifest,
            root,
            stage,
            calibration,
            out,
            model,
        } => {
            let stage = stage_of(stage);
            let cal = load_calibration(calibration.as_deref(), stage)?;
            let fex = model.build()?;
            if let Some(input) = input {
                let clip = signal_io::load_clip_any(&input)?;
                let ff = prof.time("extract", |r: &Result<FeatureFile, Error>| r.as_ref().map_or(0, |f| f.frames.len()), || {
                    extract(&fex, &clip, stage, &cal)
                })?;
                write_file(&out, &ff.to_bytes()?)?;
                out!("{} {} frames -> {}", stage.name(), ff.frames.len(), out.display());
            } else if let Some(mpath) = manifest {
                let root = root.expect("clap enforces --root");
                let m = DatasetManifest::load(&mpath)?;
                fs::create_dir_all(&out).map_err(|e| io_err(&out, e))?;
                let results = prof.time("extract", |r: &Result<Vec<(String, FeatureFile, String, Split)>, Error>| {
                    r.as_ref().map_or(0, |v| v.iter().map(|x| x.1.frames.len()).sum())
                }, || {
                    m.entries
                        .par_iter()
                        .enumerate()
                        .map(|(i, e)| {
                            let clip = signal_io::load_entry(&root, e)?;
                            let ff = extract(&fex, &clip, stage, &cal)?;
                            Ok((format!("{i:06}_{}.tdfx", sanitize(&e.path)), ff, e.label.clone(), e.split))
                        })
                        .collect::<Result<Vec<_>, Error>>()
                })?;
                let mut index = String::new();
                for (name, ff, label, split) in &results {
                    write_file(&out.join(name), &ff.to_bytes()?)?;
                    let line = serde_json::json!({ "file": name, "label": label, "split": split });
                    writeln!(index, "{line}").expect("string write");
                }
                write_file(&out.join("index.jsonl"), index.as_bytes())?;
                out!("{} files -> {}", results.len(), out.display());
            } else {
                return Err(Error::Contract("features needs --input or --manifest".into()));
            }
        }
        Command::Classify {
            input,
            features,
            weights,
            calibration,
            model,
        } => {
            let w = GruFcWeights::load(&weights)?;
            let frames: Vec<[i16; N_CHANNELS]> = if let Some(fpath) = features {
                let ff = FeatureFile::load(&fpath)?;
                if ff.stage != Stage::Norm {
                    return Err(Error::Contract(format!("classify needs NORM features, got {}", ff.stage.name())));
                }
                ff.frames.iter().map(|f| f.map(|v| v as i16)).collect()
            } else {
                let input = input.expect("clap enforces an input");
                let cal_path = calibration
                    .ok_or_else(|| Error::Calibration("classifying audio requires --calibration".into()))?;
                let cal = Calibration::load(&cal_path)?;
                let clip = signal_io::load_clip_any(&input)?;
                let fex = model.build()?;
                prof.time("extract", |r: &Result<Vec<[i16; N_CHANNELS]>, Error>| r.as_ref().map_or(0, Vec::len), || {
                    Ok(fex.features(&clip, &cal)?.iter().map(|f| f[2].values).collect())
                })?
            };
            let (class, scores) = prof.time("classify", |_: &Result<_, Error>| frames.len(), || {
                gru::classify_stream(&frames, &w)
            })?;
            let names: Vec<String> = default_class_names();
            let out = serde_json::json!({
                "class": names[class],
                "class_index": class,
                "scores": scores.iter().map(|s| s.to_f64()).collect::<Vec<_>>(),
                "frames": frames.len(),
            });
            out!("{}", serde_json::to_string_pretty(&out).expect("json"));
        }
        Command::Calibrate {
            manifest,
            root,
            synthetic,
            max_clips,
            tone_amplitude,
            date,
            out,
            model,
        } => {
            let fex = model.build()?;
            let training: Vec<PcmClip> = match manifest {
                Some(mpath) => {
                    let m = DatasetManifest::load(&mpath)?;
                    let root = root.expect("clap enforces --root");
                    manifest_clips(&m, &root, Split::Train, Some(max_clips))?.into_iter().map(|c| c.0).collect()
                }
                None => (0..synthetic as u64)
                    .map(|i| synth::speech_like(model.seed.wrapping_add(i), 1.0, 16_000))
                    .collect::<Result<_, Error>>()?,
            };
            let corpus = prof.time("corpus", |r: &Result<postproc::CalibrationCorpus, Error>| {
                r.as_ref().map_or(0, |c| c.training.iter().map(Vec::len).sum::<usize>() + c.silence.len())
            }, || fex.calibration_corpus(&training, tone_amplitude))?;
            let cal = postproc::calibrate(&corpus, &build_date(date))?;
            cal.save(&out)?;
            out!("calibration ({} training clips) -> {}", training.len(), out.display());
        }
        Command::Sweep {
            f_lo,
            f_hi,
            points,
            amplitude,
            out,
            report,
            model,
        } => {
            let fex = model.build()?;
            let grid = metrics::log_grid(f_lo, f_hi, points);
            let sweep = prof.time("sweep", |_: &Result<_, Error>| points, || metrics::freq_sweep(&fex, &grid, amplitude))?;
            write_file(&out, sweep.to_csv()?.as_bytes())?;
            let rep = sweep.report_csv()?;
            match report {
                Some(p) => write_file(&p, rep.as_bytes())?,
                None => out!("{}", rep.trim_end_matches('\n')),
            }
        }
        Command::Spectrum {
            samples,
            channel,
            dither_hz,
            out,
            model,
        } => {
            let FexModel::Td(mut td) = model.build()? else {
                return Err(Error::Contract("spectrum needs the time-domain model".into()));
            };
            td.pfm.fm_dither_hz = dither_hz;
            // enough audio for `samples` lane-clock samples plus margin
            let seconds = samples as f64 / tdkws_core::pfm_tdc::F_S_OVER as f64 + 0.01;
            let clip = synth::silence(seconds, 32_000)?;
            let stream = prof.time("tdc", |r: &Result<tdkws_core::pfm_tdc::TdcStream, Error>| {
                r.as_ref().map_or(0, |s| s.frames.len())
            }, || td.tdc_stream(&clip, channel))?;
            let mut err = stream.quantization_error();
            err.truncate(samples);
            let fs = tdkws_core::pfm_tdc::F_S_OVER as f64;
            let slope = metrics::noise_spectrum_slope(&err, fs)?;
            let (f, p) = metrics::welch_psd(&err, fs, metrics::WELCH_SEGMENT)?;
            write_file(&out, metrics::spectrum_csv(&f, &p)?.as_bytes())?;
            out!("slope {slope:.3} dB/dec over [{:.1}, {:.1}] Hz", fs / 1024.0, fs / 8.0);
        }
        Command::Fom {
            dr_db,
            power_uw,
            channels,
            f_lo,
            f_hi,
            frame_shift_ms,
            json,
        } => {
            let mut rows: Vec<(String, FomInput, Option<f64>, &str)> = match dr_db {
                Some(dr) => vec![(
                    "custom".into(),
                    FomInput {
                        dr_db: dr,
                        power_mw: power_uw.expect("clap") * 1e-3,
                        n_channels: channels.expect("clap"),
                        f_lo_hz: f_lo.expect("clap"),
                        f_hi_hz: f_hi.expect("clap"),
                        frame_shift_s: frame_shift_ms.expect("clap") * 1e-3,
                    },
                    None,
                    "",
                )],
                None => metrics::PUBLISHED_FOM_ROWS
                    .iter()
                    .map(|r| (r.design.to_string(), r.input, Some(r.published_db), r.note))
                    .collect(),
            };
            let mut js = Vec::new();
            for (name, input, published, note) in rows.drain(..) {
                let fom = metrics::fom_schreier(&input)?;
                if json {
                    js.push(serde_json::json!({ "design": name, "fom_db": fom, "published_db": published, "note": note }));
                } else {
                    let pubs = published.map_or(String::from("-"), |p| format!("{p:.2}"));
                    out!("{name:<16} {fom:>8.3} dB  (published {pubs})");
                }
            }
            if json {
                out!("{}", serde_json::to_string_pretty(&js).expect("json"));
            }
        }
        Command::Evaluate {
            manifest,
            root,
            weights,
            calibration,
            snr_db,
            limit,
            confusion,
            summary,
            model,
        } => {
            let m = DatasetManifest::load(&manifest)?;
            let w = GruFcWeights::load(&weights)?;
            let cal = Calibration::load(&calibration)?;
            let fex = model.build()?;
            let clips = manifest_clips(&m, &root, Split::Test, limit)?;
            let raw: Vec<(Vec<[i16; N_CHANNELS]>, usize)> = prof.time("extract", |r: &Result<Vec<_>, Error>| {
                r.as_ref().map_or(0, |v: &Vec<(Vec<_>, usize)>| v.iter().map(|x| x.0.len()).sum())
            }, || {
                clips
                    .par_iter()
                    .map(|(clip, label)| {
                        let f = fex.features(clip, &cal)?;
                        Ok((f.iter().map(|x| x[0].values).collect(), *label))
                    })
                    .collect::<Result<Vec<_>, Error>>()
            })?;
            let injector = match snr_db {
                Some(_) => Some(NoiseInjector::fit(&raw.iter().map(|r| r.0.clone()).collect::<Vec<_>>())?),
                None => None,
            };
            let items: Vec<(usize, usize)> = (0..raw.len()).map(|i| (i, raw[i].1)).collect();
            let eval = prof.time("classify", |_: &Result<_, Error>| raw.iter().map(|r| r.0.len()).sum(), || {
                metrics::evaluate(&items, &m.class_names, |&i| {
                    let frames = match &injector {
                        Some(inj) => inj.apply(&raw[i].0, snr_db, model.seed.wrapping_add(i as u64)),
                        None => raw[i].0.clone(),
                    };
                    let norm: Vec<[i16; N_CHANNELS]> = frames
                        .iter()
                        .enumerate()
                        .map(|(k, f)| {
                            let rawfv = tdkws_core::FeatureVector::raw(k, *f);
                            postproc::normalize(&postproc::log_compress(&rawfv), &cal).values
                        })
                        .collect();
                    Ok(gru::classify_stream(&norm, &w)?.0)
                })
            })?;
            write_file(&confusion, eval.confusion_csv()?.as_bytes())?;
            let s = eval.summary_json(None, None);
            write_file(&summary, format!("{}\n", serde_json::to_string_pretty(&s).expect("json")).as_bytes())?;
            out!("accuracy {:.4} over {} clips", eval.accuracy, eval.n_samples);
        }
        Command::Compare { a, b, json } => {
            let fa = FeatureFile::load(&a)?;
            let fb = FeatureFile::load(&b)?;
            let as_f64 = |f: &FeatureFile| f.frames.iter().map(|fr| fr.map(|v| v as f64)).collect::<Vec<_>>();
            let (mut xa, mut xb) = (as_f64(&fa), as_f64(&fb));
            let (sa, sb) = (fa.frame_shift_us as f64 * 1e-6, fb.frame_shift_us as f64 * 1e-6);
            // put both on the coarser grid
            if sa < sb {
                xa = metrics::regrid_frames(&xa, sa, sb);
            } else if sb < sa {
                xb = metrics::regrid_frames(&xb, sb, sa);
            }
            let corr = metrics::channel_correlations(&xa, &xb);
            if json {
                out!("{}", serde_json::to_string(&corr.to_vec()).expect("json"));
            } else {
                for (ch, c) in corr.iter().enumerate() {
                    match c {
                        Some(c) => out!("channel {ch:>2} r = {c:.4}"),
                        None => out!("channel {ch:>2} r = n/a (constant)"),
                    }
                }
            }
        }
        Command::Manifest {
            root,
            keywords,
            seed,
            silence,
            unknown,
            out,
        } => {
            let kws = keywords.unwrap_or_else(|| DEFAULT_KEYWORDS.iter().map(|s| s.to_string()).collect());
            let cfg = ManifestConfig {
                silence_count: silence,
                unknown_count: unknown,
            };
            let m = signal_io::build_manifest(&root, &kws, seed, &cfg)?;
            m.save(&out)?;
            let n_test = m.split(Split::Test).count();
            out!("{} train / {n_test} test entries -> {}", m.entries.len() - n_test, out.display());
        }
        Command::RandomWeights { seed, out } => {
            let w = GruFcWeights::random(seed);
            w.save(&out)?;
            out!("{} parameter bytes, sha256 {} -> {}", w.parameter_bytes(), w.digest(), out.display());
        }
        Command::SynthCorpus {
            root,
            words,
            per_word,
            seed,
        } => {
            let mut words = words.unwrap_or_else(|| DEFAULT_KEYWORDS.iter().map(|s| s.to_string()).collect());
            if words.is_empty() {
                return Err(Error::Contract("no words given".into()));
            }
            words.sort();
            words.dedup();
            let refs: Vec<&str> = words.iter().map(String::as_str).collect();
            synth::write_toy_corpus(&root, &refs, per_word, seed)?;
            out!("{} words × {per_word} takes -> {}", refs.len(), root.display());
        }
    }
    Ok(())
}

fn default_class_names() -> Vec<String> {
    let mut names: Vec<String> = DEFAULT_KEYWORDS.iter().map(|s| s.to_string()).collect();
    names.push(signal_io::SILENCE_LABEL.into());
    names.push(signal_io::UNKNOWN_LABEL.into());
    names
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } | Error::Format(_) | Error::WeightLoad { .. } | Error::Ingestion(_) => 3,
        _ => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = std::env::var("TDFX_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size the worker pool: {e}");
        }
    }
    let mut prof = Profiler {
        enabled: cli.profile,
        rows: Vec::new(),
    };
    let result = run(cli, &mut prof);
    prof.report();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
