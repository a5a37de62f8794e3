//! End-to-end extractors: the time-domain chain (VTC → SRO BPF → PFM/TDC)
//! and a common front for it and the voltage-domain reference.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::pfm_tdc::{self, PfmConfig, TdcStream};
use crate::postproc::{self, Calibration, CalibrationCorpus, FeatureVector};
use crate::ref_fex::{self, MelBank, RefFexConfig};
use crate::signal_io::{self, PcmClip, MODEL_RATE};
use crate::td_fex::{self, ChannelConfig, ChannelDiagnostics, ChannelOutput, Fidelity, VtcConfig, ANALOG_RATE};
use crate::N_CHANNELS;

#[derive(Debug, Clone, PartialEq)]
pub struct TdFex {
    pub vtc: VtcConfig,
    pub channels: Vec<ChannelConfig>,
    pub pfm: PfmConfig,
}

/// TDC frame counts plus what went wrong on the way.
#[derive(Debug, Clone, PartialEq)]
pub struct TdRun {
    pub counts: Vec<[u32; N_CHANNELS]>,
    pub vtc_saturations: u64,
    pub diagnostics: Vec<ChannelDiagnostics>,
}

impl TdFex {
    pub fn new(fidelity: Fidelity) -> Result<Self> {
        Self::with_channels(td_fex::default_channels(fidelity)?)
    }

    pub fn with_channels(channels: Vec<ChannelConfig>) -> Result<Self> {
        if channels.len() != N_CHANNELS {
            return Err(Error::contract(format!(
                "expected {N_CHANNELS} channel configs, got {}",
                channels.len()
            )));
        }
        for c in &channels {
            c.validate()?;
        }
        Ok(TdFex {
            vtc: VtcConfig::default(),
            channels,
            pfm: PfmConfig::default(),
        })
    }

    pub fn set_fidelity(&mut self, fidelity: Fidelity) {
        for c in &mut self.channels {
            c.fidelity = fidelity;
        }
    }

    /// VTC plus all band-pass channels, at [`ANALOG_RATE`].
    pub fn analog(&self, clip: &PcmClip) -> Result<(u64, Vec<ChannelOutput>)> {
        let vtc = td_fex::vtc_convert(clip, &self.vtc)?;
        let outs = self
            .channels
            .par_iter()
            .map(|c| td_fex::bpf_channel(&vtc, c))
            .collect::<Result<Vec<_>>>()?;
        Ok((vtc.saturations as u64, outs))
    }

    fn channel_pfm(&self, ch: usize) -> PfmConfig {
        PfmConfig {
            seed: self.pfm.seed.wrapping_add(ch as u64),
            ..self.pfm
        }
    }

    pub fn run(&self, clip: &PcmClip) -> Result<TdRun> {
        let vtc = td_fex::vtc_convert(clip, &self.vtc)?;
        if vtc.saturations > 0 {
            log::warn!("VTC clipped {} analog samples", vtc.saturations);
        }
        let per_ch = self
            .channels
            .par_iter()
            .enumerate()
            .map(|(ch, c)| {
                let out = td_fex::bpf_channel(&vtc, c)?;
                let stream = pfm_tdc::pfm_encode(&out.up, &out.dn, &self.channel_pfm(ch))?;
                Ok((stream.frames, out.diagnostics))
            })
            .collect::<Result<Vec<_>>>()?;
        let n_frames = per_ch.iter().map(|(f, _)| f.len()).min().unwrap_or(0);
        let counts = (0..n_frames)
            .map(|i| std::array::from_fn(|ch| per_ch[ch].0[i]))
            .collect();
        Ok(TdRun {
            counts,
            vtc_saturations: vtc.saturations as u64,
            diagnostics: per_ch.into_iter().map(|(_, d)| d).collect(),
        })
    }

    /// Full encoder/TDC stream of one channel (lane-clock increments and
    /// the ideal phase they quantize).
    pub fn tdc_stream(&self, clip: &PcmClip, ch: usize) -> Result<TdcStream> {
        let cfg = self
            .channels
            .get(ch)
            .ok_or_else(|| Error::contract(format!("channel {ch} out of range")))?;
        let vtc = td_fex::vtc_convert(clip, &self.vtc)?;
        let out = td_fex::bpf_channel(&vtc, cfg)?;
        pfm_tdc::pfm_encode(&out.up, &out.dn, &self.channel_pfm(ch))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FexModel {
    Ref { bank: MelBank, cfg: RefFexConfig },
    Td(TdFex),
}

/// Timing of a steady-state tone measurement.
const SETTLE_S: f64 = 0.1;
const MIN_MEASURE_S: f64 = 0.05;

impl FexModel {
    pub fn reference() -> Result<Self> {
        let cfg = RefFexConfig::default();
        Ok(FexModel::Ref {
            bank: MelBank::default_for_rate(cfg.sample_rate as f64)?,
            cfg,
        })
    }

    pub fn time_domain(fidelity: Fidelity) -> Result<Self> {
        Ok(FexModel::Td(TdFex::new(fidelity)?))
    }

    pub fn name(&self) -> &'static str {
        match self {
            FexModel::Ref { .. } => "ref",
            FexModel::Td(_) => "td",
        }
    }

    pub fn sample_rate(&self) -> u32 {
        match self {
            FexModel::Ref { cfg, .. } => cfg.sample_rate,
            FexModel::Td(_) => MODEL_RATE,
        }
    }

    pub fn frame_shift_s(&self) -> f64 {
        match self {
            FexModel::Ref { cfg, .. } => cfg.frame_shift,
            FexModel::Td(_) => pfm_tdc::FRAME_SHIFT_S,
        }
    }

    fn prepare(&self, clip: &PcmClip) -> Result<PcmClip> {
        let clip = signal_io::to_model_rate(clip)?;
        if clip.sample_rate != self.sample_rate() {
            return Err(Error::contract(format!(
                "{} model runs at {} Hz, clip is {} Hz",
                self.name(),
                self.sample_rate(),
                clip.sample_rate
            )));
        }
        Ok(clip)
    }

    /// Per-frame channel values before β/α: TDC counts for the
    /// time-domain chain, quantizer codes for the reference.
    pub fn counts(&self, clip: &PcmClip) -> Result<Vec<[u32; N_CHANNELS]>> {
        let clip = self.prepare(clip)?;
        match self {
            FexModel::Ref { bank, cfg } => Ok(ref_fex::ref_extract(&clip, bank, cfg)?
                .into_iter()
                .map(|fv| fv.values.map(|v| v as u32))
                .collect()),
            FexModel::Td(td) => Ok(td.run(&clip)?.counts),
        }
    }

    /// RAW, LOG and NORM features for every frame.
    pub fn features(&self, clip: &PcmClip, cal: &Calibration) -> Result<Vec<[FeatureVector; 3]>> {
        Ok(self
            .counts(clip)?
            .iter()
            .enumerate()
            .map(|(i, c)| postproc::process_counts(c, i, cal))
            .collect())
    }

    /// Mean rectified channel output for a steady sinusoid: PFD duty for
    /// the time-domain chain, `mean|bpf|` for the reference.
    pub fn tone_response(&self, freq_hz: f64, amplitude: f64) -> Result<[f64; N_CHANNELS]> {
        let rate = self.sample_rate() as f64;
        let cycles = (MIN_MEASURE_S * freq_hz).ceil();
        let measure_s = cycles / freq_hz;
        let total = ((SETTLE_S + measure_s) * rate).ceil() as usize + 1;
        let samples = (0..total)
            .map(|i| amplitude * (2.0 * PI * freq_hz * i as f64 / rate).sin())
            .collect();
        let clip = PcmClip::new(samples, self.sample_rate())?;
        match self {
            FexModel::Ref { bank, .. } => {
                let start = (SETTLE_S * rate).round() as usize;
                let n = (measure_s * rate).round() as usize;
                let out: Vec<f64> = bank
                    .biquad_coeffs
                    .par_iter()
                    .map(|bq| {
                        let y = bq.filter(&clip.samples);
                        y[start..start + n].iter().map(|v| v.abs()).sum::<f64>() / n as f64
                    })
                    .collect();
                Ok(std::array::from_fn(|ch| out[ch]))
            }
            FexModel::Td(td) => {
                let (_, outs) = td.analog(&clip)?;
                let a_rate = ANALOG_RATE as f64;
                let start = (SETTLE_S * a_rate).round() as usize;
                let n = (measure_s * a_rate).round() as usize;
                Ok(std::array::from_fn(|ch| outs[ch].mean_rect(start..start + n)))
            }
        }
    }

    /// Silence, per-channel center tones and training counts for
    /// [`postproc::calibrate`].
    pub fn calibration_corpus(&self, training: &[PcmClip], tone_amplitude: f64) -> Result<CalibrationCorpus> {
        let rate = self.sample_rate();
        // drop the first frames so filters and loops have settled
        let skip = 4;
        let settle = |frames: Vec<[u32; N_CHANNELS]>| frames.into_iter().skip(skip).collect::<Vec<_>>();
        let silence = settle(self.counts(&PcmClip::new(vec![0.0; rate as usize / 2], rate)?)?);
        let centers = self.centers();
        let tones = centers
            .par_iter()
            .map(|&f| {
                let n = rate as usize / 2;
                let samples = (0..n)
                    .map(|i| tone_amplitude * (2.0 * PI * f * i as f64 / rate as f64).sin())
                    .collect();
                Ok(settle(self.counts(&PcmClip::new(samples, rate)?)?))
            })
            .collect::<Result<Vec<_>>>()?;
        let training = training.iter().map(|c| self.counts(c)).collect::<Result<Vec<_>>>()?;
        Ok(CalibrationCorpus {
            silence,
            tones,
            training,
        })
    }

    pub fn centers(&self) -> Vec<f64> {
        match self {
            FexModel::Ref { bank, .. } => bank.centers.clone(),
            FexModel::Td(td) => td.channels.iter().map(|c| c.center_hz).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn silence_counts_sit_at_mid_scale() {
        let td = TdFex::new(Fidelity::Averaged).unwrap();
        let run = td.run(&PcmClip::new(vec![0.0; 16_000], MODEL_RATE).unwrap()).unwrap();
        assert_eq!(run.counts.len(), 30);
        for f in &run.counts[2..] {
            for &c in f {
                assert!((2047..=2049).contains(&c), "{c}");
            }
        }
    }

    #[test]
    fn reference_tone_response_matches_filter_gain() {
        let m = FexModel::reference().unwrap();
        let r = m.tone_response(1000.0, 0.5).unwrap();
        let FexModel::Ref { bank, .. } = &m else { unreachable!() };
        for ch in 0..N_CHANNELS {
            let g = bank.biquad_coeffs[ch].magnitude(1000.0, 32000.0);
            let expect = 0.5 * g * 2.0 / PI;
            assert!((r[ch] - expect).abs() < 2e-3 * 0.5 + 1e-3 * expect, "ch {ch}: {} vs {expect}", r[ch]);
        }
    }

    #[test]
    fn corpus_rate_clips_are_upsampled() {
        let m = FexModel::reference().unwrap();
        let c = m.counts(&PcmClip::new(vec![0.0; 16_000], 16_000).unwrap()).unwrap();
        assert_eq!(c.len(), 62);
    }

    #[test]
    fn wrong_channel_count_rejected() {
        let mut ch = td_fex::default_channels(Fidelity::Averaged).unwrap();
        ch.pop();
        assert!(matches!(TdFex::with_channels(ch), Err(Error::Contract(_))));
    }
}
