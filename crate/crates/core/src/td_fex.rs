//! Time-domain analog front-end: voltage-to-time converter, switched ring
//! oscillators (SRO), phase-frequency detectors (PFD) and the
//! two-integrator band-pass loop built from them.
//!
//! All phases are in cycles. A PFD turns the phase difference of two
//! oscillators into UP/DN duty (`K_PFD = 1/2π` duty per radian), so the
//! loop can be written either edge by edge ([`Fidelity::Edge`]) or as the
//! duty-domain ODE it averages to ([`Fidelity::Averaged`]):
//!
//! ```text
//! d_bp' = w (k_in u − k1 d_bp − k2 d_lp)      w = f_fll / n_div
//! d_lp' = w k1 d_bp
//! ```
//!
//! which is a band-pass with `f0 = w √(k1 k2) / 2π`, `Q = √(k2/k1)` and
//! mid-band gain `k_in / k1`.

use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::ini::{self, Section};
use crate::ref_fex::{mel_centers, DEFAULT_F_HI, DEFAULT_F_LO, DEFAULT_Q};
use crate::signal_io::{PcmClip, PolyphaseInterpolator, MODEL_RATE};
use crate::N_CHANNELS;

/// Internal rate of the analog model (8x the model audio rate).
pub const ANALOG_RATE: u32 = 256_000;
pub const UPSAMPLE: usize = (ANALOG_RATE / MODEL_RATE) as usize;
/// Duty per radian of phase difference.
pub const K_PFD: f64 = 1.0 / (2.0 * PI);
pub const N_LANES: usize = 15;
/// Default SRO free-running (and FLL lock) frequency as a multiple of the
/// channel center.
pub const FREE_RUN_RATIO: f64 = 64.0;
/// Edge-mode steps per cycle of the fastest SRO when no rate is given.
pub const EDGE_OVERSAMPLE: f64 = 64.0;
/// Phase difference (cycles) beyond which a loop is declared unstable.
pub const INSTABILITY_BOUND: f64 = 8.0;

/// Locked output frequency of the FLL-linearized VCO:
/// `v_in / (15 R C V_ref)`.
pub fn fll_lock_freq(v_in: f64, r_ref: f64, c_ref: f64, v_ref: f64) -> Result<f64> {
    if !(v_in >= 0.0) {
        return Err(Error::contract(format!("v_in must be non-negative, got {v_in}")));
    }
    Ok(v_in * fll_tuning_gain(r_ref, c_ref, v_ref)?)
}

/// `∂f/∂v_in` of [`fll_lock_freq`], in Hz per volt.
pub fn fll_tuning_gain(r_ref: f64, c_ref: f64, v_ref: f64) -> Result<f64> {
    if !(r_ref > 0.0 && c_ref > 0.0 && v_ref > 0.0) {
        return Err(Error::contract(format!(
            "FLL references must be positive (R={r_ref}, C={c_ref}, V={v_ref})"
        )));
    }
    Ok(1.0 / (N_LANES as f64 * r_ref * c_ref * v_ref))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VtcConfig {
    pub f3db_hz: f64,
    /// Second/third harmonic level of a full-scale tone; `None` disables.
    pub hd2_db: Option<f64>,
    pub hd3_db: Option<f64>,
    /// Carrier of each PWM lane in edge mode.
    pub pwm_carrier_hz: f64,
}

impl Default for VtcConfig {
    fn default() -> Self {
        VtcConfig {
            f3db_hz: 17e3,
            hd2_db: Some(-70.0),
            hd3_db: Some(-70.0),
            pwm_carrier_hz: 1e6,
        }
    }
}

impl VtcConfig {
    pub fn ideal() -> Self {
        VtcConfig {
            hd2_db: None,
            hd3_db: None,
            ..Self::default()
        }
    }

    /// Coefficients of `y = x + c2 x² + c3 x³` giving the requested
    /// harmonic levels at unit amplitude with unit small-signal gain.
    pub fn poly_coeffs(&self) -> (f64, f64) {
        let h2 = self.hd2_db.map_or(0.0, |d| 10f64.powf(d / 20.0));
        let h3 = self.hd3_db.map_or(0.0, |d| 10f64.powf(d / 20.0));
        // compressive third order: fundamental 1 + 3c3/4, HD3 |c3|/4
        let c3 = -4.0 * h3 / (1.0 + 3.0 * h3);
        let c2 = 2.0 * h2 * (1.0 + 0.75 * c3);
        (c2, c3)
    }
}

/// Differential VTC duty `duty_P − duty_N` at [`ANALOG_RATE`].
#[derive(Debug, Clone, PartialEq)]
pub struct VtcOutput {
    pub diff: Vec<f64>,
    pub saturations: usize,
    pub pwm_carrier_hz: f64,
}

impl VtcOutput {
    /// Wraps an already-computed differential duty stream.
    pub fn from_diff(diff: Vec<f64>) -> Self {
        VtcOutput {
            diff,
            saturations: 0,
            pwm_carrier_hz: VtcConfig::default().pwm_carrier_hz,
        }
    }

    pub fn duty_p(&self, i: usize) -> f64 {
        0.5 * (1.0 + self.diff[i])
    }

    pub fn duty_n(&self, i: usize) -> f64 {
        0.5 * (1.0 - self.diff[i])
    }

    pub fn len(&self) -> usize {
        self.diff.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diff.is_empty()
    }
}

/// The 32 kHz → 256 kHz interpolator in front of the VTC.
pub fn analog_interpolator() -> PolyphaseInterpolator {
    PolyphaseInterpolator::new(UPSAMPLE, 32, 15.0 / 16.0, 6.76)
}

/// Converts model-rate audio into differential PWM duty.
pub fn vtc_convert(clip: &PcmClip, cfg: &VtcConfig) -> Result<VtcOutput> {
    if clip.sample_rate != MODEL_RATE {
        return Err(Error::contract(format!(
            "VTC expects {MODEL_RATE} Hz input, got {} Hz",
            clip.sample_rate
        )));
    }
    if !(cfg.f3db_hz > 0.0 && cfg.f3db_hz < ANALOG_RATE as f64 / 2.0) {
        return Err(Error::contract(format!("VTC bandwidth {} Hz out of range", cfg.f3db_hz)));
    }
    let up = analog_interpolator().process(&clip.samples);
    Ok(vtc_convert_analog(&up, cfg))
}

/// VTC on a signal already at [`ANALOG_RATE`].
pub fn vtc_convert_analog(input: &[f64], cfg: &VtcConfig) -> VtcOutput {
    let (c2, c3) = cfg.poly_coeffs();
    // bilinear first-order low-pass, pre-warped at f3db
    let a = (PI * cfg.f3db_hz / ANALOG_RATE as f64).tan();
    let (g, p) = (a / (1.0 + a), (1.0 - a) / (1.0 + a));
    let mut saturations = 0;
    let (mut x1, mut y1) = (0.0, 0.0);
    let diff = input
        .iter()
        .map(|&v| {
            let v = if v.abs() > 1.0 {
                saturations += 1;
                v.signum()
            } else {
                v
            };
            let x = (v + c2 * v * v + c3 * v * v * v).clamp(-1.0, 1.0);
            let y = g * (x + x1) + p * y1;
            x1 = x;
            y1 = y;
            y
        })
        .collect();
    VtcOutput {
        diff,
        saturations,
        pwm_carrier_hz: cfg.pwm_carrier_hz,
    }
}

/// Exact high time of 15 phase-staggered PWM lanes with duty `d` between
/// carrier phases `a` and `b`, as a fraction of `b − a`.
fn pwm_lane_average(a: f64, b: f64, d: f64) -> f64 {
    let g = |phi: f64| {
        let fl = phi.floor();
        fl * d + (phi - fl).min(d)
    };
    let mut sum = 0.0;
    for lane in 0..N_LANES {
        let off = lane as f64 / N_LANES as f64;
        sum += g(b + off) - g(a + off);
    }
    sum / (N_LANES as f64 * (b - a))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Fidelity {
    Edge,
    Averaged,
}

impl fmt::Display for Fidelity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Fidelity::Edge => "edge",
            Fidelity::Averaged => "averaged",
        })
    }
}

impl FromStr for Fidelity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "edge" => Ok(Fidelity::Edge),
            "averaged" | "avg" => Ok(Fidelity::Averaged),
            other => Err(Error::format(format!("unknown fidelity `{other}`"))),
        }
    }
}

/// One band-pass channel of the filterbank.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelConfig {
    pub center_hz: f64,
    pub q: f64,
    pub f_fll_hz: f64,
    pub f_free_hz: f64,
    pub k_in: f64,
    pub k1: f64,
    pub k2: f64,
    pub n_div: u32,
    /// Phase detectors per loop, one per SRO output phase; each drives
    /// its integrator with weight `1/pd_lanes`.
    pub pd_lanes: u32,
    pub fidelity: Fidelity,
    /// Edge-mode step rate; `None` means 64x the fastest SRO.
    pub sim_rate_hz: Option<f64>,
    /// RMS white phase jitter added at every SRO lane edge, in divided
    /// cycles.
    pub phase_jitter: f64,
    pub seed: u64,
}

impl ChannelConfig {
    /// Default loop for `center_hz`: SROs free-run at 64x the center and
    /// `k_in = k1` for unity mid-band gain.
    pub fn new(center_hz: f64, q: f64, fidelity: Fidelity) -> Result<Self> {
        Self::with_loop(center_hz, q, FREE_RUN_RATIO * center_hz, 1, fidelity)
    }

    /// Solves `k1`, `k2` for the requested center and Q at a given FLL
    /// frequency and divider.
    pub fn with_loop(center_hz: f64, q: f64, f_fll_hz: f64, n_div: u32, fidelity: Fidelity) -> Result<Self> {
        if !(center_hz > 0.0 && q > 0.0 && f_fll_hz > 0.0) || n_div == 0 {
            return Err(Error::contract(format!(
                "invalid channel: center={center_hz} q={q} f_fll={f_fll_hz} n_div={n_div}"
            )));
        }
        let k1 = 2.0 * PI * n_div as f64 * center_hz / (q * f_fll_hz);
        let cfg = ChannelConfig {
            center_hz,
            q,
            f_fll_hz,
            f_free_hz: f_fll_hz,
            k_in: k1,
            k1,
            k2: q * q * k1,
            n_div,
            pd_lanes: N_LANES as u32,
            fidelity,
            sim_rate_hz: None,
            phase_jitter: 0.0,
            seed: 0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn loop_rate(&self) -> f64 {
        self.f_fll_hz / self.n_div as f64
    }

    pub fn derived_center_hz(&self) -> f64 {
        self.f_fll_hz * K_PFD * (self.k1 * self.k2).sqrt() / self.n_div as f64
    }

    pub fn derived_q(&self) -> f64 {
        (self.k2 / self.k1).sqrt()
    }

    pub fn midband_gain(&self) -> f64 {
        self.k_in / self.k1
    }

    /// Highest frequency any loop SRO can reach (all inputs at duty 1).
    pub fn max_sro_freq_hz(&self) -> f64 {
        self.f_free_hz + (self.k_in + self.k1 + self.k2) * self.f_fll_hz
    }

    /// Edge-mode steps per [`ANALOG_RATE`] sample.
    pub fn edge_steps_per_sample(&self) -> usize {
        let rate = self.sim_rate_hz.unwrap_or(EDGE_OVERSAMPLE * self.max_sro_freq_hz());
        (rate / ANALOG_RATE as f64).ceil().max(1.0) as usize
    }

    /// Effective edge-mode rate after rounding up to a whole number of
    /// steps per analog sample.
    pub fn effective_sim_rate(&self) -> f64 {
        (self.edge_steps_per_sample() * ANALOG_RATE as usize) as f64
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("center_hz", self.center_hz),
            ("q", self.q),
            ("f_fll_hz", self.f_fll_hz),
            ("k_in", self.k_in),
            ("k1", self.k1),
            ("k2", self.k2),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::contract(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.f_free_hz >= 0.0) || self.n_div == 0 || self.pd_lanes == 0 || !(self.phase_jitter >= 0.0) {
            return Err(Error::contract(
                "f_free_hz and phase_jitter must be non-negative, n_div and pd_lanes positive",
            ));
        }
        if let Some(r) = self.sim_rate_hz {
            if !(r > 0.0) {
                return Err(Error::contract(format!("sim_rate_hz must be positive, got {r}")));
            }
        }
        let derived = self.derived_center_hz();
        if ((derived - self.center_hz) / self.center_hz).abs() > 1e-6 {
            return Err(Error::contract(format!(
                "loop gains give a {derived:.3} Hz center, configured {:.3} Hz",
                self.center_hz
            )));
        }
        if ((self.derived_q() - self.q) / self.q).abs() > 1e-6 {
            return Err(Error::contract(format!(
                "loop gains give Q = {:.4}, configured {}",
                self.derived_q(),
                self.q
            )));
        }
        if self.center_hz >= ANALOG_RATE as f64 / 4.0 {
            return Err(Error::contract(format!(
                "center {} Hz too high for the {ANALOG_RATE} Hz analog model",
                self.center_hz
            )));
        }
        Ok(())
    }

    fn instability(&self, phase_cycles: f64) -> Error {
        Error::Instability {
            center_hz: self.center_hz,
            phase_cycles,
            k_in: self.k_in,
            k1: self.k1,
            k2: self.k2,
            f_fll_hz: self.f_fll_hz,
        }
    }
}

/// Default 16-channel bank: mel-spaced 100 Hz – 8 kHz, Q = 2.
pub fn default_channels(fidelity: Fidelity) -> Result<Vec<ChannelConfig>> {
    mel_centers(N_CHANNELS, DEFAULT_F_LO, DEFAULT_F_HI)?
        .into_iter()
        .enumerate()
        .map(|(i, c)| {
            let mut cfg = ChannelConfig::new(c, DEFAULT_Q, fidelity)?;
            cfg.seed = i as u64;
            Ok(cfg)
        })
        .collect()
}

pub fn channels_to_text(channels: &[ChannelConfig]) -> String {
    let sections: Vec<Section> = channels
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let mut s = Section::new(format!("channel.{i}"));
            s.push("center_hz", c.center_hz);
            s.push("q", c.q);
            s.push("n_div", c.n_div);
            s.push("pd_lanes", c.pd_lanes);
            s.push("fidelity", c.fidelity);
            s.push("sim_rate_hz", c.sim_rate_hz.map_or("auto".to_string(), |r| r.to_string()));
            s.push("f_fll_hz", c.f_fll_hz);
            if c.phase_jitter > 0.0 {
                s.push("phase_jitter", c.phase_jitter);
            }
            s
        })
        .collect();
    format!("# tdkws channel configuration\n{}", ini::render(&sections))
}

pub fn channels_from_text(text: &str) -> Result<Vec<ChannelConfig>> {
    let mut out = Vec::new();
    for (i, s) in ini::parse(text)?.iter().enumerate() {
        if s.name != format!("channel.{i}") {
            return Err(Error::format(format!(
                "expected section [channel.{i}], found [{}]",
                s.name
            )));
        }
        let fidelity: Fidelity = s.require("fidelity")?.parse()?;
        let mut cfg = ChannelConfig::with_loop(
            s.parse_num("center_hz")?,
            s.parse_num("q")?,
            s.parse_num("f_fll_hz")?,
            s.parse_num("n_div")?,
            fidelity,
        )?;
        cfg.sim_rate_hz = match s.get("sim_rate_hz") {
            None | Some("auto") => None,
            Some(_) => Some(s.parse_num("sim_rate_hz")?),
        };
        if s.get("pd_lanes").is_some() {
            cfg.pd_lanes = s.parse_num("pd_lanes")?;
        }
        if s.get("phase_jitter").is_some() {
            cfg.phase_jitter = s.parse_num("phase_jitter")?;
        }
        cfg.seed = i as u64;
        cfg.validate()?;
        out.push(cfg);
    }
    if out.len() != N_CHANNELS {
        return Err(Error::format(format!(
            "channel file defines {} channels, expected {N_CHANNELS}",
            out.len()
        )));
    }
    Ok(out)
}

pub fn save_channels(path: impl AsRef<Path>, channels: &[ChannelConfig]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, channels_to_text(channels)).map_err(|e| Error::io(path, e))
}

pub fn load_channels(path: impl AsRef<Path>) -> Result<Vec<ChannelConfig>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    channels_from_text(&text)
}

/// Three-state phase-frequency detector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PfdState {
    #[default]
    Idle,
    UpActive,
    DnActive,
}

impl PfdState {
    /// Applies the rising edges seen at one instant. Edges on both inputs
    /// at once always land in `Idle` (the NAND reset is instantaneous).
    pub fn step(self, inp: bool, inn: bool) -> Self {
        use PfdState::*;
        match (inp, inn) {
            (false, false) => self,
            (true, true) => Idle,
            (true, false) => match self {
                DnActive => Idle,
                _ => UpActive,
            },
            (false, true) => match self {
                UpActive => Idle,
                _ => DnActive,
            },
        }
    }

    pub fn up(self) -> bool {
        self == PfdState::UpActive
    }

    pub fn dn(self) -> bool {
        self == PfdState::DnActive
    }
}

/// Phase accumulator of a switched ring oscillator followed by a
/// divide-by-`n_div` counter.
#[derive(Debug, Clone, PartialEq)]
pub struct SroState {
    pub free_run_hz: f64,
    pub n_div: u32,
    /// Output phases per divided cycle; lane `k` fires when the divided
    /// phase crosses `k/lanes` modulo 1.
    pub lanes: u32,
    /// Lane edges emitted so far (all lanes).
    pub edges: i64,
    /// Undivided phase since the last lane edge, in `[0, n_div/lanes)`.
    pub residual: f64,
    /// Times the requested frequency went negative and was clamped.
    pub clamp_count: u64,
}

impl SroState {
    pub fn new(free_run_hz: f64, n_div: u32) -> Self {
        Self::with_lanes(free_run_hz, n_div, 1)
    }

    pub fn with_lanes(free_run_hz: f64, n_div: u32, lanes: u32) -> Self {
        SroState {
            free_run_hz,
            n_div,
            lanes: lanes.max(1),
            edges: 0,
            residual: 0.0,
            clamp_count: 0,
        }
    }

    /// Undivided phase in cycles.
    pub fn phase_cycles(&self) -> f64 {
        self.edges as f64 * self.lane_span() + self.residual
    }

    /// Undivided phase between consecutive lane edges.
    fn lane_span(&self) -> f64 {
        self.n_div as f64 / self.lanes as f64
    }

    /// Lane of the most recent edge.
    pub fn last_lane(&self) -> usize {
        (self.edges - 1).rem_euclid(self.lanes as i64) as usize
    }

    pub fn phase_radians(&self) -> f64 {
        2.0 * PI * self.phase_cycles()
    }

    /// Divided phase (what the PFD compares), in cycles.
    pub fn divided_phase(&self) -> f64 {
        (self.edges as f64 + self.residual / self.lane_span()) / self.lanes as f64
    }

    /// Instantaneous frequency for a summed switching drive, clamped at 0.
    pub fn frequency(&mut self, drive_hz: f64) -> f64 {
        let f = self.free_run_hz + drive_hz;
        if f < 0.0 {
            self.clamp_count += 1;
            0.0
        } else {
            f
        }
    }

    /// Time until the next lane edge at frequency `f`.
    pub fn time_to_edge(&self, f: f64) -> f64 {
        if f <= 0.0 {
            f64::INFINITY
        } else {
            (self.lane_span() - self.residual).max(0.0) / f
        }
    }

    /// Advances the phase by `f·dt`; wraps the residual and returns the
    /// number of lane edges crossed.
    pub fn advance(&mut self, f: f64, dt: f64) -> i64 {
        self.residual += f * dt;
        let n = self.lane_span();
        let mut crossed = 0;
        while self.residual >= n {
            self.residual -= n;
            crossed += 1;
        }
        self.edges += crossed;
        crossed
    }

    fn fire(&mut self) {
        self.residual = 0.0;
        self.edges += 1;
    }
}

/// Uniformly sampled PFD output.
#[derive(Debug, Clone, PartialEq)]
pub struct PfdTrace {
    pub states: Vec<PfdState>,
    pub samples_per_period: usize,
}

impl PfdTrace {
    /// Resolution of duty estimates from this trace.
    pub fn edge_quantum(&self) -> f64 {
        1.0 / self.samples_per_period as f64
    }

    pub fn up_duty(&self) -> f64 {
        self.states.iter().filter(|s| s.up()).count() as f64 / self.states.len() as f64
    }

    pub fn dn_duty(&self) -> f64 {
        self.states.iter().filter(|s| s.dn()).count() as f64 / self.states.len() as f64
    }
}

/// Drives a PFD with two free-running oscillators whose phases start at
/// `±Δφ/2` and samples its state at `samples_per_period` points per
/// period of the mean frequency, over `periods` whole periods starting
/// half a period in.
pub fn simulate_pfd_pair(
    freq_p_hz: f64,
    freq_n_hz: f64,
    delta_phi_rad: f64,
    periods: usize,
    samples_per_period: usize,
) -> Result<PfdTrace> {
    if !(freq_p_hz > 0.0 && freq_n_hz > 0.0) || periods == 0 || samples_per_period == 0 {
        return Err(Error::contract("PFD pair needs positive frequencies and a non-empty window"));
    }
    let delta = delta_phi_rad / (2.0 * PI);
    if delta.abs() >= 1.0 {
        return Err(Error::contract(format!("|Δφ| = {delta_phi_rad} rad is not below 2π")));
    }
    let (theta_p, theta_n) = (delta * 0.5, -(delta * 0.5));
    let edge_time = |theta0: f64, f: f64, n: u64| (n as f64 - theta0) / f;
    let f_ref = 0.5 * (freq_p_hz + freq_n_hz);
    let t_sample = |m: usize| (0.5 + (m as f64 + 0.5) / samples_per_period as f64) / f_ref;

    let total = periods * samples_per_period;
    let mut states = Vec::with_capacity(total);
    let mut state = PfdState::Idle;
    let (mut np, mut nn) = (1u64, 1u64);
    let (mut tp, mut tn) = (edge_time(theta_p, freq_p_hz, 1), edge_time(theta_n, freq_n_hz, 1));
    for m in 0..total {
        let t = t_sample(m);
        while tp.min(tn) <= t {
            let (ep, en) = (tp <= tn, tn <= tp);
            state = state.step(ep, en);
            if ep {
                np += 1;
                tp = edge_time(theta_p, freq_p_hz, np);
            }
            if en {
                nn += 1;
                tn = edge_time(theta_n, freq_n_hz, nn);
            }
        }
        states.push(state);
    }
    Ok(PfdTrace {
        states,
        samples_per_period,
    })
}

/// Full-wave rectified duty `mean(up + dn)` of a PFD trace.
pub fn fwr_duty(trace: &PfdTrace) -> f64 {
    trace.states.iter().filter(|s| **s != PfdState::Idle).count() as f64 / trace.states.len() as f64
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ChannelDiagnostics {
    /// SRO frequency clamps at 0 Hz.
    pub freq_clamps: u64,
    /// Averaged-mode steps where a phase difference left (−1, 1).
    pub pfd_clamps: u64,
    /// SRO lane edges simulated (edge mode).
    pub edges: u64,
    pub max_phase_diff: f64,
}

/// Output PFD duties of one channel, one value per [`ANALOG_RATE`] sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelOutput {
    pub up: Vec<f64>,
    pub dn: Vec<f64>,
    pub diagnostics: ChannelDiagnostics,
}

impl ChannelOutput {
    /// Rectified duty `up + dn` at sample `i`.
    pub fn rect(&self, i: usize) -> f64 {
        self.up[i] + self.dn[i]
    }

    pub fn len(&self) -> usize {
        self.up.len()
    }

    pub fn is_empty(&self) -> bool {
        self.up.is_empty()
    }

    /// Mean rectified duty over a sample range.
    pub fn mean_rect(&self, range: std::ops::Range<usize>) -> f64 {
        let n = range.len() as f64;
        range.map(|i| self.rect(i)).sum::<f64>() / n
    }
}

/// Runs one band-pass channel over the VTC output.
pub fn bpf_channel(input: &VtcOutput, cfg: &ChannelConfig) -> Result<ChannelOutput> {
    cfg.validate()?;
    match cfg.fidelity {
        Fidelity::Averaged => bpf_averaged(&input.diff, cfg),
        Fidelity::Edge => bpf_edge(input, cfg),
    }
}

fn bpf_averaged(u: &[f64], cfg: &ChannelConfig) -> Result<ChannelOutput> {
    let h = 1.0 / ANALOG_RATE as f64;
    let w = cfg.loop_rate();
    let (kin, k1, k2) = (cfg.k_in, cfg.k1, cfg.k2);
    // x' = A x + b u with A = w [[-k1, -k2], [k1, 0]], b = w [k_in, 0]
    let a = [[-w * k1, -w * k2], [w * k1, 0.0]];
    let hh = 0.5 * h;
    let m = [[1.0 - hh * a[0][0], -hh * a[0][1]], [-hh * a[1][0], 1.0 - hh * a[1][1]]];
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let minv = [[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]];
    let p = [[1.0 + hh * a[0][0], hh * a[0][1]], [hh * a[1][0], 1.0 + hh * a[1][1]]];
    let deriv = |d: f64, l: f64, u: f64| {
        let (dc, lc) = (d.clamp(-1.0, 1.0), l.clamp(-1.0, 1.0));
        (w * (kin * u - k1 * dc - k2 * lc), w * k1 * dc)
    };

    let mut diag = ChannelDiagnostics::default();
    let (mut d, mut l, mut u_prev) = (0.0f64, 0.0f64, 0.0f64);
    let mut up = Vec::with_capacity(u.len());
    let mut dn = Vec::with_capacity(u.len());
    for &un in u {
        let drive = hh * w * kin * (u_prev + un);
        let rd = p[0][0] * d + p[0][1] * l + drive;
        let rl = p[1][0] * d + p[1][1] * l;
        let (mut nd, mut nl) = (minv[0][0] * rd + minv[0][1] * rl, minv[1][0] * rd + minv[1][1] * rl);
        if nd.abs() > 1.0 || nl.abs() > 1.0 || d.abs() > 1.0 || l.abs() > 1.0 {
            // PFD beyond its linear range: explicit trapezoid on the
            // saturated feedback
            diag.pfd_clamps += 1;
            let (k1d, k1l) = deriv(d, l, u_prev);
            let (k2d, k2l) = deriv(d + h * k1d, l + h * k1l, un);
            nd = d + hh * (k1d + k2d);
            nl = l + hh * (k1l + k2l);
        }
        let worst = nd.abs().max(nl.abs());
        diag.max_phase_diff = diag.max_phase_diff.max(worst);
        if !worst.is_finite() || worst > INSTABILITY_BOUND {
            return Err(cfg.instability(if nd.abs() >= nl.abs() { nd } else { nl }));
        }
        up.push(0.5 * (d.clamp(0.0, 1.0) + nd.clamp(0.0, 1.0)));
        dn.push(0.5 * ((-d).clamp(0.0, 1.0) + (-nd).clamp(0.0, 1.0)));
        d = nd;
        l = nl;
        u_prev = un;
    }
    Ok(ChannelOutput {
        up,
        dn,
        diagnostics: diag,
    })
}

/// Event-driven simulation of the four loop SROs and two PFDs.
///
/// SRO1 (P/N) integrates the input and both feedbacks and feeds the output
/// PFD array; SRO2 (P/N) integrates the output and closes the outer loop
/// with crossed polarity. Each loop has one PFD per SRO output phase, so a
/// PFD array compares the pair `pd_lanes` times per cycle. Within a step
/// all frequencies are piecewise constant between PFD transitions, so
/// edge times are solved exactly.
fn bpf_edge(input: &VtcOutput, cfg: &ChannelConfig) -> Result<ChannelOutput> {
    const P1: usize = 0;
    const N1: usize = 1;
    const P2: usize = 2;
    const N2: usize = 3;
    let steps = cfg.edge_steps_per_sample();
    let bin_dt = 1.0 / ANALOG_RATE as f64;
    let dt = bin_dt / steps as f64;
    let fc = input.pwm_carrier_hz;
    let ff = cfg.f_fll_hz;
    let lanes = cfg.pd_lanes as usize;
    let mut sro: [SroState; 4] =
        std::array::from_fn(|_| SroState::with_lanes(cfg.f_free_hz, cfg.n_div, cfg.pd_lanes));
    let mut bp = vec![PfdState::Idle; lanes];
    let mut lp = vec![PfdState::Idle; lanes];
    // active UP / DN detectors of each array, as a fraction of the lanes
    let share = |arr: &[PfdState]| {
        let up = arr.iter().filter(|s| s.up()).count() as f64;
        let dn = arr.iter().filter(|s| s.dn()).count() as f64;
        (up / lanes as f64, dn / lanes as f64)
    };
    let (mut b_up, mut b_dn) = (0.0, 0.0);
    let (mut l_up, mut l_dn) = (0.0, 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let jitter = (cfg.phase_jitter > 0.0)
        .then(|| Normal::new(0.0, cfg.phase_jitter * cfg.n_div as f64).expect("finite sigma"));

    let mut diag = ChannelDiagnostics::default();
    let mut up_out = Vec::with_capacity(input.len());
    let mut dn_out = Vec::with_capacity(input.len());
    let mut u_prev = 0.0;
    for (bin, &u_bin) in input.diff.iter().enumerate() {
        let (mut up_t, mut dn_t) = (0.0, 0.0);
        for j in 0..steps {
            let frac = (j as f64 + 0.5) / steps as f64;
            let u = u_prev + (u_bin - u_prev) * frac;
            let step_idx = (bin * steps + j) as f64;
            let (a, b) = (step_idx * dt * fc, (step_idx + 1.0) * dt * fc);
            let vp = pwm_lane_average(a, b, 0.5 * (1.0 + u));
            let vn = pwm_lane_average(a, b, 0.5 * (1.0 - u));

            let mut remaining = dt;
            loop {
                let drive = [
                    ff * (cfg.k_in * vp + cfg.k1 * b_dn + cfg.k2 * l_dn),
                    ff * (cfg.k_in * vn + cfg.k1 * b_up + cfg.k2 * l_up),
                    ff * cfg.k1 * b_up,
                    ff * cfg.k1 * b_dn,
                ];
                let mut f = [0.0; 4];
                let mut tau = [0.0; 4];
                for i in 0..4 {
                    f[i] = sro[i].frequency(drive[i]);
                    tau[i] = sro[i].time_to_edge(f[i]);
                }
                let t_min = tau.iter().copied().fold(f64::INFINITY, f64::min);
                let span = t_min.min(remaining);
                up_t += span * b_up;
                dn_t += span * b_dn;
                if t_min >= remaining {
                    for i in 0..4 {
                        sro[i].residual += f[i] * remaining;
                    }
                    break;
                }
                let tol = t_min + dt * 1e-9;
                let mut edge: [Option<usize>; 4] = [None; 4];
                for i in 0..4 {
                    if tau[i] <= tol {
                        sro[i].fire();
                        edge[i] = Some(sro[i].last_lane());
                        diag.edges += 1;
                        if let Some(dist) = &jitter {
                            sro[i].residual += dist.sample(&mut rng);
                        }
                    } else {
                        sro[i].residual += f[i] * t_min;
                    }
                }
                for (arr, p, n) in [(&mut bp, edge[P1], edge[N1]), (&mut lp, edge[P2], edge[N2])] {
                    for k in [p, n].into_iter().flatten() {
                        arr[k] = arr[k].step(p == Some(k), n == Some(k));
                    }
                }
                (b_up, b_dn) = share(&bp);
                (l_up, l_dn) = share(&lp);
                remaining -= t_min;
            }
        }
        let d_bp = sro[P1].divided_phase() - sro[N1].divided_phase();
        let d_lp = sro[P2].divided_phase() - sro[N2].divided_phase();
        let worst = d_bp.abs().max(d_lp.abs());
        diag.max_phase_diff = diag.max_phase_diff.max(worst);
        if !worst.is_finite() || worst > INSTABILITY_BOUND {
            return Err(cfg.instability(if d_bp.abs() >= d_lp.abs() { d_bp } else { d_lp }));
        }
        up_out.push(up_t / bin_dt);
        dn_out.push(dn_t / bin_dt);
        u_prev = u_bin;
    }
    diag.freq_clamps = sro.iter().map(|s| s.clamp_count).sum();
    Ok(ChannelOutput {
        up: up_out,
        dn: dn_out,
        diagnostics: diag,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rustfft::{num_complex::Complex, FftPlanner};

    fn analog_tone(freq: f64, amp: f64, seconds: f64) -> VtcOutput {
        let n = (seconds * ANALOG_RATE as f64) as usize;
        VtcOutput::from_diff(
            (0..n)
                .map(|i| amp * (2.0 * PI * freq * i as f64 / ANALOG_RATE as f64).sin())
                .collect(),
        )
    }

    fn settled_mean(out: &ChannelOutput, settle_s: f64) -> f64 {
        let start = (settle_s * ANALOG_RATE as f64) as usize;
        out.mean_rect(start..out.len())
    }

    #[test]
    fn fll_examples() {
        assert_eq!(fll_lock_freq(0.0, 1e6, 1e-12, 0.25).unwrap(), 0.0);
        let f = fll_lock_freq(0.25, 1e6, 1e-12, 0.25).unwrap();
        assert!((f - 0.25 / (15.0 * 1e6 * 1e-12 * 0.25)).abs() < 1e-6);
        assert!((f - 66_666.667).abs() < 0.01);
        let f2 = fll_lock_freq(0.5, 1e6, 1e-12, 0.25).unwrap();
        assert!((f2 - 2.0 * f).abs() < 1e-6);
        let gain = fll_tuning_gain(1e6, 1e-12, 0.25).unwrap();
        assert!((gain * 0.25 - f).abs() < 1e-6);
        assert!(fll_lock_freq(0.25, 0.0, 1e-12, 0.25).is_err());
        assert!(fll_lock_freq(0.25, 1e6, -1e-12, 0.25).is_err());
    }

    #[test]
    fn pfd_transitions() {
        use PfdState::*;
        assert_eq!(Idle.step(true, false), UpActive);
        assert_eq!(UpActive.step(false, true), Idle);
        assert_eq!(Idle.step(false, true), DnActive);
        assert_eq!(DnActive.step(true, false), Idle);
        assert_eq!(Idle.step(true, true), Idle);
        assert_eq!(UpActive.step(true, true), Idle);
        assert_eq!(UpActive.step(true, false), UpActive);
        assert_eq!(DnActive.step(false, false), DnActive);
        for s in [Idle, UpActive, DnActive] {
            assert!(!(s.up() && s.dn()));
        }
    }

    #[test]
    fn pfd_pair_duties() {
        let zero = simulate_pfd_pair(1e3, 1e3, 0.0, 200, 400).unwrap();
        assert_eq!(zero.up_duty(), 0.0);
        assert_eq!(zero.dn_duty(), 0.0);
        let plus = simulate_pfd_pair(1e3, 1e3, PI, 200, 400).unwrap();
        assert!((plus.up_duty() - 0.5).abs() <= plus.edge_quantum());
        assert_eq!(plus.dn_duty(), 0.0);
        let minus = simulate_pfd_pair(1e3, 1e3, -PI, 200, 400).unwrap();
        assert!((minus.dn_duty() - 0.5).abs() <= minus.edge_quantum());
        assert_eq!(minus.up_duty(), 0.0);
        assert_eq!(fwr_duty(&plus), fwr_duty(&minus));
        assert!(simulate_pfd_pair(1e3, 1e3, 2.0 * PI, 10, 10).is_err());
    }

    #[test]
    fn pfd_frequency_detection() {
        // a faster P input keeps the detector mostly in UP
        let t = simulate_pfd_pair(1.2e3, 1e3, 0.0, 200, 200).unwrap();
        assert!(t.up_duty() > 0.3 && t.dn_duty() == 0.0);
    }

    #[test]
    fn sro_integrates_exactly() {
        let mut a = SroState::new(1000.0, 4);
        let mut b = SroState::new(1000.0, 4);
        for _ in 0..1000 {
            a.advance(1000.0 + 37.5, 1e-5);
            b.advance(1000.0, 1e-5);
        }
        let dphi = a.phase_radians() - b.phase_radians();
        assert!((dphi - 2.0 * PI * 37.5 * 1e-2).abs() < 1e-9);
        assert_eq!(a.edges, (a.phase_cycles() / 4.0).floor() as i64);
        let mut c = SroState::new(100.0, 1);
        assert_eq!(c.frequency(-200.0), 0.0);
        assert_eq!(c.clamp_count, 1);
    }

    #[test]
    fn sro_lanes_split_each_cycle() {
        let mut s = SroState::with_lanes(1000.0, 2, 15);
        let mut lanes = Vec::new();
        for _ in 0..40 {
            let t = s.time_to_edge(1000.0);
            assert!((t - 2.0 / 15.0 / 1000.0).abs() < 1e-12);
            s.fire();
            lanes.push(s.last_lane());
        }
        assert_eq!(lanes[..16], [0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 0]);
        assert!((s.divided_phase() - 40.0 / 15.0).abs() < 1e-12);
        s.advance(1000.0, 0.5e-3);
        assert!((s.divided_phase() - 40.0 / 15.0 - 0.25).abs() < 1e-12);
    }

    #[test]
    fn default_loop_matches_design() {
        for cfg in default_channels(Fidelity::Averaged).unwrap() {
            assert!(((cfg.derived_center_hz() - cfg.center_hz) / cfg.center_hz).abs() < 1e-9);
            assert!((cfg.derived_q() - 2.0).abs() < 1e-9);
            assert!((cfg.midband_gain() - 1.0).abs() < 1e-12);
        }
        let mut bad = ChannelConfig::new(1000.0, 2.0, Fidelity::Averaged).unwrap();
        bad.k2 *= 2.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn channel_file_roundtrip() {
        let mut chans = default_channels(Fidelity::Edge).unwrap();
        chans[3].sim_rate_hz = Some(5e6);
        chans[5].pd_lanes = 1;
        let text = channels_to_text(&chans);
        let back = channels_from_text(&text).unwrap();
        assert_eq!(back.len(), N_CHANNELS);
        for (a, b) in chans.iter().zip(&back) {
            assert!((a.k1 - b.k1).abs() / a.k1 < 1e-12);
            assert_eq!(a.sim_rate_hz, b.sim_rate_hz);
            assert_eq!(a.fidelity, b.fidelity);
            assert_eq!(a.pd_lanes, b.pd_lanes);
        }
        assert!(channels_from_text("[channel.0]\ncenter_hz=100\n").is_err());
    }

    #[test]
    fn vtc_zero_and_dc() {
        let cfg = VtcConfig::default();
        let z = vtc_convert_analog(&vec![0.0; 1000], &cfg);
        assert!(z.diff.iter().all(|&d| d == 0.0));
        assert_eq!(z.duty_p(10), z.duty_n(10));
        let dc = vtc_convert_analog(&vec![0.1; 5000], &cfg);
        assert!((dc.diff[4999] - 0.1).abs() < 1e-4);
        let sat = vtc_convert_analog(&[1.5, -2.0, 0.5], &cfg);
        assert_eq!(sat.saturations, 2);
    }

    #[test]
    fn vtc_harmonics_match_configured_distortion() {
        // 1 kHz at 256 kHz: 2^14 samples hold exactly 64 cycles
        let n = 1 << 14;
        let x: Vec<f64> = (0..2 * n)
            .map(|i| (2.0 * PI * 1000.0 * i as f64 / ANALOG_RATE as f64).sin())
            .collect();
        let out = vtc_convert_analog(&x, &VtcConfig::default());
        let mut buf: Vec<Complex<f64>> = out.diff[n..].iter().map(|&v| Complex::new(v, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        let bin = 64;
        let fund = buf[bin].norm();
        for (k, want) in [(2, -70.0), (3, -70.0)] {
            let db = 20.0 * (buf[k * bin].norm() / fund).log10();
            assert!((db - want).abs() < 1.0, "HD{k} = {db:.2} dB");
        }
    }

    #[test]
    fn pwm_lanes_realize_duty() {
        for d in [0.0, 0.13, 0.5, 0.77, 1.0] {
            assert!((pwm_lane_average(0.0, 1.0, d) - d).abs() < 1e-12);
            // a window shorter than one carrier period still averages
            // over the staggered lanes
            assert!((pwm_lane_average(0.31, 0.56, d) - d).abs() < 1.0 / 15.0 + 1e-12);
        }
    }

    #[test]
    fn averaged_rejects_dc() {
        let cfg = ChannelConfig::new(1000.0, 2.0, Fidelity::Averaged).unwrap();
        let out = bpf_channel(&VtcOutput::from_diff(vec![0.3; 64_000]), &cfg).unwrap();
        assert!(settled_mean(&out, 0.2) < 1e-6);
    }

    #[test]
    fn averaged_center_tone_gives_rectified_sine_mean() {
        let cfg = ChannelConfig::new(1000.0, 2.0, Fidelity::Averaged).unwrap();
        for a in [0.05, 0.2] {
            let out = bpf_channel(&analog_tone(1000.0, a, 0.05), &cfg).unwrap();
            let mean = settled_mean(&out, 0.02);
            let expect = cfg.midband_gain() * a * 2.0 / PI;
            assert!((mean / expect - 1.0).abs() < 0.01, "a={a}: {mean} vs {expect}");
        }
    }

    #[test]
    fn averaged_skirts() {
        let cfg = ChannelConfig::new(1000.0, 2.0, Fidelity::Averaged).unwrap();
        let mid = settled_mean(&bpf_channel(&analog_tone(1000.0, 0.2, 0.05), &cfg).unwrap(), 0.02);
        for f in [250.0, 4000.0] {
            let out = bpf_channel(&analog_tone(f, 0.2, 0.1), &cfg).unwrap();
            let db = 20.0 * (settled_mean(&out, 0.05) / mid).log10();
            assert!(db <= -11.0, "{f} Hz: {db:.2} dB");
        }
    }

    #[test]
    fn averaged_evenness() {
        let cfg = ChannelConfig::new(700.0, 2.0, Fidelity::Averaged).unwrap();
        let pos = analog_tone(650.0, 0.3, 0.03);
        let neg = VtcOutput::from_diff(pos.diff.iter().map(|v| -v).collect());
        let a = bpf_channel(&pos, &cfg).unwrap();
        let b = bpf_channel(&neg, &cfg).unwrap();
        for i in 0..a.len() {
            assert_eq!(a.rect(i), b.rect(i));
        }
    }

    #[test]
    fn edge_mode_tracks_averaged_mode() {
        let avg = ChannelConfig::new(1000.0, 2.0, Fidelity::Averaged).unwrap();
        let edge = ChannelConfig {
            fidelity: Fidelity::Edge,
            ..avg.clone()
        };
        let tone = analog_tone(1000.0, 0.25, 0.03);
        let a = settled_mean(&bpf_channel(&tone, &avg).unwrap(), 0.01);
        let out = bpf_channel(&tone, &edge).unwrap();
        let e = settled_mean(&out, 0.01);
        assert!((e / a - 1.0).abs() < 0.02, "edge {e} vs averaged {a}");
        assert_eq!(out.diagnostics.freq_clamps, 0);
        assert!(out.diagnostics.edges > 0);
    }

    #[test]
    fn lane_array_removes_sub_cycle_error_at_the_top_channel() {
        // the top channel sees only 64 single-phase comparisons per tone
        // period; the 15-lane array makes edge mode track the averaged loop
        let avg = ChannelConfig::new(8000.0, 2.0, Fidelity::Averaged).unwrap();
        let tone = analog_tone(8000.0, 0.25, 0.03);
        let a = settled_mean(&bpf_channel(&tone, &avg).unwrap(), 0.01);
        let lanes = ChannelConfig {
            fidelity: Fidelity::Edge,
            ..avg.clone()
        };
        let single = ChannelConfig { pd_lanes: 1, ..lanes.clone() };
        let e15 = settled_mean(&bpf_channel(&tone, &lanes).unwrap(), 0.01);
        let e1 = settled_mean(&bpf_channel(&tone, &single).unwrap(), 0.01);
        assert!((e15 / a - 1.0).abs() < 0.01, "15 lanes {e15} vs averaged {a}");
        assert!((e1 / a - 1.0).abs() > (e15 / a - 1.0).abs(), "single {e1}, lanes {e15}, averaged {a}");
    }

    #[test]
    fn edge_mode_zero_input_is_silent() {
        let cfg = ChannelConfig {
            fidelity: Fidelity::Edge,
            ..ChannelConfig::new(500.0, 2.0, Fidelity::Averaged).unwrap()
        };
        let out = bpf_channel(&VtcOutput::from_diff(vec![0.0; 2560]), &cfg).unwrap();
        assert!(out.up.iter().chain(&out.dn).all(|&v| v == 0.0));
    }

    #[test]
    fn overdrive_reports_instability() {
        let mut cfg = ChannelConfig::new(1000.0, 2.0, Fidelity::Averaged).unwrap();
        cfg.k_in = 200.0 * cfg.k1;
        match bpf_channel(&analog_tone(1000.0, 1.0, 0.02), &cfg) {
            Err(Error::Instability { k_in, .. }) => assert!(k_in > 0.0),
            other => panic!("expected instability, got {other:?}"),
        }
    }
}
