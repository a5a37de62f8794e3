//! Shared fixtures for the criterion benches.

use tdkws_core::{synth, PcmClip};

/// One second of speech-like audio at the model rate.
pub fn speech_clip() -> PcmClip {
    let clip = synth::speech_like(1, 1.0, 16_000).expect("synthetic clip");
    tdkws_core::signal_io::to_model_rate(&clip).expect("resample")
}

/// 62 frames of mid-range NORM features.
pub fn norm_stream() -> Vec<[i16; 16]> {
    (0..62)
        .map(|t| std::array::from_fn(|ch| ((t * 37 + ch * 101) % 512) as i16 - 256))
        .collect()
}
