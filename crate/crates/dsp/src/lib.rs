//! Processor kinds for streaming time-frequency pipelines.
//!
//! | kind | inputs | outputs |
//! |---|---|---|
//! | `wav_reader` | WAV file | `snd` (1-D) |
//! | `mic_input` | synthetic microphone | `snd` (1-D) |
//! | `resampler` | 1-D | `snd` (1-D, decimated) |
//! | `gammachirp_filterbank` | 1-D | `E` (energy map) |
//! | `structure_extractor` | 2-D | `T` (standardized structure score) |
//! | `ptn` | `E`, `T` | `E_T` (tonal energy), `E_R` (remainder) |
//!
//! [`builtin_registry`] registers all of them by kind name.

pub mod error;
pub mod gammachirp;
pub mod mic;
pub mod ola;
pub mod ptn;
pub mod resample;
pub mod signal;
pub mod structure;
pub mod wav;

use tfstream_core::{MergedChunk, MergedInput, ProcessError, Registry, SourceKey};

pub use error::DspError;
pub use gammachirp::{erb, erb_space, Cochleogram, FilterbankSpec, GammachirpFilterbank};
pub use mic::MicInput;
pub use ptn::{areal_average, ptn_tonal_energy, sigmoid, InvalidFill, Ptn, PtnStats};
pub use resample::{Decimator, Resampler};
pub use structure::{calibrate_structure, tract_feature, Direction, StructureExtractor, StructureSpec};
pub use wav::{read_wav, write_wav_f32, write_wav_i16, Wav, WavReader};

/// Adds every kind of this crate to `registry`.
pub fn register_builtin(registry: &mut Registry) {
    registry
        .register_source(WavReader::KIND, WavReader::from_params)
        .register_source(MicInput::KIND, MicInput::from_params)
        .register_processor(Resampler::KIND, Resampler::from_params)
        .register_processor(GammachirpFilterbank::KIND, GammachirpFilterbank::from_params)
        .register_processor(StructureExtractor::KIND, StructureExtractor::from_params)
        .register_processor(Ptn::KIND, Ptn::from_params);
}

pub fn builtin_registry() -> Registry {
    let mut r = Registry::new();
    register_builtin(&mut r);
    r
}

/// The only input of a single-input processor.
pub(crate) fn single_input<'a>(
    kind: &str,
    merged: &'a MergedChunk,
) -> Result<(&'a SourceKey, &'a MergedInput), ProcessError> {
    let mut it = merged.inputs.iter();
    match (it.next(), it.next()) {
        (Some(one), None) => Ok(one),
        _ => Err(ProcessError::kernel(
            kind,
            DspError::InvalidSpec(format!("expects exactly one input, got {}", merged.inputs.len())),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_lists_all_kinds() {
        let r = builtin_registry();
        let kinds: Vec<_> = r.kinds().collect();
        assert_eq!(kinds.len(), 6);
        assert!(r.is_source("wav_reader") && r.is_source("mic_input"));
        assert!(!r.is_source("ptn"));
    }
}
