//! EEG epochs, scalp-grid montages and the 3D spatio-temporal layout fed
//! to the network, plus windowing, channel selection and synthetic data.

mod epochs;
mod montage;
mod synth;

pub use epochs::{
    map_to_3d, select_channels, slide_windows, windows_per_trial, ChannelScheme, EpochSet, Grid3D, Samples,
};
pub use montage::{Montage, BCIC2A_CHANNELS, OPENBMI_CHANNELS};
pub use synth::{hemisphere, synth_generate, Hemisphere, SynthConfig};

/// Window step as a fraction of the window length for intra-subject runs.
pub const INTRA_STEP_FRACTION: f64 = 0.06;
/// Window step as a fraction of the window length for inter-subject runs.
pub const INTER_STEP_FRACTION: f64 = 0.5;

/// `round(fraction * window)`, at least one sample.
pub fn step_for(window: usize, fraction: f64) -> usize {
    ((fraction * window as f64).round() as usize).max(1)
}
