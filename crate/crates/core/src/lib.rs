pub mod analysis;
pub mod channel;
pub mod constellation;
pub mod detector;
pub mod diff_codec;
pub mod ekf;
pub mod error;
pub mod harness;
pub mod oracle;
pub mod phase;
pub mod phase_noise;
pub mod selftest;
pub mod specfun;

pub use channel::{ChannelRealization, NoiseMode, ReceivedBlock};
pub use constellation::{AmplitudeClass, Constellation};
pub use error::{Error, Result};
pub use phase_noise::{OscMode, PhaseNoiseConfig, PhaseTrajectory};
