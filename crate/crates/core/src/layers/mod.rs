//! Feedforward and gated convolution layers with optional speaker scaling
//! and bias, and the per-speaker component sets that feed them.

mod components;
mod feedforward;
mod gated;
mod session;

pub use components::{
    strip_speaker_components, BiasForm, HostComponents, HostLayer, Modulation, ResolvedVectors,
    ScaleForm, SpeakerComponentSet, SpeakerId, SpeakerInit,
};
pub use feedforward::{sa_ff_forward, Activation, FeedforwardLayer};
pub use gated::{gated_conv_forward, GateModulation, GatedConvLayer, UnitKind};
pub use session::{finite_diff_check_session, Session};
