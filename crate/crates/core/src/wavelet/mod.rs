//! Dual-tree complex wavelet transform (forward/inverse/adjoint), the Haar
//! baseline, and filter bank validation.

pub mod dtcwt;
pub mod filters;
pub mod haar;

pub use dtcwt::{
    complex_to_quad, dtcwt_forward, dtcwt_forward_adjoint, dtcwt_inverse, dtcwt_inverse_adjoint,
    quad_to_complex, Subbands, ORIENTATIONS_DEG,
};
pub use filters::{validate_filterbank, CheckResult, FilterBank, ValidationReport};
pub use haar::{haar_forward, haar_inverse};

/// Which wavelet a spectral block decomposes with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum WaveletKind {
    Dtcwt,
    Haar,
}

impl WaveletKind {
    /// Channel multiplier of the rearranged spectral stack relative to the
    /// block input: 16 for the redundant dual-tree transform, 4 for Haar.
    pub fn spectral_channel_factor(self) -> usize {
        match self {
            WaveletKind::Dtcwt => 16,
            WaveletKind::Haar => 4,
        }
    }
}
