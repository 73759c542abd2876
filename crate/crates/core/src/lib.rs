//! Scan-specific reconstruction of undersampled multi-coil cine MRI with
//! frequency-modulated Gaussian (Gabor) primitives.
//!
//! The image series is a sum of primitives whose geometry and complex
//! weights vary through shared low-rank temporal bases. Fitting minimizes a
//! k-space data term plus weight sparsity and temporal total variation with
//! analytic gradients and Adam.

pub mod analysis;
pub mod error;
pub mod fft;
pub mod forward;
pub mod gradcheck;
pub mod io;
pub mod metrics;
pub mod optim;
pub mod phantom;
pub mod primitive;
pub mod raster;
pub mod temporal;

pub use error::{Error, Result};
pub use num_complex::Complex64;
