//! Focal-sweep multispectral imaging with a diffractive lens.
//!
//! A binary-phase diffractive lens focuses each wavelength at a different
//! distance (`f(λ)·λ` is constant), so sweeping the lens along the optical
//! axis brings one spectral band after another into sharp focus on a plain
//! grayscale sensor. This crate models that acquisition end to end and
//! inverts it:
//!
//! - [`optics`] — lens phase, the chromatic focal law, the lens-position ↔
//!   focused-wavelength mapping, and geometric defocus PSFs
//! - [`forward`] — render the grayscale stack a sweep capture produces from
//!   a ground-truth spectral cube, with optional sensor noise
//! - [`preprocess`] — affine alignment, Sobel edge maps, and temporal
//!   differencing of the captured stack
//! - [`registration`] — oriented binary features, Hamming matching, and
//!   RANSAC homography for mapping a reference cube into camera coordinates
//! - [`losses`] / [`metrics`] — the composite L1 + spatio-spectral TV +
//!   SSIM objective with analytic gradients, plus PSNR/SSIM/L1 reporting
//! - [`reconstruct`] — a physics-based variational solver for the inverse
//!   problem, and [`net`] — a small gradient-checked encoder-decoder
//! - [`scene`] — deterministic synthetic scenes for end-to-end runs
//!
//! Containers live in [`cube`] and serialize through [`io`] as a one-line
//! JSON header followed by a raw little-endian `f32` payload.

pub mod cube;
pub mod error;
pub mod forward;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod net;
pub mod optics;
pub mod preprocess;
pub mod reconstruct;
pub mod registration;
pub mod scene;

mod linalg;

pub use cube::{BandGrid, GrayscaleImage, GrayscaleStack, SpectralCube};
pub use error::{Error, Result};
pub use forward::{NoiseModel, SensorResponse, SimOptions};
pub use losses::{LossWeights, RgbProjection, SsimParams};
pub use metrics::MetricReport;
pub use optics::{AcquisitionGeometry, FocusSchedule, LensConfig, PsfModel};
pub use preprocess::AffineTransform2D;
pub use reconstruct::SolverConfig;
pub use registration::Homography;
