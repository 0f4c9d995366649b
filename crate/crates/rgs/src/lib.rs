//! Relightable 3D Gaussian splatting.
//!
//! A scene is a set of anisotropic 3D Gaussians that carry, besides the
//! usual geometry and opacity, a shading normal and a simplified Disney
//! BRDF (albedo, roughness, metallic), plus one global spherical-harmonic
//! lighting environment (bands 0..3, 16 coefficients per color channel).
//!
//! The crate provides the full pipeline:
//!
//! * [`splat`]: differentiable tile rasterization of every per-primitive
//!   attribute (color, shaded color, normal, albedo, roughness, metallic,
//!   depth, accumulated alpha) with analytic gradients,
//! * [`shading`]: per-primitive physically based shading against SH
//!   lighting via deterministic hemisphere quadrature,
//! * [`fit`]: per-scene gradient descent (Adam) that recovers geometry,
//!   materials and lighting from posed images,
//! * [`metrics`]: PSNR / SSIM / Chamfer / F-score,
//! * [`io`]: the RGSA asset format plus PFM / HDR / PNG rasters.
//!
//! Everything is computed in `f64` and is bit-deterministic for a fixed
//! seed, including under `--workers`-style thread-count changes: parallel
//! loops produce per-item results that are reduced in a fixed order.

pub mod brdf;
pub mod camera;
pub mod dataset;
pub mod fit;
pub mod gaussian;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod raster;
pub mod sh;
pub mod shading;
pub mod splat;
pub mod synth;

pub use camera::Camera;
pub use gaussian::{ActivatedGaussian, GaussianCloud, RelightableGaussian};
pub use io::SceneAsset;
pub use raster::{Raster, RenderOutput};
pub use sh::{EnvironmentMap, SHLighting};
pub use splat::{GradientBuffer, RasterSettings, ScreenGaussian};

/// Crate-wide error type.
///
/// Everything that can go wrong maps to one of three process exit codes
/// (see [`Error::exit_code`]): usage errors (2), unreadable or malformed
/// input files (3), numerical failures (4).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("usage: {0}")]
    Usage(String),

    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: bad magic {found:?}, expected {expected:?}")]
    BadMagic {
        path: std::path::PathBuf,
        found: [u8; 4],
        expected: [u8; 4],
    },

    #[error("{path}: unsupported version {found}, this build reads version {supported}")]
    UnsupportedVersion {
        path: std::path::PathBuf,
        found: u32,
        supported: u32,
    },

    #[error("{path}: schema mismatch: {detail}")]
    SchemaMismatch {
        path: std::path::PathBuf,
        detail: String,
    },

    #[error("{path}: truncated: expected {expected} bytes, found {actual}")]
    Truncated {
        path: std::path::PathBuf,
        expected: u64,
        actual: u64,
    },

    /// Syntactically invalid content in a text or raster file.
    #[error("{path}: malformed {format}: {detail}")]
    Malformed {
        path: std::path::PathBuf,
        format: &'static str,
        detail: String,
    },

    /// Inputs that are individually valid but inconsistent with each other
    /// (resolution mismatches, wrong channel counts, wrong vector lengths).
    #[error("mismatch: {0}")]
    Mismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// Degenerate geometry or parameters: near-zero quaternions, covariance
    /// condition numbers beyond 1e12, empty clouds, zero-length normals.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// A numerical procedure failed to produce a usable result.
    #[error("numerical failure: {0}")]
    Numeric(String),
}

impl Error {
    /// Process exit code for this error: 2 usage, 3 bad input file,
    /// 4 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 2,
            Error::Io { .. }
            | Error::BadMagic { .. }
            | Error::UnsupportedVersion { .. }
            | Error::SchemaMismatch { .. }
            | Error::Truncated { .. }
            | Error::Malformed { .. }
            | Error::Mismatch(_) => 3,
            Error::NonFinite(_) | Error::Degenerate(_) | Error::Numeric(_) => 4,
        }
    }

    /// Wrap a [`std::io::Error`] with the path it occurred on.
    pub fn io(path: impl Into<std::path::PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
