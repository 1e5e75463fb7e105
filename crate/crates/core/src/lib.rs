//! Sampling-robust NODDI parameter estimation from diffusion MRI.
//!
//! Signals are projected onto a per-shell spherical-harmonic basis so that a
//! single regressor accepts any direction scheme that covers the trained
//! shells. Training combines random and uniform q-space subsampling with a
//! consistency penalty between the two branches.

pub mod error;
pub mod estimator;
pub mod evaluation;
pub mod io;
pub mod noddi;
pub mod quadrature;
pub mod scheme;
pub mod shbasis;

pub use error::{Error, Result};
pub use estimator::{train, EstimatorModel, InputKind, LossMode, TrainConfig};
pub use noddi::{generate_phantom, noddi_signal, NoddiModel, NoddiParams, PhantomDataset};
pub use scheme::{
    generate_uniform_scheme, random_subsample, uniform_subsample, GradientDirection, MultiShellScheme,
    Shell, SubsampleSelection,
};
pub use shbasis::{build_sh_basis, evaluate_sh, fit_sh, DwiSignal, ShCoefficients};
