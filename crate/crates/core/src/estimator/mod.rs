//! Regression estimator mapping per-shell SH coefficients to NODDI parameters,
//! trained with q-space sampling augmentation and the sampling consistency loss.

mod adam;
mod loss;
mod mlp;
mod train;

pub use adam::{AdamState, DEFAULT_LEARNING_RATE};
pub use loss::{
    consistency_gradients, consistency_loss, loss_terms, output_gradients, LossMode, LossTerms,
    LossWeights, DEFAULT_MU,
};
pub use mlp::{Backbone, Mlp, MlpTrace};
pub use train::{
    train, train_backbone, EpochLog, TrainConfig, TrainedBackbone, TrainingLog,
    DEFAULT_BATCH_SIZE, DEFAULT_EPOCHS, DEFAULT_HIDDEN_WIDTHS, DEFAULT_MIN_RANDOM_COUNT,
};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::scheme::{b_values_match, MultiShellScheme};
use crate::shbasis::{num_coefficients, DwiSignal, ShFitter};

/// Minimum directions per shell accepted at prediction time.
pub const MIN_PREDICT_DIRECTIONS: usize = 6;

/// What the backbone consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputKind {
    /// Concatenated per-shell SH coefficients (scheme independent).
    ShCoefficients,
    /// Raw attenuations in acquisition order, zero-padded per shell to the
    /// training shell sizes (the scheme-bound baseline).
    RawPadded,
}

impl InputKind {
    pub fn code(self) -> u32 {
        match self {
            InputKind::ShCoefficients => 0,
            InputKind::RawPadded => 1,
        }
    }

    pub fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(InputKind::ShCoefficients),
            1 => Ok(InputKind::RawPadded),
            c => Err(Error::format(format!("unknown input kind code {c}"))),
        }
    }
}

/// Trained network plus what prediction needs to rebuild its inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorModel {
    backbone: Mlp,
    training_scheme: MultiShellScheme,
    sh_order: usize,
    lambda: f64,
    input: InputKind,
}

/// Input feature width for a scheme layout.
pub fn feature_width(input: InputKind, training_scheme: &MultiShellScheme, sh_order: usize) -> usize {
    match input {
        InputKind::ShCoefficients => training_scheme.num_shells() * num_coefficients(sh_order),
        InputKind::RawPadded => training_scheme.total_directions(),
    }
}

impl EstimatorModel {
    pub fn new(
        backbone: Mlp,
        training_scheme: MultiShellScheme,
        sh_order: usize,
        lambda: f64,
        input: InputKind,
    ) -> Result<Self> {
        let want = feature_width(input, &training_scheme, sh_order);
        if backbone.input_width() != want {
            return Err(Error::shape(format!(
                "backbone input width {} but features have width {want}",
                backbone.input_width()
            )));
        }
        if backbone.output_width() != 3 {
            return Err(Error::shape("backbone must output (v_ic, v_iso, od)"));
        }
        Ok(Self {
            backbone,
            training_scheme,
            sh_order,
            lambda,
            input,
        })
    }

    pub fn backbone(&self) -> &Mlp {
        &self.backbone
    }

    /// The uniform subsampled scheme used for the uniform training branch.
    pub fn training_scheme(&self) -> &MultiShellScheme {
        &self.training_scheme
    }

    pub fn b_values(&self) -> Vec<f64> {
        self.training_scheme.b_values()
    }

    pub fn sh_order(&self) -> usize {
        self.sh_order
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn input(&self) -> InputKind {
        self.input
    }

    /// Outputs for a feature batch (one column per sample).
    pub fn forward(&self, features: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.backbone.forward(features)
    }

    /// Builds a feature batch from voxel-major flat signals acquired on `scheme`.
    pub fn features(&self, signals: &[f64], scheme: &MultiShellScheme) -> Result<DMatrix<f64>> {
        let ndir = scheme.total_directions();
        if ndir == 0 || signals.len() % ndir != 0 {
            return Err(Error::shape(format!(
                "{} signal values is not a multiple of {ndir} directions",
                signals.len()
            )));
        }
        let nvox = signals.len() / ndir;
        let offsets = scheme.shell_offsets();
        let sizes = scheme.shell_sizes();
        let shells = self
            .training_scheme
            .shells()
            .iter()
            .map(|t| {
                scheme
                    .shell_index(t.b_value())
                    .ok_or(Error::MissingShell(t.b_value()))
            })
            .collect::<Result<Vec<_>>>()?;
        let width = self.backbone.input_width();
        let mut out = DMatrix::zeros(width, nvox);
        match self.input {
            InputKind::ShCoefficients => {
                if let Some(&s) = shells.iter().find(|&&s| sizes[s] < MIN_PREDICT_DIRECTIONS) {
                    return Err(Error::invalid(format!(
                        "shell b={} has {} directions; prediction needs at least {MIN_PREDICT_DIRECTIONS}",
                        scheme.shells()[s].b_value(),
                        sizes[s]
                    )));
                }
                let sub = MultiShellScheme::new(shells.iter().map(|&s| scheme.shells()[s].clone()).collect())?;
                let fitter = ShFitter::new(&sub, self.sh_order, self.lambda)?;
                let mut gathered = Vec::with_capacity(sub.total_directions());
                for (v, mut col) in out.column_iter_mut().enumerate() {
                    let voxel = &signals[v * ndir..(v + 1) * ndir];
                    gathered.clear();
                    for &s in &shells {
                        gathered.extend_from_slice(&voxel[offsets[s]..offsets[s] + sizes[s]]);
                    }
                    fitter.fit_flat_into(&gathered, col.as_mut_slice());
                }
            }
            InputKind::RawPadded => {
                let widths = self.training_scheme.shell_sizes();
                for (&s, &w) in shells.iter().zip(&widths) {
                    if sizes[s] > w {
                        return Err(Error::invalid(format!(
                            "raw-signal model takes at most {w} directions at b={}, got {}",
                            scheme.shells()[s].b_value(),
                            sizes[s]
                        )));
                    }
                }
                for (v, mut col) in out.column_iter_mut().enumerate() {
                    let voxel = &signals[v * ndir..(v + 1) * ndir];
                    let col = col.as_mut_slice();
                    let mut at = 0;
                    for (&s, &w) in shells.iter().zip(&widths) {
                        col[at..at + sizes[s]].copy_from_slice(&voxel[offsets[s]..offsets[s] + sizes[s]]);
                        at += w;
                    }
                }
            }
        }
        Ok(out)
    }

    /// Predicts `[v_ic, v_iso, od]` for every voxel of voxel-major flat signals.
    pub fn predict_many(&self, signals: &[f64], scheme: &MultiShellScheme) -> Result<Vec<[f64; 3]>> {
        let y = self.forward(&self.features(signals, scheme)?)?;
        Ok(y.column_iter().map(|c| [c[0], c[1], c[2]]).collect())
    }

    /// Predicts one voxel acquired on any scheme containing the trained shells.
    pub fn predict(&self, signal: &DwiSignal, scheme: &MultiShellScheme) -> Result<[f64; 3]> {
        if !signal.matches(scheme) {
            return Err(Error::shape("signal does not match the scheme"));
        }
        Ok(self.predict_many(&signal.flat(), scheme)?[0])
    }

    /// True when every trained b-value is present in `scheme`.
    pub fn accepts(&self, scheme: &MultiShellScheme) -> bool {
        self.training_scheme
            .b_values()
            .iter()
            .all(|b| scheme.b_values().iter().any(|s| b_values_match(*s, *b)))
    }
}
