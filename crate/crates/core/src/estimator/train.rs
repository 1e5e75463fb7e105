use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{AdamState, DEFAULT_LEARNING_RATE};
use super::loss::{consistency_gradients, LossMode, LossTerms, DEFAULT_MU};
use super::mlp::{Backbone, Mlp};
use super::{feature_width, EstimatorModel, InputKind};
use crate::error::{Error, Result};
use crate::noddi::PhantomDataset;
use crate::scheme::{
    apply_selection, random_selection_with, uniform_subsample, validate_ranges, MultiShellScheme,
    SubsampleSelection,
};
use crate::shbasis::{num_coefficients, ShFitter, SubsetFitter, DEFAULT_LAMBDA, DEFAULT_ORDER};

pub const DEFAULT_BATCH_SIZE: usize = 256;
pub const DEFAULT_EPOCHS: usize = 200;
pub const DEFAULT_HIDDEN_WIDTHS: [usize; 3] = [256, 256, 128];
/// Lower end of the default random-count range per shell.
pub const DEFAULT_MIN_RANDOM_COUNT: usize = 10;

// RNG streams derived from the config seed
const STREAM_INIT: u64 = 3;
const STREAM_SAMPLING: u64 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Directions kept per shell by the fixed uniform subsample.
    pub uniform_counts: Vec<usize>,
    /// Inclusive per-shell count ranges for random subsampling; `None` means
    /// `[min(10, n), n]` for a shell of `n` directions.
    pub random_ranges: Option<Vec<(usize, usize)>>,
    pub mu: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub loss_mode: LossMode,
    pub hidden_widths: Vec<usize>,
    pub sh_order: usize,
    pub lambda: f64,
    pub input: InputKind,
}

impl TrainConfig {
    pub fn new(uniform_counts: Vec<usize>) -> Self {
        Self {
            uniform_counts,
            random_ranges: None,
            mu: DEFAULT_MU,
            learning_rate: DEFAULT_LEARNING_RATE,
            batch_size: DEFAULT_BATCH_SIZE,
            epochs: DEFAULT_EPOCHS,
            seed: 0,
            loss_mode: LossMode::Consistency,
            hidden_widths: DEFAULT_HIDDEN_WIDTHS.to_vec(),
            sh_order: DEFAULT_ORDER,
            lambda: DEFAULT_LAMBDA,
            input: InputKind::ShCoefficients,
        }
    }

    /// Conventional fixed-scheme baseline: raw signals, uniform branch only.
    pub fn raw_baseline(uniform_counts: Vec<usize>) -> Self {
        let ranges = uniform_counts.iter().map(|&k| (k, k)).collect();
        Self {
            random_ranges: Some(ranges),
            loss_mode: LossMode::Uniform,
            input: InputKind::RawPadded,
            ..Self::new(uniform_counts)
        }
    }

    /// Random-count ranges resolved against a scheme.
    pub fn resolved_ranges(&self, scheme: &MultiShellScheme) -> Vec<(usize, usize)> {
        match &self.random_ranges {
            Some(r) => r.clone(),
            None => scheme
                .shell_sizes()
                .iter()
                .map(|&n| (DEFAULT_MIN_RANDOM_COUNT.min(n), n))
                .collect(),
        }
    }

    pub fn validate(&self, scheme: &MultiShellScheme) -> Result<()> {
        if !(self.mu >= 0.0) || !self.mu.is_finite() {
            return Err(Error::invalid(format!("mu must be >= 0, got {}", self.mu)));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid(format!("learning rate must be > 0, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::invalid("batch size and epochs must be positive"));
        }
        if self.hidden_widths.contains(&0) {
            return Err(Error::invalid("hidden widths must be positive"));
        }
        if !(self.lambda >= 0.0) || self.sh_order % 2 != 0 {
            return Err(Error::invalid("lambda must be >= 0 and the SH order even"));
        }
        if self.uniform_counts.len() != scheme.num_shells() {
            return Err(Error::invalid(format!(
                "{} uniform counts for {} shells",
                self.uniform_counts.len(),
                scheme.num_shells()
            )));
        }
        for (k, n) in self.uniform_counts.iter().zip(scheme.shell_sizes()) {
            if *k == 0 || *k > n {
                return Err(Error::invalid(format!("cannot keep {k} of {n} directions")));
            }
        }
        let ranges = self.resolved_ranges(scheme);
        validate_ranges(scheme, &ranges)?;
        if self.input == InputKind::RawPadded {
            for ((_, hi), k) in ranges.iter().zip(&self.uniform_counts) {
                if hi > k {
                    return Err(Error::invalid(format!(
                        "raw-signal input holds {k} directions per shell; random range reaches {hi}"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Weighted objective of the configured loss mode.
    pub loss: f64,
    pub terms: LossTerms,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
}

/// A trained backbone with the input normalization it was trained under.
#[derive(Debug, Clone)]
pub struct TrainedBackbone<B> {
    pub backbone: B,
    pub feature_shift: Vec<f64>,
    pub feature_scale: Vec<f64>,
    pub uniform_selection: SubsampleSelection,
    pub training_scheme: MultiShellScheme,
    pub log: TrainingLog,
}

struct BranchSource<'a> {
    dataset: &'a PhantomDataset,
    input: InputKind,
    offsets: Vec<usize>,
    sizes: Vec<usize>,
    widths: Vec<usize>,
    subset: Option<SubsetFitter>,
    ncoef: usize,
}

impl BranchSource<'_> {
    fn fill(&self, voxel: usize, selection: &SubsampleSelection, out: &mut [f64]) -> Result<()> {
        let signal = self.dataset.voxel_signal(voxel);
        match self.input {
            InputKind::ShCoefficients => {
                let fitter = self.subset.as_ref().expect("SH input has a subset fitter");
                for (s, idx) in selection.per_shell().iter().enumerate() {
                    let shell = &signal[self.offsets[s]..self.offsets[s] + self.sizes[s]];
                    fitter.fit_subset(s, idx, shell, &mut out[s * self.ncoef..(s + 1) * self.ncoef])?;
                }
            }
            InputKind::RawPadded => {
                out.fill(0.0);
                let mut at = 0;
                for (s, idx) in selection.per_shell().iter().enumerate() {
                    for (k, &i) in idx.iter().enumerate() {
                        out[at + k] = signal[self.offsets[s] + i];
                    }
                    at += self.widths[s];
                }
            }
        }
        Ok(())
    }
}

/// Trains any backbone on a phantom with sampling augmentation.
///
/// Every iteration and every sample draws a fresh random subset (count and
/// directions both vary) while the uniform subset stays fixed; both inputs
/// pass through the same backbone and are combined per the loss mode.
pub fn train_backbone<B: Backbone>(
    mut backbone: B,
    dataset: &PhantomDataset,
    config: &TrainConfig,
) -> Result<TrainedBackbone<B>> {
    let scheme = dataset.scheme();
    config.validate(scheme)?;
    let fg = dataset.foreground();
    if fg.is_empty() {
        return Err(Error::invalid("dataset has no foreground voxels"));
    }
    let uniform_selection = uniform_subsample(scheme, &config.uniform_counts, config.seed)?;
    let training_scheme = apply_selection(scheme, &uniform_selection)?;
    let width = feature_width(config.input, &training_scheme, config.sh_order);
    if backbone.input_width() != width || backbone.output_width() != 3 {
        return Err(Error::shape(format!(
            "backbone is {}→{}, training needs {width}→3",
            backbone.input_width(),
            backbone.output_width()
        )));
    }

    let source = BranchSource {
        dataset,
        input: config.input,
        offsets: scheme.shell_offsets(),
        sizes: scheme.shell_sizes(),
        widths: config.uniform_counts.clone(),
        subset: match config.input {
            InputKind::ShCoefficients => Some(SubsetFitter::new(scheme, config.sh_order, config.lambda)?),
            InputKind::RawPadded => None,
        },
        ncoef: num_coefficients(config.sh_order),
    };

    // uniform-branch features are fixed for the whole run
    let mut uniform = DMatrix::zeros(width, fg.len());
    match config.input {
        InputKind::ShCoefficients => {
            let fitter = ShFitter::new(&training_scheme, config.sh_order, config.lambda)?;
            let mut gathered = Vec::with_capacity(training_scheme.total_directions());
            for (c, &v) in fg.iter().enumerate() {
                let signal = dataset.voxel_signal(v);
                gathered.clear();
                for (s, idx) in uniform_selection.per_shell().iter().enumerate() {
                    gathered.extend(idx.iter().map(|&i| signal[source.offsets[s] + i]));
                }
                fitter.fit_flat_into(&gathered, uniform.column_mut(c).as_mut_slice());
            }
        }
        InputKind::RawPadded => {
            for (c, &v) in fg.iter().enumerate() {
                source.fill(v, &uniform_selection, uniform.column_mut(c).as_mut_slice())?;
            }
        }
    }
    let targets = DMatrix::from_fn(3, fg.len(), |r, c| dataset.target(fg[c])[r]);

    let n = fg.len() as f64;
    let feature_shift: Vec<f64> = uniform.row_iter().map(|r| r.sum() / n).collect();
    let feature_scale: Vec<f64> = uniform
        .row_iter()
        .zip(&feature_shift)
        .map(|(r, m)| {
            let sd = (r.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt();
            if sd > 1e-12 {
                sd
            } else {
                1.0
            }
        })
        .collect();
    let normalize = |m: &mut DMatrix<f64>| {
        for mut col in m.column_iter_mut() {
            for ((x, s), d) in col.iter_mut().zip(&feature_shift).zip(&feature_scale) {
                *x = (*x - s) / d;
            }
        }
    };
    normalize(&mut uniform);

    let weights = config.loss_mode.weights(config.mu);
    let ranges = config.resolved_ranges(scheme);
    let sizes = scheme.shell_sizes();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(STREAM_SAMPLING);
    let mut adam = AdamState::new(backbone.params().len());
    let mut order: Vec<usize> = (0..fg.len()).collect();
    let mut log = TrainingLog::default();

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut sums = LossTerms::default();
        for batch in order.chunks(config.batch_size) {
            let mut xr = DMatrix::zeros(width, batch.len());
            let xu = DMatrix::from_fn(width, batch.len(), |r, c| uniform[(r, batch[c])]);
            let y = DMatrix::from_fn(3, batch.len(), |r, c| targets[(r, batch[c])]);
            for (c, &i) in batch.iter().enumerate() {
                let sel = random_selection_with(&sizes, &ranges, &mut rng);
                source.fill(fg[i], &sel, xr.column_mut(c).as_mut_slice())?;
            }
            normalize(&mut xr);
            let (terms, grads) = consistency_gradients(&backbone, &xr, &xu, &y, weights)
                .map_err(|e| Error::Numerical(format!("epoch {epoch}: {e}")))?;
            adam.step(backbone.params_mut(), &grads, config.learning_rate)?;
            let b = batch.len() as f64;
            sums.l_r += terms.l_r * b;
            sums.l_u += terms.l_u * b;
            sums.l_ru += terms.l_ru * b;
        }
        let terms = LossTerms {
            l_r: sums.l_r / n,
            l_u: sums.l_u / n,
            l_ru: sums.l_ru / n,
        };
        let loss = terms.combine(weights);
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("training loss became {loss} at epoch {epoch}")));
        }
        log::debug!("epoch {epoch}: loss {loss:.6e}");
        log.epochs.push(EpochLog { epoch, loss, terms });
    }

    Ok(TrainedBackbone {
        backbone,
        feature_shift,
        feature_scale,
        uniform_selection,
        training_scheme,
        log,
    })
}

/// Trains the default fully connected estimator and folds the input
/// normalization into its first layer.
pub fn train(dataset: &PhantomDataset, config: &TrainConfig) -> Result<(EstimatorModel, TrainingLog)> {
    config.validate(dataset.scheme())?;
    let width = match config.input {
        InputKind::ShCoefficients => config.uniform_counts.len() * num_coefficients(config.sh_order),
        InputKind::RawPadded => config.uniform_counts.iter().sum(),
    };
    let mut dims = vec![width];
    dims.extend_from_slice(&config.hidden_widths);
    dims.push(3);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(STREAM_INIT);
    let mlp = Mlp::random(&dims, &mut rng)?;
    let trained = train_backbone(mlp, dataset, config)?;
    let mut mlp = trained.backbone;
    mlp.fold_input_normalization(&trained.feature_shift, &trained.feature_scale)?;
    let model = EstimatorModel::new(mlp, trained.training_scheme, config.sh_order, config.lambda, config.input)?;
    Ok((model, trained.log))
}
