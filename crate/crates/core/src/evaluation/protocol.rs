use std::fmt::Write as _;
use std::str::FromStr;

use super::metrics::{evaluate_maps, MetricReport, MetricSet, PARAM_NAMES};
use crate::error::{Error, Result};
use crate::estimator::{train, EstimatorModel, LossMode, TrainConfig};
use crate::noddi::PhantomDataset;
use crate::scheme::{
    locate_selection, random_subsample, uniform_subsample, SubsampleSelection, UNIT_TOL,
};

/// Total direction counts of the uniform sweep (split evenly across shells).
pub const SWEEP_TOTALS: [usize; 7] = [20, 30, 40, 50, 60, 70, 80];

/// Per-shell direction counts of the flexible-scheme protocol.
pub const FLEXIBLE_SCHEMES: [[usize; 2]; 10] = [
    [12, 17],
    [16, 22],
    [18, 27],
    [21, 28],
    [26, 23],
    [36, 13],
    [23, 31],
    [10, 51],
    [51, 10],
    [65, 11],
];

pub const CSV_HEADER: &str = "protocol,seed,total_dirs,split_b1000,split_b2000,param,psnr_db,ssim";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    /// Same scheme as the uniform training subsample.
    Ss,
    /// Random subsample with the training per-shell counts, one per seed.
    Rs,
    /// Uniform subsamples of increasing size.
    Sweep,
    /// Uniform subsamples with unequal per-shell counts.
    Flexible,
    /// Retrains under every loss mode and scores SS and RS.
    Ablation,
}

impl Protocol {
    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Ss => "ss",
            Protocol::Rs => "rs",
            Protocol::Sweep => "sweep",
            Protocol::Flexible => "flexible",
            Protocol::Ablation => "ablation",
        }
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ss" => Ok(Protocol::Ss),
            "rs" => Ok(Protocol::Rs),
            "sweep" => Ok(Protocol::Sweep),
            "flexible" => Ok(Protocol::Flexible),
            "ablation" => Ok(Protocol::Ablation),
            other => Err(Error::invalid(format!(
                "unknown protocol '{other}' (expected ss, rs, sweep, flexible or ablation)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub protocol: Protocol,
    pub seeds: Vec<u64>,
    /// Per-shell RS counts; defaults to the model's training counts.
    pub rs_counts: Option<Vec<usize>>,
    pub sweep_totals: Vec<usize>,
    pub flexible_schemes: Vec<Vec<usize>>,
    /// Base training configuration for the ablation (its mode and seed are overridden).
    pub ablation_config: Option<TrainConfig>,
}

impl ExperimentSpec {
    pub fn new(protocol: Protocol, seeds: Vec<u64>) -> Self {
        Self {
            protocol,
            seeds,
            rs_counts: None,
            sweep_totals: SWEEP_TOTALS.to_vec(),
            flexible_schemes: FLEXIBLE_SCHEMES.iter().map(|s| s.to_vec()).collect(),
            ablation_config: None,
        }
    }
}

/// One CSV line: metrics of one parameter for one test scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub protocol: String,
    pub seed: u64,
    pub counts: Vec<usize>,
    pub param: &'static str,
    pub psnr_db: f64,
    pub ssim: f64,
}

impl ReportRow {
    pub fn total_dirs(&self) -> usize {
        self.counts.iter().sum()
    }
}

fn rows_for(protocol: &str, seed: u64, counts: &[usize], m: &MetricSet) -> Vec<ReportRow> {
    PARAM_NAMES
        .iter()
        .enumerate()
        .map(|(p, name)| ReportRow {
            protocol: protocol.to_string(),
            seed,
            counts: counts.to_vec(),
            param: name,
            psnr_db: m.psnr[p],
            ssim: m.ssim[p],
        })
        .collect()
}

/// Predicted `[v_ic, v_iso, od]` maps from the selected subset of each
/// voxel's signal (zero outside the mask).
pub fn predict_maps(
    model: &EstimatorModel,
    dataset: &PhantomDataset,
    selection: &SubsampleSelection,
) -> Result<[Vec<f64>; 3]> {
    let scheme = dataset.scheme();
    selection.validate(scheme)?;
    let sub = crate::scheme::apply_selection(scheme, selection)?;
    let offsets = scheme.shell_offsets();
    let fg = dataset.foreground();
    let mut flat = Vec::with_capacity(fg.len() * sub.total_directions());
    for &v in &fg {
        let sig = dataset.voxel_signal(v);
        for (s, idx) in selection.per_shell().iter().enumerate() {
            flat.extend(idx.iter().map(|&i| sig[offsets[s] + i]));
        }
    }
    let preds = model.predict_many(&flat, &sub)?;
    let n = dataset.num_voxels();
    let mut maps = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    for (&v, p) in fg.iter().zip(&preds) {
        for k in 0..3 {
            maps[k][v] = p[k];
        }
    }
    Ok(maps)
}

/// Scores a model on one test subsample of the dataset.
pub fn evaluate_selection(
    model: &EstimatorModel,
    dataset: &PhantomDataset,
    selection: &SubsampleSelection,
) -> Result<MetricSet> {
    let maps = predict_maps(model, dataset, selection)?;
    evaluate_maps(dataset.maps(), &maps, dataset.height(), dataset.width(), dataset.mask())
}

/// Selection reproducing the model's training scheme inside the dataset scheme.
pub fn ss_selection(model: &EstimatorModel, dataset: &PhantomDataset) -> Result<SubsampleSelection> {
    locate_selection(dataset.scheme(), model.training_scheme(), UNIT_TOL)
}

/// Even split of `total` across `shells` (earlier shells take the remainder).
pub fn split_evenly(total: usize, shells: usize) -> Vec<usize> {
    (0..shells)
        .map(|s| total / shells + usize::from(s < total % shells))
        .collect()
}

/// Runs a test protocol and returns one row per (scheme, seed, parameter).
///
/// `model` is required for every protocol except the ablation, which trains
/// its own models from `spec.ablation_config` on `dataset` itself; use
/// [`run_ablation`] to train on a separate phantom.
pub fn run_protocol(
    spec: &ExperimentSpec,
    model: Option<&EstimatorModel>,
    dataset: &PhantomDataset,
) -> Result<Vec<ReportRow>> {
    if spec.seeds.is_empty() {
        return Err(Error::invalid("at least one seed is required"));
    }
    if spec.protocol == Protocol::Ablation {
        let base = spec
            .ablation_config
            .as_ref()
            .ok_or_else(|| Error::invalid("the ablation needs a training configuration"))?;
        return run_ablation(base, dataset, dataset, &spec.seeds, &spec.seeds);
    }
    let model = model.ok_or_else(|| Error::invalid("a trained model is required"))?;
    let scheme = dataset.scheme();
    let mut rows = Vec::new();
    match spec.protocol {
        Protocol::Ss => {
            let sel = ss_selection(model, dataset)?;
            let m = evaluate_selection(model, dataset, &sel)?;
            for &seed in &spec.seeds {
                rows.extend(rows_for("ss", seed, &sel.counts(), &m));
            }
        }
        Protocol::Rs => {
            let counts = spec
                .rs_counts
                .clone()
                .unwrap_or_else(|| model.training_scheme().shell_sizes());
            let ranges: Vec<_> = counts.iter().map(|&k| (k, k)).collect();
            for &seed in &spec.seeds {
                let sel = random_subsample(scheme, &ranges, seed)?;
                let m = evaluate_selection(model, dataset, &sel)?;
                rows.extend(rows_for("rs", seed, &counts, &m));
            }
        }
        Protocol::Sweep => {
            for &total in &spec.sweep_totals {
                let counts = split_evenly(total, scheme.num_shells());
                for &seed in &spec.seeds {
                    let sel = uniform_subsample(scheme, &counts, seed)?;
                    let m = evaluate_selection(model, dataset, &sel)?;
                    rows.extend(rows_for("sweep", seed, &counts, &m));
                }
            }
        }
        Protocol::Flexible => {
            for counts in &spec.flexible_schemes {
                for &seed in &spec.seeds {
                    let sel = uniform_subsample(scheme, counts, seed)?;
                    let m = evaluate_selection(model, dataset, &sel)?;
                    rows.extend(rows_for("flexible", seed, counts, &m));
                }
            }
        }
        Protocol::Ablation => unreachable!("handled above"),
    }
    Ok(rows)
}

/// Trains one model per (loss mode, training seed) on `train_data` and scores
/// it on `dataset` under SS and under RS averaged over `rs_seeds`. Protocol
/// labels are `ablation-<mode>-ss` and `ablation-<mode>-rs`; the seed column
/// holds the training seed.
pub fn run_ablation(
    base: &TrainConfig,
    train_data: &PhantomDataset,
    dataset: &PhantomDataset,
    train_seeds: &[u64],
    rs_seeds: &[u64],
) -> Result<Vec<ReportRow>> {
    if train_seeds.is_empty() || rs_seeds.is_empty() {
        return Err(Error::invalid("at least one seed is required"));
    }
    let mut rows = Vec::new();
    for mode in LossMode::ALL {
        for &seed in train_seeds {
            let cfg = TrainConfig {
                loss_mode: mode,
                seed,
                ..base.clone()
            };
            let (model, _) = train(train_data, &cfg)?;
            let sel = ss_selection(&model, dataset)?;
            let ss = evaluate_selection(&model, dataset, &sel)?;
            rows.extend(rows_for(&format!("ablation-{mode}-ss"), seed, &sel.counts(), &ss));
            let counts = sel.counts();
            let ranges: Vec<_> = counts.iter().map(|&k| (k, k)).collect();
            let mut sets = Vec::with_capacity(rs_seeds.len());
            for &rs in rs_seeds {
                let rsel = random_subsample(dataset.scheme(), &ranges, rs)?;
                sets.push(evaluate_selection(&model, dataset, &rsel)?);
            }
            let r = MetricReport::from_sets(&sets)?;
            let mean = MetricSet {
                psnr: r.psnr_mean,
                ssim: r.ssim_mean,
            };
            rows.extend(rows_for(&format!("ablation-{mode}-rs"), seed, &counts, &mean));
        }
    }
    Ok(rows)
}

fn fmt_float(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v}")
    }
}

/// CSV rendering with a fixed header; shells beyond the second are folded
/// into the total only.
pub fn rows_to_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let split = |i: usize| r.counts.get(i).map(|c| c.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.protocol,
            r.seed,
            r.total_dirs(),
            split(0),
            split(1),
            r.param,
            fmt_float(r.psnr_db),
            fmt_float(r.ssim)
        );
    }
    out
}

/// Mean ± sd of PSNR and SSIM per (protocol, split, parameter), in first-seen order.
pub fn summarize(rows: &[ReportRow]) -> Vec<(String, Vec<usize>, &'static str, f64, f64, f64, f64)> {
    let mut keys: Vec<(String, Vec<usize>, &'static str)> = Vec::new();
    for r in rows {
        let k = (r.protocol.clone(), r.counts.clone(), r.param);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(p, c, param)| {
            let sel: Vec<&ReportRow> = rows
                .iter()
                .filter(|r| r.protocol == p && r.counts == c && r.param == param)
                .collect();
            let ps: Vec<f64> = sel.iter().map(|r| r.psnr_db).collect();
            let ss: Vec<f64> = sel.iter().map(|r| r.ssim).collect();
            let (pm, psd) = super::metrics::mean_sd(&ps);
            let (sm, ssd) = super::metrics::mean_sd(&ss);
            (p, c, param, pm, psd, sm, ssd)
        })
        .collect()
}
