use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{rician_sample, NoddiModel, NoddiParams};
use crate::error::{Error, Result};
use crate::scheme::{apply_selection, GradientDirection, MultiShellScheme, SubsampleSelection};
use crate::shbasis::DwiSignal;

pub const MIN_PHANTOM_DIM: usize = 16;

const FIELD_COMPONENTS: usize = 5;
const FIELD_MAX_CYCLES: f64 = 2.0;
const CSF_BLOBS: usize = 3;

/// 2D grid of NODDI parameters with matching multi-shell signals.
///
/// Signals are stored voxel-major: voxel `v` owns
/// `signals[v * n_dirs .. (v + 1) * n_dirs]` in the scheme's shell order.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomDataset {
    height: usize,
    width: usize,
    mask: Vec<bool>,
    maps: [Vec<f64>; 3],
    orientations: Option<Vec<GradientDirection>>,
    signals: Vec<f64>,
    scheme: MultiShellScheme,
    noise_sigma: f64,
    seed: u64,
}

impl PhantomDataset {
    /// Assembles a dataset from stored planes, checking every invariant.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        height: usize,
        width: usize,
        mask: Vec<bool>,
        maps: [Vec<f64>; 3],
        signals: Vec<f64>,
        scheme: MultiShellScheme,
        noise_sigma: f64,
        seed: u64,
    ) -> Result<Self> {
        let n = height * width;
        if n == 0 {
            return Err(Error::shape("empty grid"));
        }
        if mask.len() != n || maps.iter().any(|m| m.len() != n) {
            return Err(Error::shape("mask and parameter planes must match the grid"));
        }
        if signals.len() != n * scheme.total_directions() {
            return Err(Error::shape("signal planes must match grid × directions"));
        }
        for (v, &inside) in mask.iter().enumerate() {
            if !inside && maps.iter().any(|m| m[v] != 0.0) {
                return Err(Error::format(format!("masked-out voxel {v} has non-zero parameters")));
            }
        }
        if !(noise_sigma >= 0.0) {
            return Err(Error::invalid("noise sigma must be >= 0"));
        }
        Ok(Self {
            height,
            width,
            mask,
            maps,
            orientations: None,
            signals,
            scheme,
            noise_sigma,
            seed,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_voxels(&self) -> usize {
        self.height * self.width
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// Row-major indices of foreground voxels.
    pub fn foreground(&self) -> Vec<usize> {
        (0..self.num_voxels()).filter(|&v| self.mask[v]).collect()
    }

    /// Planes for `v_ic`, `v_iso`, `od` (zero outside the mask).
    pub fn maps(&self) -> &[Vec<f64>; 3] {
        &self.maps
    }

    pub fn target(&self, voxel: usize) -> [f64; 3] {
        [self.maps[0][voxel], self.maps[1][voxel], self.maps[2][voxel]]
    }

    /// Mean orientations when the dataset was synthesized in-process.
    pub fn orientations(&self) -> Option<&[GradientDirection]> {
        self.orientations.as_deref()
    }

    /// Full parameters (with latents) of a foreground voxel, when known.
    pub fn params(&self, voxel: usize) -> Option<NoddiParams> {
        let mu = self.orientations.as_ref()?[voxel];
        if !self.mask[voxel] {
            return None;
        }
        let [v_ic, v_iso, od] = self.target(voxel);
        NoddiParams::new(v_ic, v_iso, od, mu).ok()
    }

    pub fn signals(&self) -> &[f64] {
        &self.signals
    }

    /// Flat, shell-ordered signal of one voxel.
    pub fn voxel_signal(&self, voxel: usize) -> &[f64] {
        let n = self.scheme.total_directions();
        &self.signals[voxel * n..(voxel + 1) * n]
    }

    pub fn dwi_signal(&self, voxel: usize) -> Result<DwiSignal> {
        DwiSignal::from_flat(self.voxel_signal(voxel), &self.scheme)
    }

    pub fn scheme(&self) -> &MultiShellScheme {
        &self.scheme
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Stacks phantoms acquired on the same scheme into one taller grid
    /// (rows of `parts[0]` first). Noise scale and seed come from the first part.
    pub fn vstack(parts: &[PhantomDataset]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::invalid("nothing to stack"))?;
        if parts.iter().any(|p| p.width != first.width || p.scheme != first.scheme) {
            return Err(Error::shape("stacked phantoms need equal widths and schemes"));
        }
        let cat = |f: &dyn Fn(&PhantomDataset) -> Vec<f64>| parts.iter().flat_map(f).collect::<Vec<f64>>();
        let orientations = parts
            .iter()
            .map(|p| p.orientations.clone())
            .collect::<Option<Vec<_>>>()
            .map(|v| v.concat());
        Ok(Self {
            height: parts.iter().map(|p| p.height).sum(),
            width: first.width,
            mask: parts.iter().flat_map(|p| p.mask.iter().copied()).collect(),
            maps: [
                cat(&|p| p.maps[0].clone()),
                cat(&|p| p.maps[1].clone()),
                cat(&|p| p.maps[2].clone()),
            ],
            orientations,
            signals: cat(&|p| p.signals.clone()),
            scheme: first.scheme.clone(),
            noise_sigma: first.noise_sigma,
            seed: first.seed,
        })
    }

    /// The same phantom keeping only the selected directions.
    pub fn restrict(&self, selection: &SubsampleSelection) -> Result<Self> {
        let scheme = apply_selection(&self.scheme, selection)?;
        let offsets = self.scheme.shell_offsets();
        let mut signals = Vec::with_capacity(self.num_voxels() * scheme.total_directions());
        for v in 0..self.num_voxels() {
            let sig = self.voxel_signal(v);
            for (s, idx) in selection.per_shell().iter().enumerate() {
                signals.extend(idx.iter().map(|&i| sig[offsets[s] + i]));
            }
        }
        Ok(Self {
            signals,
            scheme,
            ..self.clone()
        })
    }
}

/// Low-frequency random field on the grid, rescaled to [0, 1].
fn smooth_field<R: Rng>(height: usize, width: usize, rng: &mut R) -> Vec<f64> {
    let comps: Vec<[f64; 4]> = (0..FIELD_COMPONENTS)
        .map(|_| {
            [
                rng.random_range(-FIELD_MAX_CYCLES..FIELD_MAX_CYCLES),
                rng.random_range(-FIELD_MAX_CYCLES..FIELD_MAX_CYCLES),
                rng.random_range(0.0..2.0 * PI),
                rng.random_range(0.5..1.0),
            ]
        })
        .collect();
    let mut field = Vec::with_capacity(height * width);
    for r in 0..height {
        for c in 0..width {
            let (y, x) = (r as f64 / height as f64, c as f64 / width as f64);
            field.push(
                comps
                    .iter()
                    .map(|[kx, ky, ph, a]| a * (2.0 * PI * (kx * x + ky * y) + ph).cos())
                    .sum::<f64>(),
            );
        }
    }
    let lo = field.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = field.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1e-12);
    field.iter().map(|v| (v - lo) / span).collect()
}

/// Synthesizes a circular phantom with smooth parameter fields, a few
/// CSF-like high-`v_iso` blobs and Rician noise of scale `noise_sigma`.
///
/// Parameter fields and noise use separate streams of one seeded generator,
/// so `noise_sigma` changes only the noise.
pub fn generate_phantom(
    height: usize,
    width: usize,
    scheme: &MultiShellScheme,
    noise_sigma: f64,
    seed: u64,
) -> Result<PhantomDataset> {
    if height < MIN_PHANTOM_DIM || width < MIN_PHANTOM_DIM {
        return Err(Error::invalid(format!(
            "phantom must be at least {MIN_PHANTOM_DIM}x{MIN_PHANTOM_DIM}, got {height}x{width}"
        )));
    }
    if !(noise_sigma >= 0.0) || !noise_sigma.is_finite() {
        return Err(Error::invalid(format!("noise sigma must be >= 0, got {noise_sigma}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f_ic = smooth_field(height, width, &mut rng);
    let f_od = smooth_field(height, width, &mut rng);
    let f_iso = smooth_field(height, width, &mut rng);
    let f_theta = smooth_field(height, width, &mut rng);
    let f_phi = smooth_field(height, width, &mut rng);

    let n = height * width;
    let (cy, cx) = ((height as f64 - 1.0) / 2.0, (width as f64 - 1.0) / 2.0);
    let radius = 0.45 * height.min(width) as f64;
    let mask: Vec<bool> = (0..n)
        .map(|v| {
            let (r, c) = ((v / width) as f64, (v % width) as f64);
            (r - cy).powi(2) + (c - cx).powi(2) <= radius * radius
        })
        .collect();

    let blobs: Vec<[f64; 4]> = (0..CSF_BLOBS)
        .map(|_| {
            let ang = rng.random_range(0.0..2.0 * PI);
            let dist = rng.random_range(0.0..0.7) * radius;
            [
                cy + dist * ang.sin(),
                cx + dist * ang.cos(),
                rng.random_range(0.05..0.1) * height.min(width) as f64,
                rng.random_range(0.5..0.9),
            ]
        })
        .collect();

    let model = NoddiModel::default();
    let ndir = scheme.total_directions();
    let mut maps = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let mut orientations = vec![GradientDirection { x: 0.0, y: 0.0, z: 1.0 }; n];
    let mut signals = vec![0.0; n * ndir];
    let mut noise_rng = ChaCha8Rng::seed_from_u64(seed);
    noise_rng.set_stream(1);

    for v in (0..n).filter(|&v| mask[v]) {
        let (r, c) = ((v / width) as f64, (v % width) as f64);
        let csf: f64 = blobs
            .iter()
            .map(|[by, bx, br, amp]| amp * (-((r - by).powi(2) + (c - bx).powi(2)) / (2.0 * br * br)).exp())
            .sum();
        let v_ic = 0.1 + 0.8 * f_ic[v];
        let v_iso = (0.15 * f_iso[v] + csf).clamp(0.0, 1.0);
        let od = 0.05 + 0.9 * f_od[v];
        let theta = PI * f_theta[v];
        let phi = 2.0 * PI * f_phi[v];
        let mu = GradientDirection::normalized(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos())?;
        let params = NoddiParams::new(v_ic, v_iso, od, mu)?;
        maps[0][v] = v_ic;
        maps[1][v] = v_iso;
        maps[2][v] = od;
        orientations[v] = mu;
        let out = &mut signals[v * ndir..(v + 1) * ndir];
        model.signal_into(&params, scheme, out)?;
        if noise_sigma > 0.0 {
            for s in out.iter_mut() {
                *s = rician_sample(*s, noise_sigma, &mut noise_rng);
            }
        }
    }

    Ok(PhantomDataset {
        height,
        width,
        mask,
        maps,
        orientations: Some(orientations),
        signals,
        scheme: scheme.clone(),
        noise_sigma,
        seed,
    })
}
