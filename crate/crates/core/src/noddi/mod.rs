//! Three-compartment NODDI forward model and synthetic phantoms.

mod phantom;
mod watson;

pub use phantom::{generate_phantom, PhantomDataset, MIN_PHANTOM_DIM};
pub use watson::{
    ln_kummer_half_three_halves, watson_density, WatsonQuadrature, DEFAULT_AZIMUTH_POINTS,
    DEFAULT_POLAR_POINTS,
};

use std::f64::consts::FRAC_PI_2;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::scheme::{GradientDirection, MultiShellScheme};
use crate::shbasis::DwiSignal;

/// Intrinsic parallel diffusivity, mm²/s.
pub const D_PARALLEL: f64 = 1.7e-3;
/// Isotropic (free water) diffusivity, mm²/s.
pub const D_ISO: f64 = 3.0e-3;
/// Smallest orientation dispersion index accepted when building parameters from OD.
pub const MIN_OD: f64 = 1e-3;

/// `od = (2/π)·arctan(1/κ)`.
pub fn od_from_kappa(kappa: f64) -> Result<f64> {
    if !(kappa >= 0.0) || kappa.is_nan() {
        return Err(Error::invalid(format!("kappa must be >= 0, got {kappa}")));
    }
    Ok((1.0 / kappa).atan() / FRAC_PI_2)
}

/// `κ = 1/tan(π·od/2)`; od = 1 maps to κ = 0 exactly.
pub fn kappa_from_od(od: f64) -> Result<f64> {
    if od == 0.0 {
        return Err(Error::invalid("od = 0 corresponds to infinite kappa; use od >= 1e-3"));
    }
    if !(od > 0.0 && od <= 1.0) {
        return Err(Error::invalid(format!("od must lie in (0, 1], got {od}")));
    }
    if od == 1.0 {
        return Ok(0.0);
    }
    Ok(1.0 / (od * FRAC_PI_2).tan())
}

/// Target triple plus the orientation latents used only for synthesis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoddiParams {
    v_ic: f64,
    v_iso: f64,
    od: f64,
    mu: GradientDirection,
    kappa: f64,
}

fn check_fraction(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::invalid(format!("{name} must lie in [0, 1], got {v}")));
    }
    Ok(())
}

impl NoddiParams {
    pub fn new(v_ic: f64, v_iso: f64, od: f64, mu: GradientDirection) -> Result<Self> {
        check_fraction("v_ic", v_ic)?;
        check_fraction("v_iso", v_iso)?;
        if od < MIN_OD {
            return Err(Error::invalid(format!("od must be >= {MIN_OD}, got {od}")));
        }
        let kappa = kappa_from_od(od)?;
        Ok(Self { v_ic, v_iso, od, mu, kappa })
    }

    /// Parameters from a concentration; allows the near-zero dispersion limit.
    pub fn from_kappa(v_ic: f64, v_iso: f64, kappa: f64, mu: GradientDirection) -> Result<Self> {
        check_fraction("v_ic", v_ic)?;
        check_fraction("v_iso", v_iso)?;
        if !kappa.is_finite() {
            return Err(Error::invalid("kappa must be finite"));
        }
        let od = od_from_kappa(kappa)?;
        Ok(Self { v_ic, v_iso, od, mu, kappa })
    }

    pub fn v_ic(&self) -> f64 {
        self.v_ic
    }

    pub fn v_iso(&self) -> f64 {
        self.v_iso
    }

    pub fn od(&self) -> f64 {
        self.od
    }

    pub fn mu(&self) -> GradientDirection {
        self.mu
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// `[v_ic, v_iso, od]`.
    pub fn triple(&self) -> [f64; 3] {
        [self.v_ic, self.v_iso, self.od]
    }
}

/// Forward model with its diffusivities and quadrature resolution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoddiModel {
    pub d_parallel: f64,
    pub d_iso: f64,
    pub polar_points: usize,
    pub azimuth_points: usize,
}

impl Default for NoddiModel {
    fn default() -> Self {
        Self {
            d_parallel: D_PARALLEL,
            d_iso: D_ISO,
            polar_points: DEFAULT_POLAR_POINTS,
            azimuth_points: DEFAULT_AZIMUTH_POINTS,
        }
    }
}

impl NoddiModel {
    /// Signal attenuation for one voxel on every direction of `scheme`.
    pub fn signal(&self, params: &NoddiParams, scheme: &MultiShellScheme) -> Result<DwiSignal> {
        let mut flat = vec![0.0; scheme.total_directions()];
        self.signal_into(params, scheme, &mut flat)?;
        DwiSignal::from_flat(&flat, scheme)
    }

    /// Writes the flat, shell-ordered attenuations into `out`.
    pub fn signal_into(&self, params: &NoddiParams, scheme: &MultiShellScheme, out: &mut [f64]) -> Result<()> {
        if out.len() != scheme.total_directions() {
            return Err(Error::shape("output length must equal the scheme's direction count"));
        }
        let quad = WatsonQuadrature::new(params.kappa, self.polar_points, self.azimuth_points)?;
        let tau = quad.mean_axial_cos2();
        let d_perp = self.d_parallel * (1.0 - params.v_ic);
        let mut k = 0;
        for shell in scheme.shells() {
            let b = shell.b_value();
            let iso = (-b * self.d_iso).exp();
            let stick = b * self.d_parallel;
            for g in shell.directions() {
                let parallel = g.dot(params.mu);
                let perpendicular = (1.0 - parallel * parallel).max(0.0).sqrt();
                let a_ic = quad.average(parallel, perpendicular, |c| (-stick * c * c).exp());
                // ⟨(gᵀn)²⟩ from the scatter-matrix eigenvalues (τ, (1-τ)/2, (1-τ)/2)
                let mean_cos2 = 0.5 * (1.0 - tau) + (tau - 0.5 * (1.0 - tau)) * parallel * parallel;
                let a_ec = (-b * (d_perp + (self.d_parallel - d_perp) * mean_cos2)).exp();
                let tissue = params.v_ic * a_ic + (1.0 - params.v_ic) * a_ec;
                out[k] = (1.0 - params.v_iso) * tissue + params.v_iso * iso;
                k += 1;
            }
        }
        Ok(())
    }
}

/// Normalized attenuation on every direction of `scheme` using the default model.
pub fn noddi_signal(params: &NoddiParams, scheme: &MultiShellScheme) -> Result<DwiSignal> {
    NoddiModel::default().signal(params, scheme)
}

/// Magnitude of a complex Gaussian perturbation of scale `sigma` around `value`.
pub fn rician_sample<R: Rng + ?Sized>(value: f64, sigma: f64, rng: &mut R) -> f64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    ((value + sigma * re).powi(2) + (sigma * im).powi(2)).sqrt()
}
