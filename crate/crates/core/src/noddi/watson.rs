//! Watson orientation distribution and its quadrature.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::quadrature::gauss_legendre_on;
use crate::scheme::GradientDirection;

/// Gauss–Legendre points in `cos θ` for Watson integrals.
pub const DEFAULT_POLAR_POINTS: usize = 64;
/// Trapezoid points in `φ` for Watson integrals.
pub const DEFAULT_AZIMUTH_POINTS: usize = 32;

/// Above this concentration, Kummer's function switches from its power
/// series to the large-argument expansion.
const KUMMER_SERIES_LIMIT: f64 = 200.0;
/// Polar integration is restricted to where the density exceeds e^-50 of its peak.
const DENSITY_CUTOFF: f64 = 50.0;

/// `ln M(1/2, 3/2, κ)` for `κ ≥ 0`.
pub fn ln_kummer_half_three_halves(kappa: f64) -> f64 {
    if kappa <= KUMMER_SERIES_LIMIT {
        // Σ κ^k / (k! (2k+1))
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut k = 0.0;
        loop {
            k += 1.0;
            term *= kappa / k;
            let contrib = term / (2.0 * k + 1.0);
            sum += contrib;
            if contrib <= 1e-16 * sum {
                break;
            }
        }
        sum.ln()
    } else {
        // e^κ / (2κ) · Σ (1/2)_k κ^-k, truncated at the smallest term
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut k = 0.0;
        loop {
            let next = term * (k + 0.5) / kappa;
            if next >= term || next <= 1e-17 * sum {
                break;
            }
            term = next;
            sum += term;
            k += 1.0;
        }
        kappa - (2.0 * kappa).ln() + sum.ln()
    }
}

/// Watson density `exp(κ(μᵀn)²) / (4π M(1/2, 3/2, κ))` per steradian.
pub fn watson_density(n: GradientDirection, mu: GradientDirection, kappa: f64) -> Result<f64> {
    if !(kappa >= 0.0) || !kappa.is_finite() {
        return Err(Error::invalid(format!("kappa must be finite and >= 0, got {kappa}")));
    }
    let t = mu.dot(n);
    Ok((kappa * t * t - ln_kummer_half_three_halves(kappa)).exp() / (4.0 * PI))
}

/// Product quadrature of the Watson distribution in a frame aligned with its
/// mean axis: Gauss–Legendre in `t = cos θ` over the upper hemisphere and a
/// periodic trapezoid rule in `φ`.
///
/// Weights are self-normalized so that any integrand constant over the
/// sphere is reproduced exactly.
#[derive(Debug, Clone)]
pub struct WatsonQuadrature {
    t: Vec<f64>,
    sin_t: Vec<f64>,
    weights: Vec<f64>,
    cos_phi: Vec<f64>,
    phi_weights: Vec<f64>,
}

impl WatsonQuadrature {
    pub fn new(kappa: f64, polar_points: usize, azimuth_points: usize) -> Result<Self> {
        if !(kappa >= 0.0) || !kappa.is_finite() {
            return Err(Error::invalid(format!("kappa must be finite and >= 0, got {kappa}")));
        }
        if polar_points == 0 || azimuth_points < 2 || azimuth_points % 2 != 0 {
            return Err(Error::invalid("need polar points > 0 and an even azimuth count"));
        }
        let t_lo = if kappa > DENSITY_CUTOFF {
            (1.0 - DENSITY_CUTOFF / kappa).sqrt()
        } else {
            0.0
        };
        let (t, w) = gauss_legendre_on(polar_points, t_lo, 1.0);
        let mut weights: Vec<f64> = t
            .iter()
            .zip(&w)
            .map(|(t, w)| w * (kappa * (t * t - 1.0)).exp())
            .collect();
        let total: f64 = weights.iter().sum();
        for v in &mut weights {
            *v /= total;
        }
        // cos φ is even, so the periodic rule folds onto [0, π]
        let half = azimuth_points / 2;
        let cos_phi = (0..=half)
            .map(|j| (2.0 * PI * j as f64 / azimuth_points as f64).cos())
            .collect();
        let phi_weights = (0..=half)
            .map(|j| {
                let mult = if j == 0 || j == half { 1.0 } else { 2.0 };
                mult / azimuth_points as f64
            })
            .collect();
        Ok(Self {
            sin_t: t.iter().map(|t| (1.0 - t * t).max(0.0).sqrt()).collect(),
            t,
            weights,
            cos_phi,
            phi_weights,
        })
    }

    pub fn with_defaults(kappa: f64) -> Result<Self> {
        Self::new(kappa, DEFAULT_POLAR_POINTS, DEFAULT_AZIMUTH_POINTS)
    }

    /// Watson average of `(tᵀ μ)²`, the largest scatter-matrix eigenvalue.
    pub fn mean_axial_cos2(&self) -> f64 {
        self.t.iter().zip(&self.weights).map(|(t, w)| w * t * t).sum()
    }

    /// Watson average of `f(n·g)` for a direction with components
    /// `parallel = g·μ` and `perpendicular = |g - (g·μ)μ|`.
    pub fn average<F: Fn(f64) -> f64>(&self, parallel: f64, perpendicular: f64, f: F) -> f64 {
        let mut acc = 0.0;
        for ((t, s), w) in self.t.iter().zip(&self.sin_t).zip(&self.weights) {
            let axial = parallel * t;
            let radial = perpendicular * s;
            let mut ring = 0.0;
            for (c, pw) in self.cos_phi.iter().zip(&self.phi_weights) {
                ring += pw * f(axial + radial * c);
            }
            acc += w * ring;
        }
        acc
    }
}
