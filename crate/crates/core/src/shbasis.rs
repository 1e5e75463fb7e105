//! Even-order real spherical-harmonic basis and Laplace–Beltrami regularized
//! least-squares fitting of normalized diffusion signals.
//!
//! Column `j` of a basis of order `l_max` holds the harmonic `(l, m)` with even
//! `l` and `j = l(l+1)/2 + m`. The real basis follows the modified symmetric
//! convention used for diffusion MRI:
//!
//! * `m < 0`: `√2 · N_l^|m| · P_l^|m|(cos θ) · cos(|m| φ)`
//! * `m = 0`: `N_l^0 · P_l(cos θ)`
//! * `m > 0`: `√2 · N_l^m · P_l^m(cos θ) · sin(m φ)`
//!
//! Directions are mapped to the upper hemisphere before evaluation, so rows
//! for `d` and `-d` are bitwise identical.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scheme::{GradientDirection, MultiShellScheme};

/// Regularization weight used by default for every fit.
pub const DEFAULT_LAMBDA: f64 = 0.006;
/// SH order used by default for every fit.
pub const DEFAULT_ORDER: usize = 6;
/// Directions per shell below which a regularized fit logs a warning.
pub const SPARSE_SHELL_WARNING: usize = 15;

/// Number of even-order coefficients up to `order`.
pub fn num_coefficients(order: usize) -> usize {
    (order + 1) * (order + 2) / 2
}

/// `(l, m)` of column `j`.
pub fn degree_order(j: usize) -> (usize, i64) {
    let mut l = 0;
    while num_coefficients(l) <= j {
        l += 2;
    }
    let m = j as i64 - (l * (l + 1) / 2) as i64;
    (l, m)
}

fn check_order(order: usize) -> Result<()> {
    if order % 2 != 0 {
        return Err(Error::invalid(format!("SH order must be even, got {order}")));
    }
    Ok(())
}

/// Associated Legendre functions `P_l^m(x)` (Condon–Shortley phase) for
/// `0 ≤ m ≤ l ≤ order`, stored at `[l * (order + 1) + m]`.
fn associated_legendre(order: usize, x: f64, out: &mut [f64]) {
    let stride = order + 1;
    let somx2 = ((1.0 - x) * (1.0 + x)).max(0.0).sqrt();
    let mut pmm = 1.0;
    for m in 0..=order {
        if m > 0 {
            pmm *= -((2 * m - 1) as f64) * somx2;
        }
        out[m * stride + m] = pmm;
        if m < order {
            let pm1 = x * (2 * m + 1) as f64 * pmm;
            out[(m + 1) * stride + m] = pm1;
            let (mut a, mut b) = (pmm, pm1);
            for l in m + 2..=order {
                let c = ((2 * l - 1) as f64 * x * b - (l + m - 1) as f64 * a) / (l - m) as f64;
                out[l * stride + m] = c;
                a = b;
                b = c;
            }
        }
    }
}

fn normalization(l: usize, m: usize) -> f64 {
    // (l-m)!/(l+m)! as a running product
    let mut ratio = 1.0;
    for k in (l - m + 1)..=(l + m) {
        ratio /= k as f64;
    }
    ((2 * l + 1) as f64 / (4.0 * std::f64::consts::PI) * ratio).sqrt()
}

/// Fills one basis row for `dir` into `row` (length `num_coefficients(order)`).
pub(crate) fn fill_row(dir: GradientDirection, order: usize, legendre: &mut [f64], row: &mut [f64]) {
    let d = dir.canonical();
    let cos_theta = d.z.clamp(-1.0, 1.0);
    let phi = d.y.atan2(d.x);
    associated_legendre(order, cos_theta, legendre);
    let stride = order + 1;
    for l in (0..=order).step_by(2) {
        let base = l * (l + 1) / 2;
        row[base] = normalization(l, 0) * legendre[l * stride];
        for m in 1..=l {
            let scaled = std::f64::consts::SQRT_2 * normalization(l, m) * legendre[l * stride + m];
            let mf = m as f64;
            row[base - m] = scaled * (mf * phi).cos();
            row[base + m] = scaled * (mf * phi).sin();
        }
    }
}

/// Basis row for a single direction.
pub fn sh_row(dir: GradientDirection, order: usize) -> Result<Vec<f64>> {
    check_order(order)?;
    let mut legendre = vec![0.0; (order + 1) * (order + 1)];
    let mut row = vec![0.0; num_coefficients(order)];
    fill_row(dir, order, &mut legendre, &mut row);
    Ok(row)
}

/// Basis matrix: one row per direction, one column per `(l, m)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShBasisMatrix {
    order: usize,
    matrix: DMatrix<f64>,
}

impl ShBasisMatrix {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn num_directions(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn num_coefficients(&self) -> usize {
        self.matrix.ncols()
    }
}

pub fn build_sh_basis(directions: &[GradientDirection], order: usize) -> Result<ShBasisMatrix> {
    check_order(order)?;
    let ncoef = num_coefficients(order);
    let mut legendre = vec![0.0; (order + 1) * (order + 1)];
    let mut row = vec![0.0; ncoef];
    let mut matrix = DMatrix::zeros(directions.len(), ncoef);
    for (i, d) in directions.iter().enumerate() {
        fill_row(*d, order, &mut legendre, &mut row);
        for (j, v) in row.iter().enumerate() {
            matrix[(i, j)] = *v;
        }
    }
    Ok(ShBasisMatrix { order, matrix })
}

/// One basis per shell of `scheme`.
pub fn build_scheme_bases(scheme: &MultiShellScheme, order: usize) -> Result<Vec<ShBasisMatrix>> {
    scheme
        .shells()
        .iter()
        .map(|s| build_sh_basis(s.directions(), order))
        .collect()
}

/// Diagonal of the Laplace–Beltrami matrix: `l(l+1)` per column.
pub fn laplace_beltrami_penalty(order: usize) -> Result<DVector<f64>> {
    check_order(order)?;
    Ok(DVector::from_iterator(
        num_coefficients(order),
        (0..num_coefficients(order)).map(|j| {
            let (l, _) = degree_order(j);
            (l * (l + 1)) as f64
        }),
    ))
}

/// Diagonal of `LᵀL`: `l²(l+1)²` per column.
pub fn penalty_normal_diagonal(order: usize) -> Result<DVector<f64>> {
    Ok(laplace_beltrami_penalty(order)?.map(|v| v * v))
}

/// Normalized attenuations, one vector per shell, aligned with the scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct DwiSignal {
    shells: Vec<Vec<f64>>,
}

impl DwiSignal {
    pub fn new(shells: Vec<Vec<f64>>) -> Result<Self> {
        for (s, v) in shells.iter().enumerate() {
            if let Some(x) = v.iter().find(|x| !x.is_finite() || **x < 0.0) {
                return Err(Error::invalid(format!(
                    "shell {s}: signal values must be finite and non-negative, got {x}"
                )));
            }
        }
        Ok(Self { shells })
    }

    /// Splits a flat, shell-ordered vector according to `scheme`.
    pub fn from_flat(flat: &[f64], scheme: &MultiShellScheme) -> Result<Self> {
        if flat.len() != scheme.total_directions() {
            return Err(Error::shape(format!(
                "{} signal values for {} directions",
                flat.len(),
                scheme.total_directions()
            )));
        }
        let mut rest = flat;
        let mut shells = Vec::with_capacity(scheme.num_shells());
        for n in scheme.shell_sizes() {
            let (head, tail) = rest.split_at(n);
            shells.push(head.to_vec());
            rest = tail;
        }
        Self::new(shells)
    }

    pub(crate) fn from_shells_unchecked(shells: Vec<Vec<f64>>) -> Self {
        Self { shells }
    }

    pub fn shells(&self) -> &[Vec<f64>] {
        &self.shells
    }

    pub fn flat(&self) -> Vec<f64> {
        self.shells.concat()
    }

    pub fn matches(&self, scheme: &MultiShellScheme) -> bool {
        self.shells.len() == scheme.num_shells()
            && self.shells.iter().zip(scheme.shell_sizes()).all(|(v, n)| v.len() == n)
    }
}

/// Per-shell coefficient vectors, in ascending b-value order.
#[derive(Debug, Clone, PartialEq)]
pub struct ShCoefficients {
    order: usize,
    shells: Vec<Vec<f64>>,
}

impl ShCoefficients {
    pub fn new(order: usize, shells: Vec<Vec<f64>>) -> Result<Self> {
        check_order(order)?;
        let n = num_coefficients(order);
        if let Some(v) = shells.iter().find(|v| v.len() != n) {
            return Err(Error::shape(format!(
                "order {order} needs {n} coefficients per shell, got {}",
                v.len()
            )));
        }
        Ok(Self { order, shells })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn shells(&self) -> &[Vec<f64>] {
        &self.shells
    }

    /// Feature vector of length shells × coefficients.
    pub fn concatenated(&self) -> Vec<f64> {
        self.shells.concat()
    }
}

/// Solves `(BᵀB + λ LᵀL) c = rhs` for a shell given its normal matrix.
///
/// Cholesky first; a rank-revealing SVD handles what Cholesky rejects.
fn solve_normal(normal: DMatrix<f64>, rhs: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = normal.nrows();
    let scale = normal.diagonal().amax().max(f64::MIN_POSITIVE);
    if let Some(chol) = normal.clone().cholesky() {
        let l = chol.l_dirty();
        let min_pivot = (0..n).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
        if min_pivot > 1e-12 * scale {
            return Ok(chol.solve(&rhs));
        }
    }
    let svd = normal.svd(true, true);
    let smax = svd.singular_values.amax();
    let tol = smax * 1e-12 * n as f64;
    if svd.singular_values.iter().any(|&s| s <= tol) {
        return Err(Error::Underdetermined);
    }
    svd.solve(&rhs, tol).map_err(|e| Error::Numerical(e.to_string()))
}

fn normal_matrix(basis: &DMatrix<f64>, penalty: &DVector<f64>, lambda: f64) -> DMatrix<f64> {
    let mut normal = basis.tr_mul(basis);
    for (j, p) in penalty.iter().enumerate() {
        normal[(j, j)] += lambda * p;
    }
    normal
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::invalid(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    Ok(())
}

fn check_determined(rows: usize, cols: usize, lambda: f64) -> Result<()> {
    if lambda == 0.0 && rows < cols {
        return Err(Error::Underdetermined);
    }
    Ok(())
}

/// Regularized least-squares fit of one shell.
pub fn fit_shell(values: &[f64], basis: &ShBasisMatrix, lambda: f64) -> Result<Vec<f64>> {
    check_lambda(lambda)?;
    if values.len() != basis.num_directions() {
        return Err(Error::shape(format!(
            "{} signal values for a {}-row basis",
            values.len(),
            basis.num_directions()
        )));
    }
    check_determined(basis.num_directions(), basis.num_coefficients(), lambda)?;
    let penalty = penalty_normal_diagonal(basis.order)?;
    let normal = normal_matrix(&basis.matrix, &penalty, lambda);
    let e = DMatrix::from_column_slice(values.len(), 1, values);
    let rhs = basis.matrix.tr_mul(&e);
    Ok(solve_normal(normal, rhs)?.column(0).iter().copied().collect())
}

/// Per-shell `c = (BᵀB + λLᵀL)⁻¹ BᵀE`, concatenated in shell order.
pub fn fit_sh(signal: &DwiSignal, bases: &[ShBasisMatrix], lambda: f64) -> Result<ShCoefficients> {
    if signal.shells.len() != bases.len() {
        return Err(Error::shape(format!(
            "{} signal shells for {} bases",
            signal.shells.len(),
            bases.len()
        )));
    }
    let order = bases.first().map(|b| b.order).unwrap_or(0);
    if bases.iter().any(|b| b.order != order) {
        return Err(Error::shape("all shells must share one SH order"));
    }
    let shells = signal
        .shells
        .iter()
        .zip(bases)
        .map(|(values, basis)| {
            if lambda > 0.0 && basis.num_directions() < SPARSE_SHELL_WARNING {
                log::warn!(
                    "fitting order {order} on {} directions; estimates may be unstable",
                    basis.num_directions()
                );
            }
            fit_shell(values, basis, lambda)
        })
        .collect::<Result<Vec<_>>>()?;
    ShCoefficients::new(order, shells)
}

/// Synthesizes `E(u) = B(u)·c` for one shell.
pub fn evaluate_shell(coeffs: &[f64], directions: &[GradientDirection], order: usize) -> Result<Vec<f64>> {
    check_order(order)?;
    if coeffs.len() != num_coefficients(order) {
        return Err(Error::shape(format!(
            "{} coefficients for order {order}",
            coeffs.len()
        )));
    }
    let mut legendre = vec![0.0; (order + 1) * (order + 1)];
    let mut row = vec![0.0; coeffs.len()];
    Ok(directions
        .iter()
        .map(|d| {
            fill_row(*d, order, &mut legendre, &mut row);
            row.iter().zip(coeffs).map(|(b, c)| b * c).sum()
        })
        .collect())
}

/// Synthesizes the signal of every shell of `scheme`.
pub fn evaluate_sh(coeffs: &ShCoefficients, scheme: &MultiShellScheme) -> Result<DwiSignal> {
    if coeffs.shells.len() != scheme.num_shells() {
        return Err(Error::shape(format!(
            "{} coefficient shells for {} scheme shells",
            coeffs.shells.len(),
            scheme.num_shells()
        )));
    }
    let shells = coeffs
        .shells
        .iter()
        .zip(scheme.shells())
        .map(|(c, s)| evaluate_shell(c, s.directions(), coeffs.order))
        .collect::<Result<Vec<_>>>()?;
    Ok(DwiSignal::from_shells_unchecked(shells))
}

/// Precomputed per-shell solve operators for fitting many voxels on one scheme.
#[derive(Debug, Clone)]
pub struct ShFitter {
    order: usize,
    /// `(BᵀB + λLᵀL)⁻¹Bᵀ` per shell, obtained by solving against `Bᵀ`.
    operators: Vec<DMatrix<f64>>,
}

impl ShFitter {
    pub fn new(scheme: &MultiShellScheme, order: usize, lambda: f64) -> Result<Self> {
        check_lambda(lambda)?;
        let penalty = penalty_normal_diagonal(order)?;
        let operators = build_scheme_bases(scheme, order)?
            .into_iter()
            .map(|basis| {
                check_determined(basis.num_directions(), basis.num_coefficients(), lambda)?;
                let normal = normal_matrix(&basis.matrix, &penalty, lambda);
                solve_normal(normal, basis.matrix.transpose())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { order, operators })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Concatenated feature width.
    pub fn feature_width(&self) -> usize {
        self.operators.len() * num_coefficients(self.order)
    }

    /// Fits a flat, shell-ordered signal into `out` (length [`Self::feature_width`]).
    pub fn fit_flat_into(&self, flat: &[f64], out: &mut [f64]) {
        let ncoef = num_coefficients(self.order);
        let mut offset = 0;
        for (s, op) in self.operators.iter().enumerate() {
            let n = op.ncols();
            let values = &flat[offset..offset + n];
            for (j, slot) in out[s * ncoef..(s + 1) * ncoef].iter_mut().enumerate() {
                let mut acc = 0.0;
                for (i, v) in values.iter().enumerate() {
                    acc += op[(j, i)] * v;
                }
                *slot = acc;
            }
            offset += n;
        }
    }

    pub fn fit(&self, signal: &DwiSignal) -> Result<ShCoefficients> {
        if signal.shells.len() != self.operators.len()
            || signal.shells.iter().zip(&self.operators).any(|(v, op)| v.len() != op.ncols())
        {
            return Err(Error::shape("signal does not match the fitter's scheme"));
        }
        let mut out = vec![0.0; self.feature_width()];
        self.fit_flat_into(&signal.flat(), &mut out);
        let ncoef = num_coefficients(self.order);
        ShCoefficients::new(self.order, out.chunks(ncoef).map(<[f64]>::to_vec).collect())
    }
}

/// Fits arbitrary row subsets of a fixed full-scheme basis; used when every
/// sample draws its own random subset.
#[derive(Debug, Clone)]
pub(crate) struct SubsetFitter {
    order: usize,
    lambda: f64,
    penalty: Vec<f64>,
    /// Full-scheme basis rows per shell, row-major `n × ncoef`.
    rows: Vec<Vec<f64>>,
}

impl SubsetFitter {
    pub fn new(scheme: &MultiShellScheme, order: usize, lambda: f64) -> Result<Self> {
        check_lambda(lambda)?;
        let ncoef = num_coefficients(order);
        let mut legendre = vec![0.0; (order + 1) * (order + 1)];
        let mut row = vec![0.0; ncoef];
        let rows = scheme
            .shells()
            .iter()
            .map(|shell| {
                let mut flat = Vec::with_capacity(shell.len() * ncoef);
                for d in shell.directions() {
                    fill_row(*d, order, &mut legendre, &mut row);
                    flat.extend_from_slice(&row);
                }
                flat
            })
            .collect();
        Ok(Self {
            order,
            lambda,
            penalty: penalty_normal_diagonal(order)?.iter().copied().collect(),
            rows,
        })
    }

    /// Fits shell `shell` using `indices` of the full scheme and the matching
    /// `values` of the full shell signal; writes coefficients into `out`.
    pub fn fit_subset(&self, shell: usize, indices: &[usize], shell_values: &[f64], out: &mut [f64]) -> Result<()> {
        let ncoef = num_coefficients(self.order);
        check_determined(indices.len(), ncoef, self.lambda)?;
        let rows = &self.rows[shell];
        let mut normal = DMatrix::<f64>::zeros(ncoef, ncoef);
        let mut rhs = DMatrix::<f64>::zeros(ncoef, 1);
        for &i in indices {
            let r = &rows[i * ncoef..(i + 1) * ncoef];
            let e = shell_values[i];
            for a in 0..ncoef {
                rhs[(a, 0)] += r[a] * e;
                let ra = r[a];
                for b in a..ncoef {
                    normal[(a, b)] += ra * r[b];
                }
            }
        }
        for a in 0..ncoef {
            normal[(a, a)] += self.lambda * self.penalty[a];
            for b in a + 1..ncoef {
                normal[(b, a)] = normal[(a, b)];
            }
        }
        let c = solve_normal(normal, rhs)?;
        out.copy_from_slice(c.as_slice());
        Ok(())
    }
}
