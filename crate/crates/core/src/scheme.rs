//! Multi-shell gradient schemes, electrostatic-repulsion scheme design and
//! the two subsampling modes used for q-space sampling augmentation.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Tolerance on the unit norm of directions produced by this crate.
pub const UNIT_TOL: f64 = 1e-9;
/// Tolerance on the unit norm of directions read from text.
pub const READ_UNIT_TOL: f64 = 1e-6;
/// Minimum directions per shell accepted by [`generate_uniform_scheme`].
pub const MIN_GENERATED_DIRECTIONS: usize = 6;

const RELAX_MAX_ITERS: usize = 20_000;
const EXCHANGE_RANDOM_STARTS: usize = 3;

/// Unit vector on the sphere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientDirection {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl GradientDirection {
    /// Builds a direction, rejecting vectors whose norm is not 1 within [`UNIT_TOL`].
    pub fn new(x: f64, y: f64, z: f64) -> Result<Self> {
        let norm = (x * x + y * y + z * z).sqrt();
        if !norm.is_finite() || (norm - 1.0).abs() > UNIT_TOL {
            return Err(Error::invalid(format!(
                "non-unit direction ({x}, {y}, {z}), norm {norm}"
            )));
        }
        Ok(Self { x, y, z })
    }

    /// Normalizes an arbitrary non-zero vector.
    pub fn normalized(x: f64, y: f64, z: f64) -> Result<Self> {
        let norm = (x * x + y * y + z * z).sqrt();
        if !norm.is_finite() || norm < 1e-300 {
            return Err(Error::invalid("cannot normalize a zero vector"));
        }
        Ok(Self {
            x: x / norm,
            y: y / norm,
            z: z / norm,
        })
    }

    pub fn from_array(v: [f64; 3]) -> Result<Self> {
        Self::new(v[0], v[1], v[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn dot(self, other: Self) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn neg(self) -> Self {
        Self {
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    /// Same axis, flipped into the closed upper hemisphere (z > 0, ties on y then x).
    pub fn canonical(self) -> Self {
        let flip = if self.z != 0.0 {
            self.z < 0.0
        } else if self.y != 0.0 {
            self.y < 0.0
        } else {
            self.x < 0.0
        };
        if flip {
            self.neg()
        } else {
            self
        }
    }

    /// True when both directions describe the same axis (equal or antipodal).
    pub fn same_axis(self, other: Self, tol: f64) -> bool {
        let d = [self.x - other.x, self.y - other.y, self.z - other.z];
        let s = [self.x + other.x, self.y + other.y, self.z + other.z];
        d.iter().all(|v| v.abs() <= tol) || s.iter().all(|v| v.abs() <= tol)
    }

    /// Uniformly distributed random direction.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        loop {
            let x: f64 = rng.sample(StandardNormal);
            let y: f64 = rng.sample(StandardNormal);
            let z: f64 = rng.sample(StandardNormal);
            if let Ok(d) = Self::normalized(x, y, z) {
                return d;
            }
        }
    }
}

/// Directions sharing one b-value (s/mm²).
#[derive(Debug, Clone, PartialEq)]
pub struct Shell {
    b_value: f64,
    directions: Vec<GradientDirection>,
}

impl Shell {
    pub fn new(b_value: f64, directions: Vec<GradientDirection>) -> Result<Self> {
        if !(b_value > 0.0) || !b_value.is_finite() {
            return Err(Error::invalid(format!("b-value must be positive, got {b_value}")));
        }
        if directions.is_empty() {
            return Err(Error::invalid(format!("shell b={b_value} has no directions")));
        }
        for (i, a) in directions.iter().enumerate() {
            for (j, b) in directions.iter().enumerate().skip(i + 1) {
                if a.same_axis(*b, UNIT_TOL) {
                    return Err(Error::invalid(format!(
                        "shell b={b_value}: directions {i} and {j} are identical or antipodal"
                    )));
                }
            }
        }
        Ok(Self {
            b_value,
            directions,
        })
    }

    pub fn b_value(&self) -> f64 {
        self.b_value
    }

    pub fn directions(&self) -> &[GradientDirection] {
        &self.directions
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }
}

/// Ordered set of shells with strictly increasing b-values.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiShellScheme {
    shells: Vec<Shell>,
}

impl MultiShellScheme {
    pub fn new(shells: Vec<Shell>) -> Result<Self> {
        if shells.is_empty() {
            return Err(Error::invalid("scheme has no shells"));
        }
        for w in shells.windows(2) {
            if !(w[1].b_value > w[0].b_value) {
                return Err(Error::invalid(format!(
                    "shell b-values must be strictly increasing ({} then {})",
                    w[0].b_value, w[1].b_value
                )));
            }
        }
        Ok(Self { shells })
    }

    pub fn shells(&self) -> &[Shell] {
        &self.shells
    }

    pub fn num_shells(&self) -> usize {
        self.shells.len()
    }

    pub fn b_values(&self) -> Vec<f64> {
        self.shells.iter().map(|s| s.b_value).collect()
    }

    pub fn shell_sizes(&self) -> Vec<usize> {
        self.shells.iter().map(|s| s.len()).collect()
    }

    /// Total direction count over all shells.
    pub fn total_directions(&self) -> usize {
        self.shells.iter().map(|s| s.len()).sum()
    }

    /// Offset of each shell's first direction in the flat, shell-ordered layout.
    pub fn shell_offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.shells
            .iter()
            .map(|s| {
                let o = acc;
                acc += s.len();
                o
            })
            .collect()
    }

    /// Index of the shell with the given b-value (relative tolerance 1e-9).
    pub fn shell_index(&self, b_value: f64) -> Option<usize> {
        self.shells
            .iter()
            .position(|s| b_values_match(s.b_value, b_value))
    }

    /// Same scheme with every direction flipped to its antipode.
    pub fn antipodal(&self) -> Self {
        Self {
            shells: self
                .shells
                .iter()
                .map(|s| Shell {
                    b_value: s.b_value,
                    directions: s.directions.iter().map(|d| d.neg()).collect(),
                })
                .collect(),
        }
    }
}

pub(crate) fn b_values_match(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

/// Per-shell indices into a parent scheme.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubsampleSelection {
    per_shell: Vec<Vec<usize>>,
}

impl SubsampleSelection {
    pub fn new(per_shell: Vec<Vec<usize>>) -> Self {
        Self { per_shell }
    }

    /// Selection of every direction in `scheme`.
    pub fn identity(scheme: &MultiShellScheme) -> Self {
        Self {
            per_shell: scheme.shells.iter().map(|s| (0..s.len()).collect()).collect(),
        }
    }

    pub fn per_shell(&self) -> &[Vec<usize>] {
        &self.per_shell
    }

    pub fn counts(&self) -> Vec<usize> {
        self.per_shell.iter().map(Vec::len).collect()
    }

    /// Checks that indices are unique, in range and non-empty per shell.
    pub fn validate(&self, scheme: &MultiShellScheme) -> Result<()> {
        if self.per_shell.len() != scheme.num_shells() {
            return Err(Error::shape(format!(
                "selection has {} shells, scheme has {}",
                self.per_shell.len(),
                scheme.num_shells()
            )));
        }
        for (s, (idx, shell)) in self.per_shell.iter().zip(&scheme.shells).enumerate() {
            if idx.is_empty() {
                return Err(Error::invalid(format!("shell {s}: empty selection")));
            }
            let mut seen = vec![false; shell.len()];
            for &i in idx {
                if i >= shell.len() {
                    return Err(Error::invalid(format!(
                        "shell {s}: index {i} out of range (size {})",
                        shell.len()
                    )));
                }
                if std::mem::replace(&mut seen[i], true) {
                    return Err(Error::invalid(format!("shell {s}: duplicate index {i}")));
                }
            }
        }
        Ok(())
    }
}

/// Antipodally symmetrized Coulomb energy of a pair of directions.
pub fn pair_energy(a: GradientDirection, b: GradientDirection) -> f64 {
    let d = ((a.x - b.x).powi(2) + (a.y - b.y).powi(2) + (a.z - b.z).powi(2)).sqrt();
    let s = ((a.x + b.x).powi(2) + (a.y + b.y).powi(2) + (a.z + b.z).powi(2)).sqrt();
    1.0 / d + 1.0 / s
}

/// Σ_{i<j} (1/‖dᵢ−dⱼ‖ + 1/‖dᵢ+dⱼ‖).
pub fn electrostatic_energy(dirs: &[GradientDirection]) -> f64 {
    let mut e = 0.0;
    for i in 0..dirs.len() {
        for j in i + 1..dirs.len() {
            e += pair_energy(dirs[i], dirs[j]);
        }
    }
    e
}

/// Energy of the directions picked by `indices`.
pub fn subset_energy(dirs: &[GradientDirection], indices: &[usize]) -> f64 {
    let picked: Vec<_> = indices.iter().map(|&i| dirs[i]).collect();
    electrostatic_energy(&picked)
}

fn energy_and_tangent_forces(dirs: &[[f64; 3]], forces: &mut [[f64; 3]]) -> f64 {
    for f in forces.iter_mut() {
        *f = [0.0; 3];
    }
    let mut energy = 0.0;
    for i in 0..dirs.len() {
        for j in i + 1..dirs.len() {
            let a = dirs[i];
            let b = dirs[j];
            let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
            let s = [a[0] + b[0], a[1] + b[1], a[2] + b[2]];
            let dn = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            let sn = (s[0] * s[0] + s[1] * s[1] + s[2] * s[2]).sqrt();
            energy += 1.0 / dn + 1.0 / sn;
            let dc = 1.0 / (dn * dn * dn);
            let sc = 1.0 / (sn * sn * sn);
            for k in 0..3 {
                // force = -grad; repulsion from +b and from -b
                let fi = d[k] * dc + s[k] * sc;
                let fj = -d[k] * dc + s[k] * sc;
                forces[i][k] += fi;
                forces[j][k] += fj;
            }
        }
    }
    for (f, p) in forces.iter_mut().zip(dirs) {
        let radial = f[0] * p[0] + f[1] * p[1] + f[2] * p[2];
        for k in 0..3 {
            f[k] -= radial * p[k];
        }
    }
    energy
}

fn normalize3(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

/// Relaxes `n` random directions to a local minimum of the symmetrized
/// electrostatic energy with projected gradient descent and an adaptive step.
///
/// No lower bound on `n` is enforced here; [`generate_uniform_scheme`] applies it.
pub fn repulsion_directions<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<GradientDirection> {
    let mut pts: Vec<[f64; 3]> = (0..n).map(|_| GradientDirection::random(rng).to_array()).collect();
    if n < 2 {
        return pts
            .into_iter()
            .map(|p| GradientDirection { x: p[0], y: p[1], z: p[2] })
            .collect();
    }
    let mut forces = vec![[0.0; 3]; n];
    let mut trial = vec![[0.0; 3]; n];
    let mut trial_forces = vec![[0.0; 3]; n];
    let mut energy = energy_and_tangent_forces(&pts, &mut forces);
    let max_force = |f: &[[f64; 3]]| {
        f.iter()
            .map(|v| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt())
            .fold(0.0, f64::max)
    };
    let mut step = 0.1 / max_force(&forces).max(1e-12);
    for _ in 0..RELAX_MAX_ITERS {
        let fmax = max_force(&forces);
        if fmax < 1e-10 * energy.max(1.0) || step * fmax < 1e-15 {
            break;
        }
        for ((t, p), f) in trial.iter_mut().zip(&pts).zip(&forces) {
            *t = normalize3([p[0] + step * f[0], p[1] + step * f[1], p[2] + step * f[2]]);
        }
        let e = energy_and_tangent_forces(&trial, &mut trial_forces);
        if e < energy {
            std::mem::swap(&mut pts, &mut trial);
            std::mem::swap(&mut forces, &mut trial_forces);
            energy = e;
            step *= 1.2;
        } else {
            step *= 0.5;
        }
    }
    pts.into_iter()
        .map(|p| {
            let p = normalize3(p);
            GradientDirection { x: p[0], y: p[1], z: p[2] }
        })
        .collect()
}

/// Designs one electrostatic-repulsion shell per b-value. Deterministic in `seed`.
pub fn generate_uniform_scheme(
    n_per_shell: &[usize],
    b_values: &[f64],
    seed: u64,
) -> Result<MultiShellScheme> {
    if n_per_shell.len() != b_values.len() {
        return Err(Error::invalid(format!(
            "{} direction counts for {} b-values",
            n_per_shell.len(),
            b_values.len()
        )));
    }
    if let Some(&n) = n_per_shell.iter().find(|&&n| n < MIN_GENERATED_DIRECTIONS) {
        return Err(Error::TooFewDirections(n));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shells = n_per_shell
        .iter()
        .zip(b_values)
        .map(|(&n, &b)| Shell::new(b, repulsion_directions(n, &mut rng)))
        .collect::<Result<Vec<_>>>()?;
    MultiShellScheme::new(shells)
}

struct PairTable {
    n: usize,
    e: Vec<f64>,
}

impl PairTable {
    fn new(dirs: &[GradientDirection]) -> Self {
        let n = dirs.len();
        let mut e = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let v = pair_energy(dirs[i], dirs[j]);
                e[i * n + j] = v;
                e[j * n + i] = v;
            }
        }
        Self { n, e }
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        self.e[i * self.n + j]
    }
}

fn greedy_fill(table: &PairTable, mut chosen: Vec<usize>, k: usize) -> Vec<usize> {
    let n = table.n;
    let mut in_set = vec![false; n];
    let mut load = vec![0.0; n];
    for &c in &chosen {
        in_set[c] = true;
        for (x, l) in load.iter_mut().enumerate() {
            *l += table.get(c, x);
        }
    }
    while chosen.len() < k {
        let mut best: Option<(usize, f64)> = None;
        for j in (0..n).filter(|&j| !in_set[j]) {
            if best.is_none_or(|(_, e)| load[j] < e) {
                best = Some((j, load[j]));
            }
        }
        let (j, _) = best.expect("k <= n");
        in_set[j] = true;
        chosen.push(j);
        for (x, l) in load.iter_mut().enumerate() {
            *l += table.get(j, x);
        }
    }
    chosen
}

/// Swap tolerance for the exchange step, relative to the subset energy.
fn exchange_tolerance(energy: f64) -> f64 {
    1e-12 * energy.abs().max(1.0)
}

/// Best-improvement pairwise exchange until no swap lowers the energy.
fn exchange(table: &PairTable, mut chosen: Vec<usize>) -> Vec<usize> {
    let n = table.n;
    let mut in_set = vec![false; n];
    for &c in &chosen {
        in_set[c] = true;
    }
    let mut load = vec![0.0; n];
    for &c in &chosen {
        for (x, l) in load.iter_mut().enumerate() {
            *l += table.get(c, x);
        }
    }
    loop {
        let energy: f64 = chosen.iter().map(|&c| load[c]).sum::<f64>() / 2.0;
        let tol = exchange_tolerance(energy);
        let mut best: Option<(usize, usize, f64)> = None;
        for (pos, &a) in chosen.iter().enumerate() {
            for j in (0..n).filter(|&j| !in_set[j]) {
                let delta = load[j] - table.get(a, j) - load[a];
                if delta < -tol && best.is_none_or(|(_, _, d)| delta < d) {
                    best = Some((pos, j, delta));
                }
            }
        }
        let Some((pos, j, _)) = best else { break };
        let a = chosen[pos];
        in_set[a] = false;
        in_set[j] = true;
        chosen[pos] = j;
        for (x, l) in load.iter_mut().enumerate() {
            *l += table.get(j, x) - table.get(a, x);
        }
    }
    chosen
}

/// Selects `k` of `dirs` approximately minimizing the symmetrized energy.
///
/// Runs greedy seeding from the minimal-energy pair plus a few seeded random
/// starts, each refined by pairwise exchange; the lowest-energy result wins
/// (earliest start on ties). Returned indices are ascending.
pub fn select_uniform_subset<R: Rng + ?Sized>(
    dirs: &[GradientDirection],
    k: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let n = dirs.len();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("cannot keep {k} of {n} directions")));
    }
    if k == n {
        return Ok((0..n).collect());
    }
    if k == 1 {
        return Ok(vec![0]);
    }
    let table = PairTable::new(dirs);
    let mut best_pair = (0, 1);
    for i in 0..n {
        for j in i + 1..n {
            if table.get(i, j) < table.get(best_pair.0, best_pair.1) {
                best_pair = (i, j);
            }
        }
    }
    let mut starts = vec![vec![best_pair.0, best_pair.1]];
    for _ in 0..EXCHANGE_RANDOM_STARTS {
        starts.push(vec![rng.random_range(0..n)]);
    }
    let mut best: Option<(Vec<usize>, f64)> = None;
    for start in starts {
        let mut sel = exchange(&table, greedy_fill(&table, start, k));
        sel.sort_unstable();
        let e = subset_energy(dirs, &sel);
        if best
            .as_ref()
            .is_none_or(|(_, be)| e < *be - exchange_tolerance(*be))
        {
            best = Some((sel, e));
        }
    }
    Ok(best.expect("at least one start").0)
}

/// True when no single swap lowers the subset energy beyond the exchange tolerance.
pub fn is_exchange_fixed_point(dirs: &[GradientDirection], indices: &[usize]) -> bool {
    let table = PairTable::new(dirs);
    let energy = subset_energy(dirs, indices);
    let tol = exchange_tolerance(energy);
    let load = |x: usize| indices.iter().map(|&c| table.get(c, x)).sum::<f64>();
    for &a in indices {
        for j in (0..dirs.len()).filter(|j| !indices.contains(j)) {
            if load(j) - table.get(a, j) - load(a) < -tol {
                return false;
            }
        }
    }
    true
}

/// Uniform subsampling: per shell, keeps `n_keep[s]` directions that spread
/// as evenly as possible. Deterministic in `seed`.
pub fn uniform_subsample(
    scheme: &MultiShellScheme,
    n_keep: &[usize],
    seed: u64,
) -> Result<SubsampleSelection> {
    if n_keep.len() != scheme.num_shells() {
        return Err(Error::invalid(format!(
            "{} keep counts for {} shells",
            n_keep.len(),
            scheme.num_shells()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_shell = scheme
        .shells
        .iter()
        .zip(n_keep)
        .map(|(shell, &k)| select_uniform_subset(&shell.directions, k, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    Ok(SubsampleSelection { per_shell })
}

fn check_ranges(scheme: &MultiShellScheme, ranges: &[(usize, usize)]) -> Result<()> {
    if ranges.len() != scheme.num_shells() {
        return Err(Error::invalid(format!(
            "{} count ranges for {} shells",
            ranges.len(),
            scheme.num_shells()
        )));
    }
    for (s, (&(lo, hi), shell)) in ranges.iter().zip(&scheme.shells).enumerate() {
        if lo > hi {
            return Err(Error::invalid(format!("shell {s}: empty count range [{lo}, {hi}]")));
        }
        if lo < 1 || hi > shell.len() {
            return Err(Error::invalid(format!(
                "shell {s}: count range [{lo}, {hi}] outside [1, {}]",
                shell.len()
            )));
        }
    }
    Ok(())
}

/// Random subsampling drawing from a caller-owned RNG; ranges must already be valid.
pub(crate) fn random_selection_with<R: Rng + ?Sized>(
    shell_sizes: &[usize],
    ranges: &[(usize, usize)],
    rng: &mut R,
) -> SubsampleSelection {
    let per_shell = shell_sizes
        .iter()
        .zip(ranges)
        .map(|(&n, &(lo, hi))| {
            let count = rng.random_range(lo..=hi);
            let mut idx = index::sample(rng, n, count).into_vec();
            idx.sort_unstable();
            idx
        })
        .collect();
    SubsampleSelection { per_shell }
}

/// Random subsampling: per shell, a count drawn uniformly from the inclusive
/// range, then that many distinct indices without replacement (ascending).
pub fn random_subsample(
    scheme: &MultiShellScheme,
    n_range: &[(usize, usize)],
    seed: u64,
) -> Result<SubsampleSelection> {
    check_ranges(scheme, n_range)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(random_selection_with(&scheme.shell_sizes(), n_range, &mut rng))
}

pub(crate) fn validate_ranges(scheme: &MultiShellScheme, ranges: &[(usize, usize)]) -> Result<()> {
    check_ranges(scheme, ranges)
}

/// Scheme restricted to the selected directions (order preserved per shell).
pub fn apply_selection(
    scheme: &MultiShellScheme,
    selection: &SubsampleSelection,
) -> Result<MultiShellScheme> {
    selection.validate(scheme)?;
    let shells = scheme
        .shells
        .iter()
        .zip(&selection.per_shell)
        .map(|(shell, idx)| Shell {
            b_value: shell.b_value,
            directions: idx.iter().map(|&i| shell.directions[i]).collect(),
        })
        .collect();
    Ok(MultiShellScheme { shells })
}

/// Locates each direction of `subset` in `parent` (same axis within `tol`).
pub fn locate_selection(
    parent: &MultiShellScheme,
    subset: &MultiShellScheme,
    tol: f64,
) -> Result<SubsampleSelection> {
    let mut per_shell = vec![Vec::new(); parent.num_shells()];
    let mut seen = vec![false; parent.num_shells()];
    for shell in &subset.shells {
        let s = parent
            .shell_index(shell.b_value)
            .ok_or(Error::MissingShell(shell.b_value))?;
        seen[s] = true;
        let pdirs = &parent.shells[s].directions;
        for d in &shell.directions {
            let i = pdirs
                .iter()
                .position(|p| p.same_axis(*d, tol))
                .ok_or_else(|| {
                    Error::invalid(format!(
                        "direction ({}, {}, {}) at b={} not found in parent scheme",
                        d.x, d.y, d.z, shell.b_value
                    ))
                })?;
            per_shell[s].push(i);
        }
    }
    if let Some(s) = seen.iter().position(|v| !v) {
        return Err(Error::MissingShell(parent.shells[s].b_value));
    }
    let sel = SubsampleSelection { per_shell };
    sel.validate(parent)?;
    Ok(sel)
}

/// Renders the `gx gy gz b` text format.
pub fn scheme_to_text(scheme: &MultiShellScheme) -> String {
    let mut out = String::from("# gx gy gz b\n");
    for shell in &scheme.shells {
        for d in &shell.directions {
            writeln!(out, "{} {} {} {}", d.x, d.y, d.z, shell.b_value).expect("string write");
        }
    }
    out
}

/// Parses the `gx gy gz b` text format. Errors carry 1-based line numbers.
pub fn scheme_from_text(text: &str) -> Result<MultiShellScheme> {
    let mut groups: Vec<(f64, Vec<GradientDirection>, usize)> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let perr = |message: String| Error::Parse {
            line: line_no,
            message,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(perr(format!("expected 4 fields `gx gy gz b`, found {}", fields.len())));
        }
        let mut v = [0.0; 4];
        for (slot, tok) in v.iter_mut().zip(&fields) {
            *slot = tok
                .parse::<f64>()
                .map_err(|_| perr(format!("not a number: {tok:?}")))?;
            if !slot.is_finite() {
                return Err(perr(format!("not finite: {tok:?}")));
            }
        }
        let [x, y, z, b] = v;
        if !(b > 0.0) {
            return Err(perr(format!("b-value must be positive, got {b}")));
        }
        let norm = (x * x + y * y + z * z).sqrt();
        if (norm - 1.0).abs() > READ_UNIT_TOL {
            return Err(perr(format!("non-unit direction (norm {norm})")));
        }
        let dir = if (norm - 1.0).abs() > UNIT_TOL {
            GradientDirection {
                x: x / norm,
                y: y / norm,
                z: z / norm,
            }
        } else {
            GradientDirection { x, y, z }
        };
        match groups.last_mut() {
            Some((gb, dirs, _)) if *gb == b => dirs.push(dir),
            Some((gb, _, _)) if b < *gb => {
                return Err(perr(format!(
                    "shells must be grouped by ascending b-value ({b} after {gb})"
                )));
            }
            _ => groups.push((b, vec![dir], line_no)),
        }
    }
    if groups.is_empty() {
        return Err(Error::Parse {
            line: 0,
            message: "no directions found".into(),
        });
    }
    let shells = groups
        .into_iter()
        .map(|(b, dirs, first_line)| {
            Shell::new(b, dirs).map_err(|e| Error::Parse {
                line: first_line,
                message: e.to_string(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    MultiShellScheme::new(shells)
}

pub fn write_scheme(path: impl AsRef<Path>, scheme: &MultiShellScheme) -> Result<()> {
    crate::io::write_atomic(path.as_ref(), scheme_to_text(scheme).as_bytes())
}

pub fn read_scheme(path: impl AsRef<Path>) -> Result<MultiShellScheme> {
    scheme_from_text(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn random_shell(n: usize, seed: u64) -> Vec<GradientDirection> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| GradientDirection::random(&mut rng)).collect()
    }

    #[test]
    fn two_directions_relax_to_orthogonal() {
        // brute-force grid over the pair angle puts the minimum at 90°
        let e = |t: f64| 1.0 / (2.0 * (t / 2.0).sin()) + 1.0 / (2.0 * (t / 2.0).cos());
        let grid_best = (1..18000)
            .map(|i| i as f64 * std::f64::consts::PI / 18000.0)
            .min_by(|a, b| e(*a).total_cmp(&e(*b)))
            .unwrap();
        assert!((grid_best - std::f64::consts::FRAC_PI_2).abs() < 1e-3);
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = repulsion_directions(2, &mut rng);
            assert!(d[0].dot(d[1]).abs() < 1e-6, "seed {seed}: {}", d[0].dot(d[1]));
        }
    }

    #[test]
    fn generated_scheme_shape_and_determinism() {
        let a = generate_uniform_scheme(&[30, 30], &[1000.0, 2000.0], 7).unwrap();
        assert_eq!(a.shell_sizes(), vec![30, 30]);
        assert_eq!(a.b_values(), vec![1000.0, 2000.0]);
        for shell in a.shells() {
            for d in shell.directions() {
                assert!((d.norm() - 1.0).abs() < UNIT_TOL);
            }
        }
        let b = generate_uniform_scheme(&[30, 30], &[1000.0, 2000.0], 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn generated_energy_beats_random_configurations() {
        let s = generate_uniform_scheme(&[20], &[1000.0], 3).unwrap();
        let e = electrostatic_energy(s.shells()[0].directions());
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..100 {
            let r: Vec<_> = (0..20).map(|_| GradientDirection::random(&mut rng)).collect();
            assert!(e <= electrostatic_energy(&r));
        }
    }

    #[test]
    fn too_few_directions_rejected() {
        let err = generate_uniform_scheme(&[5], &[1000.0], 0).unwrap_err();
        assert!(err.to_string().contains("too few directions"));
    }

    #[test]
    fn uniform_subsample_full_is_identity() {
        let s = generate_uniform_scheme(&[12, 8], &[1000.0, 2000.0], 1).unwrap();
        let sel = uniform_subsample(&s, &[12, 8], 5).unwrap();
        assert_eq!(sel, SubsampleSelection::identity(&s));
    }

    #[test]
    fn uniform_pair_matches_exhaustive_search() {
        for seed in 0..20 {
            let dirs = random_shell(6, seed);
            let mut best = (f64::INFINITY, vec![]);
            for i in 0..6 {
                for j in i + 1..6 {
                    let e = pair_energy(dirs[i], dirs[j]);
                    if e < best.0 {
                        best = (e, vec![i, j]);
                    }
                }
            }
            let scheme =
                MultiShellScheme::new(vec![Shell::new(1000.0, dirs).unwrap()]).unwrap();
            let sel = uniform_subsample(&scheme, &[2], seed).unwrap();
            assert_eq!(sel.per_shell()[0], best.1, "seed {seed}");
        }
    }

    #[test]
    fn uniform_subset_beats_random_mean_and_is_fixed_point() {
        let s = generate_uniform_scheme(&[60], &[1000.0], 11).unwrap();
        let dirs = s.shells()[0].directions();
        let sel = uniform_subsample(&s, &[20], 4).unwrap();
        let e = subset_energy(dirs, &sel.per_shell()[0]);
        let mut total = 0.0;
        for seed in 0..100 {
            let r = random_subsample(&s, &[(20, 20)], seed).unwrap();
            total += subset_energy(dirs, &r.per_shell()[0]);
        }
        assert!(e <= total / 100.0);
        assert!(is_exchange_fixed_point(dirs, &sel.per_shell()[0]));
        assert_eq!(sel, uniform_subsample(&s, &[20], 4).unwrap());
    }

    #[test]
    fn uniform_subsample_rejects_bad_counts() {
        let s = generate_uniform_scheme(&[10], &[1000.0], 1).unwrap();
        assert!(uniform_subsample(&s, &[0], 0).is_err());
        assert!(uniform_subsample(&s, &[11], 0).is_err());
        assert!(uniform_subsample(&s, &[3, 3], 0).is_err());
    }

    #[test]
    fn random_subsample_forced_count() {
        let s = generate_uniform_scheme(&[90], &[1000.0], 1).unwrap();
        let sel = random_subsample(&s, &[(30, 30)], 3).unwrap();
        assert_eq!(sel.counts(), vec![30]);
        sel.validate(&s).unwrap();
    }

    #[test]
    fn random_subsample_count_frequencies() {
        let _s = generate_uniform_scheme(&[10], &[1000.0], 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut hist = [0usize; 4];
        let draws = 10_000;
        for _ in 0..draws {
            let sel = random_selection_with(&[10], &[(1, 3)], &mut rng);
            hist[sel.counts()[0]] += 1;
        }
        for c in 1..=3 {
            let f = hist[c] as f64 / draws as f64;
            assert!((f - 1.0 / 3.0).abs() < 0.02, "count {c}: {f}");
        }
    }

    #[test]
    fn random_subsample_seeds_differ() {
        // P(collision) = 1 / C(90, 30) ≈ 1e-24 for a fixed count
        let s = generate_uniform_scheme(&[90], &[1000.0], 1).unwrap();
        let a = random_subsample(&s, &[(30, 30)], 1).unwrap();
        let b = random_subsample(&s, &[(30, 30)], 2).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn random_subsample_rejects_empty_range() {
        let s = generate_uniform_scheme(&[10], &[1000.0], 1).unwrap();
        assert!(random_subsample(&s, &[(5, 4)], 0).is_err());
        assert!(random_subsample(&s, &[(0, 4)], 0).is_err());
        assert!(random_subsample(&s, &[(1, 11)], 0).is_err());
    }

    #[test]
    fn apply_selection_cases() {
        let s = generate_uniform_scheme(&[8, 9], &[1000.0, 2000.0], 2).unwrap();
        assert_eq!(apply_selection(&s, &SubsampleSelection::identity(&s)).unwrap(), s);
        let first = SubsampleSelection::new(vec![vec![0], vec![0]]);
        assert_eq!(apply_selection(&s, &first).unwrap().shell_sizes(), vec![1, 1]);
        let sel = SubsampleSelection::new(vec![vec![1, 4, 6], vec![0, 8]]);
        let sub = apply_selection(&s, &sel).unwrap();
        assert_eq!(locate_selection(&s, &sub, 1e-12).unwrap(), sel);
        let bad = SubsampleSelection::new(vec![vec![8], vec![0]]);
        assert!(apply_selection(&s, &bad).is_err());
    }

    #[test]
    fn text_format_cases() {
        let s = scheme_from_text("# comment\n0 0 1 1000\n1 0 0 1000\n0 1 0 2000\n").unwrap();
        assert_eq!(s.b_values(), vec![1000.0, 2000.0]);
        assert_eq!(s.shells()[0].directions()[0].to_array(), [0.0, 0.0, 1.0]);
        let err = scheme_from_text("0 0 1 1000\n0 0 2 1000\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        assert!(err.to_string().contains("non-unit direction"));
        assert!(matches!(
            scheme_from_text("0 0 1 1000\n0 0 x 1000").unwrap_err(),
            Error::Parse { line: 2, .. }
        ));
        assert!(scheme_from_text("0 0 1 2000\n1 0 0 1000\n").is_err());
        assert!(scheme_from_text("0 0 1 1000\n0 0 -1 1000\n").is_err());
    }

    #[test]
    fn canonical_flips_lower_hemisphere() {
        let d = GradientDirection::normalized(0.3, -0.2, -0.5).unwrap();
        assert_eq!(d.canonical(), d.neg());
        assert_eq!(d.neg().canonical(), d.neg());
        let e = GradientDirection::new(0.0, -1.0, 0.0).unwrap();
        assert_eq!(e.canonical().y, 1.0);
    }

    proptest! {
        #[test]
        fn text_round_trip_is_bit_exact(seed in 0u64..1000, n in 6usize..15) {
            let s = generate_uniform_scheme(&[n, n + 1], &[700.0, 2500.5], seed).unwrap();
            let back = scheme_from_text(&scheme_to_text(&s)).unwrap();
            prop_assert_eq!(back, s);
        }

        #[test]
        fn random_selections_are_valid(seed in any::<u64>(), lo in 1usize..20, span in 0usize..20) {
            let s = generate_uniform_scheme(&[40], &[1000.0], 5).unwrap();
            let sel = random_subsample(&s, &[(lo, lo + span)], seed).unwrap();
            prop_assert!(sel.validate(&s).is_ok());
            prop_assert!(sel.counts()[0] >= lo && sel.counts()[0] <= lo + span);
        }
    }
}
