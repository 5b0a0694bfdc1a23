//! Rigid rotor in a static bias field: `H = B N² − μ_b E_b cos θ`.
//!
//! The Hamiltonian conserves `M_N`, so each `M_N` block is a tridiagonal
//! matrix over `N = |M_N| ..= n_max` and is diagonalized separately.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::output::{CsvTable, Value};
use crate::{Error, Result};

/// Default basis cutoff, adequate for `μ_b E_b / B ≤ 10`.
pub const DEFAULT_N_MAX: u32 = 20;

/// Total population allowed in the two highest shells of a returned level.
pub const CUTOFF_POPULATION: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct RotorBasisState {
    pub n: u32,
    pub m: i32,
}

/// Basis of one `M_N` block, ordered by `N`.
pub fn block_basis(m: i32, n_max: u32) -> Vec<RotorBasisState> {
    (m.unsigned_abs()..=n_max).map(|n| RotorBasisState { n, m }).collect()
}

/// Full basis ordered by `(N, M_N)`.
pub fn basis(n_max: u32) -> Vec<RotorBasisState> {
    (0..=n_max)
        .flat_map(|n| (-(n as i32)..=n as i32).map(move |m| RotorBasisState { n, m }))
        .collect()
}

/// `⟨N+1, M| cos θ |N, M⟩`.
pub fn cos_theta_element(n: u32, m: i32) -> f64 {
    let n = n as f64;
    let m = m as f64;
    (((n + 1.0).powi(2) - m * m) / ((2.0 * n + 1.0) * (2.0 * n + 3.0))).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StarkLevel {
    /// Adiabatic label `N` (zero-field rotational quantum number).
    pub n: u32,
    /// Projection `M_N`; the label uses `|M_N|`.
    pub m: i32,
    /// Energy in units of `B`.
    pub energy: f64,
    /// Induced dipole `⟨μ_z⟩` in units of `μ_b`.
    pub induced_dipole: f64,
    /// Coefficients over [`block_basis`]`(m, n_max)`.
    pub amplitudes: Vec<f64>,
}

impl StarkLevel {
    pub fn abs_m(&self) -> u32 {
        self.m.unsigned_abs()
    }
}

fn block_hamiltonian(m: i32, field: f64, n_max: u32) -> DMatrix<f64> {
    let states = block_basis(m, n_max);
    let dim = states.len();
    let mut h = DMatrix::zeros(dim, dim);
    for (i, s) in states.iter().enumerate() {
        let n = s.n as f64;
        h[(i, i)] = n * (n + 1.0);
        if i + 1 < dim {
            let c = -field * cos_theta_element(s.n, m);
            h[(i, i + 1)] = c;
            h[(i + 1, i)] = c;
        }
    }
    h
}

fn cos_theta_expectation(m: i32, v: &DVector<f64>) -> f64 {
    let n0 = m.unsigned_abs();
    (0..v.len().saturating_sub(1))
        .map(|i| 2.0 * v[i] * v[i + 1] * cos_theta_element(n0 + i as u32, m))
        .sum()
}

/// Sorted eigenpairs of one block; eigenvector sign fixed so that the
/// largest-magnitude component is positive.
fn solve_block(m: i32, field: f64, n_max: u32) -> Vec<(f64, DVector<f64>)> {
    let eig = SymmetricEigen::new(block_hamiltonian(m, field, n_max));
    let mut pairs: Vec<(f64, DVector<f64>)> = eig
        .eigenvalues
        .iter()
        .zip(eig.eigenvectors.column_iter())
        .map(|(&e, v)| {
            let mut v = v.into_owned();
            let pivot = v.iter().copied().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
            if pivot < 0.0 {
                v.neg_mut();
            }
            (e, v)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs
}

fn check_inputs(b_const: f64, mu_b: f64, e_b: f64, n_max: u32) -> Result<f64> {
    if n_max < 4 {
        return Err(Error::invalid("n_max", "basis cutoff must be at least 4"));
    }
    if !(b_const > 0.0) || !(mu_b > 0.0) {
        return Err(Error::invalid("B/mu_b", "must be positive"));
    }
    if !(e_b >= 0.0 && e_b.is_finite()) {
        return Err(Error::invalid("E_b", "must be non-negative"));
    }
    Ok(mu_b * e_b / b_const)
}

fn make_level(m: i32, n: u32, n_max: u32, energy: f64, v: &DVector<f64>) -> Result<StarkLevel> {
    let dim = v.len();
    let top: f64 = v.iter().skip(dim.saturating_sub(2)).map(|c| c * c).sum();
    if top > CUTOFF_POPULATION {
        return Err(Error::BasisCutoff { n, m: m.unsigned_abs(), population: top });
    }
    debug_assert!(dim == (n_max - m.unsigned_abs() + 1) as usize);
    Ok(StarkLevel {
        n,
        m,
        energy,
        induced_dipole: cos_theta_expectation(m, v),
        amplitudes: v.iter().copied().collect(),
    })
}

/// Stark levels with label `N ≤ n_max / 2`, ordered by `(N, M_N)`.
///
/// Within a fixed-`M_N` block levels cannot cross, so the adiabatic label of
/// the j-th eigenvalue is `N = |M_N| + j`; [`stark_sweep`] verifies this by
/// eigenvector continuation.
pub fn stark_spectrum(b_const: f64, mu_b: f64, e_b: f64, n_max: u32) -> Result<Vec<StarkLevel>> {
    let field = check_inputs(b_const, mu_b, e_b, n_max)?;
    let n_report = n_max / 2;
    let mut levels = Vec::new();
    for m in -(n_report as i32)..=n_report as i32 {
        let pairs = solve_block(m, field, n_max);
        for (j, (e, v)) in pairs.iter().enumerate() {
            let n = m.unsigned_abs() + j as u32;
            if n > n_report {
                break;
            }
            levels.push(make_level(m, n, n_max, *e, v)?);
        }
    }
    levels.sort_by_key(|l| (l.n, l.m));
    Ok(levels)
}

/// One field value of a sweep.
#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    /// Bias field in units of `B/μ_b`.
    pub field: f64,
    pub levels: Vec<StarkLevel>,
}

const MIN_OVERLAP: f64 = 0.9;
const MAX_REFINE_DEPTH: u32 = 24;

/// Assign labels at `field` by maximal overlap with the previous eigenvectors.
fn continue_labels(
    prev: &[(u32, DVector<f64>)],
    next: &[(f64, DVector<f64>)],
) -> Option<Vec<u32>> {
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for (i, (_, pv)) in prev.iter().enumerate() {
        for (j, (_, nv)) in next.iter().enumerate() {
            candidates.push((pv.dot(nv).abs(), i, j));
        }
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut labels = vec![None; next.len()];
    let mut used = vec![false; prev.len()];
    for (ov, i, j) in candidates {
        if used[i] || labels[j].is_some() {
            continue;
        }
        if ov < MIN_OVERLAP {
            return None;
        }
        used[i] = true;
        labels[j] = Some(prev[i].0);
    }
    labels.into_iter().collect()
}

fn track_block(
    m: i32,
    from: f64,
    to: f64,
    n_max: u32,
    prev: &[(u32, DVector<f64>)],
    depth: u32,
) -> Result<Vec<(u32, f64, DVector<f64>)>> {
    let next = solve_block(m, to, n_max);
    if let Some(labels) = continue_labels(prev, &next) {
        return Ok(labels
            .into_iter()
            .zip(next)
            .map(|(l, (e, v))| (l, e, v))
            .collect());
    }
    if depth >= MAX_REFINE_DEPTH {
        return Err(Error::invalid("fields", "label continuation failed to resolve"));
    }
    let mid = 0.5 * (from + to);
    let half = track_block(m, from, mid, n_max, prev, depth + 1)?;
    let carried: Vec<(u32, DVector<f64>)> = half.into_iter().map(|(l, _, v)| (l, v)).collect();
    track_block(m, mid, to, n_max, &carried, depth + 1)
}

/// Stark spectrum along increasing fields (units of `B/μ_b`), labeled by
/// eigenvector-overlap continuation from zero field. Grid steps are refined
/// until successive overlaps exceed 0.9.
pub fn stark_sweep(fields: &[f64], n_max: u32) -> Result<Vec<SweepPoint>> {
    if fields.iter().any(|f| !(*f >= 0.0 && f.is_finite())) {
        return Err(Error::invalid("fields", "must be finite and non-negative"));
    }
    if fields.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid("fields", "must be ascending"));
    }
    check_inputs(1.0, 1.0, 0.0, n_max)?;
    let n_report = n_max / 2;
    let mut out: Vec<SweepPoint> = fields
        .iter()
        .map(|&field| SweepPoint { field, levels: Vec::new() })
        .collect();
    for m in -(n_report as i32)..=n_report as i32 {
        let start = solve_block(m, 0.0, n_max);
        let mut state: Vec<(u32, DVector<f64>)> = start
            .into_iter()
            .enumerate()
            .map(|(j, (_, v))| (m.unsigned_abs() + j as u32, v))
            .collect();
        let mut at = 0.0;
        for point in out.iter_mut() {
            let tracked = track_block(m, at, point.field, n_max, &state, 0)?;
            for (n, e, v) in &tracked {
                if *n <= n_report {
                    point.levels.push(make_level(m, *n, n_max, *e, v)?);
                }
            }
            state = tracked.into_iter().map(|(l, _, v)| (l, v)).collect();
            at = point.field;
        }
    }
    for point in &mut out {
        point.levels.sort_by_key(|l| (l.n, l.m));
    }
    Ok(out)
}

/// CSV with one row per field and `(N, |M_N|)` label; `±M_N` are degenerate
/// and only `M_N ≥ 0` is written.
pub fn sweep_table(points: &[SweepPoint]) -> CsvTable {
    let mut table = CsvTable::new(&["E_b", "label_N", "label_absM", "energy", "dipole"]);
    for p in points {
        for l in p.levels.iter().filter(|l| l.m >= 0) {
            table.push(vec![
                Value::F(p.field),
                Value::U(l.n as u64),
                Value::U(l.abs_m() as u64),
                Value::F(l.energy),
                Value::F(l.induced_dipole),
            ]);
        }
    }
    table
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Normalized associated Legendre function Θ_N^M(x) with
    /// ∫ Θ² dx = 1 over [-1, 1], by upward recursion in N.
    fn theta(n: u32, m: u32, x: f64) -> f64 {
        let mut pmm = 1.0;
        let s = (1.0 - x * x).sqrt();
        for k in 1..=m {
            pmm *= -((2 * k - 1) as f64) * s;
        }
        let norm = |l: u32| -> f64 {
            let mut ratio = 1.0;
            for k in (l - m + 1)..=(l + m) {
                ratio *= k as f64;
            }
            ((2 * l + 1) as f64 / 2.0 / ratio).sqrt()
        };
        if n == m {
            return pmm * norm(m);
        }
        let mut p_prev = pmm;
        let mut p = x * (2 * m + 1) as f64 * pmm;
        for l in (m + 2)..=n {
            let next = (x * (2 * l - 1) as f64 * p - (l + m - 1) as f64 * p_prev) / (l - m) as f64;
            p_prev = p;
            p = next;
        }
        p * norm(n)
    }

    /// Gauss-Legendre nodes and weights by Newton iteration.
    fn gauss_legendre(order: usize) -> Vec<(f64, f64)> {
        (1..=order)
            .map(|i| {
                let mut x = (std::f64::consts::PI * (i as f64 - 0.25) / (order as f64 + 0.5)).cos();
                let mut dp = 0.0;
                for _ in 0..100 {
                    let (mut p0, mut p1) = (1.0, x);
                    for k in 2..=order {
                        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                        p0 = p1;
                        p1 = p2;
                    }
                    dp = order as f64 * (x * p1 - p0) / (x * x - 1.0);
                    let dx = p1 / dp;
                    x -= dx;
                    if dx.abs() < 1e-16 {
                        break;
                    }
                }
                (x, 2.0 / ((1.0 - x * x) * dp * dp))
            })
            .collect()
    }

    #[test]
    fn cos_theta_matches_quadrature() {
        let nodes = gauss_legendre(64);
        for n in 0..10u32 {
            for m in 0..=n {
                let quad: f64 = nodes
                    .iter()
                    .map(|&(x, w)| w * theta(n + 1, m, x) * x * theta(n, m, x))
                    .sum();
                assert_relative_eq!(quad.abs(), cos_theta_element(n, m as i32), max_relative = 1e-12);
                assert_relative_eq!(cos_theta_element(n, m as i32), cos_theta_element(n, -(m as i32)));
            }
        }
        assert_relative_eq!(cos_theta_element(0, 0), 1.0 / 3f64.sqrt());
    }

    #[test]
    fn zero_field_is_rigid_rotor() {
        let levels = stark_spectrum(1.0, 1.0, 0.0, 20).unwrap();
        assert_eq!(levels.len(), (0..=10).map(|n| 2 * n + 1).sum::<usize>());
        for l in &levels {
            assert_relative_eq!(l.energy, (l.n * (l.n + 1)) as f64, epsilon = 1e-12);
            assert!(l.induced_dipole.abs() < 1e-12);
        }
    }

    #[test]
    fn weak_field_perturbation_theory() {
        let field = 0.01;
        let levels = stark_spectrum(1.0, 1.0, field, 20).unwrap();
        let ground = &levels[0];
        assert_eq!((ground.n, ground.m), (0, 0));
        // second order: E = -f²/6, dipole = f/3
        let oracle = field / 3.0;
        assert!((ground.induced_dipole - oracle).abs() / oracle < 1e-3);
        assert_relative_eq!(ground.energy, -field * field / 6.0, max_relative = 1e-3);
    }

    #[test]
    fn ground_dipole_saturates_monotonically() {
        let mut last = 0.0;
        for k in 1..=40 {
            let f = 0.25 * k as f64;
            let d = stark_spectrum(1.0, 1.0, f, 20).unwrap()[0].induced_dipole;
            assert!(d > last && d < 1.0);
            last = d;
        }
        assert!(last > 0.7);
    }

    #[test]
    fn hellmann_feynman_matches_finite_difference() {
        let h = 1e-4;
        for f in [0.5, 2.0, 5.0, 9.0] {
            let mid = stark_spectrum(1.0, 1.0, f, 20).unwrap();
            let up = stark_spectrum(1.0, 1.0, f + h, 20).unwrap();
            let dn = stark_spectrum(1.0, 1.0, f - h, 20).unwrap();
            for ((l, u), d) in mid.iter().zip(&up).zip(&dn) {
                let fd = -(u.energy - d.energy) / (2.0 * h);
                let tol = 1e-6 * l.induced_dipole.abs().max(1e-2);
                assert!((fd - l.induced_dipole).abs() < tol, "{f} {:?}: {fd} vs {}", (l.n, l.m), l.induced_dipole);
            }
        }
    }

    #[test]
    fn plus_minus_m_degenerate_and_normalized() {
        let levels = stark_spectrum(1.0, 1.0, 7.0, 20).unwrap();
        for l in &levels {
            let norm: f64 = l.amplitudes.iter().map(|c| c * c).sum();
            assert!((norm - 1.0).abs() < 1e-12);
            assert!(l.induced_dipole.abs() <= 1.0);
            if l.m > 0 {
                let partner = levels.iter().find(|o| o.n == l.n && o.m == -l.m).unwrap();
                assert!((partner.energy - l.energy).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cutoff_convergence() {
        let small = stark_spectrum(1.0, 1.0, 10.0, 20).unwrap();
        let large = stark_spectrum(1.0, 1.0, 10.0, 40).unwrap();
        for l in &small {
            let o = large.iter().find(|o| o.n == l.n && o.m == l.m).unwrap();
            assert!((o.energy - l.energy).abs() <= 1e-10 * l.energy.abs().max(1.0));
        }
    }

    #[test]
    fn small_cutoff_rejected() {
        assert!(stark_spectrum(1.0, 1.0, 1.0, 3).is_err());
        let err = stark_spectrum(1.0, 1.0, 60.0, 6).unwrap_err();
        assert!(matches!(err, Error::BasisCutoff { .. }));
    }

    #[test]
    fn continuation_labels_agree_with_block_ordering() {
        let fields: Vec<f64> = (0..=20).map(|k| 0.5 * k as f64).collect();
        let sweep = stark_sweep(&fields, 20).unwrap();
        for p in &sweep {
            let direct = stark_spectrum(1.0, 1.0, p.field, 20).unwrap();
            assert_eq!(p.levels.len(), direct.len());
            for (a, b) in p.levels.iter().zip(&direct) {
                assert_eq!((a.n, a.m), (b.n, b.m));
                assert_relative_eq!(a.energy, b.energy, epsilon = 1e-12);
            }
        }
        let table = sweep_table(&sweep);
        assert_eq!(table.rows.len(), 21 * (0..=10).map(|n| n + 1).sum::<usize>());
    }
}
