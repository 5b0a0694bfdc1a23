//! Spin-phonon couplings and the polaron-transformed spin model.
//!
//! Every molecule carries the state-dependent moment `μ₀(𝟙 + ε σ_w)`. After
//! the rotating-wave step the Hamiltonian is
//! `Σ_k Δ_k a†a + (ε²/4) Σ_{i≠j} v_ij σσ + (ε/2) Σ_{k,i} λ_k^i σ_i (a + a†)`,
//! and the Lang-Firsov transformation leaves the pair couplings
//! `U_ij = (ε²/2) v_ij − (ε²/2) Σ_k λ_k^i λ_k^j / Δ_k` (coefficient of
//! `σ_i σ_j` per unordered pair) and the shift `E_p = −(ε²/4) Σ_{i,k} (λ_k^i)²/Δ_k`.

use nalgebra::{DMatrix, DVector, SymmetricEigen, Vector3};
use serde::Serialize;

use crate::crystal::{pair_terms, EquilibriumResult, Geometry, Layer};
use crate::output::CsvTable;
use crate::phonons::{Branch, PhononSpectrum};
use crate::{Error, Result};

/// Detunings closer than this to a mode are rejected.
pub const RESONANCE_GUARD: f64 = 1e-9;
/// Modes below this frequency (relative to the largest) count as zero modes.
const ZERO_MODE_RELATIVE: f64 = 1e-7;
/// `≪` in the rotating-wave condition.
const RWA_MARGIN: f64 = 0.1;

/// Geometry-derived couplings plus the drive-dependent detunings.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingTable {
    /// Spectrum index of each retained mode.
    pub modes: Vec<usize>,
    pub frequencies: Vec<f64>,
    /// `√(ħ/2mω_k)`.
    pub zero_point: Vec<f64>,
    /// `κ_k^{ij}` per retained mode, symmetric with empty diagonal.
    pub kappa: Vec<DMatrix<f64>>,
    /// `λ_k^i`, rows = retained modes, columns = molecules.
    pub lambda: DMatrix<f64>,
    /// Image-summed `v_dd(r_ij)`, symmetric with empty diagonal.
    pub vdd: DMatrix<f64>,
    /// `ζ_k^i` per retained mode, `3n` entries each.
    pub zeta: Vec<DVector<f64>>,
    pub omega0: f64,
    /// `Δ_k = ω_k − ω₀`.
    pub detunings: Vec<f64>,
    pub n_molecules: usize,
}

impl CouplingTable {
    pub fn set_drive(&mut self, omega0: f64) {
        self.omega0 = omega0;
        self.detunings = self.frequencies.iter().map(|w| w - omega0).collect();
    }

    pub fn with_drive(&self, omega0: f64) -> Self {
        let mut t = self.clone();
        t.set_drive(omega0);
        t
    }

    /// Position of spectrum mode `k` among the retained modes.
    pub fn mode_position(&self, spectrum_index: usize) -> Option<usize> {
        self.modes.iter().position(|&m| m == spectrum_index)
    }

    fn check_resonance(&self) -> Result<()> {
        for (q, &d) in self.detunings.iter().enumerate() {
            if d.abs() < RESONANCE_GUARD {
                return Err(Error::Resonance { mode: self.modes[q], detuning: d });
            }
        }
        Ok(())
    }

    /// `λ_k^i` rows as a CSV (mode, molecule, lambda).
    pub fn lambda_csv(&self) -> CsvTable {
        let mut t = CsvTable::new(&["k", "omega", "molecule", "lambda"]);
        for (q, &k) in self.modes.iter().enumerate() {
            for i in 0..self.n_molecules {
                t.push(vec![k.into(), self.frequencies[q].into(), i.into(), self.lambda[(q, i)].into()]);
            }
        }
        t
    }

    /// `κ_k^{ij}` for `i < j`, skipping exact zeros.
    pub fn kappa_csv(&self) -> CsvTable {
        let mut t = CsvTable::new(&["k", "i", "j", "kappa"]);
        for (q, &k) in self.modes.iter().enumerate() {
            for i in 0..self.n_molecules {
                for j in i + 1..self.n_molecules {
                    let v = self.kappa[q][(i, j)];
                    if v != 0.0 {
                        t.push(vec![k.into(), i.into(), j.into(), v.into()]);
                    }
                }
            }
        }
        t
    }
}

/// `κ_k^{ij} = √(ħ/2mω_k) v'_dd(r⁰_ij)·(ζ_k^i − ζ_k^j)` and `λ_k^i = Σ_j κ_k^{ij}`.
///
/// Zero-frequency modes are dropped when they carry no relative motion
/// (uniform translation); any other zero mode is an error.
pub fn spin_phonon_couplings(spectrum: &PhononSpectrum, eq: &EquilibriumResult) -> Result<CouplingTable> {
    let n = eq.geometry.len();
    let pairs = pair_terms(&eq.geometry)?;
    let mut vdd = DMatrix::zeros(n, n);
    for p in &pairs {
        vdd[(p.i, p.j)] = p.value;
        vdd[(p.j, p.i)] = p.value;
    }
    let top = spectrum.frequencies.iter().copied().fold(0.0, f64::max);
    let mut modes = Vec::new();
    let mut frequencies = Vec::new();
    let mut zero_point = Vec::new();
    let mut kappa = Vec::new();
    let mut zeta = Vec::new();
    let mut lambda_rows: Vec<Vec<f64>> = Vec::new();
    for k in 0..spectrum.len() {
        let w = spectrum.frequencies[k];
        let z = spectrum.modes.column(k).into_owned();
        let amp = |i: usize| Vector3::new(z[3 * i], z[3 * i + 1], z[3 * i + 2]);
        if w <= ZERO_MODE_RELATIVE * top {
            let relative = pairs.iter().map(|p| (amp(p.i) - amp(p.j)).norm()).fold(0.0, f64::max);
            if relative > 1e-8 {
                return Err(Error::ZeroFrequencyMode { mode: k });
            }
            continue;
        }
        let l = spectrum.zero_point_length(k);
        let mut kap = DMatrix::zeros(n, n);
        for p in &pairs {
            let c = l * p.grad.dot(&(amp(p.i) - amp(p.j)));
            kap[(p.i, p.j)] = c;
            kap[(p.j, p.i)] = c;
        }
        lambda_rows.push((0..n).map(|i| kap.row(i).sum()).collect());
        modes.push(k);
        frequencies.push(w);
        zero_point.push(l);
        kappa.push(kap);
        zeta.push(z);
    }
    let lambda = DMatrix::from_fn(modes.len(), n, |q, i| lambda_rows[q][i]);
    let detunings = frequencies.clone();
    Ok(CouplingTable {
        modes,
        frequencies,
        zero_point,
        kappa,
        lambda,
        vdd,
        zeta,
        omega0: 0.0,
        detunings,
        n_molecules: n,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveSpinModel {
    pub epsilon: f64,
    /// Total pair coefficients `U_ij`.
    pub u: DMatrix<f64>,
    /// Direct part `(ε²/2) v_ij`.
    pub direct: DMatrix<f64>,
    /// Phonon-mediated part.
    pub pmi: DMatrix<f64>,
    /// `B_eff,i = Σ_{j≠i} 2ε v_ij`.
    pub b_eff: Vec<f64>,
    /// Polaron shift.
    pub e_p: f64,
    /// `max(|v_ij|, |κ|) ≤ 0.1 ω₀/ε`.
    pub rwa_ok: bool,
    pub rwa_ratio: f64,
}

pub fn effective_spin_model(table: &CouplingTable, epsilon: f64) -> Result<EffectiveSpinModel> {
    table.check_resonance()?;
    Ok(spin_model_at(table, &table.detunings, table.omega0, epsilon))
}

fn spin_model_at(table: &CouplingTable, detunings: &[f64], omega0: f64, epsilon: f64) -> EffectiveSpinModel {
    let n = table.n_molecules;
    let e2 = epsilon * epsilon;
    let direct = &table.vdd * (0.5 * e2);
    let mut pmi = DMatrix::zeros(n, n);
    let mut e_p = 0.0;
    for (q, &d) in detunings.iter().enumerate() {
        let row = table.lambda.row(q);
        for i in 0..n {
            e_p -= 0.25 * e2 * row[i] * row[i] / d;
            for j in 0..n {
                if i != j {
                    pmi[(i, j)] -= 0.5 * e2 * row[i] * row[j] / d;
                }
            }
        }
    }
    let b_eff = (0..n).map(|i| 2.0 * epsilon * table.vdd.row(i).sum()).collect();
    let max_v = table.vdd.amax();
    let max_k = table.kappa.iter().map(|k| k.amax()).fold(0.0, f64::max);
    let rwa_ratio = if omega0 > 0.0 { max_v.max(max_k) * epsilon / omega0 } else { f64::INFINITY };
    EffectiveSpinModel {
        epsilon,
        u: &direct + &pmi,
        direct,
        pmi,
        b_eff,
        e_p,
        rwa_ok: rwa_ratio <= RWA_MARGIN,
        rwa_ratio,
    }
}

impl EffectiveSpinModel {
    pub fn to_csv(&self) -> CsvTable {
        let mut t = CsvTable::new(&["i", "j", "direct", "pmi", "u"]);
        let n = self.u.nrows();
        for i in 0..n {
            for j in i + 1..n {
                t.push(vec![
                    i.into(),
                    j.into(),
                    self.direct[(i, j)].into(),
                    self.pmi[(i, j)].into(),
                    self.u[(i, j)].into(),
                ]);
            }
        }
        t
    }
}

/// Nearest-neighbour pairs whose relative displacement is bounded: crystal
/// neighbours along the chain (wrapping when periodic) and marker–target.
pub fn adjacent_pairs(geom: &Geometry) -> Vec<(usize, usize)> {
    let mut crystal: Vec<usize> = (0..geom.len()).filter(|&i| geom.layers[i] == Layer::Crystal).collect();
    crystal.sort_by(|&a, &b| geom.positions[a].x.total_cmp(&geom.positions[b].x));
    let mut out: Vec<(usize, usize)> = crystal.windows(2).map(|w| (w[0], w[1])).collect();
    if geom.periodic() && crystal.len() > 2 {
        out.push((crystal[crystal.len() - 1], crystal[0]));
    }
    if let (Some(m), Some(t)) = (geom.marker(), geom.target()) {
        out.push((m, t));
    }
    out
}

/// Relative polaron displacement bound
/// `max_{(p,q)} |Σ_k (ζ_k^p − ζ_k^q) √(ħ/2mω_k) Σ_i |ελ_k^i/(2ħΔ_k)||`.
pub fn displacement_bound(table: &CouplingTable, epsilon: f64, pairs: &[(usize, usize)]) -> Result<f64> {
    table.check_resonance()?;
    Ok(BoundKernel::new(table, pairs).eval(epsilon, &table.detunings))
}

/// Drive-independent pieces of the displacement bound.
struct BoundKernel {
    /// `√(ħ/2mω_k) Σ_i |λ_k^i|`.
    strength: Vec<f64>,
    /// `ζ_k^p − ζ_k^q` per pair, then per mode.
    diffs: Vec<Vec<Vector3<f64>>>,
}

impl BoundKernel {
    fn new(table: &CouplingTable, pairs: &[(usize, usize)]) -> Self {
        let strength = (0..table.modes.len())
            .map(|q| table.zero_point[q] * table.lambda.row(q).iter().map(|l| l.abs()).sum::<f64>())
            .collect();
        let diffs = pairs
            .iter()
            .map(|&(p, r)| {
                table
                    .zeta
                    .iter()
                    .map(|z| Vector3::new(z[3 * p] - z[3 * r], z[3 * p + 1] - z[3 * r + 1], z[3 * p + 2] - z[3 * r + 2]))
                    .collect()
            })
            .collect();
        BoundKernel { strength, diffs }
    }

    fn eval(&self, epsilon: f64, detunings: &[f64]) -> f64 {
        let weights: Vec<f64> =
            self.strength.iter().zip(detunings).map(|(s, d)| s * epsilon / (2.0 * d.abs())).collect();
        self.diffs
            .iter()
            .map(|pair| pair.iter().zip(&weights).fold(Vector3::zeros(), |acc, (dz, w)| acc + dz * *w).norm())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DetuningSolution {
    pub omega0: f64,
    /// `Δ_R = ω_R − ω₀`.
    pub delta_r: f64,
    pub delta_u: f64,
    /// Distance to the closest other mode, `min_{k≠R} |ω_k − ω_R|`.
    pub sparsity: f64,
}

/// Drive frequency putting the displacement bound at `target` with
/// `sign(Δ_R) = sign`, approaching the resonant mode as closely as allowed.
///
/// The drive never crosses another mode: the search runs from the resonance
/// out to the neighbouring mode (or far beyond the top of the spectrum).
pub fn optimize_detuning(
    table: &CouplingTable,
    epsilon: f64,
    resonant: usize,
    target: f64,
    sign: i8,
    pairs: &[(usize, usize)],
) -> Result<DetuningSolution> {
    let sign_f = f64::from(sign.signum());
    if sign == 0 {
        return Err(Error::invalid("sign", "must be ±1"));
    }
    let infeasible = Error::Infeasible { target, sign };
    if !(target > 0.0) {
        return Err(infeasible);
    }
    let r = table
        .mode_position(resonant)
        .ok_or_else(|| Error::invalid("resonant_mode", format!("mode {resonant} carries no coupling")))?;
    let w_r = table.frequencies[r];
    let sparsity = table
        .frequencies
        .iter()
        .enumerate()
        .filter(|&(q, _)| q != r)
        .map(|(_, w)| (w - w_r).abs())
        .fold(f64::INFINITY, f64::min);
    // Δ_R > 0 puts the drive below ω_R: the limit is the next lower mode or 0
    let limit = if sign > 0 {
        let below = table.frequencies.iter().filter(|&&w| w < w_r).fold(0.0, |a: f64, &w| a.max(w));
        w_r - below
    } else {
        let above = table.frequencies.iter().filter(|&&w| w > w_r).fold(f64::INFINITY, |a: f64, &w| a.min(w));
        if above.is_finite() { above - w_r } else { 1e3 * w_r }
    };
    let kernel = BoundKernel::new(table, pairs);
    let mut detunings = vec![0.0; table.frequencies.len()];
    let mut eval = |x: f64| -> Result<f64> {
        let omega0 = w_r - sign_f * x;
        for (q, (d, w)) in detunings.iter_mut().zip(&table.frequencies).enumerate() {
            *d = w - omega0;
            if d.abs() < RESONANCE_GUARD {
                return Err(Error::Resonance { mode: table.modes[q], detuning: *d });
            }
        }
        Ok(kernel.eval(epsilon, &detunings))
    };
    // scan outward on a log grid for the first admissible detuning
    let x_min = (10.0 * RESONANCE_GUARD).max(1e-12 * w_r);
    let x_max = limit * (1.0 - 1e-9);
    if !(x_max > x_min) {
        return Err(infeasible);
    }
    let steps = 400;
    let ratio = (x_max / x_min).powf(1.0 / steps as f64);
    let mut lo = x_min;
    if eval(lo)? <= target {
        return Err(Error::invalid("target", "bound met at the resonance guard; coupling vanishes"));
    }
    let mut hi = None;
    for s in 1..=steps {
        let x = (x_min * ratio.powi(s)).min(x_max);
        if eval(x)? <= target {
            hi = Some(x);
            break;
        }
        lo = x;
    }
    let mut hi = hi.ok_or(infeasible)?;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if eval(mid)? <= target {
            hi = mid;
        } else {
            lo = mid;
        }
        if (hi - lo) <= 1e-14 * hi {
            break;
        }
    }
    let delta_u = eval(hi)?;
    debug_assert!(delta_u <= target);
    Ok(DetuningSolution { omega0: w_r - sign_f * hi, delta_r: sign_f * hi, delta_u, sparsity })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GateMetrics {
    pub u0: f64,
    pub u_res: f64,
    /// `|U₀|/U_res`, infinite when `U_res = 0`.
    pub ratio: f64,
    /// Pair attaining `U_res`.
    pub u_res_pair: (usize, usize),
}

impl GateMetrics {
    /// Time to accumulate phase `φ` under `U₀ σσ`.
    pub fn gate_time(&self, phi: f64) -> f64 {
        phi / self.u0.abs()
    }
}

pub fn gate_metrics(model: &EffectiveSpinModel, marker: usize, target: usize) -> GateMetrics {
    let n = model.u.nrows();
    let u0 = model.u[(marker, target)];
    let mut u_res: f64 = 0.0;
    let mut pair = (0, 0);
    for i in 0..n {
        for j in i + 1..n {
            let is_gate = (i == marker && j == target) || (i == target && j == marker);
            if !is_gate && model.u[(i, j)].abs() > u_res {
                u_res = model.u[(i, j)].abs();
                pair = (i, j);
            }
        }
    }
    let ratio = if u_res == 0.0 { f64::INFINITY } else { u0.abs() / u_res };
    GateMetrics { u0, u_res, ratio, u_res_pair: pair }
}

/// Closed-form estimates (magnitudes, in `D/a³`) for both sign choices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnalyticGate {
    pub u0_plus: f64,
    pub u0_minus: f64,
    pub u_res_plus: f64,
    pub u_res_minus: f64,
}

/// `U₀ ≈ ε²/b³ ± 3εΔū/b⁴`, `U_res ≈ ε²/2 ± εΔū (3/4)(2b³ − 3b)/(1 + b²)^{7/2}`.
pub fn analytic_gate_estimates(epsilon: f64, b_over_a: f64, delta_u_bar: f64) -> AnalyticGate {
    let b = b_over_a;
    let direct0 = epsilon * epsilon / b.powi(3);
    let pm0 = 3.0 * epsilon * delta_u_bar / b.powi(4);
    let direct_res = 0.5 * epsilon * epsilon;
    let pm_res = epsilon * delta_u_bar * 0.75 * (2.0 * b.powi(3) - 3.0 * b) / (1.0 + b * b).powf(3.5);
    AnalyticGate {
        u0_plus: direct0 + pm0,
        u0_minus: direct0 - pm0,
        u_res_plus: direct_res + pm_res,
        u_res_minus: direct_res - pm_res,
    }
}

/// Enhanced two-molecule PMI magnitude `3εΔū/2` in `D/a³`.
pub fn enhanced_pmi(epsilon: f64, delta_u_bar: f64) -> f64 {
    1.5 * epsilon * delta_u_bar
}

/// `σσ` coefficient from dense diagonalization of two spins and one mode,
/// `H = Δ a†a + (ε/2) Σ_i λ^i σ_i (a + a†) + J σ₁σ₂`.
///
/// For each spin configuration the state continuously connected to the
/// phonon vacuum is picked by overlap; the coefficient is
/// `(E↑↑ + E↓↓ − E↑↓ − E↓↑)/4`. Doubling the cutoff must move it by less
/// than 1e-8.
pub fn polaron_oracle(lambda: [f64; 2], epsilon: f64, detuning: f64, direct: f64, fock_cutoff: usize) -> Result<f64> {
    if fock_cutoff < 20 {
        return Err(Error::invalid("fock_cutoff", "need at least 20 phonon states"));
    }
    if detuning.abs() < RESONANCE_GUARD {
        return Err(Error::Resonance { mode: 0, detuning });
    }
    let coarse = oracle_at(lambda, epsilon, detuning, direct, fock_cutoff);
    let fine = oracle_at(lambda, epsilon, detuning, direct, 2 * fock_cutoff);
    let shift = (fine - coarse).abs();
    if shift > 1e-8 {
        return Err(Error::FockCutoff { shift });
    }
    Ok(fine)
}

fn oracle_at(lambda: [f64; 2], epsilon: f64, detuning: f64, direct: f64, cutoff: usize) -> f64 {
    let nb = cutoff + 1;
    let dim = 4 * nb;
    let spins = [[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]];
    let idx = |s: usize, n: usize| s * nb + n;
    let mut h = DMatrix::zeros(dim, dim);
    for (s, sp) in spins.iter().enumerate() {
        let g = 0.5 * epsilon * (lambda[0] * sp[0] + lambda[1] * sp[1]);
        for n in 0..nb {
            h[(idx(s, n), idx(s, n))] = detuning * n as f64 + direct * sp[0] * sp[1];
            if n + 1 < nb {
                let c = g * ((n + 1) as f64).sqrt();
                h[(idx(s, n), idx(s, n + 1))] = c;
                h[(idx(s, n + 1), idx(s, n))] = c;
            }
        }
    }
    let eig = SymmetricEigen::new(h);
    let energy = |s: usize| {
        let row = idx(s, 0);
        let best = (0..dim)
            .max_by(|&a, &b| eig.eigenvectors[(row, a)].abs().total_cmp(&eig.eigenvectors[(row, b)].abs()))
            .unwrap_or(0);
        eig.eigenvalues[best]
    };
    (energy(0) + energy(3) - energy(1) - energy(2)) / 4.0
}

/// Which sign of `Δ_R` to use for the gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SignChoice {
    /// Phonon-mediated and direct marker–target couplings add up.
    Matched,
    /// They partially cancel.
    Opposed,
}

impl std::str::FromStr for SignChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "matched" => Ok(SignChoice::Matched),
            "opposed" => Ok(SignChoice::Opposed),
            other => Err(Error::invalid("sign", format!("unknown sign choice `{other}`"))),
        }
    }
}

/// Resonant-mode choice for marker gates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ResonantMode {
    LocalZ,
    LocalX,
    LocalY,
    Index(usize),
}

impl std::str::FromStr for ResonantMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "local_z" => Ok(ResonantMode::LocalZ),
            "local_x" => Ok(ResonantMode::LocalX),
            "local_y" => Ok(ResonantMode::LocalY),
            other => other
                .parse()
                .map(ResonantMode::Index)
                .map_err(|_| Error::invalid("resonant_mode", format!("expected local_x|y|z or a mode index, got `{other}`"))),
        }
    }
}

impl ResonantMode {
    pub fn resolve(self, spectrum: &PhononSpectrum) -> Result<usize> {
        let want = match self {
            ResonantMode::Index(k) => {
                return if k < spectrum.len() {
                    Ok(k)
                } else {
                    Err(Error::invalid("resonant_mode", format!("mode {k} out of range")))
                }
            }
            ResonantMode::LocalZ => Branch::LocalZ,
            ResonantMode::LocalX => Branch::LocalX,
            ResonantMode::LocalY => Branch::LocalY,
        };
        (0..spectrum.len())
            .find(|&k| spectrum.branch[k] == want)
            .ok_or_else(|| Error::invalid("resonant_mode", format!("no {} mode in spectrum", want.as_str())))
    }
}

/// Summary exported per gate evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GateSummary {
    #[serde(rename = "U0")]
    pub u0: f64,
    #[serde(rename = "U_res")]
    pub u_res: f64,
    pub ratio: f64,
    pub omega0: f64,
    pub delta_r: f64,
    pub delta_u: f64,
    #[serde(rename = "E_p")]
    pub e_p: f64,
    pub rwa_ok: bool,
}

/// Evaluated gate: drive solution, model and metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct GateEvaluation {
    pub solution: DetuningSolution,
    pub model: EffectiveSpinModel,
    pub metrics: GateMetrics,
}

impl GateEvaluation {
    pub fn summary(&self) -> GateSummary {
        GateSummary {
            u0: self.metrics.u0,
            u_res: self.metrics.u_res,
            ratio: self.metrics.ratio,
            omega0: self.solution.omega0,
            delta_r: self.solution.delta_r,
            delta_u: self.solution.delta_u,
            e_p: self.model.e_p,
            rwa_ok: self.model.rwa_ok,
        }
    }
}

/// Marker gate on a converged geometry; the couplings do not depend on `ε`
/// or the drive, so one system serves a whole `(ε, Δū)` sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkerGate {
    pub table: CouplingTable,
    pub marker: usize,
    pub target: usize,
    pub resonant: usize,
    pub pairs: Vec<(usize, usize)>,
}

impl MarkerGate {
    pub fn new(spectrum: &PhononSpectrum, eq: &EquilibriumResult, resonant: ResonantMode) -> Result<Self> {
        let geom = &eq.geometry;
        let marker = geom.marker().ok_or_else(|| Error::invalid("marker", "geometry has no marker"))?;
        let target = geom.target().ok_or_else(|| Error::invalid("marker", "no target below marker"))?;
        Ok(Self {
            table: spin_phonon_couplings(spectrum, eq)?,
            marker,
            target,
            resonant: resonant.resolve(spectrum)?,
            pairs: adjacent_pairs(geom),
        })
    }

    /// Evaluate at one sign of `Δ_R`.
    pub fn evaluate_signed(&self, epsilon: f64, delta_u_bar: f64, sign: i8) -> Result<GateEvaluation> {
        let solution = optimize_detuning(&self.table, epsilon, self.resonant, delta_u_bar, sign, &self.pairs)?;
        let detunings: Vec<f64> = self.table.frequencies.iter().map(|w| w - solution.omega0).collect();
        let model = spin_model_at(&self.table, &detunings, solution.omega0, epsilon);
        let metrics = gate_metrics(&model, self.marker, self.target);
        Ok(GateEvaluation { solution, model, metrics })
    }

    pub fn evaluate(&self, epsilon: f64, delta_u_bar: f64, choice: SignChoice) -> Result<GateEvaluation> {
        // PMI on (m, t) goes as −λ^m λ^t / Δ_R; pick Δ_R's sign accordingly
        let r = self.table.mode_position(self.resonant).expect("resolved mode has couplings");
        let lm = self.table.lambda[(r, self.marker)];
        let lt = self.table.lambda[(r, self.target)];
        let direct = self.table.vdd[(self.marker, self.target)];
        let matched_sign = if lm * lt * direct < 0.0 { 1 } else { -1 };
        let sign = match choice {
            SignChoice::Matched => matched_sign,
            SignChoice::Opposed => -matched_sign,
        };
        self.evaluate_signed(epsilon, delta_u_bar, sign)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crystal::{two_molecule_equilibrium, unit_spacing_nu};
    use crate::params::{Boundary, ModelParams};
    use crate::phonons::{build_dynamical_matrix, normal_modes};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_molecule() -> (CouplingTable, PhononSpectrum) {
        let p = ModelParams {
            n_molecules: 2,
            boundary: Boundary::Harmonic,
            omega_long: Some(unit_spacing_nu(30.0)),
            ..Default::default()
        };
        let eq = two_molecule_equilibrium(&p).unwrap();
        let s = normal_modes(&build_dynamical_matrix(&eq, p.mass()).unwrap()).unwrap();
        (spin_phonon_couplings(&s, &eq).unwrap(), s)
    }

    fn breathing(s: &PhononSpectrum) -> usize {
        let nu = unit_spacing_nu(30.0);
        (0..s.len()).find(|&k| (s.frequencies[k] - 5f64.sqrt() * nu).abs() < 1e-8).unwrap()
    }

    #[test]
    fn only_breathing_mode_couples() {
        let (t, s) = two_molecule();
        let br = breathing(&s);
        for (q, &k) in t.modes.iter().enumerate() {
            for i in 0..2 {
                let l = t.lambda[(q, i)];
                if k == br {
                    // λ = 3√2 ℓ_R on both molecules
                    assert_relative_eq!(l, 3.0 * 2f64.sqrt() * t.zero_point[q], max_relative = 1e-8);
                } else {
                    assert!(l.abs() < 1e-12, "mode {k}: {l}");
                }
            }
            assert_relative_eq!(t.lambda[(q, 0)], t.kappa[q][(0, 1)], epsilon = 1e-15);
        }
    }

    #[test]
    fn far_detuned_direct_value() {
        let (t, _) = two_molecule();
        let eps = 0.1;
        let m = effective_spin_model(&t.with_drive(1e12), eps).unwrap();
        assert!((m.u[(0, 1)] / (eps * eps) - 0.5).abs() < 1e-10);
        assert_eq!(m.u[(0, 1)], m.u[(1, 0)]);
        assert!(m.rwa_ok);
        assert_relative_eq!(m.b_eff[0], 2.0 * eps, max_relative = 1e-8);
    }

    #[test]
    fn enhanced_pmi_closed_form_and_sign() {
        let (t, s) = two_molecule();
        let br = breathing(&s);
        let pairs = [(0, 1)];
        for eps in [0.1, 0.05] {
            let mut mags = Vec::new();
            for sign in [1, -1] {
                let sol = optimize_detuning(&t, eps, br, 0.1, sign, &pairs).unwrap();
                assert!(sol.delta_u <= 0.1);
                assert_eq!(sol.delta_r.signum(), f64::from(sign));
                let m = effective_spin_model(&t.with_drive(sol.omega0), eps).unwrap();
                let pmi = m.pmi[(0, 1)];
                assert!((pmi.abs() - enhanced_pmi(eps, 0.1)).abs() / enhanced_pmi(eps, 0.1) < 0.02);
                // PMI = −(ε²/2)λ²/Δ_R: opposite sign to Δ_R
                assert_eq!(pmi.signum(), -f64::from(sign));
                mags.push(sol.delta_r.abs());
            }
            assert_relative_eq!(mags[0], mags[1], max_relative = 1e-9);
        }
        // halving ε halves |Δ_R|
        let a = optimize_detuning(&t, 0.1, br, 0.1, 1, &pairs).unwrap();
        let b = optimize_detuning(&t, 0.05, br, 0.1, 1, &pairs).unwrap();
        assert_relative_eq!(b.delta_r, 0.5 * a.delta_r, max_relative = 1e-9);
        assert!(matches!(optimize_detuning(&t, 0.1, br, 0.0, 1, &pairs), Err(Error::Infeasible { .. })));
    }

    #[test]
    fn displacement_bound_matches_direct_evaluation() {
        let (t, s) = two_molecule();
        let br = breathing(&s);
        let q = t.mode_position(br).unwrap();
        let w = t.frequencies[q] - 0.2;
        let tt = t.with_drive(w);
        let eps = 0.07;
        let du = displacement_bound(&tt, eps, &[(0, 1)]).unwrap();
        let lam = t.lambda[(q, 0)];
        let delta = tt.detunings[q];
        let direct = (2.0 * eps * lam / (2.0 * delta)).abs() * t.zero_point[q] * 2f64.sqrt();
        assert_relative_eq!(du, direct, max_relative = 1e-10);
        assert_eq!(displacement_bound(&tt, 0.0, &[(0, 1)]).unwrap(), 0.0);
        assert_relative_eq!(displacement_bound(&tt, 2.0 * eps, &[(0, 1)]).unwrap(), 2.0 * du, max_relative = 1e-12);
    }

    #[test]
    fn resonance_rejected() {
        let (t, _) = two_molecule();
        let tt = t.with_drive(t.frequencies[0]);
        assert!(matches!(effective_spin_model(&tt, 0.1), Err(Error::Resonance { .. })));
        assert!(matches!(displacement_bound(&tt, 0.1, &[(0, 1)]), Err(Error::Resonance { .. })));
    }

    #[test]
    fn epsilon_scaling() {
        let (t, _) = two_molecule();
        let tt = t.with_drive(1.3);
        let a = effective_spin_model(&tt, 0.05).unwrap();
        let b = effective_spin_model(&tt, 0.1).unwrap();
        assert_relative_eq!(b.direct[(0, 1)], 4.0 * a.direct[(0, 1)], max_relative = 1e-12);
        assert_relative_eq!(b.pmi[(0, 1)], 4.0 * a.pmi[(0, 1)], max_relative = 1e-12);
        assert_relative_eq!(b.e_p, 4.0 * a.e_p, max_relative = 1e-12);
    }

    #[test]
    fn oracle_limits() {
        let j = 0.37;
        assert_relative_eq!(polaron_oracle([0.0, 0.0], 0.1, 1.0, j, 20).unwrap(), j, epsilon = 1e-14);
        let up = polaron_oracle([1.0, 0.8], 0.1, 2.0, 0.0, 20).unwrap();
        let dn = polaron_oracle([1.0, 0.8], 0.1, -2.0, 0.0, 20).unwrap();
        assert_relative_eq!(up, -dn, max_relative = 1e-10);
        assert!(polaron_oracle([1.0, 1.0], 0.1, 1.0, 0.0, 10).is_err());
    }

    #[test]
    fn oracle_matches_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..10 {
            let lambda: [f64; 2] = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            let eps = rng.gen_range(0.01..0.2);
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let lmax = lambda[0].abs().max(lambda[1].abs());
            // ε λ / Δ ≤ 0.05
            let delta = sign * eps * lmax / rng.gen_range(0.01..0.05);
            let j = rng.gen_range(-0.1..0.1);
            let exact = polaron_oracle(lambda, eps, delta, j, 40).unwrap();
            let formula = -0.5 * eps * eps * lambda[0] * lambda[1] / delta;
            assert!((exact - j - formula).abs() <= 0.01 * formula.abs(), "{exact} vs {formula}");
        }
    }

    #[test]
    fn analytic_estimate_example() {
        let a = analytic_gate_estimates(0.1, 0.8, 0.1);
        assert!((a.u0_plus - 0.0928).abs() < 5e-5, "{}", a.u0_plus);
        let off = analytic_gate_estimates(0.1, 0.8, 0.0);
        assert_relative_eq!(off.u0_plus, 0.01 / 0.512, max_relative = 1e-14);
        assert_eq!(off.u_res_plus, off.u_res_minus);
    }
}
