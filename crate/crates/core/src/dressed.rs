//! Microwave-dressed Λ system and the resulting state-dependent dipole.
//!
//! Qubit states `|g⟩, |e⟩` couple to a rotationally excited `|r⟩` with Rabi
//! frequencies `Ω_g e^{iφ_g}`, `Ω_e e^{iφ_e}` and detuning `Δ`. In the frame
//! rotating with the microwave the Hamiltonian is
//! `H = −Δ|r⟩⟨r| + Ω_eff (|r⟩⟨α₀| + h.c.)`, with bright state
//! `|α₀⟩ = sin ν e^{iη}|g⟩ + cos ν e^{−iη}|e⟩` and dark state `|β₀⟩`.
//!
//! Qubit Pauli convention: `σ_w ≡ 𝟙 − 2|α₀⟩⟨α₀|`, written in the basis
//! `(|g⟩, −|e⟩)`. Its Bloch vector is `w = (sin2ν cos2η, −sin2ν sin2η, cos2ν)`;
//! no fixed qubit basis reproduces `+sin2ν sin2η` for the `y` component.

use std::f64::consts::FRAC_PI_2;

use num_complex::Complex64;
use serde::Serialize;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LambdaDrive {
    pub omega_g: f64,
    pub omega_e: f64,
    pub phi_g: f64,
    pub phi_e: f64,
    pub delta: f64,
}

impl LambdaDrive {
    /// Drive realizing the control angles `(ν, η)` at total strength `omega_eff`.
    pub fn from_angles(omega_eff: f64, nu: f64, eta: f64, delta: f64) -> Self {
        Self {
            omega_g: omega_eff * nu.sin(),
            omega_e: omega_eff * nu.cos(),
            phi_g: eta,
            phi_e: -eta,
            delta,
        }
    }

    pub fn omega_eff(&self) -> f64 {
        self.omega_g.hypot(self.omega_e)
    }

    /// `tan ν = Ω_g / Ω_e`.
    pub fn nu(&self) -> f64 {
        self.omega_g.atan2(self.omega_e)
    }

    /// `2η = φ_g − φ_e`.
    pub fn eta(&self) -> f64 {
        0.5 * (self.phi_g - self.phi_e)
    }
}

/// Dressing angles `(ξ_α, ξ_γ)` for `Δ/Ω_eff`.
pub fn mixing_angles(delta_over_omega_eff: f64) -> (f64, f64) {
    let d = delta_over_omega_eff;
    let root = (4.0 + d * d).sqrt();
    // (root - d)/2 computed without cancellation for large positive d
    let tan_alpha = if d > 0.0 { 2.0 / (root + d) } else { 0.5 * (root - d) };
    let tan_gamma = if d < 0.0 { 2.0 / (root - d) } else { 0.5 * (root + d) };
    (tan_alpha.atan(), tan_gamma.atan())
}

/// `w(ν, η)`.
pub fn pauli_axis(nu: f64, eta: f64) -> [f64; 3] {
    let (s2n, c2n) = (2.0 * nu).sin_cos();
    let (s2e, c2e) = (2.0 * eta).sin_cos();
    [s2n * c2e, -s2n * s2e, c2n]
}

/// Control pair producing `−w`: `(ν, η) → (π/2 − ν, η + π/2)`.
pub fn flipped_controls(nu: f64, eta: f64) -> (f64, f64) {
    (FRAC_PI_2 - nu, eta + FRAC_PI_2)
}

/// Bright state `|α₀⟩` as amplitudes over `(|g⟩, |e⟩)`.
pub fn bright_state(nu: f64, eta: f64) -> [Complex64; 2] {
    [
        Complex64::from_polar(nu.sin(), eta),
        Complex64::from_polar(nu.cos(), -eta),
    ]
}

/// Dark state `|β₀⟩` as amplitudes over `(|g⟩, |e⟩)`.
pub fn dark_state(nu: f64, eta: f64) -> [Complex64; 2] {
    [
        Complex64::from_polar(nu.cos(), eta),
        Complex64::from_polar(-nu.sin(), -eta),
    ]
}

/// Dressed eigenstates `(|α_Ω⟩, |β_Ω⟩, |γ_Ω⟩)` over `(|g⟩, |e⟩, |r⟩)`.
///
/// `|γ_Ω⟩ = cos ξ_γ |α₀⟩ − sin ξ_γ |r⟩`, orthogonal to `|α_Ω⟩` since
/// `tan ξ_α tan ξ_γ = 1`.
pub fn dressed_states(drive: &LambdaDrive) -> [[Complex64; 3]; 3] {
    let (nu, eta) = (drive.nu(), drive.eta());
    let (xa, xg) = mixing_angles(drive.delta / drive.omega_eff());
    let a0 = bright_state(nu, eta);
    let b0 = dark_state(nu, eta);
    let zero = Complex64::new(0.0, 0.0);
    [
        [a0[0] * xa.cos(), a0[1] * xa.cos(), Complex64::new(xa.sin(), 0.0)],
        [b0[0], b0[1], zero],
        [a0[0] * xg.cos(), a0[1] * xg.cos(), Complex64::new(-xg.sin(), 0.0)],
    ]
}

/// Dipole operator `μ₀'𝟙 + c σ_w` restricted to the qubit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DressedDipole {
    pub xi_alpha: f64,
    pub xi_gamma: f64,
    pub nu: f64,
    pub eta: f64,
    /// Bare qubit moment μ₀.
    pub mu0: f64,
    /// `μ₁ = ½ sin²ξ_α (μ_rr − μ₀)`.
    pub mu1: f64,
    /// Identity part `μ₀' = μ₀ + μ₁`.
    pub identity_part: f64,
    /// Signed `σ_w` coefficient, `−μ₁`.
    pub sigma_coefficient: f64,
    pub w: [f64; 3],
}

impl DressedDipole {
    /// Qubit operator in the basis `(|g⟩, |e⟩)`: `μ₀𝟙 + 2μ₁|α₀⟩⟨α₀|`.
    pub fn operator(&self) -> [[Complex64; 2]; 2] {
        let a = bright_state(self.nu, self.eta);
        let mut op = [[Complex64::new(0.0, 0.0); 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                let id = if i == j { self.mu0 } else { 0.0 };
                op[i][j] = Complex64::new(id, 0.0) + a[i] * a[j].conj() * (2.0 * self.mu1);
            }
        }
        op
    }
}

pub fn dressed_dipole(mu0: f64, mu_rr: f64, drive: &LambdaDrive) -> Result<DressedDipole> {
    let omega_eff = drive.omega_eff();
    if !(omega_eff > 0.0) {
        return Err(Error::invalid("omega_eff", "drive must be nonzero"));
    }
    let (xi_alpha, xi_gamma) = mixing_angles(drive.delta / omega_eff);
    let mu1 = 0.5 * xi_alpha.sin().powi(2) * (mu_rr - mu0);
    let (nu, eta) = (drive.nu(), drive.eta());
    Ok(DressedDipole {
        xi_alpha,
        xi_gamma,
        nu,
        eta,
        mu0,
        mu1,
        identity_part: mu0 + mu1,
        sigma_coefficient: -mu1,
        w: pauli_axis(nu, eta),
    })
}

/// Dipole of an idle qubit (drive off): proportional to identity.
pub fn idle_dipole(mu0: f64) -> DressedDipole {
    DressedDipole {
        xi_alpha: 0.0,
        xi_gamma: FRAC_PI_2,
        nu: 0.0,
        eta: 0.0,
        mu0,
        mu1: 0.0,
        identity_part: mu0,
        sigma_coefficient: 0.0,
        w: pauli_axis(0.0, 0.0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RampCheck {
    pub pass: bool,
    /// `τ Δ² / Ω_eff`.
    pub margin: f64,
}

/// Adiabatic ramp condition `τ ≫ Ω_eff/Δ²`, with `≫` as `safety`.
pub fn adiabatic_ramp_check(omega_eff: f64, delta: f64, tau_ramp: f64, safety: f64) -> RampCheck {
    let margin = tau_ramp * delta * delta / omega_eff;
    RampCheck { pass: margin >= safety, margin }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModulationSpec {
    pub mu1_peak: f64,
    pub omega0: f64,
    pub horizon: f64,
    pub samples: usize,
    /// Drive scale used for the adiabatic check.
    pub omega_eff: f64,
    pub delta: f64,
    pub safety: f64,
    /// Control angles for the positive half-cycles.
    pub nu: f64,
    pub eta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScheduleSample {
    pub t: f64,
    /// Effective signed state-dependent moment.
    pub mu1: f64,
    pub nu: f64,
    pub eta: f64,
    /// Bias-field shift of the identity part keeping `μ₀(t) + μ₁(t) = μ₀`.
    pub bias_correction: f64,
    pub flipped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModulationSchedule {
    pub samples: Vec<ScheduleSample>,
    /// Fourier amplitude at `ω₀` used by the rotating-wave treatment.
    pub first_harmonic: f64,
    pub ramp: RampCheck,
}

/// Oscillating moment `μ₁ cos ω₀t` from a fixed-sign dressing.
///
/// Each half-cycle ramps the admixture amplitude as `|cos ω₀t|` from zero to
/// peak and back; the sign is carried by switching to the flipped control
/// pair at the zero crossings. The ramp time is a quarter period.
pub fn modulation_schedule(spec: &ModulationSpec) -> Result<ModulationSchedule> {
    if spec.samples < 2 || !(spec.horizon > 0.0) {
        return Err(Error::invalid("samples/horizon", "need ≥ 2 samples over a positive horizon"));
    }
    if !(spec.omega0 >= 0.0) {
        return Err(Error::invalid("omega0", "must be non-negative"));
    }
    let ramp = if spec.omega0 > 0.0 {
        let quarter = FRAC_PI_2 / spec.omega0;
        adiabatic_ramp_check(spec.omega_eff, spec.delta, quarter, spec.safety)
    } else {
        RampCheck { pass: true, margin: f64::INFINITY }
    };
    if !ramp.pass {
        return Err(Error::Adiabaticity { margin: ramp.margin, safety: spec.safety });
    }
    let (fnu, feta) = flipped_controls(spec.nu, spec.eta);
    let dt = spec.horizon / (spec.samples - 1) as f64;
    let samples: Vec<ScheduleSample> = (0..spec.samples)
        .map(|k| {
            let t = k as f64 * dt;
            let c = (spec.omega0 * t).cos();
            let flipped = c < 0.0;
            let magnitude = spec.mu1_peak * c.abs();
            let (nu, eta) = if flipped { (fnu, feta) } else { (spec.nu, spec.eta) };
            ScheduleSample {
                t,
                mu1: if flipped { -magnitude } else { magnitude },
                nu,
                eta,
                bias_correction: -magnitude,
                flipped,
            }
        })
        .collect();
    let first_harmonic = first_harmonic(&samples, spec.omega0);
    Ok(ModulationSchedule { samples, first_harmonic, ramp })
}

/// Amplitude of the `cos ω₀t` component over the whole periods covered by
/// the samples (trapezoid rule); the DC value when `ω₀ = 0`.
fn first_harmonic(samples: &[ScheduleSample], omega0: f64) -> f64 {
    if omega0 == 0.0 {
        return samples.iter().map(|s| s.mu1).sum::<f64>() / samples.len() as f64;
    }
    let period = std::f64::consts::TAU / omega0;
    let horizon = samples.last().map_or(0.0, |s| s.t);
    let periods = (horizon / period + 1e-9).floor();
    if periods < 1.0 {
        return samples.iter().map(|s| s.mu1.abs()).fold(0.0, f64::max);
    }
    let end = periods * period;
    let mut acc = 0.0;
    for w in samples.windows(2) {
        if w[1].t > end + 1e-12 {
            break;
        }
        let f0 = w[0].mu1 * (omega0 * w[0].t).cos();
        let f1 = w[1].mu1 * (omega0 * w[1].t).cos();
        acc += 0.5 * (f0 + f1) * (w[1].t - w[0].t);
    }
    2.0 * acc / end
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LeakageInputs {
    pub omega1: f64,
    pub omega2: f64,
    pub omega_e: f64,
    pub delta_2photon: f64,
    pub gamma_sr: f64,
    /// Rotational constant, same unit as the rates above.
    pub b_rot: f64,
    /// Residual transition moment `|μ_er|` and dressing angle, when known.
    pub mu_er: Option<f64>,
    pub xi_alpha: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LeakageFlags {
    /// `Ω₁, Ω₂ ≪ δ` (ratio below 1/10).
    pub weak_two_photon_drive: bool,
    /// `δ ≤ γ_sr`, needed to resolve the opposite-spin partner levels.
    pub detuning_within_spin_rotation: bool,
    /// `γ_sr/B` within a decade of 0.01.
    pub spin_rotation_scale: bool,
    /// Spin-allowed coupling `Ω_e B/γ_sr` stays below `γ_sr`.
    pub z_coupling_bounded: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LeakageTable {
    /// Admixture of the intermediate level: `Ω₁/δ`, `Ω₂/δ`.
    pub x: [f64; 2],
    /// `Ω₁/δ`.
    pub y: f64,
    /// `Ω₁Ω₂/δ²`.
    pub s: f64,
    /// `Ω_e/γ_sr`.
    pub z: f64,
    /// `Ω_g = Ω₁Ω₂/δ`.
    pub effective_rabi: f64,
    pub flags: LeakageFlags,
    /// `tan²ξ_α |μ_er|²` when a residual transition moment is supplied.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flip_flop: Option<f64>,
}

impl LeakageTable {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("leakage table serializes")
    }
}

const MUCH_SMALLER: f64 = 0.1;

pub fn leakage_budget(inp: &LeakageInputs) -> LeakageTable {
    let delta = inp.delta_2photon;
    let ratio = |num: f64, den: f64| if num == 0.0 { 0.0 } else { num / den };
    let x = [ratio(inp.omega1, delta), ratio(inp.omega2, delta)];
    let s = ratio(inp.omega1 * inp.omega2, delta * delta);
    let z = ratio(inp.omega_e, inp.gamma_sr);
    let sr_over_b = inp.gamma_sr / inp.b_rot;
    let flags = LeakageFlags {
        weak_two_photon_drive: x[0] <= MUCH_SMALLER && x[1] <= MUCH_SMALLER,
        detuning_within_spin_rotation: delta <= inp.gamma_sr,
        spin_rotation_scale: (1e-3..=1e-1).contains(&sr_over_b),
        z_coupling_bounded: inp.gamma_sr > 0.0
            && inp.omega_e * inp.b_rot / inp.gamma_sr <= inp.gamma_sr,
    };
    let flip_flop = match (inp.mu_er, inp.xi_alpha) {
        (Some(mu), Some(xi)) if mu != 0.0 => Some(xi.tan().powi(2) * mu * mu),
        _ => None,
    };
    LeakageTable {
        x,
        y: x[0],
        s,
        z,
        effective_rabi: ratio(inp.omega1 * inp.omega2, delta),
        flags,
        flip_flop,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{Matrix3, SymmetricEigen};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Rotating-frame Λ Hamiltonian over (g, e, r), built from the drive
    /// parameters only.
    fn lambda_hamiltonian(d: &LambdaDrive) -> Matrix3<Complex64> {
        let z = Complex64::new(0.0, 0.0);
        let rg = Complex64::from_polar(d.omega_g, -d.eta());
        let re = Complex64::from_polar(d.omega_e, d.eta());
        Matrix3::new(
            z, z, rg.conj(),
            z, z, re.conj(),
            rg, re, Complex64::new(-d.delta, 0.0),
        )
    }

    #[test]
    fn resonant_mixing() {
        let (xa, xg) = mixing_angles(0.0);
        assert_relative_eq!(xa.tan(), 1.0, epsilon = 1e-15);
        assert_relative_eq!(xa.sin().powi(2), 0.5, epsilon = 1e-15);
        assert_relative_eq!(xa.tan() * xg.tan(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn far_detuned_series() {
        // tan ξ = (√(4+d²) − d)/2 = 1/d − 1/d³ + ..., so sin²ξ ≈ 1/d² − 3/d⁴
        let d: f64 = 10.0;
        let series = 1.0 / (d * d) - 3.0 / d.powi(4);
        let (xa, _) = mixing_angles(d);
        assert!((xa.sin().powi(2) - series).abs() / series < 0.05);
        assert!((xa.sin().powi(2) - 0.0099).abs() / 0.0099 < 0.05);
    }

    #[test]
    fn dressed_states_diagonalize_lambda_hamiltonian() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let drive = LambdaDrive {
                omega_g: rng.gen_range(0.1..2.0),
                omega_e: rng.gen_range(0.1..2.0),
                phi_g: rng.gen_range(-3.0..3.0),
                phi_e: rng.gen_range(-3.0..3.0),
                delta: rng.gen_range(-5.0..5.0),
            };
            let h = lambda_hamiltonian(&drive);
            let eig = SymmetricEigen::new(h);
            let states = dressed_states(&drive);
            for st in &states {
                let v = nalgebra::Vector3::new(st[0], st[1], st[2]);
                assert_relative_eq!(v.norm(), 1.0, epsilon = 1e-12);
                let best = eig
                    .eigenvectors
                    .column_iter()
                    .map(|c| c.dotc(&v).norm())
                    .fold(0.0, f64::max);
                assert!(best > 1.0 - 1e-10, "overlap {best}");
                // residual: H v parallel to v
                let hv = h * v;
                let e = v.dotc(&hv);
                assert!((hv - v * e).norm() < 1e-10);
            }
            // off-diagonal norm in the dressed basis
            let u = nalgebra::Matrix3::from_fn(|i, j| states[j][i]);
            let hd = u.adjoint() * h * u;
            let off: f64 = (0..3)
                .flat_map(|i| (0..3).map(move |j| (i, j)))
                .filter(|(i, j)| i != j)
                .map(|(i, j)| hd[(i, j)].norm_sqr())
                .sum::<f64>()
                .sqrt();
            assert!(off < 1e-10);
        }
    }

    #[test]
    fn axis_examples() {
        let w = pauli_axis(std::f64::consts::FRAC_PI_4, 0.0);
        assert_relative_eq!(w[0], 1.0, epsilon = 1e-15);
        assert!(w[1].abs() < 1e-15 && w[2].abs() < 1e-15);
        let d = dressed_dipole(1.0, 5.0, &LambdaDrive::from_angles(1.0, 0.3, 0.2, 0.0)).unwrap();
        assert_relative_eq!(d.mu1, 1.0, epsilon = 1e-14); // (5 - 1)/4
        assert_relative_eq!(d.identity_part, 2.0, epsilon = 1e-14);
        assert_relative_eq!(d.sigma_coefficient, -1.0, epsilon = 1e-14);
    }

    #[test]
    fn projector_identity_and_flip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let (nu, eta) = (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
            let w = pauli_axis(nu, eta);
            // σ_w in basis (|g⟩, −|e⟩) must equal 𝟙 − 2|α₀⟩⟨α₀| in (|g⟩, |e⟩)
            let a = bright_state(nu, eta);
            let i = Complex64::i();
            let sigma_std = [
                [Complex64::new(w[2], 0.0), w[0] - i * w[1]],
                [w[0] + i * w[1], Complex64::new(-w[2], 0.0)],
            ];
            let sign = [1.0, -1.0];
            for r in 0..2 {
                for c in 0..2 {
                    let lhs = sigma_std[r][c] * sign[r] * sign[c];
                    let id = if r == c { 1.0 } else { 0.0 };
                    let rhs = Complex64::new(id, 0.0) - a[r] * a[c].conj() * 2.0;
                    assert!((lhs - rhs).norm() < 1e-12);
                }
            }
            let (fnu, feta) = flipped_controls(nu, eta);
            let fw = pauli_axis(fnu, feta);
            for k in 0..3 {
                assert!((fw[k] + w[k]).abs() < 1e-12);
            }
            let d = dressed_dipole(1.0, 3.0, &LambdaDrive::from_angles(1.0, nu, eta, 0.7)).unwrap();
            let fd = dressed_dipole(1.0, 3.0, &LambdaDrive::from_angles(1.0, fnu, feta, 0.7)).unwrap();
            // operator with w flipped equals identity part minus the σ_w part
            let (op, fop) = (d.operator(), fd.operator());
            for r in 0..2 {
                for c in 0..2 {
                    let id = if r == c { 2.0 * d.identity_part } else { 0.0 };
                    assert!((op[r][c] + fop[r][c] - Complex64::new(id, 0.0)).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn idle_qubit_has_no_state_dependence() {
        let d = idle_dipole(2.5);
        assert_eq!(d.sigma_coefficient, 0.0);
        let op = d.operator();
        assert_eq!(op[0][1].norm(), 0.0);
        assert_eq!(op[0][0], op[1][1]);
        assert!(dressed_dipole(1.0, 2.0, &LambdaDrive::from_angles(0.0, 0.1, 0.0, 1.0)).is_err());
    }

    #[test]
    fn ramp_check_examples() {
        // Ω_eff = Δ = 1 MHz (as 1/μs), τ = 100 μs
        let c = adiabatic_ramp_check(1.0, 1.0, 100.0, 10.0);
        assert!(c.pass);
        assert_relative_eq!(c.margin, 100.0);
        let c = adiabatic_ramp_check(2.0, 3.0, 2.0 / 9.0, 10.0);
        assert!(!c.pass);
        assert_relative_eq!(c.margin, 1.0, epsilon = 1e-14);
        assert!(adiabatic_ramp_check(1.0, 1e9, 1e-6, 10.0).pass);
    }

    fn spec(omega0: f64) -> ModulationSpec {
        ModulationSpec {
            mu1_peak: 0.2,
            omega0,
            horizon: 1.0,
            samples: 1001,
            omega_eff: 1.0,
            delta: 10.0,
            safety: 10.0,
            nu: 0.4,
            eta: 0.1,
        }
    }

    #[test]
    fn schedule_dc_limit() {
        let s = modulation_schedule(&spec(0.0)).unwrap();
        assert!(s.samples.iter().all(|x| x.mu1 == 0.2 && !x.flipped));
        assert_relative_eq!(s.first_harmonic, 0.2, max_relative = 1e-12);
    }

    #[test]
    fn schedule_tracks_cosine() {
        let omega0 = std::f64::consts::TAU; // one period over the horizon
        let s = modulation_schedule(&spec(omega0)).unwrap();
        let dev = s
            .samples
            .iter()
            .map(|x| (x.mu1 - 0.2 * (omega0 * x.t).cos()).abs())
            .fold(0.0, f64::max);
        assert!(dev < 1e-12);
        let mean: f64 = s.samples[..1000].iter().map(|x| x.mu1).sum::<f64>() / 1000.0;
        assert!(mean.abs() < 1e-12);
        assert!((s.first_harmonic - 0.2).abs() < 1e-5);
        for x in &s.samples {
            let w = pauli_axis(x.nu, x.eta);
            let base = pauli_axis(0.4, 0.1);
            let sign = if x.flipped { -1.0 } else { 1.0 };
            assert!((0..3).all(|k| (w[k] - sign * base[k]).abs() < 1e-12));
            assert_eq!(x.bias_correction, -x.mu1.abs());
        }
    }

    #[test]
    fn schedule_rejects_fast_switching() {
        let err = modulation_schedule(&spec(100.0)).unwrap_err();
        assert!(matches!(err, Error::Adiabaticity { .. }));
    }

    #[test]
    fn leakage_examples() {
        let base = LeakageInputs {
            omega1: 1.0,
            omega2: 1.0,
            omega_e: 1.0,
            delta_2photon: 10.0,
            gamma_sr: 100.0,
            b_rot: 10_000.0,
            mu_er: None,
            xi_alpha: None,
        };
        let t = leakage_budget(&base);
        assert_relative_eq!(t.effective_rabi, 0.1);
        assert_relative_eq!(t.x[0], 0.1);
        assert_relative_eq!(t.s, 0.01);
        assert!(t.flags.weak_two_photon_drive && t.flags.detuning_within_spin_rotation);
        assert!(t.flags.spin_rotation_scale);
        // Ω_e ≤ γ²/B keeps Ω_e B/γ ≤ γ, hence z ≤ γ/B = 0.01
        assert!(t.flags.z_coupling_bounded);
        assert!(t.z <= 0.01 + 1e-15);

        let off = leakage_budget(&LeakageInputs { omega1: 0.0, ..base });
        assert_eq!((off.x[0], off.y, off.s, off.effective_rabi), (0.0, 0.0, 0.0, 0.0));

        let json: serde_json::Value = serde_json::from_str(&t.to_json()).unwrap();
        let keys: Vec<_> = json.as_object().unwrap().keys().cloned().collect();
        assert_eq!(keys, ["effective_rabi", "flags", "s", "x", "y", "z"]);

        let ff = leakage_budget(&LeakageInputs { mu_er: Some(0.1), xi_alpha: Some(0.5), ..base });
        assert_relative_eq!(ff.flip_flop.unwrap(), 0.5f64.tan().powi(2) * 0.01);
    }
}
