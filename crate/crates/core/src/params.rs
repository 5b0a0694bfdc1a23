//! Model parameters, physical unit bindings and the marker tweezer window.
//!
//! All downstream modules work in `a = D = ħ = 1`. The dimensionless
//! parameter `r_d = D m / (ħ² a)` then fixes the molecular mass to
//! `m = r_d`, so that phonon frequencies come out directly in `D/(ħ a³)`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Debye in C·m.
pub const DEBYE: f64 = 3.335_640_951_981_52e-30;
/// Atomic mass unit in kg.
pub const AMU: f64 = 1.660_539_066_60e-27;
/// Reduced Planck constant in J·s.
pub const HBAR: f64 = 1.054_571_817e-34;
/// Coulomb constant 1/(4πε₀) in N·m²/C².
pub const COULOMB: f64 = 8.987_551_792_3e9;

/// Default transverse trap in units of `D/(ħa³)` times `sqrt(r_d)`.
pub const DEFAULT_OMEGA_PERP_SCALED: f64 = 50.0;

/// Keys accepted by the parameter config file, in canonical order.
pub const CONFIG_KEYS: [&str; 8] = [
    "r_d",
    "epsilon",
    "b_over_a",
    "omega_perp",
    "omega_long",
    "n_molecules",
    "boundary",
    "delta_u_bar",
];

/// Reference scales of the dimensionless unit system.
///
/// Lengths are measured in `a`, energies in `D/a³`, frequencies in
/// `D/(ħa³)` and masses in `ħ²a/D` (so that `m = r_d`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitSystem {
    /// D = μ²/(4πε₀) in J·m³.
    pub dipole_strength: f64,
    /// a in m.
    pub length_unit: f64,
    /// D/a³ in J.
    pub energy_unit: f64,
    /// D/(ħa³) in s⁻¹.
    pub frequency_unit: f64,
    /// ħ²a/D in kg.
    pub mass_unit: f64,
}

impl UnitSystem {
    pub fn new(binding: &PhysicalBinding, r_d: f64) -> Result<Self> {
        binding.validate()?;
        if !(r_d > 0.0 && r_d.is_finite()) {
            return Err(Error::invalid("r_d", "must be positive"));
        }
        let mu = binding.dipole_moment * DEBYE;
        let dipole_strength = COULOMB * mu * mu;
        let mass = binding.mass * AMU;
        let length_unit = dipole_strength * mass / (HBAR * HBAR * r_d);
        let energy_unit = dipole_strength / length_unit.powi(3);
        Ok(Self {
            dipole_strength,
            length_unit,
            energy_unit,
            frequency_unit: energy_unit / HBAR,
            mass_unit: HBAR * HBAR * length_unit / dipole_strength,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Periodic,
    Open,
    Harmonic,
}

impl fmt::Display for Boundary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Boundary::Periodic => "periodic",
            Boundary::Open => "open",
            Boundary::Harmonic => "harmonic",
        })
    }
}

impl FromStr for Boundary {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "periodic" => Ok(Boundary::Periodic),
            "open" => Ok(Boundary::Open),
            "harmonic" => Ok(Boundary::Harmonic),
            other => Err(Error::invalid("boundary", format!("unknown boundary `{other}`"))),
        }
    }
}

/// Dimensionless system parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub r_d: f64,
    pub epsilon: f64,
    pub b_over_a: f64,
    /// Transverse trap frequency in `D/(ħa³)`.
    pub omega_perp: f64,
    /// Longitudinal trap frequency in `D/(ħa³)`.
    pub omega_long: Option<f64>,
    pub n_molecules: usize,
    pub boundary: Boundary,
    pub delta_u_bar: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        let r_d = 30.0;
        Self {
            r_d,
            epsilon: 0.1,
            b_over_a: 0.8,
            omega_perp: DEFAULT_OMEGA_PERP_SCALED / r_d.sqrt(),
            omega_long: None,
            n_molecules: 50,
            boundary: Boundary::Periodic,
            delta_u_bar: 0.1,
        }
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        let finite_positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::invalid(name, format!("must be positive, got {v}")))
            }
        };
        finite_positive("r_d", self.r_d)?;
        if self.r_d <= 1.0 {
            return Err(Error::invalid("r_d", "crystalline phase requires r_d > 1"));
        }
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(Error::invalid("epsilon", "must be non-negative"));
        }
        if self.epsilon >= 0.5 {
            return Err(Error::invalid(
                "epsilon",
                "dipole ratio must stay small against the stabilizing potential (< 0.5)",
            ));
        }
        finite_positive("b_over_a", self.b_over_a)?;
        finite_positive("omega_perp", self.omega_perp)?;
        if let Some(w) = self.omega_long {
            finite_positive("omega_long", w)?;
        }
        if self.n_molecules < 2 {
            return Err(Error::invalid("n_molecules", "need at least 2 molecules"));
        }
        if self.boundary == Boundary::Harmonic && self.omega_long.is_none() {
            return Err(Error::invalid("omega_long", "required for harmonic boundary"));
        }
        if !(self.delta_u_bar > 0.0 && self.delta_u_bar < 1.0) {
            return Err(Error::invalid("delta_u_bar", "must lie in (0, 1)"));
        }
        Ok(())
    }

    /// Molecular mass in the internal unit system.
    pub fn mass(&self) -> f64 {
        self.r_d
    }

    /// Transverse trap curvature `m ω⊥²` in `D/a⁵`.
    pub fn perp_curvature(&self) -> f64 {
        self.mass() * self.omega_perp * self.omega_perp
    }

    /// Longitudinal trap curvature `m ν²` in `D/a⁵`, zero without a trap.
    pub fn long_curvature(&self) -> f64 {
        self.omega_long
            .map_or(0.0, |w| self.mass() * w * w)
    }

    /// Parse a `key = value` config. Unknown keys are rejected; missing keys
    /// keep their defaults.
    pub fn from_config_str(text: &str) -> Result<Self> {
        let entries = parse_key_values(text)?;
        let mut params = Self::default();
        let mut omega_perp_given = false;
        for (line, key, value) in entries {
            params
                .set(&key, &value)
                .map_err(|e| Error::Config { line, reason: e.to_string() })?;
            omega_perp_given |= key == "omega_perp";
        }
        if !omega_perp_given {
            params.omega_perp = DEFAULT_OMEGA_PERP_SCALED / params.r_d.sqrt();
        }
        params.validate()?;
        Ok(params)
    }

    /// Set one field from its config key. Does not re-validate.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let num = |v: &str| -> Result<f64> {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::invalid(key, format!("not a number: `{v}`")))
        };
        match key {
            "r_d" => self.r_d = num(value)?,
            "epsilon" => self.epsilon = num(value)?,
            "b_over_a" => self.b_over_a = num(value)?,
            "omega_perp" => self.omega_perp = num(value)?,
            "omega_long" => {
                self.omega_long = match value.trim() {
                    "" | "none" => None,
                    v => Some(num(v)?),
                }
            }
            "n_molecules" => {
                self.n_molecules = value
                    .trim()
                    .parse()
                    .map_err(|_| Error::invalid(key, format!("not a count: `{value}`")))?
            }
            "boundary" => self.boundary = value.parse()?,
            "delta_u_bar" => self.delta_u_bar = num(value)?,
            other => return Err(Error::invalid(other, "unknown parameter key")),
        }
        Ok(())
    }

    /// Canonical key-value map, in the config file format's vocabulary.
    pub fn to_key_values(&self) -> BTreeMap<String, String> {
        let mut map = BTreeMap::new();
        map.insert("r_d".into(), format!("{:?}", self.r_d));
        map.insert("epsilon".into(), format!("{:?}", self.epsilon));
        map.insert("b_over_a".into(), format!("{:?}", self.b_over_a));
        map.insert("omega_perp".into(), format!("{:?}", self.omega_perp));
        map.insert(
            "omega_long".into(),
            self.omega_long.map_or("none".into(), |w| format!("{w:?}")),
        );
        map.insert("n_molecules".into(), self.n_molecules.to_string());
        map.insert("boundary".into(), self.boundary.to_string());
        map.insert("delta_u_bar".into(), format!("{:?}", self.delta_u_bar));
        map
    }

    pub fn to_config_string(&self) -> String {
        let map = self.to_key_values();
        CONFIG_KEYS
            .iter()
            .map(|k| format!("{k} = {}\n", map[*k]))
            .collect()
    }
}

/// Split a `key = value` text into `(line, key, value)` triples.
/// `#` starts a comment; blank lines are skipped.
pub fn parse_key_values(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
            line: idx + 1,
            reason: format!("expected `key = value`, got `{line}`"),
        })?;
        let key = key.trim();
        if key.is_empty() {
            return Err(Error::Config { line: idx + 1, reason: "empty key".into() });
        }
        out.push((idx + 1, key.to_string(), value.trim().to_string()));
    }
    Ok(out)
}

/// Molecular constants used to map dimensionless results to the lab.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicalBinding {
    pub name: String,
    /// Induced dipole moment in Debye.
    pub dipole_moment: f64,
    /// Mass in atomic mass units.
    pub mass: f64,
    /// Rotational constant in GHz.
    pub rotational_constant_b: f64,
    /// Spin-rotation constant in MHz; zero for closed-shell molecules.
    pub spin_rotation_gamma: f64,
    /// Optical lattice wavelength in nm.
    pub wavelength: f64,
}

impl PhysicalBinding {
    /// LiCs with an induced moment of 3 Debye.
    pub fn lics() -> Self {
        Self {
            name: "LiCs".into(),
            dipole_moment: 3.0,
            mass: 140.0,
            rotational_constant_b: 5.6,
            spin_rotation_gamma: 0.0,
            wavelength: 600.0,
        }
    }

    /// SrO at its full bare moment of 8.9 Debye.
    pub fn sro() -> Self {
        Self {
            name: "SrO".into(),
            dipole_moment: 8.9,
            mass: 104.0,
            rotational_constant_b: 10.1,
            spin_rotation_gamma: 0.0,
            wavelength: 1064.0,
        }
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "lics" => Some(Self::lics()),
            "sro" => Some(Self::sro()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("dipole_moment", self.dipole_moment),
            ("mass", self.mass),
            ("rotational_constant_b", self.rotational_constant_b),
            ("wavelength", self.wavelength),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(name, format!("must be positive, got {v}")));
            }
        }
        if !(self.spin_rotation_gamma.is_finite() && self.spin_rotation_gamma >= 0.0) {
            return Err(Error::invalid("spin_rotation_gamma", "must be non-negative"));
        }
        Ok(())
    }
}

/// Quantity tags understood by [`to_physical`]; each maps to a fixed lab unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantity {
    /// `a` → nm.
    Length,
    /// `D/a³` → kHz, quoted as E/ħ in 10³ s⁻¹.
    Energy,
    /// `D/(ħa³)` → kHz (angular, 10³ s⁻¹).
    Frequency,
    /// `ħa³/D` → μs.
    Time,
    /// `D/a⁴` → N.
    Force,
    /// `ħ²a/D` → amu.
    Mass,
}

impl FromStr for Quantity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "length" => Ok(Quantity::Length),
            "energy" => Ok(Quantity::Energy),
            "frequency" => Ok(Quantity::Frequency),
            "time" => Ok(Quantity::Time),
            "force" => Ok(Quantity::Force),
            "mass" => Ok(Quantity::Mass),
            other => Err(Error::UnknownUnit(other.to_string())),
        }
    }
}

impl Quantity {
    fn scale(self, units: &UnitSystem) -> f64 {
        match self {
            Quantity::Length => units.length_unit * 1e9,
            Quantity::Energy | Quantity::Frequency => units.frequency_unit * 1e-3,
            Quantity::Time => 1e6 / units.frequency_unit,
            Quantity::Force => units.energy_unit / units.length_unit,
            Quantity::Mass => units.mass_unit / AMU,
        }
    }

    pub fn lab_unit(self) -> &'static str {
        match self {
            Quantity::Length => "nm",
            Quantity::Energy | Quantity::Frequency => "kHz",
            Quantity::Time => "us",
            Quantity::Force => "N",
            Quantity::Mass => "u",
        }
    }
}

/// Convert a dimensionless value to the lab unit of `quantity`.
pub fn to_physical(
    params: &ModelParams,
    binding: &PhysicalBinding,
    quantity: Quantity,
    value: f64,
) -> Result<f64> {
    let units = UnitSystem::new(binding, params.r_d)?;
    Ok(value * quantity.scale(&units))
}

/// String-tagged variant of [`to_physical`].
pub fn to_physical_tagged(
    params: &ModelParams,
    binding: &PhysicalBinding,
    tag: &str,
    value: f64,
) -> Result<f64> {
    to_physical(params, binding, tag.parse()?, value)
}

/// Inverse of [`to_physical`].
pub fn to_dimensionless(
    params: &ModelParams,
    binding: &PhysicalBinding,
    quantity: Quantity,
    value: f64,
) -> Result<f64> {
    let units = UnitSystem::new(binding, params.r_d)?;
    Ok(value / quantity.scale(&units))
}

/// Admissible trapping frequencies for the marker tweezer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TweezerWindow {
    /// Lower bound from marker localization, `D/(ħa³)`.
    pub omega_min: f64,
    /// Upper bound from the force on register molecules, `D/(ħa³)`.
    pub omega_max: f64,
    /// Lower bound in kHz.
    pub omega_min_khz: f64,
    /// Upper bound in kHz.
    pub omega_max_khz: f64,
}

impl TweezerWindow {
    pub fn is_empty(&self) -> bool {
        self.omega_min > self.omega_max
    }
}

/// Tweezer frequency window for width `sigma_tw` (in `a`).
///
/// Lower bound: `sqrt(ħ/2mω) ≤ a`. Upper bound: `3√e D/a⁴ ≥ safety · m ω² σ`.
pub fn tweezer_constraints(
    params: &ModelParams,
    sigma_tw: f64,
    binding: &PhysicalBinding,
    safety: f64,
) -> Result<TweezerWindow> {
    if !(sigma_tw > 0.0) || sigma_tw.is_nan() {
        return Err(Error::invalid("sigma_tw", "must be positive"));
    }
    if !(safety > 0.0 && safety.is_finite()) {
        return Err(Error::invalid("safety", "must be positive"));
    }
    let m = params.mass();
    let omega_min = 1.0 / (2.0 * m);
    let max_force = 3.0 * std::f64::consts::E.sqrt();
    let omega_max = (max_force / (safety * m * sigma_tw)).sqrt();
    let units = UnitSystem::new(binding, params.r_d)?;
    let khz = Quantity::Frequency.scale(&units);
    Ok(TweezerWindow {
        omega_min,
        omega_max,
        omega_min_khz: omega_min * khz,
        omega_max_khz: omega_max * khz,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn lics_lattice_spacing_and_interaction() {
        let p = ModelParams::default();
        let b = PhysicalBinding::lics();
        let a_nm = to_physical(&p, &b, Quantity::Length, 1.0).unwrap();
        assert!((a_nm - 630.0).abs() / 630.0 < 0.05, "a = {a_nm}");
        let vdd = to_physical(&p, &b, Quantity::Energy, 1.0).unwrap();
        assert!((vdd - 35.0).abs() / 35.0 < 0.15, "vdd = {vdd}");
    }

    #[test]
    fn zero_maps_to_zero() {
        let p = ModelParams::default();
        for q in ["length", "energy", "frequency", "time", "force", "mass"] {
            assert_eq!(to_physical_tagged(&p, &PhysicalBinding::sro(), q, 0.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn unknown_tag_rejected() {
        let p = ModelParams::default();
        let err = to_physical_tagged(&p, &PhysicalBinding::lics(), "furlong", 1.0).unwrap_err();
        assert!(matches!(err, Error::UnknownUnit(_)));
    }

    #[test]
    fn spacing_decreases_with_r_d() {
        let b = PhysicalBinding::lics();
        let mut last = f64::INFINITY;
        for r_d in [2.0, 5.0, 10.0, 30.0, 100.0] {
            let p = ModelParams { r_d, ..Default::default() };
            let a = to_physical(&p, &b, Quantity::Length, 1.0).unwrap();
            assert!(a < last);
            last = a;
        }
    }

    #[test]
    fn mass_unit_reproduces_r_d() {
        let p = ModelParams::default();
        let b = PhysicalBinding::lics();
        let m = to_physical(&p, &b, Quantity::Mass, p.mass()).unwrap();
        assert_relative_eq!(m, b.mass, max_relative = 1e-12);
    }

    #[test]
    fn tweezer_window_for_lics() {
        let p = ModelParams::default();
        let b = PhysicalBinding::lics();
        let sigma = 1000.0 / to_physical(&p, &b, Quantity::Length, 1.0).unwrap();
        let w = tweezer_constraints(&p, sigma, &b, 10.0).unwrap();
        assert!(!w.is_empty());
        assert!(w.omega_min_khz > 0.3 && w.omega_min_khz < 1.2, "{w:?}");
        assert!(w.omega_max_khz > 3.0 && w.omega_max_khz < 12.0, "{w:?}");
    }

    #[test]
    fn tweezer_window_limits() {
        let p = ModelParams::default();
        let b = PhysicalBinding::lics();
        let tiny = tweezer_constraints(&p, 1e-12, &b, 10.0).unwrap();
        let wide = tweezer_constraints(&p, 1e4, &b, 10.0).unwrap();
        assert!(tiny.omega_max > 1e5);
        assert!(wide.is_empty());
        assert_eq!(tiny.omega_min, wide.omega_min);
        let mut last = f64::INFINITY;
        for safety in [1.0, 2.0, 5.0, 10.0, 30.0] {
            let w = tweezer_constraints(&p, 1.5, &b, safety).unwrap();
            assert!(w.omega_max < last);
            last = w.omega_max;
        }
        assert!(tweezer_constraints(&p, -1.0, &b, 10.0).is_err());
    }

    #[test]
    fn constructor_guards() {
        let bad = [
            ModelParams { epsilon: 0.5, ..Default::default() },
            ModelParams { r_d: 1.0, ..Default::default() },
            ModelParams { n_molecules: 1, ..Default::default() },
            ModelParams { delta_u_bar: 1.0, ..Default::default() },
            ModelParams { boundary: Boundary::Harmonic, ..Default::default() },
        ];
        for p in bad {
            assert!(p.validate().is_err(), "{p:?}");
        }
        ModelParams::default().validate().unwrap();
    }

    #[test]
    fn config_round_trip() {
        let text = "# comment\nr_d = 12.5\nepsilon=0.05 # trailing\nboundary = harmonic\nomega_long = 0.3\n";
        let p = ModelParams::from_config_str(text).unwrap();
        assert_eq!(p.r_d, 12.5);
        assert_eq!(p.boundary, Boundary::Harmonic);
        assert_relative_eq!(p.omega_perp, 50.0 / 12.5f64.sqrt());
        let again = ModelParams::from_config_str(&p.to_config_string()).unwrap();
        assert_eq!(p, again);
        assert!(ModelParams::from_config_str("bogus = 1").is_err());
        assert!(ModelParams::from_config_str("r_d 3").is_err());
    }
}
