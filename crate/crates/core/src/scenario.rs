//! Named scenarios, parameter sweeps and the output manifest.
//!
//! A scenario is configured with the same `key = value` format as
//! [`ModelParams`], extended by scenario keys (`scenario`, `sweep`,
//! `sweep2`, `marker_z`, ...). Grid points are evaluated in parallel and
//! collected in grid order, so the output does not depend on the worker
//! count.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::coupling::{
    analytic_gate_estimates, effective_spin_model, optimize_detuning, spin_phonon_couplings, CouplingTable,
    GateSummary, MarkerGate, ResonantMode, SignChoice,
};
use crate::crystal::{
    lattice_with_marker, minimize_equilibrium, two_molecule_equilibrium, unit_spacing_nu, EquilibriumResult,
    Geometry, MarkerZ, MinimizeOptions, TrapSpec,
};
use crate::output::{CsvTable, Value};
use crate::params::{
    parse_key_values, to_physical, tweezer_constraints, Boundary, ModelParams, PhysicalBinding, Quantity,
    CONFIG_KEYS, DEFAULT_OMEGA_PERP_SCALED,
};
use crate::phonons::{build_dynamical_matrix, marker_pair, normal_modes, Branch, PhononSpectrum};
use crate::rotor::{stark_sweep, sweep_table, DEFAULT_N_MAX};
use crate::{Error, Result};

pub const MANIFEST_SCHEMA: u32 = 1;
/// Fraction of grid points that must succeed for a zero exit status.
pub const OK_FRACTION: f64 = 0.9;

/// Scenario keys accepted on top of [`CONFIG_KEYS`], in canonical order.
pub const SCENARIO_KEYS: [&str; 11] = [
    "scenario",
    "sweep",
    "sweep2",
    "marker_z",
    "marker_site",
    "resonant_mode",
    "sign",
    "binding",
    "sigma_tw_nm",
    "tweezer_safety",
    "n_max",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScenarioName {
    StarkSpectrum,
    TwoMoleculeTrap,
    ChainSpectrum,
    MarkerLocalModes,
    PmiTwoMolecule,
    GateMap,
    TweezerWindow,
}

impl ScenarioName {
    pub const ALL: [ScenarioName; 7] = [
        ScenarioName::StarkSpectrum,
        ScenarioName::TwoMoleculeTrap,
        ScenarioName::ChainSpectrum,
        ScenarioName::MarkerLocalModes,
        ScenarioName::PmiTwoMolecule,
        ScenarioName::GateMap,
        ScenarioName::TweezerWindow,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioName::StarkSpectrum => "stark_spectrum",
            ScenarioName::TwoMoleculeTrap => "two_molecule_trap",
            ScenarioName::ChainSpectrum => "chain_spectrum",
            ScenarioName::MarkerLocalModes => "marker_local_modes",
            ScenarioName::PmiTwoMolecule => "pmi_two_molecule",
            ScenarioName::GateMap => "gate_map",
            ScenarioName::TweezerWindow => "tweezer_window",
        }
    }

    /// Variables a sweep axis may run over.
    pub fn sweep_variables(self) -> &'static [&'static str] {
        match self {
            ScenarioName::StarkSpectrum => &["field"],
            ScenarioName::TwoMoleculeTrap => &["r_d", "omega_perp", "omega_long"],
            ScenarioName::ChainSpectrum => &["r_d", "omega_perp", "omega_long", "n_molecules"],
            ScenarioName::MarkerLocalModes => &["r_d", "omega_perp", "b_over_a", "n_molecules"],
            ScenarioName::PmiTwoMolecule => &["omega0", "epsilon", "delta_u_bar"],
            ScenarioName::GateMap => &["epsilon", "b_over_a", "delta_u_bar", "r_d", "omega_perp"],
            ScenarioName::TweezerWindow => &["sigma_tw_nm", "tweezer_safety", "r_d"],
        }
    }
}

impl fmt::Display for ScenarioName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScenarioName::ALL
            .into_iter()
            .find(|n| n.as_str() == s.trim())
            .ok_or_else(|| Error::invalid("scenario", format!("unknown scenario `{}`", s.trim())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Spacing {
    Linear,
    Log,
}

/// `variable:start:stop:points[:lin|log]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepAxis {
    pub variable: String,
    pub start: f64,
    pub stop: f64,
    pub points: usize,
    pub spacing: Spacing,
}

impl SweepAxis {
    pub fn new(variable: &str, start: f64, stop: f64, points: usize, spacing: Spacing) -> Result<Self> {
        let axis = SweepAxis { variable: variable.to_string(), start, stop, points, spacing };
        axis.check()?;
        Ok(axis)
    }

    fn check(&self) -> Result<()> {
        if self.points == 0 {
            return Err(Error::invalid("sweep", "needs at least one point"));
        }
        if !(self.start.is_finite() && self.stop.is_finite()) {
            return Err(Error::invalid("sweep", "bounds must be finite"));
        }
        if self.spacing == Spacing::Log && !(self.start > 0.0 && self.stop > 0.0) {
            return Err(Error::invalid("sweep", "log spacing needs positive bounds"));
        }
        Ok(())
    }

    /// Grid values, ascending when `start ≤ stop`.
    pub fn values(&self) -> Vec<f64> {
        if self.points == 1 {
            return vec![self.start];
        }
        let last = (self.points - 1) as f64;
        (0..self.points)
            .map(|i| {
                let t = i as f64 / last;
                match self.spacing {
                    Spacing::Linear => (self.start * (last - i as f64) + self.stop * i as f64) / last,
                    Spacing::Log => (self.start.ln() + t * (self.stop.ln() - self.start.ln())).exp(),
                }
            })
            .collect()
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let spacing = match self.spacing {
            Spacing::Linear => "lin",
            Spacing::Log => "log",
        };
        write!(f, "{}:{:?}:{:?}:{}:{}", self.variable, self.start, self.stop, self.points, spacing)
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').map(str::trim).collect();
        if !(4..=5).contains(&parts.len()) {
            return Err(Error::invalid("sweep", format!("expected variable:start:stop:points[:lin|log], got `{s}`")));
        }
        let num = |v: &str| v.parse::<f64>().map_err(|_| Error::invalid("sweep", format!("not a number: `{v}`")));
        let points =
            parts[3].parse::<usize>().map_err(|_| Error::invalid("sweep", format!("not a count: `{}`", parts[3])))?;
        let spacing = match parts.get(4).copied().unwrap_or("lin") {
            "lin" | "linear" => Spacing::Linear,
            "log" => Spacing::Log,
            other => return Err(Error::invalid("sweep", format!("unknown spacing `{other}`"))),
        };
        SweepAxis::new(parts[0], num(parts[1])?, num(parts[2])?, points, spacing)
    }
}

/// Knobs that are not model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioOptions {
    pub marker_z: MarkerZ,
    pub marker_site: usize,
    pub resonant_mode: ResonantMode,
    pub sign: SignChoice,
    pub binding: String,
    /// Tweezer width in nm.
    pub sigma_tw_nm: f64,
    pub tweezer_safety: f64,
    pub n_max: u32,
}

impl Default for ScenarioOptions {
    fn default() -> Self {
        Self {
            marker_z: MarkerZ::Frozen,
            marker_site: 0,
            resonant_mode: ResonantMode::LocalZ,
            sign: SignChoice::Matched,
            binding: "lics".into(),
            sigma_tw_nm: 1000.0,
            tweezer_safety: 10.0,
            n_max: DEFAULT_N_MAX,
        }
    }
}

impl ScenarioOptions {
    fn binding(&self) -> Result<PhysicalBinding> {
        PhysicalBinding::builtin(&self.binding)
            .ok_or_else(|| Error::invalid("binding", format!("unknown binding `{}`", self.binding)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: ScenarioName,
    pub params: ModelParams,
    /// Explicit sweep axes; empty means the scenario default.
    pub sweeps: Vec<SweepAxis>,
    pub options: ScenarioOptions,
    omega_perp_explicit: bool,
}

impl Scenario {
    pub fn new(name: ScenarioName) -> Self {
        Self {
            name,
            params: ModelParams::default(),
            sweeps: Vec::new(),
            options: ScenarioOptions::default(),
            omega_perp_explicit: false,
        }
    }

    /// Parse a config; `scenario` may be absent if `name` supplies it.
    pub fn from_config_str(text: &str, name: Option<ScenarioName>) -> Result<Self> {
        let mut builder = ScenarioBuilder::default();
        for (line, key, value) in parse_key_values(text)? {
            builder.set(&key, &value).map_err(|e| Error::Config { line, reason: e.to_string() })?;
        }
        if let Some(n) = name {
            builder.name = Some(n);
        }
        builder.build()
    }

    /// Re-apply `key = value` overrides on top of this scenario.
    pub fn with_overrides(&self, overrides: &[(String, String)]) -> Result<Self> {
        let mut builder = ScenarioBuilder::from_scenario(self);
        for (k, v) in overrides {
            builder.set(k, v)?;
        }
        builder.build()
    }

    /// Canonical config text; parsing it back yields the same scenario.
    pub fn to_config_string(&self) -> String {
        let mut out = format!("scenario = {}\n", self.name);
        out.push_str(&self.params.to_config_string());
        for (i, s) in self.sweeps.iter().enumerate() {
            let key = if i == 0 { "sweep" } else { "sweep2" };
            out.push_str(&format!("{key} = {s}\n"));
        }
        for (k, v) in self.option_values() {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    fn option_values(&self) -> Vec<(&'static str, String)> {
        let o = &self.options;
        vec![
            ("marker_z", marker_z_str(o.marker_z).into()),
            ("marker_site", o.marker_site.to_string()),
            ("resonant_mode", resonant_str(o.resonant_mode)),
            ("sign", sign_str(o.sign).into()),
            ("binding", o.binding.clone()),
            ("sigma_tw_nm", format!("{:?}", o.sigma_tw_nm)),
            ("tweezer_safety", format!("{:?}", o.tweezer_safety)),
            ("n_max", o.n_max.to_string()),
        ]
    }

    /// Sweep axes in effect, defaults filled in.
    pub fn effective_sweeps(&self) -> Vec<SweepAxis> {
        if !self.sweeps.is_empty() {
            return self.sweeps.clone();
        }
        let lin = |v: &str, a: f64, b: f64, n: usize| SweepAxis {
            variable: v.into(),
            start: a,
            stop: b,
            points: n,
            spacing: Spacing::Linear,
        };
        match self.name {
            ScenarioName::StarkSpectrum => vec![lin("field", 0.0, 10.0, 101)],
            ScenarioName::PmiTwoMolecule => {
                let w_r = 5f64.sqrt() * self.two_molecule_nu();
                vec![lin("omega0", 0.5 * w_r, 1.5 * w_r, 400)]
            }
            ScenarioName::GateMap => vec![lin("epsilon", 0.01, 0.3, 30), lin("b_over_a", 0.5, 1.0, 11)],
            _ => Vec::new(),
        }
    }

    fn two_molecule_nu(&self) -> f64 {
        self.params.omega_long.unwrap_or_else(|| unit_spacing_nu(self.params.r_d))
    }

    fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.sweeps.len() > 2 {
            return Err(Error::invalid("sweep", "at most two sweep axes"));
        }
        let allowed = self.name.sweep_variables();
        for s in &self.sweeps {
            if !allowed.contains(&s.variable.as_str()) {
                return Err(Error::invalid(
                    "sweep",
                    format!("`{}` cannot be swept in {} (allowed: {})", s.variable, self.name, allowed.join(", ")),
                ));
            }
        }
        if self.sweeps.len() == 2 && self.sweeps[0].variable == self.sweeps[1].variable {
            return Err(Error::invalid("sweep2", "must differ from the first sweep variable"));
        }
        self.options.binding()?;
        if !(self.options.sigma_tw_nm > 0.0) || !(self.options.tweezer_safety > 0.0) {
            return Err(Error::invalid("tweezer", "sigma_tw_nm and tweezer_safety must be positive"));
        }
        Ok(())
    }
}

fn marker_z_str(m: MarkerZ) -> &'static str {
    match m {
        MarkerZ::Frozen => "frozen",
        MarkerZ::Trapped => "trapped",
    }
}

fn sign_str(s: SignChoice) -> &'static str {
    match s {
        SignChoice::Matched => "matched",
        SignChoice::Opposed => "opposed",
    }
}

fn resonant_str(r: ResonantMode) -> String {
    match r {
        ResonantMode::LocalZ => "local_z".into(),
        ResonantMode::LocalX => "local_x".into(),
        ResonantMode::LocalY => "local_y".into(),
        ResonantMode::Index(k) => k.to_string(),
    }
}

#[derive(Default)]
struct ScenarioBuilder {
    name: Option<ScenarioName>,
    params: Vec<(String, String)>,
    sweep: Option<SweepAxis>,
    sweep2: Option<SweepAxis>,
    options: ScenarioOptions,
}

impl ScenarioBuilder {
    fn from_scenario(s: &Scenario) -> Self {
        let mut params: Vec<(String, String)> = s.params.to_key_values().into_iter().collect();
        if !s.omega_perp_explicit {
            params.retain(|(k, _)| k != "omega_perp");
        }
        Self {
            name: Some(s.name),
            params,
            sweep: s.sweeps.first().cloned(),
            sweep2: s.sweeps.get(1).cloned(),
            options: s.options.clone(),
        }
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let num = |v: &str| v.parse::<f64>().map_err(|_| Error::invalid(key, format!("not a number: `{v}`")));
        let o = &mut self.options;
        match key {
            "scenario" => self.name = Some(value.parse()?),
            "sweep" => self.sweep = if value.is_empty() { None } else { Some(value.parse()?) },
            "sweep2" => self.sweep2 = if value.is_empty() { None } else { Some(value.parse()?) },
            "marker_z" => o.marker_z = value.parse()?,
            "marker_site" => {
                o.marker_site = value.parse().map_err(|_| Error::invalid(key, format!("not a site: `{value}`")))?
            }
            "resonant_mode" => o.resonant_mode = value.parse()?,
            "sign" => o.sign = value.parse()?,
            "binding" => o.binding = value.to_string(),
            "sigma_tw_nm" => o.sigma_tw_nm = num(value)?,
            "tweezer_safety" => o.tweezer_safety = num(value)?,
            "n_max" => o.n_max = value.parse().map_err(|_| Error::invalid(key, format!("not a count: `{value}`")))?,
            k if CONFIG_KEYS.contains(&k) => {
                // validate the value now so the error points at its line
                ModelParams::default().set(k, value)?;
                self.params.retain(|(pk, _)| pk != k);
                self.params.push((k.to_string(), value.to_string()));
            }
            other => return Err(Error::invalid(other, "unknown config key")),
        }
        Ok(())
    }

    fn build(self) -> Result<Scenario> {
        let name = self.name.ok_or_else(|| Error::invalid("scenario", "no scenario given"))?;
        let mut params = ModelParams::default();
        let mut omega_perp_explicit = false;
        for (k, v) in &self.params {
            params.set(k, v)?;
            omega_perp_explicit |= k == "omega_perp";
        }
        if !omega_perp_explicit {
            params.omega_perp = DEFAULT_OMEGA_PERP_SCALED / params.r_d.sqrt();
        }
        match name {
            ScenarioName::TwoMoleculeTrap | ScenarioName::PmiTwoMolecule => {
                params.n_molecules = 2;
                params.boundary = Boundary::Harmonic;
                if params.omega_long.is_none() {
                    params.omega_long = Some(unit_spacing_nu(params.r_d));
                }
            }
            _ => {}
        }
        let sweeps = [self.sweep, self.sweep2].into_iter().flatten().collect();
        let s = Scenario { name, params, sweeps, options: self.options, omega_perp_explicit };
        s.validate()?;
        Ok(s)
    }
}

/// One written file as recorded in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutputFile {
    pub name: String,
    pub path: String,
    pub schema: String,
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowCounts {
    pub total: usize,
    pub ok: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub schema: u32,
    pub scenario: String,
    pub params: BTreeMap<String, String>,
    pub options: BTreeMap<String, String>,
    pub sweeps: Vec<String>,
    /// Full resolved config; `--config` accepts the manifest itself.
    pub config: String,
    pub files: Vec<OutputFile>,
    pub rows: RowCounts,
}

impl Manifest {
    pub fn ok_fraction(&self) -> f64 {
        if self.rows.total == 0 { 1.0 } else { self.rows.ok as f64 / self.rows.total as f64 }
    }

    pub fn passed(&self) -> bool {
        self.ok_fraction() >= OK_FRACTION
    }
}

/// Read a config file, or the `config` field of a manifest JSON.
pub fn load_config_text(text: &str) -> Result<String> {
    if text.trim_start().starts_with('{') {
        let v: serde_json::Value = serde_json::from_str(text)?;
        return v
            .get("config")
            .and_then(|c| c.as_str())
            .map(str::to_string)
            .ok_or_else(|| Error::Config { line: 1, reason: "manifest has no `config` field".into() });
    }
    Ok(text.to_string())
}

/// In-memory result of a scenario run.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioOutput {
    /// `(name, table)`; the first is the sweep table.
    pub tables: Vec<(String, CsvTable)>,
    /// `(name, json)` side files.
    pub json: Vec<(String, String)>,
    pub rows: RowCounts,
}

/// Run a scenario on `workers` threads (0 = rayon default).
pub fn evaluate_scenario(s: &Scenario, workers: usize) -> Result<ScenarioOutput> {
    s.validate()?;
    let run = || match s.name {
        ScenarioName::StarkSpectrum => stark(s),
        ScenarioName::TwoMoleculeTrap => two_molecule_trap(s),
        ScenarioName::ChainSpectrum => chain_spectrum(s),
        ScenarioName::MarkerLocalModes => marker_local_modes(s),
        ScenarioName::PmiTwoMolecule => pmi_two_molecule(s),
        ScenarioName::GateMap => gate_map(s),
        ScenarioName::TweezerWindow => tweezer_window(s),
    };
    // no threads in the browser; rayon's global pool degrades to the caller
    if cfg!(target_family = "wasm") {
        let _ = workers;
        return run();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::invalid("workers", e.to_string()))?;
    pool.install(run)
}

/// Run a scenario and write `<prefix>_<name>.csv`, side files and
/// `<prefix>_manifest.json`.
pub fn run_scenario(s: &Scenario, prefix: &Path, workers: usize) -> Result<Manifest> {
    let out = evaluate_scenario(s, workers)?;
    if let Some(dir) = prefix.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let stem = prefix.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
    let path_for = |name: &str, ext: &str| -> (PathBuf, String) {
        let file = format!("{stem}_{name}.{ext}");
        (prefix.with_file_name(&file), file)
    };
    let mut files = Vec::new();
    for (name, table) in &out.tables {
        let (path, file) = path_for(name, "csv");
        table.write(&path)?;
        files.push(OutputFile { name: name.clone(), path: file, schema: table.schema(), rows: table.rows.len() });
    }
    for (name, body) in &out.json {
        let (path, file) = path_for(name, "json");
        std::fs::write(&path, body)?;
        files.push(OutputFile { name: name.clone(), path: file, schema: "json".into(), rows: 1 });
    }
    let manifest = Manifest {
        schema: MANIFEST_SCHEMA,
        scenario: s.name.to_string(),
        params: s.params.to_key_values(),
        options: s.option_values().into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        sweeps: s.effective_sweeps().iter().map(|a| a.to_string()).collect(),
        config: s.to_config_string(),
        files,
        rows: out.rows.clone(),
    };
    let (path, _) = path_for("manifest", "json");
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(manifest)
}

/// Cartesian grid over the effective sweeps, first axis outermost.
fn grid(s: &Scenario) -> (Vec<String>, Vec<Vec<f64>>) {
    let axes = s.effective_sweeps();
    let names = axes.iter().map(|a| a.variable.clone()).collect();
    let mut points: Vec<Vec<f64>> = vec![Vec::new()];
    for a in &axes {
        let vals = a.values();
        points = points
            .into_iter()
            .flat_map(|p| {
                vals.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push(*v);
                    q
                })
            })
            .collect();
    }
    (names, points)
}

/// Point-specific copy of the scenario with sweep values applied.
fn at_point(s: &Scenario, names: &[String], values: &[f64]) -> Result<Scenario> {
    let mut p = s.clone();
    for (n, &v) in names.iter().zip(values) {
        match n.as_str() {
            "omega0" | "field" => {}
            "sigma_tw_nm" => p.options.sigma_tw_nm = v,
            "tweezer_safety" => p.options.tweezer_safety = v,
            "n_molecules" => p.params.n_molecules = v.round() as usize,
            "omega_long" => p.params.omega_long = Some(v),
            key => p.params.set(key, &format!("{v:?}"))?,
        }
    }
    p.params.validate()?;
    Ok(p)
}

fn sweep_table_for<F>(s: &Scenario, columns: &[&str], f: F) -> (CsvTable, RowCounts)
where
    F: Fn(&Scenario, &[f64]) -> Result<Vec<Value>> + Sync,
{
    sweep_rows(s, columns, |p, v| f(p, v).map_err(|e| e.kind()))
}

/// Evaluate `f` over the grid in parallel and assemble a table with a
/// trailing status column holding `ok` or the error kind.
fn sweep_rows<F>(s: &Scenario, columns: &[&str], f: F) -> (CsvTable, RowCounts)
where
    F: Fn(&Scenario, &[f64]) -> std::result::Result<Vec<Value>, &'static str> + Sync,
{
    let (names, points) = grid(s);
    let results: Vec<std::result::Result<Vec<Value>, &'static str>> = points
        .par_iter()
        .map(|vals| at_point(s, &names, vals).map_err(|e| e.kind()).and_then(|p| f(&p, vals)))
        .collect();
    let mut header: Vec<&str> = names.iter().map(String::as_str).collect();
    header.extend_from_slice(columns);
    header.push("status");
    let mut table = CsvTable::new(&header);
    let mut ok = 0;
    for (vals, r) in points.iter().zip(results) {
        let mut row: Vec<Value> = vals.iter().map(|&v| Value::F(v)).collect();
        match r {
            Ok(cells) => {
                debug_assert_eq!(cells.len(), columns.len());
                row.extend(cells);
                row.push("ok".into());
                ok += 1;
            }
            Err(kind) => {
                row.extend(columns.iter().map(|_| Value::S(String::new())));
                row.push(kind.into());
            }
        }
        table.push(row);
    }
    let total = table.rows.len();
    (table, RowCounts { total, ok })
}

fn spectrum_for(eq: &EquilibriumResult, params: &ModelParams) -> Result<PhononSpectrum> {
    normal_modes(&build_dynamical_matrix(eq, params.mass())?)
}

fn chain_equilibrium(params: &ModelParams) -> Result<EquilibriumResult> {
    let n = params.n_molecules;
    let g = Geometry::chain(n, params.boundary)?;
    let mut trap = TrapSpec::from_params(params);
    trap.long_center = 0.5 * (n as f64 - 1.0);
    minimize_equilibrium(&g, &trap, &MinimizeOptions::default())
}

fn marker_equilibrium(s: &Scenario) -> Result<EquilibriumResult> {
    let p = &s.params;
    let g = lattice_with_marker(p.n_molecules, p.b_over_a, s.options.marker_site, p.boundary, s.options.marker_z)?;
    let mut trap = TrapSpec::from_params(p);
    trap.long_center = 0.5 * (p.n_molecules as f64 - 1.0);
    minimize_equilibrium(&g, &trap, &MinimizeOptions::default())
}

fn stark(s: &Scenario) -> Result<ScenarioOutput> {
    let axes = s.effective_sweeps();
    let axis = &axes[0];
    if axes.len() != 1 {
        return Err(Error::invalid("sweep", "stark_spectrum takes one `field` axis"));
    }
    let mut fields = axis.values();
    if fields.first() > fields.last() {
        fields.reverse();
    }
    let points = stark_sweep(&fields, s.options.n_max)?;
    let table = sweep_table(&points);
    let rows = RowCounts { total: fields.len(), ok: fields.len() };
    Ok(ScenarioOutput { tables: vec![("stark".into(), table)], json: Vec::new(), rows })
}

/// `[COM, breathing]` frequencies on each axis.
fn two_molecule_axis_modes(spec: &PhononSpectrum) -> [[f64; 2]; 3] {
    let mut out = [[f64::NAN; 2]; 3];
    for k in 0..spec.len() {
        let w = spec.axis_weights[k];
        let Some(a) = (0..3).find(|&a| w[a] > 0.5) else { continue };
        let same = spec.amplitude(k, 0)[a] * spec.amplitude(k, 1)[a] > 0.0;
        out[a][usize::from(!same)] = spec.frequencies[k];
    }
    out
}

fn two_molecule_trap(s: &Scenario) -> Result<ScenarioOutput> {
    let columns = [
        "nu",
        "spacing",
        "spacing_expected",
        "omega_com_x",
        "omega_breath_x",
        "omega_com_y",
        "omega_breath_y",
        "omega_com_z",
        "omega_breath_z",
    ];
    let (table, rows) = sweep_table_for(s, &columns, |p, _| {
        let eq = two_molecule_equilibrium(&p.params)?;
        let spec = spectrum_for(&eq, &p.params)?;
        let nu = p.two_molecule_nu();
        let spacing = eq.geometry.separation(1, 0).norm();
        let expected = (6.0 / (p.params.mass() * nu * nu)).powf(0.2);
        let m = two_molecule_axis_modes(&spec);
        let mut row = vec![nu.into(), spacing.into(), expected.into()];
        row.extend(m.iter().flatten().map(|&w| Value::F(w)));
        Ok(row)
    });
    let eq = two_molecule_equilibrium(&s.params)?;
    let spec = spectrum_for(&eq, &s.params)?;
    Ok(ScenarioOutput {
        tables: vec![("points".into(), table), ("modes".into(), spec.to_csv()), ("geometry".into(), eq.geometry.to_csv())],
        json: Vec::new(),
        rows,
    })
}

fn band_edges(spec: &PhononSpectrum) -> [f64; 6] {
    let mut out = [f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY];
    for k in 0..spec.len() {
        let a = match spec.branch[k] {
            Branch::AcousticX => 0,
            Branch::OpticalY => 1,
            Branch::OpticalZ => 2,
            _ => continue,
        };
        out[2 * a] = out[2 * a].min(spec.frequencies[k]);
        out[2 * a + 1] = out[2 * a + 1].max(spec.frequencies[k]);
    }
    out
}

fn chain_spectrum(s: &Scenario) -> Result<ScenarioOutput> {
    let columns = ["energy", "band_x_min", "band_x_max", "band_y_min", "band_y_max", "band_z_min", "band_z_max", "n_local"];
    let (table, rows) = sweep_table_for(s, &columns, |p, _| {
        let eq = chain_equilibrium(&p.params)?;
        let spec = spectrum_for(&eq, &p.params)?;
        let mut row = vec![Value::F(eq.energy)];
        row.extend(band_edges(&spec).iter().map(|&w| Value::F(w)));
        row.push(spec.local_modes().len().into());
        Ok(row)
    });
    let eq = chain_equilibrium(&s.params)?;
    let spec = spectrum_for(&eq, &s.params)?;
    Ok(ScenarioOutput {
        tables: vec![
            ("points".into(), table),
            ("spectrum".into(), spec.to_csv()),
            ("geometry".into(), eq.geometry.to_csv()),
        ],
        json: Vec::new(),
        rows,
    })
}

/// Local-mode summary `(ω, P, marker+target weight)` per axis.
fn local_summary(spec: &PhononSpectrum, pair: &[usize; 2]) -> [[f64; 3]; 3] {
    let mut out = [[f64::NAN; 3]; 3];
    for k in spec.local_modes() {
        let a = match spec.branch[k] {
            Branch::LocalX => 0,
            Branch::LocalY => 1,
            Branch::LocalZ => 2,
            _ => continue,
        };
        out[a] = [spec.frequencies[k], spec.participation(k), spec.weight_on(k, pair)];
    }
    out
}

fn marker_local_modes(s: &Scenario) -> Result<ScenarioOutput> {
    let columns = [
        "omega_local_x",
        "participation_x",
        "weight_x",
        "omega_local_y",
        "participation_y",
        "weight_y",
        "omega_local_z",
        "participation_z",
        "weight_z",
        "n_local",
    ];
    let (table, rows) = sweep_table_for(s, &columns, |p, _| {
        let eq = marker_equilibrium(p)?;
        let spec = spectrum_for(&eq, &p.params)?;
        let pair = marker_pair(&eq.geometry).ok_or_else(|| Error::invalid("marker", "geometry has no marker"))?;
        let mut row: Vec<Value> = local_summary(&spec, &pair).iter().flatten().map(|&v| Value::F(v)).collect();
        row.push(spec.local_modes().len().into());
        Ok(row)
    });
    let eq = marker_equilibrium(s)?;
    let spec = spectrum_for(&eq, &s.params)?;
    Ok(ScenarioOutput {
        tables: vec![
            ("points".into(), table),
            ("spectrum".into(), spec.to_csv()),
            ("geometry".into(), eq.geometry.to_csv()),
        ],
        json: Vec::new(),
        rows,
    })
}

/// Two-molecule couplings and the index of the strongest-coupled mode.
fn two_molecule_table(params: &ModelParams) -> Result<(CouplingTable, usize)> {
    let eq = two_molecule_equilibrium(params)?;
    let spec = spectrum_for(&eq, params)?;
    let table = spin_phonon_couplings(&spec, &eq)?;
    let q = (0..table.modes.len())
        .max_by(|&a, &b| table.lambda.row(a).amax().total_cmp(&table.lambda.row(b).amax()))
        .ok_or_else(|| Error::invalid("modes", "no coupled mode"))?;
    let resonant = table.modes[q];
    Ok((table, resonant))
}

#[derive(Debug, Clone, Copy, Serialize)]
struct PmiOptimum {
    sign: i8,
    omega0: f64,
    delta_r: f64,
    delta_u: f64,
    pmi: f64,
    closed_form: f64,
}

fn pmi_two_molecule(s: &Scenario) -> Result<ScenarioOutput> {
    let (base, resonant) = two_molecule_table(&s.params)?;
    let pairs = [(0usize, 1usize)];
    let w_r = base.frequencies[base.mode_position(resonant).expect("resonant mode is retained")];
    let columns = ["delta_r", "v_pm", "v_pm_over_eps2", "u12", "delta_u", "allowed"];
    let (table, rows) = sweep_table_for(s, &columns, |p, vals| {
        let omega0 = s
            .effective_sweeps()
            .iter()
            .zip(vals)
            .find(|(a, _)| a.variable == "omega0")
            .map_or(w_r - 0.1, |(_, &v)| v);
        let t = base.with_drive(omega0);
        let eps = p.params.epsilon;
        let model = effective_spin_model(&t, eps)?;
        let du = crate::coupling::displacement_bound(&t, eps, &pairs)?;
        let v_pm = model.pmi[(0, 1)];
        Ok(vec![
            (w_r - omega0).into(),
            v_pm.into(),
            (v_pm / (eps * eps)).into(),
            model.u[(0, 1)].into(),
            du.into(),
            usize::from(du <= p.params.delta_u_bar).into(),
        ])
    });
    let eps = s.params.epsilon;
    let mut optima = Vec::new();
    for sign in [1i8, -1] {
        let sol = optimize_detuning(&base, eps, resonant, s.params.delta_u_bar, sign, &pairs)?;
        let model = effective_spin_model(&base.with_drive(sol.omega0), eps)?;
        optima.push(PmiOptimum {
            sign,
            omega0: sol.omega0,
            delta_r: sol.delta_r,
            delta_u: sol.delta_u,
            pmi: model.pmi[(0, 1)],
            closed_form: crate::coupling::enhanced_pmi(eps, s.params.delta_u_bar),
        });
    }
    let mut json = serde_json::to_string_pretty(&optima)?;
    json.push('\n');
    Ok(ScenarioOutput {
        tables: vec![("points".into(), table), ("lambda".into(), base.lambda_csv())],
        json: vec![("optimum".into(), json)],
        rows,
    })
}

/// Geometry-level cache key: everything except `ε` and `Δū`.
fn gate_key(p: &Scenario) -> String {
    let mut kv = p.params.to_key_values();
    kv.remove("epsilon");
    kv.remove("delta_u_bar");
    format!("{kv:?}")
}

fn build_gate(p: &Scenario) -> Result<MarkerGate> {
    let eq = marker_equilibrium(p)?;
    let spec = spectrum_for(&eq, &p.params)?;
    MarkerGate::new(&spec, &eq, p.options.resonant_mode)
}

fn gate_map(s: &Scenario) -> Result<ScenarioOutput> {
    let (names, points) = grid(s);
    // one equilibrium and spectrum per geometry, shared by all ε, Δū
    let mut keyed: Vec<(String, Scenario)> = Vec::new();
    for vals in &points {
        if let Ok(p) = at_point(s, &names, vals) {
            let k = gate_key(&p);
            if !keyed.iter().any(|(kk, _)| *kk == k) {
                keyed.push((k, p));
            }
        }
    }
    let built: Vec<(String, std::result::Result<MarkerGate, &'static str>)> =
        keyed.par_iter().map(|(k, p)| (k.clone(), build_gate(p).map_err(|e| e.kind()))).collect();
    let cache: HashMap<String, std::result::Result<MarkerGate, &'static str>> = built.into_iter().collect();
    let columns =
        ["U0", "U_res", "ratio", "omega0", "delta_r", "delta_u", "E_p", "rwa_ok", "U0_analytic", "U_res_analytic"];
    let (table, rows) = sweep_rows(s, &columns, |p, _| {
        let gate = cache[&gate_key(p)].as_ref().map_err(|k| *k)?;
        let prm = &p.params;
        let ev = gate.evaluate(prm.epsilon, prm.delta_u_bar, p.options.sign).map_err(|e| e.kind())?;
        let sm = ev.summary();
        let a = analytic_gate_estimates(prm.epsilon, prm.b_over_a, prm.delta_u_bar);
        let (u0_a, ures_a) = match p.options.sign {
            SignChoice::Matched => (a.u0_plus, a.u_res_plus),
            SignChoice::Opposed => (a.u0_minus, a.u_res_minus),
        };
        Ok(vec![
            sm.u0.into(),
            sm.u_res.into(),
            sm.ratio.into(),
            sm.omega0.into(),
            sm.delta_r.into(),
            sm.delta_u.into(),
            sm.e_p.into(),
            usize::from(sm.rwa_ok).into(),
            u0_a.into(),
            ures_a.into(),
        ])
    });
    let gate = build_gate(s)?;
    let ev = gate.evaluate(s.params.epsilon, s.params.delta_u_bar, s.options.sign)?;
    let summary: GateSummary = ev.summary();
    let mut json = serde_json::to_string_pretty(&summary)?;
    json.push('\n');
    Ok(ScenarioOutput {
        tables: vec![("points".into(), table), ("spin_model".into(), ev.model.to_csv())],
        json: vec![("summary".into(), json)],
        rows,
    })
}

fn tweezer_window(s: &Scenario) -> Result<ScenarioOutput> {
    let swept: Vec<String> = s.effective_sweeps().into_iter().map(|a| a.variable).collect();
    let show_sigma = !swept.iter().any(|v| v == "sigma_tw_nm");
    let show_safety = !swept.iter().any(|v| v == "tweezer_safety");
    let mut columns = Vec::new();
    if show_sigma {
        columns.push("sigma_tw_nm");
    }
    if show_safety {
        columns.push("tweezer_safety");
    }
    columns.extend(["sigma_tw_a", "omega_min", "omega_max", "omega_min_khz", "omega_max_khz", "empty"]);
    let (table, rows) = sweep_table_for(s, &columns, |p, _| {
        let binding = p.options.binding()?;
        let a_nm = to_physical(&p.params, &binding, Quantity::Length, 1.0)?;
        let sigma = p.options.sigma_tw_nm / a_nm;
        let w = tweezer_constraints(&p.params, sigma, &binding, p.options.tweezer_safety)?;
        let mut row = Vec::new();
        if show_sigma {
            row.push(p.options.sigma_tw_nm.into());
        }
        if show_safety {
            row.push(p.options.tweezer_safety.into());
        }
        row.extend([
            sigma.into(),
            w.omega_min.into(),
            w.omega_max.into(),
            w.omega_min_khz.into(),
            w.omega_max_khz.into(),
            usize::from(w.is_empty()).into(),
        ]);
        Ok(row)
    });
    Ok(ScenarioOutput { tables: vec![("points".into(), table)], json: Vec::new(), rows })
}
