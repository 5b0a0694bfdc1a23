//! Harmonic phonons about a crystal equilibrium.
//!
//! The dynamical matrix is the potential Hessian over the free coordinates
//! (`D/a⁵`); with equal masses `ω_k² = eig_k / m`. Mode functions are stored
//! over all `3n` coordinates with zeros on frozen ones.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::crystal::{hessian, EquilibriumResult, Geometry, Layer};
use crate::output::{CsvTable, Value};
use crate::{Error, Result};

/// Eigenvalues below this (in `D/a⁵`) are treated as unstable.
pub const NEGATIVE_CURVATURE_TOLERANCE: f64 = -1e-8;
pub const DEFAULT_GAP_FRACTION: f64 = 0.02;
pub const DEFAULT_LOCALIZATION_THRESHOLD: f64 = 4.0;
/// Axis weight needed to assign a mode to that axis.
pub const AXIS_DOMINANCE: f64 = 0.9;

const SYMMETRY_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicalMatrix {
    /// Hessian over the free coordinates.
    pub entries: DMatrix<f64>,
    /// Full coordinate index `3i + α` of each row.
    pub coords: Vec<usize>,
    pub mass: f64,
    pub geometry: Geometry,
}

pub fn build_dynamical_matrix(eq: &EquilibriumResult, mass: f64) -> Result<DynamicalMatrix> {
    if !(mass > 0.0) {
        return Err(Error::invalid("mass", "must be positive"));
    }
    let coords = eq.geometry.free_coordinates();
    let full = hessian(&eq.geometry, &eq.trap)?;
    let mut entries = full.select_rows(&coords).select_columns(&coords);
    // remove round-off asymmetry
    entries = (&entries + entries.transpose()) * 0.5;
    Ok(DynamicalMatrix { entries, coords, mass, geometry: eq.geometry.clone() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    AcousticX,
    OpticalY,
    OpticalZ,
    LocalX,
    LocalY,
    LocalZ,
    Mixed,
}

impl Branch {
    pub fn as_str(self) -> &'static str {
        match self {
            Branch::AcousticX => "acoustic_x",
            Branch::OpticalY => "optical_y",
            Branch::OpticalZ => "optical_z",
            Branch::LocalX => "local_x",
            Branch::LocalY => "local_y",
            Branch::LocalZ => "local_z",
            Branch::Mixed => "mixed",
        }
    }

    pub fn is_local(self) -> bool {
        matches!(self, Branch::LocalX | Branch::LocalY | Branch::LocalZ)
    }

    fn band(axis: usize) -> Self {
        [Branch::AcousticX, Branch::OpticalY, Branch::OpticalZ][axis]
    }

    fn local(axis: usize) -> Self {
        [Branch::LocalX, Branch::LocalY, Branch::LocalZ][axis]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhononSpectrum {
    /// Ascending, in `D/(ħa³)`.
    pub frequencies: Vec<f64>,
    /// `3n × modes`, column `k` is `ζ_k`.
    pub modes: DMatrix<f64>,
    /// Parity under the reflection `x → −x` about the marker (or site 0).
    pub parity: Vec<Option<i8>>,
    /// `Σ_i (Σ_α ζ²)²`.
    pub ipr: Vec<f64>,
    /// Weight of each mode on the `x`, `y`, `z` coordinates.
    pub axis_weights: Vec<[f64; 3]>,
    pub branch: Vec<Branch>,
    pub mass: f64,
    pub n_molecules: usize,
}

impl PhononSpectrum {
    pub fn len(&self) -> usize {
        self.frequencies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequencies.is_empty()
    }

    /// Participation number `1/ipr`.
    pub fn participation(&self, k: usize) -> f64 {
        1.0 / self.ipr[k]
    }

    /// `ζ_k` restricted to molecule `i`.
    pub fn amplitude(&self, k: usize, i: usize) -> [f64; 3] {
        [self.modes[(3 * i, k)], self.modes[(3 * i + 1, k)], self.modes[(3 * i + 2, k)]]
    }

    /// Summed squared amplitude of mode `k` on the given molecules.
    pub fn weight_on(&self, k: usize, molecules: &[usize]) -> f64 {
        molecules
            .iter()
            .map(|&i| self.amplitude(k, i).iter().map(|a| a * a).sum::<f64>())
            .sum()
    }

    pub fn local_modes(&self) -> Vec<usize> {
        (0..self.len()).filter(|&k| self.branch[k].is_local()).collect()
    }

    /// Zero-point length `√(ħ/2mω_k)`.
    pub fn zero_point_length(&self, k: usize) -> f64 {
        (1.0 / (2.0 * self.mass * self.frequencies[k])).sqrt()
    }

    pub fn to_csv(&self) -> CsvTable {
        let mut t = CsvTable::new(&[
            "k", "omega", "branch", "ipr", "participation", "parity", "weight_x", "weight_y", "weight_z",
        ]);
        for k in 0..self.len() {
            let parity = match self.parity[k] {
                Some(p) => Value::I(p.into()),
                None => Value::S(String::new()),
            };
            let w = self.axis_weights[k];
            t.push(vec![
                k.into(),
                self.frequencies[k].into(),
                self.branch[k].as_str().into(),
                self.ipr[k].into(),
                self.participation(k).into(),
                parity,
                w[0].into(),
                w[1].into(),
                w[2].into(),
            ]);
        }
        t
    }

    /// Full mode-function dump: one row per (mode, molecule, axis).
    pub fn modes_csv(&self) -> CsvTable {
        let mut t = CsvTable::new(&["k", "molecule", "axis", "amplitude"]);
        for k in 0..self.len() {
            for i in 0..self.n_molecules {
                for (a, name) in ["x", "y", "z"].iter().enumerate() {
                    t.push(vec![k.into(), i.into(), (*name).into(), self.modes[(3 * i + a, k)].into()]);
                }
            }
        }
        t
    }
}

/// Signed image of each free coordinate under the mirror `x → 2c − x`.
fn reflection_map(geom: &Geometry, coords: &[usize]) -> Option<Vec<(usize, f64)>> {
    let center = match geom.marker() {
        Some(m) => geom.positions[m].x,
        None => geom.positions.first()?.x,
    };
    let n = geom.len();
    let mut partner = vec![usize::MAX; n];
    for i in 0..n {
        let p = geom.positions[i];
        let mirrored_x = 2.0 * center - p.x;
        let found = (0..n).find(|&j| {
            let q = geom.positions[j];
            let mut dx = q.x - mirrored_x;
            if geom.periodic() {
                dx -= geom.length * (dx / geom.length).round();
            }
            geom.layers[j] == geom.layers[i]
                && geom.frozen[j] == geom.frozen[i]
                && dx.abs() < SYMMETRY_TOLERANCE
                && (q.y - p.y).abs() < SYMMETRY_TOLERANCE
                && (q.z - p.z).abs() < SYMMETRY_TOLERANCE
        })?;
        partner[i] = found;
    }
    let index: std::collections::HashMap<usize, usize> =
        coords.iter().enumerate().map(|(k, &c)| (c, k)).collect();
    coords
        .iter()
        .map(|&c| {
            let (i, a) = (c / 3, c % 3);
            let image = 3 * partner[i] + a;
            let sign = if a == 0 { -1.0 } else { 1.0 };
            index.get(&image).map(|&k| (k, sign))
        })
        .collect()
}

/// Orthonormal bases (columns) of the symmetry sectors, with the mirror
/// parity of each sector when the reflection is available.
fn symmetry_sectors(dm: &DynamicalMatrix) -> Vec<(DMatrix<f64>, Option<i8>)> {
    let geom = &dm.geometry;
    let nf = dm.coords.len();
    // y → −y separates y from x/z whenever the geometry lies in the y = 0 plane
    let planar = geom.positions.iter().all(|p| p.y.abs() < SYMMETRY_TOLERANCE);
    let groups: Vec<Vec<usize>> = if planar {
        let (y, xz): (Vec<usize>, Vec<usize>) = (0..nf).partition(|&k| dm.coords[k] % 3 == 1);
        vec![xz, y].into_iter().filter(|g| !g.is_empty()).collect()
    } else {
        vec![(0..nf).collect()]
    };
    let mirror = reflection_map(geom, &dm.coords);
    let mut sectors = Vec::new();
    for group in groups {
        match &mirror {
            Some(map) => {
                for parity in [1i8, -1] {
                    let mut cols: Vec<DVector<f64>> = Vec::new();
                    let mut seen = vec![false; nf];
                    for &k in &group {
                        if seen[k] {
                            continue;
                        }
                        let (img, sign) = map[k];
                        seen[k] = true;
                        seen[img] = true;
                        let mut v = DVector::zeros(nf);
                        if img == k {
                            if sign * f64::from(parity) > 0.0 {
                                v[k] = 1.0;
                                cols.push(v);
                            }
                        } else {
                            let s = std::f64::consts::FRAC_1_SQRT_2;
                            v[k] = s;
                            v[img] = f64::from(parity) * sign * s;
                            cols.push(v);
                        }
                    }
                    if !cols.is_empty() {
                        sectors.push((DMatrix::from_columns(&cols), Some(parity)));
                    }
                }
            }
            None => {
                let cols: Vec<DVector<f64>> = group
                    .iter()
                    .map(|&k| {
                        let mut v = DVector::zeros(nf);
                        v[k] = 1.0;
                        v
                    })
                    .collect();
                sectors.push((DMatrix::from_columns(&cols), None));
            }
        }
    }
    sectors
}

fn fix_sign(v: &mut DVector<f64>) {
    let mut best = 0;
    for k in 0..v.len() {
        if v[k].abs() > v[best].abs() + 1e-12 {
            best = k;
        }
    }
    if v[best] < 0.0 {
        v.neg_mut();
    }
}

/// Diagonalize the dynamical matrix sector by sector and classify the modes
/// with default thresholds.
pub fn normal_modes(dm: &DynamicalMatrix) -> Result<PhononSpectrum> {
    let n = dm.geometry.len();
    let nf = dm.coords.len();
    let mut raw: Vec<(f64, DVector<f64>, Option<i8>)> = Vec::with_capacity(nf);
    for (basis, parity) in symmetry_sectors(dm) {
        let block = basis.transpose() * &dm.entries * &basis;
        let eig = SymmetricEigen::new(block);
        for (k, &lam) in eig.eigenvalues.iter().enumerate() {
            if lam < NEGATIVE_CURVATURE_TOLERANCE {
                return Err(Error::ImaginaryFrequency(lam));
            }
            let mut v = &basis * eig.eigenvectors.column(k);
            v /= v.norm();
            fix_sign(&mut v);
            raw.push((lam.max(0.0), v, parity));
        }
    }
    raw.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut modes = DMatrix::zeros(3 * n, nf);
    let mut frequencies = Vec::with_capacity(nf);
    let mut parity = Vec::with_capacity(nf);
    let mut ipr = Vec::with_capacity(nf);
    let mut axis_weights = Vec::with_capacity(nf);
    for (k, (lam, v, p)) in raw.into_iter().enumerate() {
        frequencies.push((lam / dm.mass).sqrt());
        parity.push(p);
        let mut per_molecule = vec![0.0; n];
        let mut w = [0.0; 3];
        for (r, &c) in dm.coords.iter().enumerate() {
            modes[(c, k)] = v[r];
            per_molecule[c / 3] += v[r] * v[r];
            w[c % 3] += v[r] * v[r];
        }
        ipr.push(per_molecule.iter().map(|x| x * x).sum());
        axis_weights.push(w);
    }
    let mut spectrum = PhononSpectrum {
        frequencies,
        modes,
        parity,
        ipr,
        axis_weights,
        branch: Vec::new(),
        mass: dm.mass,
        n_molecules: n,
    };
    spectrum.branch = classify_modes(&spectrum, &ClassifyOptions::default());
    Ok(spectrum)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassifyOptions {
    /// Required separation from the band edge, as a fraction of the bandwidth.
    pub gap_fraction: f64,
    /// Participation number below which a mode counts as localized.
    pub localization_threshold: f64,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        Self { gap_fraction: DEFAULT_GAP_FRACTION, localization_threshold: DEFAULT_LOCALIZATION_THRESHOLD }
    }
}

fn dominant_axis(w: &[f64; 3]) -> Option<usize> {
    let total: f64 = w.iter().sum();
    (0..3).find(|&a| w[a] > AXIS_DOMINANCE * total)
}

/// Branch labels. Bands are formed by the extended (non-localized) modes of
/// each axis; a localized mode is flagged local when it lies outside its
/// axis band by more than the gap threshold.
pub fn classify_modes(spectrum: &PhononSpectrum, opts: &ClassifyOptions) -> Vec<Branch> {
    let axis: Vec<Option<usize>> = spectrum.axis_weights.iter().map(dominant_axis).collect();
    let localized: Vec<bool> =
        (0..spectrum.len()).map(|k| spectrum.participation(k) < opts.localization_threshold).collect();
    let mut bands = [(f64::INFINITY, f64::NEG_INFINITY, 0usize); 3];
    for k in 0..spectrum.len() {
        if let (Some(a), false) = (axis[k], localized[k]) {
            let w = spectrum.frequencies[k];
            bands[a].0 = bands[a].0.min(w);
            bands[a].1 = bands[a].1.max(w);
            bands[a].2 += 1;
        }
    }
    (0..spectrum.len())
        .map(|k| {
            let Some(a) = axis[k] else { return Branch::Mixed };
            let (lo, hi, count) = bands[a];
            if localized[k] && count >= 2 {
                let gap = opts.gap_fraction * (hi - lo);
                let w = spectrum.frequencies[k];
                if w > hi + gap || w < lo - gap {
                    return Branch::local(a);
                }
            }
            Branch::band(a)
        })
        .collect()
}

/// Molecules whose combined weight is reported for local modes: the marker
/// and the crystal molecule beneath it.
pub fn marker_pair(geom: &Geometry) -> Option<[usize; 2]> {
    Some([geom.marker()?, geom.target()?])
}

/// Whether any molecule carries the marker layer tag.
pub fn has_marker(geom: &Geometry) -> bool {
    geom.layers.contains(&Layer::Marker)
}
