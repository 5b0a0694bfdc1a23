//! Dipole-dipole potential, crystal geometries and equilibrium search.
//!
//! Dipoles point along `z`; the crystal plane is `z = 0` and the chain runs
//! along `x`. A marker molecule sits in a second layer at height `b`.

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen, Vector3};
use serde::Serialize;

use crate::output::CsvTable;
use crate::params::{Boundary, ModelParams};
use crate::{Error, Result};

pub const DEFAULT_IMAGES: usize = 30;
pub const DEFAULT_TOLERANCE: f64 = 1e-10;
pub const DEFAULT_MAX_ITERATIONS: usize = 100_000;
/// Pairs closer than this (in `a`) abort the minimization.
pub const COLLAPSE_DISTANCE: f64 = 0.1;
/// Most negative Hessian eigenvalue accepted at a minimum.
pub const STABILITY_TOLERANCE: f64 = -1e-8;

/// `v_dd(r) = (1 − 3 n_z²)/r³` in units of `D/a³`.
pub fn vdd(r: &Vector3<f64>) -> Result<f64> {
    let r2 = r.norm_squared();
    if r2 == 0.0 {
        return Err(Error::SingularPair);
    }
    let r3 = r2 * r2.sqrt();
    Ok((1.0 - 3.0 * r.z * r.z / r2) / r3)
}

/// Analytic gradient of [`vdd`].
pub fn vdd_grad(r: &Vector3<f64>) -> Result<Vector3<f64>> {
    let r2 = r.norm_squared();
    if r2 == 0.0 {
        return Err(Error::SingularPair);
    }
    let rn = r2.sqrt();
    let n = r / rn;
    let pre = 3.0 / (r2 * r2);
    let s = 5.0 * n.z * n.z - 1.0;
    Ok(Vector3::new(
        pre * n.x * s,
        pre * n.y * s,
        pre * (n.z * s - 2.0 * n.z),
    ))
}

/// Analytic Hessian of [`vdd`].
pub fn vdd_hessian(r: &Vector3<f64>) -> Result<Matrix3<f64>> {
    let r2 = r.norm_squared();
    if r2 == 0.0 {
        return Err(Error::SingularPair);
    }
    let rn = r2.sqrt();
    let r5 = r2 * r2 * rn;
    let r7 = r5 * r2;
    let r9 = r7 * r2;
    let z = r.z;
    let mut h = Matrix3::zeros();
    for a in 0..3 {
        for b in 0..3 {
            let dab = f64::from(u8::from(a == b));
            let daz = f64::from(u8::from(a == 2));
            let dbz = f64::from(u8::from(b == 2));
            let xa = r[a];
            let xb = r[b];
            let inverse_cube = -3.0 * dab / r5 + 15.0 * xa * xb / r7;
            let z_part = 2.0 * daz * dbz / r5 - 10.0 * z * (daz * xb + dbz * xa) / r7
                - 5.0 * z * z * dab / r7
                + 35.0 * z * z * xa * xb / r9;
            h[(a, b)] = inverse_cube - 3.0 * z_part;
        }
    }
    Ok(h)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Layer {
    Crystal,
    Marker,
}

impl Layer {
    pub fn as_str(self) -> &'static str {
        match self {
            Layer::Crystal => "crystal",
            Layer::Marker => "marker",
        }
    }
}

/// Treatment of the marker's out-of-plane coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MarkerZ {
    /// Held at the layer height as a hard constraint.
    Frozen,
    /// Harmonically trapped about the layer height with the transverse trap.
    Trapped,
}

impl std::str::FromStr for MarkerZ {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "frozen" => Ok(MarkerZ::Frozen),
            "trapped" => Ok(MarkerZ::Trapped),
            other => Err(Error::invalid("marker_z", format!("unknown marker model `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    pub positions: Vec<Vector3<f64>>,
    pub layers: Vec<Layer>,
    pub boundary: Boundary,
    /// Period along `x` (periodic boundary only).
    pub length: f64,
    /// Frozen-coordinate mask, `true` = held fixed.
    pub frozen: Vec<[bool; 3]>,
    /// Marker layer height `b/a`.
    pub marker_height: f64,
    /// Periodic images summed on each side.
    pub images: usize,
}

impl Geometry {
    /// Equally spaced chain `x_i = i`, `i = 0..n`. An open chain has its
    /// end molecules pinned along `x`.
    pub fn chain(n: usize, boundary: Boundary) -> Result<Self> {
        if n < 2 {
            return Err(Error::invalid("n", "chain needs at least 2 molecules"));
        }
        let mut frozen = vec![[false; 3]; n];
        if boundary == Boundary::Open {
            frozen[0][0] = true;
            frozen[n - 1][0] = true;
        }
        Ok(Self {
            positions: (0..n).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect(),
            layers: vec![Layer::Crystal; n],
            boundary,
            length: n as f64,
            frozen,
            marker_height: 0.0,
            images: DEFAULT_IMAGES,
        })
    }

    /// Two molecules on the `x` axis at separation `spacing`, centred on 0.
    pub fn two_molecule(spacing: f64) -> Self {
        Self {
            positions: vec![
                Vector3::new(-0.5 * spacing, 0.0, 0.0),
                Vector3::new(0.5 * spacing, 0.0, 0.0),
            ],
            layers: vec![Layer::Crystal; 2],
            boundary: Boundary::Harmonic,
            length: 0.0,
            frozen: vec![[false; 3]; 2],
            marker_height: 0.0,
            images: DEFAULT_IMAGES,
        }
    }

    pub fn with_images(mut self, images: usize) -> Self {
        self.images = images;
        self
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn marker(&self) -> Option<usize> {
        self.layers.iter().position(|&l| l == Layer::Marker)
    }

    pub fn crystal_count(&self) -> usize {
        self.layers.iter().filter(|&&l| l == Layer::Crystal).count()
    }

    /// Crystal molecule directly below the marker.
    pub fn target(&self) -> Option<usize> {
        let m = self.marker()?;
        let xm = self.positions[m].x;
        (0..self.len())
            .filter(|&i| self.layers[i] == Layer::Crystal)
            .min_by(|&i, &j| {
                let di = self.wrap(self.positions[i].x - xm).abs();
                let dj = self.wrap(self.positions[j].x - xm).abs();
                di.total_cmp(&dj)
            })
    }

    pub fn periodic(&self) -> bool {
        self.boundary == Boundary::Periodic
    }

    fn wrap(&self, dx: f64) -> f64 {
        if self.periodic() {
            dx - self.length * (dx / self.length).round()
        } else {
            dx
        }
    }

    /// Minimum-image separation `r_i − r_j`.
    pub fn separation(&self, i: usize, j: usize) -> Vector3<f64> {
        let mut d = self.positions[i] - self.positions[j];
        d.x = self.wrap(d.x);
        d
    }

    fn fold(&mut self) {
        if self.periodic() {
            let l = self.length;
            for p in &mut self.positions {
                p.x = p.x.rem_euclid(l);
                if p.x >= l {
                    p.x -= l;
                }
            }
        }
    }

    /// Image shifts along `x` to sum over.
    fn shifts(&self) -> Vec<f64> {
        if self.periodic() {
            let k = self.images as i64;
            (-k..=k).map(|n| n as f64 * self.length).collect()
        } else {
            vec![0.0]
        }
    }

    pub fn free_coordinates(&self) -> Vec<usize> {
        (0..3 * self.len()).filter(|&c| !self.frozen[c / 3][c % 3]).collect()
    }

    pub fn to_csv(&self) -> CsvTable {
        let mut t = CsvTable::new(&["index", "layer", "x", "y", "z"]);
        for (i, (p, l)) in self.positions.iter().zip(&self.layers).enumerate() {
            t.push(vec![i.into(), l.as_str().into(), p.x.into(), p.y.into(), p.z.into()]);
        }
        t
    }
}

/// Perfect chain plus a marker directly above `marker_site` at height `b/a`.
pub fn lattice_with_marker(
    n: usize,
    b_over_a: f64,
    marker_site: usize,
    boundary: Boundary,
    marker_z: MarkerZ,
) -> Result<Geometry> {
    if n < 3 {
        return Err(Error::invalid("n", "chain with marker needs at least 3 molecules"));
    }
    if marker_site >= n {
        return Err(Error::invalid(
            "marker_site",
            format!("site {marker_site} outside chain of {n}"),
        ));
    }
    if !(b_over_a > 0.0) {
        return Err(Error::invalid("b_over_a", "must be positive"));
    }
    let mut g = Geometry::chain(n, boundary)?;
    g.positions.push(Vector3::new(marker_site as f64, 0.0, b_over_a));
    g.layers.push(Layer::Marker);
    g.frozen.push([false, false, marker_z == MarkerZ::Frozen]);
    g.marker_height = b_over_a;
    Ok(g)
}

/// External confinement, as curvatures in `D/a⁵`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrapSpec {
    /// `m ω⊥²` on `y` and `z` (marker `z` measured from the layer height).
    pub perp: f64,
    /// `m ν²` along `x` for crystal molecules; zero for none.
    pub long: f64,
    pub long_center: f64,
}

impl TrapSpec {
    pub fn from_params(p: &ModelParams) -> Self {
        Self { perp: p.perp_curvature(), long: p.long_curvature(), long_center: 0.0 }
    }
}

/// Hurwitz zeta `ζ(s, q) = Σ_{n≥0} (n + q)^{−s}` for `q ≥ 10` by
/// Euler–Maclaurin; the omitted remainder is below 1e-13 relative for
/// `q ≥ 30`, the range used by the image tails.
fn hurwitz_zeta(s: f64, q: f64) -> f64 {
    debug_assert!(q >= 10.0);
    // B_{2k} / (2k)!
    const COEFFS: [f64; 5] =
        [1.0 / 12.0, -1.0 / 720.0, 1.0 / 30_240.0, -1.0 / 1_209_600.0, 1.0 / 47_900_160.0];
    let mut sum = q.powf(1.0 - s) / (s - 1.0) + 0.5 * q.powf(-s);
    let mut rising = s; // s (s+1) ... (s+2k−2)
    let mut power = q.powf(-s - 1.0);
    for (k, c) in COEFFS.iter().enumerate() {
        sum += c * rising * power;
        let m = 2.0 * k as f64;
        rising *= (s + m + 1.0) * (s + m + 2.0);
        power /= q * q;
    }
    sum
}

/// Contribution of all images beyond the explicit cutoff to
/// `(v, ∂v/∂x, ∂²v/∂x²)`, using the on-axis form `|X|^{−3}` (off-axis
/// corrections fall off as `|X|^{−5}`). Keeps the periodic sums smooth when
/// a pair crosses the half-period.
fn image_tail(dx: f64, length: f64, images: usize) -> (f64, f64, f64) {
    let q0 = images as f64 + 1.0;
    let (qp, qm) = (q0 + dx / length, q0 - dx / length);
    let l3 = length.powi(3);
    let v = (hurwitz_zeta(3.0, qp) + hurwitz_zeta(3.0, qm)) / l3;
    let g = 3.0 * (hurwitz_zeta(4.0, qm) - hurwitz_zeta(4.0, qp)) / (l3 * length);
    let h = 12.0 * (hurwitz_zeta(5.0, qp) + hurwitz_zeta(5.0, qm)) / (l3 * length * length);
    (v, g, h)
}

/// Image-summed pair quantities for `r_i − r_j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairTerm {
    pub i: usize,
    pub j: usize,
    pub value: f64,
    pub grad: Vector3<f64>,
    pub hess: Matrix3<f64>,
}

/// All unordered pairs `i < j` with image-summed potential, gradient and
/// Hessian evaluated at `r_i − r_j`.
pub fn pair_terms(geom: &Geometry) -> Result<Vec<PairTerm>> {
    let shifts = geom.shifts();
    let n = geom.len();
    let mut out = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let d = geom.separation(i, j);
            let mut t = PairTerm { i, j, value: 0.0, grad: Vector3::zeros(), hess: Matrix3::zeros() };
            for &s in &shifts {
                let r = Vector3::new(d.x + s, d.y, d.z);
                t.value += vdd(&r)?;
                t.grad += vdd_grad(&r)?;
                t.hess += vdd_hessian(&r)?;
            }
            if geom.periodic() {
                let (v, g, h) = image_tail(d.x, geom.length, geom.images);
                t.value += v;
                t.grad.x += g;
                t.hess[(0, 0)] += h;
            }
            out.push(t);
        }
    }
    Ok(out)
}

fn pair_values(geom: &Geometry) -> Result<Vec<(usize, usize, f64, Vector3<f64>)>> {
    let shifts = geom.shifts();
    let n = geom.len();
    let mut out = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let d = geom.separation(i, j);
            let mut v = 0.0;
            let mut g = Vector3::zeros();
            for &s in &shifts {
                let r = Vector3::new(d.x + s, d.y, d.z);
                v += vdd(&r)?;
                g += vdd_grad(&r)?;
            }
            if geom.periodic() {
                let (tv, tg, _) = image_tail(d.x, geom.length, geom.images);
                v += tv;
                g.x += tg;
            }
            out.push((i, j, v, g));
        }
    }
    Ok(out)
}

fn trap_center(geom: &Geometry, i: usize) -> Vector3<f64> {
    match geom.layers[i] {
        Layer::Crystal => Vector3::zeros(),
        Layer::Marker => Vector3::new(0.0, 0.0, geom.marker_height),
    }
}

fn trap_curvatures(geom: &Geometry, trap: &TrapSpec, i: usize) -> [f64; 3] {
    match geom.layers[i] {
        Layer::Crystal => [trap.long, trap.perp, trap.perp],
        Layer::Marker => [0.0, trap.perp, trap.perp],
    }
}

fn trap_offset(geom: &Geometry, trap: &TrapSpec, i: usize) -> Vector3<f64> {
    let mut d = geom.positions[i] - trap_center(geom, i);
    d.x = geom.positions[i].x - trap.long_center;
    d
}

/// Total potential energy `Σ_{i<j} v_dd + Σ_i V_trap`.
pub fn potential_energy(geom: &Geometry, trap: &TrapSpec) -> Result<f64> {
    let mut e: f64 = pair_values(geom)?.iter().map(|p| p.2).sum();
    for i in 0..geom.len() {
        let k = trap_curvatures(geom, trap, i);
        let d = trap_offset(geom, trap, i);
        e += 0.5 * (k[0] * d.x * d.x + k[1] * d.y * d.y + k[2] * d.z * d.z);
    }
    Ok(e)
}

/// Dipole-dipole energy as `½ Σ_{i≠j}` over ordered pairs.
pub fn interaction_energy_ordered(geom: &Geometry) -> Result<f64> {
    let shifts = geom.shifts();
    let mut e = 0.0;
    for i in 0..geom.len() {
        for j in 0..geom.len() {
            if i == j {
                continue;
            }
            let d = geom.separation(i, j);
            for &s in &shifts {
                e += 0.5 * vdd(&Vector3::new(d.x + s, d.y, d.z))?;
            }
            if geom.periodic() {
                e += 0.5 * image_tail(d.x, geom.length, geom.images).0;
            }
        }
    }
    Ok(e)
}

/// Gradient of [`potential_energy`] per molecule.
pub fn gradient(geom: &Geometry, trap: &TrapSpec) -> Result<Vec<Vector3<f64>>> {
    let mut g = vec![Vector3::zeros(); geom.len()];
    for (i, j, _, pg) in pair_values(geom)? {
        g[i] += pg;
        g[j] -= pg;
    }
    for (i, gi) in g.iter_mut().enumerate() {
        let k = trap_curvatures(geom, trap, i);
        let d = trap_offset(geom, trap, i);
        *gi += Vector3::new(k[0] * d.x, k[1] * d.y, k[2] * d.z);
    }
    Ok(g)
}

/// Full `3n × 3n` Hessian of [`potential_energy`]; coordinate `3i + α`.
pub fn hessian(geom: &Geometry, trap: &TrapSpec) -> Result<DMatrix<f64>> {
    let n = geom.len();
    let mut h = DMatrix::zeros(3 * n, 3 * n);
    for t in pair_terms(geom)? {
        for a in 0..3 {
            for b in 0..3 {
                let v = t.hess[(a, b)];
                h[(3 * t.i + a, 3 * t.i + b)] += v;
                h[(3 * t.j + a, 3 * t.j + b)] += v;
                h[(3 * t.i + a, 3 * t.j + b)] -= v;
                h[(3 * t.j + a, 3 * t.i + b)] -= v;
            }
        }
    }
    for i in 0..n {
        let k = trap_curvatures(geom, trap, i);
        for a in 0..3 {
            h[(3 * i + a, 3 * i + a)] += k[a];
        }
    }
    Ok(h)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumResult {
    pub geometry: Geometry,
    pub trap: TrapSpec,
    pub energy: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    /// Smallest Hessian eigenvalue over free coordinates (zero modes included).
    pub min_curvature: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinimizeOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Largest single-coordinate move per step, in `a`.
    pub max_step: f64,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        Self { tolerance: DEFAULT_TOLERANCE, max_iterations: DEFAULT_MAX_ITERATIONS, max_step: 0.1 }
    }
}

fn check_collapse(geom: &Geometry) -> Result<()> {
    for i in 0..geom.len() {
        for j in i + 1..geom.len() {
            let d = geom.separation(i, j).norm();
            if d < COLLAPSE_DISTANCE {
                return Err(Error::Collapse { i, j, distance: d });
            }
        }
    }
    Ok(())
}

fn free_gradient(geom: &Geometry, trap: &TrapSpec, free: &[usize]) -> Result<DVector<f64>> {
    let g = gradient(geom, trap)?;
    Ok(DVector::from_iterator(free.len(), free.iter().map(|&c| g[c / 3][c % 3])))
}

fn free_hessian(geom: &Geometry, trap: &TrapSpec, free: &[usize]) -> Result<DMatrix<f64>> {
    let h = hessian(geom, trap)?;
    Ok(h.select_rows(free).select_columns(free))
}

fn dominant_axis(v: &DVector<f64>, free: &[usize]) -> &'static str {
    let mut w = [0.0; 3];
    for (k, &c) in free.iter().enumerate() {
        w[c % 3] += v[k] * v[k];
    }
    let a = (0..3).max_by(|&a, &b| w[a].total_cmp(&w[b])).unwrap_or(0);
    ["x", "y", "z"][a]
}

/// Newton iteration on the free coordinates.
///
/// Steps use the eigen-decomposed Hessian with `|λ|` in place of negative
/// eigenvalues and zero modes (uniform translation) projected out, followed
/// by backtracking on the energy.
pub fn minimize_equilibrium(
    initial: &Geometry,
    trap: &TrapSpec,
    opts: &MinimizeOptions,
) -> Result<EquilibriumResult> {
    let free = initial.free_coordinates();
    let mut geom = initial.clone();
    geom.fold();
    check_collapse(&geom)?;
    let mut energy = potential_energy(&geom, trap)?;
    let mut g = free_gradient(&geom, trap, &free)?;
    let mut gnorm = g.amax();
    let mut iterations = 0;
    while gnorm > opts.tolerance {
        if iterations >= opts.max_iterations {
            return Err(Error::NotConverged { iterations, gradient_norm: gnorm });
        }
        iterations += 1;
        let h = free_hessian(&geom, trap, &free)?;
        let eig = SymmetricEigen::new(h);
        let scale = eig.eigenvalues.amax().max(1e-300);
        let mut step = DVector::zeros(free.len());
        for (k, &lam) in eig.eigenvalues.iter().enumerate() {
            if lam.abs() <= 1e-10 * scale {
                continue;
            }
            let v = eig.eigenvectors.column(k);
            step -= v * (v.dot(&g) / lam.abs());
        }
        let largest = step.amax();
        if largest > opts.max_step {
            step *= opts.max_step / largest;
        }
        let slope = g.dot(&step);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let mut trial = geom.clone();
            for (k, &c) in free.iter().enumerate() {
                trial.positions[c / 3][c % 3] += t * step[k];
            }
            trial.fold();
            if check_collapse(&trial).is_ok() {
                let e = potential_energy(&trial, trap)?;
                let gt = free_gradient(&trial, trap, &free)?;
                let gn = gt.amax();
                let armijo = e <= energy + 1e-4 * t * slope;
                // near convergence energy differences drop below round-off
                let roundoff = e <= energy + 1e-13 * energy.abs().max(1.0) && gn < 0.5 * gnorm;
                if armijo || roundoff {
                    geom = trial;
                    energy = e;
                    g = gt;
                    gnorm = gn;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            // report the collapse if that is what blocked progress
            let mut trial = geom.clone();
            for (k, &c) in free.iter().enumerate() {
                trial.positions[c / 3][c % 3] += step[k];
            }
            trial.fold();
            check_collapse(&trial)?;
            return Err(Error::NotConverged { iterations, gradient_norm: gnorm });
        }
    }
    let h = free_hessian(&geom, trap, &free)?;
    let eig = SymmetricEigen::new(h);
    let (kmin, min_curvature) = eig
        .eigenvalues
        .iter()
        .copied()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap_or((0, 0.0));
    if min_curvature < STABILITY_TOLERANCE {
        let v = eig.eigenvectors.column(kmin).into_owned();
        return Err(Error::Unstable {
            eigenvalue: min_curvature,
            axis: dominant_axis(&v, &free).to_string(),
        });
    }
    Ok(EquilibriumResult { geometry: geom, trap: *trap, energy, gradient_norm: gnorm, iterations, min_curvature })
}

/// Two molecules in a harmonic trap `ν` (longitudinal) and `ν⊥`.
pub fn two_molecule_equilibrium(params: &ModelParams) -> Result<EquilibriumResult> {
    let nu = params
        .omega_long
        .ok_or_else(|| Error::invalid("omega_long", "two-molecule trap needs a longitudinal frequency"))?;
    let trap = TrapSpec::from_params(params);
    let guess = (6.0 / (params.mass() * nu * nu)).powf(0.2);
    // start away from the answer so the minimizer has work to do
    minimize_equilibrium(&Geometry::two_molecule(1.3 * guess), &trap, &MinimizeOptions::default())
}

/// Longitudinal frequency giving unit equilibrium spacing for two molecules.
pub fn unit_spacing_nu(r_d: f64) -> f64 {
    (6.0 / r_d).sqrt()
}
