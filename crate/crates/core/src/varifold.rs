//! Discrete oriented varifolds as weighted atoms per ordered phase pair: lifts from
//! partitions and from phase fields, first variation, generalized mean curvature and the
//! compatibility and dissipation checks.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::basis::{first_variation_rhs, fit_field, tangential_divergence, FieldFit, FourierBasis, Sample, TestField};
use crate::error::{Error, Result};
use crate::geodesic::{GeodesicParams, SurfaceTensionMatrix};
use crate::localization::{covering_error, BallCovering};
use crate::potential::MultiwellPotential;
use crate::scalar::Scalar;
use crate::sharp::{interface_mesh, project_smoothed, InterfaceMesh, Projection, Status, VelocityEstimate};
use crate::torus::{psi_field, PhaseField, Spectral, TorusGrid};

/// Point mass `mass * delta_x (x) delta_p`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Atom {
    pub x: [f64; 3],
    pub p: [f64; 3],
    pub mass: f64,
}

/// `mu_ij` for every ordered pair, stored as atoms. `mu_i = 2 mu_ii + sum_{j != i} mu_ij`
/// and `mu = 1/2 sum_i mu_i`.
#[derive(Clone, Debug)]
pub struct DiscreteVarifold {
    grid: TorusGrid<f64>,
    phases: usize,
    pub time: f64,
    atoms: Vec<Vec<Atom>>,
}

/// Per-atom scalars aligned with [`DiscreteVarifold::pair`], indexed `i * P + j`.
pub type PairValues = Vec<Vec<f64>>;

impl DiscreteVarifold {
    pub fn new(grid: TorusGrid<f64>, phases: usize, time: f64) -> Result<Self> {
        if phases == 0 {
            return Err(Error::Precondition("a varifold needs at least one phase".into()));
        }
        Ok(Self { grid, phases, time, atoms: vec![Vec::new(); phases * phases] })
    }

    /// Add an atom to `mu_ij`; `p` is normalized.
    pub fn push(&mut self, i: usize, j: usize, x: &[f64], p: &[f64], mass: f64) -> Result<()> {
        if i >= self.phases || j >= self.phases {
            return Err(Error::Precondition(format!("pair ({i}, {j}) out of range")));
        }
        if !(mass >= 0.0) || !mass.is_finite() {
            return Err(Error::Domain(format!("atom mass {mass}")));
        }
        let d = self.grid.dim();
        let len = p[..d].iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(len > 0.0) || !len.is_finite() {
            return Err(Error::Domain("atom orientation vanishes".into()));
        }
        let l = self.grid.length();
        let xa: [f64; 3] = std::array::from_fn(|a| if a < d { x[a].rem_euclid(l) } else { 0.0 });
        let pa: [f64; 3] = std::array::from_fn(|a| if a < d { p[a] / len } else { 0.0 });
        self.atoms[i * self.phases + j].push(Atom { x: xa, p: pa, mass });
        Ok(())
    }

    pub fn grid(&self) -> &TorusGrid<f64> {
        &self.grid
    }

    pub fn phases(&self) -> usize {
        self.phases
    }

    pub fn pair(&self, i: usize, j: usize) -> &[Atom] {
        &self.atoms[i * self.phases + j]
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.iter().all(|a| a.is_empty())
    }

    /// Weight of `mu_ij` inside `mu`: 1 on the diagonal, 1/2 otherwise.
    pub fn pair_weight(i: usize, j: usize) -> f64 {
        if i == j {
            1.0
        } else {
            0.5
        }
    }

    /// Atoms of `mu` in row-major pair order with their weight in `mu`.
    pub fn weighted_atoms(&self) -> Vec<(usize, usize, Atom, f64)> {
        let p = self.phases;
        let mut out = Vec::new();
        for i in 0..p {
            for j in 0..p {
                let w = Self::pair_weight(i, j);
                out.extend(self.pair(i, j).iter().map(|a| (i, j, *a, w * a.mass)));
            }
        }
        out
    }

    pub fn pair_mass(&self, i: usize, j: usize) -> f64 {
        self.pair(i, j).iter().map(|a| a.mass).sum()
    }

    /// `omega_t(T^d)`.
    pub fn total_mass(&self) -> f64 {
        self.weighted_atoms().iter().map(|e| e.3).sum()
    }

    /// Cell containing `x`.
    pub fn cell_of(&self, x: &[f64]) -> usize {
        let d = self.grid.dim();
        let h = self.grid.h();
        let idx: Vec<i64> = (0..d).map(|a| (x[a] / h).floor() as i64).collect();
        self.grid.flatten(&idx)
    }

    /// Cell-binned `omega_ij`.
    pub fn omega_pair(&self, i: usize, j: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.cells()];
        for a in self.pair(i, j) {
            out[self.cell_of(&a.x)] += a.mass;
        }
        out
    }

    /// Cell-binned `omega_i = 2 omega_ii + sum_{j != i} omega_ij`.
    pub fn omega_phase(&self, i: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.cells()];
        for j in 0..self.phases {
            let f = if i == j { 2.0 } else { 1.0 };
            for a in self.pair(i, j) {
                out[self.cell_of(&a.x)] += f * a.mass;
            }
        }
        out
    }

    /// Cell-binned `omega_t`.
    pub fn omega(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.cells()];
        for (_, _, a, w) in self.weighted_atoms() {
            out[self.cell_of(&a.x)] += w;
        }
        out
    }

    /// `<lambda_{x,ij}>` per cell (zero where `omega_ij` vanishes).
    pub fn mean_orientation(&self, i: usize, j: usize) -> Vec<[f64; 3]> {
        let mut sum = vec![[0.0; 3]; self.grid.cells()];
        let mut mass = vec![0.0; self.grid.cells()];
        for a in self.pair(i, j) {
            let c = self.cell_of(&a.x);
            mass[c] += a.mass;
            for k in 0..3 {
                sum[c][k] += a.mass * a.p[k];
            }
        }
        sum.iter()
            .zip(&mass)
            .map(|(s, &m)| if m > 0.0 { s.map(|v| v / m) } else { [0.0; 3] })
            .collect()
    }

    /// `<lambda_ij>` disintegrated against the cutoff `rho`: `int rho p dmu_ij / int rho domega_ij`.
    pub fn weighted_orientation(&self, i: usize, j: usize, rho: impl Fn(&[f64]) -> f64) -> Option<([f64; 3], f64)> {
        let mut s = [0.0; 3];
        let mut m = 0.0;
        for a in self.pair(i, j) {
            let w = rho(&a.x) * a.mass;
            m += w;
            for k in 0..3 {
                s[k] += w * a.p[k];
            }
        }
        (m > 0.0).then(|| (s.map(|v| v / m), m))
    }

    /// CSV `t, i, j, x..., p..., mass`.
    pub fn to_csv(&self) -> String {
        let d = self.grid.dim();
        let axes = ["x", "y", "z"];
        let mut head = vec!["t".to_string(), "i".into(), "j".into()];
        head.extend(axes[..d].iter().map(|a| a.to_string()));
        head.extend(axes[..d].iter().map(|a| format!("p_{a}")));
        head.push("mass".into());
        let mut s = head.join(",");
        s.push('\n');
        for i in 0..self.phases {
            for j in 0..self.phases {
                for a in self.pair(i, j) {
                    let mut row = vec![format!("{:.17e}", self.time), i.to_string(), j.to_string()];
                    row.extend(a.x[..d].iter().map(|v| format!("{v:.17e}")));
                    row.extend(a.p[..d].iter().map(|v| format!("{v:.17e}")));
                    row.push(format!("{:.17e}", a.mass));
                    s.push_str(&row.join(","));
                    s.push('\n');
                }
            }
        }
        s
    }
}

/// `mu_ij = sigma_ij H^{d-1} on Sigma_ij (x) delta_{nu_i}`, `mu_ii = 0`.
pub fn lift_from_partition(mesh: &InterfaceMesh, sigma: &SurfaceTensionMatrix) -> Result<DiscreteVarifold> {
    if sigma.num_phases() != mesh.phases() {
        return Err(Error::Precondition("surface tension matrix does not match the mesh phases".into()));
    }
    let mut v = DiscreteVarifold::new(mesh.grid().clone(), mesh.phases(), mesh.time)?;
    for f in mesh.facets() {
        let m = sigma.get(f.i, f.j) * f.area;
        let neg = f.normal.map(|x| -x);
        v.push(f.i, f.j, &f.x, &f.normal, m)?;
        v.push(f.j, f.i, &f.x, &neg, m)?;
    }
    Ok(v)
}

/// Per-atom velocities of a partition lift: `V_i` on `mu_ij` and `V_j = -V_i` on `mu_ji`.
pub fn lift_velocities(mesh: &InterfaceMesh, estimate: &VelocityEstimate) -> Result<PairValues> {
    if estimate.values.len() != mesh.facets().len() {
        return Err(Error::Precondition("velocity estimate does not match the mesh".into()));
    }
    let p = mesh.phases();
    let mut out = vec![Vec::new(); p * p];
    for (f, &v) in mesh.facets().iter().zip(&estimate.values) {
        out[f.i * p + f.j].push(v);
        out[f.j * p + f.i].push(-v);
    }
    Ok(out)
}

/// Parameters of the diffuse lift.
#[derive(Clone, Copy, Debug)]
pub struct FieldLiftOptions {
    /// Cells with `eps |grad u|^2` below `threshold * max` are dropped.
    pub threshold: f64,
    pub projection: Projection,
    /// Gaussian smoothing length before projecting (`None`: the covering radius).
    pub smoothing: Option<f64>,
    /// Parameters of the geodesic distance tables behind `psi_i`.
    pub geodesic: GeodesicParams,
}

impl Default for FieldLiftOptions {
    fn default() -> Self {
        Self { threshold: 1e-3, projection: Projection::Euclidean, smoothing: None, geodesic: GeodesicParams::default() }
    }
}

/// Diffuse lift of a phase field: every cell with enough gradient energy becomes one atom of
/// mass `eps |grad u|^2 h^d` on the majority pair of its nearest ball, oriented by
/// `-grad psi_i`; cells in balls without interface go to `mu_ii` of the ball's dominant phase.
pub fn lift_from_field<T: Scalar>(
    u: &PhaseField<T>,
    potential: &MultiwellPotential<T>,
    sigma: &SurfaceTensionMatrix,
    covering: &BallCovering,
    options: FieldLiftOptions,
) -> Result<DiscreteVarifold> {
    let p = potential.num_phases();
    if sigma.num_phases() != p {
        return Err(Error::Precondition("surface tension matrix does not match the potential".into()));
    }
    let grid = covering.grid().clone();
    if u.grid().n() != grid.n() || u.grid().dim() != grid.dim() {
        return Err(Error::Precondition("covering and field live on different grids".into()));
    }
    let d = grid.dim();
    let cells = grid.cells();
    let eps = u.epsilon().to_f64_lossy();
    let spectral = Spectral::new(u.grid());
    let mut density = vec![0.0; cells];
    for c in 0..u.components() {
        for g in spectral.gradient(&u.component(c)) {
            for (acc, v) in density.iter_mut().zip(g) {
                let v = v.to_f64_lossy();
                *acc += eps * v * v;
            }
        }
    }
    let top = density.iter().cloned().fold(0.0, f64::max);
    let cut = options.threshold * top;

    let scale = options.smoothing.unwrap_or(covering.radius());
    let part = project_smoothed(u, potential, options.projection, scale)?;
    let mesh = interface_mesh(&part, 2.0)?;
    let report = covering_error(&mesh, sigma, covering)?;
    // cutoff-weighted phase volumes per ball
    let dominant: Vec<usize> = (0..covering.centers().len())
        .into_par_iter()
        .map(|b| {
            let mut vol = vec![0.0; p];
            let c0 = covering.centers()[b];
            let reach = (2.0 * covering.radius() / grid.h()).ceil() as i64;
            let base: Vec<i64> = (0..d).map(|a| (c0[a] / grid.h()).floor() as i64).collect();
            let span = 2 * reach + 1;
            for flat in 0..span.pow(d as u32) {
                let mut rem = flat;
                let idx: Vec<i64> = (0..d)
                    .map(|a| {
                        let o = rem % span - reach;
                        rem /= span;
                        base[a] + o
                    })
                    .collect();
                let cell = grid.flatten(&idx);
                vol[part.labels()[cell]] += covering.cutoff(b, &grid.position(cell));
            }
            (0..p).fold(0, |best, k| if vol[k] > vol[best] { k } else { best })
        })
        .collect();

    // -grad psi_i, lightly mollified, for the phases that are needed
    let mut needed = vec![false; p];
    for (ball, dom) in report.balls.iter().zip(&dominant) {
        if ball.empty {
            needed[*dom] = true;
        } else {
            needed[ball.pair.0] = true;
        }
    }
    let sp64 = Spectral::new(&grid);
    let mut orient: Vec<Option<Vec<Vec<f64>>>> = vec![None; p];
    for i in (0..p).filter(|&i| needed[i]) {
        let (psi, _) = psi_field(u, potential, i, options.geodesic, None)?;
        let psi: Vec<f64> = psi.iter().map(|v| v.to_f64_lossy()).collect();
        let smooth = sp64.gaussian(&psi, grid.h());
        orient[i] = Some(sp64.gradient(&smooth).into_iter().map(|g| g.into_iter().map(|v| -v).collect()).collect());
    }

    let m = covering.per_axis() as i64;
    let s = covering.spacing();
    let mut v = DiscreteVarifold::new(grid.clone(), p, 0.0)?;
    let hd = grid.cell_volume();
    for cell in 0..cells {
        if !(density[cell] > cut) || density[cell] == 0.0 {
            continue;
        }
        let x = grid.position(cell);
        let mut b = 0usize;
        for &xa in x.iter().take(d) {
            b = b * covering.per_axis() + ((xa / s).round() as i64).rem_euclid(m) as usize;
        }
        let ball = &report.balls[b];
        let (i, j) = if ball.empty { (dominant[b], dominant[b]) } else { ball.pair };
        let g = orient[i].as_ref().expect("orientation computed for every needed phase");
        let mut dir: Vec<f64> = (0..d).map(|a| g[a][cell]).collect();
        if dir.iter().all(|&c| c == 0.0) {
            dir[0] = 1.0;
        }
        let mass = density[cell] * hd;
        v.push(i, j, &x, &dir, mass)?;
        if i != j {
            let neg: Vec<f64> = dir.iter().map(|c| -c).collect();
            v.push(j, i, &x, &neg, mass)?;
        }
    }
    Ok(v)
}

/// Diffuse mass kept by the lift at each relative threshold.
pub fn mass_captured<T: Scalar>(u: &PhaseField<T>, thresholds: &[f64]) -> Vec<(f64, f64)> {
    let spectral = Spectral::new(u.grid());
    let eps = u.epsilon().to_f64_lossy();
    let mut density = vec![0.0; u.grid().cells()];
    for c in 0..u.components() {
        for g in spectral.gradient(&u.component(c)) {
            for (acc, v) in density.iter_mut().zip(g) {
                *acc += eps * v.to_f64_lossy().powi(2);
            }
        }
    }
    let top = density.iter().cloned().fold(0.0, f64::max);
    let hd = u.grid().cell_volume().to_f64_lossy();
    thresholds
        .iter()
        .map(|&t| (t, density.iter().filter(|&&x| x > t * top).sum::<f64>() * hd))
        .collect()
}

/// `int <d xi, Id - p (x) p> dmu`.
pub fn first_variation(v: &DiscreteVarifold, xi: &dyn TestField) -> f64 {
    let d = v.grid.dim();
    v.weighted_atoms()
        .iter()
        .map(|(_, _, a, w)| w * tangential_divergence(&xi.jacobian(&a.x[..d]), &a.p))
        .sum()
}

/// Samples of `mu`: atoms with their weight in `mu`.
fn samples(v: &DiscreteVarifold) -> Vec<Sample> {
    v.weighted_atoms().iter().map(|(_, _, a, w)| Sample { x: a.x, weight: *w, orientation: a.p }).collect()
}

/// Generalized mean curvature of a varifold.
#[derive(Clone, Debug)]
pub struct VarifoldCurvature {
    pub fit: FieldFit,
    /// `H` at every atom, in [`DiscreteVarifold::weighted_atoms`] order.
    pub atom_values: Vec<[f64; 3]>,
    /// `omega`-weighted cell averages of `H`.
    pub cell_values: Vec<[f64; 3]>,
}

impl VarifoldCurvature {
    pub fn relative_residual(&self) -> f64 {
        self.fit.relative_residual
    }
}

/// Least-squares `H` with `int <H, xi> domega = -delta V(xi)` over the basis.
pub fn generalized_mean_curvature(v: &DiscreteVarifold, basis: &FourierBasis) -> Result<VarifoldCurvature> {
    let s = samples(v);
    let rhs = first_variation_rhs(basis, &s);
    let fit = fit_field(basis, &s, &rhs)?;
    let atom_values = fit.values.clone();
    let mut cell = vec![[0.0; 3]; v.grid.cells()];
    let mut mass = vec![0.0; v.grid.cells()];
    for (sample, h) in s.iter().zip(&atom_values) {
        let c = v.cell_of(&sample.x);
        mass[c] += sample.weight;
        for k in 0..3 {
            cell[c][k] += sample.weight * h[k];
        }
    }
    for (c, m) in cell.iter_mut().zip(&mass) {
        if *m > 0.0 {
            c.iter_mut().for_each(|x| *x /= m);
        }
    }
    Ok(VarifoldCurvature { fit, atom_values, cell_values: cell })
}

/// Least-squares residual of the curvature identity tested against the whole of `basis`,
/// with trial fields restricted to the first `k` nested shells, for `k = 1..=K`.
pub fn nested_curvature_residuals(v: &DiscreteVarifold, basis: &FourierBasis) -> Result<Vec<f64>> {
    let s = samples(v);
    let rhs = first_variation_rhs(basis, &s);
    let d = basis.dim();
    let modes = basis.modes();
    let m = modes.len();
    let b = DVector::from_iterator(d * m, rhs.iter().take(d).flatten().cloned());
    let bn = b.norm();
    if !(bn > 0.0) {
        return Ok(vec![0.0; basis.max_mode()]);
    }
    let phi = DMatrix::<f64>::from_fn(s.len(), m, |r, k| modes[k].eval(&s[r].x[..d], basis.length()).0);
    let wphi = DMatrix::<f64>::from_fn(s.len(), m, |r, k| phi[(r, k)] * s[r].weight);
    let gram = phi.transpose() * wphi;
    let shell = |mode: &crate::basis::FourierMode| mode.k.iter().map(|c| c.unsigned_abs() as usize).max().unwrap_or(0);
    (1..=basis.max_mode())
        .map(|kmax| {
            let trial: Vec<usize> = (0..m).filter(|&k| shell(&modes[k]) <= kmax).collect();
            let t = trial.len();
            // block-diagonal by direction: the same Gram columns for every component
            let mut a = DMatrix::<f64>::zeros(d * m, d * t);
            for dir in 0..d {
                for (col, &k) in trial.iter().enumerate() {
                    for row in 0..m {
                        a[(dir * m + row, dir * t + col)] = gram[(row, k)];
                    }
                }
            }
            let svd = a.clone().svd(true, true);
            let top = svd.singular_values.iter().cloned().fold(0.0, f64::max);
            let c = svd.solve(&b, 1e-12 * top).map_err(|e| Error::Solver(e.to_string()))?;
            Ok((&a * c - &b).norm() / bn)
        })
        .collect()
}

/// One sub-check of the compatibility list.
#[derive(Clone, Debug, Serialize)]
pub struct SubVerdict {
    pub name: String,
    pub status: Status,
    pub residual: f64,
    pub threshold: f64,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct CompatibilityReport {
    pub checks: Vec<SubVerdict>,
    /// Per phase and basis field: `(int <xi, grad chi_i>, sum_j 1/sigma_ij int <xi, p> dmu_ij)`.
    #[serde(skip)]
    pub compatibility_pairs: Vec<Vec<(f64, f64)>>,
}

impl CompatibilityReport {
    pub fn check(&self, label: char) -> &SubVerdict {
        let idx = (label as u8 - b'a') as usize;
        &self.checks[idx]
    }
}

/// Tolerances of the compatibility list.
#[derive(Clone, Copy, Debug)]
pub struct CompatibilityOptions {
    pub exact: f64,
    pub normal_curvature: f64,
}

impl Default for CompatibilityOptions {
    fn default() -> Self {
        Self { exact: 1e-10, normal_curvature: 0.05 }
    }
}

fn verdict(name: &str, residual: f64, threshold: f64, detail: String) -> SubVerdict {
    SubVerdict {
        name: name.into(),
        status: if residual <= threshold { Status::Pass } else { Status::Fail },
        residual,
        threshold,
        detail,
    }
}

/// Checks (a)-(e) of the multiphase compatibility conditions against the partition behind
/// `mesh`.
pub fn compatibility_check(
    v: &DiscreteVarifold,
    mesh: &InterfaceMesh,
    sigma: &SurfaceTensionMatrix,
    velocities: Option<&PairValues>,
    basis: &FourierBasis,
    options: CompatibilityOptions,
) -> Result<CompatibilityReport> {
    let p = v.phases;
    if mesh.phases() != p || sigma.num_phases() != p || mesh.grid() != v.grid() {
        return Err(Error::Precondition("varifold, mesh and tensions disagree on phases or grid".into()));
    }
    let d = v.grid.dim();
    let mut checks = Vec::with_capacity(5);

    // (a) omega_ij = omega_ji
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..p {
        for j in i + 1..p {
            let (a, b) = (v.omega_pair(i, j), v.omega_pair(j, i));
            for (x, y) in a.iter().zip(&b) {
                num += (x - y).abs();
                den += 0.5 * (x + y);
            }
        }
    }
    let ra = if den > 0.0 { num / den } else { 0.0 };
    checks.push(verdict("omega symmetry", ra, options.exact, "L1 |omega_ij - omega_ji| / L1 omega over i < j".into()));

    // (b) <lambda_ij> = -<lambda_ji> on omega_ij-carried cells (i = j included)
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..p {
        for j in i..p {
            let w = v.omega_pair(i, j);
            let (li, lj) = (v.mean_orientation(i, j), v.mean_orientation(j, i));
            for c in 0..w.len() {
                if w[c] > 0.0 {
                    let e: f64 = (0..d).map(|a| (li[c][a] + lj[c][a]).powi(2)).sum::<f64>().sqrt();
                    num += w[c] * e;
                    den += w[c];
                }
            }
        }
    }
    let rb = if den > 0.0 { num / den } else { 0.0 };
    checks.push(verdict(
        "orientation antisymmetry",
        rb,
        options.exact,
        "omega-weighted L1 |<lambda_ij> + <lambda_ji>| (cellwise)".into(),
    ));

    // (c) V_i = -V_j
    checks.push(match velocities {
        None => SubVerdict {
            name: "velocity antisymmetry".into(),
            status: Status::Skipped,
            residual: 0.0,
            threshold: options.exact,
            detail: "no velocities supplied".into(),
        },
        Some(vel) => {
            let (mut num, mut den) = (0.0, 0.0);
            for i in 0..p {
                for j in i + 1..p {
                    let (a, b) = (&vel[i * p + j], &vel[j * p + i]);
                    let atoms = v.pair(i, j);
                    if a.len() != atoms.len() || b.len() != v.pair(j, i).len() {
                        return Err(Error::Precondition("velocities do not match the atoms".into()));
                    }
                    // pair atoms of (i,j) and (j,i) by cell
                    let mut by_cell = std::collections::BTreeMap::<usize, (f64, f64, f64, f64)>::new();
                    for (atom, val) in atoms.iter().zip(a) {
                        let e = by_cell.entry(v.cell_of(&atom.x)).or_default();
                        e.0 += atom.mass * val;
                        e.1 += atom.mass;
                    }
                    for (atom, val) in v.pair(j, i).iter().zip(b) {
                        let e = by_cell.entry(v.cell_of(&atom.x)).or_default();
                        e.2 += atom.mass * val;
                        e.3 += atom.mass;
                    }
                    for (vi, mi, vj, mj) in by_cell.values() {
                        if *mi > 0.0 && *mj > 0.0 {
                            num += mi * (vi / mi + vj / mj).abs();
                            den += mi * (vi / mi).abs();
                        }
                    }
                }
            }
            let r = if den > 0.0 { num / den } else { 0.0 };
            verdict("velocity antisymmetry", r, options.exact, "omega-weighted L1 |V_i + V_j| / L1 |V_i|".into())
        }
    });

    // (d) H parallel to the mean orientation
    let curvature = generalized_mean_curvature(v, basis)?;
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..p {
        for j in 0..p {
            let w = v.omega_pair(i, j);
            let lam = v.mean_orientation(i, j);
            for c in 0..w.len() {
                if w[c] > 0.0 {
                    let h = curvature.cell_values[c];
                    let l2: f64 = lam[c].iter().map(|x| x * x).sum();
                    let hl: f64 = (0..3).map(|a| h[a] * lam[c][a]).sum();
                    let r2: f64 = (0..3).map(|a| (l2 * h[a] - hl * lam[c][a]).powi(2)).sum();
                    num += w[c] * r2;
                    den += w[c] * h.iter().map(|x| x * x).sum::<f64>();
                }
            }
        }
    }
    let rd = if den > 0.0 { (num / den).sqrt() } else { 0.0 };
    checks.push(verdict(
        "curvature along mean orientation",
        rd,
        options.normal_curvature,
        "L2(omega_ij) of |<lambda>|^2 H - <H, <lambda>> <lambda>, relative to L2(omega_ij) of H".into(),
    ));

    // (e) int <xi, grad chi_i> = sum_{j != i} 1/sigma_ij int <xi, p> dmu_ij
    let modes = basis.modes();
    let mut pairs = Vec::with_capacity(p);
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..p {
        let mut row = Vec::with_capacity(d * modes.len());
        for dir in 0..d {
            for mode in modes {
                let val = |x: &[f64]| mode.eval(&x[..d], basis.length()).0;
                let mut lhs = 0.0;
                let mut scale = 0.0;
                for f in mesh.facets() {
                    let s = if f.i == i {
                        1.0
                    } else if f.j == i {
                        -1.0
                    } else {
                        continue;
                    };
                    let e = val(&f.x) * f.area;
                    lhs += s * e * f.normal[dir];
                    scale += e.abs();
                }
                let mut rhs = 0.0;
                for j in (0..p).filter(|&j| j != i) {
                    let inv = 1.0 / sigma.get(i, j);
                    for a in v.pair(i, j) {
                        let e = inv * a.mass * val(&a.x);
                        rhs += e * a.p[dir];
                        scale += e.abs();
                    }
                }
                num += (lhs - rhs).powi(2);
                den += scale * scale;
                row.push((lhs, rhs));
            }
        }
        pairs.push(row);
    }
    let re = if den > 0.0 { (num / den).sqrt() } else { 0.0 };
    checks.push(verdict(
        "partition compatibility",
        re,
        options.exact,
        format!("l2 over {} basis fields per phase, relative to the unsigned pairing", d * modes.len()),
    ));

    Ok(CompatibilityReport { checks, compatibility_pairs: pairs })
}

/// One time slice of a varifold run.
#[derive(Clone, Debug)]
pub struct VarifoldSnapshot {
    pub varifold: DiscreteVarifold,
    /// Per-atom velocities `V_i` on `mu_ij`, `j != i` (zero when absent).
    pub velocities: Option<PairValues>,
    /// `H` at the atoms, in [`DiscreteVarifold::weighted_atoms`] order.
    pub curvature: Option<Vec<[f64; 3]>>,
}

#[derive(Clone, Debug, Serialize)]
pub struct DissipationRow {
    pub t: f64,
    pub mass: f64,
    /// `1/2 sum_i int V_i^2 (1/2) domega_i`.
    pub velocity_term: f64,
    /// `1/2 int |H|^2 domega`.
    pub curvature_term: f64,
    /// `omega_T'(T^d) + time integrals up to T'`.
    pub lhs: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct DissipationVerdict {
    pub status: Status,
    pub rows: Vec<DissipationRow>,
    /// `max_T' lhs / omega0 - 1`.
    pub worst_excess: f64,
    pub slack: f64,
}

/// Evaluates `omega_T' + 1/2 sum_i int int V_i^2 / 2 domega_i + 1/2 int int |H|^2 domega <= omega0`
/// with trapezoidal time integration at every snapshot.
pub fn varifold_dissipation_check(run: &[VarifoldSnapshot], omega0: f64, slack: f64) -> Result<DissipationVerdict> {
    if run.is_empty() {
        return Err(Error::Precondition("no snapshots".into()));
    }
    let mut rows = Vec::with_capacity(run.len());
    let mut integral = 0.0;
    let mut prev_rate: Option<(f64, f64)> = None;
    for snap in run {
        let v = &snap.varifold;
        let p = v.phases;
        let mut vel = 0.0;
        if let Some(values) = &snap.velocities {
            for i in 0..p {
                for j in (0..p).filter(|&j| j != i) {
                    let atoms = v.pair(i, j);
                    let vals = &values[i * p + j];
                    if vals.len() != atoms.len() {
                        return Err(Error::Precondition("velocities do not match the atoms".into()));
                    }
                    // omega_i carries mu_ij with weight 1
                    vel += atoms.iter().zip(vals).map(|(a, x)| a.mass * x * x).sum::<f64>();
                }
            }
        }
        let velocity_term = 0.25 * vel;
        let mut curv = 0.0;
        if let Some(h) = &snap.curvature {
            let atoms = v.weighted_atoms();
            if h.len() != atoms.len() {
                return Err(Error::Precondition("curvature does not match the atoms".into()));
            }
            curv = atoms.iter().zip(h).map(|(a, hv)| a.3 * hv.iter().map(|x| x * x).sum::<f64>()).sum();
        }
        let curvature_term = 0.5 * curv;
        let rate = velocity_term + curvature_term;
        if let Some((t0, r0)) = prev_rate {
            integral += 0.5 * (v.time - t0) * (r0 + rate);
        }
        prev_rate = Some((v.time, rate));
        let mass = v.total_mass();
        rows.push(DissipationRow { t: v.time, mass, velocity_term, curvature_term, lhs: mass + integral });
    }
    let worst = rows.iter().map(|r| r.lhs / omega0 - 1.0).fold(f64::NEG_INFINITY, f64::max);
    Ok(DissipationVerdict {
        status: if worst <= slack { Status::Pass } else { Status::Fail },
        rows,
        worst_excess: worst,
        slack,
    })
}

/// `mu = rho(x_1) H^1 on [0, L) x {x_2} (x) delta_{e_2}` with `rho = 2 + sin(2 pi x_1 / L)`,
/// stored in `mu_00` of a two-phase varifold, sampled by `atoms` equal pieces.
pub fn example_varifold(grid: &TorusGrid<f64>, atoms: usize, height: f64) -> Result<DiscreteVarifold> {
    if grid.dim() != 2 {
        return Err(Error::Unsupported("the example lives in two dimensions".into()));
    }
    let l = grid.length();
    let mut v = DiscreteVarifold::new(grid.clone(), 2, 0.0)?;
    let ds = l / atoms as f64;
    for k in 0..atoms {
        let x1 = (k as f64 + 0.5) * ds;
        let rho = 2.0 + (std::f64::consts::TAU * x1 / l).sin();
        v.push(0, 0, &[x1, height], &[0.0, 1.0], rho * ds)?;
    }
    Ok(v)
}
