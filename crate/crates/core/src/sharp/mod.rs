//! Sharp-interface diagnostics: partitions, interface meshes, normal velocities, mean
//! curvature by duality, Herring residuals and the BV certificate.

mod marching;

use rayon::prelude::*;
use serde::Serialize;

use crate::basis::{first_variation_rhs, fit_field, FieldFit, FourierBasis, Sample};
use crate::error::{Error, Result};
use crate::geodesic::{GeodesicParams, SurfaceTensionMatrix};
use crate::potential::MultiwellPotential;
use crate::scalar::Scalar;
use crate::torus::{psi_field, PhaseField, Spectral, TorusGrid};

/// Cellwise phase labels (zero based).
#[derive(Clone, Debug, PartialEq)]
pub struct Partition {
    grid: TorusGrid<f64>,
    labels: Vec<usize>,
    phases: usize,
    /// Smooth per-phase scores whose pairwise zero sets locate the interfaces.
    scores: Option<Vec<Vec<f64>>>,
    pub time: f64,
}

impl Partition {
    pub fn new(grid: TorusGrid<f64>, labels: Vec<usize>, phases: usize, time: f64) -> Result<Self> {
        if labels.len() != grid.cells() {
            return Err(Error::Precondition(format!(
                "{} labels for {} cells",
                labels.len(),
                grid.cells()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= phases) {
            return Err(Error::Precondition(format!("label {l} out of range for {phases} phases")));
        }
        Ok(Self { grid, labels, phases, scores: None, time })
    }

    /// Label each cell center by `f(x)`.
    pub fn from_fn(grid: TorusGrid<f64>, phases: usize, f: impl Fn(&[f64]) -> usize) -> Result<Self> {
        let labels = (0..grid.cells()).map(|c| f(&grid.position(c))).collect();
        Self::new(grid, labels, phases, 0.0)
    }

    /// Attach per-phase scores (`scores[i][cell]`, larger means more `i`); the interface
    /// mesh is then read off their sub-cell zero sets instead of mollified indicators.
    pub fn with_scores(mut self, scores: Vec<Vec<f64>>) -> Result<Self> {
        if scores.len() != self.phases || scores.iter().any(|s| s.len() != self.grid.cells()) {
            return Err(Error::Precondition("scores must hold one value per phase and cell".into()));
        }
        self.scores = Some(scores);
        Ok(self)
    }

    pub fn scores(&self) -> Option<&[Vec<f64>]> {
        self.scores.as_deref()
    }

    pub fn grid(&self) -> &TorusGrid<f64> {
        &self.grid
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn phases(&self) -> usize {
        self.phases
    }

    pub fn indicator(&self, i: usize) -> Vec<f64> {
        self.labels.iter().map(|&l| if l == i { 1.0 } else { 0.0 }).collect()
    }

    /// Volume of phase `i`.
    pub fn volume(&self, i: usize) -> f64 {
        self.labels.iter().filter(|&&l| l == i).count() as f64 * self.grid.cell_volume()
    }

    /// `(sum_i |chi_i - chi'_i|^2)^(1/2)` in `L^2`.
    pub fn l2_distance(&self, other: &Partition) -> f64 {
        let differ = self.labels.iter().zip(&other.labels).filter(|(a, b)| a != b).count();
        (2.0 * differ as f64 * self.grid.cell_volume()).sqrt()
    }
}

/// Rule assigning a phase to a field value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Projection {
    /// Nearest well.
    Euclidean,
    /// Smallest geodesic distance `phi_i(u)`.
    Geodesic(GeodesicParams),
}

fn as_f64_grid<T: Scalar>(g: &TorusGrid<T>) -> TorusGrid<f64> {
    TorusGrid::new(g.dim(), g.n(), g.length().to_f64_lossy()).expect("grid already validated")
}

/// Label every cell by the projection rule; ties go to the lowest index.
pub fn project<T: Scalar>(
    u: &PhaseField<T>,
    potential: &MultiwellPotential<T>,
    method: Projection,
) -> Result<Partition> {
    if u.components() != potential.dim() {
        return Err(Error::Precondition("field and potential dimensions differ".into()));
    }
    let grid = as_f64_grid(u.grid());
    let p = potential.num_phases();
    let cols: Vec<Vec<T>> = match method {
        Projection::Euclidean => (0..p)
            .map(|i| {
                (0..grid.cells())
                    .into_par_iter()
                    .map(|c| crate::scalar::dist2(u.at(c), potential.well(i)))
                    .collect()
            })
            .collect(),
        Projection::Geodesic(params) => {
            (0..p).map(|i| psi_field(u, potential, i, params, None).map(|r| r.0)).collect::<Result<_>>()?
        }
    };
    let labels = (0..grid.cells())
        .into_par_iter()
        .map(|c| {
            let mut best = (0, T::infinity());
            for (i, col) in cols.iter().enumerate() {
                if col[c] < best.1 {
                    best = (i, col[c]);
                }
            }
            best.0
        })
        .collect();
    let scores = cols.iter().map(|col| col.iter().map(|v| -v.to_f64_lossy()).collect()).collect();
    Partition::new(grid, labels, p, 0.0)?.with_scores(scores)
}

/// Projection of the field after Gaussian smoothing at length scale `scale`; at scales above
/// the transition width this is the coarse-grained (collapsed-layer) partition.
pub fn project_smoothed<T: Scalar>(
    u: &PhaseField<T>,
    potential: &MultiwellPotential<T>,
    method: Projection,
    scale: f64,
) -> Result<Partition> {
    if !(scale > 0.0) {
        return project(u, potential, method);
    }
    let spectral = Spectral::new(u.grid());
    let mut smooth = u.clone();
    for c in 0..u.components() {
        let comp = spectral.gaussian(&u.component(c), T::c(scale));
        smooth.set_component(c, &comp);
    }
    project(&smooth, potential, method)
}

/// Periodic multilinear interpolation of cell-centred samples.
pub(crate) fn interpolate(grid: &TorusGrid<f64>, f: &[f64], x: &[f64]) -> f64 {
    let d = grid.dim();
    let h = grid.h();
    let mut base = [0i64; 3];
    let mut frac = [0.0; 3];
    for a in 0..d {
        let s = x[a] / h - 0.5;
        let fl = s.floor();
        base[a] = fl as i64;
        frac[a] = s - fl;
    }
    let mut acc = 0.0;
    let mut idx = [0i64; 3];
    for corner in 0..1usize << d {
        let mut w = 1.0;
        for a in 0..d {
            let bit = (corner >> a) & 1;
            w *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
            idx[a] = base[a] + bit as i64;
        }
        if w != 0.0 {
            acc += w * f[grid.flatten(&idx[..d])];
        }
    }
    acc
}

/// Scores when attached, mollified indicators otherwise.
fn level_fields(part: &Partition, radius_cells: f64) -> Vec<Vec<f64>> {
    match &part.scores {
        Some(s) => s.clone(),
        None => mollified_indicators(part, radius_cells),
    }
}

fn mollified_indicators(part: &Partition, radius_cells: f64) -> Vec<Vec<f64>> {
    let spectral = Spectral::new(&part.grid);
    let std = radius_cells * part.grid.h();
    (0..part.phases)
        .into_par_iter()
        .map(|i| {
            let ind = part.indicator(i);
            if ind.iter().all(|&v| v == 0.0) {
                ind
            } else {
                spectral.gaussian(&ind, std)
            }
        })
        .collect()
}

/// Piece of `Sigma_ij` with `i < j`; `normal` is the inner normal of phase `i`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Facet {
    pub x: [f64; 3],
    pub normal: [f64; 3],
    pub area: f64,
    pub i: usize,
    pub j: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Junction {
    pub x: [f64; 3],
    pub phases: [usize; 3],
}

/// Facets of every interface plus triple-junction points.
#[derive(Clone, Debug)]
pub struct InterfaceMesh {
    grid: TorusGrid<f64>,
    phases: usize,
    radius: f64,
    pub time: f64,
    facets: Vec<Facet>,
    junctions: Vec<Junction>,
}

impl InterfaceMesh {
    /// Mesh from explicit facets (normals are renormalized, pairs reordered to `i < j`).
    pub fn from_facets(
        grid: TorusGrid<f64>,
        phases: usize,
        radius: f64,
        facets: Vec<Facet>,
        junctions: Vec<Junction>,
    ) -> Result<Self> {
        let mut out = Vec::with_capacity(facets.len());
        for mut f in facets {
            if f.i == f.j || f.i >= phases || f.j >= phases || !(f.area > 0.0) {
                return Err(Error::Precondition("facet with invalid pair or area".into()));
            }
            let len = f.normal.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(len > 0.0) {
                return Err(Error::Precondition("facet normal vanishes".into()));
            }
            f.normal.iter_mut().for_each(|v| *v /= len);
            if f.i > f.j {
                std::mem::swap(&mut f.i, &mut f.j);
                f.normal.iter_mut().for_each(|v| *v = -*v);
            }
            out.push(f);
        }
        Ok(Self { grid, phases, radius, time: 0.0, facets: out, junctions })
    }

    pub fn grid(&self) -> &TorusGrid<f64> {
        &self.grid
    }

    pub fn phases(&self) -> usize {
        self.phases
    }

    /// Mollification radius in cells used to build the mesh.
    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn facets(&self) -> &[Facet] {
        &self.facets
    }

    pub fn junctions(&self) -> &[Junction] {
        &self.junctions
    }

    pub fn is_empty(&self) -> bool {
        self.facets.is_empty()
    }

    /// Facets of `Sigma_ij` oriented by the inner normal of `i`; `(j, i)` negates normals.
    pub fn pair(&self, i: usize, j: usize) -> Vec<Facet> {
        self.facets
            .iter()
            .filter(|f| (f.i, f.j) == (i.min(j), i.max(j)))
            .map(|f| {
                if i < j {
                    *f
                } else {
                    Facet { normal: f.normal.map(|v| -v), i, j, ..*f }
                }
            })
            .collect()
    }

    pub fn pair_area(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (i.min(j), i.max(j));
        self.facets.iter().filter(|f| (f.i, f.j) == (a, b)).map(|f| f.area).sum()
    }

    pub fn total_area(&self) -> f64 {
        self.facets.iter().map(|f| f.area).sum()
    }

    /// CSV `x..., nu..., area, pair_i, pair_j, V, H...` (missing dynamics left empty).
    pub fn to_csv(&self, velocity: Option<&[f64]>, curvature: Option<&[[f64; 3]]>) -> String {
        let d = self.grid.dim();
        let axes = ["x", "y", "z"];
        let mut head: Vec<String> = axes[..d].iter().map(|a| a.to_string()).collect();
        head.extend(axes[..d].iter().map(|a| format!("nu_{a}")));
        head.extend(["area", "pair_i", "pair_j", "V"].map(String::from));
        head.extend(axes[..d].iter().map(|a| format!("H_{a}")));
        let mut s = head.join(",");
        s.push('\n');
        for (k, f) in self.facets.iter().enumerate() {
            let mut row: Vec<String> = f.x[..d].iter().map(|v| format!("{v:.17e}")).collect();
            row.extend(f.normal[..d].iter().map(|v| format!("{v:.17e}")));
            row.push(format!("{:.17e}", f.area));
            row.push(f.i.to_string());
            row.push(f.j.to_string());
            row.push(velocity.map(|v| format!("{:.17e}", v[k])).unwrap_or_default());
            for a in 0..d {
                row.push(curvature.map(|h| format!("{:.17e}", h[k][a])).unwrap_or_default());
            }
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }
}

/// Extract facets on the zero sets of pairwise score differences, or of mollified indicators
/// (Gaussian of `radius_cells` cells) when the partition carries no scores.
pub fn interface_mesh(part: &Partition, radius_cells: f64) -> Result<InterfaceMesh> {
    if !(radius_cells >= 1.0) {
        return Err(Error::Precondition(format!("smoothing radius {radius_cells} is below one cell")));
    }
    let grid = &part.grid;
    let d = grid.dim();
    let l = grid.length();
    let moll = level_fields(part, radius_cells);
    let spectral = Spectral::new(grid);
    let grads: Vec<Vec<Vec<f64>>> = moll.iter().map(|m| spectral.gradient(m)).collect();
    let present: Vec<usize> = (0..part.phases).filter(|&i| part.labels.contains(&i)).collect();
    let mut facets = Vec::new();
    for (a, &i) in present.iter().enumerate() {
        for &j in &present[a + 1..] {
            let g: Vec<f64> = moll[i].iter().zip(&moll[j]).map(|(x, y)| x - y).collect();
            for piece in marching::zero_set(grid, &g) {
                let x: [f64; 3] = std::array::from_fn(|k| if k < d { piece.x[k].rem_euclid(l) } else { 0.0 });
                if present.len() > 2 {
                    // keep only where i and j are the two dominant phases
                    let vals: Vec<f64> = present.iter().map(|&k| interpolate(grid, &moll[k], &x[..d])).collect();
                    let mi = vals[a];
                    let mj = vals[present.iter().position(|&k| k == j).expect("present")];
                    let floor = mi.min(mj);
                    if vals.iter().enumerate().any(|(k, &v)| present[k] != i && present[k] != j && v > floor) {
                        continue;
                    }
                }
                let mut nrm = [0.0; 3];
                for (k, n) in nrm.iter_mut().enumerate().take(d) {
                    *n = interpolate(grid, &grads[i][k], &x[..d]) - interpolate(grid, &grads[j][k], &x[..d]);
                }
                let len = nrm.iter().map(|v| v * v).sum::<f64>().sqrt();
                if !(len > 0.0) {
                    continue;
                }
                nrm.iter_mut().for_each(|v| *v /= len);
                facets.push(Facet { x, normal: nrm, area: piece.area, i, j });
            }
        }
    }
    let junctions = find_junctions(part);
    Ok(InterfaceMesh {
        grid: grid.clone(),
        phases: part.phases,
        radius: radius_cells,
        time: part.time,
        facets,
        junctions,
    })
}

fn find_junctions(part: &Partition) -> Vec<Junction> {
    let grid = &part.grid;
    let d = grid.dim();
    let h = grid.h();
    let cands = marching::junction_cubes(grid, &part.labels);
    if cands.is_empty() {
        return Vec::new();
    }
    let centre = |cube: usize| -> [f64; 3] {
        let idx = grid.unflatten(cube);
        std::array::from_fn(|a| if a < d { (idx[a] as f64 + 1.0) * h } else { 0.0 })
    };
    let pts: Vec<[f64; 3]> = cands.iter().map(|c| centre(c.0)).collect();
    let mut parent: Vec<usize> = (0..pts.len()).collect();
    fn root(p: &mut [usize], mut k: usize) -> usize {
        while p[k] != k {
            p[k] = p[p[k]];
            k = p[k];
        }
        k
    }
    for a in 0..pts.len() {
        for b in a + 1..pts.len() {
            if grid.periodic_distance(&pts[a][..d], &pts[b][..d]) <= 2.5 * h {
                let (ra, rb) = (root(&mut parent, a), root(&mut parent, b));
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
    }
    let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
    for k in 0..pts.len() {
        let r = root(&mut parent, k);
        match groups.iter_mut().find(|g| g.0 == r) {
            Some(g) => g.1.push(k),
            None => groups.push((r, vec![k])),
        }
    }
    groups
        .into_iter()
        .map(|(_, members)| {
            let first = pts[members[0]];
            let mut x = [0.0; 3];
            let mut counts = vec![0usize; part.phases];
            for &m in &members {
                for a in 0..d {
                    x[a] += first[a] + grid.wrap(pts[m][a] - first[a]);
                }
                for &l in &cands[m].1 {
                    counts[l] += 1;
                }
            }
            for v in x.iter_mut().take(d) {
                *v = (*v / members.len() as f64).rem_euclid(grid.length());
            }
            let mut order: Vec<usize> = (0..part.phases).collect();
            order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
            let mut phases = [order[0], order[1], order[2]];
            phases.sort_unstable();
            Junction { x, phases }
        })
        .collect()
}

/// `sum_{i<j} sigma_ij sum_facets weight(x) area`.
pub fn perimeter_energy(
    mesh: &InterfaceMesh,
    sigma: &SurfaceTensionMatrix,
    weight: Option<&(dyn Fn(&[f64]) -> f64 + Sync)>,
) -> f64 {
    let d = mesh.grid.dim();
    mesh.facets
        .iter()
        .map(|f| sigma.get(f.i, f.j) * f.area * weight.map_or(1.0, |w| w(&f.x[..d])))
        .sum()
}

/// `|grad psi_i| = sum_{k<l} |sigma_ik - sigma_il| H^{d-1} on Sigma_kl`, integrated against `weight`.
pub fn psi_variation(
    mesh: &InterfaceMesh,
    sigma: &SurfaceTensionMatrix,
    i: usize,
    weight: Option<&(dyn Fn(&[f64]) -> f64 + Sync)>,
) -> f64 {
    let d = mesh.grid.dim();
    mesh.facets
        .iter()
        .map(|f| (sigma.get(i, f.i) - sigma.get(i, f.j)).abs() * f.area * weight.map_or(1.0, |w| w(&f.x[..d])))
        .sum()
}

/// Per-facet normal velocity of phase `i` along its inner normal.
#[derive(Clone, Debug)]
pub struct VelocityEstimate {
    pub values: Vec<f64>,
    pub flagged: Vec<bool>,
}

impl VelocityEstimate {
    /// Number of facets whose displacement exceeded three cells.
    pub fn under_resolved(&self) -> usize {
        self.flagged.iter().filter(|&&f| f).count()
    }
}

/// Root of `s -> g(x + s nu)` nearest to `s = 0` within `reach`.
fn level_offset(grid: &TorusGrid<f64>, g: &[f64], x: &[f64; 3], nu: &[f64; 3], reach: f64) -> Option<f64> {
    let d = grid.dim();
    let steps = 24i64;
    let ds = reach / steps as f64 * 2.0;
    let at = |s: f64| {
        let y: Vec<f64> = (0..d).map(|a| x[a] + s * nu[a]).collect();
        interpolate(grid, g, &y)
    };
    let samples: Vec<(f64, f64)> = (-steps / 2..=steps / 2).map(|k| (k as f64 * ds, at(k as f64 * ds))).collect();
    let mut best: Option<f64> = None;
    for w in samples.windows(2) {
        let ((s0, g0), (s1, g1)) = (w[0], w[1]);
        if (g0 >= 0.0) != (g1 >= 0.0) {
            let s = s0 + (s1 - s0) * g0 / (g0 - g1);
            if best.is_none_or(|b: f64| s.abs() < b.abs()) {
                best = Some(s);
            }
        }
    }
    best
}

/// `V_i` on the facets of `mesh` from the displacement of the mollified level sets between
/// `prev` and `next`, `tau` apart.
pub fn normal_velocity(
    prev: &Partition,
    next: &Partition,
    mesh: &InterfaceMesh,
    tau: f64,
) -> Result<VelocityEstimate> {
    if prev.grid != next.grid || prev.grid != mesh.grid || prev.phases != next.phases {
        return Err(Error::Precondition("snapshots live on different grids".into()));
    }
    if !(tau > 0.0) {
        return Err(Error::Precondition("time separation must be positive".into()));
    }
    let grid = &mesh.grid;
    let h = grid.h();
    let reach = 3.0 * h;
    let mp = level_fields(prev, mesh.radius);
    let mn = level_fields(next, mesh.radius);
    let mut pairs: Vec<(usize, usize)> = mesh.facets.iter().map(|f| (f.i, f.j)).collect();
    pairs.sort_unstable();
    pairs.dedup();
    let diff = |m: &[Vec<f64>], i: usize, j: usize| -> Vec<f64> { m[i].iter().zip(&m[j]).map(|(a, b)| a - b).collect() };
    let fields: Vec<((usize, usize), Vec<f64>, Vec<f64>)> =
        pairs.iter().map(|&(i, j)| ((i, j), diff(&mp, i, j), diff(&mn, i, j))).collect();
    let (values, flagged): (Vec<f64>, Vec<bool>) = mesh
        .facets
        .par_iter()
        .map(|f| {
            let (_, gp, gn) = fields.iter().find(|e| e.0 == (f.i, f.j)).expect("pair present");
            let sp = level_offset(grid, gp, &f.x, &f.normal, reach);
            let sn = level_offset(grid, gn, &f.x, &f.normal, reach);
            match (sp, sn) {
                (Some(a), Some(b)) if (b - a).abs() <= reach => (-(b - a) / tau, false),
                (a, b) => {
                    // clamp to the resolvable displacement, signed by the side x ends up on
                    let a = a.unwrap_or(0.0);
                    let inside_next = interpolate(grid, gn, &f.x[..grid.dim()]) >= 0.0;
                    let b = b.filter(|b| (b - a).abs() <= reach).unwrap_or(if inside_next { a - reach } else { a + reach });
                    (-(b - a) / tau, true)
                }
            }
        })
        .unzip();
    Ok(VelocityEstimate { values, flagged })
}

/// Least-squares mean curvature vector per facet from
/// `sum sigma int <H, xi> = -sum sigma int <d xi, Id - nu (x) nu>` over the basis.
pub fn mean_curvature(mesh: &InterfaceMesh, sigma: &SurfaceTensionMatrix, basis: &FourierBasis) -> Result<FieldFit> {
    let samples: Vec<Sample> = mesh
        .facets
        .iter()
        .map(|f| Sample { x: f.x, weight: sigma.get(f.i, f.j) * f.area, orientation: f.normal })
        .collect();
    let rhs = first_variation_rhs(basis, &samples);
    fit_field(basis, &samples, &rhs)
}

#[derive(Clone, Debug, Serialize)]
pub struct HerringJunction {
    pub x: [f64; 3],
    pub phases: [usize; 3],
    /// `|sigma_12 t_12 + sigma_23 t_23 + sigma_31 t_31| / sigma_max`.
    pub residual: f64,
    /// Opening angles of the three phases in degrees (2D only).
    pub angles: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct HerringReport {
    pub junctions: Vec<HerringJunction>,
    pub warnings: Vec<String>,
}

impl HerringReport {
    pub fn max_residual(&self) -> f64 {
        self.junctions.iter().map(|j| j.residual).fold(0.0, f64::max)
    }
}

/// Conormal balance at every junction from tangents fitted to facets within `radius`
/// (default `6h`).
pub fn herring_check(mesh: &InterfaceMesh, sigma: &SurfaceTensionMatrix, radius: Option<f64>) -> Result<HerringReport> {
    if mesh.junctions.is_empty() {
        return Err(Error::Precondition("mesh has no triple junctions".into()));
    }
    let grid = &mesh.grid;
    let d = grid.dim();
    let radius = radius.unwrap_or(6.0 * grid.h());
    let mut junctions = Vec::new();
    let mut warnings = Vec::new();
    for (n, jn) in mesh.junctions.iter().enumerate() {
        let [a, b, c] = jn.phases;
        let mut tangents = Vec::new();
        for (p, q) in [(a, b), (b, c), (a, c)] {
            let mut cov = nalgebra::Matrix3::<f64>::zeros();
            let mut sum = nalgebra::Vector3::<f64>::zeros();
            let mut count = 0;
            for f in mesh.facets.iter().filter(|f| (f.i, f.j) == (p, q)) {
                let off = nalgebra::Vector3::from_fn(|k, _| if k < d { grid.wrap(f.x[k] - jn.x[k]) } else { 0.0 });
                if off.norm() <= radius {
                    cov += off * off.transpose() * f.area;
                    sum += off * f.area;
                    count += 1;
                }
            }
            if count == 0 {
                break;
            }
            let eig = cov.symmetric_eigen();
            let top = (0..3).max_by(|&x, &y| eig.eigenvalues[x].total_cmp(&eig.eigenvalues[y])).expect("3x3");
            let mut t: nalgebra::Vector3<f64> = eig.eigenvectors.column(top).into();
            if t.dot(&sum) < 0.0 {
                t = -t;
            }
            tangents.push((sigma.get(p, q), t));
        }
        if tangents.len() < 3 {
            warnings.push(format!("junction {n} at {:?}: fewer than three interfaces resolved, skipped", &jn.x[..d]));
            continue;
        }
        let total: nalgebra::Vector3<f64> = tangents.iter().map(|(s, t)| t * *s).sum();
        let angles = if d == 2 {
            let mut th: Vec<f64> = tangents.iter().map(|(_, t)| t[1].atan2(t[0])).collect();
            th.sort_by(f64::total_cmp);
            (0..3)
                .map(|k| {
                    let next = if k == 2 { th[0] + std::f64::consts::TAU } else { th[k + 1] };
                    (next - th[k]).to_degrees()
                })
                .collect()
        } else {
            Vec::new()
        };
        junctions.push(HerringJunction { x: jn.x, phases: jn.phases, residual: total.norm() / sigma.max(), angles });
    }
    Ok(HerringReport { junctions, warnings })
}

/// One time level of a run.
#[derive(Clone, Debug)]
pub struct Snapshot {
    pub partition: Partition,
    pub mesh: InterfaceMesh,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    Inconclusive,
    Skipped,
}

#[derive(Clone, Debug, Serialize)]
pub struct Verdict {
    pub name: String,
    pub status: Status,
    pub value: f64,
    pub threshold: f64,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct SnapshotDiagnostics {
    pub t: f64,
    pub energy: f64,
    /// `sum sigma V^2 area`.
    pub velocity_sq: f64,
    /// `sum sigma |H|^2 area`.
    pub curvature_sq: f64,
    /// `E(t) + 1/2 int_0^t (velocity_sq + curvature_sq)`.
    pub dissipation_lhs: f64,
    pub distance_to_initial: f64,
    pub under_resolved_facets: usize,
    pub curvature_residual: f64,
    /// Facet-area weighted means of `V` and `|H|`.
    pub mean_velocity: f64,
    pub mean_curvature: f64,
    /// Facet-L2 of `V + <H, nu>` relative to facet-L2 of `H`.
    pub velocity_curvature_residual: f64,
}

/// Per-snapshot velocity and curvature fields.
#[derive(Clone, Debug)]
pub struct SnapshotDynamics {
    pub velocity: VelocityEstimate,
    pub curvature: Option<FieldFit>,
}

#[derive(Clone, Debug, Serialize)]
pub struct BvReport {
    pub verdicts: Vec<Verdict>,
    pub snapshots: Vec<SnapshotDiagnostics>,
    /// `max_k |chi_{k+1} - chi_k|_{L2} / sqrt(dt)`, the modulus-of-continuity proxy.
    pub modulus_constant: f64,
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub dynamics: Vec<SnapshotDynamics>,
}

impl BvReport {
    pub fn verdict(&self, k: usize) -> &Verdict {
        &self.verdicts[k]
    }

    pub fn all_pass(&self) -> bool {
        self.verdicts.iter().all(|v| v.status == Status::Pass)
    }
}

/// Thresholds of the certificate.
#[derive(Clone, Copy, Debug)]
pub struct CertificateOptions {
    pub curvature_residual: f64,
    pub dissipation_budget: f64,
}

impl Default for CertificateOptions {
    fn default() -> Self {
        Self { curvature_residual: 0.1, dissipation_budget: 0.05 }
    }
}

/// Velocities (centred where possible) and curvature for snapshot `k`.
pub fn snapshot_dynamics(
    snapshots: &[Snapshot],
    k: usize,
    sigma: &SurfaceTensionMatrix,
    basis: &FourierBasis,
) -> Result<SnapshotDynamics> {
    let last = snapshots.len() - 1;
    let (a, b) = if k == 0 { (0, 1) } else if k == last { (last - 1, last) } else { (k - 1, k + 1) };
    let dt = snapshots[b].partition.time - snapshots[a].partition.time;
    let mesh = &snapshots[k].mesh;
    let velocity = normal_velocity(&snapshots[a].partition, &snapshots[b].partition, mesh, dt)?;
    let curvature = if mesh.is_empty() { None } else { Some(mean_curvature(mesh, sigma, basis)?) };
    Ok(SnapshotDynamics { velocity, curvature })
}

/// Check the four BV-solution conditions on uniformly spaced snapshots. `flagged_steps` are
/// solver steps already flagged by the flow ledger.
pub fn bv_certificate(
    snapshots: &[Snapshot],
    sigma: &SurfaceTensionMatrix,
    basis: &FourierBasis,
    flagged_steps: &[usize],
    options: CertificateOptions,
) -> Result<BvReport> {
    if snapshots.len() < 2 {
        return Err(Error::Precondition("the certificate needs at least two snapshots".into()));
    }
    let dt = snapshots[1].partition.time - snapshots[0].partition.time;
    if !(dt > 0.0) {
        return Err(Error::Precondition("snapshot times must increase".into()));
    }
    for w in snapshots.windows(2) {
        let step = w[1].partition.time - w[0].partition.time;
        if (step - dt).abs() > 1e-6 * dt {
            return Err(Error::Precondition("snapshots are not uniformly spaced".into()));
        }
    }
    let dynamics: Vec<SnapshotDynamics> = (0..snapshots.len())
        .map(|k| snapshot_dynamics(snapshots, k, sigma, basis))
        .collect::<Result<_>>()?;
    let d = snapshots[0].mesh.grid.dim();
    let e0 = perimeter_energy(&snapshots[0].mesh, sigma, None);
    let mut rows = Vec::with_capacity(snapshots.len());
    let mut integral = 0.0;
    let mut previous_rate = 0.0;
    for (k, (snap, dyn_k)) in snapshots.iter().zip(&dynamics).enumerate() {
        let mesh = &snap.mesh;
        let mut vel_sq = 0.0;
        let mut curv_sq = 0.0;
        let (mut wsum, mut vsum, mut hsum, mut res_num, mut h_l2) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (f_idx, f) in mesh.facets.iter().enumerate() {
            let s = sigma.get(f.i, f.j);
            let v = dyn_k.velocity.values[f_idx];
            vel_sq += s * v * v * f.area;
            wsum += f.area;
            vsum += v * f.area;
            if let Some(fit) = &dyn_k.curvature {
                let hv = fit.values[f_idx];
                let h2: f64 = hv[..d].iter().map(|x| x * x).sum();
                curv_sq += s * h2 * f.area;
                hsum += h2.sqrt() * f.area;
                h_l2 += h2 * f.area;
                let hn: f64 = (0..d).map(|a| hv[a] * f.normal[a]).sum();
                res_num += (v + hn).powi(2) * f.area;
            }
        }
        let rate = vel_sq + curv_sq;
        if k > 0 {
            integral += 0.5 * (rate + previous_rate) * dt;
        }
        previous_rate = rate;
        let energy = perimeter_energy(mesh, sigma, None);
        rows.push(SnapshotDiagnostics {
            t: snap.partition.time,
            energy,
            velocity_sq: vel_sq,
            curvature_sq: curv_sq,
            dissipation_lhs: energy + 0.5 * integral,
            distance_to_initial: snap.partition.l2_distance(&snapshots[0].partition),
            under_resolved_facets: dyn_k.velocity.under_resolved(),
            curvature_residual: dyn_k.curvature.as_ref().map_or(0.0, |f| f.relative_residual),
            mean_velocity: if wsum > 0.0 { vsum / wsum } else { 0.0 },
            mean_curvature: if wsum > 0.0 { hsum / wsum } else { 0.0 },
            velocity_curvature_residual: if h_l2 > 0.0 { (res_num / h_l2).sqrt() } else { 0.0 },
        });
    }
    let total_velocity: f64 = {
        let r: Vec<f64> = rows.iter().map(|r| r.velocity_sq).collect();
        r.windows(2).map(|w| 0.5 * (w[0] + w[1]) * dt).sum()
    };
    let under_resolved: usize = rows.iter().map(|r| r.under_resolved_facets).sum();
    let mut warnings = Vec::new();
    if under_resolved > 0 {
        warnings.push(format!("{under_resolved} facet velocities exceeded three cells per snapshot interval"));
    }
    if !flagged_steps.is_empty() {
        warnings.push(format!("{} solver steps were flagged by the flow ledger", flagged_steps.len()));
    }
    let mut verdicts = Vec::new();
    verdicts.push(Verdict {
        name: "velocities square integrable".into(),
        status: if total_velocity.is_finite() { Status::Pass } else { Status::Fail },
        value: total_velocity,
        threshold: f64::INFINITY,
        detail: format!("sum sigma int int V^2 = {total_velocity:.6e}; {under_resolved} under-resolved facets"),
    });
    let worst_residual = rows.iter().map(|r| r.curvature_residual).fold(0.0, f64::max);
    verdicts.push(Verdict {
        name: "curvature equation".into(),
        status: if worst_residual <= options.curvature_residual { Status::Pass } else { Status::Fail },
        value: worst_residual,
        threshold: options.curvature_residual,
        detail: "largest relative least-squares residual over snapshots".into(),
    });
    let bound = e0 * (1.0 + options.dissipation_budget);
    let worst = rows.iter().map(|r| r.dissipation_lhs - bound).fold(f64::NEG_INFINITY, f64::max);
    let ratio = if e0 > 0.0 { rows.iter().map(|r| r.dissipation_lhs / e0).fold(0.0, f64::max) } else { 0.0 };
    let holds = worst <= 1e-12 * e0.max(1.0);
    let status = if under_resolved > 0 || !flagged_steps.is_empty() {
        Status::Inconclusive
    } else if holds {
        Status::Pass
    } else {
        Status::Fail
    };
    verdicts.push(Verdict {
        name: "energy dissipation".into(),
        status,
        value: ratio,
        threshold: 1.0 + options.dissipation_budget,
        detail: "max over snapshots of (E(T') + 1/2 sum sigma int int (V^2 + |H|^2)) / E(0)".into(),
    });
    let floor = (2.0 * snapshots[0].mesh.total_area() * snapshots[0].partition.grid.h()).sqrt();
    let dist: Vec<f64> = rows.iter().map(|r| r.distance_to_initial).collect();
    let monotone = dist.windows(2).all(|w| w[0] <= w[1] + floor);
    let modulus = snapshots
        .windows(2)
        .map(|w| w[1].partition.l2_distance(&w[0].partition) / dt.sqrt())
        .fold(0.0, f64::max);
    verdicts.push(Verdict {
        name: "initial data attained".into(),
        status: if monotone { Status::Pass } else { Status::Fail },
        value: dist.get(1).copied().unwrap_or(0.0),
        threshold: floor,
        detail: format!("distance to initial partition nondecreasing within one cell layer; modulus constant {modulus:.4e}"),
    });
    Ok(BvReport { verdicts, snapshots: rows, modulus_constant: modulus, warnings, dynamics })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> TorusGrid<f64> {
        TorusGrid::new(2, n, 1.0).unwrap()
    }

    #[test]
    fn half_space_mesh_is_flat() {
        let p = Partition::from_fn(grid(64), 2, |x| usize::from(x[0] >= 0.5)).unwrap();
        let m = interface_mesh(&p, 2.0).unwrap();
        // two planes on the torus: x = 0.5 and x = 0
        assert!((m.total_area() - 2.0).abs() < 1e-2);
        for f in m.facets() {
            assert!(f.normal[1].abs() < 1e-6);
            assert!((f.normal[0].abs() - 1.0).abs() < 1e-6);
        }
        assert!(m.junctions().is_empty());
    }

    #[test]
    fn pair_orientation_is_antisymmetric() {
        let p = Partition::from_fn(grid(32), 2, |x| usize::from((x[0] - 0.5).hypot(x[1] - 0.5) < 0.3)).unwrap();
        let m = interface_mesh(&p, 2.0).unwrap();
        let a = m.pair(0, 1);
        let b = m.pair(1, 0);
        assert_eq!(a.len(), b.len());
        for (f, g) in a.iter().zip(&b) {
            assert_eq!(f.x, g.x);
            assert_eq!(f.normal, g.normal.map(|v| -v));
        }
        // inner normal of the disk (phase 1) points to the center
        for f in m.pair(1, 0) {
            let r = [f.x[0] - 0.5, f.x[1] - 0.5];
            assert!(f.normal[0] * r[0] + f.normal[1] * r[1] < 0.0);
        }
    }

    #[test]
    fn identical_partitions_have_zero_velocity() {
        let p = Partition::from_fn(grid(32), 2, |x| usize::from((x[0] - 0.5).hypot(x[1] - 0.5) < 0.3)).unwrap();
        let m = interface_mesh(&p, 2.0).unwrap();
        let v = normal_velocity(&p, &p, &m, 0.1).unwrap();
        assert!(v.values.iter().all(|&x| x.abs() < 1e-12));
    }

    #[test]
    fn empty_mesh_has_zero_energy() {
        let p = Partition::from_fn(grid(16), 2, |_| 1).unwrap();
        let m = interface_mesh(&p, 2.0).unwrap();
        assert!(m.is_empty());
        assert_eq!(perimeter_energy(&m, &SurfaceTensionMatrix::two_phase(1.0), None), 0.0);
    }

    #[test]
    fn smoothing_radius_below_one_cell_rejected() {
        let p = Partition::from_fn(grid(16), 2, |_| 1).unwrap();
        assert!(interface_mesh(&p, 0.5).is_err());
    }
}
