//! Lattice ball coverings of the torus, majority-phase selection per ball and the
//! localization error functionals evaluated on interface meshes.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geodesic::SurfaceTensionMatrix;
use crate::sharp::InterfaceMesh;
use crate::torus::TorusGrid;

/// C^2 bump: 1 on `[0, 1]`, 0 on `[2, inf)`, quintic smoothstep in between.
pub fn bump(s: f64) -> f64 {
    if s <= 1.0 {
        1.0
    } else if s >= 2.0 {
        0.0
    } else {
        let t = s - 1.0;
        1.0 - t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
    }
}

/// Balls `B_r(c)` centred on the lattice of spacing at most `r / sqrt(d)`, with cutoffs
/// `rho_B(x) = bump(|x - c| / r)` supported in `2B`.
#[derive(Clone, Debug)]
pub struct BallCovering {
    grid: TorusGrid<f64>,
    radius: f64,
    per_axis: usize,
    centers: Vec<[f64; 3]>,
}

/// Covering of `grid` by balls of radius `r`, `4h <= r <= L/4`.
pub fn build_covering(grid: &TorusGrid<f64>, r: f64) -> Result<BallCovering> {
    let h = grid.h();
    let l = grid.length();
    if !(r >= 4.0 * h * (1.0 - 1e-12) && r <= l / 4.0 * (1.0 + 1e-12)) {
        return Err(Error::Precondition(format!("ball radius {r} outside [4h, L/4] = [{}, {}]", 4.0 * h, l / 4.0)));
    }
    let d = grid.dim();
    let per_axis = ((d as f64).sqrt() * l / r - 1e-9).ceil() as usize;
    let spacing = l / per_axis as f64;
    let total = per_axis.pow(d as u32);
    let centers = (0..total)
        .map(|flat| {
            let mut c = [0.0; 3];
            let mut rem = flat;
            for a in (0..d).rev() {
                c[a] = (rem % per_axis) as f64 * spacing;
                rem /= per_axis;
            }
            c
        })
        .collect();
    Ok(BallCovering { grid: grid.clone(), radius: r, per_axis, centers })
}

impl BallCovering {
    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn grid(&self) -> &TorusGrid<f64> {
        &self.grid
    }

    pub fn centers(&self) -> &[[f64; 3]] {
        &self.centers
    }

    pub fn per_axis(&self) -> usize {
        self.per_axis
    }

    pub fn spacing(&self) -> f64 {
        self.grid.length() / self.per_axis as f64
    }

    pub fn cutoff(&self, ball: usize, x: &[f64]) -> f64 {
        let d = self.grid.dim();
        bump(self.grid.periodic_distance(&self.centers[ball][..d], &x[..d]) / self.radius)
    }

    /// Balls whose support `2B` contains `x`, in lattice order.
    pub fn supports_containing(&self, x: &[f64]) -> Vec<usize> {
        let d = self.grid.dim();
        let s = self.spacing();
        let reach = (2.0 * self.radius / s).ceil() as i64;
        let m = self.per_axis as i64;
        let mut base = [0i64; 3];
        for a in 0..d {
            base[a] = (x[a] / s).floor() as i64;
        }
        let mut out = Vec::new();
        // the window may wrap onto itself on small lattices
        let mut cand: Vec<usize> = Vec::new();
        let offs: Vec<i64> = (-reach - 1..=reach + 1).collect();
        let mut stack = vec![(0usize, 0usize)];
        while let Some((axis, acc)) = stack.pop() {
            if axis == d {
                cand.push(acc);
                continue;
            }
            for &o in offs.iter().rev() {
                let k = (base[axis] + o).rem_euclid(m) as usize;
                stack.push((axis + 1, acc * self.per_axis + k));
            }
        }
        cand.sort_unstable();
        cand.dedup();
        for b in cand {
            if self.grid.periodic_distance(&self.centers[b][..d], &x[..d]) < 2.0 * self.radius {
                out.push(b);
            }
        }
        out
    }

    /// Largest number of supports meeting at a grid cell centre.
    pub fn max_overlap(&self) -> usize {
        (0..self.grid.cells())
            .into_par_iter()
            .map(|c| self.supports_containing(&self.grid.position(c)).len())
            .max()
            .unwrap_or(0)
    }

    /// Smallest value of `sum_B rho_B` over grid cell centres.
    pub fn min_cutoff_sum(&self) -> f64 {
        (0..self.grid.cells())
            .into_par_iter()
            .map(|c| {
                let x = self.grid.position(c);
                self.supports_containing(&x).iter().map(|&b| self.cutoff(b, &x)).sum::<f64>()
            })
            .reduce(|| f64::INFINITY, f64::min)
    }
}

/// Cutoff-weighted boundary data of one ball: `area[k] = int rho |grad chi_k|` and
/// `moment[k] = int rho nu_k |grad chi_k|`.
#[derive(Clone, Debug)]
pub struct BallMoments {
    pub area: Vec<f64>,
    pub moment: Vec<[f64; 3]>,
    /// `int rho dH^{d-1}` per unordered pair, row-major `k * P + l` with `k < l`.
    pub pair_area: Vec<f64>,
}

impl BallMoments {
    fn new(p: usize) -> Self {
        Self { area: vec![0.0; p], moment: vec![[0.0; 3]; p], pair_area: vec![0.0; p * p] }
    }

    pub fn is_empty(&self) -> bool {
        self.area.iter().all(|&a| a == 0.0)
    }
}

/// Majority pair, unit vector and error of one ball.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BallResult {
    pub center: [f64; 3],
    pub pair: (usize, usize),
    pub normal: [f64; 3],
    pub error: f64,
    /// `E(chi; rho_B) - max_i int rho_B |grad psi_i|`.
    pub surrogate: f64,
    pub empty: bool,
}

/// Error of the pair `(i, j)` with its optimal `nu_B`:
/// `2(a_i + a_j) - 2|m_i - m_j| + sum_{k != i,j} a_k`.
pub fn pair_error(mom: &BallMoments, i: usize, j: usize) -> (f64, [f64; 3]) {
    let mut diff = [0.0; 3];
    for (a, v) in diff.iter_mut().enumerate() {
        *v = mom.moment[i][a] - mom.moment[j][a];
    }
    let len = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nu = if len > 0.0 { diff.map(|v| v / len) } else { [1.0, 0.0, 0.0] };
    let rest: f64 = mom.area.iter().enumerate().filter(|&(k, _)| k != i && k != j).map(|(_, a)| a).sum();
    let err = (2.0 * (mom.area[i] + mom.area[j]) - 2.0 * len).max(0.0) + rest;
    (err, nu)
}

/// Exhaustive minimum over ordered pairs `i != j`; ties keep the first pair in row-major order.
pub fn majority_phase(mom: &BallMoments) -> ((usize, usize), [f64; 3], f64, bool) {
    let p = mom.area.len();
    if mom.is_empty() || p < 2 {
        return ((0, 1.min(p.saturating_sub(1))), [1.0, 0.0, 0.0], 0.0, true);
    }
    let mut best = ((0, 1), [1.0, 0.0, 0.0], f64::INFINITY);
    for i in 0..p {
        for j in 0..p {
            if i == j {
                continue;
            }
            let (e, nu) = pair_error(mom, i, j);
            if e < best.2 {
                best = ((i, j), nu, e);
            }
        }
    }
    (best.0, best.1, best.2, false)
}

/// Per-ball moments of `mesh` under the covering cutoffs.
pub fn ball_moments(mesh: &InterfaceMesh, covering: &BallCovering) -> Result<Vec<BallMoments>> {
    if mesh.grid() != covering.grid() {
        return Err(Error::Precondition("mesh and covering live on different grids".into()));
    }
    let p = mesh.phases();
    let d = covering.grid.dim();
    let mut out = vec![BallMoments::new(p); covering.centers.len()];
    for f in mesh.facets() {
        for b in covering.supports_containing(&f.x[..d]) {
            let w = covering.cutoff(b, &f.x[..d]) * f.area;
            if w == 0.0 {
                continue;
            }
            let m = &mut out[b];
            m.area[f.i] += w;
            m.area[f.j] += w;
            m.pair_area[f.i * p + f.j] += w;
            for a in 0..d {
                m.moment[f.i][a] += w * f.normal[a];
                m.moment[f.j][a] -= w * f.normal[a];
            }
        }
    }
    Ok(out)
}

/// Localization report over a covering.
#[derive(Clone, Debug, Serialize)]
pub struct CoveringReport {
    pub radius: f64,
    pub balls: Vec<BallResult>,
    /// Sum of the ball errors.
    pub total: f64,
    /// Sum of the ball surrogates.
    pub surrogate_total: f64,
    /// `surrogate_total / total` (zero when both vanish).
    pub surrogate_constant: f64,
    /// Interface energy of the mesh.
    pub energy: f64,
}

/// Majority pair and error for every ball, plus the `psi` surrogate.
pub fn covering_error(mesh: &InterfaceMesh, sigma: &SurfaceTensionMatrix, covering: &BallCovering) -> Result<CoveringReport> {
    let p = mesh.phases();
    if sigma.num_phases() != p {
        return Err(Error::Precondition("surface tension matrix does not match the mesh phases".into()));
    }
    let moments = ball_moments(mesh, covering)?;
    let balls: Vec<BallResult> = moments
        .par_iter()
        .zip(covering.centers.par_iter())
        .map(|(mom, c)| {
            let (pair, normal, error, empty) = majority_phase(mom);
            let mut energy = 0.0;
            let mut psi_max = 0.0f64;
            for k in 0..p {
                for l in k + 1..p {
                    energy += sigma.get(k, l) * mom.pair_area[k * p + l];
                }
            }
            for i in 0..p {
                let mut v = 0.0;
                for k in 0..p {
                    for l in k + 1..p {
                        v += (sigma.get(i, k) - sigma.get(i, l)).abs() * mom.pair_area[k * p + l];
                    }
                }
                psi_max = psi_max.max(v);
            }
            BallResult { center: *c, pair, normal, error, surrogate: energy - psi_max, empty }
        })
        .collect();
    let total = balls.iter().map(|b| b.error).sum::<f64>();
    let surrogate_total = balls.iter().map(|b| b.surrogate).sum::<f64>();
    Ok(CoveringReport {
        radius: covering.radius,
        total,
        surrogate_total,
        surrogate_constant: if total > 0.0 { surrogate_total / total } else { 0.0 },
        energy: crate::sharp::perimeter_energy(mesh, sigma, None),
        balls,
    })
}

impl CoveringReport {
    /// CSV `cx..., pair_i, pair_j, nu_B..., error`.
    pub fn to_csv(&self, dim: usize) -> String {
        let axes = ["x", "y", "z"];
        let mut head: Vec<String> = axes[..dim].iter().map(|a| format!("c{a}")).collect();
        head.extend(["pair_i", "pair_j"].map(String::from));
        head.extend(axes[..dim].iter().map(|a| format!("nu_B_{a}")));
        head.push("error".into());
        let mut s = head.join(",");
        s.push('\n');
        for b in &self.balls {
            let mut row: Vec<String> = b.center[..dim].iter().map(|v| format!("{v:.17e}")).collect();
            row.push(b.pair.0.to_string());
            row.push(b.pair.1.to_string());
            row.extend(b.normal[..dim].iter().map(|v| format!("{v:.17e}")));
            row.push(format!("{:.17e}", b.error));
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }
}
