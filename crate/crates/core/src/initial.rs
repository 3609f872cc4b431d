//! Well-prepared initial data: seed geometries dressed with one dimensional optimal profiles.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodesic::{relax_with_restarts, ProfileTable};
use crate::potential::{MultiwellPotential, PotentialForm};
use crate::scalar::Scalar;
use crate::torus::{PhaseField, TorusGrid};

/// A region of the torus. Intervals are periodic; `lo > hi` wraps around.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Region {
    Slab { axis: usize, lo: f64, hi: f64 },
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
    /// Planar sector `from <= angle < to` around `center`, angles in radians.
    Sector { center: Vec<f64>, from: f64, to: f64 },
}

fn wrap(x: f64, l: f64) -> f64 {
    x - l * (x / l).floor()
}

/// Distance from `x` to the periodic interval `[lo, hi)`, zero inside.
fn interval_distance(x: f64, lo: f64, hi: f64, l: f64) -> f64 {
    let (lo, x) = (wrap(lo, l), wrap(x, l));
    let len = wrap(hi - lo, l);
    let len = if len == 0.0 && hi != lo { l } else { len };
    let rel = wrap(x - lo, l);
    if rel < len {
        0.0
    } else {
        (rel - len).min(l - rel)
    }
}

fn interval_depth(x: f64, lo: f64, hi: f64, l: f64) -> f64 {
    let len = wrap(hi - lo, l);
    if len == 0.0 {
        return f64::INFINITY;
    }
    let rel = wrap(x - lo, l);
    rel.min(len - rel)
}

fn periodic_delta(a: f64, b: f64, l: f64) -> f64 {
    let d = b - a;
    d - l * (d / l).round()
}

impl Region {
    pub fn contains(&self, x: &[f64], l: f64) -> bool {
        self.distance(x, l) == 0.0
    }

    /// Distance from an outside point; zero inside.
    pub fn distance(&self, x: &[f64], l: f64) -> f64 {
        match self {
            Region::Slab { axis, lo, hi } => interval_distance(x[*axis], *lo, *hi, l),
            Region::Box { lo, hi } => x
                .iter()
                .enumerate()
                .map(|(a, &xa)| interval_distance(xa, lo[a], hi[a], l).powi(2))
                .sum::<f64>()
                .sqrt(),
            Region::Ball { center, radius } => {
                let r = x
                    .iter()
                    .zip(center)
                    .map(|(&a, &c)| periodic_delta(c, a, l).powi(2))
                    .sum::<f64>()
                    .sqrt();
                (r - radius).max(0.0)
            }
            Region::Sector { center, from, to } => {
                let (dx, dy) = (x[0] - center[0], x[1] - center[1]);
                let ang = wrap(dy.atan2(dx) - from, 2.0 * std::f64::consts::PI);
                let span = wrap(to - from, 2.0 * std::f64::consts::PI);
                if ang < span {
                    return 0.0;
                }
                ray_distance(dx, dy, *from).min(ray_distance(dx, dy, *to))
            }
        }
    }

    /// Distance from an inside point to the region's boundary.
    pub fn depth(&self, x: &[f64], l: f64) -> f64 {
        match self {
            Region::Slab { axis, lo, hi } => interval_depth(x[*axis], *lo, *hi, l),
            Region::Box { lo, hi } => x
                .iter()
                .enumerate()
                .map(|(a, &xa)| interval_depth(xa, lo[a], hi[a], l))
                .fold(f64::INFINITY, f64::min),
            Region::Ball { center, radius } => {
                let r = x
                    .iter()
                    .zip(center)
                    .map(|(&a, &c)| periodic_delta(c, a, l).powi(2))
                    .sum::<f64>()
                    .sqrt();
                (radius - r).max(0.0)
            }
            Region::Sector { center, from, to } => {
                let (dx, dy) = (x[0] - center[0], x[1] - center[1]);
                ray_distance(dx, dy, *from).min(ray_distance(dx, dy, *to))
            }
        }
    }
}

fn ray_distance(dx: f64, dy: f64, angle: f64) -> f64 {
    let (c, s) = (angle.cos(), angle.sin());
    let t = (dx * c + dy * s).max(0.0);
    ((dx - t * c).powi(2) + (dy - t * s).powi(2)).sqrt()
}

/// Labeled regions; points in no region belong to `background`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedGeometry {
    pub regions: Vec<(usize, Region)>,
    pub background: usize,
    pub length: f64,
}

impl SeedGeometry {
    pub fn label(&self, x: &[f64]) -> usize {
        self.regions
            .iter()
            .find(|(_, r)| r.contains(x, self.length))
            .map(|(p, _)| *p)
            .unwrap_or(self.background)
    }

    pub fn phases(&self) -> Vec<usize> {
        let mut p: Vec<usize> = self.regions.iter().map(|(p, _)| *p).collect();
        p.push(self.background);
        p.sort_unstable();
        p.dedup();
        p
    }

    /// Distance from `x` (in phase `own`) to the nearest point of phase `other`.
    pub fn distance_to_phase(&self, x: &[f64], own: usize, other: usize) -> f64 {
        let l = self.length;
        let mut best = f64::INFINITY;
        for (p, r) in &self.regions {
            if *p == other {
                best = best.min(r.distance(x, l));
            }
        }
        if other == self.background {
            // leaving the region that contains x reaches the background
            if let Some((_, r)) = self
                .regions
                .iter()
                .find(|(p, r)| *p == own && r.contains(x, l))
            {
                best = best.min(r.depth(x, l));
            }
        }
        best
    }
}

/// Initial data families.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialSpec {
    /// Phase 1 on the slab `L/4 <= x_1 < 3L/4`, phase 0 elsewhere; two flat interfaces.
    Kink,
    Disk { center: Vec<f64>, radius: f64 },
    /// Phase 0 on `x_2 < L/2`; phases 1 and 2 split the upper half at `x_1 = 0` and `L/2`.
    TripleJunction,
    /// Three sectors around the center with the given opening angles in degrees.
    Wedges { angles: Vec<f64> },
    CollapsingSlab { width: f64 },
    Checkpoint { path: String },
}

impl InitialSpec {
    pub fn geometry(&self, dim: usize, length: f64, eps: f64) -> Result<SeedGeometry> {
        let l = length;
        let half = 0.5 * l;
        let geom = |regions, background| SeedGeometry {
            regions,
            background,
            length: l,
        };
        Ok(match self {
            InitialSpec::Kink => geom(
                vec![(1, Region::Slab { axis: 0, lo: 0.25 * l, hi: 0.75 * l })],
                0,
            ),
            InitialSpec::Disk { center, radius } => {
                if center.len() != dim {
                    return Err(Error::Precondition(format!(
                        "disk center needs {dim} coordinates"
                    )));
                }
                if *radius < 4.0 * eps {
                    return Err(Error::Precondition(format!(
                        "radius {radius} is below 4 eps = {}",
                        4.0 * eps
                    )));
                }
                if 2.0 * radius >= l {
                    return Err(Error::Precondition("disk does not fit in the torus".into()));
                }
                geom(
                    vec![(1, Region::Ball { center: center.clone(), radius: *radius })],
                    0,
                )
            }
            InitialSpec::CollapsingSlab { width } => {
                if !(*width > 0.0) || *width >= half {
                    return Err(Error::Precondition(format!("slab width {width} out of range")));
                }
                geom(
                    vec![(
                        1,
                        Region::Slab { axis: 0, lo: half - 0.5 * width, hi: half + 0.5 * width },
                    )],
                    0,
                )
            }
            InitialSpec::TripleJunction => {
                let full_lo = vec![0.0; dim];
                let mut b_lo = full_lo.clone();
                let mut b_hi = vec![l; dim];
                b_lo[1] = half;
                b_hi[0] = half;
                let mut c_lo = b_lo.clone();
                c_lo[0] = half;
                let mut c_hi = vec![l; dim];
                c_hi[0] = 0.0;
                c_hi[1] = 0.0;
                b_hi[1] = 0.0;
                // wrap-around intervals: [half, 0) covers the upper half
                geom(
                    vec![
                        (1, Region::Box { lo: b_lo, hi: b_hi }),
                        (2, Region::Box { lo: c_lo, hi: c_hi }),
                    ],
                    0,
                )
            }
            InitialSpec::Wedges { angles } => {
                if dim != 2 || angles.len() != 3 {
                    return Err(Error::Precondition("wedges need d = 2 and three angles".into()));
                }
                let total: f64 = angles.iter().sum();
                if (total - 360.0).abs() > 1e-9 || angles.iter().any(|&a| a <= 0.0) {
                    return Err(Error::Precondition("wedge angles must be positive and sum to 360".into()));
                }
                let c = vec![half, half];
                let start = 90f64.to_radians();
                let a0 = start;
                let a1 = a0 + angles[0].to_radians();
                let a2 = a1 + angles[1].to_radians();
                geom(
                    vec![
                        (0, Region::Sector { center: c.clone(), from: a0, to: a1 }),
                        (1, Region::Sector { center: c.clone(), from: a1, to: a2 }),
                    ],
                    2,
                )
            }
            InitialSpec::Checkpoint { .. } => {
                return Err(Error::Unsupported("checkpoint data has no seed geometry".into()))
            }
        })
    }

    /// Total interface measure of the seed geometry, weighted by `sigma` when given.
    pub fn seed_perimeter(&self, dim: usize, length: f64) -> Option<f64> {
        let l = length;
        let face = l.powi(dim as i32 - 1);
        match self {
            InitialSpec::Kink | InitialSpec::CollapsingSlab { .. } => Some(2.0 * face),
            InitialSpec::Disk { radius, .. } => Some(if dim == 2 {
                2.0 * std::f64::consts::PI * radius
            } else {
                4.0 * std::f64::consts::PI * radius * radius
            }),
            InitialSpec::TripleJunction => Some(if dim == 2 { 3.0 * l } else { 3.0 * l * l }),
            _ => None,
        }
    }
}

/// Optimal transition profiles between pairs of wells.
pub struct ProfileBank<T> {
    phases: usize,
    tanh: bool,
    tables: Vec<Option<ProfileTable<T>>>,
}

impl<T: Scalar> ProfileBank<T> {
    pub fn new(potential: &MultiwellPotential<T>) -> Result<Self> {
        let p = potential.num_phases();
        let tanh = matches!(potential.form(), PotentialForm::ScalarDoubleWell);
        let mut tables = vec![None; p * p];
        if !tanh {
            for i in 0..p {
                for j in i + 1..p {
                    let path = relax_with_restarts(
                        potential,
                        potential.well(i),
                        potential.well(j),
                        400,
                        2000,
                        4,
                        (i * p + j) as u64,
                    )?;
                    tables[i * p + j] = Some(ProfileTable::from_path(potential, &path)?);
                }
            }
        }
        Ok(Self { phases: p, tanh, tables })
    }

    /// Value of the `i -> j` profile at signed distance `z` (units of eps, positive toward `j`).
    pub fn eval_into(&self, potential: &MultiwellPotential<T>, i: usize, j: usize, z: T, out: &mut [T]) {
        if self.tanh {
            let (a, b) = (potential.well(i)[0], potential.well(j)[0]);
            let t = (T::c(2.0).sqrt() * z).tanh();
            out[0] = a + (b - a) * (T::one() + t) * T::c(0.5);
            return;
        }
        if i < j {
            self.tables[i * self.phases + j].as_ref().expect("profile").eval_into(z, out);
        } else {
            self.tables[j * self.phases + i].as_ref().expect("profile").eval_into(-z, out);
        }
    }
}

/// Sample the dressed seed geometry on the grid.
pub fn initial_data<T: Scalar>(
    spec: &InitialSpec,
    grid: &TorusGrid<T>,
    potential: &MultiwellPotential<T>,
    eps: T,
) -> Result<PhaseField<T>> {
    if let InitialSpec::Checkpoint { path } = spec {
        let ck = crate::torus::read_checkpoint::<T>(std::path::Path::new(path))?;
        if ck.field.grid() != grid || ck.field.components() != potential.dim() {
            return Err(Error::Precondition(format!(
                "checkpoint {path} does not match the configured grid or potential"
            )));
        }
        return Ok(ck.field);
    }
    let l = grid.length().to_f64_lossy();
    let geom = spec.geometry(grid.dim(), l, eps.to_f64_lossy())?;
    let phases = geom.phases();
    if let Some(&p) = phases.iter().find(|&&p| p >= potential.num_phases()) {
        return Err(Error::Precondition(format!(
            "initial data uses phase {} but the potential has {} wells",
            p + 1,
            potential.num_phases()
        )));
    }
    let bank = ProfileBank::new(potential)?;
    let n = potential.dim();
    let mut values = vec![T::zero(); grid.cells() * n];
    for (cell, out) in values.chunks_mut(n).enumerate() {
        let x: Vec<f64> = grid.position(cell).iter().map(|v| v.to_f64_lossy()).collect();
        let own = geom.label(&x);
        let nearest = phases
            .iter()
            .filter(|&&p| p != own)
            .map(|&p| (p, geom.distance_to_phase(&x, own, p)))
            .min_by(|a, b| a.1.partial_cmp(&b.1).expect("finite distance"));
        match nearest {
            Some((other, d)) if d.is_finite() => {
                let z = T::c(-d) / eps;
                bank.eval_into(potential, own, other, z, out);
            }
            _ => out.copy_from_slice(potential.well(own)),
        }
    }
    PhaseField::new(grid.clone(), n, values, eps)
}
