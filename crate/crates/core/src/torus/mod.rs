//! Periodic grids, phase fields and the diffuse energies.

mod checkpoint;
mod spectral;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use spectral::Spectral;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geodesic::{phi, GeodesicParams};
use crate::potential::MultiwellPotential;
use crate::scalar::Scalar;

/// `[0, length)^d` split into `n^d` cubic cells; the first axis varies slowest.
#[derive(Clone, Debug, PartialEq)]
pub struct TorusGrid<T> {
    dim: usize,
    n: usize,
    length: T,
}

impl<T: Scalar> TorusGrid<T> {
    pub fn new(dim: usize, n: usize, length: T) -> Result<Self> {
        if !(2..=3).contains(&dim) {
            return Err(Error::Precondition(format!("dimension must be 2 or 3, got {dim}")));
        }
        if n < 4 || !n.is_power_of_two() {
            return Err(Error::Precondition(format!(
                "cells per axis must be a power of two >= 4, got {n}"
            )));
        }
        if !(length > T::zero()) || !length.is_finite() {
            return Err(Error::Precondition(format!("side length must be positive, got {length}")));
        }
        Ok(Self { dim, n, length })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn length(&self) -> T {
        self.length
    }

    pub fn h(&self) -> T {
        self.length / T::from_usize_lossy(self.n)
    }

    pub fn cells(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn cell_volume(&self) -> T {
        self.h().powi(self.dim as i32)
    }

    /// Per-axis indices of a flat cell index.
    #[inline]
    pub fn unflatten(&self, mut flat: usize) -> [usize; 3] {
        let mut idx = [0; 3];
        for a in (0..self.dim).rev() {
            idx[a] = flat % self.n;
            flat /= self.n;
        }
        idx
    }

    /// Flat index of per-axis indices, wrapped periodically.
    #[inline]
    pub fn flatten(&self, idx: &[i64]) -> usize {
        let n = self.n as i64;
        idx.iter()
            .take(self.dim)
            .fold(0usize, |acc, &i| acc * self.n + i.rem_euclid(n) as usize)
    }

    /// Cell center of a flat index.
    pub fn position(&self, flat: usize) -> Vec<T> {
        let idx = self.unflatten(flat);
        let h = self.h();
        (0..self.dim)
            .map(|a| (T::from_usize_lossy(idx[a]) + T::c(0.5)) * h)
            .collect()
    }

    /// Shortest periodic displacement `b - a` along one axis.
    #[inline]
    pub fn wrap(&self, delta: T) -> T {
        let l = self.length;
        delta - l * (delta / l).round()
    }

    pub fn periodic_distance(&self, a: &[T], b: &[T]) -> T {
        a.iter()
            .zip(b)
            .map(|(&x, &y)| {
                let d = self.wrap(y - x);
                d * d
            })
            .sum::<T>()
            .sqrt()
    }
}

/// Vector field `u: T^d -> R^N` sampled at cell centers.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseField<T> {
    grid: TorusGrid<T>,
    components: usize,
    values: Vec<T>,
    epsilon: T,
}

impl<T: Scalar> PhaseField<T> {
    /// `values[cell * components + c]`.
    pub fn new(grid: TorusGrid<T>, components: usize, values: Vec<T>, epsilon: T) -> Result<Self> {
        if components == 0 || values.len() != grid.cells() * components {
            return Err(Error::Precondition(format!(
                "expected {} values, got {}",
                grid.cells() * components,
                values.len()
            )));
        }
        if !(epsilon > T::zero()) || !epsilon.is_finite() {
            return Err(Error::Precondition(format!("epsilon must be positive, got {epsilon}")));
        }
        if let Some(k) = values.iter().position(|x| !x.is_finite()) {
            return Err(Error::Domain(format!("non-finite value at cell {}", k / components)));
        }
        Ok(Self {
            grid,
            components,
            values,
            epsilon,
        })
    }

    pub fn constant(grid: TorusGrid<T>, value: &[T], epsilon: T) -> Result<Self> {
        let values = (0..grid.cells()).flat_map(|_| value.iter().cloned()).collect();
        Self::new(grid, value.len(), values, epsilon)
    }

    pub fn from_fn(
        grid: TorusGrid<T>,
        components: usize,
        epsilon: T,
        mut f: impl FnMut(&[T], &mut [T]),
    ) -> Result<Self> {
        let mut values = vec![T::zero(); grid.cells() * components];
        for (cell, out) in values.chunks_mut(components).enumerate() {
            f(&grid.position(cell), out);
        }
        Self::new(grid, components, values, epsilon)
    }

    pub fn grid(&self) -> &TorusGrid<T> {
        &self.grid
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn epsilon(&self) -> T {
        self.epsilon
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    #[inline]
    pub fn at(&self, cell: usize) -> &[T] {
        &self.values[cell * self.components..(cell + 1) * self.components]
    }

    pub fn component(&self, c: usize) -> Vec<T> {
        self.values
            .iter()
            .skip(c)
            .step_by(self.components)
            .cloned()
            .collect()
    }

    pub fn set_component(&mut self, c: usize, data: &[T]) {
        for (cell, &v) in data.iter().enumerate() {
            self.values[cell * self.components + c] = v;
        }
    }

    /// True when the interface width is under-resolved (`eps < 2h`).
    pub fn under_resolved(&self) -> bool {
        self.epsilon < T::c(2.0) * self.grid.h()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|x| x.is_finite())
    }

    /// Squared `L^2` distance to another field on the same grid.
    pub fn l2_distance_sq(&self, other: &PhaseField<T>) -> T {
        let dv = self.grid.cell_volume();
        self.values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum::<T>()
            * dv
    }

    /// CSV of one line of cells along `axis` through the cell `through`.
    pub fn slice_csv(&self, axis: usize, through: usize) -> String {
        let mut idx = self.grid.unflatten(through);
        let mut out = String::from("x");
        for c in 0..self.components {
            out.push_str(&format!(",u{c}"));
        }
        out.push('\n');
        let h = self.grid.h();
        for k in 0..self.grid.n() {
            idx[axis] = k;
            let ii: Vec<i64> = idx[..self.grid.dim()].iter().map(|&x| x as i64).collect();
            let cell = self.grid.flatten(&ii);
            out.push_str(&format!("{}", (T::from_usize_lossy(k) + T::c(0.5)) * h));
            for v in self.at(cell) {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Spectral gradient of every component, `grad[c][axis][cell]`.
pub fn field_gradient<T: Scalar>(f: &PhaseField<T>, spectral: &Spectral<T>) -> Vec<Vec<Vec<T>>> {
    (0..f.components())
        .map(|c| spectral.gradient(&f.component(c)))
        .collect()
}

/// Componentwise spectral Laplacian, same layout as the field values.
pub fn laplacian<T: Scalar>(f: &PhaseField<T>, spectral: &Spectral<T>) -> Vec<T> {
    let mut out = vec![T::zero(); f.values().len()];
    for c in 0..f.components() {
        let lap = spectral.laplacian(&f.component(c));
        for (cell, v) in lap.into_iter().enumerate() {
            out[cell * f.components() + c] = v;
        }
    }
    out
}

/// Pointwise `|grad u|^2` (Frobenius) per cell.
pub fn gradient_norm_sq<T: Scalar>(grad: &[Vec<Vec<T>>], cells: usize) -> Vec<T> {
    (0..cells)
        .map(|cell| {
            grad.iter()
                .flat_map(|g| g.iter().map(move |axis| axis[cell] * axis[cell]))
                .sum()
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EnergyBreakdown<T> {
    pub total: T,
    pub dirichlet: T,
    pub potential: T,
    pub modica_mortola: T,
}

/// Midpoint-rule energies `int w (eps/2 |grad u|^2 + W(u)/eps)`, with `w = 1` when absent.
pub fn energy<T: Scalar>(
    f: &PhaseField<T>,
    potential: &MultiwellPotential<T>,
    spectral: &Spectral<T>,
    weight: Option<&[T]>,
) -> Result<EnergyBreakdown<T>> {
    let cells = f.grid().cells();
    if let Some(w) = weight {
        if w.len() != cells {
            return Err(Error::Precondition("weight has the wrong length".into()));
        }
        if w.iter().any(|&x| !(x >= T::zero())) {
            return Err(Error::Precondition("weight must be nonnegative".into()));
        }
    }
    if f.components() != potential.dim() {
        return Err(Error::Precondition("field and potential dimensions differ".into()));
    }
    let grad = field_gradient(f, spectral);
    let g2 = gradient_norm_sq(&grad, cells);
    Ok(energy_from_parts(f, potential, &g2, weight))
}

pub(crate) fn energy_from_parts<T: Scalar>(
    f: &PhaseField<T>,
    potential: &MultiwellPotential<T>,
    g2: &[T],
    weight: Option<&[T]>,
) -> EnergyBreakdown<T> {
    let eps = f.epsilon();
    let dv = f.grid().cell_volume();
    let cells = f.grid().cells();
    // fixed chunking keeps the reduction order independent of the thread count
    let parts: Vec<[T; 3]> = (0..cells)
        .collect::<Vec<_>>()
        .par_chunks(4096)
        .map(|chunk| {
            let mut acc = [T::zero(); 3];
            for &cell in chunk {
                let w = weight.map_or(T::one(), |w| w[cell]);
                if w == T::zero() {
                    continue;
                }
                let wv = potential.value(f.at(cell)).max(T::zero());
                acc[0] += w * T::c(0.5) * eps * g2[cell];
                acc[1] += w * wv / eps;
                acc[2] += w * (T::c(2.0) * wv).sqrt() * g2[cell].sqrt();
            }
            acc
        })
        .collect();
    let mut sums = [T::zero(); 3];
    for p in parts {
        for k in 0..3 {
            sums[k] += p[k];
        }
    }
    let dirichlet = sums[0] * dv;
    let pot = sums[1] * dv;
    EnergyBreakdown {
        total: dirichlet + pot,
        dirichlet,
        potential: pot,
        modica_mortola: sums[2] * dv,
    }
}

/// Tabulated `phi_i` on a box of target values with multilinear interpolation.
#[derive(Clone, Debug)]
pub struct PsiTable<T> {
    well: usize,
    lo: Vec<T>,
    hi: Vec<T>,
    per_axis: usize,
    values: Vec<T>,
    /// Largest interpolation error measured at probe points.
    pub max_error: T,
}

impl<T: Scalar> PsiTable<T> {
    /// Build with doubling resolution until probes agree to `tol`, or `max_per_axis` is hit.
    pub fn build(
        potential: &MultiwellPotential<T>,
        well: usize,
        lo: Vec<T>,
        hi: Vec<T>,
        params: GeodesicParams,
        tol: T,
    ) -> Result<Self> {
        let dim = potential.dim();
        let max_per_axis = match dim {
            1 => 4097,
            2 => 129,
            _ => 33,
        };
        let mut per_axis: usize = match dim {
            1 => 65,
            2 => 17,
            _ => 9,
        };
        // probe points at cell centres of the coarsest table, never on nodes
        let probes: Vec<Vec<T>> = (0..24)
            .map(|k| {
                (0..dim)
                    .map(|a| {
                        let s = T::c(((k * 7 + a * 13) % 24) as f64 / 24.0 + 0.0173);
                        lo[a] + (hi[a] - lo[a]) * s
                    })
                    .collect()
            })
            .collect();
        let exact: Vec<T> = probes
            .par_iter()
            .map(|u| phi(potential, well, u, params))
            .collect::<Result<_>>()?;
        loop {
            let total = per_axis.pow(dim as u32);
            let nodes: Vec<Vec<T>> = (0..total)
                .map(|flat| {
                    let mut rem = flat;
                    let mut u = vec![T::zero(); dim];
                    for a in (0..dim).rev() {
                        let k = rem % per_axis;
                        rem /= per_axis;
                        u[a] = lo[a]
                            + (hi[a] - lo[a]) * T::from_usize_lossy(k)
                                / T::from_usize_lossy(per_axis - 1);
                    }
                    u
                })
                .collect();
            let values: Vec<T> = nodes
                .par_iter()
                .map(|u| phi(potential, well, u, params))
                .collect::<Result<_>>()?;
            let mut table = Self {
                well,
                lo: lo.clone(),
                hi: hi.clone(),
                per_axis,
                values,
                max_error: T::zero(),
            };
            table.max_error = probes
                .iter()
                .zip(&exact)
                .map(|(u, &e)| (table.interpolate(u) - e).abs())
                .fold(T::zero(), T::max);
            if table.max_error <= tol || per_axis >= max_per_axis {
                return Ok(table);
            }
            per_axis = 2 * per_axis - 1;
        }
    }

    pub fn well(&self) -> usize {
        self.well
    }

    pub fn contains(&self, u: &[T]) -> bool {
        u.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(&x, (&l, &h))| x >= l && x <= h)
    }

    pub fn interpolate(&self, u: &[T]) -> T {
        let dim = self.lo.len();
        let m = self.per_axis - 1;
        let mut base = [0usize; 3];
        let mut frac = [T::zero(); 3];
        for a in 0..dim {
            let s = ((u[a] - self.lo[a]) / (self.hi[a] - self.lo[a]) * T::from_usize_lossy(m))
                .max(T::zero())
                .min(T::from_usize_lossy(m));
            let k = s.floor().to_usize().unwrap_or(0).min(m - 1);
            base[a] = k;
            frac[a] = s - T::from_usize_lossy(k);
        }
        let mut acc = T::zero();
        for corner in 0..(1usize << dim) {
            let mut w = T::one();
            let mut flat = 0;
            for a in 0..dim {
                let bit = (corner >> (dim - 1 - a)) & 1;
                w *= if bit == 1 { frac[a] } else { T::one() - frac[a] };
                flat = flat * self.per_axis + base[a] + bit;
            }
            if w != T::zero() {
                acc += w * self.values[flat];
            }
        }
        acc
    }
}

/// `psi_i = phi_i(u)` per cell through an interpolation table covering the field's range.
pub fn psi_field<T: Scalar>(
    f: &PhaseField<T>,
    potential: &MultiwellPotential<T>,
    well: usize,
    params: GeodesicParams,
    table: Option<&PsiTable<T>>,
) -> Result<(Vec<T>, PsiTable<T>)> {
    if well >= potential.num_phases() {
        return Err(Error::Precondition(format!("well index {well} out of range")));
    }
    let dim = potential.dim();
    let mut lo = vec![T::infinity(); dim];
    let mut hi = vec![T::neg_infinity(); dim];
    for cell in 0..f.grid().cells() {
        for (a, &x) in f.at(cell).iter().enumerate() {
            lo[a] = lo[a].min(x);
            hi[a] = hi[a].max(x);
        }
    }
    let reuse = table.filter(|t| t.well == well && t.contains(&lo) && t.contains(&hi));
    let table = match reuse {
        Some(t) => t.clone(),
        None => {
            // pad so the wells and small excursions stay inside
            for w in potential.wells() {
                for a in 0..dim {
                    lo[a] = lo[a].min(w[a]);
                    hi[a] = hi[a].max(w[a]);
                }
            }
            for a in 0..dim {
                let pad = T::c(0.05) * (hi[a] - lo[a]).max(T::c(1e-3));
                lo[a] -= pad;
                hi[a] += pad;
            }
            let sigma_max = (0..potential.num_phases())
                .filter(|&j| j != well)
                .map(|j| phi(potential, well, potential.well(j), params))
                .collect::<Result<Vec<T>>>()?
                .into_iter()
                .fold(T::zero(), T::max);
            PsiTable::build(potential, well, lo, hi, params, T::c(1e-4) * sigma_max)?
        }
    };
    let out = (0..f.grid().cells())
        .map(|cell| table.interpolate(f.at(cell)))
        .collect();
    Ok((out, table))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> TorusGrid<f64> {
        TorusGrid::new(2, n, 1.0).unwrap()
    }

    #[test]
    fn grid_indexing_wraps() {
        let g = grid(8);
        assert_eq!(g.flatten(&[-1, 0]), 7 * 8);
        assert_eq!(g.flatten(&[8, 9]), 1);
        assert_eq!(g.unflatten(g.flatten(&[3, 5])), [3, 5, 0]);
        assert!(TorusGrid::new(2, 12, 1.0).is_err());
        assert!(TorusGrid::new(4, 8, 1.0).is_err());
    }

    #[test]
    fn constant_field_has_zero_derivatives() {
        let g = grid(16);
        let s = Spectral::new(&g);
        let f = vec![0.7; g.cells()];
        assert!(s.laplacian(&f).iter().all(|x| x.abs() < 1e-14));
        for d in s.gradient(&f) {
            assert!(d.iter().all(|x| x.abs() < 1e-14));
        }
    }

    #[test]
    fn sine_mode_is_an_eigenfunction() {
        let g = grid(32);
        let s = Spectral::new(&g);
        let two_pi = 2.0 * std::f64::consts::PI;
        let f: Vec<f64> = (0..g.cells()).map(|c| (two_pi * g.position(c)[0]).sin()).collect();
        let lap = s.laplacian(&f);
        let dx = s.derivative(&f, 0);
        let dy = s.derivative(&f, 1);
        for c in 0..g.cells() {
            let x = g.position(c)[0];
            assert!((lap[c] + two_pi * two_pi * f[c]).abs() < 1e-10);
            assert!((dx[c] - two_pi * (two_pi * x).cos()).abs() < 1e-10);
            assert!(dy[c].abs() < 1e-10);
        }
    }

    #[test]
    fn well_field_has_zero_energy() {
        let g = grid(16);
        let s = Spectral::new(&g);
        let p = MultiwellPotential::<f64>::symmetric_three_well();
        let f = PhaseField::constant(g, p.well(1), 0.05).unwrap();
        let e = energy(&f, &p, &s, None).unwrap();
        assert_eq!(e.total, 0.0);
        assert_eq!(e.modica_mortola, 0.0);
    }

    #[test]
    fn negative_weight_rejected() {
        let g = grid(8);
        let s = Spectral::new(&g);
        let p = MultiwellPotential::<f64>::scalar_double_well();
        let f = PhaseField::constant(g.clone(), &[0.2], 0.05).unwrap();
        let mut w = vec![1.0; g.cells()];
        w[3] = -0.1;
        assert!(matches!(energy(&f, &p, &s, Some(&w)), Err(Error::Precondition(_))));
    }

    #[test]
    fn field_rejects_nan() {
        let g = grid(4);
        let mut v = vec![0.0; 16];
        v[5] = f64::NAN;
        assert!(matches!(PhaseField::new(g, 1, v, 0.1), Err(Error::Domain(_))));
    }

    #[test]
    fn three_dimensional_transform_round_trips() {
        let g = TorusGrid::<f64>::new(3, 8, 2.0).unwrap();
        let s = Spectral::new(&g);
        let f: Vec<f64> = (0..g.cells()).map(|c| ((c * 37) % 11) as f64 - 5.0).collect();
        let back = s.from_spectrum(s.to_spectrum(&f));
        for (a, b) in f.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
        let k = std::f64::consts::PI; // 2 pi / L with L = 2
        let z: Vec<f64> = (0..g.cells()).map(|c| (k * g.position(c)[2]).cos()).collect();
        let lap = s.laplacian(&z);
        for (a, b) in lap.iter().zip(&z) {
            assert!((a + k * k * b).abs() < 1e-10);
        }
    }
}
