//! Fourier calculus on the periodic grid.

use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::TorusGrid;
use crate::scalar::Scalar;

/// FFT plans and wavenumber tables for one grid.
#[derive(Clone)]
pub struct Spectral<T: Scalar> {
    grid: TorusGrid<T>,
    forward: Arc<dyn Fft<T>>,
    inverse: Arc<dyn Fft<T>>,
    /// derivative wavenumber per index, zero at Nyquist
    kd: Vec<T>,
    /// full wavenumber per index, used for smoothing kernels
    kfull: Vec<T>,
}

impl<T: Scalar> std::fmt::Debug for Spectral<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Spectral").field("grid", &self.grid).finish()
    }
}

impl<T: Scalar> Spectral<T> {
    pub fn new(grid: &TorusGrid<T>) -> Self {
        let n = grid.n();
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let base = T::c(2.0) * T::PI() / grid.length();
        let mut kd = vec![T::zero(); n];
        let mut kfull = vec![T::zero(); n];
        for (j, (d, f)) in kd.iter_mut().zip(kfull.iter_mut()).enumerate() {
            let signed = if j <= n / 2 { j as f64 } else { j as f64 - n as f64 };
            *f = base * T::c(signed.abs());
            if 2 * j != n {
                *d = base * T::c(signed);
            }
        }
        Self {
            grid: grid.clone(),
            forward,
            inverse,
            kd,
            kfull,
        }
    }

    pub fn grid(&self) -> &TorusGrid<T> {
        &self.grid
    }

    /// Derivative wavenumber of index `j` along any axis (zero for the Nyquist index).
    pub fn derivative_wavenumber(&self, j: usize) -> T {
        self.kd[j]
    }

    fn transform(&self, data: &mut [Complex<T>], plan: &Arc<dyn Fft<T>>) {
        let n = self.grid.n();
        let d = self.grid.dim();
        let total = data.len();
        let batch = |buf: &mut [Complex<T>]| {
            let mut scratch = vec![Complex::new(T::zero(), T::zero()); plan.get_inplace_scratch_len()];
            plan.process_with_scratch(buf, &mut scratch);
        };
        // contiguous last axis, batched per block of lines
        data.par_chunks_mut(n * n).for_each(|block| batch(block));
        let mut tmp = vec![Complex::new(T::zero(), T::zero()); total];
        for axis in 0..d - 1 {
            let stride = n.pow((d - 1 - axis) as u32);
            let block = stride * n;
            // gather: line (b, o) holds data[b*block + o + k*stride]
            tmp.par_chunks_mut(block).zip(data.par_chunks(block)).for_each(|(t, src)| {
                for o in 0..stride {
                    for k in 0..n {
                        t[o * n + k] = src[o + k * stride];
                    }
                }
                batch(t);
            });
            data.par_chunks_mut(block).zip(tmp.par_chunks(block)).for_each(|(dst, t)| {
                for o in 0..stride {
                    for k in 0..n {
                        dst[o + k * stride] = t[o * n + k];
                    }
                }
            });
        }
    }

    pub fn forward(&self, data: &mut [Complex<T>]) {
        self.transform(data, &self.forward);
    }

    /// Inverse transform including the `1/n^d` normalization.
    pub fn inverse(&self, data: &mut [Complex<T>]) {
        self.transform(data, &self.inverse);
        let scale = T::one() / T::from_usize_lossy(data.len());
        data.iter_mut().for_each(|z| *z = *z * scale);
    }

    pub fn to_spectrum(&self, f: &[T]) -> Vec<Complex<T>> {
        let mut buf: Vec<Complex<T>> = f.iter().map(|&x| Complex::new(x, T::zero())).collect();
        self.forward(&mut buf);
        buf
    }

    pub fn from_spectrum(&self, mut buf: Vec<Complex<T>>) -> Vec<T> {
        self.inverse(&mut buf);
        buf.into_iter().map(|z| z.re).collect()
    }

    /// Apply a real multiplier depending on the per-axis index tuple.
    fn apply(&self, buf: &mut [Complex<T>], symbol: impl Fn(&[usize]) -> T + Sync) {
        let n = self.grid.n();
        let d = self.grid.dim();
        buf.par_chunks_mut(n).enumerate().for_each(|(line, chunk)| {
            let mut idx = [0usize; 3];
            let mut rem = line;
            for a in (0..d - 1).rev() {
                idx[a] = rem % n;
                rem /= n;
            }
            for (j, z) in chunk.iter_mut().enumerate() {
                idx[d - 1] = j;
                *z = *z * symbol(&idx[..d]);
            }
        });
    }

    /// `-sum_a kd_a^2`, the symbol of the Laplacian (exactly div of grad).
    pub fn laplacian_symbol(&self, idx: &[usize]) -> T {
        -idx.iter().map(|&j| self.kd[j] * self.kd[j]).sum::<T>()
    }

    pub fn laplacian(&self, f: &[T]) -> Vec<T> {
        let mut buf = self.to_spectrum(f);
        self.apply(&mut buf, |idx| self.laplacian_symbol(idx));
        self.from_spectrum(buf)
    }

    /// Partial derivative along `axis`.
    pub fn derivative(&self, f: &[T], axis: usize) -> Vec<T> {
        let spec = self.to_spectrum(f);
        self.derivative_from_spectrum(&spec, axis)
    }

    pub fn derivative_from_spectrum(&self, spec: &[Complex<T>], axis: usize) -> Vec<T> {
        let n = self.grid.n();
        let d = self.grid.dim();
        let stride = n.pow((d - 1 - axis) as u32);
        let buf: Vec<Complex<T>> = spec
            .par_iter()
            .enumerate()
            .map(|(flat, z)| {
                let j = (flat / stride) % n;
                Complex::new(-z.im, z.re) * self.kd[j]
            })
            .collect();
        self.from_spectrum(buf)
    }

    /// All partial derivatives, `out[axis][cell]`.
    pub fn gradient(&self, f: &[T]) -> Vec<Vec<T>> {
        let spec = self.to_spectrum(f);
        (0..self.grid.dim())
            .map(|a| self.derivative_from_spectrum(&spec, a))
            .collect()
    }

    /// Solve `(a - Delta) x = rhs` for `a > 0`.
    pub fn solve_shifted(&self, rhs: &[T], a: T) -> Vec<T> {
        let mut buf = self.to_spectrum(rhs);
        self.apply(&mut buf, |idx| T::one() / (a - self.laplacian_symbol(idx)));
        self.from_spectrum(buf)
    }

    /// Convolution with a periodic Gaussian of standard deviation `std` (length units).
    pub fn gaussian(&self, f: &[T], std: T) -> Vec<T> {
        let mut buf = self.to_spectrum(f);
        let s2 = std * std * T::c(0.5);
        self.apply(&mut buf, |idx| {
            let k2: T = idx.iter().map(|&j| self.kfull[j] * self.kfull[j]).sum();
            (-k2 * s2).exp()
        });
        self.from_spectrum(buf)
    }
}
