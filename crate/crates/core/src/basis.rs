//! Smooth periodic test vector fields and the weighted least-squares fits built on them.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// A differentiable vector field on the torus, zero padded to three components.
pub trait TestField: Sync {
    fn value(&self, x: &[f64]) -> [f64; 3];
    /// `jac[a][b] = d xi_a / d x_b`.
    fn jacobian(&self, x: &[f64]) -> [[f64; 3]; 3];
}

/// Test field given by two closures.
pub struct FnField<F, G> {
    value: F,
    jacobian: G,
}

impl<F, G> FnField<F, G>
where
    F: Fn(&[f64]) -> [f64; 3] + Sync,
    G: Fn(&[f64]) -> [[f64; 3]; 3] + Sync,
{
    pub fn new(value: F, jacobian: G) -> Self {
        Self { value, jacobian }
    }
}

impl<F, G> TestField for FnField<F, G>
where
    F: Fn(&[f64]) -> [f64; 3] + Sync,
    G: Fn(&[f64]) -> [[f64; 3]; 3] + Sync,
{
    fn value(&self, x: &[f64]) -> [f64; 3] {
        (self.value)(x)
    }

    fn jacobian(&self, x: &[f64]) -> [[f64; 3]; 3] {
        (self.jacobian)(x)
    }
}

/// `<d xi, Id - p (x) p>`, the tangential divergence for unit orientation `p`.
pub fn tangential_divergence(jac: &[[f64; 3]; 3], p: &[f64; 3]) -> f64 {
    let mut trace = 0.0;
    let mut quad = 0.0;
    for a in 0..3 {
        trace += jac[a][a];
        for b in 0..3 {
            quad += p[a] * jac[a][b] * p[b];
        }
    }
    trace - quad
}

/// Scalar Fourier mode `cos(2 pi k.x / L)` or `sin(2 pi k.x / L)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FourierMode {
    pub k: [i64; 3],
    pub cosine: bool,
}

impl FourierMode {
    /// Value and gradient at `x`.
    #[inline]
    pub fn eval(&self, x: &[f64], length: f64) -> (f64, [f64; 3]) {
        let w = std::f64::consts::TAU / length;
        let phase: f64 = x.iter().zip(&self.k).map(|(&xi, &ki)| ki as f64 * xi).sum::<f64>() * w;
        let (s, c) = phase.sin_cos();
        let (v, dv) = if self.cosine { (c, -s) } else { (s, c) };
        let mut g = [0.0; 3];
        for (ga, &ka) in g.iter_mut().zip(&self.k) {
            *ga = dv * w * ka as f64;
        }
        (v, g)
    }
}

/// Tensor Fourier modes with `max_a |k_a| <= K`, each paired with every coordinate direction.
/// Field index `a * modes + m` is `e_a * mode_m`.
#[derive(Clone, Debug)]
pub struct FourierBasis {
    dim: usize,
    length: f64,
    max_mode: usize,
    modes: Vec<FourierMode>,
}

impl FourierBasis {
    pub fn new(dim: usize, length: f64, max_mode: usize) -> Result<Self> {
        if !(1..=3).contains(&dim) || !(length > 0.0) {
            return Err(Error::Precondition("basis needs 1 <= d <= 3 and a positive length".into()));
        }
        let k = max_mode as i64;
        let mut modes = vec![FourierMode { k: [0; 3], cosine: true }];
        let span = 2 * k + 1;
        let total = span.pow(dim as u32);
        for flat in 0..total {
            let mut rem = flat;
            let mut kv = [0i64; 3];
            for a in (0..dim).rev() {
                kv[a] = rem % span - k;
                rem /= span;
            }
            // one representative of each +-k pair
            let first = kv.iter().find(|&&c| c != 0);
            if first.is_some_and(|&c| c > 0) {
                modes.push(FourierMode { k: kv, cosine: true });
                modes.push(FourierMode { k: kv, cosine: false });
            }
        }
        // nested ordering: lower max-norm first
        modes.sort_by_key(|m| m.k.iter().map(|c| c.abs()).max().unwrap_or(0));
        Ok(Self { dim, length, max_mode, modes })
    }

    /// Default resolution for an `n`-cell grid: `min(n/8, 8)` in 2D, `min(n/8, 3)` in 3D.
    pub fn for_grid(dim: usize, n: usize, length: f64) -> Result<Self> {
        let cap = if dim >= 3 { 3 } else { 8 };
        Self::new(dim, length, (n / 8).clamp(1, cap))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn max_mode(&self) -> usize {
        self.max_mode
    }

    pub fn modes(&self) -> &[FourierMode] {
        &self.modes
    }

    /// Number of vector fields.
    pub fn len(&self) -> usize {
        self.modes.len() * self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    /// The vector field with index `idx`.
    pub fn field(&self, idx: usize) -> ModeField<'_> {
        ModeField {
            basis: self,
            direction: idx / self.modes.len(),
            mode: self.modes[idx % self.modes.len()],
        }
    }
}

/// One basis vector field `e_a * mode`.
pub struct ModeField<'a> {
    basis: &'a FourierBasis,
    pub direction: usize,
    pub mode: FourierMode,
}

impl TestField for ModeField<'_> {
    fn value(&self, x: &[f64]) -> [f64; 3] {
        let mut out = [0.0; 3];
        out[self.direction] = self.mode.eval(x, self.basis.length).0;
        out
    }

    fn jacobian(&self, x: &[f64]) -> [[f64; 3]; 3] {
        let mut out = [[0.0; 3]; 3];
        out[self.direction] = self.mode.eval(x, self.basis.length).1;
        out
    }
}

/// Weighted point sample `(x, weight, unit orientation)`.
#[derive(Clone, Copy, Debug)]
pub struct Sample {
    pub x: [f64; 3],
    pub weight: f64,
    pub orientation: [f64; 3],
}

/// Least-squares vector field in the span of a basis.
#[derive(Clone, Debug)]
pub struct FieldFit {
    /// `coefficients[a][m]` multiplies `e_a * mode_m`.
    pub coefficients: Vec<Vec<f64>>,
    pub rank: usize,
    pub size: usize,
    /// Ratio of the largest to the smallest retained Gram eigenvalue.
    pub condition: f64,
    /// `|G c - b| / |b|` over the normal equations, `|b|` floored at round-off.
    pub relative_residual: f64,
    /// The fitted field at the Gram points.
    pub values: Vec<[f64; 3]>,
}

impl FieldFit {
    pub fn eval(&self, basis: &FourierBasis, x: &[f64]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (m, mode) in basis.modes.iter().enumerate() {
            let v = mode.eval(x, basis.length).0;
            for (a, o) in out.iter_mut().enumerate().take(basis.dim) {
                *o += self.coefficients[a][m] * v;
            }
        }
        out
    }
}

/// `b[a][m] = -sum_s weight * <d(e_a mode_m), Id - p (x) p>`, the negated first variation
/// of each basis field against the sampled measure.
pub fn first_variation_rhs(basis: &FourierBasis, samples: &[Sample]) -> Vec<Vec<f64>> {
    let m = basis.modes.len();
    let d = basis.dim;
    let partial: Vec<Vec<f64>> = samples
        .par_chunks(512)
        .map(|chunk| {
            let mut acc = vec![0.0; d * m];
            for s in chunk {
                let p = &s.orientation;
                for (k, mode) in basis.modes.iter().enumerate() {
                    let (_, g) = mode.eval(&s.x[..d], basis.length);
                    let pg: f64 = (0..d).map(|b| p[b] * g[b]).sum();
                    for a in 0..d {
                        acc[a * m + k] -= s.weight * (g[a] - p[a] * pg);
                    }
                }
            }
            acc
        })
        .collect();
    let mut out = vec![vec![0.0; m]; d];
    for acc in partial {
        for a in 0..d {
            for k in 0..m {
                out[a][k] += acc[a * m + k];
            }
        }
    }
    out
}

/// Minimal-norm solution of `sum_s w <H, xi> = b(xi)` for `H` in the span of the basis,
/// with the Gram matrix taken over `points` (orientation ignored).
pub fn fit_field(basis: &FourierBasis, points: &[Sample], rhs: &[Vec<f64>]) -> Result<FieldFit> {
    fit_field_with_cutoff(basis, points, rhs, DEFAULT_CUTOFF)
}

/// Relative eigenvalue cutoff of the Gram pseudo-inverse.
pub const DEFAULT_CUTOFF: f64 = 1e-3;

/// [`fit_field`] discarding Gram eigenvalues below `cutoff` times the largest.
pub fn fit_field_with_cutoff(
    basis: &FourierBasis,
    points: &[Sample],
    rhs: &[Vec<f64>],
    cutoff: f64,
) -> Result<FieldFit> {
    let m = basis.modes.len();
    let d = basis.dim;
    let size = m * d;
    if points.is_empty() || points.iter().all(|s| s.weight <= 0.0) {
        return Err(Error::RankDeficient { rank: 0, size, condition: f64::INFINITY });
    }
    let mut phi = DMatrix::<f64>::zeros(points.len(), m);
    // round-off floor for the residual: first variations without cancellation
    let mut gross = 0.0;
    for (k, mode) in basis.modes.iter().enumerate() {
        let mut g_k = 0.0;
        for (r, s) in points.iter().enumerate() {
            let (v, g) = mode.eval(&s.x[..d], basis.length);
            phi[(r, k)] = v;
            g_k += s.weight * g.iter().map(|x| x.abs()).sum::<f64>();
        }
        gross += g_k * g_k;
    }
    let floor = 1e-10 * gross.sqrt();
    let weighted = DMatrix::<f64>::from_fn(points.len(), m, |r, k| phi[(r, k)] * points[r].weight);
    let gram = phi.transpose() * &weighted;
    let eig = SymmetricEigen::new(gram.clone());
    let top = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let cutoff = top * cutoff;
    let kept: Vec<usize> = (0..m).filter(|&k| eig.eigenvalues[k] > cutoff).collect();
    let rank = kept.len();
    if rank == 0 {
        return Err(Error::RankDeficient { rank: 0, size, condition: f64::INFINITY });
    }
    let low = kept.iter().map(|&k| eig.eigenvalues[k]).fold(f64::INFINITY, f64::min);
    let mut coefficients = Vec::with_capacity(d);
    let mut res_num = 0.0;
    let mut res_den = 0.0;
    for b_a in rhs.iter().take(d) {
        let b = DVector::from_column_slice(b_a);
        let qb = eig.eigenvectors.transpose() * &b;
        let mut y = DVector::<f64>::zeros(m);
        for &k in &kept {
            y[k] = qb[k] / eig.eigenvalues[k];
        }
        let c = &eig.eigenvectors * y;
        let r = &gram * &c - &b;
        res_num += r.norm_squared();
        res_den += b.norm_squared();
        coefficients.push(c.iter().cloned().collect::<Vec<f64>>());
    }
    let values = (0..points.len())
        .map(|r| {
            let mut out = [0.0; 3];
            for (a, o) in out.iter_mut().enumerate().take(d) {
                *o = (0..m).map(|k| coefficients[a][k] * phi[(r, k)]).sum();
            }
            out
        })
        .collect();
    Ok(FieldFit {
        coefficients,
        rank: rank * d,
        size,
        condition: top / low,
        relative_residual: res_num.sqrt() / res_den.sqrt().max(floor).max(f64::MIN_POSITIVE),
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_count_and_nesting() {
        let b = FourierBasis::new(2, 1.0, 2).unwrap();
        assert_eq!(b.modes().len(), 25);
        assert_eq!(b.len(), 50);
        let small = FourierBasis::new(2, 1.0, 1).unwrap();
        assert_eq!(&b.modes()[..small.modes().len()], small.modes());
    }

    #[test]
    fn mode_gradient_matches_differences() {
        let b = FourierBasis::new(2, 1.3, 2).unwrap();
        let x = [0.31, 0.77];
        for mode in b.modes() {
            let (_, g) = mode.eval(&x, 1.3);
            for a in 0..2 {
                let mut xp = x;
                let mut xm = x;
                xp[a] += 1e-6;
                xm[a] -= 1e-6;
                let fd = (mode.eval(&xp, 1.3).0 - mode.eval(&xm, 1.3).0) / 2e-6;
                assert!((fd - g[a]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn fit_recovers_field_in_span() {
        // samples on a line x_2 = 0.2 with weights rho; target H = (cos 2 pi x, 0)
        let b = FourierBasis::new(2, 1.0, 2).unwrap();
        let n = 64;
        let pts: Vec<Sample> = (0..n)
            .map(|i| Sample { x: [i as f64 / n as f64, 0.2, 0.0], weight: 1.0 / n as f64, orientation: [0.0, 1.0, 0.0] })
            .collect();
        let target = |x: &[f64]| (std::f64::consts::TAU * x[0]).cos();
        let m = b.modes().len();
        let mut rhs = vec![vec![0.0; m]; 2];
        for (k, mode) in b.modes().iter().enumerate() {
            rhs[0][k] = pts.iter().map(|s| s.weight * target(&s.x) * mode.eval(&s.x[..2], 1.0).0).sum();
        }
        let fit = fit_field(&b, &pts, &rhs).unwrap();
        for (s, v) in pts.iter().zip(&fit.values) {
            assert!((v[0] - target(&s.x)).abs() < 1e-9);
            assert!(v[1].abs() < 1e-9);
        }
        assert!(fit.rank < fit.size);
    }

    #[test]
    fn empty_samples_are_rank_deficient() {
        let b = FourierBasis::new(2, 1.0, 1).unwrap();
        assert!(matches!(fit_field(&b, &[], &[vec![], vec![]]), Err(Error::RankDeficient { .. })));
    }
}
