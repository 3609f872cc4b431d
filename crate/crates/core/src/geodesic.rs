//! Geodesic distance in the degenerate metric `sqrt(2W)|du|`, surface tensions and the
//! well-distance functions `phi_i`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::potential::MultiwellPotential;
use crate::scalar::{dist2, dot, norm, Scalar};

/// Polyline `gamma_0..gamma_M` with its trapezoidal action.
#[derive(Clone, Debug)]
pub struct GeodesicPath<T> {
    pub nodes: Vec<Vec<T>>,
    pub action: T,
    pub converged: bool,
    pub sweeps: usize,
}

impl<T: Scalar> GeodesicPath<T> {
    pub fn start(&self) -> &[T] {
        &self.nodes[0]
    }

    pub fn end(&self) -> &[T] {
        self.nodes.last().expect("nonempty path")
    }

    /// Cumulative Euclidean arclength at every node.
    pub fn arclength(&self) -> Vec<T> {
        cumulative_length(&self.nodes)
    }
}

#[inline]
fn density<T: Scalar>(potential: &MultiwellPotential<T>, u: &[T]) -> T {
    (T::c(2.0) * potential.value(u).max(T::zero())).sqrt()
}

/// Trapezoidal action `sum_k (f_k + f_{k+1})/2 |gamma_{k+1} - gamma_k|`, `f = sqrt(2W)`.
pub fn path_action<T: Scalar>(potential: &MultiwellPotential<T>, nodes: &[Vec<T>]) -> Result<T> {
    if nodes.len() < 2 {
        return Err(Error::Precondition("a path needs at least two nodes".into()));
    }
    if nodes.iter().any(|n| n.len() != potential.dim()) {
        return Err(Error::Domain("path node has the wrong dimension".into()));
    }
    Ok(action_unchecked(potential, nodes))
}

fn action_unchecked<T: Scalar>(potential: &MultiwellPotential<T>, nodes: &[Vec<T>]) -> T {
    let f: Vec<T> = nodes.iter().map(|u| density(potential, u)).collect();
    nodes
        .windows(2)
        .zip(f.windows(2))
        .map(|(seg, fv)| T::c(0.5) * (fv[0] + fv[1]) * dist2(&seg[0], &seg[1]).sqrt())
        .sum()
}

fn cumulative_length<T: Scalar>(nodes: &[Vec<T>]) -> Vec<T> {
    let mut s = Vec::with_capacity(nodes.len());
    let mut acc = T::zero();
    s.push(acc);
    for seg in nodes.windows(2) {
        acc += dist2(&seg[0], &seg[1]).sqrt();
        s.push(acc);
    }
    s
}

/// Redistribute nodes uniformly in arclength along the current polyline.
fn reparametrize<T: Scalar>(nodes: &[Vec<T>]) -> Vec<Vec<T>> {
    let m = nodes.len() - 1;
    let s = cumulative_length(nodes);
    let total = s[m];
    if total <= T::zero() {
        return nodes.to_vec();
    }
    let mut out = Vec::with_capacity(m + 1);
    out.push(nodes[0].clone());
    let mut seg = 0;
    for k in 1..m {
        let target = total * T::from_usize_lossy(k) / T::from_usize_lossy(m);
        while seg + 1 < m && s[seg + 1] < target {
            seg += 1;
        }
        let len = s[seg + 1] - s[seg];
        let w = if len > T::zero() {
            ((target - s[seg]) / len).max(T::zero()).min(T::one())
        } else {
            T::zero()
        };
        out.push(
            nodes[seg]
                .iter()
                .zip(&nodes[seg + 1])
                .map(|(&a, &b)| a + w * (b - a))
                .collect(),
        );
    }
    out.push(nodes[m].clone());
    out
}

/// Gradient of the terms of the trapezoidal action that involve the middle node.
fn node_gradient<T: Scalar>(
    potential: &MultiwellPotential<T>,
    prev: &[T],
    cur: &[T],
    next: &[T],
    out: &mut [f64],
) {
    let n = cur.len();
    let (fp, fc, fn_) = (
        density(potential, prev),
        density(potential, cur),
        density(potential, next),
    );
    let ll = dist2(prev, cur).sqrt().max(T::min_positive_value());
    let lr = dist2(cur, next).sqrt().max(T::min_positive_value());
    let mut gw = [T::zero(); 8];
    let mut gv;
    let gw: &mut [T] = if n <= 8 {
        &mut gw[..n]
    } else {
        gv = vec![T::zero(); n];
        &mut gv
    };
    potential.gradient_into(cur, gw);
    let half_len = T::c(0.5) * (ll + lr);
    let inv_f = T::one() / fc.max(T::epsilon());
    let wl = T::c(0.5) * (fp + fc) / ll;
    let wr = T::c(0.5) * (fc + fn_) / lr;
    for c in 0..n {
        out[c] = (half_len * gw[c] * inv_f + wl * (cur[c] - prev[c]) - wr * (next[c] - cur[c]))
            .to_f64_lossy();
    }
}

type Block = nalgebra::DMatrix<f64>;

/// Solve a symmetric block tridiagonal system; `None` when it is not positive definite.
fn block_tridiagonal_solve(diag: &[Block], upper: &[Block], rhs: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let k = diag.len();
    let mut dk: Vec<nalgebra::Cholesky<f64, nalgebra::Dyn>> = Vec::with_capacity(k);
    let mut y: Vec<nalgebra::DVector<f64>> = Vec::with_capacity(k);
    for i in 0..k {
        let mut d = diag[i].clone();
        let mut r = nalgebra::DVector::from_column_slice(&rhs[i]);
        if i > 0 {
            // L = C_{i-1} D_{i-1}^{-1} with C = B^T
            let c = upper[i - 1].transpose();
            let dinv_b = dk[i - 1].solve(&upper[i - 1]);
            d -= &c * dinv_b;
            r -= &c * dk[i - 1].solve(&y[i - 1]);
        }
        dk.push(nalgebra::Cholesky::new(d)?);
        y.push(r);
    }
    let mut x = vec![nalgebra::DVector::zeros(0); k];
    for i in (0..k).rev() {
        let mut r = y[i].clone();
        if i + 1 < k {
            r -= &upper[i] * &x[i + 1];
        }
        x[i] = dk[i].solve(&r);
    }
    Some(x.into_iter().map(|v| v.as_slice().to_vec()).collect())
}

/// Relax a polyline with fixed endpoints: damped Newton steps on the node components normal
/// to the path, each followed by uniform arclength reparametrization.
pub fn relax_path<T: Scalar>(
    potential: &MultiwellPotential<T>,
    initial: Vec<Vec<T>>,
    budget: usize,
) -> Result<GeodesicPath<T>> {
    if initial.len() < 2 {
        return Err(Error::Precondition("a path needs at least two nodes".into()));
    }
    let m = initial.len() - 1;
    let n = potential.dim();
    let mut nodes = reparametrize(&initial);
    let mut action = action_unchecked(potential, &nodes);
    if !action.is_finite() {
        return Err(Error::Domain("initial path has non-finite action".into()));
    }
    let total_len = cumulative_length(&nodes)[m];
    if m < 2 || n < 2 || total_len <= T::zero() {
        // a reparametrized segment in one dimension is already optimal
        return Ok(GeodesicPath {
            nodes,
            action,
            converged: true,
            sweeps: 0,
        });
    }
    let interior = m - 1;
    let rel_tol = 1e-10f64.max(T::epsilon().to_f64_lossy() * 100.0);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut sweeps = 0;
    let mut g = vec![vec![0.0; n]; interior];
    let mut gp = vec![0.0; n];
    let mut gm = vec![0.0; n];
    while sweeps < budget {
        sweeps += 1;
        let seg = cumulative_length(&nodes)[m].to_f64_lossy() / m as f64;
        // tangents and projected gradient
        let tangents: Vec<Vec<f64>> = (1..m)
            .map(|k| {
                let t: Vec<f64> = (0..n)
                    .map(|c| (nodes[k + 1][c] - nodes[k - 1][c]).to_f64_lossy())
                    .collect();
                let tn = t.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
                t.iter().map(|x| x / tn).collect()
            })
            .collect();
        let project = |v: &mut [f64], t: &[f64]| {
            let p: f64 = v.iter().zip(t).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(t).for_each(|(a, b)| *a -= p * b);
        };
        for k in 1..m {
            node_gradient(potential, &nodes[k - 1], &nodes[k], &nodes[k + 1], &mut g[k - 1]);
            project(&mut g[k - 1], &tangents[k - 1]);
        }
        // Hessian blocks by central differences of the local gradients
        let h = 1e-5 * seg.max(1e-12);
        let mut diag: Vec<Block> = vec![Block::zeros(n, n); interior];
        let mut upper: Vec<Block> = vec![Block::zeros(n, n); interior.saturating_sub(1)];
        let mut x = nodes.clone();
        for k in 1..m {
            for c in 0..n {
                let orig = nodes[k][c];
                for (sgn, buf) in [(1.0, 0usize), (-1.0, 1usize)] {
                    x[k][c] = orig + T::c(sgn * h);
                    let out = if buf == 0 { &mut gp } else { &mut gm };
                    node_gradient(potential, &x[k - 1], &x[k], &x[k + 1], out);
                }
                for r in 0..n {
                    diag[k - 1][(r, c)] = (gp[r] - gm[r]) / (2.0 * h);
                }
                if k + 1 < m {
                    // effect of node k on the gradient at node k + 1
                    for (sgn, buf) in [(1.0, 0usize), (-1.0, 1usize)] {
                        x[k][c] = orig + T::c(sgn * h);
                        let out = if buf == 0 { &mut gp } else { &mut gm };
                        node_gradient(potential, &x[k], &x[k + 1], &x[k + 2], out);
                    }
                    for r in 0..n {
                        upper[k - 1][(c, r)] = (gp[r] - gm[r]) / (2.0 * h);
                    }
                }
                x[k][c] = orig;
            }
        }
        let proj_mat = |t: &[f64]| Block::identity(n, n) - Block::from_fn(n, n, |r, c| t[r] * t[c]);
        let projs: Vec<Block> = tangents.iter().map(|t| proj_mat(t)).collect();
        let mut scale = 0.0;
        for k in 0..interior {
            let sym = (&diag[k] + diag[k].transpose()) * 0.5;
            diag[k] = &projs[k] * sym * &projs[k];
            scale += diag[k].trace().abs();
        }
        for k in 0..interior.saturating_sub(1) {
            upper[k] = &projs[k] * &upper[k] * &projs[k + 1];
        }
        let scale = (scale / (interior * n) as f64).max(f64::MIN_POSITIVE);
        let gnorm = g.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
        if gnorm <= 1e-14 * scale * seg * (interior as f64).sqrt() {
            converged = true;
            break;
        }
        let rhs: Vec<Vec<f64>> = g.iter().map(|v| v.iter().map(|x| -x).collect()).collect();
        let mut accepted = false;
        for _ in 0..40 {
            let shifted: Vec<Block> = diag
                .iter()
                .zip(&tangents)
                .map(|(d, t)| {
                    d + Block::identity(n, n) * (lambda * scale)
                        + Block::from_fn(n, n, |r, c| scale * t[r] * t[c])
                })
                .collect();
            let Some(delta) = block_tridiagonal_solve(&shifted, &upper, &rhs) else {
                lambda *= 10.0;
                continue;
            };
            // predicted decrease of the local quadratic model
            let mut lin = 0.0;
            for (d, gk) in delta.iter().zip(&g) {
                lin += d.iter().zip(gk).map(|(a, b)| a * b).sum::<f64>();
            }
            // keep steps within a few segments
            let dmax = delta
                .iter()
                .map(|d| d.iter().map(|x| x * x).sum::<f64>().sqrt())
                .fold(0.0, f64::max);
            if dmax > 2.0 * seg {
                lambda *= 4.0;
                continue;
            }
            let mut trial = nodes.clone();
            for (k, d) in delta.iter().enumerate() {
                for c in 0..n {
                    trial[k + 1][c] += T::c(d[c]);
                }
            }
            let trial = reparametrize(&trial);
            let a = action_unchecked(potential, &trial);
            if a.is_finite() && a <= action {
                let predicted = -lin;
                nodes = trial;
                action = a;
                accepted = true;
                if predicted <= rel_tol * action.to_f64_lossy() && lambda <= 1e-2 {
                    converged = true;
                }
                lambda = (lambda / 3.0).max(1e-9);
                break;
            }
            lambda *= 4.0;
        }
        if !accepted {
            // no descent at working precision
            converged = true;
            break;
        }
        if converged {
            break;
        }
    }
    Ok(GeodesicPath {
        nodes,
        action,
        converged,
        sweeps,
    })
}

fn straight_path<T: Scalar>(u: &[T], v: &[T], m: usize) -> Vec<Vec<T>> {
    (0..=m)
        .map(|k| {
            let s = T::from_usize_lossy(k) / T::from_usize_lossy(m);
            u.iter().zip(v).map(|(&a, &b)| a + s * (b - a)).collect()
        })
        .collect()
}

fn broken_path<T: Scalar>(u: &[T], w: &[T], v: &[T], m: usize) -> Vec<Vec<T>> {
    let a = dist2(u, w).sqrt();
    let b = dist2(w, v).sqrt();
    let k = (T::from_usize_lossy(m) * a / (a + b))
        .round()
        .to_usize()
        .unwrap_or(m / 2)
        .clamp(1, m - 1);
    let mut nodes = straight_path(u, w, k);
    nodes.extend(straight_path(w, v, m - k).into_iter().skip(1));
    nodes
}

/// Locally minimal polyline from `u` to `v` with `m + 1` nodes; its action bounds `d(u, v)` above.
pub fn relax_geodesic<T: Scalar>(
    potential: &MultiwellPotential<T>,
    u: &[T],
    v: &[T],
    m: usize,
    budget: usize,
) -> Result<GeodesicPath<T>> {
    check_point(potential, u)?;
    check_point(potential, v)?;
    if m < 16 {
        return Err(Error::Precondition(format!("need at least 16 segments, got {m}")));
    }
    if u == v {
        return Ok(GeodesicPath {
            nodes: vec![u.to_vec(), v.to_vec()],
            action: T::zero(),
            converged: true,
            sweeps: 0,
        });
    }
    relax_path(potential, straight_path(u, v, m), budget)
}

fn check_point<T: Scalar>(potential: &MultiwellPotential<T>, u: &[T]) -> Result<()> {
    if u.len() != potential.dim() {
        return Err(Error::Domain(format!(
            "expected a point of R^{}, got length {}",
            potential.dim(),
            u.len()
        )));
    }
    if u.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain("non-finite point".into()));
    }
    Ok(())
}

/// Best of `restarts` relaxations from the straight line and transversally bent initial paths,
/// plus routes through the other wells when `restarts > 1`.
pub fn relax_with_restarts<T: Scalar>(
    potential: &MultiwellPotential<T>,
    u: &[T],
    v: &[T],
    m: usize,
    budget: usize,
    restarts: usize,
    seed: u64,
) -> Result<GeodesicPath<T>> {
    let mut best = relax_geodesic(potential, u, v, m, budget)?;
    let dim = potential.dim();
    if dim < 2 || u == v {
        return Ok(best);
    }
    let chord: Vec<T> = u.iter().zip(v).map(|(&a, &b)| b - a).collect();
    let chord_len = norm(&chord);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 1..restarts.max(1) {
        let mut w: Vec<T> = (0..dim).map(|_| T::c(rng.gen_range(-1.0..1.0))).collect();
        let p = dot(&w, &chord) / (chord_len * chord_len);
        for (wc, &cc) in w.iter_mut().zip(&chord) {
            *wc -= p * cc;
        }
        let wn = norm(&w);
        if wn <= T::c(1e-8) {
            continue;
        }
        let amp = T::c(rng.gen_range(-0.5..0.5)) * chord_len / wn;
        let mut init = straight_path(u, v, m);
        for (k, node) in init.iter_mut().enumerate() {
            let s = T::from_usize_lossy(k) / T::from_usize_lossy(m);
            let bump = (T::PI() * s).sin() * amp;
            for (x, &wc) in node.iter_mut().zip(&w) {
                *x += bump * wc;
            }
        }
        let cand = relax_path(potential, init, budget)?;
        if cand.action < best.action {
            best = cand;
        }
    }
    // routes through a third well, where the metric degenerates
    for k in 0..potential.num_phases() {
        let w = potential.well(k);
        if restarts <= 1 || w == u || w == v {
            continue;
        }
        let cand = relax_path(potential, broken_path(u, w, v, m), budget)?;
        if cand.action < best.action {
            best = cand;
        }
    }
    Ok(best)
}

/// Symmetric matrix of surface tensions `sigma_ij = d(alpha_i, alpha_j)`.
#[derive(Clone, Debug, Serialize)]
pub struct SurfaceTensionMatrix {
    pub sigma: Vec<Vec<f64>>,
    pub tolerance: f64,
    pub converged: bool,
    pub warnings: Vec<String>,
}

impl SurfaceTensionMatrix {
    /// Build from explicit values; checks the metric axioms.
    pub fn from_matrix(sigma: Vec<Vec<f64>>, tolerance: f64) -> Result<Self> {
        let p = sigma.len();
        if p < 2 || sigma.iter().any(|r| r.len() != p) {
            return Err(Error::Precondition("surface tensions must be a square matrix".into()));
        }
        let mut s = sigma;
        for i in 0..p {
            s[i][i] = 0.0;
            for j in 0..i {
                let m = s[i][j].min(s[j][i]);
                s[i][j] = m;
                s[j][i] = m;
                if !(m > 0.0) || !m.is_finite() {
                    return Err(Error::Metric(format!("sigma[{i}][{j}] = {m} is not positive")));
                }
            }
        }
        let out = Self {
            sigma: s,
            tolerance,
            converged: true,
            warnings: Vec::new(),
        };
        out.check_triangle()?;
        Ok(out)
    }

    /// Two phases with tension `s`.
    pub fn two_phase(s: f64) -> Self {
        Self::from_matrix(vec![vec![0.0, s], vec![s, 0.0]], 0.0).expect("positive tension")
    }

    /// `p` phases with identical tension `s`.
    pub fn uniform(p: usize, s: f64) -> Self {
        let sigma = (0..p)
            .map(|i| (0..p).map(|j| if i == j { 0.0 } else { s }).collect())
            .collect();
        Self::from_matrix(sigma, 0.0).expect("positive tension")
    }

    pub fn num_phases(&self) -> usize {
        self.sigma.len()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.sigma[i][j]
    }

    pub fn max(&self) -> f64 {
        self.sigma.iter().flatten().cloned().fold(0.0, f64::max)
    }

    /// Largest violation `sigma_ik - sigma_ij - sigma_jk` over all triples (negative when strict).
    pub fn triangle_excess(&self) -> f64 {
        let p = self.num_phases();
        let mut worst = f64::NEG_INFINITY;
        for i in 0..p {
            for j in 0..p {
                for k in 0..p {
                    if i != j && j != k && i != k {
                        worst = worst.max(self.sigma[i][k] - self.sigma[i][j] - self.sigma[j][k]);
                    }
                }
            }
        }
        worst
    }

    fn check_triangle(&self) -> Result<()> {
        let excess = self.triangle_excess();
        if excess > self.tolerance {
            return Err(Error::Metric(format!(
                "triangle inequality violated by {excess:e} (tolerance {:e})",
                self.tolerance
            )));
        }
        Ok(())
    }

    /// Rows as CSV lines.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for row in &self.sigma {
            let line: Vec<String> = row.iter().map(|x| format!("{x:.12e}")).collect();
            s.push_str(&line.join(","));
            s.push('\n');
        }
        s
    }
}

/// Parameters of the path relaxations behind every geodesic quantity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GeodesicParams {
    pub nodes: usize,
    pub budget: usize,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for GeodesicParams {
    fn default() -> Self {
        Self {
            nodes: 64,
            budget: 20_000,
            restarts: 4,
            seed: 7,
        }
    }
}

/// `sigma_ij` for all pairs of wells. Entries are computed independently and in parallel.
pub fn surface_tensions<T: Scalar>(
    potential: &MultiwellPotential<T>,
    params: GeodesicParams,
) -> Result<SurfaceTensionMatrix> {
    let p = potential.num_phases();
    let pairs: Vec<(usize, usize)> = (0..p)
        .flat_map(|i| (0..p).filter(move |&j| j != i).map(move |j| (i, j)))
        .collect();
    let results: Vec<Result<GeodesicPath<T>>> = pairs
        .par_iter()
        .map(|&(i, j)| {
            relax_with_restarts(
                potential,
                potential.well(i),
                potential.well(j),
                params.nodes,
                params.budget,
                params.restarts,
                params.seed ^ ((i * p + j) as u64).wrapping_mul(0x9e37_79b9),
            )
        })
        .collect();
    let mut sigma = vec![vec![0.0; p]; p];
    let mut warnings = Vec::new();
    for (&(i, j), r) in pairs.iter().zip(results) {
        let path = r?;
        if !path.converged {
            warnings.push(format!("path {i}->{j} not converged after {} sweeps", path.sweeps));
        }
        sigma[i][j] = path.action.to_f64_lossy();
    }
    let smax = sigma.iter().flatten().cloned().fold(0.0, f64::max);
    // quadrature error of a uniform polyline is O(m^-2)
    let tolerance = smax * (1.0 / (params.nodes as f64).powi(2)).max(1e-6);
    let mut out = SurfaceTensionMatrix::from_matrix(sigma, tolerance)?;
    out.converged = warnings.is_empty();
    out.warnings = warnings;
    Ok(out)
}

/// `phi_i(u) = d(alpha_i, u)`; `i` is zero based.
pub fn phi<T: Scalar>(
    potential: &MultiwellPotential<T>,
    i: usize,
    u: &[T],
    params: GeodesicParams,
) -> Result<T> {
    if i >= potential.num_phases() {
        return Err(Error::Precondition(format!(
            "well index {i} out of range for {} wells",
            potential.num_phases()
        )));
    }
    let path = relax_with_restarts(
        potential,
        potential.well(i),
        u,
        params.nodes,
        params.budget,
        params.restarts,
        params.seed,
    )?;
    Ok(path.action)
}

/// One dimensional optimal profile obtained by pulling back a relaxed path: `x(s)` solves
/// `eps dx = ds / sqrt(2W(gamma(s)))`, so `eps |u'| = sqrt(2W(u))`.
#[derive(Clone, Debug)]
pub struct ProfileTable<T> {
    /// Positions in units of `eps`, increasing; zero where half the action is spent.
    xs: Vec<T>,
    nodes: Vec<Vec<T>>,
    start_rate: T,
    end_rate: T,
}

impl<T: Scalar> ProfileTable<T> {
    pub fn from_path(potential: &MultiwellPotential<T>, path: &GeodesicPath<T>) -> Result<Self> {
        let nodes = &path.nodes;
        let m = nodes.len() - 1;
        if m < 4 {
            return Err(Error::Precondition("profile needs a resolved path".into()));
        }
        let f: Vec<T> = nodes.iter().map(|u| density(potential, u)).collect();
        let mut xs = vec![T::zero(); m + 1];
        let mut act = vec![T::zero(); m + 1];
        for k in 1..m - 1 {
            let len = dist2(&nodes[k], &nodes[k + 1]).sqrt();
            xs[k + 1] = xs[k] + len * T::c(0.5) * (T::one() / f[k] + T::one() / f[k + 1]);
        }
        for k in 0..m {
            let len = dist2(&nodes[k], &nodes[k + 1]).sqrt();
            act[k + 1] = act[k] + len * T::c(0.5) * (f[k] + f[k + 1]);
        }
        let half = act[m] * T::c(0.5);
        let kmid = (1..m).find(|&k| act[k] >= half).unwrap_or(m / 2).clamp(1, m - 1);
        let w = if act[kmid] > act[kmid - 1] && kmid > 1 {
            (half - act[kmid - 1]) / (act[kmid] - act[kmid - 1])
        } else {
            T::zero()
        };
        let x0 = if kmid > 1 {
            xs[kmid - 1] + w * (xs[kmid] - xs[kmid - 1])
        } else {
            xs[kmid]
        };
        for x in xs.iter_mut().take(m).skip(1) {
            *x -= x0;
        }
        let rate = |a: &[T], b: &[T]| -> T {
            // sqrt of the well curvature along the path direction
            let dir: Vec<T> = b.iter().zip(a).map(|(&x, &y)| x - y).collect();
            let dn = norm(&dir);
            let hess = potential.hessian_fd(a);
            let n = a.len();
            let mut q = T::zero();
            for r in 0..n {
                for c in 0..n {
                    q += dir[r] * hess[r * n + c] * dir[c];
                }
            }
            (q / (dn * dn)).max(T::epsilon()).sqrt()
        };
        let start_rate = rate(&nodes[0], &nodes[1]);
        let end_rate = rate(&nodes[m], &nodes[m - 1]);
        Ok(Self {
            xs,
            nodes: nodes.clone(),
            start_rate,
            end_rate,
        })
    }

    /// Profile value at signed distance `z` measured in units of `eps`.
    pub fn eval_into(&self, z: T, out: &mut [T]) {
        let m = self.nodes.len() - 1;
        let (a, first) = (&self.nodes[0], &self.nodes[1]);
        if z <= self.xs[1] {
            let w = (self.start_rate * (z - self.xs[1])).exp();
            for (o, (&p, &q)) in out.iter_mut().zip(a.iter().zip(first)) {
                *o = p + (q - p) * w;
            }
            return;
        }
        let (b, last) = (&self.nodes[m], &self.nodes[m - 1]);
        if z >= self.xs[m - 1] {
            let w = (-self.end_rate * (z - self.xs[m - 1])).exp();
            for (o, (&p, &q)) in out.iter_mut().zip(b.iter().zip(last)) {
                *o = p + (q - p) * w;
            }
            return;
        }
        let k = match self.xs[1..m].binary_search_by(|x| x.partial_cmp(&z).expect("finite")) {
            Ok(k) => k + 1,
            Err(k) => k,
        }
        .clamp(1, m - 1);
        let (x0, x1) = (self.xs[k], self.xs[k + 1].max(self.xs[k]));
        let w = if x1 > x0 { (z - x0) / (x1 - x0) } else { T::zero() };
        let k1 = (k + 1).min(m - 1);
        for (o, (&p, &q)) in out.iter_mut().zip(self.nodes[k].iter().zip(&self.nodes[k1])) {
            *o = p + (q - p) * w.min(T::one()).max(T::zero());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn double_well() -> MultiwellPotential<f64> {
        MultiwellPotential::scalar_double_well()
    }

    #[test]
    fn straight_action_matches_quadrature() {
        let p = double_well();
        let nodes = straight_path(&[-1.0], &[1.0], 100);
        let a = path_action(&p, &nodes).unwrap();
        assert!((a - 4.0 * 2f64.sqrt() / 3.0).abs() < 2e-4, "{a}");
        let two = path_action(&p, &[vec![-1.0], vec![1.0]]).unwrap();
        assert_eq!(two, 0.0);
        assert!(path_action(&p, &[vec![0.0]]).is_err());
    }

    #[test]
    fn trivial_path_for_equal_endpoints() {
        let p = MultiwellPotential::<f64>::symmetric_three_well();
        let g = relax_geodesic(&p, &[0.2, 0.1], &[0.2, 0.1], 32, 10).unwrap();
        assert_eq!(g.action, 0.0);
        assert!(g.converged);
    }

    #[test]
    fn rejects_coarse_paths() {
        let p = double_well();
        assert!(matches!(
            relax_geodesic(&p, &[-1.0], &[1.0], 8, 10),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn scalar_phi_at_origin() {
        let p = double_well();
        let v = phi(&p, 0, &[0.0], GeodesicParams::default()).unwrap();
        assert!((v - 2f64.sqrt() * 2.0 / 3.0).abs() < 1e-3, "{v}");
        assert_eq!(phi(&p, 1, &[1.0], GeodesicParams::default()).unwrap(), 0.0);
        assert!(phi(&p, 2, &[0.0], GeodesicParams::default()).is_err());
    }

    #[test]
    fn three_well_tensions_symmetric() {
        let p = MultiwellPotential::<f64>::symmetric_three_well();
        let s = surface_tensions(&p, GeodesicParams::default()).unwrap();
        let (a, b, c) = (s.get(0, 1), s.get(0, 2), s.get(1, 2));
        assert!((a - b).abs() < 1e-4 && (b - c).abs() < 1e-4, "{a} {b} {c}");
        assert!(s.converged, "{:?}", s.warnings);
        assert!(s.triangle_excess() <= s.tolerance);
    }

    #[test]
    fn triangle_violation_is_an_error() {
        let bad = vec![
            vec![0.0, 1.0, 3.0],
            vec![1.0, 0.0, 1.0],
            vec![3.0, 1.0, 0.0],
        ];
        assert!(matches!(
            SurfaceTensionMatrix::from_matrix(bad, 1e-6),
            Err(Error::Metric(_))
        ));
    }

    #[test]
    fn profile_pullback_is_monotone_for_double_well() {
        let p = double_well();
        let path = relax_geodesic(&p, &[-1.0], &[1.0], 400, 100).unwrap();
        let prof = ProfileTable::from_path(&p, &path).unwrap();
        let mut prev = -2.0;
        let mut out = [0.0];
        for k in -100..=100 {
            let z = k as f64 * 0.05;
            prof.eval_into(z, &mut out);
            assert!(out[0] >= prev);
            prev = out[0];
            let exact = (2f64.sqrt() * z).tanh();
            assert!((out[0] - exact).abs() < 2e-2, "z={z}: {} vs {exact}", out[0]);
        }
    }
}
