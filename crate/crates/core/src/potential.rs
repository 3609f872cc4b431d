//! Multiwell potentials `W: R^N -> [0, inf)` and their convex splitting.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::scalar::{dist2, norm, Scalar};

type ValueFn<T> = Arc<dyn Fn(&[T]) -> T + Send + Sync>;
type GradientFn<T> = Arc<dyn Fn(&[T], &mut [T]) + Send + Sync>;

#[derive(Clone)]
pub enum PotentialForm<T> {
    /// `W(u) = prod_i |u - alpha_i|^2`.
    ProductWells,
    /// `W(u) = (u^2 - 1)^2` on the real line.
    ScalarDoubleWell,
    /// User supplied evaluation and gradient.
    Custom {
        value: ValueFn<T>,
        gradient: GradientFn<T>,
    },
}

impl<T> PotentialForm<T> {
    pub fn name(&self) -> &'static str {
        match self {
            PotentialForm::ProductWells => "product_wells",
            PotentialForm::ScalarDoubleWell => "double_well",
            PotentialForm::Custom { .. } => "custom",
        }
    }
}

impl<T> fmt::Debug for PotentialForm<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A smooth nonnegative potential whose zeros are the wells `alpha_1..alpha_P`.
#[derive(Clone, Debug)]
pub struct MultiwellPotential<T> {
    wells: Vec<Vec<T>>,
    form: PotentialForm<T>,
    growth_exponent: T,
}

impl<T: Scalar> MultiwellPotential<T> {
    /// `W(u) = (u^2 - 1)^2` with wells at -1 and +1.
    pub fn scalar_double_well() -> Self {
        Self {
            wells: vec![vec![-T::one()], vec![T::one()]],
            form: PotentialForm::ScalarDoubleWell,
            growth_exponent: T::c(4.0),
        }
    }

    pub fn product_wells(wells: Vec<Vec<T>>) -> Result<Self> {
        check_wells(&wells)?;
        let p = T::from_usize_lossy(2 * wells.len());
        Ok(Self {
            wells,
            form: PotentialForm::ProductWells,
            growth_exponent: p,
        })
    }

    /// Three wells on the unit circle at angles pi/2, 7pi/6 and 11pi/6.
    pub fn symmetric_three_well() -> Self {
        let wells = [3.0, 7.0, 11.0]
            .iter()
            .map(|k| {
                let a = std::f64::consts::PI * k / 6.0;
                vec![T::c(a.cos()), T::c(a.sin())]
            })
            .collect();
        Self::product_wells(wells).expect("distinct wells")
    }

    pub fn custom(
        wells: Vec<Vec<T>>,
        growth_exponent: T,
        value: impl Fn(&[T]) -> T + Send + Sync + 'static,
        gradient: impl Fn(&[T], &mut [T]) + Send + Sync + 'static,
    ) -> Result<Self> {
        check_wells(&wells)?;
        if !(growth_exponent >= T::c(2.0)) {
            return Err(Error::Precondition(format!(
                "growth exponent must be at least 2, got {growth_exponent}"
            )));
        }
        Ok(Self {
            wells,
            form: PotentialForm::Custom {
                value: Arc::new(value),
                gradient: Arc::new(gradient),
            },
            growth_exponent,
        })
    }

    /// Dimension `N` of the target space.
    pub fn dim(&self) -> usize {
        self.wells[0].len()
    }

    pub fn num_phases(&self) -> usize {
        self.wells.len()
    }

    pub fn wells(&self) -> &[Vec<T>] {
        &self.wells
    }

    pub fn well(&self, i: usize) -> &[T] {
        &self.wells[i]
    }

    pub fn form(&self) -> &PotentialForm<T> {
        &self.form
    }

    pub fn growth_exponent(&self) -> T {
        self.growth_exponent
    }

    pub fn max_well_norm(&self) -> T {
        self.wells
            .iter()
            .map(|w| norm(w))
            .fold(T::zero(), T::max)
    }

    /// Checked evaluation of `W(u)`.
    pub fn eval(&self, u: &[T]) -> Result<T> {
        self.check_input(u)?;
        Ok(self.value(u))
    }

    /// Checked evaluation of `grad W(u)`.
    pub fn grad(&self, u: &[T]) -> Result<Vec<T>> {
        self.check_input(u)?;
        let mut g = vec![T::zero(); u.len()];
        self.gradient_into(u, &mut g);
        Ok(g)
    }

    fn check_input(&self, u: &[T]) -> Result<()> {
        if u.len() != self.dim() {
            return Err(Error::Domain(format!(
                "expected a vector in R^{}, got length {}",
                self.dim(),
                u.len()
            )));
        }
        if u.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain("non-finite input to potential".into()));
        }
        Ok(())
    }

    /// Unchecked evaluation used in inner loops.
    #[inline]
    pub fn value(&self, u: &[T]) -> T {
        match &self.form {
            PotentialForm::ScalarDoubleWell => {
                let s = u[0] * u[0] - T::one();
                s * s
            }
            PotentialForm::ProductWells => self
                .wells
                .iter()
                .map(|a| dist2(u, a))
                .fold(T::one(), |acc, q| acc * q),
            PotentialForm::Custom { value, .. } => value(u),
        }
    }

    #[inline]
    pub fn gradient_into(&self, u: &[T], out: &mut [T]) {
        match &self.form {
            PotentialForm::ScalarDoubleWell => {
                out[0] = T::c(4.0) * u[0] * (u[0] * u[0] - T::one());
            }
            PotentialForm::ProductWells => {
                // d/du prod q_i = sum_i (prod_{k != i} q_k) 2 (u - alpha_i); prefix/suffix
                // products keep this exact at the wells.
                let p = self.wells.len();
                let mut q = [T::zero(); 16];
                let mut qv;
                let q: &mut [T] = if p <= 16 {
                    &mut q[..p]
                } else {
                    qv = vec![T::zero(); p];
                    &mut qv
                };
                for (qi, a) in q.iter_mut().zip(&self.wells) {
                    *qi = dist2(u, a);
                }
                out.iter_mut().for_each(|o| *o = T::zero());
                let mut prefix = T::one();
                for i in 0..p {
                    let suffix = q[i + 1..].iter().fold(T::one(), |acc, &x| acc * x);
                    let coeff = T::c(2.0) * prefix * suffix;
                    for (o, (&ui, &ai)) in out.iter_mut().zip(u.iter().zip(&self.wells[i])) {
                        *o += coeff * (ui - ai);
                    }
                    prefix *= q[i];
                }
            }
            PotentialForm::Custom { gradient, .. } => gradient(u, out),
        }
    }

    /// Hessian by central differences of the analytic gradient (row-major `N x N`).
    pub fn hessian_fd(&self, u: &[T]) -> Vec<T> {
        hessian_by_differences(u, |x, g| self.gradient_into(x, g))
    }
}

fn check_wells<T: Scalar>(wells: &[Vec<T>]) -> Result<()> {
    if wells.len() < 2 {
        return Err(Error::Precondition(format!(
            "a multiwell potential needs at least two wells, got {}",
            wells.len()
        )));
    }
    let n = wells[0].len();
    if n == 0 || wells.iter().any(|w| w.len() != n) {
        return Err(Error::Precondition("wells must share a positive dimension".into()));
    }
    if wells.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::Domain("non-finite well coordinate".into()));
    }
    for i in 0..wells.len() {
        for j in 0..i {
            if dist2(&wells[i], &wells[j]) == T::zero() {
                return Err(Error::Precondition(format!("wells {j} and {i} coincide")));
            }
        }
    }
    Ok(())
}

pub(crate) fn hessian_by_differences<T: Scalar>(
    u: &[T],
    mut gradient: impl FnMut(&[T], &mut [T]),
) -> Vec<T> {
    let n = u.len();
    let scale = T::one().max(norm(u));
    let step = T::epsilon().cbrt() * scale;
    let mut hess = vec![T::zero(); n * n];
    let mut x = u.to_vec();
    let mut gp = vec![T::zero(); n];
    let mut gm = vec![T::zero(); n];
    for c in 0..n {
        x[c] = u[c] + step;
        gradient(&x, &mut gp);
        x[c] = u[c] - step;
        gradient(&x, &mut gm);
        x[c] = u[c];
        for r in 0..n {
            hess[r * n + c] = (gp[r] - gm[r]) / (step + step);
        }
    }
    // symmetrize
    for r in 0..n {
        for c in 0..r {
            let m = (hess[r * n + c] + hess[c * n + r]) * T::c(0.5);
            hess[r * n + c] = m;
            hess[c * n + r] = m;
        }
    }
    hess
}

/// Extreme eigenvalues (min, max) of a small symmetric matrix.
pub(crate) fn symmetric_eig_range<T: Scalar>(m: &[T], n: usize) -> (T, T) {
    if n == 1 {
        return (m[0], m[0]);
    }
    let mat = nalgebra::DMatrix::from_fn(n, n, |r, c| m[r * n + c].to_f64_lossy());
    let eig = nalgebra::SymmetricEigen::new(mat);
    let lo = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (T::c(lo), T::c(hi))
}

/// Smooth radial cutoff: 1 on `[0, radius]`, 0 beyond `radius + width`, quintic blend between.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RadialCutoff<T> {
    pub radius: T,
    pub width: T,
}

impl<T: Scalar> RadialCutoff<T> {
    /// Value and radial derivative at distance `s`.
    pub fn eval(&self, s: T) -> (T, T) {
        if s <= self.radius {
            return (T::one(), T::zero());
        }
        let t = (s - self.radius) / self.width;
        if t >= T::one() {
            return (T::zero(), T::zero());
        }
        // 1 - smootherstep(t)
        let t3 = t * t * t;
        let st = t3 * (t * (t * T::c(6.0) - T::c(15.0)) + T::c(10.0));
        let dst = T::c(30.0) * t * t * (t - T::one()) * (t - T::one());
        (T::one() - st, -dst / self.width)
    }

    pub fn outer_radius(&self) -> T {
        self.radius + self.width
    }
}

/// `W = W_conv + W_pert` with `W_pert(u) = -eta(|u|) (K/2) |u|^2`.
///
/// `W_conv = W + eta K/2 |u|^2` is `W` plus a convex quadratic inside the cutoff ball;
/// `K` is chosen from the sampled lower curvature of `W` so that the sum is convex.
#[derive(Clone, Debug)]
pub struct PotentialSplit<T> {
    shift: T,
    cutoff: Option<RadialCutoff<T>>,
    hessian_bound: T,
    convex_curvature: T,
}

impl<T: Scalar> PotentialSplit<T> {
    /// Build a split for a given quadratic shift `K` and optional cutoff.
    pub fn quadratic_shift(
        potential: &MultiwellPotential<T>,
        shift: T,
        cutoff: Option<RadialCutoff<T>>,
    ) -> Self {
        let mut split = Self {
            shift,
            cutoff,
            hessian_bound: T::zero(),
            convex_curvature: T::zero(),
        };
        let samples = curvature_samples(potential, &split);
        let mut hb = T::zero();
        for u in &samples.pert {
            let h = hessian_by_differences(u, |x, g| split.perturbation_gradient_into(x, g));
            let (lo, hi) = symmetric_eig_range(&h, u.len());
            hb = hb.max(lo.abs()).max(hi.abs());
        }
        let mut cc = T::zero();
        for u in &samples.field {
            let h = hessian_by_differences(u, |x, g| split.convex_gradient_into(potential, x, g));
            cc = cc.max(symmetric_eig_range(&h, u.len()).1);
        }
        split.hessian_bound = hb;
        split.convex_curvature = cc;
        split
    }

    /// The default split: `W_conv = u^4 + 1`, `W_pert = -2u^2` for the scalar double well;
    /// otherwise a cutoff at `3 max|alpha|` with transition width `max|alpha|`.
    pub fn default_for(potential: &MultiwellPotential<T>) -> Self {
        if let PotentialForm::ScalarDoubleWell = potential.form() {
            return Self::quadratic_shift(potential, T::c(4.0), None);
        }
        let a = potential.max_well_norm().max(T::c(1e-3));
        let cutoff = RadialCutoff {
            radius: T::c(3.0) * a,
            width: a,
        };
        let mut lo = T::zero();
        for u in sample_ball(potential.dim(), cutoff.outer_radius(), 0x5eed) {
            let h = potential.hessian_fd(&u);
            lo = lo.min(symmetric_eig_range(&h, u.len()).0);
        }
        let shift = -lo * T::c(1.1);
        Self::quadratic_shift(potential, shift, Some(cutoff))
    }

    pub fn shift(&self) -> T {
        self.shift
    }

    pub fn cutoff(&self) -> Option<RadialCutoff<T>> {
        self.cutoff
    }

    /// Sampled supremum of the spectral norm of `Hess W_pert`.
    pub fn hessian_bound(&self) -> T {
        self.hessian_bound
    }

    /// Sampled maximum eigenvalue of `Hess W_conv` over the ball holding typical field values.
    pub fn convex_curvature(&self) -> T {
        self.convex_curvature
    }

    fn eta(&self, r: T) -> (T, T) {
        match self.cutoff {
            Some(c) => c.eval(r),
            None => (T::one(), T::zero()),
        }
    }

    pub fn perturbation_value(&self, u: &[T]) -> T {
        let r2 = u.iter().map(|&x| x * x).sum::<T>();
        let (eta, _) = self.eta(r2.sqrt());
        -eta * self.shift * T::c(0.5) * r2
    }

    pub fn perturbation_gradient_into(&self, u: &[T], out: &mut [T]) {
        let r2 = u.iter().map(|&x| x * x).sum::<T>();
        let r = r2.sqrt();
        let (eta, deta) = self.eta(r);
        let radial = if r > T::zero() {
            T::c(0.5) * self.shift * r2 * deta / r
        } else {
            T::zero()
        };
        for (o, &x) in out.iter_mut().zip(u) {
            *o = -(eta * self.shift * x + radial * x);
        }
    }

    pub fn convex_value(&self, potential: &MultiwellPotential<T>, u: &[T]) -> T {
        potential.value(u) - self.perturbation_value(u)
    }

    pub fn convex_gradient_into(&self, potential: &MultiwellPotential<T>, u: &[T], out: &mut [T]) {
        potential.gradient_into(u, out);
        let mut gp = [T::zero(); 8];
        let mut gv;
        let gp: &mut [T] = if u.len() <= 8 {
            &mut gp[..u.len()]
        } else {
            gv = vec![T::zero(); u.len()];
            &mut gv
        };
        self.perturbation_gradient_into(u, gp);
        for (o, g) in out.iter_mut().zip(gp.iter()) {
            *o -= *g;
        }
    }
}

struct CurvatureSamples<T> {
    pert: Vec<Vec<T>>,
    field: Vec<Vec<T>>,
}

fn curvature_samples<T: Scalar>(
    potential: &MultiwellPotential<T>,
    split: &PotentialSplit<T>,
) -> CurvatureSamples<T> {
    let a = potential.max_well_norm().max(T::one());
    let outer = split
        .cutoff
        .map(|c| c.outer_radius() + a)
        .unwrap_or(T::c(2.0) * a);
    CurvatureSamples {
        pert: sample_ball(potential.dim(), outer, 0xbead),
        field: sample_ball(potential.dim(), T::c(1.1) * a, 0xf1e1d),
    }
}

/// Deterministic sample of points in the ball of the given radius (grid plus random fill).
pub(crate) fn sample_ball<T: Scalar>(dim: usize, radius: T, seed: u64) -> Vec<Vec<T>> {
    let per_axis = match dim {
        1 => 801,
        2 => 41,
        3 => 13,
        _ => 5,
    };
    let mut out = Vec::new();
    let total = (per_axis as usize).pow(dim as u32);
    for flat in 0..total {
        let mut rem = flat;
        let mut u = Vec::with_capacity(dim);
        for _ in 0..dim {
            let k = rem % per_axis;
            rem /= per_axis;
            let s = T::from_usize_lossy(k) / T::from_usize_lossy(per_axis - 1);
            u.push(radius * (T::c(2.0) * s - T::one()));
        }
        if norm(&u) <= radius {
            out.push(u);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..500 {
        let u: Vec<T> = (0..dim)
            .map(|_| radius * T::c(rng.gen_range(-1.0..1.0)))
            .collect();
        if norm(&u) <= radius {
            out.push(u);
        }
    }
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct AssumptionCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Measured constants of the structural assumptions on `W`.
#[derive(Clone, Debug, Serialize)]
pub struct GrowthConstants {
    pub radius: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub hessian_bound: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct AssumptionReport {
    pub checks: Vec<AssumptionCheck>,
    pub constants: GrowthConstants,
    pub passed: bool,
}

impl AssumptionReport {
    pub fn check(&self, name: &str) -> Option<&AssumptionCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Sample-based check of nonnegativity, zero set, polynomial growth and the convex split.
pub fn validate_assumptions<T: Scalar>(
    potential: &MultiwellPotential<T>,
    split: &PotentialSplit<T>,
    sample_box: T,
) -> Result<AssumptionReport> {
    if !(sample_box > T::zero()) {
        return Err(Error::Precondition("sample box radius must be positive".into()));
    }
    for (i, w) in potential.wells().iter().enumerate() {
        if w.iter().any(|x| x.abs() > sample_box) {
            return Err(Error::Precondition(format!(
                "sample box of radius {sample_box} excludes well {i}"
            )));
        }
    }
    let dim = potential.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(0xa55e55);
    let mut checks = Vec::new();
    let mut push = |name: &str, passed: bool, detail: String| {
        checks.push(AssumptionCheck {
            name: name.to_string(),
            passed,
            detail,
        })
    };

    // zeros at the wells
    let mut worst_value = T::zero();
    let mut worst_grad = T::zero();
    let mut g = vec![T::zero(); dim];
    for w in potential.wells() {
        worst_value = worst_value.max(potential.value(w).abs());
        potential.gradient_into(w, &mut g);
        worst_grad = worst_grad.max(norm(&g));
    }
    push(
        "wells are zeros",
        worst_value <= T::c(1e-12) && worst_grad <= T::c(1e-9),
        format!("max |W(alpha)| = {worst_value:e}, max |grad W(alpha)| = {worst_grad:e}"),
    );

    let samples: Vec<Vec<T>> = (0..4000)
        .map(|_| {
            (0..dim)
                .map(|_| sample_box * T::c(rng.gen_range(-1.0..1.0)))
                .collect()
        })
        .collect();

    let min_w = samples
        .iter()
        .map(|u| potential.value(u))
        .fold(T::infinity(), T::min);
    push(
        "nonnegative",
        min_w >= T::zero(),
        format!("min sampled W = {min_w:e}"),
    );

    let separation = T::c(0.05);
    let mut min_far = T::infinity();
    for u in &samples {
        let far = potential
            .wells()
            .iter()
            .all(|w| dist2(u, w) > separation * separation);
        if far {
            min_far = min_far.min(potential.value(u));
        }
    }
    push(
        "zeros only at wells",
        min_far > T::c(1e-8),
        format!("min W away from wells = {min_far:e}"),
    );

    // growth on shells |u| = R, 2R, 4R
    let p = potential.growth_exponent();
    let r_growth = T::c(5.0) * potential.max_well_norm().max(T::c(0.2));
    let directions = sphere_directions::<T>(dim, 64, &mut rng);
    let (mut c1, mut c2, mut c3) = (T::infinity(), T::zero(), T::zero());
    for scale in [1.0, 2.0, 4.0] {
        let r = r_growth * T::c(scale);
        for dir in &directions {
            let u: Vec<T> = dir.iter().map(|&x| x * r).collect();
            let w = potential.value(&u);
            potential.gradient_into(&u, &mut g);
            c1 = c1.min(w / r.powf(p));
            c2 = c2.max(w / r.powf(p));
            c3 = c3.max(norm(&g) / r.powf(p - T::one()));
        }
    }
    push(
        "polynomial growth",
        c1 > T::zero() && c2.is_finite() && c3.is_finite(),
        format!("R = {r_growth}, c1 = {c1:e}, c2 = {c2:e}, c3 = {c3:e}"),
    );

    let mut worst_split = T::zero();
    for u in &samples {
        let w = potential.value(u);
        let err = (split.convex_value(potential, u) + split.perturbation_value(u) - w).abs()
            / T::one().max(w.abs());
        worst_split = worst_split.max(err);
    }
    push(
        "split reconstructs W",
        worst_split <= T::c(1e-10),
        format!("max relative mismatch = {worst_split:e}"),
    );

    let convex_box = split
        .cutoff()
        .map(|c| (c.outer_radius() * T::c(1.5)).max(sample_box))
        .unwrap_or(sample_box);
    let mut worst_convexity = T::neg_infinity();
    let mut mid = vec![T::zero(); dim];
    for _ in 0..10_000 {
        let a: Vec<T> = (0..dim)
            .map(|_| convex_box * T::c(rng.gen_range(-1.0..1.0)))
            .collect();
        let b: Vec<T> = (0..dim)
            .map(|_| convex_box * T::c(rng.gen_range(-1.0..1.0)))
            .collect();
        for ((m, &x), &y) in mid.iter_mut().zip(&a).zip(&b) {
            *m = (x + y) * T::c(0.5);
        }
        let avg =
            (split.convex_value(potential, &a) + split.convex_value(potential, &b)) * T::c(0.5);
        let excess = (split.convex_value(potential, &mid) - avg) / T::one().max(avg.abs());
        worst_convexity = worst_convexity.max(excess);
    }
    push(
        "convex part is convex",
        worst_convexity <= T::c(1e-10),
        format!("max midpoint excess = {worst_convexity:e}"),
    );

    let hb = split.hessian_bound();
    push(
        "perturbation hessian bounded",
        hb.is_finite(),
        format!("sup |Hess W_pert| = {hb}"),
    );

    let passed = checks.iter().all(|c| c.passed);
    Ok(AssumptionReport {
        checks,
        constants: GrowthConstants {
            radius: r_growth.to_f64_lossy(),
            c1: c1.to_f64_lossy(),
            c2: c2.to_f64_lossy(),
            c3: c3.to_f64_lossy(),
            hessian_bound: hb.to_f64_lossy(),
        },
        passed,
    })
}

fn sphere_directions<T: Scalar>(dim: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<T>> {
    if dim == 1 {
        return vec![vec![T::one()], vec![-T::one()]];
    }
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.1 && n <= 1.0 {
            out.push(v.iter().map(|x| T::c(x / n)).collect());
        }
    }
    out
}
