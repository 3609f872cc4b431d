//! Allen-Cahn gradient flow `u_t = Lap u - W'(u)/eps^2` and its dissipation ledger.

use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::potential::{MultiwellPotential, PotentialSplit};
use crate::scalar::Scalar;
use crate::torus::{laplacian, EnergyBreakdown, PhaseField, Spectral, TorusGrid};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    SemiImplicit,
    MinimizingMovements,
}

const CHUNK: usize = 4096;

/// Sum of `f(i)` over `0..len` with a reduction order independent of the thread count.
pub(crate) fn fixed_sum<T: Scalar>(len: usize, f: impl Fn(usize) -> T + Sync) -> T {
    let parts: Vec<T> = (0..len.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| (c * CHUNK..((c + 1) * CHUNK).min(len)).map(&f).sum::<T>())
        .collect();
    parts.into_iter().sum()
}

/// Anderson mixing for the fixed point sweeps.
struct Anderson<T> {
    depth: usize,
    last: Option<(Vec<T>, Vec<T>)>,
    df: Vec<Vec<T>>,
    dg: Vec<Vec<T>>,
    gram: Vec<Vec<f64>>,
}

impl<T: Scalar> Anderson<T> {
    fn new(depth: usize) -> Self {
        Self { depth, last: None, df: Vec::new(), dg: Vec::new(), gram: Vec::new() }
    }

    /// Next iterate from the current one `x` and its image `gx`.
    fn update(&mut self, x: Vec<T>, gx: Vec<T>) -> Vec<T> {
        let f: Vec<T> = gx.iter().zip(&x).map(|(&a, &b)| a - b).collect();
        if let Some((f_old, g_old)) = self.last.take() {
            self.df.push(f.iter().zip(&f_old).map(|(&a, &b)| a - b).collect());
            self.dg.push(gx.iter().zip(&g_old).map(|(&a, &b)| a - b).collect());
            if self.df.len() > self.depth {
                self.df.remove(0);
                self.dg.remove(0);
                self.gram.remove(0);
                self.gram.iter_mut().for_each(|row| {
                    row.remove(0);
                });
            }
            let newest = self.df.last().expect("just pushed");
            let len = newest.len();
            let row: Vec<f64> = self
                .df
                .iter()
                .map(|d| fixed_sum(len, |k| d[k] * newest[k]).to_f64_lossy())
                .collect();
            let last = row.len() - 1;
            for (r, &v) in self.gram.iter_mut().zip(&row[..last]) {
                r.push(v);
            }
            self.gram.push(row);
        }
        let m = self.df.len();
        let mut out = gx.clone();
        if m > 0 {
            let len = f.len();
            let gram = nalgebra::DMatrix::<f64>::from_fn(m, m, |i, j| self.gram[i][j]);
            let rhs = nalgebra::DVector::<f64>::from_fn(m, |i, _| {
                fixed_sum(len, |k| self.df[i][k] * f[k]).to_f64_lossy()
            });
            let scale = (0..m).map(|i| gram[(i, i)]).fold(0.0, f64::max);
            let reg = gram + nalgebra::DMatrix::identity(m, m) * (1e-12 * scale);
            if let Some(gamma) = reg.cholesky().map(|c| c.solve(&rhs)) {
                if gamma.iter().all(|g| g.is_finite()) {
                    for (i, &gi) in gamma.iter().enumerate() {
                        let gi = T::c(gi);
                        for (o, &d) in out.iter_mut().zip(&self.dg[i]) {
                            *o -= gi * d;
                        }
                    }
                }
            }
        }
        self.last = Some((f, gx));
        out
    }
}

/// Everything a time step needs: potential, convex split and FFT plans.
#[derive(Clone, Debug)]
pub struct Stepper<T: Scalar> {
    potential: MultiwellPotential<T>,
    split: PotentialSplit<T>,
    spectral: Spectral<T>,
    stabilization: T,
    /// Fixed point tolerance (max norm of the update) and sweep cap.
    pub tolerance: T,
    pub max_sweeps: usize,
}

/// Result of one semi-implicit step.
#[derive(Clone, Debug)]
pub struct StepReport<T> {
    pub field: PhaseField<T>,
    pub sweeps: usize,
    pub residual: T,
}

/// Result of one minimizing movement.
#[derive(Clone, Debug)]
pub struct MovementReport<T> {
    pub field: PhaseField<T>,
    pub iterations: usize,
    pub gradient_norm: T,
    /// Objective `eps/(2 tau) |v - u|^2 + E(v)` at the returned point and at `u`.
    pub objective: T,
    pub objective_start: T,
    pub flagged: bool,
}

impl<T: Scalar> Stepper<T> {
    pub fn new(potential: MultiwellPotential<T>, split: PotentialSplit<T>, grid: &TorusGrid<T>) -> Self {
        // half the largest curvature of the convex part makes the sweep a contraction
        let stabilization = split.convex_curvature() * T::c(0.5);
        Self {
            potential,
            split,
            spectral: Spectral::new(grid),
            stabilization,
            tolerance: T::c(1e-9),
            max_sweeps: 50,
        }
    }

    pub fn potential(&self) -> &MultiwellPotential<T> {
        &self.potential
    }

    pub fn split(&self) -> &PotentialSplit<T> {
        &self.split
    }

    pub fn spectral(&self) -> &Spectral<T> {
        &self.spectral
    }

    fn check(&self, u: &PhaseField<T>, tau: T) -> Result<()> {
        if !(tau > T::zero()) {
            return Err(Error::Precondition(format!("time step must be positive, got {tau}")));
        }
        if u.grid() != self.spectral.grid() || u.components() != self.potential.dim() {
            return Err(Error::Precondition("field does not match the stepper".into()));
        }
        Ok(())
    }

    /// `E_eps` from a precomputed Laplacian (Parseval form of the Dirichlet part).
    pub fn energy_with_laplacian(&self, u: &PhaseField<T>, lap: &[T]) -> EnergyBreakdown<T> {
        let eps = u.epsilon();
        let dv = u.grid().cell_volume();
        let vals = u.values();
        let n = u.components();
        let dirichlet = -T::c(0.5) * eps * dv * fixed_sum(vals.len(), |k| vals[k] * lap[k]);
        let pot = dv / eps * fixed_sum(u.grid().cells(), |c| self.potential.value(&vals[c * n..(c + 1) * n]));
        EnergyBreakdown {
            total: dirichlet + pot,
            dirichlet,
            potential: pot,
            modica_mortola: T::nan(),
        }
    }

    pub fn energy(&self, u: &PhaseField<T>) -> EnergyBreakdown<T> {
        let lap = laplacian(u, &self.spectral);
        self.energy_with_laplacian(u, &lap)
    }

    /// `int (1/eps) |eps Lap u - W'(u)/eps|^2` from a precomputed Laplacian.
    pub fn curvature_with_laplacian(&self, u: &PhaseField<T>, lap: &[T]) -> T {
        let eps = u.epsilon();
        let n = u.components();
        let vals = u.values();
        let dv = u.grid().cell_volume();
        let sum = fixed_sum(u.grid().cells(), |c| {
            let mut g = [T::zero(); 8];
            self.potential.gradient_into(&vals[c * n..(c + 1) * n], &mut g[..n]);
            (0..n)
                .map(|k| {
                    let r = eps * lap[c * n + k] - g[k] / eps;
                    r * r
                })
                .sum::<T>()
        });
        sum * dv / eps
    }

    pub fn curvature_term(&self, u: &PhaseField<T>) -> T {
        let lap = laplacian(u, &self.spectral);
        self.curvature_with_laplacian(u, &lap)
    }

    /// Convex-splitting step solved by stabilized fixed point sweeps on the increment.
    pub fn step_semi_implicit(&self, u: &PhaseField<T>, tau: T) -> Result<StepReport<T>> {
        self.check(u, tau)?;
        if u.components() > 8 {
            return Err(Error::Unsupported("more than 8 field components".into()));
        }
        let eps2 = u.epsilon() * u.epsilon();
        let s = self.stabilization / eps2;
        let a = T::one() / tau + s;
        let n = u.components();
        let cells = u.grid().cells();
        let base = u.values();
        let lap = laplacian(u, &self.spectral);
        // explicit part: Lap u - W_pert'(u)/eps^2
        let mut explicit = vec![T::zero(); base.len()];
        explicit
            .par_chunks_mut(n)
            .zip(base.par_chunks(n))
            .zip(lap.par_chunks(n))
            .for_each(|((e, x), l)| {
                let mut gp = [T::zero(); 8];
                self.split.perturbation_gradient_into(x, &mut gp[..n]);
                for k in 0..n {
                    e[k] = l[k] - gp[k] / eps2;
                }
            });
        let mut delta = vec![T::zero(); base.len()];
        let mut rhs = vec![T::zero(); base.len()];
        let mut residual = T::infinity();
        let mut best = T::infinity();
        let mut anderson = Anderson::new(4);
        for sweep in 1..=self.max_sweeps {
            rhs.par_chunks_mut(n)
                .zip(base.par_chunks(n))
                .zip(delta.par_chunks(n))
                .zip(explicit.par_chunks(n))
                .for_each(|(((r, x), d), e)| {
                    let mut v = [T::zero(); 8];
                    let mut gc = [T::zero(); 8];
                    for k in 0..n {
                        v[k] = x[k] + d[k];
                    }
                    self.split.convex_gradient_into(&self.potential, &v[..n], &mut gc[..n]);
                    for k in 0..n {
                        r[k] = e[k] - gc[k] / eps2 + s * d[k];
                    }
                });
            let mut next = vec![T::zero(); base.len()];
            for k in 0..n {
                let comp: Vec<T> = (0..cells).map(|c| rhs[c * n + k]).collect();
                let sol = self.spectral.solve_shifted(&comp, a);
                for (c, v) in sol.into_iter().enumerate() {
                    next[c * n + k] = v;
                }
            }
            residual = next
                .par_iter()
                .zip(delta.par_iter())
                .map(|(&x, &y)| (x - y).abs())
                .reduce(T::zero, T::max);
            if !residual.is_finite() {
                break;
            }
            if residual < self.tolerance {
                let values: Vec<T> = base.iter().zip(&next).map(|(&x, &d)| x + d).collect();
                let field = PhaseField::new(u.grid().clone(), n, values, u.epsilon())?;
                return Ok(StepReport { field, sweeps: sweep, residual });
            }
            if residual > T::c(10.0) * best {
                break;
            }
            best = best.min(residual);
            delta = anderson.update(delta, next);
        }
        Err(Error::Solver(format!(
            "fixed point sweeps stalled at residual {residual:e}; reduce the time step below {tau}"
        )))
    }

    fn objective_and_gradient(
        &self,
        v: &[T],
        u: &PhaseField<T>,
        tau: T,
        grad: &mut [T],
    ) -> T {
        let eps = u.epsilon();
        let n = u.components();
        let dv = u.grid().cell_volume();
        let field = PhaseField::new(u.grid().clone(), n, v.to_vec(), eps).expect("finite iterate");
        let lap = laplacian(&field, &self.spectral);
        let energy = self.energy_with_laplacian(&field, &lap).total;
        let base = u.values();
        grad.par_chunks_mut(n)
            .enumerate()
            .for_each(|(c, g)| {
                let mut gw = [T::zero(); 8];
                self.potential.gradient_into(&v[c * n..(c + 1) * n], &mut gw[..n]);
                for k in 0..n {
                    let i = c * n + k;
                    g[k] = eps / tau * (v[i] - base[i]) - eps * lap[i] + gw[k] / eps;
                }
            });
        let dist = fixed_sum(v.len(), |i| (v[i] - base[i]) * (v[i] - base[i])) * dv;
        eps / (T::c(2.0) * tau) * dist + energy
    }

    /// Approximate minimizer of `eps/(2 tau) |v - u|^2 + E(v)`, started from the semi-implicit
    /// step and driven by preconditioned Barzilai-Borwein iterations.
    pub fn step_minimizing_movements(
        &self,
        u: &PhaseField<T>,
        tau: T,
        inner_tol: T,
    ) -> Result<MovementReport<T>> {
        self.check(u, tau)?;
        let eps = u.epsilon();
        let n = u.components();
        let cells = u.grid().cells();
        let dv = u.grid().cell_volume();
        let len = u.values().len();
        let mut g0 = vec![T::zero(); len];
        let j_start = self.objective_and_gradient(u.values(), u, tau, &mut g0);
        let start = match self.step_semi_implicit(u, tau) {
            Ok(r) => r.field.into_values(),
            Err(_) => u.values().to_vec(),
        };
        let mut v = start;
        let mut g = vec![T::zero(); len];
        let mut j = self.objective_and_gradient(&v, u, tau, &mut g);
        if !(j <= j_start) {
            v = u.values().to_vec();
            g.copy_from_slice(&g0);
            j = j_start;
        }
        let norm = |g: &[T]| (fixed_sum(g.len(), |i| g[i] * g[i]) * dv).sqrt();
        // preconditioner (eps/tau - eps Lap)^{-1}
        let precondition = |g: &[T]| -> Vec<T> {
            let mut out = vec![T::zero(); g.len()];
            for k in 0..n {
                let comp: Vec<T> = (0..cells).map(|c| g[c * n + k]).collect();
                let sol = self.spectral.solve_shifted(&comp, T::one() / tau);
                for (c, x) in sol.into_iter().enumerate() {
                    out[c * n + k] = x / eps;
                }
            }
            out
        };
        let mut best = (j, v.clone(), norm(&g));
        let mut z = precondition(&g);
        let mut alpha = T::one();
        let mut iterations = 0;
        let mut gnorm = best.2;
        let cap = 10_000;
        while gnorm > inner_tol && iterations < cap {
            iterations += 1;
            let v_new: Vec<T> = v.iter().zip(&z).map(|(&x, &d)| x - alpha * d).collect();
            if v_new.iter().any(|x| !x.is_finite()) {
                break;
            }
            let mut g_new = vec![T::zero(); len];
            let j_new = self.objective_and_gradient(&v_new, u, tau, &mut g_new);
            let z_new = precondition(&g_new);
            // BB step in the preconditioned metric
            let sy = fixed_sum(len, |i| (v_new[i] - v[i]) * (g_new[i] - g[i]));
            let sps = alpha * alpha * fixed_sum(len, |i| z[i] * g[i]);
            alpha = if sy > T::zero() && sps > T::zero() {
                (sps / sy).min(T::c(1e3))
            } else {
                alpha * T::c(0.5)
            };
            v = v_new;
            g = g_new;
            z = z_new;
            gnorm = norm(&g);
            // any iterate below the starting objective keeps J(v) <= J(u); prefer stationarity
            if j_new <= j_start && gnorm < best.2 {
                best = (j_new, v.clone(), gnorm);
            }
        }
        let flagged = best.2 > inner_tol;
        let field = PhaseField::new(u.grid().clone(), n, best.1, eps)?;
        Ok(MovementReport {
            field,
            iterations,
            gradient_norm: best.2,
            objective: best.0,
            objective_start: j_start,
            flagged,
        })
    }
}

/// One ledger row per time level.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub t: f64,
    pub energy: f64,
    pub dirichlet: f64,
    pub potential: f64,
    pub velocity_term_cum: f64,
    pub curvature_term_cum: f64,
    /// `E(t) + (velocity_cum + curvature_cum)/2 - E(0)`; nonpositive when the discrete
    /// De Giorgi inequality holds.
    pub dissipation_slack: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DissipationLedger {
    pub rows: Vec<LedgerRow>,
    /// Steps whose inner solver missed its tolerance.
    pub flagged_steps: Vec<usize>,
}

impl DissipationLedger {
    pub const HEADER: &'static str =
        "t,energy,dirichlet,potential,velocity_term_cum,curvature_term_cum,dissipation_slack";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&format!(
                "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}\n",
                r.t,
                r.energy,
                r.dirichlet,
                r.potential,
                r.velocity_term_cum,
                r.curvature_term_cum,
                r.dissipation_slack
            ));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(Self::HEADER) {
            return Err(Error::Format("ledger header mismatch".into()));
        }
        let mut rows = Vec::new();
        for (k, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let v: Vec<f64> = line
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Format(format!("ledger row {}: {e}", k + 2)))?;
            if v.len() != 7 {
                return Err(Error::Format(format!("ledger row {} has {} columns", k + 2, v.len())));
            }
            rows.push(LedgerRow {
                t: v[0],
                energy: v[1],
                dirichlet: v[2],
                potential: v[3],
                velocity_term_cum: v[4],
                curvature_term_cum: v[5],
                dissipation_slack: v[6],
            });
        }
        Ok(Self { rows, flagged_steps: Vec::new() })
    }

    /// Largest `E(t_k) + velocity_cum(t_k) - E(0)`.
    pub fn energy_inequality_excess(&self) -> f64 {
        let e0 = self.rows.first().map_or(0.0, |r| r.energy);
        self.rows
            .iter()
            .map(|r| r.energy + r.velocity_term_cum - e0)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn energies_nonincreasing(&self, tol: f64) -> bool {
        self.rows.windows(2).all(|w| w[1].energy <= w[0].energy + tol)
    }
}

/// Options of [`run_flow`].
#[derive(Clone, Copy, Debug)]
pub struct FlowOptions<T> {
    pub scheme: Scheme,
    pub tau: T,
    pub horizon: T,
    /// Steps between observer calls.
    pub cadence: usize,
    pub inner_tol: T,
}

/// Final field and ledger of a run.
#[derive(Clone, Debug)]
pub struct FlowRun<T> {
    pub field: PhaseField<T>,
    pub ledger: DissipationLedger,
    pub steps: usize,
}

/// Number of steps of size `tau` covering `horizon`.
pub fn step_count<T: Scalar>(tau: T, horizon: T) -> usize {
    let r = (horizon / tau).to_f64_lossy();
    (r - 1e-9).ceil().max(0.0) as usize
}

/// Iterate the chosen stepper, filling the ledger. `observer(step, t, field)` runs at step 0
/// and every `cadence` steps and may return the path of a checkpoint it wrote.
pub fn run_flow<T: Scalar>(
    u0: &PhaseField<T>,
    stepper: &Stepper<T>,
    options: FlowOptions<T>,
    mut observer: impl FnMut(usize, f64, &PhaseField<T>) -> Result<Option<PathBuf>>,
) -> Result<FlowRun<T>> {
    if !(options.horizon > T::zero()) || !(options.tau > T::zero()) {
        return Err(Error::Precondition("horizon and time step must be positive".into()));
    }
    if options.cadence == 0 {
        return Err(Error::Precondition("cadence must be at least one step".into()));
    }
    let steps = step_count(options.tau, options.horizon);
    let tau = options.tau.to_f64_lossy();
    let mut u = u0.clone();
    let mut ledger = DissipationLedger::default();
    let mut lap = laplacian(&u, stepper.spectral());
    let e0 = stepper.energy_with_laplacian(&u, &lap);
    let energy0 = e0.total.to_f64_lossy();
    ledger.rows.push(LedgerRow {
        t: 0.0,
        energy: energy0,
        dirichlet: e0.dirichlet.to_f64_lossy(),
        potential: e0.potential.to_f64_lossy(),
        velocity_term_cum: 0.0,
        curvature_term_cum: 0.0,
        dissipation_slack: 0.0,
    });
    let mut last_checkpoint = observer(0, 0.0, &u)?;
    let (mut vel_cum, mut curv_cum) = (0.0, 0.0);
    for k in 1..=steps {
        let curvature = stepper.curvature_with_laplacian(&u, &lap).to_f64_lossy() * tau;
        let next = match options.scheme {
            Scheme::SemiImplicit => stepper.step_semi_implicit(&u, options.tau).map(|r| r.field),
            Scheme::MinimizingMovements => stepper
                .step_minimizing_movements(&u, options.tau, options.inner_tol)
                .map(|r| {
                    if r.flagged {
                        ledger.flagged_steps.push(k);
                    }
                    r.field
                }),
        };
        let next = match next {
            Ok(f) if f.is_finite() => f,
            Err(Error::Solver(msg)) => return Err(Error::Solver(format!("step {k}: {msg}"))),
            _ => {
                return Err(Error::NonFinite {
                    step: k,
                    last_checkpoint,
                })
            }
        };
        let eps = u.epsilon().to_f64_lossy();
        let velocity = eps * next.l2_distance_sq(&u).to_f64_lossy() / tau;
        u = next;
        lap = laplacian(&u, stepper.spectral());
        let e = stepper.energy_with_laplacian(&u, &lap);
        if !e.total.is_finite() {
            return Err(Error::NonFinite {
                step: k,
                last_checkpoint,
            });
        }
        vel_cum += velocity;
        curv_cum += curvature;
        let energy = e.total.to_f64_lossy();
        ledger.rows.push(LedgerRow {
            t: k as f64 * tau,
            energy,
            dirichlet: e.dirichlet.to_f64_lossy(),
            potential: e.potential.to_f64_lossy(),
            velocity_term_cum: vel_cum,
            curvature_term_cum: curv_cum,
            dissipation_slack: energy + 0.5 * (vel_cum + curv_cum) - energy0,
        });
        if k % options.cadence == 0 || k == steps {
            if let Some(p) = observer(k, k as f64 * tau, &u)? {
                last_checkpoint = Some(p);
            }
        }
    }
    Ok(FlowRun {
        field: u,
        ledger,
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(n: usize) -> (Stepper<f64>, TorusGrid<f64>) {
        let p = MultiwellPotential::scalar_double_well();
        let split = PotentialSplit::default_for(&p);
        let g = TorusGrid::new(2, n, 1.0).unwrap();
        (Stepper::new(p, split, &g), g)
    }

    #[test]
    fn wells_are_fixed_points() {
        let (st, g) = setup(16);
        let u = PhaseField::constant(g, &[1.0], 0.05).unwrap();
        let r = st.step_semi_implicit(&u, 0.05 * 0.05 / 4.0).unwrap();
        assert!(r.field.values().iter().all(|&x| (x - 1.0).abs() <= 1e-12));
        let m = st.step_minimizing_movements(&u, 0.05 * 0.05 / 4.0, 1e-10).unwrap();
        assert!(m.field.values().iter().all(|&x| (x - 1.0).abs() <= 1e-12));
        assert_eq!(st.curvature_term(&u), 0.0);
    }

    #[test]
    fn nonpositive_step_rejected() {
        let (st, g) = setup(8);
        let u = PhaseField::constant(g, &[0.3], 0.1).unwrap();
        assert!(matches!(st.step_semi_implicit(&u, 0.0), Err(Error::Precondition(_))));
    }

    #[test]
    fn ledger_csv_round_trip() {
        let mut l = DissipationLedger::default();
        l.rows.push(LedgerRow {
            t: 0.0,
            energy: 1.5,
            dirichlet: 0.75,
            potential: 0.75,
            velocity_term_cum: 0.0,
            curvature_term_cum: 0.0,
            dissipation_slack: 0.0,
        });
        l.rows.push(LedgerRow { t: 0.1, energy: 1.25, ..l.rows[0] });
        let back = DissipationLedger::from_csv(&l.to_csv()).unwrap();
        assert_eq!(back.rows, l.rows);
    }

    #[test]
    fn step_count_rounds_up() {
        assert_eq!(step_count(0.1, 1.0), 10);
        assert_eq!(step_count(0.3, 1.0), 4);
    }
}
