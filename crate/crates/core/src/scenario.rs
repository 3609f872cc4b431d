//! Scenario files, run archives and the reports stored in them.
//!
//! A scenario is a TOML document. Every field has a default except the grid, `epsilon`, the
//! initial data and the time block, and the resolved copy written to `scenario.cfg` spells
//! all of them out. Archive layout:
//!
//! ```text
//! scenario.cfg  ledger.csv  checkpoints/NNNNNN.fld  facets/NNNNNN.csv
//! varifolds/NNNNNN.csv  reports/{ledger,bv,varifold,localize}.json
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::basis::FourierBasis;
use crate::error::{Error, Result};
use crate::flow::{run_flow, step_count, DissipationLedger, FlowOptions, Scheme, Stepper};
use crate::geodesic::{surface_tensions, GeodesicParams, SurfaceTensionMatrix};
use crate::initial::{initial_data, InitialSpec};
use crate::localization::{build_covering, covering_error, CoveringReport};
use crate::potential::{MultiwellPotential, PotentialSplit};
use crate::sharp::{bv_certificate, interface_mesh, project, BvReport, CertificateOptions, InterfaceMesh, Partition, Projection, Snapshot};
use crate::torus::{read_checkpoint, write_checkpoint, PhaseField, TorusGrid};
use crate::varifold::{
    compatibility_check, lift_from_field, CompatibilityOptions, DiscreteVarifold, FieldLiftOptions, SubVerdict,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialSpec {
    /// `(u^2 - 1)^2`.
    DoubleWell,
    /// Product wells at the vertices of an equilateral triangle.
    SymmetricThreeWell,
    ProductWells { wells: Vec<Vec<f64>> },
}

impl PotentialSpec {
    pub fn build(&self) -> Result<MultiwellPotential<f64>> {
        match self {
            PotentialSpec::DoubleWell => Ok(MultiwellPotential::scalar_double_well()),
            PotentialSpec::SymmetricThreeWell => Ok(MultiwellPotential::symmetric_three_well()),
            PotentialSpec::ProductWells { wells } => MultiwellPotential::product_wells(wells.clone()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub dim: usize,
    pub n: usize,
    #[serde(default = "one")]
    pub length: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSpec {
    #[serde(default = "semi_implicit")]
    pub scheme: Scheme,
    pub tau: f64,
    pub horizon: f64,
    /// Time between checkpoints; a multiple of `tau`.
    pub cadence: f64,
    #[serde(default = "inner_tol")]
    pub inner_tol: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionKind {
    Euclidean,
    Geodesic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsSpec {
    pub ledger: bool,
    pub bv: bool,
    pub varifold: bool,
    pub localize: bool,
    pub projection: ProjectionKind,
    /// Facet normal radius in cells.
    pub mesh_radius: f64,
    pub curvature_residual: f64,
    pub dissipation_budget: f64,
    pub varifold_radius: f64,
    pub varifold_threshold: f64,
    pub localize_radius: f64,
    pub localize_levels: usize,
}

impl Default for DiagnosticsSpec {
    fn default() -> Self {
        Self {
            ledger: true,
            bv: false,
            varifold: false,
            localize: false,
            projection: ProjectionKind::Euclidean,
            mesh_radius: 2.0,
            curvature_residual: 0.1,
            dissipation_budget: 0.05,
            varifold_radius: 0.0625,
            varifold_threshold: 1e-3,
            localize_radius: 0.125,
            localize_levels: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub epsilon: f64,
    #[serde(default = "double_well")]
    pub potential: PotentialSpec,
    pub grid: GridSpec,
    pub initial: InitialSpec,
    pub time: TimeSpec,
    #[serde(default)]
    pub diagnostics: DiagnosticsSpec,
}

fn one() -> f64 {
    1.0
}
fn semi_implicit() -> Scheme {
    Scheme::SemiImplicit
}
fn inner_tol() -> f64 {
    1e-10
}
fn default_name() -> String {
    "run".into()
}
fn double_well() -> PotentialSpec {
    PotentialSpec::DoubleWell
}

/// Line (1-based) of the key `path` in a TOML document, or of its table header.
fn locate(text: &str, path: &[&str]) -> usize {
    let mut table: Vec<String> = Vec::new();
    let mut header_line = None;
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.starts_with('[') {
            let name = line.trim_matches(|c| c == '[' || c == ']').trim();
            table = name.split('.').map(|s| s.trim().to_string()).collect();
            if table.iter().map(String::as_str).eq(path[..path.len().min(table.len())].iter().copied())
                && header_line.is_none()
            {
                header_line = Some(k + 1);
            }
            continue;
        }
        if let Some((key, _)) = line.split_once('=') {
            let mut full = table.clone();
            full.extend(key.trim().split('.').map(|s| s.trim().trim_matches('"').to_string()));
            if full.iter().map(String::as_str).eq(path.iter().copied()) {
                return k + 1;
            }
        }
    }
    header_line.unwrap_or(1)
}

impl Scenario {
    /// Parse and validate; errors carry the file name and line.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let scenario: Scenario = toml::from_str(text).map_err(|e| {
            let line = e.span().map_or(1, |s| text[..s.start.min(text.len())].lines().count().max(1));
            let line = if e.span().is_some_and(|s| text[..s.start.min(text.len())].ends_with('\n')) {
                line + 1
            } else {
                line
            };
            Error::Config { path: origin.into(), line, message: e.message().to_string() }
        })?;
        scenario.validate().map_err(|(key, message)| Error::Config {
            path: origin.into(),
            line: locate(text, &key),
            message,
        })?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }

    /// The fully resolved document.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    fn validate(&self) -> std::result::Result<(), (Vec<&'static str>, String)> {
        let fail = |key: Vec<&'static str>, msg: String| Err((key, msg));
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.epsilon) {
            return fail(vec!["epsilon"], format!("epsilon must be positive, got {}", self.epsilon));
        }
        if !positive(self.grid.length) {
            return fail(vec!["grid", "length"], "grid length must be positive".into());
        }
        if let Err(e) = TorusGrid::new(self.grid.dim, self.grid.n, self.grid.length) {
            return fail(vec!["grid", "n"], e.to_string());
        }
        let potential = match self.potential.build() {
            Ok(p) => p,
            Err(e) => return fail(vec!["potential"], e.to_string()),
        };
        let t = &self.time;
        for (key, v) in [("tau", t.tau), ("horizon", t.horizon), ("cadence", t.cadence), ("inner_tol", t.inner_tol)] {
            if !positive(v) {
                return fail(vec!["time", key], format!("{key} must be positive, got {v}"));
            }
        }
        let ratio = t.cadence / t.tau;
        if ratio < 1.0 - 1e-9 || (ratio - ratio.round()).abs() > 1e-6 * ratio.max(1.0) {
            return fail(vec!["time", "cadence"], format!("cadence {} is not a multiple of tau {}", t.cadence, t.tau));
        }
        if !matches!(self.initial, InitialSpec::Checkpoint { .. }) {
            match self.initial.geometry(self.grid.dim, self.grid.length, self.epsilon) {
                Ok(g) => {
                    if let Some(&p) = g.phases().iter().find(|&&p| p >= potential.num_phases()) {
                        return fail(
                            vec!["initial", "kind"],
                            format!("initial data uses phase {p} but the potential has {} wells", potential.num_phases()),
                        );
                    }
                }
                Err(e) => {
                    let key = match self.initial {
                        InitialSpec::Disk { .. } => "radius",
                        InitialSpec::CollapsingSlab { .. } => "width",
                        InitialSpec::Wedges { .. } => "angles",
                        _ => "kind",
                    };
                    return fail(vec!["initial", key], e.to_string());
                }
            }
        }
        let d = &self.diagnostics;
        let h = self.grid.length / self.grid.n as f64;
        for (key, v) in [
            ("mesh_radius", d.mesh_radius),
            ("curvature_residual", d.curvature_residual),
            ("dissipation_budget", d.dissipation_budget),
            ("varifold_threshold", d.varifold_threshold),
        ] {
            if !positive(v) {
                return fail(vec!["diagnostics", key], format!("{key} must be positive, got {v}"));
            }
        }
        for (key, r, on) in [("varifold_radius", d.varifold_radius, d.varifold), ("localize_radius", d.localize_radius, d.localize)] {
            if on && !(r >= 4.0 * h && r <= 0.25 * self.grid.length) {
                return fail(vec!["diagnostics", key], format!("{key} {r} outside [4h, L/4] = [{}, {}]", 4.0 * h, 0.25 * self.grid.length));
            }
        }
        if d.localize && (d.localize_levels == 0 || d.localize_radius / f64::powi(2.0, d.localize_levels as i32 - 1) < 4.0 * h) {
            return fail(vec!["diagnostics", "localize_levels"], "finest localization radius falls below 4h".into());
        }
        Ok(())
    }

    /// Steps between checkpoints.
    pub fn cadence_steps(&self) -> usize {
        (self.time.cadence / self.time.tau).round() as usize
    }

    pub fn total_steps(&self) -> usize {
        step_count(self.time.tau, self.time.horizon)
    }

    pub fn grid(&self) -> Result<TorusGrid<f64>> {
        TorusGrid::new(self.grid.dim, self.grid.n, self.grid.length)
    }

    pub fn projection(&self) -> Projection {
        match self.diagnostics.projection {
            ProjectionKind::Euclidean => Projection::Euclidean,
            ProjectionKind::Geodesic => Projection::Geodesic(self.geodesic_params()),
        }
    }

    pub fn geodesic_params(&self) -> GeodesicParams {
        GeodesicParams { seed: self.seed, ..GeodesicParams::default() }
    }

    /// Surface tensions of the configured potential.
    pub fn tensions(&self) -> Result<SurfaceTensionMatrix> {
        surface_tensions(&self.potential.build()?, self.geodesic_params())
    }
}

/// Directory holding one run.
#[derive(Clone, Debug)]
pub struct RunArchive {
    root: PathBuf,
}

impl RunArchive {
    pub const CONFIG: &'static str = "scenario.cfg";
    pub const LEDGER: &'static str = "ledger.csv";

    pub fn create(root: &Path) -> Result<Self> {
        for sub in ["checkpoints", "facets", "varifolds", "reports"] {
            fs::create_dir_all(root.join(sub))?;
        }
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn open(root: &Path) -> Result<Self> {
        let a = Self { root: root.to_path_buf() };
        a.require(&[a.config_path()])?;
        Ok(a)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config_path(&self) -> PathBuf {
        self.root.join(Self::CONFIG)
    }

    pub fn ledger_path(&self) -> PathBuf {
        self.root.join(Self::LEDGER)
    }

    pub fn checkpoint_path(&self, step: usize) -> PathBuf {
        self.root.join("checkpoints").join(format!("{step:06}.fld"))
    }

    pub fn facets_path(&self, step: usize) -> PathBuf {
        self.root.join("facets").join(format!("{step:06}.csv"))
    }

    pub fn varifold_path(&self, step: usize) -> PathBuf {
        self.root.join("varifolds").join(format!("{step:06}.csv"))
    }

    pub fn report_path(&self, name: &str) -> PathBuf {
        self.root.join("reports").join(format!("{name}.json"))
    }

    pub fn scenario(&self) -> Result<Scenario> {
        Scenario::load(&self.config_path())
    }

    /// Steps with a stored checkpoint, ascending.
    pub fn checkpoints(&self) -> Result<Vec<usize>> {
        let dir = self.root.join("checkpoints");
        if !dir.is_dir() {
            return Err(Error::MissingArtifacts(vec![dir.display().to_string()]));
        }
        let mut steps: Vec<usize> = fs::read_dir(&dir)?
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let name = e.file_name().into_string().ok()?;
                name.strip_suffix(".fld")?.parse().ok()
            })
            .collect();
        steps.sort_unstable();
        if steps.is_empty() {
            return Err(Error::MissingArtifacts(vec![dir.join("NNNNNN.fld").display().to_string()]));
        }
        Ok(steps)
    }

    pub fn require(&self, files: &[PathBuf]) -> Result<()> {
        let missing: Vec<String> = files.iter().filter(|f| !f.exists()).map(|f| f.display().to_string()).collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::MissingArtifacts(missing))
        }
    }

    fn write_json<S: Serialize>(&self, name: &str, value: &S) -> Result<()> {
        let text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
        fs::write(self.report_path(name), text + "\n")?;
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LedgerSummary {
    pub rows: usize,
    pub steps: usize,
    pub initial_energy: f64,
    pub final_energy: f64,
    pub energies_nonincreasing: bool,
    pub energy_inequality_excess: f64,
    pub max_dissipation_slack: f64,
    pub flagged_steps: Vec<usize>,
}

impl LedgerSummary {
    pub fn new(ledger: &DissipationLedger, steps: usize) -> Self {
        let e0 = ledger.rows.first().map_or(0.0, |r| r.energy);
        Self {
            rows: ledger.rows.len(),
            steps,
            initial_energy: e0,
            final_energy: ledger.rows.last().map_or(0.0, |r| r.energy),
            energies_nonincreasing: ledger.energies_nonincreasing(1e-12 * e0.abs().max(1.0)),
            energy_inequality_excess: ledger.energy_inequality_excess(),
            max_dissipation_slack: ledger.rows.iter().map(|r| r.dissipation_slack).fold(f64::NEG_INFINITY, f64::max),
            flagged_steps: ledger.flagged_steps.clone(),
        }
    }
}

/// What a finished run produced.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub archive: RunArchive,
    pub ledger: DissipationLedger,
    pub steps: usize,
    pub field: PhaseField<f64>,
}

fn interface_of(s: &Scenario, u: &PhaseField<f64>, potential: &MultiwellPotential<f64>, time: f64) -> Result<(Partition, InterfaceMesh)> {
    let mut part = project(u, potential, s.projection())?;
    part.time = time;
    let mesh = interface_mesh(&part, s.diagnostics.mesh_radius)?;
    Ok((part, mesh))
}

fn diffuse_lift(s: &Scenario, u: &PhaseField<f64>, potential: &MultiwellPotential<f64>, sigma: &SurfaceTensionMatrix) -> Result<DiscreteVarifold> {
    let cov = build_covering(&s.grid()?, s.diagnostics.varifold_radius)?;
    let opts = FieldLiftOptions {
        threshold: s.diagnostics.varifold_threshold,
        projection: s.projection(),
        geodesic: s.geodesic_params(),
        ..FieldLiftOptions::default()
    };
    lift_from_field(u, potential, sigma, &cov, opts)
}

/// Execute a scenario into `out`, then run the enabled diagnostics over the archive.
pub fn run_scenario(s: &Scenario, out: &Path) -> Result<RunOutcome> {
    let archive = RunArchive::create(out)?;
    fs::write(archive.config_path(), s.to_toml())?;
    let grid = s.grid()?;
    let potential = s.potential.build()?;
    let stepper = Stepper::new(potential.clone(), PotentialSplit::default_for(&potential), &grid);
    let u0 = initial_data(&s.initial, &grid, &potential, s.epsilon)?;
    let d = &s.diagnostics;
    let sigma = if d.varifold { Some(s.tensions()?) } else { None };
    let options = FlowOptions {
        scheme: s.time.scheme,
        tau: s.time.tau,
        horizon: s.time.horizon,
        cadence: s.cadence_steps(),
        inner_tol: s.time.inner_tol,
    };
    let run = run_flow(&u0, &stepper, options, |step, t, u| {
        let path = archive.checkpoint_path(step);
        write_checkpoint(&path, u, t)?;
        let (_, mesh) = interface_of(s, u, &potential, t)?;
        fs::write(archive.facets_path(step), mesh.to_csv(None, None))?;
        if let Some(sigma) = &sigma {
            let mut v = diffuse_lift(s, u, &potential, sigma)?;
            v.time = t;
            fs::write(archive.varifold_path(step), v.to_csv())?;
        }
        Ok(Some(path))
    })?;
    fs::write(archive.ledger_path(), run.ledger.to_csv())?;
    if d.ledger {
        archive.write_json("ledger", &LedgerSummary::new(&run.ledger, run.steps))?;
    }
    if d.bv {
        verify_bv(&archive)?;
    }
    if d.varifold {
        verify_varifold(&archive)?;
    }
    if d.localize {
        localize(&archive, d.localize_radius, d.localize_levels)?;
    }
    Ok(RunOutcome { archive, ledger: run.ledger, steps: run.steps, field: run.field })
}

fn load_field(archive: &RunArchive, step: usize) -> Result<(PhaseField<f64>, f64)> {
    let path = archive.checkpoint_path(step);
    archive.require(std::slice::from_ref(&path))?;
    let ck = read_checkpoint::<f64>(&path)?;
    Ok((ck.field, ck.time))
}

/// BV certificate over the checkpoints on the cadence lattice; writes `reports/bv.json`.
pub fn verify_bv(archive: &RunArchive) -> Result<BvReport> {
    let s = archive.scenario()?;
    let potential = s.potential.build()?;
    let cadence = s.cadence_steps();
    let ledger_flags = match fs::read_to_string(archive.report_path("ledger")) {
        Ok(text) => serde_json::from_str::<LedgerSummary>(&text).map_err(|e| Error::Format(e.to_string()))?.flagged_steps,
        Err(_) => Vec::new(),
    };
    let mut snapshots = Vec::new();
    for step in archive.checkpoints()?.into_iter().filter(|k| k % cadence == 0) {
        let (u, t) = load_field(archive, step)?;
        let (partition, mesh) = interface_of(&s, &u, &potential, t)?;
        snapshots.push(Snapshot { partition, mesh });
    }
    let sigma = s.tensions()?;
    let basis = FourierBasis::for_grid(s.grid.dim, s.grid.n, s.grid.length)?;
    let options = CertificateOptions {
        curvature_residual: s.diagnostics.curvature_residual,
        dissipation_budget: s.diagnostics.dissipation_budget,
    };
    let report = bv_certificate(&snapshots, &sigma, &basis, &ledger_flags, options)?;
    archive.write_json("bv", &report)?;
    Ok(report)
}

#[derive(Clone, Debug, Serialize)]
pub struct VarifoldRow {
    pub step: usize,
    pub t: f64,
    pub field_energy: f64,
    pub total_mass: f64,
    /// `mu_ij` masses, row major.
    pub pair_mass: Vec<Vec<f64>>,
    /// Mass of `mu_ii` per phase.
    pub seam_mass: Vec<f64>,
    /// Norm of the mean orientation of `mu_ii` (zero on a fully folded seam).
    pub seam_orientation: Vec<f64>,
    /// Interface area of the projected partition.
    pub projected_area: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct VarifoldReport {
    pub radius: f64,
    pub rows: Vec<VarifoldRow>,
    /// Compatibility checks on the last checkpoint.
    pub checks: Vec<SubVerdict>,
}

/// Diffuse lift of every checkpoint; writes `varifolds/*.csv` and `reports/varifold.json`.
pub fn verify_varifold(archive: &RunArchive) -> Result<VarifoldReport> {
    let s = archive.scenario()?;
    let potential = s.potential.build()?;
    let sigma = s.tensions()?;
    let grid = s.grid()?;
    let stepper = Stepper::new(potential.clone(), PotentialSplit::default_for(&potential), &grid);
    let basis = FourierBasis::for_grid(s.grid.dim, s.grid.n, s.grid.length)?;
    let p = potential.num_phases();
    let steps = archive.checkpoints()?;
    let mut rows = Vec::new();
    let mut checks = Vec::new();
    for (k, &step) in steps.iter().enumerate() {
        let (u, t) = load_field(archive, step)?;
        let mut v = diffuse_lift(&s, &u, &potential, &sigma)?;
        v.time = t;
        fs::write(archive.varifold_path(step), v.to_csv())?;
        let (_, mesh) = interface_of(&s, &u, &potential, t)?;
        let seam_orientation = (0..p)
            .map(|i| v.weighted_orientation(i, i, |_| 1.0).map_or(0.0, |(l, _)| l.iter().map(|x| x * x).sum::<f64>().sqrt()))
            .collect();
        rows.push(VarifoldRow {
            step,
            t,
            field_energy: stepper.energy(&u).total,
            total_mass: v.total_mass(),
            pair_mass: (0..p).map(|i| (0..p).map(|j| v.pair_mass(i, j)).collect()).collect(),
            seam_mass: (0..p).map(|i| v.pair_mass(i, i)).collect(),
            seam_orientation,
            projected_area: mesh.total_area(),
        });
        if k + 1 == steps.len() {
            checks = compatibility_check(&v, &mesh, &sigma, None, &basis, CompatibilityOptions::default())?.checks;
        }
    }
    let report = VarifoldReport { radius: s.diagnostics.varifold_radius, rows, checks };
    archive.write_json("varifold", &report)?;
    Ok(report)
}

#[derive(Clone, Debug, Serialize)]
pub struct LocalizeLevel {
    pub radius: f64,
    pub balls: usize,
    pub total: f64,
    pub surrogate_total: f64,
    pub surrogate_constant: f64,
    pub min_surrogate: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct LocalizeReport {
    pub step: usize,
    pub energy: f64,
    pub levels: Vec<LocalizeLevel>,
    /// Each level's total is at most 1.05 times the previous one.
    pub monotone: bool,
    #[serde(skip)]
    pub coverings: Vec<CoveringReport>,
}

/// Covering errors of the last checkpoint at `radius / 2^k`, `k < levels`; writes
/// `reports/localize.json` and one per-ball CSV per level.
pub fn localize(archive: &RunArchive, radius: f64, levels: usize) -> Result<LocalizeReport> {
    let s = archive.scenario()?;
    let potential = s.potential.build()?;
    let sigma = s.tensions()?;
    let grid = s.grid()?;
    let step = *archive.checkpoints()?.last().expect("nonempty");
    let (u, t) = load_field(archive, step)?;
    let (_, mesh) = interface_of(&s, &u, &potential, t)?;
    let mut out = Vec::new();
    let mut coverings = Vec::new();
    for k in 0..levels {
        let r = radius / f64::powi(2.0, k as i32);
        let rep = covering_error(&mesh, &sigma, &build_covering(&grid, r)?)?;
        fs::write(archive.root.join("reports").join(format!("localize_{k}.csv")), rep.to_csv(s.grid.dim))?;
        out.push(LocalizeLevel {
            radius: r,
            balls: rep.balls.len(),
            total: rep.total,
            surrogate_total: rep.surrogate_total,
            surrogate_constant: rep.surrogate_constant,
            min_surrogate: rep.balls.iter().map(|b| b.surrogate).fold(f64::INFINITY, f64::min),
        });
        coverings.push(rep);
    }
    let monotone = out.windows(2).all(|w| w[1].total <= 1.05 * w[0].total);
    let report = LocalizeReport {
        step,
        energy: coverings.first().map_or(0.0, |c| c.energy),
        levels: out,
        monotone,
        coverings,
    };
    archive.write_json("localize", &report)?;
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportKind {
    Config,
    Ledger,
    Bv,
    Varifold,
    Localize,
}

/// Stored text of a report, verbatim.
pub fn report(archive_root: &Path, which: ReportKind) -> Result<String> {
    let a = RunArchive { root: archive_root.to_path_buf() };
    let mut need = vec![a.config_path()];
    need.push(match which {
        ReportKind::Config => a.config_path(),
        ReportKind::Ledger => a.ledger_path(),
        ReportKind::Bv => a.report_path("bv"),
        ReportKind::Varifold => a.report_path("varifold"),
        ReportKind::Localize => a.report_path("localize"),
    });
    need.dedup();
    a.require(&need)?;
    Ok(fs::read_to_string(need.last().expect("nonempty"))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    const KINK: &str = "
name = \"kink\"
epsilon = 0.02

[grid]
dim = 2
n = 32

[initial]
kind = \"kink\"

[time]
tau = 1e-4
horizon = 1e-3
cadence = 5e-4
";

    #[test]
    fn defaults_are_filled_in() {
        let s = Scenario::parse(KINK, "kink.toml").unwrap();
        assert_eq!(s.potential, PotentialSpec::DoubleWell);
        assert_eq!(s.grid.length, 1.0);
        assert_eq!(s.cadence_steps(), 5);
        assert_eq!(s.total_steps(), 10);
        assert!(s.diagnostics.ledger && !s.diagnostics.bv);
    }

    #[test]
    fn resolved_copy_round_trips() {
        let s = Scenario::parse(KINK, "kink.toml").unwrap();
        let text = s.to_toml();
        assert_eq!(Scenario::parse(&text, "resolved").unwrap(), s);
        assert!(text.contains("localize_levels"));
    }

    #[test]
    fn errors_point_at_the_offending_line() {
        let bad = KINK.replace("epsilon = 0.02", "epsilon = -0.02");
        match Scenario::parse(&bad, "bad.toml") {
            Err(Error::Config { line, path, .. }) => {
                assert_eq!(line, 3);
                assert_eq!(path, "bad.toml");
            }
            other => panic!("{other:?}"),
        }
        let bad = KINK.replace("cadence = 5e-4", "cadence = 2.5e-4");
        assert!(matches!(Scenario::parse(&bad, "x"), Err(Error::Config { line: 15, .. })));
        let bad = KINK.replace("n = 32", "n = \"many\"");
        assert!(matches!(Scenario::parse(&bad, "x"), Err(Error::Config { line: 7, .. })));
        let bad = KINK.replace("[time]", "[time]\nspeed = 3");
        assert!(matches!(Scenario::parse(&bad, "x"), Err(Error::Config { .. })));
    }

    #[test]
    fn locate_handles_dotted_keys() {
        let text = "a = 1\ntime.tau = 2\n[grid]\nn = 3\n";
        assert_eq!(locate(text, &["time", "tau"]), 2);
        assert_eq!(locate(text, &["grid", "n"]), 4);
        assert_eq!(locate(text, &["grid", "dim"]), 3);
    }
}
