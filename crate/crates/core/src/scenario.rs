//! Scenario files and the verification run.
//!
//! A check produces one or more parts. A part is a family of residuals over grid nodes
//! (or grid-level scalars) compared against one threshold, either expecting vanishing
//! (`residual ≤ threshold`) or, for controls, expecting a certificate of non-vanishing
//! (`max residual ≥ threshold`). Vanishing residuals are normalized as `|r| / (1 + s)` with
//! `s` the largest norm among the quantities entering `r`; control residuals are raw.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::atlas::{all_cases, find_case, tension_family, AtlasCase, Family};
use crate::domain::{Node, QuadratureGrid};
use crate::error::{Error, Result};
use crate::isotropy::{self, PairingKind};
use crate::jet::{Jet, JetOrder};
use crate::pullback::{Dir, FieldGerm, FieldKind, MapGerm};
use crate::report::{CheckResult, Environment, Expectation, Part, Verdict, VerificationReport, Worst, SCHEMA_VERSION};
use crate::target::{curvature_numeric, TargetKind, TargetModel, FS_HOLOMORPHIC_CURVATURE};
use crate::variational as var;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Check {
    Tension,
    Energy,
    Jacobi,
    Linearization,
    FirstVariation,
    HessianSymmetry,
    Conformality,
    RealIsotropy,
    ThetaSpan,
    ComplexIsotropy,
    HolomorphicField,
    DbarHolomorphicity,
    CurvatureSpan,
    CurvatureOracle,
    NegativeControls,
}

impl Check {
    pub const ALL: [Check; 15] = [
        Check::Tension,
        Check::Energy,
        Check::Jacobi,
        Check::Linearization,
        Check::FirstVariation,
        Check::HessianSymmetry,
        Check::Conformality,
        Check::RealIsotropy,
        Check::ThetaSpan,
        Check::ComplexIsotropy,
        Check::HolomorphicField,
        Check::DbarHolomorphicity,
        Check::CurvatureSpan,
        Check::CurvatureOracle,
        Check::NegativeControls,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Check::Tension => "tension",
            Check::Energy => "energy",
            Check::Jacobi => "jacobi",
            Check::Linearization => "linearization",
            Check::FirstVariation => "first-variation",
            Check::HessianSymmetry => "hessian-symmetry",
            Check::Conformality => "conformality",
            Check::RealIsotropy => "real-isotropy",
            Check::ThetaSpan => "theta-span",
            Check::ComplexIsotropy => "complex-isotropy",
            Check::HolomorphicField => "holomorphic-field",
            Check::DbarHolomorphicity => "dbar-holomorphicity",
            Check::CurvatureSpan => "curvature-span",
            Check::CurvatureOracle => "curvature-oracle",
            Check::NegativeControls => "negative-controls",
        }
    }

    pub fn describe(self) -> &'static str {
        match self {
            Check::Tension => "harmonic maps have vanishing tension field",
            Check::Energy => "closed-form energies, refinement of the quadrature, invariance under isometries",
            Check::Jacobi => "variation fields of families through harmonic maps solve the Jacobi equation",
            Check::Linearization => "the Jacobi operator is minus the linearized tension; both complex forms agree",
            Check::FirstVariation => "dE/dt equals minus the integral of <tension, v>",
            Check::HessianSymmetry => "the Hessian is symmetric, vanishes on Jacobi fields and matches E''",
            Check::Conformality => "Jacobi fields along harmonic maps of the sphere are conformal",
            Check::RealIsotropy => "real isotropy of harmonic spheres in space forms and its preservation",
            Check::ThetaSpan => "t-derivatives of iterated derivatives stay in the lower span",
            Check::ComplexIsotropy => "complex isotropy of harmonic spheres in CP^n and its preservation",
            Check::HolomorphicField => "Jacobi fields along holomorphic curves are holomorphic",
            Check::DbarHolomorphicity => "isotropy differentials are holomorphic and transform as k-differentials",
            Check::CurvatureSpan => "complex space form curvature lies in the three-vector span",
            Check::CurvatureOracle => "closed-form curvature agrees with curvature from the metric; Bianchi",
            Check::NegativeControls => "designed non-examples produce non-vanishing residuals",
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Check {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Check::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Scenario(format!("unknown check `{s}`")))
    }
}

/// Thresholds, one per part.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    #[serde(with = "crate::report::real")]
    pub tension: f64,
    #[serde(with = "crate::report::real")]
    pub energy: f64,
    #[serde(with = "crate::report::real")]
    pub energy_invariance: f64,
    #[serde(with = "crate::report::real")]
    pub energy_density: f64,
    #[serde(with = "crate::report::real")]
    pub jacobi: f64,
    #[serde(with = "crate::report::real")]
    pub linearization: f64,
    #[serde(with = "crate::report::real")]
    pub bianchi: f64,
    #[serde(with = "crate::report::real")]
    pub first_variation: f64,
    #[serde(with = "crate::report::real")]
    pub hessian: f64,
    #[serde(with = "crate::report::real")]
    pub conformality: f64,
    #[serde(with = "crate::report::real")]
    pub conformal_identity: f64,
    #[serde(with = "crate::report::real")]
    pub eta: f64,
    #[serde(with = "crate::report::real")]
    pub j: f64,
    #[serde(with = "crate::report::real")]
    pub variation_identity: f64,
    #[serde(with = "crate::report::real")]
    pub theta: f64,
    #[serde(with = "crate::report::real")]
    pub holomorphic: f64,
    #[serde(with = "crate::report::real")]
    pub dbar: f64,
    #[serde(with = "crate::report::real")]
    pub transition: f64,
    #[serde(with = "crate::report::real")]
    pub curvature_span: f64,
    #[serde(with = "crate::report::real")]
    pub curvature: f64,
    #[serde(with = "crate::report::real")]
    pub bianchi_cyclic: f64,
    #[serde(with = "crate::report::real")]
    pub control_jacobi: f64,
    #[serde(with = "crate::report::real")]
    pub control_tension: f64,
    #[serde(with = "crate::report::real")]
    pub control_eta: f64,
    #[serde(with = "crate::report::real")]
    pub control_holomorphic: f64,
    #[serde(with = "crate::report::real")]
    pub control_theta: f64,
    #[serde(with = "crate::report::real")]
    pub control_conformality: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            tension: 1e-9,
            energy: 1e-6,
            energy_invariance: 1e-8,
            energy_density: 1e-8,
            jacobi: 1e-8,
            linearization: 1e-9,
            bianchi: 1e-9,
            first_variation: 1e-5,
            hessian: 1e-6,
            conformality: 1e-8,
            conformal_identity: 1e-10,
            eta: 1e-8,
            j: 1e-7,
            variation_identity: 1e-9,
            theta: 1e-8,
            holomorphic: 1e-8,
            dbar: 1e-7,
            transition: 1e-9,
            curvature_span: 1e-9,
            curvature: 1e-9,
            bianchi_cyclic: 1e-10,
            control_jacobi: 1e-3,
            control_tension: 1e-2,
            control_eta: 1e-2,
            control_holomorphic: 1e-3,
            control_theta: 1e-3,
            control_conformality: 1e-3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Resolution {
    pub n_theta: usize,
    pub n_phi: usize,
}

impl Default for Resolution {
    fn default() -> Self {
        Self { n_theta: 32, n_phi: 64 }
    }
}

impl FromStr for Resolution {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| Error::Scenario(format!("resolution `{s}` is not NxM")))?;
        let parse = |x: &str| {
            x.trim()
                .parse::<usize>()
                .map_err(|_| Error::Scenario(format!("resolution `{s}` is not NxM")))
        };
        Ok(Self {
            n_theta: parse(a)?,
            n_phi: parse(b)?,
        })
    }
}

fn default_rmax() -> usize {
    isotropy::R_MAX
}

fn default_seed() -> u64 {
    1
}

fn default_random_fields() -> usize {
    10
}

fn all_names() -> Vec<String> {
    vec!["all".into()]
}

/// A verification scenario, as read from TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    /// Case names, or `["all"]`.
    #[serde(default = "all_names")]
    pub cases: Vec<String>,
    /// Check names, or `["all"]`.
    #[serde(default = "all_names")]
    pub checks: Vec<String>,
    #[serde(default)]
    pub resolution: Resolution,
    #[serde(default = "default_rmax")]
    pub rmax: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Random fields per case for the linearization identity.
    #[serde(default = "default_random_fields")]
    pub random_fields: usize,
    #[serde(default)]
    pub tolerances: Tolerances,
    /// Record wall time per check (breaks byte-identical reports).
    #[serde(default)]
    pub timing: bool,
    /// Attach the per-node residual maximum to every grid part.
    #[serde(default)]
    pub per_node: bool,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            cases: all_names(),
            checks: all_names(),
            resolution: Resolution::default(),
            rmax: default_rmax(),
            seed: default_seed(),
            random_fields: default_random_fields(),
            tolerances: Tolerances::default(),
            timing: false,
            per_node: false,
        }
    }
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Scenario(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Resolved case list in scenario order (`all` expands to the atlas order).
    pub fn case_list(&self) -> Result<Vec<AtlasCase>> {
        if self.cases.iter().any(|c| c == "all") {
            return Ok(all_cases());
        }
        let mut seen = BTreeSet::new();
        self.cases
            .iter()
            .filter(|c| seen.insert(c.as_str()))
            .map(|c| find_case(c).ok_or_else(|| Error::Scenario(format!("unknown case `{c}`"))))
            .collect()
    }

    pub fn check_list(&self) -> Result<Vec<Check>> {
        if self.checks.iter().any(|c| c == "all") {
            return Ok(Check::ALL.to_vec());
        }
        let mut out: Vec<Check> = self.checks.iter().map(|c| c.parse()).collect::<Result<_>>()?;
        out.sort();
        out.dedup();
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rmax < 2 || self.rmax > isotropy::R_MAX {
            return Err(Error::Scenario(format!(
                "rmax {} outside 2..={}",
                self.rmax,
                isotropy::R_MAX
            )));
        }
        if self.resolution.n_theta < 8 || self.resolution.n_phi < 16 {
            return Err(Error::Scenario(format!(
                "resolution {}x{} below 8x16",
                self.resolution.n_theta, self.resolution.n_phi
            )));
        }
        self.case_list()?;
        self.check_list()?;
        Ok(())
    }
}

/// Worker count from `HARMAP_WORKERS` (default: rayon's choice).
pub fn worker_count() -> Option<usize> {
    std::env::var("HARMAP_WORKERS")
        .ok()
        .and_then(|s| s.parse().ok())
        .filter(|&n| n > 0)
}

/// Runs a scenario on a pool sized by `HARMAP_WORKERS`.
pub fn run_scenario(s: &Scenario) -> Result<VerificationReport> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = worker_count() {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::Setup(e.to_string()))?;
    pool.install(|| run_in_pool(s))
}

fn run_in_pool(s: &Scenario) -> Result<VerificationReport> {
    s.validate()?;
    let cases = s.case_list()?;
    let checks = s.check_list()?;
    let grid = QuadratureGrid::new(s.resolution.n_theta, s.resolution.n_phi)?;
    for case in &cases {
        self_check(case, &grid)?;
    }
    let mut results = Vec::new();
    for &check in &checks {
        for case in &cases {
            let start = Instant::now();
            let runner = Runner {
                s,
                case,
                grid: if case.manifest.north_only {
                    grid.north_half()
                } else {
                    grid.clone()
                },
            };
            let outcome = runner.run(check)?;
            let wall = s.timing.then(|| start.elapsed().as_secs_f64());
            results.push(CheckResult::new(check.name(), &case.name, outcome, wall));
        }
    }
    let verdict = Verdict::of(&results);
    Ok(VerificationReport {
        schema: SCHEMA_VERSION,
        environment: Environment {
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: s.seed,
            resolution: [s.resolution.n_theta, s.resolution.n_phi],
            rmax: s.rmax,
            random_fields: s.random_fields,
            fubini_study_curvature: FS_HOLOMORPHIC_CURVATURE,
            tolerances: s.tolerances.clone(),
        },
        results,
        verdict,
    })
}

/// Setup-time guard: a case claiming harmonicity must pass the harmonic gate on the grid.
pub fn self_check(case: &AtlasCase, grid: &QuadratureGrid) -> Result<()> {
    if !case.manifest.harmonic {
        return Ok(());
    }
    let grid = if case.manifest.north_only {
        grid.north_half()
    } else {
        grid.clone()
    };
    let worst = grid
        .par_map(|n| {
            let g = case.map.germ(n.point, JetOrder::of(1, 1, 0), 0.0, None)?;
            Ok((var::tension_residual(&g)?, *n))
        })?
        .into_iter()
        .fold(None::<(f64, Node)>, |acc, x| match acc {
            Some(a) if a.0 >= x.0 => Some(a),
            _ => Some(x),
        });
    if let Some((r, n)) = worst {
        if r > var::HARMONIC_GATE {
            return Err(Error::Setup(format!(
                "case {} fails its harmonicity self-check: residual {r:.3e} at theta {:.6}, phi {:.6}",
                case.name, n.theta, n.phi
            )));
        }
    }
    Ok(())
}

/// Result of one check on one case before packaging.
pub enum Outcome {
    Parts(Vec<Part>),
    Skip(String),
    NotApplicable,
}

type Items = Vec<(String, f64)>;

struct PartSpec {
    name: &'static str,
    expect: Expectation,
    threshold: f64,
}

fn zero(name: &'static str, threshold: f64) -> PartSpec {
    PartSpec {
        name,
        expect: Expectation::Zero,
        threshold,
    }
}

fn nonzero(name: &'static str, threshold: f64) -> PartSpec {
    PartSpec {
        name,
        expect: Expectation::Nonzero,
        threshold,
    }
}

fn nres(r: f64, scale: f64) -> f64 {
    r / (1.0 + scale)
}

/// Reduces per-node items to a part: first maximum in node order, pairwise mean.
fn summarize(spec: &PartSpec, grid: &QuadratureGrid, per_node: Vec<Items>, keep: bool) -> Part {
    let mut worst: Option<(f64, usize, String)> = None;
    let mut all = Vec::new();
    let mut node_max = Vec::with_capacity(if keep { per_node.len() } else { 0 });
    for (i, items) in per_node.into_iter().enumerate() {
        if keep {
            node_max.push(items.iter().map(|x| x.1).fold(0.0, f64::max));
        }
        for (label, r) in items {
            all.push(r);
            let better = match &worst {
                None => true,
                Some((w, _, _)) => r > *w || (r.is_nan() && !w.is_nan()),
            };
            if better {
                worst = Some((r, i, label));
            }
        }
    }
    let worst = worst.map(|(r, i, label)| {
        let n = grid.nodes[i];
        (
            r,
            Worst {
                node: Some(i),
                chart: Some(n.point.chart),
                coord: Some([n.point.coord.re, n.point.coord.im]),
                theta: Some(n.theta),
                phi: Some(n.phi),
                item: label,
            },
        )
    });
    let mut part = Part::new(spec.name, spec.expect, spec.threshold, &all, worst);
    if keep {
        part.per_node = Some(node_max);
    }
    part
}

fn scalar_part(spec: &PartSpec, items: Items) -> Part {
    let all: Vec<f64> = items.iter().map(|x| x.1).collect();
    let worst = items
        .into_iter()
        .fold(None::<(f64, String)>, |acc, (l, r)| match acc {
            Some(a) if a.0 >= r || r.is_nan() && a.0.is_nan() => Some(a),
            _ => Some((r, l)),
        })
        .map(|(r, label)| {
            (
                r,
                Worst {
                    node: None,
                    chart: None,
                    coord: None,
                    theta: None,
                    phi: None,
                    item: label,
                },
            )
        });
    Part::new(spec.name, spec.expect, spec.threshold, &all, worst)
}

struct Runner<'a> {
    s: &'a Scenario,
    case: &'a AtlasCase,
    grid: QuadratureGrid,
}

/// Evaluation at one node failed because a hypothesis does not hold there.
fn is_precondition(e: &Error) -> bool {
    matches!(e, Error::Precondition(_))
}

impl<'a> Runner<'a> {
    fn tol(&self) -> &Tolerances {
        &self.s.tolerances
    }

    fn run(&self, check: Check) -> Result<Outcome> {
        let r = match check {
            Check::Tension => self.tension(),
            Check::Energy => self.energy(),
            Check::Jacobi => self.jacobi(),
            Check::Linearization => self.linearization(),
            Check::FirstVariation => self.first_variation(),
            Check::HessianSymmetry => self.hessian(),
            Check::Conformality => self.conformality(),
            Check::RealIsotropy => self.real_isotropy(),
            Check::ThetaSpan => self.theta_span(),
            Check::ComplexIsotropy => self.complex_isotropy(),
            Check::HolomorphicField => self.holomorphic_field(),
            Check::DbarHolomorphicity => self.dbar(),
            Check::CurvatureSpan => self.curvature_span(),
            Check::CurvatureOracle => self.curvature_oracle(),
            Check::NegativeControls => self.controls(),
        };
        match r {
            Err(e) if is_precondition(&e) => Ok(Outcome::Skip(e.to_string())),
            other => other,
        }
    }

    /// Per-node evaluation feeding several parts at once.
    fn grid_parts<F>(&self, grid: &QuadratureGrid, specs: Vec<PartSpec>, f: F) -> Result<Vec<Part>>
    where
        F: Fn(&Node) -> Result<Vec<Items>> + Sync,
    {
        let rows = grid.par_map(&f)?;
        let mut per_part: Vec<Vec<Items>> = (0..specs.len()).map(|_| Vec::with_capacity(rows.len())).collect();
        for row in rows {
            debug_assert_eq!(row.len(), specs.len());
            for (k, items) in row.into_iter().enumerate() {
                per_part[k].push(items);
            }
        }
        Ok(specs
            .iter()
            .zip(per_part)
            .map(|(spec, rows)| summarize(spec, grid, rows, self.s.per_node))
            .collect())
    }

    fn random(&self, count: usize) -> Vec<Family> {
        self.case.random_families(count, self.s.seed)
    }

    fn jacobi_families(&self) -> Vec<&Family> {
        self.case.jacobi_families().collect()
    }

    /// Case families plus `extra` random ones.
    fn all_families(&self, extra: usize) -> Vec<Family> {
        let mut out: Vec<Family> = self.case.families.clone();
        out.extend(self.random(extra));
        out
    }

    fn harmonic(&self) -> Result<()> {
        if self.case.manifest.harmonic {
            Ok(())
        } else {
            Err(Error::Precondition(format!("{} is not harmonic", self.case.name)))
        }
    }

    fn is_sphere(&self) -> bool {
        matches!(self.case.model().kind, TargetKind::SpaceFormEmbedded { .. })
    }

    fn is_projective(&self) -> bool {
        matches!(self.case.model().kind, TargetKind::ComplexSpaceForm { .. })
    }

    fn tension(&self) -> Result<Outcome> {
        if !self.case.manifest.harmonic {
            return Ok(Outcome::NotApplicable);
        }
        let case = self.case;
        let parts = self.grid_parts(&self.grid, vec![zero("tension", self.tol().tension)], |n| {
            let g = case.map.germ(n.point, JetOrder::of(2, 2, 0), 0.0, None)?;
            let pz = var::tension_residual(&g)?;
            let real = g.norm(&var::tension_real(&g)?) / (4.0 / n.point.conformal_factor());
            Ok(vec![vec![
                ("complex".to_string(), pz),
                ("real".to_string(), nres(real, var::derivative_scale(&g)?)),
            ]])
        })?;
        Ok(Outcome::Parts(parts))
    }

    fn energy(&self) -> Result<Outcome> {
        let m = &self.case.manifest;
        let isometric: Vec<&Family> = self.case.families.iter().filter(|f| f.isometric).collect();
        if m.north_only || (m.energy.is_none() && isometric.is_empty() && !m.homogeneous) {
            return Ok(Outcome::NotApplicable);
        }
        let tol = self.tol();
        let mut parts = Vec::new();
        let base = var::energy(&self.case.map, &self.grid)?;
        if let Some(exact) = m.energy {
            let fine = QuadratureGrid::new(2 * self.grid.n_theta, 2 * self.grid.n_phi)?;
            let refined = var::energy(&self.case.map, &fine)?.energy;
            parts.push(scalar_part(
                &zero("closed-form", tol.energy),
                vec![
                    ("grid".into(), (base.energy - exact).abs()),
                    ("refined".into(), (refined - exact).abs()),
                    ("refinement-gap".into(), (refined - base.energy).abs()),
                ],
            ));
        }
        if !isometric.is_empty() {
            let mut items = Vec::new();
            for f in isometric {
                for t0 in [-0.1, 0.1] {
                    let e = var::energy_at(&f.spec, &self.grid, t0)?.energy;
                    items.push((format!("{} t={t0}", f.name), (e - base.energy).abs()));
                }
            }
            parts.push(scalar_part(&zero("isometry-invariance", tol.energy_invariance), items));
        }
        if m.homogeneous {
            let mean = base.energy / self.grid.total_weight();
            let per_node = base
                .density
                .iter()
                .map(|d| {
                    vec![(
                        "density".to_string(),
                        (d - mean).abs() / mean.abs().max(f64::MIN_POSITIVE),
                    )]
                })
                .collect();
            parts.push(summarize(
                &zero("constant-density", tol.energy_density),
                &self.grid,
                per_node,
                self.s.per_node,
            ));
        }
        Ok(Outcome::Parts(parts))
    }

    fn jacobi(&self) -> Result<Outcome> {
        let fams = self.jacobi_families();
        if fams.is_empty() {
            return Ok(Outcome::NotApplicable);
        }
        self.harmonic()?;
        let parts = self.grid_parts(&self.grid, vec![zero("jacobi-equation", self.tol().jacobi)], |n| {
            let mut items = Vec::new();
            for f in &fams {
                let (r, _) = jacobi_residual(f, n)?;
                items.push((f.name.clone(), r));
            }
            Ok(vec![items])
        })?;
        Ok(Outcome::Parts(parts))
    }

    fn linearization(&self) -> Result<Outcome> {
        self.harmonic()?;
        let fams = self.random(self.s.random_fields);
        let tol = self.tol();
        let specs = vec![
            zero("linearized-tension", tol.linearization),
            zero("complex-forms", tol.bianchi),
        ];
        let parts = self.grid_parts(&self.grid, specs, |n| {
            let (mut lin, mut bianchi) = (Vec::new(), Vec::new());
            for f in &fams {
                let g = f.spec.germ(n.point, JetOrder::of(2, 2, 1), 0.0, None)?;
                // The family germ builds its geometry first; the base germ then truncates it.
                let l = var::linearized_tension(&g)?;
                let base = g.at_t0();
                let v = g.variation_field()?;
                let jc = var::jacobi_complex(&base, &v)?;
                let jcc = var::jacobi_complex_conj(&base, &v)?;
                let scale = field_scale(&base, &v)?;
                lin.push((f.name.clone(), nres(base.norm(&jc.add(&l)), scale)));
                bianchi.push((f.name.clone(), nres(base.norm(&jc.sub(&jcc)), scale)));
            }
            Ok(vec![lin, bianchi])
        })?;
        Ok(Outcome::Parts(parts))
    }

    fn first_variation(&self) -> Result<Outcome> {
        if self.case.manifest.north_only {
            return Ok(Outcome::NotApplicable);
        }
        let mut fams = self.all_families(2);
        if !self.case.manifest.harmonic && !self.is_projective() {
            fams.push(tension_family(&self.case.map, "tension-flow")?);
        }
        let mut items = Vec::new();
        for f in &fams {
            let fv = var::first_variation(&f.spec, &self.grid)?;
            items.push((f.name.clone(), fv.residual()));
        }
        Ok(Outcome::Parts(vec![scalar_part(
            &zero("first-variation", self.tol().first_variation),
            items,
        )]))
    }

    fn hessian(&self) -> Result<Outcome> {
        if self.case.manifest.north_only {
            return Ok(Outcome::NotApplicable);
        }
        self.harmonic()?;
        let tol = self.tol().hessian;
        let rnd = self.random(2);
        let hvw = var::hessian(&rnd[0].spec, &rnd[1].spec, &self.grid)?.value;
        let hwv = var::hessian(&rnd[1].spec, &rnd[0].spec, &self.grid)?.value;
        let mut parts = vec![scalar_part(
            &zero("symmetry", tol),
            vec![(format!("{} x {}", rnd[0].name, rnd[1].name), (hvw - hwv).abs())],
        )];
        let hvv = var::hessian(&rnd[0].spec, &rnd[0].spec, &self.grid)?.value;
        let e2 = var::energy_derivative(&rnd[0].spec, &self.grid, 2)?;
        parts.push(scalar_part(
            &zero("second-variation", tol),
            vec![(rnd[0].name.clone(), (hvv - e2).abs() / (1.0 + e2.abs()))],
        ));
        let mut kernel = Vec::new();
        for f in self.jacobi_families() {
            let h = var::hessian(&f.spec, &f.spec, &self.grid)?.value;
            kernel.push((f.name.clone(), h.abs()));
        }
        if !kernel.is_empty() {
            parts.push(scalar_part(&zero("jacobi-kernel", tol), kernel));
        }
        Ok(Outcome::Parts(parts))
    }

    fn conformality(&self) -> Result<Outcome> {
        let tol = self.tol();
        let fams = self.all_families(2);
        let harmonic = self.case.manifest.harmonic;
        let mut specs = vec![zero("first-order-identity", tol.conformal_identity)];
        if harmonic {
            specs.push(zero("jacobi-fields", tol.conformality));
        }
        let parts = self.grid_parts(&self.grid, specs, |n| {
            let (mut ident, mut conf) = (Vec::new(), Vec::new());
            for f in &fams {
                let g = f.spec.germ(n.point, JetOrder::of(1, 1, 1), 0.0, None)?;
                let cf = isotropy::conformal_field_test(&g.at_t0(), &g.variation_field()?)?;
                let dt = isotropy::eta_real(&g)?.dt;
                ident.push((f.name.clone(), nres((cf.value * 2.0 - dt).norm(), cf.scale)));
                if harmonic && f.tag.is_jacobi() {
                    conf.push((f.name.clone(), nres(cf.value.norm(), cf.scale)));
                }
            }
            Ok(if harmonic { vec![ident, conf] } else { vec![ident] })
        })?;
        Ok(Outcome::Parts(parts))
    }

    fn real_isotropy(&self) -> Result<Outcome> {
        if !self.case.manifest.real_isotropic {
            return Ok(Outcome::NotApplicable);
        }
        let tol = self.tol();
        let k = self.s.rmax;
        let map = &self.case.map;
        let mut parts = self.grid_parts(&self.grid, vec![zero("eta", tol.eta)], |n| {
            let g = map.germ(n.point, isotropy::required_order(PairingKind::Real, k, 0), 0.0, None)?;
            Ok(vec![isotropy::real_isotropy(&g, k)?
                .into_iter()
                .map(|s| (format!("r={} s={}", s.r, s.s), nres(s.value.norm(), s.scale)))
                .collect()])
        })?;
        if self.is_sphere() {
            let fams = self.all_families(2);
            let harmonic = self.case.manifest.harmonic;
            let specs = vec![
                zero("j-jacobi", tol.j),
                zero("variation-identity", tol.variation_identity),
            ];
            parts.extend(self.grid_parts(&self.grid, specs, |n| {
                let (mut jj, mut ident) = (Vec::new(), Vec::new());
                for f in &fams {
                    let g = f
                        .spec
                        .germ(n.point, isotropy::required_order(PairingKind::Real, k, 1), 0.0, None)?;
                    let etas = isotropy::real_isotropy(&g, k)?;
                    let js = isotropy::j_real(&g.at_t0(), &g.variation_field()?, k)?;
                    for ((r, s), p) in js {
                        let label = format!("{} r={r} s={s}", f.name);
                        if harmonic && f.tag.is_jacobi() {
                            jj.push((label.clone(), nres(p.value.norm(), p.scale)));
                        }
                        let (a, b) = if r <= s { (r, s) } else { (s, r) };
                        let dt = etas.iter().find(|e| (e.r, e.s) == (a, b)).expect("pair").dt;
                        // η_{r,s} is symmetric; j_{r,s} pairs with it only when r ≤ s.
                        if r <= s {
                            ident.push((label, nres((p.value - dt).norm(), p.scale)));
                        }
                    }
                }
                Ok(vec![jj, ident])
            })?);
        }
        Ok(Outcome::Parts(parts))
    }

    fn theta_span(&self) -> Result<Outcome> {
        if !self.is_sphere() || !self.case.manifest.real_isotropic {
            return Ok(Outcome::NotApplicable);
        }
        self.harmonic()?;
        let fams = self.jacobi_families();
        if fams.is_empty() {
            return Ok(Outcome::NotApplicable);
        }
        let tol = self.tol().theta;
        let parts = self.grid_parts(&self.grid, vec![zero("theta-span", tol)], |n| {
            let mut items = Vec::new();
            for f in &fams {
                let g = f.spec.germ(n.point, JetOrder::of(4, 1, 1), 0.0, None)?;
                for k in 1..=3 {
                    let p = isotropy::theta_span_check(&g, k, self.tol().eta)?;
                    items.push((format!("{} k={k}", f.name), nres(p.value.re, p.scale)));
                }
            }
            Ok(vec![items])
        })?;
        Ok(Outcome::Parts(parts))
    }

    fn complex_isotropy(&self) -> Result<Outcome> {
        if !self.is_projective() {
            return Ok(Outcome::NotApplicable);
        }
        let tol = self.tol();
        let k = self.s.rmax;
        let m = self.case.manifest;
        let fams = self.all_families(1);
        let mut specs = vec![zero("variation-identity", tol.variation_identity)];
        if m.complex_isotropic {
            specs.push(zero("eta", tol.eta));
        }
        if m.harmonic {
            specs.push(zero("j-jacobi", tol.j));
        }
        let map = &self.case.map;
        let parts = self.grid_parts(&self.grid, specs, |n| {
            let (mut ident, mut jj) = (Vec::new(), Vec::new());
            let mut out = Vec::new();
            for f in &fams {
                let g = f
                    .spec
                    .germ(n.point, isotropy::value_order(PairingKind::Complex, k, 1), 0.0, None)?;
                let (etas, js) = isotropy::complex_family(&g, k)?;
                for ((r, s), p) in js {
                    let label = format!("{} r={r} s={s}", f.name);
                    let dt = etas.iter().find(|e| (e.r, e.s) == (r, s)).expect("pair").dt;
                    ident.push((label.clone(), nres((p.value - dt).norm(), p.scale)));
                    if m.harmonic && f.tag.is_jacobi() {
                        jj.push((label, nres(p.value.norm(), p.scale)));
                    }
                }
            }
            out.push(ident);
            if m.complex_isotropic {
                let g = map.germ(n.point, isotropy::value_order(PairingKind::Complex, k, 0), 0.0, None)?;
                out.push(
                    isotropy::complex_isotropy(&g, k)?
                        .into_iter()
                        .map(|s| (format!("r={} s={}", s.r, s.s), nres(s.value.norm(), s.scale)))
                        .collect(),
                );
            }
            if m.harmonic {
                out.push(jj);
            }
            Ok(out)
        })?;
        Ok(Outcome::Parts(parts))
    }

    fn holomorphic_field(&self) -> Result<Outcome> {
        if !self.is_projective() || !self.case.manifest.holomorphic {
            return Ok(Outcome::NotApplicable);
        }
        self.harmonic()?;
        let fams = self.jacobi_families();
        let map = &self.case.map;
        let parts = self.grid_parts(&self.grid, vec![zero("dbar-v-prime", self.tol().holomorphic)], |n| {
            let mut items = Vec::new();
            let g = map.germ(n.point, JetOrder::of(2, 2, 0), 0.0, None)?;
            let pz = g.d_z()?;
            let r = isotropy::holomorphic_field_residual(&g, &pz)?;
            items.push(("d phi / dz".to_string(), nres(g.norm(&r), g.norm(&pz))));
            for f in &fams {
                let g = f.spec.germ(n.point, JetOrder::of(1, 1, 1), 0.0, None)?;
                let base = g.at_t0();
                let v = g.variation_field()?;
                let r = isotropy::holomorphic_field_residual(&base, &v)?;
                items.push((f.name.clone(), nres(base.norm(&r), field_scale(&base, &v)?)));
            }
            Ok(vec![items])
        })?;
        Ok(Outcome::Parts(parts))
    }

    fn dbar(&self) -> Result<Outcome> {
        let m = self.case.manifest;
        if m.north_only || !m.real_isotropic {
            return Ok(Outcome::NotApplicable);
        }
        self.harmonic()?;
        let tol = self.tol();
        let k = self.s.rmax;
        let map = &self.case.map;
        let fams = self.jacobi_families();
        let complex = self.is_projective() && m.complex_isotropic;
        let sphere = self.is_sphere();
        let specs = vec![zero("dbar-eta", tol.dbar), zero("dbar-dt-eta", tol.dbar)];
        let mut parts = self.grid_parts(&self.grid, specs, |n| {
            let (mut base_items, mut fam_items) = (Vec::new(), Vec::new());
            let kinds: &[PairingKind] = if complex {
                &[PairingKind::Real, PairingKind::Complex]
            } else {
                &[PairingKind::Real]
            };
            for &kind in kinds {
                let tag = match kind {
                    PairingKind::Real => "real",
                    PairingKind::Complex => "complex",
                };
                let g = map.germ(n.point, isotropy::required_order(kind, k, 0), 0.0, None)?;
                for s in isotropy::dbar_of_eta(&g, kind, k)? {
                    base_items.push((format!("{tag} r={} s={}", s.r, s.s), nres(s.dbar.norm(), s.scale)));
                }
                // The real t-derivative identity needs a space form; complex pairings cover CP^n.
                if kind == PairingKind::Real && !sphere {
                    continue;
                }
                for f in &fams {
                    let g = f.spec.germ(n.point, isotropy::required_order(kind, k, 1), 0.0, None)?;
                    for s in isotropy::dbar_of_eta(&g, kind, k)? {
                        fam_items.push((
                            format!("{tag} {} r={} s={}", f.name, s.r, s.s),
                            nres(s.dbar_dt.norm(), s.scale),
                        ));
                    }
                }
            }
            Ok(vec![base_items, fam_items])
        })?;
        parts.push(self.chart_transition()?);
        Ok(Outcome::Parts(parts))
    }

    /// `η^w_{r,s} = Σ c_{r,i} c_{s,j} η^z_{i,j}` and the same for `∂_t η`, over the overlap band.
    fn chart_transition(&self) -> Result<Part> {
        let k = self.s.rmax;
        let band = QuadratureGrid {
            nodes: self.grid.overlap_band(0.5),
            ..self.grid.clone()
        };
        let mut fams = vec![Family {
            name: "map".into(),
            tag: crate::atlas::FamilyTag::NonJacobi,
            spec: self.case.map.clone(),
            isometric: false,
        }];
        fams.extend(self.random(1));
        let spec = zero("chart-transition", self.tol().transition);
        let parts = self.grid_parts(&band, vec![spec], |n| {
            let pw = n.point;
            let pz = pw.in_chart(pw.chart.other())?;
            let o = isotropy::required_order(PairingKind::Real, k, 1);
            let cs = isotropy::transition_coefficients(pw.coord, k - 1)?;
            let cs_abs: Vec<Vec<Complex64>> = cs
                .iter()
                .map(|row| row.iter().map(|c| c.norm().into()).collect())
                .collect();
            let mut items = Vec::new();
            for f in &fams {
                let ew = isotropy::real_isotropy(&f.spec.germ(pw, o, 0.0, None)?, k)?;
                let ez = isotropy::real_isotropy(&f.spec.germ(pz, o, 0.0, None)?, k)?;
                let get = |i: usize, j: usize, dt: bool| {
                    let (a, b) = if i <= j { (i, j) } else { (j, i) };
                    let s = ez.iter().find(|s| (s.r, s.s) == (a, b)).expect("pair");
                    if dt {
                        s.dt
                    } else {
                        s.value
                    }
                };
                for s in &ew {
                    for dt in [false, true] {
                        let pred = isotropy::transform_pairing(&cs, s.r, s.s, |i, j| get(i, j, dt));
                        let actual = if dt { s.dt } else { s.value };
                        // Relative to the size of the terms summed, which bounds the rounding error.
                        let terms = isotropy::transform_pairing(&cs_abs, s.r, s.s, |i, j| get(i, j, dt).norm().into());
                        let rel = (pred - actual).norm() / (1.0 + actual.norm() + terms.re);
                        let what = if dt { "dt-eta" } else { "eta" };
                        items.push((format!("{} {what} r={} s={}", f.name, s.r, s.s), rel));
                    }
                }
            }
            Ok(vec![items])
        })?;
        Ok(parts.into_iter().next().expect("one part"))
    }

    fn curvature_span(&self) -> Result<Outcome> {
        let TargetKind::ComplexSpaceForm { n: dim, .. } = self.case.model().kind else {
            return Ok(Outcome::NotApplicable);
        };
        let map = &self.case.map;
        let seed = self.s.seed;
        let parts = self.grid_parts(
            &self.grid,
            vec![zero("span-residual", self.tol().curvature_span)],
            |n| {
                let g = map.germ(n.point, JetOrder::of(3, 3, 0), 0.0, None)?;
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ n.theta.to_bits() ^ n.phi.to_bits().rotate_left(17));
                let o = JetOrder::of(0, 0, 0);
                let x = FieldGerm::new(
                    FieldKind::Complex,
                    (0..2 * dim)
                        .map(|_| {
                            Jet::constant(
                                Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
                                o,
                                n.point.coord,
                            )
                        })
                        .collect(),
                );
                let pz = g.d_z()?;
                let mut items = Vec::new();
                for k in 1..=3 {
                    let r = isotropy::curvature_span_residual(&g, &x, k)?;
                    items.push((format!("k={k}"), nres(r.value.re, r.scale)));
                }
                let r = isotropy::curvature_span_residual(&g, &pz, 2)?;
                items.push(("X = d phi / dz".into(), nres(r.value.re, r.scale)));
                Ok(vec![items])
            },
        )?;
        Ok(Outcome::Parts(parts))
    }

    fn curvature_oracle(&self) -> Result<Outcome> {
        let model = match self.case.model().kind {
            TargetKind::SpaceFormEmbedded { ambient_dim, c } => TargetModel::sphere_chart(ambient_dim - 1, c),
            TargetKind::ComplexSpaceForm { n, .. } => TargetModel::cpn(n),
            _ => return Ok(Outcome::NotApplicable),
        };
        let tol = self.tol();
        let (oracle, cyclic) = curvature_probes(&model, 200, self.s.seed)?;
        Ok(Outcome::Parts(vec![
            scalar_part(&zero("numeric-vs-closed-form", tol.curvature), oracle),
            scalar_part(&zero("bianchi", tol.bianchi_cyclic), cyclic),
        ]))
    }

    fn controls(&self) -> Result<Outcome> {
        let tol = self.tol();
        let m = self.case.manifest;
        let case = self.case;
        let mut parts = Vec::new();
        if !m.harmonic {
            parts.extend(
                self.grid_parts(&self.grid, vec![nonzero("tension", tol.control_tension)], |n| {
                    let g = case.map.germ(n.point, JetOrder::of(1, 1, 0), 0.0, None)?;
                    Ok(vec![vec![("map".to_string(), g.norm(&var::tension(&g)?))]])
                })?,
            );
        }
        if !m.real_isotropic {
            parts.extend(self.grid_parts(&self.grid, vec![nonzero("eta", tol.control_eta)], |n| {
                let g = case.map.germ(n.point, JetOrder::of(1, 1, 0), 0.0, None)?;
                Ok(vec![vec![(
                    "r=1 s=1".to_string(),
                    isotropy::eta_real(&g)?.value.norm(),
                )]])
            })?);
            if self.is_sphere() {
                let fams = self.jacobi_families();
                if !fams.is_empty() {
                    parts.extend(
                        self.grid_parts(&self.grid, vec![nonzero("theta-span", tol.control_theta)], |n| {
                            let mut items = Vec::new();
                            for f in &fams {
                                let g = f.spec.germ(n.point, JetOrder::of(4, 1, 1), 0.0, None)?;
                                for k in 2..=3 {
                                    let p = isotropy::theta_span_residual(&g, k)?;
                                    items.push((format!("{} k={k}", f.name), p.value.re));
                                }
                            }
                            Ok(vec![items])
                        })?,
                    );
                }
            }
        }
        if m.harmonic {
            let mut fams: Vec<Family> = case.controls().cloned().collect();
            fams.extend(self.random(1));
            let holo = m.holomorphic && self.is_projective();
            // A control needs one witness, so each family gets its own parts.
            for f in &fams {
                let mut specs = vec![
                    nonzero("jacobi", tol.control_jacobi),
                    nonzero("conformality", tol.control_conformality),
                ];
                if holo {
                    specs.push(nonzero("holomorphic-field", tol.control_holomorphic));
                }
                let mut ps = self.grid_parts(&self.grid, specs, |n| {
                    let (r, _) = jacobi_residual_raw(f, n)?;
                    let g = f.spec.germ(n.point, JetOrder::of(1, 1, 1), 0.0, None)?;
                    let base = g.at_t0();
                    let v = g.variation_field()?;
                    let conf = isotropy::conformal_field_test(&base, &v)?.value.norm();
                    let mut out = vec![vec![(f.name.clone(), r)], vec![(f.name.clone(), conf)]];
                    if holo {
                        let h = isotropy::holomorphic_field_residual(&base, &v)?;
                        out.push(vec![(f.name.clone(), base.norm(&h))]);
                    }
                    Ok(out)
                })?;
                for p in &mut ps {
                    p.name = format!("{} ({})", p.name, f.name);
                }
                parts.extend(ps);
            }
        }
        if parts.is_empty() {
            return Ok(Outcome::NotApplicable);
        }
        Ok(Outcome::Parts(parts))
    }
}

/// Largest norm among `v`, its first derivatives and the first derivatives of `φ`.
fn field_scale(p: &MapGerm, v: &FieldGerm) -> Result<f64> {
    let mut s = var::derivative_scale(p)?.max(p.norm(v));
    if v.order().z > 0 && v.order().zbar > 0 {
        s = s.max(p.norm(&p.cov_d(Dir::Z, v)?)).max(p.norm(&p.cov_d(Dir::Zbar, v)?));
    }
    Ok(s)
}

/// Normalized `|J(v)|` for the variation field of `f` at a node.
fn jacobi_residual(f: &Family, n: &Node) -> Result<(f64, f64)> {
    let (r, scale) = jacobi_residual_raw(f, n)?;
    Ok((nres(r, scale), scale))
}

fn jacobi_residual_raw(f: &Family, n: &Node) -> Result<(f64, f64)> {
    let g = f.spec.germ(n.point, JetOrder::of(2, 2, 1), 0.0, None)?;
    let base = g.at_t0();
    let v = g.variation_field()?;
    let j = var::jacobi_real(&base, &v)?;
    Ok((base.norm(&j), field_scale(&base, &v)?))
}

/// Random probes of closed-form against metric-derived curvature, and of the cyclic sum.
pub fn curvature_probes(model: &TargetModel, count: usize, seed: u64) -> Result<(Items, Items)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let dim = model.ncoords();
    let kahler = model.is_kahler();
    let half = dim / 2;
    let mut oracle = Vec::with_capacity(count);
    let mut cyclic = Vec::with_capacity(count);
    let o = JetOrder::of(0, 0, 0);
    for i in 0..count {
        let mut point: Vec<Complex64> = (0..dim)
            .map(|_| Complex64::new(rng.gen_range(-0.6..0.6), 0.0))
            .collect();
        if kahler {
            for k in 0..half {
                point[k].im = rng.gen_range(-0.6..0.6);
                point[half + k] = point[k].conj();
            }
        }
        let mut vec3 = || -> Vec<Complex64> {
            (0..dim)
                .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect()
        };
        let (x, y, z) = (vec3(), vec3(), vec3());
        let numeric = curvature_numeric(model, &point, &x, &y, &z)?;
        let jet = |v: &[Complex64]| -> Vec<Jet> {
            v.iter()
                .map(|&c| Jet::constant(c, o, Complex64::new(0.0, 0.0)))
                .collect()
        };
        let coords = jet(&point);
        let closed = |a: &[Complex64], b: &[Complex64], c: &[Complex64]| -> Result<Vec<Complex64>> {
            Ok(model
                .curvature(&coords, None, &jet(a), &jet(b), &jet(c))?
                .iter()
                .map(Jet::value)
                .collect())
        };
        let r1 = closed(&x, &y, &z)?;
        let norm = |v: &[Complex64]| v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        let diff: Vec<Complex64> = numeric.iter().zip(&r1).map(|(a, b)| a - b).collect();
        oracle.push((format!("probe {i}"), norm(&diff) / (1.0 + norm(&r1))));
        let r2 = closed(&y, &z, &x)?;
        let r3 = closed(&z, &x, &y)?;
        let sum: Vec<Complex64> = (0..dim).map(|k| r1[k] + r2[k] + r3[k]).collect();
        let scale = norm(&r1).max(norm(&r2)).max(norm(&r3));
        cyclic.push((format!("probe {i}"), norm(&sum) / (1.0 + scale)));
    }
    Ok((oracle, cyclic))
}
