//! Closed-form harmonic maps, their variations, and designed non-examples.
//!
//! Maps are written on homogeneous coordinates `(U₀, U₁)` of the domain so one formula
//! serves both charts. A sphere-valued map returns an ambient vector that is normalized
//! afterwards; a CPⁿ-valued map returns homogeneous coordinates that are divided by
//! their largest entry at each node; flat maps return their components directly.

use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::domain::{DomainPoint, Homogeneous};
use crate::error::{Error, Result};
use crate::jet::{Jet, JetOrder};
use crate::pullback::MapGerm;
use crate::target::{embed_project, euclidean, TargetKind, TargetModel};

/// Raw components of a map at homogeneous coordinates.
pub type BaseFn = Arc<dyn Fn(&Homogeneous) -> Vec<Jet> + Send + Sync>;
/// Raw components of a family at parameter `t0 + s`.
pub type FamilyFn = Arc<dyn Fn(&Homogeneous, f64, &Jet) -> Vec<Jet> + Send + Sync>;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// A map or one-parameter family into a target, evaluable as jets at any domain point.
#[derive(Clone)]
pub struct MapSpec {
    pub model: Arc<TargetModel>,
    raw: FamilyFn,
    /// Bidegree of the raw components in `(U, Ū)`.
    pub bidegree: (usize, usize),
}

impl fmt::Debug for MapSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MapSpec")
            .field("model", &self.model.label())
            .field("bidegree", &self.bidegree)
            .finish()
    }
}

impl MapSpec {
    pub fn from_base(model: TargetModel, bidegree: (usize, usize), base: BaseFn) -> Self {
        Self {
            model: Arc::new(model),
            raw: Arc::new(move |h: &Homogeneous, _t0: f64, _s: &Jet| base(h)),
            bidegree,
        }
    }

    pub fn from_family(model: Arc<TargetModel>, bidegree: (usize, usize), raw: FamilyFn) -> Self {
        Self { model, raw, bidegree }
    }

    /// Raw components at parameter `t0` (the family variable is `t = t0 + s`).
    pub fn raw(&self, h: &Homogeneous, t0: f64) -> Vec<Jet> {
        let o = h.order();
        let s = Jet::var_t(o, h.base());
        (self.raw)(h, t0, &s)
    }

    /// The map (or family) as a germ at `point`.
    ///
    /// For CPⁿ targets `chart` forces the affine chart; `None` picks the chart in which
    /// the point is farthest from the hyperplane at infinity.
    pub fn germ(&self, point: DomainPoint, order: JetOrder, t0: f64, chart: Option<usize>) -> Result<MapGerm> {
        // Conjugate components swap the z and z̄ orders, so Kähler germs start symmetric.
        let kahler = matches!(self.model.kind, TargetKind::ComplexSpaceForm { .. });
        let full = if kahler && order.z != order.zbar {
            let m = order.z.max(order.zbar);
            JetOrder::new(m, m, order.t)?
        } else {
            order
        };
        let h = point.homogeneous(full);
        let raw = self.raw(&h, t0);
        match self.model.kind {
            TargetKind::SpaceFormEmbedded { c, .. } => {
                let comps = embed_project(c, &raw).map_err(|e| at_node(e, point))?;
                MapGerm::new(self.model.clone(), point, comps, None)
            }
            TargetKind::ComplexSpaceForm { n, .. } => {
                if raw.len() != n + 1 {
                    return Err(Error::Mismatch(format!(
                        "{} homogeneous components for CP^{n}",
                        raw.len()
                    )));
                }
                let k = match chart {
                    Some(k) => k,
                    None => best_chart(&raw, point)?,
                };
                let comps = affine_chart(&raw, k, point)?;
                let g = MapGerm::new(self.model.clone(), point, comps, Some(k))?;
                Ok(if full == order { g } else { g.truncate(order) })
            }
            _ => MapGerm::new(self.model.clone(), point, raw, None),
        }
    }
}

fn at_node(e: Error, point: DomainPoint) -> Error {
    Error::Setup(format!(
        "{e} at node {:?} ({:.6}, {:.6})",
        point.chart, point.coord.re, point.coord.im
    ))
}

fn best_chart(raw: &[Jet], point: DomainPoint) -> Result<usize> {
    let norms: Vec<f64> = raw.iter().map(|r| r.value().norm()).collect();
    let total = norms.iter().map(|x| x * x).sum::<f64>().sqrt();
    let (k, &m) = norms
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("nonempty");
    if m <= 1e-12 * total.max(f64::MIN_POSITIVE) || total == 0.0 {
        return Err(at_node(
            Error::DegenerateInput("base point of the rational curve".into()),
            point,
        ));
    }
    Ok(k)
}

/// Minimum distance margin from the hyperplane at infinity, in affine coordinates.
pub const CHART_MARGIN: f64 = 0.05;

fn affine_chart(raw: &[Jet], k: usize, point: DomainPoint) -> Result<Vec<Jet>> {
    let pk = raw[k].value();
    let total = raw.iter().map(|r| r.value().norm_sqr()).sum::<f64>().sqrt();
    if pk.norm() < CHART_MARGIN * total {
        return Err(at_node(
            Error::ChartDomain(format!("too close to the hyperplane at infinity of chart {k}")),
            point,
        ));
    }
    let inv = raw[k].recip()?;
    let invb = inv.conjugate();
    let mut w = Vec::with_capacity(2 * (raw.len() - 1));
    for (i, r) in raw.iter().enumerate() {
        if i != k {
            w.push(r * &inv);
        }
    }
    for (i, r) in raw.iter().enumerate() {
        if i != k {
            w.push(&r.conjugate() * &invb);
        }
    }
    Ok(w)
}

/// How a family relates to the second variation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyTag {
    /// Variation through harmonic maps (target isometries, holomorphic coefficient changes).
    Jacobi,
    /// Composition with conformal automorphisms of the domain.
    Reparametrization,
    /// A variation whose field is not a Jacobi field.
    NonJacobi,
}

impl FamilyTag {
    pub fn is_jacobi(self) -> bool {
        !matches!(self, FamilyTag::NonJacobi)
    }
}

#[derive(Clone, Debug)]
pub struct Family {
    pub name: String,
    pub tag: FamilyTag,
    pub spec: MapSpec,
    /// Set for isometry flows, along which the energy is constant.
    pub isometric: bool,
}

/// Properties the verification suite asserts for a case.
#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct Manifest {
    pub harmonic: bool,
    pub conformal: bool,
    pub real_isotropic: bool,
    pub complex_isotropic: bool,
    pub holomorphic: bool,
    /// Closed-form energy, when known.
    pub energy: Option<f64>,
    /// Evaluate only on the north hemisphere (maps defined on a chart patch).
    pub north_only: bool,
    /// Energy density is constant (the map is equivariant under a transitive group).
    pub homogeneous: bool,
}

#[derive(Clone, Debug)]
pub struct AtlasCase {
    pub name: String,
    pub description: String,
    pub map: MapSpec,
    pub families: Vec<Family>,
    pub manifest: Manifest,
}

impl AtlasCase {
    pub fn model(&self) -> &Arc<TargetModel> {
        &self.map.model
    }

    pub fn jacobi_families(&self) -> impl Iterator<Item = &Family> {
        self.families.iter().filter(|f| f.tag.is_jacobi())
    }

    pub fn controls(&self) -> impl Iterator<Item = &Family> {
        self.families.iter().filter(|f| !f.tag.is_jacobi())
    }

    /// `count` smooth non-Jacobi variations with random coefficients.
    pub fn random_families(&self, count: usize, seed: u64) -> Vec<Family> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fxhash(&self.name));
        (0..count)
            .map(|i| Family {
                name: format!("random-{i}"),
                tag: FamilyTag::NonJacobi,
                spec: random_perturbation(&self.map, &mut rng, 0.5),
                isometric: false,
            })
            .collect()
    }
}

fn fxhash(s: &str) -> u64 {
    s.bytes()
        .fold(0xcbf29ce484222325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100000001b3))
}

// ---------------------------------------------------------------------------------------
// Families.

/// `exp(t0 A)(I + sA + s²A²/2)`, the flow of `A` as a `t`-jet about `t0`.
fn flow_terms(a: &[Complex64], n: usize, t0: f64) -> [Vec<Complex64>; 3] {
    let m0 = expm(a, n, t0);
    let m1 = matmul(&m0, a, n);
    let m2: Vec<Complex64> = matmul(&m1, a, n).into_iter().map(|x| x * 0.5).collect();
    [m0, m1, m2]
}

fn apply_flow(terms: &[Vec<Complex64>; 3], n: usize, v: &[Jet], s: &Jet, conj: bool) -> Vec<Jet> {
    let s2 = s * s;
    (0..n)
        .map(|i| {
            let mut acc = Jet::zero(v[0].order(), v[0].base());
            for (p, m) in terms.iter().enumerate() {
                let mut row = Jet::zero(v[0].order(), v[0].base());
                for j in 0..n {
                    let x = if conj { m[i * n + j].conj() } else { m[i * n + j] };
                    if x != ZERO {
                        row = row.add_scaled(x, &v[j]);
                    }
                }
                acc += &match p {
                    0 => row,
                    1 => &row * s,
                    _ => &row * &s2,
                };
            }
            acc
        })
        .collect()
}

fn matmul(a: &[Complex64], b: &[Complex64], n: usize) -> Vec<Complex64> {
    let mut out = vec![ZERO; n * n];
    for i in 0..n {
        for k in 0..n {
            let x = a[i * n + k];
            for j in 0..n {
                out[i * n + j] += x * b[k * n + j];
            }
        }
    }
    out
}

/// Matrix exponential `exp(tA)` by scaling and squaring of the Taylor series.
pub fn expm(a: &[Complex64], n: usize, t: f64) -> Vec<Complex64> {
    let norm: f64 = a.iter().map(|x| x.norm()).sum::<f64>() * t.abs();
    let mut squarings = 0;
    let mut scale = t;
    while norm * (scale / t).abs() > 0.5 && squarings < 60 {
        scale *= 0.5;
        squarings += 1;
    }
    let a: Vec<Complex64> = a.iter().map(|x| x * scale).collect();
    let mut out: Vec<Complex64> = (0..n * n).map(|ij| if ij / n == ij % n { ONE } else { ZERO }).collect();
    let mut term = out.clone();
    for k in 1..30 {
        term = matmul(&term, &a, n).into_iter().map(|x| x / k as f64).collect();
        for (o, t) in out.iter_mut().zip(&term) {
            *o += t;
        }
    }
    for _ in 0..squarings {
        out = matmul(&out, &out, n);
    }
    out
}

/// Target isometry flow `φ_t = exp(tA)·φ`.
///
/// `A` must be real skew-symmetric for spheres and skew-Hermitian for CPⁿ.
pub fn isometry_family(map: &MapSpec, name: &str, generator: Vec<Complex64>) -> Result<Family> {
    let n = ((generator.len() as f64).sqrt()) as usize;
    if n * n != generator.len() {
        return Err(Error::Setup("generator must be square".into()));
    }
    let ok = match map.model.kind {
        TargetKind::SpaceFormEmbedded { ambient_dim, .. } => {
            n == ambient_dim
                && (0..n).all(|i| {
                    (0..n).all(|j| {
                        let (x, y) = (generator[i * n + j], generator[j * n + i]);
                        x.im == 0.0 && (x + y).norm() <= 1e-14
                    })
                })
        }
        TargetKind::ComplexSpaceForm { n: m, .. } => {
            n == m + 1
                && (0..n).all(|i| (0..n).all(|j| (generator[i * n + j] + generator[j * n + i].conj()).norm() <= 1e-14))
        }
        _ => false,
    };
    if !ok {
        return Err(Error::Setup(format!(
            "{name}: generator is not an infinitesimal isometry of {}",
            map.model.label()
        )));
    }
    let base = map.raw.clone();
    let raw: FamilyFn = Arc::new(move |h: &Homogeneous, t0: f64, s: &Jet| {
        let p = base(h, 0.0, &Jet::zero(s.order(), s.base()));
        let terms = flow_terms(&generator, n, t0);
        apply_flow(&terms, n, &p, s, false)
    });
    Ok(Family {
        name: name.to_string(),
        tag: FamilyTag::Jacobi,
        spec: MapSpec::from_family(map.model.clone(), map.bidegree, raw),
        isometric: true,
    })
}

/// Precomposition with the Möbius flow `U ↦ exp(tB)U` of the domain.
pub fn mobius_family(map: &MapSpec, name: &str, generator: [Complex64; 4]) -> Family {
    let base = map.raw.clone();
    let raw: FamilyFn = Arc::new(move |h: &Homogeneous, t0: f64, s: &Jet| {
        let terms = flow_terms(&generator, 2, t0);
        let u = apply_flow(&terms, 2, &h.u, s, false);
        let ub = apply_flow(&terms, 2, &h.ub, s, true);
        let moved = Homogeneous {
            chart: h.chart,
            u: [u[0].clone(), u[1].clone()],
            ub: [ub[0].clone(), ub[1].clone()],
        };
        base(&moved, 0.0, &Jet::zero(s.order(), s.base()))
    });
    Family {
        name: name.to_string(),
        tag: FamilyTag::Reparametrization,
        spec: MapSpec::from_family(map.model.clone(), map.bidegree, raw),
        isometric: false,
    }
}

/// `raw + t·Q` for a raw direction `Q` of the same bidegree.
pub fn linear_family(map: &MapSpec, name: &str, tag: FamilyTag, direction: BaseFn) -> Family {
    let base = map.raw.clone();
    let raw: FamilyFn = Arc::new(move |h: &Homogeneous, t0: f64, s: &Jet| {
        let p = base(h, 0.0, &Jet::zero(s.order(), s.base()));
        let q = direction(h);
        let t = s + Complex64::new(t0, 0.0);
        p.iter().zip(&q).map(|(a, b)| a + &(&t * b)).collect()
    });
    Family {
        name: name.to_string(),
        tag,
        spec: MapSpec::from_family(map.model.clone(), map.bidegree, raw),
        isometric: false,
    }
}

/// Sphere-valued family `φ + t·Q(x)`, with `Q` a function of the domain point `x ∈ S²`.
pub fn sphere_perturbation(
    map: &MapSpec,
    name: &str,
    tag: FamilyTag,
    q: Arc<dyn Fn(&[Jet; 3]) -> Vec<Jet> + Send + Sync>,
) -> Family {
    let base = map.raw.clone();
    let raw: FamilyFn = Arc::new(move |h: &Homogeneous, t0: f64, s: &Jet| {
        let p = base(h, 0.0, &Jet::zero(s.order(), s.base()));
        let scale = euclidean(&p, &p).sqrt().expect("raw sphere maps never vanish");
        let t = &(s + Complex64::new(t0, 0.0)) * &scale;
        let qx = q(&h.unit_position());
        p.iter().zip(&qx).map(|(a, b)| a + &(&t * b)).collect()
    });
    Family {
        name: name.to_string(),
        tag,
        spec: MapSpec::from_family(map.model.clone(), map.bidegree, raw),
        isometric: false,
    }
}

fn random_perturbation(map: &MapSpec, rng: &mut ChaCha8Rng, amp: f64) -> MapSpec {
    let name = "random";
    match map.model.kind {
        TargetKind::SpaceFormEmbedded { ambient_dim, .. } => {
            let m = ambient_dim;
            let a: Vec<f64> = (0..m).map(|_| rng.gen_range(-amp..amp)).collect();
            let b: Vec<f64> = (0..3 * m).map(|_| rng.gen_range(-amp..amp)).collect();
            let cq: Vec<f64> = (0..9 * m).map(|_| rng.gen_range(-amp..amp)).collect();
            let q = Arc::new(move |x: &[Jet; 3]| -> Vec<Jet> {
                (0..m)
                    .map(|i| {
                        let mut acc = Jet::constant(c(a[i], 0.0), x[0].order(), x[0].base());
                        for j in 0..3 {
                            acc = acc.add_scaled(c(b[3 * i + j], 0.0), &x[j]);
                            for k in 0..3 {
                                acc += &(&x[j] * &x[k]).scale_re(cq[9 * i + 3 * j + k]);
                            }
                        }
                        acc
                    })
                    .collect()
            });
            sphere_perturbation(map, name, FamilyTag::NonJacobi, q).spec
        }
        TargetKind::ComplexSpaceForm { n, .. } => {
            let (d, e) = map.bidegree;
            let coeffs: Vec<Complex64> = (0..(n + 1) * (d + 2) * (e + 2))
                .map(|_| c(rng.gen_range(-amp..amp), rng.gen_range(-amp..amp)))
                .collect();
            let base = map.raw.clone();
            let raw: FamilyFn = Arc::new(move |h: &Homogeneous, t0: f64, s: &Jet| {
                let p = base(h, 0.0, &Jet::zero(s.order(), s.base()));
                let norm = h.norm_sqr();
                let t = s + Complex64::new(t0, 0.0);
                let q = bihomogeneous(h, d + 1, e + 1, n + 1, &coeffs);
                p.iter().zip(&q).map(|(a, b)| &(a * &norm) + &(&t * b)).collect()
            });
            MapSpec::from_family(map.model.clone(), (d + 1, e + 1), raw)
        }
        _ => {
            let m = map.model.ncoords();
            let coeffs: Vec<Complex64> = (0..m * 4)
                .map(|_| c(rng.gen_range(-amp..amp), rng.gen_range(-amp..amp)))
                .collect();
            let f = move |h: &Homogeneous| -> Vec<Jet> {
                let (z, zb) = h.north_coordinate().expect("flat cases live on the north chart");
                let mono = [Jet::constant(ONE, z.order(), z.base()), z.clone(), &z * &z, &z * &zb];
                (0..m)
                    .map(|i| {
                        let mut acc = Jet::zero(z.order(), z.base());
                        for (k, mk) in mono.iter().enumerate() {
                            let t = mk.scale(coeffs[4 * i + k]);
                            acc += &(&t + &t.conjugate());
                        }
                        acc
                    })
                    .collect()
            };
            linear_family(map, name, FamilyTag::NonJacobi, Arc::new(f)).spec
        }
    }
}

/// `Σ coeffs · U^α Ū^β` over all monomials with `|α| = d`, `|β| = e`, for `m` components.
fn bihomogeneous(h: &Homogeneous, d: usize, e: usize, m: usize, coeffs: &[Complex64]) -> Vec<Jet> {
    let pw = |x: &Jet, k: usize| -> Jet {
        let mut r = Jet::constant(ONE, x.order(), x.base());
        for _ in 0..k {
            r = &r * x;
        }
        r
    };
    let mut monos = Vec::new();
    for a in 0..=d {
        for b in 0..=e {
            let m = &(&pw(&h.u[0], a) * &pw(&h.u[1], d - a)) * &(&pw(&h.ub[0], b) * &pw(&h.ub[1], e - b));
            monos.push(m);
        }
    }
    (0..m)
        .map(|i| {
            let mut acc = Jet::zero(h.order(), h.base());
            for (k, mo) in monos.iter().enumerate() {
                acc = acc.add_scaled(coeffs[i * monos.len() + k], mo);
            }
            acc
        })
        .collect()
}

/// Raw direction `(0, …, 0, U₀^{d+1} Ū₁)` scaled against `raw·|U|²`: an anti-holomorphic bend.
pub fn antiholomorphic_family(map: &MapSpec, name: &str) -> Family {
    let base = map.raw.clone();
    let (d, e) = map.bidegree;
    let raw: FamilyFn = Arc::new(move |h: &Homogeneous, t0: f64, s: &Jet| {
        let p = base(h, 0.0, &Jet::zero(s.order(), s.base()));
        let norm = h.norm_sqr();
        let t = s + Complex64::new(t0, 0.0);
        let mut q = &h.ub[1] * &h.u[0];
        for _ in 0..d {
            q = &q * &h.u[0];
        }
        for _ in 0..e {
            q = &q * &h.ub[0];
        }
        let last = p.len() - 1;
        p.iter()
            .enumerate()
            .map(|(i, a)| {
                let scaled = a * &norm;
                if i == last {
                    &scaled + &(&t * &q)
                } else {
                    scaled
                }
            })
            .collect()
    });
    Family {
        name: name.to_string(),
        tag: FamilyTag::NonJacobi,
        spec: MapSpec::from_family(map.model.clone(), (d + 1, e + 1), raw),
        isometric: false,
    }
}

/// `φ + t·τ(φ)`, the family moving along the tension field (sphere and flat targets).
pub fn tension_family(map: &MapSpec, name: &str) -> Result<Family> {
    if matches!(map.model.kind, TargetKind::ComplexSpaceForm { .. }) {
        return Err(Error::UnsupportedTarget("tension flow on projective targets".into()));
    }
    let base = map.clone();
    let raw: FamilyFn = Arc::new(move |h: &Homogeneous, t0: f64, s: &Jet| {
        let o = h.order();
        let g = base
            .germ(h.point(), JetOrder::of(o.z + 1, o.zbar + 1, 0), 0.0, None)
            .expect("base map is evaluable wherever the family is");
        let tau = crate::variational::tension(&g).expect("order suffices");
        let phi = g.truncate(o.with_t(0));
        let t = s + Complex64::new(t0, 0.0);
        phi.comps()
            .iter()
            .zip(&tau.comps)
            .map(|(a, b)| &a.lift_t(o.t) + &(&t * &b.lift_t(o.t)))
            .collect()
    });
    Ok(Family {
        name: name.to_string(),
        tag: FamilyTag::NonJacobi,
        spec: MapSpec::from_family(map.model.clone(), map.bidegree, raw),
        isometric: false,
    })
}

// ---------------------------------------------------------------------------------------
// Maps.

fn position_map() -> BaseFn {
    Arc::new(|h: &Homogeneous| h.position().to_vec())
}

fn veronese_s4_map() -> BaseFn {
    let r3 = 3f64.sqrt();
    Arc::new(move |h: &Homogeneous| {
        let [x, y, z] = h.position();
        let (xx, yy, zz) = (&x * &x, &y * &y, &z * &z);
        vec![
            (&x * &y).scale_re(r3),
            (&x * &z).scale_re(r3),
            (&y * &z).scale_re(r3),
            (&xx - &yy).scale_re(r3 / 2.0),
            (&(&zz.scale_re(2.0) - &xx) - &yy).scale_re(0.5),
        ]
    })
}

/// Holomorphic curve `[p₀(U) : … : pₙ(U)]` from coefficient rows: `p_i = Σ_a coeffs[i][a] U₀^{d−a} U₁^a`.
pub fn make_rational_map(name: &str, coeffs: Vec<Vec<Complex64>>) -> Result<AtlasCase> {
    let n = coeffs
        .len()
        .checked_sub(1)
        .filter(|&n| n >= 1)
        .ok_or_else(|| Error::Setup("a rational curve needs at least two homogeneous components".into()))?;
    let d = coeffs.iter().map(|r| r.len()).max().unwrap_or(0).saturating_sub(1);
    if d == 0 {
        return Err(Error::Setup("constant curve".into()));
    }
    let rows: Vec<Vec<Complex64>> = coeffs
        .into_iter()
        .map(|mut r| {
            r.resize(d + 1, ZERO);
            r
        })
        .collect();
    if (0..=d).all(|a| rows.iter().all(|r| r[a] == ZERO)) {
        return Err(Error::Setup("zero curve".into()));
    }
    let map_rows = rows.clone();
    let base: BaseFn = Arc::new(move |h: &Homogeneous| {
        let mut p0 = vec![Jet::constant(ONE, h.order(), h.base())];
        let mut p1 = vec![Jet::constant(ONE, h.order(), h.base())];
        for k in 1..=d {
            p0.push(&p0[k - 1] * &h.u[0]);
            p1.push(&p1[k - 1] * &h.u[1]);
        }
        map_rows
            .iter()
            .map(|row| {
                let mut acc = Jet::zero(h.order(), h.base());
                for (a, &co) in row.iter().enumerate() {
                    if co != ZERO {
                        acc = acc.add_scaled(co, &(&p0[d - a] * &p1[a]));
                    }
                }
                acc
            })
            .collect()
    });
    let map = MapSpec::from_base(TargetModel::cpn(n), (d, 0), base);
    let mut families = Vec::new();
    // diag(i, −i, …) on the first and last homogeneous coordinates.
    let mut gen = vec![ZERO; (n + 1) * (n + 1)];
    gen[0] = I;
    gen[(n + 1) * (n + 1) - 1] = -I;
    families.push(isometry_family(&map, "unitary-diag", gen)?);
    // Generic skew-Hermitian generator.
    let mut rng = ChaCha8Rng::seed_from_u64(fxhash(name));
    let mut gen = vec![ZERO; (n + 1) * (n + 1)];
    for i in 0..=n {
        gen[i * (n + 1) + i] = c(0.0, rng.gen_range(-1.0..1.0));
        for j in i + 1..=n {
            let x = c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            gen[i * (n + 1) + j] = x;
            gen[j * (n + 1) + i] = -x.conj();
        }
    }
    families.push(isometry_family(&map, "unitary-generic", gen)?);
    // Holomorphic coefficient change: add U₀^d to the last component.
    let shift: BaseFn = Arc::new(move |h: &Homogeneous| {
        let mut out = vec![Jet::zero(h.order(), h.base()); n + 1];
        let mut u = Jet::constant(ONE, h.order(), h.base());
        for _ in 0..d {
            u = &u * &h.u[0];
        }
        out[n] = u;
        out
    });
    families.push(linear_family(&map, "coefficient-shift", FamilyTag::Jacobi, shift));
    let scale_rows = rows.clone();
    let scale: BaseFn = Arc::new(move |h: &Homogeneous| {
        let mut out = vec![Jet::zero(h.order(), h.base()); n + 1];
        let mut p0 = vec![Jet::constant(ONE, h.order(), h.base())];
        let mut p1 = vec![Jet::constant(ONE, h.order(), h.base())];
        for k in 1..=d {
            p0.push(&p0[k - 1] * &h.u[0]);
            p1.push(&p1[k - 1] * &h.u[1]);
        }
        for (a, &co) in scale_rows[n].iter().enumerate() {
            if co != ZERO {
                out[n] = out[n].add_scaled(co, &(&p0[d - a] * &p1[a]));
            }
        }
        out
    });
    families.push(linear_family(&map, "coefficient-scale", FamilyTag::Jacobi, scale));
    families.push(mobius_family(&map, "mobius-translate", [ZERO, ZERO, ONE, ZERO]));
    families.push(mobius_family(
        &map,
        "mobius-rotate-dilate",
        [c(0.5, 0.3), ZERO, ZERO, c(-0.5, -0.3)],
    ));
    families.push(antiholomorphic_family(&map, "antiholomorphic"));
    Ok(AtlasCase {
        name: name.to_string(),
        description: format!("holomorphic curve of degree {d} into CP^{n}"),
        map,
        families,
        manifest: Manifest {
            harmonic: true,
            conformal: true,
            real_isotropic: true,
            complex_isotropic: true,
            holomorphic: true,
            energy: if n == 1 { Some(d as f64 * PI) } else { None },
            north_only: false,
            homogeneous: d == 1 && n == 1,
        },
    })
}

fn sphere_case(name: &str, description: &str, ambient: usize, bidegree: (usize, usize), base: BaseFn) -> AtlasCase {
    let map = MapSpec::from_base(TargetModel::sphere(ambient, 1.0), bidegree, base);
    AtlasCase {
        name: name.to_string(),
        description: description.to_string(),
        map,
        families: Vec::new(),
        manifest: Manifest {
            harmonic: true,
            conformal: true,
            real_isotropic: true,
            ..Manifest::default()
        },
    }
}

fn skew(n: usize, entries: &[(usize, usize, f64)]) -> Vec<Complex64> {
    let mut a = vec![ZERO; n * n];
    for &(i, j, v) in entries {
        a[i * n + j] = c(v, 0.0);
        a[j * n + i] = c(-v, 0.0);
    }
    a
}

/// Identity map of the unit sphere.
pub fn make_identity_s2() -> AtlasCase {
    let mut case = sphere_case(
        "identity-s2",
        "identity map of the unit 2-sphere",
        3,
        (1, 1),
        position_map(),
    );
    case.manifest.energy = Some(4.0 * PI);
    case.manifest.homogeneous = true;
    let m = &case.map;
    case.families = vec![
        isometry_family(m, "rotation-e3", skew(3, &[(0, 1, -1.0)])).unwrap(),
        isometry_family(
            m,
            "rotation-generic",
            skew(3, &[(0, 1, 0.3), (0, 2, -0.7), (1, 2, 0.5)]),
        )
        .unwrap(),
        mobius_family(m, "mobius-translate", [ZERO, ZERO, ONE, ZERO]),
        mobius_family(m, "mobius-dilate", [c(0.5, 0.0), ZERO, ZERO, c(-0.5, 0.0)]),
    ];
    case
}

/// The classical isotropic Veronese immersion of S² into the unit S⁴.
pub fn make_veronese_s4() -> AtlasCase {
    let mut case = sphere_case(
        "veronese-s4",
        "degree-2 Veronese immersion into the unit 4-sphere",
        5,
        (2, 2),
        veronese_s4_map(),
    );
    case.manifest.energy = Some(12.0 * PI);
    case.manifest.homogeneous = true;
    let m = &case.map;
    case.families = vec![
        isometry_family(m, "rotation-a", skew(5, &[(0, 3, 1.0), (1, 4, -0.5)])).unwrap(),
        isometry_family(
            m,
            "rotation-generic",
            skew(
                5,
                &[
                    (0, 1, 0.4),
                    (0, 4, -0.2),
                    (1, 2, 0.9),
                    (2, 3, -0.6),
                    (3, 4, 0.3),
                    (1, 3, 0.1),
                ],
            ),
        )
        .unwrap(),
        mobius_family(m, "mobius-translate", [ZERO, ZERO, ONE, ZERO]),
        bump_control(m),
    ];
    case
}

/// Bump-localized field `a·exp(−8|x − x₀|²)` along a sphere-valued map.
fn bump_control(map: &MapSpec) -> Family {
    let amp = [0.3, -0.2, 0.5, 0.1, -0.4];
    let x0 = {
        let (th, ph) = (1.1f64, 0.7f64);
        [th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos()]
    };
    let m = map.model.ncoords();
    let q = Arc::new(move |x: &[Jet; 3]| -> Vec<Jet> {
        let mut r2 = Jet::zero(x[0].order(), x[0].base());
        for k in 0..3 {
            let d = &x[k] + c(-x0[k], 0.0);
            r2.add_product(&d, &d);
        }
        let b = r2.scale_re(-8.0).exp();
        (0..m).map(|i| b.scale_re(amp[i % amp.len()])).collect()
    });
    sphere_perturbation(map, "bump", FamilyTag::NonJacobi, q)
}

/// Non-isotropic control into S⁴: the Veronese map bent by a fixed smooth perturbation.
pub fn make_bent_veronese_s4() -> AtlasCase {
    let ver = make_veronese_s4();
    let q = Arc::new(|x: &[Jet; 3]| -> Vec<Jet> {
        vec![
            x[0].scale_re(0.4),
            (&x[1] * &x[2]).scale_re(0.5),
            Jet::constant(c(0.2, 0.0), x[0].order(), x[0].base()),
            (&x[0] * &x[0]).scale_re(-0.3),
            x[2].scale_re(0.3),
        ]
    });
    let bent = sphere_perturbation(&ver.map, "bend", FamilyTag::NonJacobi, q);
    let fixed = bent.spec.clone();
    let base: FamilyFn = Arc::new(move |h: &Homogeneous, _t0: f64, s: &Jet| {
        fixed.raw(h, 1.0).into_iter().map(|j| j.truncate(s.order())).collect()
    });
    let map = MapSpec::from_family(ver.map.model.clone(), (2, 2), base);
    let mut case = AtlasCase {
        name: "bent-veronese-s4".into(),
        description: "non-isotropic perturbation of the Veronese map (control)".into(),
        map,
        families: Vec::new(),
        manifest: Manifest::default(),
    };
    case.families = vec![isometry_family(&case.map, "rotation-a", skew(5, &[(0, 3, 1.0), (1, 4, -0.5)])).unwrap()];
    case
}

/// Harmonic, non-holomorphic map into CP² from the Veronese sequence:
/// `[−√2 z̄ : 1 − |z|² : √2 z]`.
pub fn make_veronese_sequence_cp2() -> AtlasCase {
    let base: BaseFn = Arc::new(|h: &Homogeneous| {
        vec![
            (&h.u[0] * &h.ub[1]).scale_re(-SQRT_2),
            &(&h.u[0] * &h.ub[0]) - &(&h.u[1] * &h.ub[1]),
            (&h.u[1] * &h.ub[0]).scale_re(SQRT_2),
        ]
    });
    let map = MapSpec::from_base(TargetModel::cpn(2), (1, 1), base);
    let gen = vec![
        c(0.0, 0.4),
        c(0.3, -0.2),
        c(0.1, 0.5),
        c(-0.3, -0.2),
        c(0.0, -0.1),
        c(-0.6, 0.2),
        c(-0.1, 0.5),
        c(0.6, 0.2),
        c(0.0, 0.7),
    ];
    let families = vec![
        isometry_family(&map, "unitary-generic", gen).unwrap(),
        mobius_family(&map, "mobius-translate", [ZERO, ZERO, ONE, ZERO]),
        mobius_family(&map, "mobius-rotate-dilate", [c(0.5, 0.3), ZERO, ZERO, c(-0.5, -0.3)]),
    ];
    AtlasCase {
        name: "veronese-seq-cp2".into(),
        description: "second map of the Veronese sequence into CP^2 (harmonic, not holomorphic)".into(),
        map,
        families,
        manifest: Manifest {
            harmonic: true,
            conformal: true,
            real_isotropic: true,
            complex_isotropic: true,
            holomorphic: false,
            energy: None,
            north_only: false,
            homogeneous: false,
        },
    }
}

fn flat_case(name: &str, description: &str, f: impl Fn(&Jet, &Jet) -> Jet + Send + Sync + 'static) -> AtlasCase {
    let base: BaseFn = Arc::new(move |h: &Homogeneous| {
        let (z, zb) = h.north_coordinate().expect("flat cases live on the north chart");
        let w = f(&z, &zb);
        let wb = w.conjugate();
        let re = (&w + &wb).scale_re(0.5);
        let im = (&w - &wb).scale(c(0.0, -0.5));
        vec![re, im]
    });
    AtlasCase {
        name: name.to_string(),
        description: description.to_string(),
        map: MapSpec::from_base(TargetModel::flat(2), (0, 0), base),
        families: Vec::new(),
        manifest: Manifest {
            north_only: true,
            ..Manifest::default()
        },
    }
}

/// Non-harmonic control `w = z + 0.1 z² z̄` into flat C.
pub fn make_nonharmonic_flat() -> AtlasCase {
    flat_case(
        "nonharmonic-flat",
        "w = z + 0.1 z^2 zbar into flat C (control)",
        |z, zb| z + &(&(z * z) * zb).scale_re(0.1),
    )
}

/// Non-conformal harmonic control `(Re z², Im z² + 0.3 Re z)` into flat R².
pub fn make_nonisotropic_flat() -> AtlasCase {
    let mut case = flat_case(
        "nonisotropic-flat",
        "(Re z^2, Im z^2 + 0.3 Re z) into flat R^2 (control)",
        |z, zb| {
            let re = (z + zb).scale_re(0.5);
            &(z * z) + &re.scale(c(0.0, 0.3))
        },
    );
    case.manifest.harmonic = true;
    case
}

/// Every named case.
pub fn all_cases() -> Vec<AtlasCase> {
    let rational =
        |name: &str, rows: Vec<Vec<Complex64>>| make_rational_map(name, rows).expect("atlas rational maps are valid");
    vec![
        make_identity_s2(),
        make_veronese_s4(),
        rational("rational-d1-cp1", vec![vec![ONE], vec![ZERO, ONE]]),
        rational("rational-d2-cp1", vec![vec![ONE], vec![ZERO, ZERO, ONE]]),
        rational("rational-d3-cp1", vec![vec![ONE], vec![ZERO, ZERO, ZERO, ONE]]),
        rational(
            "veronese-cp2",
            vec![vec![ONE], vec![ZERO, c(SQRT_2, 0.0)], vec![ZERO, ZERO, ONE]],
        ),
        rational(
            "cubic-cp2",
            vec![vec![ONE, ZERO, ZERO, ONE], vec![ZERO, ONE], vec![ZERO, ZERO, ONE]],
        ),
        make_veronese_sequence_cp2(),
        make_bent_veronese_s4(),
        make_nonharmonic_flat(),
        make_nonisotropic_flat(),
    ]
}

pub fn case_names() -> Vec<String> {
    all_cases().into_iter().map(|c| c.name).collect()
}

pub fn find_case(name: &str) -> Option<AtlasCase> {
    all_cases().into_iter().find(|c| c.name == name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Chart;

    #[test]
    fn rational_chart_values() {
        let case = find_case("rational-d2-cp1").unwrap();
        let p = DomainPoint::new(Chart::North, c(0.3, 0.4));
        let g = case.map.germ(p, JetOrder::of(1, 1, 0), 0.0, None).unwrap();
        assert_eq!(g.target_chart(), Some(0));
        assert!((g.comps()[0].value() - p.coord * p.coord).norm() < 1e-15);
        // The same point seen from the south chart lands in the same affine chart.
        let q = p.in_chart(Chart::South).unwrap();
        let h = case.map.germ(q, JetOrder::of(1, 1, 0), 0.0, None).unwrap();
        assert!((h.comps()[0].value() - g.comps()[0].value()).norm() < 1e-15);
    }

    #[test]
    fn unitary_diag_field() {
        let case = find_case("rational-d2-cp1").unwrap();
        let fam = case.families.iter().find(|f| f.name == "unitary-diag").unwrap();
        let p = DomainPoint::new(Chart::North, c(0.2, -0.5));
        let g = fam.spec.germ(p, JetOrder::of(1, 1, 1), 0.0, None).unwrap();
        let v = g.variation_field().unwrap();
        let w = p.coord * p.coord;
        assert!((v.comps[0].value() - c(0.0, -2.0) * w).norm() < 1e-14);
    }

    #[test]
    fn coefficient_fields() {
        let case = find_case("rational-d2-cp1").unwrap();
        let p = DomainPoint::new(Chart::North, c(0.6, 0.1));
        let field = |name: &str| {
            let fam = case.families.iter().find(|f| f.name == name).unwrap();
            fam.spec
                .germ(p, JetOrder::of(0, 0, 1), 0.0, None)
                .unwrap()
                .variation_field()
                .unwrap()
        };
        assert!((field("coefficient-shift").comps[0].value() - ONE).norm() < 1e-15);
        assert!((field("coefficient-scale").comps[0].value() - p.coord * p.coord).norm() < 1e-15);
    }

    #[test]
    fn zero_generator_gives_zero_field() {
        let case = make_identity_s2();
        let fam = isometry_family(&case.map, "zero", vec![ZERO; 9]).unwrap();
        let g = fam
            .spec
            .germ(
                DomainPoint::new(Chart::North, c(0.1, 0.1)),
                JetOrder::of(1, 1, 1),
                0.0,
                None,
            )
            .unwrap();
        assert_eq!(g.variation_field().unwrap().max_abs(), 0.0);
        assert!(isometry_family(&case.map, "bad", vec![ONE; 9]).is_err());
    }

    #[test]
    fn rotation_field_is_cross_product() {
        let case = make_identity_s2();
        let fam = &case.families[0];
        let p = DomainPoint::new(Chart::South, c(0.3, 0.7));
        let g = fam.spec.germ(p, JetOrder::of(0, 0, 1), 0.0, None).unwrap();
        let v = g.variation_field().unwrap().values();
        let x = p.unit_vector();
        // e₃ × x = (−x₁, x₀, 0)
        let e = [-x[1], x[0], 0.0];
        for i in 0..3 {
            assert!((v[i] - c(e[i], 0.0)).norm() < 1e-14);
        }
    }

    #[test]
    fn finite_time_isometry_matches_rotation() {
        let case = make_identity_s2();
        let fam = &case.families[0];
        let p = DomainPoint::new(Chart::North, c(0.3, 0.2));
        let g = fam.spec.germ(p, JetOrder::of(0, 0, 0), 0.25, None).unwrap();
        let x = p.unit_vector();
        let (s, co) = 0.25f64.sin_cos();
        let e = [x[0] * co - x[1] * s, x[0] * s + x[1] * co, x[2]];
        for i in 0..3 {
            assert!((g.comps()[i].value() - c(e[i], 0.0)).norm() < 1e-14);
        }
    }

    #[test]
    fn veronese_lands_on_unit_sphere() {
        let case = make_veronese_s4();
        let p = DomainPoint::new(Chart::North, c(0.5, -0.2));
        let h = p.homogeneous(JetOrder::of(0, 0, 0));
        let raw = case.map.raw(&h, 0.0);
        let n2 = euclidean(&raw, &raw).value().re;
        let d = h.norm_sqr().value().re;
        assert!((n2 - d.powi(4)).abs() < 1e-12);
    }

    #[test]
    fn matrix_exponential() {
        let a = skew(2, &[(0, 1, 1.0)]);
        let e = expm(&a, 2, 0.7);
        assert!((e[0] - c(0.7f64.cos(), 0.0)).norm() < 1e-14);
        assert!((e[1] - c(0.7f64.sin(), 0.0)).norm() < 1e-14);
    }
}
