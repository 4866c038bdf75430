//! Map germs, sections of the complexified pullback bundle and the pulled-back connection.

use std::sync::{Arc, OnceLock};

use num_complex::Complex64;

use crate::domain::DomainPoint;
use crate::error::{Error, Result};
use crate::jet::{Jet, JetOrder};
use crate::target::{bilinear, euclidean, field_project, ChristoffelValue, MetricValue, TargetKind, TargetModel};

/// Differentiation direction on the domain (or along a family).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dir {
    Z,
    Zbar,
    T,
}

/// What a section is known to be.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FieldKind {
    /// A real vector field (components satisfy the model's conjugation symmetry).
    Real,
    /// The `(1,0)` part of a vector on a Kähler target: only `w` components.
    OneZero,
    /// Any complexified section.
    Complex,
}

/// Jet of a section of `φ⁻¹T^ℂN`.
#[derive(Clone, Debug)]
pub struct FieldGerm {
    pub kind: FieldKind,
    pub comps: Vec<Jet>,
}

impl FieldGerm {
    pub fn new(kind: FieldKind, comps: Vec<Jet>) -> Self {
        Self { kind, comps }
    }

    pub fn zero_like(other: &FieldGerm) -> Self {
        let j = &other.comps[0];
        Self::new(other.kind, vec![Jet::zero(j.order(), j.base()); other.comps.len()])
    }

    pub fn order(&self) -> JetOrder {
        self.comps
            .iter()
            .map(Jet::order)
            .reduce(JetOrder::min)
            .expect("fields have components")
    }

    pub fn values(&self) -> Vec<Complex64> {
        self.comps.iter().map(Jet::value).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.comps.iter().map(Jet::max_abs).fold(0.0, f64::max)
    }

    pub fn add(&self, other: &FieldGerm) -> FieldGerm {
        let kind = if self.kind == other.kind {
            self.kind
        } else {
            FieldKind::Complex
        };
        FieldGerm::new(kind, self.comps.iter().zip(&other.comps).map(|(a, b)| a + b).collect())
    }

    pub fn sub(&self, other: &FieldGerm) -> FieldGerm {
        let kind = if self.kind == other.kind {
            self.kind
        } else {
            FieldKind::Complex
        };
        FieldGerm::new(kind, self.comps.iter().zip(&other.comps).map(|(a, b)| a - b).collect())
    }

    pub fn scale(&self, s: Complex64) -> FieldGerm {
        let kind = if s.im == 0.0 {
            self.kind
        } else if self.kind == FieldKind::OneZero {
            FieldKind::OneZero
        } else {
            FieldKind::Complex
        };
        FieldGerm::new(kind, self.comps.iter().map(|c| c.scale(s)).collect())
    }

    /// Multiplication by a scalar function.
    pub fn mul_jet(&self, s: &Jet) -> FieldGerm {
        let kind = if self.kind == FieldKind::OneZero {
            FieldKind::OneZero
        } else {
            FieldKind::Complex
        };
        FieldGerm::new(kind, self.comps.iter().map(|c| c * s).collect())
    }

    pub fn truncate(&self, order: JetOrder) -> FieldGerm {
        FieldGerm::new(self.kind, self.comps.iter().map(|c| c.truncate(order)).collect())
    }

    pub fn at_t0(&self) -> FieldGerm {
        FieldGerm::new(self.kind, self.comps.iter().map(Jet::at_t0).collect())
    }

    pub fn lift_t(&self, t: usize) -> FieldGerm {
        FieldGerm::new(self.kind, self.comps.iter().map(|c| c.lift_t(t)).collect())
    }

    fn partial(&self, dir: Dir) -> Result<Vec<Jet>> {
        self.comps
            .iter()
            .map(|c| match dir {
                Dir::Z => c.d_z(),
                Dir::Zbar => c.d_zbar(),
                Dir::T => c.d_t(),
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
enum Geometry {
    Euclidean,
    Sphere {
        c: f64,
    },
    /// Metric and Christoffel jets, computed on first use. Truncation commutes with
    /// evaluating them, so a truncated germ may compute its own cheaper copy.
    Chart(OnceLock<ChartGeometry>),
}

#[derive(Clone, Debug)]
struct ChartGeometry {
    metric: MetricValue,
    gamma: ChristoffelValue,
}

impl ChartGeometry {
    fn of(model: &TargetModel, comps: &[Jet]) -> Result<Self> {
        Ok(Self {
            metric: model.bilinear_metric(comps)?,
            gamma: model.christoffels_at(comps)?,
        })
    }

    fn truncate(&self, order: JetOrder) -> Self {
        let tr = |v: &Vec<Option<Jet>>| -> Vec<Option<Jet>> {
            v.iter().map(|x| x.as_ref().map(|j| j.truncate(order))).collect()
        };
        Self {
            metric: MetricValue {
                components: tr(&self.metric.components),
                ..self.metric.clone()
            },
            gamma: ChristoffelValue {
                dim: self.gamma.dim,
                gamma: tr(&self.gamma.gamma),
            },
        }
    }
}

/// Jet of a map into the target at a domain point.
#[derive(Clone, Debug)]
pub struct MapGerm {
    model: Arc<TargetModel>,
    point: DomainPoint,
    target_chart: Option<usize>,
    comps: Vec<Jet>,
    constraint_residual: f64,
    geometry: Geometry,
    /// Connection matrices `Γ(∂φ/∂dir, ·)` per direction, built on first use.
    connection: [OnceLock<Vec<Option<Jet>>>; 3],
    point_metric: OnceLock<MetricValue>,
}

impl MapGerm {
    /// Builds a germ from target coordinate (or ambient) jets.
    ///
    /// `target_chart` records which affine chart of CPⁿ the coordinates belong to.
    pub fn new(
        model: Arc<TargetModel>,
        point: DomainPoint,
        comps: Vec<Jet>,
        target_chart: Option<usize>,
    ) -> Result<Self> {
        if comps.len() != model.ncoords() {
            return Err(Error::Mismatch(format!(
                "{} components for {}",
                comps.len(),
                model.label()
            )));
        }
        let (o, b) = (comps[0].order(), comps[0].base());
        if comps.iter().any(|c| c.order() != o || c.base() != b) {
            return Err(Error::Mismatch("map components differ in order or base point".into()));
        }
        let mut constraint_residual = 0.0;
        let geometry = match &model.kind {
            TargetKind::Flat { .. } => Geometry::Euclidean,
            TargetKind::SpaceFormEmbedded { c, .. } => {
                let r = &euclidean(&comps, &comps).scale_re(*c) + Complex64::new(-1.0, 0.0);
                constraint_residual = r.at_t0().max_abs();
                if constraint_residual > model.tolerance {
                    return Err(Error::Precondition(format!(
                        "map leaves the sphere: |c|φ|² − 1| jet residual {constraint_residual:.3e}"
                    )));
                }
                Geometry::Sphere { c: *c }
            }
            _ => {
                // Degeneracy shows at the base point; the full jets are built on demand.
                let values: Vec<Jet> = comps.iter().map(|c| c.truncate(JetOrder::of(0, 0, 0))).collect();
                ChartGeometry::of(&model, &values)?;
                Geometry::Chart(OnceLock::new())
            }
        };
        Ok(Self {
            model,
            point,
            target_chart,
            comps,
            constraint_residual,
            geometry,
            connection: Default::default(),
            point_metric: OnceLock::new(),
        })
    }

    pub fn model(&self) -> &Arc<TargetModel> {
        &self.model
    }

    pub fn point(&self) -> DomainPoint {
        self.point
    }

    pub fn target_chart(&self) -> Option<usize> {
        self.target_chart
    }

    pub fn comps(&self) -> &[Jet] {
        &self.comps
    }

    pub fn order(&self) -> JetOrder {
        self.comps[0].order()
    }

    pub fn constraint_residual(&self) -> f64 {
        self.constraint_residual
    }

    /// Lower-order germ of the same map, reusing the cached geometry when present.
    pub fn truncate(&self, order: JetOrder) -> MapGerm {
        let geometry = match &self.geometry {
            Geometry::Chart(cell) => Geometry::Chart(match cell.get() {
                Some(g) => OnceLock::from(g.truncate(order)),
                None => OnceLock::new(),
            }),
            g => g.clone(),
        };
        MapGerm {
            model: self.model.clone(),
            point: self.point,
            target_chart: self.target_chart,
            comps: self.comps.iter().map(|c| c.truncate(order)).collect(),
            constraint_residual: self.constraint_residual,
            geometry,
            connection: std::array::from_fn(|i| match self.connection[i].get() {
                Some(a) => OnceLock::from(
                    a.iter()
                        .map(|x| x.as_ref().map(|j| j.truncate(order)))
                        .collect::<Vec<_>>(),
                ),
                None => OnceLock::new(),
            }),
            point_metric: self.point_metric.clone(),
        }
    }

    fn connection(&self, dir: Dir) -> Result<&[Option<Jet>]> {
        let slot = match dir {
            Dir::Z => &self.connection[0],
            Dir::Zbar => &self.connection[1],
            Dir::T => &self.connection[2],
        };
        if let Some(a) = slot.get() {
            return Ok(a);
        }
        let gamma = &self.chart_geometry().expect("chart").gamma;
        let dphi = self.partial(dir, FieldKind::Complex)?;
        Ok(slot.get_or_init(|| gamma.connection(&dphi.comps)))
    }

    /// Metric at the base point only.
    fn point_metric(&self) -> &MetricValue {
        self.point_metric.get_or_init(|| {
            let o = JetOrder::of(0, 0, 0);
            match &self.geometry {
                Geometry::Chart(cell) if cell.get().is_some() => cell.get().expect("set").truncate(o).metric,
                _ => {
                    let values: Vec<Jet> = self.comps.iter().map(|c| c.truncate(o)).collect();
                    self.model
                        .bilinear_metric(&values)
                        .expect("metric checked nondegenerate at construction")
                }
            }
        })
    }

    fn chart_geometry(&self) -> Option<&ChartGeometry> {
        match &self.geometry {
            Geometry::Chart(cell) => Some(cell.get_or_init(|| {
                ChartGeometry::of(&self.model, &self.comps).expect("metric checked nondegenerate at construction")
            })),
            _ => None,
        }
    }

    /// The germ of the undeformed map (`t = 0`).
    pub fn at_t0(&self) -> MapGerm {
        self.truncate(self.order().with_t(0))
    }

    fn partial(&self, dir: Dir, kind: FieldKind) -> Result<FieldGerm> {
        let comps = self
            .comps
            .iter()
            .map(|c| match dir {
                Dir::Z => c.d_z(),
                Dir::Zbar => c.d_zbar(),
                Dir::T => c.d_t(),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FieldGerm::new(kind, comps))
    }

    /// `∂^ℂφ/∂z`.
    pub fn d_z(&self) -> Result<FieldGerm> {
        self.partial(Dir::Z, FieldKind::Complex)
    }

    /// `∂^ℂφ/∂z̄`.
    pub fn d_zbar(&self) -> Result<FieldGerm> {
        self.partial(Dir::Zbar, FieldKind::Complex)
    }

    /// `∂φ/∂t` along a family; a real section.
    pub fn d_t(&self) -> Result<FieldGerm> {
        self.partial(Dir::T, FieldKind::Real)
    }

    /// Variation field `∂φ_t/∂t` at `t = 0`, along [`MapGerm::at_t0`].
    pub fn variation_field(&self) -> Result<FieldGerm> {
        if self.order().t == 0 {
            return Err(Error::OrderExhausted("variation field of a t-independent germ".into()));
        }
        Ok(self.d_t()?.at_t0())
    }

    /// Covariant derivative of a section along `φ` in direction `dir`.
    pub fn cov_d(&self, dir: Dir, v: &FieldGerm) -> Result<FieldGerm> {
        let dv = v.partial(dir)?;
        let comps = match &self.geometry {
            Geometry::Euclidean => dv,
            Geometry::Sphere { c } => field_project(*c, &self.comps, &dv),
            Geometry::Chart(_) => {
                let a = self.connection(dir)?;
                let n = v.comps.len();
                let mut out = dv;
                for (k, row) in out.iter_mut().enumerate() {
                    for j in 0..n {
                        if let Some(m) = &a[k * n + j] {
                            row.add_product(m, &v.comps[j]);
                        }
                    }
                }
                out
            }
        };
        let kind = match (v.kind, dir) {
            (FieldKind::OneZero, _) if self.model.is_kahler() => FieldKind::OneZero,
            (FieldKind::Real, Dir::T) => FieldKind::Real,
            _ => FieldKind::Complex,
        };
        Ok(FieldGerm::new(kind, comps))
    }

    /// `k`-fold covariant derivative in `dir`.
    pub fn iterate(&self, dir: Dir, v: &FieldGerm, k: usize) -> Result<FieldGerm> {
        let mut out = v.clone();
        for _ in 0..k {
            out = self.cov_d(dir, &out)?;
        }
        Ok(out)
    }

    /// `[D⁰, D¹, …, D^{len−1}]` applied to `v` in direction `dir`.
    pub fn tower_of(&self, dir: Dir, v: &FieldGerm, len: usize) -> Result<Vec<FieldGerm>> {
        let mut out = Vec::with_capacity(len);
        if len == 0 {
            return Ok(out);
        }
        out.push(v.clone());
        for _ in 1..len {
            let next = self.cov_d(dir, out.last().unwrap())?;
            out.push(next);
        }
        Ok(out)
    }

    /// `D^{k−1}/∂z^{k−1} ∂^ℂφ/∂z`.
    pub fn iterated_d(&self, k: usize) -> Result<FieldGerm> {
        if k == 0 {
            return Err(Error::Precondition("iterated derivative needs k ≥ 1".into()));
        }
        self.iterate(Dir::Z, &self.d_z()?, k - 1)
    }

    /// `[∂^ℂφ/∂z, D ∂^ℂφ/∂z, …]` with `len` entries.
    pub fn tower(&self, len: usize) -> Result<Vec<FieldGerm>> {
        self.tower_of(Dir::Z, &self.d_z()?, len)
    }

    /// Complex-bilinear pairing with the target metric.
    pub fn pair(&self, a: &FieldGerm, b: &FieldGerm) -> Jet {
        match &self.geometry {
            Geometry::Euclidean | Geometry::Sphere { .. } => euclidean(&a.comps, &b.comps),
            Geometry::Chart(_) => bilinear(&self.chart_geometry().expect("chart").metric, &a.comps, &b.comps),
        }
    }

    /// Hermitian pairing `⟨a, b̄⟩`.
    pub fn herm(&self, a: &FieldGerm, b: &FieldGerm) -> Jet {
        self.pair(a, &self.conj(b))
    }

    /// Pointwise norm `√⟨v, v̄⟩` at the base point.
    pub fn norm(&self, v: &FieldGerm) -> f64 {
        let o = JetOrder::of(0, 0, 0);
        let v0 = v.truncate(o);
        let h = match &self.geometry {
            Geometry::Chart(_) => bilinear(self.point_metric(), &v0.comps, &self.conj(&v0).comps),
            _ => self.herm(&v0, &v0),
        };
        h.value().re.max(0.0).sqrt()
    }

    /// Complex conjugate section.
    pub fn conj(&self, v: &FieldGerm) -> FieldGerm {
        let kind = match v.kind {
            FieldKind::Real => FieldKind::Real,
            _ => FieldKind::Complex,
        };
        FieldGerm::new(kind, self.model.conjugate_vector(&v.comps))
    }

    /// `(1,0)` part of a section on a Kähler target.
    pub fn one_zero(&self, v: &FieldGerm) -> Result<FieldGerm> {
        match self.model.kind {
            TargetKind::ComplexSpaceForm { n, .. } => {
                let mut comps = v.comps.clone();
                for c in &mut comps[n..] {
                    *c = Jet::zero(c.order(), c.base());
                }
                Ok(FieldGerm::new(FieldKind::OneZero, comps))
            }
            _ => Err(Error::UnsupportedTarget(format!(
                "{} is not Kähler",
                self.model.label()
            ))),
        }
    }

    /// Real section `v′ + conj(v′)` from its `(1,0)` part.
    pub fn from_one_zero(&self, v: &FieldGerm) -> Result<FieldGerm> {
        let p = self.one_zero(v)?;
        let s = p.add(&self.conj(&p));
        Ok(FieldGerm::new(FieldKind::Real, s.comps))
    }

    /// `R(X, Y)Z` along the germ.
    pub fn curvature(&self, x: &FieldGerm, y: &FieldGerm, z: &FieldGerm) -> Result<FieldGerm> {
        let r = match &self.geometry {
            Geometry::Euclidean => {
                let o = x.order().min(y.order()).min(z.order());
                vec![Jet::zero(o, x.comps[0].base()); x.comps.len()]
            }
            Geometry::Sphere { c } => crate::target::curvature_space_form(*c, &x.comps, &y.comps, &z.comps, euclidean),
            Geometry::Chart(_) => {
                let metric = &self.chart_geometry().expect("chart").metric;
                self.model
                    .curvature(&self.comps, Some(metric), &x.comps, &y.comps, &z.comps)?
            }
        };
        Ok(FieldGerm::new(FieldKind::Complex, r))
    }

    /// Normal part `c⟨v, φ⟩` of a section on an embedded sphere (zero elsewhere).
    pub fn normal_component(&self, v: &FieldGerm) -> f64 {
        match self.geometry {
            Geometry::Sphere { c } => euclidean(&v.comps, &self.comps).scale_re(c).max_abs(),
            _ => 0.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Chart;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn identity_germ(z0: Complex64, order: JetOrder) -> MapGerm {
        let p = DomainPoint::new(Chart::North, z0);
        let h = p.homogeneous(order);
        let x = h.unit_position();
        MapGerm::new(Arc::new(TargetModel::sphere(3, 1.0)), p, x.to_vec(), None).unwrap()
    }

    fn random_real_field(g: &MapGerm, rng: &mut ChaCha8Rng) -> FieldGerm {
        // Smooth real-valued polynomial field in (z, z̄), projected if needed.
        let o = g.order();
        let b = g.point().coord;
        let z = Jet::var_z(o, b);
        let zb = Jet::var_zbar(o, b);
        let comps: Vec<Jet> = (0..g.comps().len())
            .map(|_| {
                let a = c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                let q = c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                let lin = &z.scale(a) + &zb.scale(a.conj());
                let quad = &(&z * &z).scale(q) + &(&zb * &zb).scale(q.conj());
                &(&lin + &quad) + c(rng.gen_range(-1.0..1.0), 0.0)
            })
            .collect();
        let comps = match g.model().kind {
            TargetKind::SpaceFormEmbedded { c, .. } => field_project(c, g.comps(), &comps),
            _ => comps,
        };
        FieldGerm::new(FieldKind::Real, comps)
    }

    #[test]
    fn flat_derivatives() {
        let o = JetOrder::of(2, 2, 0);
        let p = DomainPoint::new(Chart::North, c(0.1, 0.2));
        let z = Jet::var_z(o, p.coord);
        let zb = Jet::var_zbar(o, p.coord);
        let g = MapGerm::new(Arc::new(TargetModel::flat(2)), p, vec![z.clone(), zb.clone()], None).unwrap();
        let dz = g.d_z().unwrap().values();
        assert_eq!(dz, vec![c(1.0, 0.0), c(0.0, 0.0)]);
        let k = Jet::constant(c(2.0, 1.0), o, p.coord);
        let cst = MapGerm::new(Arc::new(TargetModel::flat(2)), p, vec![k.clone(), k], None).unwrap();
        assert!(cst.d_z().unwrap().max_abs() == 0.0);
        let sq = MapGerm::new(Arc::new(TargetModel::flat(2)), p, vec![&z * &z, &zb * &zb], None).unwrap();
        let d2 = sq.iterated_d(2).unwrap();
        assert_eq!(d2.comps[0].max_abs(), 2.0);
        assert_eq!(d2.comps[0].value(), c(2.0, 0.0));
    }

    #[test]
    fn isotropic_flat_vector() {
        let o = JetOrder::of(0, 0, 0);
        let p = DomainPoint::new(Chart::North, c(0.0, 0.0));
        let g = MapGerm::new(
            Arc::new(TargetModel::flat(2)),
            p,
            vec![Jet::zero(o, p.coord), Jet::zero(o, p.coord)],
            None,
        )
        .unwrap();
        let v = FieldGerm::new(
            FieldKind::Complex,
            vec![
                Jet::constant(c(1.0, 0.0), o, p.coord),
                Jet::constant(c(0.0, -1.0), o, p.coord),
            ],
        );
        assert_eq!(g.pair(&v, &v).value(), c(0.0, 0.0));
        assert_eq!(g.herm(&v, &v).value(), c(2.0, 0.0));
    }

    #[test]
    fn radial_field_has_no_tangential_derivative() {
        let g = identity_germ(c(0.3, -0.2), JetOrder::of(2, 2, 0));
        // The radial field is normal, so its tangential part and that part's derivative vanish.
        let radial = field_project(1.0, g.comps(), g.comps());
        let radial = FieldGerm::new(FieldKind::Real, radial);
        assert!(radial.max_abs() < 1e-15);
        let d = g.cov_d(Dir::Z, &radial).unwrap();
        assert!(d.max_abs() < 1e-14);
        // The plain derivative of the position is already tangent.
        assert!(g.normal_component(&g.d_z().unwrap()) < 1e-15);
    }

    #[test]
    fn metric_compatibility_and_tangency() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let z0 = c(rng.gen_range(-0.7..0.7), rng.gen_range(-0.7..0.7));
            let g = identity_germ(z0, JetOrder::of(3, 3, 0));
            let v = random_real_field(&g, &mut rng);
            let w = random_real_field(&g, &mut rng);
            for dir in [Dir::Z, Dir::Zbar] {
                let lhs = match dir {
                    Dir::Z => g.pair(&v, &w).d_z().unwrap(),
                    _ => g.pair(&v, &w).d_zbar().unwrap(),
                };
                let rhs = &g.pair(&g.cov_d(dir, &v).unwrap(), &w) + &g.pair(&v, &g.cov_d(dir, &w).unwrap());
                let res = (&lhs - &rhs).max_abs();
                assert!(res < 1e-10, "{res}");
                assert!(g.normal_component(&g.cov_d(dir, &v).unwrap()) < 1e-10);
            }
        }
    }

    #[test]
    fn commutator_is_curvature() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = identity_germ(c(0.2, 0.5), JetOrder::of(3, 3, 0));
        let v = random_real_field(&g, &mut rng);
        let a = g.cov_d(Dir::Z, &g.cov_d(Dir::Zbar, &v).unwrap()).unwrap();
        let b = g.cov_d(Dir::Zbar, &g.cov_d(Dir::Z, &v).unwrap()).unwrap();
        let r = g.curvature(&g.d_z().unwrap(), &g.d_zbar().unwrap(), &v).unwrap();
        let res = a.sub(&b).sub(&r).truncate(JetOrder::of(0, 0, 0)).max_abs();
        assert!(res < 1e-12, "{res}");
    }

    #[test]
    fn fs_commutator_is_curvature() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let o = JetOrder::of(3, 3, 0);
        let p = DomainPoint::new(Chart::North, c(0.3, 0.1));
        let z = Jet::var_z(o, p.coord);
        let zb = Jet::var_zbar(o, p.coord);
        // A non-holomorphic germ w = z + 0.3 z̄² in the affine chart of CP¹.
        let w = &z + &(&zb * &zb).scale_re(0.3);
        let comps = vec![w.clone(), w.conjugate()];
        let g = MapGerm::new(Arc::new(TargetModel::cpn(1)), p, comps, Some(0)).unwrap();
        let a = c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let vp = &z.scale(a) + c(0.5, 0.0);
        let v = FieldGerm::new(FieldKind::Real, vec![vp.clone(), vp.conjugate()]);
        let lhs = g
            .cov_d(Dir::Z, &g.cov_d(Dir::Zbar, &v).unwrap())
            .unwrap()
            .sub(&g.cov_d(Dir::Zbar, &g.cov_d(Dir::Z, &v).unwrap()).unwrap());
        let r = g.curvature(&g.d_z().unwrap(), &g.d_zbar().unwrap(), &v).unwrap();
        let res = lhs.sub(&r).truncate(JetOrder::of(0, 0, 0)).max_abs();
        assert!(res < 1e-12, "{res}");
        // Metric compatibility in the Kähler chart.
        let u = FieldGerm::new(FieldKind::Real, vec![zb.clone(), z.clone()]);
        let lhs = g.pair(&v, &u).d_z().unwrap();
        let rhs = &g.pair(&g.cov_d(Dir::Z, &v).unwrap(), &u) + &g.pair(&v, &g.cov_d(Dir::Z, &u).unwrap());
        assert!((&lhs - &rhs).max_abs() < 1e-10);
    }

    #[test]
    fn variation_field_of_rotation() {
        let o = JetOrder::of(1, 1, 1);
        let p = DomainPoint::new(Chart::North, c(0.4, 0.3));
        let x = p.homogeneous(o).unit_position();
        let t = Jet::var_t(o, p.coord);
        // Rotation about e₃: (x cos t − y sin t, x sin t + y cos t, z), to first order in t.
        let rot = vec![&x[0] - &(&t * &x[1]), &x[1] + &(&t * &x[0]), x[2].clone()];
        let g = MapGerm::new(Arc::new(TargetModel::sphere(3, 1.0)), p, rot, None).unwrap();
        let v = g.variation_field().unwrap();
        let e = p.unit_vector();
        let expect = [-e[1], e[0], 0.0];
        for i in 0..3 {
            assert!((v.comps[i].value() - c(expect[i], 0.0)).norm() < 1e-15);
        }
        assert!(g.at_t0().normal_component(&v) < 1e-12);
        let still = identity_germ(p.coord, o);
        assert!(still.variation_field().unwrap().max_abs() == 0.0);
        let flat = identity_germ(p.coord, JetOrder::of(1, 1, 0));
        assert!(matches!(flat.variation_field(), Err(Error::OrderExhausted(_))));
    }
}
