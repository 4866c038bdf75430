//! Target manifolds: metrics, Levi-Civita connections and curvature.
//!
//! Curvature follows `R(X, Y) = ∇_X∇_Y − ∇_Y∇_X − ∇_[X,Y]`, so the round sphere of
//! curvature `c` has `R(X, Y)Z = c(⟨Y,Z⟩X − ⟨X,Z⟩Y)`.
//!
//! Kähler targets use the coordinates `(w₁, …, wₙ, w̄₁, …, w̄ₙ)` of an affine chart of
//! CPⁿ, treated as independent complex variables. Tangent vectors are stored with
//! all `2n` components; the complex-bilinear metric pairs the `w` block with the `w̄`
//! block only.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::jet::{GradJet, Jet, JetOrder};

/// Bilinear metric components `g_ij` (row-major) with their coordinate gradients.
pub type MetricFn = Arc<dyn Fn(&[GradJet]) -> Result<Vec<GradJet>> + Send + Sync>;

const I: Complex64 = Complex64::new(0.0, 1.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Holomorphic sectional curvature of [`TargetModel::cpn`].
pub const FS_HOLOMORPHIC_CURVATURE: f64 = 4.0;

#[derive(Clone)]
pub enum TargetKind {
    /// Euclidean `Rⁿ`.
    Flat { dim: usize },
    /// Round sphere `|p|² = 1/c` inside `R^ambient_dim`.
    SpaceFormEmbedded { ambient_dim: usize, c: f64 },
    /// Stereographic chart `4 / (1 + c|y|²)² |dy|²` of the sphere of curvature `c`.
    SpaceFormChart { dim: usize, c: f64 },
    /// Fubini–Study CPⁿ with holomorphic sectional curvature `c4`.
    ComplexSpaceForm { n: usize, c4: f64 },
    /// Arbitrary chart metric.
    GeneralChart { dim: usize, metric: MetricFn },
}

impl fmt::Debug for TargetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetKind::Flat { dim } => write!(f, "Flat({dim})"),
            TargetKind::SpaceFormEmbedded { ambient_dim, c } => {
                write!(f, "SpaceFormEmbedded({ambient_dim}, c={c})")
            }
            TargetKind::SpaceFormChart { dim, c } => write!(f, "SpaceFormChart({dim}, c={c})"),
            TargetKind::ComplexSpaceForm { n, c4 } => write!(f, "ComplexSpaceForm(n={n}, c4={c4})"),
            TargetKind::GeneralChart { dim, .. } => write!(f, "GeneralChart({dim})"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TargetModel {
    pub kind: TargetKind,
    pub tolerance: f64,
}

/// Metric components along a germ. `hermitian` marks the `g_{ij̄}` form of a Kähler chart
/// (an `n × n` block); otherwise the entries are the bilinear `g_ij`.
#[derive(Clone, Debug)]
pub struct MetricValue {
    pub hermitian: bool,
    pub dim: usize,
    pub components: Vec<Option<Jet>>,
}

impl MetricValue {
    pub fn get(&self, i: usize, j: usize) -> Option<&Jet> {
        self.components[i * self.dim + j].as_ref()
    }
}

/// Christoffel symbols `Γ^k_ij`, stored at `k·n² + i·n + j`; `None` means identically zero.
#[derive(Clone, Debug)]
pub struct ChristoffelValue {
    pub dim: usize,
    pub gamma: Vec<Option<Jet>>,
}

impl ChristoffelValue {
    pub fn get(&self, k: usize, i: usize, j: usize) -> Option<&Jet> {
        let n = self.dim;
        self.gamma[(k * n + i) * n + j].as_ref()
    }

    /// Connection matrix `A^k_j = Γ^k_ij Xⁱ`, row-major, `None` where identically zero.
    pub fn connection(&self, x: &[Jet]) -> Vec<Option<Jet>> {
        let n = self.dim;
        let mut out = vec![None; n * n];
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    if let Some(g) = self.get(k, i, j) {
                        let slot: &mut Option<Jet> = &mut out[k * n + j];
                        match slot {
                            Some(acc) => acc.add_product(g, &x[i]),
                            None => *slot = Some(g * &x[i]),
                        }
                    }
                }
            }
        }
        out
    }

    /// `Γ^k_ij Xⁱ Yʲ` for every `k`.
    pub fn contract(&self, x: &[Jet], y: &[Jet]) -> Vec<Jet> {
        let n = self.dim;
        (0..n)
            .map(|k| {
                let mut acc: Option<Jet> = None;
                for i in 0..n {
                    for j in 0..n {
                        if let Some(g) = self.get(k, i, j) {
                            let term = &(g * &x[i]) * &y[j];
                            acc = Some(match acc {
                                Some(a) => &a + &term,
                                None => term,
                            });
                        }
                    }
                }
                acc.unwrap_or_else(|| Jet::zero(x[0].order().min(y[0].order()), x[0].base()))
            })
            .collect()
    }
}

impl TargetModel {
    pub fn new(kind: TargetKind) -> Self {
        Self { kind, tolerance: 1e-9 }
    }

    pub fn flat(dim: usize) -> Self {
        Self::new(TargetKind::Flat { dim })
    }

    pub fn sphere(ambient_dim: usize, c: f64) -> Self {
        Self::new(TargetKind::SpaceFormEmbedded { ambient_dim, c })
    }

    pub fn sphere_chart(dim: usize, c: f64) -> Self {
        Self::new(TargetKind::SpaceFormChart { dim, c })
    }

    pub fn cpn(n: usize) -> Self {
        Self::new(TargetKind::ComplexSpaceForm {
            n,
            c4: FS_HOLOMORPHIC_CURVATURE,
        })
    }

    pub fn general(dim: usize, metric: MetricFn) -> Self {
        Self::new(TargetKind::GeneralChart { dim, metric })
    }

    /// Number of coordinate (or ambient) components of points and vectors.
    pub fn ncoords(&self) -> usize {
        match &self.kind {
            TargetKind::Flat { dim } => *dim,
            TargetKind::SpaceFormEmbedded { ambient_dim, .. } => *ambient_dim,
            TargetKind::SpaceFormChart { dim, .. } => *dim,
            TargetKind::ComplexSpaceForm { n, .. } => 2 * n,
            TargetKind::GeneralChart { dim, .. } => *dim,
        }
    }

    pub fn is_kahler(&self) -> bool {
        matches!(self.kind, TargetKind::ComplexSpaceForm { .. })
    }

    pub fn is_space_form(&self) -> bool {
        matches!(
            self.kind,
            TargetKind::Flat { .. } | TargetKind::SpaceFormEmbedded { .. } | TargetKind::SpaceFormChart { .. }
        )
    }

    pub fn label(&self) -> String {
        format!("{:?}", self.kind)
    }

    /// Metric evaluator in chart coordinates, when the model has one.
    pub fn metric_fn(&self) -> Option<MetricFn> {
        match &self.kind {
            TargetKind::Flat { dim } => {
                let n = *dim;
                Some(Arc::new(move |x: &[GradJet]| {
                    Ok((0..n * n)
                        .map(|ij| {
                            let v = if ij / n == ij % n {
                                ONE
                            } else {
                                Complex64::new(0.0, 0.0)
                            };
                            GradJet::constant(v, &x[0].value, n)
                        })
                        .collect())
                }))
            }
            TargetKind::SpaceFormChart { dim, c } => {
                let (n, c) = (*dim, *c);
                Some(Arc::new(move |x: &[GradJet]| {
                    let mut r2 = x[0].mul(&x[0]);
                    for xi in &x[1..] {
                        r2 = r2.add(&xi.mul(xi));
                    }
                    let d = r2.scale(Complex64::new(c, 0.0)).add_const(ONE);
                    let inv = d.mul(&d).recip()?.scale(Complex64::new(4.0, 0.0));
                    let zero = GradJet::constant(Complex64::new(0.0, 0.0), &x[0].value, n);
                    Ok((0..n * n)
                        .map(|ij| if ij / n == ij % n { inv.clone() } else { zero.clone() })
                        .collect())
                }))
            }
            TargetKind::ComplexSpaceForm { n, c4 } => {
                let (n, kappa) = (*n, 4.0 / *c4);
                Some(Arc::new(move |x: &[GradJet]| {
                    let m = 2 * n;
                    let mut s = GradJet::constant(ONE, &x[0].value, m);
                    for i in 0..n {
                        s = s.add(&x[i].mul(&x[n + i]));
                    }
                    let inv_s2 = s.mul(&s).recip()?;
                    let zero = GradJet::constant(Complex64::new(0.0, 0.0), &x[0].value, m);
                    let mut g = vec![zero; m * m];
                    for i in 0..n {
                        for j in 0..n {
                            let mut num = x[n + i].mul(&x[j]).scale(-ONE);
                            if i == j {
                                num = num.add(&s);
                            }
                            let h = num.mul(&inv_s2).scale(Complex64::new(kappa / 2.0, 0.0));
                            g[i * m + n + j] = h.clone();
                            g[(n + j) * m + i] = h;
                        }
                    }
                    Ok(g)
                }))
            }
            TargetKind::GeneralChart { metric, .. } => Some(metric.clone()),
            TargetKind::SpaceFormEmbedded { .. } => None,
        }
    }

    /// Metric components along coordinate jets.
    pub fn metric_at(&self, coords: &[Jet]) -> Result<MetricValue> {
        self.check_coords(coords)?;
        match &self.kind {
            TargetKind::Flat { dim } | TargetKind::SpaceFormEmbedded { ambient_dim: dim, .. } => {
                let n = *dim;
                let like = &coords[0];
                Ok(MetricValue {
                    hermitian: false,
                    dim: n,
                    components: (0..n * n)
                        .map(|ij| (ij / n == ij % n).then(|| Jet::constant(ONE, like.order(), like.base())))
                        .collect(),
                })
            }
            TargetKind::SpaceFormChart { dim, c } => {
                let n = *dim;
                let conf = space_form_conformal(*c, coords)?;
                Ok(MetricValue {
                    hermitian: false,
                    dim: n,
                    components: (0..n * n).map(|ij| (ij / n == ij % n).then(|| conf.clone())).collect(),
                })
            }
            TargetKind::ComplexSpaceForm { n, c4 } => {
                let n = *n;
                let kappa = 4.0 / c4;
                let s = fs_potential(n, coords);
                let inv_s2 = (&s * &s).recip()?;
                let mut components = Vec::with_capacity(n * n);
                for i in 0..n {
                    for j in 0..n {
                        let mut num = (&coords[n + i] * &coords[j]).scale_re(-1.0);
                        if i == j {
                            num += &s;
                        }
                        components.push(Some((&num * &inv_s2).scale_re(kappa)));
                    }
                }
                Ok(MetricValue {
                    hermitian: true,
                    dim: n,
                    components,
                })
            }
            TargetKind::GeneralChart { dim, metric } => {
                let g = metric(&GradJet::seed(coords))?;
                Ok(MetricValue {
                    hermitian: false,
                    dim: *dim,
                    components: g.into_iter().map(|x| Some(x.value)).collect(),
                })
            }
        }
    }

    /// Bilinear metric `g_ij` in the model's coordinates (Kähler charts included).
    pub fn bilinear_metric(&self, coords: &[Jet]) -> Result<MetricValue> {
        let m = self.metric_at(coords)?;
        if !m.hermitian {
            return Ok(m);
        }
        let n = m.dim;
        let dim = 2 * n;
        let mut components = vec![None; dim * dim];
        for i in 0..n {
            for j in 0..n {
                let h = m.get(i, j).map(|g| g.scale_re(0.5));
                components[i * dim + n + j] = h.clone();
                components[(n + j) * dim + i] = h;
            }
        }
        Ok(MetricValue {
            hermitian: false,
            dim,
            components,
        })
    }

    /// Closed-form Christoffel symbols where available, otherwise derived from the metric.
    pub fn christoffels_at(&self, coords: &[Jet]) -> Result<ChristoffelValue> {
        self.check_coords(coords)?;
        match &self.kind {
            TargetKind::Flat { dim } => Ok(ChristoffelValue {
                dim: *dim,
                gamma: vec![None; dim * dim * dim],
            }),
            TargetKind::SpaceFormChart { dim, c } => {
                let n = *dim;
                let d = space_form_denominator(*c, coords).recip()?;
                // ∂_j f for f = ln 2 − ln(1 + c|y|²)
                let df: Vec<Jet> = coords.iter().map(|x| (x * &d).scale_re(-2.0 * c)).collect();
                let mut gamma = vec![None; n * n * n];
                for k in 0..n {
                    for i in 0..n {
                        for j in 0..n {
                            let mut acc: Option<Jet> = None;
                            let mut add = |t: Jet| {
                                acc = Some(match acc.take() {
                                    Some(a) => &a + &t,
                                    None => t,
                                })
                            };
                            if i == k {
                                add(df[j].clone());
                            }
                            if j == k {
                                add(df[i].clone());
                            }
                            if i == j {
                                add(-&df[k]);
                            }
                            gamma[(k * n + i) * n + j] = acc;
                        }
                    }
                }
                Ok(ChristoffelValue { dim: n, gamma })
            }
            TargetKind::ComplexSpaceForm { n, .. } => {
                let n = *n;
                let m = 2 * n;
                let inv_s = fs_potential(n, coords).recip()?;
                let wbar_s: Vec<Jet> = (0..m).map(|i| (&coords[i] * &inv_s).scale_re(-1.0)).collect();
                let mut gamma = vec![None; m * m * m];
                for (block, other) in [(0, n), (n, 0)] {
                    for k in 0..n {
                        for i in 0..n {
                            for j in 0..n {
                                let mut acc: Option<Jet> = None;
                                if i == k {
                                    acc = Some(wbar_s[other + j].clone());
                                }
                                if j == k {
                                    let t = &wbar_s[other + i];
                                    acc = Some(match acc {
                                        Some(a) => &a + t,
                                        None => t.clone(),
                                    });
                                }
                                gamma[((block + k) * m + block + i) * m + block + j] = acc;
                            }
                        }
                    }
                }
                Ok(ChristoffelValue { dim: m, gamma })
            }
            TargetKind::GeneralChart { metric, .. } => christoffels_from_metric(metric, coords),
            TargetKind::SpaceFormEmbedded { .. } => Err(Error::UnsupportedTarget(
                "embedded spheres use tangential projection instead of Christoffel symbols".into(),
            )),
        }
    }

    fn check_coords(&self, coords: &[Jet]) -> Result<()> {
        if coords.len() != self.ncoords() {
            return Err(Error::Mismatch(format!(
                "{} coordinates for a target with {}",
                coords.len(),
                self.ncoords()
            )));
        }
        Ok(())
    }

    /// `J` on a tangent vector of a Kähler chart: `i` on the `w` block, `−i` on the `w̄` block.
    pub fn complex_structure(&self, x: &[Jet]) -> Result<Vec<Jet>> {
        match self.kind {
            TargetKind::ComplexSpaceForm { n, .. } => Ok(x
                .iter()
                .enumerate()
                .map(|(i, v)| v.scale(if i < n { I } else { -I }))
                .collect()),
            _ => Err(Error::UnsupportedTarget(format!(
                "{} has no complex structure",
                self.label()
            ))),
        }
    }

    /// Complex conjugate of a complexified tangent vector.
    pub fn conjugate_vector(&self, x: &[Jet]) -> Vec<Jet> {
        match self.kind {
            TargetKind::ComplexSpaceForm { n, .. } => (0..2 * n).map(|i| x[(i + n) % (2 * n)].conjugate()).collect(),
            _ => x.iter().map(Jet::conjugate).collect(),
        }
    }

    /// Complex conjugate of a point given in coordinates.
    pub fn conjugate_point(&self, x: &[Jet]) -> Vec<Jet> {
        self.conjugate_vector(x)
    }

    /// `R(X, Y)Z` along coordinate jets with closed-form curvature.
    pub fn curvature(
        &self,
        coords: &[Jet],
        metric: Option<&MetricValue>,
        x: &[Jet],
        y: &[Jet],
        z: &[Jet],
    ) -> Result<Vec<Jet>> {
        let owned;
        let metric = match metric {
            Some(m) => m,
            None => {
                owned = self.bilinear_metric_or_euclidean(coords)?;
                &owned
            }
        };
        let pair = |a: &[Jet], b: &[Jet]| bilinear(metric, a, b);
        match &self.kind {
            TargetKind::Flat { .. } => Ok(zero_vector(x, y, z)),
            TargetKind::SpaceFormEmbedded { c, .. } | TargetKind::SpaceFormChart { c, .. } => {
                Ok(curvature_space_form(*c, x, y, z, pair))
            }
            TargetKind::ComplexSpaceForm { c4, .. } => {
                curvature_complex_space_form(*c4, x, y, z, pair, |v| self.complex_structure(v))
            }
            TargetKind::GeneralChart { .. } => Err(Error::UnsupportedTarget(
                "closed-form curvature is unavailable for general charts".into(),
            )),
        }
    }

    fn bilinear_metric_or_euclidean(&self, coords: &[Jet]) -> Result<MetricValue> {
        self.bilinear_metric(coords)
    }
}

fn zero_vector(x: &[Jet], y: &[Jet], z: &[Jet]) -> Vec<Jet> {
    let o = x[0].order().min(y[0].order()).min(z[0].order());
    vec![Jet::zero(o, x[0].base()); x.len()]
}

fn space_form_denominator(c: f64, coords: &[Jet]) -> Jet {
    let mut r2 = &coords[0] * &coords[0];
    for x in &coords[1..] {
        r2.add_product(x, x);
    }
    &r2.scale_re(c) + ONE
}

fn space_form_conformal(c: f64, coords: &[Jet]) -> Result<Jet> {
    let d = space_form_denominator(c, coords);
    Ok((&d * &d).recip()?.scale_re(4.0))
}

fn fs_potential(n: usize, coords: &[Jet]) -> Jet {
    let mut s = Jet::constant(ONE, coords[0].order(), coords[0].base());
    for i in 0..n {
        s.add_product(&coords[i], &coords[n + i]);
    }
    s
}

/// Complex-bilinear pairing `g_ij aⁱ bʲ`.
pub fn bilinear(metric: &MetricValue, a: &[Jet], b: &[Jet]) -> Jet {
    debug_assert!(!metric.hermitian);
    let n = metric.dim;
    let o = a[0].order().min(b[0].order());
    let mut acc = Jet::zero(o, a[0].base());
    // Off-diagonal terms are summed as `g_ij (aⁱbʲ + aʲbⁱ)`, so swapping `a` and `b` is exact.
    for i in 0..n {
        if let Some(g) = metric.get(i, i) {
            if is_unit(g) {
                acc.add_product(&a[i], &b[i]);
            } else {
                acc.add_product(g, &(&a[i] * &b[i]));
            }
        }
        for j in i + 1..n {
            if let Some(g) = metric.get(i, j) {
                let mut s = &a[i] * &b[j];
                s.add_product(&a[j], &b[i]);
                acc.add_product(g, &s);
            }
        }
    }
    acc
}

fn is_unit(g: &Jet) -> bool {
    g.value() == ONE && g.coeffs()[1..].iter().all(|c| *c == Complex64::new(0.0, 0.0))
}

/// Euclidean complex-bilinear pairing `Σ aᵢ bᵢ`.
pub fn euclidean(a: &[Jet], b: &[Jet]) -> Jet {
    let o = a[0].order().min(b[0].order());
    let mut acc = Jet::zero(o, a[0].base());
    for (x, y) in a.iter().zip(b) {
        acc.add_product(x, y);
    }
    acc
}

fn lincomb(terms: &[(&Jet, &[Jet])]) -> Vec<Jet> {
    let n = terms[0].1.len();
    (0..n)
        .map(|k| {
            let mut acc = terms[0].0 * &terms[0].1[k];
            for (s, v) in &terms[1..] {
                acc.add_product(s, &v[k]);
            }
            acc
        })
        .collect()
}

/// `R(X,Y)Z = c(⟨Y,Z⟩X − ⟨X,Z⟩Y)` for a space form of curvature `c`.
pub fn curvature_space_form<P>(c: f64, x: &[Jet], y: &[Jet], z: &[Jet], pair: P) -> Vec<Jet>
where
    P: Fn(&[Jet], &[Jet]) -> Jet,
{
    if c == 0.0 {
        return zero_vector(x, y, z);
    }
    let yz = pair(y, z).scale_re(c);
    let xz = pair(x, z).scale_re(-c);
    lincomb(&[(&yz, x), (&xz, y)])
}

/// Curvature of a complex space form with holomorphic sectional curvature `c4`:
/// `(c4/4)[⟨Y,Z⟩X − ⟨X,Z⟩Y + ⟨JY,Z⟩JX − ⟨JX,Z⟩JY + 2⟨X,JY⟩JZ]`.
pub fn curvature_complex_space_form<P, J>(c4: f64, x: &[Jet], y: &[Jet], z: &[Jet], pair: P, j: J) -> Result<Vec<Jet>>
where
    P: Fn(&[Jet], &[Jet]) -> Jet,
    J: Fn(&[Jet]) -> Result<Vec<Jet>>,
{
    let q = c4 / 4.0;
    let (jx, jy, jz) = (j(x)?, j(y)?, j(z)?);
    let a = pair(y, z).scale_re(q);
    let b = pair(x, z).scale_re(-q);
    let c = pair(&jy, z).scale_re(q);
    let d = pair(&jx, z).scale_re(-q);
    let e = pair(x, &jy).scale_re(2.0 * q);
    Ok(lincomb(&[(&a, x), (&b, y), (&c, &jx), (&d, &jy), (&e, &jz)]))
}

/// Christoffel symbols `½ g^{kl}(∂_i g_jl + ∂_j g_il − ∂_l g_ij)` from a metric evaluator.
pub fn christoffels_from_metric(metric: &MetricFn, coords: &[Jet]) -> Result<ChristoffelValue> {
    let n = coords.len();
    let g = metric(&GradJet::seed(coords))?;
    if g.len() != n * n {
        return Err(Error::Mismatch(format!(
            "metric evaluator returned {} entries",
            g.len()
        )));
    }
    let values: Vec<Jet> = g.iter().map(|x| x.value.clone()).collect();
    let ginv = invert(&values, n)?;
    let dg = |l: usize, i: usize, j: usize| &g[i * n + j].grad[l];
    let mut lower = Vec::with_capacity(n * n * n);
    for l in 0..n {
        for i in 0..n {
            for j in 0..n {
                lower.push((&(dg(i, j, l) + dg(j, i, l)) - dg(l, i, j)).scale_re(0.5));
            }
        }
    }
    let mut gamma = Vec::with_capacity(n * n * n);
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let mut acc = &ginv[k * n] * &lower[i * n + j];
                for l in 1..n {
                    acc.add_product(&ginv[k * n + l], &lower[(l * n + i) * n + j]);
                }
                gamma.push(Some(acc));
            }
        }
    }
    Ok(ChristoffelValue { dim: n, gamma })
}

/// Inverse of a square matrix of jets by Gauss–Jordan elimination with partial pivoting.
pub fn invert(m: &[Jet], n: usize) -> Result<Vec<Jet>> {
    let like = &m[0];
    let scale = m.iter().map(|x| x.value().norm()).fold(0.0, f64::max);
    let mut a: Vec<Jet> = m.to_vec();
    let mut inv: Vec<Jet> = (0..n * n)
        .map(|ij| {
            let v = if ij / n == ij % n {
                ONE
            } else {
                Complex64::new(0.0, 0.0)
            };
            Jet::constant(v, like.order(), like.base())
        })
        .collect();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&r, &s| a[r * n + col].value().norm().total_cmp(&a[s * n + col].value().norm()))
            .unwrap();
        if a[piv * n + col].value().norm() <= 1e-14 * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::DegenerateMetric(format!("singular metric in column {col}")));
        }
        if piv != col {
            for k in 0..n {
                a.swap(piv * n + k, col * n + k);
                inv.swap(piv * n + k, col * n + k);
            }
        }
        let r = a[col * n + col].recip()?;
        for k in 0..n {
            a[col * n + k] = &a[col * n + k] * &r;
            inv[col * n + k] = &inv[col * n + k] * &r;
        }
        for row in 0..n {
            if row == col {
                continue;
            }
            let f = a[row * n + col].clone();
            for k in 0..n {
                let t = &f * &a[col * n + k];
                a[row * n + k] -= &t;
                let t = &f * &inv[col * n + k];
                inv[row * n + k] -= &t;
            }
        }
    }
    Ok(inv)
}

/// Christoffel symbols and their first coordinate derivatives at a point.
fn christoffel_with_derivatives(
    metric: &MetricFn,
    point: &[Complex64],
) -> Result<(Vec<Complex64>, Vec<Vec<Complex64>>)> {
    let n = point.len();
    let order = JetOrder::of(1, 0, 0);
    let base = Complex64::new(0.0, 0.0);
    let mut gamma0 = Vec::new();
    let mut dgamma = Vec::with_capacity(n);
    for dir in 0..n {
        let coords: Vec<Jet> = point
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                if i == dir {
                    &Jet::var_z(order, base) + p
                } else {
                    Jet::constant(p, order, base)
                }
            })
            .collect();
        let g = christoffels_from_metric(metric, &coords)?;
        if dir == 0 {
            gamma0 = g.gamma.iter().map(|x| x.as_ref().unwrap().value()).collect();
        }
        dgamma.push(g.gamma.iter().map(|x| x.as_ref().unwrap().coeff(1, 0, 0)).collect());
    }
    Ok((gamma0, dgamma))
}

/// `R(X,Y)Z` at a chart point, assembled from Christoffel symbols of the metric evaluator:
/// `R^a_{bcd} = ∂_c Γ^a_{db} − ∂_d Γ^a_{cb} + Γ^a_{ce} Γ^e_{db} − Γ^a_{de} Γ^e_{cb}` and
/// `R(X,Y)Z = R^a_{bcd} Zᵇ Xᶜ Yᵈ`.
pub fn curvature_numeric(
    model: &TargetModel,
    point: &[Complex64],
    x: &[Complex64],
    y: &[Complex64],
    z: &[Complex64],
) -> Result<Vec<Complex64>> {
    let metric = model
        .metric_fn()
        .ok_or_else(|| Error::UnsupportedTarget(format!("{} has no chart metric evaluator", model.label())))?;
    let n = point.len();
    if n != model.ncoords() {
        return Err(Error::Mismatch(format!("{n} coordinates for {}", model.label())));
    }
    let (g, dg) = christoffel_with_derivatives(&metric, point)?;
    let gam = |a: usize, b: usize, c: usize| g[(a * n + b) * n + c];
    let dgam = |d: usize, a: usize, b: usize, c: usize| dg[d][(a * n + b) * n + c];
    let mut out = vec![Complex64::new(0.0, 0.0); n];
    for (a, o) in out.iter_mut().enumerate() {
        for b in 0..n {
            if z[b] == Complex64::new(0.0, 0.0) {
                continue;
            }
            for c in 0..n {
                for d in 0..n {
                    let mut r = dgam(c, a, d, b) - dgam(d, a, c, b);
                    for e in 0..n {
                        r += gam(a, c, e) * gam(e, d, b) - gam(a, d, e) * gam(e, c, b);
                    }
                    *o += r * z[b] * x[c] * y[d];
                }
            }
        }
    }
    Ok(out)
}

/// Radial normalization of an ambient jet onto the sphere `|p|² = 1/c`.
pub fn embed_project(c: f64, ambient: &[Jet]) -> Result<Vec<Jet>> {
    let r2 = euclidean(ambient, ambient);
    if r2.value().norm() <= f64::EPSILON {
        return Err(Error::DegenerateInput("zero ambient vector".into()));
    }
    let s = r2.scale_re(c).powf(-0.5)?;
    Ok(ambient.iter().map(|a| a * &s).collect())
}

/// Tangential projection `X − c⟨X, p⟩p` at a point of the sphere `|p|² = 1/c`.
pub fn field_project(c: f64, p: &[Jet], x: &[Jet]) -> Vec<Jet> {
    let s = euclidean(x, p).scale_re(-c);
    x.iter().zip(p).map(|(xi, pi)| xi.add_scaled(ONE, &(&s * pi))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const O0: JetOrder = JetOrder::of(0, 0, 0);
    const Z0: Complex64 = Complex64::new(0.0, 0.0);

    fn consts(v: &[Complex64]) -> Vec<Jet> {
        v.iter().map(|&x| Jet::constant(x, O0, Z0)).collect()
    }

    fn vals(v: &[Jet]) -> Vec<Complex64> {
        v.iter().map(Jet::value).collect()
    }

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn fs_point(n: usize, w: &[Complex64]) -> Vec<Complex64> {
        let mut p = w.to_vec();
        p.extend(w.iter().map(|x| x.conj()));
        assert_eq!(p.len(), 2 * n);
        p
    }

    #[test]
    fn fs_metric_examples() {
        let m = TargetModel::cpn(1);
        let g = m.metric_at(&consts(&fs_point(1, &[c(0.0, 0.0)]))).unwrap();
        assert!((g.get(0, 0).unwrap().value() - 1.0).norm() < 1e-15);
        let g = m.metric_at(&consts(&fs_point(1, &[c(0.6, 0.8)]))).unwrap();
        assert!((g.get(0, 0).unwrap().value() - 0.25).norm() < 1e-15);
        let flat = TargetModel::flat(2)
            .metric_at(&consts(&[c(3.0, 0.0), c(1.0, 0.0)]))
            .unwrap();
        assert_eq!(flat.get(0, 0).unwrap().value(), ONE);
        assert!(flat.get(0, 1).is_none());
    }

    #[test]
    fn fs_christoffels_vanish_at_origin_and_match_metric() {
        let m = TargetModel::cpn(1);
        let g = m.christoffels_at(&consts(&fs_point(1, &[Z0]))).unwrap();
        assert_eq!(g.get(0, 0, 0).unwrap().value(), Z0);
        let p = consts(&fs_point(1, &[c(0.5, 0.0)]));
        let closed = m.christoffels_at(&p).unwrap();
        let derived = christoffels_from_metric(&m.metric_fn().unwrap(), &p).unwrap();
        for idx in 0..8 {
            let a = closed.gamma[idx].as_ref().map(Jet::value).unwrap_or(Z0);
            let b = derived.gamma[idx].as_ref().unwrap().value();
            assert!((a - b).norm() < 1e-12, "{idx}: {a} vs {b}");
        }
        // Γ^w_ww = −2w̄ / (1 + |w|²)
        assert!((closed.get(0, 0, 0).unwrap().value() - c(-0.8, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn flat_christoffels_vanish() {
        let g = TargetModel::flat(3).christoffels_at(&consts(&[ONE, ONE, ONE])).unwrap();
        assert!(g.gamma.iter().all(Option::is_none));
    }

    #[test]
    fn space_form_curvature_examples() {
        let pair = |a: &[Jet], b: &[Jet]| euclidean(a, b);
        let e1 = consts(&[ONE, Z0, Z0]);
        let e2 = consts(&[Z0, ONE, Z0]);
        assert_eq!(vals(&curvature_space_form(1.0, &e1, &e2, &e2, pair)), vals(&e1));
        assert!(vals(&curvature_space_form(1.0, &e1, &e1, &e2, pair))
            .iter()
            .all(|v| *v == Z0));
        assert!(vals(&curvature_space_form(0.0, &e1, &e2, &e2, pair))
            .iter()
            .all(|v| *v == Z0));
    }

    #[test]
    fn holomorphic_sectional_curvature() {
        let m = TargetModel::cpn(2);
        let p = consts(&fs_point(2, &[c(0.2, -0.1), c(0.3, 0.4)]));
        let metric = m.bilinear_metric(&p).unwrap();
        // Real unit vector X with X' = a, JX has X' = i a.
        let a = [c(0.7, 0.2), c(-0.3, 0.5)];
        let x = consts(&[a[0], a[1], a[0].conj(), a[1].conj()]);
        let jx = m.complex_structure(&x).unwrap();
        let r = m.curvature(&p, Some(&metric), &x, &jx, &jx).unwrap();
        let num = bilinear(&metric, &r, &x).value();
        let nx = bilinear(&metric, &x, &x).value();
        assert!((num / (nx * nx) - 4.0).norm() < 1e-12);
        let r = m.curvature(&p, Some(&metric), &x, &x, &jx).unwrap();
        assert!(vals(&r).iter().all(|v| v.norm() < 1e-15));
    }

    #[test]
    fn cp1_matches_sphere_of_curvature_four() {
        // Underlying real surface: metric 1/(1+|w|²)² (du² + dv²) in real coordinates (u, v).
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = TargetModel::cpn(1);
        let chart = TargetModel::sphere_chart(2, 4.0);
        for _ in 0..50 {
            let w = c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let p = consts(&fs_point(1, &[w]));
            let real = |r: [f64; 2]| -> Vec<Complex64> {
                // (u, v) components to (w, w̄) components.
                let z = c(r[0], r[1]);
                vec![z, z.conj()]
            };
            let rv = |r: &mut ChaCha8Rng| [r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)];
            let (x, y, z) = (rv(&mut rng), rv(&mut rng), rv(&mut rng));
            let fs = m
                .curvature(&p, None, &consts(&real(x)), &consts(&real(y)), &consts(&real(z)))
                .unwrap();
            // The chart 4/(1+4|y|²)² with y = w/2 is the same metric.
            let q = consts(&[c(w.re / 2.0, 0.0), c(w.im / 2.0, 0.0)]);
            let half = |r: [f64; 2]| consts(&[c(r[0] / 2.0, 0.0), c(r[1] / 2.0, 0.0)]);
            let sf = chart.curvature(&q, None, &half(x), &half(y), &half(z)).unwrap();
            let back = c(2.0 * sf[0].value().re, 2.0 * sf[1].value().re);
            assert!((fs[0].value() - back).norm() < 1e-12, "{} vs {}", fs[0].value(), back);
        }
    }

    #[test]
    fn numeric_curvature_matches_closed_forms() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut rc = |s: f64| c(rng.gen_range(-s..s), rng.gen_range(-s..s));
        let chart = TargetModel::sphere_chart(2, 1.0);
        for _ in 0..20 {
            let p: Vec<Complex64> = (0..2).map(|_| c(rc(1.0).re, 0.0)).collect();
            let v: Vec<Vec<Complex64>> = (0..3).map(|_| (0..2).map(|_| rc(1.0)).collect()).collect();
            let num = curvature_numeric(&chart, &p, &v[0], &v[1], &v[2]).unwrap();
            let cl = chart
                .curvature(&consts(&p), None, &consts(&v[0]), &consts(&v[1]), &consts(&v[2]))
                .unwrap();
            for (a, b) in num.iter().zip(vals(&cl)) {
                assert!((a - b).norm() < 1e-9);
            }
        }
        let fs = TargetModel::cpn(2);
        for _ in 0..20 {
            let w = [rc(0.8), rc(0.8)];
            let p = fs_point(2, &w);
            let v: Vec<Vec<Complex64>> = (0..3).map(|_| (0..4).map(|_| rc(1.0)).collect()).collect();
            let num = curvature_numeric(&fs, &p, &v[0], &v[1], &v[2]).unwrap();
            let cl = fs
                .curvature(&consts(&p), None, &consts(&v[0]), &consts(&v[1]), &consts(&v[2]))
                .unwrap();
            for (a, b) in num.iter().zip(vals(&cl)) {
                assert!((a - b).norm() < 1e-9, "{a} vs {b}");
            }
        }
        let flat = TargetModel::flat(3);
        let z = curvature_numeric(&flat, &[ONE, ONE, ONE], &[ONE, Z0, Z0], &[Z0, ONE, Z0], &[ONE; 3]).unwrap();
        assert!(z.iter().all(|v| *v == Z0));
    }

    #[test]
    fn projection_examples() {
        let o = JetOrder::of(0, 0, 0);
        let amb = vec![Jet::constant(c(2.0, 0.0), o, Z0), Jet::zero(o, Z0), Jet::zero(o, Z0)];
        let p = embed_project(1.0, &amb).unwrap();
        assert_eq!(vals(&p), vec![ONE, Z0, Z0]);
        assert!(vals(&field_project(1.0, &p, &p)).iter().all(|v| *v == Z0));
        let e2 = consts(&[Z0, ONE, Z0]);
        assert_eq!(vals(&field_project(1.0, &p, &e2)), vals(&e2));
        let zero = consts(&[Z0, Z0, Z0]);
        assert!(matches!(embed_project(1.0, &zero), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn singular_general_metric_rejected() {
        let metric: MetricFn =
            Arc::new(|x: &[GradJet]| Ok(vec![x[0].clone(), x[0].clone(), x[0].clone(), x[0].clone()]));
        let m = TargetModel::general(2, metric);
        let r = m.christoffels_at(&consts(&[ONE, ONE]));
        assert!(matches!(r, Err(Error::DegenerateMetric(_))));
    }
}
