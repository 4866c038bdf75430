//! Isotropy pairings of iterated derivatives, their first-order variations, and the
//! holomorphicity residuals behind the vanishing of holomorphic differentials on S².
//!
//! All pairings are evaluated from covariant-derivative towers built once per germ.
//! `η^R_{r,s} = ⟨D^{r−1}φ_z, D^{s−1}φ_z⟩` uses the complex-bilinear metric;
//! `η^C_{r,s} = ⟨D_z^{r−1}A, D_z̄^{s−1}B⟩^Herm` uses the `(1,0)` parts `A` of `φ_z` and `B` of `φ_z̄`.

use num_complex::Complex64;
use serde::Serialize;

use crate::domain::DomainPoint;
use crate::error::{Error, Result};
use crate::jet::{Jet, JetOrder};
use crate::pullback::{Dir, FieldGerm, FieldKind, MapGerm};
use crate::target::TargetKind;

/// Largest `r + s` handled by the isotropy checks.
pub const R_MAX: usize = 6;

/// Which isotropy pairing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PairingKind {
    Real,
    Complex,
}

/// One pairing at a node, with the jet coefficients the checks need.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct DifferentialSample {
    pub point: DomainPoint,
    pub r: usize,
    pub s: usize,
    #[serde(serialize_with = "ser_c")]
    pub value: Complex64,
    /// `∂/∂z̄` of the pairing.
    #[serde(serialize_with = "ser_c")]
    pub dbar: Complex64,
    /// `∂/∂t|₀` of the pairing (families only).
    #[serde(serialize_with = "ser_c")]
    pub dt: Complex64,
    /// `∂²/∂z̄∂t|₀` of the pairing (families only).
    #[serde(serialize_with = "ser_c")]
    pub dbar_dt: Complex64,
    /// Largest norm of the two paired sections.
    pub scale: f64,
}

fn ser_c<S: serde::Serializer>(c: &Complex64, s: S) -> std::result::Result<S::Ok, S::Error> {
    [c.re, c.im].serialize(s)
}

impl DifferentialSample {
    fn from_jet(point: DomainPoint, r: usize, s: usize, j: &Jet, scale: f64) -> Self {
        Self {
            point,
            r,
            s,
            value: j.value(),
            dbar: j.coeff(0, 1, 0),
            dt: j.coeff(0, 0, 1),
            dbar_dt: j.coeff(0, 1, 1),
            scale,
        }
    }
}

/// A scalar value with the scale it should be judged against.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Pairing {
    #[serde(serialize_with = "ser_c")]
    pub value: Complex64,
    pub scale: f64,
}

/// Index pairs `(r, s)` with `r, s ≥ 1` and `r + s ≤ k_max`.
pub fn index_pairs(k_max: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for k in 2..=k_max {
        for r in 1..k {
            out.push((r, k - r));
        }
    }
    out
}

/// Jet order that supports every pairing with `r + s ≤ k_max`, plus one `z̄` order and `t_order`.
pub fn required_order(kind: PairingKind, k_max: usize, t_order: usize) -> JetOrder {
    let top = k_max.saturating_sub(1).max(1);
    match kind {
        PairingKind::Real => JetOrder::of(top, 1, t_order),
        PairingKind::Complex => JetOrder::of(top + 1, top + 1, t_order),
    }
}

/// Like [`required_order`] without the extra `z̄` order, for values and `∂_t` only.
pub fn value_order(kind: PairingKind, k_max: usize, t_order: usize) -> JetOrder {
    let top = k_max.saturating_sub(1).max(1);
    match kind {
        PairingKind::Real => JetOrder::of(top, 0, t_order),
        PairingKind::Complex => JetOrder::of(top, top, t_order),
    }
}

fn check_k(k_max: usize) -> Result<()> {
    if k_max > R_MAX + 1 {
        return Err(Error::OrderCeiling(format!("r + s = {k_max} exceeds {}", R_MAX + 1)));
    }
    Ok(())
}

/// `η^R = ⟨φ_z, φ_z⟩`.
pub fn eta_real(p: &MapGerm) -> Result<DifferentialSample> {
    eta_real_rs(p, 1, 1)
}

pub fn eta_real_rs(p: &MapGerm, r: usize, s: usize) -> Result<DifferentialSample> {
    let a = p.iterated_d(r)?;
    let b = p.iterated_d(s)?;
    let scale = p.norm(&a).max(p.norm(&b));
    Ok(DifferentialSample::from_jet(p.point(), r, s, &p.pair(&a, &b), scale))
}

/// All `η^R_{r,s}` with `r ≤ s`, `r + s ≤ k_max`, from one tower.
pub fn real_isotropy(p: &MapGerm, k_max: usize) -> Result<Vec<DifferentialSample>> {
    check_k(k_max)?;
    let tower = p.tower(k_max - 1)?;
    let norms: Vec<f64> = tower.iter().map(|t| p.norm(t)).collect();
    Ok(index_pairs(k_max)
        .into_iter()
        .filter(|&(r, s)| r <= s)
        .map(|(r, s)| {
            let j = p.pair(&tower[r - 1], &tower[s - 1]);
            DifferentialSample::from_jet(p.point(), r, s, &j, norms[r - 1].max(norms[s - 1]))
        })
        .collect())
}

/// `j^R_{r,s}(v) = ⟨D^r v, D^{s−1}φ_z⟩ + ⟨D^{r−1}φ_z, D^s v⟩` for every `r + s ≤ k_max`.
pub fn j_real(p: &MapGerm, v: &FieldGerm, k_max: usize) -> Result<Vec<((usize, usize), Pairing)>> {
    check_k(k_max)?;
    let tp = p.tower(k_max - 1)?;
    let tv = p.tower_of(Dir::Z, v, k_max)?;
    let np: Vec<f64> = tp.iter().map(|t| p.norm(t)).collect();
    let nv: Vec<f64> = tv.iter().map(|t| p.norm(t)).collect();
    Ok(index_pairs(k_max)
        .into_iter()
        .map(|(r, s)| {
            let val = p.pair(&tv[r], &tp[s - 1]).value() + p.pair(&tp[r - 1], &tv[s]).value();
            let scale = nv[r].max(nv[s]).max(np[r - 1]).max(np[s - 1]);
            ((r, s), Pairing { value: val, scale })
        })
        .collect())
}

pub fn j_real_rs(p: &MapGerm, v: &FieldGerm, r: usize, s: usize) -> Result<Pairing> {
    if r == 0 || s == 0 {
        return Err(Error::Precondition("r, s ≥ 1".into()));
    }
    let all = j_real(p, v, r + s)?;
    Ok(all.into_iter().find(|(k, _)| *k == (r, s)).expect("pair listed").1)
}

/// Germs truncated for `z`-towers and `z̄`-towers: each keeps one order in the other variable,
/// which is all a pairing and its `∂z̄` need.
fn split(p: &MapGerm) -> (MapGerm, MapGerm) {
    let o = p.order();
    (
        p.truncate(JetOrder::of(o.z, o.zbar.min(1), o.t)),
        p.truncate(JetOrder::of(o.z.min(1), o.zbar, o.t)),
    )
}

/// Germ kept only to first order in `z` and `z̄`, enough to evaluate a pairing and its `∂z̄`.
fn pairing_germ(p: &MapGerm) -> MapGerm {
    let o = p.order();
    p.truncate(JetOrder::of(o.z.min(1), o.zbar.min(1), o.t))
}

/// Split germs with the `(1,0)` towers `D_z^k A` (on the first) and `D_z̄^k B` (on the second).
fn complex_towers_split(p: &MapGerm, len: usize) -> Result<(MapGerm, MapGerm, Vec<FieldGerm>, Vec<FieldGerm>)> {
    if !p.model().is_kahler() {
        return Err(Error::UnsupportedTarget(format!("{} is not Kähler", p.model().label())));
    }
    let (pz, pzb) = split(p);
    let a = pz.one_zero(&pz.d_z()?)?;
    let b = pzb.one_zero(&pzb.d_zbar()?)?;
    let ta = pz.tower_of(Dir::Z, &a, len)?;
    let tb = pzb.tower_of(Dir::Zbar, &b, len)?;
    Ok((pz, pzb, ta, tb))
}

fn complex_towers(p: &MapGerm, len: usize) -> Result<(Vec<FieldGerm>, Vec<FieldGerm>)> {
    let (_, _, ta, tb) = complex_towers_split(p, len)?;
    Ok((ta, tb))
}

fn complex_etas(p: &MapGerm, ta: &[FieldGerm], tb: &[FieldGerm], k_max: usize) -> Vec<DifferentialSample> {
    let pm = pairing_germ(p);
    let na: Vec<f64> = ta.iter().map(|t| pm.norm(t)).collect();
    let nb: Vec<f64> = tb.iter().map(|t| pm.norm(t)).collect();
    index_pairs(k_max)
        .into_iter()
        .map(|(r, s)| {
            let j = pm.herm(&ta[r - 1], &tb[s - 1]);
            DifferentialSample::from_jet(p.point(), r, s, &j, na[r - 1].max(nb[s - 1]))
        })
        .collect()
}

pub fn eta_cx_rs(p: &MapGerm, r: usize, s: usize) -> Result<DifferentialSample> {
    let all = complex_isotropy(p, r + s)?;
    Ok(*all.iter().find(|x| (x.r, x.s) == (r, s)).expect("pair listed"))
}

/// All `η^C_{r,s}` with `r + s ≤ k_max`.
pub fn complex_isotropy(p: &MapGerm, k_max: usize) -> Result<Vec<DifferentialSample>> {
    check_k(k_max)?;
    let (ta, tb) = complex_towers(p, k_max - 1)?;
    Ok(complex_etas(p, &ta, &tb, k_max))
}

type Pairings = Vec<((usize, usize), Pairing)>;

fn complex_js(
    (pz, pzb): (&MapGerm, &MapGerm),
    ta: &[FieldGerm],
    tb: &[FieldGerm],
    v: &FieldGerm,
    k_max: usize,
) -> Result<Pairings> {
    let (oz, ozb) = (pz.order(), pzb.order());
    let vz = pz.tower_of(Dir::Z, &v.truncate(oz), k_max)?;
    let vzb = pzb.tower_of(Dir::Zbar, &v.truncate(ozb), k_max)?;
    let o0 = JetOrder::of(0, 0, 0);
    let pm = pzb.truncate(o0);
    // Only values enter, so every operand is cut to its point value once.
    let pt = |xs: &[FieldGerm]| {
        let vals: Vec<FieldGerm> = xs.iter().map(|x| x.truncate(o0)).collect();
        let norms: Vec<f64> = vals.iter().map(|x| pm.norm(x)).collect();
        (vals, norms)
    };
    let ((vz, nvz), (vzb, nvzb), (ta, na), (tb, nb)) = (pt(&vz), pt(&vzb), pt(ta), pt(tb));
    Ok(index_pairs(k_max)
        .into_iter()
        .map(|(r, s)| {
            let val = pm.herm(&vz[r], &tb[s - 1]).value() + pm.herm(&ta[r - 1], &vzb[s]).value();
            let scale = nvz[r].max(nvzb[s]).max(na[r - 1]).max(nb[s - 1]);
            ((r, s), Pairing { value: val, scale })
        })
        .collect())
}

/// `j^C_{r,s}(v) = ⟨D_z^r v, D_z̄^{s−1}B⟩^Herm + ⟨D_z^{r−1}A, D_z̄^s v⟩^Herm` for every `r + s ≤ k_max`.
pub fn j_cx(p: &MapGerm, v: &FieldGerm, k_max: usize) -> Result<Pairings> {
    check_k(k_max)?;
    let (pz, pzb, ta, tb) = complex_towers_split(p, k_max - 1)?;
    complex_js((&pz, &pzb), &ta, &tb, v, k_max)
}

/// `η^C` (with `∂_t`) of a family germ and `j^C` of its variation field, sharing one set of towers.
pub fn complex_family(family: &MapGerm, k_max: usize) -> Result<(Vec<DifferentialSample>, Pairings)> {
    check_k(k_max)?;
    let (pz, pzb, ta, tb) = complex_towers_split(family, k_max - 1)?;
    let etas = complex_etas(family, &ta, &tb, k_max);
    let t0 = |xs: &[FieldGerm]| xs.iter().map(FieldGerm::at_t0).collect::<Vec<_>>();
    let js = complex_js(
        (&pz.at_t0(), &pzb.at_t0()),
        &t0(&ta),
        &t0(&tb),
        &family.variation_field()?,
        k_max,
    )?;
    Ok((etas, js))
}

pub fn j_cx_rs(p: &MapGerm, v: &FieldGerm, r: usize, s: usize) -> Result<Pairing> {
    if r == 0 || s == 0 {
        return Err(Error::Precondition("r, s ≥ 1".into()));
    }
    let all = j_cx(p, v, r + s)?;
    Ok(all.into_iter().find(|(k, _)| *k == (r, s)).expect("pair listed").1)
}

/// `⟨Dv/∂z, ∂^ℂφ/∂z⟩`; zero for conformal vector fields.
pub fn conformal_field_test(p: &MapGerm, v: &FieldGerm) -> Result<Pairing> {
    let dv = p.cov_d(Dir::Z, v)?;
    let pz = p.d_z()?;
    Ok(Pairing {
        value: p.pair(&dv, &pz).value(),
        scale: p.norm(&dv).max(p.norm(&pz)),
    })
}

/// `D v′/∂z̄` for the `(1,0)` part `v′` of `v`.
pub fn holomorphic_field_residual(p: &MapGerm, v: &FieldGerm) -> Result<FieldGerm> {
    let vp = p.one_zero(v)?;
    p.cov_d(Dir::Zbar, &vp)
}

/// Per-pair `∂z̄ η` (and `∂z̄∂t η|₀` for family germs) for either kind of isotropy.
pub fn dbar_of_eta(p: &MapGerm, kind: PairingKind, k_max: usize) -> Result<Vec<DifferentialSample>> {
    match kind {
        PairingKind::Real => real_isotropy(p, k_max),
        PairingKind::Complex => complex_isotropy(p, k_max),
    }
}

/// Residual of `target` after orthogonal projection onto `span(basis)` in the Hermitian
/// metric along `p`, using pivoted Gram–Schmidt with a relative rank cutoff of `1e−12`.
pub fn span_residual(p: &MapGerm, target: &FieldGerm, basis: &[FieldGerm]) -> f64 {
    let o = JetOrder::of(0, 0, 0);
    let p0 = p.truncate(o);
    let herm = |a: &FieldGerm, b: &FieldGerm| p0.herm(a, b).value();
    let mut rest: Vec<FieldGerm> = basis.iter().map(|b| b.truncate(o)).collect();
    let mut r = target.truncate(o);
    let cutoff = 1e-12 * rest.iter().map(|b| herm(b, b).re.max(0.0).sqrt()).fold(0.0, f64::max);
    while !rest.is_empty() {
        let (k, nk) = rest
            .iter()
            .map(|b| herm(b, b).re.max(0.0).sqrt())
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .expect("nonempty");
        if nk <= cutoff || nk == 0.0 {
            break;
        }
        let q = rest.swap_remove(k).scale(Complex64::new(1.0 / nk, 0.0));
        r = r.sub(&q.scale(herm(&r, &q)));
        for b in &mut rest {
            *b = b.sub(&q.scale(herm(b, &q)));
        }
    }
    herm(&r, &r).re.max(0.0).sqrt()
}

/// The residual of `R(X, ∂^ℂφ/∂z) D^{k−1}A` against
/// `span{A, D^{k−1}A, η^C_{k,1} X′}` on a complex space form.
pub fn curvature_span_residual(p: &MapGerm, x: &FieldGerm, k: usize) -> Result<Pairing> {
    if !matches!(p.model().kind, TargetKind::ComplexSpaceForm { .. }) {
        return Err(Error::UnsupportedTarget(format!(
            "{} is not a complex space form",
            p.model().label()
        )));
    }
    if k == 0 {
        return Err(Error::Precondition("k ≥ 1".into()));
    }
    let (ta, tb) = complex_towers(p, k)?;
    let dka = &ta[k - 1];
    let curv = p.curvature(x, &p.d_z()?, dka)?;
    let eta = p.herm(dka, &tb[0]).value();
    let xp = p.one_zero(x)?.scale(eta);
    let basis = [ta[0].clone(), dka.clone(), xp];
    Ok(Pairing {
        value: Complex64::new(span_residual(p, &curv, &basis), 0.0),
        scale: p.norm(&curv),
    })
}

/// Residual of `(D/∂t)|₀ D^{k−1}∂^ℂφ_t/∂z − D^k v/∂z^k` against `θ_{k−1} = span{φ_z, …, D^{k−2}φ_z}`,
/// without checking any hypothesis.
pub fn theta_span_residual(family: &MapGerm, k: usize) -> Result<Pairing> {
    if k == 0 {
        return Err(Error::Precondition("k ≥ 1".into()));
    }
    if family.order().t == 0 {
        return Err(Error::OrderExhausted("theta span needs a family".into()));
    }
    let moved = family.cov_d(Dir::T, &family.iterated_d(k)?)?.at_t0();
    let base = family.at_t0();
    let v = family.variation_field()?;
    let dkv = base.iterate(Dir::Z, &v, k)?;
    let diff = moved.sub(&dkv);
    let basis = base.tower(k - 1)?;
    Ok(Pairing {
        value: Complex64::new(span_residual(&base, &diff, &basis), 0.0),
        scale: base.norm(&moved).max(base.norm(&dkv)),
    })
}

/// [`theta_span_residual`] on a space-form target whose base map is real isotropic here.
pub fn theta_span_check(family: &MapGerm, k: usize, tol: f64) -> Result<Pairing> {
    if !family.model().is_space_form() {
        return Err(Error::UnsupportedTarget(format!(
            "{} is not a space form",
            family.model().label()
        )));
    }
    let base = family.at_t0();
    let k_max = (2 * k).min(base.order().z + 1).max(2);
    for s in real_isotropy(&base, k_max)? {
        if s.value.norm() > tol * (1.0 + s.scale) {
            return Err(Error::Precondition(format!(
                "map is not real isotropic: |eta_{},{}| = {:.3e}",
                s.r,
                s.s,
                s.value.norm()
            )));
        }
    }
    theta_span_residual(family, k)
}

/// Coefficients `c_{r,j}(w)` of `D^r/∂w^r = Σ_j c_{r,j} D^j/∂z^j` under the chart change
/// `z = 1/w`, evaluated at `w`, for `r ≤ r_max`.
pub fn transition_coefficients(w: Complex64, r_max: usize) -> Result<Vec<Vec<Complex64>>> {
    let o = JetOrder::new(r_max, 0, 0)?;
    let var = Jet::var_z(o, w);
    let zp = (&var * &var).recip()?.scale_re(-1.0);
    let mut rows: Vec<Vec<Jet>> = vec![vec![Jet::constant(Complex64::new(1.0, 0.0), o, w)]];
    for r in 0..r_max {
        let prev = &rows[r];
        let mut next = Vec::with_capacity(r + 2);
        for j in 0..=r + 1 {
            let mut c = match prev.get(j) {
                Some(x) if x.order().z > 0 => x.d_z()?,
                _ => Jet::zero(o, w),
            };
            if j >= 1 {
                c = &c + &(&zp * &prev[j - 1]);
            }
            next.push(c);
        }
        rows.push(next);
    }
    Ok(rows
        .into_iter()
        .map(|row| row.iter().map(Jet::value).collect())
        .collect())
}

/// `Σ_{i ≤ r, j ≤ s} c_{r,i} c_{s,j} x_{i,j}` for a table `x` indexed from 1.
pub fn transform_pairing(
    coeffs: &[Vec<Complex64>],
    r: usize,
    s: usize,
    x: impl Fn(usize, usize) -> Complex64,
) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 1..=r {
        for j in 1..=s {
            acc += coeffs[r][i] * coeffs[s][j] * x(i, j);
        }
    }
    acc
}

/// Real field germ from a family germ, for callers that only hold the family.
pub fn variation_of(family: &MapGerm) -> Result<FieldGerm> {
    let v = family.variation_field()?;
    Ok(FieldGerm::new(FieldKind::Real, v.comps))
}
