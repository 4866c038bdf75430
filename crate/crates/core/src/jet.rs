//! Truncated Taylor arithmetic in `(z, z̄, t)`.
//!
//! A [`Jet`] stores the coefficients `c[a, b, c]` of the monomials
//! `(z - z₀)^a (z̄ - z̄₀)^b t^c` of a function germ at the base point `z₀`.
//! `z` and `z̄` are independent variables (Wirtinger calculus); `t` is a real
//! deformation parameter, so conjugation never produces a `t̄`.
//!
//! Truncation is per variable ("box" truncation): a jet of order `(p, q, r)`
//! keeps every monomial with `a ≤ p`, `b ≤ q`, `c ≤ r`. Products of jets of
//! different order are exact up to the componentwise minimum, which is what
//! the operator impls return. The checked [`Jet::try_add`] / [`Jet::try_mul`]
//! refuse mismatched operands instead.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use num_complex::Complex64;

use crate::error::{Error, Result};

pub const MAX_ORDER_Z: usize = 8;
pub const MAX_ORDER_ZBAR: usize = 8;
pub const MAX_ORDER_T: usize = 2;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Truncation orders in `z`, `z̄` and `t`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct JetOrder {
    pub z: usize,
    pub zbar: usize,
    pub t: usize,
}

impl JetOrder {
    pub fn new(z: usize, zbar: usize, t: usize) -> Result<Self> {
        if z > MAX_ORDER_Z || zbar > MAX_ORDER_ZBAR || t > MAX_ORDER_T {
            return Err(Error::OrderCeiling(format!("({z}, {zbar}, {t})")));
        }
        Ok(Self { z, zbar, t })
    }

    /// Same as [`JetOrder::new`] for orders known to be in range.
    pub const fn of(z: usize, zbar: usize, t: usize) -> Self {
        assert!(z <= MAX_ORDER_Z && zbar <= MAX_ORDER_ZBAR && t <= MAX_ORDER_T);
        Self { z, zbar, t }
    }

    pub fn len(&self) -> usize {
        (self.z + 1) * (self.zbar + 1) * (self.t + 1)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn min(self, other: Self) -> Self {
        Self {
            z: self.z.min(other.z),
            zbar: self.zbar.min(other.zbar),
            t: self.t.min(other.t),
        }
    }

    pub fn contains(&self, a: usize, b: usize, c: usize) -> bool {
        a <= self.z && b <= self.zbar && c <= self.t
    }

    pub fn total(&self) -> usize {
        self.z + self.zbar + self.t
    }

    #[inline]
    fn index(&self, a: usize, b: usize, c: usize) -> usize {
        (a * (self.zbar + 1) + b) * (self.t + 1) + c
    }

    pub fn with_t(self, t: usize) -> Self {
        Self { t, ..self }
    }
}

impl fmt::Display for JetOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.z, self.zbar, self.t)
    }
}

/// Truncated Taylor expansion in `(z - z₀, z̄ - z̄₀, t)` with complex coefficients.
#[derive(Clone, PartialEq)]
pub struct Jet {
    order: JetOrder,
    base: Complex64,
    coeffs: Vec<Complex64>,
}

impl fmt::Debug for Jet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut m = f.debug_map();
        for a in 0..=self.order.z {
            for b in 0..=self.order.zbar {
                for c in 0..=self.order.t {
                    let v = self.coeff(a, b, c);
                    if v != ZERO {
                        m.entry(&(a, b, c), &v);
                    }
                }
            }
        }
        m.finish()
    }
}

impl Jet {
    pub fn zero(order: JetOrder, base: Complex64) -> Self {
        Self {
            order,
            base,
            coeffs: vec![ZERO; order.len()],
        }
    }

    pub fn constant(value: Complex64, order: JetOrder, base: Complex64) -> Self {
        let mut j = Self::zero(order, base);
        j.coeffs[0] = value;
        j
    }

    /// The coordinate function `z`, i.e. `z₀ + (z - z₀)`.
    pub fn var_z(order: JetOrder, base: Complex64) -> Self {
        let mut j = Self::constant(base, order, base);
        if order.z >= 1 {
            let i = order.index(1, 0, 0);
            j.coeffs[i] = ONE;
        }
        j
    }

    /// The coordinate function `z̄`.
    pub fn var_zbar(order: JetOrder, base: Complex64) -> Self {
        let mut j = Self::constant(base.conj(), order, base);
        if order.zbar >= 1 {
            let i = order.index(0, 1, 0);
            j.coeffs[i] = ONE;
        }
        j
    }

    /// The deformation parameter `t` (value zero at the base point).
    pub fn var_t(order: JetOrder, base: Complex64) -> Self {
        let mut j = Self::zero(order, base);
        if order.t >= 1 {
            let i = order.index(0, 0, 1);
            j.coeffs[i] = ONE;
        }
        j
    }

    /// Builds a jet from a dense lexicographic coefficient array.
    pub fn from_coeffs(order: JetOrder, base: Complex64, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != order.len() {
            return Err(Error::Mismatch(format!(
                "{} coefficients for order {order} (expected {})",
                coeffs.len(),
                order.len()
            )));
        }
        Ok(Self { order, base, coeffs })
    }

    pub fn order(&self) -> JetOrder {
        self.order
    }

    pub fn base(&self) -> Complex64 {
        self.base
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    /// Raw Taylor coefficient; zero outside the stored order.
    #[inline]
    pub fn coeff(&self, a: usize, b: usize, c: usize) -> Complex64 {
        if self.order.contains(a, b, c) {
            self.coeffs[self.order.index(a, b, c)]
        } else {
            ZERO
        }
    }

    pub fn set_coeff(&mut self, a: usize, b: usize, c: usize, v: Complex64) -> Result<()> {
        self.check_index(a, b, c)?;
        let i = self.order.index(a, b, c);
        self.coeffs[i] = v;
        Ok(())
    }

    /// Value of the represented function at the base point (and `t = 0`).
    pub fn value(&self) -> Complex64 {
        self.coeffs[0]
    }

    fn check_index(&self, a: usize, b: usize, c: usize) -> Result<()> {
        if self.order.contains(a, b, c) {
            Ok(())
        } else {
            Err(Error::IndexOutOfRange {
                a,
                b,
                c,
                oz: self.order.z,
                ozb: self.order.zbar,
                ot: self.order.t,
            })
        }
    }

    /// Mixed partial `∂_z^a ∂_z̄^b ∂_t^c` at the base point: `a! b! c! · c[a,b,c]`.
    pub fn extract(&self, a: usize, b: usize, c: usize) -> Result<Complex64> {
        self.check_index(a, b, c)?;
        let f = factorial(a) * factorial(b) * factorial(c);
        Ok(self.coeffs[self.order.index(a, b, c)] * f)
    }

    /// Pointwise complex conjugate of the represented function.
    ///
    /// Conjugation exchanges the roles of `z` and `z̄`, so the orders swap too.
    pub fn conjugate(&self) -> Jet {
        let order = JetOrder {
            z: self.order.zbar,
            zbar: self.order.z,
            t: self.order.t,
        };
        let mut out = Jet::zero(order, self.base);
        for a in 0..=order.z {
            for b in 0..=order.zbar {
                for c in 0..=order.t {
                    out.coeffs[order.index(a, b, c)] = self.coeff(b, a, c).conj();
                }
            }
        }
        out
    }

    /// `c[a,b,c] == conj(c[b,a,c])` for every index, within `tol`.
    pub fn is_real_valued(&self, tol: f64) -> bool {
        if self.order.z != self.order.zbar {
            return false;
        }
        let scale = 1.0 + self.max_abs();
        (0..=self.order.z).all(|a| {
            (0..=self.order.zbar).all(|b| {
                (0..=self.order.t).all(|c| (self.coeff(a, b, c) - self.coeff(b, a, c).conj()).norm() <= tol * scale)
            })
        })
    }

    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    pub fn truncate(&self, order: JetOrder) -> Jet {
        let order = order.min(self.order);
        if order == self.order {
            return self.clone();
        }
        let mut out = Jet::zero(order, self.base);
        for a in 0..=order.z {
            for b in 0..=order.zbar {
                for c in 0..=order.t {
                    out.coeffs[order.index(a, b, c)] = self.coeffs[self.order.index(a, b, c)];
                }
            }
        }
        out
    }

    /// Restriction to `t = 0`.
    pub fn at_t0(&self) -> Jet {
        self.truncate(self.order.with_t(0))
    }

    /// Raises the `t` order of a jet, filling the new coefficients with zero.
    ///
    /// Exact only for functions that do not depend on `t` beyond the stored order,
    /// which is how callers use it (lifting `t`-independent data into a family).
    pub fn lift_t(&self, t: usize) -> Jet {
        assert!(t <= MAX_ORDER_T);
        if t <= self.order.t {
            return self.truncate(self.order.with_t(t));
        }
        let order = self.order.with_t(t);
        let mut out = Jet::zero(order, self.base);
        for a in 0..=order.z {
            for b in 0..=order.zbar {
                for c in 0..=self.order.t {
                    out.coeffs[order.index(a, b, c)] = self.coeffs[self.order.index(a, b, c)];
                }
            }
        }
        out
    }

    fn derivative(&self, var: usize) -> Result<Jet> {
        let o = self.order;
        let (len, name) = match var {
            0 => (o.z, "z"),
            1 => (o.zbar, "z̄"),
            _ => (o.t, "t"),
        };
        if len == 0 {
            return Err(Error::OrderExhausted(format!("∂/∂{name} of a jet of order {o}")));
        }
        let order = match var {
            0 => JetOrder { z: o.z - 1, ..o },
            1 => JetOrder { zbar: o.zbar - 1, ..o },
            _ => JetOrder { t: o.t - 1, ..o },
        };
        let mut out = Jet::zero(order, self.base);
        for a in 0..=order.z {
            for b in 0..=order.zbar {
                for c in 0..=order.t {
                    let (src, k) = match var {
                        0 => (o.index(a + 1, b, c), a + 1),
                        1 => (o.index(a, b + 1, c), b + 1),
                        _ => (o.index(a, b, c + 1), c + 1),
                    };
                    out.coeffs[order.index(a, b, c)] = self.coeffs[src] * k as f64;
                }
            }
        }
        Ok(out)
    }

    /// Wirtinger derivative `∂/∂z`; lowers the `z` order by one.
    pub fn d_z(&self) -> Result<Jet> {
        self.derivative(0)
    }

    /// Wirtinger derivative `∂/∂z̄`; lowers the `z̄` order by one.
    pub fn d_zbar(&self) -> Result<Jet> {
        self.derivative(1)
    }

    /// `∂/∂t`; lowers the `t` order by one.
    pub fn d_t(&self) -> Result<Jet> {
        self.derivative(2)
    }

    fn check_compatible(&self, other: &Jet) -> Result<()> {
        if self.order != other.order {
            return Err(Error::Mismatch(format!("orders {} and {}", self.order, other.order)));
        }
        if self.base != other.base {
            return Err(Error::Mismatch(format!("base points {} and {}", self.base, other.base)));
        }
        Ok(())
    }

    /// Coefficientwise sum; operands must share order and base point.
    pub fn try_add(&self, other: &Jet) -> Result<Jet> {
        self.check_compatible(other)?;
        Ok(self + other)
    }

    /// Truncated Cauchy product; operands must share order and base point.
    pub fn try_mul(&self, other: &Jet) -> Result<Jet> {
        self.check_compatible(other)?;
        Ok(self * other)
    }

    pub fn scale(&self, s: Complex64) -> Jet {
        Jet {
            order: self.order,
            base: self.base,
            coeffs: self.coeffs.iter().map(|c| c * s).collect(),
        }
    }

    pub fn scale_re(&self, s: f64) -> Jet {
        Jet {
            order: self.order,
            base: self.base,
            coeffs: self.coeffs.iter().map(|c| c * s).collect(),
        }
    }

    /// `self + s * other`, truncated to the common order.
    pub fn add_scaled(&self, s: Complex64, other: &Jet) -> Jet {
        let mut out = self.truncate(other.order);
        out.axpy(s, other);
        out
    }

    /// In-place `self += s * other` where `other` has order at least `self`'s.
    fn axpy(&mut self, s: Complex64, other: &Jet) {
        let o = self.order;
        if o == other.order {
            for (x, y) in self.coeffs.iter_mut().zip(&other.coeffs) {
                *x += s * y;
            }
        } else {
            for a in 0..=o.z {
                for b in 0..=o.zbar {
                    for c in 0..=o.t {
                        self.coeffs[o.index(a, b, c)] += s * other.coeff(a, b, c);
                    }
                }
            }
        }
    }

    /// Accumulates `x * y` into `self`, truncating to `self`'s order.
    pub fn add_product(&mut self, x: &Jet, y: &Jet) {
        debug_assert_eq!(x.base, self.base);
        debug_assert_eq!(y.base, self.base);
        let o = self.order.min(x.order).min(y.order);
        if o != self.order {
            *self = self.truncate(o);
        }
        mul_into(&mut self.coeffs, o, x, y);
    }

    /// Composition `f ∘ self` for an analytic outer function.
    pub fn compose(&self, outer: &Analytic) -> Result<Jet> {
        let c0 = self.value();
        let degree = self.order.total();
        if let Analytic::Polynomial { center, coeffs } = outer {
            let u = self - &Jet::constant(*center, self.order, self.base);
            return Ok(horner(coeffs, &u));
        }
        let coeffs = outer.taylor(c0, degree)?;
        let mut u = self.clone();
        u.coeffs[0] = ZERO;
        Ok(horner(&coeffs, &u))
    }

    pub fn recip(&self) -> Result<Jet> {
        self.compose(&Analytic::Power(-1.0))
    }

    pub fn sqrt(&self) -> Result<Jet> {
        self.compose(&Analytic::Power(0.5))
    }

    pub fn powf(&self, alpha: f64) -> Result<Jet> {
        self.compose(&Analytic::Power(alpha))
    }

    pub fn exp(&self) -> Jet {
        self.compose(&Analytic::Exp).expect("exp is entire")
    }

    pub fn div(&self, other: &Jet) -> Result<Jet> {
        Ok(self * &other.recip()?)
    }
}

fn horner(coeffs: &[Complex64], u: &Jet) -> Jet {
    let mut acc = Jet::constant(coeffs.last().copied().unwrap_or(ZERO), u.order, u.base);
    for &c in coeffs.iter().rev().skip(1) {
        acc = &acc * u;
        acc.coeffs[0] += c;
    }
    acc
}

#[inline]
fn mul_into(out: &mut [Complex64], o: JetOrder, x: &Jet, y: &Jet) {
    let (xo, yo) = (x.order, y.order);
    for a1 in 0..=o.z {
        for b1 in 0..=o.zbar {
            for c1 in 0..=o.t {
                let xv = x.coeffs[xo.index(a1, b1, c1)];
                if xv == ZERO {
                    continue;
                }
                // With matching t-strides and c1 = 0 the (b2, c2) block is one contiguous run.
                if c1 == 0 && yo.t == o.t {
                    let len = (o.zbar - b1 + 1) * (o.t + 1);
                    for a2 in 0..=(o.z - a1) {
                        let orow = o.index(a1 + a2, b1, 0);
                        let yrow = yo.index(a2, 0, 0);
                        for (dst, src) in out[orow..orow + len].iter_mut().zip(&y.coeffs[yrow..yrow + len]) {
                            *dst += xv * src;
                        }
                    }
                    continue;
                }
                for a2 in 0..=(o.z - a1) {
                    for b2 in 0..=(o.zbar - b1) {
                        let yrow = yo.index(a2, b2, 0);
                        let orow = o.index(a1 + a2, b1 + b2, c1);
                        for c2 in 0..=(o.t - c1) {
                            out[orow + c2] += xv * y.coeffs[yrow + c2];
                        }
                    }
                }
            }
        }
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Outer functions for [`Jet::compose`].
#[derive(Clone, Debug, PartialEq)]
pub enum Analytic {
    /// `Σ coeffs[k] (w - center)^k`; evaluated exactly at any inner value.
    Polynomial {
        center: Complex64,
        coeffs: Vec<Complex64>,
    },
    /// Power series at `center`; only usable when the inner jet's value is `center`.
    /// Missing high-order coefficients are taken as zero.
    Series {
        center: Complex64,
        coeffs: Vec<Complex64>,
    },
    /// Principal branch of `w^alpha`.
    Power(f64),
    Exp,
    /// Principal branch of `log w`.
    Log,
}

impl Analytic {
    /// Taylor coefficients `f^(k)(c0) / k!` for `k = 0..=degree`.
    pub fn taylor(&self, c0: Complex64, degree: usize) -> Result<Vec<Complex64>> {
        let n = degree + 1;
        match self {
            Analytic::Polynomial { center, coeffs } => {
                // Re-expand by repeated synthetic division.
                let mut work: Vec<Complex64> = coeffs.clone();
                let shift = c0 - center;
                let mut out = Vec::with_capacity(n);
                for _ in 0..n {
                    if work.is_empty() {
                        out.push(ZERO);
                        continue;
                    }
                    let mut rem = ZERO;
                    let mut quotient = vec![ZERO; work.len().saturating_sub(1)];
                    for i in (0..work.len()).rev() {
                        let v = work[i] + rem * shift;
                        if i == 0 {
                            rem = v;
                        } else {
                            quotient[i - 1] = v;
                            rem = v;
                        }
                    }
                    out.push(rem);
                    work = quotient;
                }
                Ok(out)
            }
            Analytic::Series { center, coeffs } => {
                let tol = 1e-14 * (1.0 + center.norm());
                if (c0 - center).norm() > tol {
                    return Err(Error::SingularComposition(format!(
                        "series at {center} cannot be re-expanded at {c0}"
                    )));
                }
                Ok((0..n).map(|k| coeffs.get(k).copied().unwrap_or(ZERO)).collect())
            }
            Analytic::Power(alpha) => {
                let alpha = *alpha;
                let is_nat = alpha >= 0.0 && alpha.fract() == 0.0;
                if c0 == ZERO {
                    if !is_nat {
                        return Err(Error::SingularComposition(format!("w^{alpha} is not analytic at 0")));
                    }
                    let p = alpha as usize;
                    return Ok((0..n).map(|k| if k == p { ONE } else { ZERO }).collect());
                }
                let mut out = Vec::with_capacity(n);
                let mut term = if is_nat {
                    c0.powu(alpha as u32)
                } else if alpha.fract() == 0.0 {
                    c0.powi(alpha as i32)
                } else {
                    c0.powf(alpha)
                };
                let inv = c0.inv();
                for k in 0..n {
                    out.push(term);
                    term = term * inv * ((alpha - k as f64) / (k as f64 + 1.0));
                }
                Ok(out)
            }
            Analytic::Exp => {
                let e = c0.exp();
                let mut out = Vec::with_capacity(n);
                let mut f = 1.0;
                for k in 0..n {
                    if k > 0 {
                        f *= k as f64;
                    }
                    out.push(e / f);
                }
                Ok(out)
            }
            Analytic::Log => {
                if c0 == ZERO {
                    return Err(Error::SingularComposition("log is not analytic at 0".into()));
                }
                let mut out = vec![c0.ln()];
                let inv = c0.inv();
                let mut p = ONE;
                for k in 1..n {
                    p *= inv;
                    let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
                    out.push(p * (sign / k as f64));
                }
                Ok(out)
            }
        }
    }
}

impl Add for &Jet {
    type Output = Jet;
    fn add(self, rhs: &Jet) -> Jet {
        assert_eq!(self.base, rhs.base, "jet base points differ");
        let mut out = self.truncate(rhs.order);
        out.axpy(ONE, rhs);
        out
    }
}

impl Sub for &Jet {
    type Output = Jet;
    fn sub(self, rhs: &Jet) -> Jet {
        assert_eq!(self.base, rhs.base, "jet base points differ");
        let mut out = self.truncate(rhs.order);
        out.axpy(-ONE, rhs);
        out
    }
}

impl Mul for &Jet {
    type Output = Jet;
    fn mul(self, rhs: &Jet) -> Jet {
        assert_eq!(self.base, rhs.base, "jet base points differ");
        let o = self.order.min(rhs.order);
        let mut out = Jet::zero(o, self.base);
        mul_into(&mut out.coeffs, o, self, rhs);
        out
    }
}

impl Neg for &Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale_re(-1.0)
    }
}

impl Mul<Complex64> for &Jet {
    type Output = Jet;
    fn mul(self, rhs: Complex64) -> Jet {
        self.scale(rhs)
    }
}

impl Add<Complex64> for &Jet {
    type Output = Jet;
    fn add(self, rhs: Complex64) -> Jet {
        let mut out = self.clone();
        out.coeffs[0] += rhs;
        out
    }
}

impl AddAssign<&Jet> for Jet {
    fn add_assign(&mut self, rhs: &Jet) {
        assert_eq!(self.base, rhs.base, "jet base points differ");
        if rhs.order != self.order {
            *self = self.truncate(rhs.order);
        }
        self.axpy(ONE, rhs);
    }
}

impl SubAssign<&Jet> for Jet {
    fn sub_assign(&mut self, rhs: &Jet) {
        assert_eq!(self.base, rhs.base, "jet base points differ");
        if rhs.order != self.order {
            *self = self.truncate(rhs.order);
        }
        self.axpy(-ONE, rhs);
    }
}

macro_rules! forward_owned {
    ($tr:ident, $m:ident) => {
        impl $tr<Jet> for Jet {
            type Output = Jet;
            fn $m(self, rhs: Jet) -> Jet {
                (&self).$m(&rhs)
            }
        }
        impl $tr<&Jet> for Jet {
            type Output = Jet;
            fn $m(self, rhs: &Jet) -> Jet {
                (&self).$m(rhs)
            }
        }
        impl $tr<Jet> for &Jet {
            type Output = Jet;
            fn $m(self, rhs: Jet) -> Jet {
                self.$m(&rhs)
            }
        }
    };
}
forward_owned!(Add, add);
forward_owned!(Sub, sub);
forward_owned!(Mul, mul);

impl Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        -&self
    }
}

/// A jet together with its gradient with respect to a set of chart coordinates.
///
/// Forward-mode differentiation over jet-valued scalars: metric evaluators are
/// written once against this type and yield both `h(x)` and `∂h/∂x^C` along a germ.
#[derive(Clone, Debug)]
pub struct GradJet {
    pub value: Jet,
    pub grad: Vec<Jet>,
}

impl GradJet {
    pub fn constant(value: Complex64, like: &Jet, ndirs: usize) -> Self {
        let z = Jet::zero(like.order(), like.base());
        Self {
            value: Jet::constant(value, like.order(), like.base()),
            grad: vec![z; ndirs],
        }
    }

    /// `ndirs` independent coordinate inputs seeded with unit gradients.
    pub fn seed(coords: &[Jet]) -> Vec<GradJet> {
        let n = coords.len();
        coords
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let mut grad = vec![Jet::zero(x.order(), x.base()); n];
                grad[i] = Jet::constant(ONE, x.order(), x.base());
                GradJet { value: x.clone(), grad }
            })
            .collect()
    }

    pub fn add(&self, o: &GradJet) -> GradJet {
        GradJet {
            value: &self.value + &o.value,
            grad: self.grad.iter().zip(&o.grad).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, o: &GradJet) -> GradJet {
        GradJet {
            value: &self.value - &o.value,
            grad: self.grad.iter().zip(&o.grad).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn mul(&self, o: &GradJet) -> GradJet {
        GradJet {
            value: &self.value * &o.value,
            grad: self
                .grad
                .iter()
                .zip(&o.grad)
                .map(|(a, b)| a * &o.value + &self.value * b)
                .collect(),
        }
    }

    pub fn scale(&self, s: Complex64) -> GradJet {
        GradJet {
            value: self.value.scale(s),
            grad: self.grad.iter().map(|g| g.scale(s)).collect(),
        }
    }

    pub fn add_const(&self, s: Complex64) -> GradJet {
        GradJet {
            value: &self.value + s,
            grad: self.grad.clone(),
        }
    }

    pub fn recip(&self) -> Result<GradJet> {
        let r = self.value.recip()?;
        let r2 = &r * &r;
        Ok(GradJet {
            grad: self.grad.iter().map(|g| -(g * &r2)).collect(),
            value: r,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    const O0: Complex64 = ZERO;

    #[test]
    fn product_of_linear_factors() {
        let o = JetOrder::of(1, 1, 0);
        let a = &Jet::constant(ONE, o, O0) + &Jet::var_z(o, O0);
        let b = &Jet::constant(ONE, o, O0) + &Jet::var_zbar(o, O0);
        let p = a.try_mul(&b).unwrap();
        assert_eq!(p.coeff(0, 0, 0), ONE);
        assert_eq!(p.coeff(1, 0, 0), ONE);
        assert_eq!(p.coeff(0, 1, 0), ONE);
        assert_eq!(p.coeff(1, 1, 0), ONE);
    }

    #[test]
    fn binomial_square() {
        let o = JetOrder::of(2, 2, 0);
        let s = &Jet::var_z(o, O0) + &Jet::var_zbar(o, O0);
        let p = &s * &s;
        assert_eq!(p.coeff(2, 0, 0), ONE);
        assert_eq!(p.coeff(1, 1, 0), c(2.0, 0.0));
        assert_eq!(p.coeff(0, 2, 0), ONE);
        assert_eq!(p.coeff(0, 0, 0), O0);
    }

    #[test]
    fn multiplicative_identity() {
        let o = JetOrder::of(3, 2, 1);
        let a = sample(o, 3);
        let one = Jet::constant(ONE, o, a.base());
        assert_eq!(&a * &one, a);
    }

    #[test]
    fn mismatched_operands_rejected() {
        let a = Jet::var_z(JetOrder::of(2, 2, 0), O0);
        let b = Jet::var_z(JetOrder::of(1, 2, 0), O0);
        assert!(matches!(a.try_mul(&b), Err(Error::Mismatch(_))));
        let c = Jet::var_z(JetOrder::of(2, 2, 0), ONE);
        assert!(matches!(a.try_add(&c), Err(Error::Mismatch(_))));
    }

    #[test]
    fn order_ceiling() {
        assert!(JetOrder::new(9, 0, 0).is_err());
        assert!(JetOrder::new(8, 8, 3).is_err());
        assert_eq!(JetOrder::new(8, 8, 2).unwrap().len(), 243);
    }

    #[test]
    fn compose_examples() {
        let o = JetOrder::of(2, 0, 0);
        let inner = &Jet::constant(ONE, o, O0) + &Jet::var_z(o, O0);
        let sq = Analytic::Polynomial {
            center: O0,
            coeffs: vec![O0, O0, ONE],
        };
        let r = inner.compose(&sq).unwrap();
        assert_eq!(r.coeff(0, 0, 0), ONE);
        assert_eq!(r.coeff(1, 0, 0), c(2.0, 0.0));
        assert_eq!(r.coeff(2, 0, 0), ONE);

        let geo = Analytic::Series {
            center: O0,
            coeffs: (0..10).map(|k| c(if k % 2 == 0 { 1.0 } else { -1.0 }, 0.0)).collect(),
        };
        let r = Jet::var_z(o, O0).compose(&geo).unwrap();
        assert_eq!(r.coeff(0, 0, 0), ONE);
        assert_eq!(r.coeff(1, 0, 0), -ONE);
        assert_eq!(r.coeff(2, 0, 0), ONE);

        let id = Analytic::Polynomial {
            center: O0,
            coeffs: vec![O0, ONE],
        };
        let j = sample(JetOrder::of(2, 2, 1), 7);
        let r = j.compose(&id).unwrap();
        for (x, y) in r.coeffs().iter().zip(j.coeffs()) {
            assert!((x - y).norm() < 1e-15);
        }
    }

    #[test]
    fn compose_singular() {
        let o = JetOrder::of(2, 0, 0);
        let z = Jet::var_z(o, O0);
        assert!(matches!(z.recip(), Err(Error::SingularComposition(_))));
        assert!(matches!(z.compose(&Analytic::Log), Err(Error::SingularComposition(_))));
        let geo = Analytic::Series {
            center: O0,
            coeffs: vec![ONE; 4],
        };
        let shifted = &z + ONE;
        assert!(matches!(shifted.compose(&geo), Err(Error::SingularComposition(_))));
        // Non-negative integer powers are fine at zero.
        let sq = z.powf(2.0).unwrap();
        assert_eq!(sq.coeff(2, 0, 0), ONE);
    }

    #[test]
    fn recip_matches_geometric_series() {
        let o = JetOrder::of(4, 0, 0);
        let base = c(0.0, 0.0);
        let inner = &Jet::var_z(o, base) + ONE;
        let r = inner.recip().unwrap();
        for k in 0..=4 {
            let expect = if k % 2 == 0 { 1.0 } else { -1.0 };
            assert!((r.coeff(k, 0, 0) - c(expect, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn extract_examples() {
        let o = JetOrder::of(2, 1, 1);
        let z = Jet::var_z(o, O0);
        assert_eq!((&z * &z).extract(2, 0, 0).unwrap(), c(2.0, 0.0));
        let zzt = &(&z * &Jet::var_zbar(o, O0)) * &Jet::var_t(o, O0);
        assert_eq!(zzt.extract(1, 1, 1).unwrap(), ONE);
        let base = c(0.3, -0.2);
        let w = Jet::var_z(o, base);
        let f = &w * &w;
        assert!((f.extract(0, 0, 0).unwrap() - base * base).norm() < 1e-15);
        assert!(matches!(f.extract(3, 0, 0), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn conjugate_examples() {
        let o = JetOrder::of(1, 1, 0);
        let z = Jet::var_z(o, O0);
        assert_eq!(z.conjugate(), Jet::var_zbar(o, O0));
        let izz = (&z * &Jet::var_zbar(o, O0)).scale(c(0.0, 1.0));
        assert_eq!(izz.conjugate(), izz.scale(-ONE));
        let j = sample(JetOrder::of(3, 2, 1), 11);
        assert_eq!(j.conjugate().conjugate(), j);
    }

    #[test]
    fn derivative_fidelity_against_finite_differences() {
        // f = exp(z + 2 z̄) at z₀ = 0.3 + 0.1i, order (4, 4, 0).
        let z0 = c(0.3, 0.1);
        let o = JetOrder::of(4, 4, 0);
        let arg = &Jet::var_z(o, z0) + &Jet::var_zbar(o, z0).scale_re(2.0);
        let f = arg.exp();
        let jet_val = f.extract(1, 1, 0).unwrap();
        // Pointwise evaluation and central differences in x, y.
        let eval = |z: Complex64| (z + z.conj() * 2.0).exp();
        let h = 1e-3;
        let dxx = |z: Complex64| {
            // ∂_z ∂_z̄ = ¼ Δ
            let ex = eval(z + h) - eval(z) * 2.0 + eval(z - h);
            let iy = c(0.0, h);
            let ey = eval(z + iy) - eval(z) * 2.0 + eval(z - iy);
            (ex + ey) / (4.0 * h * h)
        };
        let fd = dxx(z0);
        assert!((jet_val - fd).norm() < 1e-6 * (1.0 + fd.norm()), "{jet_val} vs {fd}");
    }

    #[test]
    fn derivatives_shift_orders() {
        let o = JetOrder::of(2, 2, 1);
        let j = sample(o, 5);
        assert_eq!(j.d_z().unwrap().order(), JetOrder::of(1, 2, 1));
        assert_eq!(j.d_zbar().unwrap().order(), JetOrder::of(2, 1, 1));
        assert_eq!(j.d_t().unwrap().order(), JetOrder::of(2, 2, 0));
        let flat = Jet::var_z(JetOrder::of(0, 1, 0), O0);
        assert!(matches!(flat.d_z(), Err(Error::OrderExhausted(_))));
    }

    #[test]
    fn real_valued_flag() {
        let o = JetOrder::of(2, 2, 1);
        let z = Jet::var_z(o, c(0.2, 0.4));
        let r = &z * &z.conjugate();
        assert!(r.is_real_valued(1e-15));
        assert!(!z.is_real_valued(1e-15));
    }

    #[test]
    fn gradjet_recip() {
        let o = JetOrder::of(1, 0, 0);
        let x = GradJet::seed(&[&Jet::var_z(o, O0) + c(2.0, 0.0)]);
        let r = x[0].recip().unwrap();
        assert!((r.grad[0].value() - c(-0.25, 0.0)).norm() < 1e-15);
    }

    pub(crate) fn sample(order: JetOrder, seed: u64) -> Jet {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        let base = c(next() * 0.5, next() * 0.5);
        let coeffs = (0..order.len()).map(|_| c(next(), next())).collect();
        Jet::from_coeffs(order, base, coeffs).unwrap()
    }

    fn arb_jet(order: JetOrder) -> impl Strategy<Value = Jet> {
        proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), order.len())
            .prop_map(move |v| Jet::from_coeffs(order, O0, v.into_iter().map(|(a, b)| c(a, b)).collect()).unwrap())
    }

    fn close(a: &Jet, b: &Jet, tol: f64) -> bool {
        let scale = 1.0 + a.max_abs().max(b.max_abs());
        a.coeffs()
            .iter()
            .zip(b.coeffs())
            .all(|(x, y)| (x - y).norm() <= tol * scale)
    }

    proptest! {
        #[test]
        fn ring_axioms(a in arb_jet(JetOrder::of(3, 2, 1)),
                       b in arb_jet(JetOrder::of(3, 2, 1)),
                       c_ in arb_jet(JetOrder::of(3, 2, 1))) {
            prop_assert!(close(&(&(&a * &b) * &c_), &(&a * &(&b * &c_)), 1e-14));
            prop_assert!(close(&(&a * &b), &(&b * &a), 1e-14));
            prop_assert!(close(&(&a * &(&b + &c_)), &(&(&a * &b) + &(&a * &c_)), 1e-14));
        }

        #[test]
        fn conjugation_intertwines_extraction(j in arb_jet(JetOrder::of(2, 3, 1)),
                                              a in 0usize..=3, b in 0usize..=2, t in 0usize..=1) {
            let lhs = j.conjugate().extract(a, b, t).unwrap();
            let rhs = j.extract(b, a, t).unwrap().conj();
            prop_assert_eq!(lhs, rhs);
        }

        #[test]
        fn leibniz_rule(a in arb_jet(JetOrder::of(3, 3, 1)), b in arb_jet(JetOrder::of(3, 3, 1))) {
            let lhs = (&a * &b).d_z().unwrap();
            let rhs = &(&a.d_z().unwrap() * &b) + &(&a * &b.d_z().unwrap());
            prop_assert!(close(&lhs, &rhs, 1e-14));
        }
    }
}
