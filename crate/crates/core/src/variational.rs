//! Energy, tension, Jacobi operators and the second variation.
//!
//! Conventions: `R(X,Y) = [∇_X, ∇_Y] − ∇_{[X,Y]}`, the domain metric is `σ|dζ|²`, and
//! `D_t D_z̄ ∂φ/∂z = D_z̄ D_z v + R(v, ∂φ/∂z̄) ∂φ/∂z` along any family with variation
//! field `v`. The Jacobi operator is `J(v) = −∂_t τ(φ_t)` at a harmonic map, which makes
//! it `−Δ` (the positive Laplacian) on a flat target.

use num_complex::Complex64;
use serde::Serialize;

use crate::atlas::MapSpec;
use crate::domain::{pairwise_sum, DomainPoint, QuadratureGrid};
use crate::error::{Error, Result};
use crate::jet::{Jet, JetOrder};
use crate::pullback::{Dir, FieldGerm, FieldKind, MapGerm};

/// Grid-max gate on the complex tension for operations that assume a harmonic map.
pub const HARMONIC_GATE: f64 = 1e-8;

/// `σ = 4/(1 + |ζ|²)²` as a jet in the chart coordinate.
pub fn conformal_jet(point: DomainPoint, order: JetOrder) -> Jet {
    let z = Jet::var_z(order, point.coord);
    let zb = Jet::var_zbar(order, point.coord);
    let q = &(&z * &zb) + Complex64::new(1.0, 0.0);
    let r = q.recip().expect("1 + |z|² > 0");
    (&r * &r).scale_re(4.0)
}

/// `D/∂z̄ ∂^ℂφ/∂z`.
pub fn tension_complex(p: &MapGerm) -> Result<FieldGerm> {
    p.cov_d(Dir::Zbar, &p.d_z()?)
}

/// Conjugate form `D/∂z ∂^ℂφ/∂z̄`; equal to [`tension_complex`] (torsion-free connection).
pub fn tension_complex_conj(p: &MapGerm) -> Result<FieldGerm> {
    p.cov_d(Dir::Z, &p.d_zbar()?)
}

/// The tension field `τ = (4/σ) D/∂z̄ ∂^ℂφ/∂z`.
pub fn tension(p: &MapGerm) -> Result<FieldGerm> {
    let t = tension_complex(p)?;
    let inv = conformal_jet(p.point(), t.order()).recip()?.scale_re(4.0);
    Ok(FieldGerm::new(FieldKind::Real, t.mul_jet(&inv).comps))
}

/// Trace form `τ = σ⁻¹(D_x ∂φ/∂x + D_y ∂φ/∂y)` assembled in real coordinates `z = x + iy`.
pub fn tension_real(p: &MapGerm) -> Result<FieldGerm> {
    let i = Complex64::new(0.0, 1.0);
    let (pz, pzb) = (p.d_z()?, p.d_zbar()?);
    let px = pz.add(&pzb);
    let py = pz.sub(&pzb).scale(i);
    let dx = |v: &FieldGerm| -> Result<FieldGerm> { Ok(p.cov_d(Dir::Z, v)?.add(&p.cov_d(Dir::Zbar, v)?)) };
    let dy = |v: &FieldGerm| -> Result<FieldGerm> { Ok(p.cov_d(Dir::Z, v)?.sub(&p.cov_d(Dir::Zbar, v)?).scale(i)) };
    let sum = dx(&px)?.add(&dy(&py)?);
    let inv = conformal_jet(p.point(), sum.order()).recip()?;
    Ok(FieldGerm::new(FieldKind::Real, sum.mul_jet(&inv).comps))
}

/// `D/∂z̄ D/∂z v + R(v, ∂^ℂφ/∂z̄) ∂^ℂφ/∂z`.
pub fn jacobi_complex(p: &MapGerm, v: &FieldGerm) -> Result<FieldGerm> {
    let ddv = p.cov_d(Dir::Zbar, &p.cov_d(Dir::Z, v)?)?;
    let r = p.curvature(v, &p.d_zbar()?, &p.d_z()?)?;
    Ok(ddv.add(&r))
}

/// `D/∂z D/∂z̄ v + R(v, ∂^ℂφ/∂z) ∂^ℂφ/∂z̄`.
pub fn jacobi_complex_conj(p: &MapGerm, v: &FieldGerm) -> Result<FieldGerm> {
    let ddv = p.cov_d(Dir::Z, &p.cov_d(Dir::Zbar, v)?)?;
    let r = p.curvature(v, &p.d_z()?, &p.d_zbar()?)?;
    Ok(ddv.add(&r))
}

/// `J(v) = −(2/σ)` × (sum of the two complex forms).
pub fn jacobi_real(p: &MapGerm, v: &FieldGerm) -> Result<FieldGerm> {
    let s = jacobi_complex(p, v)?.add(&jacobi_complex_conj(p, v)?);
    let inv = conformal_jet(p.point(), s.order()).recip()?.scale_re(-2.0);
    Ok(FieldGerm::new(FieldKind::Real, s.mul_jet(&inv).comps))
}

/// Scale used to normalize residuals built from first derivatives of `φ`.
pub fn derivative_scale(p: &MapGerm) -> Result<f64> {
    Ok(p.norm(&p.d_z()?).max(p.norm(&p.d_zbar()?)))
}

/// `|D/∂z̄ ∂^ℂφ/∂z|` over `1 + derivative_scale`.
pub fn tension_residual(p: &MapGerm) -> Result<f64> {
    Ok(p.norm(&tension_complex(p)?) / (1.0 + derivative_scale(p)?))
}

/// `−(D/∂t)|₀ D/∂z̄ ∂^ℂφ_t/∂z` for a family germ.
///
/// Fails with a precondition error when the base map is not harmonic at this node.
pub fn linearized_tension(family: &MapGerm) -> Result<FieldGerm> {
    if family.order().t == 0 {
        return Err(Error::OrderExhausted("linearization needs a t-jet".into()));
    }
    let t = tension_complex(family)?;
    let r = tension_residual(&family.at_t0())?;
    if r > HARMONIC_GATE {
        return Err(Error::Precondition(format!(
            "base map not harmonic at this node: normalized tension {r:.3e}"
        )));
    }
    Ok(family.cov_d(Dir::T, &t)?.at_t0().scale(Complex64::new(-1.0, 0.0)))
}

/// Energy and its per-node density `|dφ|²/2`.
#[derive(Clone, Debug, Serialize)]
pub struct EnergyReport {
    pub energy: f64,
    pub density: Vec<f64>,
}

/// Density `|dφ|²/2 = 2⟨∂φ/∂z, ∂φ/∂z̄⟩/σ` as a jet (it carries the family's `t` dependence).
pub fn energy_density(p: &MapGerm) -> Result<Jet> {
    let e = p.pair(&p.d_z()?, &p.d_zbar()?);
    let inv = conformal_jet(p.point(), e.order()).recip()?;
    Ok((&e * &inv).scale_re(2.0))
}

pub fn energy(map: &MapSpec, grid: &QuadratureGrid) -> Result<EnergyReport> {
    energy_at(map, grid, 0.0)
}

/// Energy of a family member `φ_{t0}`.
pub fn energy_at(map: &MapSpec, grid: &QuadratureGrid, t0: f64) -> Result<EnergyReport> {
    let density = grid.par_map(|n| {
        let g = map.germ(n.point, JetOrder::of(1, 1, 0), t0, None)?;
        Ok(energy_density(&g)?.value().re)
    })?;
    Ok(EnergyReport {
        energy: grid.integrate(&density),
        density,
    })
}

/// `d^k E(φ_t)/dt^k` at `t = 0` for `k ≤ 2`.
pub fn energy_derivative(family: &MapSpec, grid: &QuadratureGrid, k: usize) -> Result<f64> {
    if k > 2 {
        return Err(Error::OrderCeiling(format!("energy derivative of order {k}")));
    }
    let vals = grid.par_map(|n| {
        let g = family.germ(n.point, JetOrder::of(1, 1, k), 0.0, None)?;
        Ok(energy_density(&g)?.extract(0, 0, k)?.re)
    })?;
    Ok(grid.integrate(&vals))
}

/// Both sides of the first variation formula.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct FirstVariation {
    /// `dE(φ_t)/dt` at `t = 0`.
    pub energy_rate: f64,
    /// `−∫⟨τ(φ), v⟩`.
    pub tension_pairing: f64,
}

impl FirstVariation {
    pub fn residual(&self) -> f64 {
        (self.energy_rate - self.tension_pairing).abs()
    }
}

pub fn first_variation(family: &MapSpec, grid: &QuadratureGrid) -> Result<FirstVariation> {
    let rows = grid.par_map(|n| {
        let g = family.germ(n.point, JetOrder::of(2, 2, 1), 0.0, None)?;
        let rate = energy_density(&g.truncate(JetOrder::of(1, 1, 1)))?.extract(0, 0, 1)?.re;
        let base = g.at_t0();
        let v = g.variation_field()?;
        let tv = base.pair(&tension(&base)?, &v).value().re;
        Ok((rate, tv))
    })?;
    let (rate, tv): (Vec<f64>, Vec<f64>) = rows.into_iter().unzip();
    Ok(FirstVariation {
        energy_rate: grid.integrate(&rate),
        tension_pairing: -grid.integrate(&tv),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct HessianValue {
    pub value: f64,
    pub integrand: Vec<f64>,
}

/// `H(v, w) = ∫⟨J(v), w⟩` with `v`, `w` the variation fields of two families of `φ`.
///
/// The base map must pass the harmonic gate at every node.
pub fn hessian(v_family: &MapSpec, w_family: &MapSpec, grid: &QuadratureGrid) -> Result<HessianValue> {
    let integrand = grid.par_map(|n| {
        let gv = v_family.germ(n.point, JetOrder::of(2, 2, 1), 0.0, None)?;
        let gw = w_family.germ(n.point, JetOrder::of(0, 0, 1), 0.0, gv.target_chart())?;
        let base = gv.at_t0();
        if tension_residual(&base)? > HARMONIC_GATE {
            return Err(Error::Precondition("hessian of a non-harmonic map".into()));
        }
        let jv = jacobi_real(&base, &gv.variation_field()?)?;
        let w = gw.variation_field()?;
        Ok(base.pair(&jv.truncate(JetOrder::of(0, 0, 0)), &w).value().re)
    })?;
    Ok(HessianValue {
        value: pairwise_sum(
            &grid
                .nodes
                .iter()
                .zip(&integrand)
                .map(|(n, x)| n.weight * x)
                .collect::<Vec<_>>(),
        ),
        integrand,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atlas::{find_case, make_identity_s2, make_nonharmonic_flat, make_veronese_s4};
    use crate::domain::Chart;
    use crate::target::TargetModel;
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn flat_mixed_derivative() {
        let case = make_nonharmonic_flat();
        let z0 = c(0.3, -0.2);
        let g = case
            .map
            .germ(DomainPoint::new(Chart::North, z0), JetOrder::of(2, 2, 0), 0.0, None)
            .unwrap();
        let t = tension_complex(&g).unwrap().values();
        // ∂z̄∂z w = 0.2z, so the (Re w, Im w) components give (Re 0.2z, Im 0.2z).
        let w = z0 * 0.2;
        assert!((t[0] - c(w.re, 0.0)).norm() < 1e-14);
        assert!((t[1] - c(w.im, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn holomorphic_maps_have_no_tension() {
        let case = find_case("rational-d3-cp1").unwrap();
        for z in [c(0.3, 0.1), c(-0.7, 0.6)] {
            for chart in [Chart::North, Chart::South] {
                let g = case
                    .map
                    .germ(DomainPoint::new(chart, z), JetOrder::of(2, 2, 0), 0.0, None)
                    .unwrap();
                assert!(tension_complex(&g).unwrap().max_abs() < 1e-10);
            }
        }
    }

    #[test]
    fn real_and_complex_tension_agree() {
        let case = make_veronese_s4();
        let fam = &case.random_families(1, 7)[0];
        for z in [c(0.2, 0.5), c(-0.6, -0.1)] {
            let g = fam
                .spec
                .germ(DomainPoint::new(Chart::South, z), JetOrder::of(3, 3, 0), 0.4, None)
                .unwrap();
            let a = tension(&g).unwrap();
            let b = tension_real(&g).unwrap();
            assert!(a.max_abs() > 1e-2);
            assert!(a.sub(&b).max_abs() < 1e-10 * (1.0 + a.max_abs()));
        }
    }

    #[test]
    fn identity_sphere_is_harmonic() {
        let case = make_identity_s2();
        let g = case
            .map
            .germ(
                DomainPoint::new(Chart::North, c(0.4, 0.3)),
                JetOrder::of(2, 2, 0),
                0.0,
                None,
            )
            .unwrap();
        assert!(tension_real(&g).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn linearization_matches_jacobi_operator() {
        let case = make_veronese_s4();
        for fam in case.random_families(2, 11) {
            let g = fam
                .spec
                .germ(
                    DomainPoint::new(Chart::North, c(0.5, 0.2)),
                    JetOrder::of(2, 2, 1),
                    0.0,
                    None,
                )
                .unwrap();
            let lin = linearized_tension(&g).unwrap();
            let jc = jacobi_complex(&g.at_t0(), &g.variation_field().unwrap()).unwrap();
            assert!(jc.max_abs() > 1e-3);
            assert!(jc.add(&lin).max_abs() < 1e-10);
        }
    }

    #[test]
    fn linearization_refuses_non_harmonic_base() {
        let case = make_nonharmonic_flat();
        let p = DomainPoint::new(Chart::North, c(0.3, 0.3));
        let g = case.map.germ(p, JetOrder::of(2, 2, 1), 0.0, None).unwrap();
        assert!(matches!(linearized_tension(&g), Err(Error::Precondition(_))));
    }

    #[test]
    fn complex_jacobi_forms_agree_on_real_fields() {
        let case = find_case("veronese-cp2").unwrap();
        let fam = &case.random_families(1, 3)[0];
        let g = fam
            .spec
            .germ(
                DomainPoint::new(Chart::North, c(0.1, -0.4)),
                JetOrder::of(2, 2, 1),
                0.0,
                None,
            )
            .unwrap();
        let v = g.variation_field().unwrap();
        let base = g.at_t0();
        let a = jacobi_complex(&base, &v).unwrap();
        let b = jacobi_complex_conj(&base, &v).unwrap();
        assert!(a.max_abs() > 1e-3);
        assert!(a.sub(&b).max_abs() < 1e-10);
    }

    #[test]
    fn flat_jacobi_is_negative_laplacian() {
        // v = (x²y, y³) on flat R²: Δ_flat v = (2y, 6y).
        let model = Arc::new(TargetModel::flat(2));
        let p = DomainPoint::new(Chart::North, c(0.3, 0.4));
        let o = JetOrder::of(2, 2, 0);
        let z = Jet::var_z(o, p.coord);
        let zb = Jet::var_zbar(o, p.coord);
        let x = (&z + &zb).scale_re(0.5);
        let y = (&z - &zb).scale(c(0.0, -0.5));
        let phi = MapGerm::new(model, p, vec![x.clone(), y.clone()], None).unwrap();
        let v = FieldGerm::new(FieldKind::Real, vec![&(&x * &x) * &y, &(&y * &y) * &y]);
        let j = jacobi_real(&phi, &v).unwrap().values();
        let sigma = p.conformal_factor();
        let yv = 0.4;
        assert!((j[0] - c(-2.0 * yv / sigma, 0.0)).norm() < 1e-12);
        assert!((j[1] - c(-6.0 * yv / sigma, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn energies() {
        let grid = QuadratureGrid::new(16, 32).unwrap();
        let e = energy(&make_identity_s2().map, &grid).unwrap();
        assert!((e.energy - 4.0 * PI).abs() < 1e-10);
        let e = energy(&find_case("rational-d2-cp1").unwrap().map, &grid).unwrap();
        assert!((e.energy - 2.0 * PI).abs() < 1e-6);
        let v = energy(&make_veronese_s4().map, &grid).unwrap();
        let mean = v.energy / (4.0 * PI);
        assert!(v.density.iter().all(|d| (d - mean).abs() < 1e-8 * mean));
    }

    #[test]
    fn hessian_diagonal_matches_second_energy_derivative() {
        let grid = QuadratureGrid::new(10, 20).unwrap();
        let case = make_identity_s2();
        let fams = case.random_families(1, 5);
        let h = hessian(&fams[0].spec, &fams[0].spec, &grid).unwrap();
        let e2 = energy_derivative(&fams[0].spec, &grid, 2).unwrap();
        assert!(h.value.abs() > 1e-2);
        assert!((h.value - e2).abs() < 1e-8 * (1.0 + e2.abs()));
    }

    #[test]
    fn first_variation_along_tension_flow() {
        let grid = QuadratureGrid::new(24, 48).unwrap();
        let case = crate::atlas::make_bent_veronese_s4();
        let fam = crate::atlas::tension_family(&case.map, "flow").unwrap();
        let fv = first_variation(&fam.spec, &grid).unwrap();
        assert!(fv.energy_rate < -1e-2);
        // Both sides are integrals of different integrands; they meet as the grid refines.
        let fine = first_variation(&fam.spec, &QuadratureGrid::new(40, 80).unwrap()).unwrap();
        assert!(fine.residual() < 1e-5);
        assert!(fine.residual() < fv.residual());
        let harmonic = make_veronese_s4();
        for f in harmonic.random_families(1, 2) {
            let fv = first_variation(&f.spec, &grid).unwrap();
            assert!(fv.energy_rate.abs() < 1e-8 && fv.tension_pairing.abs() < 1e-8);
        }
    }
}
