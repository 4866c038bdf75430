//! The domain sphere: stereographic charts, homogeneous coordinates and quadrature.
//!
//! Points of S² are `[U₀ : U₁]`. The north chart uses `z = U₁/U₀` (so `z = 0` is the
//! north pole `(0, 0, 1)`), the south chart `w = U₀/U₁ = 1/z`. The round metric in
//! either chart is `σ |dζ|²` with `σ = 4 / (1 + |ζ|²)²`.

use gauss_quad::GaussLegendre;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jet::{Jet, JetOrder};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Chart {
    North,
    South,
}

impl Chart {
    pub fn other(self) -> Chart {
        match self {
            Chart::North => Chart::South,
            Chart::South => Chart::North,
        }
    }
}

/// A point of S² expressed in one of the two stereographic charts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DomainPoint {
    pub chart: Chart,
    #[serde(serialize_with = "ser_complex")]
    pub coord: Complex64,
}

fn ser_complex<S: serde::Serializer>(c: &Complex64, s: S) -> std::result::Result<S::Ok, S::Error> {
    [c.re, c.im].serialize(s)
}

impl DomainPoint {
    pub fn new(chart: Chart, coord: Complex64) -> Self {
        Self { chart, coord }
    }

    /// The point with north coordinate `z`, placed in whichever chart has `|ζ| ≤ 1`.
    pub fn from_north(z: Complex64) -> Self {
        if z.norm() <= 1.0 {
            Self::new(Chart::North, z)
        } else {
            Self::new(Chart::South, z.inv())
        }
    }

    /// The point with polar angle `theta` (from `(0,0,1)`) and azimuth `phi`.
    pub fn from_angles(theta: f64, phi: f64) -> Self {
        if theta <= std::f64::consts::FRAC_PI_2 {
            Self::new(Chart::North, Complex64::from_polar((theta / 2.0).tan(), phi))
        } else {
            let t = std::f64::consts::PI - theta;
            Self::new(Chart::South, Complex64::from_polar((t / 2.0).tan(), -phi))
        }
    }

    /// The same point in the requested chart.
    pub fn in_chart(&self, chart: Chart) -> Result<Self> {
        if chart == self.chart {
            return Ok(*self);
        }
        if self.coord.norm() == 0.0 {
            return Err(Error::ChartDomain(format!(
                "pole of the {:?} chart is not in the {:?} chart",
                self.chart, chart
            )));
        }
        Ok(Self::new(chart, self.coord.inv()))
    }

    /// Conformal factor `σ` of the round metric in this point's chart.
    pub fn conformal_factor(&self) -> f64 {
        let r2 = self.coord.norm_sqr();
        4.0 / ((1.0 + r2) * (1.0 + r2))
    }

    /// Unit vector in R³ represented by this point.
    pub fn unit_vector(&self) -> [f64; 3] {
        let (u0, u1) = match self.chart {
            Chart::North => (Complex64::new(1.0, 0.0), self.coord),
            Chart::South => (self.coord, Complex64::new(1.0, 0.0)),
        };
        let m = u0.norm_sqr() + u1.norm_sqr();
        let c = u1 * u0.conj();
        [2.0 * c.re / m, 2.0 * c.im / m, (u0.norm_sqr() - u1.norm_sqr()) / m]
    }

    /// Jets of the homogeneous coordinates `(U₀, U₁)` and their conjugates at this point.
    pub fn homogeneous(&self, order: JetOrder) -> Homogeneous {
        let one = Jet::constant(Complex64::new(1.0, 0.0), order, self.coord);
        let var = Jet::var_z(order, self.coord);
        let varb = Jet::var_zbar(order, self.coord);
        let (u, ub) = match self.chart {
            Chart::North => ([one.clone(), var], [one, varb]),
            Chart::South => ([var, one.clone()], [varb, one]),
        };
        Homogeneous {
            chart: self.chart,
            u,
            ub,
        }
    }

    /// `dz/dw` for the chart change from this chart to the other one.
    pub fn transition_derivative(&self) -> Complex64 {
        -(self.coord * self.coord).inv()
    }
}

/// Homogeneous coordinate jets at a point: `u = (U₀, U₁)`, `ub = (Ū₀, Ū₁)`.
///
/// `chart` is the chart whose coordinate the jets are expanded in.
#[derive(Clone, Debug)]
pub struct Homogeneous {
    pub chart: Chart,
    pub u: [Jet; 2],
    pub ub: [Jet; 2],
}

impl Homogeneous {
    pub fn order(&self) -> JetOrder {
        self.u[0].order()
    }

    pub fn base(&self) -> Complex64 {
        self.u[0].base()
    }

    /// The domain point the expansion is centred at.
    pub fn point(&self) -> DomainPoint {
        DomainPoint::new(self.chart, self.base())
    }

    /// `|U₀|² + |U₁|²`.
    pub fn norm_sqr(&self) -> Jet {
        &(&self.u[0] * &self.ub[0]) + &(&self.u[1] * &self.ub[1])
    }

    /// Unnormalized position in R³: `(2 Re U₁Ū₀, 2 Im U₁Ū₀, |U₀|² − |U₁|²)`.
    pub fn position(&self) -> [Jet; 3] {
        let a = &self.u[1] * &self.ub[0];
        let b = &self.u[0] * &self.ub[1];
        let i = Complex64::new(0.0, 1.0);
        [
            &a + &b,
            (&a - &b).scale(-i),
            &(&self.u[0] * &self.ub[0]) - &(&self.u[1] * &self.ub[1]),
        ]
    }

    /// Unit position vector in R³ as jets.
    pub fn unit_position(&self) -> [Jet; 3] {
        let inv = self.norm_sqr().recip().expect("homogeneous coordinates never vanish");
        self.position().map(|p| &p * &inv)
    }

    /// The affine coordinate `z = U₁/U₀` of the north chart.
    pub fn north_coordinate(&self) -> Result<(Jet, Jet)> {
        let r = self.u[0].recip()?;
        let rb = self.ub[0].recip()?;
        Ok((&self.u[1] * &r, &self.ub[1] * &rb))
    }
}

/// One quadrature node.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Node {
    pub point: DomainPoint,
    pub weight: f64,
    pub theta: f64,
    pub phi: f64,
}

/// Product rule on S²: Gauss–Legendre in `cos θ` and the midpoint rule in `ϕ`.
#[derive(Clone, Debug)]
pub struct QuadratureGrid {
    pub n_theta: usize,
    pub n_phi: usize,
    pub nodes: Vec<Node>,
}

impl QuadratureGrid {
    pub fn new(n_theta: usize, n_phi: usize) -> Result<Self> {
        if n_theta < 2 || n_phi < 1 {
            return Err(Error::Setup(format!("grid {n_theta}x{n_phi} too small")));
        }
        let gl = GaussLegendre::new(n_theta).map_err(|e| Error::Setup(e.to_string()))?;
        let mut pairs: Vec<(f64, f64)> = gl.as_node_weight_pairs().to_vec();
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
        let dphi = 2.0 * std::f64::consts::PI / n_phi as f64;
        let mut nodes = Vec::with_capacity(n_theta * n_phi);
        for &(x, wx) in &pairs {
            let theta = x.clamp(-1.0, 1.0).acos();
            for j in 0..n_phi {
                let phi = dphi * (j as f64 + 0.5);
                nodes.push(Node {
                    point: DomainPoint::from_angles(theta, phi),
                    weight: wx * dphi,
                    theta,
                    phi,
                });
            }
        }
        Ok(Self { n_theta, n_phi, nodes })
    }

    pub fn total_weight(&self) -> f64 {
        pairwise_sum(&self.nodes.iter().map(|n| n.weight).collect::<Vec<_>>())
    }

    /// `Σ wᵢ fᵢ` with a fixed summation tree.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        assert_eq!(values.len(), self.nodes.len());
        let terms: Vec<f64> = self.nodes.iter().zip(values).map(|(n, v)| n.weight * v).collect();
        pairwise_sum(&terms)
    }

    /// The same rule restricted to the north hemisphere.
    pub fn north_half(&self) -> Self {
        Self {
            n_theta: self.n_theta,
            n_phi: self.n_phi,
            nodes: self
                .nodes
                .iter()
                .filter(|n| n.point.chart == Chart::North)
                .copied()
                .collect(),
        }
    }

    /// Evaluates `f` at every node in parallel, keeping node order.
    pub fn par_map<T, F>(&self, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(&Node) -> Result<T> + Sync,
    {
        use rayon::prelude::*;
        self.nodes.par_iter().map(&f).collect()
    }

    /// Nodes whose chart coordinate has modulus at least `min_modulus`, i.e. near the equator.
    pub fn overlap_band(&self, min_modulus: f64) -> Vec<Node> {
        self.nodes
            .iter()
            .filter(|n| n.point.coord.norm() >= min_modulus)
            .copied()
            .collect()
    }
}

/// Pairwise summation with a split point that depends only on the length.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn weights_sum_to_area() {
        for (a, b) in [(8, 16), (32, 64), (17, 5)] {
            let g = QuadratureGrid::new(a, b).unwrap();
            assert!((g.total_weight() - 4.0 * PI).abs() < 1e-10);
            assert!(g.nodes.iter().all(|n| n.weight > 0.0));
            assert!(g.nodes.iter().all(|n| n.point.coord.norm() <= 1.0));
        }
    }

    #[test]
    fn integrates_polynomials_in_position() {
        let g = QuadratureGrid::new(12, 24).unwrap();
        let vals: Vec<f64> = g
            .nodes
            .iter()
            .map(|n| {
                let x = n.point.unit_vector();
                x[2] * x[2] + x[0] * x[0] * x[1] * x[1]
            })
            .collect();
        let exact = 4.0 * PI / 3.0 + 4.0 * PI / 15.0;
        assert!((g.integrate(&vals) - exact).abs() < 1e-12);
    }

    #[test]
    fn angles_and_unit_vector_agree() {
        for &(th, ph) in &[(0.3, 1.0), (2.5, -0.7), (PI / 2.0, 0.2)] {
            let p = DomainPoint::from_angles(th, ph);
            let x = p.unit_vector();
            let e = [th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos()];
            for i in 0..3 {
                assert!((x[i] - e[i]).abs() < 1e-14);
            }
            let q = p.in_chart(p.chart.other()).unwrap();
            let y = q.unit_vector();
            for i in 0..3 {
                assert!((x[i] - y[i]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn homogeneous_position_matches_unit_vector() {
        let p = DomainPoint::new(Chart::South, Complex64::new(0.4, -0.3));
        let h = p.homogeneous(JetOrder::of(1, 1, 0));
        let x = h.unit_position();
        let e = p.unit_vector();
        for i in 0..3 {
            assert!((x[i].value().re - e[i]).abs() < 1e-15);
            assert!(x[i].value().im.abs() < 1e-15);
        }
    }

    #[test]
    fn pole_has_no_image_in_other_chart() {
        let p = DomainPoint::new(Chart::North, Complex64::new(0.0, 0.0));
        assert!(matches!(p.in_chart(Chart::South), Err(Error::ChartDomain(_))));
    }
}
