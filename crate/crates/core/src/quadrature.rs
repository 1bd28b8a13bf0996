//! Gauss quadrature on the reference triangle and the unit interval.
//!
//! Triangle rules are collapsed (Duffy) products of Gauss-Legendre rules, so
//! every weight is positive and the nodes are accurate to machine precision.

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::mesh::{Mesh, Point};

pub const MAX_TRIANGLE_DEGREE: usize = 6;
pub const MAX_EDGE_DEGREE: usize = 7;

/// Degree used by every volume integral in the assembly.
pub const VOLUME_DEGREE: usize = 6;
/// Degree of the 4-point Gauss rule used on edges.
pub const EDGE_DEGREE: usize = 7;

#[derive(Debug, Clone)]
pub struct QuadRule {
    /// Barycentric coordinates `(l0, l1, l2)` on triangles; `[t, 0, 0]` with
    /// `t` in [0, 1] on edges.
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    pub degree: usize,
}

impl QuadRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Edge parameters of an interval rule.
    pub fn params(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.points.iter().zip(&self.weights).map(|(p, &w)| (p[0], w))
    }

    /// Physical points and weights of a triangle rule mapped onto triangle `t`.
    pub fn on_triangle<'a>(&'a self, mesh: &Mesh, t: usize) -> impl Iterator<Item = (Point, f64)> + 'a {
        let p = mesh.triangle_points(t);
        let scale = 2.0 * mesh.geometry[t].area;
        self.points
            .iter()
            .zip(&self.weights)
            .map(move |(l, &w)| (l[0] * p[0] + l[1] * p[1] + l[2] * p[2], w * scale))
    }
}

/// Gauss-Legendre nodes and weights on [0, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Chebyshev initial guess, then Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        // map [-1, 1] -> [0, 1]
        nodes[i] = 0.5 * (1.0 - x);
        nodes[n - 1 - i] = 0.5 * (1.0 + x);
        weights[i] = 0.5 * w;
        weights[n - 1 - i] = 0.5 * w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let p = if n == 0 { 1.0 } else { p1 };
    let d = n as f64 * (x * p - p0) / (x * x - 1.0);
    (p, d)
}

fn build_triangle_rule(degree: usize) -> QuadRule {
    // x = u, y = v (1 - u); the Jacobian (1 - u) raises the u-degree by one.
    let (u, wu) = gauss_legendre((degree + 2).div_ceil(2));
    let (v, wv) = gauss_legendre((degree + 1).div_ceil(2));
    let mut points = Vec::with_capacity(u.len() * v.len());
    let mut weights = Vec::with_capacity(u.len() * v.len());
    for (&ui, &wi) in u.iter().zip(&wu) {
        for (&vj, &wj) in v.iter().zip(&wv) {
            let x = ui;
            let y = vj * (1.0 - ui);
            points.push([1.0 - x - y, x, y]);
            weights.push(wi * wj * (1.0 - ui));
        }
    }
    QuadRule { points, weights, degree }
}

fn build_edge_rule(degree: usize) -> QuadRule {
    let (t, w) = gauss_legendre((degree + 1).div_ceil(2));
    QuadRule {
        points: t.into_iter().map(|t| [t, 0.0, 0.0]).collect(),
        weights: w,
        degree,
    }
}

/// Rule on the reference triangle (0,0), (1,0), (0,1), exact for total degree
/// `degree`. Weights sum to 1/2.
pub fn triangle_rule(degree: usize) -> Result<&'static QuadRule> {
    static RULES: OnceLock<Vec<QuadRule>> = OnceLock::new();
    if !(1..=MAX_TRIANGLE_DEGREE).contains(&degree) {
        return Err(Error::InvalidArgument(format!("no triangle rule of degree {degree}")));
    }
    let rules = RULES.get_or_init(|| (1..=MAX_TRIANGLE_DEGREE).map(build_triangle_rule).collect());
    Ok(&rules[degree - 1])
}

/// Rule on [0, 1], exact for polynomials of degree `degree`. Weights sum to 1.
pub fn edge_rule(degree: usize) -> Result<&'static QuadRule> {
    static RULES: OnceLock<Vec<QuadRule>> = OnceLock::new();
    if !(1..=MAX_EDGE_DEGREE).contains(&degree) {
        return Err(Error::InvalidArgument(format!("no edge rule of degree {degree}")));
    }
    let rules = RULES.get_or_init(|| (1..=MAX_EDGE_DEGREE).map(build_edge_rule).collect());
    Ok(&rules[degree - 1])
}

pub(crate) fn volume_rule() -> &'static QuadRule {
    triangle_rule(VOLUME_DEGREE).expect("volume degree is supported")
}

pub(crate) fn face_rule() -> &'static QuadRule {
    edge_rule(EDGE_DEGREE).expect("edge degree is supported")
}
