//! Enriched Galerkin velocity space (continuous P1 plus one scalar bubble per
//! triangle) and the piecewise-constant pressure space.
//!
//! On a triangle `T` an EG velocity is the affine field
//! `v^C|_T + c_T (x - x_T)`, so its gradient is `grad v^C + c_T I` and the
//! divergence of the bubble part is `2 c_T`.

use nalgebra::{Matrix2, Vector2};

use crate::mesh::{Mesh, Point};
use crate::quadrature::{face_rule, volume_rule};

/// Affine vector field `x -> offset + grad * x` in global coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineField {
    pub offset: Vector2<f64>,
    /// `grad[(i, j)] = d v_i / d x_j`.
    pub grad: Matrix2<f64>,
}

impl Default for AffineField {
    fn default() -> Self {
        Self::zero()
    }
}

impl AffineField {
    pub fn zero() -> Self {
        AffineField {
            offset: Vector2::zeros(),
            grad: Matrix2::zeros(),
        }
    }

    pub fn constant(v: Vector2<f64>) -> Self {
        AffineField {
            offset: v,
            grad: Matrix2::zeros(),
        }
    }

    #[inline]
    pub fn eval(&self, x: Point) -> Vector2<f64> {
        self.offset + self.grad * x
    }

    #[inline]
    pub fn div(&self) -> f64 {
        self.grad.trace()
    }

    pub fn scaled(&self, s: f64) -> Self {
        AffineField {
            offset: self.offset * s,
            grad: self.grad * s,
        }
    }

    pub fn add_scaled(&mut self, other: &AffineField, s: f64) {
        self.offset += other.offset * s;
        self.grad += other.grad * s;
    }
}

/// Gradients of the barycentric coordinates of triangle `t`.
pub fn barycentric_gradients(mesh: &Mesh, t: usize) -> [Vector2<f64>; 3] {
    let g = &mesh.geometry[t];
    let mut out = [Vector2::zeros(); 3];
    for k in 0..3 {
        out[k] = -g.outward_normals[k] * g.edge_lengths[k] / (2.0 * g.area);
    }
    out
}

/// Scalar hat function of local vertex `i` on triangle `t` as `(c, g)` with
/// `lambda_i(x) = c + g . x`.
pub fn hat_function(mesh: &Mesh, t: usize, i: usize) -> (f64, Vector2<f64>) {
    let grad = barycentric_gradients(mesh, t)[i];
    let xc = mesh.geometry[t].centroid;
    (1.0 / 3.0 - grad.dot(&xc), grad)
}

/// Degree-of-freedom numbering.
///
/// Velocity: component `c` of vertex `v` is `2 v + c`; the bubble of triangle
/// `t` is `2 nv + t`. Pressure: triangle `t` is `t`.
#[derive(Debug, Clone)]
pub struct DofLayout {
    pub num_vertices: usize,
    pub num_triangles: usize,
    /// Velocity DOFs carrying a Dirichlet condition (nodal DOFs on boundary
    /// vertices). Bubbles are never constrained.
    pub constrained: Vec<bool>,
}

pub const LOCAL_DOFS: usize = 7;

impl DofLayout {
    pub fn new(mesh: &Mesh) -> Self {
        let nv = mesh.num_vertices();
        let nt = mesh.num_triangles();
        let mut constrained = vec![false; 2 * nv + nt];
        for (v, &b) in mesh.boundary_vertex.iter().enumerate() {
            constrained[2 * v] = b;
            constrained[2 * v + 1] = b;
        }
        DofLayout {
            num_vertices: nv,
            num_triangles: nt,
            constrained,
        }
    }

    #[inline]
    pub fn nodal(&self, vertex: usize, component: usize) -> usize {
        2 * vertex + component
    }

    #[inline]
    pub fn bubble(&self, t: usize) -> usize {
        2 * self.num_vertices + t
    }

    #[inline]
    pub fn pressure(&self, t: usize) -> usize {
        t
    }

    pub fn num_velocity(&self) -> usize {
        2 * self.num_vertices + self.num_triangles
    }

    pub fn num_pressure(&self) -> usize {
        self.num_triangles
    }

    pub fn free_velocity_dofs(&self) -> Vec<usize> {
        (0..self.num_velocity()).filter(|&i| !self.constrained[i]).collect()
    }

    /// Velocity DOFs of triangle `t`: `(v0,x) (v0,y) (v1,x) (v1,y) (v2,x) (v2,y) bubble`.
    pub fn local_dofs(&self, mesh: &Mesh, t: usize) -> [usize; LOCAL_DOFS] {
        let [a, b, c] = mesh.triangles[t];
        [
            self.nodal(a, 0),
            self.nodal(a, 1),
            self.nodal(b, 0),
            self.nodal(b, 1),
            self.nodal(c, 0),
            self.nodal(c, 1),
            self.bubble(t),
        ]
    }
}

/// The seven EG basis functions restricted to triangle `t`, ordered as
/// [`DofLayout::local_dofs`].
pub fn local_basis(mesh: &Mesh, t: usize) -> [AffineField; LOCAL_DOFS] {
    let mut out = [AffineField::zero(); LOCAL_DOFS];
    for i in 0..3 {
        let (c, g) = hat_function(mesh, t, i);
        for comp in 0..2 {
            let f = &mut out[2 * i + comp];
            f.offset[comp] = c;
            f.grad[(comp, 0)] = g.x;
            f.grad[(comp, 1)] = g.y;
        }
    }
    let xc = mesh.geometry[t].centroid;
    out[6] = AffineField {
        offset: -xc,
        grad: Matrix2::identity(),
    };
    out
}

/// Per-triangle list of `(dof, field)` pairs spanning the discrete functions
/// seen on that triangle.
#[derive(Debug, Clone)]
pub struct BasisTable {
    pub per_triangle: Vec<Vec<(usize, AffineField)>>,
}

impl BasisTable {
    pub fn standard(mesh: &Mesh, layout: &DofLayout) -> Self {
        let per_triangle = (0..mesh.num_triangles())
            .map(|t| {
                let dofs = layout.local_dofs(mesh, t);
                let basis = local_basis(mesh, t);
                dofs.into_iter().zip(basis).collect()
            })
            .collect();
        BasisTable { per_triangle }
    }

    /// Restriction of the coefficient vector `coeffs` to triangle `t`.
    pub fn field(&self, t: usize, coeffs: &[f64]) -> AffineField {
        let mut f = AffineField::zero();
        for (dof, phi) in &self.per_triangle[t] {
            let c = coeffs[*dof];
            if c != 0.0 {
                f.add_scaled(phi, c);
            }
        }
        f
    }
}

/// Velocity in `V_h = C_h + D_h`.
#[derive(Debug, Clone, PartialEq)]
pub struct EGFunction {
    pub nodal: Vec<Vector2<f64>>,
    pub bubble: Vec<f64>,
}

impl EGFunction {
    pub fn zeros(mesh: &Mesh) -> Self {
        EGFunction {
            nodal: vec![Vector2::zeros(); mesh.num_vertices()],
            bubble: vec![0.0; mesh.num_triangles()],
        }
    }

    pub fn from_coefficients(layout: &DofLayout, coeffs: &[f64]) -> Self {
        let nodal = (0..layout.num_vertices)
            .map(|v| Vector2::new(coeffs[layout.nodal(v, 0)], coeffs[layout.nodal(v, 1)]))
            .collect();
        let bubble = (0..layout.num_triangles).map(|t| coeffs[layout.bubble(t)]).collect();
        EGFunction { nodal, bubble }
    }

    pub fn to_coefficients(&self, layout: &DofLayout) -> Vec<f64> {
        let mut out = vec![0.0; layout.num_velocity()];
        for (v, val) in self.nodal.iter().enumerate() {
            out[layout.nodal(v, 0)] = val.x;
            out[layout.nodal(v, 1)] = val.y;
        }
        for (t, &c) in self.bubble.iter().enumerate() {
            out[layout.bubble(t)] = c;
        }
        out
    }

    /// Zeroes the nodal values on boundary vertices.
    pub fn with_homogeneous_boundary(mut self, mesh: &Mesh) -> Self {
        for (v, val) in self.nodal.iter_mut().enumerate() {
            if mesh.boundary_vertex[v] {
                *val = Vector2::zeros();
            }
        }
        self
    }

    /// Continuous part on triangle `t`.
    pub fn continuous_on(&self, mesh: &Mesh, t: usize) -> AffineField {
        let mut f = AffineField::zero();
        for (i, &v) in mesh.triangles[t].iter().enumerate() {
            let (c, g) = hat_function(mesh, t, i);
            let val = self.nodal[v];
            f.offset += val * c;
            f.grad += val * g.transpose();
        }
        f
    }

    /// Restriction to triangle `t` as an affine field.
    pub fn on_triangle(&self, mesh: &Mesh, t: usize) -> AffineField {
        let mut f = self.continuous_on(mesh, t);
        let c = self.bubble[t];
        f.offset -= mesh.geometry[t].centroid * c;
        f.grad += Matrix2::identity() * c;
        f
    }

    pub fn eval_velocity(&self, mesh: &Mesh, t: usize, x: Point) -> Vector2<f64> {
        self.on_triangle(mesh, t).eval(x)
    }

    pub fn eval_velocity_grad(&self, mesh: &Mesh, t: usize) -> Matrix2<f64> {
        self.on_triangle(mesh, t).grad
    }

    /// Jump and average on edge `e` at edge parameter `s`. On boundary edges
    /// both equal the one-sided trace.
    pub fn jump_average(&self, mesh: &Mesh, e: usize, s: f64) -> (Vector2<f64>, Vector2<f64>) {
        let edge = &mesh.edges[e];
        let x = edge.point_at(mesh, s);
        let plus = self.eval_velocity(mesh, edge.t_plus, x);
        match edge.t_minus {
            Some(tm) => {
                let minus = self.eval_velocity(mesh, tm, x);
                (plus - minus, 0.5 * (plus + minus))
            }
            None => (plus, plus),
        }
    }

    /// Interpolant `Pi_h w = Pi_h^C w + Pi_h^D w`: vertex values plus bubbles
    /// matching the elementwise divergence mean of `w`.
    pub fn interpolate(mesh: &Mesh, w: impl Fn(Point) -> Vector2<f64>, div_w: impl Fn(Point) -> f64) -> Self {
        let nodal: Vec<_> = mesh.vertices.iter().map(|&p| w(p)).collect();
        let mut out = EGFunction {
            nodal,
            bubble: vec![0.0; mesh.num_triangles()],
        };
        let rule = volume_rule();
        for t in 0..mesh.num_triangles() {
            let div_c = out.continuous_on(mesh, t).div();
            let area = mesh.geometry[t].area;
            let div_mean: f64 = rule.on_triangle(mesh, t).map(|(x, wq)| wq * div_w(x)).sum();
            out.bubble[t] = (div_mean - div_c * area) / (2.0 * area);
        }
        out
    }
}

/// Piecewise-constant pressure.
#[derive(Debug, Clone, PartialEq)]
pub struct PressureFunction {
    pub values: Vec<f64>,
    pub mean_removed: bool,
}

impl PressureFunction {
    pub fn new(values: Vec<f64>) -> Self {
        PressureFunction {
            values,
            mean_removed: false,
        }
    }

    pub fn zeros(mesh: &Mesh) -> Self {
        PressureFunction {
            values: vec![0.0; mesh.num_triangles()],
            mean_removed: true,
        }
    }

    /// Elementwise L2 projection of `q`.
    pub fn project_p0(mesh: &Mesh, q: impl Fn(Point) -> f64) -> Self {
        let rule = volume_rule();
        let values = (0..mesh.num_triangles())
            .map(|t| rule.on_triangle(mesh, t).map(|(x, w)| w * q(x)).sum::<f64>() / mesh.geometry[t].area)
            .collect();
        PressureFunction::new(values)
    }

    /// Area-weighted mean over the mesh.
    pub fn mean(&self, mesh: &Mesh) -> f64 {
        let (mut s, mut a) = (0.0, 0.0);
        for (p, g) in self.values.iter().zip(&mesh.geometry) {
            s += p * g.area;
            a += g.area;
        }
        s / a
    }

    pub fn remove_mean(&self, mesh: &Mesh) -> Self {
        let m = self.mean(mesh);
        PressureFunction {
            values: self.values.iter().map(|p| p - m).collect(),
            mean_removed: true,
        }
    }
}

/// Moments `int_e (v . n_e) p ds` for `p` in `{1, s}` of a trace, by edge
/// quadrature. `trace` receives the physical point.
pub(crate) fn normal_moments(mesh: &Mesh, e: usize, trace: impl Fn(Point) -> Vector2<f64>) -> [f64; 2] {
    let edge = &mesh.edges[e];
    let mut m = [0.0; 2];
    for (s, w) in face_rule().params() {
        let vn = trace(edge.point_at(mesh, s)).dot(&edge.normal) * w * edge.length;
        m[0] += vn;
        m[1] += vn * s;
    }
    m
}
