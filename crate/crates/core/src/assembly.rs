//! Sparse assembly of the EG / PR-EG saddle-point system
//!
//! ```text
//! [ mu A + C(z)   -B^T   0 ] [u]   [F]
//! [ B              0     m ] [p] = [0]
//! [ 0              m^T   0 ] [l]   [0]
//! ```
//!
//! `A` is the symmetric interior penalty form, `B` the divergence form with its
//! jump correction, `C(z)` the Picard-linearized convection with upwinding on
//! the inflow part of each element boundary, and `m` the vector of triangle
//! areas enforcing a zero-mean pressure.
//!
//! Boundary data: nodal velocity DOFs on boundary vertices are imposed
//! strongly. On a boundary edge the jump of the trial function is measured
//! against the data, so constrained trial DOFs contribute no boundary-edge jump
//! (their trace coincides with the interpolated data there).

use nalgebra::Vector2;

use crate::error::{Error, Result};
use crate::mesh::{Edge, Mesh, Point};
use crate::quadrature::{face_rule, volume_rule};
use crate::reconstruction::Reconstruction;
use crate::sparse::{CsrMatrix, TripletList};
use crate::spaces::{AffineField, BasisTable, DofLayout};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FormParams {
    pub mu: f64,
    pub rho: f64,
    /// Test the load and the convection with reconstructed velocities.
    pub pressure_robust: bool,
}

impl FormParams {
    pub fn new(mu: f64, rho: f64, pressure_robust: bool) -> Result<Self> {
        if !(mu > 0.0) {
            return Err(Error::InvalidArgument(format!("viscosity must be positive, got {mu}")));
        }
        if !(rho > 0.0) {
            return Err(Error::InvalidArgument(format!("penalty must be positive, got {rho}")));
        }
        Ok(FormParams {
            mu,
            rho,
            pressure_robust,
        })
    }
}

/// Mesh together with everything the forms need that does not change between
/// nonlinear iterations.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub mesh: Mesh,
    pub layout: DofLayout,
    pub standard: BasisTable,
    pub reconstruction: Reconstruction,
    pub reconstructed: BasisTable,
}

impl Discretization {
    pub fn new(mesh: Mesh) -> Self {
        let layout = DofLayout::new(&mesh);
        let standard = BasisTable::standard(&mesh, &layout);
        let reconstruction = Reconstruction::new(&mesh);
        let reconstructed = reconstruction.basis_table(&mesh, &standard);
        Discretization {
            mesh,
            layout,
            standard,
            reconstruction,
            reconstructed,
        }
    }

    pub fn basis(&self, pressure_robust: bool) -> &BasisTable {
        if pressure_robust {
            &self.reconstructed
        } else {
            &self.standard
        }
    }

    pub fn num_velocity(&self) -> usize {
        self.layout.num_velocity()
    }

    pub fn num_pressure(&self) -> usize {
        self.layout.num_pressure()
    }
}

/// Traces of one basis function on the two sides of an edge.
#[derive(Debug, Clone)]
struct EdgeTrace {
    dof: usize,
    plus: Option<AffineField>,
    minus: Option<AffineField>,
}

fn edge_traces(table: &BasisTable, edge: &Edge) -> Vec<EdgeTrace> {
    let mut out: Vec<EdgeTrace> = table.per_triangle[edge.t_plus]
        .iter()
        .map(|(dof, phi)| EdgeTrace {
            dof: *dof,
            plus: Some(*phi),
            minus: None,
        })
        .collect();
    if let Some(tm) = edge.t_minus {
        for (dof, phi) in &table.per_triangle[tm] {
            match out.iter_mut().find(|t| t.dof == *dof) {
                Some(t) => t.minus = Some(*phi),
                None => out.push(EdgeTrace {
                    dof: *dof,
                    plus: None,
                    minus: Some(*phi),
                }),
            }
        }
    }
    out
}

#[inline]
fn eval_opt(f: &Option<AffineField>, x: Point) -> Vector2<f64> {
    f.map_or_else(Vector2::zeros, |f| f.eval(x))
}

/// Viscous form `a(u, v)`: broken gradients, consistency and symmetry terms,
/// and the `rho / h_e` jump penalty. Rows are test DOFs, columns trial DOFs.
pub fn assemble_a(disc: &Discretization, rho: f64) -> CsrMatrix {
    let mesh = &disc.mesh;
    let constrained = &disc.layout.constrained;
    let mut trip = TripletList::new();
    for (t, basis) in disc.standard.per_triangle.iter().enumerate() {
        let area = mesh.geometry[t].area;
        for (i, phi_i) in basis {
            for (j, phi_j) in basis {
                trip.push(*i, *j, area * phi_i.grad.component_mul(&phi_j.grad).sum());
            }
        }
    }
    for edge in &mesh.edges {
        let traces = edge_traces(&disc.standard, edge);
        let interior = !edge.is_boundary();
        let n = edge.normal;
        // jump and average normal flux of every trace (gradients are constant)
        let flux: Vec<Vector2<f64>> = traces
            .iter()
            .map(|tr| {
                if interior {
                    let gp = tr.plus.map_or(Vector2::zeros(), |f| f.grad * n);
                    let gm = tr.minus.map_or(Vector2::zeros(), |f| f.grad * n);
                    0.5 * (gp + gm)
                } else {
                    tr.plus.unwrap().grad * n
                }
            })
            .collect();
        let mut local = vec![0.0; traces.len() * traces.len()];
        for (s, w) in face_rule().params() {
            let x = edge.point_at(mesh, s);
            let wq = w * edge.length;
            let jumps: Vec<Vector2<f64>> = traces
                .iter()
                .map(|tr| eval_opt(&tr.plus, x) - eval_opt(&tr.minus, x))
                .collect();
            for (a, jump_i) in jumps.iter().enumerate() {
                for (b, jump_j) in jumps.iter().enumerate() {
                    let trial_jump = if !interior && constrained[traces[b].dof] {
                        Vector2::zeros()
                    } else {
                        *jump_j
                    };
                    local[a * traces.len() + b] += wq
                        * (-flux[b].dot(jump_i) - flux[a].dot(&trial_jump)
                            + rho / edge.length * jump_i.dot(&trial_jump));
                }
            }
        }
        for (a, ta) in traces.iter().enumerate() {
            for (b, tb) in traces.iter().enumerate() {
                trip.push(ta.dof, tb.dof, local[a * traces.len() + b]);
            }
        }
    }
    let nv = disc.num_velocity();
    CsrMatrix::from_triplets(nv, nv, trip)
}

/// Divergence form `b(v, q) = (div v, q) - <[v].n_e, {q}>`, one row per
/// pressure DOF.
pub fn assemble_b(disc: &Discretization) -> CsrMatrix {
    let mesh = &disc.mesh;
    let constrained = &disc.layout.constrained;
    let mut trip = TripletList::new();
    for (t, basis) in disc.standard.per_triangle.iter().enumerate() {
        let area = mesh.geometry[t].area;
        for (j, phi) in basis {
            trip.push(t, *j, area * phi.div());
        }
    }
    for edge in &mesh.edges {
        let mid = edge.midpoint(mesh);
        for tr in edge_traces(&disc.standard, edge) {
            if edge.is_boundary() && constrained[tr.dof] {
                continue;
            }
            // jump is affine along the edge, so the midpoint rule is exact
            let flux = (eval_opt(&tr.plus, mid) - eval_opt(&tr.minus, mid)).dot(&edge.normal) * edge.length;
            match edge.t_minus {
                Some(tm) => {
                    trip.push(edge.t_plus, tr.dof, -0.5 * flux);
                    trip.push(tm, tr.dof, -0.5 * flux);
                }
                None => trip.push(edge.t_plus, tr.dof, -flux),
            }
        }
    }
    CsrMatrix::from_triplets(disc.num_pressure(), disc.num_velocity(), trip)
}

/// Matrix of `u -> c(z, z, u, v)` for a frozen advecting field `z` given by its
/// velocity coefficients. In pressure-robust mode every velocity is replaced
/// by its reconstruction, including the inflow indicator.
pub fn assemble_c_picard(disc: &Discretization, z: &[f64], pressure_robust: bool) -> CsrMatrix {
    let mesh = &disc.mesh;
    let table = disc.basis(pressure_robust);
    let constrained = &disc.layout.constrained;
    let z_fields: Vec<AffineField> = (0..mesh.num_triangles()).map(|t| table.field(t, z)).collect();
    let mut trip = TripletList::new();

    for (t, basis) in table.per_triangle.iter().enumerate() {
        let zt = &z_fields[t];
        if zt.offset == Vector2::zeros() && zt.grad == nalgebra::Matrix2::zeros() {
            continue;
        }
        let div_z = zt.div();
        let nb = basis.len();
        let mut local = vec![0.0; nb * nb];
        let mut vals = vec![Vector2::zeros(); nb];
        for (x, w) in volume_rule().on_triangle(mesh, t) {
            let zx = zt.eval(x);
            for (k, (_, phi)) in basis.iter().enumerate() {
                vals[k] = phi.eval(x);
            }
            for (b, (_, phi_j)) in basis.iter().enumerate() {
                let adv = phi_j.grad * zx + 0.5 * div_z * vals[b];
                for a in 0..nb {
                    local[a * nb + b] += w * adv.dot(&vals[a]);
                }
            }
        }
        for (a, (i, _)) in basis.iter().enumerate() {
            for (b, (j, _)) in basis.iter().enumerate() {
                trip.push(*i, *j, local[a * nb + b]);
            }
        }
    }

    for edge in &mesh.edges {
        let zp = &z_fields[edge.t_plus];
        let zm = edge.t_minus.map(|tm| &z_fields[tm]);
        let traces = edge_traces(table, edge);
        let nt = traces.len();
        let n = edge.normal;
        let mut local = vec![0.0; nt * nt];
        let mut plus = vec![Vector2::zeros(); nt];
        let mut minus = vec![Vector2::zeros(); nt];
        let mut any = false;
        for (s, w) in face_rule().params() {
            let x = edge.point_at(mesh, s);
            let wq = w * edge.length;
            let zpn = zp.eval(x).dot(&n);
            let (jump_zn, avg_zn) = match zm {
                Some(zm) => {
                    let zmn = zm.eval(x).dot(&n);
                    (zpn - zmn, 0.5 * (zpn + zmn))
                }
                None => (zpn, zpn),
            };
            if jump_zn == 0.0 && avg_zn == 0.0 {
                continue;
            }
            any = true;
            for (k, tr) in traces.iter().enumerate() {
                plus[k] = eval_opt(&tr.plus, x);
                minus[k] = eval_opt(&tr.minus, x);
            }
            match zm {
                Some(_) => {
                    for a in 0..nt {
                        for b in 0..nt {
                            let mut v = -0.25 * jump_zn * (plus[b].dot(&plus[a]) + minus[b].dot(&minus[a]));
                            if avg_zn < 0.0 {
                                // inflow into T+
                                v += -avg_zn * (plus[b] - minus[b]).dot(&plus[a]);
                            } else if avg_zn > 0.0 {
                                v += avg_zn * (minus[b] - plus[b]).dot(&minus[a]);
                            }
                            local[a * nt + b] += wq * v;
                        }
                    }
                }
                None => {
                    for a in 0..nt {
                        for b in 0..nt {
                            let mut v = -0.5 * jump_zn * plus[b].dot(&plus[a]);
                            if avg_zn < 0.0 && !constrained[traces[b].dof] {
                                v += -avg_zn * plus[b].dot(&plus[a]);
                            }
                            local[a * nt + b] += wq * v;
                        }
                    }
                }
            }
        }
        if any {
            for (a, ta) in traces.iter().enumerate() {
                for (b, tb) in traces.iter().enumerate() {
                    trip.push(ta.dof, tb.dof, local[a * nt + b]);
                }
            }
        }
    }
    let nv = disc.num_velocity();
    CsrMatrix::from_triplets(nv, nv, trip)
}

/// Volume part of the derivative of the convection with respect to the
/// advecting field at `z`: `du -> (du . grad z, v) + 1/2 ((div du) z, v)`.
/// Used by the experimental Newton linearization; the upwind set stays frozen.
pub fn assemble_c_derivative(disc: &Discretization, z: &[f64], pressure_robust: bool) -> CsrMatrix {
    let mesh = &disc.mesh;
    let table = disc.basis(pressure_robust);
    let mut trip = TripletList::new();
    for (t, basis) in table.per_triangle.iter().enumerate() {
        let zt = table.field(t, z);
        let nb = basis.len();
        let mut local = vec![0.0; nb * nb];
        for (x, w) in volume_rule().on_triangle(mesh, t) {
            let zx = zt.eval(x);
            let vals: Vec<Vector2<f64>> = basis.iter().map(|(_, phi)| phi.eval(x)).collect();
            for (b, (_, phi_j)) in basis.iter().enumerate() {
                let adv = zt.grad * vals[b] + 0.5 * phi_j.div() * zx;
                for a in 0..nb {
                    local[a * nb + b] += w * adv.dot(&vals[a]);
                }
            }
        }
        for (a, (i, _)) in basis.iter().enumerate() {
            for (b, (j, _)) in basis.iter().enumerate() {
                trip.push(*i, *j, local[a * nb + b]);
            }
        }
    }
    let nv = disc.num_velocity();
    CsrMatrix::from_triplets(nv, nv, trip)
}

/// Load vector `(f, v)` or, in pressure-robust mode, `(f, R v)`.
pub fn assemble_rhs(disc: &Discretization, f: &dyn Fn(Point) -> Vector2<f64>, pressure_robust: bool) -> Vec<f64> {
    let mesh = &disc.mesh;
    let table = disc.basis(pressure_robust);
    let mut rhs = vec![0.0; disc.num_velocity()];
    for (t, basis) in table.per_triangle.iter().enumerate() {
        for (x, w) in volume_rule().on_triangle(mesh, t) {
            let fx = f(x);
            if fx == Vector2::zeros() {
                continue;
            }
            for (dof, phi) in basis {
                rhs[*dof] += w * fx.dot(&phi.eval(x));
            }
        }
    }
    rhs
}

/// Which block a row or column of the saddle system belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Velocity,
    Pressure,
    Multiplier,
}

#[derive(Debug, Clone)]
pub struct SaddleSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    pub num_velocity: usize,
    pub num_pressure: usize,
}

impl SaddleSystem {
    pub fn dim(&self) -> usize {
        self.num_velocity + self.num_pressure + 1
    }

    pub fn multiplier_index(&self) -> usize {
        self.num_velocity + self.num_pressure
    }

    pub fn block_of(&self, i: usize) -> Block {
        if i < self.num_velocity {
            Block::Velocity
        } else if i < self.num_velocity + self.num_pressure {
            Block::Pressure
        } else {
            Block::Multiplier
        }
    }
}

/// Velocity-independent blocks, assembled once per mesh and parameter set.
#[derive(Debug, Clone)]
pub struct StokesBlocks {
    pub a: CsrMatrix,
    pub b: CsrMatrix,
    pub load: Vec<f64>,
    pub params: FormParams,
}

impl StokesBlocks {
    pub fn assemble(disc: &Discretization, params: FormParams, f: &dyn Fn(Point) -> Vector2<f64>) -> Self {
        StokesBlocks {
            a: assemble_a(disc, params.rho),
            b: assemble_b(disc),
            load: assemble_rhs(disc, f, params.pressure_robust),
            params,
        }
    }

    /// Block system with an optional convection matrix and extra load.
    pub fn system(&self, disc: &Discretization, convection: Option<&CsrMatrix>, extra_load: Option<&[f64]>) -> SaddleSystem {
        let nv = disc.num_velocity();
        let np = disc.num_pressure();
        let mut trip = TripletList::new();
        for r in 0..nv {
            for (c, v) in self.a.row(r) {
                trip.push(r, c, self.params.mu * v);
            }
        }
        if let Some(conv) = convection {
            trip.extend_from(&conv.to_triplets());
        }
        for q in 0..np {
            for (c, v) in self.b.row(q) {
                trip.push(c, nv + q, -v);
                trip.push(nv + q, c, v);
            }
        }
        let lam = nv + np;
        for (t, g) in disc.mesh.geometry.iter().enumerate() {
            trip.push(nv + t, lam, g.area);
            trip.push(lam, nv + t, g.area);
        }
        let n = nv + np + 1;
        let mut rhs = vec![0.0; n];
        rhs[..nv].copy_from_slice(&self.load);
        if let Some(extra) = extra_load {
            for (r, e) in rhs.iter_mut().zip(extra) {
                *r += e;
            }
        }
        SaddleSystem {
            matrix: CsrMatrix::from_triplets(n, n, trip),
            rhs,
            num_velocity: nv,
            num_pressure: np,
        }
    }
}

/// Full system for advecting field `z` (`None` gives the Stokes system).
pub fn build_saddle_system(
    disc: &Discretization,
    params: FormParams,
    z: Option<&[f64]>,
    f: &dyn Fn(Point) -> Vector2<f64>,
) -> SaddleSystem {
    let blocks = StokesBlocks::assemble(disc, params, f);
    let conv = z.map(|z| assemble_c_picard(disc, z, params.pressure_robust));
    blocks.system(disc, conv.as_ref(), None)
}

/// Prescribed nodal velocities on boundary vertices. Boundary vertices that are
/// not listed get zero.
#[derive(Debug, Clone, Default)]
pub struct BoundaryData {
    pub values: Vec<(usize, Vector2<f64>)>,
}

impl BoundaryData {
    pub fn homogeneous() -> Self {
        Self::default()
    }

    pub fn from_fn(mesh: &Mesh, g: impl Fn(Point) -> Vector2<f64>) -> Self {
        let values = (0..mesh.num_vertices())
            .filter(|&v| mesh.boundary_vertex[v])
            .map(|v| (v, g(mesh.vertices[v])))
            .filter(|(_, val)| *val != Vector2::zeros())
            .collect();
        BoundaryData { values }
    }

    /// Unit tangential velocity on the top side `y = 1`, zero elsewhere. The
    /// two top corners take the lid value.
    pub fn lid(mesh: &Mesh) -> Self {
        Self::from_fn(mesh, |p| {
            if p.y >= 1.0 - 1e-12 {
                Vector2::new(1.0, 0.0)
            } else {
                Vector2::zeros()
            }
        })
    }

    /// Velocity coefficient vector holding the data on constrained DOFs.
    pub fn coefficients(&self, layout: &DofLayout) -> Vec<f64> {
        let mut out = vec![0.0; layout.num_velocity()];
        for (v, val) in &self.values {
            out[layout.nodal(*v, 0)] = val.x;
            out[layout.nodal(*v, 1)] = val.y;
        }
        out
    }
}

/// Strong imposition of the nodal boundary values by row and column
/// condensation: constrained rows become identity rows holding the data and
/// their columns are moved to the right-hand side.
pub fn apply_dirichlet(system: &SaddleSystem, disc: &Discretization, data: &BoundaryData) -> Result<SaddleSystem> {
    let layout = &disc.layout;
    for (v, _) in &data.values {
        if *v >= disc.mesh.num_vertices() || !disc.mesh.boundary_vertex[*v] {
            return Err(Error::InvalidArgument(format!("vertex {v} is not on the boundary")));
        }
    }
    let g = data.coefficients(layout);
    let n = system.dim();
    let is_fixed = |i: usize| i < layout.num_velocity() && layout.constrained[i];
    let mut rhs = system.rhs.clone();
    let mut trip = TripletList::new();
    for r in 0..n {
        if is_fixed(r) {
            trip.push(r, r, 1.0);
            rhs[r] = g[r];
            continue;
        }
        for (c, v) in system.matrix.row(r) {
            if is_fixed(c) {
                rhs[r] -= v * g[c];
            } else {
                trip.push(r, c, v);
            }
        }
    }
    Ok(SaddleSystem {
        matrix: CsrMatrix::from_triplets(n, n, trip),
        rhs,
        num_velocity: system.num_velocity,
        num_pressure: system.num_pressure,
    })
}
