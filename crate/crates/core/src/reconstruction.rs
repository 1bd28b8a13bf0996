//! Velocity reconstruction `R : V_h -> BDM1`.
//!
//! On each triangle `Rv` is the affine field whose normal-flux moments against
//! `1` and `s` on every edge equal those of the average `{v}` (interior edges)
//! or vanish (boundary edges). The edge parameter `s` runs from the lower to the
//! higher global vertex index, so both neighbours test against the same `p_1`
//! and the normal trace of `Rv` is continuous.

use nalgebra::{Matrix2, Matrix6, Vector2, Vector6};

use crate::mesh::{Mesh, Point};
use crate::spaces::{barycentric_gradients, AffineField, BasisTable, EGFunction};

/// Reconstructed field stored as vertex values per triangle:
/// `coeffs[t] = [V0x, V0y, V1x, V1y, V2x, V2y]`, `Rv|_T = sum_i lambda_i V_i`.
#[derive(Debug, Clone)]
pub struct BDMFunction {
    pub coeffs: Vec<[f64; 6]>,
}

impl BDMFunction {
    pub fn on_triangle(&self, mesh: &Mesh, t: usize) -> AffineField {
        vertex_values_to_affine(mesh, t, &Vector6::from_column_slice(&self.coeffs[t]))
    }

    pub fn eval(&self, mesh: &Mesh, t: usize, x: Point) -> Vector2<f64> {
        let l = mesh.barycentric(t, x);
        let c = &self.coeffs[t];
        (0..3).map(|i| Vector2::new(c[2 * i], c[2 * i + 1]) * l[i]).sum()
    }

    pub fn eval_grad(&self, mesh: &Mesh, t: usize) -> Matrix2<f64> {
        self.on_triangle(mesh, t).grad
    }

    pub fn eval_div(&self, mesh: &Mesh, t: usize) -> f64 {
        self.eval_grad(mesh, t).trace()
    }
}

fn vertex_values_to_affine(mesh: &Mesh, t: usize, vals: &Vector6<f64>) -> AffineField {
    let grads = barycentric_gradients(mesh, t);
    let xc = mesh.geometry[t].centroid;
    let mut f = AffineField::zero();
    for i in 0..3 {
        let v = Vector2::new(vals[2 * i], vals[2 * i + 1]);
        f.grad += v * grads[i].transpose();
        f.offset += v * (1.0 / 3.0 - grads[i].dot(&xc));
    }
    f
}

/// Local moment matrices of every triangle, inverted once per mesh.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    inverse_moments: Vec<Matrix6<f64>>,
}

impl Reconstruction {
    pub fn new(mesh: &Mesh) -> Self {
        let inverse_moments = (0..mesh.num_triangles())
            .map(|t| {
                local_moment_matrix(mesh, t)
                    .try_inverse()
                    .expect("BDM1 moment matrix of a nondegenerate triangle is invertible")
            })
            .collect();
        Reconstruction { inverse_moments }
    }

    /// Reconstructs `v` triangle by triangle from a shared table of edge moments.
    pub fn reconstruct(&self, mesh: &Mesh, v: &EGFunction) -> BDMFunction {
        let edge_moments: Vec<[f64; 2]> = (0..mesh.num_edges())
            .map(|e| {
                let edge = &mesh.edges[e];
                match edge.t_minus {
                    None => [0.0; 2],
                    Some(tm) => {
                        let plus = v.on_triangle(mesh, edge.t_plus);
                        let minus = v.on_triangle(mesh, tm);
                        crate::spaces::normal_moments(mesh, e, |x| 0.5 * (plus.eval(x) + minus.eval(x)))
                    }
                }
            })
            .collect();
        let coeffs = (0..mesh.num_triangles())
            .map(|t| {
                let mut rhs = Vector6::zeros();
                for k in 0..3 {
                    let e = mesh.tri_edges[t][k].0;
                    rhs[2 * k] = edge_moments[e][0];
                    rhs[2 * k + 1] = edge_moments[e][1];
                }
                let c = self.inverse_moments[t] * rhs;
                let mut out = [0.0; 6];
                out.copy_from_slice(c.as_slice());
                out
            })
            .collect();
        BDMFunction { coeffs }
    }

    /// Reconstructed basis: for every triangle, the fields `R phi_j |_T` of all
    /// EG basis functions `phi_j` whose reconstruction does not vanish on `T`.
    pub fn basis_table(&self, mesh: &Mesh, standard: &BasisTable) -> BasisTable {
        let per_triangle = (0..mesh.num_triangles())
            .map(|t| {
                // moment contributions per dof: 6-vector of target moments
                let mut contrib: Vec<(usize, Vector6<f64>)> = Vec::new();
                for k in 0..3 {
                    let e = mesh.tri_edges[t][k].0;
                    let edge = &mesh.edges[e];
                    let Some(tm) = edge.t_minus else { continue };
                    for side in [edge.t_plus, tm] {
                        for (dof, phi) in &standard.per_triangle[side] {
                            let m = crate::spaces::normal_moments(mesh, e, |x| 0.5 * phi.eval(x));
                            if m[0] == 0.0 && m[1] == 0.0 {
                                continue;
                            }
                            let slot = match contrib.iter().position(|(d, _)| d == dof) {
                                Some(i) => i,
                                None => {
                                    contrib.push((*dof, Vector6::zeros()));
                                    contrib.len() - 1
                                }
                            };
                            contrib[slot].1[2 * k] += m[0];
                            contrib[slot].1[2 * k + 1] += m[1];
                        }
                    }
                }
                contrib.sort_by_key(|(d, _)| *d);
                contrib
                    .into_iter()
                    .map(|(dof, rhs)| {
                        let vals = self.inverse_moments[t] * rhs;
                        (dof, vertex_values_to_affine(mesh, t, &vals))
                    })
                    .collect()
            })
            .collect();
        BasisTable { per_triangle }
    }
}

/// Row `2k + m`: moment of the normal trace on local edge `k` against `s^m`;
/// column `2i + c`: vertex value `c` of local vertex `i`.
fn local_moment_matrix(mesh: &Mesh, t: usize) -> Matrix6<f64> {
    let tri = mesh.triangles[t];
    let mut m = Matrix6::zeros();
    for k in 0..3 {
        let e = mesh.tri_edges[t][k].0;
        let edge = &mesh.edges[e];
        let n = edge.normal;
        for i in 0..3 {
            // lambda_i at the edge start (s = 0) and end (s = 1)
            let la = f64::from(u8::from(tri[i] == edge.vertices[0]));
            let lb = f64::from(u8::from(tri[i] == edge.vertices[1]));
            let m0 = edge.length * (la + lb) / 2.0;
            let m1 = edge.length * (la / 6.0 + lb / 3.0);
            for c in 0..2 {
                m[(2 * k, 2 * i + c)] = m0 * n[c];
                m[(2 * k + 1, 2 * i + c)] = m1 * n[c];
            }
        }
    }
    m
}
