//! Conforming triangulations with explicit edge topology.
//!
//! Every edge stores the two incident triangles `t_plus` / `t_minus` and a unit
//! normal pointing from `t_plus` into `t_minus`. The triangle with the smaller
//! index is always `t_plus`. Boundary edges have no `t_minus` and their normal
//! points out of the domain.

use std::collections::HashMap;
use std::io::Write;

use nalgebra::Vector2;

use crate::error::{Error, Result};

pub type Point = Vector2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeKind {
    Interior,
    Boundary,
}

#[derive(Debug, Clone)]
pub struct Edge {
    /// Endpoint vertex indices, ascending. The edge parameter `s` runs from
    /// `vertices[0]` (s = 0) to `vertices[1]` (s = 1) on both incident triangles.
    pub vertices: [usize; 2],
    pub t_plus: usize,
    pub t_minus: Option<usize>,
    pub normal: Point,
    pub length: f64,
}

impl Edge {
    pub fn kind(&self) -> EdgeKind {
        match self.t_minus {
            Some(_) => EdgeKind::Interior,
            None => EdgeKind::Boundary,
        }
    }

    pub fn is_boundary(&self) -> bool {
        self.t_minus.is_none()
    }

    pub fn midpoint(&self, mesh: &Mesh) -> Point {
        0.5 * (mesh.vertices[self.vertices[0]] + mesh.vertices[self.vertices[1]])
    }

    /// Point at edge parameter `s` in [0, 1].
    pub fn point_at(&self, mesh: &Mesh, s: f64) -> Point {
        let a = mesh.vertices[self.vertices[0]];
        let b = mesh.vertices[self.vertices[1]];
        a + s * (b - a)
    }
}

/// Per-triangle geometric data.
#[derive(Debug, Clone)]
pub struct TriangleGeometry {
    pub area: f64,
    /// Longest edge length.
    pub diameter: f64,
    pub centroid: Point,
    /// Outward unit normal of local edge `k` (the edge opposite local vertex `k`).
    pub outward_normals: [Point; 3],
    pub edge_lengths: [f64; 3],
}

impl TriangleGeometry {
    fn from_vertices(p: [Point; 3]) -> Self {
        let area = 0.5 * signed_area2(p[0], p[1], p[2]);
        let mut outward_normals = [Point::zeros(); 3];
        let mut edge_lengths = [0.0; 3];
        for k in 0..3 {
            let a = p[(k + 1) % 3];
            let b = p[(k + 2) % 3];
            let d = b - a;
            let len = d.norm();
            edge_lengths[k] = len;
            outward_normals[k] = Point::new(d.y, -d.x) / len;
        }
        let diameter = edge_lengths.iter().cloned().fold(0.0, f64::max);
        TriangleGeometry {
            area,
            diameter,
            centroid: (p[0] + p[1] + p[2]) / 3.0,
            outward_normals,
            edge_lengths,
        }
    }
}

fn signed_area2(a: Point, b: Point, c: Point) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y)
}

/// Immutable triangulation with edge connectivity.
#[derive(Debug, Clone)]
pub struct Mesh {
    pub vertices: Vec<Point>,
    /// Counterclockwise vertex triples.
    pub triangles: Vec<[usize; 3]>,
    pub edges: Vec<Edge>,
    /// For each triangle and local edge `k` (opposite local vertex `k`): the
    /// global edge index and the sign relating the triangle's outward normal to
    /// the edge normal (`+1` on `t_plus`, `-1` on `t_minus`).
    pub tri_edges: Vec<[(usize, f64); 3]>,
    pub geometry: Vec<TriangleGeometry>,
    pub boundary_vertex: Vec<bool>,
    pub h_max: f64,
}

impl Mesh {
    /// Builds the edge topology for a list of counterclockwise triangles.
    pub fn from_triangles(vertices: Vec<Point>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        let nv = vertices.len();
        let mut geometry = Vec::with_capacity(triangles.len());
        for (t, tri) in triangles.iter().enumerate() {
            if tri.iter().any(|&v| v >= nv) {
                return Err(Error::InvalidArgument(format!("triangle {t} references a missing vertex")));
            }
            let p = [vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]];
            if signed_area2(p[0], p[1], p[2]) <= 0.0 {
                return Err(Error::InvalidArgument(format!("triangle {t} is not counterclockwise")));
            }
            geometry.push(TriangleGeometry::from_vertices(p));
        }

        let mut lookup: HashMap<(usize, usize), usize> = HashMap::new();
        let mut edges: Vec<Edge> = Vec::new();
        let mut tri_edges = Vec::with_capacity(triangles.len());
        for (t, tri) in triangles.iter().enumerate() {
            let mut local = [(0usize, 0.0f64); 3];
            for k in 0..3 {
                let a = tri[(k + 1) % 3];
                let b = tri[(k + 2) % 3];
                let key = (a.min(b), a.max(b));
                match lookup.get(&key) {
                    Some(&e) => {
                        let edge = &mut edges[e];
                        if edge.t_minus.is_some() {
                            return Err(Error::InvalidArgument(format!(
                                "edge ({}, {}) is shared by more than two triangles",
                                key.0, key.1
                            )));
                        }
                        edge.t_minus = Some(t);
                        local[k] = (e, -1.0);
                    }
                    None => {
                        let e = edges.len();
                        lookup.insert(key, e);
                        edges.push(Edge {
                            vertices: [key.0, key.1],
                            t_plus: t,
                            t_minus: None,
                            normal: geometry[t].outward_normals[k],
                            length: geometry[t].edge_lengths[k],
                        });
                        local[k] = (e, 1.0);
                    }
                }
            }
            tri_edges.push(local);
        }

        let mut boundary_vertex = vec![false; nv];
        for e in edges.iter().filter(|e| e.is_boundary()) {
            boundary_vertex[e.vertices[0]] = true;
            boundary_vertex[e.vertices[1]] = true;
        }
        let h_max = geometry.iter().map(|g| g.diameter).fold(0.0, f64::max);

        Ok(Mesh {
            vertices,
            triangles,
            edges,
            tri_edges,
            geometry,
            boundary_vertex,
            h_max,
        })
    }

    /// Uniform mesh of the unit square with `n` cells per side, each cell cut
    /// along its lower-left to upper-right diagonal.
    pub fn unit_square(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("unit square mesh needs n >= 1".into()));
        }
        let idx = |i: usize, j: usize| j * (n + 1) + i;
        let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
        for j in 0..=n {
            for i in 0..=n {
                vertices.push(Point::new(i as f64 / n as f64, j as f64 / n as f64));
            }
        }
        let mut triangles = Vec::with_capacity(2 * n * n);
        for j in 0..n {
            for i in 0..n {
                let (v00, v10, v11, v01) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
                triangles.push([v00, v10, v11]);
                triangles.push([v00, v11, v01]);
            }
        }
        Self::from_triangles(vertices, triangles)
    }

    /// Splits every triangle into four congruent children through its edge
    /// midpoints. Midpoint of edge `e` becomes vertex `nv + e`.
    pub fn refine_uniform(&self) -> Self {
        let nv = self.vertices.len();
        let mut vertices = self.vertices.clone();
        vertices.extend(self.edges.iter().map(|e| e.midpoint(self)));
        let mut triangles = Vec::with_capacity(4 * self.triangles.len());
        for (t, &[a, b, c]) in self.triangles.iter().enumerate() {
            let m_bc = nv + self.tri_edges[t][0].0;
            let m_ca = nv + self.tri_edges[t][1].0;
            let m_ab = nv + self.tri_edges[t][2].0;
            triangles.push([a, m_ab, m_ca]);
            triangles.push([m_ab, b, m_bc]);
            triangles.push([m_ca, m_bc, c]);
            triangles.push([m_ab, m_bc, m_ca]);
        }
        Self::from_triangles(vertices, triangles).expect("refinement of a valid mesh is valid")
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn triangle_points(&self, t: usize) -> [Point; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn geometric_quantities(&self, t: usize) -> &TriangleGeometry {
        &self.geometry[t]
    }

    /// Outward normal of triangle `t` on its local edge `k`, recovered from the
    /// stored edge normal and orientation sign.
    pub fn outward_normal(&self, t: usize, k: usize) -> Point {
        let (e, sign) = self.tri_edges[t][k];
        sign * self.edges[e].normal
    }

    /// Local edge number of global edge `e` inside triangle `t`.
    pub fn local_edge(&self, t: usize, e: usize) -> Option<usize> {
        self.tri_edges[t].iter().position(|&(g, _)| g == e)
    }

    /// Barycentric coordinates of `x` with respect to triangle `t`.
    pub fn barycentric(&self, t: usize, x: Point) -> [f64; 3] {
        let [a, b, c] = self.triangle_points(t);
        let area2 = signed_area2(a, b, c);
        let l0 = signed_area2(x, b, c) / area2;
        let l1 = signed_area2(a, x, c) / area2;
        [l0, l1, 1.0 - l0 - l1]
    }

    /// Smallest interior angle over all triangles, in degrees.
    pub fn min_angle_degrees(&self) -> f64 {
        let mut min = f64::INFINITY;
        for t in 0..self.num_triangles() {
            let p = self.triangle_points(t);
            for k in 0..3 {
                let u = p[(k + 1) % 3] - p[k];
                let v = p[(k + 2) % 3] - p[k];
                let angle = (u.dot(&v) / (u.norm() * v.norm())).clamp(-1.0, 1.0).acos();
                min = min.min(angle.to_degrees());
            }
        }
        min
    }

    /// Plain-text debug dump: a `V E T` count line, vertex coordinates, then
    /// vertex index triples.
    pub fn write_dump<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{} {} {}", self.num_vertices(), self.num_edges(), self.num_triangles())?;
        for p in &self.vertices {
            writeln!(out, "{:.17e} {:.17e}", p.x, p.y)?;
        }
        for t in &self.triangles {
            writeln!(out, "{} {} {}", t[0], t[1], t[2])?;
        }
        Ok(())
    }
}

/// Result of a point location query.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Located {
    Inside(usize),
    /// Outside every triangle; the triangle with the nearest centroid.
    Nearest(usize),
}

impl Located {
    pub fn triangle(self) -> usize {
        match self {
            Located::Inside(t) | Located::Nearest(t) => t,
        }
    }
}

/// Uniform bucket grid over the mesh bounding box for point-in-triangle
/// queries.
#[derive(Debug, Clone)]
pub struct PointLocator {
    lo: Point,
    cell: Point,
    nb: usize,
    buckets: Vec<Vec<usize>>,
}

impl PointLocator {
    pub fn new(mesh: &Mesh) -> Self {
        let mut lo = Point::new(f64::INFINITY, f64::INFINITY);
        let mut hi = -lo;
        for p in &mesh.vertices {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let nb = ((mesh.num_triangles() as f64).sqrt().ceil() as usize).max(1);
        let cell = (hi - lo).map(|d| if d > 0.0 { d / nb as f64 } else { 1.0 });
        let mut buckets = vec![Vec::new(); nb * nb];
        for t in 0..mesh.num_triangles() {
            let pts = mesh.triangle_points(t);
            let tlo = pts[0].inf(&pts[1]).inf(&pts[2]);
            let thi = pts[0].sup(&pts[1]).sup(&pts[2]);
            let (i0, j0) = Self::bucket_of(lo, cell, nb, tlo);
            let (i1, j1) = Self::bucket_of(lo, cell, nb, thi);
            for j in j0..=j1 {
                for i in i0..=i1 {
                    buckets[j * nb + i].push(t);
                }
            }
        }
        PointLocator { lo, cell, nb, buckets }
    }

    fn bucket_of(lo: Point, cell: Point, nb: usize, x: Point) -> (usize, usize) {
        let f = |v: f64, l: f64, c: f64| (((v - l) / c).floor().max(0.0) as usize).min(nb - 1);
        (f(x.x, lo.x, cell.x), f(x.y, lo.y, cell.y))
    }

    /// Triangle containing `x` (boundary points included, with a small
    /// tolerance), or the nearest-centroid triangle when there is none.
    pub fn locate(&self, mesh: &Mesh, x: Point) -> Located {
        let (i, j) = Self::bucket_of(self.lo, self.cell, self.nb, x);
        for &t in &self.buckets[j * self.nb + i] {
            if mesh.barycentric(t, x).iter().all(|&l| l >= -1e-12) {
                return Located::Inside(t);
            }
        }
        let nearest = (0..mesh.num_triangles())
            .min_by(|&a, &b| {
                let da = (mesh.geometry[a].centroid - x).norm_squared();
                let db = (mesh.geometry[b].centroid - x).norm_squared();
                da.total_cmp(&db)
            })
            .expect("mesh has triangles");
        Located::Nearest(nearest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn edge_count_brute_force(mesh: &Mesh) -> (usize, usize) {
        let mut count: HashMap<(usize, usize), usize> = HashMap::new();
        for tri in &mesh.triangles {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                *count.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        let interior = count.values().filter(|&&c| c == 2).count();
        (count.len(), interior)
    }

    #[test]
    fn single_cell_square() {
        let m = Mesh::unit_square(1).unwrap();
        assert_eq!(m.num_vertices(), 4);
        assert_eq!(m.num_triangles(), 2);
        assert_eq!(m.num_edges(), 5);
        assert_eq!(m.edges.iter().filter(|e| e.is_boundary()).count(), 4);
        assert_eq!(m.edges.iter().filter(|e| e.kind() == EdgeKind::Interior).count(), 1);
    }

    #[test]
    fn two_cell_square_matches_enumeration() {
        let m = Mesh::unit_square(2).unwrap();
        let (total, interior) = edge_count_brute_force(&m);
        assert_eq!((m.num_vertices(), m.num_triangles(), m.num_edges()), (9, 8, 16));
        assert_eq!(total, 16);
        assert_eq!(interior, 8);
        assert_eq!(m.edges.iter().filter(|e| !e.is_boundary()).count(), interior);
    }

    #[test]
    fn zero_subdivisions_rejected() {
        assert!(matches!(Mesh::unit_square(0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn clockwise_triangle_rejected() {
        let v = vec![Point::new(0.0, 0.0), Point::new(0.0, 1.0), Point::new(1.0, 0.0)];
        assert!(Mesh::from_triangles(v, vec![[0, 1, 2]]).is_err());
    }

    #[test]
    fn h_max_is_the_diagonal() {
        for n in [1, 4, 7] {
            let m = Mesh::unit_square(n).unwrap();
            assert!((m.h_max - 2f64.sqrt() / n as f64).abs() < 1e-15);
        }
    }

    #[test]
    fn euler_relation_and_areas() {
        let mut m = Mesh::unit_square(3).unwrap();
        for _ in 0..2 {
            assert_eq!(m.num_vertices() as i64 - m.num_edges() as i64 + m.num_triangles() as i64, 1);
            let area: f64 = m.geometry.iter().map(|g| g.area).sum();
            assert!((area - 1.0).abs() < 1e-13);
            m = m.refine_uniform();
        }
    }

    #[test]
    fn refinement_halves_h_and_quadruples_triangles() {
        let m = Mesh::unit_square(1).unwrap();
        let r = m.refine_uniform();
        assert_eq!(r.num_triangles(), 8);
        assert!((r.h_max - m.h_max / 2.0).abs() < 1e-15);
        let boundary: usize = r.edges.iter().filter(|e| e.is_boundary()).count();
        assert_eq!(boundary, 8);
    }

    fn triangle_set(m: &Mesh) -> BTreeSet<Vec<(i64, i64)>> {
        let key = |p: Point| ((p.x * 1e9).round() as i64, (p.y * 1e9).round() as i64);
        m.triangles
            .iter()
            .map(|t| {
                let mut v: Vec<_> = t.iter().map(|&i| key(m.vertices[i])).collect();
                v.sort();
                v
            })
            .collect()
    }

    fn edge_set(m: &Mesh) -> BTreeSet<((i64, i64), (i64, i64), bool)> {
        let key = |p: Point| ((p.x * 1e9).round() as i64, (p.y * 1e9).round() as i64);
        m.edges
            .iter()
            .map(|e| {
                let a = key(m.vertices[e.vertices[0]]);
                let b = key(m.vertices[e.vertices[1]]);
                (a.min(b), a.max(b), e.is_boundary())
            })
            .collect()
    }

    #[test]
    fn twice_refined_matches_direct_construction() {
        let refined = Mesh::unit_square(4).unwrap().refine_uniform().refine_uniform();
        let direct = Mesh::unit_square(16).unwrap();
        assert_eq!(triangle_set(&refined), triangle_set(&direct));
        assert_eq!(edge_set(&refined), edge_set(&direct));
    }

    #[test]
    fn reference_triangle_quantities() {
        let v = vec![Point::new(0.0, 0.0), Point::new(1.0, 0.0), Point::new(0.0, 1.0)];
        let m = Mesh::from_triangles(v, vec![[0, 1, 2]]).unwrap();
        let g = m.geometric_quantities(0);
        assert!((g.area - 0.5).abs() < 1e-15);
        assert!((g.centroid - Point::new(1.0 / 3.0, 1.0 / 3.0)).norm() < 1e-15);
        assert!((g.diameter - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn three_four_five_triangle() {
        let v = vec![Point::new(0.0, 0.0), Point::new(4.0, 0.0), Point::new(0.0, 3.0)];
        let m = Mesh::from_triangles(v, vec![[0, 1, 2]]).unwrap();
        assert!((m.geometric_quantities(0).diameter - 5.0).abs() < 1e-14);
    }

    #[test]
    fn closed_boundary_flux_of_constants() {
        let m = Mesh::unit_square(3).unwrap().refine_uniform();
        for g in &m.geometry {
            let s: Point = (0..3).map(|k| g.outward_normals[k] * g.edge_lengths[k]).sum();
            assert!(s.norm() < 1e-14);
        }
    }

    #[test]
    fn orientation_consistency() {
        let m = Mesh::unit_square(4).unwrap();
        for (e, edge) in m.edges.iter().enumerate() {
            assert!((edge.normal.norm() - 1.0).abs() < 1e-14);
            assert!(edge.length > 0.0);
            let kp = m.local_edge(edge.t_plus, e).unwrap();
            assert!((m.geometry[edge.t_plus].outward_normals[kp] - edge.normal).norm() < 1e-14);
            assert!((m.outward_normal(edge.t_plus, kp) - edge.normal).norm() < 1e-14);
            match edge.t_minus {
                Some(tm) => {
                    assert!(tm > edge.t_plus);
                    let km = m.local_edge(tm, e).unwrap();
                    assert!((m.geometry[tm].outward_normals[km] + edge.normal).norm() < 1e-14);
                    assert!((m.outward_normal(tm, km) + edge.normal).norm() < 1e-14);
                }
                None => {
                    // outward from the unit square
                    let mid = edge.midpoint(&m);
                    let probe = mid + 1e-3 * edge.normal;
                    assert!(probe.x < 0.0 || probe.x > 1.0 || probe.y < 0.0 || probe.y > 1.0);
                }
            }
        }
    }

    #[test]
    fn shape_regularity_across_levels() {
        let mut m = Mesh::unit_square(2).unwrap();
        for _ in 0..3 {
            assert!(m.min_angle_degrees() >= 30.0);
            m = m.refine_uniform();
        }
    }

    #[test]
    fn dump_has_counts_header() {
        let m = Mesh::unit_square(1).unwrap();
        let mut buf = Vec::new();
        m.write_dump(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "4 5 2");
        assert_eq!(lines.len(), 1 + 4 + 2);
    }

    #[test]
    fn locator_finds_containing_triangle() {
        let m = Mesh::unit_square(5).unwrap();
        let loc = PointLocator::new(&m);
        for t in 0..m.num_triangles() {
            let c = m.geometry[t].centroid;
            assert_eq!(loc.locate(&m, c), Located::Inside(t));
        }
        for p in [Point::new(0.0, 0.0), Point::new(1.0, 1.0), Point::new(0.5, 1.0), Point::new(1.0, 0.3)] {
            assert!(matches!(loc.locate(&m, p), Located::Inside(_)));
        }
        let far = loc.locate(&m, Point::new(1.5, 0.05));
        assert!(matches!(far, Located::Nearest(_)));
        let t = far.triangle();
        assert!(m.geometry[t].centroid.x > 0.8 && m.geometry[t].centroid.y < 0.2);
    }
}
