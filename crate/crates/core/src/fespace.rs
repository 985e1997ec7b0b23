//! Continuous Lagrange spaces of degree 1 and 2 with homogeneous Dirichlet
//! boundary conditions, finite element functions and piecewise polynomial
//! fields on elements and edges.
//!
//! Local numbering for degree 2: vertex dofs `0, 1, 2`, then the midpoints of
//! the element edges `(0, 1)`, `(1, 2)`, `(2, 0)`.

use std::fmt::Write as _;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mesh::{barycentric, Point, Triangulation};
use crate::quadrature::TriangleRule;

pub const MAX_LOCAL: usize = 6;

pub fn n_local(degree: usize) -> usize {
    (degree + 1) * (degree + 2) / 2
}

pub fn check_degree(degree: usize) -> Result<()> {
    match degree {
        1 | 2 => Ok(()),
        d => Err(Error::UnsupportedDegree(d)),
    }
}

const EDGE_PAIRS: [(usize, usize); 3] = [(0, 1), (1, 2), (2, 0)];

/// Barycentric coordinates of the local Lagrange nodes.
pub fn lagrange_nodes(degree: usize) -> Vec<[f64; 3]> {
    let mut n = vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    if degree == 2 {
        n.extend([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]]);
    }
    n
}

pub fn basis_values(degree: usize, l: [f64; 3]) -> [f64; MAX_LOCAL] {
    let mut out = [0.0; MAX_LOCAL];
    if degree == 1 {
        out[..3].copy_from_slice(&l);
    } else {
        for i in 0..3 {
            out[i] = l[i] * (2.0 * l[i] - 1.0);
        }
        for (j, &(a, b)) in EDGE_PAIRS.iter().enumerate() {
            out[3 + j] = 4.0 * l[a] * l[b];
        }
    }
    out
}

pub fn basis_gradients(degree: usize, l: [f64; 3], gl: &[[f64; 2]; 3]) -> [[f64; 2]; MAX_LOCAL] {
    let mut out = [[0.0; 2]; MAX_LOCAL];
    if degree == 1 {
        out[..3].copy_from_slice(gl);
    } else {
        for i in 0..3 {
            let s = 4.0 * l[i] - 1.0;
            out[i] = [s * gl[i][0], s * gl[i][1]];
        }
        for (j, &(a, b)) in EDGE_PAIRS.iter().enumerate() {
            out[3 + j] = [4.0 * (l[b] * gl[a][0] + l[a] * gl[b][0]), 4.0 * (l[b] * gl[a][1] + l[a] * gl[b][1])];
        }
    }
    out
}

/// Constant Hessians of the local basis (zero for degree 1).
pub fn basis_hessians(degree: usize, gl: &[[f64; 2]; 3]) -> [[[f64; 2]; 2]; MAX_LOCAL] {
    let mut out = [[[0.0; 2]; 2]; MAX_LOCAL];
    if degree == 2 {
        let outer = |a: [f64; 2], b: [f64; 2]| [[a[0] * b[0], a[0] * b[1]], [a[1] * b[0], a[1] * b[1]]];
        for i in 0..3 {
            let o = outer(gl[i], gl[i]);
            out[i] = [[4.0 * o[0][0], 4.0 * o[0][1]], [4.0 * o[1][0], 4.0 * o[1][1]]];
        }
        for (j, &(a, b)) in EDGE_PAIRS.iter().enumerate() {
            let (p, q) = (outer(gl[a], gl[b]), outer(gl[b], gl[a]));
            out[3 + j] = [
                [4.0 * (p[0][0] + q[0][0]), 4.0 * (p[0][1] + q[0][1])],
                [4.0 * (p[1][0] + q[1][0]), 4.0 * (p[1][1] + q[1][1])],
            ];
        }
    }
    out
}

/// Affine element geometry.
#[derive(Clone, Copy, Debug)]
pub struct Geometry {
    pub vertices: [Point; 3],
    pub area: f64,
    pub grad_lambda: [[f64; 2]; 3],
}

impl Geometry {
    pub fn new(v: [Point; 3]) -> Self {
        let two_a = (v[1][0] - v[0][0]) * (v[2][1] - v[0][1]) - (v[2][0] - v[0][0]) * (v[1][1] - v[0][1]);
        let mut gl = [[0.0; 2]; 3];
        for i in 0..3 {
            let (p, q) = (v[(i + 1) % 3], v[(i + 2) % 3]);
            gl[i] = [(p[1] - q[1]) / two_a, (q[0] - p[0]) / two_a];
        }
        Geometry { vertices: v, area: 0.5 * two_a, grad_lambda: gl }
    }

    pub fn map(&self, l: [f64; 3]) -> Point {
        let v = &self.vertices;
        [
            l[0] * v[0][0] + l[1] * v[1][0] + l[2] * v[2][0],
            l[0] * v[0][1] + l[1] * v[1][1] + l[2] * v[2][1],
        ]
    }

    pub fn barycentric(&self, x: Point) -> [f64; 3] {
        barycentric(&self.vertices, x)
    }
}

/// Basis values tabulated at the points of a quadrature rule.
#[derive(Clone, Debug)]
pub struct Tabulation {
    pub degree: usize,
    pub bary: Vec<[f64; 3]>,
    /// Weights scaled to sum to one (multiply by the element area).
    pub weights: Vec<f64>,
    pub values: Vec<[f64; MAX_LOCAL]>,
}

impl Tabulation {
    pub fn new(degree: usize, rule: &TriangleRule) -> Self {
        let bary = rule.barycentric();
        let values = bary.iter().map(|&l| basis_values(degree, l)).collect();
        let weights = rule.weights.iter().map(|w| 2.0 * w).collect();
        Tabulation { degree, bary, weights, values }
    }
}

/// Reference mass matrix scaled by the inverse element area.
pub fn reference_mass(degree: usize) -> [[f64; MAX_LOCAL]; MAX_LOCAL] {
    let rule = crate::quadrature::triangle_rule(2 * degree).expect("low degree rule");
    let tab = Tabulation::new(degree, &rule);
    let mut m = [[0.0; MAX_LOCAL]; MAX_LOCAL];
    for (w, phi) in tab.weights.iter().zip(&tab.values) {
        for i in 0..n_local(degree) {
            for j in 0..n_local(degree) {
                m[i][j] += w * phi[i] * phi[j];
            }
        }
    }
    m
}

#[derive(Debug)]
pub struct FiniteElementSpace {
    mesh: Arc<Triangulation>,
    degree: usize,
    dof_coords: Vec<Point>,
    boundary: Vec<bool>,
    element_dofs: Vec<[usize; MAX_LOCAL]>,
    free_index: Vec<usize>,
    free_dofs: Vec<usize>,
}

pub const NOT_FREE: usize = usize::MAX;

impl FiniteElementSpace {
    pub fn new(mesh: Arc<Triangulation>, degree: usize) -> Result<Arc<Self>> {
        check_degree(degree)?;
        let nv = mesh.n_vertices();
        let mut dof_coords = mesh.vertices().to_vec();
        let mut boundary = mesh.boundary_vertex().to_vec();
        if degree == 2 {
            for e in mesh.edges() {
                let (a, b) = (mesh.vertices()[e.vertices[0]], mesh.vertices()[e.vertices[1]]);
                dof_coords.push([0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]);
                boundary.push(e.on_boundary);
            }
        }
        let element_dofs = mesh
            .elements()
            .iter()
            .zip(mesh.element_edges())
            .map(|(el, ee)| {
                let mut d = [0; MAX_LOCAL];
                d[..3].copy_from_slice(el);
                if degree == 2 {
                    for j in 0..3 {
                        d[3 + j] = nv + ee[j];
                    }
                }
                d
            })
            .collect();
        let mut free_index = vec![NOT_FREE; dof_coords.len()];
        let mut free_dofs = Vec::new();
        for (i, &b) in boundary.iter().enumerate() {
            if !b {
                free_index[i] = free_dofs.len();
                free_dofs.push(i);
            }
        }
        Ok(Arc::new(FiniteElementSpace { mesh, degree, dof_coords, boundary, element_dofs, free_index, free_dofs }))
    }

    pub fn mesh(&self) -> &Arc<Triangulation> {
        &self.mesh
    }
    pub fn degree(&self) -> usize {
        self.degree
    }
    pub fn n_local(&self) -> usize {
        n_local(self.degree)
    }
    pub fn n_dofs(&self) -> usize {
        self.dof_coords.len()
    }
    pub fn n_free(&self) -> usize {
        self.free_dofs.len()
    }
    pub fn dof_coords(&self) -> &[Point] {
        &self.dof_coords
    }
    pub fn boundary_mask(&self) -> &[bool] {
        &self.boundary
    }
    pub fn free_index(&self) -> &[usize] {
        &self.free_index
    }
    pub fn free_dofs(&self) -> &[usize] {
        &self.free_dofs
    }
    pub fn element_dofs(&self, k: usize) -> &[usize] {
        &self.element_dofs[k][..self.n_local()]
    }
    pub fn geometry(&self, k: usize) -> Geometry {
        Geometry::new(self.mesh.element_vertices(k))
    }

    /// Same mesh and degree.
    pub fn same_as(&self, other: &FiniteElementSpace) -> bool {
        std::ptr::eq(self, other) || (self.degree == other.degree && *self.mesh == *other.mesh)
    }

    pub fn restrict(&self, all: &[f64]) -> Vec<f64> {
        self.free_dofs.iter().map(|&i| all[i]).collect()
    }

    pub fn extend(&self, free: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_dofs()];
        for (&i, &v) in self.free_dofs.iter().zip(free) {
            out[i] = v;
        }
        out
    }

    /// Nodal interpolant of `g`; boundary values are set to zero.
    pub fn interpolate(self: &Arc<Self>, g: impl Fn(Point) -> f64) -> FeFunction {
        let coeffs = self
            .dof_coords
            .iter()
            .zip(&self.boundary)
            .map(|(&x, &b)| if b { 0.0 } else { g(x) })
            .collect();
        FeFunction { space: self.clone(), coeffs }
    }
}

#[derive(Clone, Debug)]
pub struct FeFunction {
    pub space: Arc<FiniteElementSpace>,
    pub coeffs: Vec<f64>,
}

impl FeFunction {
    pub fn zeros(space: &Arc<FiniteElementSpace>) -> Self {
        FeFunction { space: space.clone(), coeffs: vec![0.0; space.n_dofs()] }
    }

    pub fn from_free(space: &Arc<FiniteElementSpace>, free: &[f64]) -> Self {
        FeFunction { space: space.clone(), coeffs: space.extend(free) }
    }

    pub fn local(&self, k: usize) -> [f64; MAX_LOCAL] {
        let mut c = [0.0; MAX_LOCAL];
        for (slot, &d) in c.iter_mut().zip(self.space.element_dofs(k)) {
            *slot = self.coeffs[d];
        }
        c
    }

    pub fn value_in(&self, k: usize, l: [f64; 3]) -> f64 {
        let phi = basis_values(self.space.degree, l);
        let c = self.local(k);
        (0..self.space.n_local()).map(|i| c[i] * phi[i]).sum()
    }

    pub fn gradient_in(&self, k: usize, geom: &Geometry, l: [f64; 3]) -> [f64; 2] {
        let g = basis_gradients(self.space.degree, l, &geom.grad_lambda);
        let c = self.local(k);
        let mut out = [0.0; 2];
        for i in 0..self.space.n_local() {
            out[0] += c[i] * g[i][0];
            out[1] += c[i] * g[i][1];
        }
        out
    }

    /// Point value, locating the containing element through the forest.
    pub fn evaluate(&self, x: Point) -> Result<f64> {
        let k = self.space.mesh.locate(x).ok_or(Error::PointOutsideDomain(x[0], x[1]))?;
        Ok(self.value_in(k, self.space.geometry(k).barycentric(x)))
    }

    /// Gradient at `x`; on element interfaces the value from one side.
    pub fn gradient(&self, x: Point) -> Result<[f64; 2]> {
        let k = self.space.mesh.locate(x).ok_or(Error::PointOutsideDomain(x[0], x[1]))?;
        let geom = self.space.geometry(k);
        Ok(self.gradient_in(k, &geom, geom.barycentric(x)))
    }

    /// Exact representation in a space on a refined mesh of at least the
    /// same degree.
    pub fn transfer(&self, target: &Arc<FiniteElementSpace>) -> Result<FeFunction> {
        let src = &self.space;
        if target.degree < src.degree || !target.mesh.is_refinement_of(&src.mesh) {
            return Err(Error::NonNestedTransfer);
        }
        let mut coeffs = vec![0.0; target.n_dofs()];
        let nodes = lagrange_nodes(target.degree);
        for k in 0..target.mesh.n_elements() {
            let s = src.mesh.ancestor_element(&target.mesh, k).expect("checked nesting");
            let (tg, sg) = (target.geometry(k), src.geometry(s));
            for (i, &d) in target.element_dofs(k).iter().enumerate() {
                if !target.boundary[d] {
                    coeffs[d] = self.value_in(s, sg.barycentric(tg.map(nodes[i])));
                }
            }
        }
        Ok(FeFunction { space: target.clone(), coeffs })
    }

    pub fn axpy(&mut self, a: f64, other: &FeFunction) {
        for (x, y) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *x += a * y;
        }
    }

    /// Text form: `fe <degree> <ndofs>` followed by one coefficient per line.
    pub fn dump(&self) -> String {
        let mut s = format!("fe {} {}\n", self.space.degree, self.coeffs.len());
        for c in &self.coeffs {
            writeln!(s, "{c:?}").unwrap();
        }
        s
    }

    pub fn load(text: &str, space: &Arc<FiniteElementSpace>) -> Result<FeFunction> {
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().unwrap_or("").split_whitespace().collect();
        if header.len() != 3 || header[0] != "fe" {
            return Err(Error::Parse("expected header `fe <degree> <ndofs>`".into()));
        }
        if header[1] != space.degree.to_string() || header[2] != space.n_dofs().to_string() {
            return Err(Error::Parse("function does not match the target space".into()));
        }
        let coeffs = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.trim().parse::<f64>().map_err(|_| Error::Parse(format!("bad coefficient `{l}`"))))
            .collect::<Result<Vec<_>>>()?;
        if coeffs.len() != space.n_dofs() {
            return Err(Error::Parse("wrong number of coefficients".into()));
        }
        Ok(FeFunction { space: space.clone(), coeffs })
    }
}

/// Discontinuous piecewise polynomial given by Lagrange nodal values on each
/// element.
#[derive(Clone, Debug, PartialEq)]
pub struct ElementField {
    pub degree: usize,
    pub values: Vec<f64>,
}

impl ElementField {
    pub fn nloc(&self) -> usize {
        n_local(self.degree)
    }

    pub fn local(&self, k: usize) -> &[f64] {
        let n = self.nloc();
        &self.values[k * n..(k + 1) * n]
    }

    pub fn value_in(&self, k: usize, l: [f64; 3]) -> f64 {
        let phi = basis_values(self.degree, l);
        self.local(k).iter().zip(&phi).map(|(c, p)| c * p).sum()
    }

    /// `(self - other) * s`, elementwise.
    pub fn scaled_difference(&self, other: &ElementField, s: f64) -> ElementField {
        ElementField {
            degree: self.degree,
            values: self.values.iter().zip(&other.values).map(|(a, b)| (a - b) * s).collect(),
        }
    }
}

/// Piecewise linear field on mesh edges, given by values at the two edge
/// vertices in the order of [`crate::mesh::MeshEdge::vertices`].
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeField {
    pub values: Vec<[f64; 2]>,
}

impl EdgeField {
    /// Value at parameter `s` running from the first to the second vertex.
    pub fn value_at(&self, e: usize, s: f64) -> f64 {
        let [a, b] = self.values[e];
        (1.0 - s) * a + s * b
    }

    pub fn scaled_difference(&self, other: &EdgeField, s: f64) -> EdgeField {
        EdgeField {
            values: self.values.iter().zip(&other.values).map(|(a, b)| [(a[0] - b[0]) * s, (a[1] - b[1]) * s]).collect(),
        }
    }
}
