//! Mass and stiffness matrices, load vectors and sparse SPD solves.
//!
//! System matrices act on the free (interior) degrees of freedom only; the
//! `*_all` variants keep every dof and are used for diagnostics.

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::Llt;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, Side};

use crate::error::{Error, Result};
use crate::fespace::{basis_gradients, FiniteElementSpace, Geometry, Tabulation, MAX_LOCAL, NOT_FREE};
use crate::mesh::Point;
use crate::quadrature::triangle_rule;

/// Constant symmetric positive definite diffusion matrix with its extreme
/// eigenvalues `alpha <= beta`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoefficientMatrix {
    pub a: [[f64; 2]; 2],
    pub alpha: f64,
    pub beta: f64,
}

impl CoefficientMatrix {
    pub fn new(a: [[f64; 2]; 2]) -> Result<Self> {
        if (a[0][1] - a[1][0]).abs() > 1e-14 * (a[0][1].abs() + 1.0) {
            return Err(Error::InvalidArgument("diffusion matrix must be symmetric".into()));
        }
        let tr = a[0][0] + a[1][1];
        let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
        let disc = (0.25 * tr * tr - det).max(0.0).sqrt();
        let (alpha, beta) = (0.5 * tr - disc, 0.5 * tr + disc);
        if alpha <= 0.0 {
            return Err(Error::InvalidArgument("diffusion matrix must be positive definite".into()));
        }
        Ok(CoefficientMatrix { a, alpha, beta })
    }

    pub fn identity() -> Self {
        CoefficientMatrix { a: [[1.0, 0.0], [0.0, 1.0]], alpha: 1.0, beta: 1.0 }
    }

    pub fn apply(&self, g: [f64; 2]) -> [f64; 2] {
        [self.a[0][0] * g[0] + self.a[0][1] * g[1], self.a[1][0] * g[0] + self.a[1][1] * g[1]]
    }

    /// `A : H` for a symmetric matrix `H`.
    pub fn contract(&self, h: &[[f64; 2]; 2]) -> f64 {
        self.a[0][0] * h[0][0] + self.a[0][1] * h[0][1] + self.a[1][0] * h[1][0] + self.a[1][1] * h[1][1]
    }
}

/// Symmetric matrix in compressed row form with both triangles stored.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseSymmetricMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseSymmetricMatrix {
    /// Sums duplicate entries.
    pub fn from_triplets(n: usize, mut t: Vec<(usize, usize, f64)>) -> Self {
        t.sort_unstable_by_key(|&(i, j, _)| (i, j));
        let mut row_ptr = vec![0; n + 1];
        let mut cols = Vec::with_capacity(t.len() / 4);
        let mut vals: Vec<f64> = Vec::with_capacity(t.len() / 4);
        let mut last = None;
        for (i, j, v) in t {
            if last == Some((i, j)) {
                *vals.last_mut().expect("entry exists") += v;
            } else {
                cols.push(j);
                vals.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        SparseSymmetricMatrix { n, row_ptr, cols, vals }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.cols[r.clone()].binary_search(&j) {
            Ok(p) => self.vals[r.start + p],
            Err(_) => 0.0,
        }
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).map(|(j, v)| v * x[j]).sum()).collect()
    }

    pub fn quad_form(&self, x: &[f64]) -> f64 {
        (0..self.n).map(|i| x[i] * self.row(i).map(|(j, v)| v * x[j]).sum::<f64>()).sum()
    }

    /// `self + s * other` for matrices with the same pattern.
    pub fn add_scaled(&self, s: f64, other: &SparseSymmetricMatrix) -> Result<Self> {
        if self.row_ptr != other.row_ptr || self.cols != other.cols {
            return Err(Error::InvalidArgument("matrix patterns differ".into()));
        }
        let vals = self.vals.iter().zip(&other.vals).map(|(a, b)| a + s * b).collect();
        Ok(SparseSymmetricMatrix { n: self.n, row_ptr: self.row_ptr.clone(), cols: self.cols.clone(), vals })
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for (i, row) in d.iter_mut().enumerate() {
            for (j, v) in self.row(i) {
                row[j] = v;
            }
        }
        d
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.n).all(|i| self.row(i).all(|(j, v)| (v - self.get(j, i)).abs() <= tol * v.abs().max(1.0)))
    }
}

/// Sparse Cholesky factorisation.
pub struct SpdFactor {
    n: usize,
    llt: Llt<usize, f64>,
}

impl std::fmt::Debug for SpdFactor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "SpdFactor(n = {})", self.n)
    }
}

impl SpdFactor {
    pub fn new(m: &SparseSymmetricMatrix) -> Result<Self> {
        let mut t = Vec::with_capacity(m.nnz() / 2 + m.n);
        for i in 0..m.n {
            for (j, v) in m.row(i) {
                if j <= i {
                    t.push(Triplet::new(i, j, v));
                }
            }
        }
        let a = SparseColMat::<usize, f64>::try_new_from_triplets(m.n, m.n, &t)
            .map_err(|e| Error::Solver(format!("{e:?}")))?;
        let llt = a.sp_cholesky(Side::Lower).map_err(|e| Error::Solver(format!("{e:?}")))?;
        Ok(SpdFactor { n: m.n, llt })
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        assert_eq!(rhs.len(), self.n, "right-hand side length");
        if self.n == 0 {
            return Vec::new();
        }
        let mut b = Mat::<f64>::from_fn(self.n, 1, |i, _| rhs[i]);
        self.llt.solve_in_place(b.as_mut());
        (0..self.n).map(|i| b[(i, 0)]).collect()
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Solves `m x = rhs` and checks the relative residual.
pub fn solve_spd(m: &SparseSymmetricMatrix, rhs: &[f64], tol: f64) -> Result<Vec<f64>> {
    let f = SpdFactor::new(m)?;
    let mut x = f.solve(rhs);
    let scale = norm(rhs).max(f64::MIN_POSITIVE);
    for _ in 0..3 {
        let r: Vec<f64> = rhs.iter().zip(m.matvec(&x)).map(|(b, ax)| b - ax).collect();
        if norm(&r) <= tol * scale {
            return Ok(x);
        }
        let d = f.solve(&r);
        for (xi, di) in x.iter_mut().zip(d) {
            *xi += di;
        }
    }
    let r: Vec<f64> = rhs.iter().zip(m.matvec(&x)).map(|(b, ax)| b - ax).collect();
    if norm(&r) <= tol * scale {
        Ok(x)
    } else {
        Err(Error::Solver(format!("relative residual {} above tolerance {tol}", norm(&r) / scale)))
    }
}

pub type LocalMatrix = [[f64; MAX_LOCAL]; MAX_LOCAL];

pub fn local_mass(space: &FiniteElementSpace, geom: &Geometry, reference: &LocalMatrix) -> LocalMatrix {
    let n = space.n_local();
    let mut m = [[0.0; MAX_LOCAL]; MAX_LOCAL];
    for i in 0..n {
        for j in 0..n {
            m[i][j] = geom.area * reference[i][j];
        }
    }
    m
}

pub fn local_stiffness(space: &FiniteElementSpace, geom: &Geometry, a: &CoefficientMatrix, tab: &Tabulation) -> LocalMatrix {
    let n = space.n_local();
    let mut m = [[0.0; MAX_LOCAL]; MAX_LOCAL];
    for (l, w) in tab.bary.iter().zip(&tab.weights) {
        let g = basis_gradients(space.degree(), *l, &geom.grad_lambda);
        for i in 0..n {
            let ag = a.apply(g[i]);
            for j in 0..n {
                m[i][j] += w * geom.area * (ag[0] * g[j][0] + ag[1] * g[j][1]);
            }
        }
    }
    m
}

/// Assembles a symmetric bilinear form element by element.
pub fn assemble(
    space: &FiniteElementSpace,
    free_only: bool,
    local: impl Fn(usize, &Geometry) -> LocalMatrix,
) -> SparseSymmetricMatrix {
    let n = space.n_local();
    let fi = space.free_index();
    let mut t = Vec::with_capacity(space.mesh().n_elements() * n * n);
    for k in 0..space.mesh().n_elements() {
        let geom = space.geometry(k);
        let lm = local(k, &geom);
        let dofs = space.element_dofs(k);
        for i in 0..n {
            for j in 0..n {
                let (r, c) = if free_only { (fi[dofs[i]], fi[dofs[j]]) } else { (dofs[i], dofs[j]) };
                if r != NOT_FREE && c != NOT_FREE {
                    t.push((r, c, lm[i][j]));
                }
            }
        }
    }
    let size = if free_only { space.n_free() } else { space.n_dofs() };
    SparseSymmetricMatrix::from_triplets(size, t)
}

pub fn mass_matrix(space: &FiniteElementSpace) -> SparseSymmetricMatrix {
    let r = crate::fespace::reference_mass(space.degree());
    assemble(space, true, |_, g| local_mass(space, g, &r))
}

pub fn mass_matrix_all(space: &FiniteElementSpace) -> SparseSymmetricMatrix {
    let r = crate::fespace::reference_mass(space.degree());
    assemble(space, false, |_, g| local_mass(space, g, &r))
}

fn stiffness_tab(space: &FiniteElementSpace) -> Tabulation {
    Tabulation::new(space.degree(), &triangle_rule(2 * space.degree() - 2).expect("low degree rule"))
}

pub fn stiffness_matrix(space: &FiniteElementSpace, a: &CoefficientMatrix) -> SparseSymmetricMatrix {
    let tab = stiffness_tab(space);
    assemble(space, true, |_, g| local_stiffness(space, g, a, &tab))
}

pub fn stiffness_matrix_all(space: &FiniteElementSpace, a: &CoefficientMatrix) -> SparseSymmetricMatrix {
    let tab = stiffness_tab(space);
    assemble(space, false, |_, g| local_stiffness(space, g, a, &tab))
}

/// `M + tau K` on the free dofs.
pub fn system_matrix(space: &FiniteElementSpace, a: &CoefficientMatrix, tau: f64) -> SparseSymmetricMatrix {
    let r = crate::fespace::reference_mass(space.degree());
    let tab = stiffness_tab(space);
    assemble(space, true, |_, g| {
        let mut m = local_mass(space, g, &r);
        let k = local_stiffness(space, g, a, &tab);
        for (mr, kr) in m.iter_mut().zip(&k) {
            for (x, y) in mr.iter_mut().zip(kr) {
                *x += tau * y;
            }
        }
        m
    })
}

/// `(g, phi_i)` for every dof, with a rule of the given exactness.
pub fn load_vector(space: &FiniteElementSpace, g: impl Fn(Point) -> f64, exactness: usize) -> Result<Vec<f64>> {
    let tab = Tabulation::new(space.degree(), &triangle_rule(exactness)?);
    let mut b = vec![0.0; space.n_dofs()];
    for k in 0..space.mesh().n_elements() {
        let geom = space.geometry(k);
        let dofs = space.element_dofs(k);
        for ((l, w), phi) in tab.bary.iter().zip(&tab.weights).zip(&tab.values) {
            let gw = g(geom.map(*l)) * w * geom.area;
            for (i, &d) in dofs.iter().enumerate() {
                b[d] += gw * phi[i];
            }
        }
    }
    Ok(b)
}
