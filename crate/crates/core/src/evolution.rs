//! Backward Euler time stepping on a sequence of meshes.
//!
//! Given `U^{n-1}` on the previous mesh, `U^n` solves
//! `(U^n - U^{n-1}, phi) / tau + a(U^n, phi) = (f^n, phi)` for every `phi` in
//! the current space. Besides `U^n` each step records the pointwise form of
//! the scheme: the projected source `P^n f^n`, the discrete time derivative
//! `(U^n - P^n U^{n-1}) / tau`, the discrete elliptic operator applied to the
//! solution `A^n U^n` and the element and jump residuals of the elliptic
//! reconstruction.

use std::fmt::Write as _;
use std::sync::{Arc, Mutex, OnceLock};

use crate::assembly::{self, CoefficientMatrix, SparseSymmetricMatrix, SpdFactor};
use crate::error::{Error, Result};
use crate::fespace::{
    basis_gradients, basis_hessians, basis_values, n_local, EdgeField, ElementField, FeFunction,
    FiniteElementSpace, Geometry,
};
use crate::mesh::{Forest, Overlay, Point, Triangulation};
use crate::quadrature::triangle_rule;

/// Source term `f(x, t)`, optionally in separated form
/// `f(x, t) = sum_k a_k(t) g_k(x)`.
pub trait Forcing: Send + Sync {
    fn value(&self, x: Point, t: f64) -> f64;

    /// Number of separated terms; zero when no separated form is known.
    fn separated_terms(&self) -> usize {
        0
    }

    fn time_factor(&self, _k: usize, _t: f64) -> f64 {
        0.0
    }

    fn space_factor(&self, _k: usize, _x: Point) -> f64 {
        0.0
    }
}

/// Wraps a closure as a non-separated source.
pub struct FnForcing<F>(pub F);

impl<F: Fn(Point, f64) -> f64 + Send + Sync> Forcing for FnForcing<F> {
    fn value(&self, x: Point, t: f64) -> f64 {
        (self.0)(x, t)
    }
}

/// `c * f`.
pub struct ScaledForcing {
    pub inner: Arc<dyn Forcing>,
    pub factor: f64,
}

impl Forcing for ScaledForcing {
    fn value(&self, x: Point, t: f64) -> f64 {
        self.factor * self.inner.value(x, t)
    }
    fn separated_terms(&self) -> usize {
        self.inner.separated_terms()
    }
    fn time_factor(&self, k: usize, t: f64) -> f64 {
        self.factor * self.inner.time_factor(k, t)
    }
    fn space_factor(&self, k: usize, x: Point) -> f64 {
        self.inner.space_factor(k, x)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitialOperator {
    Interpolation,
    L2Projection,
}

#[derive(Clone, Copy, Debug)]
pub struct Options {
    /// Exactness for load vectors; `None` means `2 * degree + 2`.
    pub load_exactness: Option<usize>,
    /// Exactness for norms of non-polynomial quantities.
    pub norm_exactness: usize,
    /// Skip same-mesh and separated-source shortcuts.
    pub force_general: bool,
}

impl Default for Options {
    fn default() -> Self {
        Options { load_exactness: None, norm_exactness: 8, force_general: false }
    }
}

/// Tables for a separated source on one space.
#[derive(Debug)]
pub struct SeparatedData {
    /// `(g_k, phi_i)` for all dofs.
    pub loads: Vec<Vec<f64>>,
    /// `P g_k` for all dofs.
    pub projections: Vec<Vec<f64>>,
    /// `(g_k, g_l)`.
    pub gram: Vec<Vec<f64>>,
    /// `(h^2 (P - Id) g_k, (P - Id) g_l)`.
    pub defect_gram: Vec<Vec<f64>>,
}

impl SeparatedData {
    pub fn quad(m: &[Vec<f64>], a: &[f64]) -> f64 {
        let mut s = 0.0;
        for (i, row) in m.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                s += a[i] * v * a[j];
            }
        }
        s.max(0.0)
    }
}

/// Matrices and factorisations attached to one space.
#[derive(Debug)]
pub struct SpaceData {
    pub space: Arc<FiniteElementSpace>,
    pub mass: SparseSymmetricMatrix,
    pub mass_factor: SpdFactor,
    pub stiffness: SparseSymmetricMatrix,
    systems: Mutex<Vec<(u64, Arc<SpdFactor>)>>,
    separated: OnceLock<Option<SeparatedData>>,
}

/// Problem data plus caches shared by the time stepper, the estimators and
/// the error computation.
pub struct Discretization {
    pub coefficient: CoefficientMatrix,
    pub forcing: Arc<dyn Forcing>,
    pub options: Options,
    spaces: Mutex<Vec<Arc<SpaceData>>>,
    overlays: Mutex<Vec<(Vec<Arc<Triangulation>>, Arc<Overlay>)>>,
}

const CACHE_SIZE: usize = 6;

/// Values at one time level.
#[derive(Clone, Debug)]
pub struct TimeSlabState {
    pub n: usize,
    pub t: f64,
    /// Length of the step that produced this state; zero at `n = 0`.
    pub tau: f64,
    pub u: FeFunction,
    /// `P^n f^n`.
    pub f_bar: FeFunction,
    /// `(U^n - P^n U^{n-1}) / tau`.
    pub dbar_u: FeFunction,
    /// `A^n U^n`.
    pub a_u: FeFunction,
    /// `P^n U^{n-1}`.
    pub proj_prev: Option<FeFunction>,
    /// `U^{n-1}`.
    pub prev_u: Option<FeFunction>,
    /// Whether `U^{n-1}` lives in the current space, so `P^n U^{n-1} = U^{n-1}`.
    pub prev_same_space: bool,
    /// `(div A grad) U^n`-residual `-div(A grad U^n) - A^n U^n` per element.
    pub residual: ElementField,
    /// Sum of outward fluxes of `A grad U^n` on interior edges.
    pub jump: EdgeField,
}

impl TimeSlabState {
    pub fn space(&self) -> &Arc<FiniteElementSpace> {
        &self.u.space
    }

    pub fn mesh(&self) -> &Arc<Triangulation> {
        self.u.space.mesh()
    }

    /// Text checkpoint: header, mesh dump, then the four level functions.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        let mesh = self.mesh().dump();
        writeln!(s, "state {} {:?} {:?} {}", self.n, self.t, self.tau, self.space().degree()).unwrap();
        writeln!(s, "mesh-lines {}", mesh.lines().count()).unwrap();
        s.push_str(&mesh);
        for f in [&self.u, &self.f_bar, &self.dbar_u, &self.a_u] {
            s.push_str(&f.dump());
        }
        s
    }

    /// Restores a checkpoint; residuals are recomputed. With `forest` the
    /// mesh is attached to an existing forest. The restored state has no
    /// record of the level before it.
    pub fn load(text: &str, disc: &Discretization, forest: Option<&Arc<Forest>>) -> Result<TimeSlabState> {
        let bad = |m: &str| Error::Parse(m.to_string());
        let lines: Vec<&str> = text.lines().collect();
        let head: Vec<&str> = lines.first().ok_or_else(|| bad("empty checkpoint"))?.split_whitespace().collect();
        if head.len() != 5 || head[0] != "state" {
            return Err(bad("expected `state <n> <t> <tau> <degree>`"));
        }
        let n = head[1].parse().map_err(|_| bad("bad step index"))?;
        let t = head[2].parse().map_err(|_| bad("bad time"))?;
        let tau = head[3].parse().map_err(|_| bad("bad step size"))?;
        let degree = head[4].parse().map_err(|_| bad("bad degree"))?;
        let ml: Vec<&str> = lines.get(1).ok_or_else(|| bad("missing mesh"))?.split_whitespace().collect();
        if ml.len() != 2 || ml[0] != "mesh-lines" {
            return Err(bad("expected `mesh-lines <count>`"));
        }
        let count: usize = ml[1].parse().map_err(|_| bad("bad line count"))?;
        if lines.len() < 2 + count {
            return Err(bad("truncated mesh"));
        }
        let mesh_text = lines[2..2 + count].join("\n");
        let mesh = match forest {
            Some(f) => Triangulation::load_into(&mesh_text, f)?,
            None => Triangulation::load(&mesh_text)?,
        };
        let space = FiniteElementSpace::new(Arc::new(mesh), degree)?;
        let rest = &lines[2 + count..];
        let block = space.n_dofs() + 1;
        if rest.len() < 4 * block {
            return Err(bad("truncated functions"));
        }
        let mut funcs = Vec::new();
        for i in 0..4 {
            funcs.push(FeFunction::load(&rest[i * block..(i + 1) * block].join("\n"), &space)?);
        }
        let a_u = funcs.pop().expect("four functions");
        let dbar_u = funcs.pop().expect("four functions");
        let f_bar = funcs.pop().expect("four functions");
        let u = funcs.pop().expect("four functions");
        let residual = disc.element_residual(&u, &a_u);
        let jump = disc.jump_residual(&u);
        Ok(TimeSlabState {
            n,
            t,
            tau,
            u,
            f_bar,
            dbar_u,
            a_u,
            proj_prev: None,
            prev_u: None,
            prev_same_space: true,
            residual,
            jump,
        })
    }
}

fn axpby(a: f64, x: &[f64], b: f64, y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(p, q)| a * p + b * q).collect()
}

/// Calls `f(k, parents, geometries, x, weight)` for every quadrature point of
/// every overlay element; `weight` includes the element area and
/// `geometries[j]` is the geometry of the containing element of mesh `j`.
pub fn for_each_overlay_point(
    ov: &Overlay,
    meshes: &[&Triangulation],
    exactness: usize,
    mut f: impl FnMut(usize, &[usize], &[Geometry], Point, f64),
) -> Result<()> {
    let rule = triangle_rule(exactness)?;
    let bary = rule.barycentric();
    let mut parents = vec![0; meshes.len()];
    let mut geoms = Vec::with_capacity(meshes.len());
    for k in 0..ov.fine.n_elements() {
        let g = Geometry::new(ov.fine.element_vertices(k));
        geoms.clear();
        for (j, m) in meshes.iter().enumerate() {
            parents[j] = ov.parents[j][k];
            geoms.push(Geometry::new(m.element_vertices(parents[j])));
        }
        for (l, w) in bary.iter().zip(&rule.weights) {
            f(k, &parents, &geoms, g.map(*l), 2.0 * w * g.area);
        }
    }
    Ok(())
}

impl Discretization {
    pub fn new(coefficient: CoefficientMatrix, forcing: Arc<dyn Forcing>, options: Options) -> Self {
        Discretization {
            coefficient,
            forcing,
            options,
            spaces: Mutex::new(Vec::new()),
            overlays: Mutex::new(Vec::new()),
        }
    }

    pub fn load_exactness(&self, degree: usize) -> usize {
        self.options.load_exactness.unwrap_or(2 * degree + 2)
    }

    /// Cached matrices for `space`.
    pub fn data(&self, space: &Arc<FiniteElementSpace>) -> Result<Arc<SpaceData>> {
        let mut cache = self.spaces.lock().expect("cache lock");
        if let Some(d) = cache.iter().find(|d| d.space.same_as(space)) {
            return Ok(d.clone());
        }
        let mass = assembly::mass_matrix(space);
        let mass_factor = SpdFactor::new(&mass)?;
        let stiffness = assembly::stiffness_matrix(space, &self.coefficient);
        let d = Arc::new(SpaceData {
            space: space.clone(),
            mass,
            mass_factor,
            stiffness,
            systems: Mutex::new(Vec::new()),
            separated: OnceLock::new(),
        });
        if cache.len() >= CACHE_SIZE {
            cache.remove(0);
        }
        cache.push(d.clone());
        Ok(d)
    }

    /// Factorisation of `M + tau K`.
    pub fn system(&self, data: &SpaceData, tau: f64) -> Result<Arc<SpdFactor>> {
        let mut s = data.systems.lock().expect("cache lock");
        if let Some((_, f)) = s.iter().find(|(b, _)| *b == tau.to_bits()) {
            return Ok(f.clone());
        }
        let m = data.mass.add_scaled(tau, &data.stiffness)?;
        let f = Arc::new(SpdFactor::new(&m)?);
        if s.len() >= 4 {
            s.remove(0);
        }
        s.push((tau.to_bits(), f.clone()));
        Ok(f)
    }

    /// Tables of the separated source on `data`'s space, if available.
    pub fn separated<'a>(&self, data: &'a SpaceData) -> Option<&'a SeparatedData> {
        if self.options.force_general {
            return None;
        }
        data.separated
            .get_or_init(|| {
                let nk = self.forcing.separated_terms();
                if nk == 0 {
                    return None;
                }
                self.build_separated(data, nk).ok()
            })
            .as_ref()
    }

    fn build_separated(&self, data: &SpaceData, nk: usize) -> Result<SeparatedData> {
        let space = &data.space;
        let ex = self.load_exactness(space.degree());
        let mut loads = Vec::with_capacity(nk);
        let mut projections = Vec::with_capacity(nk);
        for k in 0..nk {
            let b = assembly::load_vector(space, |x| self.forcing.space_factor(k, x), ex)?;
            let p = space.extend(&data.mass_factor.solve(&space.restrict(&b)));
            loads.push(b);
            projections.push(p);
        }
        let mut gram = vec![vec![0.0; nk]; nk];
        let mut defect_gram = vec![vec![0.0; nk]; nk];
        let rule = triangle_rule(self.options.norm_exactness)?;
        let bary = rule.barycentric();
        let phi: Vec<_> = bary.iter().map(|&l| basis_values(space.degree(), l)).collect();
        let mesh = space.mesh();
        let mut g = vec![0.0; nk];
        let mut d = vec![0.0; nk];
        for e in 0..mesh.n_elements() {
            let geom = space.geometry(e);
            let h2 = mesh.diameters()[e].powi(2);
            let dofs = space.element_dofs(e);
            for (q, (l, w)) in bary.iter().zip(&rule.weights).enumerate() {
                let x = geom.map(*l);
                let wa = 2.0 * w * geom.area;
                for k in 0..nk {
                    g[k] = self.forcing.space_factor(k, x);
                    let pv: f64 = dofs.iter().enumerate().map(|(i, &dof)| projections[k][dof] * phi[q][i]).sum();
                    d[k] = pv - g[k];
                }
                for k in 0..nk {
                    for l2 in 0..nk {
                        gram[k][l2] += wa * g[k] * g[l2];
                        defect_gram[k][l2] += wa * h2 * d[k] * d[l2];
                    }
                }
            }
        }
        Ok(SeparatedData { loads, projections, gram, defect_gram })
    }

    /// Overlay (coarsest common refinement with parent maps) of `meshes`.
    pub fn overlay(&self, meshes: &[&Arc<Triangulation>]) -> Result<Arc<Overlay>> {
        let mut cache = self.overlays.lock().expect("cache lock");
        if let Some((_, o)) = cache
            .iter()
            .find(|(k, _)| k.len() == meshes.len() && k.iter().zip(meshes).all(|(a, b)| **a == ***b))
        {
            return Ok(o.clone());
        }
        let plain: Vec<&Triangulation> = meshes.iter().map(|m| m.as_ref()).collect();
        let o = Arc::new(Overlay::new(&plain)?);
        if cache.len() >= CACHE_SIZE {
            cache.remove(0);
        }
        cache.push((meshes.iter().map(|m| (*m).clone()).collect(), o.clone()));
        Ok(o)
    }

    /// `(f(t), phi_i)` for every dof.
    pub fn forcing_load(&self, data: &SpaceData, t: f64) -> Result<Vec<f64>> {
        if let Some(sep) = self.separated(data) {
            let mut b = vec![0.0; data.space.n_dofs()];
            for (k, l) in sep.loads.iter().enumerate() {
                let a = self.forcing.time_factor(k, t);
                b.iter_mut().zip(l).for_each(|(x, y)| *x += a * y);
            }
            return Ok(b);
        }
        let ex = self.load_exactness(data.space.degree());
        assembly::load_vector(&data.space, |x| self.forcing.value(x, t), ex)
    }

    /// `P f(t)`.
    pub fn project_forcing(&self, data: &SpaceData, t: f64) -> Result<FeFunction> {
        if let Some(sep) = self.separated(data) {
            let mut c = vec![0.0; data.space.n_dofs()];
            for (k, p) in sep.projections.iter().enumerate() {
                let a = self.forcing.time_factor(k, t);
                c.iter_mut().zip(p).for_each(|(x, y)| *x += a * y);
            }
            return Ok(FeFunction { space: data.space.clone(), coeffs: c });
        }
        let b = self.forcing_load(data, t)?;
        let s = &data.space;
        Ok(FeFunction::from_free(s, &data.mass_factor.solve(&s.restrict(&b))))
    }

    /// L2 projection of a function onto `space`.
    pub fn l2_project(&self, g: impl Fn(Point) -> f64, space: &Arc<FiniteElementSpace>) -> Result<FeFunction> {
        let data = self.data(space)?;
        let b = assembly::load_vector(space, g, self.load_exactness(space.degree()))?;
        Ok(FeFunction::from_free(space, &data.mass_factor.solve(&space.restrict(&b))))
    }

    /// `(v, phi_i)` for a finite element function on another (compatible) mesh.
    pub fn mixed_mass_load(&self, v: &FeFunction, target: &Arc<FiniteElementSpace>) -> Result<Vec<f64>> {
        let (tm, sm) = (target.mesh(), v.space.mesh());
        let ov = self.overlay(&[tm, sm])?;
        let mut b = vec![0.0; target.n_dofs()];
        let (td, sd) = (target.degree(), v.space.degree());
        for_each_overlay_point(&ov, &[tm, sm], td + sd, |_, par, geo, x, w| {
            let val = v.value_in(par[1], geo[1].barycentric(x));
            let phi = basis_values(td, geo[0].barycentric(x));
            for (i, &d) in target.element_dofs(par[0]).iter().enumerate() {
                b[d] += w * val * phi[i];
            }
        })?;
        Ok(b)
    }

    /// `a(v, phi_i)` for a finite element function on another mesh.
    pub fn mixed_stiffness_load(&self, v: &FeFunction, target: &Arc<FiniteElementSpace>) -> Result<Vec<f64>> {
        let (tm, sm) = (target.mesh(), v.space.mesh());
        let ov = self.overlay(&[tm, sm])?;
        let mut b = vec![0.0; target.n_dofs()];
        let (td, sd) = (target.degree(), v.space.degree());
        let a = self.coefficient;
        for_each_overlay_point(&ov, &[tm, sm], td + sd - 2, |_, par, geo, x, w| {
            let g = a.apply(v.gradient_in(par[1], &geo[1], geo[1].barycentric(x)));
            let gp = basis_gradients(td, geo[0].barycentric(x), &geo[0].grad_lambda);
            for (i, &d) in target.element_dofs(par[0]).iter().enumerate() {
                b[d] += w * (g[0] * gp[i][0] + g[1] * gp[i][1]);
            }
        })?;
        Ok(b)
    }

    /// L2 projection of a finite element function onto `target`.
    pub fn project_fe(&self, v: &FeFunction, target: &Arc<FiniteElementSpace>) -> Result<FeFunction> {
        let data = self.data(target)?;
        if v.space.same_as(target) {
            return Ok(FeFunction { space: target.clone(), coeffs: v.coeffs.clone() });
        }
        let b = self.mixed_mass_load(v, target)?;
        Ok(FeFunction::from_free(target, &data.mass_factor.solve(&target.restrict(&b))))
    }

    /// Discrete elliptic operator: `(A v, phi) = a(v, phi)` for all `phi` in `target`.
    pub fn discrete_elliptic(&self, v: &FeFunction, target: &Arc<FiniteElementSpace>) -> Result<FeFunction> {
        let data = self.data(target)?;
        let rhs = if v.space.same_as(target) {
            data.stiffness.matvec(&target.restrict(&v.coeffs))
        } else {
            target.restrict(&self.mixed_stiffness_load(v, target)?)
        };
        Ok(FeFunction::from_free(target, &data.mass_factor.solve(&rhs)))
    }

    /// Element residual `-div(A grad u) - a_u` as nodal values per element.
    pub fn element_residual(&self, u: &FeFunction, a_u: &FeFunction) -> ElementField {
        let space = &u.space;
        let deg = space.degree();
        let nl = n_local(deg);
        let mut values = Vec::with_capacity(space.mesh().n_elements() * nl);
        for k in 0..space.mesh().n_elements() {
            let strong = if deg == 1 {
                0.0
            } else {
                let h = basis_hessians(deg, &space.geometry(k).grad_lambda);
                let c = u.local(k);
                -(0..nl).map(|i| c[i] * self.coefficient.contract(&h[i])).sum::<f64>()
            };
            let au = a_u.local(k);
            values.extend((0..nl).map(|i| strong - au[i]));
        }
        ElementField { degree: deg, values }
    }

    /// Sum of outward normal fluxes of `A grad u` across interior edges,
    /// at the two edge vertices.
    pub fn jump_residual(&self, u: &FeFunction) -> EdgeField {
        let space = &u.space;
        let mesh = space.mesh();
        let mut values = vec![[0.0; 2]; mesh.edges().len()];
        for k in 0..mesh.n_elements() {
            let geom = space.geometry(k);
            let el = mesh.elements()[k];
            let corner = |i: usize| {
                let mut l = [0.0; 3];
                l[i] = 1.0;
                self.coefficient.apply(u.gradient_in(k, &geom, l))
            };
            let flux = if space.degree() == 1 {
                let g = corner(0);
                [g, g, g]
            } else {
                [corner(0), corner(1), corner(2)]
            };
            for &e in &mesh.element_edges()[k] {
                let edge = &mesh.edges()[e];
                if edge.on_boundary {
                    continue;
                }
                let local = edge.vertices.map(|v| (0..3).find(|&i| el[i] == v).expect("edge vertex in element"));
                let third = 3 - local[0] - local[1];
                let (pa, pb) = (geom.vertices[local[0]], geom.vertices[local[1]]);
                let len = (pb[0] - pa[0]).hypot(pb[1] - pa[1]);
                let mut nrm = [(pb[1] - pa[1]) / len, -(pb[0] - pa[0]) / len];
                let c = geom.vertices[third];
                if nrm[0] * (c[0] - pa[0]) + nrm[1] * (c[1] - pa[1]) > 0.0 {
                    nrm = [-nrm[0], -nrm[1]];
                }
                for (slot, &i) in local.iter().enumerate() {
                    values[e][slot] += flux[i][0] * nrm[0] + flux[i][1] * nrm[1];
                }
            }
        }
        EdgeField { values }
    }

    /// `U^0 = I^0 g` with its residuals.
    pub fn initial_state(
        &self,
        space: &Arc<FiniteElementSpace>,
        g: impl Fn(Point) -> f64,
        op: InitialOperator,
        t0: f64,
    ) -> Result<TimeSlabState> {
        let u = match op {
            InitialOperator::Interpolation => space.interpolate(g),
            InitialOperator::L2Projection => self.l2_project(g, space)?,
        };
        let data = self.data(space)?;
        let a_u = self.discrete_elliptic(&u, space)?;
        let f_bar = self.project_forcing(&data, t0)?;
        let residual = self.element_residual(&u, &a_u);
        let jump = self.jump_residual(&u);
        Ok(TimeSlabState {
            n: 0,
            t: t0,
            tau: 0.0,
            dbar_u: FeFunction::zeros(space),
            u,
            f_bar,
            a_u,
            proj_prev: None,
            prev_u: None,
            prev_same_space: true,
            residual,
            jump,
        })
    }

    /// One backward Euler step from `prev` to time `prev.t + tau` on `space`.
    pub fn step(&self, prev: &TimeSlabState, space: &Arc<FiniteElementSpace>, tau: f64) -> Result<TimeSlabState> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidArgument(format!("time step must be positive, got {tau}")));
        }
        let t = prev.t + tau;
        let data = self.data(space)?;
        let sys = self.system(&data, tau)?;
        let same = !self.options.force_general && prev.u.space.same_as(space);
        let mv = if same {
            data.mass.matvec(&space.restrict(&prev.u.coeffs))
        } else {
            space.restrict(&self.mixed_mass_load(&prev.u, space)?)
        };
        let fl = space.restrict(&self.forcing_load(&data, t)?);
        let u_free = sys.solve(&axpby(1.0, &mv, tau, &fl));
        let f_bar = self.project_forcing(&data, t)?;
        let proj_free = if same { space.restrict(&prev.u.coeffs) } else { data.mass_factor.solve(&mv) };
        let dbar_free = axpby(1.0 / tau, &u_free, -1.0 / tau, &proj_free);
        let u = FeFunction::from_free(space, &u_free);
        let dbar_u = FeFunction::from_free(space, &dbar_free);
        let a_u = FeFunction { space: space.clone(), coeffs: axpby(1.0, &f_bar.coeffs, -1.0, &dbar_u.coeffs) };
        let residual = self.element_residual(&u, &a_u);
        let jump = self.jump_residual(&u);
        Ok(TimeSlabState {
            n: prev.n + 1,
            t,
            tau,
            u,
            f_bar,
            dbar_u,
            a_u,
            proj_prev: Some(FeFunction::from_free(space, &proj_free)),
            prev_u: Some(prev.u.clone()),
            prev_same_space: prev.u.space.same_as(space),
            residual,
            jump,
        })
    }

    /// L2 norm of a finite element function.
    pub fn l2_norm(&self, v: &FeFunction) -> Result<f64> {
        let data = self.data(&v.space)?;
        if v.space.boundary_mask().iter().zip(&v.coeffs).all(|(&b, &c)| !b || c == 0.0) {
            return Ok(data.mass.quad_form(&v.space.restrict(&v.coeffs)).max(0.0).sqrt());
        }
        let r = crate::fespace::reference_mass(v.space.degree());
        let mut s = 0.0;
        for k in 0..v.space.mesh().n_elements() {
            let c = v.local(k);
            let area = v.space.mesh().areas()[k];
            for i in 0..v.space.n_local() {
                for j in 0..v.space.n_local() {
                    s += area * c[i] * r[i][j] * c[j];
                }
            }
        }
        Ok(s.max(0.0).sqrt())
    }

    /// `||a - b||` for finite element functions on possibly different meshes.
    pub fn l2_distance(&self, a: &FeFunction, b: &FeFunction) -> Result<f64> {
        if a.space.same_as(&b.space) {
            let d = FeFunction { space: a.space.clone(), coeffs: axpby(1.0, &a.coeffs, -1.0, &b.coeffs) };
            return self.l2_norm(&d);
        }
        let (ma, mb) = (a.space.mesh(), b.space.mesh());
        let ov = self.overlay(&[ma, mb])?;
        let mut s = 0.0;
        let ex = 2 * a.space.degree().max(b.space.degree());
        for_each_overlay_point(&ov, &[ma, mb], ex, |_, par, geo, x, w| {
            let d = a.value_in(par[0], geo[0].barycentric(x)) - b.value_in(par[1], geo[1].barycentric(x));
            s += w * d * d;
        })?;
        Ok(s.sqrt())
    }
}
