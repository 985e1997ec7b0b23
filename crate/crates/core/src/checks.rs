//! Randomised consistency checks run by the `check` subcommand.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::assembly::{stiffness_matrix, CoefficientMatrix};
use crate::error::Result;
use crate::evolution::{Discretization, FnForcing, InitialOperator, Options};
use crate::fespace::{FeFunction, FiniteElementSpace};
use crate::mesh::{barycentric, Rectangle, Triangulation};
use crate::quadrature::{segment_rule, triangle_rule};

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// `rounds` rounds of bisecting a random subset of elements.
pub fn random_refinement(rng: &mut impl Rng, base: &Triangulation, rounds: usize) -> Triangulation {
    let mut m = base.clone();
    for _ in 0..rounds {
        let p: f64 = rng.random_range(0.05..0.4);
        let marked: Vec<usize> = (0..m.n_elements()).filter(|_| rng.random::<f64>() < p).collect();
        m = m.bisect_marked(&marked).expect("indices in range");
    }
    m
}

pub fn random_coefficient(rng: &mut impl Rng) -> CoefficientMatrix {
    let (a, c) = (rng.random_range(0.5..2.0), rng.random_range(0.5..2.0));
    let b = rng.random_range(-0.4..0.4) * f64::sqrt(a * c);
    CoefficientMatrix::new([[a, b], [b, c]]).expect("positive definite")
}

pub fn base_mesh() -> Triangulation {
    Triangulation::build_macro(Rectangle::square(-1.0, 1.0), 2).expect("valid macro")
}

/// Lattice laws of common coarsening and refinement, conformity, the
/// pointwise meshsize of both (`max` and `min`), nesting of element pairs and
/// the dump/load round trip, for two meshes of one forest.
pub fn mesh_pair_properties(a: &Triangulation, b: &Triangulation, rng: &mut impl Rng) -> std::result::Result<(), String> {
    let err = |e: crate::Error| e.to_string();
    let fcc = a.finest_common_coarsening(b).map_err(err)?;
    let ccr = a.coarsest_common_refinement(b).map_err(err)?;
    for (name, m) in [("a", a), ("b", b), ("fcc", &fcc), ("ccr", &ccr)] {
        m.check_conformity().map_err(|e| format!("{name}: {e}"))?;
    }
    if !(a.is_refinement_of(&fcc) && b.is_refinement_of(&fcc)) {
        return Err("fcc is not coarser than both meshes".into());
    }
    if !(ccr.is_refinement_of(a) && ccr.is_refinement_of(b)) {
        return Err("ccr is not finer than both meshes".into());
    }
    if b.finest_common_coarsening(a).map_err(err)? != fcc || b.coarsest_common_refinement(a).map_err(err)? != ccr {
        return Err("fcc or ccr is not symmetric".into());
    }
    if ccr.finest_common_coarsening(a).map_err(err)? != *a || fcc.coarsest_common_refinement(a).map_err(err)? != *a {
        return Err("absorption fails".into());
    }
    if a.finest_common_coarsening(a).map_err(err)? != *a || a.coarsest_common_refinement(a).map_err(err)? != *a {
        return Err("idempotence fails".into());
    }
    for _ in 0..20 {
        let x = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let h = |m: &Triangulation| m.locate(x).map(|k| m.diameters()[k]).ok_or_else(|| format!("{x:?} not located"));
        let (ha, hb) = (h(a)?, h(b)?);
        if h(&fcc)? != ha.max(hb) || h(&ccr)? != ha.min(hb) {
            return Err(format!("meshsize at {x:?}: fcc or ccr is not the max or min"));
        }
    }
    let d = a.forest().read();
    for _ in 0..50 {
        let (ka, kb) = (rng.random_range(0..a.n_elements()), rng.random_range(0..b.n_elements()));
        let (ia, ib) = (a.leaves()[ka], b.leaves()[kb]);
        let nested = ia == ib || d.ancestors(ia).any(|x| x == ib) || d.ancestors(ib).any(|x| x == ia);
        if !nested {
            let va = a.element_vertices(ka);
            let c = [(va[0][0] + va[1][0] + va[2][0]) / 3.0, (va[0][1] + va[1][1] + va[2][1]) / 3.0];
            if barycentric(&b.element_vertices(kb), c).iter().all(|&l| l > 1e-12) {
                return Err("two elements overlap without being nested".into());
            }
        }
    }
    drop(d);
    let back = Triangulation::load_into(&ccr.dump(), ccr.forest()).map_err(err)?;
    if back != ccr {
        return Err("dump/load round trip changed the mesh".into());
    }
    Ok(())
}

/// Two random refinements of one macro mesh.
pub fn random_pair(rng: &mut impl Rng) -> (Triangulation, Triangulation) {
    let base = base_mesh();
    let a = random_refinement(rng, &base, 3);
    let b = random_refinement(rng, &base, 3);
    (a, b)
}

/// `|a(v, phi) - (-div(A grad v), phi) - (J(v), phi)_edges| / |a(v, phi)|`.
pub fn representation_defect_on(a: CoefficientMatrix, v: &FeFunction, phi: &FeFunction) -> Result<f64> {
    let space = &v.space;
    let mesh = space.mesh();
    let degree = space.degree();
    let disc = Discretization::new(a, Arc::new(FnForcing(|_, _| 0.0)), Options::default());
    let k = stiffness_matrix(space, &a);
    let vf = space.restrict(&v.coeffs);
    let pf = space.restrict(&phi.coeffs);
    let lhs: f64 = k.matvec(&vf).iter().zip(&pf).map(|(x, y)| x * y).sum();
    let strong = disc.element_residual(v, &FeFunction::zeros(space));
    let jump = disc.jump_residual(v);
    let rule = triangle_rule(2 * degree)?;
    let mut rhs = 0.0;
    for el in 0..mesh.n_elements() {
        let g = space.geometry(el);
        for (l, w) in rule.barycentric().iter().zip(&rule.weights) {
            rhs += 2.0 * w * g.area * strong.value_in(el, *l) * phi.value_in(el, *l);
        }
    }
    let seg = segment_rule(degree + 1)?;
    for &e in mesh.interior_edges() {
        let edge = &mesh.edges()[e];
        let el = edge.elements[0].expect("interior edge");
        let g = space.geometry(el);
        let (pa, pb) = (mesh.vertices()[edge.vertices[0]], mesh.vertices()[edge.vertices[1]]);
        let len = mesh.edge_length(e);
        for (s, w) in seg.points.iter().zip(&seg.weights) {
            let x = [pa[0] + s * (pb[0] - pa[0]), pa[1] + s * (pb[1] - pa[1])];
            rhs += w * len * jump.value_at(e, *s) * phi.value_in(el, g.barycentric(x));
        }
    }
    Ok((lhs - rhs).abs() / lhs.abs().max(1e-300))
}

/// Random function vanishing on the boundary.
pub fn random_function(rng: &mut impl Rng, space: &Arc<FiniteElementSpace>) -> FeFunction {
    let c: Vec<f64> = (0..space.n_free()).map(|_| rng.random_range(-1.0..1.0)).collect();
    FeFunction::from_free(space, &c)
}

/// Representation defect for random `v`, `phi`, `A` on a random mesh.
pub fn representation_defect(rng: &mut impl Rng, degree: usize) -> Result<f64> {
    let mesh = Arc::new(random_refinement(rng, &base_mesh(), 2));
    let space = FiniteElementSpace::new(mesh, degree)?;
    let a = random_coefficient(rng);
    let v = random_function(rng, &space);
    let phi = random_function(rng, &space);
    representation_defect_on(a, &v, &phi)
}

/// One backward Euler step between random meshes: returns the relative
/// defect of the pointwise form and the relative gap between the stored
/// `A^n U^n` and an independent solve.
pub fn pointwise_form_defect(rng: &mut impl Rng, degree: usize) -> Result<(f64, f64)> {
    let base = base_mesh();
    let prev_mesh = Arc::new(random_refinement(rng, &base, 2));
    let cur_mesh = Arc::new(Triangulation::from_leaves(
        prev_mesh.forest().clone(),
        random_refinement(rng, &base, 2).leaves().to_vec(),
    ));
    let a = random_coefficient(rng);
    let forcing = FnForcing(|x: [f64; 2], t: f64| (1.0 + t) * (2.0 * x[0]).sin() * (x[1] + 0.3).cos());
    let disc = Discretization::new(a, Arc::new(forcing), Options::default());
    let prev_space = FiniteElementSpace::new(prev_mesh, degree)?;
    let cur_space = FiniteElementSpace::new(cur_mesh, degree)?;
    let s0 = disc.initial_state(&prev_space, |x| (1.0 - x[0] * x[0]) * (1.0 - x[1] * x[1]), InitialOperator::Interpolation, 0.0)?;
    let tau = rng.random_range(0.01..0.2);
    let s1 = disc.step(&s0, &cur_space, tau)?;
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let fb = cur_space.restrict(&s1.f_bar.coeffs);
    let au = cur_space.restrict(&s1.a_u.coeffs);
    let db = cur_space.restrict(&s1.dbar_u.coeffs);
    let defect: Vec<f64> = (0..fb.len()).map(|i| db[i] + au[i] - fb[i]).collect();
    let indep = cur_space.restrict(&disc.discrete_elliptic(&s1.u, &cur_space)?.coeffs);
    let gap: Vec<f64> = indep.iter().zip(&au).map(|(x, y)| x - y).collect();
    Ok((norm(&defect) / (norm(&au) + norm(&fb)), norm(&gap) / norm(&au)))
}

pub fn run_all(cases: usize, seed: u64) -> Vec<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut failures = Vec::new();
    for i in 0..cases {
        let (a, b) = random_pair(&mut rng);
        if let Err(e) = mesh_pair_properties(&a, &b, &mut rng) {
            failures.push(format!("case {i}: {e}"));
        }
    }
    out.push(CheckResult {
        name: "mesh algebra".into(),
        passed: failures.is_empty(),
        detail: if failures.is_empty() { format!("{cases} cases") } else { failures.join("; ") },
    });
    for degree in [1, 2] {
        let worst = (0..cases).map(|_| representation_defect(&mut rng, degree)).collect::<Result<Vec<_>>>();
        out.push(match worst {
            Ok(v) => {
                let m = v.iter().cloned().fold(0.0, f64::max);
                CheckResult { name: format!("representation identity P{degree}"), passed: m < 1e-10, detail: format!("max relative defect {m:.2e}") }
            }
            Err(e) => CheckResult { name: format!("representation identity P{degree}"), passed: false, detail: e.to_string() },
        });
        let worst = (0..cases).map(|_| pointwise_form_defect(&mut rng, degree)).collect::<Result<Vec<_>>>();
        out.push(match worst {
            Ok(v) => {
                let d = v.iter().map(|p| p.0).fold(0.0, f64::max);
                let g = v.iter().map(|p| p.1).fold(0.0, f64::max);
                CheckResult {
                    name: format!("pointwise form P{degree}"),
                    passed: d < 1e-10 && g < 1e-8,
                    detail: format!("max defect {d:.2e}, max operator gap {g:.2e}"),
                }
            }
            Err(e) => CheckResult { name: format!("pointwise form P{degree}"), passed: false, detail: e.to_string() },
        });
    }
    out
}
