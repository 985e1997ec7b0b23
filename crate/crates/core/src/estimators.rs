//! A posteriori error estimators built on the elliptic reconstruction.
//!
//! Two families are provided: one for the `L_inf(L2)` and `L2(H1)` norms and
//! one for the `L_inf(H1)` and `H1(L2)` seminorms. Every quantity depends
//! only on two or three consecutive [`TimeSlabState`]s and the source, and is
//! folded into running totals by [`Accumulator`].
//!
//! Cross-mesh terms (time differences of residuals, of `A^n U^n` and of the
//! projection defects) are integrated on the coarsest common refinement of
//! the meshes involved. When consecutive meshes coincide the same numbers are
//! obtained from nodal values and precomputed Gram matrices.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::evolution::{for_each_overlay_point, Discretization, SeparatedData, TimeSlabState};
use crate::fespace::{reference_mass, EdgeField, ElementField, Geometry};
use crate::mesh::{Point, Triangulation};
use crate::quadrature::{segment_rule, triangle_rule};

/// Interpolation and trace constants `C_{k,j}`; every basic constant
/// defaults to one and composite indices are products of their prime factors.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConstantsTable {
    overrides: BTreeMap<(u32, u32), f64>,
    pub alpha: f64,
    pub beta: f64,
}

impl ConstantsTable {
    pub fn new(alpha: f64, beta: f64) -> Self {
        ConstantsTable { overrides: BTreeMap::new(), alpha, beta }
    }

    pub fn set(&mut self, k: u32, j: u32, value: f64) -> Result<()> {
        if k < 2 || !(value > 0.0 && value.is_finite()) {
            return Err(Error::InvalidArgument(format!("invalid constant C_{{{k},{j}}} = {value}")));
        }
        self.overrides.insert((k, j), value);
        Ok(())
    }

    pub fn get(&self, k: u32, j: u32) -> f64 {
        if let Some(&v) = self.overrides.get(&(k, j)) {
            return v;
        }
        match (2..k).find(|p| k % p == 0) {
            Some(p) => self.get(p, j) * self.get(k / p, j),
            None => 1.0,
        }
    }
}

/// Estimators attached to a single time level.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LevelEstimators {
    /// `C6,2 ||h^2 R|| + C10,2 ||h^{3/2} J||`.
    pub eta_rec_inf: f64,
    /// `C3,1/alpha ||h R|| + C5,1/alpha ||h^{1/2} J||`; also the
    /// reconstruction estimator of the higher order family.
    pub eta_rec_2: f64,
}

/// Estimators for the step from `n - 1` to `n`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct StepEstimators {
    pub n: usize,
    pub t: f64,
    pub tau: f64,
    pub level: LevelEstimators,
    /// Space estimator, shared by both families.
    pub eta_space: f64,
    /// Part of `eta_space` coming from edges present in one mesh only.
    pub eta_space_changed: f64,
    pub theta1: f64,
    pub theta2: f64,
    pub eta_f1: f64,
    pub eta_f2: f64,
    /// Also the higher order `gamma_inf`.
    pub gamma2: f64,
    /// Higher order data estimator, defined from the second step on.
    pub gamma1: Option<f64>,
    /// Largest difference of refinement levels between the two meshes.
    pub bisections: u16,
}

/// Running totals after step `m`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct BoundTotals {
    pub eta_rec_inf_max: f64,
    /// `(sum_{n=0}^m tau_n eta_rec_2,n^2)^{1/2}`.
    pub eta_rec_2_acc: f64,
    pub eta_space_acc: f64,
    pub theta1_acc: f64,
    pub etaf1_acc: f64,
    /// `(sum tau gamma2^2)^{1/2}`.
    pub gamma2_acc: f64,
    pub e1: f64,
    pub e2: f64,
    /// `L_inf(L2)` bound.
    pub total_linf_l2: f64,
    /// `L2(H1)` bound.
    pub total_l2_h1: f64,
    pub e1_high: f64,
    pub e2_high: f64,
    /// `H1(L2)` bound.
    pub high_total_h1l2: f64,
    /// `L_inf(H1)` bound.
    pub high_total_linfh1: f64,
}

impl BoundTotals {
    /// Denominator of the `L_inf(L2)` effectivity index.
    pub fn linf_l2_denominator(&self) -> f64 {
        self.eta_rec_inf_max + self.eta_space_acc + self.theta1_acc
    }

    /// Denominator of the `L2(H1)` effectivity index.
    pub fn l2_h1_denominator(&self) -> f64 {
        self.eta_rec_2_acc + self.eta_space_acc + self.theta1_acc
    }
}

/// Folds step estimators into the bounds of both families.
#[derive(Clone, Debug)]
pub struct Accumulator {
    init_l2: f64,
    init_a: f64,
    level0: LevelEstimators,
    prev_eta2: f64,
    first_tau: Option<f64>,
    max_inf: f64,
    max_high_inf: f64,
    sum_eta2_sq_tau_pos: f64,
    sum_eta2_pairs: f64,
    e1: f64,
    e2_sq: f64,
    space_acc: f64,
    theta1_acc: f64,
    etaf1_acc: f64,
    max_gamma_inf: f64,
    sum_gamma1: f64,
    e2_high_sq: f64,
    sum_space_sq: f64,
    pub totals: BoundTotals,
}

impl Accumulator {
    /// `init_l2 = ||U^0 - u(0)||`, `init_a = ||U^0 - u(0)||_a`.
    pub fn new(consts: &ConstantsTable, level0: LevelEstimators, init_l2: f64, init_a: f64) -> Self {
        let init_a = consts.beta.sqrt() * level0.eta_rec_2 + init_a;
        let init_l2 = level0.eta_rec_inf + init_l2;
        let mut acc = Accumulator {
            init_l2,
            init_a,
            level0,
            prev_eta2: level0.eta_rec_2,
            first_tau: None,
            max_inf: level0.eta_rec_inf,
            max_high_inf: level0.eta_rec_2,
            sum_eta2_sq_tau_pos: 0.0,
            sum_eta2_pairs: 0.0,
            e1: 0.0,
            e2_sq: 0.0,
            space_acc: 0.0,
            theta1_acc: 0.0,
            etaf1_acc: 0.0,
            max_gamma_inf: 0.0,
            sum_gamma1: 0.0,
            e2_high_sq: 0.0,
            sum_space_sq: 0.0,
            totals: BoundTotals::default(),
        };
        acc.refresh();
        acc
    }

    pub fn push(&mut self, s: &StepEstimators) -> BoundTotals {
        let tau = s.tau;
        self.first_tau.get_or_insert(tau);
        let l = s.level;
        self.max_inf = self.max_inf.max(l.eta_rec_inf);
        self.max_high_inf = self.max_high_inf.max(l.eta_rec_2);
        self.sum_eta2_sq_tau_pos += tau * l.eta_rec_2 * l.eta_rec_2;
        self.sum_eta2_pairs += tau * (l.eta_rec_2 * l.eta_rec_2 + self.prev_eta2 * self.prev_eta2);
        self.prev_eta2 = l.eta_rec_2;
        self.e1 += tau * (s.theta1 + s.eta_f1 + s.eta_space);
        self.e2_sq += tau * s.gamma2 * s.gamma2;
        self.space_acc += tau * s.eta_space;
        self.theta1_acc += tau * s.theta1;
        self.etaf1_acc += tau * s.eta_f1;
        self.max_gamma_inf = self.max_gamma_inf.max(s.gamma2);
        self.sum_gamma1 += tau * s.gamma1.unwrap_or(0.0);
        self.e2_high_sq += tau * (s.theta2 * s.theta2 + s.eta_f2 * s.eta_f2 + s.eta_space * s.eta_space);
        self.sum_space_sq += tau * s.eta_space * s.eta_space;
        self.refresh();
        self.totals
    }

    fn refresh(&mut self) {
        let tau0 = self.first_tau.unwrap_or(0.0);
        let e1 = self.e1;
        let e2 = self.e2_sq.sqrt();
        let e1h = 2.0 * self.max_gamma_inf + self.sum_gamma1;
        let e2h = self.e2_high_sq.sqrt();
        let main = 4.0 * e1.hypot(e2);
        let main_high = 4.0 * e1h.hypot(e2h);
        self.totals = BoundTotals {
            eta_rec_inf_max: self.max_inf,
            eta_rec_2_acc: (tau0 * self.level0.eta_rec_2.powi(2) + self.sum_eta2_sq_tau_pos).sqrt(),
            eta_space_acc: self.space_acc,
            theta1_acc: self.theta1_acc,
            etaf1_acc: self.etaf1_acc,
            gamma2_acc: e2,
            e1,
            e2,
            total_linf_l2: self.init_l2 + self.max_inf + main,
            total_l2_h1: self.init_l2 + self.sum_eta2_pairs.sqrt() + main,
            e1_high: e1h,
            e2_high: e2h,
            high_total_h1l2: self.init_a + main_high + self.sum_space_sq.sqrt(),
            high_total_linfh1: self.init_a + main_high + self.max_high_inf,
        };
    }
}

/// `w^{2p}`; integer powers avoid `powf` in the hot loops.
fn weight_power(w: f64, p: f64) -> f64 {
    let e = 2.0 * p;
    if e.fract() == 0.0 {
        w.powi(e as i32)
    } else {
        w.powf(e)
    }
}

/// `sum_K w_K^{2p} ||r||_K^2` for a discontinuous nodal field.
pub fn element_norm_sq(mesh: &Triangulation, field: &ElementField, weight: &[f64], p: f64) -> f64 {
    let r = reference_mass(field.degree);
    let nl = field.nloc();
    let mut s = 0.0;
    for k in 0..mesh.n_elements() {
        let c = field.local(k);
        let mut q = 0.0;
        for i in 0..nl {
            for j in 0..nl {
                q += c[i] * r[i][j] * c[j];
            }
        }
        s += weight_power(weight[k], p) * mesh.areas()[k] * q;
    }
    s.max(0.0)
}

/// `sum_E w_E^{2p} ||j||_E^2` over interior edges for a linear edge field.
pub fn edge_norm_sq(mesh: &Triangulation, field: &EdgeField, weight: &[f64], p: f64) -> f64 {
    mesh.interior_edges()
        .iter()
        .map(|&e| {
            let [a, b] = field.values[e];
            weight_power(weight[e], p) * mesh.edge_length(e) * (a * a + a * b + b * b) / 3.0
        })
        .sum()
}

/// `||w^p r||` with the local meshsize as weight, the norm used by all
/// residual estimators.
pub fn weighted_norm(mesh: &Triangulation, field: &ElementField, p: f64) -> f64 {
    element_norm_sq(mesh, field, mesh.diameters(), p).sqrt()
}

/// `||w^p j||_Sigma` with the edge meshsize as weight.
pub fn weighted_edge_norm(mesh: &Triangulation, field: &EdgeField, p: f64) -> f64 {
    edge_norm_sq(mesh, field, &mesh.meshsize().edge, p).sqrt()
}

/// Squared pieces of the space estimator.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SpaceTerms {
    pub element: f64,
    pub common_edges: f64,
    pub changed_edges: f64,
}

pub struct EstimatorEngine {
    pub disc: Arc<Discretization>,
    pub consts: ConstantsTable,
}

fn local_edge_of(geom: &Geometry, xa: Point, xb: Point) -> Option<usize> {
    let (la, lb) = (geom.barycentric(xa), geom.barycentric(xb));
    (0..3).find(|&j| {
        let third = (j + 2) % 3;
        la[third].abs() < 1e-9 && lb[third].abs() < 1e-9
    })
}

impl EstimatorEngine {
    pub fn new(disc: Arc<Discretization>, consts: ConstantsTable) -> Self {
        EstimatorEngine { disc, consts }
    }

    fn c(&self, k: u32, j: u32) -> f64 {
        self.consts.get(k, j)
    }

    pub fn level(&self, s: &TimeSlabState) -> LevelEstimators {
        let mesh = s.mesh();
        let hs = mesh.meshsize();
        let a = self.consts.alpha;
        let r2 = element_norm_sq(mesh, &s.residual, &hs.element, 2.0).sqrt();
        let r1 = element_norm_sq(mesh, &s.residual, &hs.element, 1.0).sqrt();
        let j32 = edge_norm_sq(mesh, &s.jump, &hs.edge, 1.5).sqrt();
        let j12 = edge_norm_sq(mesh, &s.jump, &hs.edge, 0.5).sqrt();
        LevelEstimators {
            eta_rec_inf: self.c(6, 2) * r2 + self.c(10, 2) * j32,
            eta_rec_2: self.c(3, 1) / a * r1 + self.c(5, 1) / a * j12,
        }
    }

    fn same_mesh(&self, a: &TimeSlabState, b: &TimeSlabState) -> bool {
        !self.disc.options.force_general && a.space().same_as(b.space())
    }

    /// Squared, `hat h`-weighted norms of the discrete time derivatives of
    /// the element and jump residuals.
    pub fn space_terms(&self, prev: &TimeSlabState, cur: &TimeSlabState) -> Result<(SpaceTerms, u16)> {
        let inv = 1.0 / cur.tau;
        if self.same_mesh(prev, cur) {
            let mesh = cur.mesh();
            let hs = mesh.meshsize();
            let dr = cur.residual.scaled_difference(&prev.residual, inv);
            let dj = cur.jump.scaled_difference(&prev.jump, inv);
            return Ok((
                SpaceTerms {
                    element: element_norm_sq(mesh, &dr, &hs.element, 2.0),
                    common_edges: edge_norm_sq(mesh, &dj, &hs.edge, 1.5),
                    changed_edges: 0.0,
                },
                0,
            ));
        }
        let (mc, mp) = (cur.mesh(), prev.mesh());
        let fcc = Arc::new(mc.finest_common_coarsening(mp)?);
        let ov = self.disc.overlay(&[mc, mp, &fcc])?;
        let hat = fcc.diameters();
        let mut terms = SpaceTerms::default();
        let deg = cur.residual.degree.max(prev.residual.degree);
        for_each_overlay_point(&ov, &[mc, mp, &fcc], 2 * deg, |_, par, geo, x, w| {
            let r = (cur.residual.value_in(par[0], geo[0].barycentric(x))
                - prev.residual.value_in(par[1], geo[1].barycentric(x)))
                * inv;
            terms.element += w * hat[par[2]].powi(4) * r * r;
        })?;
        let fine = &ov.fine;
        let rule = segment_rule(2 * deg)?;
        let meshes: [&Triangulation; 2] = [mc, mp];
        let jumps = [&cur.jump, &prev.jump];
        for &e in fine.interior_edges() {
            let edge = &fine.edges()[e];
            let (k1, k2) = (edge.elements[0].expect("interior"), edge.elements[1].expect("interior"));
            let (xa, xb) = (fine.vertices()[edge.vertices[0]], fine.vertices()[edge.vertices[1]]);
            let mut on = [None, None];
            for j in 0..2 {
                let (p1, p2) = (ov.parents[j][k1], ov.parents[j][k2]);
                if p1 != p2 {
                    let m = meshes[j];
                    let geom = Geometry::new(m.element_vertices(p1));
                    let le = local_edge_of(&geom, xa, xb).expect("fine edge lies on a coarse edge");
                    on[j] = Some(m.element_edges()[p1][le]);
                }
            }
            if on == [None, None] {
                continue;
            }
            let common = match on {
                [Some(a), Some(b)] => mc.edge_key_of(a) == mp.edge_key_of(b),
                _ => false,
            };
            let hat_e = hat[ov.parents[2][k1]].max(hat[ov.parents[2][k2]]);
            let len = fine.edge_length(e);
            let mut sq = 0.0;
            for (s, w) in rule.points.iter().zip(&rule.weights) {
                let x = [xa[0] + s * (xb[0] - xa[0]), xa[1] + s * (xb[1] - xa[1])];
                let mut v = 0.0;
                for j in 0..2 {
                    if let Some(ce) = on[j] {
                        let m = meshes[j];
                        let [va, vb] = m.edges()[ce].vertices.map(|i| m.vertices()[i]);
                        let d = [vb[0] - va[0], vb[1] - va[1]];
                        let t = ((x[0] - va[0]) * d[0] + (x[1] - va[1]) * d[1]) / (d[0] * d[0] + d[1] * d[1]);
                        let sign = if j == 0 { 1.0 } else { -1.0 };
                        v += sign * jumps[j].value_at(ce, t);
                    }
                }
                v *= inv;
                sq += w * len * v * v;
            }
            let contrib = hat_e.powi(3) * sq;
            if common {
                terms.common_edges += contrib;
            } else {
                terms.changed_edges += contrib;
            }
        }
        let lc = mc.levels();
        let lp = mp.levels();
        let bis = (0..fine.n_elements())
            .map(|k| lc[ov.parents[0][k]].abs_diff(lp[ov.parents[1][k]]))
            .max()
            .unwrap_or(0);
        Ok((terms, bis))
    }

    /// `||A^n U^n - A^{n-1} U^{n-1}||`.
    pub fn operator_jump(&self, prev: &TimeSlabState, cur: &TimeSlabState) -> Result<f64> {
        self.disc.l2_distance(&cur.a_u, &prev.a_u)
    }

    /// Defect `(P^n - Id)(f^n + U^{n-1}/tau_n)` at `x`; `k[0]` indexes the
    /// current mesh and `k[1]` the mesh of `U^{n-1}` when it differs.
    fn defect_at(&self, s: &TimeSlabState, k: [usize; 2], g: [&Geometry; 2], x: Point) -> f64 {
        let mut d = s.f_bar.value_in(k[0], g[0].barycentric(x)) - self.disc.forcing.value(x, s.t);
        if !s.prev_same_space {
            if let (Some(pp), Some(pu)) = (&s.proj_prev, &s.prev_u) {
                d += (pp.value_in(k[0], g[0].barycentric(x)) - pu.value_in(k[1], g[1].barycentric(x))) / s.tau;
            }
        }
        d
    }

    fn needs_prev_mesh(s: &TimeSlabState) -> bool {
        !s.prev_same_space && s.prev_u.is_some()
    }

    /// `||h_n (P^n - Id)(f^n + U^{n-1}/tau_n)||`.
    pub fn defect_norm(&self, s: &TimeSlabState) -> Result<f64> {
        let data = self.disc.data(s.space())?;
        if s.prev_same_space {
            if let Some(sep) = self.disc.separated(&data) {
                let a: Vec<f64> = (0..sep.loads.len()).map(|k| self.disc.forcing.time_factor(k, s.t)).collect();
                return Ok(SeparatedData::quad(&sep.defect_gram, &a).sqrt());
            }
        }
        let mc = s.mesh();
        let ex = self.disc.options.norm_exactness;
        let h = mc.diameters();
        let mut sum = 0.0;
        if Self::needs_prev_mesh(s) {
            let mp = s.prev_u.as_ref().expect("checked").space.mesh();
            let ov = self.disc.overlay(&[mc, mp])?;
            for_each_overlay_point(&ov, &[mc, mp], ex, |_, par, geo, x, w| {
                let d = self.defect_at(s, [par[0], par[1]], [&geo[0], &geo[1]], x);
                sum += w * h[par[0]].powi(2) * d * d;
            })?;
        } else {
            let rule = triangle_rule(ex)?;
            let bary = rule.barycentric();
            for k in 0..mc.n_elements() {
                let g = s.space().geometry(k);
                for (l, w) in bary.iter().zip(&rule.weights) {
                    let d = self.defect_at(s, [k, k], [&g, &g], g.map(*l));
                    sum += 2.0 * w * g.area * h[k].powi(2) * d * d;
                }
            }
        }
        Ok(sum.sqrt())
    }

    /// `||hat h_n (d_n - d_{n-1}) / tau_n||` with `d` the projection defect.
    pub fn defect_difference_norm(&self, prev: &TimeSlabState, cur: &TimeSlabState) -> Result<f64> {
        let data = self.disc.data(cur.space())?;
        let inv = 1.0 / cur.tau;
        if self.same_mesh(prev, cur) && cur.prev_same_space && prev.prev_same_space {
            if let Some(sep) = self.disc.separated(&data) {
                let f = &self.disc.forcing;
                let a: Vec<f64> =
                    (0..sep.loads.len()).map(|k| (f.time_factor(k, cur.t) - f.time_factor(k, prev.t)) * inv).collect();
                return Ok(SeparatedData::quad(&sep.defect_gram, &a).sqrt());
            }
        }
        let (mc, mp) = (cur.mesh(), prev.mesh());
        let fcc = Arc::new(mc.finest_common_coarsening(mp)?);
        let mut meshes: Vec<&Arc<Triangulation>> = vec![mc, mp, &fcc];
        let pp_mesh = if Self::needs_prev_mesh(prev) {
            Some(prev.prev_u.as_ref().expect("checked").space.mesh().clone())
        } else {
            None
        };
        if let Some(m) = &pp_mesh {
            meshes.push(m);
        }
        let ov = self.disc.overlay(&meshes)?;
        let plain: Vec<&Triangulation> = meshes.iter().map(|m| m.as_ref()).collect();
        let hat = fcc.diameters();
        let mut sum = 0.0;
        for_each_overlay_point(&ov, &plain, self.disc.options.norm_exactness, |_, par, geo, x, w| {
            let dc = self.defect_at(cur, [par[0], par[1]], [&geo[0], &geo[1]], x);
            let last = if pp_mesh.is_some() { 3 } else { 1 };
            let dp = self.defect_at(prev, [par[1], par[last]], [&geo[1], &geo[last]], x);
            let d = (dc - dp) * inv;
            sum += w * hat[par[2]].powi(2) * d * d;
        })?;
        Ok(sum.sqrt())
    }

    /// `(1/tau) int ||f^n - f(t)|| dt` and `((1/tau) int ||f^n - f(t)||^2 dt)^{1/2}`.
    pub fn data_time(&self, cur: &TimeSlabState) -> Result<(f64, f64)> {
        let (x, w) = crate::quadrature::gauss_legendre(5);
        let (t0, t1) = (cur.t - cur.tau, cur.t);
        let times: Vec<f64> = x.iter().map(|s| t0 + 0.5 * (s + 1.0) * (t1 - t0)).collect();
        let weights: Vec<f64> = w.iter().map(|v| 0.5 * v).collect();
        let data = self.disc.data(cur.space())?;
        let f = &self.disc.forcing;
        let norms_sq: Vec<f64> = if let Some(sep) = self.disc.separated(&data) {
            times
                .iter()
                .map(|&t| {
                    let a: Vec<f64> =
                        (0..sep.loads.len()).map(|k| f.time_factor(k, cur.t) - f.time_factor(k, t)).collect();
                    SeparatedData::quad(&sep.gram, &a)
                })
                .collect()
        } else {
            let rule = triangle_rule(self.disc.options.norm_exactness)?;
            let bary = rule.barycentric();
            let mut acc = vec![0.0; times.len()];
            let space = cur.space();
            for k in 0..space.mesh().n_elements() {
                let g = space.geometry(k);
                for (l, wq) in bary.iter().zip(&rule.weights) {
                    let xq = g.map(*l);
                    let fnow = f.value(xq, cur.t);
                    for (a, &t) in acc.iter_mut().zip(&times) {
                        let d = fnow - f.value(xq, t);
                        *a += 2.0 * wq * g.area * d * d;
                    }
                }
            }
            acc
        };
        let l1 = norms_sq.iter().zip(&weights).map(|(n, w)| w * n.sqrt()).sum();
        let l2 = norms_sq.iter().zip(&weights).map(|(n, w)| w * n).sum::<f64>().sqrt();
        Ok((l1, l2))
    }

    /// All estimators for the step `prev -> cur`.
    pub fn step(&self, prev: &TimeSlabState, cur: &TimeSlabState) -> Result<StepEstimators> {
        let c31 = self.c(3, 1) / self.consts.alpha.sqrt();
        let (terms, bisections) = self.space_terms(prev, cur)?;
        let changed = self.c(14, 2) * terms.changed_edges.sqrt();
        let eta_space = self.c(6, 2) * terms.element.sqrt() + self.c(10, 2) * terms.common_edges.sqrt() + changed;
        let op = self.operator_jump(prev, cur)?;
        let (eta_f1, eta_f2) = self.data_time(cur)?;
        let gamma2 = c31 * self.defect_norm(cur)?;
        let gamma1 = if prev.n >= 1 { Some(c31 * self.defect_difference_norm(prev, cur)?) } else { None };
        Ok(StepEstimators {
            n: cur.n,
            t: cur.t,
            tau: cur.tau,
            level: self.level(cur),
            eta_space,
            eta_space_changed: changed,
            theta1: 0.5 * op,
            theta2: op / 3f64.sqrt(),
            eta_f1,
            eta_f2,
            gamma2,
            gamma1,
            bisections,
        })
    }
}
