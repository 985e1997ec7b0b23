//! Benchmark problems, error norms, experimental orders of convergence and
//! effectivity indices.
//!
//! Both benchmark solutions are `u(x, t) = s(t) exp(-10 |x|^2)` on
//! `[-1, 1]^2 x [0, 1]` with `A = I` and `f = u_t - Laplace u`:
//! the slow one has `s(t) = sin(pi t)`, the fast one `s(t) = sin(20 pi t) / 10`.

use std::fmt::Write as _;
use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;

use crate::assembly::CoefficientMatrix;
use crate::error::{Error, Result};
use crate::estimators::{Accumulator, BoundTotals, ConstantsTable, EstimatorEngine, StepEstimators};
use crate::evolution::{for_each_overlay_point, Discretization, Forcing, InitialOperator, Options, TimeSlabState};
use crate::fespace::{basis_gradients, FeFunction, FiniteElementSpace, Tabulation, MAX_LOCAL};
use crate::mesh::{Point, Rectangle, Triangulation};
use crate::quadrature::{gauss_legendre, triangle_rule};

/// Exact solution used to measure errors.
pub trait ExactSolution: Send + Sync {
    fn value(&self, x: Point, t: f64) -> f64;
    fn gradient(&self, x: Point, t: f64) -> [f64; 2];
    fn time_derivative(&self, x: Point, t: f64) -> f64;

    /// `(s(t), s'(t))` when `u = s(t) G(x)`.
    fn time_profile(&self, _t: f64) -> Option<(f64, f64)> {
        None
    }
    fn profile(&self, _x: Point) -> f64 {
        0.0
    }
    fn profile_gradient(&self, _x: Point) -> [f64; 2] {
        [0.0, 0.0]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ProblemKind {
    Slow,
    Fast,
}

impl std::str::FromStr for ProblemKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "slow" => Ok(ProblemKind::Slow),
            "fast" => Ok(ProblemKind::Fast),
            other => Err(Error::InvalidArgument(format!("unknown problem `{other}` (slow|fast)"))),
        }
    }
}

impl std::fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ProblemKind::Slow => "slow",
            ProblemKind::Fast => "fast",
        })
    }
}

/// `u = amplitude * sin(omega t) * exp(-10 |x|^2)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BenchmarkProblem {
    pub kind: ProblemKind,
    pub amplitude: f64,
    pub omega: f64,
}

impl BenchmarkProblem {
    pub fn new(kind: ProblemKind) -> Self {
        match kind {
            ProblemKind::Slow => BenchmarkProblem { kind, amplitude: 1.0, omega: std::f64::consts::PI },
            ProblemKind::Fast => BenchmarkProblem { kind, amplitude: 0.1, omega: 20.0 * std::f64::consts::PI },
        }
    }

    pub fn domain(&self) -> Rectangle {
        Rectangle::square(-1.0, 1.0)
    }

    pub fn final_time(&self) -> f64 {
        1.0
    }

    fn s(&self, t: f64) -> f64 {
        self.amplitude * (self.omega * t).sin()
    }

    fn ds(&self, t: f64) -> f64 {
        self.amplitude * self.omega * (self.omega * t).cos()
    }

    fn g(x: Point) -> f64 {
        (-10.0 * (x[0] * x[0] + x[1] * x[1])).exp()
    }

    /// `-Laplace G / G`.
    fn laplace_factor(x: Point) -> f64 {
        40.0 - 400.0 * (x[0] * x[0] + x[1] * x[1])
    }
}

impl Forcing for BenchmarkProblem {
    fn value(&self, x: Point, t: f64) -> f64 {
        Self::g(x) * (self.ds(t) + self.s(t) * Self::laplace_factor(x))
    }
    fn separated_terms(&self) -> usize {
        2
    }
    fn time_factor(&self, k: usize, t: f64) -> f64 {
        if k == 0 {
            self.ds(t)
        } else {
            self.s(t)
        }
    }
    fn space_factor(&self, k: usize, x: Point) -> f64 {
        if k == 0 {
            Self::g(x)
        } else {
            Self::laplace_factor(x) * Self::g(x)
        }
    }
}

impl ExactSolution for BenchmarkProblem {
    fn value(&self, x: Point, t: f64) -> f64 {
        self.s(t) * Self::g(x)
    }
    fn gradient(&self, x: Point, t: f64) -> [f64; 2] {
        let g = self.profile_gradient(x);
        [self.s(t) * g[0], self.s(t) * g[1]]
    }
    fn time_derivative(&self, x: Point, t: f64) -> f64 {
        self.ds(t) * Self::g(x)
    }
    fn time_profile(&self, t: f64) -> Option<(f64, f64)> {
        Some((self.s(t), self.ds(t)))
    }
    fn profile(&self, x: Point) -> f64 {
        Self::g(x)
    }
    fn profile_gradient(&self, x: Point) -> [f64; 2] {
        let g = Self::g(x);
        [-20.0 * x[0] * g, -20.0 * x[1] * g]
    }
}

/// Running error norms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct ErrorSnapshot {
    /// Max over step nodes and midpoints of `||e(t)||`.
    pub linf_l2: f64,
    /// `(int ||e||^2 + ||grad e||^2 dt)^{1/2}`, two-point Gauss per step.
    pub l2_h1: f64,
    /// Max over step nodes and midpoints of `||e(t)||_a`.
    pub linf_h1: f64,
    /// `(int ||d_t e||^2 dt)^{1/2}`, two-point Gauss per step.
    pub h1_l2: f64,
}

struct FastTables {
    mesh: Arc<Triangulation>,
    degree: usize,
    tab: Tabulation,
    /// Derivatives of the local basis with respect to the barycentric
    /// coordinates at each quadrature point.
    dl: Vec<[[f64; 3]; MAX_LOCAL]>,
    grad_lambda: Vec<[[f64; 2]; 3]>,
    area: Vec<f64>,
    g: Vec<f64>,
    dg: Vec<[f64; 2]>,
}

/// Per-point values of `U` on the fast path.
struct PointValues {
    vals: Vec<f64>,
    grads: Vec<[f64; 2]>,
}

/// Weighted Gram matrices of `(e^{n-1}, e^n, G)` in `L2` and in the energy
/// form, where `e^i = U^i - s(t_i) G`, plus the pieces for the time
/// derivative. Working with nodal errors instead of `U` avoids cancellation.
#[derive(Default)]
struct Gram {
    l2: [[f64; 3]; 3],
    a: [[f64; 3]; 3],
    /// `||e^n - e^{n-1}||^2` and `(e^n - e^{n-1}, G)`.
    dd: f64,
    dg: f64,
}

impl Gram {
    fn add(&mut self, w: f64, v: [f64; 3], g: [[f64; 2]; 3], coefficient: &CoefficientMatrix) {
        let ag = g.map(|x| coefficient.apply(x));
        for i in 0..3 {
            for j in i..3 {
                self.l2[i][j] += w * v[i] * v[j];
                self.a[i][j] += w * (ag[i][0] * g[j][0] + ag[i][1] * g[j][1]);
            }
        }
        let d = v[1] - v[0];
        self.dd += w * d * d;
        self.dg += w * d * v[2];
    }

    fn form(m: &[[f64; 3]; 3], c: [f64; 3]) -> f64 {
        let mut s = 0.0;
        for i in 0..3 {
            s += c[i] * c[i] * m[i][i];
            for j in i + 1..3 {
                s += 2.0 * c[i] * c[j] * m[i][j];
            }
        }
        s.max(0.0)
    }
}

/// Accumulates error norms along a run.
pub struct ErrorTracker {
    disc: Arc<Discretization>,
    exact: Arc<dyn ExactSolution>,
    fast: Option<FastTables>,
    cur_vals: Option<PointValues>,
    linf_l2: f64,
    linf_h1: f64,
    l2h1_sq: f64,
    h1l2_sq: f64,
}

/// Sample times within a step, as weights of `U^{n-1}`: end, midpoint,
/// then the two Gauss points.
fn sample_weights() -> [f64; 4] {
    let (x, _) = gauss_legendre(2);
    [0.0, 0.5, 0.5 * (1.0 - x[0]), 0.5 * (1.0 - x[1])]
}

#[derive(Default)]
struct StepSums {
    l2: [f64; 4],
    a: [f64; 4],
    dt: [f64; 2],
}

impl ErrorTracker {
    pub fn new(disc: Arc<Discretization>, exact: Arc<dyn ExactSolution>) -> Self {
        ErrorTracker { disc, exact, fast: None, cur_vals: None, linf_l2: 0.0, linf_h1: 0.0, l2h1_sq: 0.0, h1l2_sq: 0.0 }
    }

    pub fn snapshot(&self) -> ErrorSnapshot {
        ErrorSnapshot {
            linf_l2: self.linf_l2,
            l2_h1: self.l2h1_sq.sqrt(),
            linf_h1: self.linf_h1,
            h1_l2: self.h1l2_sq.sqrt(),
        }
    }

    fn separated(&self) -> bool {
        !self.disc.options.force_general && self.exact.time_profile(0.0).is_some()
    }

    fn tables_match(&self, space: &FiniteElementSpace) -> bool {
        self.fast.as_ref().is_some_and(|f| *f.mesh == **space.mesh() && f.degree == space.degree())
    }

    fn ensure_tables(&mut self, space: &FiniteElementSpace) -> Result<()> {
        if !self.separated() || self.tables_match(space) {
            return Ok(());
        }
        let degree = space.degree();
        let tab = Tabulation::new(degree, &triangle_rule(self.disc.options.norm_exactness)?);
        let dl = tab
            .bary
            .iter()
            .map(|l| {
                let d01 = basis_gradients(degree, *l, &[[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]]);
                let d2 = basis_gradients(degree, *l, &[[0.0, 0.0], [0.0, 0.0], [1.0, 0.0]]);
                std::array::from_fn(|i| [d01[i][0], d01[i][1], d2[i][0]])
            })
            .collect();
        let ne = space.mesh().n_elements();
        let nq = tab.bary.len();
        let mut grad_lambda = Vec::with_capacity(ne);
        let mut area = Vec::with_capacity(ne);
        let mut g = Vec::with_capacity(ne * nq);
        let mut dg = Vec::with_capacity(ne * nq);
        for k in 0..ne {
            let geom = space.geometry(k);
            grad_lambda.push(geom.grad_lambda);
            area.push(geom.area);
            for l in &tab.bary {
                let x = geom.map(*l);
                g.push(self.exact.profile(x));
                dg.push(self.exact.profile_gradient(x));
            }
        }
        self.fast = Some(FastTables { mesh: space.mesh().clone(), degree, tab, dl, grad_lambda, area, g, dg });
        self.cur_vals = None;
        Ok(())
    }

    fn point_values(&self, u: &FeFunction) -> PointValues {
        let f = self.fast.as_ref().expect("tables built");
        let nq = f.tab.bary.len();
        let nl = u.space.n_local();
        let mut vals = Vec::with_capacity(f.area.len() * nq);
        let mut grads = Vec::with_capacity(f.area.len() * nq);
        for k in 0..f.area.len() {
            let c = u.local(k);
            let gl = &f.grad_lambda[k];
            for q in 0..nq {
                let phi = &f.tab.values[q];
                let dl = &f.dl[q];
                let mut v = 0.0;
                let mut d = [0.0; 3];
                for i in 0..nl {
                    v += c[i] * phi[i];
                    for m in 0..3 {
                        d[m] += c[i] * dl[i][m];
                    }
                }
                vals.push(v);
                grads.push([
                    d[0] * gl[0][0] + d[1] * gl[1][0] + d[2] * gl[2][0],
                    d[0] * gl[0][1] + d[1] * gl[1][1] + d[2] * gl[2][1],
                ]);
            }
        }
        PointValues { vals, grads }
    }

    fn a_norm_sq(&self, g: [f64; 2]) -> f64 {
        let ag = self.disc.coefficient.apply(g);
        ag[0] * g[0] + ag[1] * g[1]
    }

    /// Errors at `t_0`.
    pub fn initial(&mut self, s0: &TimeSlabState) -> Result<ErrorSnapshot> {
        let (l2, a) = self.level_error(s0)?;
        self.linf_l2 = l2;
        self.linf_h1 = a;
        Ok(self.snapshot())
    }

    /// `(||U^n - u(t_n)||, ||U^n - u(t_n)||_a)`.
    pub fn level_error(&mut self, s: &TimeSlabState) -> Result<(f64, f64)> {
        let (mut l2, mut a) = (0.0, 0.0);
        let rule = triangle_rule(self.disc.options.norm_exactness)?;
        let bary = rule.barycentric();
        for k in 0..s.mesh().n_elements() {
            let g = s.space().geometry(k);
            for (l, w) in bary.iter().zip(&rule.weights) {
                let x = g.map(*l);
                let wa = 2.0 * w * g.area;
                let e = s.u.value_in(k, *l) - self.exact.value(x, s.t);
                let gu = s.u.gradient_in(k, &g, *l);
                let ge = self.exact.gradient(x, s.t);
                l2 += wa * e * e;
                a += wa * self.a_norm_sq([gu[0] - ge[0], gu[1] - ge[1]]);
            }
        }
        Ok((l2.sqrt(), a.sqrt()))
    }

    fn separated_sums(&mut self, prev: &TimeSlabState, cur: &TimeSlabState, lam: &[f64; 4], times: &[f64; 4]) -> StepSums {
        let pv = match self.cur_vals.take() {
            Some(v) if v.vals.len() == self.fast.as_ref().map_or(0, |f| f.g.len()) => v,
            _ => self.point_values(&prev.u),
        };
        let cv = self.point_values(&cur.u);
        let f = self.fast.as_ref().expect("tables built");
        let nq = f.tab.bary.len();
        let profile = |t: f64| self.exact.time_profile(t).expect("separated");
        let (sp, sc) = (profile(prev.t).0, profile(cur.t).0);
        let mut gram = Gram::default();
        for k in 0..f.area.len() {
            for q in 0..nq {
                let i = k * nq + q;
                let (g, dg) = (f.g[i], f.dg[i]);
                let ep = pv.vals[i] - sp * g;
                let ec = cv.vals[i] - sc * g;
                let gp = [pv.grads[i][0] - sp * dg[0], pv.grads[i][1] - sp * dg[1]];
                let gc = [cv.grads[i][0] - sc * dg[0], cv.grads[i][1] - sc * dg[1]];
                gram.add(f.tab.weights[q] * f.area[k], [ep, ec, g], [gp, gc, dg], &self.disc.coefficient);
            }
        }
        let mut sums = StepSums::default();
        let tau = cur.tau;
        for j in 0..4 {
            let (s, ds) = profile(times[j]);
            let l = lam[j];
            // e(t) = l e^{n-1} + (1 - l) e^n - (s(t) - l s_{n-1} - (1 - l) s_n) G
            let c = [l, 1.0 - l, -(s - l * sp - (1.0 - l) * sc)];
            sums.l2[j] = Gram::form(&gram.l2, c);
            sums.a[j] = Gram::form(&gram.a, c);
            if j >= 2 {
                // d_t e = (e^n - e^{n-1}) / tau + ((s_n - s_{n-1}) / tau - s'(t)) G
                let b = (sc - sp) / tau - ds;
                sums.dt[j - 2] = (gram.dd / (tau * tau) + 2.0 * b * gram.dg / tau + b * b * gram.l2[2][2]).max(0.0);
            }
        }
        self.cur_vals = Some(cv);
        sums
    }

    fn overlay_sums(&self, prev: &TimeSlabState, cur: &TimeSlabState, lam: &[f64; 4], times: &[f64; 4]) -> Result<StepSums> {
        let (mc, mp) = (cur.mesh(), prev.mesh());
        let ov = self.disc.overlay(&[mc, mp])?;
        let tau = cur.tau;
        let mut sums = StepSums::default();
        for_each_overlay_point(&ov, &[mc, mp], self.disc.options.norm_exactness, |_, par, geo, x, w| {
            let (lc, lp) = (geo[0].barycentric(x), geo[1].barycentric(x));
            let (uc, up) = (cur.u.value_in(par[0], lc), prev.u.value_in(par[1], lp));
            let (gc, gp) = (cur.u.gradient_in(par[0], &geo[0], lc), prev.u.gradient_in(par[1], &geo[1], lp));
            for j in 0..4 {
                let l = lam[j];
                let t = times[j];
                let gu = self.exact.gradient(x, t);
                let e = l * up + (1.0 - l) * uc - self.exact.value(x, t);
                let ge = [l * gp[0] + (1.0 - l) * gc[0] - gu[0], l * gp[1] + (1.0 - l) * gc[1] - gu[1]];
                sums.l2[j] += w * e * e;
                sums.a[j] += w * self.a_norm_sq(ge);
                if j >= 2 {
                    let d = (uc - up) / tau - self.exact.time_derivative(x, t);
                    sums.dt[j - 2] += w * d * d;
                }
            }
        })?;
        Ok(sums)
    }

    pub fn step(&mut self, prev: &TimeSlabState, cur: &TimeSlabState) -> Result<ErrorSnapshot> {
        let lam = sample_weights();
        let tau = cur.tau;
        let times = lam.map(|l| prev.t + (1.0 - l) * tau);
        let (_, gw) = gauss_legendre(2);
        let fast = self.separated() && prev.space().same_as(cur.space());
        let sums = if fast {
            self.ensure_tables(cur.space())?;
            self.separated_sums(prev, cur, &lam, &times)
        } else {
            self.cur_vals = None;
            self.overlay_sums(prev, cur, &lam, &times)?
        };
        for j in 0..2 {
            self.linf_l2 = self.linf_l2.max(sums.l2[j].sqrt());
            self.linf_h1 = self.linf_h1.max(sums.a[j].sqrt());
        }
        for j in 0..2 {
            let w = 0.5 * gw[j] * tau;
            // gradient part in the energy form, the plain gradient for A = I
            self.l2h1_sq += w * (sums.l2[2 + j] + sums.a[2 + j]);
            self.h1l2_sq += w * sums.dt[j];
        }
        Ok(self.snapshot())
    }
}

/// `log(e_{i+1} / e_i) / log(h_{i+1} / h_i)`.
pub fn eoc(errors: &[f64], h: &[f64]) -> Vec<f64> {
    errors
        .windows(2)
        .zip(h.windows(2))
        .map(|(e, h)| (e[1] / e[0]).ln() / (h[1] / h[0]).ln())
        .collect()
}

/// `error / denominator`.
pub fn effectivity(error: f64, denominator: f64) -> f64 {
    if denominator > 0.0 {
        error / denominator
    } else {
        f64::NAN
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Preset {
    pub name: &'static str,
    pub problem: ProblemKind,
    pub degree: usize,
    pub k: u32,
    pub h1: f64,
    pub tau1: f64,
    pub runs: usize,
}

pub const PRESETS: [Preset; 5] = [
    Preset { name: "1", problem: ProblemKind::Slow, degree: 1, k: 2, h1: 0.5, tau1: 0.04, runs: 6 },
    Preset { name: "2", problem: ProblemKind::Fast, degree: 1, k: 1, h1: 0.25, tau1: 0.01, runs: 5 },
    Preset { name: "3a", problem: ProblemKind::Slow, degree: 1, k: 3, h1: 0.125, tau1: 0.08, runs: 4 },
    Preset { name: "3b", problem: ProblemKind::Slow, degree: 2, k: 3, h1: 0.125, tau1: 0.08, runs: 4 },
    Preset { name: "4", problem: ProblemKind::Fast, degree: 2, k: 2, h1: 0.125, tau1: 0.02, runs: 4 },
];

pub fn preset(name: &str) -> Result<Preset> {
    PRESETS
        .iter()
        .find(|p| p.name == name)
        .copied()
        .ok_or_else(|| Error::InvalidArgument(format!("unknown preset `{name}`")))
}

impl Preset {
    /// `(h_i, tau_i)` for run `i` (1-based): `h` halves, `tau` divides by `2^k`.
    pub fn run_parameters(&self, i: usize) -> (f64, f64) {
        let s = (i - 1) as i32;
        (self.h1 * 0.5f64.powi(s), self.tau1 * 0.5f64.powi(self.k as i32 * s))
    }
}

/// A mesh change: from step `step` on, the base mesh refined `levels` times
/// (in the disk `(cx, cy, r)` when given).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MeshChange {
    pub step: usize,
    pub levels: usize,
    pub disk: Option<[f64; 3]>,
}

/// Parses lines `step levels [cx cy r]`; `#` starts a comment.
pub fn parse_schedule(text: &str) -> Result<Vec<MeshChange>> {
    let mut out = Vec::new();
    for line in text.lines() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        let bad = || Error::Parse(format!("bad schedule line `{line}`"));
        if f.len() != 2 && f.len() != 5 {
            return Err(bad());
        }
        let step = f[0].parse().map_err(|_| bad())?;
        let levels = f[1].parse().map_err(|_| bad())?;
        let disk = if f.len() == 5 {
            let v: Vec<f64> = f[2..].iter().map(|s| s.parse().map_err(|_| bad())).collect::<Result<_>>()?;
            Some([v[0], v[1], v[2]])
        } else {
            None
        };
        out.push(MeshChange { step, levels, disk });
    }
    out.sort_by_key(|c| c.step);
    Ok(out)
}

/// Applies a mesh change to the base mesh.
pub fn changed_mesh(base: &Triangulation, change: &MeshChange) -> Triangulation {
    let mut m = base.clone();
    for _ in 0..2 * change.levels {
        let marked: Vec<usize> = (0..m.n_elements())
            .filter(|&k| match change.disk {
                None => true,
                Some([cx, cy, r]) => {
                    let v = m.element_vertices(k);
                    let c = [(v[0][0] + v[1][0] + v[2][0]) / 3.0, (v[0][1] + v[1][1] + v[2][1]) / 3.0];
                    (c[0] - cx).hypot(c[1] - cy) <= r
                }
            })
            .collect();
        m = m.bisect_marked(&marked).expect("valid indices");
    }
    m
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub label: String,
    pub index: usize,
    pub problem: BenchmarkProblem,
    pub degree: usize,
    pub h: f64,
    pub tau: f64,
    pub constants: ConstantsTable,
    pub options: Options,
    pub initial: InitialOperator,
    pub schedule: Vec<MeshChange>,
    /// Compare `A^n U^n` with an independent solve at every step.
    pub check_operator: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct StepRow {
    pub n: usize,
    pub t: f64,
    pub tau: f64,
    pub errors: ErrorSnapshot,
    pub estimators: StepEstimators,
    pub totals: BoundTotals,
    pub eff_linf_l2: f64,
    pub eff_l2_h1: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub label: String,
    pub index: usize,
    pub degree: usize,
    pub h: f64,
    pub tau: f64,
    pub steps: usize,
    pub dofs: usize,
    pub elements: usize,
    pub rows: Vec<StepRow>,
    /// Largest relative defect of the pointwise form.
    pub max_pointwise_defect: f64,
    /// Largest relative difference between `A^n U^n` and an independent solve.
    pub max_operator_mismatch: f64,
    pub seconds: f64,
    /// Seconds spent stepping, checking the operator, in estimators and in
    /// error norms.
    pub phase_seconds: [f64; 4],
}

impl RunReport {
    pub fn last(&self) -> &StepRow {
        self.rows.last().expect("at least one step")
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Uniform mesh of `[-1, 1]^2` with cell side `h` (a power of two fraction
/// of the side length).
pub fn uniform_mesh(domain: Rectangle, h: f64) -> Result<Triangulation> {
    let ratio = (domain.max[0] - domain.min[0]) / h;
    let levels = ratio.log2().round();
    if levels < 0.0 || (2f64.powf(levels) - ratio).abs() > 1e-9 * ratio {
        return Err(Error::InvalidArgument(format!("meshsize {h} must be the side length over a power of two")));
    }
    Ok(Triangulation::build_macro(domain, 1)?.uniform_refine(levels as usize))
}

/// Runs one discretisation of a benchmark problem to the final time.
pub fn run_single(cfg: &RunConfig) -> Result<RunReport> {
    let start = Instant::now();
    let problem = Arc::new(cfg.problem);
    let forcing: Arc<dyn Forcing> = problem.clone();
    let coefficient = CoefficientMatrix::identity();
    let disc = Arc::new(Discretization::new(coefficient, forcing, cfg.options));
    let base = Arc::new(uniform_mesh(problem.domain(), cfg.h)?);
    if !(cfg.tau > 0.0) {
        return Err(Error::InvalidArgument(format!("tau = {} must be positive", cfg.tau)));
    }
    // a tau that does not divide T gets a shorter last step
    let steps = (problem.final_time() / cfg.tau - 1e-9).ceil().max(1.0) as usize;
    let base_space = FiniteElementSpace::new(base.clone(), cfg.degree)?;
    let space_for = |n: usize, current: &Arc<FiniteElementSpace>| -> Result<Arc<FiniteElementSpace>> {
        match cfg.schedule.iter().rev().find(|c| c.step <= n) {
            None => Ok(base_space.clone()),
            Some(c) => {
                let m = changed_mesh(&base, c);
                if *current.mesh().as_ref() == m {
                    Ok(current.clone())
                } else {
                    FiniteElementSpace::new(Arc::new(m), cfg.degree)
                }
            }
        }
    };
    let engine = EstimatorEngine::new(disc.clone(), cfg.constants.clone());
    let exact: Arc<dyn ExactSolution> = problem.clone();
    let mut tracker = ErrorTracker::new(disc.clone(), exact.clone());
    let s0_space = space_for(0, &base_space)?;
    let mut state = disc.initial_state(&s0_space, |x| exact.value(x, 0.0), cfg.initial, 0.0)?;
    tracker.initial(&state)?;
    let (init_l2, init_a) = tracker.level_error(&state)?;
    let mut acc = Accumulator::new(&cfg.constants, engine.level(&state), init_l2, init_a);
    let mut rows = Vec::with_capacity(steps);
    let (mut max_def, mut max_mis) = (0.0f64, 0.0f64);
    let mut phase = [0.0; 4];
    let mut space = s0_space;
    let mut dofs = space.n_dofs();
    let mut elements = space.mesh().n_elements();
    for n in 1..=steps {
        space = space_for(n, &space)?;
        dofs = dofs.max(space.n_dofs());
        elements = elements.max(space.mesh().n_elements());
        // exact final time on the last step
        let tau = if n == steps { problem.final_time() - state.t } else { cfg.tau };
        let clock = Instant::now();
        let next = disc.step(&state, &space, tau)?;
        phase[0] += clock.elapsed().as_secs_f64();
        let clock = Instant::now();
        let fb = next.space().restrict(&next.f_bar.coeffs);
        let au = next.space().restrict(&next.a_u.coeffs);
        let db = next.space().restrict(&next.dbar_u.coeffs);
        let scale = norm(&au) + norm(&fb);
        let defect: Vec<f64> = (0..fb.len()).map(|i| db[i] + au[i] - fb[i]).collect();
        max_def = max_def.max(norm(&defect) / scale.max(f64::MIN_POSITIVE));
        if cfg.check_operator {
            let indep = disc.discrete_elliptic(&next.u, next.space())?;
            let ind = next.space().restrict(&indep.coeffs);
            let d: Vec<f64> = ind.iter().zip(&au).map(|(a, b)| a - b).collect();
            max_mis = max_mis.max(norm(&d) / norm(&au).max(f64::MIN_POSITIVE));
        }
        phase[1] += clock.elapsed().as_secs_f64();
        let clock = Instant::now();
        let est = engine.step(&state, &next)?;
        let totals = acc.push(&est);
        phase[2] += clock.elapsed().as_secs_f64();
        let clock = Instant::now();
        let errors = tracker.step(&state, &next)?;
        phase[3] += clock.elapsed().as_secs_f64();
        rows.push(StepRow {
            n,
            t: next.t,
            tau,
            errors,
            estimators: est,
            totals,
            eff_linf_l2: effectivity(errors.linf_l2, totals.linf_l2_denominator()),
            eff_l2_h1: effectivity(errors.l2_h1, totals.l2_h1_denominator()),
        });
        state = next;
    }
    Ok(RunReport {
        label: cfg.label.clone(),
        index: cfg.index,
        degree: cfg.degree,
        h: cfg.h,
        tau: cfg.tau,
        steps,
        dofs,
        elements,
        rows,
        max_pointwise_defect: max_def,
        max_operator_mismatch: max_mis,
        seconds: start.elapsed().as_secs_f64(),
        phase_seconds: phase,
    })
}

/// Runs `1..=runs` of a refinement sequence: `h_i = h1 / 2^{i-1}` and
/// `tau_i = tau1 / 2^{k (i-1)}`.
#[allow(clippy::too_many_arguments)]
pub fn sequence_configs(
    label: &str,
    problem: ProblemKind,
    degree: usize,
    k: u32,
    h1: f64,
    tau1: f64,
    runs: usize,
    constants: &ConstantsTable,
    options: Options,
) -> Vec<RunConfig> {
    (1..=runs)
        .map(|i| {
            let s = (i - 1) as i32;
            RunConfig {
                label: label.to_string(),
                index: i,
                problem: BenchmarkProblem::new(problem),
                degree,
                h: h1 * 0.5f64.powi(s),
                tau: tau1 * 0.5f64.powi(k as i32 * s),
                constants: constants.clone(),
                options,
                initial: InitialOperator::Interpolation,
                schedule: Vec::new(),
                check_operator: true,
            }
        })
        .collect()
}

/// Run configurations of a preset, optionally truncated to `runs` runs.
pub fn preset_configs(p: &Preset, runs: Option<usize>, constants: &ConstantsTable, options: Options) -> Vec<RunConfig> {
    let label = format!("preset{}", p.name);
    sequence_configs(&label, p.problem, p.degree, p.k, p.h1, p.tau1, runs.unwrap_or(p.runs), constants, options)
}

pub fn run_preset(p: &Preset, runs: Option<usize>, constants: &ConstantsTable, options: Options) -> Result<Vec<RunReport>> {
    preset_configs(p, runs, constants, options).iter().map(run_single).collect()
}

pub const CSV_HEADER: &str = "run,i,n,t,h,tau,bisections,err_LinfL2,err_L2H1,err_LinfH1,err_H1L2,eta_rec_inf,eta_rec_2,eta_space,eta_space_changed,theta1,eta_f1,gamma2,eta_rec_inf_max,eta_rec_2_acc,eta_space_acc,theta1_acc,etaf1_acc,gamma2_acc,total_linf_l2,total_l2_h1,high_total_H1L2,high_total_LinfH1,eff_LinfL2,eff_L2H1";

/// One row per time step of every run.
pub fn steps_csv(reports: &[RunReport]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in reports {
        for row in &r.rows {
            let (e, p, t) = (&row.errors, &row.estimators, &row.totals);
            let values = [
                row.t, r.h, row.tau, e.linf_l2, e.l2_h1, e.linf_h1, e.h1_l2,
                p.level.eta_rec_inf, p.level.eta_rec_2, p.eta_space, p.eta_space_changed, p.theta1, p.eta_f1, p.gamma2,
                t.eta_rec_inf_max, t.eta_rec_2_acc, t.eta_space_acc, t.theta1_acc, t.etaf1_acc, t.gamma2_acc,
                t.total_linf_l2, t.total_l2_h1, t.high_total_h1l2, t.high_total_linfh1, row.eff_linf_l2, row.eff_l2_h1,
            ];
            write!(s, "{},{},{}", r.label, r.index, row.n).unwrap();
            for (j, v) in values.iter().enumerate() {
                write!(s, ",{v:.12e}").unwrap();
                if j == 2 {
                    write!(s, ",{}", p.bisections).unwrap();
                }
            }
            s.push('\n');
        }
    }
    s
}

/// Final values per run, selected columns.
pub fn summary_columns(r: &RunReport) -> Vec<(&'static str, f64)> {
    let row = r.last();
    let (e, t) = (&row.errors, &row.totals);
    vec![
        ("err_LinfL2", e.linf_l2),
        ("err_L2H1", e.l2_h1),
        ("err_LinfH1", e.linf_h1),
        ("err_H1L2", e.h1_l2),
        ("eta_rec_inf_max", t.eta_rec_inf_max),
        ("eta_rec_2_acc", t.eta_rec_2_acc),
        ("eta_space_acc", t.eta_space_acc),
        ("theta1_acc", t.theta1_acc),
        ("etaf1_acc", t.etaf1_acc),
        ("gamma2_acc", t.gamma2_acc),
        ("total_linf_l2", t.total_linf_l2),
        ("total_l2_h1", t.total_l2_h1),
        ("high_total_H1L2", t.high_total_h1l2),
        ("high_total_LinfH1", t.high_total_linfh1),
        ("eff_LinfL2", row.eff_linf_l2),
        ("eff_L2H1", row.eff_l2_h1),
    ]
}

/// Final values per run and their orders of convergence with respect to
/// `h` (the time-data column `etaf1_acc` also against `tau`).
pub fn summary_csv(reports: &[RunReport]) -> String {
    let mut s = String::from("run,i,h,tau,steps,dofs,seconds");
    let names: Vec<&str> = reports.first().map(|r| summary_columns(r).iter().map(|c| c.0).collect()).unwrap_or_default();
    for n in &names {
        write!(s, ",{n},eoc_{n}").unwrap();
    }
    s.push_str(",eoc_tau_etaf1_acc\n");
    for (i, r) in reports.iter().enumerate() {
        write!(s, "{},{},{:e},{:e},{},{},{:.3}", r.label, r.index, r.h, r.tau, r.steps, r.dofs, r.seconds).unwrap();
        let cols = summary_columns(r);
        for (j, (_, v)) in cols.iter().enumerate() {
            let rate = if i == 0 {
                String::new()
            } else {
                let p = summary_columns(&reports[i - 1])[j].1;
                format!("{:.4}", eoc(&[p, *v], &[reports[i - 1].h, r.h])[0])
            };
            write!(s, ",{v:.12e},{rate}").unwrap();
        }
        let rate = if i == 0 {
            String::new()
        } else {
            let p = reports[i - 1].last().totals.etaf1_acc;
            format!("{:.4}", eoc(&[p, r.last().totals.etaf1_acc], &[reports[i - 1].tau, r.tau])[0])
        };
        writeln!(s, ",{rate}").unwrap();
    }
    s
}

/// Matplotlib script drawing estimators, their orders, errors with bound
/// totals, and error orders with effectivity indices against time.
pub fn plot_script(steps_csv_name: &str, title: &str) -> String {
    format!(
        r#"import csv
import math
import sys
from collections import defaultdict

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

rows = defaultdict(list)
with open("{steps_csv_name}") as fh:
    for r in csv.DictReader(fh):
        rows[int(r["i"])].append(r)

def series(run, col):
    return [float(r["t"]) for r in rows[run]], [float(r[col]) for r in rows[run]]

def eoc_series(col):
    out = []
    runs = sorted(rows)
    for a, b in zip(runs, runs[1:]):
        coarse = {{round(float(r["t"]), 10): float(r[col]) for r in rows[a]}}
        ha, hb = float(rows[a][0]["h"]), float(rows[b][0]["h"])
        pts = []
        for r in rows[b]:
            key = round(float(r["t"]), 10)
            if key in coarse and coarse[key] > 0 and float(r[col]) > 0:
                pts.append((key, math.log(float(r[col]) / coarse[key]) / math.log(hb / ha)))
        out.append((b, pts))
    return out

estimators = ["eta_rec_inf_max", "eta_rec_2_acc", "eta_space_acc", "theta1_acc", "etaf1_acc", "gamma2_acc"]
errors = ["err_LinfL2", "err_L2H1", "total_linf_l2", "total_l2_h1"]
fig, ax = plt.subplots(4, 1, figsize=(9, 14), sharex=True)
for col in estimators:
    for run in sorted(rows):
        t, v = series(run, col)
        ax[0].semilogy(t, v, lw=0.8, label=f"{{col}} run {{run}}" if run == max(rows) else None)
    for run, pts in eoc_series(col)[-1:]:
        ax[1].plot([p[0] for p in pts], [p[1] for p in pts], lw=0.8, label=col)
for col in errors:
    for run in sorted(rows):
        t, v = series(run, col)
        ax[2].semilogy(t, v, lw=0.8, label=f"{{col}} run {{run}}" if run == max(rows) else None)
for col in ["err_LinfL2", "err_L2H1"]:
    for run, pts in eoc_series(col)[-1:]:
        ax[3].plot([p[0] for p in pts], [p[1] for p in pts], lw=0.8, label=f"EOC {{col}}")
for col in ["eff_LinfL2", "eff_L2H1"]:
    t, v = series(max(rows), col)
    ax[3].plot(t, v, lw=0.8, ls="--", label=col)
titles = ["estimators", "estimator EOC (finest pair)", "errors and bounds", "error EOC and effectivity"]
for a, name in zip(ax, titles):
    a.set_title(name)
    a.legend(fontsize=6)
ax[3].set_xlabel("t")
fig.suptitle("{title}")
fig.tight_layout()
fig.savefig(sys.argv[1] if len(sys.argv) > 1 else "{title}.png", dpi=150)
"#
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forcing_matches_pde() {
        let p = BenchmarkProblem::new(ProblemKind::Fast);
        let (x, t, d) = ([0.3, -0.2], 0.37, 1e-4);
        let u = |y: Point| ExactSolution::value(&p, y, t);
        let lap = (u([x[0] + d, x[1]]) + u([x[0] - d, x[1]]) + u([x[0], x[1] + d]) + u([x[0], x[1] - d]) - 4.0 * u(x))
            / (d * d);
        let f = p.time_derivative(x, t) - lap;
        assert!((Forcing::value(&p, x, t) - f).abs() < 1e-5 * (1.0 + f.abs()));
        let sep: f64 = (0..2).map(|k| p.time_factor(k, t) * p.space_factor(k, x)).sum();
        assert!((sep - Forcing::value(&p, x, t)).abs() < 1e-12);
    }

    #[test]
    fn eoc_of_power_law() {
        let h = [0.5, 0.25, 0.125];
        let e: Vec<f64> = h.iter().map(|h| 3.0 * h * h).collect();
        assert!(eoc(&e, &h).iter().all(|r| (r - 2.0).abs() < 1e-12));
    }

    #[test]
    fn preset_parameters() {
        let p = preset("1").unwrap();
        let (h, tau) = p.run_parameters(3);
        assert_eq!(h, 0.125);
        assert!((tau - 0.04 / 16.0).abs() < 1e-15);
        assert!(preset("9").is_err());
    }

    #[test]
    fn schedule_parsing() {
        let s = parse_schedule("# comment\n5 1\n2 2 0.0 0.0 0.5\n").unwrap();
        assert_eq!(s[0], MeshChange { step: 2, levels: 2, disk: Some([0.0, 0.0, 0.5]) });
        assert!(parse_schedule("1 2 3").is_err());
    }
}
