use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use parabest::assembly::{load_vector, mass_matrix, stiffness_matrix, CoefficientMatrix, SparseSymmetricMatrix};
use parabest::benchmark::{run_single, BenchmarkProblem, ErrorTracker, ExactSolution, MeshChange, ProblemKind, RunConfig};
use parabest::checks::{base_mesh, random_coefficient, random_refinement};
use parabest::estimators::{
    weighted_edge_norm, weighted_norm, Accumulator, ConstantsTable, EstimatorEngine, LevelEstimators, StepEstimators,
};
use parabest::evolution::{Discretization, FnForcing, Forcing, InitialOperator, Options, ScaledForcing, TimeSlabState};
use parabest::fespace::{EdgeField, ElementField, FiniteElementSpace};
use parabest::quadrature::triangle_rule;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dense(m: &SparseSymmetricMatrix) -> DMatrix<f64> {
    let d = m.to_dense();
    DMatrix::from_fn(m.n(), m.n(), |i, j| d[i][j])
}

fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let n: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    d / n.max(1e-300)
}

fn bump(x: [f64; 2]) -> f64 {
    (1.0 - x[0] * x[0]) * (1.0 - x[1] * x[1]) * (1.0 + 0.5 * x[0])
}

fn source(x: [f64; 2], t: f64) -> f64 {
    (1.0 + t) * (2.0 * x[0]).cos() * (x[1] + 0.3).sin()
}

/// `f = t g` with `g = x^2 + y`, in separated form.
struct Linear;

impl Forcing for Linear {
    fn value(&self, x: [f64; 2], t: f64) -> f64 {
        t * (x[0] * x[0] + x[1])
    }
    fn separated_terms(&self) -> usize {
        1
    }
    fn time_factor(&self, _k: usize, t: f64) -> f64 {
        t
    }
    fn space_factor(&self, _k: usize, x: [f64; 2]) -> f64 {
        x[0] * x[0] + x[1]
    }
}

#[test]
fn step_matches_dense_solve() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for degree in [1, 2] {
        let coarse = Arc::new(random_refinement(&mut rng, &base_mesh(), 2));
        let a = random_coefficient(&mut rng);
        let disc = Discretization::new(a, Arc::new(FnForcing(source)), Options::default());
        let tau = 0.07;
        // same mesh, then a refinement of it
        let fine = Arc::new(random_refinement(&mut rng, &coarse, 2));
        let cs = FiniteElementSpace::new(coarse, degree).unwrap();
        let fs = FiniteElementSpace::new(fine, degree).unwrap();
        let s0 = disc.initial_state(&cs, bump, InitialOperator::Interpolation, 0.0).unwrap();
        let s1 = disc.step(&s0, &cs, tau).unwrap();
        let s2 = disc.step(&s1, &fs, tau).unwrap();
        for (prev, cur) in [(&s0, &s1), (&s1, &s2)] {
            let space = cur.space();
            let m = dense(&mass_matrix(space));
            let k = dense(&stiffness_matrix(space, &a));
            let b = load_vector(space, |x| source(x, cur.t), disc.load_exactness(degree)).unwrap();
            let prev_here = space.restrict(&prev.u.transfer(space).unwrap().coeffs);
            let rhs = &m * DVector::from_vec(prev_here) + tau * DVector::from_vec(space.restrict(&b));
            let expected = (m + tau * k).cholesky().unwrap().solve(&rhs);
            let got = space.restrict(&cur.u.coeffs);
            let err = rel_diff(&got, expected.as_slice());
            assert!(err < 1e-11, "P{degree} step {}: {err}", cur.n);
        }
    }
}

#[test]
fn zero_data_gives_zero_everything() {
    let disc = Arc::new(Discretization::new(CoefficientMatrix::identity(), Arc::new(FnForcing(|_, _| 0.0)), Options::default()));
    let engine = EstimatorEngine::new(disc.clone(), ConstantsTable::new(1.0, 1.0));
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let base = base_mesh();
    let f = FiniteElementSpace::new(Arc::new(random_refinement(&mut rng, &base, 3)), 2).unwrap();
    let s = FiniteElementSpace::new(Arc::new(base), 2).unwrap();
    let s0 = disc.initial_state(&s, |_| 0.0, InitialOperator::L2Projection, 0.0).unwrap();
    let s1 = disc.step(&s0, &f, 0.1).unwrap();
    let s2 = disc.step(&s1, &s, 0.1).unwrap();
    assert!(s2.u.coeffs.iter().all(|&c| c == 0.0));
    for (p, c) in [(&s0, &s1), (&s1, &s2)] {
        let e = engine.step(p, c).unwrap();
        let all = [e.level.eta_rec_inf, e.level.eta_rec_2, e.eta_space, e.theta1, e.theta2, e.eta_f1, e.eta_f2, e.gamma2];
        assert!(all.iter().all(|&v| v == 0.0), "{e:?}");
    }
}

#[test]
fn steady_state_has_vanishing_time_estimators() {
    let a = CoefficientMatrix::new([[1.5, 0.3], [0.3, 0.8]]).unwrap();
    let g = |x: [f64; 2]| 1.0 + x[0] * x[1];
    let disc = Arc::new(Discretization::new(a, Arc::new(FnForcing(move |x, _| g(x))), Options::default()));
    let engine = EstimatorEngine::new(disc.clone(), ConstantsTable::new(1.0, 1.0));
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let space = FiniteElementSpace::new(Arc::new(random_refinement(&mut rng, &base_mesh(), 2)), 1).unwrap();
    let b = load_vector(&space, g, disc.load_exactness(1)).unwrap();
    let k = dense(&stiffness_matrix(&space, &a));
    let steady = k.cholesky().unwrap().solve(&DVector::from_vec(space.restrict(&b)));
    let u = parabest::fespace::FeFunction::from_free(&space, steady.as_slice());
    let s0 = disc.initial_state(&space, |x| u.evaluate(x).unwrap(), InitialOperator::Interpolation, 0.0).unwrap();
    let s1 = disc.step(&s0, &space, 0.2).unwrap();
    assert!(rel_diff(&s1.u.coeffs, &s0.u.coeffs) < 1e-12);
    let e = engine.step(&s0, &s1).unwrap();
    let scale = engine.level(&s1).eta_rec_2;
    assert!(e.theta1 < 1e-10 * scale && e.eta_space < 1e-10 * scale, "{e:?}");
    assert_eq!((e.eta_f1, e.eta_f2, e.eta_space_changed), (0.0, 0.0, 0.0));
}

#[test]
fn operator_jump_terms_have_fixed_ratio() {
    let disc = Arc::new(Discretization::new(CoefficientMatrix::identity(), Arc::new(FnForcing(source)), Options::default()));
    let engine = EstimatorEngine::new(disc.clone(), ConstantsTable::new(1.0, 1.0));
    let space = FiniteElementSpace::new(Arc::new(base_mesh().uniform_refine(1)), 1).unwrap();
    let s0 = disc.initial_state(&space, bump, InitialOperator::Interpolation, 0.0).unwrap();
    let s1 = disc.step(&s0, &space, 0.05).unwrap();
    let e = engine.step(&s0, &s1).unwrap();
    assert!(e.theta1 > 0.0);
    assert!((e.theta2 / e.theta1 - 2.0 / 3f64.sqrt()).abs() < 1e-14);
    assert_eq!(e.eta_space_changed, 0.0);
    assert_eq!(e.gamma1, None);
}

#[test]
fn data_estimator_of_linear_in_time_source() {
    // ||g||^2 = int (x^2 + y)^2 over [-1, 1]^2 = 32/15
    let g_norm = (32.0f64 / 15.0).sqrt();
    let tau = 0.125;
    let forcings: [Arc<dyn Forcing>; 2] = [Arc::new(Linear), Arc::new(FnForcing(|x: [f64; 2], t| Linear.value(x, t)))];
    for forcing in forcings {
        let disc = Arc::new(Discretization::new(CoefficientMatrix::identity(), forcing, Options::default()));
        let engine = EstimatorEngine::new(disc.clone(), ConstantsTable::new(1.0, 1.0));
        let space = FiniteElementSpace::new(Arc::new(base_mesh().uniform_refine(1)), 2).unwrap();
        let s0 = disc.initial_state(&space, bump, InitialOperator::Interpolation, 0.0).unwrap();
        let s1 = disc.step(&s0, &space, tau).unwrap();
        let s2 = disc.step(&s1, &space, tau).unwrap();
        let (l1, l2) = engine.data_time(&s2).unwrap();
        assert!((l1 - 0.5 * tau * g_norm).abs() < 1e-12, "{l1}");
        assert!((l2 - tau / 3f64.sqrt() * g_norm).abs() < 1e-12, "{l2}");
    }
}

#[test]
fn weighted_norms_of_unit_fields() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mesh = random_refinement(&mut rng, &base_mesh(), 3);
    for degree in [1, 2] {
        let n = parabest::fespace::n_local(degree);
        let one = ElementField { degree, values: vec![1.0; n * mesh.n_elements()] };
        for p in [0.5, 1.0, 1.5, 2.0] {
            let expected: f64 = (0..mesh.n_elements()).map(|k| mesh.diameters()[k].powf(2.0 * p) * mesh.areas()[k]).sum();
            assert!((weighted_norm(&mesh, &one, p) - expected.sqrt()).abs() < 1e-13);
        }
    }
    let ramp = EdgeField { values: vec![[0.0, 1.0]; mesh.edges().len()] };
    let hs = mesh.meshsize();
    let expected: f64 = mesh.interior_edges().iter().map(|&e| hs.edge[e].powf(3.0) * mesh.edge_length(e) / 3.0).sum();
    assert!((weighted_edge_norm(&mesh, &ramp, 1.5) - expected.sqrt()).abs() < 1e-13);
}

#[test]
fn estimators_are_homogeneous_in_the_data() {
    let lambda = 3.7;
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let base = base_mesh();
    let coarse = FiniteElementSpace::new(Arc::new(random_refinement(&mut rng, &base, 2)), 2).unwrap();
    let fine = FiniteElementSpace::new(Arc::new(random_refinement(&mut rng, &base, 3)), 2).unwrap();
    let a = random_coefficient(&mut rng);
    let base: Arc<dyn Forcing> = Arc::new(FnForcing(source));
    let run = |forcing: Arc<dyn Forcing>, scale: f64| {
        let disc = Arc::new(Discretization::new(a, forcing, Options::default()));
        let engine = EstimatorEngine::new(disc.clone(), ConstantsTable::new(1.0, 1.0));
        let s0 = disc.initial_state(&coarse, |x| scale * bump(x), InitialOperator::Interpolation, 0.0).unwrap();
        let s1 = disc.step(&s0, &fine, 0.1).unwrap();
        let s2 = disc.step(&s1, &coarse, 0.1).unwrap();
        let e = engine.step(&s1, &s2).unwrap();
        (s2.u.coeffs.clone(), e)
    };
    let (u, e) = run(base.clone(), 1.0);
    let (v, f) = run(Arc::new(ScaledForcing { inner: base, factor: lambda }), lambda);
    let scaled: Vec<f64> = u.iter().map(|x| lambda * x).collect();
    assert!(rel_diff(&v, &scaled) < 1e-12);
    let pairs = [
        (e.level.eta_rec_inf, f.level.eta_rec_inf),
        (e.level.eta_rec_2, f.level.eta_rec_2),
        (e.eta_space, f.eta_space),
        (e.eta_space_changed, f.eta_space_changed),
        (e.theta1, f.theta1),
        (e.eta_f1, f.eta_f1),
        (e.gamma2, f.gamma2),
        (e.gamma1.unwrap(), f.gamma1.unwrap()),
    ];
    for (i, (x, y)) in pairs.into_iter().enumerate() {
        assert!(x > 0.0 && (lambda * x - y).abs() <= 1e-10 * y, "term {i}: {x} {y}");
    }
}

#[test]
fn tracker_initial_error_matches_quadrature() {
    let problem = BenchmarkProblem::new(ProblemKind::Slow);
    let options = Options { norm_exactness: 12, ..Options::default() };
    let disc = Arc::new(Discretization::new(CoefficientMatrix::identity(), Arc::new(problem), options));
    let space = FiniteElementSpace::new(Arc::new(base_mesh().uniform_refine(2)), 1).unwrap();
    let t = 0.3;
    let s = disc.initial_state(&space, |x| ExactSolution::value(&problem, x, t), InitialOperator::Interpolation, t).unwrap();
    let mut tracker = ErrorTracker::new(disc, Arc::new(problem));
    let (l2, energy) = tracker.level_error(&s).unwrap();
    let rule = triangle_rule(12).unwrap();
    let (mut e0, mut e1) = (0.0, 0.0);
    for k in 0..space.mesh().n_elements() {
        let geom = space.geometry(k);
        for (l, w) in rule.barycentric().iter().zip(&rule.weights) {
            let x = geom.map(*l);
            let d = s.u.value_in(k, *l) - ExactSolution::value(&problem, x, t);
            let gu = s.u.gradient_in(k, &geom, *l);
            let ge = problem.gradient(x, t);
            e0 += 2.0 * w * geom.area * d * d;
            e1 += 2.0 * w * geom.area * ((gu[0] - ge[0]).powi(2) + (gu[1] - ge[1]).powi(2));
        }
    }
    assert!((l2 - e0.sqrt()).abs() < 1e-10 * l2, "{l2} {}", e0.sqrt());
    assert!((energy - e1.sqrt()).abs() < 1e-10 * energy, "{energy} {}", e1.sqrt());
}

fn small_config(force_general: bool) -> RunConfig {
    RunConfig {
        label: "small".into(),
        index: 1,
        problem: BenchmarkProblem::new(ProblemKind::Slow),
        degree: 2,
        h: 0.5,
        tau: 0.125,
        constants: ConstantsTable::new(1.0, 1.0),
        options: Options { force_general, ..Options::default() },
        initial: InitialOperator::Interpolation,
        schedule: vec![
            MeshChange { step: 3, levels: 1, disk: Some([0.2, -0.1, 0.6]) },
            MeshChange { step: 5, levels: 0, disk: None },
        ],
        check_operator: false,
    }
}

#[test]
fn shortcuts_agree_with_general_path() {
    let fast = run_single(&small_config(false)).unwrap();
    let slow = run_single(&small_config(true)).unwrap();
    assert_eq!(fast.rows.len(), 8);
    for (a, b) in fast.rows.iter().zip(&slow.rows) {
        let x = [a.errors.linf_l2, a.errors.l2_h1, a.errors.h1_l2, a.totals.total_linf_l2, a.totals.total_l2_h1, a.totals.high_total_h1l2];
        let y = [b.errors.linf_l2, b.errors.l2_h1, b.errors.h1_l2, b.totals.total_linf_l2, b.totals.total_l2_h1, b.totals.high_total_h1l2];
        assert!(rel_diff(&x, &y) < 1e-8, "step {}: {x:?} {y:?}", a.n);
    }
}

#[test]
fn runs_are_deterministic() {
    let a = run_single(&small_config(false)).unwrap();
    let b = run_single(&small_config(false)).unwrap();
    for (x, y) in a.rows.iter().zip(&b.rows) {
        assert_eq!((x.errors, x.estimators, x.totals), (y.errors, y.estimators, y.totals));
    }
}

#[test]
fn checkpoint_keeps_the_solution() {
    let problem = BenchmarkProblem::new(ProblemKind::Fast);
    let disc = Discretization::new(CoefficientMatrix::identity(), Arc::new(problem), Options::default());
    let space = FiniteElementSpace::new(Arc::new(base_mesh().uniform_refine(1)), 2).unwrap();
    let s0 = disc.initial_state(&space, bump, InitialOperator::Interpolation, 0.0).unwrap();
    let s1 = disc.step(&s0, &space, 0.1).unwrap();
    let back = TimeSlabState::load(&s1.dump(), &disc, Some(space.mesh().forest())).unwrap();
    assert_eq!(back.u.coeffs, s1.u.coeffs);
    let (a, b) = (disc.step(&s1, &space, 0.1).unwrap(), disc.step(&back, &space, 0.1).unwrap());
    assert!(rel_diff(&b.u.coeffs, &a.u.coeffs) < 1e-14);
}

fn level(rng: &mut impl Rng) -> LevelEstimators {
    LevelEstimators { eta_rec_inf: rng.random_range(0.0..1.0), eta_rec_2: rng.random_range(0.0..1.0) }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Totals against a direct re-summation of the step records.
    #[test]
    fn accumulator_matches_resummation(seed in any::<u64>(), steps in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let consts = ConstantsTable::new(1.0, 1.0);
        let l0 = level(&mut rng);
        let (i2, ia) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
        let mut acc = Accumulator::new(&consts, l0, i2, ia);
        let mut rec: Vec<StepEstimators> = Vec::new();
        let mut totals = acc.totals;
        for n in 1..=steps {
            let s = StepEstimators {
                n,
                t: 0.0,
                tau: rng.random_range(0.01..0.2),
                level: level(&mut rng),
                eta_space: rng.random_range(0.0..1.0),
                eta_space_changed: 0.0,
                theta1: rng.random_range(0.0..1.0),
                theta2: rng.random_range(0.0..1.0),
                eta_f1: rng.random_range(0.0..1.0),
                eta_f2: rng.random_range(0.0..1.0),
                gamma2: rng.random_range(0.0..1.0),
                gamma1: if n > 1 { Some(rng.random_range(0.0..1.0)) } else { None },
                bisections: 0,
            };
            totals = acc.push(&s);
            rec.push(s);
        }
        let sum = |f: &dyn Fn(&StepEstimators) -> f64| rec.iter().map(f).sum::<f64>();
        let max_inf = rec.iter().map(|s| s.level.eta_rec_inf).fold(l0.eta_rec_inf, f64::max);
        let e1 = sum(&|s| s.tau * (s.theta1 + s.eta_f1 + s.eta_space));
        let e2 = sum(&|s| s.tau * s.gamma2 * s.gamma2).sqrt();
        let mut pairs = 0.0;
        let mut prev = l0.eta_rec_2;
        for s in &rec {
            pairs += s.tau * (s.level.eta_rec_2.powi(2) + prev * prev);
            prev = s.level.eta_rec_2;
        }
        let init = l0.eta_rec_inf + i2;
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * b.abs().max(1.0);
        prop_assert!(close(totals.total_linf_l2, init + max_inf + 4.0 * e1.hypot(e2)));
        prop_assert!(close(totals.total_l2_h1, init + pairs.sqrt() + 4.0 * e1.hypot(e2)));
        let eta2 = (rec[0].tau * l0.eta_rec_2.powi(2) + sum(&|s| s.tau * s.level.eta_rec_2.powi(2))).sqrt();
        prop_assert!(close(totals.eta_rec_2_acc, eta2));
        let g_max = rec.iter().map(|s| s.gamma2).fold(0.0, f64::max);
        let e1h = 2.0 * g_max + sum(&|s| s.tau * s.gamma1.unwrap_or(0.0));
        let e2h = sum(&|s| s.tau * (s.theta2.powi(2) + s.eta_f2.powi(2) + s.eta_space.powi(2))).sqrt();
        let space = sum(&|s| s.tau * s.eta_space.powi(2)).sqrt();
        prop_assert!(close(totals.high_total_h1l2, l0.eta_rec_2 + ia + 4.0 * e1h.hypot(e2h) + space));
        prop_assert!(close(totals.linf_l2_denominator(), max_inf + sum(&|s| s.tau * (s.eta_space + s.theta1))));
    }

    #[test]
    fn single_step_totals(eta in 0.0f64..10.0, tau in 0.001f64..1.0) {
        // one step with a unit time term and nothing else
        let mut acc = Accumulator::new(&ConstantsTable::new(1.0, 1.0), LevelEstimators::default(), 0.0, 0.0);
        let s = StepEstimators { tau, theta1: 1.0 / tau, level: LevelEstimators { eta_rec_inf: eta, eta_rec_2: 0.0 }, ..Default::default() };
        let t = acc.push(&s);
        prop_assert!((t.total_linf_l2 - (eta + 4.0)).abs() < 1e-12 * (eta + 4.0));
    }
}
