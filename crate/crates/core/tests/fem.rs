use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use parabest::assembly::{
    load_vector, mass_matrix_all, solve_spd, stiffness_matrix_all, system_matrix, CoefficientMatrix, SparseSymmetricMatrix,
};
use parabest::checks::{base_mesh, random_coefficient, random_pair, random_refinement};
use parabest::fespace::{FeFunction, FiniteElementSpace};
use parabest::mesh::{Rectangle, Triangulation};
use parabest::quadrature::triangle_rule;
use parabest::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dense(m: &SparseSymmetricMatrix) -> DMatrix<f64> {
    let d = m.to_dense();
    DMatrix::from_fn(m.n(), m.n(), |i, j| d[i][j])
}

/// Nodal interpolant including boundary dofs.
fn nodal(space: &Arc<FiniteElementSpace>, g: impl Fn([f64; 2]) -> f64) -> FeFunction {
    FeFunction { space: space.clone(), coeffs: space.dof_coords().iter().map(|&x| g(x)).collect() }
}

fn l2_error(v: &FeFunction, g: impl Fn([f64; 2]) -> f64) -> f64 {
    let rule = triangle_rule(10).unwrap();
    let mut s = 0.0;
    for k in 0..v.space.mesh().n_elements() {
        let geom = v.space.geometry(k);
        for (l, w) in rule.barycentric().iter().zip(&rule.weights) {
            let d = v.value_in(k, *l) - g(geom.map(*l));
            s += 2.0 * w * geom.area * d * d;
        }
    }
    s.sqrt()
}

#[test]
fn macro_and_uniform_counts() {
    for s in 1..4 {
        let m = Triangulation::build_macro(Rectangle::square(0.0, 1.0), s).unwrap();
        for l in 0..3 {
            let r = m.uniform_refine(l);
            let cells = s << l;
            assert_eq!(r.n_elements(), 2 * cells * cells);
            assert_eq!(r.n_vertices(), (cells + 1) * (cells + 1));
            assert!((r.max_diameter() - 2f64.sqrt() / cells as f64).abs() < 1e-14);
            r.check_conformity().unwrap();
        }
    }
}

#[test]
fn bisecting_nothing_changes_nothing() {
    let m = base_mesh();
    assert_eq!(m.bisect_marked(&[]).unwrap(), m);
    assert!(m.bisect_marked(&[m.n_elements()]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn edge_sets_are_symmetric(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = random_pair(&mut rng);
        let ab = Triangulation::edge_sets(&a, &b).unwrap();
        let ba = Triangulation::edge_sets(&b, &a).unwrap();
        prop_assert_eq!(&ab, &ba);
        prop_assert_eq!(ab.common.len() + ab.changed.len(), ab.union.len());
        for e in &ab.common {
            prop_assert!(a.find_edge(e.0, e.1).is_some() && b.find_edge(e.0, e.1).is_some());
        }
        prop_assert!(Triangulation::edge_sets(&a, &a).unwrap().changed.is_empty());
    }

    #[test]
    fn load_of_polynomial_is_mass_times_interpolant(seed in any::<u64>(), degree in 1usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mesh = Arc::new(random_refinement(&mut rng, &base_mesh(), 2));
        let space = FiniteElementSpace::new(mesh, degree).unwrap();
        let c: [f64; 6] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let g = move |x: [f64; 2]| {
            let q = if degree == 2 { c[3] * x[0] * x[0] + c[4] * x[0] * x[1] + c[5] * x[1] * x[1] } else { 0.0 };
            c[0] + c[1] * x[0] + c[2] * x[1] + q
        };
        let b = load_vector(&space, g, 2 * degree).unwrap();
        let mb = mass_matrix_all(&space).matvec(&nodal(&space, g).coeffs);
        for (x, y) in b.iter().zip(&mb) {
            prop_assert!((x - y).abs() < 1e-13);
        }
    }

    #[test]
    fn stiffness_annihilates_linears_at_interior_dofs(seed in any::<u64>(), degree in 1usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mesh = Arc::new(random_refinement(&mut rng, &base_mesh(), 2));
        let space = FiniteElementSpace::new(mesh, degree).unwrap();
        let a = random_coefficient(&mut rng);
        let (p, q) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let kv = stiffness_matrix_all(&space, &a).matvec(&nodal(&space, |x| 1.0 + p * x[0] + q * x[1]).coeffs);
        for &d in space.free_dofs() {
            prop_assert!(kv[d].abs() < 1e-12);
        }
    }
}

#[test]
fn mass_matrix_of_two_unit_triangles() {
    // [0, 1]^2 split along one diagonal: two reference triangles of area 1/2
    let mesh = Arc::new(Triangulation::build_macro(Rectangle::square(0.0, 1.0), 1).unwrap());
    let space = FiniteElementSpace::new(mesh.clone(), 1).unwrap();
    let m = mass_matrix_all(&space).to_dense();
    let mut expected = vec![vec![0.0; 4]; 4];
    for el in mesh.elements() {
        for &i in el {
            for &j in el {
                expected[i][j] += if i == j { 1.0 / 12.0 } else { 1.0 / 24.0 };
            }
        }
    }
    for i in 0..4 {
        for j in 0..4 {
            assert!((m[i][j] - expected[i][j]).abs() < 1e-15, "({i}, {j})");
        }
    }
}

#[test]
fn hat_functions_are_nodal() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mesh = Arc::new(random_refinement(&mut rng, &base_mesh(), 3));
    let space = FiniteElementSpace::new(mesh, 1).unwrap();
    for &d in space.free_dofs().iter().step_by(5) {
        let mut hat = FeFunction::zeros(&space);
        hat.coeffs[d] = 1.0;
        for (j, x) in space.dof_coords().iter().enumerate() {
            let v = hat.evaluate(*x).unwrap();
            assert!((v - if j == d { 1.0 } else { 0.0 }).abs() < 1e-12);
        }
        for _ in 0..20 {
            let x = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let v = hat.evaluate(x).unwrap();
            assert!((-1e-12..=1.0 + 1e-12).contains(&v));
        }
    }
    assert!(matches!(FeFunction::zeros(&space).evaluate([2.0, 0.0]), Err(Error::PointOutsideDomain(..))));
}

#[test]
fn interpolation_orders() {
    let pi = std::f64::consts::PI;
    let g = |x: [f64; 2]| (pi * x[0]).sin() * (pi * x[1]).sin() * (x[1] + 0.5).exp();
    for (degree, order) in [(1, 2.0), (2, 3.0)] {
        let errs: Vec<f64> = (2..5)
            .map(|l| {
                let mesh = Arc::new(base_mesh().uniform_refine(l));
                l2_error(&FiniteElementSpace::new(mesh, degree).unwrap().interpolate(g), g)
            })
            .collect();
        let rate = (errs[1] / errs[2]).log2();
        assert!((rate - order).abs() < 0.1, "P{degree}: rate {rate}");
    }
}

#[test]
fn transfer_between_meshes() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let coarse = Arc::new(base_mesh());
    let fine = Arc::new(random_refinement(&mut rng, &coarse, 3));
    let g = |x: [f64; 2]| (1.0 - x[0] * x[0]) * (1.0 + x[1]);
    for degree in [1, 2] {
        let cs = FiniteElementSpace::new(coarse.clone(), degree).unwrap();
        let fs = FiniteElementSpace::new(fine.clone(), degree).unwrap();
        let v = cs.interpolate(g);
        let w = v.transfer(&fs).unwrap();
        for _ in 0..30 {
            let x = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            assert!((v.evaluate(x).unwrap() - w.evaluate(x).unwrap()).abs() < 1e-12);
        }
        assert!(matches!(w.transfer(&cs), Err(Error::NonNestedTransfer)));
    }
}

#[test]
fn cubic_elements_are_rejected() {
    let mesh = Arc::new(base_mesh());
    assert!(matches!(FiniteElementSpace::new(mesh, 3), Err(Error::UnsupportedDegree(3))));
}

#[test]
fn sparse_solver_agrees_with_dense_cholesky() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for degree in [1, 2] {
        let mesh = Arc::new(random_refinement(&mut rng, &base_mesh(), 3));
        let space = FiniteElementSpace::new(mesh, degree).unwrap();
        let a = random_coefficient(&mut rng);
        let tau = rng.random_range(0.001..0.5);
        let m = system_matrix(&space, &a, tau);
        assert!(m.is_symmetric(1e-14));
        let rhs: Vec<f64> = (0..m.n()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = solve_spd(&m, &rhs, 1e-12).unwrap();
        let y = dense(&m).cholesky().expect("spd").solve(&DVector::from_vec(rhs));
        let err = x.iter().zip(y.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(err <= 1e-10 * y.norm(), "P{degree}: {err}");
    }
}

#[test]
fn indefinite_coefficient_is_rejected() {
    assert!(CoefficientMatrix::new([[1.0, 2.0], [2.0, 1.0]]).is_err());
    assert!(CoefficientMatrix::new([[1.0, 0.5], [0.0, 1.0]]).is_err());
}
