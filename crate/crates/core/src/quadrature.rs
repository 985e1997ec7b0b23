//! Quadrature on the reference triangle `{(x, y): x, y >= 0, x + y <= 1}`
//! and on the unit interval.

use crate::error::{Error, Result};

/// Highest supported exactness on triangles.
pub const MAX_TRIANGLE_EXACTNESS: usize = 30;
/// Highest supported exactness on segments.
pub const MAX_SEGMENT_EXACTNESS: usize = 61;

/// Rule on the reference triangle; weights sum to its area `1/2`.
#[derive(Clone, Debug)]
pub struct TriangleRule {
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    pub exactness: usize,
}

impl TriangleRule {
    /// Barycentric coordinates `(1 - x - y, x, y)` of each point.
    pub fn barycentric(&self) -> Vec<[f64; 3]> {
        self.points.iter().map(|p| [1.0 - p[0] - p[1], p[0], p[1]]).collect()
    }
}

/// Rule on `[0, 1]`.
#[derive(Clone, Debug)]
pub struct SegmentRule {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
    pub exactness: usize,
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let legendre = |z: f64| {
        let (mut p0, mut p1) = (1.0, z);
        for k in 2..=n {
            let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
            p0 = p1;
            p1 = p2;
        }
        (p1, n as f64 * (z * p1 - p0) / (z * z - 1.0))
    };
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(z);
            let dz = p / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre(z);
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Gauss rule on `[0, 1]` exact for polynomials of degree `exactness`.
pub fn segment_rule(exactness: usize) -> Result<SegmentRule> {
    if exactness > MAX_SEGMENT_EXACTNESS {
        return Err(Error::UnsupportedQuadrature { requested: exactness, max: MAX_SEGMENT_EXACTNESS });
    }
    let n = exactness / 2 + 1;
    let (x, w) = gauss_legendre(n);
    Ok(SegmentRule {
        points: x.iter().map(|t| 0.5 * (t + 1.0)).collect(),
        weights: w.iter().map(|v| 0.5 * v).collect(),
        exactness: 2 * n - 1,
    })
}

// Symmetric rules: (weight, orbit) where the orbit is given by barycentric
// coordinates (a, b, c) and expanded over distinct permutations. Weights
// are normalised to sum to one.
type Orbit = (f64, [f64; 3]);

const DEG1: &[Orbit] = &[(1.0, [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0])];
const DEG2: &[Orbit] = &[(1.0 / 3.0, [2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0])];
const DEG4: &[Orbit] = &[
    (0.223381589678011, [0.108103018168070, 0.445948490915965, 0.445948490915965]),
    (0.109951743655322, [0.816847572980459, 0.091576213509771, 0.091576213509771]),
];
const DEG5: &[Orbit] = &[
    (0.225, [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]),
    (0.132394152788506, [0.059715871789770, 0.470142064105115, 0.470142064105115]),
    (0.125939180544827, [0.797426985353087, 0.101286507323456, 0.101286507323456]),
];
const DEG6: &[Orbit] = &[
    (0.116786275726379, [0.501426509658179, 0.249286745170910, 0.249286745170910]),
    (0.050844906370207, [0.873821971016996, 0.063089014491502, 0.063089014491502]),
    (0.082851075618374, [0.053145049844817, 0.310352451033784, 0.636502499121399]),
];
const DEG8: &[Orbit] = &[
    (0.144315607677787, [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]),
    (0.095091634267285, [0.081414823414554, 0.459292588292723, 0.459292588292723]),
    (0.103217370534718, [0.658861384496480, 0.170569307751760, 0.170569307751760]),
    (0.032458497623198, [0.898905543365938, 0.050547228317031, 0.050547228317031]),
    (0.027230314174435, [0.008394777409958, 0.263112829634638, 0.728492392955404]),
];

fn expand(orbits: &[Orbit], exactness: usize) -> TriangleRule {
    let mut points = Vec::new();
    let mut weights = Vec::new();
    for &(w, [a, b, c]) in orbits {
        let mut uniq: Vec<[f64; 3]> = Vec::new();
        for p in [[a, b, c], [b, c, a], [c, a, b], [a, c, b], [c, b, a], [b, a, c]] {
            if !uniq.contains(&p) {
                uniq.push(p);
            }
        }
        for p in &uniq {
            points.push([p[1], p[2]]);
            weights.push(w);
        }
    }
    // Constants carry 15 digits; renormalise so that constants integrate exactly.
    let s: f64 = weights.iter().sum();
    let weights = weights.into_iter().map(|w| 0.5 * w / s).collect();
    TriangleRule { points, weights, exactness }
}

/// Collapsed (Duffy) tensor Gauss rule of arbitrary exactness.
fn conical(exactness: usize) -> TriangleRule {
    let n = exactness / 2 + 2;
    let (x, w) = gauss_legendre(n);
    let mut points = Vec::with_capacity(n * n);
    let mut weights = Vec::with_capacity(n * n);
    for i in 0..n {
        let u = 0.5 * (x[i] + 1.0);
        for j in 0..n {
            let v = 0.5 * (x[j] + 1.0);
            points.push([u, v * (1.0 - u)]);
            weights.push(0.25 * w[i] * w[j] * (1.0 - u));
        }
    }
    TriangleRule { points, weights, exactness }
}

/// Symmetric rule on the reference triangle exact for polynomials of total
/// degree `exactness`.
pub fn triangle_rule(exactness: usize) -> Result<TriangleRule> {
    Ok(match exactness {
        0 | 1 => expand(DEG1, 1),
        2 => expand(DEG2, 2),
        3 | 4 => expand(DEG4, 4),
        5 => expand(DEG5, 5),
        6 => expand(DEG6, 6),
        7 | 8 => expand(DEG8, 8),
        e if e <= MAX_TRIANGLE_EXACTNESS => conical(e),
        e => return Err(Error::UnsupportedQuadrature { requested: e, max: MAX_TRIANGLE_EXACTNESS }),
    })
}
