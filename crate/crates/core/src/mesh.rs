//! Conforming triangulations obtained from a macro triangulation by
//! newest-vertex bisection.
//!
//! All meshes derived from one macro share a [`Forest`] of bisection trees.
//! Triangles are stored as `(a, b, c)` where `(a, b)` is the refinement edge
//! and `c` the newest vertex. Bisecting creates the midpoint `m` of `(a, b)`
//! and the children `(c, a, m)` and `(b, c, m)`; the orientation of the parent
//! is preserved. A triangulation is a set of forest leaves, so refinement,
//! coarsening and the lattice operations only ever manipulate node ids.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock, RwLockReadGuard};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

static NEXT_FOREST: AtomicU64 = AtomicU64::new(1);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub u32);

#[derive(Clone, Debug)]
pub struct Node {
    pub verts: [u32; 3],
    pub parent: Option<NodeId>,
    pub children: Option<[NodeId; 2]>,
    pub level: u16,
}

#[derive(Debug, Default)]
pub struct ForestData {
    pub vertices: Vec<Point>,
    pub nodes: Vec<Node>,
    pub roots: usize,
    midpoints: HashMap<(u32, u32), u32>,
    boundary: HashSet<(u32, u32)>,
}

impl ForestData {
    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0 as usize]
    }

    pub fn is_boundary_edge(&self, a: u32, b: u32) -> bool {
        self.boundary.contains(&edge_key(a, b))
    }

    /// Strict ancestors of `id`, nearest first.
    pub fn ancestors(&self, id: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        let mut cur = self.node(id).parent;
        std::iter::from_fn(move || {
            let out = cur?;
            cur = self.node(out).parent;
            Some(out)
        })
    }

    fn contains(&self, id: NodeId, x: Point) -> f64 {
        let v = self.node(id).verts.map(|i| self.vertices[i as usize]);
        barycentric(&v, x).into_iter().fold(f64::INFINITY, f64::min)
    }
}

/// Shared bisection forest over a fixed macro triangulation.
#[derive(Debug)]
pub struct Forest {
    uid: u64,
    label: String,
    data: RwLock<ForestData>,
}

impl Forest {
    fn new(label: String, vertices: Vec<Point>, tris: &[[u32; 3]], boundary: &[(u32, u32)]) -> Self {
        let nodes = tris
            .iter()
            .map(|&verts| Node { verts, parent: None, children: None, level: 0 })
            .collect();
        let data = ForestData {
            vertices,
            nodes,
            roots: tris.len(),
            midpoints: HashMap::new(),
            boundary: boundary.iter().map(|&(a, b)| edge_key(a, b)).collect(),
        };
        Forest { uid: NEXT_FOREST.fetch_add(1, Ordering::Relaxed), label, data: RwLock::new(data) }
    }

    pub fn uid(&self) -> u64 {
        self.uid
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn read(&self) -> RwLockReadGuard<'_, ForestData> {
        self.data.read().expect("forest lock poisoned")
    }

    /// Bisect a node, reusing existing children.
    pub fn bisect(&self, id: NodeId) -> [NodeId; 2] {
        if let Some(ch) = self.read().node(id).children {
            return ch;
        }
        let mut d = self.data.write().expect("forest lock poisoned");
        if let Some(ch) = d.node(id).children {
            return ch;
        }
        let Node { verts: [a, b, c], level, .. } = d.node(id).clone();
        let key = edge_key(a, b);
        let m = match d.midpoints.get(&key) {
            Some(&m) => m,
            None => {
                let (pa, pb) = (d.vertices[a as usize], d.vertices[b as usize]);
                let m = d.vertices.len() as u32;
                d.vertices.push([0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]);
                d.midpoints.insert(key, m);
                if d.boundary.contains(&key) {
                    d.boundary.insert(edge_key(a, m));
                    d.boundary.insert(edge_key(m, b));
                }
                m
            }
        };
        let first = NodeId(d.nodes.len() as u32);
        let second = NodeId(first.0 + 1);
        for verts in [[c, a, m], [b, c, m]] {
            d.nodes.push(Node { verts, parent: Some(id), children: None, level: level + 1 });
        }
        d.nodes[id.0 as usize].children = Some([first, second]);
        [first, second]
    }
}

pub fn edge_key(a: u32, b: u32) -> (u32, u32) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Barycentric coordinates of `x` with respect to the triangle `v`.
pub fn barycentric(v: &[Point; 3], x: Point) -> [f64; 3] {
    let d = (v[1][0] - v[0][0]) * (v[2][1] - v[0][1]) - (v[2][0] - v[0][0]) * (v[1][1] - v[0][1]);
    let l1 = ((x[0] - v[0][0]) * (v[2][1] - v[0][1]) - (v[2][0] - v[0][0]) * (x[1] - v[0][1])) / d;
    let l2 = ((v[1][0] - v[0][0]) * (x[1] - v[0][1]) - (x[0] - v[0][0]) * (v[1][1] - v[0][1])) / d;
    [1.0 - l1 - l2, l1, l2]
}

pub fn triangle_area(v: &[Point; 3]) -> f64 {
    0.5 * ((v[1][0] - v[0][0]) * (v[2][1] - v[0][1]) - (v[2][0] - v[0][0]) * (v[1][1] - v[0][1]))
}

fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Axis-aligned rectangle `[x0, x1] x [y0, y1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rectangle {
    pub min: Point,
    pub max: Point,
}

impl Rectangle {
    pub fn square(a: f64, b: f64) -> Self {
        Rectangle { min: [a, a], max: [b, b] }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeshEdge {
    /// Local vertex indices ordered by increasing global id.
    pub vertices: [usize; 2],
    /// Adjacent elements; the second is `None` on the boundary.
    pub elements: [Option<usize>; 2],
    pub on_boundary: bool,
}

/// Conforming triangulation made of forest leaves.
#[derive(Clone, Debug)]
pub struct Triangulation {
    forest: Arc<Forest>,
    leaves: Vec<NodeId>,
    leaf_index: HashMap<NodeId, usize>,
    vertices: Vec<Point>,
    global_vertex: Vec<u32>,
    elements: Vec<[usize; 3]>,
    levels: Vec<u16>,
    parents: Vec<Option<NodeId>>,
    edges: Vec<MeshEdge>,
    edge_lookup: HashMap<(u32, u32), usize>,
    element_edges: Vec<[usize; 3]>,
    interior_edges: Vec<usize>,
    boundary_edges: Vec<usize>,
    boundary_vertex: Vec<bool>,
    diameters: Vec<f64>,
    areas: Vec<f64>,
}

impl PartialEq for Triangulation {
    fn eq(&self, other: &Self) -> bool {
        self.forest.uid == other.forest.uid && self.leaves == other.leaves
    }
}

/// Classification of mesh skeleton edges between two consecutive meshes.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EdgeSets {
    /// Interior edges present in both meshes.
    pub common: Vec<(u32, u32)>,
    /// Interior edges present in at least one mesh.
    pub union: Vec<(u32, u32)>,
    /// `union \ common`.
    pub changed: Vec<(u32, u32)>,
}

/// Piecewise constant local meshsize.
#[derive(Clone, Debug)]
pub struct MeshsizeFunction {
    pub element: Vec<f64>,
    pub edge: Vec<f64>,
}

impl Triangulation {
    /// Macro triangulation of a rectangle: `s x s` cells, each split by one
    /// diagonal, alternating between neighbouring cells. The diagonal is the
    /// refinement edge of both halves.
    pub fn build_macro(domain: Rectangle, subdivisions: usize) -> Result<Self> {
        let s = subdivisions;
        if s == 0 {
            return Err(Error::InvalidArgument("subdivisions must be positive".into()));
        }
        if !(domain.max[0] > domain.min[0] && domain.max[1] > domain.min[1]) {
            return Err(Error::InvalidArgument("empty domain".into()));
        }
        let n = s + 1;
        let mut vertices = Vec::with_capacity(n * n);
        for j in 0..n {
            for i in 0..n {
                let x = domain.min[0] + (domain.max[0] - domain.min[0]) * i as f64 / s as f64;
                let y = domain.min[1] + (domain.max[1] - domain.min[1]) * j as f64 / s as f64;
                vertices.push([x, y]);
            }
        }
        let id = |i: usize, j: usize| (j * n + i) as u32;
        let mut tris = Vec::with_capacity(2 * s * s);
        for j in 0..s {
            for i in 0..s {
                let (p00, p10, p01, p11) = (id(i, j), id(i + 1, j), id(i, j + 1), id(i + 1, j + 1));
                if (i + j) % 2 == 0 {
                    tris.push([p11, p00, p10]);
                    tris.push([p00, p11, p01]);
                } else {
                    tris.push([p10, p01, p00]);
                    tris.push([p01, p10, p11]);
                }
            }
        }
        let mut boundary = Vec::new();
        for k in 0..s {
            boundary.push((id(k, 0), id(k + 1, 0)));
            boundary.push((id(k, s), id(k + 1, s)));
            boundary.push((id(0, k), id(0, k + 1)));
            boundary.push((id(s, k), id(s, k + 1)));
        }
        let label = format!(
            "rect[{},{}]x[{},{}]/{}",
            domain.min[0], domain.max[0], domain.min[1], domain.max[1], s
        );
        let forest = Arc::new(Forest::new(label, vertices, &tris, &boundary));
        let leaves = (0..tris.len() as u32).map(NodeId).collect();
        Ok(Self::from_leaves(forest, leaves))
    }

    /// Builds the mesh data for a set of leaves of `forest`.
    pub fn from_leaves(forest: Arc<Forest>, mut leaves: Vec<NodeId>) -> Self {
        leaves.sort_unstable();
        leaves.dedup();
        let d = forest.read();
        let ne = leaves.len();
        let mut local_of: HashMap<u32, usize> = HashMap::with_capacity(ne);
        let mut vertices = Vec::new();
        let mut global_vertex = Vec::new();
        let mut elements = Vec::with_capacity(ne);
        let mut levels = Vec::with_capacity(ne);
        let mut parents = Vec::with_capacity(ne);
        let mut leaf_index = HashMap::with_capacity(ne);
        for (k, &leaf) in leaves.iter().enumerate() {
            let node = d.node(leaf);
            let el = node.verts.map(|g| {
                *local_of.entry(g).or_insert_with(|| {
                    vertices.push(d.vertices[g as usize]);
                    global_vertex.push(g);
                    vertices.len() - 1
                })
            });
            elements.push(el);
            levels.push(node.level);
            parents.push(node.parent);
            leaf_index.insert(leaf, k);
        }
        let mut edges: Vec<MeshEdge> = Vec::with_capacity(3 * ne / 2 + 8);
        let mut edge_lookup = HashMap::with_capacity(3 * ne / 2 + 8);
        let mut element_edges = Vec::with_capacity(ne);
        for (k, el) in elements.iter().enumerate() {
            let mut ee = [0; 3];
            for (j, slot) in ee.iter_mut().enumerate() {
                let (a, b) = (el[j], el[(j + 1) % 3]);
                let key = edge_key(global_vertex[a], global_vertex[b]);
                let idx = *edge_lookup.entry(key).or_insert_with(|| {
                    let vs = if global_vertex[a] < global_vertex[b] { [a, b] } else { [b, a] };
                    edges.push(MeshEdge {
                        vertices: vs,
                        elements: [None, None],
                        on_boundary: d.is_boundary_edge(key.0, key.1),
                    });
                    edges.len() - 1
                });
                let e = &mut edges[idx];
                if e.elements[0].is_none() {
                    e.elements[0] = Some(k);
                } else {
                    e.elements[1] = Some(k);
                }
                *slot = idx;
            }
            element_edges.push(ee);
        }
        let mut interior_edges = Vec::new();
        let mut boundary_edges = Vec::new();
        let mut boundary_vertex = vec![false; vertices.len()];
        for (i, e) in edges.iter().enumerate() {
            if e.elements[1].is_some() {
                interior_edges.push(i);
            } else {
                boundary_edges.push(i);
                boundary_vertex[e.vertices[0]] = true;
                boundary_vertex[e.vertices[1]] = true;
            }
        }
        let mut diameters = Vec::with_capacity(ne);
        let mut areas = Vec::with_capacity(ne);
        for el in &elements {
            let p = el.map(|i| vertices[i]);
            diameters.push(dist(p[0], p[1]).max(dist(p[1], p[2])).max(dist(p[2], p[0])));
            areas.push(triangle_area(&p));
        }
        drop(d);
        Triangulation {
            forest,
            leaves,
            leaf_index,
            vertices,
            global_vertex,
            elements,
            levels,
            parents,
            edges,
            edge_lookup,
            element_edges,
            interior_edges,
            boundary_edges,
            boundary_vertex,
            diameters,
            areas,
        }
    }

    pub fn forest(&self) -> &Arc<Forest> {
        &self.forest
    }
    pub fn leaves(&self) -> &[NodeId] {
        &self.leaves
    }
    pub fn leaf_index(&self, id: NodeId) -> Option<usize> {
        self.leaf_index.get(&id).copied()
    }
    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }
    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }
    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }
    pub fn global_vertex(&self, local: usize) -> u32 {
        self.global_vertex[local]
    }
    pub fn elements(&self) -> &[[usize; 3]] {
        &self.elements
    }
    pub fn element_vertices(&self, k: usize) -> [Point; 3] {
        self.elements[k].map(|i| self.vertices[i])
    }
    pub fn levels(&self) -> &[u16] {
        &self.levels
    }
    pub fn parents(&self) -> &[Option<NodeId>] {
        &self.parents
    }
    pub fn edges(&self) -> &[MeshEdge] {
        &self.edges
    }
    pub fn element_edges(&self) -> &[[usize; 3]] {
        &self.element_edges
    }
    pub fn interior_edges(&self) -> &[usize] {
        &self.interior_edges
    }
    pub fn boundary_edges(&self) -> &[usize] {
        &self.boundary_edges
    }
    pub fn boundary_vertex(&self) -> &[bool] {
        &self.boundary_vertex
    }
    pub fn diameters(&self) -> &[f64] {
        &self.diameters
    }
    pub fn areas(&self) -> &[f64] {
        &self.areas
    }
    pub fn max_diameter(&self) -> f64 {
        self.diameters.iter().copied().fold(0.0, f64::max)
    }

    /// Edge index for a pair of global vertex ids.
    pub fn find_edge(&self, a: u32, b: u32) -> Option<usize> {
        self.edge_lookup.get(&edge_key(a, b)).copied()
    }

    pub fn edge_key_of(&self, e: usize) -> (u32, u32) {
        let [a, b] = self.edges[e].vertices;
        edge_key(self.global_vertex[a], self.global_vertex[b])
    }

    pub fn edge_length(&self, e: usize) -> f64 {
        let [a, b] = self.edges[e].vertices;
        dist(self.vertices[a], self.vertices[b])
    }

    pub fn same_forest(&self, other: &Triangulation) -> bool {
        self.forest.uid == other.forest.uid
    }

    fn require_same_forest(&self, other: &Triangulation) -> Result<()> {
        if self.same_forest(other) {
            Ok(())
        } else {
            Err(Error::IncompatibleMeshes)
        }
    }

    /// Bisects every element `2 * levels` times.
    pub fn uniform_refine(&self, levels: usize) -> Triangulation {
        let mut mesh = self.clone();
        for _ in 0..2 * levels {
            let all: Vec<usize> = (0..mesh.n_elements()).collect();
            mesh = mesh.bisect_marked(&all).expect("indices in range");
        }
        mesh
    }

    /// Bisects every marked element at least once, with the recursive
    /// conformity closure of newest-vertex bisection.
    pub fn bisect_marked(&self, marked: &[usize]) -> Result<Triangulation> {
        if let Some(&bad) = marked.iter().find(|&&k| k >= self.n_elements()) {
            return Err(Error::InvalidArgument(format!("element index {bad} out of range")));
        }
        let mut r = Refiner::new(self);
        for &k in marked {
            let id = self.leaves[k];
            if r.leaves.contains(&id) {
                r.refine(id);
            }
        }
        Ok(Triangulation::from_leaves(self.forest.clone(), r.leaves.into_iter().collect()))
    }

    /// Finest common coarsening: leaves of the intersection of both trees.
    pub fn finest_common_coarsening(&self, other: &Triangulation) -> Result<Triangulation> {
        self.require_same_forest(other)?;
        if self == other {
            return Ok(self.clone());
        }
        let d = self.forest.read();
        let anc_a = strict_ancestors(&d, &self.leaves);
        let anc_b = strict_ancestors(&d, &other.leaves);
        let mut out: Vec<NodeId> = self
            .leaves
            .iter()
            .copied()
            .filter(|n| other.leaf_index.contains_key(n) || anc_b.contains(n))
            .collect();
        out.extend(other.leaves.iter().copied().filter(|n| anc_a.contains(n)));
        drop(d);
        Ok(Triangulation::from_leaves(self.forest.clone(), out))
    }

    /// Coarsest common refinement: leaves of the union of both trees.
    pub fn coarsest_common_refinement(&self, other: &Triangulation) -> Result<Triangulation> {
        self.require_same_forest(other)?;
        if self == other {
            return Ok(self.clone());
        }
        let d = self.forest.read();
        let anc_a = strict_ancestors(&d, &self.leaves);
        let anc_b = strict_ancestors(&d, &other.leaves);
        let mut out: Vec<NodeId> = self.leaves.iter().copied().filter(|n| !anc_b.contains(n)).collect();
        out.extend(other.leaves.iter().copied().filter(|n| !anc_a.contains(n)));
        drop(d);
        Ok(Triangulation::from_leaves(self.forest.clone(), out))
    }

    /// Index of the element of `self` containing element `k` of `finer`.
    pub fn ancestor_element(&self, finer: &Triangulation, k: usize) -> Option<usize> {
        let id = finer.leaves[k];
        if let Some(i) = self.leaf_index(id) {
            return Some(i);
        }
        let d = self.forest.read();
        let found = d.ancestors(id).find_map(|a| self.leaf_index(a));
        found
    }

    /// Whether every element of `self` lies inside an element of `coarse`.
    pub fn is_refinement_of(&self, coarse: &Triangulation) -> bool {
        self.same_forest(coarse) && (0..self.n_elements()).all(|k| coarse.ancestor_element(self, k).is_some())
    }

    pub fn edge_sets(prev: &Triangulation, cur: &Triangulation) -> Result<EdgeSets> {
        prev.require_same_forest(cur)?;
        let keys = |m: &Triangulation| -> HashSet<(u32, u32)> {
            m.interior_edges.iter().map(|&e| m.edge_key_of(e)).collect()
        };
        let (a, b) = (keys(prev), keys(cur));
        let mut common: Vec<_> = a.intersection(&b).copied().collect();
        let mut union: Vec<_> = a.union(&b).copied().collect();
        let mut changed: Vec<_> = a.symmetric_difference(&b).copied().collect();
        common.sort_unstable();
        union.sort_unstable();
        changed.sort_unstable();
        Ok(EdgeSets { common, union, changed })
    }

    /// Element diameters, and for each edge the largest diameter of its
    /// adjacent elements.
    pub fn meshsize(&self) -> MeshsizeFunction {
        let edge = self
            .edges
            .iter()
            .map(|e| e.elements.iter().flatten().map(|&k| self.diameters[k]).fold(0.0, f64::max))
            .collect();
        MeshsizeFunction { element: self.diameters.clone(), edge }
    }

    /// Element containing `x`, found by descending the forest.
    pub fn locate(&self, x: Point) -> Option<usize> {
        const TOL: f64 = -1e-12;
        let d = self.forest.read();
        let mut best: Option<(f64, NodeId)> = None;
        for r in 0..d.roots as u32 {
            let m = d.contains(NodeId(r), x);
            if m >= TOL && best.is_none_or(|(b, _)| m > b) {
                best = Some((m, NodeId(r)));
            }
        }
        let (_, mut id) = best?;
        loop {
            if let Some(k) = self.leaf_index(id) {
                return Some(k);
            }
            let ch = d.node(id).children?;
            let (m0, m1) = (d.contains(ch[0], x), d.contains(ch[1], x));
            id = if m0 >= m1 { ch[0] } else { ch[1] };
        }
    }

    /// Checks that the elements tile the macro domain without hanging nodes.
    pub fn check_conformity(&self) -> Result<()> {
        let d = self.forest.read();
        let mut seen = HashSet::new();
        for &leaf in &self.leaves {
            for a in d.ancestors(leaf) {
                if self.leaf_index.contains_key(&a) {
                    return Err(Error::NonConforming(format!("element {} is an ancestor of {}", a.0, leaf.0)));
                }
                seen.insert(a);
            }
        }
        let macro_area: f64 = (0..d.roots as u32)
            .map(|r| triangle_area(&d.node(NodeId(r)).verts.map(|i| d.vertices[i as usize])))
            .sum();
        let area: f64 = self.areas.iter().sum();
        if (area - macro_area).abs() > 1e-10 * macro_area {
            return Err(Error::NonConforming(format!("area {area} differs from domain area {macro_area}")));
        }
        if let Some(a) = self.areas.iter().find(|&&a| a <= 0.0) {
            return Err(Error::NonConforming(format!("element with non-positive area {a}")));
        }
        for (i, e) in self.edges.iter().enumerate() {
            let interior = e.elements[1].is_some();
            if interior == e.on_boundary {
                let (a, b) = self.edge_key_of(i);
                return Err(Error::NonConforming(format!("edge ({a}, {b}) has a hanging node")));
            }
        }
        Ok(())
    }

    /// Text form: header, vertices, then every forest node of the mesh and
    /// its ancestors in breadth-first order with level and parent line.
    pub fn dump(&self) -> String {
        let d = self.forest.read();
        let mut keep: HashSet<NodeId> = self.leaves.iter().copied().collect();
        for &leaf in &self.leaves {
            keep.extend(d.ancestors(leaf));
        }
        let mut order: Vec<NodeId> = (0..d.roots as u32).map(NodeId).collect();
        let mut head = 0;
        while head < order.len() {
            let id = order[head];
            head += 1;
            if let Some(ch) = d.node(id).children {
                order.extend(ch.iter().copied().filter(|c| keep.contains(c)));
            }
        }
        let mut vmap: HashMap<u32, usize> = HashMap::new();
        let mut vlist = Vec::new();
        let mut line_of: HashMap<NodeId, usize> = HashMap::new();
        for (i, &id) in order.iter().enumerate() {
            line_of.insert(id, i);
            for &g in &d.node(id).verts {
                vmap.entry(g).or_insert_with(|| {
                    vlist.push(g);
                    vlist.len() - 1
                });
            }
        }
        let mut s = String::new();
        writeln!(s, "mesh {} {} {} {}", self.forest.label, d.roots, vlist.len(), order.len()).unwrap();
        for &g in &vlist {
            let p = d.vertices[g as usize];
            writeln!(s, "v {:?} {:?}", p[0], p[1]).unwrap();
        }
        for &id in &order {
            let n = d.node(id);
            let [a, b, c] = n.verts.map(|g| vmap[&g]);
            let parent = n.parent.map_or(-1, |p| line_of[&p] as i64);
            let leaf = u8::from(self.leaf_index.contains_key(&id));
            writeln!(s, "e {a} {b} {c} {} {parent} {leaf}", n.level).unwrap();
        }
        s
    }

    /// Rebuilds a mesh from [`Triangulation::dump`] output in a new forest.
    pub fn load(text: &str) -> Result<Triangulation> {
        let parsed = ParsedMesh::parse(text)?;
        let roots: Vec<[u32; 3]> = parsed.elements[..parsed.roots]
            .iter()
            .map(|e| e.verts.map(|v| v as u32))
            .collect();
        let mut boundary = Vec::new();
        let mut count: HashMap<(u32, u32), usize> = HashMap::new();
        for t in &roots {
            for j in 0..3 {
                *count.entry(edge_key(t[j], t[(j + 1) % 3])).or_default() += 1;
            }
        }
        for (k, c) in count {
            if c == 1 {
                boundary.push(k);
            }
        }
        let macro_vertices: Vec<Point> = {
            let used = roots.iter().flatten().copied().max().map_or(0, |m| m as usize + 1);
            if roots.iter().flatten().any(|&v| v as usize >= parsed.vertices.len()) {
                return Err(Error::Parse("vertex index out of range".into()));
            }
            parsed.vertices[..used].to_vec()
        };
        if roots.iter().flatten().collect::<HashSet<_>>().len() != macro_vertices.len() {
            return Err(Error::Parse("macro vertices must be listed first".into()));
        }
        boundary.sort_unstable();
        let forest = Arc::new(Forest::new(parsed.label.clone(), macro_vertices, &roots, &boundary));
        parsed.replay(&forest)
    }

    /// Rebuilds a dumped mesh inside an existing forest with the same macro.
    pub fn load_into(text: &str, forest: &Arc<Forest>) -> Result<Triangulation> {
        let parsed = ParsedMesh::parse(text)?;
        if parsed.label != forest.label || parsed.roots != forest.read().roots {
            return Err(Error::IncompatibleMeshes);
        }
        parsed.replay(forest)
    }
}

fn strict_ancestors(d: &ForestData, leaves: &[NodeId]) -> HashSet<NodeId> {
    let mut out = HashSet::new();
    for &l in leaves {
        for a in d.ancestors(l) {
            if !out.insert(a) {
                break;
            }
        }
    }
    out
}

struct ParsedElement {
    verts: [usize; 3],
    parent: Option<usize>,
    leaf: bool,
}

struct ParsedMesh {
    label: String,
    roots: usize,
    vertices: Vec<Point>,
    elements: Vec<ParsedElement>,
}

impl ParsedMesh {
    fn parse(text: &str) -> Result<Self> {
        let bad = |msg: &str| Error::Parse(msg.to_string());
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<&str> = lines.next().ok_or_else(|| bad("empty mesh file"))?.split_whitespace().collect();
        if header.len() != 5 || header[0] != "mesh" {
            return Err(bad("expected header `mesh <label> <roots> <vertices> <elements>`"));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad integer in header"));
        let (roots, nv, ne) = (num(header[2])?, num(header[3])?, num(header[4])?);
        let mut vertices = Vec::with_capacity(nv);
        let mut elements: Vec<ParsedElement> = Vec::with_capacity(ne);
        for line in lines {
            let f: Vec<&str> = line.split_whitespace().collect();
            match f.first().copied() {
                Some("v") if f.len() == 3 => {
                    let x = f[1].parse::<f64>().map_err(|_| bad("bad coordinate"))?;
                    let y = f[2].parse::<f64>().map_err(|_| bad("bad coordinate"))?;
                    vertices.push([x, y]);
                }
                Some("e") if f.len() == 7 => {
                    let ix = |s: &str| s.parse::<usize>().map_err(|_| bad("bad element line"));
                    let verts = [ix(f[1])?, ix(f[2])?, ix(f[3])?];
                    if verts.iter().any(|&v| v >= nv) {
                        return Err(bad("vertex index out of range"));
                    }
                    let parent = f[5].parse::<i64>().map_err(|_| bad("bad parent"))?;
                    let parent = if parent < 0 {
                        None
                    } else if (parent as usize) < elements.len() {
                        Some(parent as usize)
                    } else {
                        return Err(bad("parent must precede child"));
                    };
                    elements.push(ParsedElement { verts, parent, leaf: f[6] == "1" });
                }
                _ => return Err(Error::Parse(format!("unrecognised line `{line}`"))),
            }
        }
        if vertices.len() != nv || elements.len() != ne || roots > ne {
            return Err(bad("counts do not match header"));
        }
        if elements.iter().take(roots).any(|e| e.parent.is_some()) || elements.iter().skip(roots).any(|e| e.parent.is_none()) {
            return Err(bad("roots must come first"));
        }
        Ok(ParsedMesh { label: header[1].to_string(), roots, vertices, elements })
    }

    /// Replays the recorded bisections in `forest` and checks the geometry.
    fn replay(&self, forest: &Arc<Forest>) -> Result<Triangulation> {
        let mut ids: Vec<NodeId> = (0..self.roots as u32).map(NodeId).collect();
        for e in &self.elements[self.roots..] {
            let p = ids[e.parent.expect("checked")];
            let ch = forest.bisect(p);
            let d = forest.read();
            let want = e.verts.map(|v| self.vertices[v]);
            let hit = ch.iter().copied().find(|&c| {
                let got = d.node(c).verts.map(|g| d.vertices[g as usize]);
                got.iter().zip(&want).all(|(a, b)| dist(*a, *b) <= 1e-12 * (1.0 + a[0].abs() + a[1].abs()))
            });
            drop(d);
            ids.push(hit.ok_or_else(|| Error::Parse("element does not match a bisection of its parent".into()))?);
        }
        {
            let d = forest.read();
            for (i, e) in self.elements[..self.roots].iter().enumerate() {
                let got = d.node(NodeId(i as u32)).verts.map(|g| d.vertices[g as usize]);
                let want = e.verts.map(|v| self.vertices[v]);
                if got.iter().zip(&want).any(|(a, b)| dist(*a, *b) > 1e-12 * (1.0 + a[0].abs() + a[1].abs())) {
                    return Err(Error::IncompatibleMeshes);
                }
            }
        }
        let leaves = self.elements.iter().zip(&ids).filter(|(e, _)| e.leaf).map(|(_, &id)| id).collect();
        let mesh = Triangulation::from_leaves(forest.clone(), leaves);
        mesh.check_conformity()?;
        Ok(mesh)
    }
}

struct Refiner<'a> {
    forest: &'a Forest,
    leaves: HashSet<NodeId>,
    by_edge: HashMap<(u32, u32), [Option<NodeId>; 2]>,
}

impl<'a> Refiner<'a> {
    fn new(mesh: &'a Triangulation) -> Self {
        let mut r = Refiner {
            forest: &mesh.forest,
            leaves: HashSet::with_capacity(2 * mesh.leaves.len()),
            by_edge: HashMap::with_capacity(3 * mesh.leaves.len()),
        };
        let d = mesh.forest.read();
        let verts: Vec<_> = mesh.leaves.iter().map(|&l| (l, d.node(l).verts)).collect();
        drop(d);
        for (l, v) in verts {
            r.insert(l, v);
        }
        r
    }

    fn insert(&mut self, id: NodeId, v: [u32; 3]) {
        self.leaves.insert(id);
        for j in 0..3 {
            let slot = self.by_edge.entry(edge_key(v[j], v[(j + 1) % 3])).or_default();
            if slot[0].is_none() {
                slot[0] = Some(id);
            } else {
                slot[1] = Some(id);
            }
        }
    }

    fn remove(&mut self, id: NodeId, v: [u32; 3]) {
        self.leaves.remove(&id);
        for j in 0..3 {
            let key = edge_key(v[j], v[(j + 1) % 3]);
            if let Some(slot) = self.by_edge.get_mut(&key) {
                for s in slot.iter_mut() {
                    if *s == Some(id) {
                        *s = None;
                    }
                }
                if slot[0].is_none() {
                    slot.swap(0, 1);
                }
                if slot[0].is_none() {
                    self.by_edge.remove(&key);
                }
            }
        }
    }

    fn verts(&self, id: NodeId) -> [u32; 3] {
        self.forest.read().node(id).verts
    }

    fn split(&mut self, id: NodeId) {
        let v = self.verts(id);
        let ch = self.forest.bisect(id);
        self.remove(id, v);
        for c in ch {
            let cv = self.verts(c);
            self.insert(c, cv);
        }
    }

    fn refine(&mut self, id: NodeId) {
        loop {
            let v = self.verts(id);
            let key = edge_key(v[0], v[1]);
            let neighbour = self.by_edge.get(&key).and_then(|s| s.iter().flatten().copied().find(|&n| n != id));
            match neighbour {
                None => {
                    self.split(id);
                    return;
                }
                Some(n) => {
                    let nv = self.verts(n);
                    if edge_key(nv[0], nv[1]) == key {
                        self.split(id);
                        self.split(n);
                        return;
                    }
                    self.refine(n);
                }
            }
        }
    }
}

/// Coarsest common refinement of several meshes together with, for each
/// input mesh, the index of the element containing each overlay element.
#[derive(Clone, Debug)]
pub struct Overlay {
    pub fine: Arc<Triangulation>,
    pub parents: Vec<Vec<usize>>,
}

impl Overlay {
    pub fn new(meshes: &[&Triangulation]) -> Result<Overlay> {
        let first = *meshes.first().ok_or_else(|| Error::InvalidArgument("no meshes".into()))?;
        let mut fine = first.clone();
        for m in &meshes[1..] {
            fine = fine.coarsest_common_refinement(m)?;
        }
        let parents = meshes
            .iter()
            .map(|m| {
                (0..fine.n_elements())
                    .map(|k| m.ancestor_element(&fine, k).expect("overlay refines every input"))
                    .collect()
            })
            .collect();
        Ok(Overlay { fine: Arc::new(fine), parents })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> Triangulation {
        Triangulation::build_macro(Rectangle::square(-1.0, 1.0), 1).unwrap()
    }

    #[test]
    fn macro_counts() {
        let m = Triangulation::build_macro(Rectangle::square(-1.0, 1.0), 2).unwrap();
        assert_eq!(m.n_elements(), 8);
        assert_eq!(m.n_vertices(), 9);
        assert_eq!(m.boundary_edges().len(), 8);
        m.check_conformity().unwrap();
    }

    #[test]
    fn uniform_refinement_matches_finer_macro_pattern() {
        let r = unit().uniform_refine(2);
        let direct = Triangulation::build_macro(Rectangle::square(-1.0, 1.0), 4).unwrap();
        assert_eq!(r.n_elements(), direct.n_elements());
        let mut a: Vec<Vec<[i64; 2]>> = (0..r.n_elements())
            .map(|k| {
                let mut v: Vec<[i64; 2]> =
                    r.element_vertices(k).iter().map(|p| [(p[0] * 1e6).round() as i64, (p[1] * 1e6).round() as i64]).collect();
                v.sort();
                v
            })
            .collect();
        let mut b: Vec<Vec<[i64; 2]>> = (0..direct.n_elements())
            .map(|k| {
                let mut v: Vec<[i64; 2]> = direct
                    .element_vertices(k)
                    .iter()
                    .map(|p| [(p[0] * 1e6).round() as i64, (p[1] * 1e6).round() as i64])
                    .collect();
                v.sort();
                v
            })
            .collect();
        a.sort();
        b.sort();
        assert_eq!(a, b);
        assert!((r.max_diameter() - unit().max_diameter() / 4.0).abs() < 1e-14);
    }

    #[test]
    fn closure_keeps_conformity() {
        let m = unit().uniform_refine(1);
        let r = m.bisect_marked(&[0]).unwrap().bisect_marked(&[0, 1]).unwrap();
        r.check_conformity().unwrap();
        let r2 = r.bisect_marked(&[3]).unwrap();
        r2.check_conformity().unwrap();
        assert!(r2.n_elements() > r.n_elements());
    }

    #[test]
    fn lattice_identities() {
        let m = unit().uniform_refine(1);
        let a = m.bisect_marked(&[0, 2]).unwrap();
        let b = m.bisect_marked(&[5]).unwrap();
        let fcc = a.finest_common_coarsening(&b).unwrap();
        let ccr = a.coarsest_common_refinement(&b).unwrap();
        assert!(fcc.is_refinement_of(&m));
        assert!(ccr.is_refinement_of(&a) && ccr.is_refinement_of(&b));
        assert!(a.is_refinement_of(&fcc) && b.is_refinement_of(&fcc));
        let coarse = m.finest_common_coarsening(&a).unwrap();
        assert_eq!(coarse, m);
        assert_eq!(m.coarsest_common_refinement(&a).unwrap(), a);
        ccr.check_conformity().unwrap();
        assert_eq!(a.finest_common_coarsening(&a).unwrap(), a);
    }

    #[test]
    fn incompatible_forests_rejected() {
        let a = unit();
        let b = unit();
        assert!(matches!(a.coarsest_common_refinement(&b), Err(Error::IncompatibleMeshes)));
    }

    #[test]
    fn dump_round_trip() {
        let m = unit().uniform_refine(1).bisect_marked(&[1, 4]).unwrap();
        let text = m.dump();
        let back = Triangulation::load(&text).unwrap();
        assert_eq!(back.dump(), text);
        let same = Triangulation::load_into(&text, m.forest()).unwrap();
        assert_eq!(same, m);
    }

    #[test]
    fn locate_finds_containing_element() {
        let m = unit().uniform_refine(2);
        for k in 0..m.n_elements() {
            let v = m.element_vertices(k);
            let c = [(v[0][0] + v[1][0] + v[2][0]) / 3.0, (v[0][1] + v[1][1] + v[2][1]) / 3.0];
            assert_eq!(m.locate(c), Some(k));
        }
        assert_eq!(m.locate([2.0, 0.0]), None);
    }
}
