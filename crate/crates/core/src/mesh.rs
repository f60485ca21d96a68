//! Conforming triangulations with newest-vertex bisection.
//!
//! Triangles list their vertices counter-clockwise with the newest vertex
//! last, so the refinement edge of `[a, b, c]` is always `(a, b)`. Local edge
//! `i` of a triangle is the edge opposite its vertex `i`.

use std::collections::{HashMap, HashSet, VecDeque};
use std::io::{BufRead, Write};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Vertex {
    pub x: f64,
    pub y: f64,
}

impl Vertex {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn midpoint(self, other: Vertex) -> Vertex {
        Vertex::new((self.x + other.x) * 0.5, (self.y + other.y) * 0.5)
    }

    pub fn key(self) -> PointKey {
        // `+ 0.0` folds -0.0 into +0.0 so both hash alike.
        PointKey((self.x + 0.0).to_bits(), (self.y + 0.0).to_bits())
    }
}

/// Exact coordinate key. All vertices of a newest-vertex-bisection family
/// have dyadic coordinates, so midpoints computed in different meshes agree
/// bit-for-bit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PointKey(u64, u64);

/// Unordered pair of point keys identifying an edge across meshes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EdgeKey(PointKey, PointKey);

impl EdgeKey {
    pub fn new(a: Vertex, b: Vertex) -> Self {
        let (ka, kb) = (a.key(), b.key());
        if ka <= kb {
            EdgeKey(ka, kb)
        } else {
            EdgeKey(kb, ka)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BoundaryPart {
    Dirichlet,
    Neumann,
}

impl BoundaryPart {
    pub fn tag(self) -> &'static str {
        match self {
            BoundaryPart::Dirichlet => "D",
            BoundaryPart::Neumann => "N",
        }
    }

    fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "D" => Some(BoundaryPart::Dirichlet),
            "N" => Some(BoundaryPart::Neumann),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Triangle {
    /// Counter-clockwise, newest vertex last.
    pub v: [usize; 3],
    /// Number of bisections separating this triangle from its initial ancestor.
    pub generation: u32,
    /// The triangle of the predecessor mesh this one was bisected from.
    /// `None` for initial triangles and for triangles carried over unchanged.
    pub parent: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BoundaryEdge {
    pub v: [usize; 2],
    pub part: BoundaryPart,
}

#[derive(Clone, Debug)]
pub struct Triangulation {
    vertices: Vec<Vertex>,
    triangles: Vec<Triangle>,
    boundary: Vec<BoundaryEdge>,
    edges: Vec<[usize; 2]>,
    tri_edges: Vec<[usize; 3]>,
    edge_tris: Vec<Vec<usize>>,
    edge_part: Vec<Option<BoundaryPart>>,
    edge_lookup: HashMap<(usize, usize), usize>,
}

fn sorted(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Local edge `i` of `[a, b, c]` runs counter-clockwise and is opposite vertex `i`.
pub const LOCAL_EDGES: [[usize; 2]; 3] = [[1, 2], [2, 0], [0, 1]];

impl Triangulation {
    pub fn new(
        vertices: Vec<Vertex>,
        triangles: Vec<Triangle>,
        boundary: Vec<BoundaryEdge>,
    ) -> Result<Self> {
        for (i, v) in vertices.iter().enumerate() {
            if !v.x.is_finite() || !v.y.is_finite() {
                return Err(Error::InvalidMesh(format!("vertex {i} is not finite")));
            }
        }
        let mut edges = Vec::new();
        let mut edge_lookup = HashMap::new();
        let mut edge_tris: Vec<Vec<usize>> = Vec::new();
        let mut tri_edges = Vec::with_capacity(triangles.len());
        for (t, tri) in triangles.iter().enumerate() {
            if tri.v.iter().any(|&i| i >= vertices.len()) {
                return Err(Error::InvalidMesh(format!("triangle {t} references a missing vertex")));
            }
            let [a, b, c] = tri.v.map(|i| vertices[i]);
            let area2 = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
            if area2 <= 0.0 {
                return Err(Error::InvalidMesh(format!("triangle {t} has non-positive area")));
            }
            let mut local = [0usize; 3];
            for (i, [p, q]) in LOCAL_EDGES.iter().enumerate() {
                let key = sorted(tri.v[*p], tri.v[*q]);
                let id = *edge_lookup.entry(key).or_insert_with(|| {
                    edges.push([key.0, key.1]);
                    edge_tris.push(Vec::new());
                    edges.len() - 1
                });
                edge_tris[id].push(t);
                local[i] = id;
            }
            tri_edges.push(local);
        }
        let mut edge_part = vec![None; edges.len()];
        for be in &boundary {
            let id = edge_lookup.get(&sorted(be.v[0], be.v[1])).copied().ok_or_else(|| {
                Error::InvalidMesh(format!("boundary edge {:?} is not a triangle edge", be.v))
            })?;
            if edge_tris[id].len() != 1 {
                return Err(Error::InvalidMesh(format!(
                    "boundary edge {:?} is shared by {} triangles",
                    be.v,
                    edge_tris[id].len()
                )));
            }
            if edge_part[id].replace(be.part).is_some() {
                return Err(Error::InvalidMesh(format!("boundary edge {:?} tagged twice", be.v)));
            }
        }
        Ok(Self { vertices, triangles, boundary, edges, tri_edges, edge_tris, edge_part, edge_lookup })
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    pub fn vertex(&self, i: usize) -> Vertex {
        self.vertices[i]
    }

    pub fn triangles(&self) -> &[Triangle] {
        &self.triangles
    }

    pub fn triangle(&self, t: usize) -> &Triangle {
        &self.triangles[t]
    }

    pub fn triangle_vertices(&self, t: usize) -> [Vertex; 3] {
        self.triangles[t].v.map(|i| self.vertices[i])
    }

    pub fn boundary_edges(&self) -> &[BoundaryEdge] {
        &self.boundary
    }

    /// Global edges, each stored with its lower vertex index first.
    pub fn edges(&self) -> &[[usize; 2]] {
        &self.edges
    }

    pub fn edge(&self, e: usize) -> [usize; 2] {
        self.edges[e]
    }

    /// Global edge ids of the three local edges of a triangle.
    pub fn tri_edges(&self, t: usize) -> [usize; 3] {
        self.tri_edges[t]
    }

    pub fn edge_triangles(&self, e: usize) -> &[usize] {
        &self.edge_tris[e]
    }

    pub fn edge_part(&self, e: usize) -> Option<BoundaryPart> {
        self.edge_part[e]
    }

    pub fn find_edge(&self, a: usize, b: usize) -> Option<usize> {
        self.edge_lookup.get(&sorted(a, b)).copied()
    }

    pub fn edge_key(&self, e: usize) -> EdgeKey {
        let [a, b] = self.edges[e];
        EdgeKey::new(self.vertices[a], self.vertices[b])
    }

    pub fn edge_length(&self, e: usize) -> f64 {
        let [a, b] = self.edges[e].map(|i| self.vertices[i]);
        (b.x - a.x).hypot(b.y - a.y)
    }

    /// Ids of edges lying on the given boundary part, in edge order.
    pub fn part_edges(&self, part: BoundaryPart) -> Vec<usize> {
        (0..self.edges.len()).filter(|&e| self.edge_part[e] == Some(part)).collect()
    }

    pub fn boundary_facets(&self, part: BoundaryPart) -> HashSet<EdgeKey> {
        self.part_edges(part).into_iter().map(|e| self.edge_key(e)).collect()
    }

    /// Vertex ids lying on the closure of a boundary part.
    pub fn part_vertices(&self, part: BoundaryPart) -> Vec<bool> {
        let mut on = vec![false; self.vertices.len()];
        for be in self.boundary.iter().filter(|be| be.part == part) {
            on[be.v[0]] = true;
            on[be.v[1]] = true;
        }
        on
    }

    pub fn has_part(&self, part: BoundaryPart) -> bool {
        self.boundary.iter().any(|be| be.part == part)
    }

    pub fn area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangle_vertices(t);
        0.5 * ((b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x))
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.area(t)).sum()
    }

    pub fn diameter(&self, t: usize) -> f64 {
        self.tri_edges[t].iter().map(|&e| self.edge_length(e)).fold(0.0, f64::max)
    }

    /// Smallest interior angle of a triangle, in radians.
    pub fn min_angle(&self, t: usize) -> f64 {
        let p = self.triangle_vertices(t);
        (0..3)
            .map(|i| {
                let (o, a, b) = (p[i], p[(i + 1) % 3], p[(i + 2) % 3]);
                let (ux, uy, vx, vy) = (a.x - o.x, a.y - o.y, b.x - o.x, b.y - o.y);
                (ux * vy - uy * vx).atan2(ux * vx + uy * vy).abs()
            })
            .fold(f64::INFINITY, f64::min)
    }

    pub fn mesh_min_angle(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.min_angle(t)).fold(f64::INFINITY, f64::min)
    }

    /// Checks that interior edges are shared by exactly two triangles and
    /// every edge with a single neighbour is a tagged boundary edge.
    pub fn check_conformity(&self) -> Result<()> {
        for (e, tris) in self.edge_tris.iter().enumerate() {
            match (tris.len(), self.edge_part[e]) {
                (1, Some(_)) | (2, None) => {}
                (n, part) => {
                    return Err(Error::InvalidMesh(format!(
                        "edge {:?} has {n} triangles and boundary tag {part:?}",
                        self.edges[e]
                    )))
                }
            }
        }
        Ok(())
    }

    pub fn is_conforming(&self) -> bool {
        self.check_conformity().is_ok()
    }

    /// Writes the plain-text dump: a `V E T` header, vertex lines `x y`,
    /// boundary-edge lines `v0 v1 tag`, then triangle lines `v0 v1 v2 gen`.
    pub fn write_dump<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{} {} {}", self.vertices.len(), self.boundary.len(), self.triangles.len())?;
        for v in &self.vertices {
            writeln!(w, "{} {}", v.x, v.y)?;
        }
        for be in &self.boundary {
            writeln!(w, "{} {} {}", be.v[0], be.v[1], be.part.tag())?;
        }
        for t in &self.triangles {
            writeln!(w, "{} {} {} {}", t.v[0], t.v[1], t.v[2], t.generation)?;
        }
        Ok(())
    }

    pub fn read_dump<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let mut next = || -> Result<Vec<String>> {
            let line = lines.next().ok_or_else(|| Error::Parse("unexpected end of dump".into()))??;
            Ok(line.split_whitespace().map(str::to_owned).collect())
        };
        let bad = |what: &str| Error::Parse(format!("malformed {what} line"));
        let header = next()?;
        let counts: Vec<usize> = header.iter().map(|s| s.parse()).collect::<std::result::Result<_, _>>().map_err(|_| bad("header"))?;
        let [nv, ne, nt] = counts[..] else { return Err(bad("header")) };
        let mut vertices = Vec::with_capacity(nv);
        for _ in 0..nv {
            let f = next()?;
            let (Some(x), Some(y)) = (f.first().and_then(|s| s.parse().ok()), f.get(1).and_then(|s| s.parse().ok())) else {
                return Err(bad("vertex"));
            };
            vertices.push(Vertex::new(x, y));
        }
        let mut boundary = Vec::with_capacity(ne);
        for _ in 0..ne {
            let f = next()?;
            if f.len() != 3 {
                return Err(bad("boundary"));
            }
            let a = f[0].parse().map_err(|_| bad("boundary"))?;
            let b = f[1].parse().map_err(|_| bad("boundary"))?;
            let part = BoundaryPart::from_tag(&f[2]).ok_or_else(|| bad("boundary"))?;
            boundary.push(BoundaryEdge { v: [a, b], part });
        }
        let mut triangles = Vec::with_capacity(nt);
        for _ in 0..nt {
            let f: Vec<usize> = next()?.iter().map(|s| s.parse()).collect::<std::result::Result<_, _>>().map_err(|_| bad("triangle"))?;
            let [a, b, c, g] = f[..] else { return Err(bad("triangle")) };
            triangles.push(Triangle { v: [a, b, c], generation: g as u32, parent: None });
        }
        Triangulation::new(vertices, triangles, boundary)
    }
}

/// Rectangle (−1,1)×(0,1) as two unit squares, each cut along both diagonals
/// into four triangles whose newest vertex is the square's centre. The
/// boundary segment [−1,0]×{0} is Neumann, the rest Dirichlet.
pub fn initial_mesh_rect() -> Triangulation {
    initial_mesh_rect_tagged(|a, b| {
        if a.y == 0.0 && b.y == 0.0 && a.x.max(b.x) <= 0.0 {
            BoundaryPart::Neumann
        } else {
            BoundaryPart::Dirichlet
        }
    })
}

/// Same geometry as [`initial_mesh_rect`] with a caller-chosen boundary tag
/// for each of the six boundary edges.
pub fn initial_mesh_rect_tagged(tag: impl Fn(Vertex, Vertex) -> BoundaryPart) -> Triangulation {
    let vertices = vec![
        Vertex::new(-1.0, 0.0),
        Vertex::new(0.0, 0.0),
        Vertex::new(1.0, 0.0),
        Vertex::new(1.0, 1.0),
        Vertex::new(0.0, 1.0),
        Vertex::new(-1.0, 1.0),
        Vertex::new(-0.5, 0.5),
        Vertex::new(0.5, 0.5),
    ];
    // Square corners counter-clockwise, followed by the centre.
    let squares = [([0, 1, 4, 5], 6), ([1, 2, 3, 4], 7)];
    let mut triangles = Vec::with_capacity(8);
    for (corners, centre) in squares {
        for i in 0..4 {
            triangles.push(Triangle { v: [corners[i], corners[(i + 1) % 4], centre], generation: 0, parent: None });
        }
    }
    let outline = [0, 1, 2, 3, 4, 5];
    let boundary = (0..6)
        .map(|i| {
            let v = [outline[i], outline[(i + 1) % 6]];
            BoundaryEdge { v, part: tag(vertices[v[0]], vertices[v[1]]) }
        })
        .collect();
    Triangulation::new(vertices, triangles, boundary).expect("initial mesh is valid")
}

/// Bisects a single triangle through the midpoint of its refinement edge.
/// The result may contain a hanging vertex; callers close it with [`refine`].
pub fn bisect(mesh: &Triangulation, t: usize) -> Result<Triangulation> {
    if t >= mesh.n_triangles() {
        return Err(Error::InvalidTriangle(t));
    }
    let mut vertices = mesh.vertices.clone();
    let tri = mesh.triangles[t];
    let [a, b, c] = tri.v;
    let mid = vertices[a].midpoint(vertices[b]);
    let key = mid.key();
    let m = match vertices.iter().position(|v| v.key() == key) {
        Some(i) => i,
        None => {
            vertices.push(mid);
            vertices.len() - 1
        }
    };
    let mut triangles = Vec::with_capacity(mesh.n_triangles() + 1);
    for (i, old) in mesh.triangles.iter().enumerate() {
        if i == t {
            let gen = tri.generation + 1;
            triangles.push(Triangle { v: [c, a, m], generation: gen, parent: Some(t) });
            triangles.push(Triangle { v: [b, c, m], generation: gen, parent: Some(t) });
        } else {
            triangles.push(Triangle { parent: None, ..*old });
        }
    }
    let mut boundary = Vec::with_capacity(mesh.boundary.len() + 1);
    for be in &mesh.boundary {
        if sorted(be.v[0], be.v[1]) == sorted(a, b) {
            boundary.push(BoundaryEdge { v: [be.v[0], m], part: be.part });
            boundary.push(BoundaryEdge { v: [m, be.v[1]], part: be.part });
        } else {
            boundary.push(*be);
        }
    }
    Triangulation::new(vertices, triangles, boundary)
}

/// Smallest conforming newest-vertex-bisection refinement in which every
/// marked triangle is bisected at least once.
pub fn refine(mesh: &Triangulation, marked: &[usize]) -> Result<Triangulation> {
    let mut edge_marked = vec![false; mesh.n_edges()];
    let mut queue = VecDeque::new();
    for &t in marked {
        if t >= mesh.n_triangles() {
            return Err(Error::InvalidTriangle(t));
        }
        let e = mesh.tri_edges[t][2];
        if !edge_marked[e] {
            edge_marked[e] = true;
            queue.push_back(e);
        }
    }
    // Closure: any triangle with a marked edge must also bisect its refinement edge.
    while let Some(e) = queue.pop_front() {
        for &t in &mesh.edge_tris[e] {
            let r = mesh.tri_edges[t][2];
            if !edge_marked[r] {
                edge_marked[r] = true;
                queue.push_back(r);
            }
        }
    }
    if !edge_marked.iter().any(|&m| m) {
        return Ok(mesh.clone());
    }

    let mut vertices = mesh.vertices.clone();
    let mut midpoints: HashMap<usize, usize> = HashMap::new();
    let mut midpoint_of = |e: usize, vertices: &mut Vec<Vertex>| -> usize {
        *midpoints.entry(e).or_insert_with(|| {
            let [a, b] = mesh.edges[e];
            vertices.push(vertices[a].midpoint(vertices[b]));
            vertices.len() - 1
        })
    };

    let mut triangles = Vec::with_capacity(mesh.n_triangles() * 2);
    let mut stack = Vec::new();
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let refine_edge = mesh.tri_edges[t][2];
        if !edge_marked[refine_edge] {
            triangles.push(Triangle { parent: None, ..*tri });
            continue;
        }
        stack.push((tri.v, tri.generation));
        while let Some((v, gen)) = stack.pop() {
            let split = mesh.find_edge(v[0], v[1]).filter(|&e| edge_marked[e]);
            match split {
                Some(e) => {
                    let m = midpoint_of(e, &mut vertices);
                    // Push the second child first so the first is emitted first.
                    stack.push(([v[1], v[2], m], gen + 1));
                    stack.push(([v[2], v[0], m], gen + 1));
                }
                None => triangles.push(Triangle { v, generation: gen, parent: Some(t) }),
            }
        }
    }

    let mut boundary = Vec::with_capacity(mesh.boundary.len() * 2);
    for be in &mesh.boundary {
        let e = mesh.find_edge(be.v[0], be.v[1]).expect("boundary edge exists");
        if edge_marked[e] {
            let m = midpoints[&e];
            boundary.push(BoundaryEdge { v: [be.v[0], m], part: be.part });
            boundary.push(BoundaryEdge { v: [m, be.v[1]], part: be.part });
        } else {
            boundary.push(*be);
        }
    }
    Triangulation::new(vertices, triangles, boundary)
}

pub fn uniform_refine(mesh: &Triangulation) -> Triangulation {
    let all: Vec<usize> = (0..mesh.n_triangles()).collect();
    refine(mesh, &all).expect("all ids are valid")
}

/// Coarsest descendant of `root` whose facets on `part` coincide with those
/// of `mesh`. `mesh` must itself descend from `root` by bisection.
pub fn derive_boundary_matched_mesh(
    root: &Triangulation,
    mesh: &Triangulation,
    part: BoundaryPart,
) -> Result<Triangulation> {
    let target = mesh.boundary_facets(part);
    let mut current = root.clone();
    // Each pass bisects at least one boundary edge not yet in `target`, and
    // a descendant of `root` has finitely many of those.
    for _ in 0..10_000 {
        let mut marked = Vec::new();
        for e in current.part_edges(part) {
            if !target.contains(&current.edge_key(e)) {
                marked.push(current.edge_tris[e][0]);
            }
        }
        if marked.is_empty() {
            if current.boundary_facets(part) != target {
                return Err(Error::FacetMismatch {
                    part,
                    detail: "mesh is not a bisection descendant of the root".into(),
                });
            }
            return Ok(current);
        }
        marked.sort_unstable();
        marked.dedup();
        current = refine(&current, &marked)?;
    }
    Err(Error::FacetMismatch { part, detail: "boundary matching did not reach a fixpoint".into() })
}
