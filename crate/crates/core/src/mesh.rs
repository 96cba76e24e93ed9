//! Polygonal meshes aligned with the Stokes-Darcy interface.
//!
//! Every edge stores one unit normal pointing out of its `left` cell. The
//! left cell is the lower-indexed neighbour, except on interface edges where
//! it is always the Stokes cell, so the stored normal there points from the
//! Stokes region into the Darcy region. On boundary edges the normal points
//! out of the domain.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::polyquad::{polygon_area, polygon_centroid};
use crate::{Point, Result, WgError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Region {
    Stokes,
    Darcy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EdgeClass {
    InteriorStokes,
    InteriorDarcy,
    Interface,
    BoundaryStokes,
    BoundaryDarcy,
}

impl EdgeClass {
    pub fn is_boundary(self) -> bool {
        matches!(self, EdgeClass::BoundaryStokes | EdgeClass::BoundaryDarcy)
    }

    /// Darcy edges carry a scalar normal trace; all others a vector trace.
    pub fn is_darcy(self) -> bool {
        matches!(self, EdgeClass::InteriorDarcy | EdgeClass::BoundaryDarcy)
    }
}

#[derive(Debug, Clone)]
pub struct Cell {
    /// Counterclockwise vertex loop.
    pub vertices: Vec<usize>,
    pub region: Region,
    /// Edge `i` joins `vertices[i]` and `vertices[i+1]`.
    pub edges: Vec<usize>,
    /// `+1` when the edge normal is this cell's outward normal, `-1` otherwise.
    pub orientation: Vec<f64>,
    pub area: f64,
    pub centroid: Point,
    pub diameter: f64,
}

#[derive(Debug, Clone)]
pub struct Edge {
    /// Sorted vertex pair; the edge tangent runs from `vertices[0]` to `vertices[1]`.
    pub vertices: [usize; 2],
    pub left: usize,
    pub right: Option<usize>,
    pub class: EdgeClass,
    pub normal: Point,
    pub length: f64,
}

/// A straight interface line through `point` with direction `direction`.
#[derive(Debug, Clone, Copy)]
pub struct InterfaceLine {
    pub point: Point,
    pub direction: Point,
}

impl InterfaceLine {
    pub fn horizontal(y: f64) -> Self {
        Self {
            point: [0.0, y],
            direction: [1.0, 0.0],
        }
    }

    fn distance(&self, p: Point) -> f64 {
        let d = self.direction;
        let len = (d[0] * d[0] + d[1] * d[1]).sqrt();
        ((p[0] - self.point[0]) * d[1] - (p[1] - self.point[1]) * d[0]).abs() / len
    }
}

#[derive(Debug, Clone)]
pub struct PolyMesh {
    pub vertices: Vec<Point>,
    pub cells: Vec<Cell>,
    pub edges: Vec<Edge>,
}

impl PolyMesh {
    /// Build topology and classify edges. When `interface` is given, every
    /// edge between a Stokes and a Darcy cell must lie on it.
    pub fn new(
        vertices: Vec<Point>,
        cells: Vec<(Region, Vec<usize>)>,
        interface: Option<InterfaceLine>,
    ) -> Result<Self> {
        let mesh = Self::from_cells(vertices, cells)?;
        classify_edges(mesh, interface)
    }

    /// Topology only: edges carry provisional classes until [`classify_edges`].
    pub fn from_cells(vertices: Vec<Point>, cells: Vec<(Region, Vec<usize>)>) -> Result<Self> {
        let mut out_cells = Vec::with_capacity(cells.len());
        let mut edges: Vec<Edge> = Vec::new();
        let mut lookup: HashMap<[usize; 2], usize> = HashMap::new();

        for (ci, (region, loop_)) in cells.into_iter().enumerate() {
            if loop_.len() < 3 {
                return Err(WgError::Mesh(format!("cell {ci} has fewer than 3 vertices")));
            }
            if let Some(&v) = loop_.iter().find(|&&v| v >= vertices.len()) {
                return Err(WgError::Mesh(format!("cell {ci} references missing vertex {v}")));
            }
            let pts: Vec<Point> = loop_.iter().map(|&v| vertices[v]).collect();
            check_simple(ci, &pts)?;
            let area = polygon_area(&pts);
            if area <= 0.0 {
                return Err(WgError::Mesh(format!(
                    "cell {ci} is not counterclockwise or has zero area ({area:e})"
                )));
            }
            let mut diameter: f64 = 0.0;
            for a in &pts {
                for b in &pts {
                    diameter = diameter.max(dist(*a, *b));
                }
            }
            let k = loop_.len();
            let mut cell_edges = Vec::with_capacity(k);
            for i in 0..k {
                let (a, b) = (loop_[i], loop_[(i + 1) % k]);
                let key = if a < b { [a, b] } else { [b, a] };
                let e = match lookup.get(&key) {
                    Some(&e) => {
                        let edge = &mut edges[e];
                        if edge.right.is_some() {
                            return Err(WgError::Mesh(format!(
                                "edge {key:?} is shared by more than two cells"
                            )));
                        }
                        edge.right = Some(ci);
                        e
                    }
                    None => {
                        let e = edges.len();
                        edges.push(Edge {
                            vertices: key,
                            left: ci,
                            right: None,
                            class: EdgeClass::BoundaryStokes,
                            normal: [0.0, 0.0],
                            length: dist(vertices[key[0]], vertices[key[1]]),
                        });
                        lookup.insert(key, e);
                        e
                    }
                };
                cell_edges.push(e);
            }
            out_cells.push(Cell {
                centroid: polygon_centroid(&pts),
                vertices: loop_,
                region,
                orientation: vec![0.0; k],
                edges: cell_edges,
                area,
                diameter,
            });
        }
        Ok(Self {
            vertices,
            cells: out_cells,
            edges,
        })
    }

    pub fn h(&self) -> f64 {
        self.cells.iter().map(|c| c.diameter).fold(0.0, f64::max)
    }

    pub fn cell_points(&self, cell: usize) -> Vec<Point> {
        self.cells[cell]
            .vertices
            .iter()
            .map(|&v| self.vertices[v])
            .collect()
    }

    pub fn edge_points(&self, edge: usize) -> (Point, Point) {
        let [a, b] = self.edges[edge].vertices;
        (self.vertices[a], self.vertices[b])
    }

    pub fn edge_midpoint(&self, edge: usize) -> Point {
        let (a, b) = self.edge_points(edge);
        [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]
    }

    /// Outward unit normal of `cell` on its `local`-th edge.
    pub fn outward_normal(&self, cell: usize, local: usize) -> Point {
        let c = &self.cells[cell];
        let n = self.edges[c.edges[local]].normal;
        let s = c.orientation[local];
        [s * n[0], s * n[1]]
    }

    /// Interface tangent completing the stored interface normal to a
    /// right-handed pair.
    pub fn interface_tangent(&self, edge: usize) -> Point {
        let n = self.edges[edge].normal;
        [-n[1], n[0]]
    }

    pub fn count(&self, class: EdgeClass) -> usize {
        self.edges.iter().filter(|e| e.class == class).count()
    }

    pub fn cells_in(&self, region: Region) -> impl Iterator<Item = usize> + '_ {
        self.cells
            .iter()
            .enumerate()
            .filter(move |(_, c)| c.region == region)
            .map(|(i, _)| i)
    }

    pub fn region_area(&self, region: Region) -> f64 {
        self.cells_in(region).map(|c| self.cells[c].area).sum()
    }

    pub fn shape_diagnostics(&self) -> ShapeDiagnostics {
        let mut min_angle = f64::INFINITY;
        let mut max_aspect: f64 = 0.0;
        for (ci, c) in self.cells.iter().enumerate() {
            let pts = self.cell_points(ci);
            let k = pts.len();
            for i in 0..k {
                let prev = pts[(i + k - 1) % k];
                let cur = pts[i];
                let next = pts[(i + 1) % k];
                let u = [prev[0] - cur[0], prev[1] - cur[1]];
                let v = [next[0] - cur[0], next[1] - cur[1]];
                let cos = (u[0] * v[0] + u[1] * v[1]) / (norm(u) * norm(v));
                let mut angle = cos.clamp(-1.0, 1.0).acos();
                // Interior angle: reflex when the turn is clockwise.
                if u[0] * v[1] - u[1] * v[0] > 0.0 {
                    angle = 2.0 * std::f64::consts::PI - angle;
                }
                min_angle = min_angle.min(angle.to_degrees());
            }
            let min_edge = c
                .edges
                .iter()
                .map(|&e| self.edges[e].length)
                .fold(f64::INFINITY, f64::min);
            max_aspect = max_aspect.max(c.diameter / min_edge);
        }
        ShapeDiagnostics {
            min_angle_degrees: min_angle,
            max_aspect_ratio: max_aspect,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ShapeDiagnostics {
    pub min_angle_degrees: f64,
    /// Largest `h_K / min edge length`.
    pub max_aspect_ratio: f64,
}

fn dist(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn norm(v: Point) -> f64 {
    (v[0] * v[0] + v[1] * v[1]).sqrt()
}

fn check_simple(ci: usize, pts: &[Point]) -> Result<()> {
    let k = pts.len();
    let cross = |o: Point, a: Point, b: Point| (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
    for i in 0..k {
        for j in i + 1..k {
            if j == i + 1 || (i == 0 && j == k - 1) {
                continue;
            }
            let (a, b) = (pts[i], pts[(i + 1) % k]);
            let (c, d) = (pts[j], pts[(j + 1) % k]);
            let d1 = cross(a, b, c);
            let d2 = cross(a, b, d);
            let d3 = cross(c, d, a);
            let d4 = cross(c, d, b);
            if d1 * d2 < 0.0 && d3 * d4 < 0.0 {
                return Err(WgError::Mesh(format!("cell {ci} is self-intersecting")));
            }
        }
    }
    Ok(())
}

/// Assign edge classes, normals and per-cell orientations.
pub fn classify_edges(mut mesh: PolyMesh, interface: Option<InterfaceLine>) -> Result<PolyMesh> {
    let scale = mesh.h().max(f64::MIN_POSITIVE);
    for ei in 0..mesh.edges.len() {
        let (left, right) = (mesh.edges[ei].left, mesh.edges[ei].right);
        let class = match right {
            None => match mesh.cells[left].region {
                Region::Stokes => EdgeClass::BoundaryStokes,
                Region::Darcy => EdgeClass::BoundaryDarcy,
            },
            Some(r) => match (mesh.cells[left].region, mesh.cells[r].region) {
                (Region::Stokes, Region::Stokes) => EdgeClass::InteriorStokes,
                (Region::Darcy, Region::Darcy) => EdgeClass::InteriorDarcy,
                _ => EdgeClass::Interface,
            },
        };
        if class == EdgeClass::Interface {
            if let Some(line) = interface {
                let (a, b) = mesh.edge_points(ei);
                if line.distance(a) > 1e-10 * scale || line.distance(b) > 1e-10 * scale {
                    return Err(WgError::Misaligned { edge: ei });
                }
            }
            let r = right.expect("interface edge has two cells");
            let (s, d) = if mesh.cells[left].region == Region::Stokes {
                (left, r)
            } else {
                (r, left)
            };
            mesh.edges[ei].left = s;
            mesh.edges[ei].right = Some(d);
        } else if let Some(r) = right {
            if r < left {
                mesh.edges[ei].left = r;
                mesh.edges[ei].right = Some(left);
            }
        }
        mesh.edges[ei].class = class;

        // Normal out of the left cell: rotate the tangent clockwise when the
        // left cell traverses the edge in the tangent direction.
        let [va, vb] = mesh.edges[ei].vertices;
        let (a, b) = (mesh.vertices[va], mesh.vertices[vb]);
        let len = mesh.edges[ei].length;
        let t = [(b[0] - a[0]) / len, (b[1] - a[1]) / len];
        let left = mesh.edges[ei].left;
        let forward = traverses_forward(&mesh.cells[left], va, vb);
        let n = [t[1], -t[0]];
        mesh.edges[ei].normal = if forward { n } else { [-n[0], -n[1]] };
    }
    for ci in 0..mesh.cells.len() {
        let orientation = mesh.cells[ci]
            .edges
            .iter()
            .map(|&e| if mesh.edges[e].left == ci { 1.0 } else { -1.0 })
            .collect();
        mesh.cells[ci].orientation = orientation;
    }
    Ok(mesh)
}

fn traverses_forward(cell: &Cell, a: usize, b: usize) -> bool {
    let k = cell.vertices.len();
    (0..k).any(|i| cell.vertices[i] == a && cell.vertices[(i + 1) % k] == b)
}

/// Axis-aligned box `[x0, x1] × [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub fn area(&self) -> f64 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }
}

/// Stokes and Darcy boxes stacked vertically with a shared horizontal interface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DarcyStokesBox {
    pub stokes: Rect,
    pub darcy: Rect,
}

impl Default for DarcyStokesBox {
    fn default() -> Self {
        let pi = std::f64::consts::PI;
        Self {
            stokes: Rect {
                x0: 0.0,
                x1: pi,
                y0: 0.0,
                y1: 1.0,
            },
            darcy: Rect {
                x0: 0.0,
                x1: pi,
                y0: -1.0,
                y1: 0.0,
            },
        }
    }
}

impl DarcyStokesBox {
    /// The `y` coordinate of the shared edge, with `true` when Stokes lies above.
    pub fn interface(&self) -> Result<(f64, bool)> {
        let (s, d) = (self.stokes, self.darcy);
        for r in [s, d] {
            if !(r.x1 > r.x0 && r.y1 > r.y0) {
                return Err(WgError::Mesh(format!("degenerate box {r:?}")));
            }
        }
        if s.x0 != d.x0 || s.x1 != d.x1 {
            return Err(WgError::Mesh(
                "Stokes and Darcy boxes must span the same x-range".into(),
            ));
        }
        if s.y0 == d.y1 {
            Ok((s.y0, true))
        } else if s.y1 == d.y0 {
            Ok((s.y1, false))
        } else {
            Err(WgError::Mesh("Stokes and Darcy boxes share no edge".into()))
        }
    }

    pub fn area(&self) -> f64 {
        self.stokes.area() + self.darcy.area()
    }
}

/// `n × n` rectangles on each side, `(2n) × n` in total.
pub fn build_rect_mesh(n: usize, domain: &DarcyStokesBox) -> Result<PolyMesh> {
    if n == 0 {
        return Err(WgError::Mesh("grid size n must be at least 1".into()));
    }
    let (y_interface, stokes_above) = domain.interface()?;
    let (lower, upper, lower_region, upper_region) = if stokes_above {
        (domain.darcy, domain.stokes, Region::Darcy, Region::Stokes)
    } else {
        (domain.stokes, domain.darcy, Region::Stokes, Region::Darcy)
    };
    let xs: Vec<f64> = (0..=n)
        .map(|i| lower.x0 + (lower.x1 - lower.x0) * i as f64 / n as f64)
        .collect();
    let mut ys: Vec<f64> = (0..n)
        .map(|j| lower.y0 + (lower.y1 - lower.y0) * j as f64 / n as f64)
        .collect();
    ys.push(y_interface);
    ys.extend((1..=n).map(|j| upper.y0 + (upper.y1 - upper.y0) * j as f64 / n as f64));

    let mut vertices = Vec::with_capacity((n + 1) * (2 * n + 1));
    for &y in &ys {
        for &x in &xs {
            vertices.push([x, y]);
        }
    }
    let vid = |i: usize, j: usize| j * (n + 1) + i;
    let mut cells = Vec::with_capacity(2 * n * n);
    for j in 0..2 * n {
        let region = if j < n { lower_region } else { upper_region };
        for i in 0..n {
            cells.push((
                region,
                vec![vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)],
            ));
        }
    }
    PolyMesh::new(vertices, cells, Some(InterfaceLine::horizontal(y_interface)))
}

/// Outcome of the Stokes-side whitening sweep.
#[derive(Debug, Clone, Serialize)]
pub struct Colorability {
    pub colorable: bool,
    /// Stokes cells left black at the fixed point.
    pub black: Vec<usize>,
    /// Number of rule-2 passes that whitened at least one cell.
    pub sweeps: usize,
    /// Black-cell count after step 1 and after every productive pass.
    pub black_history: Vec<usize>,
}

/// Whitening sweep over the Stokes cells. An edge lies on the Stokes
/// subdomain boundary when it is a Stokes boundary edge or an interface edge.
pub fn check_colorable(mesh: &PolyMesh) -> Colorability {
    let stokes: Vec<usize> = mesh.cells_in(Region::Stokes).collect();
    let mut white = vec![false; mesh.cells.len()];
    let on_stokes_boundary =
        |e: usize| matches!(mesh.edges[e].class, EdgeClass::BoundaryStokes | EdgeClass::Interface);
    let stokes_neighbour = |c: usize, e: usize| -> Option<usize> {
        let edge = &mesh.edges[e];
        let other = if edge.left == c { edge.right } else { Some(edge.left) };
        other.filter(|&o| mesh.cells[o].region == Region::Stokes)
    };
    let boundary_count = |c: usize| mesh.cells[c].edges.iter().filter(|&&e| on_stokes_boundary(e)).count();

    for &c in &stokes {
        if boundary_count(c) >= 2 {
            white[c] = true;
        }
    }
    let count_black = |w: &[bool]| stokes.iter().filter(|&&c| !w[c]).count();
    let mut history = vec![count_black(&white)];
    let mut sweeps = 0;
    loop {
        let snapshot = white.clone();
        let mut changed = false;
        for &c in &stokes {
            if snapshot[c] {
                continue;
            }
            let white_neighbours = mesh.cells[c]
                .edges
                .iter()
                .filter(|&&e| stokes_neighbour(c, e).is_some_and(|o| snapshot[o]))
                .count();
            let boundary = boundary_count(c);
            if (boundary >= 1 && white_neighbours >= 1) || white_neighbours >= 2 {
                white[c] = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        sweeps += 1;
        history.push(count_black(&white));
    }
    let black: Vec<usize> = stokes.iter().copied().filter(|&c| !white[c]).collect();
    Colorability {
        colorable: black.is_empty(),
        black,
        sweeps,
        black_history: history,
    }
}

/// Serialize in the `wgmesh 1` text format.
pub fn write_wgmesh(mesh: &PolyMesh) -> String {
    let mut s = String::from("wgmesh 1\n");
    let _ = writeln!(s, "{}", mesh.vertices.len());
    for p in &mesh.vertices {
        let _ = writeln!(s, "{:.17e} {:.17e}", p[0], p[1]);
    }
    let _ = writeln!(s, "{}", mesh.cells.len());
    for c in &mesh.cells {
        let tag = match c.region {
            Region::Stokes => "S",
            Region::Darcy => "D",
        };
        let _ = write!(s, "{tag} {}", c.vertices.len());
        for v in &c.vertices {
            let _ = write!(s, " {v}");
        }
        s.push('\n');
    }
    s
}

/// Parse the `wgmesh 1` text format. Blank lines and `#` comments are skipped.
pub fn read_wgmesh(text: &str, interface: Option<InterfaceLine>) -> Result<PolyMesh> {
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty())
        .collect();
    let bad = |line: usize, msg: String| WgError::MeshFormat { line, msg };
    let last_line = text.lines().count().max(1);
    let mut cursor = lines.iter().copied();
    let mut next = |what: &str| cursor.next().ok_or_else(|| bad(last_line, format!("missing {what}")));

    let (ln, header) = next("header")?;
    if header.split_whitespace().collect::<Vec<_>>() != ["wgmesh", "1"] {
        return Err(bad(ln, "expected header `wgmesh 1`".into()));
    }
    let (ln, l) = next("vertex count")?;
    let nv = l.parse::<usize>().map_err(|_| bad(ln, format!("bad vertex count `{l}`")))?;
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (ln, l) = next("vertex line")?;
        let xy = l
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| bad(ln, format!("bad coordinate `{t}`"))))
            .collect::<Result<Vec<f64>>>()?;
        if xy.len() != 2 {
            return Err(bad(ln, "vertex line needs exactly two coordinates".into()));
        }
        vertices.push([xy[0], xy[1]]);
    }
    let (ln, l) = next("cell count")?;
    let nc = l.parse::<usize>().map_err(|_| bad(ln, format!("bad cell count `{l}`")))?;
    let mut cells = Vec::with_capacity(nc);
    for _ in 0..nc {
        let (ln, l) = next("cell line")?;
        let toks: Vec<&str> = l.split_whitespace().collect();
        if toks.len() < 2 {
            return Err(bad(ln, "cell line needs `region k v1 ... vk`".into()));
        }
        let region = match toks[0] {
            "S" => Region::Stokes,
            "D" => Region::Darcy,
            t => return Err(bad(ln, format!("unknown region `{t}`, expected S or D"))),
        };
        let k = toks[1].parse::<usize>().map_err(|_| bad(ln, "bad vertex count".into()))?;
        if toks.len() != k + 2 {
            return Err(bad(ln, format!("expected {k} vertex indices, found {}", toks.len() - 2)));
        }
        let vs = toks[2..]
            .iter()
            .map(|t| t.parse::<usize>().map_err(|_| bad(ln, format!("bad vertex index `{t}`"))))
            .collect::<Result<Vec<_>>>()?;
        cells.push((region, vs));
    }
    if let Some((ln, _)) = cursor.next() {
        return Err(bad(ln, "trailing content after cells".into()));
    }
    PolyMesh::new(vertices, cells, interface)
}

pub fn load_wgmesh(path: &Path, interface: Option<InterfaceLine>) -> Result<PolyMesh> {
    let text = std::fs::read_to_string(path)?;
    read_wgmesh(&text, interface)
}
