//! Isosurface extraction on a regular grid.
//!
//! Each active cell is processed face by face: crossings on a face are paired
//! into directed segments (ambiguous faces are resolved by the bilinear
//! saddle value, which depends only on that face), the segments of a cell
//! close into loops, and every loop is fanned around its centroid. Two cells
//! sharing a face produce the same segments with opposite directions, so the
//! output is closed and consistently oriented wherever the surface stays
//! inside the grid. Vertices on grid edges are shared through a global edge
//! index.
//!
//! The grid is evaluated coarse to fine: only cells near a sign change are
//! refined, and the finest level traces every surface component across face
//! neighbours until it closes. The grid is not padded, so a field that is
//! inside on the domain boundary yields an open surface there, not a box.

use std::collections::{HashMap, HashSet, VecDeque};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point3, TriangleMesh};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractConfig {
    /// Cells per axis of the finest grid.
    pub resolution: usize,
    /// Cells per axis of the first evaluated grid; equal to `resolution`
    /// for a dense evaluation. Must divide `resolution` by a power of two.
    pub coarse_resolution: usize,
    /// Inside is `value > iso`.
    pub iso: f64,
    pub lo: f64,
    pub hi: f64,
    /// Points per field call.
    pub batch: usize,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self { resolution: 128, coarse_resolution: 32, iso: 0.0, lo: -1.0, hi: 1.0, batch: 8192 }
    }
}

impl ExtractConfig {
    pub fn with_resolution(resolution: usize) -> Self {
        let mut coarse = resolution;
        while coarse > 32 && coarse.is_multiple_of(2) {
            coarse /= 2;
        }
        Self { resolution, coarse_resolution: coarse, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution < 8 {
            return Err(Error::config("resolution", "must be at least 8"));
        }
        let c = self.coarse_resolution;
        if c == 0 || !self.resolution.is_multiple_of(c) || !(self.resolution / c).is_power_of_two() {
            return Err(Error::config("coarse_resolution", "resolution / coarse_resolution must be a power of two"));
        }
        if !(self.lo < self.hi) {
            return Err(Error::config("lo", "need lo < hi"));
        }
        if self.batch == 0 {
            return Err(Error::config("batch", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ExtractReport {
    pub evaluated_points: usize,
    pub grid_points: usize,
    pub surface_cells: usize,
    /// Surface cells touching the grid boundary; the mesh is open there.
    pub boundary_cells: usize,
}

/// Corners of a face in counter-clockwise order around its outward normal,
/// as corner bit masks `x + 2y + 4z`.
fn faces() -> &'static [[u8; 4]; 6] {
    static FACES: OnceLock<[[u8; 4]; 6]> = OnceLock::new();
    FACES.get_or_init(|| {
        let mut out = [[0u8; 4]; 6];
        for a in 0..3 {
            let (b, c) = ((a + 1) % 3, (a + 2) % 3);
            for side in 0..2u8 {
                // (0,0) (1,0) (1,1) (0,1) in the (b, c) plane winds around +e_a.
                let mut ring = [(0u8, 0u8), (1, 0), (1, 1), (0, 1)].map(|(u, v)| (side << a) | (u << b) | (v << c));
                if side == 0 {
                    ring.reverse();
                }
                out[2 * a + side as usize] = ring;
            }
        }
        out
    })
}

fn corner_offset(bits: u8) -> [usize; 3] {
    [(bits & 1) as usize, ((bits >> 1) & 1) as usize, ((bits >> 2) & 1) as usize]
}

struct Grid {
    n: usize,
    values: Vec<f32>,
    lo: f64,
    step: f64,
}

impl Grid {
    fn idx(&self, p: [usize; 3]) -> usize {
        let m = self.n + 1;
        (p[0] * m + p[1]) * m + p[2]
    }

    fn value(&self, p: [usize; 3]) -> f32 {
        self.values[self.idx(p)]
    }

    fn position(&self, p: [usize; 3]) -> Point3 {
        [0, 1, 2].map(|k| self.lo + self.step * p[k] as f64)
    }

    /// Evaluates every listed grid point that has no value yet.
    fn fill<F>(&mut self, points: impl IntoIterator<Item = [usize; 3]>, batch: usize, field: &mut F, report: &mut ExtractReport) -> Result<()>
    where
        F: FnMut(&[Point3]) -> Result<Vec<f64>>,
    {
        let mut seen = HashSet::new();
        let todo: Vec<[usize; 3]> = points.into_iter().filter(|&p| self.value(p).is_nan() && seen.insert(p)).collect();
        for chunk in todo.chunks(batch) {
            let pos: Vec<Point3> = chunk.iter().map(|&p| self.position(p)).collect();
            let vals = field(&pos)?;
            if vals.len() != chunk.len() {
                return Err(Error::contract(format!("field returned {} values for {} points", vals.len(), chunk.len())));
            }
            for (&p, v) in chunk.iter().zip(vals) {
                if v.is_nan() {
                    return Err(Error::NonFinite(format!("field is NaN at {:?}", self.position(p))));
                }
                let i = self.idx(p);
                self.values[i] = v as f32;
            }
        }
        report.evaluated_points += todo.len();
        Ok(())
    }
}

/// Grid points at the corners of the cell `c` of a grid with the given stride.
fn cell_corners(c: [usize; 3], stride: usize) -> impl Iterator<Item = [usize; 3]> {
    (0..8u8).map(move |b| {
        let o = corner_offset(b);
        [0, 1, 2].map(|k| (c[k] + o[k]) * stride)
    })
}

fn mixed(grid: &Grid, c: [usize; 3], stride: usize, iso: f32) -> bool {
    let mut inside = 0;
    for p in cell_corners(c, stride) {
        if grid.value(p) > iso {
            inside += 1;
        }
    }
    inside != 0 && inside != 8
}

/// Triangles of one unit cell of the finest grid.
struct CellMesher<'a> {
    grid: &'a Grid,
    iso: f32,
    vertices: Vec<Point3>,
    edge_vertex: HashMap<u64, u32>,
    triangles: Vec<[u32; 3]>,
}

impl CellMesher<'_> {
    fn edge_vertex(&mut self, a: [usize; 3], b: [usize; 3]) -> u32 {
        let axis = (0..3).find(|&k| a[k] != b[k]).expect("distinct corners");
        let base = if a[axis] < b[axis] { a } else { b };
        let m = (self.grid.n + 1) as u64;
        let key = ((base[0] as u64 * m + base[1] as u64) * m + base[2] as u64) * 3 + axis as u64;
        if let Some(&v) = self.edge_vertex.get(&key) {
            return v;
        }
        let (va, vb) = (self.grid.value(a) as f64, self.grid.value(b) as f64);
        let t = ((self.iso as f64 - va) / (vb - va)).clamp(0.0, 1.0);
        let (pa, pb) = (self.grid.position(a), self.grid.position(b));
        let p = [0, 1, 2].map(|k| pa[k] + t * (pb[k] - pa[k]));
        let id = self.vertices.len() as u32;
        self.vertices.push(p);
        self.edge_vertex.insert(key, id);
        id
    }

    fn cell(&mut self, c: [usize; 3]) {
        let corner = |b: u8| {
            let o = corner_offset(b);
            [c[0] + o[0], c[1] + o[1], c[2] + o[2]]
        };
        let mut next: HashMap<u32, u32> = HashMap::new();
        for face in faces() {
            let pts = face.map(corner);
            let w = pts.map(|p| self.grid.value(p) as f64 - self.iso as f64);
            let inside = pts.map(|p| self.grid.value(p) > self.iso);
            // Crossings in counter-clockwise order, tagged as entering or
            // leaving the inside region.
            let mut cross: Vec<(bool, u32)> = Vec::with_capacity(4);
            for k in 0..4 {
                let j = (k + 1) % 4;
                if inside[k] != inside[j] {
                    cross.push((inside[j], self.edge_vertex(pts[k], pts[j])));
                }
            }
            let pairs: Vec<(u32, u32)> = match cross.len() {
                0 => vec![],
                2 => {
                    let (enter, exit) = if cross[0].0 { (cross[0].1, cross[1].1) } else { (cross[1].1, cross[0].1) };
                    vec![(enter, exit)]
                }
                4 => {
                    // Rotate so the list reads enter, exit, enter, exit.
                    let s = if cross[0].0 { 0 } else { 1 };
                    let r: Vec<u32> = (0..4).map(|k| cross[(k + s) % 4].1).collect();
                    // The bilinear saddle lies inside exactly when the inside
                    // diagonal's product exceeds the outside one's. Products
                    // commute, so both cells sharing the face agree.
                    let (a, b) = (w[0] * w[2], w[1] * w[3]);
                    let joined = if inside[0] { a > b } else { b > a };
                    if joined {
                        vec![(r[2], r[1]), (r[0], r[3])]
                    } else {
                        vec![(r[0], r[1]), (r[2], r[3])]
                    }
                }
                _ => unreachable!("a face has an even number of crossings"),
            };
            for (a, b) in pairs {
                next.insert(a, b);
            }
        }
        let mut starts: Vec<u32> = next.keys().copied().collect();
        starts.sort_unstable();
        let mut done: HashSet<u32> = HashSet::new();
        for s in starts {
            if done.contains(&s) {
                continue;
            }
            let mut ring = vec![s];
            done.insert(s);
            let mut v = next[&s];
            while v != s {
                ring.push(v);
                done.insert(v);
                v = next[&v];
            }
            self.emit(&ring);
        }
    }

    fn emit(&mut self, ring: &[u32]) {
        if ring.len() == 3 {
            self.triangles.push([ring[0], ring[1], ring[2]]);
            return;
        }
        let mut centroid = [0.0; 3];
        for &v in ring {
            for (c, x) in centroid.iter_mut().zip(self.vertices[v as usize]) {
                *c += x / ring.len() as f64;
            }
        }
        let c = self.vertices.len() as u32;
        self.vertices.push(centroid);
        for k in 0..ring.len() {
            self.triangles.push([c, ring[k], ring[(k + 1) % ring.len()]]);
        }
    }
}

/// Extracts the `iso` level set of `field` over `[lo, hi]^3`. The field
/// receives batches of points and returns one value per point.
pub fn marching_cubes<F>(mut field: F, config: &ExtractConfig) -> Result<(TriangleMesh, ExtractReport)>
where
    F: FnMut(&[Point3]) -> Result<Vec<f64>>,
{
    config.validate()?;
    let n = config.resolution;
    let mut grid = Grid { n, values: vec![f32::NAN; (n + 1).pow(3)], lo: config.lo, step: (config.hi - config.lo) / n as f64 };
    let iso = config.iso as f32;
    let mut report = ExtractReport { grid_points: (n + 1).pow(3), ..Default::default() };

    let mut res = config.coarse_resolution;
    let mut active: Vec<[usize; 3]> = (0..res).flat_map(|i| (0..res).flat_map(move |j| (0..res).map(move |k| [i, j, k]))).collect();
    while res < n {
        let stride = n / res;
        grid.fill(active.iter().flat_map(|&c| cell_corners(c, stride)), config.batch, &mut field, &mut report)?;
        let mut refined: HashSet<[usize; 3]> = HashSet::new();
        for &c in active.iter().filter(|&&c| mixed(&grid, c, stride, iso)) {
            for d in 0..27 {
                let off = [d / 9, (d / 3) % 3, d % 3];
                let nb = [0, 1, 2].map(|k| (c[k] + off[k]).checked_sub(1));
                let Some(nb) = nb.iter().all(|x| x.is_some_and(|x| x < res)).then(|| nb.map(|x| x.unwrap())) else {
                    continue;
                };
                for b in 0..8u8 {
                    let o = corner_offset(b);
                    refined.insert([0, 1, 2].map(|k| 2 * nb[k] + o[k]));
                }
            }
        }
        active = refined.into_iter().collect();
        active.sort_unstable();
        res *= 2;
    }

    // Finest level: trace surface components across shared faces.
    grid.fill(active.iter().flat_map(|&c| cell_corners(c, 1)), config.batch, &mut field, &mut report)?;
    let mut queue: VecDeque<[usize; 3]> = active.iter().copied().filter(|&c| mixed(&grid, c, 1, iso)).collect();
    let mut visited: HashSet<[usize; 3]> = queue.iter().copied().collect();
    let mut surface: Vec<[usize; 3]> = Vec::new();
    while let Some(c) = queue.pop_front() {
        surface.push(c);
        for (fi, face) in faces().iter().enumerate() {
            let (axis, side) = (fi / 2, fi % 2);
            let w = face.map(|b| {
                let o = corner_offset(b);
                grid.value([c[0] + o[0], c[1] + o[1], c[2] + o[2]]) > iso
            });
            if w.iter().all(|&x| x == w[0]) {
                continue;
            }
            let mut nb = c;
            if side == 1 {
                nb[axis] += 1;
                if nb[axis] >= n {
                    report.boundary_cells += 1;
                    continue;
                }
            } else if nb[axis] == 0 {
                report.boundary_cells += 1;
                continue;
            } else {
                nb[axis] -= 1;
            }
            if visited.insert(nb) {
                grid.fill(cell_corners(nb, 1), config.batch, &mut field, &mut report)?;
                queue.push_back(nb);
            }
        }
    }
    surface.sort_unstable();
    report.surface_cells = surface.len();

    let mut mesher = CellMesher { grid: &grid, iso, vertices: Vec::new(), edge_vertex: HashMap::new(), triangles: Vec::new() };
    for &c in &surface {
        mesher.cell(c);
    }
    if mesher.triangles.is_empty() {
        log::warn!("field has no {} crossing inside the grid; mesh is empty", config.iso);
    }
    let mesh = TriangleMesh::new(mesher.vertices, mesher.triangles)?;
    Ok((mesh, report))
}
