//! Inside/outside labels for closed meshes by ray parity.
//!
//! Rays are cast along +x and along two fixed oblique directions. A ray that
//! grazes an edge or vertex, or starts on the surface, is inconclusive and the
//! next direction is used. The label comes from the first conclusive
//! direction; a query is flagged unreliable when the conclusive directions
//! disagree (a symptom of a non-watertight input) or when none is conclusive.

use super::augment::{apply3, AugmentationParams};
use super::mesh::{Point3, TriangleMesh};

/// Fallback ray frames; oblique so that axis-aligned and symmetric meshes do
/// not produce the same tie as the primary +x ray.
const FALLBACK_FRAMES: [(f64, f64, f64); 2] = [(0.613_1, 0.377_9, 0.219_3), (-1.193_7, 0.702_3, -0.481_1)];

/// Uniform 2-D bucket grid over the projection of all triangles, in a rotated
/// frame, onto the plane orthogonal to that frame's x axis.
struct AxisGrid {
    frame: Option<[[f64; 3]; 3]>,
    vertices: Vec<Point3>,
    lo: [f64; 2],
    cell: [f64; 2],
    dims: [usize; 2],
    starts: Vec<u32>,
    items: Vec<u32>,
}

impl AxisGrid {
    fn build(mesh: &TriangleMesh, frame: Option<[[f64; 3]; 3]>) -> Self {
        let (u, v) = (1, 2);
        let vertices: Vec<Point3> = match &frame {
            Some(r) => mesh.vertices.iter().map(|&p| apply3(r, p)).collect(),
            None => mesh.vertices.clone(),
        };
        let rotated = TriangleMesh { vertices, triangles: Vec::new() };
        let (lo3, hi3) = rotated.bounds();
        let vertices = rotated.vertices;
        let corners = |t: usize| mesh.triangles[t].map(|i| vertices[i as usize]);
        let lo = [lo3[u], lo3[v]];
        let ext = [(hi3[u] - lo3[u]).max(1e-12), (hi3[v] - lo3[v]).max(1e-12)];
        let side = ((mesh.triangles.len() as f64).sqrt().ceil() as usize).clamp(1, 512);
        let dims = [side, side];
        let cell = [ext[0] / side as f64, ext[1] / side as f64];
        let cell_of = |x: f64, k: usize| (((x - lo[k]) / cell[k]).floor().max(0.0) as usize).min(dims[k] - 1);

        let mut counts = vec![0u32; side * side + 1];
        let ranges: Vec<[usize; 4]> = (0..mesh.triangles.len())
            .map(|t| {
                let c = corners(t);
                let (mut umin, mut umax, mut vmin, mut vmax) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
                for p in c {
                    umin = umin.min(p[u]);
                    umax = umax.max(p[u]);
                    vmin = vmin.min(p[v]);
                    vmax = vmax.max(p[v]);
                }
                [cell_of(umin, 0), cell_of(umax, 0), cell_of(vmin, 1), cell_of(vmax, 1)]
            })
            .collect();
        for r in &ranges {
            for i in r[0]..=r[1] {
                for j in r[2]..=r[3] {
                    counts[i * side + j + 1] += 1;
                }
            }
        }
        for k in 1..counts.len() {
            counts[k] += counts[k - 1];
        }
        let mut fill = counts.clone();
        let mut items = vec![0u32; counts[side * side] as usize];
        for (t, r) in ranges.iter().enumerate() {
            for i in r[0]..=r[1] {
                for j in r[2]..=r[3] {
                    let slot = &mut fill[i * side + j];
                    items[*slot as usize] = t as u32;
                    *slot += 1;
                }
            }
        }
        Self { frame, vertices, lo, cell, dims, starts: counts, items }
    }

    fn bucket(&self, pu: f64, pv: f64) -> Option<&[u32]> {
        let fu = (pu - self.lo[0]) / self.cell[0];
        let fv = (pv - self.lo[1]) / self.cell[1];
        if fu < 0.0 || fv < 0.0 {
            return None;
        }
        let (i, j) = (fu as usize, fv as usize);
        // Points on the far boundary belong to the last cell.
        let i = if i == self.dims[0] && fu <= self.dims[0] as f64 { i - 1 } else { i };
        let j = if j == self.dims[1] && fv <= self.dims[1] as f64 { j - 1 } else { j };
        if i >= self.dims[0] || j >= self.dims[1] {
            return None;
        }
        let k = i * self.dims[1] + j;
        Some(&self.items[self.starts[k] as usize..self.starts[k + 1] as usize])
    }

    /// Parity of crossings along the frame's +x ray, or `None` on a tie.
    fn parity(&self, mesh: &TriangleMesh, p: Point3) -> Option<bool> {
        let (a, u, v) = (0, 1, 2);
        let p = match &self.frame {
            Some(r) => apply3(r, p),
            None => p,
        };
        let Some(bucket) = self.bucket(p[u], p[v]) else { return Some(false) };
        let mut inside = false;
        for &t in bucket {
            let c = mesh.triangles[t as usize].map(|i| self.vertices[i as usize]);
            let (pu, pv) = (p[u], p[v]);
            let e = |i: usize, j: usize| {
                (c[j][u] - c[i][u]) * (pv - c[i][v]) - (c[j][v] - c[i][v]) * (pu - c[i][u])
            };
            let (w0, w1, w2) = (e(1, 2), e(2, 0), e(0, 1));
            let sum = w0 + w1 + w2;
            if sum == 0.0 {
                // Triangle is parallel to the ray.
                continue;
            }
            let tol = 1e-12 * (w0.abs() + w1.abs() + w2.abs());
            let all_pos = w0 >= -tol && w1 >= -tol && w2 >= -tol;
            let all_neg = w0 <= tol && w1 <= tol && w2 <= tol;
            if !(all_pos || all_neg) {
                continue;
            }
            if w0.abs() <= tol || w1.abs() <= tol || w2.abs() <= tol {
                return None;
            }
            let hit = (w0 * c[0][a] + w1 * c[1][a] + w2 * c[2][a]) / sum;
            let d = hit - p[a];
            if d.abs() <= 1e-12 {
                return None;
            }
            if d > 0.0 {
                inside = !inside;
            }
        }
        Some(inside)
    }
}

/// Labels plus the indices of queries whose label is unreliable.
#[derive(Clone, Debug, Default)]
pub struct OccupancyLabels {
    pub inside: Vec<bool>,
    pub unreliable: Vec<usize>,
}

/// Reusable ray-parity oracle for one mesh.
pub struct OccupancyOracle<'m> {
    mesh: &'m TriangleMesh,
    grids: [AxisGrid; 3],
}

impl<'m> OccupancyOracle<'m> {
    pub fn new(mesh: &'m TriangleMesh) -> Self {
        let frame = |(yaw, pitch, roll): (f64, f64, f64)| {
            Some(AugmentationParams { axis_scales: [1.0; 3], yaw, pitch, roll }.rotation())
        };
        Self {
            mesh,
            grids: [
                AxisGrid::build(mesh, None),
                AxisGrid::build(mesh, frame(FALLBACK_FRAMES[0])),
                AxisGrid::build(mesh, frame(FALLBACK_FRAMES[1])),
            ],
        }
    }

    /// Returns `(inside, reliable)`.
    pub fn classify(&self, p: Point3) -> (bool, bool) {
        let votes = [
            self.grids[0].parity(self.mesh, p),
            self.grids[1].parity(self.mesh, p),
            self.grids[2].parity(self.mesh, p),
        ];
        let mut conclusive = votes.iter().flatten();
        match conclusive.next() {
            Some(&first) => (first, conclusive.all(|&o| o == first)),
            None => (false, false),
        }
    }

    pub fn label(&self, queries: &[Point3]) -> OccupancyLabels {
        let mut out = OccupancyLabels { inside: Vec::with_capacity(queries.len()), unreliable: Vec::new() };
        for (i, &q) in queries.iter().enumerate() {
            let (inside, reliable) = self.classify(q);
            out.inside.push(inside);
            if !reliable {
                out.unreliable.push(i);
            }
        }
        out
    }
}

/// Inside/outside label of every query against a closed mesh.
pub fn occupancy_label(mesh: &TriangleMesh, queries: &[Point3]) -> OccupancyLabels {
    let labels = OccupancyOracle::new(mesh).label(queries);
    if !labels.unreliable.is_empty() {
        log::warn!("{} of {} occupancy labels unreliable (mesh may not be watertight)", labels.unreliable.len(), queries.len());
    }
    labels
}
