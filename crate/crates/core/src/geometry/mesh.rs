//! Indexed triangle meshes: OBJ/OFF input, OBJ output, unit-sphere normalization.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};

pub type Point3 = [f64; 3];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Point3>,
    pub triangles: Vec<[u32; 3]>,
}

pub(crate) fn sub(a: Point3, b: Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn cross(a: Point3, b: Point3) -> Point3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub(crate) fn dot(a: Point3, b: Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn norm(a: Point3) -> f64 {
    dot(a, a).sqrt()
}

impl TriangleMesh {
    /// Builds a mesh, checking that every index refers to a vertex.
    pub fn new(vertices: Vec<Point3>, triangles: Vec<[u32; 3]>) -> Result<Self> {
        let n = vertices.len();
        if let Some(t) = triangles.iter().find(|t| t.iter().any(|&i| i as usize >= n)) {
            return Err(Error::contract(format!("triangle {t:?} indexes past {n} vertices")));
        }
        Ok(Self { vertices, triangles })
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty() || self.triangles.is_empty()
    }

    pub fn corners(&self, t: usize) -> [Point3; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a as usize], self.vertices[b as usize], self.vertices[c as usize]]
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.corners(t);
        0.5 * norm(cross(sub(b, a), sub(c, a)))
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    /// Indices of zero-area triangles. They are kept in the mesh; callers decide.
    pub fn degenerate_triangles(&self) -> Vec<usize> {
        (0..self.triangles.len()).filter(|&t| self.triangle_area(t) == 0.0).collect()
    }

    /// Signed enclosed volume; positive for closed meshes with outward orientation.
    pub fn signed_volume(&self) -> f64 {
        (0..self.triangles.len())
            .map(|t| {
                let [a, b, c] = self.corners(t);
                dot(a, cross(b, c)) / 6.0
            })
            .sum()
    }

    pub fn bounds(&self) -> (Point3, Point3) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for v in &self.vertices {
            for k in 0..3 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        (lo, hi)
    }

    pub fn max_vertex_norm(&self) -> f64 {
        self.vertices.iter().map(|&v| norm(v)).fold(0.0, f64::max)
    }

    /// Every undirected edge is used by exactly two triangles, once in each direction.
    pub fn is_watertight(&self) -> bool {
        if self.triangles.is_empty() {
            return false;
        }
        let mut directed: HashMap<(u32, u32), u32> = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                *directed.entry((t[k], t[(k + 1) % 3])).or_default() += 1;
            }
        }
        directed.iter().all(|(&(a, b), &count)| count == 1 && directed.get(&(b, a)) == Some(&1))
    }

    /// Centers the per-axis bounding box at the origin and scales the farthest
    /// vertex to norm 1.
    pub fn normalize_unit_sphere(&self) -> Result<Self> {
        if self.vertices.is_empty() {
            return Err(Error::EmptyMesh);
        }
        let (lo, hi) = self.bounds();
        let center = [(hi[0] + lo[0]) / 2.0, (hi[1] + lo[1]) / 2.0, (hi[2] + lo[2]) / 2.0];
        let centered: Vec<Point3> = self.vertices.iter().map(|&v| sub(v, center)).collect();
        let max = centered.iter().map(|&v| norm(v)).fold(0.0, f64::max);
        if !(max > 0.0) || !max.is_finite() {
            return Err(Error::DegenerateMesh("all vertices coincide; scale undefined".into()));
        }
        let scale = 1.0 / max;
        Ok(Self {
            vertices: centered.iter().map(|v| [v[0] * scale, v[1] * scale, v[2] * scale]).collect(),
            triangles: self.triangles.clone(),
        })
    }

    /// Area-weighted uniform samples on the surface.
    pub fn sample_surface<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Result<Vec<Point3>> {
        if self.is_empty() {
            return Err(Error::EmptyMesh);
        }
        let mut cumulative = Vec::with_capacity(self.triangles.len());
        let mut total = 0.0;
        for t in 0..self.triangles.len() {
            total += self.triangle_area(t);
            cumulative.push(total);
        }
        if !(total > 0.0) {
            return Err(Error::DegenerateMesh("mesh has zero surface area".into()));
        }
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let target = rng.random::<f64>() * total;
            let t = cumulative.partition_point(|&c| c <= target).min(self.triangles.len() - 1);
            let [a, b, c] = self.corners(t);
            let r1 = rng.random::<f64>().sqrt();
            let r2 = rng.random::<f64>();
            let (wa, wb, wc) = (1.0 - r1, r1 * (1.0 - r2), r1 * r2);
            out.push([
                wa * a[0] + wb * b[0] + wc * c[0],
                wa * a[1] + wb * b[1] + wc * c[1],
                wa * a[2] + wb * b[2] + wc * c[2],
            ]);
        }
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        let mesh = match ext.as_deref() {
            Some("obj") => parse_obj(&text, path)?,
            Some("off") => parse_off(&text, path)?,
            other => return Err(Error::Format(format!("unknown mesh extension {other:?}"))),
        };
        let degenerate = mesh.degenerate_triangles().len();
        if degenerate > 0 {
            log::warn!("{}: {degenerate} zero-area triangles", path.display());
        }
        Ok(mesh)
    }

    pub fn to_obj_string(&self) -> String {
        let mut s = String::with_capacity(self.vertices.len() * 40 + self.triangles.len() * 24);
        for v in &self.vertices {
            let _ = writeln!(s, "v {} {} {}", v[0], v[1], v[2]);
        }
        for t in &self.triangles {
            let _ = writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
        }
        s
    }

    pub fn write_obj(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_obj_string())?;
        Ok(())
    }
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), line, msg: msg.into() }
}

fn parse_f64(tok: Option<&str>, path: &Path, line: usize) -> Result<f64> {
    let tok = tok.ok_or_else(|| parse_err(path, line, "missing coordinate"))?;
    tok.parse().map_err(|_| parse_err(path, line, format!("bad number {tok:?}")))
}

/// Parses Wavefront OBJ text. Polygons are fan-triangulated; negative indices
/// are resolved relative to the vertices read so far.
pub fn parse_obj(text: &str, path: &Path) -> Result<TriangleMesh> {
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut toks = line.split_whitespace();
        match toks.next() {
            Some("v") => {
                let x = parse_f64(toks.next(), path, line_no)?;
                let y = parse_f64(toks.next(), path, line_no)?;
                let z = parse_f64(toks.next(), path, line_no)?;
                vertices.push([x, y, z]);
            }
            Some("f") => {
                let mut face = Vec::new();
                for tok in toks {
                    let idx_str = tok.split('/').next().unwrap_or("");
                    let idx: i64 = idx_str
                        .parse()
                        .map_err(|_| parse_err(path, line_no, format!("bad face index {tok:?}")))?;
                    let resolved = match idx {
                        0 => return Err(parse_err(path, line_no, "face index 0 (OBJ indices are 1-based)")),
                        i if i > 0 => i - 1,
                        i => vertices.len() as i64 + i,
                    };
                    if resolved < 0 || resolved as usize >= vertices.len() {
                        return Err(parse_err(path, line_no, format!("face index {idx} out of range")));
                    }
                    face.push(resolved as u32);
                }
                if face.len() < 3 {
                    return Err(parse_err(path, line_no, "face with fewer than 3 vertices"));
                }
                for k in 1..face.len() - 1 {
                    triangles.push([face[0], face[k], face[k + 1]]);
                }
            }
            _ => {}
        }
    }
    if vertices.is_empty() || triangles.is_empty() {
        return Err(Error::EmptyMesh);
    }
    TriangleMesh::new(vertices, triangles)
}

/// Parses Object File Format text (`OFF` header, counts, vertices, faces).
pub fn parse_off(text: &str, path: &Path) -> Result<TriangleMesh> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());
    let (hline, header) = lines.next().ok_or(Error::EmptyMesh)?;
    let rest = header
        .strip_prefix("OFF")
        .ok_or_else(|| parse_err(path, hline, "missing OFF header"))?
        .trim();
    let counts_line = if rest.is_empty() {
        lines.next().ok_or_else(|| parse_err(path, hline, "missing counts"))?
    } else {
        (hline, rest)
    };
    let counts: Vec<usize> = counts_line
        .1
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| parse_err(path, counts_line.0, format!("bad count {t:?}"))))
        .collect::<Result<_>>()?;
    if counts.len() < 2 {
        return Err(parse_err(path, counts_line.0, "expected vertex and face counts"));
    }
    let (nv, nf) = (counts[0], counts[1]);
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (ln, l) = lines.next().ok_or_else(|| parse_err(path, counts_line.0, "unexpected end of vertices"))?;
        let mut toks = l.split_whitespace();
        let x = parse_f64(toks.next(), path, ln)?;
        let y = parse_f64(toks.next(), path, ln)?;
        let z = parse_f64(toks.next(), path, ln)?;
        vertices.push([x, y, z]);
    }
    let mut triangles = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (ln, l) = lines.next().ok_or_else(|| parse_err(path, counts_line.0, "unexpected end of faces"))?;
        let nums: Vec<usize> = l
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| parse_err(path, ln, format!("bad face entry {t:?}"))))
            .collect::<Result<_>>()?;
        let k = *nums.first().ok_or_else(|| parse_err(path, ln, "empty face"))?;
        if k < 3 || nums.len() < k + 1 {
            return Err(parse_err(path, ln, "face with fewer than 3 vertices"));
        }
        let face = &nums[1..=k];
        if let Some(bad) = face.iter().find(|&&i| i >= nv) {
            return Err(parse_err(path, ln, format!("face index {bad} out of range")));
        }
        for j in 1..k - 1 {
            triangles.push([face[0] as u32, face[j] as u32, face[j + 1] as u32]);
        }
    }
    if vertices.is_empty() || triangles.is_empty() {
        return Err(Error::EmptyMesh);
    }
    TriangleMesh::new(vertices, triangles)
}
