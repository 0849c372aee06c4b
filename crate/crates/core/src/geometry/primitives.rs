//! Closed, outward-oriented primitive meshes used as fixtures and toy datasets.

use std::collections::HashMap;
use std::f64::consts::PI;

use super::mesh::{Point3, TriangleMesh};

fn mesh(vertices: Vec<Point3>, triangles: Vec<[u32; 3]>) -> TriangleMesh {
    TriangleMesh { vertices, triangles }
}

/// Geodesic sphere from a subdivided icosahedron.
pub fn icosphere(radius: f64, subdivisions: u32) -> TriangleMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Point3> = vec![
        [-1.0, t, 0.0], [1.0, t, 0.0], [-1.0, -t, 0.0], [1.0, -t, 0.0],
        [0.0, -1.0, t], [0.0, 1.0, t], [0.0, -1.0, -t], [0.0, 1.0, -t],
        [t, 0.0, -1.0], [t, 0.0, 1.0], [-t, 0.0, -1.0], [-t, 0.0, 1.0],
    ];
    let mut tris: Vec<[u32; 3]> = vec![
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ];
    let unit = |v: Point3| {
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        [v[0] / n, v[1] / n, v[2] / n]
    };
    for v in verts.iter_mut() {
        *v = unit(*v);
    }
    for _ in 0..subdivisions {
        let mut cache: HashMap<(u32, u32), u32> = HashMap::new();
        let mut next = Vec::with_capacity(tris.len() * 4);
        let mut midpoint = |a: u32, b: u32, verts: &mut Vec<Point3>| {
            let key = (a.min(b), a.max(b));
            *cache.entry(key).or_insert_with(|| {
                let (pa, pb) = (verts[a as usize], verts[b as usize]);
                verts.push(unit([(pa[0] + pb[0]) / 2.0, (pa[1] + pb[1]) / 2.0, (pa[2] + pb[2]) / 2.0]));
                (verts.len() - 1) as u32
            })
        };
        for [a, b, c] in tris {
            let ab = midpoint(a, b, &mut verts);
            let bc = midpoint(b, c, &mut verts);
            let ca = midpoint(c, a, &mut verts);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        tris = next;
    }
    let vertices = verts.iter().map(|v| [v[0] * radius, v[1] * radius, v[2] * radius]).collect();
    mesh(vertices, tris)
}

/// Axis-aligned box centered at the origin.
pub fn cuboid(half: Point3) -> TriangleMesh {
    let [x, y, z] = half;
    let vertices = vec![
        [-x, -y, -z], [x, -y, -z], [x, y, -z], [-x, y, -z],
        [-x, -y, z], [x, -y, z], [x, y, z], [-x, y, z],
    ];
    let triangles = vec![
        [0, 2, 1], [0, 3, 2], [4, 5, 6], [4, 6, 7], [0, 1, 5], [0, 5, 4],
        [1, 2, 6], [1, 6, 5], [2, 3, 7], [2, 7, 6], [3, 0, 4], [3, 4, 7],
    ];
    mesh(vertices, triangles)
}

/// Surface of revolution around z from a profile `(radius, z)` running from the
/// bottom pole to the top pole; both end radii must be zero.
fn revolve(profile: &[(f64, f64)], segments: usize) -> TriangleMesh {
    let n = profile.len();
    assert!(n >= 3 && profile[0].0 == 0.0 && profile[n - 1].0 == 0.0);
    let mut vertices = vec![[0.0, 0.0, profile[0].1]];
    for &(r, z) in &profile[1..n - 1] {
        for s in 0..segments {
            let a = 2.0 * PI * s as f64 / segments as f64;
            vertices.push([r * a.cos(), r * a.sin(), z]);
        }
    }
    vertices.push([0.0, 0.0, profile[n - 1].1]);
    let top = (vertices.len() - 1) as u32;
    let ring = |k: usize, s: usize| (1 + k * segments + s % segments) as u32;
    let rings = n - 2;
    let mut triangles = Vec::new();
    for s in 0..segments {
        triangles.push([0, ring(0, s + 1), ring(0, s)]);
        for k in 0..rings - 1 {
            let (a, b, c, d) = (ring(k, s), ring(k, s + 1), ring(k + 1, s + 1), ring(k + 1, s));
            triangles.push([a, b, c]);
            triangles.push([a, c, d]);
        }
        triangles.push([top, ring(rings - 1, s), ring(rings - 1, s + 1)]);
    }
    mesh(vertices, triangles)
}

pub fn cylinder(radius: f64, half_height: f64, segments: usize) -> TriangleMesh {
    revolve(&[(0.0, -half_height), (radius, -half_height), (radius, half_height), (0.0, half_height)], segments)
}

pub fn cone(radius: f64, half_height: f64, segments: usize) -> TriangleMesh {
    // The apex ring sits just below the tip so the tip is a single vertex.
    revolve(&[(0.0, -half_height), (radius, -half_height), (radius * 0.02, half_height * 0.96), (0.0, half_height)], segments)
}

pub fn capsule(radius: f64, half_length: f64, segments: usize, cap_rings: usize) -> TriangleMesh {
    let mut profile = vec![(0.0, -half_length - radius)];
    for k in 1..=cap_rings {
        let a = -PI / 2.0 + PI / 2.0 * k as f64 / cap_rings as f64;
        profile.push((radius * a.cos(), -half_length + radius * a.sin()));
    }
    for k in 0..cap_rings {
        let a = PI / 2.0 * k as f64 / cap_rings as f64;
        profile.push((radius * a.cos(), half_length + radius * a.sin()));
    }
    profile.push((0.0, half_length + radius));
    revolve(&profile, segments)
}

/// Torus around the z axis.
pub fn torus(major: f64, minor: f64, major_segments: usize, minor_segments: usize) -> TriangleMesh {
    let mut vertices = Vec::with_capacity(major_segments * minor_segments);
    for i in 0..major_segments {
        let u = 2.0 * PI * i as f64 / major_segments as f64;
        for j in 0..minor_segments {
            let v = 2.0 * PI * j as f64 / minor_segments as f64;
            let r = major + minor * v.cos();
            vertices.push([r * u.cos(), r * u.sin(), minor * v.sin()]);
        }
    }
    let idx = |i: usize, j: usize| ((i % major_segments) * minor_segments + j % minor_segments) as u32;
    let mut triangles = Vec::with_capacity(2 * major_segments * minor_segments);
    for i in 0..major_segments {
        for j in 0..minor_segments {
            let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
            triangles.push([a, b, c]);
            triangles.push([a, c, d]);
        }
    }
    mesh(vertices, triangles)
}

/// Extrudes a counter-clockwise polygon (star-shaped about its first vertex)
/// along z over `[-half_depth, half_depth]`.
pub fn extrude(polygon: &[[f64; 2]], half_depth: f64) -> TriangleMesh {
    let n = polygon.len();
    let mut vertices: Vec<Point3> = polygon.iter().map(|p| [p[0], p[1], -half_depth]).collect();
    vertices.extend(polygon.iter().map(|p| [p[0], p[1], half_depth]));
    let mut triangles = Vec::new();
    for k in 1..n - 1 {
        triangles.push([0, (k + 1) as u32, k as u32]);
        triangles.push([n as u32, (n + k) as u32, (n + k + 1) as u32]);
    }
    for k in 0..n {
        let (a, b) = (k as u32, ((k + 1) % n) as u32);
        let (c, d) = (b + n as u32, a + n as u32);
        triangles.push([a, b, c]);
        triangles.push([a, c, d]);
    }
    mesh(vertices, triangles)
}

pub fn l_shape() -> TriangleMesh {
    let poly = [[-1.0, -1.0], [1.0, -1.0], [1.0, 0.0], [0.0, 0.0], [0.0, 1.0], [-1.0, 1.0]];
    extrude(&poly, 0.35)
}

pub fn thin_plate() -> TriangleMesh {
    cuboid([1.0, 0.7, 0.06])
}

/// The eight named training primitives, each normalized to the unit sphere.
pub fn primitive_suite() -> Vec<(&'static str, TriangleMesh)> {
    let raw = vec![
        ("sphere", icosphere(1.0, 4)),
        ("box", cuboid([0.8, 0.6, 0.5])),
        ("torus", torus(0.7, 0.28, 64, 32)),
        ("cylinder", cylinder(0.5, 0.8, 64)),
        ("cone", cone(0.7, 0.8, 64)),
        ("capsule", capsule(0.35, 0.6, 48, 12)),
        ("l_shape", l_shape()),
        ("thin_plate", thin_plate()),
    ];
    raw.into_iter()
        .map(|(name, m)| (name, m.normalize_unit_sphere().expect("primitive is non-degenerate")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn primitives_are_closed_and_outward() {
        let mut all = primitive_suite();
        all.push(("icosphere5", icosphere(0.8, 5)));
        for (name, m) in all {
            assert!(m.is_watertight(), "{name} is not watertight");
            assert!(m.signed_volume() > 0.0, "{name} is inside out");
            assert!(m.degenerate_triangles().is_empty(), "{name} has degenerate triangles");
        }
    }

    #[test]
    fn cuboid_volume() {
        let m = cuboid([0.5, 1.0, 1.5]);
        assert!((m.signed_volume() - 6.0).abs() < 1e-12);
        assert!((m.area() - 2.0 * (2.0 + 3.0 + 6.0)).abs() < 1e-12);
    }
}
