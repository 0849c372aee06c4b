//! Random per-axis scaling and yaw/pitch/roll rotation.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mesh::{Point3, TriangleMesh};
use crate::error::{Error, Result};

pub const SCALE_RANGE: (f64, f64) = (0.75, 1.25);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentationParams {
    pub axis_scales: [f64; 3],
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
}

impl Default for AugmentationParams {
    fn default() -> Self {
        Self::identity()
    }
}

impl AugmentationParams {
    pub fn identity() -> Self {
        Self { axis_scales: [1.0; 3], yaw: 0.0, pitch: 0.0, roll: 0.0 }
    }

    /// Scales uniform in [0.75, 1.25] per axis, angles uniform in [-pi, pi).
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut s = || rng.random_range(SCALE_RANGE.0..=SCALE_RANGE.1);
        let axis_scales = [s(), s(), s()];
        Self {
            axis_scales,
            yaw: rng.random_range(-PI..PI),
            pitch: rng.random_range(-PI..PI),
            roll: rng.random_range(-PI..PI),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for s in self.axis_scales {
            if !(SCALE_RANGE.0..=SCALE_RANGE.1).contains(&s) {
                return Err(Error::contract(format!("axis scale {s} outside [0.75, 1.25]")));
            }
        }
        Ok(())
    }

    /// `R(yaw, pitch, roll) = Rz(yaw) Ry(pitch) Rx(roll)`.
    pub fn rotation(&self) -> [[f64; 3]; 3] {
        let (sa, ca) = self.yaw.sin_cos();
        let (sb, cb) = self.pitch.sin_cos();
        let (sg, cg) = self.roll.sin_cos();
        let rz = [[ca, -sa, 0.0], [sa, ca, 0.0], [0.0, 0.0, 1.0]];
        let ry = [[cb, 0.0, sb], [0.0, 1.0, 0.0], [-sb, 0.0, cb]];
        let rx = [[1.0, 0.0, 0.0], [0.0, cg, -sg], [0.0, sg, cg]];
        matmul3(&matmul3(&rz, &ry), &rx)
    }

    /// `v -> R (s * v)`, without renormalization.
    pub fn transform_point(&self, v: Point3) -> Point3 {
        let r = self.rotation();
        let s = [v[0] * self.axis_scales[0], v[1] * self.axis_scales[1], v[2] * self.axis_scales[2]];
        apply3(&r, s)
    }
}

fn matmul3(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

pub(crate) fn apply3(m: &[[f64; 3]; 3], v: Point3) -> Point3 {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

/// Scales and rotates a normalized mesh, then renormalizes it to the unit sphere.
pub fn apply_augmentation(mesh: &TriangleMesh, params: &AugmentationParams) -> Result<TriangleMesh> {
    params.validate()?;
    let r = params.rotation();
    let s = params.axis_scales;
    let moved = TriangleMesh {
        vertices: mesh
            .vertices
            .iter()
            .map(|v| apply3(&r, [v[0] * s[0], v[1] * s[1], v[2] * s[2]]))
            .collect(),
        triangles: mesh.triangles.clone(),
    };
    moved.normalize_unit_sphere()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::primitives;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn det(m: &[[f64; 3]; 3]) -> f64 {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    #[test]
    fn rotations_are_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let r = AugmentationParams::random(&mut rng).rotation();
            assert!((det(&r) - 1.0).abs() < 1e-6);
            for i in 0..3 {
                for j in 0..3 {
                    let d: f64 = (0..3).map(|k| r[i][k] * r[j][k]).sum();
                    let expected = if i == j { 1.0 } else { 0.0 };
                    assert!((d - expected).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn identity_params_leave_mesh_unchanged() {
        let mesh = primitives::icosphere(1.0, 2);
        let out = apply_augmentation(&mesh, &AugmentationParams::identity()).unwrap();
        for (a, b) in out.vertices.iter().zip(&mesh.vertices) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn yaw_quarter_turn_maps_x_to_y() {
        let p = AugmentationParams { yaw: PI / 2.0, ..AugmentationParams::identity() };
        let v = p.transform_point([1.0, 0.0, 0.0]);
        assert!((v[0]).abs() < 1e-9 && (v[1] - 1.0).abs() < 1e-9 && v[2].abs() < 1e-9);
    }

    #[test]
    fn anisotropic_scale_renormalizes() {
        let mesh = primitives::icosphere(1.0, 3);
        let p = AugmentationParams { axis_scales: [0.75, 1.0, 1.0], ..AugmentationParams::identity() };
        let out = apply_augmentation(&mesh, &p).unwrap();
        assert!((out.max_vertex_norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn out_of_range_scale_is_rejected() {
        let mesh = primitives::icosphere(1.0, 1);
        let p = AugmentationParams { axis_scales: [0.5, 1.0, 1.0], ..AugmentationParams::identity() };
        assert!(matches!(apply_augmentation(&mesh, &p), Err(Error::Contract(_))));
    }
}
