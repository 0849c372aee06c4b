//! Point-set reconstruction metrics.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point3, TriangleMesh};

/// Default F-score distance threshold, in unit-sphere coordinates.
pub const DEFAULT_TAU: f64 = 0.02;
/// Default number of surface samples per mesh.
pub const DEFAULT_SAMPLES: usize = 100_000;

fn dist(a: Point3, b: Point3) -> f64 {
    let (dx, dy, dz) = (a[0] - b[0], a[1] - b[1], a[2] - b[2]);
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Uniform bucket grid over a point set for exact nearest-neighbour queries.
pub struct PointGrid<'a> {
    points: &'a [Point3],
    lo: Point3,
    cell: f64,
    dims: [usize; 3],
    /// Start of each bucket in `order`; one extra entry at the end.
    starts: Vec<usize>,
    order: Vec<u32>,
}

impl<'a> PointGrid<'a> {
    pub fn new(points: &'a [Point3]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::contract("nearest-neighbour search over an empty set"));
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in points {
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("point {p:?}")));
            }
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let extent = (0..3).map(|k| hi[k] - lo[k]).fold(0.0, f64::max).max(1e-12);
        // About two points per bucket for a surface-like set.
        let per_axis = ((points.len() as f64 / 2.0).cbrt().ceil() as usize).clamp(1, 512);
        let cell = extent / per_axis as f64;
        let dims = [0, 1, 2].map(|k| (((hi[k] - lo[k]) / cell).floor() as usize + 1).min(per_axis));
        let mut grid = Self { points, lo, cell, dims, starts: Vec::new(), order: Vec::new() };
        let buckets: Vec<usize> = points.iter().map(|&p| grid.flat(grid.cell_of(p))).collect();
        let mut starts = vec![0usize; dims[0] * dims[1] * dims[2] + 1];
        for &b in &buckets {
            starts[b + 1] += 1;
        }
        for i in 1..starts.len() {
            starts[i] += starts[i - 1];
        }
        let mut fill = starts.clone();
        let mut order = vec![0u32; points.len()];
        for (i, &b) in buckets.iter().enumerate() {
            order[fill[b]] = i as u32;
            fill[b] += 1;
        }
        grid.starts = starts;
        grid.order = order;
        Ok(grid)
    }

    fn cell_of(&self, p: Point3) -> [usize; 3] {
        [0, 1, 2].map(|k| (((p[k] - self.lo[k]) / self.cell).floor().max(0.0) as usize).min(self.dims[k] - 1))
    }

    fn flat(&self, c: [usize; 3]) -> usize {
        (c[0] * self.dims[1] + c[1]) * self.dims[2] + c[2]
    }

    /// Distance to the nearest point; exactly the minimum over all points of
    /// the same distance expression a brute-force scan uses.
    pub fn nearest(&self, q: Point3) -> f64 {
        let c = self.cell_of(q);
        let max_ring = self.dims.iter().copied().max().unwrap_or(1);
        let mut best = f64::INFINITY;
        for r in 0..max_ring {
            let lo = [0, 1, 2].map(|k| c[k].saturating_sub(r));
            let hi = [0, 1, 2].map(|k| (c[k] + r).min(self.dims[k] - 1));
            for i in lo[0]..=hi[0] {
                for j in lo[1]..=hi[1] {
                    for k in lo[2]..=hi[2] {
                        let on_shell = [i, j, k].iter().zip(&c).any(|(&x, &cx)| x.abs_diff(cx) == r);
                        if !on_shell {
                            continue;
                        }
                        let b = self.flat([i, j, k]);
                        for &p in &self.order[self.starts[b]..self.starts[b + 1]] {
                            best = best.min(dist(q, self.points[p as usize]));
                        }
                    }
                }
            }
            // Every bucket on the next shell is at least r cells away on one
            // axis, even when the query was clamped into the grid.
            if best < r as f64 * self.cell * (1.0 - 1e-9) {
                break;
            }
        }
        best
    }
}

/// Nearest-neighbour distance from each point of `from` to the set `to`.
pub fn nearest_distances(from: &[Point3], to: &[Point3]) -> Result<Vec<f64>> {
    let grid = PointGrid::new(to)?;
    Ok(from.iter().map(|&q| grid.nearest(q)).collect())
}

/// Quadratic reference scan; same distance expression as the grid search.
pub fn nearest_distances_brute(from: &[Point3], to: &[Point3]) -> Result<Vec<f64>> {
    if to.is_empty() {
        return Err(Error::contract("nearest-neighbour search over an empty set"));
    }
    Ok(from.iter().map(|&q| to.iter().fold(f64::INFINITY, |m, &p| m.min(dist(q, p)))).collect())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn check_nonempty(a: &[Point3], b: &[Point3]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::contract("metric needs two non-empty point sets"));
    }
    Ok(())
}

fn chamfer_from(ab: &[f64], ba: &[f64]) -> f64 {
    100.0 * (0.5 * mean(ab) + 0.5 * mean(ba))
}

fn fscore_from(ab: &[f64], ba: &[f64], tau: f64) -> f64 {
    let frac = |d: &[f64]| d.iter().filter(|&&x| x <= tau).count() as f64 / d.len() as f64;
    let (p, r) = (frac(ab), frac(ba));
    if p + r == 0.0 {
        0.0
    } else {
        100.0 * 2.0 * p * r / (p + r)
    }
}

/// Symmetric mean nearest-neighbour distance, times 100.
pub fn chamfer(a: &[Point3], b: &[Point3]) -> Result<f64> {
    check_nonempty(a, b)?;
    Ok(chamfer_from(&nearest_distances(a, b)?, &nearest_distances(b, a)?))
}

/// Brute-force counterpart of [`chamfer`].
pub fn chamfer_brute(a: &[Point3], b: &[Point3]) -> Result<f64> {
    check_nonempty(a, b)?;
    Ok(chamfer_from(&nearest_distances_brute(a, b)?, &nearest_distances_brute(b, a)?))
}

/// Harmonic mean of precision (points of `a` within `tau` of `b`) and recall
/// (points of `b` within `tau` of `a`), times 100.
pub fn fscore(a: &[Point3], b: &[Point3], tau: f64) -> Result<f64> {
    check_nonempty(a, b)?;
    if !(tau > 0.0) {
        return Err(Error::config("tau", "must be positive"));
    }
    Ok(fscore_from(&nearest_distances(a, b)?, &nearest_distances(b, a)?, tau))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub shape: String,
    pub chamfer_x100: f64,
    pub fscore_x100: f64,
    pub tau: f64,
    pub samples_reconstruction: usize,
    pub samples_reference: usize,
}

impl MetricReport {
    /// Compares two point sets; `a` is the reconstruction.
    pub fn from_points(shape: &str, a: &[Point3], b: &[Point3], tau: f64) -> Result<Self> {
        check_nonempty(a, b)?;
        if !(tau > 0.0) {
            return Err(Error::config("tau", "must be positive"));
        }
        let (ab, ba) = (nearest_distances(a, b)?, nearest_distances(b, a)?);
        Ok(Self {
            shape: shape.to_string(),
            chamfer_x100: chamfer_from(&ab, &ba),
            fscore_x100: fscore_from(&ab, &ba, tau),
            tau,
            samples_reconstruction: a.len(),
            samples_reference: b.len(),
        })
    }

    /// Compares two meshes through area-weighted surface samples.
    pub fn from_meshes<R: Rng + ?Sized>(
        shape: &str,
        reconstruction: &TriangleMesh,
        reference: &TriangleMesh,
        samples: usize,
        tau: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let a = reconstruction.sample_surface(samples, rng)?;
        let b = reference.sample_surface(samples, rng)?;
        Self::from_points(shape, &a, &b, tau)
    }
}

/// One JSON object per line.
pub fn write_reports(path: &Path, reports: &[MetricReport]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in reports {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_reports(path: &Path) -> Result<Vec<MetricReport>> {
    let text = std::fs::read_to_string(path)?;
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| Ok(serde_json::from_str(l)?)).collect()
}

/// Fixed-width table with a mean row.
pub fn summary_table(reports: &[MetricReport]) -> String {
    let mut s = format!("{:<16} {:>12} {:>12}\n", "shape", "chamfer_x100", "fscore_x100");
    for r in reports {
        s += &format!("{:<16} {:>12.4} {:>12.2}\n", r.shape, r.chamfer_x100, r.fscore_x100);
    }
    if !reports.is_empty() {
        let n = reports.len() as f64;
        let c = reports.iter().map(|r| r.chamfer_x100).sum::<f64>() / n;
        let f = reports.iter().map(|r| r.fscore_x100).sum::<f64>() / n;
        s += &format!("{:<16} {:>12.4} {:>12.2}\n", "mean", c, f);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop, prop_assert, prop_assert_eq, proptest, Strategy};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point3> {
        (0..n).map(|_| [0; 3].map(|_| rng.random_range(-1.0..1.0))).collect()
    }

    #[test]
    fn identical_sets_have_zero_chamfer_and_full_fscore() {
        let a = cloud(&mut ChaCha8Rng::seed_from_u64(0), 300);
        assert_eq!(chamfer(&a, &a).unwrap(), 0.0);
        assert_eq!(fscore(&a, &a, DEFAULT_TAU).unwrap(), 100.0);
    }

    #[test]
    fn closed_form_cases() {
        assert_eq!(chamfer(&[[0.0; 3]], &[[1.0, 0.0, 0.0]]).unwrap(), 100.0);
        let tau = 0.02;
        assert_eq!(fscore(&[[0.0; 3]], &[[0.5 * tau, 0.0, 0.0]], tau).unwrap(), 100.0);
        assert_eq!(fscore(&[[0.0; 3]], &[[5.0, 0.0, 0.0]], tau).unwrap(), 0.0);
    }

    #[test]
    fn grid_search_equals_brute_force_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for trial in 0..100 {
            let a = cloud(&mut rng, 512);
            // Mix in clustered and far-away sets so clamping paths are used.
            let mut b = cloud(&mut rng, 512);
            if trial % 3 == 0 {
                b.iter_mut().for_each(|p| p[0] = p[0] * 0.05 + 2.0);
            }
            assert_eq!(chamfer(&a, &b).unwrap().to_bits(), chamfer_brute(&a, &b).unwrap().to_bits(), "trial {trial}");
            assert_eq!(nearest_distances(&a, &b).unwrap(), nearest_distances_brute(&a, &b).unwrap());
        }
    }

    #[test]
    fn empty_sets_and_bad_tau_are_rejected() {
        assert!(chamfer(&[], &[[0.0; 3]]).is_err());
        assert!(fscore(&[[0.0; 3]], &[], 0.1).is_err());
        assert!(matches!(fscore(&[[0.0; 3]], &[[0.0; 3]], 0.0), Err(Error::Config { .. })));
    }

    #[test]
    fn fscore_is_monotone_over_a_sweep() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (a, b) = (cloud(&mut rng, 400), cloud(&mut rng, 400));
        let scores: Vec<f64> = (1..=10).map(|i| fscore(&a, &b, 0.02 * i as f64).unwrap()).collect();
        assert!(scores.windows(2).all(|w| w[0] <= w[1]), "{scores:?}");
        assert!(scores[0] < scores[9]);
    }

    #[test]
    fn mesh_comparison_of_a_mesh_with_itself_is_small() {
        let m = crate::geometry::primitives::icosphere(0.5, 3);
        let r = MetricReport::from_meshes("s", &m, &m, 20_000, DEFAULT_TAU, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        // Sampling alone leaves about half the sample spacing per point.
        assert!(r.chamfer_x100 < 1.0 && r.fscore_x100 > 99.0, "{r:?}");
    }

    #[test]
    fn reports_round_trip_as_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ndjson");
        let reports = vec![
            MetricReport::from_points("a", &[[0.0; 3]], &[[1.0, 0.0, 0.0]], 0.02).unwrap(),
            MetricReport::from_points("b", &[[0.0; 3]], &[[0.0; 3]], 0.02).unwrap(),
        ];
        write_reports(&path, &reports).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 2);
        assert_eq!(read_reports(&path).unwrap(), reports);
        assert!(summary_table(&reports).contains("mean"));
    }

    fn point() -> impl Strategy<Value = Point3> {
        prop::array::uniform3(-1.0f64..1.0)
    }

    proptest! {
        #[test]
        fn chamfer_is_symmetric(a in prop::collection::vec(point(), 1..40), b in prop::collection::vec(point(), 1..40)) {
            prop_assert_eq!(chamfer(&a, &b).unwrap().to_bits(), chamfer(&b, &a).unwrap().to_bits());
        }

        #[test]
        fn adding_the_other_set_never_hurts(a in prop::collection::vec(point(), 1..40), b in prop::collection::vec(point(), 1..40)) {
            let union: Vec<Point3> = a.iter().chain(&b).copied().collect();
            prop_assert!(chamfer(&a, &union).unwrap() <= chamfer(&a, &b).unwrap() + 1e-12);
        }

        #[test]
        fn fscore_stays_in_range(a in prop::collection::vec(point(), 1..40), b in prop::collection::vec(point(), 1..40), tau in 0.001f64..2.0) {
            let f = fscore(&a, &b, tau).unwrap();
            prop_assert!((0.0..=100.0).contains(&f));
        }
    }
}
