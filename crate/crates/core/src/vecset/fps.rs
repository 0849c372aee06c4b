use crate::error::{Error, Result};
use crate::geometry::Point3;

fn dist2(a: Point3, b: Point3) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}

/// Greedy farthest point sampling. Returns `target` indices in selection
/// order, starting at `seed_index`; ties go to the lowest index.
pub fn fps(points: &[Point3], target: usize, seed_index: usize) -> Result<Vec<usize>> {
    let n = points.len();
    if target == 0 || target > n {
        return Err(Error::contract(format!("fps target {target} outside 1..={n}")));
    }
    if seed_index >= n {
        return Err(Error::contract(format!("fps seed index {seed_index} out of range for {n} points")));
    }
    let mut selected = Vec::with_capacity(target);
    let mut nearest = vec![f64::INFINITY; n];
    let mut current = seed_index;
    for _ in 0..target {
        selected.push(current);
        let c = points[current];
        let mut best = (f64::NEG_INFINITY, 0);
        for (i, p) in points.iter().enumerate() {
            let d = dist2(*p, c);
            if d < nearest[i] {
                nearest[i] = d;
            }
            if nearest[i] > best.0 {
                best = (nearest[i], i);
            }
        }
        current = best.1;
    }
    Ok(selected)
}
