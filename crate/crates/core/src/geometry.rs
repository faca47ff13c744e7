//! Shared local-geometry machinery: deterministic k-nearest-neighbor
//! lists and the pose-invariant per-point descriptor that both the feature
//! extractor and the synthetic semantic embeddings build on.

use std::collections::HashMap;

use crate::autodiff::MathError;

/// k-nearest-neighbor lists over distinct coordinates.
///
/// Candidates are deduplicated by exact coordinate equality with the lowest
/// original index as representative; ties on distance break toward the
/// lower index. A point's own position is always its nearest candidate, so
/// duplicating every point changes no neighborhood.
pub fn knn_indices(points: &[[f64; 3]], k: usize) -> Result<Vec<Vec<usize>>, MathError> {
    let n = points.len();
    if n < k {
        return Err(MathError::InvalidArgument {
            op: "knn_indices",
            message: format!("need at least k={k} points, got {n}"),
        });
    }
    let mut reps: Vec<usize> = Vec::new();
    let mut first_at: HashMap<[u64; 3], usize> = HashMap::new();
    for (i, p) in points.iter().enumerate() {
        let key = [p[0].to_bits(), p[1].to_bits(), p[2].to_bits()];
        if !first_at.contains_key(&key) {
            first_at.insert(key, i);
            reps.push(i);
        }
    }
    let take = k.min(reps.len());

    let mut neighbors = Vec::with_capacity(n);
    let mut scored: Vec<(f64, usize)> = Vec::with_capacity(reps.len());
    for p in points {
        scored.clear();
        for &r in &reps {
            let q = points[r];
            let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
            scored.push((d2, r));
        }
        scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        neighbors.push(scored[..take].iter().map(|&(_, r)| r).collect());
    }
    Ok(neighbors)
}

/// Eigen-decomposition of a symmetric 3x3 matrix by cyclic Jacobi
/// rotations. Returns (eigenvalues, eigenvectors as columns), both in no
/// particular order; deterministic for identical inputs.
fn symmetric_eigen3(m: [[f64; 3]; 3]) -> ([f64; 3], [[f64; 3]; 3]) {
    let mut a = m;
    let mut v = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    for _ in 0..24 {
        let off = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
        if off < 1e-24 {
            break;
        }
        for (p, q) in [(0usize, 1usize), (0, 2), (1, 2)] {
            if a[p][q].abs() < 1e-18 {
                continue;
            }
            let theta = 0.5 * (a[q][q] - a[p][p]) / a[p][q];
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            for r in 0..3 {
                let (arp, arq) = (a[r][p], a[r][q]);
                a[r][p] = c * arp - s * arq;
                a[r][q] = s * arp + c * arq;
            }
            for col in 0..3 {
                let (apc, aqc) = (a[p][col], a[q][col]);
                a[p][col] = c * apc - s * aqc;
                a[q][col] = s * apc + c * aqc;
            }
            for r in 0..3 {
                let (vrp, vrq) = (v[r][p], v[r][q]);
                v[r][p] = c * vrp - s * vrq;
                v[r][q] = s * vrp + c * vrq;
            }
        }
    }
    ([a[0][0], a[1][1], a[2][2]], v)
}

/// Pose-invariant per-point input triple, computed from the k-NN lists via
/// the local covariance: the offset from the neighborhood centroid
/// projected on the surface normal and scaled by the patch extent (bend
/// strength), the vertical component of the normal (orientation against
/// gravity), and the mean neighbor distance (point spacing). Raw scene
/// coordinates would hand the MLP the random object poses instead of the
/// surface geometry.
pub fn local_descriptors(points: &[[f64; 3]], neighbors: &[Vec<usize>]) -> Vec<f64> {
    let mut out = Vec::with_capacity(points.len() * 3);
    for (i, nbrs) in neighbors.iter().enumerate() {
        let p = points[i];
        let mut centroid = [0.0f64; 3];
        for &j in nbrs {
            for c in 0..3 {
                centroid[c] += points[j][c];
            }
        }
        for c in centroid.iter_mut() {
            *c /= nbrs.len() as f64;
        }
        let mut cov = [[0.0f64; 3]; 3];
        for &j in nbrs {
            let d = [
                points[j][0] - centroid[0],
                points[j][1] - centroid[1],
                points[j][2] - centroid[2],
            ];
            for r in 0..3 {
                for c in 0..3 {
                    cov[r][c] += d[r] * d[c];
                }
            }
        }
        for row in cov.iter_mut() {
            for val in row.iter_mut() {
                *val /= nbrs.len() as f64;
            }
        }
        let (eigenvalues, eigenvectors) = symmetric_eigen3(cov);
        let mut min_idx = 0;
        let mut max_idx = 0;
        for (idx, &ev) in eigenvalues.iter().enumerate() {
            if ev < eigenvalues[min_idx] {
                min_idx = idx;
            }
            if ev > eigenvalues[max_idx] {
                max_idx = idx;
            }
        }
        let normal = [
            eigenvectors[0][min_idx],
            eigenvectors[1][min_idx],
            eigenvectors[2][min_idx],
        ];
        let offset = [p[0] - centroid[0], p[1] - centroid[1], p[2] - centroid[2]];
        let sagitta =
            (offset[0] * normal[0] + offset[1] * normal[1] + offset[2] * normal[2]).abs();
        let extent = eigenvalues[max_idx].max(0.0).sqrt();
        let bend = sagitta / (extent + 1e-9);
        let normal_up = normal[2].abs();
        let mut spacing = 0.0;
        let mut counted = 0usize;
        for &j in nbrs {
            let q = points[j];
            let d = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt();
            if d > 0.0 {
                spacing += d;
                counted += 1;
            }
        }
        if counted > 0 {
            spacing /= counted as f64;
        }
        // log-compress the scale statistics: their across-class ratios span
        // an order of magnitude, and downstream regressors extrapolate far
        // better over differences than over ratios
        out.push((bend + 0.02).ln());
        out.push(normal_up);
        out.push(spacing.max(1e-6).ln());
    }
    out
}

