//! Max-min ordering of point sets.
//!
//! The first point maximizes the distance to the boundary; each subsequent
//! point maximizes the minimum distance to the boundary and to all points
//! selected so far. The recorded selection distances `l_i` are
//! non-increasing. Ties break toward the lowest original index so orderings
//! are reproducible. For periodic domains callers supply a constant
//! boundary-distance function, which reduces the first pick to the tie rule.

#[derive(Debug, Clone)]
pub struct OrderingResult {
    /// `permutation[k]` is the original index selected at step `k`.
    pub permutation: Vec<usize>,
    /// Selection distances `l_i`, non-increasing.
    pub distances: Vec<f64>,
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Greedy max-min ordering. `points` are coordinate tuples (any dimension),
/// `boundary_distance` maps a point to its distance from the domain boundary.
pub fn maxmin_ordering<F>(points: &[Vec<f64>], boundary_distance: F) -> OrderingResult
where
    F: Fn(&[f64]) -> f64,
{
    let n = points.len();
    let mut permutation = Vec::with_capacity(n);
    let mut distances = Vec::with_capacity(n);
    if n == 0 {
        return OrderingResult { permutation, distances };
    }
    // dist[i] = min(boundary distance, distance to selected points)
    let mut dist: Vec<f64> = points.iter().map(|p| boundary_distance(p)).collect();
    let mut selected = vec![false; n];
    for _ in 0..n {
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for i in 0..n {
            if !selected[i] && dist[i] > best_d {
                best = i;
                best_d = dist[i];
            }
        }
        selected[best] = true;
        permutation.push(best);
        distances.push(best_d);
        for i in 0..n {
            if !selected[i] {
                let d = euclid(&points[i], &points[best]);
                if d < dist[i] {
                    dist[i] = d;
                }
            }
        }
    }
    OrderingResult { permutation, distances }
}
