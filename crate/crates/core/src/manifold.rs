//! Point-cloud manifolds and smoothness diagnostics.
//!
//! A manifold is represented by a finite ε-net of points in ambient space
//! `R^D`, together with a neighbor graph connecting points within
//! `edge_radius` of each other. Geodesic distance is the shortest-path
//! distance in that graph with Euclidean edge weights; it over-estimates the
//! chordal distance and converges to the intrinsic metric as the net refines.
//!
//! On top of the metric the module provides diagnostics for scalar functions
//! sampled on the net: Hölder-constant estimation with an additive proximity
//! slack, lower Lipschitz envelopes, and arithmetic on `(L, α, ε)` witnesses.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

/// Hard cap on net size; geodesic tables and pairwise scans are `O(n^2)`.
pub const MAX_NET_POINTS: usize = 4096;

/// Errors from manifold construction and queries.
#[derive(Debug, Error)]
pub enum ManifoldError {
    #[error("net must contain at least two points")]
    NetTooSmall,
    #[error("net has {points} points, exceeding the cap of {max}")]
    NetTooLarge { points: usize, max: usize },
    #[error("coordinate data of length {len} is not divisible by ambient dimension {dim}")]
    RaggedCoordinates { len: usize, dim: usize },
    #[error("non-finite coordinate at point {index}")]
    NonFiniteCoordinate { index: usize },
    #[error("edge radius {radius} is not positive and finite")]
    BadEdgeRadius { radius: f64 },
    #[error("point {index} has no neighbor within the edge radius")]
    IsolatedPoint { index: usize },
    #[error("no path between net points {from} and {to}")]
    Disconnected { from: usize, to: usize },
    #[error("point index {index} out of range for net of size {size}")]
    IndexOutOfRange { index: usize, size: usize },
    #[error("expected {expected} function values, found {found}")]
    ValueCountMismatch { expected: usize, found: usize },
    #[error("Hölder exponent {exponent} outside (0, 1]")]
    BadExponent { exponent: f64 },
    #[error("negative or non-finite proximity slack {proximity}")]
    BadProximity { proximity: f64 },
    #[error("negative or non-finite Lipschitz constant {constant}")]
    BadConstant { constant: f64 },
    #[error("witness exponents differ: {left} vs {right}")]
    ExponentMismatch { left: f64, right: f64 },
    #[error("embedding dimension {target} is below input dimension {input}")]
    EmbeddingTooSmall { target: usize, input: usize },
    #[error("line {line}: cannot parse `{token}` as a coordinate")]
    Parse { line: usize, token: String },
    #[error("line {line}: expected {expected} coordinates, found {found}")]
    RaggedLine { line: usize, expected: usize, found: usize },
    #[error("net file is empty")]
    EmptyFile,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// An `(L, α, ε)` approximate-Hölder witness: the function it describes obeys
/// `|f(x) - f(y)| ≤ L·d(x, y)^α + 2ε` for all `x, y`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzWitness {
    /// Hölder constant `L ≥ 0`.
    pub constant: f64,
    /// Hölder exponent `α ∈ (0, 1]`.
    pub exponent: f64,
    /// Additive proximity slack `ε ≥ 0` (uniform approximation error).
    pub proximity: f64,
}

impl LipschitzWitness {
    /// Validates the ranges of all three parameters.
    pub fn new(constant: f64, exponent: f64, proximity: f64) -> Result<Self, ManifoldError> {
        if !constant.is_finite() || constant < 0.0 {
            return Err(ManifoldError::BadConstant { constant });
        }
        check_exponent(exponent)?;
        if !proximity.is_finite() || proximity < 0.0 {
            return Err(ManifoldError::BadProximity { proximity });
        }
        Ok(Self { constant, exponent, proximity })
    }
}

/// Witness for `f + c·g` given witnesses for `f` and `g` with a common
/// exponent: constants add as `L_f + |c|·L_g`, slacks as `ε_f + |c|·ε_g`.
pub fn sum_approx_lipschitz(
    f: &LipschitzWitness,
    g: &LipschitzWitness,
    scale: f64,
) -> Result<LipschitzWitness, ManifoldError> {
    if f.exponent != g.exponent {
        return Err(ManifoldError::ExponentMismatch { left: f.exponent, right: g.exponent });
    }
    LipschitzWitness::new(
        f.constant + scale.abs() * g.constant,
        f.exponent,
        f.proximity + scale.abs() * g.proximity,
    )
}

fn check_exponent(exponent: f64) -> Result<(), ManifoldError> {
    if !exponent.is_finite() || exponent <= 0.0 || exponent > 1.0 {
        return Err(ManifoldError::BadExponent { exponent });
    }
    Ok(())
}

/// A finite ε-net with its neighbor graph and precomputed graph geodesics.
#[derive(Debug, Clone)]
pub struct EmbeddedManifold {
    ambient_dim: usize,
    intrinsic_dim: usize,
    /// Row-major point coordinates, `n × ambient_dim`.
    points: Vec<f64>,
    edge_radius: f64,
    /// Sup-norm bound on the coordinates of the net.
    bound: f64,
    /// Shortest-path distances, `n × n`, `+∞` where no path exists.
    geodesic: Vec<f64>,
}

impl EmbeddedManifold {
    /// Builds a net from row-major coordinates.
    ///
    /// When `edge_radius` is `None` it defaults to three times the largest
    /// nearest-neighbor spacing, which keeps uniformly sampled nets connected
    /// while excluding long chords. Construction fails if any point would be
    /// isolated at the chosen radius.
    pub fn from_points(
        points: Vec<f64>,
        ambient_dim: usize,
        intrinsic_dim: usize,
        edge_radius: Option<f64>,
    ) -> Result<Self, ManifoldError> {
        if ambient_dim == 0 || points.len() % ambient_dim != 0 {
            return Err(ManifoldError::RaggedCoordinates { len: points.len(), dim: ambient_dim });
        }
        let n = points.len() / ambient_dim;
        if n < 2 {
            return Err(ManifoldError::NetTooSmall);
        }
        if n > MAX_NET_POINTS {
            return Err(ManifoldError::NetTooLarge { points: n, max: MAX_NET_POINTS });
        }
        for (i, chunk) in points.chunks_exact(ambient_dim).enumerate() {
            if chunk.iter().any(|c| !c.is_finite()) {
                return Err(ManifoldError::NonFiniteCoordinate { index: i });
            }
        }
        let bound = points.iter().fold(0.0f64, |b, c| b.max(c.abs()));

        let euclid = |i: usize, j: usize| -> f64 {
            let a = &points[i * ambient_dim..(i + 1) * ambient_dim];
            let b = &points[j * ambient_dim..(j + 1) * ambient_dim];
            a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
        };

        let radius = match edge_radius {
            Some(r) => {
                if !r.is_finite() || r <= 0.0 {
                    return Err(ManifoldError::BadEdgeRadius { radius: r });
                }
                r
            }
            None => {
                // Largest nearest-neighbor spacing over the net, times three.
                let mut max_nn = 0.0f64;
                for i in 0..n {
                    let mut nn = f64::INFINITY;
                    for j in 0..n {
                        if i != j {
                            nn = nn.min(euclid(i, j));
                        }
                    }
                    max_nn = max_nn.max(nn);
                }
                3.0 * max_nn
            }
        };

        // Adjacency under the radius; every point must keep at least one edge.
        let mut adjacency: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n];
        for i in 0..n {
            for j in (i + 1)..n {
                let d = euclid(i, j);
                if d <= radius {
                    adjacency[i].push((j as u32, d));
                    adjacency[j].push((i as u32, d));
                }
            }
        }
        if let Some(i) = (0..n).find(|&i| adjacency[i].is_empty()) {
            return Err(ManifoldError::IsolatedPoint { index: i });
        }

        let geodesic = all_pairs_shortest(&adjacency);
        Ok(Self { ambient_dim, intrinsic_dim, points, edge_radius: radius, bound, geodesic })
    }

    /// Loads a net from a text file: one point per line, coordinates separated
    /// by whitespace and/or commas, every line with the same count.
    pub fn from_net_file(
        path: &Path,
        intrinsic_dim: usize,
        edge_radius: Option<f64>,
    ) -> Result<Self, ManifoldError> {
        let (points, ambient_dim) = read_net_file(path)?;
        Self::from_points(points, ambient_dim, intrinsic_dim, edge_radius)
    }

    /// Writes the net in the text format accepted by [`Self::from_net_file`].
    pub fn write_net_file(&self, path: &Path) -> Result<(), ManifoldError> {
        let mut out = String::new();
        for p in self.points.chunks_exact(self.ambient_dim) {
            for (k, c) in p.iter().enumerate() {
                if k > 0 {
                    out.push(' ');
                }
                let _ = write!(out, "{c:.17e}");
            }
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.ambient_dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    pub fn intrinsic_dim(&self) -> usize {
        self.intrinsic_dim
    }

    pub fn edge_radius(&self) -> f64 {
        self.edge_radius
    }

    /// Sup-norm bound `B` with `‖x‖_∞ ≤ B` for every net point.
    pub fn coordinate_bound(&self) -> f64 {
        self.bound
    }

    /// Coordinates of net point `i`.
    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.ambient_dim..(i + 1) * self.ambient_dim]
    }

    /// Index of the net point closest (in Euclidean distance) to `x`;
    /// ties break toward the lower index.
    pub fn nearest_index(&self, x: &[f64]) -> usize {
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for i in 0..self.len() {
            let d: f64 =
                self.point(i).iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    /// Graph geodesic distance between net points `i` and `j`.
    pub fn geodesic_distance(&self, i: usize, j: usize) -> Result<f64, ManifoldError> {
        let n = self.len();
        for index in [i, j] {
            if index >= n {
                return Err(ManifoldError::IndexOutOfRange { index, size: n });
            }
        }
        let d = self.geodesic[i * n + j];
        if d.is_finite() {
            Ok(d)
        } else {
            Err(ManifoldError::Disconnected { from: i, to: j })
        }
    }

    /// Raw geodesic row for source `i` (`+∞` marks unreachable targets).
    pub fn geodesic_row(&self, i: usize) -> &[f64] {
        let n = self.len();
        &self.geodesic[i * n..(i + 1) * n]
    }

    /// Largest slack ratio `(|f(x_i) - f(x_j)| - 2ε)_+ / d(x_i, x_j)^α` over
    /// all net pairs: an empirical Hölder constant net slack.
    ///
    /// Pairs at distance zero contribute `0` when the numerator vanishes and
    /// force a `+∞` sentinel otherwise. Unreachable pairs (infinite geodesic)
    /// contribute `0`.
    pub fn estimate_lipschitz(
        &self,
        values: &[f64],
        exponent: f64,
        proximity: f64,
    ) -> Result<f64, ManifoldError> {
        let n = self.len();
        if values.len() != n {
            return Err(ManifoldError::ValueCountMismatch { expected: n, found: values.len() });
        }
        check_exponent(exponent)?;
        if !proximity.is_finite() || proximity < 0.0 {
            return Err(ManifoldError::BadProximity { proximity });
        }
        // Max-reduction over unordered pairs; safe to shard because `max` is
        // associative and commutative, so any reduction order is bit-identical.
        let mut best = 0.0f64;
        for i in 0..n {
            let row = self.geodesic_row(i);
            for j in (i + 1)..n {
                let gap = (values[i] - values[j]).abs() - 2.0 * proximity;
                if gap <= 0.0 {
                    continue;
                }
                let d = row[j];
                if d == 0.0 {
                    return Ok(f64::INFINITY);
                }
                if d.is_finite() {
                    best = best.max(gap / d.powf(exponent));
                }
            }
        }
        Ok(best)
    }

    /// Lower envelope `g(x_i) = min_j [f(x_j) + L·d(x_j, x_i)^α]`, truncated
    /// below at `-max_j |f(x_j)|`. The result is `(L, α)`-Hölder with respect
    /// to the graph metric and lower-bounds `f` pointwise.
    pub fn lipschitz_envelope(
        &self,
        values: &[f64],
        constant: f64,
        exponent: f64,
    ) -> Result<Vec<f64>, ManifoldError> {
        let n = self.len();
        if values.len() != n {
            return Err(ManifoldError::ValueCountMismatch { expected: n, found: values.len() });
        }
        if !constant.is_finite() || constant < 0.0 {
            return Err(ManifoldError::BadConstant { constant });
        }
        check_exponent(exponent)?;
        let sup = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut envelope = vec![0.0; n];
        for i in 0..n {
            let row = self.geodesic_row(i);
            let mut lo = f64::INFINITY;
            for j in 0..n {
                let d = row[j];
                if d.is_finite() {
                    lo = lo.min(values[j] + constant * d.powf(exponent));
                }
            }
            envelope[i] = lo.max(-sup);
        }
        Ok(envelope)
    }
}

/// Dijkstra heap entry ordered by distance (then index, for determinism).
struct HeapEntry {
    dist: f64,
    node: u32,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for HeapEntry {}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed: BinaryHeap is a max-heap, we pop the smallest distance.
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

/// All-pairs shortest paths by running Dijkstra from every source.
fn all_pairs_shortest(adjacency: &[Vec<(u32, f64)>]) -> Vec<f64> {
    let n = adjacency.len();
    let mut table = vec![f64::INFINITY; n * n];
    let mut heap = BinaryHeap::new();
    for source in 0..n {
        let dist = &mut table[source * n..(source + 1) * n];
        dist[source] = 0.0;
        heap.clear();
        heap.push(HeapEntry { dist: 0.0, node: source as u32 });
        while let Some(HeapEntry { dist: d, node }) = heap.pop() {
            let u = node as usize;
            if d > dist[u] {
                continue;
            }
            for &(v, w) in &adjacency[u] {
                let cand = d + w;
                if cand < dist[v as usize] {
                    dist[v as usize] = cand;
                    heap.push(HeapEntry { dist: cand, node: v });
                }
            }
        }
    }
    table
}

fn read_net_file(path: &Path) -> Result<(Vec<f64>, usize), ManifoldError> {
    let text = std::fs::read_to_string(path)?;
    let mut points = Vec::new();
    let mut dim = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut count = 0usize;
        for token in line.split(|c: char| c.is_whitespace() || c == ',') {
            if token.is_empty() {
                continue;
            }
            let value: f64 = token.parse().map_err(|_| ManifoldError::Parse {
                line: lineno + 1,
                token: token.to_string(),
            })?;
            points.push(value);
            count += 1;
        }
        match dim {
            None => dim = Some(count),
            Some(d) if d != count => {
                return Err(ManifoldError::RaggedLine {
                    line: lineno + 1,
                    expected: d,
                    found: count,
                })
            }
            _ => {}
        }
    }
    match dim {
        Some(d) if !points.is_empty() => Ok((points, d)),
        _ => Err(ManifoldError::EmptyFile),
    }
}

// ---------------------------------------------------------------------------
// Circle nets and seeded isometric embeddings
// ---------------------------------------------------------------------------

/// Angles `2πk/n` of the uniform `n`-point net on the unit circle.
pub fn circle_angles(n: usize) -> Vec<f64> {
    (0..n).map(|k| 2.0 * std::f64::consts::PI * k as f64 / n as f64).collect()
}

/// Row-major coordinates of the uniform `n`-point net on the unit circle in
/// `R^2`.
pub fn circle_points(n: usize) -> Vec<f64> {
    let mut points = Vec::with_capacity(2 * n);
    for theta in circle_angles(n) {
        points.push(theta.cos());
        points.push(theta.sin());
    }
    points
}

/// Applies a seeded random linear isometry `R^source → R^target` (a matrix
/// with orthonormal columns) to row-major points. Pairwise Euclidean
/// distances are preserved exactly up to rounding.
pub fn embed_linear_isometry(
    points: &[f64],
    source_dim: usize,
    target_dim: usize,
    seed: u64,
) -> Result<Vec<f64>, ManifoldError> {
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    if target_dim < source_dim {
        return Err(ManifoldError::EmbeddingTooSmall { target: target_dim, input: source_dim });
    }
    if points.len() % source_dim != 0 {
        return Err(ManifoldError::RaggedCoordinates { len: points.len(), dim: source_dim });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Gram–Schmidt on Gaussian columns; resample on near-degeneracy.
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(source_dim);
    while columns.len() < source_dim {
        let mut col: Vec<f64> = (0..target_dim)
            .map(|_| {
                let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
                let u2: f64 = rng.random();
                (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
            })
            .collect();
        for prev in &columns {
            let dot: f64 = col.iter().zip(prev).map(|(a, b)| a * b).sum();
            for (c, p) in col.iter_mut().zip(prev) {
                *c -= dot * p;
            }
        }
        let norm: f64 = col.iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm < 1e-9 {
            continue;
        }
        for c in &mut col {
            *c /= norm;
        }
        columns.push(col);
    }
    let n = points.len() / source_dim;
    let mut out = vec![0.0; n * target_dim];
    for (i, p) in points.chunks_exact(source_dim).enumerate() {
        for (k, col) in columns.iter().enumerate() {
            let coeff = p[k];
            for (j, c) in col.iter().enumerate() {
                out[i * target_dim + j] += coeff * c;
            }
        }
    }
    Ok(out)
}

/// Uniform circle net embedded in `R^ambient_dim` (identity when the ambient
/// dimension is 2, otherwise a seeded linear isometry).
pub fn circle_manifold(
    n: usize,
    ambient_dim: usize,
    seed: u64,
    edge_radius: Option<f64>,
) -> Result<EmbeddedManifold, ManifoldError> {
    let base = circle_points(n);
    let points = if ambient_dim == 2 {
        base
    } else {
        embed_linear_isometry(&base, 2, ambient_dim, seed)?
    };
    EmbeddedManifold::from_points(points, ambient_dim, 1, edge_radius)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn witness_validation_rejects_bad_ranges() {
        assert!(LipschitzWitness::new(1.0, 1.0, 0.0).is_ok());
        assert!(LipschitzWitness::new(-1.0, 1.0, 0.0).is_err());
        assert!(LipschitzWitness::new(1.0, 0.0, 0.0).is_err());
        assert!(LipschitzWitness::new(1.0, 1.5, 0.0).is_err());
        assert!(LipschitzWitness::new(1.0, 1.0, -0.1).is_err());
    }

    #[test]
    fn sum_witness_requires_matching_exponents() {
        let a = LipschitzWitness::new(1.0, 1.0, 0.1).unwrap();
        let b = LipschitzWitness::new(2.0, 0.5, 0.2).unwrap();
        assert!(sum_approx_lipschitz(&a, &b, 1.0).is_err());
    }

    #[test]
    fn sum_witness_scales_by_absolute_value() {
        let a = LipschitzWitness::new(1.0, 1.0, 0.1).unwrap();
        let b = LipschitzWitness::new(2.0, 1.0, 0.2).unwrap();
        let s = sum_approx_lipschitz(&a, &b, -3.0).unwrap();
        assert_eq!(s.constant, 7.0);
        assert!((s.proximity - 0.7).abs() < 1e-15);
        assert_eq!(s.exponent, 1.0);
    }

    #[test]
    fn isolated_point_is_rejected() {
        // Two clusters, far apart, tiny radius: the far point is isolated.
        let points = vec![0.0, 0.0, 0.1, 0.0, 50.0, 0.0];
        let err = EmbeddedManifold::from_points(points, 2, 1, Some(0.5)).unwrap_err();
        assert!(matches!(err, ManifoldError::IsolatedPoint { index: 2 }));
    }

    #[test]
    fn disconnected_components_error_on_query() {
        // Two pairs, each internally connected, no path across.
        let points = vec![0.0, 0.0, 0.1, 0.0, 50.0, 0.0, 50.1, 0.0];
        let m = EmbeddedManifold::from_points(points, 2, 1, Some(0.5)).unwrap();
        assert!(m.geodesic_distance(0, 1).is_ok());
        assert!(matches!(
            m.geodesic_distance(0, 2),
            Err(ManifoldError::Disconnected { from: 0, to: 2 })
        ));
    }

    #[test]
    fn estimate_handles_duplicate_points() {
        // Duplicate points with equal values: fine. With unequal values: +∞.
        let points = vec![0.0, 0.0, 0.0, 0.0, 1.0, 0.0];
        let m = EmbeddedManifold::from_points(points, 2, 1, Some(2.0)).unwrap();
        let finite = m.estimate_lipschitz(&[1.0, 1.0, 2.0], 1.0, 0.0).unwrap();
        assert!(finite.is_finite());
        let sentinel = m.estimate_lipschitz(&[1.0, 1.5, 2.0], 1.0, 0.0).unwrap();
        assert!(sentinel.is_infinite());
        // Slack can absorb the disagreement at distance zero.
        let slack = m.estimate_lipschitz(&[1.0, 1.5, 2.0], 1.0, 0.3).unwrap();
        assert!(slack.is_finite());
    }

    #[test]
    fn isometry_preserves_pairwise_distances() {
        let base = circle_points(16);
        let embedded = embed_linear_isometry(&base, 2, 7, 42).unwrap();
        for i in 0..16 {
            for j in 0..16 {
                let d2: f64 = (0..2)
                    .map(|k| (base[i * 2 + k] - base[j * 2 + k]).powi(2))
                    .sum::<f64>()
                    .sqrt();
                let d7: f64 = (0..7)
                    .map(|k| (embedded[i * 7 + k] - embedded[j * 7 + k]).powi(2))
                    .sum::<f64>()
                    .sqrt();
                assert!((d2 - d7).abs() < 1e-12, "distance distorted: {d2} vs {d7}");
            }
        }
    }

    #[test]
    fn net_file_roundtrip() {
        let dir = std::env::temp_dir().join("npmd_net_roundtrip");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("net.txt");
        let m = circle_manifold(12, 2, 0, None).unwrap();
        m.write_net_file(&path).unwrap();
        let back = EmbeddedManifold::from_net_file(&path, 1, None).unwrap();
        assert_eq!(back.len(), 12);
        assert_eq!(back.ambient_dim(), 2);
        for i in 0..12 {
            for k in 0..2 {
                assert_eq!(m.point(i)[k], back.point(i)[k]);
            }
        }
    }

    #[test]
    fn comma_separated_net_files_parse() {
        let dir = std::env::temp_dir().join("npmd_net_commas");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("net.csv");
        std::fs::write(&path, "0.0, 0.0\n1.0, 0.0\n1.0, 1.0\n").unwrap();
        let m = EmbeddedManifold::from_net_file(&path, 1, Some(1.5)).unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(m.point(2), &[1.0, 1.0]);
    }
}
