//! Spatial adjacency over a window's observations.
//!
//! Nodes are observations; edges come from the Delaunay triangulation of
//! their pixel positions. Co-circular configurations, which are everywhere on
//! a pixel lattice, are resolved by a symbolic perturbation that lowers each
//! lifted point by an infinitesimal weight ordered lexicographically by
//! `(x, y)`. Among the diagonals of a co-circular quadrilateral this selects
//! the one whose lower endpoint is lexicographically smallest, so the edge set
//! is a function of the point set alone.

use std::collections::HashMap;

use robust::Coord;
use spade::{DelaunayTriangulation, Point2, Triangulation};

use crate::types::{Vec2, Window};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum EdgeWeighting {
    /// Every edge has weight 1 (pure Potts).
    #[default]
    Uniform,
    /// `w = exp(−dist / sigma)`.
    ExpDist { sigma: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub w: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialGraph {
    positions: Vec<Vec2>,
    edges: Vec<Edge>,
    offsets: Vec<usize>,
    adjacency: Vec<(usize, f64)>,
}

impl SpatialGraph {
    pub fn from_edges(positions: Vec<Vec2>, mut edges: Vec<Edge>) -> Self {
        let n = positions.len();
        for e in &mut edges {
            if e.i > e.j {
                std::mem::swap(&mut e.i, &mut e.j);
            }
            assert!(e.i != e.j && e.j < n, "invalid edge ({}, {})", e.i, e.j);
        }
        edges.sort_by(|a, b| (a.i, a.j).cmp(&(b.i, b.j)));
        edges.dedup_by(|a, b| a.i == b.i && a.j == b.j);

        let mut degree = vec![0usize; n + 1];
        for e in &edges {
            degree[e.i + 1] += 1;
            degree[e.j + 1] += 1;
        }
        for k in 0..n {
            degree[k + 1] += degree[k];
        }
        let offsets = degree;
        let mut fill = offsets.clone();
        let mut adjacency = vec![(0usize, 0.0); offsets[n]];
        for e in &edges {
            adjacency[fill[e.i]] = (e.j, e.w);
            fill[e.i] += 1;
            adjacency[fill[e.j]] = (e.i, e.w);
            fill[e.j] += 1;
        }
        Self {
            positions,
            edges,
            offsets,
            adjacency,
        }
    }

    pub fn node_count(&self) -> usize {
        self.positions.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn positions(&self) -> &[Vec2] {
        &self.positions
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.adjacency[self.offsets[i]..self.offsets[i + 1]]
    }

    /// Whether every node can reach every other.
    pub fn is_connected(&self) -> bool {
        let n = self.node_count();
        if n == 0 {
            return true;
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        let mut count = 1;
        while let Some(i) = stack.pop() {
            for &(j, _) in self.neighbors(i) {
                if !seen[j] {
                    seen[j] = true;
                    count += 1;
                    stack.push(j);
                }
            }
        }
        count == n
    }

    /// `i,j,w` CSV lines.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("i,j,w\n");
        for e in &self.edges {
            s.push_str(&format!("{},{},{}\n", e.i, e.j, e.w));
        }
        s
    }
}

pub fn build_graph(window: &Window, weighting: EdgeWeighting) -> SpatialGraph {
    let positions: Vec<Vec2> = window.observations.iter().map(|o| o.position()).collect();
    build_graph_from_positions(positions, weighting)
}

pub fn build_graph_from_positions(positions: Vec<Vec2>, weighting: EdgeWeighting) -> SpatialGraph {
    // Collapse co-located observations onto one triangulation vertex.
    let mut order: Vec<usize> = (0..positions.len()).collect();
    order.sort_by(|&a, &b| lex_cmp(&positions[a], &positions[b]).then(a.cmp(&b)));
    let mut unique: Vec<Vec2> = Vec::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for &i in &order {
        if unique.last() == Some(&positions[i]) {
            groups.last_mut().unwrap().push(i);
        } else {
            unique.push(positions[i]);
            groups.push(vec![i]);
        }
    }

    let weight = |a: usize, b: usize| match weighting {
        EdgeWeighting::Uniform => 1.0,
        EdgeWeighting::ExpDist { sigma } => (-(positions[a] - positions[b]).norm() / sigma).exp(),
    };

    let mut edges = Vec::new();
    for group in &groups {
        for pair in group.windows(2) {
            edges.push(Edge {
                i: pair[0],
                j: pair[1],
                w: weight(pair[0], pair[1]),
            });
        }
    }
    for (u, v) in delaunay_edges(&unique) {
        for &a in &groups[u] {
            for &b in &groups[v] {
                edges.push(Edge { i: a, j: b, w: weight(a, b) });
            }
        }
    }
    SpatialGraph::from_edges(positions, edges)
}

fn lex_cmp(a: &Vec2, b: &Vec2) -> std::cmp::Ordering {
    a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y))
}

/// Delaunay edges of pairwise-distinct points sorted lexicographically, as
/// index pairs `(u, v)` with `u < v`.
pub fn delaunay_edges(points: &[Vec2]) -> Vec<(usize, usize)> {
    let n = points.len();
    if n < 2 {
        return Vec::new();
    }
    if n == 2 {
        return vec![(0, 1)];
    }
    let tris = delaunay_triangles(points);
    let mut edges: Vec<(usize, usize)> = if tris.is_empty() {
        // Collinear: consecutive points along the line (input is lex sorted).
        (0..n - 1).map(|i| (i, i + 1)).collect()
    } else {
        tris.iter()
            .flat_map(|t| [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])])
            .map(|(a, b)| (a.min(b), a.max(b)))
            .collect()
    };
    edges.sort_unstable();
    edges.dedup();
    edges
}

/// Canonical Delaunay triangles (counter-clockwise) of lexicographically
/// sorted, pairwise-distinct points. Empty when all points are collinear.
pub fn delaunay_triangles(points: &[Vec2]) -> Vec<[usize; 3]> {
    debug_assert!(points.windows(2).all(|w| lex_cmp(&w[0], &w[1]).is_lt()));
    if points.len() < 3 {
        return Vec::new();
    }
    let vertices: Vec<Point2<f64>> = points.iter().map(|p| Point2::new(p.x, p.y)).collect();
    let dt = DelaunayTriangulation::<Point2<f64>>::bulk_load_stable(vertices)
        .expect("finite, distinct pixel coordinates");
    debug_assert_eq!(dt.num_vertices(), points.len());
    let tris: Vec<[u32; 3]> = dt
        .inner_faces()
        .map(|f| {
            let v = f.vertices();
            [v[0].fix().index() as u32, v[1].fix().index() as u32, v[2].fix().index() as u32]
        })
        .collect();
    let mut tris = canonicalize(points, tris);
    for t in &mut tris {
        // Rotate so the smallest index leads; stable output ordering.
        let k = (0..3).min_by_key(|&k| t[k]).unwrap();
        t.rotate_left(k);
    }
    tris.sort_unstable();
    tris.into_iter()
        .map(|t| [t[0] as usize, t[1] as usize, t[2] as usize])
        .collect()
}

fn coord(p: &Vec2) -> Coord<f64> {
    Coord { x: p.x, y: p.y }
}

pub(crate) fn orient(a: &Vec2, b: &Vec2, c: &Vec2) -> f64 {
    robust::orient2d(coord(a), coord(b), coord(c))
}

/// Sign of the in-circle test of `d` against counter-clockwise `(a, b, c)`
/// under the lexicographic perturbation. Indices double as ranks because the
/// points are sorted. Positive means `d` is inside.
fn perturbed_incircle(points: &[Vec2], a: usize, b: usize, c: usize, d: usize) -> f64 {
    let (pa, pb, pc, pd) = (&points[a], &points[b], &points[c], &points[d]);
    let exact = robust::incircle(coord(pa), coord(pb), coord(pc), coord(pd));
    if exact != 0.0 {
        return exact;
    }
    // Derivative of the lifted determinant with respect to each point's
    // height; lowering the lowest-ranked point with a non-zero coefficient
    // decides the sign.
    let mut terms = [
        (a, orient(pb, pc, pd)),
        (b, orient(pc, pa, pd)),
        (c, orient(pa, pb, pd)),
        (d, -orient(pa, pb, pc)),
    ];
    terms.sort_by_key(|&(rank, _)| rank);
    for (_, coeff) in terms {
        if coeff != 0.0 {
            return -coeff;
        }
    }
    0.0
}

/// Lawson flips under the perturbed predicate until every interior edge is
/// locally Delaunay.
fn canonicalize(points: &[Vec2], mut tris: Vec<[u32; 3]>) -> Vec<[u32; 3]> {
    let key = |a: u32, b: u32| (a as u64) << 32 | b as u64;
    let mut owner: HashMap<u64, u32> = HashMap::with_capacity(tris.len() * 3);
    for (t, tri) in tris.iter().enumerate() {
        for k in 0..3 {
            owner.insert(key(tri[k], tri[(k + 1) % 3]), t as u32);
        }
    }
    let third = |tri: &[u32; 3], a: u32, b: u32| -> u32 {
        *tri.iter().find(|&&v| v != a && v != b).unwrap()
    };

    let mut stack: Vec<(u32, u32)> = tris
        .iter()
        .flat_map(|t| [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])])
        .filter(|&(a, b)| a < b)
        .collect();
    let mut flips = 0usize;
    let flip_limit = 64 * tris.len() + 64;
    while let Some((a, b)) = stack.pop() {
        let (Some(&t1), Some(&t2)) = (owner.get(&key(a, b)), owner.get(&key(b, a))) else {
            continue;
        };
        let c = third(&tris[t1 as usize], a, b);
        let d = third(&tris[t2 as usize], a, b);
        // Orient the shared edge so that t1 holds a -> b.
        if perturbed_incircle(points, a as usize, b as usize, c as usize, d as usize) <= 0.0 {
            continue;
        }
        flips += 1;
        assert!(flips <= flip_limit, "edge flipping failed to converge");
        owner.remove(&key(a, b));
        owner.remove(&key(b, a));
        tris[t1 as usize] = [c, a, d];
        tris[t2 as usize] = [d, b, c];
        for (u, v, t) in [(c, a, t1), (a, d, t1), (d, c, t1), (d, b, t2), (b, c, t2), (c, d, t2)] {
            owner.insert(key(u, v), t);
        }
        for (u, v) in [(a, d), (d, b), (b, c), (c, a)] {
            stack.push((u.min(v), u.max(v)));
        }
    }
    tris
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pts(v: &[(f64, f64)]) -> Vec<Vec2> {
        v.iter().map(|&(x, y)| Vec2::new(x, y)).collect()
    }

    fn graph(v: &[(f64, f64)]) -> SpatialGraph {
        build_graph_from_positions(pts(v), EdgeWeighting::Uniform)
    }

    fn edge_pairs(g: &SpatialGraph) -> Vec<(usize, usize)> {
        g.edges().iter().map(|e| (e.i, e.j)).collect()
    }

    #[test]
    fn triangle_has_three_edges() {
        let g = graph(&[(0.0, 0.0), (4.0, 0.0), (1.0, 3.0)]);
        assert_eq!(g.edges().len(), 3);
    }

    #[test]
    fn unit_square_takes_lexicographic_diagonal() {
        // (0,0) is lexicographically smallest, so the diagonal (0,0)-(1,1) wins.
        let g = graph(&[(1.0, 0.0), (0.0, 1.0), (1.0, 1.0), (0.0, 0.0)]);
        assert_eq!(g.edges().len(), 5);
        assert!(edge_pairs(&g).contains(&(2, 3)));
        assert!(!edge_pairs(&g).contains(&(0, 1)));
    }

    #[test]
    fn small_and_degenerate_inputs() {
        assert!(graph(&[(3.0, 3.0)]).edges().is_empty());
        assert_eq!(edge_pairs(&graph(&[(0.0, 0.0), (5.0, 1.0)])), vec![(0, 1)]);
        let line = graph(&[(2.0, 2.0), (0.0, 0.0), (3.0, 3.0), (1.0, 1.0)]);
        assert_eq!(edge_pairs(&line), vec![(0, 2), (0, 3), (1, 3)]);
        assert!(line.is_connected());
    }

    #[test]
    fn co_located_observations_share_adjacency() {
        let g = graph(&[(0.0, 0.0), (4.0, 0.0), (0.0, 4.0), (4.0, 0.0)]);
        let e = edge_pairs(&g);
        assert!(e.contains(&(1, 3)));
        assert!(e.contains(&(0, 1)) && e.contains(&(0, 3)));
        assert!(e.contains(&(1, 2)) && e.contains(&(2, 3)));
        assert!(e.contains(&(0, 2)));
        assert_eq!(e.len(), 6);
    }

    #[test]
    fn lattice_triangulation_is_unique_under_permutation() {
        let mut v = Vec::new();
        for x in 0..7 {
            for y in 0..6 {
                v.push((x as f64, y as f64));
            }
        }
        let a = edge_pairs(&graph(&v));
        v.reverse();
        let b = graph(&v);
        let n = v.len();
        let mut mapped: Vec<(usize, usize)> = b
            .edges()
            .iter()
            .map(|e| {
                let (i, j) = (n - 1 - e.i, n - 1 - e.j);
                (i.min(j), i.max(j))
            })
            .collect();
        mapped.sort_unstable();
        assert_eq!(a, mapped);
        assert_eq!(a.len(), 3 * n - 3 - (2 * 7 + 2 * 6 - 4));
    }

    #[test]
    fn exp_dist_weights() {
        let g = build_graph_from_positions(pts(&[(0.0, 0.0), (2.0, 0.0)]), EdgeWeighting::ExpDist { sigma: 2.0 });
        assert!((g.edges()[0].w - (-1.0f64).exp()).abs() < 1e-15);
    }

    /// Brute-force empty-circumcircle check over every triangle.
    pub(crate) fn assert_empty_circumcircles(points: &[Vec2], tris: &[[usize; 3]]) {
        for t in tris {
            let (a, b, c) = (points[t[0]], points[t[1]], points[t[2]]);
            assert!(orient(&a, &b, &c) > 0.0, "triangle not ccw");
            for (k, d) in points.iter().enumerate() {
                if t.contains(&k) {
                    continue;
                }
                let s = robust::incircle(coord(&a), coord(&b), coord(&c), coord(d));
                assert!(s <= 0.0, "point {k} strictly inside circumcircle of {t:?}");
            }
        }
    }

    #[test]
    fn random_lattice_sets_are_delaunay() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let n = rng.random_range(3..150);
            let mut v: Vec<Vec2> = (0..n)
                .map(|_| Vec2::new(rng.random_range(0..30) as f64, rng.random_range(0..30) as f64))
                .collect();
            v.sort_by(lex_cmp);
            v.dedup();
            let tris = delaunay_triangles(&v);
            assert_empty_circumcircles(&v, &tris);
            let g = build_graph_from_positions(v.clone(), EdgeWeighting::Uniform);
            assert!(g.is_connected());
            if v.len() >= 3 {
                assert!(g.edges().len() <= 3 * v.len() - 6 || tris.is_empty());
            }
        }
    }

    proptest! {
        #[test]
        fn deterministic_and_planar(raw in proptest::collection::vec((0u32..40, 0u32..40), 1..80)) {
            let v: Vec<(f64, f64)> = raw.iter().map(|&(x, y)| (x as f64, y as f64)).collect();
            let a = graph(&v);
            let b = graph(&v);
            prop_assert_eq!(&a, &b);
            prop_assert!(a.is_connected());
            let mut uniq = pts(&v);
            uniq.sort_by(lex_cmp);
            uniq.dedup();
            if uniq.len() >= 3 {
                prop_assert!(delaunay_edges(&uniq).len() <= 3 * uniq.len() - 6 || delaunay_triangles(&uniq).is_empty());
            }
        }
    }
}
