//! Residue graphs: symmetrized k-nearest-neighbour adjacency over residue
//! centers, plus the one-hot amino-acid signal.

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::trajectory::{AminoAcid, TrajectoryFrame, ALPHABET};

pub const DEFAULT_K: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct ProteinGraph {
    pub n: usize,
    /// Sorted unordered pairs, `i < j`.
    pub edges: Vec<(usize, usize)>,
    pub adjacency: Array2<f64>,
    pub degrees: Vec<f64>,
    /// n × C node signal; one-hot amino acids for graphs built from frames.
    pub signal: Array2<f64>,
    pub frame_t: u64,
}

impl ProteinGraph {
    /// Graph from an explicit edge list. Fails when the result is disconnected
    /// or has a self loop.
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>, signal: Array2<f64>) -> Result<Self> {
        let set: BTreeSet<(usize, usize)> = edges
            .into_iter()
            .map(|(a, b)| if a < b { (a, b) } else { (b, a) })
            .collect();
        let mut adjacency = Array2::zeros((n, n));
        for &(a, b) in &set {
            if a == b {
                return Err(Error::arg(format!("self loop at vertex {a}")));
            }
            if b >= n {
                return Err(Error::arg(format!("edge ({a},{b}) out of range for n={n}")));
            }
            adjacency[[a, b]] = 1.0;
            adjacency[[b, a]] = 1.0;
        }
        if signal.nrows() != n {
            return Err(Error::shape("graph", format!("signal has {} rows, n={n}", signal.nrows())));
        }
        let degrees: Vec<f64> = adjacency.rows().into_iter().map(|r| r.sum()).collect();
        if let Some(i) = degrees.iter().position(|&d| d == 0.0) {
            return Err(Error::ZeroDegree(i));
        }
        let g = Self { n, edges: set.into_iter().collect(), adjacency, degrees, signal, frame_t: 0 };
        if !g.is_connected() {
            return Err(Error::Disconnected { k: 0 });
        }
        Ok(g)
    }

    pub fn degree_matrix(&self) -> Array2<f64> {
        Array2::from_diag(&ndarray::Array1::from(self.degrees.clone()))
    }

    pub fn is_connected(&self) -> bool {
        connected(self.n, &self.edges)
    }

    /// Relabel vertices: vertex `i` of `self` becomes vertex `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let edges = self.edges.iter().map(|&(a, b)| (perm[a], perm[b]));
        let mut signal = Array2::zeros(self.signal.raw_dim());
        for i in 0..self.n {
            signal.row_mut(perm[i]).assign(&self.signal.row(i));
        }
        let mut g = Self::from_edges(self.n, edges, signal)?;
        g.frame_t = self.frame_t;
        Ok(g)
    }

    pub fn channels(&self) -> usize {
        self.signal.ncols()
    }

    /// `i,j` per line with `i < j`.
    pub fn edge_csv(&self) -> String {
        let mut s = String::new();
        for &(i, j) in &self.edges {
            let _ = writeln!(s, "{i},{j}");
        }
        s
    }
}

pub(crate) fn connected(n: usize, edges: &[(usize, usize)]) -> bool {
    if n == 0 {
        return true;
    }
    let mut nbrs = vec![Vec::new(); n];
    for &(a, b) in edges {
        nbrs[a].push(b);
        nbrs[b].push(a);
    }
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    let mut count = 1;
    while let Some(v) = queue.pop_front() {
        for &w in &nbrs[v] {
            if !seen[w] {
                seen[w] = true;
                count += 1;
                queue.push_back(w);
            }
        }
    }
    count == n
}

pub fn one_hot(sequence: &[AminoAcid]) -> Array2<f64> {
    let mut x = Array2::zeros((sequence.len(), ALPHABET.len()));
    for (i, aa) in sequence.iter().enumerate() {
        x[[i, aa.index()]] = 1.0;
    }
    x
}

/// Indices of the `k` nearest points to `i`, distance ties to the lower index.
pub fn nearest(points: &[[f64; 3]], i: usize, k: usize) -> Vec<usize> {
    let mut others: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(j, p)| (crate::trajectory::dist(&points[i], p), j))
        .collect();
    others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    others.into_iter().take(k).map(|(_, j)| j).collect()
}

/// Union of directed k-NN relations over arbitrary points.
pub fn knn_edges(points: &[[f64; 3]], k: usize) -> Vec<(usize, usize)> {
    let mut set = BTreeSet::new();
    for i in 0..points.len() {
        for j in nearest(points, i, k) {
            set.insert(if i < j { (i, j) } else { (j, i) });
        }
    }
    set.into_iter().collect()
}

/// Random connected graph: a random spanning tree plus independent extra
/// edges with probability `p`. Signal is one-hot round-robin over the alphabet.
pub fn random_connected<R: rand::Rng>(n: usize, p: f64, rng: &mut R) -> ProteinGraph {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut edges = Vec::new();
    for i in 1..n {
        let j = rng.random_range(0..i);
        edges.push((order[i], order[j]));
    }
    for a in 0..n {
        for b in a + 1..n {
            if rng.random::<f64>() < p {
                edges.push((a, b));
            }
        }
    }
    let seq: Vec<AminoAcid> = (0..n).map(|i| AminoAcid::from_index(i % 20).unwrap()).collect();
    ProteinGraph::from_edges(n, edges, one_hot(&seq)).expect("spanning tree keeps the graph connected")
}

pub fn build_knn_graph(frame: &TrajectoryFrame, k: usize) -> Result<ProteinGraph> {
    let n = frame.n();
    if k == 0 || k >= n {
        return Err(Error::arg(format!("k must satisfy 1 <= k < n (k={k}, n={n})")));
    }
    let edges = knn_edges(&frame.coords, k);
    if !connected(n, &edges) {
        return Err(Error::Disconnected { k });
    }
    let mut g = ProteinGraph::from_edges(n, edges, one_hot(&frame.sequence))
        .map_err(|e| match e {
            Error::Disconnected { .. } => Error::Disconnected { k },
            other => other,
        })?;
    g.frame_t = frame.t;
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::parse_sequence;
    use rand::{Rng, SeedableRng};

    fn frame(coords: Vec<[f64; 3]>) -> TrajectoryFrame {
        let seq = (0..coords.len()).map(|i| AminoAcid::from_index(i % 20).unwrap()).collect();
        TrajectoryFrame { t: 0, coords, sequence: seq }
    }

    #[test]
    fn collinear_points_k1() {
        let f = frame(vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [10.0, 0.0, 0.0]]);
        let edges = knn_edges(&f.coords[..3], 1);
        assert_eq!(edges, vec![(0, 1), (1, 2)]);
        let g = ProteinGraph::from_edges(3, edges, Array2::zeros((3, 1))).unwrap();
        assert_eq!(g.degrees, vec![1.0, 2.0, 1.0]);
    }

    #[test]
    fn tie_goes_to_lower_index() {
        // 1 is equidistant from 0 and 2
        let pts = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]];
        assert_eq!(nearest(&pts, 1, 1), vec![0]);
    }

    #[test]
    fn rejects_bad_k_and_disconnected() {
        let f = frame(vec![[0.0; 3], [1.0, 0.0, 0.0], [50.0, 0.0, 0.0], [51.0, 0.0, 0.0]]);
        assert!(matches!(build_knn_graph(&f, 1), Err(Error::Disconnected { k: 1 })));
        assert!(build_knn_graph(&f, 2).is_ok());
        assert!(build_knn_graph(&f, 0).is_err());
        assert!(build_knn_graph(&f, 4).is_err());
    }

    #[test]
    fn isometry_preserves_edges() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<[f64; 3]> = (0..12).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
        let (a, b) = (0.7f64, -1.3f64);
        let moved: Vec<[f64; 3]> = pts
            .iter()
            .map(|p| {
                // rotate about z then about x, then translate
                let x1 = a.cos() * p[0] - a.sin() * p[1];
                let y1 = a.sin() * p[0] + a.cos() * p[1];
                let z1 = p[2];
                let y2 = b.cos() * y1 - b.sin() * z1;
                let z2 = b.sin() * y1 + b.cos() * z1;
                [x1 + 3.0, y2 - 7.0, z2 + 0.5]
            })
            .collect();
        let g1 = build_knn_graph(&frame(pts), 3).unwrap();
        let g2 = build_knn_graph(&frame(moved), 3).unwrap();
        assert_eq!(g1.edges, g2.edges);
        assert_eq!(g1.adjacency, g2.adjacency);
    }

    #[test]
    fn matches_exhaustive_distance_sort() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let pts: Vec<[f64; 3]> = (0..10).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
        let g = build_knn_graph(&frame(pts.clone()), 3).unwrap();
        // oracle: full pairwise matrix, rank each row by counting strictly closer points
        let d: Vec<Vec<f64>> = pts
            .iter()
            .map(|p| pts.iter().map(|q| crate::trajectory::dist(p, q)).collect())
            .collect();
        let mut a = Array2::<f64>::zeros((10, 10));
        for i in 0..10 {
            for j in 0..10 {
                if i == j {
                    continue;
                }
                let rank = (0..10)
                    .filter(|&m| m != i && (d[i][m] < d[i][j] || (d[i][m] == d[i][j] && m < j)))
                    .count();
                if rank < 3 {
                    a[[i, j]] = 1.0;
                    a[[j, i]] = 1.0;
                }
            }
        }
        assert_eq!(g.adjacency, a);
        for i in 0..10 {
            assert_eq!(g.adjacency[[i, i]], 0.0);
            assert_eq!(g.degrees[i], a.row(i).sum());
        }
    }

    #[test]
    fn one_hot_rows_and_histogram() {
        let seq = parse_sequence("AACWYA").unwrap();
        let x = one_hot(&seq);
        assert_eq!(x.row(0), x.row(1));
        assert_eq!(x[[0, 0]], 1.0);
        for r in x.rows() {
            assert_eq!(r.sum(), 1.0);
        }
        let cols = x.sum_axis(ndarray::Axis(0));
        for (c, &count) in cols.iter().enumerate() {
            let expect = seq.iter().filter(|a| a.index() == c).count() as f64;
            assert_eq!(count, expect);
        }
    }

    #[test]
    fn permutation_conjugates_adjacency() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let pts: Vec<[f64; 3]> = (0..9).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
        let g = build_knn_graph(&frame(pts.clone()), 3).unwrap();
        let perm = [3, 0, 8, 1, 7, 2, 6, 4, 5];
        let mut moved = vec![[0.0; 3]; 9];
        let mut seq = vec![AminoAcid::from_index(0).unwrap(); 9];
        let f = frame(pts);
        for i in 0..9 {
            moved[perm[i]] = f.coords[i];
            seq[perm[i]] = f.sequence[i];
        }
        let gp = build_knn_graph(&TrajectoryFrame { t: 0, coords: moved, sequence: seq }, 3).unwrap();
        assert_eq!(gp, g.permuted(&perm).unwrap());
        for i in 0..9 {
            for j in 0..9 {
                assert_eq!(gp.adjacency[[perm[i], perm[j]]], g.adjacency[[i, j]]);
            }
            assert_eq!(gp.signal.row(perm[i]), g.signal.row(i));
        }
    }

    #[test]
    fn edge_csv_lists_pairs() {
        let g = ProteinGraph::from_edges(3, [(1, 0), (2, 1)], Array2::zeros((3, 1))).unwrap();
        assert_eq!(g.edge_csv(), "0,1\n1,2\n");
    }
}
