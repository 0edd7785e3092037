//! Diffusion operators on a connected graph and the degree-weighted norms
//! in which the wavelet frame bounds hold.
//!
//! * `P = ½(I + A D⁻¹)`, the lazy random walk (column stochastic).
//! * `T = D^(−1/2) P D^(1/2) = ½(I + D^(−1/2) A D^(−1/2))`, symmetric and
//!   similar to `P`, with spectrum `1 = λ₁ > λ₂ ≥ … ≥ λₙ ≥ 0`.
//! * `‖x‖_w = ‖D^(−1/2) x‖₂`.
//!
//! Spectral facts about `P` are always obtained through `T`.

use ndarray::{Array1, Array2, ArrayView1, Axis};

use crate::error::{Error, Result};
use crate::graph::ProteinGraph;
use crate::linalg::{op_norm, symmetric_eigen};

fn check(adjacency: &Array2<f64>, degrees: &[f64]) -> Result<()> {
    let n = adjacency.nrows();
    if adjacency.ncols() != n || degrees.len() != n {
        return Err(Error::shape("diffusion", "adjacency/degree size mismatch"));
    }
    if let Some(i) = degrees.iter().position(|&d| d <= 0.0) {
        return Err(Error::ZeroDegree(i));
    }
    Ok(())
}

/// `P = ½(I + A D⁻¹)`.
pub fn lazy_walk(adjacency: &Array2<f64>, degrees: &[f64]) -> Result<Array2<f64>> {
    check(adjacency, degrees)?;
    let n = adjacency.nrows();
    Ok(Array2::from_shape_fn((n, n), |(i, j)| {
        let id = if i == j { 1.0 } else { 0.0 };
        0.5 * (id + adjacency[[i, j]] / degrees[j])
    }))
}

/// `T = ½(I + D^(−1/2) A D^(−1/2))`.
pub fn symmetric_diffusion(adjacency: &Array2<f64>, degrees: &[f64]) -> Result<Array2<f64>> {
    check(adjacency, degrees)?;
    let n = adjacency.nrows();
    Ok(Array2::from_shape_fn((n, n), |(i, j)| {
        let id = if i == j { 1.0 } else { 0.0 };
        0.5 * (id + adjacency[[i, j]] / (degrees[i] * degrees[j]).sqrt())
    }))
}

/// `L_N = I − D^(−1/2) A D^(−1/2)`.
pub fn normalized_laplacian(adjacency: &Array2<f64>, degrees: &[f64]) -> Result<Array2<f64>> {
    check(adjacency, degrees)?;
    let n = adjacency.nrows();
    Ok(Array2::from_shape_fn((n, n), |(i, j)| {
        let id = if i == j { 1.0 } else { 0.0 };
        id - adjacency[[i, j]] / (degrees[i] * degrees[j]).sqrt()
    }))
}

/// `D^s M D^(−s)` style conjugation: returns `diag(d)^left · M · diag(d)^right`.
pub fn degree_conjugate(m: &Array2<f64>, degrees: &[f64], left: f64, right: f64) -> Array2<f64> {
    Array2::from_shape_fn(m.raw_dim(), |(i, j)| {
        m[[i, j]] * degrees[i % degrees.len()].powf(left) * degrees[j].powf(right)
    })
}

/// Second-largest eigenvalue of `T` and the spectral gap `1 − λ₂`.
pub fn spectral_gap(t: &Array2<f64>) -> Result<(f64, f64)> {
    if t.nrows() < 2 {
        return Err(Error::arg("spectral gap needs at least 2 vertices"));
    }
    let (vals, _) = symmetric_eigen(t)?;
    Ok((vals[1], 1.0 - vals[1]))
}

/// `‖D^(−1/2) x‖₂`.
pub fn weighted_norm(x: ArrayView1<f64>, degrees: &[f64]) -> f64 {
    x.iter().zip(degrees).map(|(v, d)| v * v / d).sum::<f64>().sqrt()
}

/// Operator norm on the weighted space: `‖D^(−1/2) M D^(1/2)‖₂`. `m` may be a
/// vertical stack of several n×n blocks; each block is conjugated.
pub fn weighted_opnorm(m: &Array2<f64>, degrees: &[f64]) -> Result<f64> {
    let n = degrees.len();
    if m.ncols() != n || m.nrows() % n != 0 {
        return Err(Error::shape("weighted_opnorm", format!("{:?} vs n={n}", m.dim())));
    }
    op_norm(&degree_conjugate(m, degrees, -0.5, 0.5))
}

/// `[P⁰, P¹, …, P^t_max]` by repeated multiplication.
pub fn matrix_power_cascade(p: &Array2<f64>, t_max: usize) -> Result<Vec<Array2<f64>>> {
    if t_max < 1 {
        return Err(Error::arg("t_max must be at least 1"));
    }
    let mut out = Vec::with_capacity(t_max + 1);
    out.push(Array2::eye(p.nrows()));
    for t in 1..=t_max {
        let next = out[t - 1].dot(p);
        out.push(next);
    }
    Ok(out)
}

/// Unit vector with its first non-negligible entry made positive.
pub fn sign_fixed(v: ArrayView1<f64>) -> Array1<f64> {
    let mut v = v.to_owned();
    if let Some(&first) = v.iter().find(|x| x.abs() > 1e-12) {
        if first < 0.0 {
            v.mapv_inplace(|x| -x);
        }
    }
    v
}

#[derive(Debug, Clone)]
pub struct DiffusionOperators {
    pub p: Array2<f64>,
    pub t: Array2<f64>,
    pub laplacian: Array2<f64>,
    /// Eigenvalues of `T`, descending.
    pub eigvals: Vec<f64>,
    pub eigvecs: Array2<f64>,
    pub lead_eigvec: Array1<f64>,
    pub degrees: Vec<f64>,
}

impl DiffusionOperators {
    pub fn new(graph: &ProteinGraph) -> Result<Self> {
        Self::from_adjacency(&graph.adjacency, &graph.degrees)
    }

    pub fn from_adjacency(adjacency: &Array2<f64>, degrees: &[f64]) -> Result<Self> {
        let p = lazy_walk(adjacency, degrees)?;
        let t = symmetric_diffusion(adjacency, degrees)?;
        let laplacian = normalized_laplacian(adjacency, degrees)?;
        let (eigvals, eigvecs) = symmetric_eigen(&t)?;
        let lead_eigvec = sign_fixed(eigvecs.column(0));
        Ok(Self { p, t, laplacian, eigvals, eigvecs, lead_eigvec, degrees: degrees.to_vec() })
    }

    pub fn n(&self) -> usize {
        self.degrees.len()
    }

    pub fn lambda2(&self) -> f64 {
        self.eigvals.get(1).copied().unwrap_or(0.0)
    }

    /// `T̄ = T − v vᵀ`.
    pub fn t_bar(&self) -> Array2<f64> {
        let v = self.lead_eigvec.view().insert_axis(Axis(1));
        &self.t - &v.dot(&v.t())
    }

    pub fn weighted_norm(&self, x: ArrayView1<f64>) -> f64 {
        weighted_norm(x, &self.degrees)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{random_connected, ProteinGraph};
    use crate::linalg::max_abs_diff;
    use ndarray::array;
    use rand::SeedableRng;

    fn path3() -> (Array2<f64>, Vec<f64>) {
        let a = array![[0.0, 1.0, 0.0], [1.0, 0.0, 1.0], [0.0, 1.0, 0.0]];
        (a, vec![1.0, 2.0, 1.0])
    }

    fn naive_mul(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
        let mut c = Array2::zeros((a.nrows(), b.ncols()));
        for i in 0..a.nrows() {
            for j in 0..b.ncols() {
                let mut s = 0.0;
                for k in 0..a.ncols() {
                    s += a[[i, k]] * b[[k, j]];
                }
                c[[i, j]] = s;
            }
        }
        c
    }

    #[test]
    fn single_edge_operators() {
        let a = array![[0.0, 1.0], [1.0, 0.0]];
        let p = lazy_walk(&a, &[1.0, 1.0]).unwrap();
        assert_eq!(p, array![[0.5, 0.5], [0.5, 0.5]]);
        let t = symmetric_diffusion(&a, &[1.0, 1.0]).unwrap();
        assert_eq!(t, p);
        let pw = matrix_power_cascade(&p, 2).unwrap();
        assert!(max_abs_diff(&pw[2], &p) < 1e-15);
    }

    #[test]
    fn path3_walk_and_spectrum() {
        let (a, d) = path3();
        let p = lazy_walk(&a, &d).unwrap();
        let expect = array![[0.5, 0.25, 0.0], [0.5, 0.5, 0.5], [0.0, 0.25, 0.5]];
        assert!(max_abs_diff(&p, &expect) < 1e-15);
        let t = symmetric_diffusion(&a, &d).unwrap();
        let (vals, _) = symmetric_eigen(&t).unwrap();
        for (v, e) in vals.iter().zip([1.0, 0.5, 0.0]) {
            assert!((v - e).abs() < 1e-12, "{vals:?}");
        }
        let (l2, gap) = spectral_gap(&t).unwrap();
        assert!((l2 - 0.5).abs() < 1e-12 && (gap - 0.5).abs() < 1e-12);
        let p2 = matrix_power_cascade(&p, 2).unwrap();
        assert!(max_abs_diff(&p2[2], &naive_mul(&p, &p)) < 1e-15);
    }

    #[test]
    fn complete_graph_lambda2() {
        for n in 3..8usize {
            let a = Array2::from_shape_fn((n, n), |(i, j)| if i == j { 0.0 } else { 1.0 });
            let d = vec![(n - 1) as f64; n];
            let t = symmetric_diffusion(&a, &d).unwrap();
            let (l2, _) = spectral_gap(&t).unwrap();
            assert!((l2 - 0.5 * (1.0 - 1.0 / (n as f64 - 1.0))).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_degree_is_error() {
        let a = Array2::zeros((2, 2));
        assert!(matches!(lazy_walk(&a, &[0.0, 0.0]), Err(Error::ZeroDegree(0))));
    }

    #[test]
    fn regular_graph_t_equals_p() {
        // 5-cycle
        let mut a = Array2::zeros((5, 5));
        for i in 0..5 {
            a[[i, (i + 1) % 5]] = 1.0;
            a[[(i + 1) % 5, i]] = 1.0;
        }
        let d = vec![2.0; 5];
        assert_eq!(lazy_walk(&a, &d).unwrap(), symmetric_diffusion(&a, &d).unwrap());
    }

    #[test]
    fn random_graph_invariants() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for trial in 0..100 {
            let n = 5 + trial % 46;
            let g = random_connected(n, 0.15, &mut rng);
            let ops = DiffusionOperators::new(&g).unwrap();
            // column sums of P
            for c in ops.p.sum_axis(Axis(0)).iter() {
                assert!((c - 1.0).abs() < 1e-14);
            }
            assert!(ops.p.iter().all(|&v| (0.0..=1.0).contains(&v)));
            // T similarity
            let sim = degree_conjugate(&ops.p, &g.degrees, -0.5, 0.5);
            assert!(max_abs_diff(&sim, &ops.t) < 1e-12);
            // T = I - L/2
            let via_l = Array2::eye(n) - &ops.laplacian * 0.5;
            assert!(max_abs_diff(&via_l, &ops.t) < 1e-14);
            // spectrum containment, simple top eigenvalue
            assert!(ops.eigvals.iter().all(|&l| (-1e-10..=1.0 + 1e-10).contains(&l)));
            assert_eq!(ops.eigvals.iter().filter(|&&l| (l - 1.0).abs() < 1e-10).count(), 1);
            // lead eigenvector ∝ sqrt(d)
            let norm: f64 = g.degrees.iter().sum::<f64>().sqrt();
            for (v, d) in ops.lead_eigvec.iter().zip(&g.degrees) {
                assert!((v - d.sqrt() / norm).abs() < 1e-9);
            }
            assert!(weighted_opnorm(&ops.p, &g.degrees).unwrap() <= 1.0 + 1e-12);
            for pw in matrix_power_cascade(&ops.p, 4).unwrap() {
                for c in pw.sum_axis(Axis(0)).iter() {
                    assert!((c - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn weighted_norm_basics() {
        let x = array![3.0, -4.0];
        assert_eq!(weighted_norm(x.view(), &[1.0, 1.0]), 5.0);
        let d = [4.0f64, 9.0, 2.0];
        for i in 0..3 {
            let mut e = Array1::zeros(3);
            e[i] = d[i].sqrt();
            assert!((weighted_norm(e.view(), &d) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn weighted_opnorm_matches_sampling() {
        use rand::Rng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let g = random_connected(12, 0.3, &mut rng);
        let m = Array2::from_shape_fn((12, 12), |_| rng.random_range(-1.0..1.0));
        let exact = weighted_opnorm(&m, &g.degrees).unwrap();
        let mut x = Array1::from_shape_fn(12, |_| rng.random_range(-1.0..1.0));
        let conj = degree_conjugate(&m, &g.degrees, -0.5, 0.5);
        for _ in 0..200 {
            let y = conj.t().dot(&conj.dot(&x));
            x = &y / y.dot(&y).sqrt();
        }
        let xw = Array1::from_shape_fn(12, |i| x[i] * g.degrees[i].sqrt());
        let power = weighted_norm(m.dot(&xw).view(), &g.degrees) / weighted_norm(xw.view(), &g.degrees);
        assert!((power - exact).abs() / exact < 1e-6);

        // sampling cross-check on a small graph where 1000 draws cover the sphere
        let g = ProteinGraph::from_edges(3, [(0, 1), (1, 2)], Array2::zeros((3, 1))).unwrap();
        let m = Array2::from_shape_fn((3, 3), |_| rng.random_range(-1.0..1.0));
        let exact = weighted_opnorm(&m, &g.degrees).unwrap();
        let mut best: f64 = 0.0;
        for _ in 0..1000 {
            let x = Array1::from_shape_fn(3, |_| rng.random_range(-1.0..1.0));
            let ratio = weighted_norm(m.dot(&x).view(), &g.degrees) / weighted_norm(x.view(), &g.degrees);
            best = best.max(ratio);
        }
        assert!(best <= exact * (1.0 + 1e-12));
        assert!((exact - best) / exact < 0.02, "{best} vs {exact}");
    }
}
