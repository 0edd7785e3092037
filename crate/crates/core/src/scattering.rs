//! Diffusion-wavelet banks and the geometric scattering transform.
//!
//! A bank over scales `t_1 < … < t_(J+1)` is
//!
//! ```text
//! Ψ̃_0 = I − P^(t_1),   Ψ̃_j = P^(t_j) − P^(t_(j+1))  (1 ≤ j ≤ J),   lowpass = P^(t_(J+1))
//! ```
//!
//! so `Σ_j Ψ̃_j + lowpass = I`. The learnable bank replaces each hard power
//! `P^(t_j)` by a softmax-weighted mixture `Σ_t s_j[t] P^t` over steps
//! `1..=t_max`, with `s_j = softmax(Θ_j·)`.
//!
//! Scattering features per channel: the low-pass response, first-order
//! `|Ψ̃_j x|` for every `j`, and second-order `|Ψ̃_(j2) |Ψ̃_(j1) x||` for
//! `j1 < j2`. Features are laid out channel-major, then order-major.

use std::fmt::{self, Write as _};
use std::rc::Rc;

use ndarray::{Array2, ArrayView2, Axis};

use crate::autodiff::{Tape, Var};
use crate::diffusion::matrix_power_cascade;
use crate::error::{Error, Result};

pub const DEFAULT_J: usize = 4;
pub const DEFAULT_T_MAX: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub enum BankKind {
    /// Hard scales; dyadic banks are the special case `t_j = 2^(j−1)`.
    Hard { scales: Vec<usize> },
    /// Soft selection over `1..=t_max`.
    Learnable { weights: Array2<f64> },
}

#[derive(Debug, Clone)]
pub struct WaveletBank {
    pub j: usize,
    pub kind: BankKind,
    /// `Ψ̃_0 … Ψ̃_J`.
    pub operators: Vec<Array2<f64>>,
    pub lowpass: Array2<f64>,
}

pub fn dyadic_scales(j: usize) -> Vec<usize> {
    (0..=j).map(|k| 1usize << k).collect()
}

/// Bank with explicit increasing scales `t_1 < … < t_(J+1)`, built from any
/// diffusion matrix (`P` for the model, `T` for the symmetric variant).
pub fn hard_bank(op: &Array2<f64>, scales: &[usize]) -> Result<WaveletBank> {
    if scales.len() < 2 {
        return Err(Error::arg("need at least two scales (J >= 1)"));
    }
    if scales[0] < 1 || scales.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::arg(format!("scales must be positive and strictly increasing: {scales:?}")));
    }
    let powers = matrix_power_cascade(op, *scales.last().unwrap())?;
    let n = op.nrows();
    let mut operators = Vec::with_capacity(scales.len());
    operators.push(Array2::eye(n) - &powers[scales[0]]);
    for w in scales.windows(2) {
        operators.push(&powers[w[0]] - &powers[w[1]]);
    }
    Ok(WaveletBank {
        j: scales.len() - 1,
        kind: BankKind::Hard { scales: scales.to_vec() },
        operators,
        lowpass: powers[*scales.last().unwrap()].clone(),
    })
}

pub fn dyadic_bank(p: &Array2<f64>, j: usize) -> Result<WaveletBank> {
    if j < 1 {
        return Err(Error::arg("J must be at least 1"));
    }
    hard_bank(p, &dyadic_scales(j))
}

/// Row-wise softmax.
pub fn softmax_rows(theta: ArrayView2<f64>) -> Array2<f64> {
    let mut s = theta.to_owned();
    for mut row in s.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let z = row.sum();
        row.mapv_inplace(|v| v / z);
    }
    s
}

/// Learnable scale logits: (J+1) rows over diffusion steps `1..=t_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionMatrix(pub Array2<f64>);

impl SelectionMatrix {
    /// Logits peaked at the given scales; `sharpness` is the peak logit.
    pub fn peaked(scales: &[usize], t_max: usize, sharpness: f64) -> Result<Self> {
        if scales.iter().any(|&t| t < 1 || t > t_max) {
            return Err(Error::arg(format!("scales {scales:?} outside 1..={t_max}")));
        }
        let mut theta = Array2::zeros((scales.len(), t_max));
        for (r, &t) in scales.iter().enumerate() {
            theta[[r, t - 1]] = sharpness;
        }
        Ok(Self(theta))
    }

    /// Peaked at dyadic scales, clipped to `t_max`.
    pub fn dyadic_init(j: usize, t_max: usize, sharpness: f64) -> Result<Self> {
        if t_max < j + 1 {
            return Err(Error::arg("t_max must be at least J+1"));
        }
        let mut scales = dyadic_scales(j);
        // keep scales distinct and within range when 2^J exceeds t_max
        for r in (0..scales.len()).rev() {
            let cap = t_max - (scales.len() - 1 - r);
            scales[r] = scales[r].min(cap);
        }
        Self::peaked(&scales, t_max, sharpness)
    }

    pub fn j(&self) -> usize {
        self.0.nrows() - 1
    }

    pub fn t_max(&self) -> usize {
        self.0.ncols()
    }

    pub fn weights(&self) -> Array2<f64> {
        softmax_rows(self.0.view())
    }

    /// `E_j = Σ_t t · s_j[t]`.
    pub fn expected_scales(&self) -> Vec<f64> {
        self.weights()
            .rows()
            .into_iter()
            .map(|r| r.iter().enumerate().map(|(t, w)| (t + 1) as f64 * w).sum())
            .collect()
    }

    /// Rows whose expected scale fails to increase over the previous row.
    pub fn ordering_violations(&self) -> Vec<usize> {
        let e = self.expected_scales();
        (1..e.len()).filter(|&r| e[r] <= e[r - 1]).collect()
    }
}

pub fn learnable_bank(p: &Array2<f64>, theta: &SelectionMatrix, t_max: usize) -> Result<WaveletBank> {
    if theta.t_max() != t_max {
        return Err(Error::arg(format!("selection matrix has {} columns, t_max={t_max}", theta.t_max())));
    }
    if theta.0.nrows() < 2 {
        return Err(Error::arg("selection matrix needs J+1 >= 2 rows"));
    }
    if t_max < theta.0.nrows() {
        return Err(Error::arg("t_max must be at least J+1"));
    }
    if p.nrows() != p.ncols() {
        return Err(Error::arg("diffusion matrix must be square"));
    }
    let weights = theta.weights();
    let powers = matrix_power_cascade(p, t_max)?;
    let n = p.nrows();
    let soft: Vec<Array2<f64>> = weights
        .rows()
        .into_iter()
        .map(|w| {
            let mut acc = Array2::zeros((n, n));
            for (t, &wt) in w.iter().enumerate() {
                acc.scaled_add(wt, &powers[t + 1]);
            }
            acc
        })
        .collect();
    let mut operators = Vec::with_capacity(soft.len());
    operators.push(Array2::eye(n) - &soft[0]);
    for w in soft.windows(2) {
        operators.push(&w[0] - &w[1]);
    }
    Ok(WaveletBank {
        j: soft.len() - 1,
        kind: BankKind::Learnable { weights },
        operators,
        lowpass: soft.last().unwrap().clone(),
    })
}

impl WaveletBank {
    pub fn n(&self) -> usize {
        self.lowpass.nrows()
    }

    /// `Σ_j Ψ̃_j + lowpass`, which should be the identity.
    pub fn telescoped(&self) -> Array2<f64> {
        self.operators.iter().fold(self.lowpass.clone(), |acc, op| acc + op)
    }

    /// The (J+1)n × n vertical stack of the wavelet operators (no low-pass).
    pub fn stacked(&self) -> Array2<f64> {
        let views: Vec<_> = self.operators.iter().map(|o| o.view()).collect();
        ndarray::concatenate(Axis(0), &views).expect("operators share a shape")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureKey {
    Zeroth { channel: usize },
    First { j: usize, channel: usize },
    Second { j1: usize, j2: usize, channel: usize },
}

impl fmt::Display for FeatureKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            FeatureKey::Zeroth { channel } => write!(f, "(0,0,{channel})"),
            FeatureKey::First { j, channel } => write!(f, "(1,{j},{channel})"),
            FeatureKey::Second { j1, j2, channel } => write!(f, "(2,{j1},{j2},{channel})"),
        }
    }
}

/// Features per channel: `1 + (J+1) + (J+1)J/2`.
pub fn features_per_channel(j: usize) -> usize {
    1 + (j + 1) + (j + 1) * j / 2
}

/// Frozen feature order: channel-major, then zeroth, first (j ascending),
/// second (lexicographic `j1 < j2`).
pub fn feature_layout(j: usize, channels: usize) -> Vec<FeatureKey> {
    let mut out = Vec::with_capacity(channels * features_per_channel(j));
    for channel in 0..channels {
        out.push(FeatureKey::Zeroth { channel });
        for jj in 0..=j {
            out.push(FeatureKey::First { j: jj, channel });
        }
        for j1 in 0..=j {
            for j2 in j1 + 1..=j {
                out.push(FeatureKey::Second { j1, j2, channel });
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScatteringOutput {
    /// n × F.
    pub coeffs: Array2<f64>,
    pub layout: Vec<FeatureKey>,
}

impl ScatteringOutput {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("residue");
        for k in &self.layout {
            let _ = write!(s, ",\"{k}\"");
        }
        s.push('\n');
        for (i, row) in self.coeffs.rows().into_iter().enumerate() {
            let _ = write!(s, "{i}");
            for v in row {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }
}

pub fn scatter(bank: &WaveletBank, x: &Array2<f64>) -> Result<ScatteringOutput> {
    let n = bank.n();
    if x.nrows() != n || x.ncols() == 0 {
        return Err(Error::shape("scatter", format!("signal {:?} for n={n}", x.dim())));
    }
    let j = bank.j;
    let channels = x.ncols();
    let per = features_per_channel(j);
    let mut coeffs = Array2::zeros((n, channels * per));

    let low = bank.lowpass.dot(x);
    let first: Vec<Array2<f64>> = bank.operators.iter().map(|op| op.dot(x).mapv(f64::abs)).collect();
    let mut second = Vec::with_capacity((j + 1) * j / 2);
    for j1 in 0..=j {
        for j2 in j1 + 1..=j {
            second.push(bank.operators[j2].dot(&first[j1]).mapv(f64::abs));
        }
    }
    for c in 0..channels {
        let base = c * per;
        coeffs.column_mut(base).assign(&low.column(c));
        for (k, u) in first.iter().enumerate() {
            coeffs.column_mut(base + 1 + k).assign(&u.column(c));
        }
        for (k, u) in second.iter().enumerate() {
            coeffs.column_mut(base + 2 + j + k).assign(&u.column(c));
        }
    }
    Ok(ScatteringOutput { coeffs, layout: feature_layout(j, channels) })
}

/// Wavelet-difference matrix Δ, (J+1)×(J+2): row `j` is `e_j − e_(j+1)`.
fn difference_matrix(j: usize) -> Array2<f64> {
    let mut d = Array2::zeros((j + 1, j + 2));
    for r in 0..=j {
        d[[r, r]] = 1.0;
        d[[r, r + 1]] = -1.0;
    }
    d
}

/// Tape ops for the soft-scale bank applied to a flattened signal.
pub struct TapeBank {
    /// (J+1)×t_max softmax weights.
    pub weights: Var,
    /// `P^1 … P^t_max`.
    pub powers: Rc<Vec<Array2<f64>>>,
    pub channels: usize,
    difference: Var,
}

impl TapeBank {
    pub fn new(tape: &mut Tape, weights: Var, powers: Rc<Vec<Array2<f64>>>, channels: usize) -> Result<Self> {
        let (rows, t_max) = tape.shape(weights);
        if powers.len() != t_max {
            return Err(Error::shape("scatter", format!("{} powers for t_max={t_max}", powers.len())));
        }
        if rows < 2 {
            return Err(Error::shape("scatter", "selection needs J+1 >= 2 rows"));
        }
        let difference = tape.constant(difference_matrix(rows - 1));
        Ok(Self { weights, powers, channels, difference })
    }

    pub fn j(&self, tape: &Tape) -> usize {
        tape.shape(self.weights).0 - 1
    }

    /// For a 1×(n·C) signal `u`: returns (`Ψ̃_0 u … Ψ̃_J u` as (J+1)×(n·C),
    /// low-pass response as 1×(n·C)).
    pub fn responses(&self, tape: &mut Tape, u: Var) -> Result<(Var, Var)> {
        let diffused = tape.diffuse(u, self.powers.clone(), self.channels)?;
        let soft = tape.matmul(self.weights, diffused)?;
        let stacked = tape.concat_v(&[u, soft])?;
        let psi = tape.matmul(self.difference, stacked)?;
        let rows = tape.shape(stacked).0;
        let low = tape.select_rows(stacked, &[rows - 1])?;
        Ok((psi, low))
    }
}

/// Scattering features of the n×C signal `x` on the tape, n×(C·K) in the
/// frozen layout of [`feature_layout`].
pub fn scatter_on_tape(tape: &mut Tape, bank: &TapeBank, x: Var) -> Result<Var> {
    let (n, c) = tape.shape(x);
    if c != bank.channels || bank.powers[0].nrows() != n {
        return Err(Error::shape("scatter", format!("signal {:?} vs bank n={}, C={}", (n, c), bank.powers[0].nrows(), bank.channels)));
    }
    let j = bank.j(tape);
    let flat = tape.reshape(x, (1, n * c))?;
    let (psi, low) = bank.responses(tape, flat)?;
    let first = tape.abs(psi);
    let mut rows = vec![low, first];
    for j1 in 0..j {
        let u = tape.select_rows(first, &[j1])?;
        let (psi2, _) = bank.responses(tape, u)?;
        let keep: Vec<usize> = (j1 + 1..=j).collect();
        let picked = tape.select_rows(psi2, &keep)?;
        rows.push(tape.abs(picked));
    }
    let all = tape.concat_v(&rows)?;
    let k = features_per_channel(j);
    debug_assert_eq!(tape.shape(all).0, k);
    let mut index = vec![0usize; n * c * k];
    for i in 0..n {
        for ch in 0..c {
            for kk in 0..k {
                index[i * c * k + ch * k + kk] = kk * n * c + i * c + ch;
            }
        }
    }
    tape.gather(all, index.into(), (n, c * k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{lazy_walk, weighted_norm, DiffusionOperators};
    use crate::graph::random_connected;
    use crate::linalg::max_abs_diff;
    use ndarray::{array, Array1};
    use rand::{Rng, SeedableRng};

    fn path3_p() -> Array2<f64> {
        let a = array![[0.0, 1.0, 0.0], [1.0, 0.0, 1.0], [0.0, 1.0, 0.0]];
        lazy_walk(&a, &[1.0, 2.0, 1.0]).unwrap()
    }

    #[test]
    fn single_edge_dyadic_wavelets_vanish() {
        let p = array![[0.5, 0.5], [0.5, 0.5]];
        let bank = dyadic_bank(&p, 3).unwrap();
        assert!(max_abs_diff(&bank.operators[0], &(Array2::eye(2) - &p)) < 1e-15);
        for op in &bank.operators[1..] {
            assert!(op.iter().all(|v| v.abs() < 1e-15));
        }
    }

    #[test]
    fn path3_first_wavelet() {
        let p = path3_p();
        let bank = dyadic_bank(&p, 2).unwrap();
        let p2 = p.dot(&p);
        assert!(max_abs_diff(&bank.operators[1], &(&p - &p2)) < 1e-15);
        assert!(max_abs_diff(&bank.telescoped(), &Array2::eye(3)) < 1e-12);
    }

    #[test]
    fn path3_center_impulse() {
        let bank = dyadic_bank(&path3_p(), 1).unwrap();
        let x = array![[0.0], [1.0], [0.0]];
        let psi0 = bank.operators[0].dot(&x);
        assert!(max_abs_diff(&psi0, &array![[-0.25], [0.5], [-0.25]]) < 1e-15);
        let out = scatter(&bank, &x).unwrap();
        // layout for J=1, one channel: zeroth, first j=0, first j=1, second (0,1)
        assert_eq!(out.layout.len(), 4);
        assert!(max_abs_diff(&out.coeffs.slice(ndarray::s![.., 1..2]).to_owned(), &array![[0.25], [0.5], [0.25]]) < 1e-15);
    }

    #[test]
    fn zero_signal_gives_zero_coefficients() {
        let bank = dyadic_bank(&path3_p(), 2).unwrap();
        let out = scatter(&bank, &Array2::zeros((3, 2))).unwrap();
        assert!(out.coeffs.iter().all(|&v| v == 0.0));
        assert_eq!(out.coeffs.ncols(), 2 * features_per_channel(2));
    }

    #[test]
    fn saturated_selection_recovers_hard_bank() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let g = random_connected(15, 0.2, &mut rng);
        let p = DiffusionOperators::new(&g).unwrap().p;
        let scales = [1, 3, 4, 9, 12];
        let mut theta = Array2::from_elem((5, 12), -30.0);
        for (r, &t) in scales.iter().enumerate() {
            theta[[r, t - 1]] = 30.0;
        }
        let soft = learnable_bank(&p, &SelectionMatrix(theta), 12).unwrap();
        let hard = hard_bank(&p, &scales).unwrap();
        for (a, b) in soft.operators.iter().zip(&hard.operators) {
            assert!(max_abs_diff(a, b) < 1e-9);
        }
        assert!(max_abs_diff(&soft.lowpass, &hard.lowpass) < 1e-9);

        let theta = SelectionMatrix::peaked(&dyadic_scales(3), 8, 60.0).unwrap();
        let soft = learnable_bank(&p, &theta, 8).unwrap();
        let dy = dyadic_bank(&p, 3).unwrap();
        for (a, b) in soft.operators.iter().zip(&dy.operators) {
            assert!(max_abs_diff(a, b) < 1e-9);
        }
    }

    #[test]
    fn learnable_bank_shape_errors() {
        let p = path3_p();
        let theta = SelectionMatrix(Array2::zeros((3, 4)));
        assert!(learnable_bank(&p, &theta, 5).is_err());
        let theta = SelectionMatrix(Array2::zeros((5, 4)));
        assert!(learnable_bank(&p, &theta, 4).is_err());
    }

    #[test]
    fn expected_scale_ordering_is_reported() {
        let ok = SelectionMatrix::dyadic_init(4, 16, 4.0).unwrap();
        assert!(ok.ordering_violations().is_empty());
        let mut bad = ok.clone();
        bad.0.row_mut(2).assign(&ok.0.row(0));
        assert_eq!(bad.ordering_violations(), vec![2]);
        let clipped = SelectionMatrix::dyadic_init(4, 6, 4.0).unwrap();
        assert!(clipped.ordering_violations().is_empty());
    }

    #[test]
    fn telescoping_and_frame_bound_on_random_graphs() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(10);
        for _ in 0..20 {
            let n = rng.random_range(5..40);
            let g = random_connected(n, 0.1, &mut rng);
            let ops = DiffusionOperators::new(&g).unwrap();
            let theta = SelectionMatrix(Array2::from_shape_fn((4, 10), |_| rng.random_range(-2.0..2.0)));
            for bank in [dyadic_bank(&ops.p, 3).unwrap(), learnable_bank(&ops.p, &theta, 10).unwrap()] {
                assert!(max_abs_diff(&bank.telescoped(), &Array2::eye(n)) < 1e-10);
                for _ in 0..5 {
                    let x = Array1::from_shape_fn(n, |_| rng.random_range(-1.0..1.0));
                    let lhs: f64 = bank
                        .operators
                        .iter()
                        .map(|op| weighted_norm(op.dot(&x).view(), &g.degrees).powi(2))
                        .sum::<f64>()
                        + weighted_norm(bank.lowpass.dot(&x).view(), &g.degrees).powi(2);
                    assert!(lhs <= weighted_norm(x.view(), &g.degrees).powi(2) * (1.0 + 1e-10));
                }
            }
        }
    }

    #[test]
    fn permutation_equivariance() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let g = random_connected(12, 0.2, &mut rng);
        let mut perm: Vec<usize> = (0..12).collect();
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
        let gp = g.permuted(&perm).unwrap();
        let theta = SelectionMatrix::dyadic_init(3, 10, 2.0).unwrap();
        let out = scatter(&learnable_bank(&DiffusionOperators::new(&g).unwrap().p, &theta, 10).unwrap(), &g.signal).unwrap();
        let outp = scatter(&learnable_bank(&DiffusionOperators::new(&gp).unwrap().p, &theta, 10).unwrap(), &gp.signal).unwrap();
        for i in 0..12 {
            for f in 0..out.coeffs.ncols() {
                assert!((out.coeffs[[i, f]] - outp.coeffs[[perm[i], f]]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn csv_header_lists_layout() {
        let bank = dyadic_bank(&path3_p(), 1).unwrap();
        let out = scatter(&bank, &array![[1.0], [0.0], [0.0]]).unwrap();
        let csv = out.to_csv();
        let header = csv.lines().next().unwrap();
        assert_eq!(header, "residue,\"(0,0,0)\",\"(1,0,0)\",\"(1,1,0)\",\"(2,0,1,0)\"");
        assert_eq!(csv.lines().count(), 4);
    }

    fn tape_features(p: &Array2<f64>, theta: &Array2<f64>, x: &Array2<f64>) -> (Tape, Var, Var) {
        let t_max = theta.ncols();
        let powers = Rc::new(matrix_power_cascade(p, t_max).unwrap()[1..].to_vec());
        let mut tape = Tape::new();
        let th = tape.leaf(theta.clone());
        let w = tape.softmax_rows(th);
        let bank = TapeBank::new(&mut tape, w, powers, x.ncols()).unwrap();
        let xv = tape.constant(x.clone());
        let out = scatter_on_tape(&mut tape, &bank, xv).unwrap();
        (tape, th, out)
    }

    #[test]
    fn tape_scatter_matches_direct() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let g = random_connected(9, 0.3, &mut rng);
        let p = DiffusionOperators::new(&g).unwrap().p;
        let theta = Array2::from_shape_fn((4, 7), |_| rng.random_range(-2.0..2.0));
        let x = Array2::from_shape_fn((9, 3), |_| rng.random_range(-1.0..1.0));
        let direct = scatter(&learnable_bank(&p, &SelectionMatrix(theta.clone()), 7).unwrap(), &x).unwrap();
        let (tape, _, out) = tape_features(&p, &theta, &x);
        assert!(max_abs_diff(tape.value(out), &direct.coeffs) < 1e-12);
    }

    #[test]
    fn selection_gradient_matches_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(22);
        let g = random_connected(8, 0.3, &mut rng);
        let p = DiffusionOperators::new(&g).unwrap().p;
        let theta0 = Array2::from_shape_fn((3, 6), |_| rng.random_range(-1.0..1.0));
        let x = Array2::from_shape_fn((8, 1), |_| rng.random_range(-1.0..1.0));
        // f(Θ) = ‖Ψ̃_1 x‖², evaluated directly from the explicit bank
        let f = |th: &Array2<f64>| {
            let bank = learnable_bank(&p, &SelectionMatrix(th.clone()), 6).unwrap();
            bank.operators[1].dot(&x).mapv(|v| v * v).sum()
        };
        let powers = Rc::new(matrix_power_cascade(&p, 6).unwrap()[1..].to_vec());
        let mut tape = Tape::new();
        let th = tape.leaf(theta0.clone());
        let w = tape.softmax_rows(th);
        let bank = TapeBank::new(&mut tape, w, powers, 1).unwrap();
        let xv = tape.constant(x.clone().into_shape_with_order((1, 8)).unwrap());
        let (psi, _) = bank.responses(&mut tape, xv).unwrap();
        let row = tape.select_rows(psi, &[1]).unwrap();
        let sq = tape.hadamard(row, row).unwrap();
        let loss = tape.sum(sq);
        assert!((tape.scalar_value(loss) - f(&theta0)).abs() < 1e-12);
        tape.backward(loss).unwrap();
        let grad = tape.grad(th).unwrap();
        let h = 1e-5;
        let mut num = Array2::zeros(theta0.raw_dim());
        for r in 0..3 {
            for c in 0..6 {
                let mut tp = theta0.clone();
                tp[[r, c]] += h;
                let mut tm = theta0.clone();
                tm[[r, c]] -= h;
                num[[r, c]] = (f(&tp) - f(&tm)) / (2.0 * h);
            }
        }
        let err = (grad - &num).mapv(|v| v * v).sum().sqrt() / num.mapv(|v| v * v).sum().sqrt();
        assert!(err < 1e-4, "{err}");
    }
}
