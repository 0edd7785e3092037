//! Numerical checks of the wavelet and scattering stability bounds on
//! concrete graph pairs.
//!
//! Norms are in the weighted space of the unperturbed graph,
//! `‖x‖_w = ‖D^{-1/2} x‖₂`. For a pair (G, G') with degree matrices D, D':
//!
//! ```text
//! κ = max(‖I − D^{-1/2} D'^{1/2}‖, ‖I − D'^{-1/2} D^{1/2}‖)
//! R = max(‖D^{-1/2} D'^{1/2}‖, ‖D'^{-1/2} D^{1/2}‖)
//! ```

use std::fmt::Write as _;

use ndarray::{Array1, Array2};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::diffusion::{lazy_walk, symmetric_diffusion, weighted_norm, weighted_opnorm, DiffusionOperators};
use crate::error::{Error, Result};
use crate::graph::{build_knn_graph, ProteinGraph};
use crate::linalg::{max_abs_diff, op_norm};
use crate::rng::{Rng, SeedTree};
use crate::scattering::{dyadic_scales, hard_bank, scatter, WaveletBank};
use crate::trajectory::TrajectoryFrame;

/// Multiplicative slack on the right-hand side of stability inequalities.
pub const STABILITY_TOL: f64 = 1e-9;
/// Multiplicative slack for energy (non-expansiveness) inequalities.
pub const ENERGY_TOL: f64 = 1e-10;
/// Absolute slack for round-off when the right-hand side vanishes.
pub const ABS_SLACK: f64 = 1e-13;
const PERTURB_ATTEMPTS: usize = 200;

#[derive(Debug, Clone)]
pub struct PerturbationPair {
    pub g: ProteinGraph,
    pub g2: ProteinGraph,
    pub description: String,
}

fn edge_set_graph(n: usize, edges: &std::collections::BTreeSet<(usize, usize)>, signal: &Array2<f64>) -> Result<ProteinGraph> {
    ProteinGraph::from_edges(n, edges.iter().copied(), signal.clone())
}

/// Toggle `m` distinct vertex pairs, skipping toggles that would disconnect
/// the graph.
pub fn perturb_edges(graph: &ProteinGraph, m: usize, seed: u64) -> Result<PerturbationPair> {
    let n = graph.n;
    if n < 2 {
        return Err(Error::arg("edge flips need at least 2 vertices"));
    }
    if m > n * (n - 1) / 2 {
        return Err(Error::arg(format!("cannot flip {m} distinct pairs on {n} vertices")));
    }
    let mut rng = SeedTree::new(seed).rng("perturb/edges");
    let mut edges: std::collections::BTreeSet<(usize, usize)> = graph.edges.iter().copied().collect();
    let mut touched = std::collections::BTreeSet::new();
    let mut current = graph.clone();
    let mut attempts = 0;
    while touched.len() < m {
        attempts += 1;
        if attempts > PERTURB_ATTEMPTS * m.max(1) {
            return Err(Error::arg(format!("could not flip {m} edges while staying connected")));
        }
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        if i == j {
            continue;
        }
        let e = (i.min(j), i.max(j));
        if touched.contains(&e) {
            continue;
        }
        let had = edges.contains(&e);
        if had {
            edges.remove(&e);
        } else {
            edges.insert(e);
        }
        match edge_set_graph(n, &edges, &graph.signal) {
            Ok(g) => {
                touched.insert(e);
                current = g;
            }
            Err(_) => {
                if had {
                    edges.insert(e);
                } else {
                    edges.remove(&e);
                }
            }
        }
    }
    let description = format!(
        "edge-flip m={m}: {}",
        touched.iter().map(|(a, b)| format!("{a}-{b}")).collect::<Vec<_>>().join(" ")
    );
    Ok(PerturbationPair { g: graph.clone(), g2: current, description })
}

/// Rewire `a–b, c–d` into `a–d, c–b`, keeping every degree and
/// connectivity.
pub fn degree_preserving_swap(graph: &ProteinGraph, seed: u64) -> Result<PerturbationPair> {
    let mut rng = SeedTree::new(seed).rng("perturb/swap");
    let m = graph.edges.len();
    for _ in 0..PERTURB_ATTEMPTS * 10 {
        let (a, b) = graph.edges[rng.random_range(0..m)];
        let (c, d) = graph.edges[rng.random_range(0..m)];
        let (a, b) = if rng.random::<bool>() { (a, b) } else { (b, a) };
        if a == c || a == d || b == c || b == d {
            continue;
        }
        let mut edges: std::collections::BTreeSet<(usize, usize)> = graph.edges.iter().copied().collect();
        let ad = (a.min(d), a.max(d));
        let cb = (c.min(b), c.max(b));
        if edges.contains(&ad) || edges.contains(&cb) {
            continue;
        }
        edges.remove(&(a.min(b), a.max(b)));
        edges.remove(&(c.min(d), c.max(d)));
        edges.insert(ad);
        edges.insert(cb);
        if let Ok(g2) = edge_set_graph(graph.n, &edges, &graph.signal) {
            return Ok(PerturbationPair { g: graph.clone(), g2, description: format!("swap {a}-{b},{c}-{d}") });
        }
    }
    Err(Error::arg("no degree-preserving swap keeps the graph connected"))
}

/// Gaussian jitter of the coordinates followed by a fresh k-NN graph.
pub fn perturb_coords(frame: &TrajectoryFrame, k: usize, sigma: f64, seed: u64) -> Result<PerturbationPair> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::arg("jitter sigma must be finite and non-negative"));
    }
    let g = build_knn_graph(frame, k)?;
    let mut rng = SeedTree::new(seed).rng("perturb/jitter");
    let normal = Normal::new(0.0, sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
    for _ in 0..PERTURB_ATTEMPTS {
        let mut f = frame.clone();
        if sigma > 0.0 {
            for c in f.coords.iter_mut() {
                for v in c.iter_mut() {
                    *v += normal.sample(&mut rng);
                }
            }
        }
        if let Ok(g2) = build_knn_graph(&f, k) {
            return Ok(PerturbationPair { g, g2, description: format!("jitter sigma={sigma} k={k}") });
        }
    }
    Err(Error::Disconnected { k })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KappaR {
    pub kappa: f64,
    pub r: f64,
    /// Same quantities through dense SVD of the diagonal operators.
    pub kappa_svd: f64,
    pub r_svd: f64,
}

/// κ and R, entrywise and through singular values.
pub fn compute_kappa_r(d: &[f64], d2: &[f64]) -> Result<KappaR> {
    if d.len() != d2.len() {
        return Err(Error::shape("kappa", format!("{} vs {} degrees", d.len(), d2.len())));
    }
    let fwd: Vec<f64> = d.iter().zip(d2).map(|(a, b)| (b / a).sqrt()).collect();
    let bwd: Vec<f64> = d.iter().zip(d2).map(|(a, b)| (a / b).sqrt()).collect();
    let max_abs = |v: &[f64], shift: f64| v.iter().map(|x| (shift - x).abs()).fold(0.0, f64::max);
    let kappa = max_abs(&fwd, 1.0).max(max_abs(&bwd, 1.0));
    let r = max_abs(&fwd, 0.0).max(max_abs(&bwd, 0.0));
    let diag = |v: &[f64]| Array2::from_diag(&Array1::from(v.to_vec()));
    let eye = Array2::<f64>::eye(d.len());
    let kappa_svd = op_norm(&(&eye - &diag(&fwd)))?.max(op_norm(&(&eye - &diag(&bwd)))?);
    let r_svd = op_norm(&diag(&fwd))?.max(op_norm(&diag(&bwd))?);
    Ok(KappaR { kappa, r, kappa_svd, r_svd })
}

/// `λ (1+λ) / (1−λ)³`; any positive constant is admissible at λ = 0, and 1
/// is returned there.
pub fn c_series(lambda: f64) -> f64 {
    if lambda == 0.0 {
        1.0
    } else {
        lambda * (1.0 + lambda) / (1.0 - lambda).powi(3)
    }
}

/// One inequality evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

impl Check {
    /// `lhs ≤ rhs·(1 + tol)`, with zero right-hand sides compared absolutely.
    pub fn le(name: impl Into<String>, lhs: f64, rhs: f64, tol: f64) -> Self {
        let pass = lhs <= rhs * (1.0 + tol) + ABS_SLACK;
        Self { name: name.into(), lhs, rhs, pass: pass && lhs.is_finite() && rhs.is_finite() }
    }

    pub fn ratio(&self) -> f64 {
        if self.rhs == 0.0 {
            if self.lhs == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            self.lhs / self.rhs
        }
    }
}

/// Quantities describing one perturbation pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairQuantities {
    pub kappa: f64,
    pub r: f64,
    /// ‖P − P'‖_w.
    pub dp_w: f64,
    /// ‖T − T'‖₂.
    pub dt: f64,
    /// max(λ₂, λ₂').
    pub lambda2_star: f64,
    /// ‖T̄ − T̄'‖₂ with T̄ = T − vvᵀ.
    pub dt_bar: f64,
}

struct PairOps {
    p: Array2<f64>,
    p2: Array2<f64>,
    ops: DiffusionOperators,
    ops2: DiffusionOperators,
    degrees: Vec<f64>,
}

impl PairOps {
    fn new(pair: &PerturbationPair) -> Result<Self> {
        if pair.g.n != pair.g2.n {
            return Err(Error::shape("pair", format!("{} vs {} vertices", pair.g.n, pair.g2.n)));
        }
        Ok(Self {
            p: lazy_walk(&pair.g.adjacency, &pair.g.degrees)?,
            p2: lazy_walk(&pair.g2.adjacency, &pair.g2.degrees)?,
            ops: DiffusionOperators::new(&pair.g)?,
            ops2: DiffusionOperators::new(&pair.g2)?,
            degrees: pair.g.degrees.clone(),
        })
    }
}

pub fn pair_quantities(pair: &PerturbationPair) -> Result<PairQuantities> {
    let po = PairOps::new(pair)?;
    quantities(pair, &po)
}

fn quantities(pair: &PerturbationPair, po: &PairOps) -> Result<PairQuantities> {
    let kr = compute_kappa_r(&pair.g.degrees, &pair.g2.degrees)?;
    let dp_w = weighted_opnorm(&(&po.p - &po.p2), &po.degrees)?;
    let dt = op_norm(&(&po.ops.t - &po.ops2.t))?;
    let dt_bar = op_norm(&(po.ops.t_bar() - po.ops2.t_bar()))?;
    Ok(PairQuantities {
        kappa: kr.kappa,
        r: kr.r,
        dp_w,
        dt,
        lambda2_star: po.ops.lambda2().max(po.ops2.lambda2()),
        dt_bar,
    })
}

fn wavelets_only(bank: &WaveletBank) -> Array2<f64> {
    let views: Vec<_> = bank.operators.iter().map(|o| o.view()).collect();
    ndarray::concatenate(ndarray::Axis(0), &views).expect("equal widths")
}

/// ‖W̃_J − W̃'_J‖_w over the stacked wavelets (low-pass excluded).
pub fn wavelet_difference_norm(bank: &WaveletBank, bank2: &WaveletBank, degrees: &[f64]) -> Result<f64> {
    weighted_opnorm(&(wavelets_only(bank) - wavelets_only(bank2)), degrees)
}

fn random_signal(n: usize, rng: &mut Rng) -> Array1<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    Array1::from_shape_fn(n, |_| normal.sample(rng))
}

/// Σ_j ‖Ψ̃_j x‖²_w + ‖low-pass x‖²_w ≤ ‖x‖²_w for random x. With
/// `degrees = None` the plain ℓ² norm is used.
pub fn verify_frame_nonexpansive(bank: &WaveletBank, degrees: Option<&[f64]>, trials: usize, rng: &mut Rng) -> Vec<Check> {
    let n = bank.n();
    let ones = vec![1.0; n];
    let d = degrees.unwrap_or(&ones);
    (0..trials)
        .map(|_| {
            let x = random_signal(n, rng);
            let mut lhs: f64 = bank.operators.iter().map(|op| weighted_norm(op.dot(&x).view(), d).powi(2)).sum();
            lhs += weighted_norm(bank.lowpass.dot(&x).view(), d).powi(2);
            Check::le("frame_nonexpansive", lhs, weighted_norm(x.view(), d).powi(2), ENERGY_TOL)
        })
        .collect()
}

/// All `(J+1)^ℓ` order-ℓ coefficients `|Ψ̃_{j_ℓ} … |Ψ̃_{j_1} x||`, in
/// lexicographic tuple order.
pub fn all_tuples(bank: &WaveletBank, x: &Array1<f64>, ell: usize) -> Vec<Array1<f64>> {
    let mut level = vec![x.clone()];
    for _ in 0..ell {
        level = level
            .iter()
            .flat_map(|u| bank.operators.iter().map(move |op| op.dot(u).mapv(f64::abs)))
            .collect();
    }
    level
}

/// Σ over all ℓ-tuples of ‖Ũ[tuple] x‖²_w ≤ ‖x‖²_w.
pub fn verify_nonexpansive_iterated(bank: &WaveletBank, degrees: &[f64], ell: usize, trials: usize, rng: &mut Rng) -> Vec<Check> {
    (0..trials)
        .map(|_| {
            let x = random_signal(bank.n(), rng);
            let lhs: f64 = all_tuples(bank, &x, ell).iter().map(|u| weighted_norm(u.view(), degrees).powi(2)).sum();
            Check::le(format!("iterated_nonexpansive_l{ell}"), lhs, weighted_norm(x.view(), degrees).powi(2), ENERGY_TOL)
        })
        .collect()
}

/// Wavelet stability for one pair and scale list.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletStability {
    pub quantities: PairQuantities,
    /// ‖W̃ − W̃'‖²_w.
    pub lhs: f64,
    /// κ(1+R³) + R·dP_w + κ²(κ+1)².
    pub bracket: f64,
    /// lhs / bracket, `None` when the bracket vanishes.
    pub c_hat: Option<f64>,
    /// Set when the bracket is 0 but the left side is not.
    pub anomaly: bool,
    /// Explicit T-operator bound on Σ_j ‖T̄^{t_j} − T̄'^{t_j}‖².
    pub explicit: Check,
    /// ‖T − T'‖ ≤ κ(1+R³) + R·dP_w.
    pub t_bound: Check,
    /// ‖T − T'‖ < 2.
    pub t_below_two: Check,
}

fn power(m: &Array2<f64>, t: usize) -> Array2<f64> {
    let mut out = Array2::eye(m.nrows());
    for _ in 0..t {
        out = out.dot(m);
    }
    out
}

pub fn verify_wavelet_stability(pair: &PerturbationPair, scales: &[usize]) -> Result<WaveletStability> {
    let po = PairOps::new(pair)?;
    let q = quantities(pair, &po)?;
    let bank = hard_bank(&po.p, scales)?;
    let bank2 = hard_bank(&po.p2, scales)?;
    let lhs = wavelet_difference_norm(&bank, &bank2, &po.degrees)?.powi(2);
    let bracket = q.kappa * (1.0 + q.r.powi(3)) + q.r * q.dp_w + q.kappa.powi(2) * (q.kappa + 1.0).powi(2);
    let zero_tol = 1e-20;
    let (c_hat, anomaly) = if bracket > 0.0 { (Some(lhs / bracket), false) } else { (None, lhs > zero_tol) };

    let (tb, tb2) = (po.ops.t_bar(), po.ops2.t_bar());
    let mut explicit_lhs = 0.0;
    let mut factor = 0.0;
    for &t in scales {
        explicit_lhs += op_norm(&(power(&tb, t) - power(&tb2, t)))?.powi(2);
        factor += (t as f64).powi(2) * q.lambda2_star.powi(2 * t as i32 - 2);
    }
    let explicit = Check::le("explicit_tbar_bound", explicit_lhs, factor * q.dt_bar.powi(2), STABILITY_TOL);
    let t_rhs = q.kappa * (1.0 + q.r.powi(3)) + q.r * q.dp_w;
    let t_bound = Check::le("t_difference_bound", q.dt, t_rhs, STABILITY_TOL);
    let t_below_two = Check { name: "t_difference_below_2".into(), lhs: q.dt, rhs: 2.0, pass: q.dt < 2.0 };
    Ok(WaveletStability { quantities: q, lhs, bracket, c_hat, anomaly, explicit, t_bound, t_below_two })
}

/// Σ over all ℓ-tuples ‖Ũ[p]x − Ũ'[p]x‖²_w ≤ ‖W̃−W̃'‖²_w (Σ_{k<ℓ} R^{2k})² ‖x‖²_w.
pub fn verify_scattering_stability(pair: &PerturbationPair, scales: &[usize], ell: usize, trials: usize, rng: &mut Rng) -> Result<Vec<Check>> {
    if !(1..=3).contains(&ell) {
        return Err(Error::arg("ell must be 1, 2 or 3"));
    }
    let po = PairOps::new(pair)?;
    let kr = compute_kappa_r(&pair.g.degrees, &pair.g2.degrees)?;
    let bank = hard_bank(&po.p, scales)?;
    let bank2 = hard_bank(&po.p2, scales)?;
    let dw2 = wavelet_difference_norm(&bank, &bank2, &po.degrees)?.powi(2);
    let series: f64 = (0..ell).map(|k| kr.r.powi(2 * k as i32)).sum();
    Ok((0..trials)
        .map(|_| {
            let x = random_signal(pair.g.n, rng);
            let a = all_tuples(&bank, &x, ell);
            let b = all_tuples(&bank2, &x, ell);
            let lhs: f64 = a.iter().zip(&b).map(|(u, v)| weighted_norm((u - v).view(), &po.degrees).powi(2)).sum();
            let rhs = dw2 * series.powi(2) * weighted_norm(x.view(), &po.degrees).powi(2);
            Check::le(format!("scattering_stability_l{ell}"), lhs, rhs, STABILITY_TOL)
        })
        .collect())
}

/// Π·Ũx against Ũ'(Πx) on the permuted graph, for random Π and x.
pub fn verify_perm_equivariance(graph: &ProteinGraph, j: usize, trials: usize, rng: &mut Rng) -> Result<Vec<Check>> {
    let n = graph.n;
    let bank = hard_bank(&lazy_walk(&graph.adjacency, &graph.degrees)?, &dyadic_scales(j))?;
    let mut out = Vec::with_capacity(trials);
    for _ in 0..trials {
        let mut perm: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), rng);
        let x = Array2::from_shape_fn((n, 2), |_| rng.random::<f64>() - 0.5);
        let gp = graph.permuted(&perm)?;
        let bank_p = hard_bank(&lazy_walk(&gp.adjacency, &gp.degrees)?, &dyadic_scales(j))?;
        let mut xp = Array2::zeros((n, 2));
        for i in 0..n {
            xp.row_mut(perm[i]).assign(&x.row(i));
        }
        let u = scatter(&bank, &x)?.coeffs;
        let up = scatter(&bank_p, &xp)?.coeffs;
        let mut moved = Array2::zeros(u.raw_dim());
        for i in 0..n {
            moved.row_mut(perm[i]).assign(&u.row(i));
        }
        out.push(Check::le("perm_equivariance", max_abs_diff(&moved, &up), 1e-10, 0.0));
    }
    Ok(out)
}

/// T-wavelet bank in plain ℓ² (the symmetric-operator variant).
pub fn t_bank(graph: &ProteinGraph, scales: &[usize]) -> Result<WaveletBank> {
    hard_bank(&symmetric_diffusion(&graph.adjacency, &graph.degrees)?, scales)
}

/// Per-pair quantities kept in a report.
#[derive(Debug, Clone, PartialEq)]
pub struct PairRecord {
    pub description: String,
    pub quantities: PairQuantities,
    /// ‖W̃−W̃'‖²_w at the campaign's J.
    pub lhs: f64,
    pub bracket: f64,
    pub c_hat: Option<f64>,
}

/// Collected records with a summary and CSV export.
#[derive(Debug, Clone, Default)]
pub struct StabilityReport {
    pub records: Vec<Check>,
    pub pairs: Vec<PairRecord>,
    /// Empirical constants Ĉ keyed by J.
    pub c_hat_by_j: Vec<(usize, f64)>,
    pub anomalies: Vec<String>,
}

impl StabilityReport {
    pub fn extend(&mut self, checks: impl IntoIterator<Item = Check>) {
        self.records.extend(checks);
    }

    pub fn failures(&self) -> usize {
        self.records.iter().filter(|c| !c.pass).count()
    }

    /// max/min of Ĉ over J; `None` with fewer than two values.
    pub fn c_hat_spread(&self) -> Option<f64> {
        if self.c_hat_by_j.len() < 2 {
            return None;
        }
        let max = self.c_hat_by_j.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
        let min = self.c_hat_by_j.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
        Some(max / min)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("name,lhs,rhs,ratio,pass\n");
        for c in &self.records {
            writeln!(s, "{},{},{},{},{}", c.name, c.lhs, c.rhs, c.ratio(), c.pass).unwrap();
        }
        s
    }

    pub fn pairs_csv(&self) -> String {
        let mut s = String::from("pair,description,kappa,r,dp_w,dt,lambda2_star,dt_bar,lhs,bracket,c_hat,c_series\n");
        for (i, p) in self.pairs.iter().enumerate() {
            let q = &p.quantities;
            let c = p.c_hat.map_or("NA".to_string(), |c| c.to_string());
            writeln!(
                s,
                "{i},\"{}\",{},{},{},{},{},{},{},{},{c},{}",
                p.description, q.kappa, q.r, q.dp_w, q.dt, q.lambda2_star, q.dt_bar, p.lhs, p.bracket, c_series(q.lambda2_star)
            )
            .unwrap();
        }
        s
    }

    /// One line per check name: count, failures and worst ratio.
    pub fn summary(&self) -> String {
        let mut names: Vec<&str> = self.records.iter().map(|c| c.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        let mut s = String::new();
        for name in names {
            let group: Vec<&Check> = self.records.iter().filter(|c| c.name == name).collect();
            let fails = group.iter().filter(|c| !c.pass).count();
            let worst = group.iter().map(|c| c.ratio()).fold(0.0, f64::max);
            writeln!(s, "{name}: {} checks, {fails} failed, worst lhs/rhs {worst:.6e}", group.len()).unwrap();
        }
        for (j, c) in &self.c_hat_by_j {
            writeln!(s, "c_hat J={j}: {c:.6e}").unwrap();
        }
        if let Some(spread) = self.c_hat_spread() {
            writeln!(s, "c_hat max/min over J: {spread:.4}").unwrap();
        }
        for a in &self.anomalies {
            writeln!(s, "anomaly: {a}").unwrap();
        }
        s
    }
}

/// Which families of checks a campaign runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckSet {
    pub frame: bool,
    pub iterated: bool,
    pub scattering: bool,
    pub wavelet: bool,
    pub perm: bool,
}

impl CheckSet {
    pub const ALL: CheckSet = CheckSet { frame: true, iterated: true, scattering: true, wavelet: true, perm: true };
}

/// Settings for a full verification campaign.
#[derive(Debug, Clone, PartialEq)]
pub struct CampaignConfig {
    pub checks: CheckSet,
    pub n_min: usize,
    pub n_max: usize,
    pub edge_prob: f64,
    pub pairs: usize,
    pub flips: usize,
    pub trials: usize,
    pub j: usize,
    pub j_values: Vec<usize>,
    pub seed: u64,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self { checks: CheckSet::ALL, n_min: 20, n_max: 30, edge_prob: 0.15, pairs: 50, flips: 2, trials: 1, j: 3, j_values: vec![2, 3, 4, 5], seed: 0 }
    }
}

/// Random graph pairs for a campaign, deterministic in the seed.
pub fn campaign_pairs(cfg: &CampaignConfig) -> Result<Vec<PerturbationPair>> {
    let tree = SeedTree::new(cfg.seed);
    let mut rng = tree.rng("campaign/graphs");
    (0..cfg.pairs)
        .map(|i| {
            let n = rng.random_range(cfg.n_min..=cfg.n_max);
            let g = crate::graph::random_connected(n, cfg.edge_prob, &mut rng);
            perturb_edges(&g, cfg.flips, tree.child(&format!("campaign/flip/{i}")).seed())
        })
        .collect()
}

/// Every check on the campaign's pairs: frame and iterated bounds, the
/// scattering inequality for ℓ ∈ {1, 2}, the explicit T-operator bounds,
/// and Ĉ over `j_values`.
pub fn run_campaign(cfg: &CampaignConfig) -> Result<StabilityReport> {
    let pairs = campaign_pairs(cfg)?;
    let mut rng = SeedTree::new(cfg.seed).rng("campaign/signals");
    let mut report = StabilityReport::default();
    let scales = dyadic_scales(cfg.j);
    let on = cfg.checks;
    for pair in &pairs {
        let p = lazy_walk(&pair.g.adjacency, &pair.g.degrees)?;
        let bank = hard_bank(&p, &scales)?;
        if on.frame {
            report.extend(verify_frame_nonexpansive(&bank, Some(&pair.g.degrees), cfg.trials, &mut rng));
            report.extend(verify_frame_nonexpansive(&t_bank(&pair.g, &scales)?, None, cfg.trials, &mut rng));
        }
        if on.iterated {
            for ell in 1..=3 {
                report.extend(verify_nonexpansive_iterated(&bank, &pair.g.degrees, ell, cfg.trials, &mut rng));
            }
        }
        if on.scattering {
            for ell in 1..=2 {
                report.extend(verify_scattering_stability(pair, &scales, ell, cfg.trials, &mut rng)?);
            }
        }
        if on.wavelet {
            let ws = verify_wavelet_stability(pair, &scales)?;
            if ws.anomaly {
                report.anomalies.push(format!("{}: zero bracket with lhs {}", pair.description, ws.lhs));
            }
            report.pairs.push(PairRecord {
                description: pair.description.clone(),
                quantities: ws.quantities.clone(),
                lhs: ws.lhs,
                bracket: ws.bracket,
                c_hat: ws.c_hat,
            });
            report.records.extend([ws.explicit, ws.t_bound, ws.t_below_two]);
        }
        if on.perm {
            report.extend(verify_perm_equivariance(&pair.g, cfg.j, cfg.trials, &mut rng)?);
        }
    }
    if on.wavelet {
        report.c_hat_by_j = c_hat_by_j(&pairs, &cfg.j_values)?;
    }
    Ok(report)
}

/// Empirical constant for each J: the largest ‖W̃−W̃'‖²_w / bracket over
/// the pairs, with dyadic scales.
pub fn c_hat_by_j(pairs: &[PerturbationPair], j_values: &[usize]) -> Result<Vec<(usize, f64)>> {
    j_values
        .iter()
        .map(|&j| {
            let mut best = 0.0f64;
            for pair in pairs {
                if let Some(c) = verify_wavelet_stability(pair, &dyadic_scales(j))?.c_hat {
                    best = best.max(c);
                }
            }
            Ok((j, best))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{one_hot, random_connected};
    use crate::trajectory::{hinge_coords, AminoAcid};
    use ndarray::array;

    fn path(n: usize) -> ProteinGraph {
        let seq: Vec<AminoAcid> = (0..n).map(|i| AminoAcid::from_index(i % 20).unwrap()).collect();
        ProteinGraph::from_edges(n, (0..n - 1).map(|i| (i, i + 1)), one_hot(&seq)).unwrap()
    }

    #[test]
    fn kappa_r_examples() {
        let k = compute_kappa_r(&[3.0, 2.0, 5.0], &[3.0, 2.0, 5.0]).unwrap();
        assert_eq!((k.kappa, k.r), (0.0, 1.0));
        let k = compute_kappa_r(&[1.0, 4.0], &[4.0, 1.0]).unwrap();
        assert!((k.kappa - 1.0).abs() < 1e-15);
        assert!((k.r - 2.0).abs() < 1e-15);
        assert!((k.kappa - k.kappa_svd).abs() < 1e-12 && (k.r - k.r_svd).abs() < 1e-12);
    }

    #[test]
    fn identity_perturbation_is_zero() {
        let g = path(8);
        let pair = perturb_edges(&g, 0, 1).unwrap();
        let q = pair_quantities(&pair).unwrap();
        assert_eq!((q.kappa, q.dp_w), (0.0, 0.0));
        let ws = verify_wavelet_stability(&pair, &dyadic_scales(3)).unwrap();
        assert_eq!(ws.lhs, 0.0);
        assert!(!ws.anomaly);
        let mut rng = SeedTree::new(0).rng("x");
        let checks = verify_scattering_stability(&pair, &dyadic_scales(3), 2, 3, &mut rng).unwrap();
        assert!(checks.iter().all(|c| c.lhs == 0.0 && c.pass));
    }

    #[test]
    fn path_with_added_edge_matches_direct_formula() {
        let g = path(10);
        let mut edges = g.edges.clone();
        edges.push((0, 5));
        let g2 = ProteinGraph::from_edges(10, edges, g.signal.clone()).unwrap();
        let pair = PerturbationPair { g: g.clone(), g2: g2.clone(), description: "0-5".into() };
        let q = pair_quantities(&pair).unwrap();
        // degrees change at vertex 0 (1 → 2) and 5 (2 → 3)
        let kappa = [1.0 - 2f64.sqrt(), 1.0 - (1.0 / 2f64).sqrt(), 1.0 - (3.0 / 2f64).sqrt(), 1.0 - (2.0 / 3f64).sqrt()]
            .iter()
            .fold(0.0f64, |a, v| a.max(v.abs()));
        assert!((q.kappa - kappa).abs() < 1e-12);
        assert!((q.r - 2f64.sqrt()).abs() < 1e-12);
        let k = compute_kappa_r(&g.degrees, &g2.degrees).unwrap();
        assert!((k.kappa_svd - kappa).abs() < 1e-12);
    }

    #[test]
    fn degree_preserving_swap_has_unit_r() {
        let mut rng = SeedTree::new(5).rng("g");
        let g = random_connected(20, 0.25, &mut rng);
        let pair = degree_preserving_swap(&g, 3).unwrap();
        assert_ne!(pair.g.edges, pair.g2.edges);
        let q = pair_quantities(&pair).unwrap();
        assert_eq!((q.kappa, q.r), (0.0, 1.0));
        let ws = verify_wavelet_stability(&pair, &dyadic_scales(3)).unwrap();
        assert!((ws.bracket - q.dp_w).abs() < 1e-15);
        assert!(ws.t_bound.pass && ws.explicit.pass);
    }

    #[test]
    fn jitter_zero_keeps_graph() {
        let seq: Vec<AminoAcid> = (0..10).map(|i| AminoAcid::from_index(i).unwrap()).collect();
        let f = TrajectoryFrame::new(0, hinge_coords(5, 0.9), seq).unwrap();
        let pair = perturb_coords(&f, 5, 0.0, 1).unwrap();
        assert_eq!(pair.g.edges, pair.g2.edges);
        let pair = perturb_coords(&f, 5, 0.8, 1).unwrap();
        assert_eq!(pair.g2.n, 10);
    }

    #[test]
    fn zero_signal_and_ell_one() {
        let g = path(6);
        let bank = hard_bank(&lazy_walk(&g.adjacency, &g.degrees).unwrap(), &dyadic_scales(2)).unwrap();
        let zero = Array1::zeros(6);
        assert!(all_tuples(&bank, &zero, 2).iter().all(|u| u.iter().all(|&v| v == 0.0)));
        // ℓ = 1 energy equals the frame energy without the low-pass term
        let x = array![1.0, -2.0, 0.5, 0.0, 3.0, 1.0];
        let one: f64 = all_tuples(&bank, &x, 1).iter().map(|u| weighted_norm(u.view(), &g.degrees).powi(2)).sum();
        let frame: f64 = bank.operators.iter().map(|op| weighted_norm(op.dot(&x).view(), &g.degrees).powi(2)).sum();
        assert!((one - frame).abs() < 1e-12);
    }

    #[test]
    fn small_campaign_passes() {
        let cfg = CampaignConfig { n_min: 8, n_max: 12, pairs: 5, trials: 3, edge_prob: 0.3, j_values: vec![2, 3], ..Default::default() };
        let report = run_campaign(&cfg).unwrap();
        assert_eq!(report.failures(), 0, "{}", report.summary());
        assert!(report.to_csv().starts_with("name,lhs,rhs,ratio,pass\n"));
        assert_eq!(report.c_hat_by_j.len(), 2);
        assert_eq!(report.pairs.len(), 5);
        assert_eq!(report.pairs_csv().lines().count(), 6);
    }

    #[test]
    fn cycle_shift_is_an_automorphism() {
        let n = 7;
        let seq: Vec<AminoAcid> = (0..n).map(|i| AminoAcid::from_index(i).unwrap()).collect();
        let g = ProteinGraph::from_edges(n, (0..n).map(|i| (i, (i + 1) % n)), one_hot(&seq)).unwrap();
        let shift: Vec<usize> = (0..n).map(|i| (i + 1) % n).collect();
        assert_eq!(g.permuted(&shift).unwrap().edges, g.edges);
    }

    #[test]
    fn series_constant() {
        assert_eq!(c_series(0.0), 1.0);
        assert!((c_series(0.5) - 0.5 * 1.5 / 0.125).abs() < 1e-12);
    }
}
