//! Metrics on withheld windows, latent-space analyses and generalization
//! runs.

use std::fmt::Write as _;

use nalgebra::{Matrix3, Vector3};
use ndarray::Array2;
use rand::Rng as _;

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::model::targets::{structure_targets, wrap_angle};
use crate::model::{DecodedStructure, FrameData, ModelConfig, ModelParams};
use crate::rng::SeedTree;
use crate::stats::{mean, pearson, spearman, std};
use crate::training::{fit, Fitted, SplitPlan, TrainConfig};
use crate::trajectory::{Trajectory, TrajectoryFrame};

/// Latent variance below this counts as collapsed.
pub const COLLAPSE_VARIANCE: f64 = 1e-12;
pub const DEFAULT_LATENT_K: usize = 5;

/// What a model says about one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub z: Vec<f64>,
    /// Predicted frame time, original units.
    pub t: f64,
    pub pairdist: Array2<f64>,
    pub dihedral_diff: Array2<f64>,
    pub coords: Option<Array2<f64>>,
}

pub trait Predictor {
    fn predict(&self, frame: &TrajectoryFrame) -> Result<Prediction>;
}

impl ModelParams {
    pub fn predict_frame(&self, data: &FrameData) -> Result<Prediction> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, false);
        let out = self.forward(&mut tape, &b, data)?;
        let z = tape.value(out.z).clone();
        let t = self.norm.denormalize_time(tape.scalar_value(out.t_hat));
        let DecodedStructure { pairdist, dihedral_diff, coords } = self.decode_latent(&z)?;
        Ok(Prediction { z: z.into_iter().collect(), t, pairdist, dihedral_diff, coords })
    }

    /// Scattering features of a frame, flattened row-major.
    pub fn scattering_features(&self, data: &FrameData) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, false);
        let out = self.forward(&mut tape, &b, data)?;
        Ok(tape.value(out.features).iter().copied().collect())
    }
}

impl Predictor for ModelParams {
    fn predict(&self, frame: &TrajectoryFrame) -> Result<Prediction> {
        self.predict_frame(&self.frame_data(frame)?)
    }
}

/// Returns the ground truth; the latent is the flattened coordinates.
#[derive(Debug, Clone, Copy, Default)]
pub struct OraclePredictor;

impl Predictor for OraclePredictor {
    fn predict(&self, frame: &TrajectoryFrame) -> Result<Prediction> {
        let st = structure_targets(frame)?;
        let coords = Array2::from_shape_fn((frame.n(), 3), |(i, d)| frame.coords[i][d]);
        Ok(Prediction {
            z: coords.iter().copied().collect(),
            t: frame.t as f64,
            pairdist: st.pairdist,
            dihedral_diff: st.dihedral_diff,
            coords: Some(coords),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    fn of(x: &[f64]) -> Self {
        Self { mean: mean(x), std: std(x) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowMetrics {
    pub start: usize,
    pub len: usize,
    pub mae_pairdist: f64,
    pub mae_dihedral: f64,
    pub time_mse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub mae_pairdist: MeanStd,
    pub mae_dihedral: MeanStd,
    pub scc: f64,
    pub pcc: f64,
    pub rmsd: Option<f64>,
    pub dirichlet: f64,
    /// On times scaled by the trajectory's frame span.
    pub time_mse: f64,
    pub time_spearman: f64,
    pub windows: Vec<WindowMetrics>,
}

impl MetricsReport {
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let rmsd = self.rmsd.map_or("NA".to_string(), |v| v.to_string());
        for (k, v) in [
            ("mae_pairdist_mean", self.mae_pairdist.mean.to_string()),
            ("mae_pairdist_std", self.mae_pairdist.std.to_string()),
            ("mae_dihedral_mean", self.mae_dihedral.mean.to_string()),
            ("mae_dihedral_std", self.mae_dihedral.std.to_string()),
            ("scc", self.scc.to_string()),
            ("pcc", self.pcc.to_string()),
            ("rmsd", rmsd),
            ("dirichlet", self.dirichlet.to_string()),
            ("time_mse", self.time_mse.to_string()),
            ("time_spearman", self.time_spearman.to_string()),
            ("windows", self.windows.len().to_string()),
        ] {
            writeln!(s, "{k}={v}").unwrap();
        }
        s
    }

    pub fn windows_csv(&self) -> String {
        let mut s = String::from("start,len,mae_pairdist,mae_dihedral,time_mse\n");
        for w in &self.windows {
            writeln!(s, "{},{},{},{},{}", w.start, w.len, w.mae_pairdist, w.mae_dihedral, w.time_mse).unwrap();
        }
        s
    }
}

fn upper_abs_errors(a: &Array2<f64>, b: &Array2<f64>, wrap: bool) -> Vec<f64> {
    let n = a.nrows();
    let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let d = a[[i, j]] - b[[i, j]];
            out.push(if wrap { wrap_angle(d).abs() } else { d.abs() });
        }
    }
    out
}

/// RMSD after optimal superposition (centering plus Kabsch rotation).
pub fn kabsch_rmsd(p: &Array2<f64>, q: &Array2<f64>) -> Result<f64> {
    if p.dim() != q.dim() || p.ncols() != 3 || p.nrows() == 0 {
        return Err(Error::shape("rmsd", format!("{:?} vs {:?}", p.dim(), q.dim())));
    }
    let n = p.nrows();
    let centre = |m: &Array2<f64>| -> Vec<Vector3<f64>> {
        let c = m.mean_axis(ndarray::Axis(0)).expect("non-empty");
        (0..n).map(|i| Vector3::new(m[[i, 0]] - c[0], m[[i, 1]] - c[1], m[[i, 2]] - c[2])).collect()
    };
    let (a, b) = (centre(p), centre(q));
    let h: Matrix3<f64> = a.iter().zip(&b).map(|(x, y)| x * y.transpose()).sum();
    let svd = h.svd(true, true);
    let (u, vt) = (svd.u.expect("u"), svd.v_t.expect("v_t"));
    let d = (vt.transpose() * u.transpose()).determinant().signum();
    let r = vt.transpose() * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    let ss: f64 = a.iter().zip(&b).map(|(x, y)| (r * x - y).norm_squared()).sum();
    Ok((ss / n as f64).sqrt())
}

/// Symmetrized k-NN edges over arbitrary-dimensional points (ties go to
/// the lower index).
pub fn knn_edges_nd(points: &[Vec<f64>], k: usize) -> Vec<(usize, usize)> {
    let n = points.len();
    let d2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    let mut edges = std::collections::BTreeSet::new();
    for i in 0..n {
        let mut others: Vec<(f64, usize)> = (0..n).filter(|&j| j != i).map(|j| (d2(&points[i], &points[j]), j)).collect();
        others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, j) in others.iter().take(k) {
            edges.insert((i.min(j), i.max(j)));
        }
    }
    edges.into_iter().collect()
}

/// `xᵀ L x / xᵀ x` with `L = D − A` of the given edge list.
pub fn dirichlet_energy_edges(edges: &[(usize, usize)], x: &[f64]) -> f64 {
    let num: f64 = edges.iter().map(|&(i, j)| (x[i] - x[j]).powi(2)).sum();
    let den: f64 = x.iter().map(|v| v * v).sum();
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Dirichlet energy of `signal` on the k-NN graph of `points`.
pub fn dirichlet_energy(points: &[Vec<f64>], signal: &[f64], k: usize) -> Result<f64> {
    if points.len() != signal.len() || points.len() < 2 {
        return Err(Error::arg("dirichlet energy needs matching points and signal, at least 2"));
    }
    let dims = points[0].len();
    let total_var: f64 = (0..dims)
        .map(|d| crate::stats::variance(&points.iter().map(|p| p[d]).collect::<Vec<_>>()))
        .sum::<f64>()
        / dims.max(1) as f64;
    if !(total_var >= COLLAPSE_VARIANCE) {
        return Err(Error::LatentsCollapsed(total_var));
    }
    let k = k.min(points.len() - 1);
    Ok(dirichlet_energy_edges(&knn_edges_nd(points, k), signal))
}

/// Metrics on the split's withheld windows. The Dirichlet energy uses the
/// latents of every frame and the raw frame times.
pub fn evaluate(pred: &dyn Predictor, traj: &Trajectory, split: &SplitPlan, latent_k: usize) -> Result<MetricsReport> {
    if split.windows.is_empty() {
        return Err(Error::arg("split has no withheld windows"));
    }
    let preds = traj.frames.iter().map(|f| pred.predict(f)).collect::<Result<Vec<_>>>()?;
    let targets = traj.frames.iter().map(structure_targets).collect::<Result<Vec<_>>>()?;
    let span = traj.frames.last().unwrap().t.saturating_sub(traj.frames[0].t).max(1) as f64;

    let mut windows = Vec::with_capacity(split.windows.len());
    let (mut gt_all, mut pr_all) = (Vec::new(), Vec::new());
    let (mut t_true, mut t_pred) = (Vec::new(), Vec::new());
    let mut rmsds = Vec::new();
    let mut tm_all = Vec::new();
    for &(start, len) in &split.windows {
        let (mut pd, mut dh, mut tm) = (Vec::new(), Vec::new(), Vec::new());
        for i in start..start + len {
            let (p, g) = (&preds[i], &targets[i]);
            pd.extend(upper_abs_errors(&p.pairdist, &g.pairdist, false));
            dh.extend(upper_abs_errors(&p.dihedral_diff, &g.dihedral_diff, true));
            let tt = traj.frames[i].t as f64;
            tm.push(((p.t - tt) / span).powi(2));
            t_true.push(tt);
            t_pred.push(p.t);
            gt_all.extend(crate::model::targets::upper_triangle(&g.pairdist));
            pr_all.extend(crate::model::targets::upper_triangle(&p.pairdist));
            if let Some(c) = &p.coords {
                let truth = Array2::from_shape_fn((traj.n_residues(), 3), |(r, d)| traj.frames[i].coords[r][d]);
                rmsds.push(kabsch_rmsd(c, &truth)?);
            }
        }
        windows.push(WindowMetrics {
            start,
            len,
            mae_pairdist: mean(&pd),
            mae_dihedral: if dh.is_empty() { 0.0 } else { mean(&dh) },
            time_mse: mean(&tm),
        });
        tm_all.extend(tm);
    }
    let latents: Vec<Vec<f64>> = preds.iter().map(|p| p.z.clone()).collect();
    let times: Vec<f64> = traj.frames.iter().map(|f| f.t as f64).collect();
    let dirichlet = dirichlet_energy(&latents, &times, latent_k)?;
    let pd: Vec<f64> = windows.iter().map(|w| w.mae_pairdist).collect();
    let dh: Vec<f64> = windows.iter().map(|w| w.mae_dihedral).collect();
    Ok(MetricsReport {
        mae_pairdist: MeanStd::of(&pd),
        mae_dihedral: MeanStd::of(&dh),
        scc: spearman(&gt_all, &pr_all),
        pcc: pearson(&gt_all, &pr_all),
        rmsd: (!rmsds.is_empty()).then(|| mean(&rmsds)),
        dirichlet,
        time_mse: mean(&tm_all),
        time_spearman: spearman(&t_true, &t_pred),
        windows,
    })
}

/// Per-entry standard deviation of pair distances across frames, averaged
/// over the upper triangle.
pub fn pairdist_spread(traj: &Trajectory) -> f64 {
    let n = traj.n_residues();
    let mut acc = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let d: Vec<f64> = traj.frames.iter().map(|f| f.distance(i, j)).collect();
            acc.push(std(&d));
        }
    }
    mean(&acc)
}

/// `steps` decodes along the segment from `z_a` to `z_b`.
pub fn interpolate_latents(params: &ModelParams, z_a: &[f64], z_b: &[f64], steps: usize) -> Result<Vec<DecodedStructure>> {
    if steps < 2 {
        return Err(Error::arg("interpolation needs steps >= 2"));
    }
    if z_a.len() != z_b.len() {
        return Err(Error::shape("interpolate", format!("{} vs {}", z_a.len(), z_b.len())));
    }
    (0..steps)
        .map(|k| {
            let s = k as f64 / (steps - 1) as f64;
            let z: Vec<f64> = z_a.iter().zip(z_b).map(|(a, b)| (1.0 - s) * a + s * b).collect();
            params.decode_latent(&Array2::from_shape_vec((1, z.len()), z).expect("row"))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub inertia: f64,
}

const KMEANS_ITERS: usize = 300;
const KMEANS_RETRIES: usize = 5;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn nearest_centroid(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    centroids
        .iter()
        .enumerate()
        .map(|(c, m)| (c, sq_dist(p, m)))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

fn kmeans_once(points: &[Vec<f64>], k: usize, rng: &mut crate::rng::Rng) -> Option<Clustering> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    while centroids.len() < k {
        let d: Vec<f64> = points.iter().map(|p| nearest_centroid(p, &centroids).1).collect();
        let total: f64 = d.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            d.iter().position(|&w| {
                r -= w;
                r <= 0.0
            })
            .unwrap_or(points.len() - 1)
        } else {
            rng.random_range(0..points.len())
        };
        centroids.push(points[pick].clone());
    }
    let dims = points[0].len();
    let mut assignments = vec![usize::MAX; points.len()];
    for _ in 0..KMEANS_ITERS {
        let next: Vec<usize> = points.iter().map(|p| nearest_centroid(p, &centroids).0).collect();
        let changed = next != assignments;
        assignments = next;
        let mut sums = vec![vec![0.0; dims]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            sums[a].iter_mut().zip(p).for_each(|(s, v)| *s += v);
        }
        if counts.contains(&0) {
            return None;
        }
        for c in 0..k {
            centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
        }
        if !changed {
            break;
        }
    }
    let inertia = points.iter().zip(&assignments).map(|(p, &a)| sq_dist(p, &centroids[a])).sum();
    Some(Clustering { centroids, assignments, inertia })
}

/// k-means with k-means++ seeding; an empty cluster triggers a reseeded
/// retry.
pub fn cluster_centroids(points: &[Vec<f64>], k: usize, seed: u64) -> Result<Clustering> {
    if k == 0 || points.len() < k {
        return Err(Error::arg(format!("need at least k={k} points (got {})", points.len())));
    }
    let tree = SeedTree::new(seed);
    for attempt in 0..KMEANS_RETRIES {
        let mut rng = tree.rng(&format!("kmeans/{attempt}"));
        if let Some(c) = kmeans_once(points, k, &mut rng) {
            return Ok(c);
        }
    }
    Err(Error::Numeric(format!("k-means left a cluster empty after {KMEANS_RETRIES} attempts")))
}

/// Fraction of points whose cluster matches the label under the best
/// one-to-one relabelling (two clusters).
pub fn two_cluster_agreement(assignments: &[usize], labels: &[usize]) -> f64 {
    let same = assignments.iter().zip(labels).filter(|(a, b)| a == b).count() as f64;
    let n = assignments.len() as f64;
    (same / n).max(1.0 - same / n)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionReadout {
    /// Head- and frame-averaged attention mass per residue; sums to 1.
    pub scores: Vec<f64>,
    /// Per-residue positional variance over the trajectory.
    pub flexibility: Vec<f64>,
    pub spearman: f64,
}

/// Residue attention mass: row sums of each column-stochastic head matrix
/// divided by n, averaged over heads and frames.
pub fn attention_readout(params: &ModelParams, traj: &Trajectory) -> Result<AttentionReadout> {
    let n = params.config.n;
    let mut scores = vec![0.0; n];
    let mut count = 0usize;
    for f in &traj.frames {
        let data = params.frame_data(f)?;
        let mut tape = Tape::new();
        let b = params.bind(&mut tape, false);
        let out = params.forward(&mut tape, &b, &data)?;
        for &a in &out.attn_residue {
            let m = tape.value(a);
            for (i, row) in m.rows().into_iter().enumerate() {
                scores[i] += row.sum() / n as f64;
            }
            count += 1;
        }
    }
    scores.iter_mut().for_each(|s| *s /= count as f64);
    let flexibility = traj.residue_variance();
    let rho = spearman(&scores, &flexibility);
    Ok(AttentionReadout { scores, flexibility, spearman: rho })
}

#[derive(Debug, Clone)]
pub struct GeneralizationReport {
    pub fitted: Fitted,
    pub metrics: MetricsReport,
}

/// Train on the first `n_train` frames and evaluate on the rest.
pub fn short_to_long(
    traj: &Trajectory,
    n_train: usize,
    window_len: usize,
    model: ModelConfig,
    cfg: &TrainConfig,
    latent_k: usize,
) -> Result<GeneralizationReport> {
    let split = SplitPlan::prefix(traj.len(), n_train, window_len)?;
    let fitted = fit(traj, &split, model, cfg)?;
    let metrics = evaluate(&fitted.params, traj, &split, latent_k)?;
    Ok(GeneralizationReport { fitted, metrics })
}

#[derive(Debug, Clone)]
pub struct MutantReport {
    pub fitted: Fitted,
    pub metrics: MetricsReport,
    /// Mean latent distance between wild-type and mutant frames.
    pub cross_distance: f64,
    /// Mean pairwise latent distance within the wild-type run.
    pub within_spread: f64,
}

impl MutantReport {
    pub fn overlaps(&self, factor: f64) -> bool {
        self.cross_distance <= factor * self.within_spread
    }
}

fn mean_pair_distance(a: &[Vec<f64>], b: &[Vec<f64>], skip_self: bool) -> f64 {
    let mut acc = 0.0;
    let mut count = 0usize;
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            if skip_self && i == j {
                continue;
            }
            acc += sq_dist(x, y).sqrt();
            count += 1;
        }
    }
    acc / count.max(1) as f64
}

/// Train on the wild type, evaluate on the mutant with the same split.
pub fn wild_type_to_mutant(
    wild: &Trajectory,
    mutant: &Trajectory,
    split: &SplitPlan,
    model: ModelConfig,
    cfg: &TrainConfig,
    latent_k: usize,
) -> Result<MutantReport> {
    if wild.n_residues() != mutant.n_residues() || wild.len() != mutant.len() {
        return Err(Error::arg(format!(
            "sequence length mismatch: {}x{} vs {}x{}",
            wild.len(),
            wild.n_residues(),
            mutant.len(),
            mutant.n_residues()
        )));
    }
    let fitted = fit(wild, split, model, cfg)?;
    let metrics = evaluate(&fitted.params, mutant, split, latent_k)?;
    let embed = |t: &Trajectory| -> Result<Vec<Vec<f64>>> {
        t.frames.iter().map(|f| fitted.params.predict(f).map(|p| p.z)).collect()
    };
    let (zw, zm) = (embed(wild)?, embed(mutant)?);
    Ok(MutantReport {
        cross_distance: mean_pair_distance(&zw, &zm, false),
        within_spread: mean_pair_distance(&zw, &zw, true),
        fitted,
        metrics,
    })
}

/// `frame,t,z_0..z_(d−1)` rows.
pub fn latents_csv(frames: &[TrajectoryFrame], latents: &[Vec<f64>]) -> String {
    let d = latents.first().map_or(0, |z| z.len());
    let mut s = String::from("frame,t");
    for i in 0..d {
        write!(s, ",z_{i}").unwrap();
    }
    s.push('\n');
    for (i, (f, z)) in frames.iter().zip(latents).enumerate() {
        write!(s, "{i},{}", f.t).unwrap();
        for v in z {
            write!(s, ",{v}").unwrap();
        }
        s.push('\n');
    }
    s
}

/// Projection onto the top `dims` principal components, by power
/// iteration with deflation.
pub fn pca(points: &[Vec<f64>], dims: usize) -> Vec<Vec<f64>> {
    let n = points.len();
    let d = points.first().map_or(0, |p| p.len());
    let mu: Vec<f64> = (0..d).map(|j| points.iter().map(|p| p[j]).sum::<f64>() / n.max(1) as f64).collect();
    let x = Array2::from_shape_fn((n, d), |(i, j)| points[i][j] - mu[j]);
    let mut cov = x.t().dot(&x) / n.max(1) as f64;
    let mut comps = Vec::with_capacity(dims);
    for c in 0..dims.min(d) {
        let mut v = ndarray::Array1::from_shape_fn(d, |j| 1.0 + ((j + c) % 7) as f64 * 0.1);
        for _ in 0..1000 {
            let w = cov.dot(&v);
            let norm = w.dot(&w).sqrt();
            if norm == 0.0 {
                break;
            }
            v = w / norm;
        }
        let lambda = v.dot(&cov.dot(&v));
        let outer = Array2::from_shape_fn((d, d), |(a, b)| lambda * v[a] * v[b]);
        cov -= &outer;
        comps.push(v);
    }
    (0..n).map(|i| comps.iter().map(|v| x.row(i).dot(v)).collect()).collect()
}
