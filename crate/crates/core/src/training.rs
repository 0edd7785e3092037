//! Withheld-window splits and the Adam training loop.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::model::{FrameData, LossWeights, ModelConfig, ModelParams, Normalization};
use crate::rng::SeedTree;
use crate::trajectory::Trajectory;

const SPLIT_DRAWS: usize = 10_000;
const SPLIT_RESTARTS: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitPlan {
    /// Sorted, disjoint `(start, length)` intervals.
    pub windows: Vec<(usize, usize)>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitPlan {
    /// Every frame used for training, nothing withheld.
    pub fn all_train(n_frames: usize) -> Self {
        Self { windows: Vec::new(), train: (0..n_frames).collect(), test: Vec::new() }
    }

    /// Frames `[0, n_train)` train; the rest is cut into consecutive windows
    /// of `window_len` (the last one may be shorter).
    pub fn prefix(n_frames: usize, n_train: usize, window_len: usize) -> Result<Self> {
        if n_train == 0 || n_train >= n_frames || window_len == 0 {
            return Err(Error::arg("prefix split needs 0 < n_train < n_frames and window_len > 0"));
        }
        let windows: Vec<(usize, usize)> =
            (n_train..n_frames).step_by(window_len).map(|s| (s, window_len.min(n_frames - s))).collect();
        Ok(Self { windows, train: (0..n_train).collect(), test: (n_train..n_frames).collect() })
    }

    /// Split with the given withheld windows; they must be non-empty,
    /// in range and disjoint.
    pub fn from_windows(n_frames: usize, mut windows: Vec<(usize, usize)>) -> Result<Self> {
        windows.sort_unstable();
        let mut held = vec![false; n_frames];
        for &(s, l) in &windows {
            if l == 0 || s + l > n_frames {
                return Err(Error::arg(format!("window ({s}, {l}) is empty or exceeds {n_frames} frames")));
            }
            if held[s..s + l].iter().any(|&h| h) {
                return Err(Error::arg(format!("window ({s}, {l}) overlaps another")));
            }
            held[s..s + l].iter_mut().for_each(|h| *h = true);
        }
        let train: Vec<usize> = (0..n_frames).filter(|&i| !held[i]).collect();
        if train.is_empty() {
            return Err(Error::arg("windows leave no training frames"));
        }
        let test = (0..n_frames).filter(|&i| held[i]).collect();
        Ok(Self { windows, train, test })
    }

    /// `start,len` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("start,len\n");
        for (a, l) in &self.windows {
            s.push_str(&format!("{a},{l}\n"));
        }
        s
    }

    /// Inverse of [`SplitPlan::to_csv`]; `#` lines are skipped. No windows
    /// means every frame trains.
    pub fn from_csv(text: &str, n_frames: usize) -> Result<Self> {
        let mut windows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line == "start,len" {
                continue;
            }
            let parsed = line.split_once(',').and_then(|(a, b)| Some((a.trim().parse().ok()?, b.trim().parse().ok()?)));
            windows.push(parsed.ok_or_else(|| Error::parse(i + 1, format!("expected 'start,len', got {line:?}")))?);
        }
        if windows.is_empty() {
            return Ok(Self::all_train(n_frames));
        }
        Self::from_windows(n_frames, windows)
    }
}

/// Uniformly placed, non-overlapping withheld windows by rejection sampling.
pub fn make_split(n_frames: usize, n_windows: usize, window_len: usize, seed: u64) -> Result<SplitPlan> {
    if window_len == 0 || n_windows == 0 {
        return Err(Error::arg("need at least one window of positive length"));
    }
    if 2 * n_windows * window_len > n_frames {
        return Err(Error::arg(format!(
            "{n_windows} windows x {window_len} exceeds half of {n_frames} frames"
        )));
    }
    let mut rng = SeedTree::new(seed).rng("split");
    let last_start = n_frames - window_len;
    for _ in 0..SPLIT_RESTARTS {
        let mut windows: Vec<(usize, usize)> = Vec::with_capacity(n_windows);
        let mut draws = 0;
        while windows.len() < n_windows && draws < SPLIT_DRAWS {
            draws += 1;
            let s = rng.random_range(0..=last_start);
            if windows.iter().all(|&(a, _)| s + window_len <= a || a + window_len <= s) {
                windows.push((s, window_len));
            }
        }
        if windows.len() == n_windows {
            return SplitPlan::from_windows(n_frames, windows);
        }
    }
    Err(Error::arg("could not pack withheld windows; use fewer or shorter windows"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub weights: LossWeights,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 16,
            weights: LossWeights::default(),
            seed: 0,
        }
    }
}

/// Mean loss terms over one epoch (before each step).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub total: f64,
    pub time: f64,
    pub structure: f64,
    pub scattering: f64,
    pub node: Option<f64>,
}

struct Adam {
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    step: i32,
}

impl Adam {
    fn new(params: &[Array2<f64>]) -> Self {
        let zeros: Vec<Array2<f64>> = params.iter().map(|p| Array2::zeros(p.raw_dim())).collect();
        Self { m: zeros.clone(), v: zeros, step: 0 }
    }

    fn update(&mut self, cfg: &TrainConfig, params: &mut [Array2<f64>], grads: &[Option<Array2<f64>>]) {
        self.step += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.step);
        let c2 = 1.0 - cfg.beta2.powi(self.step);
        for (i, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            let (m, v, p) = (&mut self.m[i], &mut self.v[i], &mut params[i]);
            ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                *p -= cfg.lr * (*m / c1) / ((*v / c2).sqrt() + cfg.eps);
            });
        }
    }
}

fn check_finite(name: &str, v: f64, epoch: usize, batch: usize) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged(format!("{name} loss is {v} at epoch {epoch}, batch {batch}")))
    }
}

/// Train in place on `frames`, minibatched, shuffled per epoch.
pub fn train(params: &mut ModelParams, frames: &[FrameData], cfg: &TrainConfig) -> Result<Vec<EpochLoss>> {
    if frames.is_empty() {
        return Err(Error::arg("no training frames"));
    }
    if cfg.batch_size == 0 || !(cfg.lr >= 0.0) {
        return Err(Error::arg("batch_size must be positive and lr non-negative"));
    }
    cfg.weights.coefficients(params.config.uses_node_embedding())?;
    let mut adam = Adam::new(&params.store.values);
    let mut rng = SeedTree::new(cfg.seed).rng("train/shuffle");
    let mut order: Vec<usize> = (0..frames.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut acc = EpochLoss { epoch, total: 0.0, time: 0.0, structure: 0.0, scattering: 0.0, node: None };
        for (bi, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape, true);
            let mut terms = Vec::with_capacity(batch.len());
            for &i in batch {
                let out = params.forward(&mut tape, &bound, &frames[i])?;
                terms.push(params.frame_losses(&mut tape, &out, &frames[i])?);
            }
            let (mean, total) = params.batch_loss(&mut tape, &terms, &cfg.weights)?;
            let share = batch.len() as f64 / frames.len() as f64;
            let vals = [
                ("time", tape.scalar_value(mean.time)),
                ("structure", tape.scalar_value(mean.structure)),
                ("scattering", tape.scalar_value(mean.scattering)),
                ("total", tape.scalar_value(total)),
            ];
            for (name, v) in vals {
                check_finite(name, v, epoch, bi)?;
            }
            acc.time += share * vals[0].1;
            acc.structure += share * vals[1].1;
            acc.scattering += share * vals[2].1;
            acc.total += share * vals[3].1;
            if let Some(n) = mean.node {
                let v = tape.scalar_value(n);
                check_finite("node", v, epoch, bi)?;
                acc.node = Some(acc.node.unwrap_or(0.0) + share * v);
            }
            tape.backward(total)?;
            let grads: Vec<Option<Array2<f64>>> = bound.vars().iter().map(|&v| tape.grad(v).cloned()).collect();
            if let Some(bad) = grads.iter().position(|g| g.as_ref().is_some_and(|g| g.iter().any(|x| !x.is_finite()))) {
                return Err(Error::Diverged(format!(
                    "gradient of {} is not finite at epoch {epoch}, batch {bi}",
                    params.store.names[bad]
                )));
            }
            adam.update(cfg, &mut params.store.values, &grads);
        }
        curve.push(acc);
    }
    Ok(curve)
}

/// A trained model together with the data it saw.
#[derive(Debug, Clone)]
pub struct Fitted {
    pub params: ModelParams,
    pub curve: Vec<EpochLoss>,
}

/// Fit normalization on the training frames, initialize, precompute and train.
pub fn fit(traj: &Trajectory, split: &SplitPlan, model: ModelConfig, cfg: &TrainConfig) -> Result<Fitted> {
    let train_frames: Vec<_> = split.train.iter().map(|&i| traj.frames[i].clone()).collect();
    let norm = Normalization::fit(&train_frames)?;
    let mut params = ModelParams::init(ModelConfig { n: traj.n_residues(), ..model }, norm)?;
    let data = train_frames.iter().map(|f| params.frame_data(f)).collect::<Result<Vec<_>>>()?;
    params.fit_scaling(&data)?;
    let curve = train(&mut params, &data, cfg)?;
    Ok(Fitted { params, curve })
}
