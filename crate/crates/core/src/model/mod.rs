//! The encoder: learnable scattering, positional encoding, a residue-wise
//! and a feature-wise attention block, a latent bottleneck, and the time,
//! structure and feature-reconstruction heads.
//!
//! Per frame:
//!
//! ```text
//! Ũx      = scatter(Θ, graph, x)                       n × F
//! S       = R ∥ Ũx                                     n × (2d + F)
//! p       = flat(attn_res(S)) ∥ flat(attn_aa(Ũxᵀ))
//! z       = E(p),  t̂ = N(z),  Ĉ = M(z),  Ûx = D(z)
//! ```

mod checkpoint;
pub mod targets;

use std::rc::Rc;

use ndarray::Array2;
use rand::Rng as _;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_HEADER};
pub use targets::{positional_encoding, structure_targets, StructureTargets};

use crate::autodiff::{Tape, Var};
use crate::diffusion::{lazy_walk, matrix_power_cascade};
use crate::error::{Error, Result};
use crate::graph::{build_knn_graph, ProteinGraph, DEFAULT_K};
use crate::rng::SeedTree;
use crate::scattering::{
    features_per_channel, scatter_on_tape, softmax_rows, SelectionMatrix, TapeBank, DEFAULT_J, DEFAULT_T_MAX,
};
use crate::trajectory::{TrajectoryFrame, ALPHABET};
use targets::{from_upper_triangle, upper_triangle};

/// Residue count above which the one-hot signal is replaced by a learned
/// 3-D node embedding.
pub const NODE_EMBEDDING_THRESHOLD: usize = 200;
pub const NODE_EMBEDDING_DIM: usize = 3;
/// Weight of the coordinate-reconstruction MSE inside the structure loss.
pub const COORD_LOSS_WEIGHT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeEmbedding {
    Auto,
    On,
    Off,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub n: usize,
    pub k: usize,
    pub j: usize,
    pub t_max: usize,
    pub learnable_scales: bool,
    /// Initial peak logit of the selection matrix.
    pub selection_sharpness: f64,
    /// Positional encoding has 2·pe_dim columns.
    pub pe_dim: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub residue_out: usize,
    pub aa_out: usize,
    pub latent_dim: usize,
    pub hidden: usize,
    pub node_embedding: NodeEmbedding,
    pub coord_head: bool,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            k: DEFAULT_K,
            j: DEFAULT_J,
            t_max: DEFAULT_T_MAX,
            learnable_scales: true,
            selection_sharpness: 2.0,
            pe_dim: 8,
            heads: 4,
            head_dim: 8,
            residue_out: 16,
            aa_out: 4,
            latent_dim: 32,
            hidden: 128,
            node_embedding: NodeEmbedding::Auto,
            coord_head: false,
            seed: 0,
        }
    }

    pub fn uses_node_embedding(&self) -> bool {
        match self.node_embedding {
            NodeEmbedding::On => true,
            NodeEmbedding::Off => false,
            NodeEmbedding::Auto => self.n > NODE_EMBEDDING_THRESHOLD,
        }
    }

    pub fn channels(&self) -> usize {
        if self.uses_node_embedding() {
            NODE_EMBEDDING_DIM
        } else {
            ALPHABET.len()
        }
    }

    /// Scattering features per residue.
    pub fn features(&self) -> usize {
        self.channels() * features_per_channel(self.j)
    }

    pub fn pairdist_len(&self) -> usize {
        self.n * (self.n - 1) / 2
    }

    pub fn dihedral_len(&self) -> usize {
        let m = self.n - 3;
        m * (m - 1) / 2
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 4 {
            return Err(Error::arg("model needs n >= 4"));
        }
        if self.k == 0 || self.k >= self.n {
            return Err(Error::arg("k must satisfy 1 <= k < n"));
        }
        if self.j < 1 || self.t_max < self.j + 1 {
            return Err(Error::arg("need J >= 1 and t_max >= J+1"));
        }
        for (name, v) in [
            ("pe_dim", self.pe_dim),
            ("heads", self.heads),
            ("head_dim", self.head_dim),
            ("residue_out", self.residue_out),
            ("aa_out", self.aa_out),
            ("latent_dim", self.latent_dim),
            ("hidden", self.hidden),
        ] {
            if v == 0 {
                return Err(Error::arg(format!("{name} must be positive")));
            }
        }
        if !self.selection_sharpness.is_finite() {
            return Err(Error::arg("selection_sharpness must be finite"));
        }
        Ok(())
    }
}

/// Loss weights. Three-term mode: `α L_t + β L_s + (1−α−β) L_c`; with
/// `literal_plus` the structure weight is `1−α+β` instead. Node-embedding
/// mode: `α L_t + β L_s + γ L_c + (1−α−β−γ) L_n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: Option<f64>,
    pub literal_plus: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { alpha: 0.6, beta: 0.1, gamma: None, literal_plus: false }
    }
}

/// Resolved per-term coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coefficients {
    pub time: f64,
    pub scattering: f64,
    pub structure: f64,
    pub node: f64,
}

impl LossWeights {
    pub fn coefficients(&self, node_mode: bool) -> Result<Coefficients> {
        let (a, b) = (self.alpha, self.beta);
        if !(a >= 0.0 && b >= 0.0) {
            return Err(Error::arg("loss weights must be non-negative"));
        }
        if node_mode {
            let g = self
                .gamma
                .ok_or_else(|| Error::arg("node-embedding mode needs gamma"))?;
            if g < 0.0 || a + b + g > 1.0 + 1e-12 {
                return Err(Error::arg(format!("need alpha+beta+gamma <= 1 (got {})", a + b + g)));
            }
            return Ok(Coefficients { time: a, scattering: b, structure: g, node: (1.0 - a - b - g).max(0.0) });
        }
        if a + b > 1.0 + 1e-12 {
            return Err(Error::arg(format!("need alpha+beta <= 1 (got {})", a + b)));
        }
        let structure = if self.literal_plus { 1.0 - a + b } else { (1.0 - a - b).max(0.0) };
        Ok(Coefficients { time: a, scattering: b, structure, node: 0.0 })
    }
}

/// Fitted target scalings.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalization {
    pub t_min: f64,
    pub t_max: f64,
    /// Mean pair distance; the length unit for coordinates.
    pub dist_scale: f64,
    /// Per-entry centre of the upper-triangle pair distances.
    pub pd_shift: Vec<f64>,
    /// Per-entry divisor of the upper-triangle pair distances.
    pub pd_scale: Vec<f64>,
}

impl Normalization {
    pub fn fit(frames: &[TrajectoryFrame]) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::arg("cannot fit normalization on zero frames"));
        }
        let t_min = frames.iter().map(|f| f.t).min().unwrap() as f64;
        let t_max = frames.iter().map(|f| f.t).max().unwrap() as f64;
        let mut sum = 0.0;
        let mut count = 0usize;
        for f in frames {
            for i in 0..f.n() {
                for j in i + 1..f.n() {
                    sum += f.distance(i, j);
                    count += 1;
                }
            }
        }
        let dist_scale = if count > 0 && sum > 0.0 { sum / count as f64 } else { 1.0 };
        let (pd_shift, pd_scale) = pairdist_standardization(frames, dist_scale)?;
        Ok(Self { t_min, t_max, dist_scale, pd_shift, pd_scale })
    }

    /// Upper-triangle distances to model units.
    pub fn normalize_pairdist(&self, pd: &[f64]) -> Result<Vec<f64>> {
        self.check_pairdist_len(pd.len())?;
        Ok(pd.iter().zip(&self.pd_shift).zip(&self.pd_scale).map(|((d, m), s)| (d - m) / s).collect())
    }

    pub fn denormalize_pairdist(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.check_pairdist_len(u.len())?;
        Ok(u.iter().zip(&self.pd_shift).zip(&self.pd_scale).map(|((v, m), s)| m + v * s).collect())
    }

    fn check_pairdist_len(&self, len: usize) -> Result<()> {
        if len != self.pd_shift.len() || len != self.pd_scale.len() {
            return Err(Error::shape("pairdist normalization", format!("{len} entries, fitted on {}", self.pd_shift.len())));
        }
        Ok(())
    }

    pub fn normalize_time(&self, t: f64) -> f64 {
        if self.t_max > self.t_min {
            (t - self.t_min) / (self.t_max - self.t_min)
        } else {
            0.0
        }
    }

    pub fn denormalize_time(&self, u: f64) -> f64 {
        self.t_min + u * (self.t_max - self.t_min)
    }
}

/// Per-entry mean and `std + 0.1·mean std` of the pair distances; the floor
/// keeps rigid distances (zero spread) from being blown up.
fn pairdist_standardization(frames: &[TrajectoryFrame], dist_scale: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let rows = frames
        .iter()
        .map(|f| Ok(upper_triangle(&structure_targets(f)?.pairdist)))
        .collect::<Result<Vec<_>>>()?;
    let len = rows[0].len();
    let m = rows.len() as f64;
    let shift: Vec<f64> = (0..len).map(|e| rows.iter().map(|r| r[e]).sum::<f64>() / m).collect();
    let sd: Vec<f64> = (0..len)
        .map(|e| (rows.iter().map(|r| (r[e] - shift[e]).powi(2)).sum::<f64>() / m).sqrt())
        .collect();
    let mean_sd = if len > 0 { sd.iter().sum::<f64>() / len as f64 } else { 0.0 };
    let floor = if mean_sd > 0.0 { 0.1 * mean_sd } else { dist_scale };
    Ok((shift, sd.iter().map(|s| s + floor).collect()))
}

/// Everything about a frame the model needs, precomputed once.
#[derive(Debug, Clone)]
pub struct FrameData {
    pub t: u64,
    pub t_norm: f64,
    pub graph: ProteinGraph,
    /// `P^1 … P^t_max`.
    pub powers: Rc<Vec<Array2<f64>>>,
    /// Standardized upper-triangle pair distances, 1 × n(n−1)/2.
    pub pairdist: Array2<f64>,
    /// Upper-triangle dihedral differences, 1 × n'(n'−1)/2.
    pub dihedral: Array2<f64>,
    /// Centered, normalized coordinates, 1 × 3n.
    pub coords: Array2<f64>,
}

impl FrameData {
    pub fn new(frame: &TrajectoryFrame, config: &ModelConfig, norm: &Normalization) -> Result<Self> {
        if frame.n() != config.n {
            return Err(Error::shape("frame", format!("{} residues, model expects {}", frame.n(), config.n)));
        }
        let graph = build_knn_graph(frame, config.k)?;
        let p = lazy_walk(&graph.adjacency, &graph.degrees)?;
        let mut powers = matrix_power_cascade(&p, config.t_max)?;
        powers.remove(0);
        let st = structure_targets(frame)?;
        let pd = norm.normalize_pairdist(&upper_triangle(&st.pairdist))?;
        let dh = upper_triangle(&st.dihedral_diff);
        let n = frame.n();
        let mut centroid = [0.0; 3];
        for c in &frame.coords {
            for d in 0..3 {
                centroid[d] += c[d] / n as f64;
            }
        }
        let coords: Vec<f64> = frame
            .coords
            .iter()
            .flat_map(|c| (0..3).map(move |d| (c[d] - centroid[d]) / norm.dist_scale))
            .collect();
        Ok(Self {
            t: frame.t,
            t_norm: norm.normalize_time(frame.t as f64),
            graph,
            powers: Rc::new(powers),
            pairdist: Array2::from_shape_vec((1, pd.len()), pd).expect("length"),
            dihedral: Array2::from_shape_vec((1, dh.len()), dh).expect("length"),
            coords: Array2::from_shape_vec((1, 3 * n), coords).expect("length"),
        })
    }
}

/// Index of a parameter tensor in [`ParamStore`].
pub type ParamId = usize;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    pub names: Vec<String>,
    pub values: Vec<Array2<f64>>,
}

impl ParamStore {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.iter().all(|x| x.is_finite()))
    }
}

#[derive(Debug, Clone, Copy)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct Mlp {
    l1: Linear,
    l2: Linear,
}

#[derive(Debug, Clone, Copy)]
struct Head {
    q: ParamId,
    k: ParamId,
    v: ParamId,
}

#[derive(Debug, Clone)]
struct AttentionBlock {
    heads: Vec<Head>,
    mix: ParamId,
    mlp: Mlp,
}

#[derive(Debug, Clone)]
struct Architecture {
    theta: Option<ParamId>,
    residue: AttentionBlock,
    aa: AttentionBlock,
    encoder: Mlp,
    decoder: Mlp,
    time: Mlp,
    structure: Mlp,
    coords: Option<Mlp>,
    node_enc: Option<Mlp>,
    node_dec: Option<Mlp>,
}

struct Builder {
    store: ParamStore,
    rng: crate::rng::Rng,
}

impl Builder {
    fn uniform(&mut self, name: String, rows: usize, cols: usize, fan_in: usize) -> ParamId {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let v = Array2::from_shape_fn((rows, cols), |_| self.rng.random_range(-bound..bound));
        self.push(name, v)
    }

    fn push(&mut self, name: String, v: Array2<f64>) -> ParamId {
        self.store.names.push(name);
        self.store.values.push(v);
        self.store.values.len() - 1
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Linear {
        Linear {
            w: self.uniform(format!("{name}.w"), fan_in, fan_out, fan_in),
            b: self.uniform(format!("{name}.b"), 1, fan_out, fan_in),
        }
    }

    fn mlp(&mut self, name: &str, input: usize, hidden: usize, output: usize) -> Mlp {
        Mlp { l1: self.linear(&format!("{name}.0"), input, hidden), l2: self.linear(&format!("{name}.1"), hidden, output) }
    }

    fn attention(&mut self, name: &str, input: usize, config: &ModelConfig, output: usize) -> AttentionBlock {
        let dk = config.head_dim;
        let heads = (0..config.heads)
            .map(|h| Head {
                q: self.uniform(format!("{name}.h{h}.q"), input, dk, input),
                k: self.uniform(format!("{name}.h{h}.k"), input, dk, input),
                v: self.uniform(format!("{name}.h{h}.v"), input, dk, input),
            })
            .collect();
        let width = config.heads * dk;
        let mix = self.uniform(format!("{name}.mix"), width, width, width);
        let mlp = self.mlp(&format!("{name}.mlp"), width, 2 * width, output);
        AttentionBlock { heads, mix, mlp }
    }
}

fn build(config: &ModelConfig) -> Result<(Architecture, ParamStore)> {
    config.validate()?;
    let mut b = Builder {
        store: ParamStore { names: Vec::new(), values: Vec::new() },
        rng: SeedTree::new(config.seed).rng("model/init"),
    };
    let theta = if config.learnable_scales {
        let init = SelectionMatrix::dyadic_init(config.j, config.t_max, config.selection_sharpness)?;
        Some(b.push("theta".into(), init.0))
    } else {
        None
    };
    let f = config.features();
    let n = config.n;
    let residue = b.attention("residue", 2 * config.pe_dim + f, config, config.residue_out);
    let aa = b.attention("aa", n, config, config.aa_out);
    let p_dim = n * config.residue_out + f * config.aa_out;
    let encoder = b.mlp("encoder", p_dim, config.hidden, config.latent_dim);
    let decoder = b.mlp("decoder", config.latent_dim, config.hidden, n * f);
    let time = b.mlp("time", config.latent_dim, config.hidden, 1);
    let structure = b.mlp("structure", config.latent_dim, config.hidden, config.pairdist_len() + config.dihedral_len());
    let coords = config.coord_head.then(|| b.mlp("coords", config.latent_dim, config.hidden, 3 * n));
    let (node_enc, node_dec) = if config.uses_node_embedding() {
        (
            Some(b.mlp("node_enc", ALPHABET.len(), config.hidden, NODE_EMBEDDING_DIM)),
            Some(b.mlp("node_dec", NODE_EMBEDDING_DIM, config.hidden, ALPHABET.len())),
        )
    } else {
        (None, None)
    };
    let arch = Architecture { theta, residue, aa, encoder, decoder, time, structure, coords, node_enc, node_dec };
    Ok((arch, b.store))
}

/// Tape handles for every parameter.
#[derive(Debug, Clone)]
pub struct Bound(Vec<Var>);

impl Bound {
    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

/// Per-frame outputs as tape nodes.
#[derive(Debug, Clone)]
pub struct ForwardVars {
    /// Raw scattering features, n × F.
    pub features: Var,
    /// Features after the optional scaling; what the encoder and the
    /// scattering reconstruction see.
    pub inputs: Var,
    pub p: Var,
    pub z: Var,
    pub t_hat: Var,
    pub structure: Var,
    pub features_hat: Var,
    pub coords: Option<Var>,
    /// One n×n column-stochastic matrix per head.
    pub attn_residue: Vec<Var>,
    /// One F×F column-stochastic matrix per head.
    pub attn_aa: Vec<Var>,
    /// (reconstructed one-hot, one-hot) in node-embedding mode.
    pub node_recon: Option<(Var, Var)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms<T> {
    pub time: T,
    pub structure: T,
    pub scattering: T,
    pub node: Option<T>,
}

impl LossTerms<f64> {
    pub fn combine(&self, c: &Coefficients) -> f64 {
        c.time * self.time + c.scattering * self.scattering + c.structure * self.structure + c.node * self.node.unwrap_or(0.0)
    }
}

/// Decoded structure prediction, in original units.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedStructure {
    pub pairdist: Array2<f64>,
    pub dihedral_diff: Array2<f64>,
    pub coords: Option<Array2<f64>>,
}

/// Fixed per-entry affine map `(x − shift) ⊙ scale` applied to the n × F
/// scattering features before attention.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureScaling {
    pub shift: Array2<f64>,
    pub scale: Array2<f64>,
}

impl FeatureScaling {
    /// Centre each entry on its mean over frames and divide by its standard
    /// deviation plus the mean standard deviation, so entries that never
    /// vary are not blown up.
    pub fn fit(features: &[Array2<f64>]) -> Result<Self> {
        let first = features.first().ok_or_else(|| Error::arg("cannot fit feature scaling on zero frames"))?;
        if features.iter().any(|f| f.dim() != first.dim()) {
            return Err(Error::shape("feature scaling", "frames disagree on feature shape"));
        }
        let m = features.len() as f64;
        let mut shift = Array2::zeros(first.raw_dim());
        for f in features {
            shift += f;
        }
        shift /= m;
        let mut var = Array2::<f64>::zeros(first.raw_dim());
        for f in features {
            var += &(f - &shift).mapv(|v| v * v);
        }
        let sd = (var / m).mapv(f64::sqrt);
        let mut floor = sd.mean().unwrap_or(0.0);
        if floor <= 0.0 {
            let spread = first.std(0.0);
            floor = if spread > 0.0 { spread } else { 1.0 };
        }
        let scale = sd.mapv(|s| 1.0 / (s + floor));
        Ok(Self { shift, scale })
    }

    pub fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        (x - &self.shift) * &self.scale
    }
}

#[derive(Debug, Clone)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub norm: Normalization,
    pub store: ParamStore,
    pub scaling: Option<FeatureScaling>,
    arch: Architecture,
}

impl ModelParams {
    pub fn init(config: ModelConfig, norm: Normalization) -> Result<Self> {
        let (arch, store) = build(&config)?;
        Ok(Self { config, norm, store, scaling: None, arch })
    }

    /// Rebuild from stored tensors; names and shapes must match `config`.
    pub fn from_store(config: ModelConfig, norm: Normalization, store: ParamStore) -> Result<Self> {
        let (arch, fresh) = build(&config)?;
        if fresh.names != store.names {
            return Err(Error::Checkpoint("parameter names do not match the configuration".into()));
        }
        for ((name, a), b) in fresh.names.iter().zip(&fresh.values).zip(&store.values) {
            if a.dim() != b.dim() {
                return Err(Error::Checkpoint(format!("{name}: shape {:?}, expected {:?}", b.dim(), a.dim())));
            }
        }
        Ok(Self { config, norm, store, scaling: None, arch })
    }

    /// Fit the feature scaling on the raw features of `data` under the
    /// current scale weights.
    pub fn fit_scaling(&mut self, data: &[FrameData]) -> Result<()> {
        self.scaling = None;
        let raw = data
            .iter()
            .map(|d| {
                let mut tape = Tape::new();
                let b = self.bind(&mut tape, false);
                let out = self.forward(&mut tape, &b, d)?;
                Ok(tape.value(out.features).clone())
            })
            .collect::<Result<Vec<_>>>()?;
        self.scaling = Some(FeatureScaling::fit(&raw)?);
        Ok(())
    }

    pub fn selection(&self) -> Option<SelectionMatrix> {
        self.arch.theta.map(|id| SelectionMatrix(self.store.values[id].clone()))
    }

    /// Soft-scale weights currently in effect, (J+1) × t_max.
    pub fn scale_weights(&self) -> Array2<f64> {
        match self.arch.theta {
            Some(id) => softmax_rows(self.store.values[id].view()),
            None => hard_dyadic_weights(self.config.j, self.config.t_max),
        }
    }

    pub fn frame_data(&self, frame: &TrajectoryFrame) -> Result<FrameData> {
        FrameData::new(frame, &self.config, &self.norm)
    }

    /// Put every parameter on the tape, as leaves or as constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        Bound(
            self.store
                .values
                .iter()
                .map(|v| if trainable { tape.leaf(v.clone()) } else { tape.constant(v.clone()) })
                .collect(),
        )
    }

    fn linear(&self, tape: &mut Tape, b: &Bound, l: Linear, x: Var) -> Result<Var> {
        let y = tape.matmul(x, b.0[l.w])?;
        tape.add_row(y, b.0[l.b])
    }

    fn mlp(&self, tape: &mut Tape, b: &Bound, m: Mlp, x: Var) -> Result<Var> {
        let h = self.linear(tape, b, m.l1, x)?;
        let h = tape.relu(h);
        self.linear(tape, b, m.l2, h)
    }

    /// Multi-head attention followed by the two-layer MLP. Returns the block
    /// output and each head's attention matrix.
    fn attention(&self, tape: &mut Tape, b: &Bound, block: &AttentionBlock, s: Var) -> Result<(Var, Vec<Var>)> {
        let mut outs = Vec::with_capacity(block.heads.len());
        let mut attns = Vec::with_capacity(block.heads.len());
        for h in &block.heads {
            let q = tape.matmul(s, b.0[h.q])?;
            let k = tape.matmul(s, b.0[h.k])?;
            let v = tape.matmul(s, b.0[h.v])?;
            let dk = tape.shape(q).1 as f64;
            let kt = tape.transpose(k);
            let scores = tape.matmul(q, kt)?;
            let scores = tape.scale(scores, 1.0 / dk.sqrt());
            let a = tape.softmax_cols(scores);
            outs.push(tape.matmul(a, v)?);
            attns.push(a);
        }
        let cat = tape.concat_h(&outs)?;
        let mixed = tape.matmul(cat, b.0[block.mix])?;
        let out = self.mlp(tape, b, block.mlp, mixed)?;
        Ok((out, attns))
    }

    /// Standalone attention block on an arbitrary input, for inspection.
    pub fn residue_attention(&self, tape: &mut Tape, bound: &Bound, s: Var) -> Result<(Var, Vec<Var>)> {
        self.attention(tape, bound, &self.arch.residue, s)
    }

    pub fn forward(&self, tape: &mut Tape, b: &Bound, frame: &FrameData) -> Result<ForwardVars> {
        let cfg = &self.config;
        let n = cfg.n;
        if frame.graph.n != n {
            return Err(Error::shape("forward", format!("graph has {} vertices, model expects {n}", frame.graph.n)));
        }
        let onehot = tape.constant(frame.graph.signal.clone());
        let (signal, node_recon) = match (self.arch.node_enc, self.arch.node_dec) {
            (Some(enc), Some(dec)) => {
                let e = self.mlp(tape, b, enc, onehot)?;
                let r = self.mlp(tape, b, dec, e)?;
                (e, Some((r, onehot)))
            }
            _ => (onehot, None),
        };
        if tape.shape(signal).1 != cfg.channels() {
            return Err(Error::shape("forward", format!("signal has {} channels, model expects {}", tape.shape(signal).1, cfg.channels())));
        }

        let weights = match self.arch.theta {
            Some(id) => tape.softmax_rows(b.0[id]),
            None => tape.constant(hard_dyadic_weights(cfg.j, cfg.t_max)),
        };
        let bank = TapeBank::new(tape, weights, frame.powers.clone(), cfg.channels())?;
        let features = scatter_on_tape(tape, &bank, signal)?;
        let f = tape.shape(features).1;
        let inputs = match &self.scaling {
            Some(sc) => {
                if sc.shift.dim() != (n, f) {
                    return Err(Error::shape("forward", format!("feature scaling is {:?}, features are {:?}", sc.shift.dim(), (n, f))));
                }
                let shift = tape.constant(sc.shift.clone());
                let scale = tape.constant(sc.scale.clone());
                let centred = tape.sub(features, shift)?;
                tape.hadamard(centred, scale)?
            }
            None => features,
        };

        let pe = tape.constant(positional_encoding(n, cfg.pe_dim));
        let s = tape.concat_h(&[pe, inputs])?;
        let (res_out, attn_residue) = self.attention(tape, b, &self.arch.residue, s)?;
        let ft = tape.transpose(inputs);
        let (aa_out, attn_aa) = self.attention(tape, b, &self.arch.aa, ft)?;

        let res_flat = tape.reshape(res_out, (1, n * cfg.residue_out))?;
        let aa_flat = tape.reshape(aa_out, (1, f * cfg.aa_out))?;
        let p = tape.concat_h(&[res_flat, aa_flat])?;
        let z = self.mlp(tape, b, self.arch.encoder, p)?;
        let t_hat = self.mlp(tape, b, self.arch.time, z)?;
        let structure = self.mlp(tape, b, self.arch.structure, z)?;
        let dec = self.mlp(tape, b, self.arch.decoder, z)?;
        let features_hat = tape.reshape(dec, (n, f))?;
        let coords = match self.arch.coords {
            Some(m) => Some(self.mlp(tape, b, m, z)?),
            None => None,
        };
        Ok(ForwardVars { features, inputs, p, z, t_hat, structure, features_hat, coords, attn_residue, attn_aa, node_recon })
    }

    /// Unweighted per-frame loss terms.
    pub fn frame_losses(&self, tape: &mut Tape, out: &ForwardVars, frame: &FrameData) -> Result<LossTerms<Var>> {
        let t_target = tape.scalar(frame.t_norm);
        let time = tape.mse(out.t_hat, t_target)?;

        let np = self.config.pairdist_len();
        let nd = self.config.dihedral_len();
        let pd_hat = tape.gather(out.structure, (0..np).collect::<Vec<_>>().into(), (1, np))?;
        let pd = tape.constant(frame.pairdist.clone());
        let pd_loss = tape.mse(pd_hat, pd)?;
        let mut terms = vec![(0.5, pd_loss)];
        if nd > 0 {
            let dh_hat = tape.gather(out.structure, (np..np + nd).collect::<Vec<_>>().into(), (1, nd))?;
            let dh = tape.constant(frame.dihedral.clone());
            terms.push((0.5, tape.mse(dh_hat, dh)?));
        } else {
            terms[0].0 = 1.0;
        }
        if let Some(c) = out.coords {
            let target = tape.constant(frame.coords.clone());
            terms.push((COORD_LOSS_WEIGHT, tape.mse(c, target)?));
        }
        let structure = tape.weighted_sum(&terms)?;

        let scattering = tape.mse(out.features_hat, out.inputs)?;
        let node = match out.node_recon {
            Some((r, x)) => Some(tape.mse(r, x)?),
            None => None,
        };
        Ok(LossTerms { time, structure, scattering, node })
    }

    /// Batch mean of each term plus the weighted total.
    pub fn batch_loss(&self, tape: &mut Tape, terms: &[LossTerms<Var>], weights: &LossWeights) -> Result<(LossTerms<Var>, Var)> {
        if terms.is_empty() {
            return Err(Error::arg("empty batch"));
        }
        let c = weights.coefficients(self.config.uses_node_embedding())?;
        let inv = 1.0 / terms.len() as f64;
        let mean = |tape: &mut Tape, pick: &dyn Fn(&LossTerms<Var>) -> Var| -> Result<Var> {
            let parts: Vec<(f64, Var)> = terms.iter().map(|t| (inv, pick(t))).collect();
            tape.weighted_sum(&parts)
        };
        let time = mean(tape, &|t| t.time)?;
        let structure = mean(tape, &|t| t.structure)?;
        let scattering = mean(tape, &|t| t.scattering)?;
        let node = if terms[0].node.is_some() { Some(mean(tape, &|t| t.node.expect("uniform batch"))?) } else { None };
        let mut parts = vec![(c.time, time), (c.scattering, scattering), (c.structure, structure)];
        if let Some(nv) = node {
            parts.push((c.node, nv));
        }
        let total = tape.weighted_sum(&parts)?;
        Ok((LossTerms { time, structure, scattering, node }, total))
    }

    /// Latent vector of one frame (1 × latent_dim), no gradients.
    pub fn embed(&self, frame: &FrameData) -> Result<Array2<f64>> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, false);
        let out = self.forward(&mut tape, &b, frame)?;
        Ok(tape.value(out.z).clone())
    }

    /// Structure prediction from a latent vector alone.
    pub fn decode_latent(&self, z: &Array2<f64>) -> Result<DecodedStructure> {
        if z.dim() != (1, self.config.latent_dim) {
            return Err(Error::shape("decode_latent", format!("z is {:?}, expected (1, {})", z.dim(), self.config.latent_dim)));
        }
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, false);
        let zv = tape.constant(z.clone());
        let s = self.mlp(&mut tape, &b, self.arch.structure, zv)?;
        let s = tape.value(s);
        let n = self.config.n;
        let np = self.config.pairdist_len();
        let pd = self.norm.denormalize_pairdist(&s.iter().take(np).copied().collect::<Vec<_>>())?;
        let dh: Vec<f64> = s.iter().skip(np).copied().collect();
        let coords = match self.arch.coords {
            Some(m) => {
                let c = self.mlp(&mut tape, &b, m, zv)?;
                let c = tape.value(c).mapv(|v| v * self.norm.dist_scale);
                Some(c.into_shape_with_order((n, 3)).expect("3n outputs"))
            }
            None => None,
        };
        Ok(DecodedStructure {
            pairdist: from_upper_triangle(&pd, n, 1.0),
            dihedral_diff: from_upper_triangle(&dh, n - 3, -1.0),
            coords,
        })
    }

    /// Predicted frame time (un-normalized).
    pub fn predict_time(&self, z: &Array2<f64>) -> Result<f64> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, false);
        let zv = tape.constant(z.clone());
        let t = self.mlp(&mut tape, &b, self.arch.time, zv)?;
        Ok(self.norm.denormalize_time(tape.scalar_value(t)))
    }
}

/// Exact one-hot weights at dyadic scales (clipped to `t_max`).
pub fn hard_dyadic_weights(j: usize, t_max: usize) -> Array2<f64> {
    let sel = SelectionMatrix::dyadic_init(j, t_max, 1.0).expect("validated config");
    sel.0.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 })
}
