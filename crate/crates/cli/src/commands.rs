use std::fmt::Write as _;
use std::path::Path;
use std::process::ExitCode;

use clap::ArgMatches;
use ndarray::Array2;

use protscape::diffusion::lazy_walk;
use protscape::eval::{attention_readout, cluster_centroids, evaluate, interpolate_latents, latents_csv, pairdist_spread, pca};
use protscape::graph::build_knn_graph;
use protscape::model::{read_checkpoint, write_checkpoint, DecodedStructure, LossWeights, ModelConfig, ModelParams, NodeEmbedding};
use protscape::scattering::{dyadic_bank, feature_layout, scatter};
use protscape::stability::{run_campaign, CampaignConfig, CheckSet};
use protscape::stats::mean;
use protscape::training::{fit, make_split, SplitPlan, TrainConfig};
use protscape::trajectory::{
    format_trajectory, parse_trajectory, sequence_string, synth_hinge, synth_two_state_labeled, HingeState, Trajectory, ALPHABET,
};

use crate::args::*;
use crate::output::{header, par_map, thread_count, write_with_header};
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

pub fn run(cmd: Cmd, m: &ArgMatches) -> Result<ExitCode> {
    let name = cmd.name();
    match cmd {
        Cmd::Gen(a) => gen(name, m, a),
        Cmd::Ingest(a) => ingest(name, m, a),
        Cmd::Scatter(a) => scatter_cmd(name, m, a),
        Cmd::Train(a) => train(name, m, a),
        Cmd::Embed(a) => embed(name, m, a),
        Cmd::Decode(a) => decode(name, m, a),
        Cmd::Interpolate(a) => interpolate(name, m, a),
        Cmd::Metrics(a) => metrics(name, m, a),
        Cmd::Verify(a) => verify(name, m, a),
    }?;
    Ok(ExitCode::SUCCESS)
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("input file not found: {}", path.display())))
    }
}

fn load_trajectory(path: &Path) -> Result<Trajectory> {
    require_file(path)?;
    Ok(parse_trajectory(path)?)
}

fn load_params(path: &Path) -> Result<ModelParams> {
    require_file(path)?;
    Ok(read_checkpoint(&std::fs::read_to_string(path)?)?)
}

fn threads() -> Result<usize> {
    thread_count().map_err(CliError::Usage)
}

/// Latent rows of a CSV written by `embed`.
fn read_latents(path: &Path) -> Result<Vec<Vec<f64>>> {
    require_file(path)?;
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.starts_with("frame,") || line.trim().is_empty() {
            continue;
        }
        let z = line
            .split(',')
            .skip(2)
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| CliError::Runtime(format!("{} line {}: {e}", path.display(), i + 1)))?;
        rows.push(z);
    }
    if rows.is_empty() {
        return Err(CliError::Runtime(format!("{} holds no latent rows", path.display())));
    }
    Ok(rows)
}

fn row_matrix(z: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((1, z.len()), z.to_vec()).expect("row vector")
}

/// `kind,i,j,value` rows of a decoded structure, each prefixed by `prefix`.
fn structure_rows(out: &mut String, prefix: &str, d: &DecodedStructure, t_hat: f64) {
    writeln!(out, "{prefix},t_hat,0,0,{t_hat}").unwrap();
    let n = d.pairdist.nrows();
    for i in 0..n {
        for j in i + 1..n {
            writeln!(out, "{prefix},pairdist,{i},{j},{}", d.pairdist[[i, j]]).unwrap();
        }
    }
    let m = d.dihedral_diff.nrows();
    for i in 0..m {
        for j in i + 1..m {
            writeln!(out, "{prefix},dihedral_diff,{i},{j},{}", d.dihedral_diff[[i, j]]).unwrap();
        }
    }
    if let Some(c) = &d.coords {
        for ((i, j), v) in c.indexed_iter() {
            writeln!(out, "{prefix},coord,{i},{j},{v}").unwrap();
        }
    }
}

fn gen(name: &str, m: &ArgMatches, a: GenArgs) -> Result<()> {
    let h = header(name, m, Some(a.seed));
    if a.hinge {
        if a.labels.is_some() {
            return Err(CliError::Usage("--labels applies to --two-state only".into()));
        }
        let traj = synth_hinge(a.n_per_arm, a.frames, a.theta_min, a.theta_max, a.noise, a.seed)?;
        write_with_header(&a.out, &h, &format_trajectory(&traj))?;
    } else {
        let (traj, states) = synth_two_state_labeled(a.n, a.frames, a.switch_prob, a.seed)?;
        write_with_header(&a.out, &h, &format_trajectory(&traj))?;
        if let Some(path) = &a.labels {
            let mut body = String::from("frame,state\n");
            for (i, s) in states.iter().enumerate() {
                let label = match s {
                    HingeState::Open => "open",
                    HingeState::Closed => "closed",
                };
                writeln!(body, "{i},{label}").unwrap();
            }
            write_with_header(path, &h, &body)?;
        }
    }
    Ok(())
}

fn ingest(name: &str, m: &ArgMatches, a: IngestArgs) -> Result<()> {
    let traj = load_trajectory(&a.input)?;
    let connected = par_map(&traj.frames, threads()?, |f| Ok::<_, CliError>(build_knn_graph(f, a.k).is_ok()))?;
    let bad: Vec<String> = connected.iter().enumerate().filter(|(_, ok)| !**ok).map(|(i, _)| i.to_string()).collect();
    let n = traj.n_residues();
    let mut pair = Vec::new();
    for f in &traj.frames {
        for i in 0..n {
            for j in i + 1..n {
                pair.push(f.distance(i, j));
            }
        }
    }
    let var: Vec<String> = traj.residue_variance().iter().map(f64::to_string).collect();
    let mut body = String::new();
    writeln!(body, "name={}", traj.name).unwrap();
    writeln!(body, "residues={n}").unwrap();
    writeln!(body, "frames={}", traj.len()).unwrap();
    writeln!(body, "sequence={}", sequence_string(traj.sequence())).unwrap();
    writeln!(body, "k={}", a.k).unwrap();
    writeln!(body, "connected_frames={}", traj.len() - bad.len()).unwrap();
    writeln!(body, "disconnected_frames={}", if bad.is_empty() { "none".to_string() } else { bad.join(",") }).unwrap();
    writeln!(body, "mean_pair_distance={}", mean(&pair)).unwrap();
    writeln!(body, "pairdist_spread={}", pairdist_spread(&traj)).unwrap();
    writeln!(body, "residue_variance={}", var.join(",")).unwrap();
    write_with_header(&a.out, &header(name, m, None), &body)?;
    Ok(())
}

fn scatter_cmd(name: &str, m: &ArgMatches, a: ScatterArgs) -> Result<()> {
    let traj = load_trajectory(&a.input)?;
    let indexed: Vec<usize> = (0..traj.len()).collect();
    let blocks = par_map(&indexed, threads()?, |&i| -> Result<String> {
        let f = &traj.frames[i];
        let g = build_knn_graph(f, a.k)?;
        let p = lazy_walk(&g.adjacency, &g.degrees)?;
        let out = scatter(&dyadic_bank(&p, a.j)?, &g.signal)?;
        let mut s = String::new();
        for (r, row) in out.coeffs.rows().into_iter().enumerate() {
            write!(s, "{i},{},{r}", f.t).unwrap();
            for v in row {
                write!(s, ",{v}").unwrap();
            }
            s.push('\n');
        }
        Ok(s)
    })?;
    let mut body = String::from("frame,t,residue");
    for key in feature_layout(a.j, ALPHABET.len()) {
        write!(body, ",\"{key}\"").unwrap();
    }
    body.push('\n');
    body.extend(blocks);
    write_with_header(&a.out, &header(name, m, None), &body)?;
    Ok(())
}

fn model_config(a: &ModelArgs, n: usize, seed: u64) -> ModelConfig {
    ModelConfig {
        k: a.k,
        j: a.j,
        t_max: a.t_max,
        learnable_scales: !a.fixed_scales,
        latent_dim: a.latent_dim,
        heads: a.heads,
        head_dim: a.head_dim,
        hidden: a.hidden,
        pe_dim: a.pe_dim,
        node_embedding: match a.node_embedding {
            NodeEmbeddingArg::Auto => NodeEmbedding::Auto,
            NodeEmbeddingArg::On => NodeEmbedding::On,
            NodeEmbeddingArg::Off => NodeEmbedding::Off,
        },
        coord_head: a.coord_head,
        seed,
        ..ModelConfig::new(n)
    }
}

fn train(name: &str, m: &ArgMatches, a: TrainArgs) -> Result<()> {
    let traj = load_trajectory(&a.input)?;
    let n_frames = traj.len();
    let split = match a.split {
        SplitKind::Windows => make_split(n_frames, a.windows, a.window_len, a.seed)?,
        SplitKind::Prefix => {
            let n_train = a.train_frames.ok_or_else(|| CliError::Usage("--split prefix needs --train-frames".into()))?;
            SplitPlan::prefix(n_frames, n_train, a.window_len)?
        }
        SplitKind::None => SplitPlan::all_train(n_frames),
    };
    let cfg = model_config(&a.model, traj.n_residues(), a.seed);
    let tc = TrainConfig {
        epochs: a.epochs,
        lr: a.lr,
        batch_size: a.batch_size,
        weights: LossWeights { alpha: a.alpha, beta: a.beta, gamma: a.gamma, literal_plus: a.paper_literal_loss },
        seed: a.seed,
        ..Default::default()
    };
    let fitted = fit(&traj, &split, cfg, &tc)?;
    let h = header(name, m, Some(a.seed));
    std::fs::create_dir_all(&a.out)?;
    write_with_header(&a.out.join("checkpoint.ckpt"), &h, &write_checkpoint(&fitted.params))?;
    let mut curve = String::from("epoch,total,time,structure,scattering,node\n");
    for e in &fitted.curve {
        let node = e.node.map_or("NA".to_string(), |v| v.to_string());
        writeln!(curve, "{},{},{},{},{},{node}", e.epoch, e.total, e.time, e.structure, e.scattering).unwrap();
    }
    write_with_header(&a.out.join("curve.csv"), &h, &curve)?;
    write_with_header(&a.out.join("split.csv"), &h, &split.to_csv())?;
    if let Some(last) = fitted.curve.last() {
        println!("epochs={} final_loss={}", fitted.curve.len(), last.total);
    }
    Ok(())
}

fn embed(name: &str, m: &ArgMatches, a: EmbedArgs) -> Result<()> {
    let traj = load_trajectory(&a.input)?;
    let params = load_params(&a.checkpoint)?;
    if traj.n_residues() != params.config.n {
        return Err(CliError::Usage(format!("checkpoint expects {} residues, trajectory has {}", params.config.n, traj.n_residues())));
    }
    let latents = par_map(&traj.frames, threads()?, |f| -> Result<Vec<f64>> {
        let z = params.embed(&params.frame_data(f)?)?;
        Ok(z.iter().copied().collect())
    })?;
    let h = header(name, m, None);
    write_with_header(&a.out, &h, &latents_csv(&traj.frames, &latents))?;
    if let Some(path) = &a.pca_out {
        let mut body = String::from("frame,t,pc_0,pc_1\n");
        for (i, (f, p)) in traj.frames.iter().zip(pca(&latents, 2)).enumerate() {
            writeln!(body, "{i},{},{},{}", f.t, p[0], p[1]).unwrap();
        }
        write_with_header(path, &h, &body)?;
    }
    Ok(())
}

fn decode(name: &str, m: &ArgMatches, a: DecodeArgs) -> Result<()> {
    let params = load_params(&a.checkpoint)?;
    let latents = read_latents(&a.latents)?;
    let blocks = par_map(&latents, threads()?, |z| -> Result<(DecodedStructure, f64)> {
        let zm = row_matrix(z);
        Ok((params.decode_latent(&zm)?, params.predict_time(&zm)?))
    })?;
    let mut body = String::from("row,kind,i,j,value\n");
    for (r, (d, t)) in blocks.iter().enumerate() {
        structure_rows(&mut body, &r.to_string(), d, *t);
    }
    write_with_header(&a.out, &header(name, m, None), &body)?;
    Ok(())
}

fn interpolate(name: &str, m: &ArgMatches, a: InterpolateArgs) -> Result<()> {
    let params = load_params(&a.checkpoint)?;
    let latents = read_latents(&a.latents)?;
    let (z_a, z_b) = if a.centroids {
        let c = cluster_centroids(&latents, 2, a.seed)?;
        (c.centroids[0].clone(), c.centroids[1].clone())
    } else {
        let (from, to) = (a.from.expect("clap requires from"), a.to.expect("clap requires to"));
        for r in [from, to] {
            if r >= latents.len() {
                return Err(CliError::Usage(format!("latent row {r} out of range ({} rows)", latents.len())));
            }
        }
        (latents[from].clone(), latents[to].clone())
    };
    let decoded = interpolate_latents(&params, &z_a, &z_b, a.steps)?;
    let mut body = String::from("step,s,kind,i,j,value\n");
    for (k, d) in decoded.iter().enumerate() {
        let s = k as f64 / (a.steps - 1) as f64;
        let z: Vec<f64> = z_a.iter().zip(&z_b).map(|(x, y)| (1.0 - s) * x + s * y).collect();
        let t = params.predict_time(&row_matrix(&z))?;
        structure_rows(&mut body, &format!("{k},{s}"), d, t);
    }
    let seed = a.centroids.then_some(a.seed);
    write_with_header(&a.out, &header(name, m, seed), &body)?;
    Ok(())
}

fn metrics(name: &str, m: &ArgMatches, a: MetricsArgs) -> Result<()> {
    let traj = load_trajectory(&a.input)?;
    let params = load_params(&a.checkpoint)?;
    if traj.n_residues() != params.config.n {
        return Err(CliError::Usage(format!("checkpoint expects {} residues, trajectory has {}", params.config.n, traj.n_residues())));
    }
    let split = match &a.split {
        Some(p) => {
            require_file(p)?;
            SplitPlan::from_csv(&std::fs::read_to_string(p)?, traj.len())?
        }
        None => SplitPlan::all_train(traj.len()),
    };
    // With nothing withheld, every frame is scored as one window.
    let split = if split.windows.is_empty() {
        SplitPlan { windows: vec![(0, traj.len())], train: Vec::new(), test: (0..traj.len()).collect() }
    } else {
        split
    };
    let report = evaluate(&params, &traj, &split, a.latent_k)?;
    let attn = attention_readout(&params, &traj)?;
    let h = header(name, m, None);
    std::fs::create_dir_all(&a.out)?;
    let kv = format!("{}attention_spearman={}\n", report.to_kv(), attn.spearman);
    write_with_header(&a.out.join("metrics.txt"), &h, &kv)?;
    write_with_header(&a.out.join("windows.csv"), &h, &report.windows_csv())?;
    let mut body = String::from("residue,score,flexibility\n");
    for (i, (s, f)) in attn.scores.iter().zip(&attn.flexibility).enumerate() {
        writeln!(body, "{i},{s},{f}").unwrap();
    }
    write_with_header(&a.out.join("attention.csv"), &h, &body)?;
    print!("{kv}");
    Ok(())
}

fn verify(name: &str, m: &ArgMatches, a: VerifyArgs) -> Result<()> {
    let checks = if a.all {
        CheckSet::ALL
    } else {
        CheckSet { frame: a.frame, iterated: a.iterated, scattering: a.scattering, wavelet: a.wavelet, perm: a.perm }
    };
    let (n_min, n_max) = a.n.map_or((a.n_min, a.n_max), |n| (n, n));
    let cfg = CampaignConfig {
        checks,
        n_min,
        n_max,
        edge_prob: a.edge_prob,
        pairs: a.pairs,
        flips: a.flips,
        trials: a.trials,
        j: a.j,
        j_values: a.j_values.clone(),
        seed: a.seed,
    };
    let report = run_campaign(&cfg)?;
    let h = header(name, m, Some(a.seed));
    std::fs::create_dir_all(&a.out)?;
    write_with_header(&a.out.join("checks.csv"), &h, &report.to_csv())?;
    write_with_header(&a.out.join("pairs.csv"), &h, &report.pairs_csv())?;
    let summary = report.summary();
    write_with_header(&a.out.join("summary.txt"), &h, &summary)?;
    print!("{summary}");
    match report.failures() {
        0 => Ok(()),
        f => Err(CliError::Runtime(format!("{f} stability checks failed"))),
    }
}
