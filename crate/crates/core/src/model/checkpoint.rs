//! Plain-text checkpoints. Floats are written with the shortest
//! round-tripping representation, so save → load is exact.
//!
//! ```text
//! PSCAPE-CKPT v1
//! config n=10
//! ...
//! norm t_min=0 t_max=199 dist_scale=13.2
//! pd_shift <values>
//! pd_scale <values>
//! scaling 10 320        (optional; shift and scale rows follow)
//! <shift values>
//! <scale values>
//! param theta 5 16
//! <values>
//! end
//! ```

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;

use super::{FeatureScaling, ModelConfig, ModelParams, Normalization, NodeEmbedding, ParamStore};
use crate::error::{Error, Result};

pub const CHECKPOINT_HEADER: &str = "PSCAPE-CKPT v1";

fn config_pairs(c: &ModelConfig) -> Vec<(&'static str, String)> {
    let ne = match c.node_embedding {
        NodeEmbedding::Auto => "auto",
        NodeEmbedding::On => "on",
        NodeEmbedding::Off => "off",
    };
    vec![
        ("n", c.n.to_string()),
        ("k", c.k.to_string()),
        ("j", c.j.to_string()),
        ("t_max", c.t_max.to_string()),
        ("learnable_scales", c.learnable_scales.to_string()),
        ("selection_sharpness", c.selection_sharpness.to_string()),
        ("pe_dim", c.pe_dim.to_string()),
        ("heads", c.heads.to_string()),
        ("head_dim", c.head_dim.to_string()),
        ("residue_out", c.residue_out.to_string()),
        ("aa_out", c.aa_out.to_string()),
        ("latent_dim", c.latent_dim.to_string()),
        ("hidden", c.hidden.to_string()),
        ("node_embedding", ne.to_string()),
        ("coord_head", c.coord_head.to_string()),
        ("seed", c.seed.to_string()),
    ]
}

fn ckpt_err(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| ckpt_err(format!("bad value for {key}: {v:?}")))
}

fn apply_config(c: &mut ModelConfig, key: &str, v: &str) -> Result<()> {
    match key {
        "n" => c.n = parse_num(key, v)?,
        "k" => c.k = parse_num(key, v)?,
        "j" => c.j = parse_num(key, v)?,
        "t_max" => c.t_max = parse_num(key, v)?,
        "learnable_scales" => c.learnable_scales = parse_num(key, v)?,
        "selection_sharpness" => c.selection_sharpness = parse_num(key, v)?,
        "pe_dim" => c.pe_dim = parse_num(key, v)?,
        "heads" => c.heads = parse_num(key, v)?,
        "head_dim" => c.head_dim = parse_num(key, v)?,
        "residue_out" => c.residue_out = parse_num(key, v)?,
        "aa_out" => c.aa_out = parse_num(key, v)?,
        "latent_dim" => c.latent_dim = parse_num(key, v)?,
        "hidden" => c.hidden = parse_num(key, v)?,
        "node_embedding" => {
            c.node_embedding = match v {
                "auto" => NodeEmbedding::Auto,
                "on" => NodeEmbedding::On,
                "off" => NodeEmbedding::Off,
                _ => return Err(ckpt_err(format!("bad node_embedding {v:?}"))),
            }
        }
        "coord_head" => c.coord_head = parse_num(key, v)?,
        "seed" => c.seed = parse_num(key, v)?,
        _ => return Err(ckpt_err(format!("unknown config key {key:?}"))),
    }
    Ok(())
}

pub fn write_checkpoint(params: &ModelParams) -> String {
    let mut s = String::new();
    writeln!(s, "{CHECKPOINT_HEADER}").unwrap();
    for (k, v) in config_pairs(&params.config) {
        writeln!(s, "config {k}={v}").unwrap();
    }
    let nm = &params.norm;
    writeln!(s, "norm t_min={} t_max={} dist_scale={}", nm.t_min, nm.t_max, nm.dist_scale).unwrap();
    for (tag, v) in [("pd_shift", &nm.pd_shift), ("pd_scale", &nm.pd_scale)] {
        let vals: Vec<String> = v.iter().map(|x| x.to_string()).collect();
        writeln!(s, "{tag} {}", vals.join(" ")).unwrap();
    }
    if let Some(sc) = &params.scaling {
        writeln!(s, "scaling {} {}", sc.shift.nrows(), sc.shift.ncols()).unwrap();
        for m in [&sc.shift, &sc.scale] {
            let vals: Vec<String> = m.iter().map(|x| x.to_string()).collect();
            writeln!(s, "{}", vals.join(" ")).unwrap();
        }
    }
    for (name, v) in params.store.names.iter().zip(&params.store.values) {
        writeln!(s, "param {name} {} {}", v.nrows(), v.ncols()).unwrap();
        let vals: Vec<String> = v.iter().map(|x| x.to_string()).collect();
        writeln!(s, "{}", vals.join(" ")).unwrap();
    }
    s.push_str("end\n");
    s
}

pub fn read_checkpoint(text: &str) -> Result<ModelParams> {
    let mut lines = text.lines().skip_while(|l| l.starts_with('#'));
    if lines.next().map(str::trim) != Some(CHECKPOINT_HEADER) {
        return Err(ckpt_err(format!("missing header {CHECKPOINT_HEADER:?}")));
    }
    let mut config = ModelConfig::new(0);
    let mut store = ParamStore { names: Vec::new(), values: Vec::new() };
    let mut scaling = None;
    let (mut norm_vals, mut pd_shift, mut pd_scale) = (None, None, None);
    let mut ended = false;
    while let Some(line) = lines.next() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (tag, rest) = line.split_once(' ').unwrap_or((line, ""));
        match tag {
            "config" => {
                let (k, v) = rest.split_once('=').ok_or_else(|| ckpt_err(format!("bad config line {line:?}")))?;
                apply_config(&mut config, k, v)?;
            }
            "norm" => {
                let mut vals = [f64::NAN; 3];
                for kv in rest.split_whitespace() {
                    let (k, v) = kv.split_once('=').ok_or_else(|| ckpt_err(format!("bad norm entry {kv:?}")))?;
                    let slot = match k {
                        "t_min" => 0,
                        "t_max" => 1,
                        "dist_scale" => 2,
                        _ => return Err(ckpt_err(format!("unknown norm key {k:?}"))),
                    };
                    vals[slot] = parse_num(k, v)?;
                }
                if vals.iter().any(|v| v.is_nan()) {
                    return Err(ckpt_err("incomplete norm line"));
                }
                norm_vals = Some(vals);
            }
            "pd_shift" | "pd_scale" => {
                let vals = rest.split_whitespace().map(|x| parse_num::<f64>(tag, x)).collect::<Result<Vec<_>>>()?;
                if tag == "pd_shift" {
                    pd_shift = Some(vals);
                } else {
                    pd_scale = Some(vals);
                }
            }
            "scaling" => {
                let parts: Vec<&str> = rest.split_whitespace().collect();
                if parts.len() != 2 {
                    return Err(ckpt_err(format!("bad scaling line {line:?}")));
                }
                let rows: usize = parse_num("rows", parts[0])?;
                let cols: usize = parse_num("cols", parts[1])?;
                let mut mats = Vec::with_capacity(2);
                for what in ["shift", "scale"] {
                    let data = lines.next().ok_or_else(|| ckpt_err(format!("missing scaling {what}")))?;
                    let vals = data.split_whitespace().map(|x| parse_num::<f64>(what, x)).collect::<Result<Vec<_>>>()?;
                    mats.push(
                        Array2::from_shape_vec((rows, cols), vals)
                            .map_err(|_| ckpt_err(format!("scaling {what}: value count does not match {rows}x{cols}")))?,
                    );
                }
                let scale = mats.pop().unwrap();
                let shift = mats.pop().unwrap();
                scaling = Some(FeatureScaling { shift, scale });
            }
            "param" => {
                let parts: Vec<&str> = rest.split_whitespace().collect();
                if parts.len() != 3 {
                    return Err(ckpt_err(format!("bad param line {line:?}")));
                }
                let rows: usize = parse_num("rows", parts[1])?;
                let cols: usize = parse_num("cols", parts[2])?;
                let data = lines.next().ok_or_else(|| ckpt_err(format!("missing values for {}", parts[0])))?;
                let vals = data
                    .split_whitespace()
                    .map(|x| parse_num::<f64>(parts[0], x))
                    .collect::<Result<Vec<_>>>()?;
                let arr = Array2::from_shape_vec((rows, cols), vals)
                    .map_err(|_| ckpt_err(format!("{}: value count does not match {rows}x{cols}", parts[0])))?;
                store.names.push(parts[0].to_string());
                store.values.push(arr);
            }
            "end" => {
                ended = true;
                break;
            }
            _ => return Err(ckpt_err(format!("unexpected line {line:?}"))),
        }
    }
    if !ended {
        return Err(ckpt_err("truncated checkpoint (no end marker)"));
    }
    let vals = norm_vals.ok_or_else(|| ckpt_err("missing norm line"))?;
    let norm = Normalization {
        t_min: vals[0],
        t_max: vals[1],
        dist_scale: vals[2],
        pd_shift: pd_shift.ok_or_else(|| ckpt_err("missing pd_shift line"))?,
        pd_scale: pd_scale.ok_or_else(|| ckpt_err("missing pd_scale line"))?,
    };
    let mut params = ModelParams::from_store(config, norm, store)?;
    params.scaling = scaling;
    Ok(params)
}

pub fn save_checkpoint(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, write_checkpoint(params))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams> {
    read_checkpoint(&std::fs::read_to_string(path)?)
}
