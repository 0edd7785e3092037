use ndarray::Array2;

use protscape::eval::{attention_readout, evaluate, interpolate_latents, short_to_long, wild_type_to_mutant};
use protscape::model::{ModelConfig, ModelParams, Normalization};
use protscape::trajectory::{synth_hinge, AminoAcid, Trajectory};
use protscape::training::{fit, make_split, SplitPlan, TrainConfig};

fn toy_config(n: usize) -> ModelConfig {
    ModelConfig { k: 3, j: 2, t_max: 4, pe_dim: 2, heads: 2, head_dim: 3, latent_dim: 4, hidden: 8, ..ModelConfig::new(n) }
}

fn quick() -> TrainConfig {
    TrainConfig { epochs: 3, batch_size: 8, ..TrainConfig::default() }
}

#[test]
fn interpolation_endpoints_match_direct_decodes() {
    let traj = synth_hinge(3, 24, 0.4, 1.4, 0.05, 3).unwrap();
    let fitted = fit(&traj, &SplitPlan::all_train(24), toy_config(6), &quick()).unwrap();
    let p = &fitted.params;
    let za = vec![0.3, -1.2, 0.7, 2.0];
    let zb = vec![-0.5, 0.4, 1.1, -0.9];
    let path = interpolate_latents(p, &za, &zb, 2).unwrap();
    let row = |z: &[f64]| Array2::from_shape_vec((1, z.len()), z.to_vec()).unwrap();
    assert_eq!(path[0], p.decode_latent(&row(&za)).unwrap());
    assert_eq!(path[1], p.decode_latent(&row(&zb)).unwrap());

    let flat = interpolate_latents(p, &za, &za, 5).unwrap();
    assert!(flat.iter().all(|d| *d == flat[0]));
    assert!(interpolate_latents(p, &za, &zb, 1).is_err());
    assert!(interpolate_latents(p, &za, &zb[..3], 3).is_err());
}

#[test]
fn zero_queries_and_keys_give_uniform_attention() {
    let traj = synth_hinge(3, 10, 0.4, 1.4, 0.05, 4).unwrap();
    let mut params = ModelParams::init(toy_config(6), Normalization::fit(&traj.frames).unwrap()).unwrap();
    for (name, v) in params.store.names.iter().zip(params.store.values.iter_mut()) {
        if name.starts_with("residue.") && (name.ends_with(".q") || name.ends_with(".k")) {
            v.fill(0.0);
        }
    }
    let r = attention_readout(&params, &traj).unwrap();
    assert!(r.scores.iter().all(|s| (s - 1.0 / 6.0).abs() < 1e-12));

    let trained = fit(&traj, &SplitPlan::all_train(10), toy_config(6), &quick()).unwrap();
    let r = attention_readout(&trained.params, &traj).unwrap();
    assert!((r.scores.iter().sum::<f64>() - 1.0).abs() < 1e-10);
    assert_eq!(r.flexibility, traj.residue_variance());
}

fn substitute(traj: &Trajectory, residue: usize) -> Trajectory {
    let mut out = traj.clone();
    let original = out.frames[0].sequence[residue];
    let swap = if original == AminoAcid::from_code('W').unwrap() { 'A' } else { 'W' };
    for f in &mut out.frames {
        f.sequence[residue] = AminoAcid::from_code(swap).unwrap();
    }
    out
}

#[test]
fn mutant_identical_to_wild_type_matches_plain_evaluation() {
    let traj = synth_hinge(3, 40, 0.4, 1.4, 0.05, 5).unwrap();
    let split = make_split(40, 2, 4, 5).unwrap();
    let r = wild_type_to_mutant(&traj, &traj, &split, toy_config(6), &quick(), 3).unwrap();
    let direct = evaluate(&r.fitted.params, &traj, &split, 3).unwrap();
    assert_eq!(r.metrics, direct);

    let short = synth_hinge(3, 30, 0.4, 1.4, 0.05, 5).unwrap();
    assert!(wild_type_to_mutant(&traj, &short, &split, toy_config(6), &quick(), 3).is_err());
}

#[test]
fn arm_tip_substitution_keeps_latents_overlapping() {
    let traj = synth_hinge(5, 150, 0.4, 1.4, 0.1, 7).unwrap();
    let split = make_split(150, 10, 5, 7).unwrap();
    let mutant = substitute(&traj, 9);
    let r = wild_type_to_mutant(&traj, &mutant, &split, ModelConfig::new(10), &TrainConfig::default(), 5).unwrap();
    assert!(r.overlaps(2.0), "cross {} within {}", r.cross_distance, r.within_spread);
}

#[test]
fn short_to_long_reports_every_unseen_window() {
    let traj = synth_hinge(5, 300, 0.4, 1.4, 0.1, 7).unwrap();
    let r = short_to_long(&traj, 30, 10, ModelConfig::new(10), &TrainConfig::default(), 5).unwrap();
    assert_eq!(r.metrics.windows.len(), 27);
    assert_eq!(r.fitted.curve.len(), TrainConfig::default().epochs);
    assert!(r.metrics.mae_pairdist.mean.is_finite() && r.metrics.time_spearman.is_finite());
}

