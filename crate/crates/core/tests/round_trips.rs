use protscape::diffusion::lazy_walk;
use protscape::graph::build_knn_graph;
use protscape::model::{load_checkpoint, save_checkpoint, ModelConfig};
use protscape::scattering::{dyadic_bank, scatter};
use protscape::training::{fit, SplitPlan, TrainConfig};
use protscape::trajectory::{parse_trajectory, synth_hinge, synth_two_state, write_trajectory};

#[test]
fn trajectory_file_round_trip_is_lossless() {
    let dir = tempfile::tempdir().unwrap();
    for traj in [synth_hinge(4, 12, 0.4, 1.4, 0.1, 2).unwrap(), synth_two_state(8, 9, 0.2, 3).unwrap()] {
        let path = dir.path().join(format!("{}.traj", traj.name));
        write_trajectory(&traj, &path).unwrap();
        let back = parse_trajectory(&path).unwrap();
        assert_eq!(back.frames, traj.frames);
    }
}

#[test]
fn scattering_survives_a_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let traj = synth_hinge(3, 5, 0.4, 1.4, 0.1, 4).unwrap();
    let path = dir.path().join("h.traj");
    write_trajectory(&traj, &path).unwrap();
    let back = parse_trajectory(&path).unwrap();
    for (a, b) in traj.frames.iter().zip(&back.frames) {
        let coeffs = |f| {
            let g = build_knn_graph(f, 3).unwrap();
            let p = lazy_walk(&g.adjacency, &g.degrees).unwrap();
            scatter(&dyadic_bank(&p, 3).unwrap(), &g.signal).unwrap().coeffs
        };
        assert_eq!(coeffs(a), coeffs(b));
    }
}

#[test]
fn checkpoint_round_trip_reproduces_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let traj = synth_hinge(3, 16, 0.4, 1.4, 0.05, 5).unwrap();
    let cfg = ModelConfig { k: 3, j: 2, t_max: 4, latent_dim: 4, hidden: 8, ..ModelConfig::new(6) };
    let train = TrainConfig { epochs: 2, batch_size: 8, ..TrainConfig::default() };
    let fitted = fit(&traj, &SplitPlan::all_train(16), cfg, &train).unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&fitted.params, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    for f in &traj.frames {
        let d = fitted.params.frame_data(f).unwrap();
        assert_eq!(fitted.params.predict_frame(&d).unwrap(), loaded.predict_frame(&loaded.frame_data(f).unwrap()).unwrap());
    }
}
