use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trajflow::data::{slice_windows, synthesize_dataset, Pipeline, PreprocessConfig, SlicingConfig, SynthSpec, TrajectoryWindow};
use trajflow::diffcore::nn::ParamStore;
use trajflow::encoders::EncoderKind;
use trajflow::flows::FlowKind;
use trajflow::inference::{
    additive_fusion, density_raster, export_grid, fuse_rasters, grid_from_csv, sample_per_step, top_k_trajectory,
    GridFormat, GridKind, GridSpec, OccupancyGrid, PGM_MAX,
};
use trajflow::model::{DensityUnits, FlowModel, Formulation, ModelConfig};

fn config(flow: FlowKind, horizon: usize) -> ModelConfig {
    ModelConfig {
        encoder: EncoderKind::Gru,
        flow,
        formulation: Formulation::Marginal,
        horizon,
        hidden_dim: 4,
        coupling_layers: 2,
        coupling_hidden: 8,
        cnf_hidden: 8,
        cnf_depth: 2,
        ..ModelConfig::default()
    }
}

fn randomize(store: &mut ParamStore, seed: u64, scale: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for e in store.entries_mut() {
        let positive = e.name.ends_with(".gamma") || e.name.ends_with(".running_std");
        for x in e.value.data_mut() {
            *x = if positive { rng.random_range(0.7..1.3) } else { rng.random_range(-scale..scale) };
        }
    }
}

fn raw_window() -> TrajectoryWindow {
    let obs: Vec<[f64; 2]> = (0..8).map(|i| [0.4 * i as f64 - 2.8, 0.1 * i as f64 - 0.7]).collect();
    TrajectoryWindow::new("s", "a", 0, 0.4, obs, Vec::new()).unwrap()
}

fn min_max_window() -> TrajectoryWindow {
    let records = synthesize_dataset(&SynthSpec::constant_velocity(6), 3).unwrap();
    let cfg = SlicingConfig { obs_len: 8, pred_len: 4, step: 4, ..SlicingConfig::default() };
    let ws = slice_windows(&records, &cfg).unwrap();
    let p = Pipeline::fit(PreprocessConfig { min_max: true, ..PreprocessConfig::default() }, &ws).unwrap();
    p.apply(ws[0].clone()).unwrap()
}

#[test]
fn identity_model_rasters_a_standard_normal() {
    let model = FlowModel::new(config(FlowKind::Dnf, 4), 0).unwrap();
    let spec = GridSpec::centered([0.0, 0.0], 4.1, 41);
    let g = density_raster(&model, &raw_window(), 2.0, &spec).unwrap();
    assert_eq!(g.kind, GridKind::Density);
    assert_eq!(g.argmax(), (20, 20));
    for iy in 0..41 {
        for ix in 0..41 {
            let c = spec.cell_center(ix, iy);
            let pdf = (-(c[0] * c[0] + c[1] * c[1]) / 2.0).exp() / (2.0 * PI);
            assert!((g.get(ix, iy) - pdf).abs() < 1e-14);
        }
    }
}

#[test]
fn raster_is_exp_log_prob_at_cell_centers() {
    for flow in [FlowKind::Dnf, FlowKind::Cnf] {
        let mut model = FlowModel::new(config(flow, 4), 1).unwrap();
        randomize(&mut model.store, 2, 0.4);
        let w = min_max_window();
        let spec = GridSpec::centered(w.obs_world()[7], 3.0, 12);
        let g = density_raster(&model, &w, 3.0, &spec).unwrap();
        let lp = model.log_prob_world_points(&w, &spec.centers(), 3.0, DensityUnits::World).unwrap();
        for (v, l) in g.values.iter().zip(&lp) {
            assert!((v - l.exp()).abs() <= 1e-12 * l.exp().max(1.0), "{flow:?}");
        }
    }
}

#[test]
fn raster_mass_is_one_when_the_grid_covers_the_support() {
    let mut model = FlowModel::new(config(FlowKind::Dnf, 4), 4).unwrap();
    randomize(&mut model.store, 5, 0.3);
    let w = raw_window();
    let g = density_raster(&model, &w, 1.0, &GridSpec::centered([0.0, 0.0], 12.0, 240)).unwrap();
    assert!((g.mass() - 1.0).abs() <= 0.02, "{}", g.mass());
}

#[test]
fn fusion_is_invariant_to_rescaling_rasters() {
    let mut model = FlowModel::new(config(FlowKind::Dnf, 3), 6).unwrap();
    randomize(&mut model.store, 7, 0.4);
    let w = raw_window();
    let spec = GridSpec::centered([0.0, 0.0], 5.0, 20);
    let rasters: Vec<OccupancyGrid> = [0.5, 1.0, 2.5, 3.0]
        .iter()
        .map(|&s| density_raster(&model, &w, s, &spec).unwrap())
        .collect();
    let scaled: Vec<OccupancyGrid> = rasters
        .iter()
        .map(|r| OccupancyGrid { values: r.values.iter().map(|v| 7.0 * v).collect(), ..r.clone() })
        .collect();
    let a = fuse_rasters(&rasters).unwrap();
    let b = fuse_rasters(&scaled).unwrap();
    assert_eq!(a.max(), 1.0);
    for (x, y) in a.values.iter().zip(&b.values) {
        assert!((x - y).abs() < 1e-15);
    }
    let fused = additive_fusion(&model, &w, 2, &spec).unwrap();
    assert_eq!(fused.max(), 1.0);
    assert_eq!(fused.kind, GridKind::Fused);
}

#[test]
fn top_one_equals_plain_sampling() {
    let mut model = FlowModel::new(config(FlowKind::Dnf, 5), 8).unwrap();
    randomize(&mut model.store, 9, 0.4);
    let w = raw_window();
    let t = top_k_trajectory(&model, &w, 1, &mut ChaCha8Rng::seed_from_u64(10)).unwrap();
    let plain = sample_per_step(&model, &w, &mut ChaCha8Rng::seed_from_u64(10)).unwrap();
    assert_eq!(t.path, plain);
    assert_eq!(t.path.len(), 5);
}

#[test]
fn top_k_keeps_the_most_likely_candidate() {
    let mut model = FlowModel::new(config(FlowKind::Cnf, 4), 11).unwrap();
    randomize(&mut model.store, 12, 0.4);
    let w = min_max_window();
    let a = top_k_trajectory(&model, &w, 7, &mut ChaCha8Rng::seed_from_u64(13)).unwrap();
    let b = top_k_trajectory(&model, &w, 7, &mut ChaCha8Rng::seed_from_u64(13)).unwrap();
    assert_eq!(a, b);
    for step in &a.steps {
        assert_eq!(step.candidates.len(), 7);
        let best = step.log_probs[step.chosen];
        assert!(step.log_probs.iter().all(|&l| l <= best));
        assert!(step.log_probs[..step.chosen].iter().all(|&l| l < best));
    }
    for (p, step) in a.path.iter().zip(&a.steps) {
        assert_eq!(*p, w.preprocess.to_world(step.candidates[step.chosen]));
    }
}

#[test]
fn exported_files_match_the_grid() {
    let mut model = FlowModel::new(config(FlowKind::Dnf, 3), 14).unwrap();
    randomize(&mut model.store, 15, 0.4);
    let w = raw_window();
    let spec = GridSpec { resolution: 9, ..GridSpec::centered([0.0, 0.0], 4.0, 9) };
    let fused = additive_fusion(&model, &w, 3, &spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("g.csv");
    let pgm = dir.path().join("g.pgm");
    export_grid(&fused, &csv, GridFormat::Csv).unwrap();
    export_grid(&fused, &pgm, GridFormat::Pgm).unwrap();
    let back = grid_from_csv(&std::fs::read_to_string(&csv).unwrap()).unwrap();
    assert_eq!(back, fused);

    let text = std::fs::read_to_string(&pgm).unwrap();
    let mut tokens = text.split_whitespace();
    assert_eq!(tokens.next(), Some("P2"));
    assert_eq!(tokens.next(), Some("9"));
    assert_eq!(tokens.next(), Some("9"));
    assert_eq!(tokens.next(), Some("65535"));
    let pixels: Vec<u32> = tokens.map(|t| t.parse().unwrap()).collect();
    assert_eq!(pixels.len(), 81);
    assert_eq!(pixels.iter().max(), Some(&PGM_MAX));
    for iy in 0..9 {
        for ix in 0..9 {
            let px = pixels[(8 - iy) * 9 + ix] as f64;
            assert!((px - fused.get(ix, iy) * PGM_MAX as f64).abs() <= 0.5);
        }
    }
    let missing = dir.path().join("no/such/dir/g.csv");
    let err = export_grid(&fused, &missing, GridFormat::Csv).unwrap_err();
    assert!(err.to_string().contains("no/such/dir"), "{err}");
}
