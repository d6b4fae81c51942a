//! Train on the constant-velocity process and compare the held-out NLL with
//! the exact posterior predictive, step by step.
//!
//! Usage: `constant_velocity [gru|cde] [dnf|cnf] [epochs]`

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use trajflow::data::{
    slice_windows, split_windows, synthesize_dataset, Pipeline, PreprocessConfig, SlicingConfig, SynthSpec,
    TrajectoryWindow, TruePredictive,
};
use trajflow::encoders::EncoderKind;
use trajflow::flows::FlowKind;
use trajflow::model::{train, FlowModel, ModelConfig, TrainConfig};

const HORIZON: usize = 12;

fn main() -> trajflow::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let encoder = match args.get(1).map(String::as_str) {
        Some("cde") => EncoderKind::Cde,
        _ => EncoderKind::Gru,
    };
    let flow = match args.get(2).map(String::as_str) {
        Some("cnf") => FlowKind::Cnf,
        _ => FlowKind::Dnf,
    };
    let epochs = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(100);
    let width = |key: &str, default: usize| std::env::var(key).ok().and_then(|v| v.parse().ok()).unwrap_or(default);

    let spec = SynthSpec::constant_velocity(2000);
    let records = synthesize_dataset(&spec, 0)?;
    let windows = slice_windows(&records, &SlicingConfig::default())?;
    let (train_raw, test_raw) = split_windows(windows, 0.8, 0)?;
    let pipeline = Pipeline::fit(PreprocessConfig::default(), &train_raw)?;
    let train_ws = pipeline.apply_all(train_raw)?;
    let test_ws = pipeline.apply_all(test_raw.clone())?;

    let config = ModelConfig {
        encoder,
        flow,
        hidden_dim: width("HIDDEN", 8),
        cde_width: width("CDE_WIDTH", 8),
        coupling_layers: width("LAYERS", 4),
        coupling_hidden: width("COUPLING_HIDDEN", 16),
        cnf_hidden: width("CNF_HIDDEN", 16),
        cnf_depth: width("CNF_DEPTH", 2),
        ..ModelConfig::default()
    };
    let mut model = FlowModel::new(config, 0)?;
    let training = TrainConfig {
        epochs,
        learning_rate: std::env::var("LR").ok().and_then(|v| v.parse().ok()).unwrap_or(1e-3),
        lr_decay: std::env::var("DECAY").ok().and_then(|v| v.parse().ok()).unwrap_or(0.995),
        batch_size: width("BATCH", 64),
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let report = train(&mut model, &train_ws, &training)?;
    println!(
        "{epochs} epochs in {:.1} s, final train loss {:.4}",
        start.elapsed().as_secs_f64(),
        report.epoch_losses.last().copied().unwrap_or(f64::NAN)
    );

    let rows = per_step(&model, &spec, &test_ws, &test_raw)?;
    let model_nll = rows.iter().map(|r| r.0).sum::<f64>() / HORIZON as f64;
    let true_nll = rows.iter().map(|r| r.1).sum::<f64>() / HORIZON as f64;
    println!("held-out NLL {model_nll:.4}, exact predictive {true_nll:.4}, gap {:.4}", model_nll - true_nll);
    for (k, (m, t)) in rows.iter().enumerate() {
        println!("  s={:2} model {m:.4} exact {t:.4} gap {:.4}", k + 1, m - t);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(70);
    println!("mean of 100 samples at s = {HORIZON}, offset from the exact mean in predictive std:");
    for (w, raw) in test_ws.iter().zip(&test_raw).take(10) {
        let exact = TruePredictive::constant_velocity(&spec, &raw.obs, HORIZON)?;
        let draws = model.sample_future(w, HORIZON as f64, 100, &mut rng)?;
        let sd = exact.var[HORIZON - 1].sqrt();
        let off: Vec<f64> = (0..2)
            .map(|ax| (draws.iter().map(|p| p[ax]).sum::<f64>() / 100.0 - exact.mean[HORIZON - 1][ax]) / sd)
            .collect();
        println!("  ({:+.3}, {:+.3})  std {sd:.3} m", off[0], off[1]);
    }
    Ok(())
}

/// Mean model and exact NLL per future step.
fn per_step(
    model: &FlowModel,
    spec: &SynthSpec,
    windows: &[TrajectoryWindow],
    raw: &[TrajectoryWindow],
) -> trajflow::Result<Vec<(f64, f64)>> {
    let refs: Vec<_> = windows.iter().collect();
    let log_probs = model.log_prob_targets(&refs)?;
    let n = raw.len() as f64;
    let mut rows = vec![(0.0, 0.0); HORIZON];
    for (i, w) in raw.iter().enumerate() {
        let exact = TruePredictive::constant_velocity(spec, &w.obs, HORIZON)?;
        for (k, nll) in exact.nll(&w.future).iter().enumerate() {
            rows[k].0 -= log_probs[i * HORIZON + k] / n;
            rows[k].1 += nll / n;
        }
    }
    Ok(rows)
}
