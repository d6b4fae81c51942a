//! Byte-level reproducibility of the command pipeline and the optional
//! dataset smoke run.

use std::fs;
use std::path::{Path, PathBuf};

use trajflow::cli::commands::{cmd_eval, cmd_sample, cmd_train, LOSS_TRACE, REPORT, SAMPLES};
use trajflow::cli::RunConfig;
use trajflow::model::{load_checkpoint, save_checkpoint};
use trajflow::{Error, Result};

use super::Report;

const RUN: &str = r#"
seed = 17

[data]
synthetic = { process = { kind = "constant_velocity", position_std = 5.0, speed_std = 1.0 }, agents = 80, length = 20, frame_period = 0.4, noise = 0.1 }

[model]
hidden_dim = 8
coupling_layers = 4
coupling_hidden = 16

[train]
epochs = 5
batch_size = 32

[eval]
n_best_of = 5
n_distribution = 40
max_windows = 8

[sample]
k = 4
max_windows = 3
n_samples = 2
"#;

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn pipeline(text: &str, out: PathBuf) -> Result<RunConfig> {
    let mut cfg = RunConfig::from_toml(text)?;
    cfg.out_dir = out;
    cmd_train(&cfg)?;
    cmd_sample(&cfg)?;
    cmd_eval(&cfg)?;
    Ok(cfg)
}

fn scratch() -> Result<tempfile::TempDir> {
    tempfile::tempdir().map_err(|e| Error::io(Path::new("tempdir"), e))
}

pub fn determinism(report: &mut Report) -> Result<()> {
    let dir = scratch()?;
    let a = pipeline(RUN, dir.path().join("a"))?;
    let b = pipeline(RUN, dir.path().join("b"))?;
    for (what, file) in [("loss trace", LOSS_TRACE), ("samples", SAMPLES), ("report", REPORT)] {
        let (x, y) = (read(&a.out_dir.join(file))?, read(&b.out_dir.join(file))?);
        report.check(
            format!("{what} ({file})"),
            x == y && !x.is_empty(),
            format!("{} bytes, identical across two seeded runs: {}", x.len(), x == y),
        );
    }

    let original = load_checkpoint(&a.checkpoint_path())?;
    let copy = dir.path().join("copy.json");
    save_checkpoint(&original, &copy)?;
    let back = load_checkpoint(&copy)?;
    let bits = |m: &trajflow::model::FlowModel| -> Vec<(String, Vec<u64>)> {
        m.store
            .entries()
            .iter()
            .map(|e| (e.name.clone(), e.value.data().iter().map(|v| v.to_bits()).collect()))
            .collect()
    };
    let same = bits(&original) == bits(&back);
    let count: usize = original.store.entries().iter().map(|e| e.value.numel()).sum();
    report.check(
        "checkpoint round trip",
        same && read(&a.checkpoint_path())? == read(&b.checkpoint_path())?,
        format!("{count} parameters restored bit for bit: {same}"),
    );
    Ok(())
}

pub fn dataset_smoke(report: &mut Report) -> Result<()> {
    let Ok(tracks) = std::env::var("TRAJFLOW_IND_TRACKS") else {
        report.skip("set TRAJFLOW_IND_TRACKS to an inD tracks.csv to run");
        return Ok(());
    };
    let text = format!(
        "seed = 1\n[data]\npath = {tracks:?}\nadapter = \"ind\"\n[train]\nepochs = 1\n[eval]\nmax_windows = 50\n"
    );
    let dir = scratch()?;
    let mut cfg = RunConfig::from_toml(&text)?;
    cfg.out_dir = dir.path().to_path_buf();
    let outcome = cmd_train(&cfg)?;
    let loss = outcome.report.epoch_losses.first().copied().unwrap_or(f64::NAN);
    report.check("one epoch", loss.is_finite(), format!("epoch loss {loss:.4}"));
    let rows = cmd_eval(&cfg)?;
    let names: Vec<&str> = rows.iter().map(|r| r.metric.as_str()).collect();
    let all = ["min_ade", "min_fde", "rmse", "crps"].iter().all(|m| names.contains(m));
    report.check("eval metrics", all, format!("report rows {names:?}"));
    Ok(())
}
