use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trajflow::data::{
    slice_windows, split_windows, synthesize_dataset, Pipeline, PreprocessConfig, SlicingConfig, SynthSpec,
    TrajectoryWindow,
};
use trajflow::diffcore::nn::ParamStore;
use trajflow::diffcore::Tensor;
use trajflow::Result;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random(rng: &mut ChaCha8Rng, r: usize, c: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::matrix(r, c, (0..r * c).map(|_| rng.random_range(lo..hi)).collect()).expect("shape")
}

/// Random weights everywhere, batch-norm scales kept away from zero.
pub fn randomize(store: &mut ParamStore, rng: &mut ChaCha8Rng, scale: f64) {
    for e in store.entries_mut() {
        let positive = e.name.ends_with(".gamma") || e.name.ends_with(".running_std");
        for x in e.value.data_mut() {
            *x = if positive {
                rng.random_range(0.6..1.4)
            } else {
                rng.random_range(-scale..scale)
            };
        }
    }
}

/// Gaussian elimination with partial pivoting; returns the solution and
/// the determinant.
pub fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> (Vec<f64>, f64) {
    let n = b.len();
    let mut det = 1.0;
    for col in 0..n {
        let p = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        if p != col {
            a.swap(col, p);
            b.swap(col, p);
            det = -det;
        }
        det *= a[col][col];
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    (x, det)
}

/// Central-difference Jacobian of a map `R^D → R^D`.
pub fn fd_jacobian(f: impl Fn(&[f64]) -> Vec<f64>, x: &[f64], eps: f64) -> Vec<Vec<f64>> {
    let d = x.len();
    let mut j = vec![vec![0.0; d]; d];
    for c in 0..d {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[c] += eps;
        xm[c] -= eps;
        let (fp, fm) = (f(&xp), f(&xm));
        for r in 0..d {
            j[r][c] = (fp[r] - fm[r]) / (2.0 * eps);
        }
    }
    j
}

/// `‖a − b‖ / ‖b‖`.
pub fn rel_norm(a: &[f64], b: &[f64]) -> f64 {
    let num = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    num / b.iter().map(|y| y * y).sum::<f64>().sqrt().max(1e-300)
}

/// Windows of a synthetic process split 80/20, preprocessed, with the raw
/// test windows kept for the exact predictive.
pub struct Split {
    pub spec: SynthSpec,
    pub test_raw: Vec<TrajectoryWindow>,
    pub train: Vec<TrajectoryWindow>,
    pub test: Vec<TrajectoryWindow>,
    pub pipeline: Pipeline,
}

/// One 8 + 12 window per agent, rotated and centered.
pub fn synthetic_split(spec: SynthSpec, seed: u64) -> Result<Split> {
    let records = synthesize_dataset(&spec, seed)?;
    let windows = slice_windows(&records, &SlicingConfig::default())?;
    let (train_raw, test_raw) = split_windows(windows, 0.8, seed)?;
    let pipeline = Pipeline::fit(PreprocessConfig::default(), &train_raw)?;
    Ok(Split {
        spec,
        train: pipeline.apply_all(train_raw)?,
        test: pipeline.apply_all(test_raw.clone())?,
        test_raw,
        pipeline,
    })
}
