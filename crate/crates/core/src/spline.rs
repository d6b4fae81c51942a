//! Natural cubic splines used as the control path of the CDE encoder.
//!
//! Piece `i` covers `[tᵢ, tᵢ₊₁]` and is stored in its local coordinate
//! `τ = (t − tᵢ)/(tᵢ₊₁ − tᵢ) ∈ [0, 1]` as `α + βτ + γτ² + δτ³`.

use crate::error::{Error, Result};

/// Solve a tridiagonal system with the Thomas algorithm.
///
/// `sub[i]` multiplies `x[i]` in row `i + 1`; `sup[i]` multiplies `x[i + 1]`
/// in row `i`.
pub fn solve_tridiagonal(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    if n == 0 || sub.len() + 1 != n || sup.len() + 1 != n || rhs.len() != n {
        return Err(Error::contract(format!(
            "tridiagonal bands of length {}/{}/{} do not fit a system of size {n}",
            sub.len(),
            diag.len(),
            sup.len()
        )));
    }
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut denom = diag[0];
    for i in 0..n {
        if i > 0 {
            denom = diag[i] - sub[i - 1] * c[i - 1];
        }
        if denom == 0.0 {
            return Err(Error::Degenerate("singular tridiagonal system".into()));
        }
        if i + 1 < n {
            c[i] = sup[i] / denom;
        }
        let prev = if i > 0 { sub[i - 1] * d[i - 1] } else { 0.0 };
        d[i] = (rhs[i] - prev) / denom;
    }
    for i in (0..n - 1).rev() {
        d[i] -= c[i] * d[i + 1];
    }
    Ok(d)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplinePath {
    knot_times: Vec<f64>,
    channels: usize,
    /// `[piece][α, β, γ, δ][channel]`, flattened.
    coeffs: Vec<f64>,
    /// `dC/dt` at each knot, `[knot][channel]`, flattened.
    slopes: Vec<f64>,
}

/// Fit one natural cubic spline per channel through `values[k]` at `times[k]`.
pub fn fit_natural_cubic(values: &[Vec<f64>], times: &[f64]) -> Result<SplinePath> {
    let m = times.len();
    if m < 2 {
        return Err(Error::contract("a spline needs at least two knots"));
    }
    if values.len() != m {
        return Err(Error::contract(format!("{} values for {m} knot times", values.len())));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::contract("knot times must be strictly increasing"));
    }
    let v = values[0].len();
    if v == 0 || values.iter().any(|c| c.len() != v) {
        return Err(Error::contract("knot values must share a nonzero channel count"));
    }

    let h: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
    let inv: Vec<f64> = h.iter().map(|x| 1.0 / x).collect();
    let mut diag = vec![0.0; m];
    diag[0] = 2.0 * inv[0];
    diag[m - 1] = 2.0 * inv[m - 2];
    for i in 1..m - 1 {
        diag[i] = 2.0 * (inv[i - 1] + inv[i]);
    }
    let off = inv.clone();

    let mut slopes = vec![0.0; m * v];
    let mut rhs = vec![0.0; m];
    for ch in 0..v {
        let c = |k: usize| values[k][ch];
        rhs[0] = 3.0 * (c(1) - c(0)) * inv[0] * inv[0];
        rhs[m - 1] = 3.0 * (c(m - 1) - c(m - 2)) * inv[m - 2] * inv[m - 2];
        for i in 1..m - 1 {
            rhs[i] = 3.0
                * ((c(i) - c(i - 1)) * inv[i - 1] * inv[i - 1]
                    + (c(i + 1) - c(i)) * inv[i] * inv[i]);
        }
        let d = solve_tridiagonal(&off, &diag, &off, &rhs)?;
        for (k, dk) in d.into_iter().enumerate() {
            slopes[k * v + ch] = dk;
        }
    }

    let n = m - 1;
    let mut coeffs = vec![0.0; n * 4 * v];
    for i in 0..n {
        for ch in 0..v {
            let (c0, c1) = (values[i][ch], values[i + 1][ch]);
            let d0 = h[i] * slopes[i * v + ch];
            let d1 = h[i] * slopes[(i + 1) * v + ch];
            let base = i * 4 * v + ch;
            coeffs[base] = c0;
            coeffs[base + v] = d0;
            coeffs[base + 2 * v] = 3.0 * (c1 - c0) - 2.0 * d0 - d1;
            coeffs[base + 3 * v] = 2.0 * (c0 - c1) + d0 + d1;
        }
    }
    Ok(SplinePath {
        knot_times: times.to_vec(),
        channels: v,
        coeffs,
        slopes,
    })
}

impl SplinePath {
    pub fn knot_times(&self) -> &[f64] {
        &self.knot_times
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pieces(&self) -> usize {
        self.knot_times.len() - 1
    }

    /// `dC/dt` at knot `k`.
    pub fn knot_derivative(&self, k: usize) -> &[f64] {
        &self.slopes[k * self.channels..(k + 1) * self.channels]
    }

    /// `[α, β, γ, δ]` of piece `i`, each of length `channels`.
    pub fn piece(&self, i: usize) -> [&[f64]; 4] {
        let v = self.channels;
        let b = i * 4 * v;
        [
            &self.coeffs[b..b + v],
            &self.coeffs[b + v..b + 2 * v],
            &self.coeffs[b + 2 * v..b + 3 * v],
            &self.coeffs[b + 3 * v..b + 4 * v],
        ]
    }

    /// Piece index and local coordinate for `t`.
    pub fn locate(&self, t: f64) -> Result<(usize, f64)> {
        let ts = &self.knot_times;
        let (lo, hi) = (ts[0], ts[ts.len() - 1]);
        if !(t >= lo && t <= hi) {
            return Err(Error::Range { value: t, lo, hi });
        }
        let i = ts.partition_point(|&k| k <= t).saturating_sub(1).min(self.pieces() - 1);
        Ok((i, (t - ts[i]) / (ts[i + 1] - ts[i])))
    }

    pub fn eval(&self, t: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.channels];
        self.eval_into(t, &mut out)?;
        Ok(out)
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) -> Result<()> {
        let (i, tau) = self.locate(t)?;
        let [a, b, c, d] = self.piece(i);
        for ch in 0..self.channels {
            out[ch] = a[ch] + tau * (b[ch] + tau * (c[ch] + tau * d[ch]));
        }
        Ok(())
    }

    pub fn eval_derivative(&self, t: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.channels];
        self.eval_derivative_into(t, &mut out)?;
        Ok(out)
    }

    /// `dC/dt`, i.e. the local derivative divided by the piece length.
    pub fn eval_derivative_into(&self, t: f64, out: &mut [f64]) -> Result<()> {
        let (i, tau) = self.locate(t)?;
        let scale = 1.0 / (self.knot_times[i + 1] - self.knot_times[i]);
        let [_, b, c, d] = self.piece(i);
        for ch in 0..self.channels {
            out[ch] = scale * (b[ch] + tau * (2.0 * c[ch] + 3.0 * tau * d[ch]));
        }
        Ok(())
    }

    pub fn eval_second_derivative(&self, t: f64) -> Result<Vec<f64>> {
        let (i, tau) = self.locate(t)?;
        let hi = self.knot_times[i + 1] - self.knot_times[i];
        let [_, _, c, d] = self.piece(i);
        Ok((0..self.channels)
            .map(|ch| (2.0 * c[ch] + 6.0 * tau * d[ch]) / (hi * hi))
            .collect())
    }

    /// Like [`eval`](Self::eval) but forces piece `i`, so knots can be
    /// approached from either side.
    pub fn eval_on_piece(&self, i: usize, tau: f64) -> Vec<f64> {
        let [a, b, c, d] = self.piece(i);
        (0..self.channels)
            .map(|ch| a[ch] + tau * (b[ch] + tau * (c[ch] + tau * d[ch])))
            .collect()
    }

    /// First and second `t`-derivatives on piece `i` at local `tau`.
    pub fn derivatives_on_piece(&self, i: usize, tau: f64) -> (Vec<f64>, Vec<f64>) {
        let hi = self.knot_times[i + 1] - self.knot_times[i];
        let [_, b, c, d] = self.piece(i);
        let first = (0..self.channels)
            .map(|ch| (b[ch] + tau * (2.0 * c[ch] + 3.0 * tau * d[ch])) / hi)
            .collect();
        let second = (0..self.channels)
            .map(|ch| (2.0 * c[ch] + 6.0 * tau * d[ch]) / (hi * hi))
            .collect();
        (first, second)
    }
}
