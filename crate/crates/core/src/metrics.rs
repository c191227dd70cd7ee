//! Evaluation metrics: Fréchet distance between fitted Gaussians (the FAD
//! analog over embedding sets), Spearman rank correlation with a
//! permutation p-value, 1-D earth mover's distance and cosine similarity.

use rayon::prelude::*;

use crate::error::{check_len, Error, Result};
use crate::mathcore::{dot, sym_matrix_sqrt, Matrix};
use crate::rng::rng_for;

pub const COVARIANCE_RIDGE: f64 = 1e-6;
pub const DEFAULT_PERMUTATIONS: usize = 10_000;

/// Mean and covariance of an embedding set.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    pub mean: Vec<f64>,
    pub covariance: Matrix,
    pub count: usize,
}

impl GaussianStats {
    pub fn new(mean: Vec<f64>, covariance: Matrix, count: usize) -> Result<Self> {
        check_len("covariance rows", mean.len(), covariance.rows())?;
        check_len("covariance cols", mean.len(), covariance.cols())?;
        if covariance.max_asymmetry() > 1e-8 * covariance.max_abs().max(1.0) {
            return Err(Error::NotSymmetric(covariance.max_asymmetry()));
        }
        Ok(Self {
            mean,
            covariance,
            count,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Sample mean and unbiased covariance plus `1e-6·I`.
pub fn fit_gaussian(samples: &[Vec<f64>]) -> Result<GaussianStats> {
    if samples.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 samples to fit a Gaussian, got {}",
            samples.len()
        )));
    }
    let d = samples[0].len();
    for s in samples {
        check_len("sample", d, s.len())?;
    }
    let n = samples.len() as f64;
    let mut mean = vec![0.0; d];
    for s in samples {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);

    let mut cov = Matrix::zeros(d, d);
    let mut centered = vec![0.0; d];
    for s in samples {
        for ((c, v), m) in centered.iter_mut().zip(s).zip(&mean) {
            *c = v - m;
        }
        for i in 0..d {
            let ci = centered[i];
            if ci == 0.0 {
                continue;
            }
            for j in i..d {
                cov.set(i, j, cov.get(i, j) + ci * centered[j]);
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov.get(i, j) / (n - 1.0);
            cov.set(i, j, v);
            cov.set(j, i, v);
        }
        cov.set(i, i, cov.get(i, i) + COVARIANCE_RIDGE);
    }
    if !cov.is_finite() {
        return Err(Error::NonFinite("covariance".into()));
    }
    GaussianStats::new(mean, cov, samples.len())
}

/// `‖μa − μb‖² + Tr(Σa + Σb − 2·(Σa^½ Σb Σa^½)^½)`, clamped at zero.
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    check_len("Gaussian dimension", a.dim(), b.dim())?;
    let mean_term: f64 = a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y) * (x - y)).sum();
    let sa = sym_matrix_sqrt(&a.covariance)?;
    let inner = sa.matmul(&b.covariance).matmul(&sa);
    let inner = inner.add(&inner.transpose()).scaled(0.5);
    let cross = sym_matrix_sqrt(&inner)?.trace();
    let d = mean_term + a.covariance.trace() + b.covariance.trace() - 2.0 * cross;
    if d < -1e-8 * (1.0 + mean_term + a.covariance.trace() + b.covariance.trace()) {
        return Err(Error::Undefined(format!("negative Fréchet distance {d:e}")));
    }
    Ok(d.max(0.0))
}

/// Fréchet distance between Gaussians fitted to a background and a generated set.
pub fn fad_score(background: &[Vec<f64>], generated: &[Vec<f64>]) -> Result<f64> {
    frechet_distance(&fit_gaussian(background)?, &fit_gaussian(generated)?)
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && values[idx[end]] == values[idx[start]] {
            end += 1;
        }
        let avg = (start + end + 1) as f64 / 2.0;
        for &k in &idx[start..end] {
            ranks[k] = avg;
        }
        start = end;
    }
    ranks
}

fn centered(v: &[f64]) -> Vec<f64> {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| x - m).collect()
}

/// Spearman's ρ and a two-sided permutation p-value from
/// [`DEFAULT_PERMUTATIONS`] shuffles with seed 0.
pub fn spearman_srcc(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    spearman_srcc_with(x, y, DEFAULT_PERMUTATIONS, 0)
}

/// Permutation `i` draws from its own stream keyed by `(seed, i)`, so the
/// p-value does not depend on how permutations are split across threads.
pub fn spearman_srcc_with(x: &[f64], y: &[f64], permutations: usize, seed: u64) -> Result<(f64, f64)> {
    check_len("spearman y", x.len(), y.len())?;
    if x.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "spearman needs at least 3 pairs, got {}",
            x.len()
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("spearman input".into()));
    }
    let rx = centered(&average_ranks(x));
    let ry = centered(&average_ranks(y));
    let (sx, sy) = (dot(&rx, &rx).sqrt(), dot(&ry, &ry).sqrt());
    if sx == 0.0 || sy == 0.0 {
        return Err(Error::Undefined("constant input has no rank variance".into()));
    }
    let denom = sx * sy;
    let rho = (dot(&rx, &ry) / denom).clamp(-1.0, 1.0);

    let threshold = rho.abs() - 1e-12;
    let hits: usize = (0..permutations)
        .into_par_iter()
        .map(|i| {
            use rand::seq::SliceRandom;
            let mut perm = ry.clone();
            perm.shuffle(&mut rng_for(seed, &[0x5EA, i as u64]));
            usize::from((dot(&rx, &perm) / denom).abs() >= threshold)
        })
        .sum();
    let p = (hits + 1) as f64 / (permutations + 1) as f64;
    Ok((rho, p))
}

/// Earth mover's distance between two 1-D empirical distributions,
/// `∫ |F_a(z) − F_b(z)| dz`.
pub fn emd_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument("EMD needs non-empty inputs".into()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("EMD input".into()));
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(f64::total_cmp);
    sb.sort_by(f64::total_cmp);
    let (na, nb) = (sa.len() as f64, sb.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut prev = sa[0].min(sb[0]);
    let mut total = 0.0;
    while i < sa.len() || j < sb.len() {
        let next = match (sa.get(i), sb.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        let fa = i as f64 / na;
        let fb = j as f64 / nb;
        total += (fa - fb).abs() * (next - prev);
        while i < sa.len() && sa[i] == next {
            i += 1;
        }
        while j < sb.len() && sb[j] == next {
            j += 1;
        }
        prev = next;
    }
    Ok(total)
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    check_len("cosine operand", a.len(), b.len())?;
    let (na, nb) = (dot(a, a).sqrt(), dot(b, b).sqrt());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::InvalidArgument("cosine similarity of a zero vector".into()));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}
