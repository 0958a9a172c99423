//! Diagonal-covariance Gaussian mixture trained by EM.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::{Matrix, MfccConfig, MfccSequence};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GmmConfig {
    pub components: usize,
    pub max_iterations: usize,
    /// Stop once the per-frame log-likelihood gain drops below
    /// `relative_tolerance * |LL|`.
    pub relative_tolerance: f64,
    pub variance_floor: f64,
    pub seed: u64,
}

impl Default for GmmConfig {
    fn default() -> Self {
        GmmConfig {
            components: 64,
            max_iterations: 200,
            relative_tolerance: 1e-5,
            variance_floor: 1e-4,
            seed: 0,
        }
    }
}

const MIN_WEIGHT: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    pub weights: Vec<f64>,
    /// `G x d`
    pub means: Matrix,
    /// `G x d` diagonal variances.
    pub variances: Matrix,
    /// Feature configuration the mixture was trained on.
    pub mfcc: MfccConfig,
    pub seed: u64,
    pub iterations: usize,
    /// Mean per-frame log-likelihood after each E-step.
    pub log_likelihood: Vec<f64>,
    /// Iterations after which a collapsed component was re-seeded; the
    /// likelihood sequence restarts its monotone run there.
    pub reseeded_at: Vec<usize>,
}

impl GmmModel {
    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.cols()
    }

    pub fn final_log_likelihood(&self) -> f64 {
        self.log_likelihood.last().copied().unwrap_or(f64::NAN)
    }

    fn log_norm(&self) -> Vec<f64> {
        (0..self.components())
            .map(|g| {
                let s: f64 = self
                    .variances
                    .row(g)
                    .iter()
                    .map(|v| (2.0 * PI * v).ln())
                    .sum();
                self.weights[g].max(1e-300).ln() - 0.5 * s
            })
            .collect()
    }

    /// Writes `log(w_g N(x | g))` for every component into `out`, returning
    /// the log-sum-exp (the frame log-likelihood).
    fn joint(&self, x: &[f64], log_norm: &[f64], out: &mut [f64]) -> f64 {
        let mut max = f64::NEG_INFINITY;
        for g in 0..self.components() {
            let m = self.means.row(g);
            let v = self.variances.row(g);
            let mut q = 0.0;
            for d in 0..x.len() {
                let diff = x[d] - m[d];
                q += diff * diff / v[d];
            }
            out[g] = log_norm[g] - 0.5 * q;
            max = max.max(out[g]);
        }
        let s: f64 = out.iter().map(|l| (l - max).exp()).sum();
        max + s.ln()
    }

    /// Component posteriors for each frame, `T x G`.
    pub fn posteriors(&self, frames: &MfccSequence) -> Result<Matrix> {
        if frames.dim() != self.dim() {
            return Err(Error::ShapeMismatch(format!(
                "features have {} dims, mixture has {}",
                frames.dim(),
                self.dim()
            )));
        }
        let g = self.components();
        let log_norm = self.log_norm();
        let mut out = Matrix::zeros(frames.frames(), g);
        let mut buf = vec![0.0; g];
        for t in 0..frames.frames() {
            let ll = self.joint(frames.frame(t), &log_norm, &mut buf);
            for (o, l) in out.row_mut(t).iter_mut().zip(&buf) {
                *o = (l - ll).exp();
            }
        }
        Ok(out)
    }

    /// Mean per-frame log-likelihood.
    pub fn score(&self, frames: &MfccSequence) -> f64 {
        let log_norm = self.log_norm();
        let mut buf = vec![0.0; self.components()];
        let total: f64 = (0..frames.frames())
            .map(|t| self.joint(frames.frame(t), &log_norm, &mut buf))
            .sum();
        total / frames.frames().max(1) as f64
    }
}

fn stack(frames: &[MfccSequence]) -> Result<(Matrix, MfccConfig)> {
    let first = frames.first().ok_or(Error::EmptyDataset)?;
    let dim = first.dim();
    let mut data = Vec::new();
    let mut rows = 0;
    for f in frames {
        if f.dim() != dim {
            return Err(Error::ShapeMismatch("feature dimensions differ".into()));
        }
        data.extend_from_slice(f.coeffs.as_slice());
        rows += f.frames();
    }
    Ok((Matrix::from_vec(rows, dim, data)?, first.config))
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding: first centre uniform, then proportional to squared
/// distance from the nearest chosen centre.
fn kmeans_pp(data: &Matrix, k: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let n = data.rows();
    let mut centres = Matrix::zeros(k, data.cols());
    let first = rng.random_range(0..n);
    centres.row_mut(0).copy_from_slice(data.row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(data.row(i), centres.row(0))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random_range(0.0..total);
            let mut idx = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if r < d {
                    idx = i;
                    break;
                }
                r -= d;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        centres.row_mut(c).copy_from_slice(data.row(pick));
        for i in 0..n {
            let d = sq_dist(data.row(i), centres.row(c));
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    centres
}

/// Fits a `cfg.components`-component diagonal GMM to the pooled frames.
pub fn train_gmm(frames: &[MfccSequence], cfg: &GmmConfig) -> Result<GmmModel> {
    let (data, mfcc) = stack(frames)?;
    let g = cfg.components;
    if g == 0 {
        return Err(Error::BadConfig("at least one mixture component required".into()));
    }
    let n = data.rows();
    let d = data.cols();
    if n < 50 * g {
        return Err(Error::TooFewFrames {
            got: n,
            need: 50 * g,
        });
    }
    let mut global_mean = vec![0.0; d];
    for i in 0..n {
        for (m, x) in global_mean.iter_mut().zip(data.row(i)) {
            *m += x;
        }
    }
    global_mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut global_var = vec![0.0; d];
    for i in 0..n {
        for ((v, x), m) in global_var.iter_mut().zip(data.row(i)).zip(&global_mean) {
            *v += (x - m) * (x - m);
        }
    }
    global_var
        .iter_mut()
        .for_each(|v| *v = (*v / n as f64).max(cfg.variance_floor));

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let means = kmeans_pp(&data, g, &mut rng);
    let mut variances = Matrix::zeros(g, d);
    for k in 0..g {
        variances.row_mut(k).copy_from_slice(&global_var);
    }
    let mut model = GmmModel {
        weights: vec![1.0 / g as f64; g],
        means,
        variances,
        mfcc,
        seed: cfg.seed,
        iterations: 0,
        log_likelihood: Vec::new(),
        reseeded_at: Vec::new(),
    };
    let mut reseeded = vec![false; g];
    let mut joint = vec![0.0; g];
    let mut nk = vec![0.0; g];
    let mut sx = Matrix::zeros(g, d);
    let mut sxx = Matrix::zeros(g, d);

    for iter in 0..cfg.max_iterations {
        // E-step
        nk.iter_mut().for_each(|v| *v = 0.0);
        sx.as_mut_slice().iter_mut().for_each(|v| *v = 0.0);
        sxx.as_mut_slice().iter_mut().for_each(|v| *v = 0.0);
        let log_norm = model.log_norm();
        let mut total_ll = 0.0;
        let mut worst = (f64::INFINITY, 0usize);
        for i in 0..n {
            let x = data.row(i);
            let ll = model.joint(x, &log_norm, &mut joint);
            total_ll += ll;
            if ll < worst.0 {
                worst = (ll, i);
            }
            for k in 0..g {
                let r = (joint[k] - ll).exp();
                if r == 0.0 {
                    continue;
                }
                nk[k] += r;
                for (s, &v) in sx.row_mut(k).iter_mut().zip(x) {
                    *s += r * v;
                }
                for (s, &v) in sxx.row_mut(k).iter_mut().zip(x) {
                    *s += r * v * v;
                }
            }
        }
        let ll = total_ll / n as f64;
        model.log_likelihood.push(ll);
        model.iterations = iter + 1;
        if let Some(&prev) = model.log_likelihood.iter().rev().nth(1) {
            let restarted = model.reseeded_at.last() == Some(&iter);
            if !restarted && ll - prev < cfg.relative_tolerance * ll.abs() {
                break;
            }
        }
        if iter + 1 == cfg.max_iterations {
            break;
        }
        // M-step
        for k in 0..g {
            model.weights[k] = nk[k] / n as f64;
            if nk[k] <= 0.0 {
                continue;
            }
            for j in 0..d {
                let mu = sx.get(k, j) / nk[k];
                let var = (sxx.get(k, j) / nk[k] - mu * mu).max(cfg.variance_floor);
                model.means.set(k, j, mu);
                model.variances.set(k, j, var);
            }
        }
        let collapsed: Vec<usize> = (0..g).filter(|&k| model.weights[k] < MIN_WEIGHT).collect();
        if !collapsed.is_empty() {
            for k in collapsed {
                if reseeded[k] {
                    return Err(Error::DegenerateComponent(k));
                }
                reseeded[k] = true;
                log::warn!("re-seeding collapsed mixture component {k}");
                model.means.row_mut(k).copy_from_slice(data.row(worst.1));
                model.variances.row_mut(k).copy_from_slice(&global_var);
                model.weights[k] = 1.0 / g as f64;
            }
            let s: f64 = model.weights.iter().sum();
            model.weights.iter_mut().for_each(|w| *w /= s);
            model.reseeded_at.push(iter + 1);
        }
    }
    Ok(model)
}
