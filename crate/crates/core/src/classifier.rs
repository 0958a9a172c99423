//! One-vs-rest soft-margin SVM with an RBF kernel, trained by SMO.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::container::{meta_field, Container};
use crate::dsp::Matrix;
use crate::error::{Error, Result};
use crate::fingerprint::{FeatureStats, Fingerprint, Variant};

const CONTAINER_KIND: &str = "svm";
const VARIANCE_FLOOR: f64 = 1e-8;

/// `1 / (L * variance)`, variance floored at 1e-8.
pub fn compute_gamma(len: usize, variance: f64) -> f64 {
    1.0 / (len.max(1) as f64 * variance.max(VARIANCE_FLOOR))
}

/// Mean over dimensions of the per-dimension (population) variance.
pub fn mean_variance(features: &[Vec<f64>]) -> f64 {
    let n = features.len() as f64;
    let l = features.first().map_or(0, Vec::len);
    if l == 0 || features.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for d in 0..l {
        let mean = features.iter().map(|f| f[d]).sum::<f64>() / n;
        total += features.iter().map(|f| (f[d] - mean).powi(2)).sum::<f64>() / n;
    }
    total / l as f64
}

pub fn rbf(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * d2).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmConfig {
    pub c: f64,
    pub tolerance: f64,
    /// SMO pair updates per machine; 0 picks `max(100_000, 100 n)`.
    pub max_iterations: usize,
    /// Overrides the variance rule when set.
    pub gamma: Option<f64>,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            c: 1.0,
            tolerance: 1e-3,
            max_iterations: 0,
            gamma: None,
        }
    }
}

impl SvmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::BadConfig(format!("svm C must be positive, got {}", self.c)));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::BadConfig("svm tolerance must be positive".into()));
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::BadConfig(format!("gamma must be positive, got {g}")));
            }
        }
        Ok(())
    }
}

/// Dual solution of one binary problem on the full training set.
#[derive(Debug, Clone, PartialEq)]
pub struct BinarySolution {
    pub alpha: Vec<f64>,
    pub rho: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Solves `min 1/2 a'Qa - e'a, 0 <= a <= C, y'a = 0` with `Q_ij = y_i y_j K_ij`
/// using maximal-violating-pair working sets.
pub fn smo(kernel: &Matrix, y: &[f64], c: f64, tol: f64, max_iter: usize) -> BinarySolution {
    let n = y.len();
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let k = |i: usize, j: usize| kernel.get(i, j);
    let up = |a: f64, yi: f64| (yi > 0.0 && a < c) || (yi < 0.0 && a > 0.0);
    let low = |a: f64, yi: f64| (yi > 0.0 && a > 0.0) || (yi < 0.0 && a < c);

    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        let (mut i, mut gmax) = (usize::MAX, f64::NEG_INFINITY);
        let (mut j, mut gmin) = (usize::MAX, f64::INFINITY);
        for t in 0..n {
            let v = -y[t] * grad[t];
            if up(alpha[t], y[t]) && v > gmax {
                gmax = v;
                i = t;
            }
            if low(alpha[t], y[t]) && v < gmin {
                gmin = v;
                j = t;
            }
        }
        if i == usize::MAX || j == usize::MAX || gmax - gmin < tol {
            converged = true;
            break;
        }
        iterations += 1;

        let (ai_old, aj_old) = (alpha[i], alpha[j]);
        let quad = (k(i, i) + k(j, j) - 2.0 * k(i, j)).max(1e-12);
        if y[i] != y[j] {
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - ai_old, alpha[j] - aj_old);
        for t in 0..n {
            grad[t] += y[t] * (y[i] * di * k(t, i) + y[j] * dj * k(t, j));
        }
    }

    let (mut free_sum, mut free_n) = (0.0, 0usize);
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] > 0.0 && alpha[t] < c {
            free_sum += yg;
            free_n += 1;
        } else if (alpha[t] >= c && y[t] < 0.0) || (alpha[t] <= 0.0 && y[t] > 0.0) {
            ub = ub.min(yg);
        } else {
            lb = lb.max(yg);
        }
    }
    let rho = if free_n > 0 {
        free_sum / free_n as f64
    } else if ub.is_finite() && lb.is_finite() {
        (ub + lb) / 2.0
    } else if ub.is_finite() {
        ub
    } else {
        lb
    };
    BinarySolution {
        alpha,
        rho,
        iterations,
        converged,
    }
}

fn kernel_matrix(x: &[Vec<f64>], gamma: f64) -> Matrix {
    let n = x.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (0..=i).map(|j| rbf(&x[i], &x[j], gamma)).collect())
        .collect();
    let mut k = Matrix::zeros(n, n);
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            k.set(i, j, v);
            k.set(j, i, v);
        }
    }
    k
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    /// Sorted class labels; index order is the tie-break order.
    pub classes: Vec<String>,
    pub variant: Variant,
    pub gamma: f64,
    pub c: f64,
    pub stats: FeatureStats,
    /// Union of support vectors over all machines, one per row.
    pub support: Matrix,
    /// `J x n_sv`: `alpha_i * y_i` of each machine on each support vector.
    pub coef: Matrix,
    pub rho: Vec<f64>,
    pub converged: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub class_index: usize,
    pub label: String,
    pub scores: Vec<f64>,
}

/// Trains one machine per class against the rest. `features` must already be
/// normalized with `stats`.
pub fn train_svm(
    features: &[Fingerprint],
    labels: &[String],
    stats: &FeatureStats,
    cfg: &SvmConfig,
) -> Result<SvmModel> {
    cfg.validate()?;
    if features.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: features.len(),
            right: labels.len(),
        });
    }
    if features.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for f in features {
        if f.variant != stats.variant || f.len() != stats.len() {
            return Err(Error::StatsMismatch(format!(
                "training feature {} of length {} against stats for {}",
                f.variant,
                f.len(),
                stats.variant
            )));
        }
    }
    let mut classes: Vec<String> = labels.to_vec();
    classes.sort();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::SingleClass);
    }
    for c in &classes {
        if labels.iter().filter(|l| *l == c).count() < 2 {
            return Err(Error::BadConfig(format!("class {c} has fewer than 2 examples")));
        }
    }
    let x: Vec<Vec<f64>> = features.iter().map(|f| f.values.clone()).collect();
    let l = stats.len();
    let gamma = cfg.gamma.unwrap_or_else(|| compute_gamma(l, mean_variance(&x)));
    let kernel = kernel_matrix(&x, gamma);
    let n = x.len();
    let max_iter = if cfg.max_iterations == 0 {
        (100 * n).max(100_000)
    } else {
        cfg.max_iterations
    };

    let solutions: Vec<BinarySolution> = classes
        .par_iter()
        .map(|class| {
            let y: Vec<f64> = labels
                .iter()
                .map(|lb| if lb == class { 1.0 } else { -1.0 })
                .collect();
            smo(&kernel, &y, cfg.c, cfg.tolerance, max_iter)
        })
        .collect();
    for (class, s) in classes.iter().zip(&solutions) {
        if !s.converged {
            log::warn!(
                "svm machine for {class} stopped after {} iterations without converging",
                s.iterations
            );
        }
    }

    let sv: Vec<usize> = (0..n)
        .filter(|&i| solutions.iter().any(|s| s.alpha[i] > 0.0))
        .collect();
    let mut support = Matrix::zeros(sv.len(), l);
    for (r, &i) in sv.iter().enumerate() {
        support.row_mut(r).copy_from_slice(&x[i]);
    }
    let mut coef = Matrix::zeros(classes.len(), sv.len());
    for (j, (class, s)) in classes.iter().zip(&solutions).enumerate() {
        for (r, &i) in sv.iter().enumerate() {
            let y = if &labels[i] == class { 1.0 } else { -1.0 };
            coef.set(j, r, s.alpha[i] * y);
        }
    }
    Ok(SvmModel {
        classes,
        variant: stats.variant,
        gamma,
        c: cfg.c,
        stats: stats.clone(),
        support,
        coef,
        rho: solutions.iter().map(|s| s.rho).collect(),
        converged: solutions.iter().map(|s| s.converged).collect(),
    })
}

impl SvmModel {
    pub fn classes(&self) -> usize {
        self.classes.len()
    }

    pub fn feature_len(&self) -> usize {
        self.stats.len()
    }

    pub fn support_vectors(&self) -> usize {
        self.support.rows()
    }

    /// Raw per-class decision values for a normalized feature vector.
    pub fn decision_values(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.feature_len() {
            return Err(Error::LengthMismatch {
                left: x.len(),
                right: self.feature_len(),
            });
        }
        let k: Vec<f64> = (0..self.support.rows())
            .map(|r| rbf(self.support.row(r), x, self.gamma))
            .collect();
        Ok((0..self.classes())
            .map(|j| {
                self.coef
                    .row(j)
                    .iter()
                    .zip(&k)
                    .map(|(a, kv)| a * kv)
                    .sum::<f64>()
                    - self.rho[j]
            })
            .collect())
    }

    /// Argmax over decision values; ties go to the lowest class index.
    pub fn predict(&self, f: &Fingerprint) -> Result<Prediction> {
        if f.variant != self.variant {
            return Err(Error::VariantMismatch(format!(
                "model is {}, feature is {}",
                self.variant, f.variant
            )));
        }
        let scores = self.decision_values(&f.values)?;
        let mut best = 0;
        for (j, s) in scores.iter().enumerate() {
            if *s > scores[best] {
                best = j;
            }
        }
        Ok(Prediction {
            class_index: best,
            label: self.classes[best].clone(),
            scores,
        })
    }

    pub fn to_container(&self) -> Container {
        let meta = json!({
            "format_version": 1,
            "classes": self.classes,
            "variant": self.variant,
            "gamma": self.gamma,
            "c": self.c,
            "rho": self.rho,
            "converged": self.converged,
            "stats": self.stats,
            "stats_hash": self.stats.hash(),
        });
        let mut c = Container::new(CONTAINER_KIND, meta);
        c.push_f64(
            "support",
            vec![self.support.rows(), self.support.cols()],
            self.support.as_slice(),
        );
        c.push_f64("coef", vec![self.coef.rows(), self.coef.cols()], self.coef.as_slice());
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let classes: Vec<String> = meta_field(&c.meta, "classes")?;
        let stats: FeatureStats = meta_field(&c.meta, "stats")?;
        let (shape, _) = c.require("support")?;
        let (rows, cols) = match shape {
            [r, c] => (*r, *c),
            _ => return Err(Error::format("<svm>", "support must be 2-D")),
        };
        let support = Matrix::from_vec(rows, cols, c.require_f64("support")?)?;
        let coef = Matrix::from_vec(classes.len(), rows, c.require_f64("coef")?)?;
        let model = SvmModel {
            variant: meta_field(&c.meta, "variant")?,
            gamma: meta_field(&c.meta, "gamma")?,
            c: meta_field(&c.meta, "c")?,
            rho: meta_field(&c.meta, "rho")?,
            converged: meta_field(&c.meta, "converged")?,
            classes,
            stats,
            support,
            coef,
        };
        if model.stats.variant != model.variant || cols != model.stats.len() {
            return Err(Error::StatsMismatch("svm file stats disagree with model".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path, CONTAINER_KIND)?)
    }
}
