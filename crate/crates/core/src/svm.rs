//! Linear soft-margin SVM trained by dual coordinate descent, with
//! one-vs-rest multi-class prediction.
//!
//! The bias is learned as the weight of an implicit constant feature equal to
//! 1, so the solved problem is
//!
//! ```text
//! min 1/2 (|w|^2 + b^2) + C * sum_i max(0, 1 - y_i (w.x_i + b))
//! ```
//!
//! and every dual variable stays in the box `[0, C]`.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::binfmt::{read_file, write_atomic, ByteReader, ByteWriter};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"CDSV";

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SvmParams {
    pub c: f64,
    pub max_epochs: usize,
    /// Stop once the largest projected-gradient magnitude in an epoch is below this.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            max_epochs: 1000,
            tolerance: 1e-4,
            seed: 0,
        }
    }
}

/// Per-dimension standardization fitted on training data.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaler {
    pub means: Vec<f32>,
    pub stds: Vec<f32>,
}

impl Scaler {
    pub fn dim(&self) -> usize {
        self.means.len()
    }

    pub fn transform(&self, v: &[f32]) -> Vec<f64> {
        v.iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(&x, (&m, &s))| (x as f64 - m as f64) / s as f64)
            .collect()
    }
}

fn check_rows<T>(x: &[Vec<T>]) -> Result<usize> {
    let first = x.first().ok_or_else(|| Error::invalid("feature matrix has no rows"))?;
    let dim = first.len();
    if dim == 0 {
        return Err(Error::invalid("feature vectors are empty"));
    }
    if let Some(i) = x.iter().position(|r| r.len() != dim) {
        return Err(Error::invalid(format!(
            "row {i} has {} features, expected {dim}",
            x[i].len()
        )));
    }
    Ok(dim)
}

/// Population mean and standard deviation per dimension; near-constant
/// dimensions get a standard deviation of 1.
pub fn fit_scaler(x: &[Vec<f32>]) -> Result<Scaler> {
    let dim = check_rows(x)?;
    let n = x.len() as f64;
    let mut means = vec![0f64; dim];
    for row in x {
        for (m, &v) in means.iter_mut().zip(row) {
            *m += v as f64;
        }
    }
    means.iter_mut().for_each(|m| *m /= n);
    let mut vars = vec![0f64; dim];
    for row in x {
        for ((s, &v), &m) in vars.iter_mut().zip(row).zip(&means) {
            let d = v as f64 - m;
            *s += d * d;
        }
    }
    let stds = vars
        .iter()
        .zip(&means)
        .map(|(&s, &m)| {
            let sd = (s / n).sqrt();
            if sd <= 1e-9 * (1.0 + m.abs()) {
                1.0
            } else {
                sd as f32
            }
        })
        .collect();
    Ok(Scaler {
        means: means.iter().map(|&m| m as f32).collect(),
        stds,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinarySolution {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub alphas: Vec<f64>,
    pub epochs: usize,
    pub converged: bool,
}

impl BinarySolution {
    pub fn decision(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.bias
    }
}

/// Solver state handed to an observer after every epoch.
pub struct EpochState<'a> {
    pub epoch: usize,
    pub alphas: &'a [f64],
    pub weights: &'a [f64],
    pub bias: f64,
    pub max_violation: f64,
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn primal_objective(x: &[Vec<f64>], y: &[i8], c: f64, w: &[f64], b: f64) -> f64 {
    let hinge: f64 = x
        .iter()
        .zip(y)
        .map(|(xi, &yi)| (1.0 - yi as f64 * (dot(w, xi) + b)).max(0.0))
        .sum();
    0.5 * (dot(w, w) + b * b) + c * hinge
}

/// Dual objective `sum(alpha) - 1/2 |sum_i alpha_i y_i [x_i, 1]|^2`.
pub fn dual_objective(x: &[Vec<f64>], y: &[i8], alphas: &[f64]) -> f64 {
    let dim = x.first().map_or(0, Vec::len);
    let mut w = vec![0f64; dim];
    let mut b = 0.0;
    for ((xi, &yi), &a) in x.iter().zip(y).zip(alphas) {
        let s = a * yi as f64;
        w.iter_mut().zip(xi).for_each(|(wj, xj)| *wj += s * xj);
        b += s;
    }
    alphas.iter().sum::<f64>() - 0.5 * (dot(&w, &w) + b * b)
}

pub fn train_binary(x: &[Vec<f64>], y: &[i8], params: &SvmParams) -> Result<BinarySolution> {
    train_binary_observed(x, y, params, |_| {})
}

/// Dual coordinate descent; `observer` sees the state after each epoch.
pub fn train_binary_observed(
    x: &[Vec<f64>],
    y: &[i8],
    params: &SvmParams,
    mut observer: impl FnMut(&EpochState),
) -> Result<BinarySolution> {
    let dim = check_rows(x)?;
    if y.len() != x.len() {
        return Err(Error::invalid(format!(
            "{} labels for {} examples",
            y.len(),
            x.len()
        )));
    }
    if y.iter().any(|&v| v != 1 && v != -1) {
        return Err(Error::invalid("binary labels must be +1 or -1"));
    }
    if !y.contains(&1) || !y.contains(&-1) {
        return Err(Error::invalid("binary training needs examples of both labels"));
    }
    if !(params.c > 0.0 && params.c.is_finite()) {
        return Err(Error::invalid(format!("C must be positive, got {}", params.c)));
    }
    let c = params.c;
    let n = x.len();
    let qd: Vec<f64> = x.iter().map(|xi| dot(xi, xi) + 1.0).collect();
    let mut w = vec![0f64; dim];
    let mut b = 0f64;
    let mut alphas = vec![0f64; n];
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut converged = false;
    let mut epochs = 0;

    while epochs < params.max_epochs {
        order.shuffle(&mut rng);
        let mut max_violation = 0f64;
        for &i in &order {
            let yi = y[i] as f64;
            let g = yi * (dot(&w, &x[i]) + b) - 1.0;
            let pg = if alphas[i] == 0.0 {
                g.min(0.0)
            } else if alphas[i] == c {
                g.max(0.0)
            } else {
                g
            };
            max_violation = max_violation.max(pg.abs());
            if pg != 0.0 {
                let old = alphas[i];
                alphas[i] = (old - g / qd[i]).clamp(0.0, c);
                let step = (alphas[i] - old) * yi;
                if step != 0.0 {
                    w.iter_mut().zip(&x[i]).for_each(|(wj, xj)| *wj += step * xj);
                    b += step;
                }
            }
        }
        epochs += 1;
        observer(&EpochState {
            epoch: epochs,
            alphas: &alphas,
            weights: &w,
            bias: b,
            max_violation,
        });
        if max_violation < params.tolerance {
            converged = true;
            break;
        }
    }

    Ok(BinarySolution {
        weights: w,
        bias: b,
        alphas,
        epochs,
        converged,
    })
}

/// One-vs-rest linear SVM over standardized features.
#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    /// Sorted class labels; index `j` owns `weights[j]` and `biases[j]`.
    pub labels: Vec<String>,
    pub scaler: Scaler,
    pub weights: Vec<Vec<f32>>,
    pub biases: Vec<f32>,
    /// Regularization used in training; not stored in model files.
    pub c: Option<f64>,
}

/// Trains one binary problem per class against the rest.
///
/// Examples are put in a canonical order (label, then feature values) before
/// training, so the result does not depend on input order. Every class uses
/// the same shuffle seed, which makes the two-class case exactly mirror a
/// single binary model.
pub fn train_multiclass(x: &[Vec<f32>], labels: &[String], params: &SvmParams) -> Result<SvmModel> {
    check_rows(x)?;
    if labels.len() != x.len() {
        return Err(Error::invalid(format!(
            "{} labels for {} examples",
            labels.len(),
            x.len()
        )));
    }
    let mut classes: Vec<String> = labels.to_vec();
    classes.sort();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::invalid(format!(
            "multi-class training needs at least 2 classes, got {}",
            classes.len()
        )));
    }
    let scaler = fit_scaler(x)?;

    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| {
        labels[a].cmp(&labels[b]).then_with(|| {
            x[a].iter()
                .zip(&x[b])
                .map(|(p, q)| p.total_cmp(q))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    });
    let xs: Vec<Vec<f64>> = order.iter().map(|&i| scaler.transform(&x[i])).collect();
    let ls: Vec<&str> = order.iter().map(|&i| labels[i].as_str()).collect();

    let solutions: Vec<BinarySolution> = classes
        .par_iter()
        .map(|class| {
            let y: Vec<i8> = ls.iter().map(|&l| if l == class { 1 } else { -1 }).collect();
            train_binary(&xs, &y, params)
        })
        .collect::<Result<_>>()?;

    Ok(SvmModel {
        labels: classes,
        scaler,
        weights: solutions
            .iter()
            .map(|s| s.weights.iter().map(|&w| w as f32).collect())
            .collect(),
        biases: solutions.iter().map(|s| s.bias as f32).collect(),
        c: Some(params.c),
    })
}

impl SvmModel {
    pub fn dim(&self) -> usize {
        self.scaler.dim()
    }

    pub fn decision_values(&self, v: &[f32]) -> Result<Vec<f64>> {
        if v.len() != self.dim() {
            return Err(Error::invalid(format!(
                "feature dimension {} does not match model dimension {}",
                v.len(),
                self.dim()
            )));
        }
        let z = self.scaler.transform(v);
        Ok(self
            .weights
            .iter()
            .zip(&self.biases)
            .map(|(w, &b)| w.iter().zip(&z).map(|(&a, &x)| a as f64 * x).sum::<f64>() + b as f64)
            .collect())
    }

    /// Label of the largest decision value; ties go to the smallest label.
    pub fn predict(&self, v: &[f32]) -> Result<&str> {
        let scores = self.decision_values(v)?;
        let mut best = 0;
        for (j, &s) in scores.iter().enumerate().skip(1) {
            if s > scores[best] {
                best = j;
            }
        }
        Ok(&self.labels[best])
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = ByteWriter::new(MAGIC);
        w.len_u32(self.labels.len())?;
        w.len_u32(self.dim())?;
        for l in &self.labels {
            w.str(l)?;
        }
        w.f32s(&self.scaler.means);
        w.f32s(&self.scaler.stds);
        for (ws, &b) in self.weights.iter().zip(&self.biases) {
            w.f32s(ws);
            w.f32s(&[b]);
        }
        Ok(w.finish_with_crc())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::with_crc("svm model", bytes, MAGIC)?;
        let classes = r.u32()? as usize;
        let dim = r.u32()? as usize;
        let labels = (0..classes).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
        let means = r.f32s(dim)?;
        let stds = r.f32s(dim)?;
        let mut weights = Vec::with_capacity(classes);
        let mut biases = Vec::with_capacity(classes);
        for _ in 0..classes {
            weights.push(r.f32s(dim)?);
            biases.push(r.f32s(1)?[0]);
        }
        r.finish()?;
        if stds.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::format("svm model: scaler standard deviations must be positive"));
        }
        Ok(Self {
            labels,
            scaler: Scaler { means, stds },
            weights,
            biases,
            c: None,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }
}
