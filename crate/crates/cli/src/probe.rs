//! Linear probe: multinomial logistic regression on pooled representations.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use speech_simclr::rng::rng_from;
use speech_simclr::trainer::{NamedTensors, StoredTensor};
use speech_simclr::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub iterations: usize,
    pub l2: f64,
    /// Gradient-descent step; `None` uses the inverse of a curvature bound.
    pub learning_rate: Option<f64>,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            iterations: 500,
            l2: 1e-4,
            learning_rate: None,
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config("probe test_fraction must lie in (0, 1)".into()));
        }
        if self.l2 < 0.0 || matches!(self.learning_rate, Some(r) if !(r > 0.0)) {
            return Err(Error::Config("probe l2 must be non-negative and learning_rate positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProbeReport {
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub n_classes: usize,
}

/// Softmax regression weights, `(d + 1) × k` with the bias in the last row,
/// plus the standardization fitted on the training rows.
#[derive(Clone, Debug)]
pub struct LogisticModel {
    mean: Vec<f64>,
    scale: Vec<f64>,
    w: Vec<f64>,
    k: usize,
}

fn standardizer(x: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let d = x[0].len();
    let n = x.len() as f64;
    let mut mean = vec![0.0; d];
    for row in x {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v / n;
        }
    }
    let mut var = vec![0.0; d];
    for row in x {
        for j in 0..d {
            var[j] += (row[j] - mean[j]).powi(2) / n;
        }
    }
    let scale = var.iter().map(|v| if *v > 1e-12 { 1.0 / v.sqrt() } else { 0.0 }).collect();
    (mean, scale)
}

/// Largest eigenvalue of `XᵀX / n` by power iteration.
fn top_eigenvalue(x: &[Vec<f64>]) -> f64 {
    let d = x[0].len();
    let mut v = vec![1.0 / (d as f64).sqrt(); d];
    let mut lambda = 0.0;
    for _ in 0..100 {
        let mut next = vec![0.0; d];
        for row in x {
            let dot: f64 = row.iter().zip(&v).map(|(a, b)| a * b).sum();
            for (n, a) in next.iter_mut().zip(row) {
                *n += dot * a / x.len() as f64;
            }
        }
        let norm = next.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        lambda = norm;
        v = next.into_iter().map(|a| a / norm).collect();
    }
    lambda
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

impl LogisticModel {
    fn transform(&self, row: &[f64]) -> Vec<f64> {
        let mut t: Vec<f64> = row.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) * s).collect();
        t.push(1.0);
        t
    }

    fn logits(&self, t: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0; self.k];
        for (j, &v) in t.iter().enumerate() {
            if v != 0.0 {
                for (c, zc) in z.iter_mut().enumerate() {
                    *zc += v * self.w[j * self.k + c];
                }
            }
        }
        z
    }

    pub fn predict(&self, row: &[f64]) -> usize {
        let z = self.logits(&self.transform(row));
        (0..self.k).fold(0, |best, c| if z[c] > z[best] { c } else { best })
    }

    /// Full-batch gradient descent on mean cross-entropy plus `l2/2 · ‖W‖²`
    /// (bias excluded), features standardized on `x`.
    pub fn fit(x: &[Vec<f64>], y: &[usize], k: usize, cfg: &ProbeConfig) -> Result<Self> {
        if x.is_empty() || x.len() != y.len() {
            return Err(Error::Data(format!("probe needs matching non-empty rows, got {} and {}", x.len(), y.len())));
        }
        let d = x[0].len();
        if x.iter().any(|r| r.len() != d) {
            return Err(Error::Data("probe rows have different dimensions".into()));
        }
        if let Some(&bad) = y.iter().find(|&&c| c >= k) {
            return Err(Error::Data(format!("label {bad} out of range for {k} classes")));
        }
        let (mean, scale) = standardizer(x);
        let mut model = Self {
            mean,
            scale,
            w: vec![0.0; (d + 1) * k],
            k,
        };
        let t: Vec<Vec<f64>> = x.iter().map(|r| model.transform(r)).collect();
        let lr = cfg.learning_rate.unwrap_or_else(|| 1.0 / (0.5 * top_eigenvalue(&t) + cfg.l2));
        let n = x.len() as f64;
        let mut grad = vec![0.0; model.w.len()];
        for _ in 0..cfg.iterations {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for (row, &label) in t.iter().zip(y) {
                let mut p = model.logits(row);
                softmax_in_place(&mut p);
                p[label] -= 1.0;
                for (j, &v) in row.iter().enumerate() {
                    if v != 0.0 {
                        for c in 0..k {
                            grad[j * k + c] += v * p[c] / n;
                        }
                    }
                }
            }
            for (i, w) in model.w.iter_mut().enumerate() {
                let reg = if i < d * k { cfg.l2 * *w } else { 0.0 };
                *w -= lr * (grad[i] + reg);
            }
        }
        Ok(model)
    }

    pub fn accuracy(&self, x: &[Vec<f64>], y: &[usize]) -> f64 {
        if x.is_empty() {
            return 0.0;
        }
        x.iter().zip(y).filter(|(r, &c)| self.predict(r) == c).count() as f64 / x.len() as f64
    }
}

/// Seeded split into (train, test) index sets, the last `test_fraction` of a
/// permutation going to test.
pub fn split_indices(n: usize, test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_from(&[seed, 0x5b1]));
    let n_test = ((n as f64) * test_fraction).round() as usize;
    let test = idx.split_off(n - n_test.min(n));
    (idx, test)
}

fn gather(x: &[Vec<f64>], y: &[usize], idx: &[usize]) -> (Vec<Vec<f64>>, Vec<usize>) {
    (idx.iter().map(|&i| x[i].clone()).collect(), idx.iter().map(|&i| y[i]).collect())
}

/// Trains on a seeded 80/20 split and reports both accuracies.
pub fn probe(x: &[Vec<f64>], y: &[usize], k: usize, cfg: &ProbeConfig) -> Result<ProbeReport> {
    cfg.validate()?;
    let (tr, te) = split_indices(x.len(), cfg.test_fraction, cfg.seed);
    if tr.is_empty() || te.is_empty() {
        return Err(Error::Data(format!("{} examples are too few for a train/test split", x.len())));
    }
    let (xtr, ytr) = gather(x, y, &tr);
    let (xte, yte) = gather(x, y, &te);
    let m = LogisticModel::fit(&xtr, &ytr, k, cfg)?;
    Ok(ProbeReport {
        train_accuracy: m.accuracy(&xtr, &ytr),
        test_accuracy: m.accuracy(&xte, &yte),
        n_train: tr.len(),
        n_test: te.len(),
        n_classes: k,
    })
}

/// Mean accuracy over `folds` held-out folds of a seeded permutation.
pub fn cross_validate(x: &[Vec<f64>], y: &[usize], k: usize, folds: usize, cfg: &ProbeConfig) -> Result<f64> {
    if folds < 2 || x.len() < folds {
        return Err(Error::Data(format!("cannot run {folds}-fold validation on {} examples", x.len())));
    }
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.shuffle(&mut rng_from(&[cfg.seed, 0xcf]));
    let mut total = 0.0;
    for f in 0..folds {
        let (test, train): (Vec<(usize, usize)>, Vec<(usize, usize)>) =
            idx.iter().copied().enumerate().partition(|(pos, _)| pos % folds == f);
        let test: Vec<usize> = test.into_iter().map(|(_, i)| i).collect();
        let train: Vec<usize> = train.into_iter().map(|(_, i)| i).collect();
        let (xtr, ytr) = gather(x, y, &train);
        let (xte, yte) = gather(x, y, &test);
        total += LogisticModel::fit(&xtr, &ytr, k, cfg)?.accuracy(&xte, &yte);
    }
    Ok(total / folds as f64)
}

/// Time-average of a `T×d` entry.
pub fn mean_pool(t: &StoredTensor) -> Result<Vec<f64>> {
    let t = t.to_real::<f64>();
    if t.shape().len() != 2 || t.rows() == 0 {
        return Err(Error::Data(format!("expected a non-empty T×d tensor, got shape {:?}", t.shape())));
    }
    let (rows, cols) = (t.rows(), t.cols());
    let mut out = vec![0.0; cols];
    for r in 0..rows {
        for (o, v) in out.iter_mut().zip(t.row(r)) {
            *o += v / rows as f64;
        }
    }
    Ok(out)
}

/// Pools every archive entry named in `ids`; missing ids are listed in the error.
pub fn pooled_rows(archive: &NamedTensors, ids: &[String]) -> Result<Vec<Vec<f64>>> {
    let missing: Vec<&str> = ids.iter().filter(|id| archive.get(id).is_none()).map(String::as_str).collect();
    if !missing.is_empty() {
        return Err(Error::Data(format!("features missing for utterance ids: {}", missing.join(", "))));
    }
    ids.iter().map(|id| mean_pool(archive.get(id).expect("checked"))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn split_sizes_and_determinism() {
        let (a, b) = split_indices(100, 0.2, 3);
        assert_eq!((a.len(), b.len()), (80, 20));
        assert_eq!(split_indices(100, 0.2, 3), (a.clone(), b));
        let mut all: Vec<usize> = a.into_iter().chain(split_indices(100, 0.2, 3).1).collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn one_hot_features_are_perfectly_separable() {
        let y: Vec<usize> = (0..200).map(|i| i % 4).collect();
        let x: Vec<Vec<f64>> = y.iter().map(|&c| (0..4).map(|j| f64::from(u8::from(j == c))).collect()).collect();
        let r = probe(&x, &y, 4, &ProbeConfig::default()).unwrap();
        assert_eq!(r.test_accuracy, 1.0);
        assert_eq!(r.train_accuracy, 1.0);
    }

    #[test]
    fn noise_features_are_at_chance() {
        let mut accs = Vec::new();
        for seed in 0..20 {
            let mut rng = rng_from(&[seed, 42]);
            let y: Vec<usize> = (0..200).map(|i| i % 4).collect();
            let x: Vec<Vec<f64>> = (0..200).map(|_| (0..16).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let cfg = ProbeConfig { seed, ..ProbeConfig::default() };
            accs.push(probe(&x, &y, 4, &cfg).unwrap().test_accuracy);
        }
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        assert!((mean - 0.25).abs() <= 0.08, "{mean}");
    }

    #[test]
    fn errors() {
        assert!(probe(&[vec![1.0]], &[0], 1, &ProbeConfig::default()).is_err());
        let x = vec![vec![0.0]; 10];
        assert!(probe(&x, &[5; 10], 2, &ProbeConfig::default()).is_err());
        let mut arch = NamedTensors::new();
        arch.push("a", speech_simclr::nn::Tensor::new(&[2, 2], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap()).unwrap();
        assert_eq!(pooled_rows(&arch, &["a".into()]).unwrap(), vec![vec![2.0, 3.0]]);
        let err = pooled_rows(&arch, &["a".into(), "zz".into(), "yy".into()]).unwrap_err();
        assert!(err.to_string().contains("zz, yy"));
    }
}
