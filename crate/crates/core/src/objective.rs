//! Contrastive and reconstruction objectives.
//!
//! NT-Xent over `2N` embeddings whose rows `(2k, 2k+1)` are the two views of
//! example `k`. For anchor `i` with partner `p(i) = i ^ 1`:
//!
//! ```text
//! l_i = -log( exp(s_ip / τ) / Σ_{k≠i} exp(s_ik / τ) ),   s = cosine similarity
//! ```
//!
//! and the loss is the mean of `l_i` over all `2N` anchors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::graph::{Graph, Var};
use crate::nn::tensor::{Real, Tensor};

pub const DEFAULT_TEMPERATURE: f64 = 0.1;

/// `uᵀv / (‖u‖‖v‖)`.
pub fn cosine_sim(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::shape("cosine_sim", &[u.len()], &[v.len()]));
    }
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::arg("cosine similarity of a zero vector (collapsed embedding)"));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// Embeddings of `N` positive pairs in interleaved order plus the temperature.
#[derive(Clone, Debug)]
pub struct ContrastiveBatch<F> {
    embeddings: Tensor<F>,
    temperature: f64,
}

impl<F: Real> ContrastiveBatch<F> {
    pub fn new(embeddings: Tensor<F>, temperature: f64) -> Result<Self> {
        if embeddings.shape().len() != 2 {
            return Err(Error::shape("contrastive batch", embeddings.shape(), &[2, 0]));
        }
        let rows = embeddings.rows();
        if rows == 0 {
            return Err(Error::arg("contrastive batch needs N >= 1 pairs, got 0"));
        }
        if rows % 2 != 0 {
            return Err(Error::arg(format!("contrastive batch has {rows} rows; must be even")));
        }
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::arg(format!("temperature must be positive, got {temperature}")));
        }
        Ok(Self {
            embeddings,
            temperature,
        })
    }

    pub fn pairs(&self) -> usize {
        self.embeddings.rows() / 2
    }

    pub fn embeddings(&self) -> &Tensor<F> {
        &self.embeddings
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }
}

/// NT-Xent loss of a batch.
pub fn nt_xent<F: Real>(batch: &ContrastiveBatch<F>) -> Result<f64> {
    nt_xent_with_grad(batch).map(|(l, _)| l)
}

/// NT-Xent loss and its gradient with respect to the raw embeddings. Computed
/// in 64-bit with per-row max subtraction before exponentiation.
pub fn nt_xent_with_grad<F: Real>(batch: &ContrastiveBatch<F>) -> Result<(f64, Tensor<F>)> {
    let z = &batch.embeddings;
    let (m, d) = (z.rows(), z.cols());
    let inv_tau = 1.0 / batch.temperature;

    let mut unit = vec![0.0f64; m * d];
    let mut norms = vec![0.0f64; m];
    for i in 0..m {
        let row = z.row(i);
        let n = row.iter().map(|x| x.f64() * x.f64()).sum::<f64>().sqrt();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::arg(format!("embedding row {i} has norm {n} (collapsed embedding)")));
        }
        norms[i] = n;
        for j in 0..d {
            unit[i * d + j] = row[j].f64() / n;
        }
    }

    let mut logits = vec![0.0f64; m * m];
    for i in 0..m {
        for k in 0..m {
            let dot: f64 = (0..d).map(|j| unit[i * d + j] * unit[k * d + j]).sum();
            logits[i * m + k] = dot * inv_tau;
        }
    }

    // dL/dlogits, excluding the diagonal.
    let mut dlog = vec![0.0f64; m * m];
    let mut total = 0.0;
    let scale = 1.0 / m as f64;
    for i in 0..m {
        let p = i ^ 1;
        let row = &logits[i * m..(i + 1) * m];
        let mx = row
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != i)
            .map(|(_, &v)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = row
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != i)
            .map(|(_, &v)| (v - mx).exp())
            .sum();
        let lse = mx + denom.ln();
        total += lse - row[p];
        for k in 0..m {
            if k == i {
                continue;
            }
            let soft = (row[k] - mx).exp() / denom;
            let target = if k == p { 1.0 } else { 0.0 };
            dlog[i * m + k] = scale * (soft - target);
        }
    }
    let loss = total * scale;

    // logits = U Uᵀ / τ  ⇒  dU = (G + Gᵀ) U / τ
    let mut du = vec![0.0f64; m * d];
    for i in 0..m {
        for k in 0..m {
            let gsym = (dlog[i * m + k] + dlog[k * m + i]) * inv_tau;
            if gsym == 0.0 {
                continue;
            }
            for j in 0..d {
                du[i * d + j] += gsym * unit[k * d + j];
            }
        }
    }
    // u = z/‖z‖  ⇒  dz = (du − (du·u) u) / ‖z‖
    let mut dz = vec![F::zero(); m * d];
    for i in 0..m {
        let u = &unit[i * d..(i + 1) * d];
        let g = &du[i * d..(i + 1) * d];
        let proj: f64 = u.iter().zip(g).map(|(a, b)| a * b).sum();
        for j in 0..d {
            dz[i * d + j] = F::of((g[j] - proj * u[j]) / norms[i]);
        }
    }
    Ok((loss, Tensor::new(&[m, d], dz)?))
}

/// Records NT-Xent of the `2N×d` node `z` in `g` as a scalar node.
pub fn nt_xent_node<F: Real>(g: &mut Graph<F>, z: Var, temperature: f64) -> Result<Var> {
    let batch = ContrastiveBatch::new(g.value(z).clone(), temperature)?;
    let (loss, dz) = nt_xent_with_grad(&batch)?;
    g.fused_loss(z, F::of(loss), dz)
}

/// Mean absolute error between prediction and target, optionally restricted
/// to the cells where `mask` is true.
pub fn recon_l1<F: Real>(prediction: &Tensor<F>, target: &Tensor<F>, mask: Option<&[bool]>) -> Result<f64> {
    if prediction.shape() != target.shape() {
        return Err(Error::shape("recon_l1", prediction.shape(), target.shape()));
    }
    let cells = prediction.data().iter().zip(target.data());
    let (sum, count) = match mask {
        Some(m) => {
            if m.len() != prediction.len() {
                return Err(Error::shape("recon_l1 mask", prediction.shape(), &[m.len()]));
            }
            cells
                .zip(m)
                .filter(|(_, &keep)| keep)
                .fold((0.0, 0usize), |(s, c), ((&a, &b), _)| (s + (a.f64() - b.f64()).abs(), c + 1))
        }
        None => cells.fold((0.0, 0usize), |(s, c), (&a, &b)| (s + (a.f64() - b.f64()).abs(), c + 1)),
    };
    if count == 0 {
        return Err(Error::arg("L1 loss over an empty mask is undefined"));
    }
    Ok(sum / count as f64)
}

/// Relative weights of the two objectives.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub contrastive: f64,
    pub reconstruction: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            contrastive: 1.0,
            reconstruction: 1.0,
        }
    }
}

impl LossWeights {
    pub fn contrastive_only() -> Self {
        Self {
            contrastive: 1.0,
            reconstruction: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.contrastive < 0.0 || self.reconstruction < 0.0 {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        Ok(())
    }
}

/// `w_c · ntxent + w_r · recon`.
pub fn combined_loss(ntxent: f64, recon: f64, w_c: f64, w_r: f64) -> f64 {
    w_c * ntxent + w_r * recon
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn batch(rows: &[Vec<f64>], tau: f64) -> ContrastiveBatch<f64> {
        ContrastiveBatch::new(Tensor::from_rows(rows).unwrap(), tau).unwrap()
    }

    #[test]
    fn cosine_examples() {
        let v = [0.3, -1.2, 4.0];
        assert_relative_eq!(cosine_sim(&v, &v).unwrap(), 1.0, epsilon = 1e-15);
        assert_eq!(cosine_sim(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_relative_eq!(
            cosine_sim(&[1.0, 1.0], &[1.0, 0.0]).unwrap(),
            std::f64::consts::FRAC_1_SQRT_2,
            epsilon = 1e-15
        );
        assert!(matches!(cosine_sim(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::Argument(_))));
    }

    #[test]
    fn single_pair_is_exactly_zero() {
        for rows in [vec![vec![1.0, 2.0], vec![-3.0, 0.5]], vec![vec![0.1, 0.0], vec![0.0, 7.0]]] {
            assert_eq!(nt_xent(&batch(&rows, 0.1)).unwrap(), 0.0);
        }
    }

    #[test]
    fn hand_values() {
        let aligned = batch(&[vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 1.0]], 0.1);
        let want = (1.0 + 2.0 * (-10.0f64).exp()).ln();
        assert_relative_eq!(nt_xent(&aligned).unwrap(), want, max_relative = 1e-9);
        assert_relative_eq!(want, 9.0800e-5, max_relative = 1e-4);

        let same = batch(&vec![vec![0.6, 0.8]; 4], 0.1);
        assert_relative_eq!(nt_xent(&same).unwrap(), 3f64.ln(), max_relative = 1e-12);
    }

    #[test]
    fn batch_validation() {
        assert!(ContrastiveBatch::new(Tensor::<f64>::zeros(&[0, 3]), 0.1).is_err());
        assert!(ContrastiveBatch::new(Tensor::<f64>::full(&[3, 2], 1.0), 0.1).is_err());
        assert!(ContrastiveBatch::new(Tensor::<f64>::full(&[2, 2], 1.0), 0.0).is_err());
        let zero_row = batch(&[vec![0.0, 0.0], vec![1.0, 0.0]], 0.1);
        assert!(nt_xent(&zero_row).is_err());
    }

    #[test]
    fn survives_large_logits_in_f32() {
        let rows: Vec<Vec<f32>> = (0..8).map(|i| vec![(i / 2) as f32 + 1.0, 1.0]).collect();
        let b = ContrastiveBatch::new(Tensor::from_rows(&rows).unwrap(), 0.001).unwrap();
        let (l, g) = nt_xent_with_grad(&b).unwrap();
        assert!(l.is_finite() && g.all_finite());
    }

    #[test]
    fn recon_examples() {
        let t = Tensor::new(&[2, 3], vec![1.0, -2.0, 0.5, 0.0, 3.0, 1.0]).unwrap();
        assert_eq!(recon_l1(&t, &t, None).unwrap(), 0.0);
        let shifted = t.map(|x| x + 1.0);
        assert_relative_eq!(recon_l1(&shifted, &t, None).unwrap(), 1.0, epsilon = 1e-15);
        assert!(matches!(recon_l1(&t, &t, Some(&[false; 6])), Err(Error::Argument(_))));
        let mask = [true, false, false, false, false, false];
        let mut p = t.clone();
        p.data_mut()[0] = 4.0;
        p.data_mut()[5] = 100.0;
        assert_eq!(recon_l1(&p, &t, Some(&mask)).unwrap(), 3.0);
        let other = Tensor::<f64>::zeros(&[3, 2]);
        assert!(matches!(recon_l1(&t, &other, None), Err(Error::Shape { .. })));
    }

    #[test]
    fn combined_examples() {
        assert_relative_eq!(combined_loss(0.5, 0.3, 1.0, 1.0), 0.8, epsilon = 1e-15);
        assert_eq!(combined_loss(0.5, 0.3, 1.0, 0.0), 0.5);
        assert_eq!(combined_loss(2.0, 7.0, 0.0, 0.0), 0.0);
    }
}
