//! Central finite-difference checks of analytic gradients.

use serde::Serialize;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::nn::model::{encode, init_params, project, reconstruct, EncoderConfig, ModelParams};
use crate::nn::tensor::Tensor;
use crate::nn::{Graph, Var};
use crate::objective::{nt_xent_node, LossWeights};
use crate::rng::rng_from;

/// Step used for central differences.
pub const FD_STEP: f64 = 1e-5;

/// Error floor below which absolute agreement is accepted: a coordinate passes
/// when `|analytic − numeric| ≤ REL_TOL · max(|analytic|, |numeric|, ABS_TOL / REL_TOL)`,
/// i.e. within 1e-4 relative or 1e-6 absolute.
pub const REL_TOL: f64 = 1e-4;
pub const ABS_TOL: f64 = 1e-6;

/// Scaled error of one coordinate; `≤ REL_TOL` means it passes.
pub fn scaled_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(ABS_TOL / REL_TOL);
    (analytic - numeric).abs() / scale
}

#[derive(Clone, Debug, Serialize)]
pub struct GradEntry {
    pub name: String,
    pub size: usize,
    pub max_abs_error: f64,
    pub max_scaled_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradReport {
    pub entries: Vec<GradEntry>,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }

    pub fn worst(&self) -> f64 {
        self.entries.iter().map(|e| e.max_scaled_error).fold(0.0, f64::max)
    }
}

/// Compares `analytic[i]` with central differences of `loss` with respect to
/// each named input tensor. `loss` receives the full list of inputs with one
/// coordinate perturbed.
pub fn check<L>(names: &[String], inputs: &[Tensor<f64>], analytic: &[Tensor<f64>], mut loss: L) -> Result<GradReport>
where
    L: FnMut(&[Tensor<f64>]) -> Result<f64>,
{
    let mut work = inputs.to_vec();
    let mut entries = Vec::with_capacity(inputs.len());
    for (k, name) in names.iter().enumerate() {
        let mut max_abs: f64 = 0.0;
        let mut max_scaled: f64 = 0.0;
        for i in 0..inputs[k].len() {
            let orig = inputs[k].data()[i];
            work[k].data_mut()[i] = orig + FD_STEP;
            let up = loss(&work)?;
            work[k].data_mut()[i] = orig - FD_STEP;
            let down = loss(&work)?;
            work[k].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = analytic[k].data()[i];
            max_abs = max_abs.max((a - numeric).abs());
            max_scaled = max_scaled.max(scaled_error(a, numeric));
        }
        entries.push(GradEntry {
            name: name.clone(),
            size: inputs[k].len(),
            max_abs_error: max_abs,
            max_scaled_error: max_scaled,
            passed: max_scaled <= REL_TOL,
        });
    }
    Ok(GradReport { entries })
}

/// Settings of a whole-model check.
#[derive(Clone, Debug)]
pub struct ModelCheck {
    pub encoder: EncoderConfig,
    /// Frames per view.
    pub frames: usize,
    /// Number of views (even; consecutive pairs are positives).
    pub views: usize,
    pub temperature: f64,
    pub weights: LossWeights,
    pub seed: u64,
}

impl ModelCheck {
    /// 2 layers, `d_model` 16, `d_ff` 32, 2 heads, 7 frames, 4 views.
    pub fn toy(seed: u64) -> Self {
        Self {
            encoder: EncoderConfig {
                proj_dim: 8,
                ..EncoderConfig::toy(2, 16, 32, 2)
            },
            frames: 7,
            views: 4,
            temperature: 0.1,
            weights: LossWeights::default(),
            seed,
        }
    }
}

fn model_loss(
    params: &ModelParams<f64>,
    inputs: &[Tensor<f64>],
    targets: &[Tensor<f64>],
    chk: &ModelCheck,
    want_grads: bool,
) -> Result<(f64, Option<Vec<Tensor<f64>>>)> {
    let mut g = Graph::new();
    let b = params.bind(&mut g);
    let mut zs = Vec::with_capacity(inputs.len());
    let mut recon = Vec::with_capacity(inputs.len());
    for (x, t) in inputs.iter().zip(targets) {
        let xv = g.constant(x.clone());
        let h = encode(&mut g, &b, xv, None)?;
        zs.push(project(&mut g, &b, h)?);
        let r = reconstruct(&mut g, &b, h)?;
        let tv = g.constant(t.clone());
        recon.push(g.l1_loss(r, tv, None)?);
    }
    let z = g.concat_rows(&zs)?;
    let nt = nt_xent_node(&mut g, z, chk.temperature)?;
    let nt = g.scale(nt, chk.weights.contrastive)?;
    let mut total = nt;
    for r in recon {
        let r = g.scale(r, chk.weights.reconstruction / inputs.len() as f64)?;
        total = g.add(total, r)?;
    }
    let loss = g.value(total).data()[0];
    if !want_grads {
        return Ok((loss, None));
    }
    let mut grads = g.backward(total)?;
    let out = b
        .vars()
        .iter()
        .zip(params.tensors())
        .map(|(&v, p)| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect();
    Ok((loss, Some(out)))
}

/// Finite-difference check of every model parameter under the combined
/// NT-Xent + reconstruction loss, in 64-bit. Parameters are jittered away
/// from their structured initial values so biases and scales are exercised.
pub fn check_model(chk: &ModelCheck) -> Result<GradReport> {
    if chk.views < 2 || chk.views % 2 != 0 {
        return Err(Error::arg(format!("model check needs an even number of views, got {}", chk.views)));
    }
    let cfg = &chk.encoder;
    let mut params: ModelParams<f64> = init_params(cfg, chk.seed)?;
    let mut rng = rng_from(&[chk.seed, 0x6c]);
    for t in params.tensors_mut() {
        for v in t.data_mut() {
            *v += rng.random_range(-0.2..0.2);
        }
    }
    let out_frames = cfg.output_len(chk.frames);
    let mut random = |shape: &[usize]| {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.5..1.5)).collect()).expect("sized")
    };
    let inputs: Vec<_> = (0..chk.views).map(|_| random(&[chk.frames, cfg.input_dim])).collect();
    let targets: Vec<_> = (0..chk.views).map(|_| random(&[out_frames, cfg.input_dim])).collect();
    let (_, analytic) = model_loss(&params, &inputs, &targets, chk, true)?;
    let analytic = analytic.expect("requested");
    let names = params.names().to_vec();
    let base = params.tensors().to_vec();
    let mut scratch = params.clone();
    check(&names, &base, &analytic, |ts| {
        scratch.tensors_mut().clone_from_slice(ts);
        Ok(model_loss(&scratch, &inputs, &targets, chk, false)?.0)
    })
}

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = rng_from(&[seed, 0x6c]);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape matches data")
}

/// Checks the op built by `build` from `inputs` under the scalar loss
/// `Σ out ⊙ R` for a fixed random `R`.
pub fn check_op<B>(inputs: &[Tensor<f64>], build: B) -> Result<GradReport>
where
    B: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let forward = |ins: &[Tensor<f64>], grads: bool| -> Result<(f64, Vec<Tensor<f64>>)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.param(t.clone())).collect();
        let out = build(&mut g, &vars)?;
        let r = g.constant(random(g.shape(out), 99));
        let prod = g.mul(out, r)?;
        let loss = g.sum(prod)?;
        let value = g.value(loss).data()[0];
        if !grads {
            return Ok((value, Vec::new()));
        }
        let gr = g.backward(loss)?;
        let out = vars
            .iter()
            .zip(ins)
            .map(|(&v, t)| gr.get(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect();
        Ok((value, out))
    };
    let (_, analytic) = forward(inputs, true)?;
    let names: Vec<String> = (0..inputs.len()).map(|i| format!("in{i}")).collect();
    check(&names, inputs, &analytic, |ins| Ok(forward(ins, false)?.0))
}

/// Every differentiable primitive, in each configuration that exercises a
/// distinct backward path, labelled.
pub fn primitive_suite() -> Result<Vec<(String, GradReport)>> {
    let mut out = Vec::new();
    let mut add = |name: String, rep: Result<GradReport>| -> Result<()> {
        out.push((name, rep?));
        Ok(())
    };
    for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
        let a = if ta { random(&[4, 3], 1) } else { random(&[3, 4], 1) };
        let b = if tb { random(&[5, 4], 2) } else { random(&[4, 5], 2) };
        add(format!("matmul(ta={ta}, tb={tb})"), check_op(&[a, b], |g, v| g.matmul_t(v[0], ta, v[1], tb)))?;
    }
    let pair = [random(&[3, 4], 1), random(&[3, 4], 2)];
    add("add".into(), check_op(&pair, |g, v| g.add(v[0], v[1])))?;
    add("mul".into(), check_op(&pair, |g, v| g.mul(v[0], v[1])))?;
    add("add_row".into(), check_op(&[random(&[3, 4], 1), random(&[4], 2)], |g, v| g.add_row(v[0], v[1])))?;
    add("scale".into(), check_op(&[random(&[3, 4], 1)], |g, v| g.scale(v[0], -1.7)))?;
    add("relu".into(), check_op(&[random(&[5, 6], 3)], |g, v| g.relu(v[0])))?;
    add("exp".into(), check_op(&[random(&[3, 4], 4)], |g, v| g.exp(v[0])))?;
    add("log".into(), check_op(&[random(&[3, 4], 5).map(|x| x.abs() + 0.3)], |g, v| g.log(v[0])))?;
    add("softmax_rows".into(), check_op(&[random(&[4, 6], 1).map(|x| 3.0 * x)], |g, v| g.softmax_rows(v[0])))?;
    add("mean_rows".into(), check_op(&[random(&[5, 3], 2)], |g, v| g.mean_rows(v[0])))?;
    add("select_rows".into(), check_op(&[random(&[5, 3], 3)], |g, v| g.select_rows(v[0], &[4, 0, 4, 2])))?;
    add("sum".into(), check_op(&[random(&[2, 3], 4)], |g, v| g.sum(v[0])))?;
    add(
        "layer_norm".into(),
        check_op(&[random(&[4, 6], 5), random(&[6], 6), random(&[6], 7)], |g, v| g.layer_norm(v[0], v[1], v[2], 1e-5)),
    )?;
    add(
        "concat_rows".into(),
        check_op(&[random(&[2, 3], 1), random(&[4, 3], 2)], |g, v| g.concat_rows(&[v[0], v[1], v[0]])),
    )?;
    add(
        "concat_cols".into(),
        check_op(&[random(&[3, 2], 1), random(&[3, 4], 2)], |g, v| g.concat_cols(&[v[1], v[0]])),
    )?;
    add("slice_cols".into(), check_op(&[random(&[3, 7], 3)], |g, v| g.slice_cols(v[0], 2, 3)))?;
    for (t, stride, pad) in [(7, 1, 0), (7, 2, 1), (8, 2, 1), (5, 1, 1)] {
        let (cin, cout, k) = (3, 4, 3);
        let ins = [random(&[t, cin], 1), random(&[cout, k * cin], 2), random(&[cout], 3)];
        add(
            format!("conv1d(T={t}, stride={stride}, pad={pad})"),
            check_op(&ins, |g, v| g.conv1d(v[0], v[1], v[2], k, stride, pad)),
        )?;
    }
    add("l1".into(), check_op(&pair, |g, v| g.l1_loss(v[0], v[1], None)))?;
    let mask: Vec<bool> = (0..12).map(|i| i % 3 != 0).collect();
    add("l1 masked".into(), check_op(&pair, |g, v| g.l1_loss(v[0], v[1], Some(&mask))))?;
    add("dropout".into(), check_op(&[random(&[4, 5], 1)], |g, v| g.dropout(v[0], 0.3, &mut rng_from(&[7]))))?;
    for (n, d) in [(1, 3), (2, 2), (3, 8), (4, 5)] {
        let z = random(&[2 * n, d], n as u64);
        add(format!("nt_xent(N={n}, d={d})"), check_op(&[z], |g, v| nt_xent_node(g, v[0], 0.1)))?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scaled_error_switches_between_abs_and_rel() {
        assert!(scaled_error(1e-9, 5e-7) <= REL_TOL);
        assert!(scaled_error(1.0, 1.0 + 5e-5) <= REL_TOL);
        assert!(scaled_error(1.0, 1.001) > REL_TOL);
    }

    #[test]
    fn check_quadratic() {
        let x = Tensor::new(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        let grad = x.map(|v| 2.0 * v);
        let rep = check(&["x".into()], &[x], &[grad], |ins| Ok(ins[0].sum_sq())).unwrap();
        assert!(rep.passed(), "{rep:?}");
        let x = Tensor::new(&[1], vec![1.0]).unwrap();
        let wrong = Tensor::new(&[1], vec![3.0]).unwrap();
        let rep = check(&["x".into()], &[x], &[wrong], |ins| Ok(ins[0].sum_sq())).unwrap();
        assert!(!rep.passed());
    }
}
