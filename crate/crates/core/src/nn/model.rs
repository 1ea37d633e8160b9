//! Transformer encoder, projection head and reconstruction head.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::graph::{Graph, Var};
use crate::nn::tensor::{Real, Tensor};
use crate::rng::{rng_from, Rng};

const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub num_heads: usize,
    pub input_dim: usize,
    pub dropout: f64,
    pub use_prenet: bool,
    pub prenet_channels: usize,
    /// Hidden width of the projection head MLP.
    pub proj_hidden: usize,
    /// Output width of the projection head.
    pub proj_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            num_layers: 3,
            d_model: 768,
            d_ff: 3072,
            num_heads: 12,
            input_dim: 80,
            dropout: 0.0,
            use_prenet: false,
            prenet_channels: 256,
            proj_hidden: 768,
            proj_dim: 128,
        }
    }
}

impl EncoderConfig {
    /// Small configuration with the projection hidden width tied to `d_model`.
    pub fn toy(num_layers: usize, d_model: usize, d_ff: usize, num_heads: usize) -> Self {
        Self {
            num_layers,
            d_model,
            d_ff,
            num_heads,
            proj_hidden: d_model,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_layers", self.num_layers),
            ("d_model", self.d_model),
            ("d_ff", self.d_ff),
            ("num_heads", self.num_heads),
            ("input_dim", self.input_dim),
            ("proj_hidden", self.proj_hidden),
            ("proj_dim", self.proj_dim),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("encoder.{name} must be positive")));
        }
        if self.d_model % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by num_heads {}",
                self.d_model, self.num_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.use_prenet && self.prenet_channels == 0 {
            return Err(Error::Config("prenet_channels must be positive".into()));
        }
        Ok(())
    }

    /// Encoder output length for an input of `t` frames.
    pub fn output_len(&self, t: usize) -> usize {
        if self.use_prenet {
            t.div_ceil(2).div_ceil(2)
        } else {
            t
        }
    }

    /// Width of the sequence entering the input projection.
    fn projected_input_dim(&self) -> usize {
        if self.use_prenet {
            self.prenet_channels
        } else {
            self.input_dim
        }
    }

    pub(crate) fn to_words(&self) -> Vec<f64> {
        vec![
            self.num_layers as f64,
            self.d_model as f64,
            self.d_ff as f64,
            self.num_heads as f64,
            self.input_dim as f64,
            self.dropout,
            f64::from(u8::from(self.use_prenet)),
            self.prenet_channels as f64,
            self.proj_hidden as f64,
            self.proj_dim as f64,
        ]
    }

    pub(crate) fn from_words(w: &[f64]) -> Result<Self> {
        if w.len() != 10 {
            return Err(Error::Data(format!("encoder config record has {} fields, expected 10", w.len())));
        }
        let cfg = Self {
            num_layers: w[0] as usize,
            d_model: w[1] as usize,
            d_ff: w[2] as usize,
            num_heads: w[3] as usize,
            input_dim: w[4] as usize,
            dropout: w[5],
            use_prenet: w[6] != 0.0,
            prenet_channels: w[7] as usize,
            proj_hidden: w[8] as usize,
            proj_dim: w[9] as usize,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// How a parameter is initialized.
#[derive(Clone, Copy, Debug, PartialEq)]
enum Init {
    /// Xavier-uniform with the given fan-in / fan-out.
    Xavier(usize, usize),
    Zeros,
    Ones,
}

#[derive(Clone, Copy, Debug)]
struct LayerIdx {
    ln1_g: usize,
    ln1_b: usize,
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
    ln2_g: usize,
    ln2_b: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Clone, Debug)]
struct Layout {
    prenet: Option<[usize; 4]>,
    in_w: usize,
    in_b: usize,
    layers: Vec<LayerIdx>,
    final_g: usize,
    final_b: usize,
    head_w1: usize,
    head_w2: usize,
    recon_w: usize,
    recon_b: usize,
}

type Spec = (String, Vec<usize>, Init);

fn build_layout(cfg: &EncoderConfig) -> (Layout, Vec<Spec>) {
    let mut specs: Vec<Spec> = Vec::new();
    let mut add = |name: String, shape: Vec<usize>, init: Init| {
        specs.push((name, shape, init));
        specs.len() - 1
    };
    let d = cfg.d_model;
    let prenet = cfg.use_prenet.then(|| {
        let c = cfg.prenet_channels;
        let k = 3;
        [
            add("prenet.conv1.w".into(), vec![c, k * cfg.input_dim], Init::Xavier(k * cfg.input_dim, k * c)),
            add("prenet.conv1.b".into(), vec![c], Init::Zeros),
            add("prenet.conv2.w".into(), vec![c, k * c], Init::Xavier(k * c, k * c)),
            add("prenet.conv2.b".into(), vec![c], Init::Zeros),
        ]
    });
    let din = cfg.projected_input_dim();
    let in_w = add("input.w".into(), vec![din, d], Init::Xavier(din, d));
    let in_b = add("input.b".into(), vec![d], Init::Zeros);
    let mut layers = Vec::with_capacity(cfg.num_layers);
    for l in 0..cfg.num_layers {
        let p = |s: &str| format!("layers.{l}.{s}");
        let sq = Init::Xavier(d, d);
        layers.push(LayerIdx {
            ln1_g: add(p("ln1.gamma"), vec![d], Init::Ones),
            ln1_b: add(p("ln1.beta"), vec![d], Init::Zeros),
            wq: add(p("attn.wq"), vec![d, d], sq),
            bq: add(p("attn.bq"), vec![d], Init::Zeros),
            wk: add(p("attn.wk"), vec![d, d], sq),
            bk: add(p("attn.bk"), vec![d], Init::Zeros),
            wv: add(p("attn.wv"), vec![d, d], sq),
            bv: add(p("attn.bv"), vec![d], Init::Zeros),
            wo: add(p("attn.wo"), vec![d, d], sq),
            bo: add(p("attn.bo"), vec![d], Init::Zeros),
            ln2_g: add(p("ln2.gamma"), vec![d], Init::Ones),
            ln2_b: add(p("ln2.beta"), vec![d], Init::Zeros),
            w1: add(p("ffn.w1"), vec![d, cfg.d_ff], Init::Xavier(d, cfg.d_ff)),
            b1: add(p("ffn.b1"), vec![cfg.d_ff], Init::Zeros),
            w2: add(p("ffn.w2"), vec![cfg.d_ff, d], Init::Xavier(cfg.d_ff, d)),
            b2: add(p("ffn.b2"), vec![d], Init::Zeros),
        });
    }
    let final_g = add("final_norm.gamma".into(), vec![d], Init::Ones);
    let final_b = add("final_norm.beta".into(), vec![d], Init::Zeros);
    let head_w1 = add("head.w1".into(), vec![d, cfg.proj_hidden], Init::Xavier(d, cfg.proj_hidden));
    let head_w2 = add(
        "head.w2".into(),
        vec![cfg.proj_hidden, cfg.proj_dim],
        Init::Xavier(cfg.proj_hidden, cfg.proj_dim),
    );
    let recon_w = add("recon.w".into(), vec![d, cfg.input_dim], Init::Xavier(d, cfg.input_dim));
    let recon_b = add("recon.b".into(), vec![cfg.input_dim], Init::Zeros);
    (
        Layout {
            prenet,
            in_w,
            in_b,
            layers,
            final_g,
            final_b,
            head_w1,
            head_w2,
            recon_w,
            recon_b,
        },
        specs,
    )
}

/// Named parameter tensors of the whole model, in a fixed deterministic order.
#[derive(Clone, Debug)]
pub struct ModelParams<F> {
    cfg: EncoderConfig,
    layout: Layout,
    names: Vec<String>,
    tensors: Vec<Tensor<F>>,
}

impl<F: Real> PartialEq for ModelParams<F> {
    fn eq(&self, other: &Self) -> bool {
        self.cfg == other.cfg && self.names == other.names && self.tensors == other.tensors
    }
}

/// Xavier-uniform for matrices, zeros for biases and shifts, ones for
/// LayerNorm scales. Deterministic per seed.
pub fn init_params<F: Real>(cfg: &EncoderConfig, seed: u64) -> Result<ModelParams<F>> {
    cfg.validate()?;
    let (layout, specs) = build_layout(cfg);
    let mut rng = rng_from(&[seed, 0x1417]);
    let mut names = Vec::with_capacity(specs.len());
    let mut tensors = Vec::with_capacity(specs.len());
    for (name, shape, init) in specs {
        let n: usize = shape.iter().product();
        let data = match init {
            Init::Zeros => vec![F::zero(); n],
            Init::Ones => vec![F::one(); n],
            Init::Xavier(fi, fo) => {
                let bound = (6.0 / (fi + fo) as f64).sqrt();
                (0..n).map(|_| F::of(rng.random_range(-bound..bound))).collect()
            }
        };
        names.push(name);
        tensors.push(Tensor::new(&shape, data)?);
    }
    Ok(ModelParams {
        cfg: cfg.clone(),
        layout,
        names,
        tensors,
    })
}

impl<F: Real> ModelParams<F> {
    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<F>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<F>] {
        &mut self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<F>> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<F>> {
        self.index_of(name).map(|i| &mut self.tensors[i])
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Replaces a tensor by name; the shape must match.
    pub fn set(&mut self, name: &str, value: Tensor<F>) -> Result<()> {
        let i = self
            .index_of(name)
            .ok_or_else(|| Error::UnknownTensor(name.to_string()))?;
        if self.tensors[i].shape() != value.shape() {
            return Err(Error::shape("set parameter", self.tensors[i].shape(), value.shape()));
        }
        self.tensors[i] = value;
        Ok(())
    }

    pub fn cast<G: Real>(&self) -> ModelParams<G> {
        ModelParams {
            cfg: self.cfg.clone(),
            layout: self.layout.clone(),
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    /// Registers every parameter as a trainable leaf of `g`.
    pub fn bind(&self, g: &mut Graph<F>) -> Bound {
        Bound {
            vars: self.tensors.iter().map(|t| g.param(t.clone())).collect(),
            layout: self.layout.clone(),
            cfg: self.cfg.clone(),
        }
    }

    /// Registers every parameter as a constant of `g` (inference only).
    pub fn bind_frozen(&self, g: &mut Graph<F>) -> Bound {
        Bound {
            vars: self.tensors.iter().map(|t| g.constant(t.clone())).collect(),
            layout: self.layout.clone(),
            cfg: self.cfg.clone(),
        }
    }

    /// Encoder output `h` for a single `T×input_dim` feature matrix.
    pub fn encode_tensor(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let mut g = Graph::new();
        let b = self.bind_frozen(&mut g);
        let xv = g.constant(x.clone());
        let h = encode(&mut g, &b, xv, None)?;
        Ok(g.value(h).clone())
    }
}

/// Parameters bound into a particular [`Graph`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
    layout: Layout,
    cfg: EncoderConfig,
}

impl Bound {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    fn v(&self, i: usize) -> Var {
        self.vars[i]
    }
}

/// Sinusoidal position table, `T×d`.
pub fn positions<F: Real>(t: usize, d: usize) -> Tensor<F> {
    let mut data = vec![F::zero(); t * d];
    for pos in 0..t {
        for i in 0..d {
            let pair = (i / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * pair / d as f64);
            data[pos * d + i] = F::of(if i % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    Tensor::new(&[t, d], data).expect("sized")
}

fn affine<F: Real>(g: &mut Graph<F>, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = g.matmul(x, w)?;
    g.add_row(y, b)
}

/// Runs the encoder on one `T×input_dim` sequence, returning `T'×d_model`.
/// `dropout_rng` must be given when the configured dropout is non-zero.
pub fn encode<F: Real>(g: &mut Graph<F>, p: &Bound, x: Var, mut dropout_rng: Option<&mut Rng>) -> Result<Var> {
    let cfg = &p.cfg;
    let lay = &p.layout;
    let (t, din) = (g.value(x).rows(), g.value(x).cols());
    if g.shape(x).len() != 2 || din != cfg.input_dim {
        return Err(Error::shape("encode input", g.shape(x), &[t, cfg.input_dim]));
    }
    let min_t = if cfg.use_prenet { 4 } else { 1 };
    if t < min_t {
        return Err(Error::shape("encode input", g.shape(x), &[min_t, cfg.input_dim]));
    }
    let mut drop = |g: &mut Graph<F>, v: Var| -> Result<Var> {
        match dropout_rng.as_deref_mut() {
            Some(rng) if cfg.dropout > 0.0 => g.dropout(v, cfg.dropout, rng),
            _ => Ok(v),
        }
    };

    let mut seq = x;
    if let Some([w1, b1, w2, b2]) = lay.prenet {
        let c1 = g.conv1d(seq, p.v(w1), p.v(b1), 3, 2, 1)?;
        let c1 = g.relu(c1)?;
        let c2 = g.conv1d(c1, p.v(w2), p.v(b2), 3, 2, 1)?;
        seq = g.relu(c2)?;
    }
    let t_out = g.value(seq).rows();
    let d = cfg.d_model;
    let proj = affine(g, seq, p.v(lay.in_w), p.v(lay.in_b))?;
    let pos = g.constant(positions(t_out, d));
    let mut h = g.add(proj, pos)?;
    h = drop(g, h)?;

    let heads = cfg.num_heads;
    let dh = d / heads;
    let inv_sqrt = F::of(1.0 / (dh as f64).sqrt());
    for l in &lay.layers {
        let a = g.layer_norm(h, p.v(l.ln1_g), p.v(l.ln1_b), LN_EPS)?;
        let q = affine(g, a, p.v(l.wq), p.v(l.bq))?;
        let k = affine(g, a, p.v(l.wk), p.v(l.bk))?;
        let v = affine(g, a, p.v(l.wv), p.v(l.bv))?;
        let mut outs = Vec::with_capacity(heads);
        for hd in 0..heads {
            let (qh, kh, vh) = if heads == 1 {
                (q, k, v)
            } else {
                (
                    g.slice_cols(q, hd * dh, dh)?,
                    g.slice_cols(k, hd * dh, dh)?,
                    g.slice_cols(v, hd * dh, dh)?,
                )
            };
            let scores = g.matmul_t(qh, false, kh, true)?;
            let scores = g.scale(scores, inv_sqrt)?;
            let attn = g.softmax_rows(scores)?;
            outs.push(g.matmul(attn, vh)?);
        }
        let cat = if heads == 1 { outs[0] } else { g.concat_cols(&outs)? };
        let o = affine(g, cat, p.v(l.wo), p.v(l.bo))?;
        let o = drop(g, o)?;
        h = g.add(h, o)?;

        let b = g.layer_norm(h, p.v(l.ln2_g), p.v(l.ln2_b), LN_EPS)?;
        let f = affine(g, b, p.v(l.w1), p.v(l.b1))?;
        let f = g.relu(f)?;
        let f = affine(g, f, p.v(l.w2), p.v(l.b2))?;
        let f = drop(g, f)?;
        h = g.add(h, f)?;
    }
    g.layer_norm(h, p.v(lay.final_g), p.v(lay.final_b), LN_EPS)
}

/// `z = W2 · relu(W1 · mean_over_time(h))`, returned as a `1×proj_dim` row.
pub fn project<F: Real>(g: &mut Graph<F>, p: &Bound, h: Var) -> Result<Var> {
    let pooled = g.mean_rows(h)?;
    let hid = g.matmul(pooled, p.v(p.layout.head_w1))?;
    let hid = g.relu(hid)?;
    g.matmul(hid, p.v(p.layout.head_w2))
}

/// Per-frame affine map `d_model → input_dim`.
pub fn reconstruct<F: Real>(g: &mut Graph<F>, p: &Bound, h: Var) -> Result<Var> {
    affine(g, h, p.v(p.layout.recon_w), p.v(p.layout.recon_b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> EncoderConfig {
        EncoderConfig {
            proj_dim: 8,
            ..EncoderConfig::toy(2, 16, 32, 2)
        }
    }

    #[test]
    fn same_seed_same_params() {
        let a: ModelParams<f32> = init_params(&toy(), 9).unwrap();
        let b: ModelParams<f32> = init_params(&toy(), 9).unwrap();
        let c: ModelParams<f32> = init_params(&toy(), 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn xavier_bounds_and_norm_scales() {
        let p: ModelParams<f64> = init_params(&toy(), 1).unwrap();
        let w = p.get("layers.0.ffn.w1").unwrap();
        let bound = (6.0f64 / (16.0 + 32.0)).sqrt();
        assert!(w.data().iter().all(|x| x.abs() <= bound));
        assert!(w.data().iter().any(|x| x.abs() > bound * 0.5));
        for name in p.names().iter().filter(|n| n.ends_with("gamma")) {
            assert!(p.get(name).unwrap().data().iter().all(|&x| x == 1.0), "{name}");
        }
        for name in p.names() {
            let last = name.rsplit('.').next().unwrap();
            if last.starts_with('b') {
                assert!(p.get(name).unwrap().data().iter().all(|&x| x == 0.0), "{name}");
            }
        }
    }

    #[test]
    fn names_are_unique() {
        let mut cfg = toy();
        cfg.use_prenet = true;
        cfg.prenet_channels = 8;
        let p: ModelParams<f32> = init_params(&cfg, 0).unwrap();
        let mut names = p.names().to_vec();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), p.len());
    }

    #[test]
    fn encoder_shapes() {
        let p: ModelParams<f64> = init_params(&toy(), 3).unwrap();
        let x = Tensor::new(&[7, 80], (0..560).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        assert_eq!(p.encode_tensor(&x).unwrap().shape(), &[7, 16]);

        let mut cfg = toy();
        cfg.use_prenet = true;
        cfg.prenet_channels = 8;
        let p: ModelParams<f64> = init_params(&cfg, 3).unwrap();
        let x = Tensor::new(&[100, 80], vec![0.1; 8000]).unwrap();
        assert_eq!(p.encode_tensor(&x).unwrap().shape(), &[25, 16]);
        assert_eq!(cfg.output_len(100), 25);
        assert_eq!(cfg.output_len(7), 2);
    }

    #[test]
    fn rejects_wrong_input_width_and_bad_heads() {
        let p: ModelParams<f64> = init_params(&toy(), 3).unwrap();
        let x = Tensor::new(&[4, 40], vec![0.0; 160]).unwrap();
        assert!(matches!(p.encode_tensor(&x), Err(Error::Shape { .. })));
        let bad = EncoderConfig::toy(1, 10, 8, 3);
        assert!(init_params::<f32>(&bad, 0).is_err());
    }

    #[test]
    fn project_identity_region() {
        let cfg = EncoderConfig {
            proj_hidden: 4,
            proj_dim: 4,
            ..EncoderConfig::toy(1, 4, 8, 1)
        };
        let mut p: ModelParams<f64> = init_params(&cfg, 0).unwrap();
        let eye = |n: usize| {
            let mut t = Tensor::zeros(&[n, n]);
            for i in 0..n {
                t.data_mut()[i * n + i] = 1.0;
            }
            t
        };
        p.set("head.w1", eye(4)).unwrap();
        p.set("head.w2", eye(4)).unwrap();
        let mut g = Graph::new();
        let b = p.bind(&mut g);
        let h = g.constant(Tensor::from_rows(&[vec![1.0, 2.0, 0.0, 3.0], vec![1.0, 2.0, 0.0, 3.0]]).unwrap());
        let pooled = g.mean_rows(h).unwrap();
        assert_eq!(g.value(pooled).data(), &[1.0, 2.0, 0.0, 3.0]);
        let z = project(&mut g, &b, h).unwrap();
        assert_eq!(g.value(z).data(), &[1.0, 2.0, 0.0, 3.0]);
    }

    #[test]
    fn zero_recon_head_predicts_zero() {
        let cfg = EncoderConfig::toy(1, 8, 8, 2);
        let mut p: ModelParams<f64> = init_params(&cfg, 0).unwrap();
        p.set("recon.w", Tensor::zeros(&[8, 80])).unwrap();
        let mut g = Graph::new();
        let b = p.bind(&mut g);
        let h = g.constant(Tensor::full(&[5, 8], 0.7));
        let r = reconstruct(&mut g, &b, h).unwrap();
        assert_eq!(g.shape(r), &[5, 80]);
        assert!(g.value(r).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn examples_do_not_interact() {
        // Encoding two sequences in either order gives the same per-sequence
        // outputs: every normalization is per frame, nothing pools across a batch.
        let p: ModelParams<f64> = init_params(&toy(), 5).unwrap();
        let a = Tensor::new(&[6, 80], (0..480).map(|i| (i as f64 * 0.11).cos()).collect()).unwrap();
        let b = Tensor::new(&[6, 80], (0..480).map(|i| (i as f64 * 0.23).sin()).collect()).unwrap();
        let batch1: Vec<_> = [&a, &b].iter().map(|x| p.encode_tensor(x).unwrap()).collect();
        let batch2: Vec<_> = [&b, &a].iter().map(|x| p.encode_tensor(x).unwrap()).collect();
        assert_eq!(batch1[0], batch2[1]);
        assert_eq!(batch1[1], batch2[0]);
    }
}
