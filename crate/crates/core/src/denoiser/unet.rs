//! Reference conditional U-Net.
//!
//! Frames are stacked along the channel axis in fixed slots: `k_latent`
//! slots for the noisy frames, then `k_obs` slots for the observed frames,
//! each observed slot followed by a binary mask channel. Inside each group
//! frames are placed in ascending frame-index order, so the order in which a
//! caller supplies them does not matter; identity comes from a learned
//! per-frame-index embedding. Slots left empty get a dedicated padding
//! embedding.
//!
//! ```text
//! conv_in -> res_hi ----------------------------------------> concat -> res_out -> conv_out
//!               \-> down (stride 2) -> mid1 -> attn -> mid2 -> up -/
//! ```
//!
//! The step embedding (sinusoidal) and the slot index embeddings feed a
//! small MLP whose output is added as a per-channel bias inside every
//! residual block.

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var, D};
use ndarray::Array4;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{check_blocks, ConditioningLayout, NoisePredictor};
use crate::corpus::Video;
use crate::error::{Error, Result};
use crate::schedule::NoiseSchedule;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UNetConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Slots for frames being denoised.
    pub k_latent: usize,
    /// Slots for conditioning frames.
    pub k_obs: usize,
    /// Channel width at full resolution.
    pub base_width: usize,
    /// Channel width at the half-resolution bottleneck.
    pub mid_width: usize,
    pub index_embed_dim: usize,
    pub time_embed_dim: usize,
    pub cond_dim: usize,
    pub norm_groups: usize,
    /// Frame indices must be below this.
    pub max_frames: usize,
    pub attention: bool,
    pub output: OutputKind,
}

/// How the raw network output `F` becomes the noise estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputKind {
    /// `eps = F`.
    Noise,
    /// `eps = sqrt(1 - alpha_bar_t) * x_t + sqrt(alpha_bar_t) * F`, so `F`
    /// estimates the velocity `sqrt(alpha_bar_t) eps - sqrt(1 - alpha_bar_t) x_0`.
    #[default]
    Velocity,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self {
            height: 16,
            width: 16,
            channels: 3,
            k_latent: 10,
            k_obs: 10,
            base_width: 32,
            mid_width: 64,
            index_embed_dim: 8,
            time_embed_dim: 32,
            cond_dim: 64,
            norm_groups: 8,
            max_frames: 256,
            attention: true,
            output: OutputKind::Velocity,
        }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("height", self.height),
            ("width", self.width),
            ("channels", self.channels),
            ("k_latent", self.k_latent),
            ("base_width", self.base_width),
            ("mid_width", self.mid_width),
            ("index_embed_dim", self.index_embed_dim),
            ("time_embed_dim", self.time_embed_dim),
            ("cond_dim", self.cond_dim),
            ("norm_groups", self.norm_groups),
            ("max_frames", self.max_frames),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("model {name} must be at least 1")));
        }
        if self.height % 2 != 0 || self.width % 2 != 0 {
            return Err(Error::Config(format!(
                "model frame size {}x{} must be even for the two-level U-Net",
                self.height, self.width
            )));
        }
        Ok(())
    }

    fn slots(&self) -> usize {
        self.k_latent + self.k_obs
    }

    fn in_channels(&self) -> usize {
        self.k_latent * self.channels + self.k_obs * (self.channels + 1)
    }

    fn groups_for(&self, channels: usize) -> usize {
        gcd(self.norm_groups, channels)
    }

    fn pad_id(&self) -> u32 {
        self.max_frames as u32
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

#[derive(Debug, Clone, Copy)]
enum Init {
    /// Normal with standard deviation `1 / sqrt(fan_in)`.
    LeCun(usize),
    Normal(f64),
    Zeros,
    Ones,
}

#[derive(Default)]
struct Specs(Vec<(String, Vec<usize>, Init)>);

impl Specs {
    fn conv(&mut self, name: &str, cout: usize, cin: usize, k: usize) {
        self.0.push((
            format!("{name}.w"),
            vec![cout, cin, k, k],
            Init::LeCun(cin * k * k),
        ));
        self.0.push((format!("{name}.b"), vec![cout], Init::Zeros));
    }

    fn linear(&mut self, name: &str, out: usize, inp: usize) {
        self.0
            .push((format!("{name}.w"), vec![out, inp], Init::LeCun(inp)));
        self.0.push((format!("{name}.b"), vec![out], Init::Zeros));
    }

    fn norm(&mut self, name: &str, c: usize) {
        self.0.push((format!("{name}.g"), vec![c], Init::Ones));
        self.0.push((format!("{name}.b"), vec![c], Init::Zeros));
    }

    fn res(&mut self, name: &str, cin: usize, cout: usize, cond_dim: usize) {
        self.norm(&format!("{name}.norm1"), cin);
        self.conv(&format!("{name}.conv1"), cout, cin, 3);
        self.linear(&format!("{name}.emb"), cout, cond_dim);
        self.norm(&format!("{name}.norm2"), cout);
        self.conv(&format!("{name}.conv2"), cout, cout, 3);
        if cin != cout {
            self.conv(&format!("{name}.skip"), cout, cin, 1);
        }
    }
}

fn param_specs(cfg: &UNetConfig) -> Vec<(String, Vec<usize>, Init)> {
    let (c1, c2, cd) = (cfg.base_width, cfg.mid_width, cfg.cond_dim);
    let mut s = Specs::default();
    s.0.push((
        "index_embed".to_string(),
        vec![cfg.max_frames + 1, cfg.index_embed_dim],
        Init::Normal(1.0),
    ));
    s.linear(
        "cond.l1",
        cd,
        cfg.time_embed_dim + cfg.slots() * cfg.index_embed_dim,
    );
    s.linear("cond.l2", cd, cd);
    s.conv("conv_in", c1, cfg.in_channels(), 3);
    s.res("res_hi", c1, c1, cd);
    s.conv("down", c2, c1, 3);
    s.res("mid1", c2, c2, cd);
    if cfg.attention {
        s.norm("attn.norm", c2);
        s.linear("attn.qkv", 3 * c2, c2);
        s.linear("attn.proj", c2, c2);
    }
    s.res("mid2", c2, c2, cd);
    s.conv("up", c1, c2, 3);
    s.res("res_out", 2 * c1, c1, cd);
    s.norm("out_norm", c1);
    s.conv("conv_out", cfg.k_latent * cfg.channels, c1, 3);
    // start from a zero raw output
    s.0.iter_mut()
        .filter(|(name, _, _)| name == "conv_out.w")
        .for_each(|(_, _, init)| *init = Init::Zeros);
    s.0
}

/// The reference network with its parameters.
pub struct UNetDenoiser {
    config: UNetConfig,
    dtype: DType,
    params: BTreeMap<String, Var>,
    /// Needed at inference by the velocity output.
    alpha_bars: Vec<f64>,
}

impl std::fmt::Debug for UNetDenoiser {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("UNetDenoiser")
            .field("config", &self.config)
            .field("dtype", &self.dtype)
            .field("parameters", &self.num_parameters())
            .finish()
    }
}

impl Clone for UNetDenoiser {
    /// Deep copy: the clone's parameters are independent of the original's.
    fn clone(&self) -> Self {
        let params = self
            .params
            .iter()
            .map(|(k, v)| {
                let t = v.as_tensor().copy().expect("cpu copy");
                (k.clone(), Var::from_tensor(&t).expect("var from tensor"))
            })
            .collect();
        Self {
            config: self.config.clone(),
            dtype: self.dtype,
            params,
            alpha_bars: self.alpha_bars.clone(),
        }
    }
}

impl UNetDenoiser {
    /// Fresh parameters drawn from `seed`. `dtype` is `F32` for normal use;
    /// `F64` is available for gradient checking.
    pub fn new(config: UNetConfig, dtype: DType, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = BTreeMap::new();
        for (name, shape, init) in param_specs(&config) {
            let n: usize = shape.iter().product();
            let values: Vec<f64> = match init {
                Init::LeCun(fan_in) => {
                    let std = 1.0 / (fan_in as f64).sqrt();
                    (0..n)
                        .map(|_| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            std * z
                        })
                        .collect()
                }
                Init::Normal(std) => (0..n)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        std * z
                    })
                    .collect(),
                Init::Zeros => vec![0.0; n],
                Init::Ones => vec![1.0; n],
            };
            let t = Tensor::from_vec(values, shape, &Device::Cpu)?.to_dtype(dtype)?;
            params.insert(name, Var::from_tensor(&t)?);
        }
        Ok(Self {
            config,
            dtype,
            params,
            alpha_bars: Vec::new(),
        })
    }

    /// Rebuild from named parameter tensors (as stored in a checkpoint).
    pub fn from_parameters(
        config: UNetConfig,
        dtype: DType,
        tensors: Vec<(String, Vec<usize>, Vec<f32>)>,
    ) -> Result<Self> {
        config.validate()?;
        let expected: BTreeMap<String, Vec<usize>> = param_specs(&config)
            .into_iter()
            .map(|(name, shape, _)| (name, shape))
            .collect();
        if expected.len() != tensors.len() {
            return Err(Error::CheckpointCompat(format!(
                "checkpoint carries {} tensors, model expects {}",
                tensors.len(),
                expected.len()
            )));
        }
        let mut params = BTreeMap::new();
        for (name, shape, values) in tensors {
            match expected.get(&name) {
                Some(s) if *s == shape => {}
                _ => {
                    return Err(Error::CheckpointCompat(format!(
                        "parameter {name} {shape:?} does not fit the model"
                    )))
                }
            }
            let t = Tensor::from_vec(values, shape, &Device::Cpu)?.to_dtype(dtype)?;
            params.insert(name, Var::from_tensor(&t)?);
        }
        Ok(Self {
            config,
            dtype,
            params,
            alpha_bars: Vec::new(),
        })
    }

    /// The schedule `predict_noise` runs against. Training and checkpoint
    /// loading set it.
    pub fn set_schedule(&mut self, schedule: &NoiseSchedule) {
        self.alpha_bars = schedule.alpha_bars().to_vec();
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn num_parameters(&self) -> usize {
        self.params.values().map(|v| v.elem_count()).sum()
    }

    pub fn parameter_names(&self) -> Vec<String> {
        self.params.keys().cloned().collect()
    }

    pub fn parameter(&self, name: &str) -> Result<Vec<f64>> {
        let var = self.var(name)?;
        Ok(var
            .as_tensor()
            .flatten_all()?
            .to_dtype(DType::F64)?
            .to_vec1()?)
    }

    pub fn set_parameter(&self, name: &str, values: &[f64]) -> Result<()> {
        let var = self.var(name)?;
        if values.len() != var.elem_count() {
            return Err(Error::Contract(format!(
                "parameter {name} has {} entries, got {}",
                var.elem_count(),
                values.len()
            )));
        }
        let t = Tensor::from_slice(values, var.shape(), &Device::Cpu)?.to_dtype(self.dtype)?;
        var.set(&t)?;
        Ok(())
    }

    /// All parameters as `(name, shape, f32 values)`, sorted by name.
    pub fn parameters_f32(&self) -> Result<Vec<(String, Vec<usize>, Vec<f32>)>> {
        self.params
            .iter()
            .map(|(name, v)| {
                let values = v
                    .as_tensor()
                    .flatten_all()?
                    .to_dtype(DType::F32)?
                    .to_vec1()?;
                Ok((name.clone(), v.dims().to_vec(), values))
            })
            .collect()
    }

    pub(crate) fn vars(&self) -> Vec<Var> {
        self.params.values().cloned().collect()
    }

    fn var(&self, name: &str) -> Result<&Var> {
        self.params
            .get(name)
            .ok_or_else(|| Error::Contract(format!("no parameter named {name}")))
    }

    fn p(&self, name: &str) -> &Tensor {
        self.params
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} missing from spec"))
            .as_tensor()
    }

    /// Pack the blocks into slot order. Returns the input tensor, the slot
    /// ids and, for each occupied noisy slot, the caller's position of that
    /// frame.
    fn pack(
        &self,
        x_t: &Array4<f32>,
        y: &Array4<f32>,
        layout: &ConditioningLayout,
    ) -> Result<(Tensor, Vec<u32>, Vec<usize>)> {
        check_blocks(x_t, y, layout)?;
        let cfg = &self.config;
        let (_, h, w, c) = x_t.dim();
        if (h, w, c) != (cfg.height, cfg.width, cfg.channels) {
            return Err(Error::Contract(format!(
                "frames are {h}x{w}x{c}, model expects {}x{}x{}",
                cfg.height, cfg.width, cfg.channels
            )));
        }
        if layout.x.len() > cfg.k_latent || layout.y.len() > cfg.k_obs {
            return Err(Error::Contract(format!(
                "layout has {} noisy and {} observed frames, model holds at most {} and {}",
                layout.x.len(),
                layout.y.len(),
                cfg.k_latent,
                cfg.k_obs
            )));
        }
        if let Some(i) = layout
            .x
            .iter()
            .chain(&layout.y)
            .find(|&&i| i >= cfg.max_frames)
        {
            return Err(Error::Contract(format!(
                "frame index {i} exceeds model max_frames {}",
                cfg.max_frames
            )));
        }
        let mut x_order: Vec<usize> = (0..layout.x.len()).collect();
        x_order.sort_by_key(|&i| layout.x[i]);
        let mut y_order: Vec<usize> = (0..layout.y.len()).collect();
        y_order.sort_by_key(|&i| layout.y[i]);

        let plane = h * w;
        let mut data = vec![0f32; cfg.in_channels() * plane];
        let mut put = |channel: usize, frame: ndarray::ArrayView3<f32>, ch: usize| {
            let base = channel * plane;
            for r in 0..h {
                for col in 0..w {
                    data[base + r * w + col] = frame[[r, col, ch]];
                }
            }
        };
        for (slot, &src) in x_order.iter().enumerate() {
            let frame = x_t.index_axis(ndarray::Axis(0), src);
            for ch in 0..c {
                put(slot * c + ch, frame, ch);
            }
        }
        let y_base = cfg.k_latent * c;
        for (slot, &src) in y_order.iter().enumerate() {
            let frame = y.index_axis(ndarray::Axis(0), src);
            for ch in 0..c {
                put(y_base + slot * (c + 1) + ch, frame, ch);
            }
        }
        for slot in 0..y_order.len() {
            let base = (y_base + slot * (c + 1) + c) * plane;
            data[base..base + plane].fill(1.0);
        }
        let mut ids = vec![cfg.pad_id(); cfg.slots()];
        for (slot, &src) in x_order.iter().enumerate() {
            ids[slot] = layout.x[src] as u32;
        }
        for (slot, &src) in y_order.iter().enumerate() {
            ids[cfg.k_latent + slot] = layout.y[src] as u32;
        }
        let input = Tensor::from_vec(data, (1, cfg.in_channels(), h, w), &Device::Cpu)?
            .to_dtype(self.dtype)?;
        Ok((input, ids, x_order))
    }

    fn step_embedding(&self, t: usize) -> Result<Tensor> {
        let dim = self.config.time_embed_dim;
        let half = dim / 2;
        let mut v = vec![0f64; dim];
        for i in 0..half {
            let freq = (-(10_000f64.ln()) * i as f64 / half.max(1) as f64).exp();
            v[i] = (t as f64 * freq).sin();
            v[half + i] = (t as f64 * freq).cos();
        }
        Ok(Tensor::from_vec(v, (1, dim), &Device::Cpu)?.to_dtype(self.dtype)?)
    }

    fn conv(&self, x: &Tensor, name: &str, padding: usize, stride: usize) -> Result<Tensor> {
        let w = self.p(&format!("{name}.w"));
        let b = self.p(&format!("{name}.b"));
        let y = x.conv2d(w, padding, stride, 1, 1)?;
        Ok(y.broadcast_add(&b.reshape((1, b.elem_count(), 1, 1))?)?)
    }

    fn linear(&self, x: &Tensor, name: &str) -> Result<Tensor> {
        let w = self.p(&format!("{name}.w"));
        let b = self.p(&format!("{name}.b"));
        Ok(x.matmul(&w.t()?)?.broadcast_add(b)?)
    }

    fn norm(&self, x: &Tensor, name: &str) -> Result<Tensor> {
        let (n, c, h, w) = x.dims4()?;
        let groups = self.config.groups_for(c);
        let xg = x.reshape((n, groups, (c / groups) * h * w))?;
        let mean = xg.mean_keepdim(2)?;
        let centered = xg.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(2)?;
        let normed = centered.broadcast_div(&(var + 1e-5)?.sqrt()?)?;
        let g = self.p(&format!("{name}.g")).reshape((1, c, 1, 1))?;
        let b = self.p(&format!("{name}.b")).reshape((1, c, 1, 1))?;
        Ok(normed
            .reshape((n, c, h, w))?
            .broadcast_mul(&g)?
            .broadcast_add(&b)?)
    }

    fn res_block(&self, x: &Tensor, cond: &Tensor, name: &str) -> Result<Tensor> {
        let h = self.norm(x, &format!("{name}.norm1"))?.silu()?;
        let h = self.conv(&h, &format!("{name}.conv1"), 1, 1)?;
        let emb = self.linear(&cond.silu()?, &format!("{name}.emb"))?;
        let cout = emb.elem_count();
        let h = h.broadcast_add(&emb.reshape((1, cout, 1, 1))?)?;
        let h = self.norm(&h, &format!("{name}.norm2"))?.silu()?;
        let h = self.conv(&h, &format!("{name}.conv2"), 1, 1)?;
        let skip = if self.params.contains_key(&format!("{name}.skip.w")) {
            self.conv(x, &format!("{name}.skip"), 0, 1)?
        } else {
            x.clone()
        };
        Ok((h + skip)?)
    }

    fn attention(&self, x: &Tensor) -> Result<Tensor> {
        let (_, c, h, w) = x.dims4()?;
        let tokens = self
            .norm(x, "attn.norm")?
            .reshape((c, h * w))?
            .t()?
            .contiguous()?;
        let qkv = self.linear(&tokens, "attn.qkv")?;
        let q = qkv.narrow(1, 0, c)?.contiguous()?;
        let k = qkv.narrow(1, c, c)?.contiguous()?;
        let v = qkv.narrow(1, 2 * c, c)?.contiguous()?;
        let scores = (q.matmul(&k.t()?.contiguous()?)? * (1.0 / (c as f64).sqrt()))?;
        // Shift by the (constant) row maximum for stability.
        let max = scores.max_keepdim(D::Minus1)?.detach();
        let e = scores.broadcast_sub(&max)?.exp()?;
        let attn = e.broadcast_div(&e.sum_keepdim(D::Minus1)?)?;
        let out = self.linear(&attn.matmul(&v)?, "attn.proj")?;
        let out = out.t()?.contiguous()?.reshape((1, c, h, w))?;
        Ok((x + out)?)
    }

    fn forward(&self, input: &Tensor, t: usize, ids: &[u32]) -> Result<Tensor> {
        let cfg = &self.config;
        let ids = Tensor::from_slice(ids, ids.len(), &Device::Cpu)?;
        let index = self
            .p("index_embed")
            .index_select(&ids, 0)?
            .reshape((1, cfg.slots() * cfg.index_embed_dim))?;
        let cond = Tensor::cat(&[&self.step_embedding(t)?, &index], 1)?;
        let cond = self.linear(&self.linear(&cond, "cond.l1")?.silu()?, "cond.l2")?;

        let h0 = self.conv(input, "conv_in", 1, 1)?;
        let hi = self.res_block(&h0, &cond, "res_hi")?;
        let mid = self.conv(&hi, "down", 1, 2)?;
        let mid = self.res_block(&mid, &cond, "mid1")?;
        let mid = if cfg.attention {
            self.attention(&mid)?
        } else {
            mid
        };
        let mid = self.res_block(&mid, &cond, "mid2")?;
        let up = mid.upsample_nearest2d(cfg.height, cfg.width)?;
        let up = self.conv(&up, "up", 1, 1)?;
        let joined = Tensor::cat(&[&up, &hi], 1)?;
        let out = self.res_block(&joined, &cond, "res_out")?;
        let out = self.norm(&out, "out_norm")?.silu()?;
        self.conv(&out, "conv_out", 1, 1)
    }

    /// Prediction for the occupied noisy slots, `(1, |x| * C, H, W)` in slot
    /// order, plus the slot-to-caller permutation.
    fn predict_slots(
        &self,
        x_t: &Array4<f32>,
        t: usize,
        y: &Array4<f32>,
        layout: &ConditioningLayout,
        alpha_bar: f64,
    ) -> Result<(Tensor, Vec<usize>)> {
        let (input, ids, order) = self.pack(x_t, y, layout)?;
        let out = self.forward(&input, t, &ids)?;
        let used = order.len() * self.config.channels;
        let raw = out.narrow(1, 0, used)?;
        let eps = match self.config.output {
            OutputKind::Noise => raw,
            OutputKind::Velocity => {
                let noisy = input.narrow(1, 0, used)?;
                ((noisy * (1.0 - alpha_bar).sqrt())? + (raw * alpha_bar.sqrt())?)?
            }
        };
        Ok((eps, order))
    }

    fn inference_alpha_bar(&self, t: usize) -> Result<f64> {
        if self.alpha_bars.is_empty() {
            return match self.config.output {
                OutputKind::Noise if t >= 1 => Ok(0.0),
                OutputKind::Noise => Err(Error::StepOutOfRange { t, steps: 0 }),
                OutputKind::Velocity => Err(Error::Contract(
                    "velocity-output model has no noise schedule attached".into(),
                )),
            };
        }
        match t.checked_sub(1).and_then(|i| self.alpha_bars.get(i)) {
            Some(&ab) => Ok(ab),
            None => Err(Error::StepOutOfRange {
                t,
                steps: self.alpha_bars.len(),
            }),
        }
    }

    /// Differentiable training objective for one example.
    pub(crate) fn loss_tensor(
        &self,
        video: &Video,
        layout: &ConditioningLayout,
        t: usize,
        noise: &Array4<f32>,
        schedule: &NoiseSchedule,
    ) -> Result<Tensor> {
        layout.validate(video.len())?;
        let x0 = video.select(&layout.x);
        let x_t = schedule.marginal(&x0, t, noise)?;
        let y = video.select(&layout.y);
        let (pred, order) = self.predict_slots(&x_t, t, &y, layout, schedule.alpha_bar(t)?)?;
        let (_, h, w, c) = noise.dim();
        let mut target = Vec::with_capacity(noise.len());
        for &src in &order {
            for ch in 0..c {
                for r in 0..h {
                    for col in 0..w {
                        target.push(noise[[src, r, col, ch]]);
                    }
                }
            }
        }
        let target = Tensor::from_vec(target, pred.shape(), &Device::Cpu)?.to_dtype(self.dtype)?;
        Ok((pred - target)?.sqr()?.mean_all()?)
    }

    /// Loss value and its gradient for every parameter.
    pub fn loss_and_gradients(
        &self,
        video: &Video,
        layout: &ConditioningLayout,
        t: usize,
        noise: &Array4<f32>,
        schedule: &NoiseSchedule,
    ) -> Result<(f64, BTreeMap<String, Vec<f64>>)> {
        let loss = self.loss_tensor(video, layout, t, noise, schedule)?;
        let grads = loss.backward()?;
        let mut out = BTreeMap::new();
        for (name, var) in &self.params {
            let g = match grads.get(var.as_tensor()) {
                Some(g) => g.flatten_all()?.to_dtype(DType::F64)?.to_vec1()?,
                None => vec![0.0; var.elem_count()],
            };
            out.insert(name.clone(), g);
        }
        let value = loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        Ok((value, out))
    }
}

impl NoisePredictor for UNetDenoiser {
    fn predict_noise(
        &self,
        x_t: &Array4<f32>,
        t: usize,
        y: &Array4<f32>,
        layout: &ConditioningLayout,
    ) -> Result<Array4<f32>> {
        let alpha_bar = self.inference_alpha_bar(t)?;
        let (pred, order) = self.predict_slots(x_t, t, y, layout, alpha_bar)?;
        let values: Vec<f32> = pred.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?;
        let (n, h, w, c) = x_t.dim();
        let mut out = Array4::zeros((n, h, w, c));
        let plane = h * w;
        for (slot, &dst) in order.iter().enumerate() {
            for ch in 0..c {
                let base = (slot * c + ch) * plane;
                for r in 0..h {
                    for col in 0..w {
                        out[[dst, r, col, ch]] = values[base + r * w + col];
                    }
                }
            }
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalDegeneracy(
                "network produced a non-finite noise estimate".into(),
            ));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;

    fn tiny() -> UNetConfig {
        UNetConfig {
            height: 4,
            width: 4,
            channels: 1,
            k_latent: 1,
            k_obs: 1,
            base_width: 2,
            mid_width: 2,
            index_embed_dim: 2,
            time_embed_dim: 4,
            cond_dim: 8,
            norm_groups: 1,
            max_frames: 4,
            attention: true,
            output: OutputKind::Velocity,
        }
    }

    fn tiny_model() -> UNetDenoiser {
        let mut m = UNetDenoiser::new(tiny(), DType::F32, 0).unwrap();
        m.set_schedule(&NoiseSchedule::linear(4, 0.1, 0.2).unwrap());
        m
    }

    #[test]
    fn velocity_output_needs_a_schedule() {
        let m = UNetDenoiser::new(tiny(), DType::F32, 0).unwrap();
        let x = Array4::zeros((1, 4, 4, 1));
        let y = Array4::zeros((0, 4, 4, 1));
        let layout = ConditioningLayout::new(vec![0], vec![]).unwrap();
        assert!(matches!(
            m.predict_noise(&x, 1, &y, &layout),
            Err(Error::Contract(_))
        ));
        let m = tiny_model();
        assert!(matches!(
            m.predict_noise(&x, 5, &y, &layout),
            Err(Error::StepOutOfRange { t: 5, steps: 4 })
        ));
        // zero-initialised output layer: eps = sqrt(1 - alpha_bar) x_t
        let x = Array4::from_elem((1, 4, 4, 1), 0.5f32);
        let eps = m.predict_noise(&x, 1, &y, &layout).unwrap();
        assert!(eps.iter().all(|&e| (e as f64 - 0.5 * 0.1f64.sqrt()).abs() < 1e-6));
    }

    #[test]
    fn tiny_network_fits_gradient_check_budget() {
        let m = UNetDenoiser::new(tiny(), DType::F64, 0).unwrap();
        assert!(m.num_parameters() <= 1000, "{}", m.num_parameters());
    }

    #[test]
    fn default_network_output_shape() {
        let cfg = UNetConfig::default();
        let mut m = UNetDenoiser::new(cfg, DType::F32, 1).unwrap();
        let x = Array4::from_elem((5, 16, 16, 3), 0.1f32);
        m.set_schedule(&NoiseSchedule::linear(200, 1e-4, 0.02).unwrap());
        let y = Array4::from_elem((3, 16, 16, 3), -0.2f32);
        let layout = ConditioningLayout::new(vec![10, 11, 12, 13, 14], vec![7, 8, 9]).unwrap();
        let out = m.predict_noise(&x, 50, &y, &layout).unwrap();
        assert_eq!(out.dim(), (5, 16, 16, 3));
        assert!(out.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn rejects_layout_larger_than_slots() {
        let m = tiny_model();
        let x = Array4::zeros((2, 4, 4, 1));
        let y = Array4::zeros((0, 4, 4, 1));
        let layout = ConditioningLayout::new(vec![0, 1], vec![]).unwrap();
        assert!(matches!(
            m.predict_noise(&x, 1, &y, &layout),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn rejects_block_layout_mismatch() {
        let m = tiny_model();
        let x = Array4::zeros((1, 4, 4, 1));
        let y = Array4::zeros((1, 4, 4, 1));
        let layout = ConditioningLayout::new(vec![0], vec![]).unwrap();
        assert!(matches!(
            m.predict_noise(&x, 1, &y, &layout),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn odd_frame_size_rejected() {
        let cfg = UNetConfig {
            height: 5,
            ..tiny()
        };
        assert!(UNetDenoiser::new(cfg, DType::F32, 0).is_err());
    }

    #[test]
    fn clone_is_deep() {
        let m = tiny_model();
        let c = m.clone();
        let name = "conv_in.b";
        m.set_parameter(name, &[1.0, 2.0]).unwrap();
        assert_eq!(c.parameter(name).unwrap(), vec![0.0, 0.0]);
    }
}
