//! The KAN-Mixer network: image-to-patches, per-patch KAN embedding, a stack
//! of token-mixing / channel-mixing KAN blocks, and the output head.
//!
//! Data flows `[B,C,H,W] -> [B,N,P^2*C] -> [B,N,D] -> ... -> [B,D] ->
//! [B,n_output]`. Token mixing transposes to `[B,D,N]` and applies a
//! KANLinear pair `N -> H_mix -> N` along the last axis; channel mixing
//! applies a `D -> H_mix -> D` pair per token. With `residual` enabled each
//! sublayer becomes a pre-norm residual block, `x + mix(norm(x))`; without
//! it the sublayers are applied plainly, and the per-block norms are unused.
//! The head always applies layer norm, a mean over the token axis, and a
//! final KANLinear.

use crate::bspline::SplineGrid;
use crate::error::{KanError, Result};
use crate::kan_linear::KanLinearLayer;
use crate::tensor::{layer_norm, layer_norm_backward, LayerNormCache, Tensor};
use serde::{Deserialize, Serialize};

pub const DEFAULT_PATCH_SIZE: usize = 4;
pub const DEFAULT_DEPTH: usize = 4;
pub const DEFAULT_SPLINE_ORDER: usize = 3;
pub const DEFAULT_GRID_SIZE: usize = 5;
pub const GRID_RANGE: [f64; 2] = [-1.0, 1.0];
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixerConfig {
    pub patch_size: usize,
    /// Embedding width D.
    pub n_channels: usize,
    /// Hidden width of each mixing pair.
    pub n_hiddens: usize,
    /// Number of mixer blocks.
    pub depth: usize,
    pub n_output: usize,
    pub in_channels: usize,
    pub image_h: usize,
    pub image_w: usize,
    pub spline_order: usize,
    pub grid_size: usize,
    pub residual: bool,
    pub seed: u64,
}

impl MixerConfig {
    /// The tiny configuration used by gradient checks: 1x4x4 input, P=2,
    /// D=4, H_mix=4, one block, three classes.
    pub fn tiny() -> Self {
        MixerConfig {
            patch_size: 2,
            n_channels: 4,
            n_hiddens: 4,
            depth: 1,
            n_output: 3,
            in_channels: 1,
            image_h: 4,
            image_w: 4,
            spline_order: DEFAULT_SPLINE_ORDER,
            grid_size: DEFAULT_GRID_SIZE,
            residual: false,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0
            || self.image_h % self.patch_size != 0
            || self.image_w % self.patch_size != 0
        {
            return Err(KanError::PatchDivisibility(format!(
                "image {}x{} not divisible by patch size {}",
                self.image_h, self.image_w, self.patch_size
            )));
        }
        if self.n_channels == 0 || self.n_hiddens == 0 || self.n_output == 0 {
            return Err(KanError::InvalidDim(
                "n_channels, n_hiddens, and n_output must be >= 1".to_string(),
            ));
        }
        if self.in_channels == 0 || self.image_h == 0 || self.image_w == 0 {
            return Err(KanError::InvalidDim("image dims must be >= 1".to_string()));
        }
        Ok(())
    }

    /// Token count N = (H/P) * (W/P).
    pub fn n_patches(&self) -> usize {
        (self.image_h / self.patch_size) * (self.image_w / self.patch_size)
    }

    /// Pixels per patch, P^2 * C.
    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.in_channels
    }

    fn grid(&self) -> Result<SplineGrid> {
        SplineGrid::new(self.spline_order, self.grid_size, GRID_RANGE)
    }
}

/// Splits `[B,C,H,W]` into non-overlapping P x P patches: result
/// `[B, N, P^2*C]` with patches in row-major order over the patch grid and,
/// within a patch, pixels row-major per channel with channels outermost.
/// A pure permutation of the elements; [`patches_to_image`] is its inverse.
pub fn image_to_patches(x: &Tensor, patch_size: usize) -> Result<Tensor> {
    let [b, c, h, w] = dims4(x)?;
    let p = patch_size;
    if p == 0 || h % p != 0 || w % p != 0 {
        return Err(KanError::PatchDivisibility(format!(
            "image {h}x{w} not divisible by patch size {p}"
        )));
    }
    let (gh, gw) = (h / p, w / p);
    let n = gh * gw;
    let pd = p * p * c;
    let mut out = Vec::with_capacity(x.numel());
    for bi in 0..b {
        for gi in 0..gh {
            for gj in 0..gw {
                for ci in 0..c {
                    for pi in 0..p {
                        for pj in 0..p {
                            let row = gi * p + pi;
                            let col = gj * p + pj;
                            out.push(x.data[((bi * c + ci) * h + row) * w + col]);
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[b, n, pd], out)
}

/// Exact inverse of [`image_to_patches`].
pub fn patches_to_image(
    xp: &Tensor,
    patch_size: usize,
    channels: usize,
    image_h: usize,
    image_w: usize,
) -> Result<Tensor> {
    let p = patch_size;
    let (gh, gw) = (image_h / p, image_w / p);
    let n = gh * gw;
    let pd = p * p * channels;
    let b = match xp.shape.as_slice() {
        &[b, np, d] if np == n && d == pd => b,
        other => {
            return Err(KanError::ShapeMismatch(format!(
                "patches_to_image expects [B,{n},{pd}], got {other:?}"
            )))
        }
    };
    let mut out = vec![0.0; b * channels * image_h * image_w];
    let mut src = 0;
    for bi in 0..b {
        for gi in 0..gh {
            for gj in 0..gw {
                for ci in 0..channels {
                    for pi in 0..p {
                        for pj in 0..p {
                            let row = gi * p + pi;
                            let col = gj * p + pj;
                            out[((bi * channels + ci) * image_h + row) * image_w + col] =
                                xp.data[src];
                            src += 1;
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[b, channels, image_h, image_w], out)
}

fn dims4(x: &Tensor) -> Result<[usize; 4]> {
    match x.shape.as_slice() {
        &[a, b, c, d] => Ok([a, b, c, d]),
        other => Err(KanError::ShapeMismatch(format!(
            "expected rank-4 [B,C,H,W], got {other:?}"
        ))),
    }
}

/// Layer normalization over the last axis with learnable gain and bias.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: Tensor,
    pub bias: Tensor,
    pub eps: f64,
    cache: Option<LayerNormCache>,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        LayerNorm {
            gain: Tensor::from_vec(&[dim], vec![1.0; dim]).unwrap().with_grad(),
            bias: Tensor::zeros(&[dim]).with_grad(),
            eps: LAYER_NORM_EPS,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let (y, cache) = layer_norm(x, &self.gain.data, &self.bias.data, self.eps)?;
        self.cache = Some(cache);
        Ok(y)
    }

    pub fn backward(&mut self, d_out: &Tensor) -> Result<Tensor> {
        let cache = self
            .cache
            .as_ref()
            .ok_or(KanError::StaleCache("layer norm backward without forward"))?;
        let (dx, d_gain, d_bias) = layer_norm_backward(cache, &self.gain.data, d_out);
        for (g, v) in self.gain.grad_mut().iter_mut().zip(d_gain) {
            *g += v;
        }
        for (g, v) in self.bias.grad_mut().iter_mut().zip(d_bias) {
            *g += v;
        }
        Ok(dx)
    }

    fn cached_bytes(&self) -> usize {
        self.cache
            .as_ref()
            .map(|c| (c.x_hat.len() + c.inv_std.len()) * 8)
            .unwrap_or(0)
    }

    fn zero_grad(&mut self) {
        self.gain.zero_grad();
        self.bias.zero_grad();
    }
}

/// One mixer block: a token-mixing pair and a channel-mixing pair, each with
/// its own pre-norm parameters (used only in residual mode).
#[derive(Debug, Clone)]
pub struct MixerBlock {
    pub norm1: LayerNorm,
    pub token_fc1: KanLinearLayer,
    pub token_fc2: KanLinearLayer,
    pub norm2: LayerNorm,
    pub channel_fc1: KanLinearLayer,
    pub channel_fc2: KanLinearLayer,
}

impl MixerBlock {
    fn new(config: &MixerConfig, seed: &mut SeedSequence) -> Result<Self> {
        let n = config.n_patches();
        let d = config.n_channels;
        let h = config.n_hiddens;
        Ok(MixerBlock {
            norm1: LayerNorm::new(d),
            token_fc1: KanLinearLayer::init(n, h, config.grid()?, seed.next())?,
            token_fc2: KanLinearLayer::init(h, n, config.grid()?, seed.next())?,
            norm2: LayerNorm::new(d),
            channel_fc1: KanLinearLayer::init(d, h, config.grid()?, seed.next())?,
            channel_fc2: KanLinearLayer::init(h, d, config.grid()?, seed.next())?,
        })
    }

    /// Mixes along the token axis: `[B,N,D]` is transposed to `[B,D,N]`, the
    /// `N -> H_mix -> N` pair is applied along the last axis, and the result
    /// transposed back. Channels never mix here.
    pub fn token_mixing_forward(&mut self, x: &Tensor, residual: bool) -> Result<Tensor> {
        let pre = if residual { self.norm1.forward(x)? } else { x.clone() };
        let u = pre.transpose_last_two()?;
        let hidden = self.token_fc1.forward(&u)?;
        let v = self.token_fc2.forward(&hidden)?;
        let mixed = v.transpose_last_two()?;
        if residual {
            x.add(&mixed)
        } else {
            Ok(mixed)
        }
    }

    pub fn token_mixing_backward(&mut self, d_out: &Tensor, residual: bool) -> Result<Tensor> {
        let d_mixed = d_out.transpose_last_two()?;
        let d_hidden = self.token_fc2.backward(&d_mixed)?;
        let d_u = self.token_fc1.backward(&d_hidden)?;
        let d_pre = d_u.transpose_last_two()?;
        if residual {
            let d_skip = self.norm1.backward(&d_pre)?;
            d_out.add(&d_skip)
        } else {
            Ok(d_pre)
        }
    }

    /// Mixes along the channel axis: the `D -> H_mix -> D` pair is applied
    /// to each token's embedding vector. Tokens never mix here.
    pub fn channel_mixing_forward(&mut self, x: &Tensor, residual: bool) -> Result<Tensor> {
        let pre = if residual { self.norm2.forward(x)? } else { x.clone() };
        let hidden = self.channel_fc1.forward(&pre)?;
        let mixed = self.channel_fc2.forward(&hidden)?;
        if residual {
            x.add(&mixed)
        } else {
            Ok(mixed)
        }
    }

    pub fn channel_mixing_backward(&mut self, d_out: &Tensor, residual: bool) -> Result<Tensor> {
        let d_hidden = self.channel_fc2.backward(d_out)?;
        let d_pre = self.channel_fc1.backward(&d_hidden)?;
        if residual {
            let d_skip = self.norm2.backward(&d_pre)?;
            d_out.add(&d_skip)
        } else {
            Ok(d_pre)
        }
    }
}

#[derive(Debug, Clone)]
pub struct KanMixerModel {
    pub config: MixerConfig,
    pub embed: KanLinearLayer,
    pub blocks: Vec<MixerBlock>,
    pub head_norm: LayerNorm,
    pub head: KanLinearLayer,
    /// Batch size of the last forward, kept for backward.
    fwd_batch: Option<usize>,
}

/// splitmix64 chain handing every layer its own init seed.
struct SeedSequence(u64);

impl SeedSequence {
    fn next(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
}

impl KanMixerModel {
    pub fn new(config: MixerConfig) -> Result<Self> {
        config.validate()?;
        let mut seed = SeedSequence(config.seed);
        let embed = KanLinearLayer::init(
            config.patch_dim(),
            config.n_channels,
            config.grid()?,
            seed.next(),
        )?;
        let blocks = (0..config.depth)
            .map(|_| MixerBlock::new(&config, &mut seed))
            .collect::<Result<Vec<_>>>()?;
        let head_norm = LayerNorm::new(config.n_channels);
        let head = KanLinearLayer::init(
            config.n_channels,
            config.n_output,
            config.grid()?,
            seed.next(),
        )?;
        Ok(KanMixerModel {
            config,
            embed,
            blocks,
            head_norm,
            head,
            fwd_batch: None,
        })
    }

    /// Applies the embedding KANLinear to each patch vector independently.
    pub fn per_patch_forward(&mut self, patches: &Tensor) -> Result<Tensor> {
        self.embed.forward(patches)
    }

    /// Full forward pass: patches, per-patch embedding, the mixer stack,
    /// layer norm, mean over tokens, and the output head.
    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let [b, c, h, w] = dims4(x)?;
        if c != self.config.in_channels || h != self.config.image_h || w != self.config.image_w {
            return Err(KanError::ShapeMismatch(format!(
                "input {:?} does not match configured image dims [{}, {}, {}]",
                x.shape, self.config.in_channels, self.config.image_h, self.config.image_w
            )));
        }
        let residual = self.config.residual;
        let patches = image_to_patches(x, self.config.patch_size)?;
        let mut state = self.embed.forward(&patches)?;
        for block in &mut self.blocks {
            state = block.token_mixing_forward(&state, residual)?;
            state = block.channel_mixing_forward(&state, residual)?;
        }
        let normed = self.head_norm.forward(&state)?;
        let pooled = normed.mean_axis(1)?;
        let logits = self.head.forward(&pooled)?;
        self.fwd_batch = Some(b);
        Ok(logits)
    }

    /// Reverse traversal of the forward pass. Fills every parameter gradient
    /// buffer (accumulating) and returns the gradient w.r.t. the input image.
    pub fn backward(&mut self, d_logits: &Tensor) -> Result<Tensor> {
        let b = self
            .fwd_batch
            .ok_or(KanError::StaleCache("model backward without forward"))?;
        if d_logits.shape != [b, self.config.n_output] {
            return Err(KanError::ShapeMismatch(format!(
                "backward expects [{b}, {}], got {:?}",
                self.config.n_output, d_logits.shape
            )));
        }
        let residual = self.config.residual;
        let n = self.config.n_patches();
        let d = self.config.n_channels;

        let d_pooled = self.head.backward(d_logits)?;
        // Mean over the token axis spreads each gradient evenly over tokens.
        let inv_n = 1.0 / n as f64;
        let mut d_normed = vec![0.0; b * n * d];
        for bi in 0..b {
            for t in 0..n {
                for di in 0..d {
                    d_normed[(bi * n + t) * d + di] = d_pooled.data[bi * d + di] * inv_n;
                }
            }
        }
        let mut d_state = self
            .head_norm
            .backward(&Tensor::from_vec(&[b, n, d], d_normed)?)?;
        for block in self.blocks.iter_mut().rev() {
            d_state = block.channel_mixing_backward(&d_state, residual)?;
            d_state = block.token_mixing_backward(&d_state, residual)?;
        }
        let d_patches = self.embed.backward(&d_state)?;
        patches_to_image(
            &d_patches,
            self.config.patch_size,
            self.config.in_channels,
            self.config.image_h,
            self.config.image_w,
        )
    }

    pub fn param_count(&self) -> usize {
        let mut count = 0;
        self.visit_params(&mut |_, t| count += t.numel());
        count
    }

    /// Bytes currently held in forward caches across all layers.
    pub fn cached_bytes(&self) -> usize {
        let mut total = self.embed.cached_bytes() + self.head.cached_bytes();
        total += self.head_norm.cached_bytes();
        for block in &self.blocks {
            total += block.norm1.cached_bytes()
                + block.token_fc1.cached_bytes()
                + block.token_fc2.cached_bytes()
                + block.norm2.cached_bytes()
                + block.channel_fc1.cached_bytes()
                + block.channel_fc2.cached_bytes();
        }
        total
    }

    pub fn zero_grad(&mut self) {
        self.embed.zero_grad();
        for block in &mut self.blocks {
            block.norm1.zero_grad();
            block.token_fc1.zero_grad();
            block.token_fc2.zero_grad();
            block.norm2.zero_grad();
            block.channel_fc1.zero_grad();
            block.channel_fc2.zero_grad();
        }
        self.head_norm.zero_grad();
        self.head.zero_grad();
    }

    /// Visits every parameter tensor in a fixed declaration order. The same
    /// order is used by the optimizer, the gradient checker, and the
    /// checkpoint format.
    pub fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        f("embed.w", &self.embed.w);
        f("embed.c", &self.embed.c);
        for (l, block) in self.blocks.iter().enumerate() {
            f(&format!("block{l}.norm1.gain"), &block.norm1.gain);
            f(&format!("block{l}.norm1.bias"), &block.norm1.bias);
            f(&format!("block{l}.token_fc1.w"), &block.token_fc1.w);
            f(&format!("block{l}.token_fc1.c"), &block.token_fc1.c);
            f(&format!("block{l}.token_fc2.w"), &block.token_fc2.w);
            f(&format!("block{l}.token_fc2.c"), &block.token_fc2.c);
            f(&format!("block{l}.norm2.gain"), &block.norm2.gain);
            f(&format!("block{l}.norm2.bias"), &block.norm2.bias);
            f(&format!("block{l}.channel_fc1.w"), &block.channel_fc1.w);
            f(&format!("block{l}.channel_fc1.c"), &block.channel_fc1.c);
            f(&format!("block{l}.channel_fc2.w"), &block.channel_fc2.w);
            f(&format!("block{l}.channel_fc2.c"), &block.channel_fc2.c);
        }
        f("head_norm.gain", &self.head_norm.gain);
        f("head_norm.bias", &self.head_norm.bias);
        f("head.w", &self.head.w);
        f("head.c", &self.head.c);
    }

    /// Mutable counterpart of [`visit_params`](Self::visit_params), same order.
    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f("embed.w", &mut self.embed.w);
        f("embed.c", &mut self.embed.c);
        for (l, block) in self.blocks.iter_mut().enumerate() {
            f(&format!("block{l}.norm1.gain"), &mut block.norm1.gain);
            f(&format!("block{l}.norm1.bias"), &mut block.norm1.bias);
            f(&format!("block{l}.token_fc1.w"), &mut block.token_fc1.w);
            f(&format!("block{l}.token_fc1.c"), &mut block.token_fc1.c);
            f(&format!("block{l}.token_fc2.w"), &mut block.token_fc2.w);
            f(&format!("block{l}.token_fc2.c"), &mut block.token_fc2.c);
            f(&format!("block{l}.norm2.gain"), &mut block.norm2.gain);
            f(&format!("block{l}.norm2.bias"), &mut block.norm2.bias);
            f(&format!("block{l}.channel_fc1.w"), &mut block.channel_fc1.w);
            f(&format!("block{l}.channel_fc1.c"), &mut block.channel_fc1.c);
            f(&format!("block{l}.channel_fc2.w"), &mut block.channel_fc2.w);
            f(&format!("block{l}.channel_fc2.c"), &mut block.channel_fc2.c);
        }
        f("head_norm.gain", &mut self.head_norm.gain);
        f("head_norm.bias", &mut self.head_norm.bias);
        f("head.w", &mut self.head.w);
        f("head.c", &mut self.head.c);
    }

    /// Rounds every parameter through f32, the checkpoint precision, so that
    /// a saved model reproduces in-memory results exactly.
    pub fn quantize_params_to_f32(&mut self) {
        self.visit_params_mut(&mut |_, t| {
            for v in t.data.iter_mut() {
                *v = *v as f32 as f64;
            }
        });
    }
}
