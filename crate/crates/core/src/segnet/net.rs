//! Residual encoder–decoder with skip connections and a sigmoid head.

use super::layers::{
    conv3d_backward, conv3d_forward, conv_transpose2_backward, conv_transpose2_forward, instance_norm_backward,
    instance_norm_forward, leaky_relu_backward, leaky_relu_forward, ConvGeom, NormCache,
};
use super::params::{ParamId, ParamStore};
use super::tensor::{Float, Tensor};
use super::{Result, SegError};
use crate::promptsim::GuidanceLayout;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub in_channels: usize,
    /// Feature width per encoder stage; every stage after the first halves the resolution.
    pub widths: Vec<usize>,
    pub blocks_per_stage: Vec<usize>,
    pub kernel_size: usize,
    /// Instance normalization after every non-head convolution.
    pub norm: NormKind,
    pub negative_slope: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormKind {
    Instance,
}

impl NetworkConfig {
    /// Three stages, widths 8/16/32: fast enough for CPU training on 32³ patches.
    pub fn toy(layout: GuidanceLayout) -> Self {
        Self::with_widths(layout, vec![8, 16, 32], vec![1, 1, 1])
    }

    pub fn small(layout: GuidanceLayout) -> Self {
        Self::with_widths(layout, vec![16, 32, 64], vec![1, 1, 1])
    }

    /// Six-stage residual encoder in the spirit of large nnU-Net presets.
    pub fn large(layout: GuidanceLayout) -> Self {
        Self::with_widths(layout, vec![32, 64, 128, 256, 320, 320], vec![1, 3, 4, 6, 6, 6])
    }

    pub fn with_widths(layout: GuidanceLayout, widths: Vec<usize>, blocks_per_stage: Vec<usize>) -> Self {
        NetworkConfig {
            in_channels: layout.total_channels(),
            widths,
            blocks_per_stage,
            kernel_size: 3,
            norm: NormKind::Instance,
            negative_slope: 0.01,
        }
    }

    pub fn stages(&self) -> usize {
        self.widths.len()
    }

    pub fn downsample_factor(&self) -> usize {
        1 << (self.stages() - 1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SegError::Config(m));
        if self.widths.is_empty() || self.widths.len() != self.blocks_per_stage.len() {
            return bad("widths and blocks_per_stage must be non-empty and of equal length".into());
        }
        if self.widths.windows(2).any(|w| w[1] < w[0]) || self.widths.contains(&0) {
            return bad(format!("widths must be positive and non-decreasing, got {:?}", self.widths));
        }
        if self.in_channels == 0 {
            return bad("in_channels must be positive".into());
        }
        if self.kernel_size % 2 == 0 {
            return bad(format!("kernel_size must be odd, got {}", self.kernel_size));
        }
        if !(self.negative_slope >= 0.0 && self.negative_slope < 1.0) {
            return bad("negative_slope must lie in [0, 1)".into());
        }
        Ok(())
    }

    pub fn check_patch(&self, patch: [usize; 3]) -> Result<()> {
        let f = self.downsample_factor();
        if patch.iter().any(|&p| p == 0 || p % f != 0) {
            return Err(SegError::Config(format!("patch {patch:?} is not divisible by the downsampling factor {f}")));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

#[derive(Debug, Clone)]
struct Conv {
    w: ParamId,
    b: Option<ParamId>,
    c_out: usize,
    geom: ConvGeom,
}

#[derive(Debug, Clone)]
struct ConvNorm {
    conv: Conv,
    gamma: ParamId,
    beta: ParamId,
    act: bool,
}

#[derive(Debug, Clone)]
struct ResBlock {
    a: ConvNorm,
    b: ConvNorm,
    shortcut: Option<ConvNorm>,
}

#[derive(Debug, Clone)]
struct Up {
    w: ParamId,
    b: ParamId,
    c_out: usize,
    fuse: ConvNorm,
}

#[derive(Debug, Clone)]
struct ParamSpec {
    name: String,
    shape: Vec<usize>,
    /// Kaiming fan-in, or `None` for constant initialization.
    fan_in: Option<usize>,
    constant: f64,
}

#[derive(Default)]
struct Registry {
    specs: Vec<ParamSpec>,
}

impl Registry {
    fn add(&mut self, name: String, shape: Vec<usize>, fan_in: Option<usize>, constant: f64) -> ParamId {
        self.specs.push(ParamSpec { name, shape, fan_in, constant });
        ParamId(self.specs.len() - 1)
    }

    fn conv(&mut self, name: &str, c_in: usize, c_out: usize, k: usize, stride: usize, bias: bool) -> Conv {
        let w = self.add(format!("{name}.weight"), vec![c_out, c_in, k, k, k], Some(c_in * k * k * k), 0.0);
        let b = bias.then(|| self.add(format!("{name}.bias"), vec![c_out], None, 0.0));
        Conv { w, b, c_out, geom: ConvGeom { k, stride } }
    }

    fn conv_norm(&mut self, name: &str, c_in: usize, c_out: usize, k: usize, stride: usize, act: bool) -> ConvNorm {
        let conv = self.conv(&format!("{name}.conv"), c_in, c_out, k, stride, false);
        let gamma = self.add(format!("{name}.norm.weight"), vec![c_out], None, 1.0);
        let beta = self.add(format!("{name}.norm.bias"), vec![c_out], None, 0.0);
        ConvNorm { conv, gamma, beta, act }
    }
}

/// Network structure. Parameters live in a separate [`ParamStore`] so the
/// same structure runs in `f32` or `f64`.
#[derive(Debug, Clone)]
pub struct UNet {
    config: NetworkConfig,
    stem: ConvNorm,
    stages: Vec<Vec<ResBlock>>,
    ups: Vec<Up>,
    head: Conv,
    specs: Vec<ParamSpec>,
}

struct ConvNormCache<F> {
    x: Tensor<F>,
    norm: NormCache<F>,
    y: Option<Tensor<F>>,
}

struct ResCache<F> {
    a: ConvNormCache<F>,
    b: ConvNormCache<F>,
    shortcut: Option<ConvNormCache<F>>,
    out: Tensor<F>,
}

struct UpCache<F> {
    x: Tensor<F>,
    fuse: ConvNormCache<F>,
}

/// Activations kept from a forward pass for backpropagation.
pub struct ForwardCache<F> {
    stem: ConvNormCache<F>,
    stages: Vec<Vec<ResCache<F>>>,
    ups: Vec<UpCache<F>>,
    head_in: Tensor<F>,
}

impl UNet {
    pub fn build(config: &NetworkConfig) -> Result<UNet> {
        config.validate()?;
        let k = config.kernel_size;
        let mut reg = Registry::default();
        let stem = reg.conv_norm("stem", config.in_channels, config.widths[0], k, 1, true);
        let mut stages = Vec::new();
        for (s, (&w, &nb)) in config.widths.iter().zip(&config.blocks_per_stage).enumerate() {
            let c_prev = if s == 0 { config.widths[0] } else { config.widths[s - 1] };
            let stride = if s == 0 { 1 } else { 2 };
            let mut blocks = Vec::new();
            // A downsampling stage always needs one block to carry the stride.
            for bi in 0..nb.max((s > 0) as usize) {
                let (c_in, st) = if bi == 0 { (c_prev, stride) } else { (w, 1) };
                let name = format!("enc{s}.block{bi}");
                let a = reg.conv_norm(&format!("{name}.conv1"), c_in, w, k, st, true);
                let b = reg.conv_norm(&format!("{name}.conv2"), w, w, k, 1, false);
                let shortcut = (st != 1 || c_in != w).then(|| reg.conv_norm(&format!("{name}.shortcut"), c_in, w, 1, st, false));
                blocks.push(ResBlock { a, b, shortcut });
            }
            stages.push(blocks);
        }
        let mut ups = Vec::new();
        for s in 0..config.stages() - 1 {
            let (c_low, c) = (config.widths[s + 1], config.widths[s]);
            let w = reg.add(format!("dec{s}.up.weight"), vec![c_low, c, 2, 2, 2], Some(c_low), 0.0);
            let b = reg.add(format!("dec{s}.up.bias"), vec![c], None, 0.0);
            let fuse = reg.conv_norm(&format!("dec{s}.fuse"), 2 * c, c, k, 1, true);
            ups.push(Up { w, b, c_out: c, fuse });
        }
        let head = reg.conv("head", config.widths[0], 1, 1, 1, true);
        Ok(UNet { config: config.clone(), stem, stages, ups, head, specs: reg.specs })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    /// Parameter names and shapes in registration order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        self.specs.iter().map(|s| (s.name.clone(), s.shape.clone())).collect()
    }

    /// Kaiming-normal weights (gain for the leaky slope), unit norm scales, zero biases.
    pub fn init_params<F: Float, R: Rng + ?Sized>(&self, rng: &mut R) -> ParamStore<F> {
        let a2 = self.config.negative_slope.powi(2);
        let mut store = ParamStore::new();
        for s in &self.specs {
            let n: usize = s.shape.iter().product();
            let data = match s.fan_in {
                Some(fan) => {
                    let std = (2.0 / ((1.0 + a2) * fan as f64)).sqrt();
                    let dist = Normal::new(0.0, std).expect("positive std");
                    (0..n).map(|_| F::of(dist.sample(rng))).collect()
                }
                None => vec![F::of(s.constant); n],
            };
            store.push(s.name.clone(), s.shape.clone(), data);
        }
        store
    }

    pub fn check_params<F: Float>(&self, params: &ParamStore<F>) -> Result<()> {
        let ok = params.len() == self.specs.len()
            && params.iter().zip(&self.specs).all(|(p, s)| p.name == s.name && p.shape == s.shape);
        if ok {
            Ok(())
        } else {
            Err(SegError::Weights("parameter names or shapes do not match the network".into()))
        }
    }

    fn check_input<F: Float>(&self, x: &Tensor<F>) -> Result<()> {
        if x.channels() != self.config.in_channels {
            return Err(SegError::ChannelMismatch { expected: self.config.in_channels, got: x.channels() });
        }
        self.config.check_patch(x.spatial())
    }

    /// Logits of shape `(N, 1, D, H, W)` plus the cache for [`UNet::backward`].
    pub fn forward<F: Float>(&self, params: &ParamStore<F>, x: &Tensor<F>) -> Result<(Tensor<F>, ForwardCache<F>)> {
        self.check_input(x)?;
        let slope = F::of(self.config.negative_slope);
        let (mut h, stem) = conv_norm_forward(&self.stem, params, x.clone(), slope);
        let mut stage_caches = Vec::new();
        let mut skips = Vec::new();
        for blocks in &self.stages {
            let mut caches = Vec::new();
            for blk in blocks {
                let (out, c) = res_forward(blk, params, h, slope);
                h = out;
                caches.push(c);
            }
            stage_caches.push(caches);
            skips.push(h.clone());
        }
        let mut up_caches: Vec<UpCache<F>> = Vec::new();
        let mut d = skips.pop().expect("at least one stage");
        for s in (0..self.ups.len()).rev() {
            let up = &self.ups[s];
            let u = conv_transpose2_forward(&d, params.get(up.w), params.get(up.b), up.c_out);
            let cat = Tensor::concat_channels(&u, &skips[s]);
            let (out, fuse) = conv_norm_forward(&up.fuse, params, cat, slope);
            up_caches.push(UpCache { x: d, fuse });
            d = out;
        }
        up_caches.reverse();
        let logits = conv3d_forward(&d, params.get(self.head.w), self.head.b.map(|b| params.get(b)), 1, self.head.geom);
        Ok((logits, ForwardCache { stem, stages: stage_caches, ups: up_caches, head_in: d }))
    }

    /// Sigmoid probabilities, no cache.
    pub fn predict<F: Float>(&self, params: &ParamStore<F>, x: &Tensor<F>) -> Result<Tensor<F>> {
        let (mut logits, _) = self.forward(params, x)?;
        for v in logits.data_mut() {
            *v = sigmoid(*v);
        }
        Ok(logits)
    }

    /// Accumulates parameter gradients of a loss whose gradient w.r.t. the logits is `dlogits`.
    pub fn backward<F: Float>(&self, params: &ParamStore<F>, grads: &mut ParamStore<F>, cache: ForwardCache<F>, dlogits: &Tensor<F>) {
        let slope = F::of(self.config.negative_slope);
        let head_b = self.head.b.expect("head has bias");
        let mut dd = {
            let (dw, db) = two_mut(grads, self.head.w, head_b);
            conv3d_backward(&cache.head_in, params.get(self.head.w), dlogits, self.head.geom, dw, Some(db), true)
                .expect("dx requested")
        };
        let mut skip_grads: Vec<Tensor<F>> = Vec::new();
        for (up, uc) in self.ups.iter().zip(cache.ups) {
            let dcat = conv_norm_backward(&up.fuse, params, grads, uc.fuse, dd, slope, true).expect("dx requested");
            let (du, dskip) = dcat.split_channels(up.c_out);
            let (dw, db) = two_mut(grads, up.w, up.b);
            dd = conv_transpose2_backward(&uc.x, params.get(up.w), &du, dw, db);
            skip_grads.push(dskip);
        }
        let mut carry = dd;
        for (s, (blocks, caches)) in self.stages.iter().zip(cache.stages).enumerate().rev() {
            if s < skip_grads.len() {
                carry.add_assign(&skip_grads[s]);
            }
            for (blk, c) in blocks.iter().zip(caches).rev() {
                carry = res_backward(blk, params, grads, c, carry, slope);
            }
        }
        conv_norm_backward(&self.stem, params, grads, cache.stem, carry, slope, false);
    }
}

pub fn sigmoid<F: Float>(z: F) -> F {
    F::one() / (F::one() + (-z).exp())
}

fn two_mut<F: Float>(store: &mut ParamStore<F>, a: ParamId, b: ParamId) -> (&mut [F], &mut [F]) {
    assert!(a.0 < b.0, "parameters registered in order");
    let (lo, hi) = store.split_at_mut(b.0);
    (&mut lo[a.0].data, &mut hi[0].data)
}

fn conv_norm_forward<F: Float>(m: &ConvNorm, params: &ParamStore<F>, x: Tensor<F>, slope: F) -> (Tensor<F>, ConvNormCache<F>) {
    let z = conv3d_forward(&x, params.get(m.conv.w), None, m.conv.c_out, m.conv.geom);
    let (mut y, norm) = instance_norm_forward(&z, params.get(m.gamma), params.get(m.beta));
    let cached = if m.act {
        leaky_relu_forward(&mut y, slope);
        Some(y.clone())
    } else {
        None
    };
    (y, ConvNormCache { x, norm, y: cached })
}

fn conv_norm_backward<F: Float>(
    m: &ConvNorm,
    params: &ParamStore<F>,
    grads: &mut ParamStore<F>,
    cache: ConvNormCache<F>,
    mut dy: Tensor<F>,
    slope: F,
    need_dx: bool,
) -> Option<Tensor<F>> {
    if let Some(y) = &cache.y {
        leaky_relu_backward(y, &mut dy, slope);
    }
    let dz = {
        let (dg, db) = two_mut(grads, m.gamma, m.beta);
        instance_norm_backward(&cache.norm, params.get(m.gamma), &dy, dg, db)
    };
    conv3d_backward(&cache.x, params.get(m.conv.w), &dz, m.conv.geom, grads.get_mut(m.conv.w), None, need_dx)
}

fn res_forward<F: Float>(blk: &ResBlock, params: &ParamStore<F>, x: Tensor<F>, slope: F) -> (Tensor<F>, ResCache<F>) {
    let (shortcut_out, shortcut) = match &blk.shortcut {
        Some(sc) => {
            let (o, c) = conv_norm_forward(sc, params, x.clone(), slope);
            (o, Some(c))
        }
        None => (x.clone(), None),
    };
    let (h, a) = conv_norm_forward(&blk.a, params, x, slope);
    let (mut out, b) = conv_norm_forward(&blk.b, params, h, slope);
    out.add_assign(&shortcut_out);
    leaky_relu_forward(&mut out, slope);
    (out.clone(), ResCache { a, b, shortcut, out })
}

fn res_backward<F: Float>(
    blk: &ResBlock,
    params: &ParamStore<F>,
    grads: &mut ParamStore<F>,
    cache: ResCache<F>,
    mut dout: Tensor<F>,
    slope: F,
) -> Tensor<F> {
    leaky_relu_backward(&cache.out, &mut dout, slope);
    let dh = conv_norm_backward(&blk.b, params, grads, cache.b, dout.clone(), slope, true).expect("dx requested");
    let mut dx = conv_norm_backward(&blk.a, params, grads, cache.a, dh, slope, true).expect("dx requested");
    match (&blk.shortcut, cache.shortcut) {
        (Some(sc), Some(c)) => dx.add_assign(&conv_norm_backward(sc, params, grads, c, dout, slope, true).expect("dx requested")),
        _ => dx.add_assign(&dout),
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn toy_shape_contract() {
        let cfg = NetworkConfig::with_widths(GuidanceLayout::Shared, vec![4, 8, 16], vec![1, 1, 1]);
        let net = UNet::build(&cfg).unwrap();
        let params: ParamStore<f32> = net.init_params(&mut ChaCha8Rng::seed_from_u64(0));
        let x = Tensor::from_vec([1, 4, 8, 8, 8], (0..2048).map(|i| (i as f32 * 0.01).sin()).collect());
        let p = net.predict(&params, &x).unwrap();
        assert_eq!(p.shape(), [1, 1, 8, 8, 8]);
        assert!(p.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn per_type_layout_takes_ten_channels() {
        let cfg = NetworkConfig::toy(GuidanceLayout::PerType);
        assert_eq!(cfg.in_channels, 10);
        let net = UNet::build(&cfg).unwrap();
        let params: ParamStore<f32> = net.init_params(&mut ChaCha8Rng::seed_from_u64(0));
        assert!(net.forward(&params, &Tensor::zeros([1, 10, 8, 8, 8])).is_ok());
        assert!(matches!(
            net.forward(&params, &Tensor::zeros([1, 4, 8, 8, 8])),
            Err(SegError::ChannelMismatch { expected: 10, got: 4 })
        ));
        assert!(net.forward(&params, &Tensor::zeros([1, 10, 8, 8, 6])).is_err());
    }

    #[test]
    fn seeded_init_is_reproducible() {
        let net = UNet::build(&NetworkConfig::toy(GuidanceLayout::Shared)).unwrap();
        let a: ParamStore<f32> = net.init_params(&mut ChaCha8Rng::seed_from_u64(5));
        let b: ParamStore<f32> = net.init_params(&mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
        assert!(net.check_params(&a).is_ok());
    }

    #[test]
    fn batch_members_are_independent() {
        let cfg = NetworkConfig::with_widths(GuidanceLayout::Shared, vec![2, 4], vec![1, 1]);
        let net = UNet::build(&cfg).unwrap();
        let params: ParamStore<f64> = net.init_params(&mut ChaCha8Rng::seed_from_u64(1));
        let one: Vec<f64> = (0..4 * 64).map(|i| (i as f64 * 0.3).cos()).collect();
        let two = [one.clone(), one.clone()].concat();
        let p1 = net.predict(&params, &Tensor::from_vec([1, 4, 4, 4, 4], one)).unwrap();
        let p2 = net.predict(&params, &Tensor::from_vec([2, 4, 4, 4, 4], two)).unwrap();
        assert_eq!(p2.sample(0), p2.sample(1));
        assert_eq!(p1.sample(0), p2.sample(0));
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = NetworkConfig::toy(GuidanceLayout::Shared);
        c.widths = vec![16, 8, 32];
        assert!(UNet::build(&c).is_err());
        c.widths = vec![8, 16];
        assert!(UNet::build(&c).is_err());
    }
}
