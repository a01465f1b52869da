//! Patch models, sliding-window inference and full-volume segmenters.

use super::net::UNet;
use super::params::ParamStore;
use super::tensor::Tensor;
use super::weights::ModelWeights;
use super::{Result, SegError};
use crate::promptsim::{encode_guidance, GuidanceConfig, GuidanceStack, Prompt};
use crate::volgrid::{BinaryMask, ImageVolume, ProbabilityMap};

pub const THRESHOLD: f32 = 0.5;

/// A network that maps a `(N, C, D, H, W)` patch batch to `(N, 1, D, H, W)` probabilities.
pub trait PatchModel: Send + Sync {
    fn in_channels(&self) -> usize;
    fn patch_size(&self) -> [usize; 3];
    fn forward_patch(&self, x: &Tensor<f32>) -> Result<Tensor<f32>>;
}

/// Trained network with the patch size it was trained on.
#[derive(Debug, Clone)]
pub struct SegModel {
    net: UNet,
    params: ParamStore<f32>,
    patch: [usize; 3],
}

impl SegModel {
    pub fn new(net: UNet, params: ParamStore<f32>, patch: [usize; 3]) -> Result<Self> {
        net.check_params(&params)?;
        net.config().check_patch(patch)?;
        Ok(SegModel { net, params, patch })
    }

    pub fn from_weights(w: &ModelWeights) -> Result<Self> {
        Self::new(UNet::build(&w.config)?, w.params.clone(), w.metadata.patch_size)
    }

    pub fn net(&self) -> &UNet {
        &self.net
    }

    pub fn params(&self) -> &ParamStore<f32> {
        &self.params
    }
}

impl PatchModel for SegModel {
    fn in_channels(&self) -> usize {
        self.net.config().in_channels
    }

    fn patch_size(&self) -> [usize; 3] {
        self.patch
    }

    fn forward_patch(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.net.predict(&self.params, x)
    }
}

/// Returns the same probability everywhere.
#[derive(Debug, Clone)]
pub struct ConstantModel {
    pub channels: usize,
    pub patch: [usize; 3],
    pub probability: f32,
}

impl PatchModel for ConstantModel {
    fn in_channels(&self) -> usize {
        self.channels
    }

    fn patch_size(&self) -> [usize; 3] {
        self.patch
    }

    fn forward_patch(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        let [n, _, d, h, w] = x.shape();
        Ok(Tensor::from_vec([n, 1, d, h, w], vec![self.probability; n * d * h * w]))
    }
}

/// Evenly spaced window starts with at most 50% overlap; a single start when the axis fits one patch.
pub fn window_starts(dim: usize, patch: usize) -> Vec<usize> {
    if dim <= patch {
        return vec![0];
    }
    let span = dim - patch;
    let step = (patch / 2).max(1);
    let count = span.div_ceil(step) + 1;
    (0..count).map(|i| ((i * span) as f64 / (count - 1) as f64).round() as usize).collect()
}

/// Separable Gaussian importance map, σ = patch/8 per axis, peak 1.
pub fn gaussian_weights(patch: [usize; 3]) -> Vec<f32> {
    let axis = |n: usize| -> Vec<f64> {
        let c = (n as f64 - 1.0) / 2.0;
        let sigma = n as f64 / 8.0;
        (0..n).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect()
    };
    let (a, b, c) = (axis(patch[0]), axis(patch[1]), axis(patch[2]));
    let mut out = Vec::with_capacity(patch.iter().product());
    for &za in &a {
        for &yb in &b {
            for &xc in &c {
                out.push((za * yb * xc) as f32);
            }
        }
    }
    out
}

/// Sliding-window prediction over an already encoded guidance stack.
pub fn predict_stack<M: PatchModel + ?Sized>(model: &M, stack: &GuidanceStack) -> Result<Vec<f32>> {
    if stack.channels() != model.in_channels() {
        return Err(SegError::ChannelMismatch { expected: model.in_channels(), got: stack.channels() });
    }
    let shape = stack.shape();
    let patch = model.patch_size();
    let weights = gaussian_weights(patch);
    let n: usize = shape.iter().product();
    let mut acc = vec![0f64; n];
    let mut norm = vec![0f64; n];
    let starts: Vec<Vec<usize>> = (0..3).map(|a| window_starts(shape[a], patch[a])).collect();
    for &z0 in &starts[0] {
        for &y0 in &starts[1] {
            for &x0 in &starts[2] {
                let win = stack.window([z0, y0, x0], patch);
                let x = Tensor::from_vec([1, win.channels(), patch[0], patch[1], patch[2]], win.data().to_vec());
                let p = model.forward_patch(&x)?;
                for z in 0..patch[0].min(shape[0] - z0) {
                    for y in 0..patch[1].min(shape[1] - y0) {
                        for xx in 0..patch[2].min(shape[2] - x0) {
                            let pi = (z * patch[1] + y) * patch[2] + xx;
                            let vi = ((z0 + z) * shape[1] + y0 + y) * shape[2] + x0 + xx;
                            let w = weights[pi] as f64;
                            acc[vi] += w * p.data()[pi] as f64;
                            norm[vi] += w;
                        }
                    }
                }
            }
        }
    }
    Ok(acc.iter().zip(&norm).map(|(&a, &w)| ((a / w) as f32).clamp(0.0, 1.0)).collect())
}

/// Encodes the prompts and runs sliding-window inference over the whole volume.
pub fn predict_full<M: PatchModel + ?Sized>(
    model: &M,
    image: &ImageVolume,
    prompts: &[Prompt],
    prev_seg: Option<&ProbabilityMap>,
    cfg: &GuidanceConfig,
) -> Result<(ProbabilityMap, BinaryMask)> {
    let stack = encode_guidance(prompts, prev_seg, image, cfg)?;
    let probs = ProbabilityMap::new(image.geometry().clone(), predict_stack(model, &stack)?)?;
    let mask = probs.threshold(THRESHOLD);
    Ok((probs, mask))
}

/// Full-volume prediction in preprocessed space, as used by sessions and benchmarks.
pub trait Segmenter: Send + Sync {
    fn guidance(&self) -> &GuidanceConfig;
    fn segment(&self, image: &ImageVolume, prompts: &[Prompt], prev_seg: Option<&ProbabilityMap>) -> Result<ProbabilityMap>;
}

/// A [`PatchModel`] applied by sliding window.
#[derive(Debug, Clone)]
pub struct SlidingWindow<M> {
    pub model: M,
    pub guidance: GuidanceConfig,
}

impl<M: PatchModel> SlidingWindow<M> {
    pub fn new(model: M, guidance: GuidanceConfig) -> Result<Self> {
        if model.in_channels() != guidance.layout.total_channels() {
            return Err(SegError::ChannelMismatch { expected: model.in_channels(), got: guidance.layout.total_channels() });
        }
        Ok(SlidingWindow { model, guidance })
    }
}

impl SlidingWindow<SegModel> {
    pub fn from_weights(w: &ModelWeights) -> Result<Self> {
        Self::new(SegModel::from_weights(w)?, w.metadata.guidance.clone())
    }
}

impl<M: PatchModel> Segmenter for SlidingWindow<M> {
    fn guidance(&self) -> &GuidanceConfig {
        &self.guidance
    }

    fn segment(&self, image: &ImageVolume, prompts: &[Prompt], prev_seg: Option<&ProbabilityMap>) -> Result<ProbabilityMap> {
        Ok(predict_full(&self.model, image, prompts, prev_seg, &self.guidance)?.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::promptsim::{GuidanceLayout, Polarity};
    use crate::segnet::NetworkConfig;
    use crate::volgrid::Geometry;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn image(shape: [usize; 3]) -> ImageVolume {
        let g = Geometry::isotropic(shape);
        ImageVolume::new(g.clone(), (0..g.len()).map(|i| ((i as f32) * 0.37).sin()).collect()).unwrap()
    }

    #[test]
    fn starts_cover_with_half_overlap() {
        assert_eq!(window_starts(20, 32), vec![0]);
        assert_eq!(window_starts(32, 32), vec![0]);
        assert_eq!(window_starts(48, 32), vec![0, 16]);
        assert_eq!(window_starts(44, 32), vec![0, 12]);
        let s = window_starts(100, 32);
        assert_eq!(*s.last().unwrap(), 68);
        assert!(s.windows(2).all(|w| w[1] - w[0] <= 16));
    }

    #[test]
    fn constant_stub_is_tiling_invariant() {
        let m = ConstantModel { channels: 4, patch: [8, 8, 8], probability: 0.3 };
        for shape in [[5, 6, 7], [8, 8, 8], [13, 20, 9]] {
            let (p, mask) = predict_full(&m, &image(shape), &[], None, &GuidanceConfig::default()).unwrap();
            assert!(p.data().iter().all(|&v| (v - 0.3).abs() < 1e-6));
            assert_eq!(mask.count(), 0);
            assert_eq!(mask.shape(), shape);
        }
    }

    #[test]
    fn single_tile_equals_forward_pass() {
        let cfg = NetworkConfig::with_widths(GuidanceLayout::Shared, vec![2, 4], vec![1, 1]);
        let net = UNet::build(&cfg).unwrap();
        let params = net.init_params(&mut ChaCha8Rng::seed_from_u64(2));
        let model = SegModel::new(net, params, [8, 8, 8]).unwrap();
        let img = image([8, 8, 8]);
        let prompts = [Prompt::point([4, 4, 4], 2, Polarity::Positive)];
        let gcfg = GuidanceConfig::default();
        let (p, mask) = predict_full(&model, &img, &prompts, None, &gcfg).unwrap();
        let stack = encode_guidance(&prompts, None, &img, &gcfg).unwrap();
        let direct = model.forward_patch(&Tensor::from_vec([1, 4, 8, 8, 8], stack.data().to_vec())).unwrap();
        for (a, b) in p.data().iter().zip(direct.data()) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!(mask.data().iter().all(|&v| v <= 1));
    }

    #[test]
    fn channel_mismatch_rejected() {
        let m = ConstantModel { channels: 10, patch: [8, 8, 8], probability: 0.3 };
        assert!(matches!(
            predict_full(&m, &image([8, 8, 8]), &[], None, &GuidanceConfig::default()),
            Err(SegError::ChannelMismatch { .. })
        ));
        assert!(SlidingWindow::new(m, GuidanceConfig::default()).is_err());
    }
}
