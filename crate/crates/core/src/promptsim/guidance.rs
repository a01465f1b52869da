use super::{stamp_prompt, KindTag, Polarity, Prompt, PromptError, Result};
use crate::volgrid::{ImageVolume, ProbabilityMap};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GuidanceLayout {
    /// One positive and one negative channel shared by every prompt kind.
    Shared,
    /// A positive/negative channel pair per prompt kind.
    PerType,
}

impl GuidanceLayout {
    pub fn guidance_channels(self) -> usize {
        match self {
            GuidanceLayout::Shared => 2,
            GuidanceLayout::PerType => 2 * KindTag::ALL.len(),
        }
    }

    /// Image + previous segmentation + guidance.
    pub fn total_channels(self) -> usize {
        2 + self.guidance_channels()
    }

    pub fn channel_for(self, kind: KindTag, polarity: Polarity) -> usize {
        let sign = match polarity {
            Polarity::Positive => 0,
            Polarity::Negative => 1,
        };
        match self {
            GuidanceLayout::Shared => 2 + sign,
            GuidanceLayout::PerType => 2 + 2 * kind.index() + sign,
        }
    }
}

/// Prompt sampler and encoder settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GuidanceConfig {
    pub layout: GuidanceLayout,
    /// Inclusive range of point stamp radii, voxels.
    pub point_radius: [u32; 2],
    /// Inclusive range of per-side box margins, voxels.
    pub box_margin: [usize; 2],
    /// Box corners move by up to ± this many voxels.
    pub box_jitter: usize,
    /// Scribble control points move by up to ± this many voxels.
    pub scribble_jitter: f64,
    pub wavy_amplitude: f64,
    /// Sine periods along the whole stroke.
    pub wavy_frequency: f64,
    pub scribble_thickness: [u32; 2],
    /// Lasso vertices move radially by up to ± this many voxels.
    pub lasso_jitter: f64,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        GuidanceConfig {
            layout: GuidanceLayout::Shared,
            point_radius: [1, 3],
            box_margin: [2, 8],
            box_jitter: 2,
            scribble_jitter: 1.0,
            wavy_amplitude: 1.5,
            wavy_frequency: 2.0,
            scribble_thickness: [1, 2],
            lasso_jitter: 1.0,
        }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(PromptError::Invalid(m.to_string()));
        if self.point_radius[0] < 1 || self.point_radius[0] > self.point_radius[1] || self.point_radius[1] > 5 {
            return bad("point_radius must satisfy 1 <= lo <= hi <= 5");
        }
        if self.box_margin[0] > self.box_margin[1] {
            return bad("box_margin range is empty");
        }
        if self.scribble_thickness[0] < 1 || self.scribble_thickness[0] > self.scribble_thickness[1] || self.scribble_thickness[1] > 2 {
            return bad("scribble_thickness must lie in [1,2]");
        }
        for v in [self.scribble_jitter, self.wavy_amplitude, self.wavy_frequency, self.lasso_jitter] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad("jitter and wave parameters must be finite and non-negative");
            }
        }
        Ok(())
    }
}

/// Channel-major `(C, D, H, W)` network input.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceStack {
    channels: usize,
    shape: [usize; 3],
    data: Vec<f32>,
}

impl GuidanceStack {
    pub fn zeros(channels: usize, shape: [usize; 3]) -> Self {
        GuidanceStack { channels, shape, data: vec![0.0; channels * shape.iter().product::<usize>()] }
    }

    pub fn from_raw(channels: usize, shape: [usize; 3], data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * shape.iter().product::<usize>() {
            return Err(PromptError::Invalid(format!(
                "stack data length {} does not match {channels}x{shape:?}",
                data.len()
            )));
        }
        Ok(GuidanceStack { channels, shape, data })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn voxels(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.voxels();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.voxels();
        &mut self.data[c * n..(c + 1) * n]
    }

    /// Copies a `size` window starting at `offset`; voxels outside the stack read as 0.
    pub fn window(&self, offset: [usize; 3], size: [usize; 3]) -> GuidanceStack {
        let mut out = GuidanceStack::zeros(self.channels, size);
        let [d, h, w] = self.shape;
        let n_out = out.voxels();
        for c in 0..self.channels {
            let src = self.channel(c);
            let dst = &mut out.data[c * n_out..(c + 1) * n_out];
            for z in 0..size[0] {
                let sz = offset[0] + z;
                if sz >= d {
                    break;
                }
                for y in 0..size[1] {
                    let sy = offset[1] + y;
                    if sy >= h {
                        break;
                    }
                    let xs = size[2].min(w.saturating_sub(offset[2]));
                    let s0 = (sz * h + sy) * w + offset[2];
                    let d0 = (z * size[1] + y) * size[2];
                    dst[d0..d0 + xs].copy_from_slice(&src[s0..s0 + xs]);
                }
            }
        }
        out
    }
}

/// Builds the network input: image, previous segmentation, and max-merged
/// rasterized prompts split by polarity (and by kind in the per-type layout).
pub fn encode_guidance(
    prompts: &[Prompt],
    prev_seg: Option<&ProbabilityMap>,
    image: &ImageVolume,
    cfg: &GuidanceConfig,
) -> Result<GuidanceStack> {
    let shape = image.shape();
    if let Some(prev) = prev_seg {
        if prev.shape() != shape {
            return Err(PromptError::ShapeMismatch { expected: shape, got: prev.shape() });
        }
    }
    for p in prompts {
        p.validate(shape)?;
    }
    let mut stack = GuidanceStack::zeros(cfg.layout.total_channels(), shape);
    stack.channel_mut(0).copy_from_slice(image.data());
    if let Some(prev) = prev_seg {
        stack.channel_mut(1).copy_from_slice(prev.data());
    }
    for p in prompts {
        let ch = stack.channel_mut(cfg.layout.channel_for(p.tag(), p.polarity));
        stamp_prompt(p, shape, |i| ch[i] = 1.0)?;
    }
    Ok(stack)
}

#[cfg(test)]
mod tests {
    use super::super::rasterize_prompt;
    use super::*;
    use crate::volgrid::{BinaryMask, Geometry};

    fn image(shape: [usize; 3]) -> ImageVolume {
        let g = Geometry::isotropic(shape);
        ImageVolume::new(g.clone(), (0..g.len()).map(|i| i as f32 * 0.01).collect()).unwrap()
    }

    #[test]
    fn empty_encoding_shared() {
        let img = image([4, 5, 6]);
        let s = encode_guidance(&[], None, &img, &GuidanceConfig::default()).unwrap();
        assert_eq!(s.channels(), 4);
        assert_eq!(s.shape(), [4, 5, 6]);
        assert_eq!(s.channel(0), img.data());
        assert!(s.data()[s.voxels()..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_point_passthrough_and_idempotence() {
        let img = image([9, 9, 9]);
        let p = Prompt::point([4, 4, 4], 2, Polarity::Positive);
        let cfg = GuidanceConfig::default();
        let once = encode_guidance(std::slice::from_ref(&p), None, &img, &cfg).unwrap();
        let raster = rasterize_prompt(&p, img.geometry()).unwrap();
        let expect: Vec<f32> = raster.data().iter().map(|&v| v as f32).collect();
        assert_eq!(once.channel(2), &expect[..]);
        assert!(once.channel(3).iter().all(|&v| v == 0.0));
        let twice = encode_guidance(&[p.clone(), p], None, &img, &cfg).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn per_type_routes_by_kind() {
        let img = image([4, 8, 8]);
        let cfg = GuidanceConfig { layout: GuidanceLayout::PerType, ..Default::default() };
        let prompts = [
            Prompt::bbox(1, [1, 1], [3, 3], Polarity::Negative),
            Prompt::scribble(2, vec![[1, 1], [1, 2]], 1, Polarity::Positive),
        ];
        let s = encode_guidance(&prompts, None, &img, &cfg).unwrap();
        assert_eq!(s.channels(), 10);
        let sums: Vec<f32> = (2..10).map(|c| s.channel(c).iter().sum()).collect();
        assert_eq!(sums, vec![0.0, 0.0, 0.0, 4.0, 0.0, 0.0, 2.0, 0.0]);
    }

    #[test]
    fn prev_seg_shape_checked() {
        let img = image([4, 4, 4]);
        let prev = ProbabilityMap::from(&BinaryMask::zeros(Geometry::isotropic([4, 4, 5])));
        assert!(matches!(
            encode_guidance(&[], Some(&prev), &img, &GuidanceConfig::default()),
            Err(PromptError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn window_pads_with_zero() {
        let img = image([2, 3, 3]);
        let s = encode_guidance(&[], None, &img, &GuidanceConfig::default()).unwrap();
        let w = s.window([1, 1, 1], [2, 2, 2]);
        assert_eq!(w.channel(0)[0], img.get(1, 1, 1));
        assert_eq!(w.channel(0)[3], img.get(1, 2, 2));
        assert_eq!(w.channel(0)[4], 0.0);
    }
}
