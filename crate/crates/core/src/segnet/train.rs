//! Patch-based training with simulated prompts in the loop.

use super::infer::{PatchModel, SegModel, THRESHOLD};
use super::loss::dice_ce_from_logits;
use super::net::{NetworkConfig, UNet};
use super::params::ParamStore;
use super::tensor::Tensor;
use super::weights::{ModelWeights, TrainingMetadata};
use super::{Result, SegError};
use crate::promptsim::{corrective_point, encode_guidance, simulate_prompts, GuidanceConfig, GuidanceStack, Prompt, PromptType};
use crate::synthgen::{Case, Split};
use crate::volgrid::{augment, AugmentConfig, BinaryMask, Geometry, ImageVolume, PreprocessConfig, Preprocessed, ProbabilityMap};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Relative frequency of each prompt type when simulating a training interaction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptWeights {
    pub none: f64,
    pub point: f64,
    #[serde(rename = "box")]
    pub bbox: f64,
    pub lasso: f64,
    pub scribble: f64,
}

impl Default for PromptWeights {
    fn default() -> Self {
        PromptWeights { none: 0.0, point: 1.0, bbox: 1.0, lasso: 1.0, scribble: 1.0 }
    }
}

impl PromptWeights {
    pub fn only(t: PromptType) -> Self {
        let mut w = PromptWeights { none: 0.0, point: 0.0, bbox: 0.0, lasso: 0.0, scribble: 0.0 };
        *w.weight_mut(t) = 1.0;
        w
    }

    pub fn weight(&self, t: PromptType) -> f64 {
        match t {
            PromptType::None => self.none,
            PromptType::Point => self.point,
            PromptType::Box => self.bbox,
            PromptType::Lasso => self.lasso,
            PromptType::Scribble => self.scribble,
        }
    }

    fn weight_mut(&mut self, t: PromptType) -> &mut f64 {
        match t {
            PromptType::None => &mut self.none,
            PromptType::Point => &mut self.point,
            PromptType::Box => &mut self.bbox,
            PromptType::Lasso => &mut self.lasso,
            PromptType::Scribble => &mut self.scribble,
        }
    }

    fn validate(&self) -> Result<()> {
        let ws: Vec<f64> = PromptType::ALL.iter().map(|&t| self.weight(t)).collect();
        if ws.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || ws.iter().sum::<f64>() <= 0.0 {
            return Err(SegError::Config("prompt weights must be non-negative with a positive sum".into()));
        }
        Ok(())
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> PromptType {
        let total: f64 = PromptType::ALL.iter().map(|&t| self.weight(t)).sum();
        let mut u = rng.random_range(0.0..total);
        for t in PromptType::ALL {
            let w = self.weight(t);
            if u < w {
                return t;
            }
            u -= w;
        }
        *PromptType::ALL.iter().rev().find(|&&t| self.weight(t) > 0.0).expect("positive total")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub patch_size: [usize; 3],
    pub batch_size: usize,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub learning_rate: f64,
    /// Nesterov momentum coefficient.
    pub momentum: f64,
    pub poly_exponent: f64,
    pub weight_decay: f64,
    /// Gradients are rescaled when their global L2 norm exceeds this.
    pub grad_clip: f64,
    /// Probability that a patch is centred on a foreground voxel.
    pub fg_probability: f64,
    pub prompt_weights: PromptWeights,
    /// Refinement rounds per sample; above 1, earlier rounds come from the model itself.
    pub rounds: usize,
    pub augment: Option<AugmentConfig>,
    /// Fixed validation patches per validation case.
    pub val_instances: usize,
    pub preprocess: PreprocessConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            patch_size: [128; 3],
            batch_size: 8,
            epochs: 1000,
            steps_per_epoch: 250,
            learning_rate: 1e-2,
            momentum: 0.99,
            poly_exponent: 0.9,
            weight_decay: 0.0,
            grad_clip: 12.0,
            fg_probability: 0.5,
            prompt_weights: PromptWeights::default(),
            rounds: 1,
            augment: Some(AugmentConfig::default()),
            val_instances: 2,
            preprocess: PreprocessConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Desk-scale settings: 32³ patches, batch 2.
    pub fn toy() -> Self {
        TrainConfig { patch_size: [32; 3], batch_size: 2, epochs: 20, steps_per_epoch: 50, ..Default::default() }
    }

    pub fn validate(&self, net: &NetworkConfig) -> Result<()> {
        let bad = |m: &str| Err(SegError::Config(m.to_string()));
        net.check_patch(self.patch_size)?;
        if self.batch_size == 0 || self.epochs == 0 || self.steps_per_epoch == 0 {
            return bad("batch_size, epochs and steps_per_epoch must be positive");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.grad_clip > 0.0) || !(0.0..=1.0).contains(&self.fg_probability) || self.rounds == 0 {
            return bad("grad_clip must be positive, fg_probability in [0, 1], rounds >= 1");
        }
        self.prompt_weights.validate()
    }
}

/// `lr₀·(1 − e/E)^p`; zero at `e = E`.
pub fn poly_lr(base: f64, epoch: usize, epochs: usize, exponent: f64) -> f64 {
    base * (1.0 - (epoch.min(epochs)) as f64 / epochs as f64).powf(exponent)
}

/// A preprocessed image with its aligned mask.
#[derive(Debug, Clone)]
pub struct TrainCase {
    pub id: String,
    pub image: ImageVolume,
    pub mask: BinaryMask,
}

impl TrainCase {
    pub fn prepare(case: &Case, cfg: &PreprocessConfig) -> Result<Self> {
        let pre = Preprocessed::run(&case.image, cfg)?;
        let mask = pre.record.forward_mask(&case.mask)?;
        Ok(TrainCase { id: case.id.clone(), image: pre.image, mask })
    }
}

#[derive(Debug, Clone)]
pub struct TrainingInstance {
    pub input: GuidanceStack,
    pub target: BinaryMask,
    pub prompt_type: PromptType,
    pub prompts: Vec<Prompt>,
    /// 1 for a fresh interaction; higher rounds carry a model prediction in channel 1.
    pub round: usize,
    pub origin: [usize; 3],
}

fn patch_origin<R: Rng + ?Sized>(mask: &BinaryMask, patch: [usize; 3], fg_probability: f64, rng: &mut R) -> [usize; 3] {
    let shape = mask.shape();
    let fg = if rng.random_bool(fg_probability) { mask.foreground_indices() } else { Vec::new() };
    let center: Option<[usize; 3]> = (!fg.is_empty()).then(|| fg[rng.random_range(0..fg.len())]);
    std::array::from_fn(|a| {
        if shape[a] <= patch[a] {
            return 0;
        }
        let hi = shape[a] - patch[a];
        match center {
            Some(c) => c[a].saturating_sub(patch[a] / 2).min(hi),
            None => rng.random_range(0..=hi),
        }
    })
}

fn crop<T: Copy + Default>(data: &[T], shape: [usize; 3], origin: [usize; 3], size: [usize; 3]) -> Vec<T> {
    let mut out = vec![T::default(); size.iter().product()];
    for z in 0..size[0].min(shape[0].saturating_sub(origin[0])) {
        for y in 0..size[1].min(shape[1].saturating_sub(origin[1])) {
            let n = size[2].min(shape[2].saturating_sub(origin[2]));
            let src = ((origin[0] + z) * shape[1] + origin[1] + y) * shape[2] + origin[2];
            let dst = (z * size[1] + y) * size[2];
            out[dst..dst + n].copy_from_slice(&data[src..src + n]);
        }
    }
    out
}

fn stack_tensor(stack: &GuidanceStack) -> Tensor<f32> {
    let [d, h, w] = stack.shape();
    Tensor::from_vec([1, stack.channels(), d, h, w], stack.data().to_vec())
}

/// Draws one training patch with simulated prompts.
///
/// With `cfg.rounds > 1` a round `r` is drawn uniformly; the model is applied
/// `r − 1` times, each time feeding its binarized prediction back and adding one
/// corrective positive point in the false-negative region. Without a model
/// every instance is round 1.
pub fn sample_training_instance<R: Rng + ?Sized>(
    case: &TrainCase,
    cfg: &TrainConfig,
    guidance: &GuidanceConfig,
    model: Option<&dyn PatchModel>,
    rng: &mut R,
) -> Result<TrainingInstance> {
    let patch = cfg.patch_size;
    let origin = patch_origin(&case.mask, patch, cfg.fg_probability, rng);
    let geom = Geometry::isotropic(patch);
    let mut image = ImageVolume::new(geom.clone(), crop(case.image.data(), case.image.shape(), origin, patch))?;
    let mut target = BinaryMask::new(geom, crop(case.mask.data(), case.mask.shape(), origin, patch))?;
    if let Some(aug) = &cfg.augment {
        (image, target) = augment(&image, &target, aug, rng)?;
    }
    let mut prompt_type = cfg.prompt_weights.draw(rng);
    if target.is_empty_mask() {
        // Nothing to click on inside this patch.
        prompt_type = PromptType::None;
    }
    let mut prompts = simulate_prompts(prompt_type, &target, rng, guidance)?;
    let round = match model {
        Some(_) if cfg.rounds > 1 => rng.random_range(1..=cfg.rounds),
        _ => 1,
    };
    let mut prev: Option<ProbabilityMap> = None;
    for _ in 1..round {
        let model = model.expect("multi-round sampling needs a model");
        let stack = encode_guidance(&prompts, prev.as_ref(), &image, guidance)?;
        let p = model.forward_patch(&stack_tensor(&stack))?;
        let pred = BinaryMask::new(target.geometry().clone(), p.data().iter().map(|&v| (v >= THRESHOLD) as u8).collect())?;
        if let Some(c) = corrective_point(&target, &pred, rng, guidance)? {
            prompts.push(c);
        }
        prev = Some(ProbabilityMap::from(&pred));
    }
    let input = encode_guidance(&prompts, prev.as_ref(), &image, guidance)?;
    Ok(TrainingInstance { input, target, prompt_type, prompts, round, origin })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub val_dice: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
}

pub struct TrainOutcome {
    pub weights: ModelWeights,
    pub history: TrainHistory,
}

fn patch_dice(pred: &[f32], target: &BinaryMask) -> f64 {
    let (mut inter, mut a, mut b) = (0usize, 0usize, 0usize);
    for (&p, &g) in pred.iter().zip(target.data()) {
        let p = (p >= THRESHOLD) as usize;
        inter += p * g as usize;
        a += p;
        b += g as usize;
    }
    if a + b == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (a + b) as f64
    }
}

/// Fixed round-1 validation patches, drawn from a seed independent of training.
fn validation_set(val: &[TrainCase], cfg: &TrainConfig, guidance: &GuidanceConfig) -> Result<Vec<TrainingInstance>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f_7a1d);
    let vcfg = TrainConfig { fg_probability: 1.0, augment: None, rounds: 1, ..cfg.clone() };
    let mut out = Vec::new();
    for case in val {
        for _ in 0..cfg.val_instances {
            out.push(sample_training_instance(case, &vcfg, guidance, None, &mut rng)?);
        }
    }
    Ok(out)
}

fn evaluate(model: &dyn PatchModel, set: &[TrainingInstance]) -> Result<f64> {
    let mut total = 0.0;
    for inst in set {
        let p = model.forward_patch(&stack_tensor(&inst.input))?;
        total += patch_dice(p.data(), &inst.target);
    }
    Ok(total / set.len() as f64)
}

/// Nesterov SGD state.
struct Sgd {
    velocity: ParamStore<f32>,
    momentum: f32,
    weight_decay: f32,
}

impl Sgd {
    fn step(&mut self, params: &mut ParamStore<f32>, grads: &ParamStore<f32>, lr: f32) {
        for ((p, g), v) in params.iter_mut().zip(grads.iter()).zip(self.velocity.iter_mut()) {
            for ((pv, &gv), vv) in p.data.iter_mut().zip(&g.data).zip(v.data.iter_mut()) {
                let g = gv + self.weight_decay * *pv;
                *vv = self.momentum * *vv + g;
                *pv -= lr * (g + self.momentum * *vv);
            }
        }
    }
}

/// Trains from scratch (or from `init`) on the training cases, selecting the
/// checkpoint with the best validation Dice.
pub fn train(
    cases: &[Case],
    net_cfg: &NetworkConfig,
    cfg: &TrainConfig,
    guidance: &GuidanceConfig,
    init: Option<&ModelWeights>,
) -> Result<TrainOutcome> {
    cfg.validate(net_cfg)?;
    guidance.validate()?;
    if net_cfg.in_channels != guidance.layout.total_channels() {
        return Err(SegError::ChannelMismatch { expected: guidance.layout.total_channels(), got: net_cfg.in_channels });
    }
    let prepare = |split: Split| -> Result<Vec<TrainCase>> {
        cases.iter().filter(|c| c.split == split).map(|c| TrainCase::prepare(c, &cfg.preprocess)).collect()
    };
    let train_set = prepare(Split::Train)?;
    let val_set = prepare(Split::Val)?;
    if train_set.is_empty() {
        return Err(SegError::EmptyDataset);
    }
    let net = UNet::build(net_cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params: ParamStore<f32> = match init {
        Some(w) => {
            if w.config.fingerprint() != net_cfg.fingerprint() {
                return Err(SegError::Fingerprint { expected: net_cfg.fingerprint(), found: w.config.fingerprint() });
            }
            w.params.clone()
        }
        None => net.init_params(&mut rng),
    };
    let val_instances = validation_set(&val_set, cfg, guidance)?;
    let mut grads = params.zeros_like();
    let mut sgd = Sgd { velocity: params.zeros_like(), momentum: cfg.momentum as f32, weight_decay: cfg.weight_decay as f32 };
    let mut history = TrainHistory { epochs: Vec::new(), best_epoch: 0 };
    let mut best: Option<(f64, ParamStore<f32>)> = None;
    let [pd, ph, pw] = cfg.patch_size;
    let channels = net_cfg.in_channels;
    let voxels = pd * ph * pw;

    for epoch in 0..cfg.epochs {
        let started = std::time::Instant::now();
        let lr = poly_lr(cfg.learning_rate, epoch, cfg.epochs, cfg.poly_exponent);
        let mut loss_sum = 0.0;
        for step in 0..cfg.steps_per_epoch {
            let current = (cfg.rounds > 1).then(|| SegModel::new(net.clone(), params.clone(), cfg.patch_size)).transpose()?;
            let mut x = Vec::with_capacity(cfg.batch_size * channels * voxels);
            let mut t = Vec::with_capacity(cfg.batch_size * voxels);
            for _ in 0..cfg.batch_size {
                let case = &train_set[rng.random_range(0..train_set.len())];
                let inst = sample_training_instance(case, cfg, guidance, current.as_ref().map(|m| m as &dyn PatchModel), &mut rng)?;
                x.extend_from_slice(inst.input.data());
                t.extend(inst.target.data().iter().map(|&v| v as f32));
            }
            let x = Tensor::from_vec([cfg.batch_size, channels, pd, ph, pw], x);
            let t = Tensor::from_vec([cfg.batch_size, 1, pd, ph, pw], t);
            let (logits, cache) = net.forward(&params, &x)?;
            let (loss, dlogits) = dice_ce_from_logits(&logits, &t);
            if !loss.is_finite() {
                return Err(SegError::Diverged { epoch, step });
            }
            grads.fill_zero();
            net.backward(&params, &mut grads, cache, &dlogits);
            let norm = grads.l2_norm();
            if !norm.is_finite() {
                return Err(SegError::Diverged { epoch, step });
            }
            if norm > cfg.grad_clip {
                grads.scale((cfg.grad_clip / norm) as f32);
            }
            sgd.step(&mut params, &grads, lr as f32);
            loss_sum += loss;
        }
        let train_loss = loss_sum / cfg.steps_per_epoch as f64;
        let val_dice = if val_instances.is_empty() {
            None
        } else {
            Some(evaluate(&SegModel::new(net.clone(), params.clone(), cfg.patch_size)?, &val_instances)?)
        };
        // Without validation data the latest epoch is kept.
        let score = val_dice.unwrap_or(epoch as f64);
        if best.as_ref().is_none_or(|(b, _)| score > *b) {
            best = Some((score, params.clone()));
            history.best_epoch = epoch + 1;
        }
        let rec = EpochRecord { epoch: epoch + 1, learning_rate: lr, train_loss, val_dice, seconds: started.elapsed().as_secs_f64() };
        log::info!(
            "epoch {:>3}  lr {:.5}  loss {:.4}  val dice {}  ({:.1}s)",
            rec.epoch,
            rec.learning_rate,
            rec.train_loss,
            rec.val_dice.map_or("-".to_string(), |d| format!("{d:.4}")),
            rec.seconds
        );
        history.epochs.push(rec);
    }
    let (_, best_params) = best.expect("at least one epoch");
    let metadata = TrainingMetadata {
        epoch: history.best_epoch,
        seed: cfg.seed,
        patch_size: cfg.patch_size,
        guidance: guidance.clone(),
        train_loss: history.epochs.iter().map(|e| e.train_loss).collect(),
        val_dice: history.epochs.iter().filter_map(|e| e.val_dice).collect(),
    };
    Ok(TrainOutcome { weights: ModelWeights { config: net_cfg.clone(), params: best_params, metadata }, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::promptsim::{GuidanceLayout, PromptKind};
    use crate::synthgen::{generate_cases, PhantomConfig, Preset};

    #[test]
    fn poly_schedule_is_monotone_and_ends_at_zero() {
        let lrs: Vec<f64> = (0..=10).map(|e| poly_lr(0.01, e, 10, 0.9)).collect();
        assert_eq!(lrs[0], 0.01);
        assert_eq!(lrs[10], 0.0);
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }

    fn tiny_case() -> TrainCase {
        let cfg = PhantomConfig { tumor_radius: [3.0, 5.0], ..PhantomConfig::preset(Preset::Easy, 24, 1) };
        let case = &generate_cases(&cfg, 1, 0).unwrap()[0];
        TrainCase::prepare(case, &PreprocessConfig::default()).unwrap()
    }

    #[test]
    fn point_only_instances_use_point_stamps() {
        let case = tiny_case();
        let cfg = TrainConfig {
            patch_size: [16; 3],
            fg_probability: 1.0,
            prompt_weights: PromptWeights::only(PromptType::Point),
            ..TrainConfig::toy()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..10 {
            let inst = sample_training_instance(&case, &cfg, &GuidanceConfig::default(), None, &mut rng).unwrap();
            assert_eq!(inst.round, 1);
            assert!(inst.input.channel(1).iter().all(|&v| v == 0.0));
            if inst.target.is_empty_mask() {
                continue;
            }
            assert!((1..=2).contains(&inst.prompts.len()));
            assert!(inst.prompts.iter().all(|p| matches!(p.kind, PromptKind::Point(_))));
        }
    }

    #[test]
    fn instances_are_seeded() {
        let case = tiny_case();
        let cfg = TrainConfig { patch_size: [16; 3], ..TrainConfig::toy() };
        let g = GuidanceConfig::default();
        let a = sample_training_instance(&case, &cfg, &g, None, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = sample_training_instance(&case, &cfg, &g, None, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a.input, b.input);
        assert_eq!(a.target, b.target);
    }

    #[test]
    fn weights_serialize_with_box_key() {
        let json = serde_json::to_string(&PromptWeights::default()).unwrap();
        assert!(json.contains("\"box\":1.0"));
        let cfg: TrainConfig = serde_json::from_str(r#"{"epochs": 3, "patch_size": [16,16,16]}"#).unwrap();
        assert_eq!(cfg.epochs, 3);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"epoch": 3}"#).is_err());
        let net = NetworkConfig::toy(GuidanceLayout::Shared);
        assert!(TrainConfig { patch_size: [30; 3], ..TrainConfig::toy() }.validate(&net).is_err());
    }
}
