//! Overlap metrics and the simulated-interaction benchmark.

mod overlay;

pub use overlay::{render_overlay, save_overlay};

use crate::promptsim::{corrective_negative_point, corrective_point, simulate_prompts, GuidanceConfig, Prompt, PromptError, PromptType};
use crate::segnet::{ModelWeights, SegError, Segmenter, SlidingWindow};
use crate::session::{Session, SessionConfig, SessionError};
use crate::synthgen::Case;
use crate::volgrid::{BinaryMask, ImageVolume, PreprocessConfig, Preprocessed, ProbabilityMap, VolumeError};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("mask shapes differ: {a:?} vs {b:?}")]
    ShapeMismatch { a: [usize; 3], b: [usize; 3] },
    #[error("invalid benchmark configuration: {0}")]
    Config(String),
    #[error("no cases to evaluate")]
    NoCases,
    #[error("case {0} has an empty ground truth")]
    EmptyGroundTruth(String),
    #[error("slice {slice} out of range for depth {depth}")]
    SliceOutOfRange { slice: usize, depth: usize },
    #[error("png encoding: {0}")]
    Png(String),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Model(#[from] SegError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

pub type Result<T> = std::result::Result<T, EvalError>;

fn counts(a: &BinaryMask, b: &BinaryMask) -> Result<(usize, usize, usize)> {
    if a.shape() != b.shape() {
        return Err(EvalError::ShapeMismatch { a: a.shape(), b: b.shape() });
    }
    let mut inter = 0;
    for (&x, &y) in a.data().iter().zip(b.data()) {
        inter += (x & y) as usize;
    }
    Ok((inter, a.count(), b.count()))
}

/// `2|a∩b| / (|a|+|b|)`; 1.0 when both are empty.
pub fn dice(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    let (i, na, nb) = counts(a, b)?;
    Ok(if na + nb == 0 { 1.0 } else { 2.0 * i as f64 / (na + nb) as f64 })
}

/// `|a∩b| / |a∪b|`; 1.0 when both are empty.
pub fn iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    let (i, na, nb) = counts(a, b)?;
    let union = na + nb - i;
    Ok(if union == 0 { 1.0 } else { i as f64 / union as f64 })
}

/// Sample mean and standard deviation (n − 1 denominator; 0 for fewer than two values).
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Something that can be benchmarked. Reference models may look at the
/// preprocessed ground truth; networks must ignore it.
pub trait BenchModel: Send + Sync {
    fn name(&self) -> String;
    fn fingerprint(&self) -> String;
    fn segmenter_for(&self, gt: &BinaryMask) -> Arc<dyn Segmenter>;
}

/// A trained network behind sliding-window inference.
pub struct NetworkModel {
    pub name: String,
    pub fingerprint: String,
    pub segmenter: Arc<dyn Segmenter>,
}

impl NetworkModel {
    pub fn from_weights(name: impl Into<String>, w: &ModelWeights) -> Result<Self> {
        Ok(NetworkModel { name: name.into(), fingerprint: w.fingerprint(), segmenter: Arc::new(SlidingWindow::from_weights(w)?) })
    }
}

impl BenchModel for NetworkModel {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn fingerprint(&self) -> String {
        self.fingerprint.clone()
    }

    fn segmenter_for(&self, _gt: &BinaryMask) -> Arc<dyn Segmenter> {
        self.segmenter.clone()
    }
}

/// Returns a fixed mask whatever the input.
pub struct FixedSegmenter {
    pub mask: BinaryMask,
    pub guidance: GuidanceConfig,
}

impl Segmenter for FixedSegmenter {
    fn guidance(&self) -> &GuidanceConfig {
        &self.guidance
    }

    fn segment(&self, image: &ImageVolume, _prompts: &[Prompt], _prev: Option<&ProbabilityMap>) -> crate::segnet::Result<ProbabilityMap> {
        if image.shape() != self.mask.shape() {
            return Err(SegError::ShapeMismatch(format!("image {:?} vs mask {:?}", image.shape(), self.mask.shape())));
        }
        Ok(ProbabilityMap::from(&self.mask))
    }
}

/// Upper bound: answers with the ground truth.
pub struct OracleModel;

impl BenchModel for OracleModel {
    fn name(&self) -> String {
        "oracle".into()
    }

    fn fingerprint(&self) -> String {
        "oracle".into()
    }

    fn segmenter_for(&self, gt: &BinaryMask) -> Arc<dyn Segmenter> {
        Arc::new(FixedSegmenter { mask: gt.clone(), guidance: GuidanceConfig::default() })
    }
}

/// Lower bound: predicts no tumor.
pub struct AllBackgroundModel;

impl BenchModel for AllBackgroundModel {
    fn name(&self) -> String {
        "all-background".into()
    }

    fn fingerprint(&self) -> String {
        "all-background".into()
    }

    fn segmenter_for(&self, gt: &BinaryMask) -> Arc<dyn Segmenter> {
        Arc::new(FixedSegmenter { mask: BinaryMask::zeros(gt.geometry().clone()), guidance: GuidanceConfig::default() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub prompt_type: PromptType,
    /// Total rounds; every round after the first adds one corrective point.
    pub rounds: usize,
    pub seed: u64,
    /// Correct false positives with a negative point when there is nothing left to add.
    pub negative_corrections: bool,
    pub preprocess: PreprocessConfig,
    pub guidance: GuidanceConfig,
}

impl BenchmarkConfig {
    pub fn new(prompt_type: PromptType, rounds: usize, seed: u64) -> Self {
        BenchmarkConfig {
            prompt_type,
            rounds,
            seed,
            negative_corrections: false,
            preprocess: PreprocessConfig::default(),
            guidance: GuidanceConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub id: String,
    pub dsc: f64,
    pub iou: f64,
    /// DSC after each round, in original geometry.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub dsc_per_round: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub dsc_mean: f64,
    pub dsc_sd: f64,
    pub iou_mean: f64,
    pub iou_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub prompt_type: PromptType,
    pub rounds: usize,
    pub seed: u64,
    pub method: String,
    pub fingerprint: String,
    pub cases: Vec<CaseResult>,
    pub summary: Summary,
}

impl BenchmarkReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn from_json(s: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    /// Mean DSC over cases after round `r` (1-based).
    pub fn round_dsc_mean(&self, r: usize) -> Option<f64> {
        let xs: Option<Vec<f64>> = self.cases.iter().map(|c| c.dsc_per_round.get(r - 1).copied()).collect();
        xs.map(|xs| mean_sd(&xs).0)
    }

    pub fn row(&self) -> TableRow {
        TableRow { prompt: self.prompt_type.label().to_string(), method: self.method.clone(), summary: self.summary.clone() }
    }

    pub fn table(&self) -> String {
        format_table(&[self.row()])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub prompt: String,
    pub method: String,
    pub summary: Summary,
}

/// Aligned text table with columns Prompt, Method, DSC, IoU; values in percent, mean±SD.
pub fn format_table(rows: &[TableRow]) -> String {
    let cell = |m: f64, s: f64| format!("{:.1}±{:.1}", 100.0 * m, 100.0 * s);
    let body: Vec<[String; 4]> = rows
        .iter()
        .map(|r| {
            [r.prompt.clone(), r.method.clone(), cell(r.summary.dsc_mean, r.summary.dsc_sd), cell(r.summary.iou_mean, r.summary.iou_sd)]
        })
        .collect();
    let head = ["Prompt", "Method", "DSC", "IoU"].map(String::from);
    let mut widths = head.clone().map(|h| h.chars().count());
    for r in &body {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: &[String; 4]| {
        let mut s = String::new();
        for (i, (c, w)) in cells.iter().zip(widths).enumerate() {
            let pad = w - c.chars().count();
            if i > 0 {
                s.push_str("  ");
            }
            // text columns left, numbers right
            if i < 2 {
                let _ = write!(s, "{c}{}", " ".repeat(pad));
            } else {
                let _ = write!(s, "{}{c}", " ".repeat(pad));
            }
        }
        s.trim_end().to_string() + "\n"
    };
    let mut out = line(&head);
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 6));
    out.push('\n');
    for r in &body {
        out.push_str(&line(r));
    }
    out
}

/// Runs one case through a session and scores every round in original geometry.
fn run_case(model: &dyn BenchModel, case: &Case, index: usize, cfg: &BenchmarkConfig) -> Result<CaseResult> {
    if case.mask.is_empty_mask() {
        return Err(EvalError::EmptyGroundTruth(case.id.clone()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let pre = Preprocessed::run(&case.image, &cfg.preprocess)?;
    let gt = pre.record.forward_mask(&case.mask)?;
    let segmenter = model.segmenter_for(&gt);
    let mut session = Session::new(case.id.clone(), pre, segmenter, SessionConfig { seed: cfg.seed, ..Default::default() })?;
    let mut per_round = Vec::with_capacity(cfg.rounds);
    let mut last = (0.0, 0.0);
    for round in 1..=cfg.rounds {
        let prompts = if round == 1 {
            if gt.is_empty_mask() {
                Vec::new()
            } else {
                simulate_prompts(cfg.prompt_type, &gt, &mut rng, &cfg.guidance)?
            }
        } else {
            let pred = session.current_mask().expect("round >= 1");
            match corrective_point(&gt, pred, &mut rng, &cfg.guidance)? {
                Some(p) => vec![p],
                None if cfg.negative_corrections => corrective_negative_point(&gt, pred, &mut rng, &cfg.guidance)?.into_iter().collect(),
                None => Vec::new(),
            }
        };
        session.add_prompts(prompts)?;
        let out = session.export()?;
        last = (dice(&out, &case.mask)?, iou(&out, &case.mask)?);
        per_round.push(last.0);
    }
    Ok(CaseResult { id: case.id.clone(), dsc: last.0, iou: last.1, dsc_per_round: per_round })
}

/// Simulated-interaction benchmark: per case, prompts are drawn from the ground
/// truth with a case-specific stream of `cfg.seed`, so results do not depend on
/// evaluation order.
pub fn run_benchmark(model: &dyn BenchModel, cases: &[Case], cfg: &BenchmarkConfig) -> Result<BenchmarkReport> {
    if cases.is_empty() {
        return Err(EvalError::NoCases);
    }
    if cfg.rounds == 0 {
        return Err(EvalError::Config("rounds must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..cases.len()).collect();
    order.sort_by(|&a, &b| cases[a].id.cmp(&cases[b].id));
    let mut results = Vec::with_capacity(cases.len());
    for i in order {
        let r = run_case(model, &cases[i], i, cfg)?;
        log::debug!("{}: dsc {:.4} iou {:.4}", r.id, r.dsc, r.iou);
        results.push(r);
    }
    let (dsc_mean, dsc_sd) = mean_sd(&results.iter().map(|r| r.dsc).collect::<Vec<_>>());
    let (iou_mean, iou_sd) = mean_sd(&results.iter().map(|r| r.iou).collect::<Vec<_>>());
    Ok(BenchmarkReport {
        prompt_type: cfg.prompt_type,
        rounds: cfg.rounds,
        seed: cfg.seed,
        method: model.name(),
        fingerprint: model.fingerprint(),
        cases: results,
        summary: Summary { dsc_mean, dsc_sd, iou_mean, iou_sd },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::{generate_cases, PhantomConfig, Preset};
    use crate::volgrid::Geometry;

    fn mask(n: usize, lit: &[usize]) -> BinaryMask {
        let mut data = vec![0u8; n * n * n];
        for &i in lit {
            data[i] = 1;
        }
        BinaryMask::new(Geometry::isotropic([n; 3]), data).unwrap()
    }

    #[test]
    fn worked_overlap_example() {
        let a = mask(4, &(0..8).collect::<Vec<_>>());
        let b = mask(4, &(4..12).collect::<Vec<_>>());
        assert_eq!(dice(&a, &b).unwrap(), 0.5);
        assert!((iou(&a, &b).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn edge_conventions() {
        let e = mask(3, &[]);
        let a = mask(3, &[1, 2]);
        let b = mask(3, &[5]);
        assert_eq!(dice(&e, &e).unwrap(), 1.0);
        assert_eq!(iou(&e, &e).unwrap(), 1.0);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        assert_eq!(dice(&a, &b).unwrap(), 0.0);
        assert_eq!(iou(&a, &e).unwrap(), 0.0);
        assert!(matches!(dice(&a, &mask(4, &[])), Err(EvalError::ShapeMismatch { .. })));
    }

    #[test]
    fn sample_sd() {
        let (m, s) = mean_sd(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - 1.2909944487358056).abs() < 1e-15);
        assert_eq!(mean_sd(&[0.7]), (0.7, 0.0));
    }

    fn cases() -> Vec<Case> {
        generate_cases(&PhantomConfig::preset(Preset::Easy, 32, 9), 0, 3).unwrap()
    }

    #[test]
    fn oracle_and_background_bounds() {
        let cases = cases();
        for t in PromptType::ALL {
            let r = run_benchmark(&OracleModel, &cases, &BenchmarkConfig::new(t, 2, 1)).unwrap();
            assert!(r.cases.iter().all(|c| c.dsc == 1.0 && c.iou == 1.0));
            assert_eq!((r.summary.dsc_mean, r.summary.dsc_sd), (1.0, 0.0));
        }
        let r = run_benchmark(&AllBackgroundModel, &cases, &BenchmarkConfig::new(PromptType::Point, 1, 1)).unwrap();
        assert!(r.cases.iter().all(|c| c.dsc == 0.0 && c.iou == 0.0));
    }

    #[test]
    fn report_is_deterministic_and_parses() {
        let cases = cases();
        let cfg = BenchmarkConfig::new(PromptType::Box, 1, 5);
        let a = run_benchmark(&OracleModel, &cases, &cfg).unwrap().to_json();
        let b = run_benchmark(&OracleModel, &cases, &cfg).unwrap().to_json();
        assert_eq!(a, b);
        let back = BenchmarkReport::from_json(&a).unwrap();
        assert_eq!(back.prompt_type, PromptType::Box);
        let v: serde_json::Value = serde_json::from_str(&a).unwrap();
        for k in ["prompt_type", "rounds", "seed", "cases", "summary"] {
            assert!(v.get(k).is_some(), "{k}");
        }
        assert_eq!(v["prompt_type"], "box");
    }

    #[test]
    fn table_has_fixed_columns() {
        let s = Summary { dsc_mean: 0.776, dsc_sd: 0.112, iou_mean: 0.65, iou_sd: 0.1 };
        let t = format_table(&[TableRow { prompt: "BBox".into(), method: "toy".into(), summary: s }]);
        let lines: Vec<&str> = t.lines().collect();
        assert!(lines[0].starts_with("Prompt"));
        assert!(lines[2].contains("77.6±11.2"));
        assert!(lines[2].contains("65.0±10.0"));
    }
}
