//! Interactive refinement sessions: accumulate prompts, feed the previous
//! prediction back, re-predict, undo, export.

use crate::promptsim::{Prompt, PromptError};
use crate::segnet::{SegError, Segmenter, THRESHOLD};
use crate::volgrid::{BinaryMask, ImageVolume, PreprocessConfig, PreprocessRecord, Preprocessed, ProbabilityMap, VolumeError};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("nothing to undo at round 0")]
    NothingToUndo,
    #[error("no prediction yet")]
    NoPrediction,
    #[error("transcript is for case {found:?}, session holds {expected:?}")]
    CaseMismatch { expected: String, found: String },
    #[error("transcript: {0}")]
    Transcript(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Model(#[from] SegError),
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

pub type Result<T> = std::result::Result<T, SessionError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    /// Run a prompt-free prediction at creation. It is kept apart from the round history.
    pub baseline: bool,
    /// Feed back probabilities instead of the binarized previous mask.
    pub soft_previous: bool,
    pub seed: u64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig { baseline: false, soft_previous: false, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probabilities: ProbabilityMap,
    pub mask: BinaryMask,
}

/// Everything about a session except the model.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionState {
    pub case_id: String,
    pub image: ImageVolume,
    pub record: PreprocessRecord,
    pub config: SessionConfig,
    /// Prompts added in each round; `prompts.len() == round`.
    pub prompts: Vec<Vec<Prompt>>,
    pub predictions: Vec<Prediction>,
    pub baseline: Option<Prediction>,
}

impl SessionState {
    pub fn round(&self) -> usize {
        self.predictions.len()
    }
}

/// Replay file: the case, the seed and every round's prompts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Transcript {
    pub case_id: String,
    pub seed: u64,
    pub rounds: Vec<Vec<Prompt>>,
}

impl Transcript {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("transcript serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| SessionError::Transcript(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|source| SessionError::Io { path: path.to_owned(), source })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|source| SessionError::Io { path: path.to_owned(), source })?;
        Self::from_json(&s)
    }
}

pub struct Session {
    state: SessionState,
    model: Arc<dyn Segmenter>,
}

impl std::fmt::Debug for Session {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Session").field("case_id", &self.state.case_id).field("round", &self.round()).finish()
    }
}

impl Session {
    /// Session over an already preprocessed volume; `record` maps results back for export.
    pub fn new(
        case_id: impl Into<String>,
        pre: Preprocessed,
        model: Arc<dyn Segmenter>,
        config: SessionConfig,
    ) -> Result<Self> {
        let mut state = SessionState {
            case_id: case_id.into(),
            image: pre.image,
            record: pre.record,
            config,
            prompts: Vec::new(),
            predictions: Vec::new(),
            baseline: None,
        };
        if state.config.baseline {
            let probabilities = model.segment(&state.image, &[], None)?;
            let mask = probabilities.threshold(THRESHOLD);
            state.baseline = Some(Prediction { probabilities, mask });
        }
        Ok(Session { state, model })
    }

    /// Preprocesses a raw volume, then opens a session on it.
    pub fn from_raw(
        case_id: impl Into<String>,
        raw: &ImageVolume,
        preprocess: &PreprocessConfig,
        model: Arc<dyn Segmenter>,
        config: SessionConfig,
    ) -> Result<Self> {
        Self::new(case_id, Preprocessed::run(raw, preprocess)?, model, config)
    }

    /// Session on a volume used as-is; export returns masks on the same grid.
    pub fn from_preprocessed(
        case_id: impl Into<String>,
        image: ImageVolume,
        model: Arc<dyn Segmenter>,
        config: SessionConfig,
    ) -> Result<Self> {
        let record = PreprocessRecord::identity(image.geometry());
        Self::new(case_id, Preprocessed { image, record }, model, config)
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn case_id(&self) -> &str {
        &self.state.case_id
    }

    pub fn image(&self) -> &ImageVolume {
        &self.state.image
    }

    pub fn shape(&self) -> [usize; 3] {
        self.state.image.shape()
    }

    pub fn round(&self) -> usize {
        self.state.round()
    }

    /// All prompts so far, oldest first.
    pub fn prompts(&self) -> impl Iterator<Item = &Prompt> {
        self.state.prompts.iter().flatten()
    }

    pub fn current(&self) -> Option<&Prediction> {
        self.state.predictions.last()
    }

    pub fn current_mask(&self) -> Option<&BinaryMask> {
        self.current().map(|p| &p.mask)
    }

    pub fn baseline(&self) -> Option<&Prediction> {
        self.state.baseline.as_ref()
    }

    pub fn add_prompt(&mut self, prompt: Prompt) -> Result<&BinaryMask> {
        self.add_prompts(vec![prompt])
    }

    /// Adds a round made of `prompts` (possibly none) and re-predicts from every
    /// accumulated prompt plus the previous prediction. On error nothing changes.
    pub fn add_prompts(&mut self, prompts: Vec<Prompt>) -> Result<&BinaryMask> {
        let shape = self.shape();
        for p in &prompts {
            p.validate(shape)?;
        }
        let all: Vec<Prompt> = self.prompts().cloned().chain(prompts.iter().cloned()).collect();
        let prev = self.current().map(|p| {
            if self.state.config.soft_previous {
                p.probabilities.clone()
            } else {
                ProbabilityMap::from(&p.mask)
            }
        });
        let probabilities = self.model.segment(&self.state.image, &all, prev.as_ref())?;
        let mask = probabilities.threshold(THRESHOLD);
        self.state.prompts.push(prompts);
        self.state.predictions.push(Prediction { probabilities, mask });
        Ok(&self.state.predictions.last().expect("just pushed").mask)
    }

    /// Drops the last round.
    pub fn undo(&mut self) -> Result<usize> {
        if self.round() == 0 {
            return Err(SessionError::NothingToUndo);
        }
        self.state.prompts.pop();
        self.state.predictions.pop();
        Ok(self.round())
    }

    /// Current mask mapped back to the geometry of the volume the session was opened on.
    pub fn export(&self) -> Result<BinaryMask> {
        let current = self.current_mask().ok_or(SessionError::NoPrediction)?;
        if current.is_empty_mask() {
            log::warn!("session {}: exporting an empty mask", self.state.case_id);
        }
        Ok(self.state.record.inverse_mask(current)?)
    }

    pub fn transcript(&self) -> Transcript {
        Transcript { case_id: self.state.case_id.clone(), seed: self.state.config.seed, rounds: self.state.prompts.clone() }
    }

    /// Applies every round of `t` in order. Rounds already applied are not repeated,
    /// so this is meant for fresh sessions.
    pub fn replay(&mut self, t: &Transcript) -> Result<()> {
        if t.case_id != self.state.case_id {
            return Err(SessionError::CaseMismatch { expected: self.state.case_id.clone(), found: t.case_id.clone() });
        }
        let snapshot = self.state.clone();
        for round in &t.rounds {
            if let Err(e) = self.add_prompts(round.clone()) {
                self.state = snapshot;
                return Err(e);
            }
        }
        Ok(())
    }
}
