//! Token-count vectorization, the two in-repo classifiers, and persisted
//! model artifacts.

pub mod external;
pub mod forest;
pub mod nb;
pub mod vocab;

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::hierarchy::{BreakdownLevel, ClassCode};

pub use external::{load_external_predictions, match_predictions, read_predictions, write_predictions, Matched};
pub use forest::{predict_rf, train_rf, RfConfig, RfModel};
pub use nb::{predict_nb, train_nb, NbModel};
pub use vocab::{build_vocabulary, vectorize, CountVector, Vocabulary};

#[derive(Debug, thiserror::Error, Clone)]
pub enum ClassifyError {
    #[error("no training documents")]
    EmptyCorpus,
    #[error("{x} feature vectors but {y} labels")]
    ShapeMismatch { x: usize, y: usize },
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("model unusable: {0}")]
    ModelUnusable(String),
    #[error("malformed predictions CSV, row {row}: {reason}")]
    MalformedCsv { row: u64, reason: String },
    #[error("{path}: {source}")]
    Io { path: String, source: Arc<std::io::Error> },
    #[error("model artifact: {0}")]
    Json(String),
}

pub(crate) fn check_shapes<T>(x: &[CountVector], y: &[T]) -> Result<(), ClassifyError> {
    if x.len() != y.len() {
        return Err(ClassifyError::ShapeMismatch { x: x.len(), y: y.len() });
    }
    if x.is_empty() {
        return Err(ClassifyError::EmptyTrainingSet);
    }
    Ok(())
}

fn io_err(path: &Path, e: std::io::Error) -> ClassifyError {
    ClassifyError::Io {
        path: path.display().to_string(),
        source: Arc::new(e),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub code: ClassCode,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub record_key: String,
    pub predicted: ClassCode,
    pub confidence: f64,
    pub model_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ModelKind {
    Nb,
    Rf,
    External,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Nb => "NB",
            ModelKind::Rf => "RF",
            ModelKind::External => "EXTERNAL",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = ClassifyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "NB" => Ok(ModelKind::Nb),
            "RF" => Ok(ModelKind::Rf),
            "EXTERNAL" => Ok(ModelKind::External),
            other => Err(ClassifyError::InvalidParameter(format!("unknown model kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Model {
    Nb(NbModel),
    Rf(RfModel),
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Nb(_) => ModelKind::Nb,
            Model::Rf(_) => ModelKind::Rf,
        }
    }

    pub fn classes(&self) -> &[ClassCode] {
        match self {
            Model::Nb(m) => m.classes(),
            Model::Rf(m) => m.classes(),
        }
    }

    pub fn predict(&self, x: &CountVector) -> Result<Classification, ClassifyError> {
        match self {
            Model::Nb(m) => Ok(m.predict(x)),
            Model::Rf(m) => m.predict(x),
        }
    }
}

pub const ARTIFACT_FORMAT_VERSION: u32 = 1;

/// A trained model bundled with the vocabulary it was fitted on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub format_version: u32,
    pub model_id: String,
    pub level: BreakdownLevel,
    pub vocabulary: Vocabulary,
    /// Hex SHA-256 of the canonical training configuration.
    pub config_hash: String,
    pub model: Model,
}

impl ModelArtifact {
    pub fn new(model_id: impl Into<String>, level: BreakdownLevel, vocabulary: Vocabulary, config: &impl Serialize, model: Model) -> Self {
        ModelArtifact {
            format_version: ARTIFACT_FORMAT_VERSION,
            model_id: model_id.into(),
            level,
            vocabulary,
            config_hash: config_hash(config),
            model,
        }
    }

    pub fn kind(&self) -> ModelKind {
        self.model.kind()
    }

    pub fn classify_tokens(&self, doc: &crate::corpus::TokenizedText) -> Result<Classification, ClassifyError> {
        self.model.predict(&vectorize(doc, &self.vocabulary))
    }

    pub fn to_json(&self) -> Result<String, ClassifyError> {
        serde_json::to_string(self).map_err(|e| ClassifyError::Json(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, ClassifyError> {
        let a: ModelArtifact = serde_json::from_str(text).map_err(|e| ClassifyError::Json(e.to_string()))?;
        if a.format_version != ARTIFACT_FORMAT_VERSION {
            return Err(ClassifyError::Json(format!(
                "unsupported format version {} (expected {ARTIFACT_FORMAT_VERSION})",
                a.format_version
            )));
        }
        if a.model.classes().is_empty() {
            return Err(ClassifyError::ModelUnusable("model has no classes".into()));
        }
        Ok(a)
    }

    pub fn save(&self, path: &Path) -> Result<(), ClassifyError> {
        std::fs::write(path, self.to_json()?).map_err(|e| io_err(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, ClassifyError> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        Self::from_json(&text)
    }
}

/// Hex SHA-256 of the JSON serialization of `config`.
pub fn config_hash(config: &impl Serialize) -> String {
    let bytes = serde_json::to_vec(config).expect("config serializes");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}
