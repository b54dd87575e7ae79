//! Rollup, training and evaluation on a fixed train/validation split.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::classify::{
    build_vocabulary, forest, nb, train_nb, train_rf, vectorize, ClassifyError, Model, ModelArtifact, ModelKind,
    Prediction, RfConfig,
};
use crate::corpus::{class_counts, Dataset, Split, TextCleaner, TokenizedText};
use crate::hierarchy::{BreakdownLevel, ClassCode, Hierarchy};
use crate::metrics::{confusion, report, EvalMode, EvalReport, MetricsError};
use crate::rollup::{compute_rollup, LabelMapping, RollupAudit, RollupConfig, RollupError};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Rollup(#[from] RollupError),
    #[error(transparent)]
    Classify(#[from] ClassifyError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("no training records remain at {0} after rollup")]
    NothingToTrain(BreakdownLevel),
    #[error("hierarchy is for {found}, expected {expected}")]
    LevelMismatch { expected: BreakdownLevel, found: BreakdownLevel },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "UPPERCASE")]
pub enum ModelSpec {
    Nb {
        #[serde(default = "default_alpha")]
        alpha: f64,
    },
    Rf(RfConfig),
}

fn default_alpha() -> f64 {
    nb::DEFAULT_ALPHA
}

impl ModelSpec {
    pub fn nb() -> Self {
        ModelSpec::Nb { alpha: nb::DEFAULT_ALPHA }
    }

    pub fn rf(n_trees: usize, seed: u64) -> Self {
        ModelSpec::Rf(RfConfig {
            n_trees,
            seed,
            ..RfConfig::default()
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            ModelSpec::Nb { .. } => ModelKind::Nb,
            ModelSpec::Rf(_) => ModelKind::Rf,
        }
    }

    /// Forests see only the most frequent tokens; Naive Bayes sees all.
    pub fn vocabulary_cap(&self) -> Option<usize> {
        match self {
            ModelSpec::Nb { .. } => None,
            ModelSpec::Rf(_) => Some(forest::DEFAULT_FEATURE_CAP),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub level: BreakdownLevel,
    pub rollup: RollupConfig,
    pub model: ModelSpec,
    pub model_id: String,
}

impl EvalConfig {
    pub fn mode(&self) -> EvalMode {
        if self.rollup.v == 0 {
            EvalMode::Flat
        } else {
            EvalMode::Dynamic
        }
    }
}

/// Cleans and tokenizes every description once, in record order.
pub fn prepare_tokens(ds: &Dataset, cleaner: &TextCleaner) -> Vec<TokenizedText> {
    ds.records().iter().map(|r| cleaner.clean_and_tokenize(&r.description)).collect()
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub mapping: LabelMapping,
    pub audit: RollupAudit,
    pub artifact: ModelArtifact,
    /// One prediction per validation record, paired with its record index.
    pub predictions: Vec<(usize, Prediction)>,
    /// Mapped ground truth of validation records that survived the rollup.
    pub truth: BTreeMap<usize, ClassCode>,
    pub report: EvalReport,
    pub n_train: usize,
    pub n_excluded_validation: u64,
}

/// Mapped label of every record of `split` labeled at `level`; `None` marks
/// records whose class was discarded.
fn mapped_labels(
    ds: &Dataset,
    level: BreakdownLevel,
    split: Split,
    mapping: &LabelMapping,
) -> Vec<(usize, Option<ClassCode>)> {
    ds.indices(split)
        .filter_map(|i| ds.records()[i].label(level).map(|c| (i, mapping.resolve(&c))))
        .collect()
}

pub fn rollup_for(ds: &Dataset, h: &Hierarchy, cfg: &EvalConfig) -> Result<(LabelMapping, RollupAudit), PipelineError> {
    if h.level() != cfg.level {
        return Err(PipelineError::LevelMismatch {
            expected: cfg.level,
            found: h.level(),
        });
    }
    let counts = class_counts(ds, cfg.level, Split::Train);
    Ok(compute_rollup(&counts, h, &cfg.rollup)?)
}

pub fn train_model(
    docs: &[&TokenizedText],
    labels: &[ClassCode],
    cfg: &EvalConfig,
) -> Result<ModelArtifact, PipelineError> {
    if docs.is_empty() {
        return Err(PipelineError::NothingToTrain(cfg.level));
    }
    let owned: Vec<TokenizedText> = docs.iter().map(|d| (*d).clone()).collect();
    let vocab = build_vocabulary(&owned, cfg.model.vocabulary_cap())?;
    let x: Vec<_> = owned.iter().map(|d| vectorize(d, &vocab)).collect();
    let model = match &cfg.model {
        ModelSpec::Nb { alpha } => Model::Nb(train_nb(&x, labels, *alpha, vocab.len())?),
        ModelSpec::Rf(rf) => Model::Rf(train_rf(&x, labels, vocab.len(), rf)?),
    };
    Ok(ModelArtifact::new(cfg.model_id.clone(), cfg.level, vocab, cfg, model))
}

/// A model trained on the mapped train split, with the mapping that produced it.
#[derive(Debug, Clone)]
pub struct Fitted {
    pub mapping: LabelMapping,
    pub audit: RollupAudit,
    pub artifact: ModelArtifact,
    pub n_train: usize,
}

/// Rolls up train counts and trains on the mapped train records.
pub fn fit(ds: &Dataset, tokens: &[TokenizedText], h: &Hierarchy, cfg: &EvalConfig) -> Result<Fitted, PipelineError> {
    let (mapping, audit) = rollup_for(ds, h, cfg)?;
    let train: Vec<(usize, ClassCode)> = mapped_labels(ds, cfg.level, Split::Train, &mapping)
        .into_iter()
        .filter_map(|(i, c)| c.map(|c| (i, c)))
        .collect();
    let docs: Vec<&TokenizedText> = train.iter().map(|(i, _)| &tokens[*i]).collect();
    let labels: Vec<ClassCode> = train.iter().map(|(_, c)| *c).collect();
    let artifact = train_model(&docs, &labels, cfg)?;
    Ok(Fitted {
        mapping,
        audit,
        artifact,
        n_train: train.len(),
    })
}

/// [`fit`], then predicts every validation record and scores the mapped
/// validation labels. `tokens` comes from [`prepare_tokens`].
pub fn evaluate(
    ds: &Dataset,
    tokens: &[TokenizedText],
    h: &Hierarchy,
    cfg: &EvalConfig,
) -> Result<Outcome, PipelineError> {
    let Fitted {
        mapping,
        audit,
        artifact,
        n_train,
    } = fit(ds, tokens, h, cfg)?;

    let predictions = ds
        .indices(Split::Validation)
        .map(|i| {
            let c = artifact.classify_tokens(&tokens[i])?;
            Ok((
                i,
                Prediction {
                    record_key: ds.records()[i].key(),
                    predicted: c.code,
                    confidence: c.confidence,
                    model_id: cfg.model_id.clone(),
                },
            ))
        })
        .collect::<Result<Vec<_>, ClassifyError>>()?;
    let by_index: BTreeMap<usize, ClassCode> = predictions.iter().map(|(i, p)| (*i, p.predicted)).collect();

    let (truth, rep, excluded) = score(ds, cfg.level, &mapping, &by_index, cfg.mode(), &cfg.model_id)?;
    Ok(Outcome {
        mapping,
        audit,
        artifact,
        predictions,
        truth,
        report: rep,
        n_train,
        n_excluded_validation: excluded,
    })
}

/// Evaluates predictions made elsewhere against the mapped validation labels.
/// Predicted codes are passed through the same mapping when it knows them.
pub fn evaluate_predictions(
    ds: &Dataset,
    mapping: &LabelMapping,
    predictions: &BTreeMap<usize, ClassCode>,
    mode: EvalMode,
    model_id: &str,
) -> Result<(EvalReport, u64), PipelineError> {
    let mapped: BTreeMap<usize, ClassCode> = predictions
        .iter()
        .map(|(i, c)| (*i, mapping.resolve(c).unwrap_or(*c)))
        .collect();
    let (_, rep, excluded) = score(ds, mapping.level, mapping, &mapped, mode, model_id)?;
    Ok((rep, excluded))
}

type Scored = (BTreeMap<usize, ClassCode>, EvalReport, u64);

fn score(
    ds: &Dataset,
    level: BreakdownLevel,
    mapping: &LabelMapping,
    predicted: &BTreeMap<usize, ClassCode>,
    mode: EvalMode,
    model_id: &str,
) -> Result<Scored, PipelineError> {
    let mut truth = BTreeMap::new();
    let mut excluded = 0u64;
    let (mut y_true, mut y_pred) = (Vec::new(), Vec::new());
    for (i, t) in mapped_labels(ds, level, Split::Validation, mapping) {
        match t {
            None => excluded += 1,
            Some(t) => {
                if let Some(p) = predicted.get(&i) {
                    truth.insert(i, t);
                    y_true.push(t);
                    y_pred.push(*p);
                }
            }
        }
    }
    let cm = confusion(&y_true, &y_pred)?.with_excluded(excluded);
    let rep = report(&cm, mode, model_id, level)?;
    Ok((truth, rep, excluded))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Record;

    fn fixture() -> (Dataset, Hierarchy) {
        let h = Hierarchy::from_codes(
            BreakdownLevel::Bl1,
            ["Q", "QA", "QB", "M", "MA"].iter().map(|c| ClassCode::parse(c).unwrap()),
        )
        .unwrap();
        let mut records = Vec::new();
        let mut split = Vec::new();
        let mut add = |id: usize, text: &str, code: &str, s: Split| {
            records.push(
                Record::new(format!("{id}"), "p", text)
                    .with_label(BreakdownLevel::Bl1, ClassCode::parse(code).unwrap()),
            );
            split.push(s);
        };
        let mut id = 0;
        for _ in 0..12 {
            add(id, "circuit breaker", "QA", Split::Train);
            add(id + 1, "motor drive", "MA", Split::Train);
            id += 2;
        }
        for _ in 0..3 {
            add(id, "switch breaker", "QB", Split::Train);
            id += 1;
        }
        add(id, "circuit breaker", "QA", Split::Validation);
        add(id + 1, "motor", "MA", Split::Validation);
        add(id + 2, "switch", "QB", Split::Validation);
        (Dataset::with_split(records, split).unwrap(), h)
    }

    fn cfg(v: u64) -> EvalConfig {
        EvalConfig {
            level: BreakdownLevel::Bl1,
            rollup: RollupConfig::new(v),
            model: ModelSpec::nb(),
            model_id: "nb".into(),
        }
    }

    #[test]
    fn flat_excludes_small_class() {
        let (ds, h) = fixture();
        let tokens = prepare_tokens(&ds, &TextCleaner::new());
        let out = evaluate(&ds, &tokens, &h, &cfg(0)).unwrap();
        assert_eq!(out.report.mode, EvalMode::Flat);
        assert_eq!(out.n_excluded_validation, 1);
        assert_eq!(out.report.n_evaluated, 2);
        assert_eq!(out.report.accuracy, 1.0);
        assert_eq!(out.predictions.len(), 3);
    }

    #[test]
    fn dynamic_keeps_parent() {
        // QB (3) < v merges into Q (3) < v, and Q is a root kept only if it reaches min support
        let (ds, h) = fixture();
        let tokens = prepare_tokens(&ds, &TextCleaner::new());
        let out = evaluate(&ds, &tokens, &h, &cfg(13)).unwrap();
        assert_eq!(out.report.mode, EvalMode::Dynamic);
        assert_eq!(out.mapping.resolve(&ClassCode::parse("QA").unwrap()).unwrap().as_str(), "Q");
        assert_eq!(out.n_excluded_validation, 0);
        assert_eq!(out.report.n_classes(), 2);
    }

    #[test]
    fn wrong_hierarchy_level() {
        let (ds, h) = fixture();
        let tokens = prepare_tokens(&ds, &TextCleaner::new());
        let mut c = cfg(0);
        c.level = BreakdownLevel::Bl2;
        assert!(matches!(
            evaluate(&ds, &tokens, &h, &c),
            Err(PipelineError::LevelMismatch { .. })
        ));
    }
}
