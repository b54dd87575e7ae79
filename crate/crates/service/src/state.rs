//! Pipeline snapshots shared between request handlers.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use dcm_core::classify::ModelKind;
use dcm_core::corpus::{Dataset, TextCleaner, TokenizedText};
use dcm_core::metrics::EvalReport;
use dcm_core::pipeline::{evaluate, prepare_tokens, EvalConfig, ModelSpec, PipelineError};
use dcm_core::rollup::{LabelMapping, RollupConfig};
use dcm_core::sweep::{run_sweep, SweepConfig, SweepError, SweepPoint};
use dcm_core::{BreakdownLevel, ClassCode, Hierarchy};
use serde::{Deserialize, Serialize};

use crate::corrections::{self, Correction, CorrectionLog};

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Sweep(#[from] SweepError),
    #[error("no hierarchy loaded for {0}")]
    UnknownLevel(BreakdownLevel),
    #[error("corrections log: {0}")]
    Log(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotSpec {
    pub level: BreakdownLevel,
    pub model: ModelSpec,
    pub v: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSettings {
    pub grid: Vec<u64>,
    pub t: f64,
    pub epsilon: f64,
}

pub struct ServiceConfig {
    /// Records with their train/validation split already fixed.
    pub dataset: Dataset,
    pub hierarchies: BTreeMap<BreakdownLevel, Hierarchy>,
    pub snapshots: Vec<SnapshotSpec>,
    pub corrections_log: PathBuf,
    pub sweep: Option<SweepSettings>,
    pub static_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PredictionRow {
    #[serde(skip)]
    pub index: usize,
    pub record_key: String,
    pub predicted: ClassCode,
    pub confidence: f64,
    pub model_id: String,
    /// Mapped ground truth; absent when the record's class was discarded.
    pub truth: Option<ClassCode>,
}

#[derive(Debug)]
pub struct Snapshot {
    pub version: u64,
    pub spec: SnapshotSpec,
    pub model_id: String,
    pub mapping: LabelMapping,
    pub dynamic: EvalReport,
    pub flat: EvalReport,
    /// Validation predictions, ascending by confidence then record key.
    pub predictions: Vec<PredictionRow>,
    pub sweep: Option<Vec<SweepPoint>>,
    pub selected_v: Option<u64>,
    pub corrections_applied: usize,
}

impl Snapshot {
    pub fn kind(&self) -> ModelKind {
        self.spec.model.kind()
    }
}

pub(crate) struct Inner {
    pub base: Dataset,
    pub tokens: Vec<TokenizedText>,
    pub hierarchies: BTreeMap<BreakdownLevel, Hierarchy>,
    pub snapshots: RwLock<BTreeMap<(BreakdownLevel, ModelKind), Arc<Snapshot>>>,
    pub log: Mutex<CorrectionLog>,
    pub busy: AtomicBool,
    pub next_version: AtomicU64,
    pub sweep: Option<SweepSettings>,
    pub static_dir: Option<PathBuf>,
}

#[derive(Clone)]
pub struct AppState(pub(crate) Arc<Inner>);

/// Held while a retrain runs; dropping it clears the busy flag.
pub struct RetrainGuard(Arc<Inner>);

impl Drop for RetrainGuard {
    fn drop(&mut self) {
        self.0.busy.store(false, Ordering::Release);
    }
}

impl AppState {
    /// Builds every configured snapshot before returning.
    pub fn new(cfg: ServiceConfig) -> Result<Self, ServiceError> {
        let log = CorrectionLog::open(&cfg.corrections_log)?;
        let tokens = prepare_tokens(&cfg.dataset, &TextCleaner::new());
        let inner = Inner {
            base: cfg.dataset,
            tokens,
            hierarchies: cfg.hierarchies,
            snapshots: RwLock::new(BTreeMap::new()),
            log: Mutex::new(log),
            busy: AtomicBool::new(false),
            next_version: AtomicU64::new(1),
            sweep: cfg.sweep,
            static_dir: cfg.static_dir,
        };
        let state = AppState(Arc::new(inner));
        for spec in cfg.snapshots {
            let snap = state.build_snapshot(spec)?;
            state.install(snap);
        }
        Ok(state)
    }

    pub fn hierarchy(&self, level: BreakdownLevel) -> Option<&Hierarchy> {
        self.0.hierarchies.get(&level)
    }

    pub fn dataset(&self) -> &Dataset {
        &self.0.base
    }

    pub fn snapshot(&self, level: BreakdownLevel, kind: ModelKind) -> Option<Arc<Snapshot>> {
        self.0.snapshots.read().expect("snapshot lock").get(&(level, kind)).cloned()
    }

    pub fn snapshots(&self) -> Vec<Arc<Snapshot>> {
        self.0.snapshots.read().expect("snapshot lock").values().cloned().collect()
    }

    pub(crate) fn install(&self, snap: Snapshot) {
        let key = (snap.spec.level, snap.kind());
        self.0.snapshots.write().expect("snapshot lock").insert(key, Arc::new(snap));
    }

    pub fn try_begin_retrain(&self) -> Option<RetrainGuard> {
        self.0
            .busy
            .compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire)
            .ok()
            .map(|_| RetrainGuard(self.0.clone()))
    }

    pub fn corrections(&self) -> Vec<(Correction, bool)> {
        let log = self.0.log.lock().expect("log lock");
        let active = corrections::active(log.entries());
        log.entries()
            .iter()
            .map(|c| {
                let is_active = active.get(&(c.record.clone(), c.level)).is_some_and(|a| a.seq == c.seq);
                (c.clone(), is_active)
            })
            .collect()
    }

    pub(crate) fn append_correction(&self, c: Correction) -> std::io::Result<Correction> {
        self.0.log.lock().expect("log lock").append(c)
    }

    /// Rolls up, trains and evaluates with all active corrections applied.
    pub fn build_snapshot(&self, spec: SnapshotSpec) -> Result<Snapshot, ServiceError> {
        let inner = &self.0;
        let h = inner
            .hierarchies
            .get(&spec.level)
            .ok_or(ServiceError::UnknownLevel(spec.level))?;
        let entries = inner.log.lock().expect("log lock").entries().to_vec();
        let (ds, applied) = corrections::apply(&inner.base, &entries);
        let model_id = spec.model.kind().as_str().to_ascii_lowercase();
        let cfg = |v: u64| EvalConfig {
            level: spec.level,
            rollup: RollupConfig::new(v),
            model: spec.model.clone(),
            model_id: model_id.clone(),
        };
        let dynamic = evaluate(&ds, &inner.tokens, h, &cfg(spec.v))?;
        let flat = evaluate(&ds, &inner.tokens, h, &cfg(0))?;

        let mut predictions: Vec<PredictionRow> = dynamic
            .predictions
            .iter()
            .map(|(i, p)| PredictionRow {
                index: *i,
                record_key: p.record_key.clone(),
                predicted: p.predicted,
                confidence: p.confidence,
                model_id: p.model_id.clone(),
                truth: dynamic.truth.get(i).copied(),
            })
            .collect();
        predictions.sort_by(|a, b| {
            a.confidence
                .total_cmp(&b.confidence)
                .then_with(|| a.record_key.cmp(&b.record_key))
        });

        let (sweep, selected_v) = match &inner.sweep {
            Some(s) => {
                let mut sc = SweepConfig::new(spec.level, spec.model.clone(), s.t);
                sc.grid = s.grid.clone();
                sc.epsilon = s.epsilon;
                if let ModelSpec::Rf(rf) = &spec.model {
                    sc.seed = rf.seed;
                }
                let points = run_sweep(&ds, &inner.tokens, h, &sc)?;
                let sel = dcm_core::sweep::select_threshold(&points, s.t, s.epsilon);
                (Some(points), sel)
            }
            None => (None, None),
        };

        Ok(Snapshot {
            version: inner.next_version.fetch_add(1, Ordering::AcqRel),
            model_id,
            mapping: dynamic.mapping,
            dynamic: dynamic.report,
            flat: flat.report,
            predictions,
            sweep,
            selected_v,
            corrections_applied: applied,
            spec,
        })
    }
}
