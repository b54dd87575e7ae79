use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use dcm_core::classify::{
    config_hash, load_external_predictions, match_predictions, write_predictions, ModelArtifact, Prediction,
};
use dcm_core::corpus::{
    class_counts, generate_synthetic, ingest_csv, split_dataset, split_dataset_stratified, Dataset, Split,
    SynthConfig, TextCleaner,
};
use dcm_core::kbmap::{self, MappingContext};
use dcm_core::metrics::{compare, EvalMode, EvalReport};
use dcm_core::pipeline::{evaluate, evaluate_predictions, fit, prepare_tokens, rollup_for, EvalConfig, ModelSpec};
use dcm_core::rollup::{compute_rollup, mapping_summary, RollupConfig};
use dcm_core::sweep::{self, SweepConfig, SweepError};
use dcm_core::{BreakdownLevel, Hierarchy};
use dcm_service::{AppState, ServiceConfig, SnapshotSpec, SweepSettings};
use serde::Serialize;
use serde_json::json;

use crate::args::*;
use crate::output::{file_hash, Output};
use crate::{data, CliError};

fn load_hierarchy(path: &Path, level: BreakdownLevel) -> Result<Hierarchy, CliError> {
    let h = Hierarchy::load(path, level).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    for w in h.warnings() {
        eprintln!("warning: {}: {w}", path.display());
    }
    Ok(h)
}

/// A dataset JSON, or a records CSV taken whole as training data.
fn load_dataset(path: &Path) -> Result<Dataset, CliError> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        return Dataset::load(path).map_err(data);
    }
    let ing = ingest_csv(path, &BTreeMap::new()).map_err(data)?;
    for r in &ing.rejects {
        eprintln!("warning: {} row {}: {}", path.display(), r.row, r.reason);
    }
    Ok(ing.dataset)
}

/// Config hash over the parameters and the contents of every input file, so
/// identical runs from different directories agree.
fn fingerprint(params: &impl Serialize, inputs: &[&Path]) -> Result<String, CliError> {
    let hashes = inputs.iter().map(|p| file_hash(p)).collect::<Result<Vec<_>, _>>()?;
    Ok(config_hash(&json!({ "params": params, "inputs": hashes })))
}

fn lvl(level: BreakdownLevel) -> String {
    level.as_str().to_ascii_lowercase()
}

/// Model ids end up in file names.
fn file_id(id: &str) -> String {
    let s: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    if s.is_empty() {
        "model".into()
    } else {
        s
    }
}

fn model_spec(m: &ModelOpts) -> Result<ModelSpec, CliError> {
    match m.model {
        ModelChoice::Nb => {
            if !(m.alpha > 0.0) || !m.alpha.is_finite() {
                return Err(CliError::usage(format!("--alpha must be positive, got {}", m.alpha)));
            }
            Ok(ModelSpec::Nb { alpha: m.alpha })
        }
        ModelChoice::Rf => {
            if m.trees == 0 {
                return Err(CliError::usage("--trees must be at least 1"));
            }
            Ok(ModelSpec::rf(m.trees, m.seed))
        }
    }
}

fn rollup_config(v: u64, r: &RollupOpts) -> RollupConfig {
    RollupConfig {
        v,
        min_support: r.min_support,
        root_policy: r.root_policy,
    }
}

fn eval_config(level: BreakdownLevel, v: u64, r: &RollupOpts, m: &ModelOpts) -> Result<EvalConfig, CliError> {
    Ok(EvalConfig {
        level,
        rollup: rollup_config(v, r),
        model: model_spec(m)?,
        model_id: m.model.as_str().to_string(),
    })
}

fn predictions_csv(preds: &[Prediction]) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    write_predictions(&mut buf, preds).map_err(data)?;
    Ok(buf)
}

fn split_line(ds: &Dataset) -> String {
    format!(
        "{} records ({} train / {} validation)",
        ds.len(),
        ds.count(Split::Train),
        ds.count(Split::Validation)
    )
}

pub fn generate(out: &Path, a: GenerateArgs) -> Result<(), CliError> {
    let mut cfg = SynthConfig::load(&a.config).map_err(data)?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(n) = a.records {
        cfg.n_records = n;
    }
    let hierarchies: BTreeMap<BreakdownLevel, String> = cfg
        .resolve_hierarchies()
        .map_err(data)?
        .iter()
        .map(|(l, h)| (*l, h.to_text()))
        .collect();
    let ds = generate_synthetic(&cfg).map_err(data)?;
    let ds = split_dataset(&ds, a.validation_fraction, cfg.seed).map_err(data)?;
    let hash = config_hash(&json!({
        "config": cfg,
        "hierarchies": hierarchies,
        "validation_fraction": a.validation_fraction,
    }));

    let mut csv = Vec::new();
    ds.write_csv(&mut csv).map_err(data)?;
    let mut o = Output::open(out, "generate")?;
    o.write("corpus.csv", csv, &hash)?;
    o.write("dataset.json", ds.to_json().map_err(data)?, &hash)?;
    println!("generated {}", split_line(&ds));
    o.finish()
}

pub fn ingest(out: &Path, a: IngestArgs) -> Result<(), CliError> {
    let mut hierarchies = BTreeMap::new();
    for (level, path) in &a.hierarchies {
        if hierarchies.insert(*level, load_hierarchy(path, *level)?).is_some() {
            return Err(CliError::usage(format!("--hierarchy given twice for {level}")));
        }
    }
    let ing = ingest_csv(&a.data, &hierarchies).map_err(data)?;
    if ing.dataset.is_empty() {
        return Err(CliError::data(format!(
            "{}: no valid records ({} rejected)",
            a.data.display(),
            ing.rejects.len()
        )));
    }
    let ds = match (a.no_split, a.stratify) {
        (true, _) => ing.dataset.clone(),
        (false, None) => split_dataset(&ing.dataset, a.validation_fraction, a.seed).map_err(data)?,
        (false, Some(level)) => {
            split_dataset_stratified(&ing.dataset, a.validation_fraction, a.seed, level).map_err(data)?
        }
    };
    let mut inputs: Vec<&Path> = vec![&a.data];
    inputs.extend(a.hierarchies.iter().map(|(_, p)| p.as_path()));
    let hash = fingerprint(
        &json!({
            "levels": a.hierarchies.iter().map(|(l, _)| *l).collect::<Vec<_>>(),
            "validation_fraction": a.validation_fraction,
            "seed": a.seed,
            "no_split": a.no_split,
            "stratify": a.stratify,
        }),
        &inputs,
    )?;

    let mut o = Output::open(out, "ingest")?;
    o.write("dataset.json", ds.to_json().map_err(data)?, &hash)?;
    o.write("rejects.csv", ing.rejects_csv(), &hash)?;
    println!("ingested {}, {} rejected", split_line(&ds), ing.rejects.len());
    o.finish()
}

pub fn rollup(out: &Path, a: RollupArgs) -> Result<(), CliError> {
    let ds = load_dataset(&a.data.dataset)?;
    let h = load_hierarchy(&a.data.hierarchy, a.data.level)?;
    let cfg = rollup_config(a.v, &a.rollup);
    let counts = class_counts(&ds, a.data.level, Split::Train);
    let (mapping, audit) = compute_rollup(&counts, &h, &cfg).map_err(data)?;
    let hash = fingerprint(&json!({ "level": a.data.level, "rollup": cfg }), &[&a.data.dataset, &a.data.hierarchy])?;

    let tag = format!("{}_v{}", lvl(a.data.level), a.v);
    let mut o = Output::open(out, "rollup")?;
    o.write(&format!("mapping_{tag}.csv"), mapping.to_csv(), &hash)?;
    o.write(&format!("audit_{tag}.csv"), audit.to_csv(), &hash)?;
    println!("{}", mapping_summary(&mapping, &audit));
    o.finish()
}

pub fn train(out: &Path, a: TrainArgs) -> Result<(), CliError> {
    let ds = load_dataset(&a.data.dataset)?;
    let h = load_hierarchy(&a.data.hierarchy, a.data.level)?;
    let cfg = eval_config(a.data.level, a.v, &a.rollup, &a.model)?;
    let tokens = prepare_tokens(&ds, &TextCleaner::new());
    let fitted = fit(&ds, &tokens, &h, &cfg).map_err(data)?;
    let hash = fingerprint(&cfg, &[&a.data.dataset, &a.data.hierarchy])?;

    let name = format!("model_{}_{}.json", lvl(a.data.level), cfg.model_id);
    let mut o = Output::open(out, "train")?;
    o.write(&name, fitted.artifact.to_json().map_err(data)?, &hash)?;
    println!(
        "trained {} on {} records: {} classes, {} vocabulary tokens",
        cfg.model.kind(),
        fitted.n_train,
        fitted.artifact.model.classes().len(),
        fitted.artifact.vocabulary.len()
    );
    o.finish()
}

fn mode_v(mode: Mode, v: u64) -> (EvalMode, u64) {
    match mode {
        Mode::Flat => (EvalMode::Flat, 0),
        Mode::Dynamic => (EvalMode::Dynamic, v),
    }
}

pub fn eval(out: &Path, a: EvalArgs) -> Result<(), CliError> {
    if a.v == 0 && a.mode.0.contains(&Mode::Dynamic) {
        return Err(CliError::usage("dynamic mode needs --v > 0"));
    }
    let ds = load_dataset(&a.data.dataset)?;
    if ds.count(Split::Validation) == 0 {
        return Err(CliError::data(format!("{} has no validation records", a.data.dataset.display())));
    }
    let h = load_hierarchy(&a.data.hierarchy, a.data.level)?;
    let level = a.data.level;
    let mut o = Output::open(out, "eval")?;
    let mut reports: Vec<EvalReport> = Vec::new();

    match &a.external {
        Some(path) => {
            let preds = load_external_predictions(path).map_err(data)?;
            let model_id = preds.first().map_or("external".to_string(), |p| p.model_id.clone());
            let known: BTreeSet<String> = ds.indices(Split::Validation).map(|i| ds.records()[i].key()).collect();
            let matched = match_predictions(preds, &known);
            if !matched.unknown.is_empty() {
                eprintln!(
                    "warning: {} predictions name no validation record (first: {})",
                    matched.unknown.len(),
                    matched.unknown[0]
                );
            }
            if !matched.missing.is_empty() {
                eprintln!("warning: {} validation records have no prediction", matched.missing.len());
            }
            let by_index: BTreeMap<usize, _> = matched
                .by_key
                .values()
                .filter_map(|p| ds.find(&p.record_key).map(|i| (i, p.predicted)))
                .collect();
            for &mode in &a.mode.0 {
                let (eval_mode, v) = mode_v(mode, a.v);
                let cfg = EvalConfig {
                    level,
                    rollup: rollup_config(v, &a.rollup),
                    model: ModelSpec::nb(),
                    model_id: model_id.clone(),
                };
                let (mapping, _) = rollup_for(&ds, &h, &cfg).map_err(data)?;
                let (rep, _) = evaluate_predictions(&ds, &mapping, &by_index, eval_mode, &model_id).map_err(data)?;
                let hash = fingerprint(
                    &json!({ "level": level, "rollup": cfg.rollup, "external": true }),
                    &[&a.data.dataset, &a.data.hierarchy, path],
                )?;
                write_report(&mut o, &rep, &hash)?;
                reports.push(rep);
            }
        }
        None => {
            let tokens = prepare_tokens(&ds, &TextCleaner::new());
            for &mode in &a.mode.0 {
                let (_, v) = mode_v(mode, a.v);
                let cfg = eval_config(level, v, &a.rollup, &a.model)?;
                let outcome = evaluate(&ds, &tokens, &h, &cfg).map_err(data)?;
                let hash = fingerprint(&cfg, &[&a.data.dataset, &a.data.hierarchy])?;
                let preds: Vec<Prediction> = outcome.predictions.iter().map(|(_, p)| p.clone()).collect();
                o.write(
                    &format!("predictions_{}_{}_{}.csv", lvl(level), cfg.model_id, mode_name(outcome.report.mode)),
                    predictions_csv(&preds)?,
                    &hash,
                )?;
                write_report(&mut o, &outcome.report, &hash)?;
                reports.push(outcome.report);
            }
        }
    }

    if let [flat, dynamic] = reports.as_slice() {
        let cmp = compare(flat, dynamic).map_err(data)?;
        let hash = config_hash(&json!({ "flat": flat, "dynamic": dynamic }));
        let text = cmp.to_text();
        o.write(&format!("comparison_{}_{}.txt", lvl(level), file_id(&flat.model_id)), &text, &hash)?;
        println!("{text}");
    } else {
        for r in &reports {
            println!("{}", r.to_text());
        }
    }
    o.finish()
}

fn mode_name(m: EvalMode) -> &'static str {
    match m {
        EvalMode::Flat => "flat",
        EvalMode::Dynamic => "dynamic",
    }
}

fn write_report(o: &mut Output, r: &EvalReport, hash: &str) -> Result<(), CliError> {
    let stem = format!("report_{}_{}_{}", lvl(r.level), file_id(&r.model_id), mode_name(r.mode));
    o.write(&format!("{stem}.json"), r.to_json(), hash)?;
    o.write(&format!("{stem}.txt"), r.to_text(), hash)?;
    Ok(())
}

pub fn sweep(out: &Path, a: SweepArgs) -> Result<(), CliError> {
    let ds = load_dataset(&a.data.dataset)?;
    let h = load_hierarchy(&a.data.hierarchy, a.data.level)?;
    let cfg = SweepConfig {
        level: a.data.level,
        model: model_spec(&a.model)?,
        grid: a.grid.0.clone(),
        t: a.t,
        epsilon: a.epsilon,
        seed: a.model.seed,
        min_support: a.rollup.min_support,
        root_policy: a.rollup.root_policy,
    };
    cfg.validate().map_err(|e| CliError::usage(e.to_string()))?;
    let tokens = prepare_tokens(&ds, &TextCleaner::new());
    let points = sweep::run_sweep(&ds, &tokens, &h, &cfg).map_err(|e| match e {
        SweepError::InvalidConfig(m) => CliError::usage(m),
        other => data(other),
    })?;
    let selected = sweep::select_threshold(&points, a.t, a.epsilon);
    let best = sweep::argmax(&points);
    let hash = fingerprint(&cfg, &[&a.data.dataset, &a.data.hierarchy])?;

    let stem = format!("sweep_{}_{}", lvl(a.data.level), a.model.model.as_str());
    let mut o = Output::open(out, "sweep")?;
    o.write(&format!("{stem}.csv"), sweep::to_csv(&points), &hash)?;
    if a.plot {
        let title = format!("{} {} macro-F1 by rollup threshold", a.data.level, cfg.model.kind());
        o.write(&format!("{stem}.svg"), sweep::to_svg(&points, Some(a.t), selected, &title), &hash)?;
    }

    println!("{:>6}  {:>8}  {:>8}  {:>9}", "v", "macro-F1", "classes", "excluded");
    for p in &points {
        println!(
            "{:>6}  {:>8.4}  {:>8}  {:>9}",
            p.v, p.macro_f1, p.n_retained_classes, p.n_excluded_validation
        );
    }
    match selected {
        Some(v) => println!("selected v = {v} (t = {}, epsilon = {})", a.t, a.epsilon),
        None => println!("selected v = none (no grid point reaches t = {} within epsilon = {})", a.t, a.epsilon),
    }
    if let Some(b) = best {
        println!("argmax v = {} (macro-F1 {:.4})", b.v, b.macro_f1);
    }
    o.finish()
}

pub fn classify(out: &Path, a: ClassifyArgs) -> Result<(), CliError> {
    let artifact = ModelArtifact::load(&a.model).map_err(data)?;
    let ds = load_dataset(&a.input)?;
    let cleaner = TextCleaner::new();
    let preds = ds
        .records()
        .iter()
        .map(|r| {
            let c = artifact
                .classify_tokens(&cleaner.clean_and_tokenize(&r.description))
                .map_err(data)?;
            Ok(Prediction {
                record_key: r.key(),
                predicted: c.code,
                confidence: c.confidence,
                model_id: artifact.model_id.clone(),
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let hash = fingerprint(&json!({ "command": "classify" }), &[&a.model, &a.input])?;

    let mut o = Output::open(out, "classify")?;
    let name = format!("predictions_{}_{}.csv", lvl(artifact.level), file_id(&artifact.model_id));
    o.write(&name, predictions_csv(&preds)?, &hash)?;
    println!("classified {} records with {}", preds.len(), artifact.model_id);
    o.finish()
}

fn load_context(path: Option<&PathBuf>) -> Result<MappingContext, CliError> {
    match path {
        Some(p) => MappingContext::load(p).map_err(data),
        None => Ok(MappingContext::default()),
    }
}

pub fn map(out: &Path, a: MapArgs) -> Result<(), CliError> {
    if !a.labels && a.predictions.is_empty() {
        return Err(CliError::usage("give --predictions LEVEL=PATH or --labels"));
    }
    let ds = load_dataset(&a.input)?;
    let ctx = load_context(a.context.as_ref())?;
    let mut per_record: Vec<BTreeMap<BreakdownLevel, _>> = vec![BTreeMap::new(); ds.len()];
    if a.labels {
        for (i, r) in ds.records().iter().enumerate() {
            for level in BreakdownLevel::ALL {
                if let Some(c) = r.label(level) {
                    per_record[i].insert(level, c);
                }
            }
        }
    } else {
        let known: BTreeSet<String> = ds.records().iter().map(|r| r.key()).collect();
        for (level, path) in &a.predictions {
            let matched = match_predictions(load_external_predictions(path).map_err(data)?, &known);
            for key in &matched.unknown {
                eprintln!("warning: {}: no record {key}", path.display());
            }
            for p in matched.by_key.values() {
                let i = ds.find(&p.record_key).expect("matched key is known");
                per_record[i].insert(*level, p.predicted);
            }
        }
    }
    let mapped = kbmap::map_records(ds.records().iter().zip(per_record), &ctx).map_err(data)?;
    for (iri, keys) in &mapped.collisions {
        eprintln!("warning: subject {} is shared by records {}", iri.as_str(), keys.join(", "));
    }
    let mut inputs: Vec<&Path> = vec![&a.input];
    inputs.extend(a.predictions.iter().map(|(_, p)| p.as_path()));
    let hash = fingerprint(
        &json!({
            "labels": a.labels,
            "levels": a.predictions.iter().map(|(l, _)| *l).collect::<Vec<_>>(),
            "context": ctx,
        }),
        &inputs,
    )?;

    let mut o = Output::open(out, "map")?;
    o.write("kb.nt", kbmap::to_ntriples(&mapped.store), &hash)?;
    println!("mapped {} triples", mapped.store.len());
    o.finish()
}

pub fn query(out: &Path, a: QueryArgs) -> Result<(), CliError> {
    let ts = kbmap::parse_ntriples(&a.kb).map_err(data)?;
    let h = load_hierarchy(&a.hierarchy, a.level)?;
    let ctx = load_context(a.context.as_ref())?;
    let subjects = kbmap::query_classified_as(&ts, a.class, a.subclasses, &h, &ctx).map_err(data)?;
    let mut text = String::new();
    for s in &subjects {
        text.push_str(s.as_str());
        text.push('\n');
    }
    let hash = fingerprint(
        &json!({ "class": a.class, "level": a.level, "subclasses": a.subclasses, "context": ctx }),
        &[&a.kb, &a.hierarchy],
    )?;

    let suffix = if a.subclasses { "_subclasses" } else { "" };
    let mut o = Output::open(out, "query")?;
    o.write(&format!("query_{}_{}{suffix}.txt", lvl(a.level), a.class.as_str()), &text, &hash)?;
    print!("{text}");
    eprintln!("{} subjects", subjects.len());
    o.finish()
}

pub fn serve(a: ServeArgs) -> Result<(), CliError> {
    let dataset = load_dataset(&a.dataset)?;
    let mut hierarchies = BTreeMap::new();
    for (level, path) in &a.hierarchies {
        hierarchies.insert(*level, load_hierarchy(path, *level)?);
    }
    let mut snapshots = Vec::new();
    for level in hierarchies.keys() {
        for m in &a.models {
            let model = match m {
                ModelChoice::Nb => ModelSpec::nb(),
                ModelChoice::Rf => ModelSpec::rf(a.trees, a.seed),
            };
            snapshots.push(SnapshotSpec { level: *level, model, v: a.v });
        }
    }
    let cfg = ServiceConfig {
        dataset,
        hierarchies,
        snapshots,
        corrections_log: a.corrections.clone(),
        sweep: a.sweep_grid.map(|g| SweepSettings {
            grid: g.0,
            t: a.t,
            epsilon: a.epsilon,
        }),
        static_dir: a.static_dir.clone(),
    };
    eprintln!("training initial models...");
    let state = AppState::new(cfg).map_err(data)?;
    let rt = tokio::runtime::Runtime::new().map_err(data)?;
    println!("listening on http://{}", a.addr);
    rt.block_on(dcm_service::serve(state, a.addr)).map_err(data)
}

pub fn report(a: ReportArgs) -> Result<(), CliError> {
    let mut reports = Vec::new();
    for p in &a.reports {
        let text = std::fs::read_to_string(p).map_err(|e| CliError::data(format!("{}: {e}", p.display())))?;
        let r: EvalReport =
            serde_json::from_str(&text).map_err(|e| CliError::data(format!("{}: not a report: {e}", p.display())))?;
        reports.push(r);
    }
    for r in &reports {
        println!("{}", r.to_text());
    }
    if let [x, y] = reports.as_slice() {
        let pair = match (x.mode, y.mode) {
            (EvalMode::Flat, EvalMode::Dynamic) => Some((x, y)),
            (EvalMode::Dynamic, EvalMode::Flat) => Some((y, x)),
            _ => None,
        };
        if let Some((flat, dynamic)) = pair {
            println!("{}", compare(flat, dynamic).map_err(data)?.to_text());
        }
    }
    Ok(())
}
