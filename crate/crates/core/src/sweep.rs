//! Macro-F1 as a function of the rollup threshold, and threshold selection.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, TokenizedText};
use crate::hierarchy::{BreakdownLevel, Hierarchy};
use crate::pipeline::{evaluate, EvalConfig, ModelSpec, PipelineError};
use crate::rollup::{RollupConfig, RootPolicy, DEFAULT_MIN_SUPPORT};

pub const DEFAULT_EPSILON: f64 = 0.01;

pub fn default_grid() -> Vec<u64> {
    (0..=200).step_by(10).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub level: BreakdownLevel,
    pub model: ModelSpec,
    #[serde(default = "default_grid")]
    pub grid: Vec<u64>,
    pub t: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_min_support")]
    pub min_support: u64,
    #[serde(default)]
    pub root_policy: RootPolicy,
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

fn default_min_support() -> u64 {
    DEFAULT_MIN_SUPPORT
}

impl SweepConfig {
    pub fn new(level: BreakdownLevel, model: ModelSpec, t: f64) -> Self {
        SweepConfig {
            level,
            model,
            grid: default_grid(),
            t,
            epsilon: DEFAULT_EPSILON,
            seed: 0,
            min_support: DEFAULT_MIN_SUPPORT,
            root_policy: RootPolicy::default(),
        }
    }

    pub fn validate(&self) -> Result<(), SweepError> {
        if self.grid.is_empty() {
            return Err(SweepError::InvalidConfig("grid is empty".into()));
        }
        if self.grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(SweepError::InvalidConfig("grid must be strictly increasing".into()));
        }
        if !(self.t > 0.0 && self.t <= 1.0) {
            return Err(SweepError::InvalidConfig(format!("t must be in (0, 1], got {}", self.t)));
        }
        if !(self.epsilon >= 0.0) {
            return Err(SweepError::InvalidConfig(format!("epsilon must be non-negative, got {}", self.epsilon)));
        }
        Ok(())
    }

    fn eval_config(&self, v: u64) -> EvalConfig {
        let model = match &self.model {
            ModelSpec::Rf(rf) => ModelSpec::Rf(crate::classify::RfConfig {
                seed: self.seed,
                ..rf.clone()
            }),
            m => m.clone(),
        };
        EvalConfig {
            level: self.level,
            rollup: RollupConfig {
                v,
                min_support: self.min_support,
                root_policy: self.root_policy,
            },
            model_id: format!("{}-v{v}", model.kind().as_str().to_ascii_lowercase()),
            model,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SweepError {
    #[error("invalid sweep config: {0}")]
    InvalidConfig(String),
    #[error("at v={v}: {source}")]
    Point { v: u64, source: PipelineError },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub v: u64,
    pub macro_f1: f64,
    pub n_retained_classes: usize,
    pub n_excluded_validation: u64,
}

/// One point per grid value, in grid order. Points are independent and run in
/// parallel over the same split.
pub fn run_sweep(
    ds: &Dataset,
    tokens: &[TokenizedText],
    h: &Hierarchy,
    cfg: &SweepConfig,
) -> Result<Vec<SweepPoint>, SweepError> {
    cfg.validate()?;
    cfg.grid
        .par_iter()
        .map(|&v| {
            let out = evaluate(ds, tokens, h, &cfg.eval_config(v)).map_err(|source| SweepError::Point { v, source })?;
            Ok(SweepPoint {
                v,
                macro_f1: out.report.macro_avg.f1,
                n_retained_classes: out.mapping.retained.len(),
                n_excluded_validation: out.n_excluded_validation,
            })
        })
        .collect()
}

/// Smallest `v` reaching `t` after which macro-F1 never drops below `t - epsilon`.
pub fn select_threshold(points: &[SweepPoint], t: f64, epsilon: f64) -> Option<u64> {
    let mut selected = None;
    // scan backwards, tracking whether every later point stays above t - epsilon
    let mut suffix_ok = true;
    for p in points.iter().rev() {
        if suffix_ok && p.macro_f1 >= t {
            selected = Some(p.v);
        }
        suffix_ok &= p.macro_f1 >= t - epsilon;
    }
    selected
}

/// First point with the highest macro-F1.
pub fn argmax(points: &[SweepPoint]) -> Option<SweepPoint> {
    points
        .iter()
        .copied()
        .fold(None, |best: Option<SweepPoint>, p| match best {
            Some(b) if b.macro_f1 >= p.macro_f1 => Some(b),
            _ => Some(p),
        })
}

pub const SWEEP_CSV_HEADER: &str = "v,macro_f1,n_retained_classes,n_excluded_validation";

pub fn to_csv(points: &[SweepPoint]) -> String {
    let mut s = String::from(SWEEP_CSV_HEADER);
    s.push('\n');
    for p in points {
        let _ = writeln!(s, "{},{},{},{}", p.v, p.macro_f1, p.n_retained_classes, p.n_excluded_validation);
    }
    s
}

pub fn from_csv(text: &str) -> Result<Vec<SweepPoint>, SweepError> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(SWEEP_CSV_HEADER) {
        return Err(SweepError::InvalidConfig(format!("expected header {SWEEP_CSV_HEADER}")));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            let bad = || SweepError::InvalidConfig(format!("line {}: {line:?}", i + 2));
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 4 {
                return Err(bad());
            }
            Ok(SweepPoint {
                v: f[0].parse().map_err(|_| bad())?,
                macro_f1: f[1].parse().map_err(|_| bad())?,
                n_retained_classes: f[2].parse().map_err(|_| bad())?,
                n_excluded_validation: f[3].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

/// Line chart of macro-F1 against `v`, with `t` as a dashed guide and the
/// selected threshold marked.
pub fn to_svg(points: &[SweepPoint], t: Option<f64>, selected: Option<u64>, title: &str) -> String {
    let (w, h, pad) = (640.0, 400.0, 50.0);
    let v_max = points.iter().map(|p| p.v).max().unwrap_or(0).max(1) as f64;
    let x = |v: f64| pad + (w - 2.0 * pad) * v / v_max;
    let y = |f: f64| h - pad - (h - 2.0 * pad) * f;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="25" text-anchor="middle" font-family="sans-serif" font-size="14">{}</text>"#,
        w / 2.0,
        xml_escape(title)
    );
    let _ = writeln!(
        s,
        r#"<line x1="{pad}" y1="{}" x2="{}" y2="{}" stroke="black"/><line x1="{pad}" y1="{pad}" x2="{pad}" y2="{}" stroke="black"/>"#,
        h - pad,
        w - pad,
        h - pad,
        h - pad
    );
    for i in 0..=5 {
        let f = i as f64 / 5.0;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.1}" text-anchor="end" font-family="sans-serif" font-size="10">{f:.1}</text>"#,
            pad - 5.0,
            y(f) + 3.0
        );
    }
    for p in points {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="10">{}</text>"#,
            x(p.v as f64),
            h - pad + 15.0,
            p.v
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">v</text>"#,
        w / 2.0,
        h - 10.0
    );
    if let Some(t) = t {
        let _ = writeln!(
            s,
            r#"<line x1="{pad}" y1="{:.1}" x2="{}" y2="{:.1}" stroke="gray" stroke-dasharray="4 4"/>"#,
            y(t),
            w - pad,
            y(t)
        );
    }
    let path: Vec<String> = points
        .iter()
        .map(|p| format!("{:.1},{:.1}", x(p.v as f64), y(p.macro_f1)))
        .collect();
    let _ = writeln!(
        s,
        r#"<polyline fill="none" stroke="steelblue" stroke-width="2" points="{}"/>"#,
        path.join(" ")
    );
    for p in points {
        let color = if Some(p.v) == selected { "crimson" } else { "steelblue" };
        let _ = writeln!(
            s,
            r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{color}"/>"#,
            x(p.v as f64),
            y(p.macro_f1)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
