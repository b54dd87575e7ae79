use std::collections::BTreeSet;

use dcm_core::metrics::{confusion, report, EvalMode};
use dcm_core::{BreakdownLevel, ClassCode};
use proptest::prelude::*;

const CODES: [&str; 6] = ["A", "B", "C", "D", "E", "F"];

struct Oracle {
    macro_p: f64,
    macro_r: f64,
    macro_f: f64,
    weighted_f: f64,
    accuracy: f64,
}

/// Metric definitions evaluated by direct counting over the label pairs.
fn brute(t: &[usize], p: &[usize]) -> Oracle {
    let classes: BTreeSet<usize> = t.iter().chain(p).copied().collect();
    let n = t.len() as f64;
    let (mut mp, mut mr, mut mf, mut wf) = (0.0, 0.0, 0.0, 0.0);
    for &c in &classes {
        let tp = t.iter().zip(p).filter(|(a, b)| **a == c && **b == c).count() as f64;
        let pred = p.iter().filter(|b| **b == c).count() as f64;
        let sup = t.iter().filter(|a| **a == c).count() as f64;
        let prec = if pred == 0.0 { 0.0 } else { tp / pred };
        let rec = if sup == 0.0 { 0.0 } else { tp / sup };
        let f = if prec + rec == 0.0 { 0.0 } else { 2.0 * prec * rec / (prec + rec) };
        mp += prec;
        mr += rec;
        mf += f;
        wf += f * sup;
    }
    let k = classes.len() as f64;
    Oracle {
        macro_p: mp / k,
        macro_r: mr / k,
        macro_f: mf / k,
        weighted_f: wf / n,
        accuracy: t.iter().zip(p).filter(|(a, b)| a == b).count() as f64 / n,
    }
}

fn to_codes(v: &[usize], perm: &[usize]) -> Vec<ClassCode> {
    v.iter().map(|i| ClassCode::parse(CODES[perm[*i]]).unwrap()).collect()
}

fn pairs() -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    (1usize..=40).prop_flat_map(|n| {
        (proptest::collection::vec(0usize..6, n), proptest::collection::vec(0usize..6, n))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn report_matches_brute_force((t, p) in pairs()) {
        let id: Vec<usize> = (0..6).collect();
        let cm = confusion(&to_codes(&t, &id), &to_codes(&p, &id)).unwrap();
        prop_assert_eq!(cm.total(), t.len() as u64);
        let r = report(&cm, EvalMode::Flat, "m", BreakdownLevel::Bl1).unwrap();
        let o = brute(&t, &p);
        prop_assert!((r.macro_avg.precision - o.macro_p).abs() < 1e-12);
        prop_assert!((r.macro_avg.recall - o.macro_r).abs() < 1e-12);
        prop_assert!((r.macro_avg.f1 - o.macro_f).abs() < 1e-12);
        prop_assert!((r.weighted.f1 - o.weighted_f).abs() < 1e-12);
        prop_assert!((r.accuracy - o.accuracy).abs() < 1e-12);
        prop_assert!((r.accuracy - r.weighted.recall).abs() < 1e-12);
        prop_assert_eq!(r.per_class.values().map(|c| c.support).sum::<u64>(), t.len() as u64);
        for c in r.per_class.values() {
            for m in [c.precision, c.recall, c.f1] {
                prop_assert!((0.0..=1.0).contains(&m));
            }
        }
    }

    #[test]
    fn macro_invariant_under_relabeling((t, p) in pairs(), perm in Just((0..6).collect::<Vec<usize>>()).prop_shuffle()) {
        let id: Vec<usize> = (0..6).collect();
        let a = report(&confusion(&to_codes(&t, &id), &to_codes(&p, &id)).unwrap(), EvalMode::Flat, "m", BreakdownLevel::Bl1).unwrap();
        let b = report(&confusion(&to_codes(&t, &perm), &to_codes(&p, &perm)).unwrap(), EvalMode::Flat, "m", BreakdownLevel::Bl1).unwrap();
        prop_assert!((a.macro_avg.f1 - b.macro_avg.f1).abs() < 1e-12);
        prop_assert!((a.macro_avg.precision - b.macro_avg.precision).abs() < 1e-12);
        prop_assert!((a.macro_avg.recall - b.macro_avg.recall).abs() < 1e-12);
    }
}
