//! Predictions produced outside this crate, exchanged as CSV.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use super::{io_err, ClassifyError, Prediction};
use crate::hierarchy::ClassCode;

pub const PREDICTIONS_HEADER: [&str; 4] = ["record_key", "predicted_code", "confidence", "model_id"];

pub fn read_predictions<R: Read>(reader: R) -> Result<Vec<Prediction>, ClassifyError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(reader);
    let malformed = |row: u64, reason: String| ClassifyError::MalformedCsv { row, reason };
    let header = rdr.headers().map_err(|e| malformed(1, e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != PREDICTIONS_HEADER {
        return Err(malformed(1, format!("expected header {}", PREDICTIONS_HEADER.join(","))));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| malformed(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let row = rec.position().map_or(0, |p| p.line());
        if rec.len() != 4 {
            return Err(malformed(row, format!("expected 4 fields, found {}", rec.len())));
        }
        if rec[0].is_empty() {
            return Err(malformed(row, "empty record_key".into()));
        }
        let predicted = ClassCode::parse(&rec[1]).map_err(|e| malformed(row, e.to_string()))?;
        let confidence: f64 = rec[2]
            .parse()
            .map_err(|_| malformed(row, format!("confidence {:?} is not a number", &rec[2])))?;
        if !(0.0..=1.0).contains(&confidence) {
            return Err(malformed(row, format!("confidence {confidence} outside [0, 1]")));
        }
        out.push(Prediction {
            record_key: rec[0].to_string(),
            predicted,
            confidence,
            model_id: rec[3].to_string(),
        });
    }
    Ok(out)
}

pub fn load_external_predictions(path: &Path) -> Result<Vec<Prediction>, ClassifyError> {
    let f = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    read_predictions(f)
}

pub fn write_predictions<W: Write>(writer: W, preds: &[Prediction]) -> Result<(), ClassifyError> {
    let mut w = csv::Writer::from_writer(writer);
    let fail = |e: csv::Error| ClassifyError::Json(e.to_string());
    w.write_record(PREDICTIONS_HEADER).map_err(fail)?;
    for p in preds {
        w.write_record([
            p.record_key.as_str(),
            p.predicted.as_str(),
            &p.confidence.to_string(),
            p.model_id.as_str(),
        ])
        .map_err(fail)?;
    }
    w.flush().map_err(|e| ClassifyError::Json(e.to_string()))
}

/// Predictions keyed to a known record set.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Matched {
    pub by_key: BTreeMap<String, Prediction>,
    /// Keys in the file that name no known record.
    pub unknown: Vec<String>,
    /// Known records without a prediction.
    pub missing: Vec<String>,
}

/// Later rows win when a key repeats.
pub fn match_predictions(preds: Vec<Prediction>, known: &BTreeSet<String>) -> Matched {
    let mut m = Matched::default();
    for p in preds {
        if known.contains(&p.record_key) {
            m.by_key.insert(p.record_key.clone(), p);
        } else {
            m.unknown.push(p.record_key);
        }
    }
    m.missing = known.iter().filter(|k| !m.by_key.contains_key(*k)).cloned().collect();
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_row() {
        let p = read_predictions("record_key,predicted_code,confidence,model_id\np1/100,QA,0.97,bert\n".as_bytes()).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].record_key, "p1/100");
        assert_eq!(p[0].predicted.as_str(), "QA");
        assert_eq!(p[0].confidence, 0.97);
        assert_eq!(p[0].model_id, "bert");
    }

    #[test]
    fn confidence_out_of_range() {
        let e = read_predictions("record_key,predicted_code,confidence,model_id\np1/100,QA,1.5,bert\n".as_bytes());
        assert!(matches!(e, Err(ClassifyError::MalformedCsv { row: 2, .. })));
    }

    #[test]
    fn bad_header_and_code() {
        assert!(read_predictions("a,b,c,d\n".as_bytes()).is_err());
        assert!(read_predictions("record_key,predicted_code,confidence,model_id\nk,Q1,0.5,m\n".as_bytes()).is_err());
    }

    #[test]
    fn write_read_round_trip_and_match() {
        let preds = vec![
            Prediction { record_key: "p/1".into(), predicted: ClassCode::parse("A").unwrap(), confidence: 0.25, model_id: "x".into() },
            Prediction { record_key: "p/9".into(), predicted: ClassCode::parse("B").unwrap(), confidence: 1.0, model_id: "x".into() },
        ];
        let mut buf = Vec::new();
        write_predictions(&mut buf, &preds).unwrap();
        let back = read_predictions(buf.as_slice()).unwrap();
        assert_eq!(back, preds);
        let known: BTreeSet<String> = ["p/1".to_string(), "p/2".to_string()].into();
        let m = match_predictions(back, &known);
        assert_eq!(m.by_key.len(), 1);
        assert_eq!(m.unknown, ["p/9"]);
        assert_eq!(m.missing, ["p/2"]);
    }
}
