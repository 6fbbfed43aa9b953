//! Canonical CSV transcript format.
//!
//! One row per ADU, sorted by `(turn_index, adu_index)`. Turn-level fields
//! (`reference_turn_index`, `gold_collaboration`) live on the `adu_index = 0`
//! row of a student turn and must be empty everywhere else. A serialized file
//! may carry predictions as extra trailing columns; the parser accepts both
//! layouts.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::corpus_model::{
    validate_discussion, Adu, ArgumentMove, CollaborationType, Discussion, IssueLocation, Label,
    LabelDistribution, SpeakerRole, SpecificityLevel, Turn,
};
use crate::embedding::fnv1a64;

pub const BASE_COLUMNS: [&str; 9] = [
    "turn_index",
    "speaker_id",
    "role",
    "adu_index",
    "text",
    "reference_turn_index",
    "gold_argument",
    "gold_specificity",
    "gold_collaboration",
];

pub const PREDICTION_COLUMNS: [&str; 13] = [
    "pred_argument",
    "pred_specificity",
    "pred_collaboration",
    "p_argument_claim",
    "p_argument_evidence",
    "p_argument_explanation",
    "p_specificity_low",
    "p_specificity_medium",
    "p_specificity_high",
    "p_collaboration_new",
    "p_collaboration_agree",
    "p_collaboration_extension",
    "p_collaboration_challenge_probe",
];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
#[error("line {line}: {reason}")]
pub struct ParseError {
    pub line: u64,
    pub reason: String,
}

impl ParseError {
    fn new(line: u64, reason: impl Into<String>) -> Self {
        Self {
            line,
            reason: reason.into(),
        }
    }
}

/// Discussion-level metadata that the row format does not carry.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptMeta {
    pub discussion_id: Option<String>,
    pub title: Option<String>,
    pub recorded_at: Option<NaiveDate>,
}

impl TranscriptMeta {
    pub fn of(d: &Discussion) -> Self {
        Self {
            discussion_id: Some(d.discussion_id.clone()),
            title: Some(d.title.clone()),
            recorded_at: d.recorded_at,
        }
    }
}

/// Stable content-derived id used when the caller supplies none.
pub fn content_id(content: &str) -> String {
    format!("d-{:016x}", fnv1a64(content.as_bytes()))
}

pub fn adu_id(turn_index: usize, adu_index: usize) -> String {
    format!("t{turn_index}.a{adu_index}")
}

struct Row<'a> {
    line: u64,
    fields: Vec<&'a str>,
}

impl Row<'_> {
    fn get(&self, column: usize) -> &str {
        self.fields.get(column).copied().unwrap_or("")
    }

    fn err(&self, reason: impl Into<String>) -> ParseError {
        ParseError::new(self.line, reason)
    }

    fn index(&self, column: usize) -> Result<usize, ParseError> {
        let raw = self.get(column);
        raw.parse().map_err(|_| {
            self.err(format!(
                "{} must be a non-negative integer, got {raw:?}",
                column_name(column)
            ))
        })
    }

    fn optional_index(&self, column: usize) -> Result<Option<usize>, ParseError> {
        if self.get(column).is_empty() {
            Ok(None)
        } else {
            self.index(column).map(Some)
        }
    }

    fn label<L: Label>(&self, column: usize) -> Result<Option<L>, ParseError> {
        let raw = self.get(column);
        if raw.is_empty() {
            return Ok(None);
        }
        L::parse(raw).map(Some).ok_or_else(|| {
            self.err(format!(
                "{} {raw:?} is not one of {}",
                column_name(column),
                L::vocabulary()
            ))
        })
    }

    fn probability(&self, column: usize) -> Result<f64, ParseError> {
        let raw = self.get(column);
        match raw.parse::<f64>() {
            Ok(p) if p.is_finite() && (0.0..=1.0).contains(&p) => Ok(p),
            _ => Err(self.err(format!(
                "{} must be a probability in [0, 1], got {raw:?}",
                column_name(column)
            ))),
        }
    }

    fn is_blank(&self, columns: std::ops::Range<usize>) -> bool {
        columns.into_iter().all(|c| self.get(c).is_empty())
    }

    /// Reads one predicted distribution: the argmax label column plus one
    /// probability column per class. Rounded probabilities are renormalized.
    fn prediction<L: Label>(
        &self,
        label_column: usize,
        first_prob_column: usize,
    ) -> Result<Option<LabelDistribution<L>>, ParseError> {
        let k = L::ALL.len();
        let columns = first_prob_column..first_prob_column + k;
        let label = self.label::<L>(label_column)?;
        match (label, self.is_blank(columns.clone())) {
            (None, true) => return Ok(None),
            (Some(_), false) => {}
            _ => {
                return Err(self.err(format!(
                    "{} and its probability columns must be filled or empty together",
                    column_name(label_column)
                )))
            }
        }
        let probs = columns
            .map(|c| self.probability(c))
            .collect::<Result<Vec<_>, _>>()?;
        let sum: f64 = probs.iter().sum();
        if sum <= 0.0 {
            return Err(self.err(format!("{} probabilities sum to zero", L::DIMENSION)));
        }
        let label = label.expect("checked above");
        let max = probs.iter().cloned().fold(f64::MIN, f64::max);
        if probs[label.index()] != max {
            return Err(self.err(format!(
                "{} {} is not the most probable class",
                column_name(label_column),
                label.as_str()
            )));
        }
        let normalized = probs.iter().map(|p| p / sum).collect();
        Ok(Some(LabelDistribution::from_probs_unchecked(normalized)))
    }
}

fn column_name(column: usize) -> &'static str {
    BASE_COLUMNS
        .iter()
        .chain(PREDICTION_COLUMNS.iter())
        .nth(column)
        .copied()
        .unwrap_or("column")
}

const COL_TURN: usize = 0;
const COL_SPEAKER: usize = 1;
const COL_ROLE: usize = 2;
const COL_ADU: usize = 3;
const COL_TEXT: usize = 4;
const COL_REF: usize = 5;
const COL_GOLD_ARG: usize = 6;
const COL_GOLD_SPEC: usize = 7;
const COL_GOLD_COLLAB: usize = 8;
const COL_PRED_ARG: usize = 9;
const COL_PRED_SPEC: usize = 10;
const COL_PRED_COLLAB: usize = 11;
const COL_P_ARG: usize = 12;
const COL_P_SPEC: usize = 15;
const COL_P_COLLAB: usize = 18;

/// Parses a transcript into a validated [`Discussion`].
pub fn parse_transcript(content: &str, meta: &TranscriptMeta) -> Result<Discussion, ParseError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(content.as_bytes());

    let mut records = Vec::new();
    for result in reader.records() {
        let record = result.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            ParseError::new(line, format!("malformed CSV: {e}"))
        })?;
        records.push(record);
    }

    let header = records
        .first()
        .ok_or_else(|| ParseError::new(1, "empty file: expected a header row"))?;
    let header_fields: Vec<&str> = header.iter().collect();
    let with_predictions = if header_fields == BASE_COLUMNS {
        false
    } else if header_fields.len() == BASE_COLUMNS.len() + PREDICTION_COLUMNS.len()
        && header_fields[..BASE_COLUMNS.len()] == BASE_COLUMNS
        && header_fields[BASE_COLUMNS.len()..] == PREDICTION_COLUMNS
    {
        true
    } else {
        return Err(ParseError::new(
            1,
            format!("header must be exactly `{}`", BASE_COLUMNS.join(",")),
        ));
    };
    let width = header_fields.len();

    if records.len() < 2 {
        return Err(ParseError::new(2, "no data rows"));
    }

    let mut turns: Vec<Turn> = Vec::new();
    let mut turn_lines: Vec<u64> = Vec::new();

    for record in &records[1..] {
        let row = Row {
            line: record.position().map(|p| p.line()).unwrap_or(0),
            fields: record.iter().collect(),
        };
        if row.fields.len() != width {
            return Err(row.err(format!(
                "expected {width} fields, found {}",
                row.fields.len()
            )));
        }

        let turn_index = row.index(COL_TURN)?;
        let adu_index = row.index(COL_ADU)?;
        let speaker_id = row.get(COL_SPEAKER);
        if speaker_id.trim().is_empty() {
            return Err(row.err("speaker_id must not be empty"));
        }
        let role = match row.get(COL_ROLE) {
            "teacher" => SpeakerRole::Teacher,
            "student" => SpeakerRole::Student,
            other => {
                return Err(row.err(format!("role {other:?} is not one of teacher|student")))
            }
        };
        let text = row.get(COL_TEXT);
        if text.trim().is_empty() {
            return Err(row.err("text must not be empty"));
        }
        let reference = row.optional_index(COL_REF)?;
        let gold_argument = row.label::<ArgumentMove>(COL_GOLD_ARG)?;
        let gold_specificity = row.label::<SpecificityLevel>(COL_GOLD_SPEC)?;
        let gold_collaboration = row.label::<CollaborationType>(COL_GOLD_COLLAB)?;
        let (predicted_argument, predicted_specificity, predicted_collaboration) =
            if with_predictions {
                (
                    row.prediction::<ArgumentMove>(COL_PRED_ARG, COL_P_ARG)?,
                    row.prediction::<SpecificityLevel>(COL_PRED_SPEC, COL_P_SPEC)?,
                    row.prediction::<CollaborationType>(COL_PRED_COLLAB, COL_P_COLLAB)?,
                )
            } else {
                (None, None, None)
            };

        // Ordering and contiguity.
        let next_turn = turns.len();
        match turns.last() {
            Some(last) if turn_index == last.turn_index => {
                let expected = last.adus.len();
                if adu_index < expected {
                    return Err(row.err(format!(
                        "duplicate row for turn {turn_index}, adu {adu_index}"
                    )));
                }
                if adu_index != expected {
                    return Err(row.err(format!(
                        "adu_index values must be contiguous: expected {expected}, found {adu_index}"
                    )));
                }
                if last.speaker_id != speaker_id || last.role != role {
                    return Err(row.err(format!(
                        "speaker_id and role must be the same on every row of turn {turn_index}"
                    )));
                }
            }
            _ if turn_index < next_turn => {
                return Err(row.err(format!(
                    "rows must be sorted by turn_index: turn {turn_index} after turn {}",
                    next_turn - 1
                )));
            }
            _ if turn_index != next_turn => {
                return Err(row.err(format!(
                    "turn_index values must be contiguous: expected {next_turn}, found {turn_index}"
                )));
            }
            _ if adu_index != 0 => {
                return Err(row.err(format!(
                    "first row of turn {turn_index} must have adu_index 0, found {adu_index}"
                )));
            }
            _ => {}
        }

        let has_turn_fields = reference.is_some()
            || gold_collaboration.is_some()
            || predicted_collaboration.is_some();
        if adu_index > 0 && has_turn_fields {
            return Err(row.err(
                "reference_turn_index and collaboration columns belong on the adu_index 0 row",
            ));
        }
        if let Some(r) = reference {
            if r >= turn_index {
                return Err(row.err(format!(
                    "reference_turn_index {r} must be less than turn_index {turn_index}"
                )));
            }
        }
        if role == SpeakerRole::Teacher {
            if adu_index > 0 {
                return Err(row.err("teacher turns have exactly one row"));
            }
            if has_turn_fields
                || gold_argument.is_some()
                || gold_specificity.is_some()
                || predicted_argument.is_some()
                || predicted_specificity.is_some()
            {
                return Err(row.err("teacher rows must not carry labels or references"));
            }
        }

        let adu = Adu {
            adu_id: adu_id(turn_index, adu_index),
            text: text.to_string(),
            gold_argument,
            gold_specificity,
            predicted_argument,
            predicted_specificity,
        };
        if adu_index == 0 {
            turns.push(Turn {
                turn_index,
                speaker_id: speaker_id.to_string(),
                role,
                adus: vec![adu],
                reference_turn_index: reference,
                gold_collaboration,
                predicted_collaboration,
            });
            turn_lines.push(row.line);
        } else if let Some(turn) = turns.last_mut() {
            turn.adus.push(adu);
        }
    }

    let discussion_id = meta
        .discussion_id
        .clone()
        .unwrap_or_else(|| content_id(content));
    let mut discussion = Discussion {
        title: meta.title.clone().unwrap_or_else(|| discussion_id.clone()),
        discussion_id,
        recorded_at: meta.recorded_at,
        turns,
        provenance: crate::corpus_model::Provenance::Uncoded,
    };
    discussion.provenance = discussion.infer_provenance();

    if let Some(issue) = validate_discussion(&discussion).into_iter().next() {
        let line = match &issue.location {
            IssueLocation::Turn { turn_index } | IssueLocation::Adu { turn_index, .. } => {
                turn_lines.get(*turn_index).copied().unwrap_or(0)
            }
            IssueLocation::Discussion => 0,
        };
        return Err(ParseError::new(line, issue.to_string()));
    }
    Ok(discussion)
}

fn format_prediction<L: Label>(dist: Option<&LabelDistribution<L>>, out: &mut Vec<String>) {
    match dist {
        Some(d) => out.push(d.argmax().as_str().to_string()),
        None => out.push(String::new()),
    }
}

fn format_probabilities<L: Label>(dist: Option<&LabelDistribution<L>>, out: &mut Vec<String>) {
    for i in 0..L::ALL.len() {
        out.push(match dist {
            Some(d) => format!("{:.6}", d.probs().get(i).copied().unwrap_or(0.0)),
            None => String::new(),
        });
    }
}

fn opt<T: ToString>(value: Option<T>) -> String {
    value.map(|v| v.to_string()).unwrap_or_default()
}

/// Emits the canonical format; identical input gives identical bytes.
pub fn serialize_transcript(d: &Discussion, include_predictions: bool) -> String {
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_writer(Vec::new());

    let mut header: Vec<&str> = BASE_COLUMNS.to_vec();
    if include_predictions {
        header.extend(PREDICTION_COLUMNS);
    }
    writer
        .write_record(&header)
        .expect("writing to memory cannot fail");

    for turn in &d.turns {
        for (adu_index, adu) in turn.adus.iter().enumerate() {
            let first = adu_index == 0;
            let mut fields = vec![
                turn.turn_index.to_string(),
                turn.speaker_id.clone(),
                turn.role.as_str().to_string(),
                adu_index.to_string(),
                adu.text.clone(),
                opt(turn.reference_turn_index.filter(|_| first)),
                opt(adu.gold_argument),
                opt(adu.gold_specificity),
                opt(turn.gold_collaboration.filter(|_| first)),
            ];
            if include_predictions {
                let collab = turn.predicted_collaboration.as_ref().filter(|_| first);
                format_prediction(adu.predicted_argument.as_ref(), &mut fields);
                format_prediction(adu.predicted_specificity.as_ref(), &mut fields);
                format_prediction(collab, &mut fields);
                format_probabilities(adu.predicted_argument.as_ref(), &mut fields);
                format_probabilities(adu.predicted_specificity.as_ref(), &mut fields);
                format_probabilities(collab, &mut fields);
            }
            writer
                .write_record(&fields)
                .expect("writing to memory cannot fail");
        }
    }
    let bytes = writer.into_inner().expect("flushing to memory cannot fail");
    String::from_utf8(bytes).expect("all fields are UTF-8")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus_model::Provenance;

    const HEADER: &str = "turn_index,speaker_id,role,adu_index,text,reference_turn_index,gold_argument,gold_specificity,gold_collaboration";

    fn file(rows: &[&str]) -> String {
        let mut s = String::from(HEADER);
        for r in rows {
            s.push('\n');
            s.push_str(r);
        }
        s.push('\n');
        s
    }

    fn parse(content: &str) -> Result<Discussion, ParseError> {
        parse_transcript(content, &TranscriptMeta::default())
    }

    #[test]
    fn parses_gold_coded_file() {
        let content = file(&[
            "0,T,teacher,0,What is the theme?,,,,",
            "1,S1,student,0,\"I think it's loss, mostly.\",,claim,medium,new",
            "1,S1,student,1,Page 12 says so.,,evidence,high,",
        ]);
        let d = parse(&content).unwrap();
        assert_eq!(d.turns.len(), 2);
        assert_eq!(d.provenance, Provenance::GoldCoded);
        assert_eq!(d.turns[1].adus[0].text, "I think it's loss, mostly.");
        assert_eq!(d.turns[1].adus[1].adu_id, "t1.a1");
        assert_eq!(d.turns[1].gold_collaboration, Some(CollaborationType::New));
        assert_eq!(d.discussion_id, content_id(&content));
    }

    #[test]
    fn unknown_label_names_row_and_vocabulary() {
        let content = file(&[
            "0,T,teacher,0,Question?,,,,",
            "1,S1,student,0,Answer.,,claim,very high,new",
        ]);
        let err = parse(&content).unwrap_err();
        assert_eq!(err.line, 3);
        assert!(err.reason.contains("very high"), "{err}");
        assert!(err.reason.contains("low|medium|high"), "{err}");
    }

    #[test]
    fn structural_errors_carry_line_numbers() {
        let cases: &[(&[&str], u64, &str)] = &[
            (&["0,T,teacher,0,Q,,,,", "0,T,teacher,0,Q,,,,"], 3, "duplicate"),
            (&["0,T,teacher,0,Q,,,,", "2,S,student,0,A,,,,"], 3, "contiguous"),
            (&["0,S,student,0,A,,,,", "0,S,student,2,B,,,,"], 3, "contiguous"),
            (&["0,T,teacher,0,   ,,,,"], 2, "empty"),
            (&["0,T,teacher,0,Q,,,,", "1,S,student,0,A,1,claim,low,agree"], 3, "less than"),
            (&["0,T,teacher,0,Q,,,,", "1,S,student,0,A,,claim,low"], 3, "fields"),
            (&["0,T,principal,0,Q,,,,"], 2, "role"),
            (&["0,T,teacher,0,Q,,claim,,"], 2, "teacher"),
            (&["0,S,student,0,A,,,,", "0,S,student,1,B,,,,new"], 3, "adu_index 0"),
            (&["0,S,student,0,A,,,,", "1,S,student,0,B,,,,agree"], 3, "reference"),
        ];
        for (rows, line, needle) in cases {
            let err = parse(&file(rows)).unwrap_err();
            assert_eq!(err.line, *line, "{rows:?}: {err}");
            assert!(err.reason.contains(needle), "{rows:?}: {err}");
        }
    }

    #[test]
    fn header_must_match_exactly() {
        let err = parse("turn,speaker\n0,T\n").unwrap_err();
        assert_eq!(err.line, 1);
        assert!(parse("").is_err());
        assert_eq!(parse(&file(&[])).unwrap_err().reason, "no data rows");
    }

    #[test]
    fn malformed_quoting_is_an_error_not_a_panic() {
        let content = file(&["0,T,teacher,0,\"unterminated,,,,"]);
        assert!(parse(&content).is_err());
    }

    #[test]
    fn uncoded_serialization_has_empty_gold_columns() {
        let content = file(&["0,T,teacher,0,Q,,,,", "1,S,student,0,A,,,,"]);
        let d = parse(&content).unwrap();
        assert_eq!(d.provenance, Provenance::Uncoded);
        let out = serialize_transcript(&d, false);
        assert_eq!(
            out,
            format!("{HEADER}\r\n0,T,teacher,0,Q,,,,\r\n1,S,student,0,A,,,,\r\n")
        );
    }

    #[test]
    fn teacher_only_discussion_serializes_teacher_rows() {
        let d = parse(&file(&["0,T,teacher,0,Hello,,,,", "1,T,teacher,0,Anyone?,,,,"])).unwrap();
        let out = serialize_transcript(&d, true);
        let lines: Vec<_> = out.split("\r\n").filter(|l| !l.is_empty()).collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].ends_with("p_collaboration_challenge_probe"));
        assert!(lines[1].starts_with("0,T,teacher,0,Hello"));
    }

    #[test]
    fn predictions_round_trip_with_rounding() {
        let content = file(&["0,S,student,0,A,,claim,low,new"]);
        let mut d = parse(&content).unwrap();
        d.turns[0].adus[0].predicted_argument = Some(
            LabelDistribution::new(vec![1.0 / 3.0, 1.0 / 3.0 + 1e-9, 1.0 / 3.0 - 1e-9]).unwrap(),
        );
        d.turns[0].adus[0].predicted_specificity =
            Some(LabelDistribution::new(vec![0.1, 0.2, 0.7]).unwrap());
        d.turns[0].predicted_collaboration =
            Some(LabelDistribution::certain(CollaborationType::New));
        let out = serialize_transcript(&d, true);
        assert!(out.contains(",evidence,high,new,0.333333,0.333333,0.333333,0.100000,0.200000,0.700000,1.000000,0.000000,0.000000,0.000000"), "{out}");
        let back = parse_transcript(&out, &TranscriptMeta::of(&d)).unwrap();
        let p = back.turns[0].adus[0].predicted_argument.as_ref().unwrap();
        for (a, b) in p.probs().iter().zip(d.turns[0].adus[0].predicted_argument.as_ref().unwrap().probs()) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!(p.check().is_ok());
        assert_eq!(back.provenance, Provenance::Mixed);
    }

    #[test]
    fn prediction_label_must_match_probabilities() {
        let header = format!("{HEADER},{}", PREDICTION_COLUMNS.join(","));
        let content = format!(
            "{header}\n0,S,student,0,A,,,,,claim,low,new,0.1,0.8,0.1,1,0,0,1,0,0,0\n"
        );
        let err = parse(&content).unwrap_err();
        assert!(err.reason.contains("most probable"), "{err}");
    }
}
