//! Teacher-facing analytics derived from a coded discussion.

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use crate::corpus_model::{
    student_adu_sequence, ArgumentMove, CollaborationType, Dimension, Discussion, Label,
    LabelSource, SpecificityLevel,
};

pub const EXCERPT_CHARS: usize = 80;

#[derive(Debug, Clone, PartialEq, thiserror::Error, Serialize, Deserialize)]
pub enum AnalyticsError {
    #[error("{dimension} labels from {label_source:?} are missing on {missing} unit(s)")]
    MissingLabels {
        dimension: Dimension,
        label_source: LabelSource,
        missing: usize,
    },
    #[error("turn {target} references turn {reference}, which is not a student turn in the map")]
    DanglingReference { target: usize, reference: usize },
    #[error("no summary for dimension {0}")]
    UnknownDimension(Dimension),
    #[error("label {label:?} is not a {dimension} label")]
    UnknownLabel { dimension: Dimension, label: String },
    #[error("invalid assessment rule: {0}")]
    InvalidRule(String),
    #[error("target percentage {0} is outside [0, 100]")]
    InvalidTarget(f64),
    #[error("no discussions to compare")]
    EmptyHistory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelShare {
    pub label: String,
    pub count: u64,
    pub percentage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionSummary {
    pub dimension: Dimension,
    pub total: u64,
    pub shares: Vec<LabelShare>,
}

impl DistributionSummary {
    pub fn percentage(&self, label: &str) -> Option<f64> {
        self.shares
            .iter()
            .find(|s| s.label == label)
            .map(|s| s.percentage)
    }

    pub fn percentage_sum(&self) -> f64 {
        self.shares.iter().map(|s| s.percentage).sum()
    }
}

fn summarize<L: Label>(labels: &[L]) -> DistributionSummary {
    let total = labels.len() as u64;
    let shares = L::ALL
        .iter()
        .map(|l| {
            let count = labels.iter().filter(|x| *x == l).count() as u64;
            LabelShare {
                label: l.as_str().to_string(),
                count,
                percentage: if total == 0 {
                    0.0
                } else {
                    100.0 * count as f64 / total as f64
                },
            }
        })
        .collect();
    DistributionSummary {
        dimension: L::DIMENSION,
        total,
        shares,
    }
}

fn collect<L: Label>(
    labels: impl Iterator<Item = Option<L>>,
    source: LabelSource,
) -> Result<Vec<L>, AnalyticsError> {
    let mut out = Vec::new();
    let mut missing = 0;
    for l in labels {
        match l {
            Some(l) => out.push(l),
            None => missing += 1,
        }
    }
    if missing > 0 || out.is_empty() {
        return Err(AnalyticsError::MissingLabels {
            dimension: L::DIMENSION,
            label_source: source,
            missing,
        });
    }
    Ok(out)
}

fn argument_labels(d: &Discussion, source: LabelSource) -> Result<Vec<ArgumentMove>, AnalyticsError> {
    collect(
        student_adu_sequence(d).into_iter().map(|(_, a)| match source {
            LabelSource::Gold => a.gold_argument,
            LabelSource::Predicted => a.predicted_argument.as_ref().map(|p| p.argmax()),
        }),
        source,
    )
}

fn specificity_labels(
    d: &Discussion,
    source: LabelSource,
) -> Result<Vec<SpecificityLevel>, AnalyticsError> {
    collect(
        student_adu_sequence(d).into_iter().map(|(_, a)| match source {
            LabelSource::Gold => a.gold_specificity,
            LabelSource::Predicted => a.predicted_specificity.as_ref().map(|p| p.argmax()),
        }),
        source,
    )
}

fn collaboration_label(turn: &crate::corpus_model::Turn, source: LabelSource) -> Option<CollaborationType> {
    match source {
        LabelSource::Gold => turn.gold_collaboration,
        LabelSource::Predicted => turn.predicted_collaboration.as_ref().map(|p| p.argmax()),
    }
}

/// Label counts over student ADUs (argument, specificity) or student turns
/// (collaboration). Every label of the dimension appears, zero counts too.
pub fn compute_distribution(
    d: &Discussion,
    dimension: Dimension,
    source: LabelSource,
) -> Result<DistributionSummary, AnalyticsError> {
    Ok(match dimension {
        Dimension::Argument => summarize(&argument_labels(d, source)?),
        Dimension::Specificity => summarize(&specificity_labels(d, source)?),
        Dimension::Collaboration => summarize(&collect(
            d.student_turns().map(|t| collaboration_label(t, source)),
            source,
        )?),
    })
}

/// Distributions for every dimension.
pub fn compute_distributions(
    d: &Discussion,
    source: LabelSource,
) -> Result<Vec<DistributionSummary>, AnalyticsError> {
    Dimension::ALL
        .iter()
        .map(|dim| compute_distribution(d, *dim, source))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapNode {
    pub turn_index: usize,
    pub speaker_id: String,
    pub excerpt: String,
}

/// Directed from the target turn back to its reference turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapEdge {
    pub from: usize,
    pub to: usize,
    pub kind: CollaborationType,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollaborationMap {
    pub nodes: Vec<MapNode>,
    pub edges: Vec<MapEdge>,
}

fn excerpt(text: &str) -> String {
    text.chars().take(EXCERPT_CHARS).collect()
}

/// One node per student turn and one edge per non-`new` student turn that
/// has a reference.
pub fn build_collaboration_map(
    d: &Discussion,
    source: LabelSource,
) -> Result<CollaborationMap, AnalyticsError> {
    let labels = collect(
        d.student_turns().map(|t| collaboration_label(t, source)),
        source,
    )?;
    let nodes: Vec<MapNode> = d
        .student_turns()
        .map(|t| MapNode {
            turn_index: t.turn_index,
            speaker_id: t.speaker_id.clone(),
            excerpt: excerpt(&t.text()),
        })
        .collect();
    let mut edges = Vec::new();
    for (turn, kind) in d.student_turns().zip(labels) {
        let Some(reference) = turn.reference_turn_index else {
            continue;
        };
        if kind == CollaborationType::New {
            continue;
        }
        if reference >= turn.turn_index || !nodes.iter().any(|n| n.turn_index == reference) {
            return Err(AnalyticsError::DanglingReference {
                target: turn.turn_index,
                reference,
            });
        }
        edges.push(MapEdge {
            from: turn.turn_index,
            to: reference,
            kind,
        });
    }
    Ok(CollaborationMap { nodes, edges })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssessmentRule {
    pub dimension: Dimension,
    pub label: String,
    /// Weakness when the observed share is strictly below this percentage.
    pub weakness_below: f64,
    /// Strength when the observed share is at or above this percentage.
    pub strength_at_or_above: f64,
}

impl AssessmentRule {
    pub fn new(dimension: Dimension, label: &str, weakness_below: f64, strength_at_or_above: f64) -> Self {
        Self {
            dimension,
            label: label.to_string(),
            weakness_below,
            strength_at_or_above,
        }
    }

    pub fn check(&self) -> Result<(), AnalyticsError> {
        if !self.dimension.vocabulary().contains(&self.label.as_str()) {
            return Err(AnalyticsError::UnknownLabel {
                dimension: self.dimension,
                label: self.label.clone(),
            });
        }
        let in_range = |v: f64| v.is_finite() && (0.0..=100.0).contains(&v);
        if !in_range(self.weakness_below) || !in_range(self.strength_at_or_above) {
            return Err(AnalyticsError::InvalidRule(format!(
                "{}/{} thresholds must lie in [0, 100]",
                self.dimension, self.label
            )));
        }
        if self.weakness_below > self.strength_at_or_above {
            return Err(AnalyticsError::InvalidRule(format!(
                "{}/{}: weakness_below {} exceeds strength_at_or_above {}",
                self.dimension, self.label, self.weakness_below, self.strength_at_or_above
            )));
        }
        Ok(())
    }

    pub fn verdict(&self, observed: f64) -> Verdict {
        if observed >= self.strength_at_or_above {
            Verdict::Strength
        } else if observed < self.weakness_below {
            Verdict::Weakness
        } else {
            Verdict::Neutral
        }
    }
}

/// Shipped defaults; deployments override them through the rules file.
pub fn default_rules() -> Vec<AssessmentRule> {
    vec![
        AssessmentRule::new(Dimension::Collaboration, "challenge_probe", 10.0, 25.0),
        AssessmentRule::new(Dimension::Argument, "evidence", 15.0, 30.0),
        AssessmentRule::new(Dimension::Argument, "explanation", 10.0, 25.0),
        AssessmentRule::new(Dimension::Specificity, "high", 20.0, 40.0),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Weakness,
    Neutral,
    Strength,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assessment {
    pub rule: AssessmentRule,
    pub observed_percentage: f64,
    pub verdict: Verdict,
}

pub fn assess_strengths_weaknesses(
    summaries: &[DistributionSummary],
    rules: &[AssessmentRule],
) -> Result<Vec<Assessment>, AnalyticsError> {
    rules
        .iter()
        .map(|rule| {
            rule.check()?;
            let summary = summaries
                .iter()
                .find(|s| s.dimension == rule.dimension)
                .ok_or(AnalyticsError::UnknownDimension(rule.dimension))?;
            let observed = summary.percentage(&rule.label).ok_or_else(|| {
                AnalyticsError::UnknownLabel {
                    dimension: rule.dimension,
                    label: rule.label.clone(),
                }
            })?;
            Ok(Assessment {
                rule: rule.clone(),
                observed_percentage: observed,
                verdict: rule.verdict(observed),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalRecord {
    pub goal_id: String,
    pub discussion_id: String,
    pub dimension: Dimension,
    pub label: String,
    pub target_percentage: f64,
    pub created_at: DateTime<Utc>,
    #[serde(default)]
    pub note: String,
}

impl GoalRecord {
    pub fn check(&self) -> Result<(), AnalyticsError> {
        if !self.dimension.vocabulary().contains(&self.label.as_str()) {
            return Err(AnalyticsError::UnknownLabel {
                dimension: self.dimension,
                label: self.label.clone(),
            });
        }
        if !self.target_percentage.is_finite() || !(0.0..=100.0).contains(&self.target_percentage) {
            return Err(AnalyticsError::InvalidTarget(self.target_percentage));
        }
        Ok(())
    }
}

/// Static link to instructional material shown next to a weakness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceLink {
    pub dimension: Dimension,
    pub label: String,
    pub title: String,
    pub url: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub discussion_id: String,
    pub title: String,
    pub recorded_at: Option<NaiveDate>,
    pub distributions: Vec<DistributionSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistorySkip {
    pub discussion_id: String,
    pub error: AnalyticsError,
}

/// Date-ordered per-discussion distributions. Undated discussions sort after
/// dated ones; ties break by discussion id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistorySeries {
    pub entries: Vec<HistoryEntry>,
    pub skipped: Vec<HistorySkip>,
}

pub fn compare_history(
    discussions: &[&Discussion],
    source: LabelSource,
) -> Result<HistorySeries, AnalyticsError> {
    if discussions.is_empty() {
        return Err(AnalyticsError::EmptyHistory);
    }
    let mut entries = Vec::new();
    let mut skipped = Vec::new();
    for d in discussions {
        match compute_distributions(d, source) {
            Ok(distributions) => entries.push(HistoryEntry {
                discussion_id: d.discussion_id.clone(),
                title: d.title.clone(),
                recorded_at: d.recorded_at,
                distributions,
            }),
            Err(error) => skipped.push(HistorySkip {
                discussion_id: d.discussion_id.clone(),
                error,
            }),
        }
    }
    entries.sort_by(|a, b| {
        let date = match (a.recorded_at, b.recorded_at) {
            (Some(x), Some(y)) => x.cmp(&y),
            (Some(_), None) => std::cmp::Ordering::Less,
            (None, Some(_)) => std::cmp::Ordering::Greater,
            (None, None) => std::cmp::Ordering::Equal,
        };
        date.then_with(|| a.discussion_id.cmp(&b.discussion_id))
    });
    Ok(HistorySeries { entries, skipped })
}

/// Everything the overview, map and planning screens show for one discussion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticsBundle {
    pub discussion_id: String,
    pub source: LabelSource,
    pub distributions: Vec<DistributionSummary>,
    pub collaboration_map: CollaborationMap,
    pub assessment: Vec<Assessment>,
    #[serde(default)]
    pub resources: Vec<ResourceLink>,
}

/// Builds the bundle; `resources` are filtered to labels assessed as weaknesses.
pub fn build_bundle(
    d: &Discussion,
    source: LabelSource,
    rules: &[AssessmentRule],
    resources: &[ResourceLink],
) -> Result<AnalyticsBundle, AnalyticsError> {
    let distributions = compute_distributions(d, source)?;
    let collaboration_map = build_collaboration_map(d, source)?;
    let assessment = assess_strengths_weaknesses(&distributions, rules)?;
    let resources = resources
        .iter()
        .filter(|r| {
            assessment.iter().any(|a| {
                a.verdict == Verdict::Weakness
                    && a.rule.dimension == r.dimension
                    && a.rule.label == r.label
            })
        })
        .cloned()
        .collect();
    Ok(AnalyticsBundle {
        discussion_id: d.discussion_id.clone(),
        source,
        distributions,
        collaboration_map,
        assessment,
        resources,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus_model::{Adu, Provenance, Turn};

    fn discussion(args: &[ArgumentMove], collab: &[(CollaborationType, Option<usize>)]) -> Discussion {
        let mut turns = vec![Turn::teacher(0, "T", "Opening question")];
        for (i, (kind, reference)) in collab.iter().enumerate() {
            let idx = i + 1;
            let mut t = Turn::student(idx, format!("S{idx}"), vec![]);
            t.gold_collaboration = Some(*kind);
            t.reference_turn_index = *reference;
            turns.push(t);
        }
        for (i, a) in args.iter().enumerate() {
            let turn = 1 + i % collab.len();
            let n = turns[turn].adus.len();
            turns[turn].adus.push(
                Adu::new(format!("t{turn}.a{n}"), format!("text {i}"))
                    .with_gold(*a, SpecificityLevel::Medium),
            );
        }
        Discussion {
            discussion_id: "d".into(),
            title: "d".into(),
            recorded_at: None,
            turns,
            provenance: Provenance::GoldCoded,
        }
    }

    #[test]
    fn distribution_percentages() {
        use ArgumentMove::*;
        let d = discussion(&[Claim, Claim, Evidence], &[(CollaborationType::New, None)]);
        let s = compute_distribution(&d, Dimension::Argument, LabelSource::Gold).unwrap();
        assert_eq!(s.total, 3);
        assert!((s.percentage("claim").unwrap() - 66.6667).abs() < 1e-3);
        assert!((s.percentage("evidence").unwrap() - 33.3333).abs() < 1e-3);
        assert_eq!(s.percentage("explanation"), Some(0.0));
        assert!((s.percentage_sum() - 100.0).abs() < 0.01);
    }

    #[test]
    fn missing_labels() {
        let d = Discussion {
            turns: vec![Turn::teacher(0, "T", "hi")],
            ..discussion(&[ArgumentMove::Claim], &[(CollaborationType::New, None)])
        };
        assert!(matches!(
            compute_distribution(&d, Dimension::Argument, LabelSource::Gold),
            Err(AnalyticsError::MissingLabels { .. })
        ));
        let coded = discussion(&[ArgumentMove::Claim], &[(CollaborationType::New, None)]);
        assert!(matches!(
            compute_distribution(&coded, Dimension::Specificity, LabelSource::Predicted),
            Err(AnalyticsError::MissingLabels { missing: 1, .. })
        ));
    }

    #[test]
    fn map_examples() {
        use CollaborationType::*;
        let d = discussion(
            &[ArgumentMove::Claim; 3],
            &[(New, None), (Extension, Some(1)), (ChallengeProbe, Some(2))],
        );
        let map = build_collaboration_map(&d, LabelSource::Gold).unwrap();
        assert_eq!(map.nodes.len(), 3);
        assert_eq!(
            map.edges,
            vec![
                MapEdge { from: 2, to: 1, kind: Extension },
                MapEdge { from: 3, to: 2, kind: ChallengeProbe }
            ]
        );

        let all_new = discussion(&[ArgumentMove::Claim; 3], &[(New, None), (New, Some(1)), (New, None)]);
        let map = build_collaboration_map(&all_new, LabelSource::Gold).unwrap();
        assert_eq!((map.nodes.len(), map.edges.len()), (3, 0));
    }

    #[test]
    fn excerpt_is_eighty_chars() {
        let mut d = discussion(&[ArgumentMove::Claim], &[(CollaborationType::New, None)]);
        d.turns[1].adus[0].text = "é".repeat(100);
        let map = build_collaboration_map(&d, LabelSource::Gold).unwrap();
        assert_eq!(map.nodes[0].excerpt.chars().count(), 80);
    }

    #[test]
    fn dangling_reference_is_still_checked() {
        use CollaborationType::*;
        let mut d = discussion(&[ArgumentMove::Claim; 2], &[(New, None), (Agree, Some(1))]);
        d.turns[2].reference_turn_index = Some(0);
        assert_eq!(
            build_collaboration_map(&d, LabelSource::Gold),
            Err(AnalyticsError::DanglingReference { target: 2, reference: 0 })
        );
    }

    fn summary(dimension: Dimension, label: &str, pct: f64) -> DistributionSummary {
        DistributionSummary {
            dimension,
            total: 100,
            shares: vec![LabelShare {
                label: label.into(),
                count: pct as u64,
                percentage: pct,
            }],
        }
    }

    #[test]
    fn assessment_examples() {
        let rule = AssessmentRule::new(Dimension::Collaboration, "challenge_probe", 10.0, 25.0);
        let report = assess_strengths_weaknesses(
            &[summary(Dimension::Collaboration, "challenge_probe", 21.0)],
            std::slice::from_ref(&rule),
        )
        .unwrap();
        assert_eq!(report[0].verdict, Verdict::Neutral);
        assert_eq!(report[0].observed_percentage, 21.0);

        let report = assess_strengths_weaknesses(
            &[summary(Dimension::Collaboration, "challenge_probe", 0.0)],
            std::slice::from_ref(&rule),
        )
        .unwrap();
        assert_eq!(report[0].verdict, Verdict::Weakness);
        assert_eq!(rule.verdict(25.0), Verdict::Strength);
        assert_eq!(rule.verdict(10.0), Verdict::Neutral);

        assert!(assess_strengths_weaknesses(&[], &[]).unwrap().is_empty());
        assert_eq!(
            assess_strengths_weaknesses(&[], &[rule]),
            Err(AnalyticsError::UnknownDimension(Dimension::Collaboration))
        );
    }

    #[test]
    fn rule_and_goal_validation() {
        assert!(default_rules().iter().all(|r| r.check().is_ok()));
        assert!(AssessmentRule::new(Dimension::Argument, "evidence", 40.0, 30.0).check().is_err());
        assert!(AssessmentRule::new(Dimension::Argument, "high", 10.0, 30.0).check().is_err());
        let goal = GoalRecord {
            goal_id: "g".into(),
            discussion_id: "d".into(),
            dimension: Dimension::Argument,
            label: "evidence".into(),
            target_percentage: 120.0,
            created_at: Utc::now(),
            note: String::new(),
        };
        assert_eq!(goal.check(), Err(AnalyticsError::InvalidTarget(120.0)));
        assert!(GoalRecord { target_percentage: 35.0, ..goal }.check().is_ok());
    }

    #[test]
    fn history_orders_by_date_then_id() {
        let base = discussion(&[ArgumentMove::Claim], &[(CollaborationType::New, None)]);
        let mk = |id: &str, date: Option<(i32, u32, u32)>| Discussion {
            discussion_id: id.into(),
            recorded_at: date.map(|(y, m, d)| NaiveDate::from_ymd_opt(y, m, d).unwrap()),
            ..base.clone()
        };
        let a = mk("b", Some((2020, 3, 1)));
        let b = mk("a", Some((2020, 3, 1)));
        let c = mk("c", Some((2020, 1, 15)));
        let undated = mk("0", None);
        let mut uncoded = mk("x", None);
        uncoded.turns[1].gold_collaboration = None;
        let series = compare_history(&[&a, &undated, &b, &uncoded, &c], LabelSource::Gold).unwrap();
        let ids: Vec<_> = series.entries.iter().map(|e| e.discussion_id.as_str()).collect();
        assert_eq!(ids, vec!["c", "a", "b", "0"]);
        assert_eq!(series.skipped.len(), 1);
        assert_eq!(series.skipped[0].discussion_id, "x");
        assert_eq!(
            series.entries[0].distributions,
            compute_distributions(&c, LabelSource::Gold).unwrap()
        );
        assert_eq!(compare_history(&[], LabelSource::Gold), Err(AnalyticsError::EmptyHistory));
    }

    #[test]
    fn bundle_attaches_resources_for_weaknesses() {
        let d = discussion(&[ArgumentMove::Claim; 4], &[(CollaborationType::New, None)]);
        let links = vec![
            ResourceLink {
                dimension: Dimension::Argument,
                label: "evidence".into(),
                title: "Citing the text".into(),
                url: "https://example.org/evidence".into(),
            },
            ResourceLink {
                dimension: Dimension::Argument,
                label: "claim".into(),
                title: "Making claims".into(),
                url: "https://example.org/claims".into(),
            },
        ];
        let bundle = build_bundle(&d, LabelSource::Gold, &default_rules(), &links).unwrap();
        assert_eq!(bundle.resources.len(), 1);
        assert_eq!(bundle.resources[0].label, "evidence");
        assert_eq!(bundle.distributions.len(), 3);
    }
}
