//! Discussions, turns, ADUs and the three-dimensional coding scheme.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::hash::Hash;
use std::marker::PhantomData;

use chrono::NaiveDate;
use serde::de::Error as _;
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Tolerance on the sum of a label distribution.
pub const DISTRIBUTION_SUM_TOLERANCE: f64 = 1e-6;

/// The three coded dimensions of collaborative argumentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    Argument,
    Specificity,
    Collaboration,
}

impl Dimension {
    pub const ALL: [Dimension; 3] = [
        Dimension::Argument,
        Dimension::Specificity,
        Dimension::Collaboration,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Dimension::Argument => "argument",
            Dimension::Specificity => "specificity",
            Dimension::Collaboration => "collaboration",
        }
    }

    /// Canonical label vocabulary for this dimension, in class order.
    pub fn vocabulary(self) -> Vec<&'static str> {
        match self {
            Dimension::Argument => ArgumentMove::ALL.iter().map(|l| l.as_str()).collect(),
            Dimension::Specificity => SpecificityLevel::ALL.iter().map(|l| l.as_str()).collect(),
            Dimension::Collaboration => {
                CollaborationType::ALL.iter().map(|l| l.as_str()).collect()
            }
        }
    }

    /// Whether the labels carry an ordinal rank.
    pub fn is_ordinal(self) -> bool {
        matches!(self, Dimension::Specificity)
    }

    /// Human-facing name used in report tables.
    pub fn display_name(self) -> &'static str {
        match self {
            Dimension::Argument => "Argument Move",
            Dimension::Specificity => "Specificity",
            Dimension::Collaboration => "Collaboration",
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Dimension {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "argument" => Ok(Dimension::Argument),
            "specificity" => Ok(Dimension::Specificity),
            "collaboration" => Ok(Dimension::Collaboration),
            other => Err(format!(
                "unknown dimension {other:?}; expected argument|specificity|collaboration"
            )),
        }
    }
}

/// A closed categorical label set with a fixed class order.
pub trait Label: Copy + Eq + Ord + Hash + fmt::Debug + Send + Sync + 'static {
    const ALL: &'static [Self];
    const DIMENSION: Dimension;

    /// File-safe lowercase spelling.
    fn as_str(self) -> &'static str;

    fn index(self) -> usize {
        Self::ALL
            .iter()
            .position(|l| *l == self)
            .expect("label is a member of its own set")
    }

    fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    fn parse(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|l| l.as_str() == s)
    }

    /// `a|b|c`, for error messages.
    fn vocabulary() -> String {
        Self::ALL
            .iter()
            .map(|l| l.as_str())
            .collect::<Vec<_>>()
            .join("|")
    }
}

macro_rules! label_enum {
    ($(#[$meta:meta])* $name:ident, $dim:expr, { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $text)] $variant),+
        }

        impl Label for $name {
            const ALL: &'static [Self] = &[$($name::$variant),+];
            const DIMENSION: Dimension = $dim;

            fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

label_enum!(
    /// Argumentative function of an ADU.
    ArgumentMove, Dimension::Argument, {
        Claim => "claim",
        Evidence => "evidence",
        Explanation => "explanation",
    }
);

label_enum!(
    /// Ordinal specificity rating; `Low < Medium < High`.
    SpecificityLevel, Dimension::Specificity, {
        Low => "low",
        Medium => "medium",
        High => "high",
    }
);

label_enum!(
    /// How a student turn relates to its reference turn.
    CollaborationType, Dimension::Collaboration, {
        New => "new",
        Agree => "agree",
        Extension => "extension",
        ChallengeProbe => "challenge_probe",
    }
);

impl SpecificityLevel {
    pub fn rank(self) -> usize {
        self.index()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeakerRole {
    Teacher,
    Student,
}

impl SpeakerRole {
    pub fn as_str(self) -> &'static str {
        match self {
            SpeakerRole::Teacher => "teacher",
            SpeakerRole::Student => "student",
        }
    }
}

/// Where the labels on a discussion came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    GoldCoded,
    AutoCoded,
    Uncoded,
    Mixed,
}

/// Which label set an analytics or evaluation call reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    Gold,
    Predicted,
}

impl std::str::FromStr for LabelSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gold" => Ok(LabelSource::Gold),
            "predicted" => Ok(LabelSource::Predicted),
            other => Err(format!("unknown label source {other:?}; expected gold|predicted")),
        }
    }
}

/// Class probabilities over a label set, stored in class order.
///
/// Construction through [`LabelDistribution::new`] enforces the sum and
/// length invariants. Deserialized values are not checked here; run
/// [`validate_discussion`] to surface problems as issues.
#[derive(Clone, PartialEq)]
pub struct LabelDistribution<L: Label> {
    probs: Vec<f64>,
    _label: PhantomData<L>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DistributionError {
    #[error("expected {expected} probabilities, got {found}")]
    WrongLength { expected: usize, found: usize },
    #[error("probabilities must be finite and non-negative")]
    InvalidProbability,
    #[error("probabilities sum to {0}, not 1")]
    BadSum(f64),
}

impl<L: Label> LabelDistribution<L> {
    pub fn new(probs: Vec<f64>) -> Result<Self, DistributionError> {
        let dist = Self::from_probs_unchecked(probs);
        dist.check()?;
        Ok(dist)
    }

    pub fn from_probs_unchecked(probs: Vec<f64>) -> Self {
        Self {
            probs,
            _label: PhantomData,
        }
    }

    /// All mass on one label.
    pub fn certain(label: L) -> Self {
        let mut probs = vec![0.0; L::ALL.len()];
        probs[label.index()] = 1.0;
        Self::from_probs_unchecked(probs)
    }

    pub fn check(&self) -> Result<(), DistributionError> {
        if self.probs.len() != L::ALL.len() {
            return Err(DistributionError::WrongLength {
                expected: L::ALL.len(),
                found: self.probs.len(),
            });
        }
        if self.probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(DistributionError::InvalidProbability);
        }
        let sum: f64 = self.probs.iter().sum();
        if (sum - 1.0).abs() > DISTRIBUTION_SUM_TOLERANCE {
            return Err(DistributionError::BadSum(sum));
        }
        Ok(())
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn probability(&self, label: L) -> f64 {
        self.probs.get(label.index()).copied().unwrap_or(0.0)
    }

    /// Most probable label; ties go to the earlier class.
    pub fn argmax(&self) -> L {
        let mut best = 0;
        for (i, p) in self.probs.iter().enumerate() {
            if *p > self.probs[best] {
                best = i;
            }
        }
        L::from_index(best).unwrap_or(L::ALL[0])
    }
}

impl<L: Label> fmt::Debug for LabelDistribution<L> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut map = f.debug_map();
        for (i, p) in self.probs.iter().enumerate() {
            match L::from_index(i) {
                Some(l) => map.entry(&l.as_str(), p),
                None => map.entry(&i, p),
            };
        }
        map.finish()
    }
}

impl<L: Label> Serialize for LabelDistribution<L> {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.probs.len()))?;
        for (label, p) in L::ALL.iter().zip(&self.probs) {
            map.serialize_entry(label.as_str(), p)?;
        }
        map.end()
    }
}

impl<'de, L: Label> Deserialize<'de> for LabelDistribution<L> {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = BTreeMap::<String, f64>::deserialize(deserializer)?;
        let mut probs = vec![0.0; L::ALL.len()];
        for (key, p) in &raw {
            let label = L::parse(key).ok_or_else(|| {
                D::Error::custom(format!("unknown label {key:?}; expected {}", L::vocabulary()))
            })?;
            probs[label.index()] = *p;
        }
        if raw.len() != L::ALL.len() {
            return Err(D::Error::custom(format!(
                "distribution needs one probability per class ({})",
                L::vocabulary()
            )));
        }
        Ok(Self::from_probs_unchecked(probs))
    }
}

/// Argumentative discourse unit: a whole student turn or a segment of one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adu {
    pub adu_id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_argument: Option<ArgumentMove>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_specificity: Option<SpecificityLevel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted_argument: Option<LabelDistribution<ArgumentMove>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted_specificity: Option<LabelDistribution<SpecificityLevel>>,
}

impl Adu {
    pub fn new(adu_id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            adu_id: adu_id.into(),
            text: text.into(),
            gold_argument: None,
            gold_specificity: None,
            predicted_argument: None,
            predicted_specificity: None,
        }
    }

    pub fn with_gold(mut self, argument: ArgumentMove, specificity: SpecificityLevel) -> Self {
        self.gold_argument = Some(argument);
        self.gold_specificity = Some(specificity);
        self
    }

    fn carries_labels(&self) -> bool {
        self.gold_argument.is_some()
            || self.gold_specificity.is_some()
            || self.predicted_argument.is_some()
            || self.predicted_specificity.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub turn_index: usize,
    pub speaker_id: String,
    pub role: SpeakerRole,
    pub adus: Vec<Adu>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_turn_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_collaboration: Option<CollaborationType>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted_collaboration: Option<LabelDistribution<CollaborationType>>,
}

impl Turn {
    pub fn teacher(turn_index: usize, speaker_id: impl Into<String>, text: &str) -> Self {
        Self {
            turn_index,
            speaker_id: speaker_id.into(),
            role: SpeakerRole::Teacher,
            adus: vec![Adu::new(format!("t{turn_index}.a0"), text)],
            reference_turn_index: None,
            gold_collaboration: None,
            predicted_collaboration: None,
        }
    }

    pub fn student(turn_index: usize, speaker_id: impl Into<String>, adus: Vec<Adu>) -> Self {
        Self {
            turn_index,
            speaker_id: speaker_id.into(),
            role: SpeakerRole::Student,
            adus,
            reference_turn_index: None,
            gold_collaboration: None,
            predicted_collaboration: None,
        }
    }

    pub fn is_student(&self) -> bool {
        self.role == SpeakerRole::Student
    }

    /// ADU texts joined with one space, in order.
    pub fn text(&self) -> String {
        self.adus
            .iter()
            .map(|a| a.text.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discussion {
    pub discussion_id: String,
    pub title: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recorded_at: Option<NaiveDate>,
    pub turns: Vec<Turn>,
    pub provenance: Provenance,
}

impl Discussion {
    pub fn student_turns(&self) -> impl Iterator<Item = &Turn> {
        self.turns.iter().filter(|t| t.is_student())
    }

    pub fn student_adu_sequence(&self) -> Vec<(usize, &Adu)> {
        student_adu_sequence(self)
    }

    pub fn validate(&self) -> Vec<ValidationIssue> {
        validate_discussion(self)
    }

    /// Provenance implied by the labels currently present.
    ///
    /// Gold-only and complete is `GoldCoded`; predictions-only and complete
    /// is `AutoCoded`; nothing at all (or no student units) is `Uncoded`.
    /// Anything else is `Mixed`.
    pub fn infer_provenance(&self) -> Provenance {
        let mut units = 0usize;
        let mut gold = 0usize;
        let mut pred = 0usize;
        for turn in self.student_turns() {
            for adu in &turn.adus {
                units += 2;
                gold += adu.gold_argument.is_some() as usize
                    + adu.gold_specificity.is_some() as usize;
                pred += adu.predicted_argument.is_some() as usize
                    + adu.predicted_specificity.is_some() as usize;
            }
            units += 1;
            gold += turn.gold_collaboration.is_some() as usize;
            pred += turn.predicted_collaboration.is_some() as usize;
        }
        match (gold, pred) {
            (0, 0) => Provenance::Uncoded,
            (g, 0) if g == units => Provenance::GoldCoded,
            (0, p) if p == units => Provenance::AutoCoded,
            _ => Provenance::Mixed,
        }
    }
}

/// What an issue points at.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IssueLocation {
    Discussion,
    Turn { turn_index: usize },
    Adu { turn_index: usize, adu_id: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationRule {
    TurnIndexSequence,
    DuplicateAduId,
    EmptyText,
    InvalidDistribution,
    StudentTurnWithoutAdus,
    TeacherTurnAduCount,
    TeacherTurnLabeled,
    CollaborationOnNonStudent,
    ReferenceMustPrecede,
    ReferenceToNonStudent,
    MissingReference,
}

impl ValidationRule {
    pub fn describe(self) -> &'static str {
        match self {
            ValidationRule::TurnIndexSequence => "turn indices must run 0..n-1 without gaps",
            ValidationRule::DuplicateAduId => "adu ids must be unique within the discussion",
            ValidationRule::EmptyText => "ADU text must not be empty",
            ValidationRule::InvalidDistribution => {
                "label distribution must have one probability per class summing to 1"
            }
            ValidationRule::StudentTurnWithoutAdus => "student turns need at least one ADU",
            ValidationRule::TeacherTurnAduCount => "teacher turns carry exactly one ADU",
            ValidationRule::TeacherTurnLabeled => "teacher ADUs are never coded",
            ValidationRule::CollaborationOnNonStudent => "collaboration on non-student turn",
            ValidationRule::ReferenceMustPrecede => "reference must precede target",
            ValidationRule::ReferenceToNonStudent => "reference must be a student turn",
            ValidationRule::MissingReference => {
                "collaboration labels other than new need a reference turn"
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationIssue {
    pub location: IssueLocation,
    pub rule: ValidationRule,
    pub message: String,
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.location {
            IssueLocation::Discussion => write!(f, "discussion: {}", self.message),
            IssueLocation::Turn { turn_index } => write!(f, "turn {turn_index}: {}", self.message),
            IssueLocation::Adu { turn_index, adu_id } => {
                write!(f, "turn {turn_index}, adu {adu_id}: {}", self.message)
            }
        }
    }
}

fn issue(location: IssueLocation, rule: ValidationRule) -> ValidationIssue {
    ValidationIssue {
        location,
        rule,
        message: rule.describe().to_string(),
    }
}

fn issue_with(location: IssueLocation, rule: ValidationRule, detail: String) -> ValidationIssue {
    ValidationIssue {
        location,
        rule,
        message: format!("{}: {detail}", rule.describe()),
    }
}

/// Checks every structural and labeling invariant; an empty result means valid.
pub fn validate_discussion(d: &Discussion) -> Vec<ValidationIssue> {
    let mut issues = Vec::new();
    let mut seen_ids = HashSet::new();

    for (position, turn) in d.turns.iter().enumerate() {
        let at_turn = IssueLocation::Turn {
            turn_index: turn.turn_index,
        };
        if turn.turn_index != position {
            issues.push(issue_with(
                at_turn.clone(),
                ValidationRule::TurnIndexSequence,
                format!("found index {} at position {position}", turn.turn_index),
            ));
        }

        for adu in &turn.adus {
            let at_adu = IssueLocation::Adu {
                turn_index: turn.turn_index,
                adu_id: adu.adu_id.clone(),
            };
            if !seen_ids.insert(adu.adu_id.as_str()) {
                issues.push(issue(at_adu.clone(), ValidationRule::DuplicateAduId));
            }
            if adu.text.trim().is_empty() {
                issues.push(issue(at_adu.clone(), ValidationRule::EmptyText));
            }
            if let Some(Err(e)) = adu.predicted_argument.as_ref().map(|p| p.check()) {
                issues.push(issue_with(
                    at_adu.clone(),
                    ValidationRule::InvalidDistribution,
                    e.to_string(),
                ));
            }
            if let Some(Err(e)) = adu.predicted_specificity.as_ref().map(|p| p.check()) {
                issues.push(issue_with(
                    at_adu.clone(),
                    ValidationRule::InvalidDistribution,
                    e.to_string(),
                ));
            }
            if !turn.is_student() && adu.carries_labels() {
                issues.push(issue(at_adu, ValidationRule::TeacherTurnLabeled));
            }
        }

        let has_collaboration = turn.reference_turn_index.is_some()
            || turn.gold_collaboration.is_some()
            || turn.predicted_collaboration.is_some();

        match turn.role {
            SpeakerRole::Teacher => {
                if turn.adus.len() != 1 {
                    issues.push(issue_with(
                        at_turn.clone(),
                        ValidationRule::TeacherTurnAduCount,
                        format!("found {}", turn.adus.len()),
                    ));
                }
                if has_collaboration {
                    issues.push(issue(at_turn, ValidationRule::CollaborationOnNonStudent));
                }
                continue;
            }
            SpeakerRole::Student => {
                if turn.adus.is_empty() {
                    issues.push(issue(at_turn.clone(), ValidationRule::StudentTurnWithoutAdus));
                }
            }
        }

        if let Some(Err(e)) = turn.predicted_collaboration.as_ref().map(|p| p.check()) {
            issues.push(issue_with(
                at_turn.clone(),
                ValidationRule::InvalidDistribution,
                e.to_string(),
            ));
        }

        match turn.reference_turn_index {
            Some(reference) if reference >= turn.turn_index => {
                issues.push(issue_with(
                    at_turn,
                    ValidationRule::ReferenceMustPrecede,
                    format!("turn {} references turn {reference}", turn.turn_index),
                ));
            }
            Some(reference) => {
                if d.turns.get(reference).is_some_and(|r| !r.is_student()) {
                    issues.push(issue_with(
                        at_turn,
                        ValidationRule::ReferenceToNonStudent,
                        format!("turn {reference} is a teacher turn"),
                    ));
                }
            }
            None => {
                if turn
                    .gold_collaboration
                    .is_some_and(|c| c != CollaborationType::New)
                {
                    issues.push(issue(at_turn, ValidationRule::MissingReference));
                }
            }
        }
    }
    issues
}

/// Every ADU of every student turn, flattened in transcript order.
pub fn student_adu_sequence(d: &Discussion) -> Vec<(usize, &Adu)> {
    d.student_turns()
        .flat_map(|t| t.adus.iter().map(move |a| (t.turn_index, a)))
        .collect()
}
