//! Agreement and classification metrics over confusion matrices.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus_model::{
    student_adu_sequence, ArgumentMove, CollaborationType, Dimension, Discussion, Label,
    SpecificityLevel,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error, Serialize, Deserialize)]
pub enum MetricError {
    #[error("gold has {gold} labels but predictions have {pred}")]
    LengthMismatch { gold: usize, pred: usize },
    #[error("label {0:?} is not in the class list")]
    UnknownLabel(String),
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("classes are not ordinal")]
    NonOrdinalClasses,
}

/// Rows are gold classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    pub cells: Vec<Vec<u64>>,
    pub n: u64,
    /// Class order is a rank order `0..K-1`.
    #[serde(default)]
    pub ordinal: bool,
}

impl ConfusionMatrix {
    pub fn from_indices(gold: &[usize], pred: &[usize], classes: Vec<String>) -> Result<Self, MetricError> {
        if gold.len() != pred.len() {
            return Err(MetricError::LengthMismatch {
                gold: gold.len(),
                pred: pred.len(),
            });
        }
        if gold.is_empty() {
            return Err(MetricError::EmptyMatrix);
        }
        let k = classes.len();
        let mut cells = vec![vec![0u64; k]; k];
        for (&g, &p) in gold.iter().zip(pred) {
            if g >= k || p >= k {
                return Err(MetricError::UnknownLabel(g.max(p).to_string()));
            }
            cells[g][p] += 1;
        }
        Ok(Self {
            classes,
            cells,
            n: gold.len() as u64,
            ordinal: false,
        })
    }

    pub fn from_labels<L: Label>(gold: &[L], pred: &[L]) -> Result<Self, MetricError> {
        let g: Vec<usize> = gold.iter().map(|l| l.index()).collect();
        let p: Vec<usize> = pred.iter().map(|l| l.index()).collect();
        let mut m = Self::from_indices(&g, &p, L::ALL.iter().map(|l| l.as_str().to_string()).collect())?;
        m.ordinal = L::DIMENSION.is_ordinal();
        Ok(m)
    }

    pub fn with_ordinal(mut self, ordinal: bool) -> Self {
        self.ordinal = ordinal;
        self
    }

    pub fn k(&self) -> usize {
        self.classes.len()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.cells.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        (0..self.k())
            .map(|j| self.cells.iter().map(|r| r[j]).sum())
            .collect()
    }

    pub fn diagonal(&self) -> u64 {
        (0..self.k()).map(|i| self.cells[i][i]).sum()
    }

    pub fn is_diagonal(&self) -> bool {
        self.cells
            .iter()
            .enumerate()
            .all(|(i, r)| r.iter().enumerate().all(|(j, c)| i == j || *c == 0))
    }

    pub fn accuracy(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.diagonal() as f64 / self.n as f64
        }
    }
}

/// Builds a matrix from label strings against an explicit class list.
pub fn confusion_matrix<S: AsRef<str>>(
    gold: &[S],
    pred: &[S],
    classes: &[S],
) -> Result<ConfusionMatrix, MetricError> {
    let lookup = |s: &S| {
        classes
            .iter()
            .position(|c| c.as_ref() == s.as_ref())
            .ok_or_else(|| MetricError::UnknownLabel(s.as_ref().to_string()))
    };
    if gold.len() != pred.len() {
        return Err(MetricError::LengthMismatch {
            gold: gold.len(),
            pred: pred.len(),
        });
    }
    let g = gold.iter().map(lookup).collect::<Result<Vec<_>, _>>()?;
    let p = pred.iter().map(lookup).collect::<Result<Vec<_>, _>>()?;
    ConfusionMatrix::from_indices(&g, &p, classes.iter().map(|c| c.as_ref().to_string()).collect())
}

/// Cohen's kappa. When chance agreement is 1 the ratio is undefined; this
/// returns 1 for perfect observed agreement and 0 otherwise.
pub fn cohen_kappa(m: &ConfusionMatrix) -> Result<f64, MetricError> {
    if m.n == 0 {
        return Err(MetricError::EmptyMatrix);
    }
    let n = m.n as f64;
    let p_o = m.diagonal() as f64 / n;
    let p_e: f64 = m
        .row_sums()
        .iter()
        .zip(m.col_sums())
        .map(|(r, c)| (*r as f64 / n) * (c as f64 / n))
        .sum();
    if (1.0 - p_e).abs() < 1e-15 {
        return Ok(if (1.0 - p_o).abs() < 1e-15 { 1.0 } else { 0.0 });
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

/// Weighted kappa with weights `(i - j)^2 / (K - 1)^2`.
#[allow(clippy::needless_range_loop)]
pub fn quadratic_weighted_kappa(m: &ConfusionMatrix) -> Result<f64, MetricError> {
    if !m.ordinal {
        return Err(MetricError::NonOrdinalClasses);
    }
    if m.n == 0 {
        return Err(MetricError::EmptyMatrix);
    }
    let k = m.k();
    if k < 2 {
        return Ok(1.0);
    }
    let n = m.n as f64;
    let rows = m.row_sums();
    let cols = m.col_sums();
    let scale = ((k - 1) * (k - 1)) as f64;
    let mut observed = 0.0;
    let mut expected = 0.0;
    for i in 0..k {
        for j in 0..k {
            let d = i as f64 - j as f64;
            let w = d * d / scale;
            observed += w * m.cells[i][j] as f64;
            expected += w * rows[i] as f64 * cols[j] as f64 / n;
        }
    }
    if expected.abs() < 1e-12 {
        return Ok(if observed.abs() < 1e-12 { 1.0 } else { 0.0 });
    }
    Ok(1.0 - observed / expected)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Scores {
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub per_class: Vec<ClassScore>,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Per-class P/R/F1, their unweighted mean over every class (absent classes
/// count as 0), and F1 from pooled counts.
pub fn f1_scores(m: &ConfusionMatrix) -> Result<F1Scores, MetricError> {
    if m.n == 0 {
        return Err(MetricError::EmptyMatrix);
    }
    let rows = m.row_sums();
    let cols = m.col_sums();
    let (mut tp_all, mut fp_all, mut fn_all) = (0.0, 0.0, 0.0);
    let per_class: Vec<ClassScore> = m
        .classes
        .iter()
        .enumerate()
        .map(|(i, label)| {
            let tp = m.cells[i][i] as f64;
            let fp = cols[i] as f64 - tp;
            let fn_ = rows[i] as f64 - tp;
            tp_all += tp;
            fp_all += fp;
            fn_all += fn_;
            let precision = ratio(tp, tp + fp);
            let recall = ratio(tp, tp + fn_);
            ClassScore {
                label: label.clone(),
                precision,
                recall,
                f1: ratio(2.0 * precision * recall, precision + recall),
                support: rows[i],
            }
        })
        .collect();
    let macro_f1 = ratio(
        per_class.iter().map(|c| c.f1).sum(),
        per_class.len() as f64,
    );
    let micro_p = ratio(tp_all, tp_all + fp_all);
    let micro_r = ratio(tp_all, tp_all + fn_all);
    Ok(F1Scores {
        macro_f1,
        micro_f1: ratio(2.0 * micro_p * micro_r, micro_p + micro_r),
        per_class,
    })
}

/// One row of the report table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionReport {
    pub dimension: Dimension,
    pub unit: String,
    pub n_units: u64,
    pub kappa: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qwk: Option<f64>,
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub per_class: Vec<ClassScore>,
    pub confusion: ConfusionMatrix,
}

impl DimensionReport {
    fn from_matrix(dimension: Dimension, m: ConfusionMatrix) -> Result<Self, MetricError> {
        let f1 = f1_scores(&m)?;
        Ok(Self {
            dimension,
            unit: if dimension == Dimension::Collaboration {
                "Turns".into()
            } else {
                "ADUs".into()
            },
            n_units: m.n,
            kappa: cohen_kappa(&m)?,
            qwk: if m.ordinal {
                Some(quadratic_weighted_kappa(&m)?)
            } else {
                None
            },
            macro_f1: f1.macro_f1,
            micro_f1: f1.micro_f1,
            per_class: f1.per_class,
            confusion: m,
        })
    }

    /// Agreement figure shown in the table: QWK for ordinal dimensions,
    /// Cohen's kappa otherwise.
    pub fn headline_kappa(&self) -> f64 {
        self.qwk.unwrap_or(self.kappa)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub rows: Vec<DimensionReport>,
    pub excluded_fallback_turns: u64,
}

impl EvaluationReport {
    pub fn row(&self, dimension: Dimension) -> Option<&DimensionReport> {
        self.rows.iter().find(|r| r.dimension == dimension)
    }

    /// Aligned text table: `Code | N | Kappa | Macro F | Micro F`.
    pub fn to_table(&self) -> String {
        let header = ["Code", "N", "Kappa", "Macro F", "Micro F"];
        let body: Vec<[String; 5]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.dimension.display_name().to_string(),
                    format!("{} {}", r.n_units, r.unit),
                    format!("{:.3}", r.headline_kappa()),
                    format!("{:.3}", r.macro_f1),
                    format!("{:.3}", r.micro_f1),
                ]
            })
            .collect();
        let mut widths = header.map(str::len);
        for row in &body {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.len());
            }
        }
        let mut out = String::new();
        let line = |cells: &[&str], out: &mut String| {
            let padded: Vec<String> = cells
                .iter()
                .zip(widths)
                .map(|(c, w)| format!("{c:<w$}"))
                .collect();
            let _ = writeln!(out, "{}", padded.join(" | ").trim_end());
        };
        line(&header, &mut out);
        let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
        let _ = writeln!(out, "{}", rule.join("-+-"));
        for row in &body {
            let cells: Vec<&str> = row.iter().map(String::as_str).collect();
            line(&cells, &mut out);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error, Serialize, Deserialize)]
pub enum EvaluationError {
    #[error("units missing gold or predicted labels: {}", .units.join(", "))]
    MissingLabels { units: Vec<String> },
    #[error("no {0} units to evaluate")]
    NoUnits(Dimension),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluationOptions {
    /// Drop student turns whose prediction came from the missing-reference
    /// `new` fallback.
    #[serde(default)]
    pub exclude_fallback: bool,
}

struct Pairs<L> {
    gold: Vec<L>,
    pred: Vec<L>,
}

impl<L> Default for Pairs<L> {
    fn default() -> Self {
        Self {
            gold: Vec::new(),
            pred: Vec::new(),
        }
    }
}

/// Pools every student unit across the discussions and scores predictions
/// against gold for all three dimensions.
pub fn evaluate_discussions(
    discussions: &[Discussion],
    options: EvaluationOptions,
) -> Result<EvaluationReport, EvaluationError> {
    let mut argument = Pairs::<ArgumentMove>::default();
    let mut specificity = Pairs::<SpecificityLevel>::default();
    let mut collaboration = Pairs::<CollaborationType>::default();
    let mut missing = Vec::new();
    let mut excluded = 0;

    for d in discussions {
        for (turn_index, adu) in student_adu_sequence(d) {
            let unit = || format!("{}/turn {turn_index}/{}", d.discussion_id, adu.adu_id);
            match (adu.gold_argument, &adu.predicted_argument) {
                (Some(g), Some(p)) => {
                    argument.gold.push(g);
                    argument.pred.push(p.argmax());
                }
                _ => missing.push(format!("{} (argument)", unit())),
            }
            match (adu.gold_specificity, &adu.predicted_specificity) {
                (Some(g), Some(p)) => {
                    specificity.gold.push(g);
                    specificity.pred.push(p.argmax());
                }
                _ => missing.push(format!("{} (specificity)", unit())),
            }
        }
        for turn in d.student_turns() {
            match (turn.gold_collaboration, &turn.predicted_collaboration) {
                (Some(g), Some(p)) => {
                    if options.exclude_fallback && turn.reference_turn_index.is_none() {
                        excluded += 1;
                        continue;
                    }
                    collaboration.gold.push(g);
                    collaboration.pred.push(p.argmax());
                }
                _ => missing.push(format!(
                    "{}/turn {} (collaboration)",
                    d.discussion_id, turn.turn_index
                )),
            }
        }
    }
    if !missing.is_empty() {
        return Err(EvaluationError::MissingLabels { units: missing });
    }

    fn row<L: Label>(pairs: Pairs<L>) -> Result<DimensionReport, EvaluationError> {
        if pairs.gold.is_empty() {
            return Err(EvaluationError::NoUnits(L::DIMENSION));
        }
        let m = ConfusionMatrix::from_labels(&pairs.gold, &pairs.pred)?;
        Ok(DimensionReport::from_matrix(L::DIMENSION, m)?)
    }

    Ok(EvaluationReport {
        rows: vec![row(argument)?, row(specificity)?, row(collaboration)?],
        excluded_fallback_turns: excluded,
    })
}
