use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{ConfusionMatrix, EvaluationError, EvaluationReport};
use crate::aggregation::AggregationRule;

/// Mean and sample (n-1) standard deviation; the deviation of a single value
/// is 0.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self::default();
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Self { mean, std }
    }
}

impl std::fmt::Display for MeanStd {
    /// `84.600±2.135`
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.3}±{:.3}", self.mean, self.std)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    #[default]
    Markdown,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "markdown" | "md" => Ok(Self::Markdown),
            "csv" => Ok(Self::Csv),
            _ => Err(format!("unknown report format {s:?}")),
        }
    }
}

const FOOTER: &str = "\
Mean±StD (%) over the test folds, sample (n-1) standard deviation.
Segments: correct test segments over all test segments (micro-average).
Aggregation: clip accuracy after fusing segment predictions with the named rule.
Layer 0 is the encoder front-end output; layers 1..L are transformer blocks.
";

fn render_markdown(reports: &[EvaluationReport]) -> String {
    let mut out = String::from("| Model | Layer | Segments |");
    for rule in AggregationRule::ALL {
        let _ = write!(out, " Aggregation ({rule}) |");
    }
    out.push_str("\n|---|---:|---:|");
    out.push_str(&"---:|".repeat(AggregationRule::ALL.len()));
    out.push('\n');
    for r in reports {
        let _ = write!(out, "| {} | {} | {} |", r.model_id, r.layer, r.segment);
        for rule in AggregationRule::ALL {
            let _ = write!(out, " {} |", r.clip_for(rule));
        }
        out.push('\n');
    }
    out.push('\n');
    out.push_str(FOOTER);
    out
}

fn render_csv(reports: &[EvaluationReport]) -> String {
    let mut out = String::from("model,layer,rule,segment_mean,segment_std,clip_mean,clip_std\n");
    for r in reports {
        for rule in AggregationRule::ALL {
            let c = r.clip_for(rule);
            let _ = writeln!(
                out,
                "{},{},{},{:.3},{:.3},{:.3},{:.3}",
                csv_field(&r.model_id),
                r.layer,
                rule,
                r.segment.mean,
                r.segment.std,
                c.mean,
                c.std
            );
        }
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

/// Renders one row per report (markdown) or one row per report and rule
/// (csv). Output depends only on the reports.
pub fn render_report(
    reports: &[EvaluationReport],
    format: ReportFormat,
) -> Result<String, EvaluationError> {
    if reports.is_empty() {
        return Err(EvaluationError::NoReports);
    }
    Ok(match format {
        ReportFormat::Markdown => render_markdown(reports),
        ReportFormat::Csv => render_csv(reports),
    })
}

/// Confusion matrix as CSV: a `true\predicted` header row of genre names,
/// then one row of counts per true genre.
pub fn render_confusion(matrix: &ConfusionMatrix, genres: &[String]) -> String {
    let name = |c: usize| genres.get(c).cloned().unwrap_or_else(|| c.to_string());
    let mut out = String::from("true\\predicted");
    for c in 0..matrix.classes {
        let _ = write!(out, ",{}", csv_field(&name(c)));
    }
    out.push('\n');
    for t in 0..matrix.classes {
        out.push_str(&csv_field(&name(t)));
        for n in matrix.row(t) {
            let _ = write!(out, ",{n}");
        }
        out.push('\n');
    }
    out
}
