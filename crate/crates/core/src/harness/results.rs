use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::Method;
use crate::error::{Error, Result};

pub const TRACE_FILE: &str = "trace.csv";
pub const SUMMARY_FILE: &str = "summary.txt";

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub segment: usize,
    pub period: usize,
    /// Argmax of the model output for each sample.
    pub predicted: Vec<usize>,
    /// Reported class for each sample; equals `predicted` without refinement.
    pub refined: Vec<usize>,
    /// Number of reported classes matching the ground truth.
    pub correct: usize,
    pub zeta: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub method: Method,
    pub steps: Vec<StepRecord>,
    /// Fraction of correct reported classes over all samples up to each step.
    pub accumulated_accuracy: Vec<f64>,
    pub segment_error: Vec<f64>,
    pub final_error: f64,
    pub id: f64,
    pub cd: f64,
    pub mean_zeta: f64,
    /// Settings written into the summary.
    pub echo: Vec<(String, String)>,
}

impl RunResult {
    pub fn from_steps(method: Method, steps: Vec<StepRecord>, id: f64, cd: f64, echo: Vec<(String, String)>) -> Self {
        let mut accumulated_accuracy = Vec::with_capacity(steps.len());
        let (mut correct, mut seen) = (0usize, 0usize);
        let mut per_segment: Vec<(usize, usize)> = Vec::new();
        for s in &steps {
            correct += s.correct;
            seen += s.refined.len();
            accumulated_accuracy.push(correct as f64 / seen.max(1) as f64);
            if per_segment.len() <= s.segment {
                per_segment.resize(s.segment + 1, (0, 0));
            }
            per_segment[s.segment].0 += s.correct;
            per_segment[s.segment].1 += s.refined.len();
        }
        let segment_error =
            per_segment.iter().map(|&(c, n)| if n == 0 { 0.0 } else { 1.0 - c as f64 / n as f64 }).collect();
        let final_error = 1.0 - accumulated_accuracy.last().copied().unwrap_or(1.0);
        let mean_zeta = steps.iter().map(|s| s.zeta).sum::<f64>() / steps.len().max(1) as f64;
        Self { method, steps, accumulated_accuracy, segment_error, final_error, id, cd, mean_zeta, echo }
    }

    /// Number of distinct reported classes from `from_step` on.
    pub fn distinct_classes_from(&self, from_step: usize) -> usize {
        self.steps.iter().skip(from_step).flat_map(|s| s.refined.iter().copied()).collect::<BTreeSet<_>>().len()
    }
}

fn join(classes: &[usize]) -> String {
    classes.iter().map(usize::to_string).collect::<Vec<_>>().join(" ")
}

/// Writes the per-step trace and the summary into directory `dir`.
pub fn write_results(result: &RunResult, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut trace = String::from("step,segment,period,predicted,refined,correct,accumulated_accuracy,zeta\n");
    for (s, acc) in result.steps.iter().zip(&result.accumulated_accuracy) {
        let _ = writeln!(
            trace,
            "{},{},{},{},{},{},{:e},{:e}",
            s.step,
            s.segment,
            s.period,
            join(&s.predicted),
            join(&s.refined),
            s.correct,
            acc,
            s.zeta
        );
    }
    fs::write(dir.join(TRACE_FILE), trace)?;

    let mut summary = String::new();
    let _ = writeln!(summary, "method={}", result.method);
    let _ = writeln!(summary, "steps={}", result.steps.len());
    let _ = writeln!(summary, "final_error={:e}", result.final_error);
    let _ = writeln!(summary, "id={:e}", result.id);
    let _ = writeln!(summary, "cd={:e}", result.cd);
    let _ = writeln!(summary, "mean_zeta={:e}", result.mean_zeta);
    for (k, e) in result.segment_error.iter().enumerate() {
        let _ = writeln!(summary, "segment_error.{k}={e:e}");
    }
    for (key, value) in &result.echo {
        let _ = writeln!(summary, "config.{key}={value}");
    }
    fs::write(dir.join(SUMMARY_FILE), summary)?;
    Ok(())
}

/// Parses a summary written by [`write_results`].
pub fn read_summary(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path)?;
    super::parse_key_values(&text).map(|pairs| pairs.into_iter().collect()).map_err(|e| match e {
        Error::Parse { line, message } => Error::Parse { line, message: format!("summary: {message}") },
        other => other,
    })
}
