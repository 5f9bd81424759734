//! ACC/AUC metrics and the clean + 8-condition degradation grid.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::degrade::{apply, DegradationSpec};
use crate::error::{Error, Result};
use crate::grad::softmax;
use crate::head::HeadParams;
use crate::toyworld::{FeatureExtractor, ToySample};

/// Fake-probability threshold; ties count as "fake".
pub const DECISION_THRESHOLD: f64 = 0.5;

/// Evaluation conditions in report column order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Condition {
    #[serde(rename = "Clean")]
    Clean,
    #[serde(rename = "J70")]
    Jpeg70,
    #[serde(rename = "J50")]
    Jpeg50,
    #[serde(rename = "J30")]
    Jpeg30,
    #[serde(rename = "B1")]
    Blur1,
    #[serde(rename = "B2")]
    Blur2,
    #[serde(rename = "B3")]
    Blur3,
    #[serde(rename = "R.5")]
    Resize050,
    #[serde(rename = "R.25")]
    Resize025,
}

impl Condition {
    /// The full grid: clean plus eight degraded conditions.
    pub const GRID: [Condition; 9] = [
        Self::Clean,
        Self::Jpeg70,
        Self::Jpeg50,
        Self::Jpeg30,
        Self::Blur1,
        Self::Blur2,
        Self::Blur3,
        Self::Resize050,
        Self::Resize025,
    ];

    /// Clean plus the JPEG conditions, as used by the loss ablation.
    pub const JPEG_ONLY: [Condition; 4] = [Self::Clean, Self::Jpeg70, Self::Jpeg50, Self::Jpeg30];

    pub fn label(self) -> &'static str {
        match self {
            Self::Clean => "Clean",
            Self::Jpeg70 => "J70",
            Self::Jpeg50 => "J50",
            Self::Jpeg30 => "J30",
            Self::Blur1 => "B1",
            Self::Blur2 => "B2",
            Self::Blur3 => "B3",
            Self::Resize050 => "R.5",
            Self::Resize025 => "R.25",
        }
    }

    pub fn spec(self) -> DegradationSpec {
        match self {
            Self::Clean => DegradationSpec::None,
            Self::Jpeg70 => DegradationSpec::Jpeg { quality: 70 },
            Self::Jpeg50 => DegradationSpec::Jpeg { quality: 50 },
            Self::Jpeg30 => DegradationSpec::Jpeg { quality: 30 },
            Self::Blur1 => DegradationSpec::Blur { sigma: 1.0 },
            Self::Blur2 => DegradationSpec::Blur { sigma: 2.0 },
            Self::Blur3 => DegradationSpec::Blur { sigma: 3.0 },
            Self::Resize050 => DegradationSpec::Resize { scale: 0.5 },
            Self::Resize025 => DegradationSpec::Resize { scale: 0.25 },
        }
    }

    pub fn is_jpeg(self) -> bool {
        matches!(self, Self::Jpeg70 | Self::Jpeg50 | Self::Jpeg30)
    }
}

fn check_inputs(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::Param("metric needs at least one sample".into()));
    }
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Param("scores must be finite".into()));
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::Param("labels must be 0 or 1".into()));
    }
    Ok(())
}

/// Fraction of samples where `score ≥ 0.5` agrees with `label == 1`.
pub fn accuracy(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_inputs(scores, labels)?;
    let hits = scores
        .iter()
        .zip(labels)
        .filter(|(&s, &l)| (s >= DECISION_THRESHOLD) == (l == 1))
        .count();
    Ok(hits as f64 / scores.len() as f64)
}

/// Mann–Whitney AUC with ties counted as one half, via a sort and
/// tie-averaged ranks. The numerator is accumulated in integers (as twice
/// the U statistic) so the result is exact.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_inputs(scores, labels)?;
    let n_fake = labels.iter().filter(|&&l| l == 1).count() as u64;
    let n_real = labels.len() as u64 - n_fake;
    if n_fake == 0 || n_real == 0 {
        return Err(Error::Param("AUC needs both classes present".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // twice the rank sum of the fakes; a tie group at 0-based [i, j) has
    // average 1-based rank (i + 1 + j) / 2
    let mut twice_rank_sum: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let fakes = order[i..j].iter().filter(|&&k| labels[k] == 1).count() as u64;
        twice_rank_sum += fakes * (i as u64 + 1 + j as u64);
        i = j;
    }
    let twice_u = twice_rank_sum - n_fake * (n_fake + 1);
    Ok(twice_u as f64 / (2 * n_fake * n_real) as f64)
}

/// Head wrapper counting forward passes; evaluation must do exactly one per
/// image per condition.
pub struct CountingHead<'a> {
    params: &'a HeadParams,
    calls: AtomicUsize,
}

impl<'a> CountingHead<'a> {
    pub fn new(params: &'a HeadParams) -> Self {
        CountingHead {
            params,
            calls: AtomicUsize::new(0),
        }
    }

    /// Softmax probability of the "fake" class.
    pub fn fake_probability(&self, feat: &[f64]) -> Result<f64> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let (_, logits) = self.params.forward(feat)?;
        Ok(softmax(logits)[1])
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionResult {
    pub condition: Condition,
    pub acc: f64,
    pub auc: f64,
    /// `None` when a generator has no samples in the evaluated set.
    pub per_generator_acc: Vec<Option<f64>>,
    pub forward_calls: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub seed: Option<u64>,
    pub config: Option<serde_json::Value>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub generators: usize,
    pub samples: usize,
    pub rows: Vec<ConditionResult>,
    /// Mean ACC over the non-clean rows.
    pub degraded_avg_acc: f64,
    pub degraded_avg_auc: f64,
    #[serde(default)]
    pub meta: ReportMeta,
}

impl GridReport {
    pub fn row(&self, c: Condition) -> Option<&ConditionResult> {
        self.rows.iter().find(|r| r.condition == c)
    }

    pub fn acc(&self, c: Condition) -> Option<f64> {
        self.row(c).map(|r| r.acc)
    }

    /// Mean ACC over the JPEG rows present.
    pub fn jpeg_avg_acc(&self) -> f64 {
        mean(self.rows.iter().filter(|r| r.condition.is_jpeg()).map(|r| r.acc))
    }

    pub fn write(&self, stem: impl AsRef<Path>) -> Result<(PathBuf, PathBuf)> {
        write_report(self, stem)
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Evaluates `params` on every condition: degrade each image, extract
/// features, one forward pass per image.
pub fn degradation_grid(
    params: &HeadParams,
    extractor: &dyn FeatureExtractor,
    dataset: &[ToySample],
    conditions: &[Condition],
) -> Result<GridReport> {
    let labels: Vec<u8> = dataset.iter().map(|s| s.label).collect();
    if !labels.contains(&0) || !labels.contains(&1) {
        return Err(Error::Param("evaluation set must contain both classes".into()));
    }
    let generators = dataset.iter().map(|s| s.generator_id as usize + 1).max().unwrap_or(0);

    let mut rows = Vec::with_capacity(conditions.len());
    for &condition in conditions {
        let spec = condition.spec();
        let head = CountingHead::new(params);
        let scores: Vec<f64> = dataset
            .par_iter()
            .map(|s| {
                let img = apply(&spec, &s.image)?;
                let feat = extractor.extract(&img)?;
                head.fake_probability(&feat)
            })
            .collect::<Result<_>>()?;

        let per_generator_acc = (0..generators)
            .map(|g| {
                let (sc, lb): (Vec<f64>, Vec<u8>) = dataset
                    .iter()
                    .zip(&scores)
                    .filter(|(s, _)| s.generator_id as usize == g)
                    .map(|(s, &p)| (p, s.label))
                    .unzip();
                if sc.is_empty() {
                    Ok(None)
                } else {
                    accuracy(&sc, &lb).map(Some)
                }
            })
            .collect::<Result<_>>()?;

        rows.push(ConditionResult {
            condition,
            acc: accuracy(&scores, &labels)?,
            auc: auc(&scores, &labels)?,
            per_generator_acc,
            forward_calls: head.calls(),
        });
    }

    let degraded = || rows.iter().filter(|r| r.condition != Condition::Clean);
    Ok(GridReport {
        generators,
        samples: dataset.len(),
        degraded_avg_acc: mean(degraded().map(|r| r.acc)),
        degraded_avg_auc: mean(degraded().map(|r| r.auc)),
        rows,
        meta: ReportMeta::default(),
    })
}

/// Writes `<stem>.csv` (one row per condition) and `<stem>.json` (the whole
/// report). Returns both paths.
pub fn write_report(report: &GridReport, stem: impl AsRef<Path>) -> Result<(PathBuf, PathBuf)> {
    let stem = stem.as_ref();
    let csv_path = stem.with_extension("csv");
    let json_path = stem.with_extension("json");

    let mut wtr = csv::Writer::from_path(&csv_path)
        .map_err(|e| Error::io(&csv_path, std::io::Error::other(e)))?;
    let mut header = vec!["condition".to_string(), "acc".into(), "auc".into()];
    header.extend((0..report.generators).map(|g| format!("gen{g}")));
    let csv_err = |e: csv::Error| Error::io(&csv_path, std::io::Error::other(e));
    wtr.write_record(&header).map_err(csv_err)?;
    for r in &report.rows {
        let mut rec = vec![
            r.condition.label().to_string(),
            r.acc.to_string(),
            r.auc.to_string(),
        ];
        rec.extend(
            r.per_generator_acc
                .iter()
                .map(|a| a.map_or(String::new(), |v| v.to_string())),
        );
        wtr.write_record(&rec).map_err(csv_err)?;
    }
    wtr.flush().map_err(|e| Error::io(&csv_path, e))?;

    let json = serde_json::to_string_pretty(report).expect("report serializes");
    fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))?;
    Ok((csv_path, json_path))
}

pub fn read_report_json(path: impl AsRef<Path>) -> Result<GridReport> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}
