//! End-to-end scoring and Table-style detection reports.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::attacks::successful_subset;
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::features::{features, GgaFeatureVector};
use crate::loda::{calibrate, LodaDetector};
use crate::metrics::{aupr, auroc, msp_from_logits, tnr_at_tpr, PrSide, ScoredSet};
use crate::nn::Model;
use crate::par;
use crate::saliency::{csm, CsmOptions};
use crate::tensor::Tensor;

/// GGA feature vectors of `xs`.
pub fn gga_features(model: &Model, xs: &[Tensor], opts: &CsmOptions) -> Result<Vec<GgaFeatureVector>> {
    par::try_map(xs, |_, x| features(&csm(model, x, opts)?))
}

/// How inputs are turned into anomaly scores.
#[derive(Debug, Clone, Copy)]
pub enum Scorer<'a> {
    /// CSM features scored by a fitted detector.
    Gga {
        detector: &'a LodaDetector,
        csm: CsmOptions,
        with_softmax: bool,
    },
    /// Negative maximum softmax probability.
    Msp,
}

impl Scorer<'_> {
    pub fn score(&self, model: &Model, xs: &[Tensor]) -> Result<Vec<f64>> {
        match self {
            Scorer::Gga {
                detector,
                csm,
                with_softmax,
            } => gga_features(model, xs, csm)?
                .iter()
                .map(|f| detector.score(&f.to_vec(*with_softmax)))
                .collect(),
            Scorer::Msp => par::try_map(xs, |_, x| Ok(msp_from_logits(model.forward(x)?.data()))),
        }
    }
}

/// Report column an untrustworthy source belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Column {
    Noise,
    Pgd,
    Rotation,
    Boundary,
    BoundaryL2,
    Ood,
}

/// Maps dataset tags to columns: `noise`, `pgd`, `rotation`, `boundary`,
/// `boundary-l2`, and `ood*` / `*-noise` generated OOD sets. Other tags
/// (targeted or adaptive attacks, ℓ2 variants) are reported per tag only.
pub fn column_for(tag: &str) -> Option<Column> {
    match tag {
        "noise" => Some(Column::Noise),
        "pgd" => Some(Column::Pgd),
        "rotation" => Some(Column::Rotation),
        "boundary" => Some(Column::Boundary),
        "boundary-l2" => Some(Column::BoundaryL2),
        t if t.starts_with("ood") || t.ends_with("-noise") => Some(Column::Ood),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AurocMode {
    /// One curve over all untrustworthy sources together.
    #[default]
    Pooled,
    /// Mean of per-source values.
    PerSource,
}

impl std::str::FromStr for AurocMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pooled" => Ok(AurocMode::Pooled),
            "per-source" => Ok(AurocMode::PerSource),
            _ => Err(Error::invalid(format!("unknown AUROC mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub tpr: f64,
    pub auroc_mode: AurocMode,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            tpr: 0.95,
            auroc_mode: AurocMode::Pooled,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagResult {
    pub tag: String,
    pub count: usize,
    pub tnr: f64,
    pub auroc: f64,
    pub aupr_in: f64,
    pub aupr_out: f64,
}

/// TNR@TPR per column (percent) plus aggregate ranking metrics.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TableRow {
    pub noise: Option<f64>,
    pub pgd: Option<f64>,
    pub rotation: Option<f64>,
    pub boundary: Option<f64>,
    pub boundary_l2: Option<f64>,
    pub ood: Option<f64>,
    pub auroc: f64,
    pub aupr_in: f64,
    pub aupr_out: f64,
}

pub const REPORT_COLUMNS: [&str; 9] = [
    "Noise",
    "PGD",
    "Rotation",
    "boundary",
    "boundary-l2",
    "OOD",
    "AUROC",
    "AUPR-In",
    "AUPR-Out",
];

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DetectionReport {
    pub row: TableRow,
    pub tags: Vec<TagResult>,
    pub auroc_mode: AurocMode,
    pub tpr: f64,
    /// Threshold at the requested TPR on the clean scores.
    pub threshold: f64,
    pub positives: usize,
    /// Clean samples excluded from the positives because they are misclassified.
    pub misclassified_clean: usize,
    pub warnings: Vec<String>,
    pub metadata: BTreeMap<String, String>,
}

fn cell(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

impl DetectionReport {
    /// Header plus one row in the fixed column order; missing columns are empty.
    pub fn to_csv(&self) -> String {
        let r = &self.row;
        let cells = [
            cell(r.noise),
            cell(r.pgd),
            cell(r.rotation),
            cell(r.boundary),
            cell(r.boundary_l2),
            cell(r.ood),
            r.auroc.to_string(),
            r.aupr_in.to_string(),
            r.aupr_out.to_string(),
        ];
        format!("{}\n{}\n", REPORT_COLUMNS.join(","), cells.join(","))
    }

    /// One line per untrustworthy source.
    pub fn tags_csv(&self) -> String {
        let mut out = String::from("tag,count,tnr,auroc,aupr_in,aupr_out\n");
        for t in &self.tags {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                t.tag, t.count, t.tnr, t.auroc, t.aupr_in, t.aupr_out
            ));
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn tag(&self, tag: &str) -> Option<&TagResult> {
        self.tags.iter().find(|t| t.tag == tag)
    }
}

/// Builds a report from clean scores and per-source untrustworthy scores.
pub fn evaluate_scores(clean: &[f64], sources: &[(String, Vec<f64>)], opts: &EvalOptions) -> Result<DetectionReport> {
    if clean.is_empty() {
        return Err(Error::Empty("no trustworthy samples to score".into()));
    }
    let mut report = DetectionReport {
        auroc_mode: opts.auroc_mode,
        tpr: opts.tpr,
        threshold: calibrate(clean, opts.tpr)?,
        positives: clean.len(),
        ..DetectionReport::default()
    };
    let mut pooled = Vec::new();
    let mut by_column: BTreeMap<Column, Vec<f64>> = BTreeMap::new();
    for (tag, scores) in sources {
        if scores.is_empty() {
            report.warnings.push(format!("source `{tag}` is empty and was skipped"));
            continue;
        }
        let s = ScoredSet::new(clean.to_vec(), scores.clone());
        let result = TagResult {
            tag: tag.clone(),
            count: scores.len(),
            tnr: tnr_at_tpr(&s, opts.tpr)?,
            auroc: auroc(&s)?,
            aupr_in: aupr(&s, PrSide::In)?,
            aupr_out: aupr(&s, PrSide::Out)?,
        };
        if let Some(col) = column_for(tag) {
            by_column.entry(col).or_default().push(result.tnr);
        }
        pooled.extend_from_slice(scores);
        report.tags.push(result);
    }
    if report.tags.is_empty() {
        return Err(Error::Empty("no untrustworthy samples to score".into()));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let col = |c: Column| by_column.get(&c).map(|v| mean(v));
    let (auroc_v, aupr_in, aupr_out) = match opts.auroc_mode {
        AurocMode::Pooled => {
            let s = ScoredSet::new(clean.to_vec(), pooled);
            (auroc(&s)?, aupr(&s, PrSide::In)?, aupr(&s, PrSide::Out)?)
        }
        AurocMode::PerSource => {
            let pick = |f: fn(&TagResult) -> f64| mean(&report.tags.iter().map(f).collect::<Vec<_>>());
            (pick(|t| t.auroc), pick(|t| t.aupr_in), pick(|t| t.aupr_out))
        }
    };
    report.row = TableRow {
        noise: col(Column::Noise),
        pgd: col(Column::Pgd),
        rotation: col(Column::Rotation),
        boundary: col(Column::Boundary),
        boundary_l2: col(Column::BoundaryL2),
        ood: col(Column::Ood),
        auroc: auroc_v,
        aupr_in,
        aupr_out,
    };
    Ok(report)
}

/// Scores the correctly classified clean samples and every untrustworthy
/// set (tagged by its dataset tag; recorded attack failures are dropped).
pub fn evaluate(
    model: &Model,
    scorer: &Scorer<'_>,
    clean: &LabeledDataset,
    untrusted: &[LabeledDataset],
    opts: &EvalOptions,
) -> Result<DetectionReport> {
    let mut correct = Vec::new();
    let mut misclassified = 0;
    for (i, x) in clean.inputs.iter().enumerate() {
        let Some(y) = clean.label(i) else { continue };
        if model.predict(x)? == y {
            correct.push(x.clone());
        } else {
            misclassified += 1;
        }
    }
    let clean_scores = scorer.score(model, &correct)?;
    let mut sources = Vec::with_capacity(untrusted.len());
    for ds in untrusted {
        let kept = successful_subset(ds)?;
        sources.push((ds.tag.clone(), scorer.score(model, &kept.inputs)?));
    }
    let mut report = evaluate_scores(&clean_scores, &sources, opts)?;
    report.misclassified_clean = misclassified;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sources(v: Vec<(&str, Vec<f64>)>) -> Vec<(String, Vec<f64>)> {
        v.into_iter().map(|(t, s)| (t.to_string(), s)).collect()
    }

    #[test]
    fn constant_scorer_is_uninformative() {
        let r = evaluate_scores(&[0.0; 40], &sources(vec![("pgd", vec![0.0; 30])]), &EvalOptions::default()).unwrap();
        assert_eq!(r.row.auroc, 50.0);
        assert_eq!(r.row.pgd, Some(0.0));
    }

    #[test]
    fn oracle_scorer_is_perfect() {
        let r = evaluate_scores(
            &[0.0; 40],
            &sources(vec![("pgd", vec![1.0; 5]), ("rotation", vec![1.0; 3]), ("uniform-noise", vec![1.0; 2])]),
            &EvalOptions::default(),
        )
        .unwrap();
        assert_eq!(r.row.pgd, Some(100.0));
        assert_eq!(r.row.rotation, Some(100.0));
        assert_eq!(r.row.ood, Some(100.0));
        assert_eq!(r.row.noise, None);
        assert_eq!(r.row.auroc, 100.0);
    }

    #[test]
    fn empty_source_is_skipped_with_warning() {
        let r = evaluate_scores(
            &[0.0, 1.0],
            &sources(vec![("noise", vec![]), ("pgd", vec![2.0])]),
            &EvalOptions::default(),
        )
        .unwrap();
        assert_eq!(r.tags.len(), 1);
        assert_eq!(r.warnings.len(), 1);
        assert_eq!(r.row.noise, None);
    }

    #[test]
    fn csv_and_json() {
        let r = evaluate_scores(
            &[0.1, 0.2, 0.3],
            &sources(vec![("pgd", vec![0.25, 0.5]), ("ood-a", vec![0.05])]),
            &EvalOptions::default(),
        )
        .unwrap();
        let csv = r.to_csv();
        assert!(csv.starts_with("Noise,PGD,Rotation,boundary,boundary-l2,OOD,AUROC,AUPR-In,AUPR-Out\n,"));
        assert_eq!(DetectionReport::from_json(&r.to_json().unwrap()).unwrap(), r);
    }

    #[test]
    fn per_source_mode_averages() {
        let opts = EvalOptions {
            auroc_mode: AurocMode::PerSource,
            ..EvalOptions::default()
        };
        let r = evaluate_scores(&[0.0, 1.0], &sources(vec![("a", vec![2.0]), ("b", vec![-1.0])]), &opts).unwrap();
        assert_eq!(r.row.auroc, 50.0);
    }
}
