//! Grounding metrics: temporal IoU, per-video box-tube IoU (vIoU) and the
//! fraction of samples above vIoU thresholds.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{box_iou, mask_to_box, BoundingBox, TemporalSpan, Tube};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("duplicate prediction for {0}")]
    DuplicatePrediction(String),
    #[error("duplicate ground truth for {0}")]
    DuplicateGroundTruth(String),
    #[error("prediction for unknown video {0}")]
    UnknownVideo(String),
    #[error("{video_id}: {reason}")]
    Malformed { video_id: String, reason: String },
    #[error("line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// One JSONL row, used for both ground truth and predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub video_id: String,
    #[serde(default)]
    pub query: String,
    pub span: TemporalSpan,
    /// `[x1, y1, x2, y2]` keyed by frame index.
    pub boxes: BTreeMap<usize, [u32; 4]>,
}

pub type GroundTruth = Annotation;
pub type Prediction = Annotation;

impl Annotation {
    /// Boxes must be non-degenerate and lie inside the span. Frames inside the
    /// span without a box are allowed and score 0.
    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |reason: String| Err(EvalError::Malformed { video_id: self.video_id.clone(), reason });
        for (&f, c) in &self.boxes {
            if !self.span.contains(f) {
                return bad(format!("box on frame {f} outside span {}", self.span));
            }
            if c[0] >= c[2] || c[1] >= c[3] {
                return bad(format!("degenerate box {c:?} on frame {f}"));
            }
        }
        Ok(())
    }

    fn bbox(&self, frame: usize) -> Option<BoundingBox> {
        let [x1, y1, x2, y2] = *self.boxes.get(&frame)?;
        Some(BoundingBox { frame_index: frame, x1, y1, x2, y2 })
    }

    /// Prediction from a grounded tube: one box per span frame where the
    /// cleaned-up mask is non-empty.
    pub fn from_tube(video_id: impl Into<String>, query: impl Into<String>, tube: &Tube, span: TemporalSpan) -> Self {
        let boxes = span
            .frames()
            .filter_map(|f| tube.mask(f).and_then(mask_to_box).map(|b| (f, b.coords())))
            .collect();
        Annotation { video_id: video_id.into(), query: query.into(), span, boxes }
    }
}

/// Inclusive-span IoU.
pub fn tiou(gt: &TemporalSpan, pred: &TemporalSpan) -> f64 {
    let inter = gt.intersect(pred).map_or(0, |s| s.len());
    let union = gt.len() + pred.len() - inter;
    inter as f64 / union as f64
}

/// Sum of per-frame box IoU over the shared frames, divided by the number of
/// frames in either span. A missing box on a shared frame scores 0.
pub fn viou(gt: &GroundTruth, pred: &Prediction) -> f64 {
    let inter = gt.span.intersect(&pred.span);
    let union = gt.span.len() + pred.span.len() - inter.map_or(0, |s| s.len());
    let total: f64 = inter
        .into_iter()
        .flat_map(|s| s.frames())
        .map(|f| match (gt.bbox(f), pred.bbox(f)) {
            (Some(a), Some(b)) => box_iou(&a, &b),
            _ => 0.0,
        })
        .sum();
    total / union as f64
}

/// Fraction of values strictly above `r`.
pub fn viou_at_r(values: &[f64], r: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().filter(|&&v| v > r).count() as f64 / values.len() as f64
}

pub const DEFAULT_THRESHOLDS: [f64; 2] = [0.3, 0.5];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleMetrics {
    pub video_id: String,
    pub tiou: f64,
    pub viou: f64,
    pub predicted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub samples: Vec<SampleMetrics>,
    pub count: usize,
    pub m_tiou: f64,
    pub m_viou: f64,
    /// `(R, vIoU@R)` in the requested order.
    pub viou_at: Vec<(f64, f64)>,
}

fn mean(xs: impl Iterator<Item = f64>, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        xs.sum::<f64>() / n as f64
    }
}

/// Score every ground-truth sample; a missing prediction scores 0.
pub fn aggregate(gts: &[GroundTruth], preds: &[Prediction], thresholds: &[f64]) -> Result<MetricsReport, EvalError> {
    let mut seen = HashSet::new();
    for g in gts {
        g.validate()?;
        if !seen.insert(g.video_id.as_str()) {
            return Err(EvalError::DuplicateGroundTruth(g.video_id.clone()));
        }
    }
    let mut by_id: HashMap<&str, &Prediction> = HashMap::new();
    for p in preds {
        p.validate()?;
        if !seen.contains(p.video_id.as_str()) {
            return Err(EvalError::UnknownVideo(p.video_id.clone()));
        }
        if by_id.insert(p.video_id.as_str(), p).is_some() {
            return Err(EvalError::DuplicatePrediction(p.video_id.clone()));
        }
    }
    let samples: Vec<SampleMetrics> = gts
        .iter()
        .map(|g| match by_id.get(g.video_id.as_str()) {
            Some(p) => SampleMetrics { video_id: g.video_id.clone(), tiou: tiou(&g.span, &p.span), viou: viou(g, p), predicted: true },
            None => SampleMetrics { video_id: g.video_id.clone(), tiou: 0.0, viou: 0.0, predicted: false },
        })
        .collect();
    let n = samples.len();
    let vious: Vec<f64> = samples.iter().map(|s| s.viou).collect();
    Ok(MetricsReport {
        count: n,
        m_tiou: mean(samples.iter().map(|s| s.tiou), n),
        m_viou: mean(vious.iter().copied(), n),
        viou_at: thresholds.iter().map(|&r| (r, viou_at_r(&vious, r))).collect(),
        samples,
    })
}

impl MetricsReport {
    /// Aligned text table of the aggregates.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str("# vIoU@R counts samples with vIoU strictly above R; missing predictions score 0\n");
        let mut cols = vec![("samples".to_string(), self.count.to_string())];
        cols.push(("m_tIoU".into(), format!("{:.4}", self.m_tiou)));
        cols.push(("m_vIoU".into(), format!("{:.4}", self.m_viou)));
        for (r, v) in &self.viou_at {
            cols.push((format!("vIoU@{r}"), format!("{v:.4}")));
        }
        let widths: Vec<usize> = cols.iter().map(|(h, v)| h.len().max(v.len())).collect();
        let line = |pick: &dyn Fn(&(String, String)) -> &String| {
            cols.iter()
                .zip(&widths)
                .map(|(c, &w)| format!("{:>w$}", pick(c)))
                .collect::<Vec<_>>()
                .join("  ")
        };
        let _ = writeln!(out, "{}", line(&|c| &c.0));
        let _ = writeln!(out, "{}", line(&|c| &c.1));
        out
    }

    pub fn write_per_sample_csv(&self, path: &Path) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["video_id", "tiou", "viou", "predicted"])?;
        for s in &self.samples {
            w.write_record([s.video_id.clone(), s.tiou.to_string(), s.viou.to_string(), s.predicted.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_aggregate_csv(&self, path: &Path) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["metric", "value"])?;
        w.write_record(["count".to_string(), self.count.to_string()])?;
        w.write_record(["m_tiou".to_string(), self.m_tiou.to_string()])?;
        w.write_record(["m_viou".to_string(), self.m_viou.to_string()])?;
        for (r, v) in &self.viou_at {
            w.write_record([format!("viou@{r}"), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, EvalError> {
    let mut out = Vec::new();
    for (n, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| EvalError::Parse { line: n + 1, source })?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), EvalError> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in rows {
        serde_json::to_writer(&mut w, r).map_err(|source| EvalError::Parse { line: 0, source })?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
