//! Temporal IoU accuracy of a filtered detection track against ground truth.
//!
//! Frames dropped by the filter inherit the detections of the most recent
//! kept frame, and each original frame is scored against its own ground
//! truth.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BoundingBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        if !(x1 < x2 && y1 < y2) {
            return Err(Error::invalid(format!(
                "degenerate box ({x1}, {y1}, {x2}, {y2})"
            )));
        }
        Ok(BoundingBox { x1, y1, x2, y2 })
    }

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1) * (self.y2 - self.y1)
    }

    fn coords(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }
}

impl TryFrom<[f64; 4]> for BoundingBox {
    type Error = Error;

    fn try_from(c: [f64; 4]) -> Result<Self> {
        BoundingBox::new(c[0], c[1], c[2], c[3])
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        b.coords()
    }
}

pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let w = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let h = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = w * h;
    if inter <= 0.0 {
        return 0.0;
    }
    inter / (a.area() + b.area() - inter)
}

fn lex_cmp(a: &BoundingBox, b: &BoundingBox) -> std::cmp::Ordering {
    a.coords()
        .iter()
        .zip(b.coords().iter())
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

/// Greedy highest-IoU-first matching score of one frame.
///
/// Unmatched ground-truth boxes score zero; extra predictions are not
/// penalized. A frame without ground truth scores 1.
pub fn frame_score(gt: &[BoundingBox], pred: &[BoundingBox]) -> f64 {
    if gt.is_empty() {
        return 1.0;
    }
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(gt.len() * pred.len());
    for (i, g) in gt.iter().enumerate() {
        for (j, p) in pred.iter().enumerate() {
            let v = iou(g, p);
            if v > 0.0 {
                pairs.push((v, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then_with(|| lex_cmp(&gt[a.1], &gt[b.1]))
            .then_with(|| lex_cmp(&pred[a.2], &pred[b.2]))
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    let mut gt_used = vec![false; gt.len()];
    let mut pred_used = vec![false; pred.len()];
    let mut total = 0.0;
    for (v, i, j) in pairs {
        if !gt_used[i] && !pred_used[j] {
            gt_used[i] = true;
            pred_used[j] = true;
            total += v;
        }
    }
    total / gt.len() as f64
}

/// Detections per original frame index. Missing indices mean "no boxes".
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DetectionTrack {
    frames: BTreeMap<usize, Vec<BoundingBox>>,
}

#[derive(Serialize, Deserialize)]
struct DetectionLine {
    frame: usize,
    boxes: Vec<BoundingBox>,
}

impl DetectionTrack {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, frame: usize, boxes: Vec<BoundingBox>) {
        self.frames.insert(frame, boxes);
    }

    pub fn get(&self, frame: usize) -> Option<&[BoundingBox]> {
        self.frames.get(&frame).map(Vec::as_slice)
    }

    pub fn contains(&self, frame: usize) -> bool {
        self.frames.contains_key(&frame)
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.frames.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Sub-track restricted to `indices`; indices absent from `self` map to an
    /// empty detection list.
    pub fn restrict(&self, indices: impl IntoIterator<Item = usize>) -> DetectionTrack {
        let mut out = DetectionTrack::new();
        for i in indices {
            out.insert(i, self.get(i).map(<[_]>::to_vec).unwrap_or_default());
        }
        out
    }

    pub fn parse_jsonl(reader: impl BufRead, origin: &Path) -> Result<Self> {
        let mut track = DetectionTrack::new();
        let mut last: Option<usize> = None;
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: DetectionLine = serde_json::from_str(&line)
                .map_err(|e| Error::parse("detections", origin, format!("line {}: {e}", n + 1)))?;
            if last.is_some_and(|l| rec.frame <= l) {
                return Err(Error::parse(
                    "detections",
                    origin,
                    format!("line {}: frame {} not strictly increasing", n + 1, rec.frame),
                ));
            }
            last = Some(rec.frame);
            track.insert(rec.frame, rec.boxes);
        }
        Ok(track)
    }

    pub fn load_jsonl(path: &Path) -> Result<Self> {
        let f = fs::File::open(path)?;
        Self::parse_jsonl(BufReader::new(f), path)
    }

    pub fn write_jsonl(&self, mut w: impl Write) -> Result<()> {
        for (frame, boxes) in &self.frames {
            let line = DetectionLine {
                frame: *frame,
                boxes: boxes.clone(),
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Mean per-frame score over `[0, horizon)` with carry-forward of the most
/// recent kept frame's detections.
pub fn temporal_accuracy(gt: &DetectionTrack, kept: &DetectionTrack, horizon: usize) -> Result<f64> {
    if horizon == 0 {
        return Err(Error::Empty("evaluation horizon"));
    }
    let mut total = 0.0;
    let mut source: Option<&[BoundingBox]> = None;
    for i in 0..horizon {
        if let Some(boxes) = kept.get(i) {
            source = Some(boxes);
        }
        let pred = source.ok_or(Error::NoCarrySource(i))?;
        total += frame_score(gt.get(i).unwrap_or(&[]), pred);
    }
    Ok(total / horizon as f64)
}
