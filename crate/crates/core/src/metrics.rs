//! PartPQ, PQ, mIOU, mPA and SIG.
//!
//! Per-image evaluation produces an [`ImageEval`] of additive tallies;
//! [`ImageEval::combine`] folds images together and [`finalize`] turns an
//! [`AccumulatorSet`] into scores. Counts are exact integers; the only float
//! state is the per-class sum of match qualities.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::label::{LabelMap, MapError};
use crate::merge::{PartLabels, PartPrediction};
use crate::segments::{extract_segments, match_segments, MatchResult, Segmentation, IGNORED};
use crate::spec::{ClassKind, DatasetSpec, PartId, SceneId, MAX_PID, VOID_PID, VOID_SID};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error(transparent)]
    Dimensions(#[from] MapError),
    #[error("label arrays differ in length: {0} vs {1}")]
    Length(usize, usize),
    #[error("cannot combine accumulators of scene classes {0} and {1}")]
    SidMismatch(SceneId, SceneId),
    #[error("accumulator sets come from different specs")]
    SpecMismatch,
    #[error("grouped part labels do not determine a scene class (ambiguous scene class); use an ungrouped part prediction")]
    AmbiguousSceneClass,
}

/// Which part classes enter the mean part IOU of a matched pair.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartUniverse {
    /// Background plus the parts present in either segment.
    #[default]
    Present,
    /// Background plus every part of the class; absent parts score 0.
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalOptions {
    pub part_universe: PartUniverse,
    /// Ignore part-class gt segments that carry no part labels.
    pub require_parts: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { part_universe: PartUniverse::Present, require_parts: true }
    }
}

const PART_SLOTS: usize = MAX_PID as usize + 1;
const BACKGROUND: usize = 0;

/// Per-class pixel counts for the mean part IOU of one matched pair.
/// Slot 0 is background, slot `pid` is part `pid`.
#[derive(Clone)]
struct PartCounts {
    gt: [u64; PART_SLOTS],
    pred: [u64; PART_SLOTS],
    inter: [u64; PART_SLOTS],
}

impl PartCounts {
    fn new() -> Self {
        Self { gt: [0; PART_SLOTS], pred: [0; PART_SLOTS], inter: [0; PART_SLOTS] }
    }

    #[inline]
    fn add(&mut self, in_g: bool, in_p: bool, gt_pid: PartId, pred_pid: PartId) {
        let g = if in_g {
            if gt_pid == VOID_PID {
                return;
            }
            gt_pid as usize
        } else {
            BACKGROUND
        };
        self.gt[g] += 1;
        let p = if in_p {
            if pred_pid == VOID_PID {
                return;
            }
            pred_pid as usize
        } else {
            BACKGROUND
        };
        self.pred[p] += 1;
        if p == g {
            self.inter[g] += 1;
        }
    }

    fn mean_iou(&self, parts: impl Iterator<Item = PartId>, universe: PartUniverse) -> f64 {
        let (mut sum, mut n) = (0.0, 0u32);
        let mut term = |slot: usize, count_empty: bool| {
            let union = self.gt[slot] + self.pred[slot] - self.inter[slot];
            if union > 0 {
                sum += self.inter[slot] as f64 / union as f64;
                n += 1;
            } else if count_empty {
                n += 1;
            }
        };
        term(BACKGROUND, false);
        for pid in parts {
            term(pid as usize, universe == PartUniverse::All);
        }
        if n == 0 {
            0.0
        } else {
            sum / f64::from(n)
        }
    }
}

/// Mean part IOU of gt segment `g` and predicted segment `p` (same class).
///
/// Inside `g ∪ p`, a pixel outside a segment's own mask is background for
/// that side. Gt pixels with part-void are left out entirely; predicted
/// part-void pixels count only toward the gt class's union. Predicted pixels
/// in the gt ignore set are removed from `p`.
#[allow(clippy::too_many_arguments)]
pub fn part_iou(
    gt: &Segmentation,
    g: usize,
    pred: &Segmentation,
    p: usize,
    gt_map: &LabelMap,
    pred_map: &LabelMap,
    spec: &DatasetSpec,
    universe: PartUniverse,
) -> f64 {
    let (g32, p32) = (g as u32, p as u32);
    let mut counts = PartCounts::new();
    let it = gt.labels().iter().zip(pred.labels()).zip(gt_map.pixels().iter().zip(pred_map.pixels()));
    for ((&gl, &pl), (gt_t, pred_t)) in it {
        let in_g = gl == g32;
        let in_p = pl == p32 && gl != IGNORED;
        if in_g || in_p {
            counts.add(in_g, in_p, gt_t.pid, pred_t.pid);
        }
    }
    let sid = gt.segments()[g].sid;
    let parts = spec.class(sid).into_iter().flat_map(|c| c.parts.iter().map(|pc| pc.pid));
    counts.mean_iou(parts, universe)
}

/// Additive per-class tally of matched, spurious and missed segments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassAccumulator {
    pub sid: SceneId,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    /// Sum of match qualities over true positives.
    pub sum_iou: f64,
}

impl ClassAccumulator {
    pub fn zero(sid: SceneId) -> Self {
        Self { sid, tp: 0, fp: 0, fn_: 0, sum_iou: 0.0 }
    }

    pub fn combine(&self, other: &Self) -> Result<Self, MetricsError> {
        if self.sid != other.sid {
            return Err(MetricsError::SidMismatch(self.sid, other.sid));
        }
        Ok(Self {
            sid: self.sid,
            tp: self.tp + other.tp,
            fp: self.fp + other.fp,
            fn_: self.fn_ + other.fn_,
            sum_iou: self.sum_iou + other.sum_iou,
        })
    }

    pub fn is_defined(&self) -> bool {
        self.tp + self.fp + self.fn_ > 0
    }
}

/// One accumulator per scene class, in spec order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccumulatorSet {
    pub classes: Vec<ClassAccumulator>,
}

impl AccumulatorSet {
    pub fn zero(spec: &DatasetSpec) -> Self {
        Self { classes: spec.scene_classes().iter().map(|c| ClassAccumulator::zero(c.sid)).collect() }
    }

    pub fn get(&self, spec: &DatasetSpec, sid: SceneId) -> Option<&ClassAccumulator> {
        spec.class_index(sid).and_then(|i| self.classes.get(i))
    }

    pub fn combine(&self, other: &Self) -> Result<Self, MetricsError> {
        if self.classes.len() != other.classes.len() {
            return Err(MetricsError::SpecMismatch);
        }
        let classes = self
            .classes
            .iter()
            .zip(&other.classes)
            .map(|(a, b)| a.combine(b))
            .collect::<Result<_, _>>()?;
        Ok(Self { classes })
    }

    fn slot(&mut self, spec: &DatasetSpec, sid: SceneId) -> &mut ClassAccumulator {
        let i = spec.class_index(sid).expect("segment of a class outside the spec");
        &mut self.classes[i]
    }

    /// Adds a match result; `quality` gives the score of each true positive.
    fn add_matches(
        &mut self,
        spec: &DatasetSpec,
        gt: &Segmentation,
        pred: &Segmentation,
        m: &MatchResult,
        quality: impl Fn(usize) -> f64,
    ) {
        for (i, pair) in m.tp.iter().enumerate() {
            let q = quality(i);
            let acc = self.slot(spec, gt.segments()[pair.gt as usize].sid);
            acc.tp += 1;
            acc.sum_iou += q;
        }
        for &g in &m.fn_ {
            self.slot(spec, gt.segments()[g as usize].sid).fn_ += 1;
        }
        for &p in &m.fp {
            self.slot(spec, pred.segments()[p as usize].sid).fp += 1;
        }
    }
}

/// Mean part IOU of every part-class true positive, from one pixel pass.
/// Returns `None` for true positives of classes without parts.
fn batch_part_iou(
    gt: &Segmentation,
    pred: &Segmentation,
    gt_map: &LabelMap,
    pred_map: &LabelMap,
    spec: &DatasetSpec,
    m: &MatchResult,
    universe: PartUniverse,
) -> Vec<Option<f64>> {
    const NONE: u32 = u32::MAX;
    let mut pair_of_gt = vec![NONE; gt.segments().len()];
    let mut pair_of_pred = vec![NONE; pred.segments().len()];
    let mut slots = Vec::new();
    let mut slot_of_tp = vec![NONE; m.tp.len()];
    for (i, pair) in m.tp.iter().enumerate() {
        if spec.has_parts(gt.segments()[pair.gt as usize].sid) {
            let s = slots.len() as u32;
            pair_of_gt[pair.gt as usize] = s;
            pair_of_pred[pair.pred as usize] = s;
            slot_of_tp[i] = s;
            slots.push(PartCounts::new());
        }
    }
    if !slots.is_empty() {
        let it = gt.labels().iter().zip(pred.labels()).zip(gt_map.pixels().iter().zip(pred_map.pixels()));
        for ((&gl, &pl), (gt_t, pred_t)) in it {
            if gl == IGNORED {
                continue;
            }
            let a = pair_of_gt[gl as usize];
            let b = if pl == IGNORED { NONE } else { pair_of_pred[pl as usize] };
            if a != NONE {
                slots[a as usize].add(true, a == b, gt_t.pid, pred_t.pid);
            }
            if b != NONE && b != a {
                slots[b as usize].add(false, true, gt_t.pid, pred_t.pid);
            }
        }
    }
    m.tp.iter()
        .zip(slot_of_tp)
        .map(|(pair, s)| {
            (s != NONE).then(|| {
                let sid = gt.segments()[pair.gt as usize].sid;
                let parts = spec.class(sid).into_iter().flat_map(|c| c.parts.iter().map(|pc| pc.pid));
                slots[s as usize].mean_iou(parts, universe)
            })
        })
        .collect()
}

/// PartPQ tallies for one image pair.
pub fn evaluate_pair(
    gt_map: &LabelMap,
    pred_map: &LabelMap,
    spec: &DatasetSpec,
    options: &EvalOptions,
) -> Result<AccumulatorSet, MetricsError> {
    gt_map.same_dimensions(pred_map)?;
    let gt = extract_segments(gt_map, spec);
    let pred = extract_segments(pred_map, spec);
    Ok(partpq_tally(&gt, &pred, gt_map, pred_map, spec, options))
}

fn partpq_tally(
    gt: &Segmentation,
    pred: &Segmentation,
    gt_map: &LabelMap,
    pred_map: &LabelMap,
    spec: &DatasetSpec,
    options: &EvalOptions,
) -> AccumulatorSet {
    let m = match_segments(gt, pred, spec, options.require_parts);
    let parts = batch_part_iou(gt, pred, gt_map, pred_map, spec, &m, options.part_universe);
    let mut acc = AccumulatorSet::zero(spec);
    acc.add_matches(spec, gt, pred, &m, |i| parts[i].unwrap_or_else(|| m.tp[i].iou()));
    acc
}

fn pq_tally(gt: &Segmentation, pred: &Segmentation, spec: &DatasetSpec) -> AccumulatorSet {
    let m = match_segments(gt, pred, spec, false);
    let mut acc = AccumulatorSet::zero(spec);
    acc.add_matches(spec, gt, pred, &m, |i| m.tp[i].iou());
    acc
}

/// Plain PQ tallies: instance IOU for every class, no part requirement.
pub fn evaluate_pq(gt_map: &LabelMap, pred_map: &LabelMap, spec: &DatasetSpec) -> Result<AccumulatorSet, MetricsError> {
    gt_map.same_dimensions(pred_map)?;
    let gt = extract_segments(gt_map, spec);
    let pred = extract_segments(pred_map, spec);
    Ok(pq_tally(&gt, &pred, spec))
}

/// Every additive quantity of one image: PartPQ and PQ tallies plus scene-
/// and part-level confusion matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageEval {
    pub partpq: AccumulatorSet,
    pub pq: AccumulatorSet,
    pub scene: ConfusionMatrix,
    pub parts: ConfusionMatrix,
}

impl ImageEval {
    pub fn zero(spec: &DatasetSpec) -> Self {
        Self {
            partpq: AccumulatorSet::zero(spec),
            pq: AccumulatorSet::zero(spec),
            scene: ConfusionMatrix::new(&scene_universe(spec)),
            parts: ConfusionMatrix::new(&part_universe(spec)),
        }
    }

    pub fn combine(&self, other: &Self) -> Result<Self, MetricsError> {
        Ok(Self {
            partpq: self.partpq.combine(&other.partpq)?,
            pq: self.pq.combine(&other.pq)?,
            scene: self.scene.combine(&other.scene)?,
            parts: self.parts.combine(&other.parts)?,
        })
    }
}

pub fn evaluate_image(
    gt_map: &LabelMap,
    pred_map: &LabelMap,
    spec: &DatasetSpec,
    options: &EvalOptions,
) -> Result<ImageEval, MetricsError> {
    gt_map.same_dimensions(pred_map)?;
    let gt = extract_segments(gt_map, spec);
    let pred = extract_segments(pred_map, spec);
    let mut scene = ConfusionMatrix::new(&scene_universe(spec));
    let mut parts = ConfusionMatrix::new(&part_universe(spec));
    for (g, p) in gt_map.pixels().iter().zip(pred_map.pixels()) {
        scene.add(u32::from(g.sid), u32::from(p.sid));
        parts.add(part_label(g.sid, g.pid), part_label(p.sid, p.pid));
    }
    Ok(ImageEval {
        partpq: partpq_tally(&gt, &pred, gt_map, pred_map, spec, options),
        pq: pq_tally(&gt, &pred, spec),
        scene,
        parts,
    })
}

/// Dense label of a `(sid, pid)` part pair; 0 when no part is set.
pub fn part_label(sid: SceneId, pid: PartId) -> u32 {
    if pid == VOID_PID {
        0
    } else {
        u32::from(sid) * 100 + u32::from(pid)
    }
}

/// Sids of evaluated scene classes.
pub fn scene_universe(spec: &DatasetSpec) -> Vec<u32> {
    spec.scene_classes().iter().filter(|c| c.evaluate).map(|c| u32::from(c.sid)).collect()
}

/// [`part_label`]s of every part of an evaluated class.
pub fn part_universe(spec: &DatasetSpec) -> Vec<u32> {
    spec.scene_classes()
        .iter()
        .filter(|c| c.evaluate)
        .flat_map(|c| c.parts.iter().map(move |p| part_label(c.sid, p.pid)))
        .collect()
}

/// Score of one class; `None` fields mean the class is undefined.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassScore {
    pub sid: SceneId,
    pub name: String,
    pub kind: ClassKind,
    pub has_parts: bool,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub defined: bool,
    pub pq: Option<f64>,
    pub sq: Option<f64>,
    pub rq: Option<f64>,
}

/// Unweighted means over the defined classes of one subset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Aggregate {
    pub pq: Option<f64>,
    pub sq: Option<f64>,
    pub rq: Option<f64>,
    pub classes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Aggregates {
    pub all: Aggregate,
    /// Classes with parts.
    pub parts: Aggregate,
    /// Classes without parts.
    pub no_parts: Aggregate,
    pub things: Aggregate,
    pub stuff: Aggregate,
}

impl Aggregates {
    /// `(row name, aggregate)` in display order.
    pub fn rows(&self) -> [(&'static str, &Aggregate); 5] {
        [
            ("All", &self.all),
            ("P", &self.parts),
            ("NP", &self.no_parts),
            ("Things", &self.things),
            ("Stuff", &self.stuff),
        ]
    }
}

/// Finalized scores: per evaluated class plus subset aggregates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricBlock {
    pub classes: Vec<ClassScore>,
    pub aggregates: Aggregates,
}

impl MetricBlock {
    pub fn class(&self, sid: SceneId) -> Option<&ClassScore> {
        self.classes.iter().find(|c| c.sid == sid)
    }
}

/// Quality, recognition and their product for one tally.
pub fn scores(acc: &ClassAccumulator) -> Option<(f64, f64, f64)> {
    if !acc.is_defined() {
        return None;
    }
    let tp = acc.tp as f64;
    let denom = tp + 0.5 * acc.fp as f64 + 0.5 * acc.fn_ as f64;
    let sq = if acc.tp == 0 { 0.0 } else { acc.sum_iou / tp };
    Some((acc.sum_iou / denom, sq, tp / denom))
}

fn aggregate<'a>(classes: impl Iterator<Item = &'a ClassScore>) -> Aggregate {
    let (mut pq, mut sq, mut rq, mut n) = (0.0, 0.0, 0.0, 0usize);
    for c in classes.filter(|c| c.defined) {
        pq += c.pq.unwrap_or(0.0);
        sq += c.sq.unwrap_or(0.0);
        rq += c.rq.unwrap_or(0.0);
        n += 1;
    }
    let mean = |s: f64| (n > 0).then(|| s / n as f64);
    Aggregate { pq: mean(pq), sq: mean(sq), rq: mean(rq), classes: n }
}

/// Per-class and subset scores of evaluated classes.
pub fn finalize(accs: &AccumulatorSet, spec: &DatasetSpec) -> MetricBlock {
    let classes: Vec<ClassScore> = spec
        .scene_classes()
        .iter()
        .zip(&accs.classes)
        .filter(|(c, _)| c.evaluate)
        .map(|(c, a)| {
            let s = scores(a);
            ClassScore {
                sid: c.sid,
                name: c.name.clone(),
                kind: c.kind,
                has_parts: c.has_parts(),
                tp: a.tp,
                fp: a.fp,
                fn_: a.fn_,
                defined: s.is_some(),
                pq: s.map(|s| s.0),
                sq: s.map(|s| s.1),
                rq: s.map(|s| s.2),
            }
        })
        .collect();
    let aggregates = Aggregates {
        all: aggregate(classes.iter()),
        parts: aggregate(classes.iter().filter(|c| c.has_parts)),
        no_parts: aggregate(classes.iter().filter(|c| !c.has_parts)),
        things: aggregate(classes.iter().filter(|c| c.kind == ClassKind::Things)),
        stuff: aggregate(classes.iter().filter(|c| c.kind == ClassKind::Stuff)),
    };
    MetricBlock { classes, aggregates }
}

/// Dense confusion counts over a fixed label universe. Gt labels outside
/// the universe are skipped; predicted labels outside it land in an extra
/// "other" column and count as misses.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    labels: Vec<u32>,
    lookup: Vec<u32>,
    counts: Vec<u64>,
}

const NOT_IN_UNIVERSE: u32 = u32::MAX;

/// One value per class of a universe, plus their mean over defined classes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassValues {
    pub classes: Vec<LabelValue>,
    pub mean: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LabelValue {
    pub label: u32,
    pub value: Option<f64>,
}

impl ConfusionMatrix {
    pub fn new(universe: &[u32]) -> Self {
        let mut labels = universe.to_vec();
        labels.sort_unstable();
        labels.dedup();
        let max = labels.last().map_or(0, |&m| m as usize);
        let mut lookup = vec![NOT_IN_UNIVERSE; max + 1];
        for (i, &l) in labels.iter().enumerate() {
            lookup[l as usize] = i as u32;
        }
        let n = labels.len();
        Self { labels, lookup, counts: vec![0; n * (n + 1)] }
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    fn index(&self, label: u32) -> u32 {
        self.lookup.get(label as usize).copied().unwrap_or(NOT_IN_UNIVERSE)
    }

    #[inline]
    pub fn add(&mut self, gt: u32, pred: u32) {
        let g = self.index(gt);
        if g == NOT_IN_UNIVERSE {
            return;
        }
        let n = self.labels.len();
        let p = self.index(pred);
        let col = if p == NOT_IN_UNIVERSE { n } else { p as usize };
        self.counts[g as usize * (n + 1) + col] += 1;
    }

    pub fn add_slices(&mut self, gt: &[u32], pred: &[u32]) -> Result<(), MetricsError> {
        if gt.len() != pred.len() {
            return Err(MetricsError::Length(gt.len(), pred.len()));
        }
        for (&g, &p) in gt.iter().zip(pred) {
            self.add(g, p);
        }
        Ok(())
    }

    pub fn count(&self, gt: u32, pred: u32) -> u64 {
        let (g, p) = (self.index(gt), self.index(pred));
        if g == NOT_IN_UNIVERSE || p == NOT_IN_UNIVERSE {
            return 0;
        }
        self.counts[g as usize * (self.labels.len() + 1) + p as usize]
    }

    pub fn combine(&self, other: &Self) -> Result<Self, MetricsError> {
        if self.labels != other.labels {
            return Err(MetricsError::SpecMismatch);
        }
        let counts = self.counts.iter().zip(&other.counts).map(|(a, b)| a + b).collect();
        Ok(Self { labels: self.labels.clone(), lookup: self.lookup.clone(), counts })
    }

    fn row_col(&self) -> (Vec<u64>, Vec<u64>) {
        let n = self.labels.len();
        let mut rows = vec![0u64; n];
        let mut cols = vec![0u64; n];
        for (row, counts) in rows.iter_mut().zip(self.counts.chunks_exact(n + 1)) {
            *row = counts.iter().sum();
            for (col, c) in cols.iter_mut().zip(counts) {
                *col += c;
            }
        }
        (rows, cols)
    }

    fn summarize(&self, value: impl Fn(usize, u64, u64, u64) -> Option<f64>, subset: Option<&[u32]>) -> ClassValues {
        let n = self.labels.len();
        let (rows, cols) = self.row_col();
        let mut classes = Vec::new();
        let (mut sum, mut k) = (0.0, 0usize);
        for (i, &label) in self.labels.iter().enumerate() {
            if subset.is_some_and(|s| !s.contains(&label)) {
                continue;
            }
            let v = value(i, self.counts[i * (n + 1) + i], rows[i], cols[i]);
            if let Some(v) = v {
                sum += v;
                k += 1;
            }
            classes.push(LabelValue { label, value: v });
        }
        ClassValues { classes, mean: (k > 0).then(|| sum / k as f64) }
    }

    /// Per-class IOU; classes absent from both gt and prediction are undefined.
    pub fn iou(&self) -> ClassValues {
        self.summarize(
            |_, tp, row, col| {
                let union = row + col - tp;
                (union > 0).then(|| tp as f64 / union as f64)
            },
            None,
        )
    }

    /// Per-class recall over `subset` (all labels when `None`); classes
    /// without gt pixels are undefined.
    pub fn pixel_accuracy(&self, subset: Option<&[u32]>) -> ClassValues {
        self.summarize(|_, tp, row, _| (row > 0).then(|| tp as f64 / row as f64), subset)
    }
}

/// Confusion-matrix mIOU over `universe`; gt pixels outside it are skipped.
pub fn semantic_miou(gt: &[u32], pred: &[u32], universe: &[u32]) -> Result<ClassValues, MetricsError> {
    let mut cm = ConfusionMatrix::new(universe);
    cm.add_slices(gt, pred)?;
    Ok(cm.iou())
}

/// Recall-style mean pixel accuracy over `subset`.
pub fn mean_pixel_accuracy(gt: &[u32], pred: &[u32], subset: &[u32]) -> Result<ClassValues, MetricsError> {
    let mut cm = ConfusionMatrix::new(subset);
    cm.add_slices(gt, pred)?;
    Ok(cm.pixel_accuracy(None))
}

/// Scene-level labels of a label map.
pub fn scene_labels(map: &LabelMap) -> Vec<SceneId> {
    map.pixels().iter().map(|t| t.sid).collect()
}

/// Projects ungrouped part labels to their scene class. Background and
/// pixels without a scene class become void.
pub fn scene_from_parts(parts: &PartPrediction) -> Result<Vec<SceneId>, MetricsError> {
    match parts.labels() {
        PartLabels::Grouped(_) => Err(MetricsError::AmbiguousSceneClass),
        PartLabels::Ungrouped => Ok(parts.values().iter().map(|&v| v / 100).collect()),
    }
}

/// Additive tallies for semantic information gain between two methods.
#[derive(Debug, Clone, PartialEq)]
pub struct SigAccumulator {
    sids: Vec<SceneId>,
    /// Per class: pixels where B is wrong, and of those where A is right.
    b_errors: Vec<(u64, u64)>,
    a_errors: Vec<(u64, u64)>,
    a: ConfusionMatrix,
    b: ConfusionMatrix,
}

impl SigAccumulator {
    pub fn zero(spec: &DatasetSpec) -> Self {
        let sids: Vec<SceneId> = spec.scene_classes().iter().map(|c| c.sid).collect();
        let universe = scene_universe(spec);
        Self {
            b_errors: vec![(0, 0); sids.len()],
            a_errors: vec![(0, 0); sids.len()],
            sids,
            a: ConfusionMatrix::new(&universe),
            b: ConfusionMatrix::new(&universe),
        }
    }

    pub fn add(&mut self, a: &[SceneId], b: &[SceneId], gt: &[SceneId], spec: &DatasetSpec) -> Result<(), MetricsError> {
        if a.len() != gt.len() {
            return Err(MetricsError::Length(a.len(), gt.len()));
        }
        if b.len() != gt.len() {
            return Err(MetricsError::Length(b.len(), gt.len()));
        }
        let mut last: Option<(SceneId, Option<usize>)> = None;
        for ((&ga, &gb), &g) in a.iter().zip(b).zip(gt) {
            self.a.add(u32::from(g), u32::from(ga));
            self.b.add(u32::from(g), u32::from(gb));
            if g == VOID_SID {
                continue;
            }
            let idx = match last {
                Some((s, i)) if s == g => i,
                _ => {
                    let i = spec.class_index(g);
                    last = Some((g, i));
                    i
                }
            };
            let Some(i) = idx else { continue };
            if gb != g {
                self.b_errors[i].0 += 1;
                self.b_errors[i].1 += u64::from(ga == g);
            }
            if ga != g {
                self.a_errors[i].0 += 1;
                self.a_errors[i].1 += u64::from(gb == g);
            }
        }
        Ok(())
    }

    pub fn combine(&self, other: &Self) -> Result<Self, MetricsError> {
        if self.sids != other.sids {
            return Err(MetricsError::SpecMismatch);
        }
        let add = |x: &[(u64, u64)], y: &[(u64, u64)]| x.iter().zip(y).map(|(p, q)| (p.0 + q.0, p.1 + q.1)).collect();
        Ok(Self {
            sids: self.sids.clone(),
            b_errors: add(&self.b_errors, &other.b_errors),
            a_errors: add(&self.a_errors, &other.a_errors),
            a: self.a.combine(&other.a)?,
            b: self.b.combine(&other.b)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SigClass {
    pub sid: SceneId,
    pub name: String,
    /// Pixels of this gt class the second method gets wrong.
    pub errors: u64,
    /// Of those, pixels the first method gets right.
    pub recovered: u64,
    /// `100 · recovered / errors`; `None` when `errors` is 0.
    pub sig: Option<f64>,
}

/// SIG in one direction over the classes with parts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SigDirection {
    pub classes: Vec<SigClass>,
    pub msig: Option<f64>,
}

/// Scene-level accuracy of one method.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodScores {
    pub mpa: Option<f64>,
    pub miou: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SigReport {
    pub a_to_b: SigDirection,
    pub b_to_a: SigDirection,
    pub a: MethodScores,
    pub b: MethodScores,
}

fn sig_direction(errors: &[(u64, u64)], spec: &DatasetSpec) -> SigDirection {
    let mut classes = Vec::new();
    let (mut sum, mut n) = (0.0, 0usize);
    for (c, &(x, hit)) in spec.scene_classes().iter().zip(errors) {
        if !c.has_parts() || !c.evaluate {
            continue;
        }
        let sig = (x > 0).then(|| 100.0 * hit as f64 / x as f64);
        if let Some(s) = sig {
            sum += s;
            n += 1;
        }
        classes.push(SigClass { sid: c.sid, name: c.name.clone(), errors: x, recovered: hit, sig });
    }
    SigDirection { classes, msig: (n > 0).then(|| sum / n as f64) }
}

pub fn finalize_sig(acc: &SigAccumulator, spec: &DatasetSpec) -> SigReport {
    let method = |cm: &ConfusionMatrix| MethodScores { mpa: cm.pixel_accuracy(None).mean, miou: cm.iou().mean };
    SigReport {
        a_to_b: sig_direction(&acc.b_errors, spec),
        b_to_a: sig_direction(&acc.a_errors, spec),
        a: method(&acc.a),
        b: method(&acc.b),
    }
}

/// Semantic information gain of method A over method B for one image.
pub fn sig(a: &[SceneId], b: &[SceneId], gt: &[SceneId], spec: &DatasetSpec) -> Result<SigReport, MetricsError> {
    let mut acc = SigAccumulator::zero(spec);
    acc.add(a, b, gt, spec)?;
    Ok(finalize_sig(&acc, spec))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::label::LabelTriple;

    const CAR: SceneId = 26;
    const ROAD: SceneId = 7;
    const WHEEL: PartId = 3;
    const CHASSIS: PartId = 1;

    fn spec() -> DatasetSpec {
        DatasetSpec::cityscapes_panoptic_parts()
    }

    #[test]
    fn worked_part_iou() {
        // pixels a..h = 0..8, x, y = 8, 9; rest road
        let mut g = vec![LabelTriple::stuff(ROAD); 12];
        let mut p = g.clone();
        for (i, t) in g.iter_mut().take(8).enumerate() {
            *t = LabelTriple::thing(CAR, 1).with_part(if i < 2 { WHEEL } else { CHASSIS });
        }
        for i in [0, 1, 2, 3, 4, 5, 8, 9] {
            p[i] = LabelTriple::thing(CAR, 1).with_part(if i == 0 { WHEEL } else { CHASSIS });
        }
        let (gm, pm) = (LabelMap::new(12, 1, g).unwrap(), LabelMap::new(12, 1, p).unwrap());
        let s = spec();
        let (gs, ps) = (extract_segments(&gm, &s), extract_segments(&pm, &s));
        let expected = (0.5 + 4.0 / 9.0 + 0.0) / 3.0;
        let v = part_iou(&gs, 1, &ps, 1, &gm, &pm, &s, PartUniverse::Present);
        assert!((v - expected).abs() < 1e-15, "{v}");
        let acc = evaluate_pair(&gm, &pm, &s, &EvalOptions::default()).unwrap();
        assert!((acc.get(&s, CAR).unwrap().sum_iou - expected).abs() < 1e-15);
        // light, window, plate are absent: 3 zero terms join the mean
        let all = part_iou(&gs, 1, &ps, 1, &gm, &pm, &s, PartUniverse::All);
        assert!((all - (0.5 + 4.0 / 9.0) / 6.0).abs() < 1e-15, "{all}");
    }

    #[test]
    fn void_prediction_scores_zero() {
        let g = vec![LabelTriple::thing(CAR, 1).with_part(WHEEL); 4];
        let p = vec![LabelTriple::thing(CAR, 1); 4];
        let (gm, pm) = (LabelMap::new(2, 2, g).unwrap(), LabelMap::new(2, 2, p).unwrap());
        let s = spec();
        let acc = evaluate_pair(&gm, &pm, &s, &EvalOptions::default()).unwrap();
        let car = acc.get(&s, CAR).unwrap();
        assert_eq!((car.tp, car.sum_iou), (1, 0.0));
    }

    #[test]
    fn finalize_arithmetic() {
        let s = spec();
        let mut acc = AccumulatorSet::zero(&s);
        let i = s.class_index(CAR).unwrap();
        acc.classes[i] = ClassAccumulator { sid: CAR, tp: 1, fp: 1, fn_: 0, sum_iou: 0.8 };
        let block = finalize(&acc, &s);
        let car = block.class(CAR).unwrap();
        assert!((car.pq.unwrap() - 0.8 / 1.5).abs() < 1e-15);
        assert!((car.sq.unwrap() - 0.8).abs() < 1e-15);
        assert!((car.rq.unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!(!block.class(ROAD).unwrap().defined);
        assert_eq!(block.aggregates.all.classes, 1);
        assert_eq!(block.aggregates.no_parts.pq, None);
    }

    #[test]
    fn combine_rejects_mismatch() {
        assert_eq!(
            ClassAccumulator::zero(1).combine(&ClassAccumulator::zero(2)),
            Err(MetricsError::SidMismatch(1, 2))
        );
    }

    #[test]
    fn miou_hand_case() {
        let v = semantic_miou(&[1, 1, 2, 2], &[1, 2, 2, 2], &[1, 2]).unwrap();
        assert_eq!(v.classes[0].value, Some(0.5));
        assert_eq!(v.classes[1].value, Some(2.0 / 3.0));
        assert!((v.mean.unwrap() - 7.0 / 12.0).abs() < 1e-15);
        // gt void (0) skipped, pred void counts as a miss
        let v = semantic_miou(&[0, 1, 1], &[1, 0, 1], &[1]).unwrap();
        assert_eq!(v.mean, Some(0.5));
    }

    #[test]
    fn pixel_accuracy() {
        let gt = [vec![1u32; 10], vec![2; 3]].concat();
        let mut pred = gt.clone();
        pred[7..10].fill(2);
        let v = mean_pixel_accuracy(&gt, &pred, &[1, 3]).unwrap();
        assert_eq!(v.classes[0].value, Some(0.7));
        assert_eq!(v.classes[1].value, None);
        assert_eq!(v.mean, Some(0.7));
    }

    #[test]
    fn sig_hand_case() {
        let s = spec();
        let gt = vec![CAR; 20];
        let mut b = gt.clone();
        b[..10].fill(ROAD);
        let mut a = b.clone();
        a[..4].fill(CAR);
        let r = sig(&a, &b, &gt, &s).unwrap();
        let car = r.a_to_b.classes.iter().find(|c| c.sid == CAR).unwrap();
        assert_eq!(car.sig, Some(40.0));
        assert_eq!(r.a_to_b.msig, Some(40.0));
        let same = sig(&b, &b, &gt, &s).unwrap();
        assert_eq!(same.a_to_b.msig, Some(0.0));
        let perfect = sig(&gt, &gt, &gt, &s).unwrap();
        assert_eq!(perfect.a_to_b.msig, None);
    }
}
