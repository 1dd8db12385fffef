//! Panoptic segments and TP/FP/FN matching.
//!
//! A segment is the set of all pixels sharing one `(sid, iid)` in an image;
//! segments need not be connected. Pixels that are void, crowd, or of a class
//! with `evaluate: false` belong to no segment. In ground truth they form the
//! ignore set used by matching.

use std::collections::HashMap;

use crate::label::{InstanceId, LabelMap, LabelTriple};
use crate::spec::{DatasetSpec, SceneId, VOID_PID, VOID_SID};

/// Per-pixel label for pixels outside every segment.
pub const IGNORED: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub sid: SceneId,
    pub iid: Option<InstanceId>,
    pub area: u64,
    /// At least one pixel carries a part id.
    pub has_part_labels: bool,
}

/// The segments of one label map plus a per-pixel segment index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segmentation {
    width: u32,
    height: u32,
    labels: Vec<u32>,
    segments: Vec<Segment>,
}

impl Segmentation {
    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    /// Segment index of every pixel, or [`IGNORED`].
    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// Segments sorted by `(sid, iid)`.
    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn is_ignored(&self, pixel: usize) -> bool {
        self.labels[pixel] == IGNORED
    }

    /// Pixel indices of segment `i`.
    pub fn mask(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        let i = i as u32;
        self.labels.iter().enumerate().filter(move |(_, &l)| l == i).map(|(x, _)| x)
    }

    pub fn ignored_count(&self) -> u64 {
        self.labels.iter().filter(|&&l| l == IGNORED).count() as u64
    }
}

fn segment_key(t: &LabelTriple) -> u32 {
    (u32::from(t.sid) << 16) | t.iid.map_or(0, |i| u32::from(i) + 1)
}

/// Groups pixels by `(sid, iid)`. The map should already be validated;
/// unknown scene ids are treated like void.
pub fn extract_segments(map: &LabelMap, spec: &DatasetSpec) -> Segmentation {
    let mut index: HashMap<u32, u32> = HashMap::new();
    let mut segments: Vec<Segment> = Vec::new();
    let mut labels = Vec::with_capacity(map.len());
    let mut cache: Option<(LabelTriple, u32)> = None;
    for t in map.pixels() {
        let label = match cache {
            Some((ct, cl)) if ct == *t => cl,
            _ => {
                let l = classify(t, spec, &mut index, &mut segments);
                cache = Some((*t, l));
                l
            }
        };
        labels.push(label);
        if label != IGNORED {
            let s = &mut segments[label as usize];
            s.area += 1;
            s.has_part_labels |= t.pid != VOID_PID;
        }
    }

    let mut order: Vec<u32> = (0..segments.len() as u32).collect();
    order.sort_by_key(|&i| {
        let s = &segments[i as usize];
        (s.sid, s.iid)
    });
    let mut rank = vec![0u32; segments.len()];
    for (new, &old) in order.iter().enumerate() {
        rank[old as usize] = new as u32;
    }
    for l in &mut labels {
        if *l != IGNORED {
            *l = rank[*l as usize];
        }
    }
    let segments = order.iter().map(|&i| segments[i as usize]).collect();
    Segmentation { width: map.width(), height: map.height(), labels, segments }
}

fn classify(
    t: &LabelTriple,
    spec: &DatasetSpec,
    index: &mut HashMap<u32, u32>,
    segments: &mut Vec<Segment>,
) -> u32 {
    if t.sid == VOID_SID {
        return IGNORED;
    }
    let Some(class) = spec.class(t.sid) else {
        return IGNORED;
    };
    if !class.evaluate || (class.is_things() && t.iid.is_none()) {
        return IGNORED;
    }
    let iid = if class.is_things() { t.iid } else { None };
    *index.entry(segment_key(&LabelTriple { iid, ..*t })).or_insert_with(|| {
        segments.push(Segment { sid: t.sid, iid, area: 0, has_part_labels: false });
        (segments.len() - 1) as u32
    })
}

/// Instance IOU by a full scan of both label arrays. Predicted pixels inside
/// the ground-truth ignore set are removed from the prediction first.
pub fn instance_iou(gt: &Segmentation, g: usize, pred: &Segmentation, p: usize) -> f64 {
    let (g, p) = (g as u32, p as u32);
    let (mut inter, mut gt_area, mut pred_area) = (0u64, 0u64, 0u64);
    for (&gl, &pl) in gt.labels.iter().zip(&pred.labels) {
        let in_g = gl == g;
        let in_p = pl == p && gl != IGNORED;
        gt_area += u64::from(in_g);
        pred_area += u64::from(in_p);
        inter += u64::from(in_g && in_p);
    }
    let union = gt_area + pred_area - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// A matched ground-truth/prediction segment pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TpPair {
    pub gt: u32,
    pub pred: u32,
    pub intersection: u64,
    pub union: u64,
}

impl TpPair {
    pub fn iou(&self) -> f64 {
        self.intersection as f64 / self.union as f64
    }
}

/// Matching outcome for one image; every entry is a segment index.
///
/// `tp ∪ fn ∪ ignored_gt` partitions the gt segments and
/// `tp ∪ fp ∪ absorbed ∪ dropped` partitions the predicted segments.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MatchResult {
    pub tp: Vec<TpPair>,
    pub fp: Vec<u32>,
    pub fn_: Vec<u32>,
    /// Part-class gt segments without part labels (with `require_parts`).
    pub ignored_gt: Vec<u32>,
    /// Predictions with more than half their area in the ignore set.
    pub absorbed: Vec<u32>,
    /// Predictions matched to an ignored gt segment.
    pub dropped: Vec<u32>,
}

/// Overlap counts between same-class segment pairs, from one pass.
#[derive(Debug, Clone, Default)]
pub struct Overlaps {
    /// `((gt, pred), pixels)` sorted by key.
    pub pairs: Vec<((u32, u32), u64)>,
    /// Pixels of each predicted segment inside the gt ignore set.
    pub pred_ignored: Vec<u64>,
}

pub fn overlaps(gt: &Segmentation, pred: &Segmentation) -> Overlaps {
    assert_eq!(gt.labels.len(), pred.labels.len(), "segmentations differ in size");
    let mut table: HashMap<(u32, u32), u64> = HashMap::new();
    let mut pred_ignored = vec![0u64; pred.segments.len()];
    let mut run: Option<((u32, u32), u64)> = None;
    for (&gl, &pl) in gt.labels.iter().zip(&pred.labels) {
        if pl == IGNORED {
            continue;
        }
        if gl == IGNORED {
            pred_ignored[pl as usize] += 1;
            continue;
        }
        if gt.segments[gl as usize].sid != pred.segments[pl as usize].sid {
            continue;
        }
        match &mut run {
            Some((key, n)) if *key == (gl, pl) => *n += 1,
            _ => {
                if let Some((key, n)) = run.take() {
                    *table.entry(key).or_insert(0) += n;
                }
                run = Some(((gl, pl), 1));
            }
        }
    }
    if let Some((key, n)) = run {
        *table.entry(key).or_insert(0) += n;
    }
    let mut pairs: Vec<_> = table.into_iter().collect();
    pairs.sort_unstable_by_key(|(k, _)| *k);
    Overlaps { pairs, pred_ignored }
}

/// Matches segments of one image at IOU > 0.5.
pub fn match_segments(
    gt: &Segmentation,
    pred: &Segmentation,
    spec: &DatasetSpec,
    require_parts: bool,
) -> MatchResult {
    let ov = overlaps(gt, pred);
    let mut gt_match = vec![None; gt.segments.len()];
    let mut pred_match = vec![None; pred.segments.len()];
    let mut matches = Vec::new();
    for &((g, p), inter) in &ov.pairs {
        let union = gt.segments[g as usize].area + pred.segments[p as usize].area
            - ov.pred_ignored[p as usize]
            - inter;
        if 2 * inter > union {
            assert!(
                gt_match[g as usize].is_none() && pred_match[p as usize].is_none(),
                "segment matched twice"
            );
            gt_match[g as usize] = Some(matches.len());
            pred_match[p as usize] = Some(matches.len());
            matches.push(TpPair { gt: g, pred: p, intersection: inter, union });
        }
    }

    let mut result = MatchResult::default();
    let mut ignored = vec![false; gt.segments.len()];
    for (g, seg) in gt.segments.iter().enumerate() {
        if require_parts && !seg.has_part_labels && spec.has_parts(seg.sid) {
            ignored[g] = true;
            result.ignored_gt.push(g as u32);
        } else if gt_match[g].is_none() {
            result.fn_.push(g as u32);
        }
    }
    for m in &matches {
        if ignored[m.gt as usize] {
            result.dropped.push(m.pred);
        } else {
            result.tp.push(*m);
        }
    }
    result.dropped.sort_unstable();
    for (p, seg) in pred.segments.iter().enumerate() {
        if pred_match[p].is_some() {
            continue;
        }
        if 2 * ov.pred_ignored[p] > seg.area {
            result.absorbed.push(p as u32);
        } else {
            result.fp.push(p as u32);
        }
    }
    result
}

#[cfg(test)]
mod tests {
    use super::*;

    const ROAD: SceneId = 7;
    const CAR: SceneId = 26;

    fn spec() -> DatasetSpec {
        DatasetSpec::cityscapes_panoptic_parts()
    }

    fn map(w: u32, px: Vec<LabelTriple>) -> LabelMap {
        let h = px.len() as u32 / w;
        LabelMap::new(w, h, px).unwrap()
    }

    #[test]
    fn uniform_and_void() {
        let s = extract_segments(&LabelMap::filled(8, 8, LabelTriple::stuff(23)).unwrap(), &spec());
        assert_eq!(s.segments().len(), 1);
        assert_eq!(s.segments()[0].area, 64);
        let v = extract_segments(&LabelMap::filled(8, 8, LabelTriple::VOID).unwrap(), &spec());
        assert!(v.segments().is_empty());
        assert_eq!(v.ignored_count(), 64);
    }

    #[test]
    fn groups_by_class_and_instance() {
        let mut px = vec![LabelTriple::stuff(ROAD); 16];
        for i in [0, 1, 4, 5] {
            px[i] = LabelTriple::thing(CAR, 1);
        }
        px[15] = LabelTriple::thing(CAR, 2);
        px[10] = LabelTriple::thing(CAR, 2).with_part(3);
        let s = extract_segments(&map(4, px), &spec());
        let areas: Vec<_> = s.segments().iter().map(|s| (s.sid, s.iid, s.area)).collect();
        assert_eq!(areas, [(ROAD, None, 10), (CAR, Some(1), 4), (CAR, Some(2), 2)]);
        assert!(s.segments()[2].has_part_labels);
        assert_eq!(s.mask(2).collect::<Vec<_>>(), [10, 15]);
    }

    #[test]
    fn crowd_and_unevaluated_are_ignored() {
        // 29 has evaluate=false; bare 26 is a crowd region
        let px = vec![LabelTriple::stuff(CAR), LabelTriple::thing(29, 1), LabelTriple::stuff(1), LabelTriple::stuff(ROAD)];
        let s = extract_segments(&map(4, px), &spec());
        assert_eq!(s.segments().len(), 1);
        assert_eq!(s.ignored_count(), 3);
    }

    fn pair(gt: &[usize], pred: &[usize], void: &[usize], n: usize) -> (Segmentation, Segmentation) {
        let mut g = vec![LabelTriple::stuff(ROAD); n];
        let mut p = vec![LabelTriple::stuff(ROAD); n];
        for &i in gt {
            g[i] = LabelTriple::thing(CAR, 1);
        }
        for &i in void {
            g[i] = LabelTriple::VOID;
        }
        for &i in pred {
            p[i] = LabelTriple::thing(CAR, 5);
        }
        (extract_segments(&map(n as u32, g), &spec()), extract_segments(&map(n as u32, p), &spec()))
    }

    #[test]
    fn iou_examples() {
        let (g, p) = pair(&[0, 1, 2, 3, 4, 5, 6, 7], &[0, 1, 2, 3, 4, 5, 6, 7], &[], 16);
        assert_eq!(instance_iou(&g, 1, &p, 1), 1.0);
        let (g, p) = pair(&[0, 1, 2, 3, 4, 5, 6, 7], &[4, 5, 6, 7, 8, 9], &[], 16);
        assert_eq!(instance_iou(&g, 1, &p, 1), 0.4);
        let (g, p) = pair(&[0, 1, 2, 3, 4, 5, 6, 7], &[4, 5, 6, 7, 8, 9], &[8, 9], 16);
        assert_eq!(instance_iou(&g, 1, &p, 1), 0.5);
    }

    #[test]
    fn half_iou_is_not_a_match() {
        let (g, p) = pair(&[0, 1, 2], &[1, 2, 3], &[], 8);
        let m = match_segments(&g, &p, &spec(), false);
        // road matches road; the cars do not match
        assert_eq!(m.tp.len(), 1);
        assert_eq!(m.fp, [1]);
        assert_eq!(m.fn_, [1]);
    }

    #[test]
    fn partless_gt_is_ignored_with_its_match() {
        let (g, p) = pair(&[0, 1, 2, 3, 4, 5, 6, 7, 8, 9], &[0, 1, 2, 3, 4, 5, 6, 7, 8], &[], 16);
        let m = match_segments(&g, &p, &spec(), true);
        assert_eq!(m.ignored_gt, [1]);
        assert_eq!(m.dropped, [1]);
        assert!(m.fp.is_empty() && m.fn_.is_empty());
        assert_eq!(m.tp.len(), 1);
        let m = match_segments(&g, &p, &spec(), false);
        assert_eq!(m.tp.len(), 2);
    }

    #[test]
    fn void_absorbs_false_positives() {
        let (g, p) = pair(&[0], &[4, 5, 6], &[4, 5], 8);
        let m = match_segments(&g, &p, &spec(), false);
        assert_eq!(m.absorbed, [1]);
        assert_eq!(m.fn_, [1]);
        assert!(m.fp.is_empty());
    }
}
