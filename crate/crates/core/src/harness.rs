//! Synthetic scenes, controlled prediction perturbation, a brute-force
//! reference evaluator and hand-built fixtures.
//!
//! Randomness comes from SplitMix64 seeded with the recipe seed. Integers
//! in `[0, n)` are drawn as `(u · n) >> 64` on the 128-bit product and
//! floats in `[0, 1)` as `(u >> 11) · 2⁻⁵³`, so scenes can be regenerated
//! bit-exactly from a seed by any implementation.
//!
//! The reference evaluator rescans the full image for every segment pair
//! and every part class. It does not use the segment extraction, overlap
//! table or finalization code of the fast path.

use std::collections::{BTreeMap, BTreeSet};

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::label::{validate_map, InstanceId, LabelMap, LabelTriple};
use crate::merge::{merge_conservative, merge_topdown, remap_parts, PartPrediction, RemapDirection};
use crate::metrics::{
    evaluate_pair, finalize, Aggregate, Aggregates, ClassScore, EvalOptions, MetricBlock, PartUniverse,
};
use crate::segments::{extract_segments, match_segments};
use crate::spec::{ClassKind, DatasetSpec, PartClass, PartId, SceneClass, SceneId, VOID_PID, VOID_SID};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("recipe roster references unknown scene class {0}")]
    UnknownSid(SceneId),
    #[error("invalid recipe: {0}")]
    InvalidRecipe(String),
    #[error("unknown fixture {0:?}")]
    UnknownFixture(String),
}

/// Seeded SplitMix64 with fixed integer and float reductions.
#[derive(Debug, Clone)]
pub struct Rng(SplitMix64);

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self(SplitMix64::seed_from_u64(seed))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform integer in `[0, n)`; `n` must be nonzero.
    pub fn below(&mut self, n: u64) -> u64 {
        ((u128::from(self.next_u64()) * u128::from(n)) >> 64) as u64
    }

    /// Uniform integer in `[lo, hi]`.
    pub fn range(&mut self, lo: u64, hi: u64) -> u64 {
        lo + self.below(hi - lo + 1)
    }

    /// Uniform float in `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn chance(&mut self, p: f64) -> bool {
        self.unit() < p
    }

    pub fn pick<'a, T>(&mut self, items: &'a [T]) -> &'a T {
        &items[self.below(items.len() as u64) as usize]
    }
}

/// How many regions of one class to paint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RosterEntry {
    pub sid: SceneId,
    /// Things: instance count. Stuff: rectangles of the one segment.
    pub instances: u32,
}

/// Prediction perturbations, applied in field order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    /// Per-segment probability of relabeling to another roster class.
    pub class_flip_rate: f64,
    /// Split one things instance in two.
    pub instance_split: bool,
    /// Merge two instances of one things class.
    pub instance_merge: bool,
    /// Boundary pixels copy a random label within this radius.
    pub boundary_radius: u32,
    /// Per-pixel probability of redrawing the part among `{0} ∪ parts`.
    pub part_flip_rate: f64,
    /// Per-pixel probability of becoming void.
    pub void_rate: f64,
}

impl Perturbation {
    pub const NONE: Perturbation = Perturbation {
        class_flip_rate: 0.0,
        instance_split: false,
        instance_merge: false,
        boundary_radius: 0,
        part_flip_rate: 0.0,
        void_rate: 0.0,
    };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecipe {
    pub seed: u64,
    pub width: u32,
    pub height: u32,
    pub roster: Vec<RosterEntry>,
    /// Probability that a part band of a segment is labeled.
    pub part_coverage: f64,
    /// Unlabeled-instance regions of things classes.
    #[serde(default)]
    pub crowd_regions: u32,
    /// Void rectangles in the ground truth.
    #[serde(default)]
    pub void_regions: u32,
    pub perturbation: Perturbation,
}

impl SceneRecipe {
    pub fn validate(&self, spec: &DatasetSpec) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::InvalidRecipe(m));
        if self.width < 4 || self.height < 4 {
            return bad(format!("dimensions {}x{} are below 4x4", self.width, self.height));
        }
        let p = &self.perturbation;
        for (name, v) in [
            ("part_coverage", self.part_coverage),
            ("class_flip_rate", p.class_flip_rate),
            ("part_flip_rate", p.part_flip_rate),
            ("void_rate", p.void_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} = {v} is outside [0, 1]"));
            }
        }
        for e in &self.roster {
            if spec.class(e.sid).is_none() {
                return Err(HarnessError::UnknownSid(e.sid));
            }
            if spec.is_things(e.sid) && e.instances > 999 {
                return bad(format!("{} instances of class {} exceed 999", e.instances, e.sid));
            }
        }
        Ok(())
    }
}

/// A random spec with `classes` scene classes (ids from 1), each with up to
/// `max_parts` parts, either kind. Adds one unevaluated class at random.
pub fn random_spec(seed: u64, classes: usize, max_parts: u8) -> DatasetSpec {
    let mut rng = Rng::new(seed);
    let mut scene_classes: Vec<SceneClass> = (1..=classes)
        .map(|i| {
            let kind = if rng.chance(0.5) { ClassKind::Things } else { ClassKind::Stuff };
            let n_parts = rng.below(u64::from(max_parts) + 1) as u8;
            SceneClass {
                sid: i as SceneId,
                name: format!("class{i}"),
                kind,
                evaluate: true,
                parts: (1..=n_parts).map(|p| PartClass { pid: p, name: format!("part{p}") }).collect(),
            }
        })
        .collect();
    if rng.chance(0.3) {
        let sid = classes as SceneId + 1;
        let kind = if rng.chance(0.5) { ClassKind::Things } else { ClassKind::Stuff };
        scene_classes.push(SceneClass { sid, name: "unevaluated".into(), kind, evaluate: false, parts: vec![] });
    }
    DatasetSpec::new(format!("synthetic-{seed}"), scene_classes, vec![]).expect("synthetic spec is valid")
}

/// A random recipe over every class of `spec`, with perturbation rates up
/// to `max_rate`.
pub fn random_recipe(seed: u64, spec: &DatasetSpec, min_size: u32, max_size: u32, max_rate: f64) -> SceneRecipe {
    let mut rng = Rng::new(seed ^ 0x05ee_d0f5_ce7e);
    let roster = spec
        .scene_classes()
        .iter()
        .map(|c| RosterEntry { sid: c.sid, instances: if c.is_things() { rng.range(1, 3) } else { rng.range(1, 2) } as u32 })
        .collect();
    let any_things = spec.scene_classes().iter().any(|c| c.is_things());
    let mut rate = || if rng.chance(0.25) { 0.0 } else { rng.unit() * max_rate };
    let (class_flip_rate, part_flip_rate, void_rate) = (rate(), rate(), rate() * 0.2);
    let perturbation = Perturbation {
        class_flip_rate,
        instance_split: rng.chance(0.3),
        instance_merge: rng.chance(0.3),
        boundary_radius: rng.below(3) as u32,
        part_flip_rate,
        void_rate,
    };
    SceneRecipe {
        seed,
        width: rng.range(u64::from(min_size), u64::from(max_size)) as u32,
        height: rng.range(u64::from(min_size), u64::from(max_size)) as u32,
        roster,
        part_coverage: if rng.chance(0.5) { 1.0 } else { rng.unit() },
        crowd_regions: if any_things { rng.below(2) as u32 } else { 0 },
        void_regions: rng.below(3) as u32,
        perturbation,
    }
}

#[derive(Debug, Clone, Copy)]
struct Rect {
    x0: u32,
    y0: u32,
    w: u32,
    h: u32,
}

fn random_rect(rng: &mut Rng, width: u32, height: u32) -> Rect {
    let span = |rng: &mut Rng, n: u32| rng.range(u64::from((n / 8).max(2).min(n)), u64::from((n / 2).max(2))) as u32;
    let (w, h) = (span(rng, width), span(rng, height));
    Rect { x0: rng.below(u64::from(width - w + 1)) as u32, y0: rng.below(u64::from(height - h + 1)) as u32, w, h }
}

fn paint(map: &mut LabelMap, r: Rect, t: LabelTriple) {
    for y in r.y0..r.y0 + r.h {
        for x in r.x0..r.x0 + r.w {
            map.set(x, y, t);
        }
    }
}

/// The ground truth of a recipe: rectangles painted in roster order, then
/// crowd and void rectangles, then horizontal part bands.
pub fn generate_gt(recipe: &SceneRecipe, spec: &DatasetSpec, rng: &mut Rng) -> Result<LabelMap, HarnessError> {
    recipe.validate(spec)?;
    let (w, h) = (recipe.width, recipe.height);
    let mut map = LabelMap::filled(w, h, LabelTriple::VOID).expect("nonzero dimensions");
    let mut painted: Vec<(Rect, LabelTriple)> = Vec::new();
    for e in &recipe.roster {
        let class = spec.class(e.sid).ok_or(HarnessError::UnknownSid(e.sid))?;
        for i in 0..e.instances {
            let t = if class.is_things() { LabelTriple::thing(e.sid, (i + 1) as InstanceId) } else { LabelTriple::stuff(e.sid) };
            let r = random_rect(rng, w, h);
            paint(&mut map, r, t);
            painted.push((r, t));
        }
    }
    let things: Vec<SceneId> = recipe.roster.iter().map(|e| e.sid).filter(|&s| spec.is_things(s)).collect();
    for _ in 0..recipe.crowd_regions {
        if things.is_empty() {
            break;
        }
        let sid = *rng.pick(&things);
        paint(&mut map, random_rect(rng, w, h), LabelTriple::stuff(sid));
    }
    for _ in 0..recipe.void_regions {
        let r = random_rect(rng, w, h);
        let r = Rect { w: (r.w / 2).max(1), h: (r.h / 2).max(1), ..r };
        paint(&mut map, r, LabelTriple::VOID);
    }
    for (r, t) in painted {
        let class = spec.class(t.sid).expect("roster checked");
        if !class.has_parts() {
            continue;
        }
        let bands = rng.range(1, class.parts.len() as u64 + 1) as u32;
        for b in 0..bands {
            let pid = rng.pick(&class.parts).pid;
            if !rng.chance(recipe.part_coverage) {
                continue;
            }
            let (y_start, y_end) = (r.y0 + r.h * b / bands, r.y0 + r.h * (b + 1) / bands);
            for y in y_start..y_end {
                for x in r.x0..r.x0 + r.w {
                    if map.get(x, y) == t {
                        map.set(x, y, t.with_part(pid));
                    }
                }
            }
        }
    }
    Ok(map)
}

/// Distinct values of a run-heavy sequence.
fn distinct<K: Ord + Copy>(items: impl Iterator<Item = K>) -> BTreeSet<K> {
    let mut set = BTreeSet::new();
    let mut last = None;
    for k in items {
        if last != Some(k) {
            set.insert(k);
            last = Some(k);
        }
    }
    set
}

fn segment_key(t: &LabelTriple) -> (SceneId, Option<InstanceId>) {
    (t.sid, t.iid)
}

/// Whether `t` belongs to a segment that perturbations may relabel.
fn is_segment_pixel(t: &LabelTriple, spec: &DatasetSpec) -> bool {
    t.sid != VOID_SID && !(spec.is_things(t.sid) && t.iid.is_none())
}

/// Derives a prediction from `gt` by the perturbations of `p`.
pub fn perturb(gt: &LabelMap, p: &Perturbation, roster: &[SceneId], spec: &DatasetSpec, rng: &mut Rng) -> LabelMap {
    let mut pred = gt.clone();
    let (w, h) = (gt.width(), gt.height());
    let mut next_iid: BTreeMap<SceneId, InstanceId> = BTreeMap::new();
    for t in gt.pixels() {
        if let Some(i) = t.iid {
            let e = next_iid.entry(t.sid).or_insert(0);
            *e = (*e).max(i);
        }
    }
    let mut fresh = |sid: SceneId| {
        let e = next_iid.entry(sid).or_insert(0);
        *e += 1;
        *e
    };

    if p.class_flip_rate > 0.0 && roster.len() > 1 {
        let keys = distinct(gt.pixels().iter().filter(|t| is_segment_pixel(t, spec)).map(segment_key));
        let mut relabel: BTreeMap<(SceneId, Option<InstanceId>), (SceneId, Option<InstanceId>)> = BTreeMap::new();
        for k in keys {
            if !rng.chance(p.class_flip_rate) {
                continue;
            }
            let others: Vec<SceneId> = roster.iter().copied().filter(|&s| s != k.0).collect();
            let sid = *rng.pick(&others);
            let iid = spec.is_things(sid).then(|| fresh(sid));
            relabel.insert(k, (sid, iid));
        }
        for t in pred.pixels_mut() {
            if let Some(&(sid, iid)) = relabel.get(&segment_key(t)) {
                let keep = spec.class(sid).is_some_and(|c| c.part(t.pid).is_some());
                *t = LabelTriple { sid, iid, pid: if keep { t.pid } else { VOID_PID } };
            }
        }
    }

    let instances = |m: &LabelMap| -> Vec<(SceneId, InstanceId)> {
        distinct(m.pixels().iter().filter_map(|t| t.iid.map(|i| (t.sid, i)))).into_iter().collect()
    };
    if p.instance_split {
        let all = instances(&pred);
        if !all.is_empty() {
            let (sid, iid) = *rng.pick(&all);
            let xs: Vec<u32> = (0..pred.len()).filter(|&i| pred.pixels()[i].sid == sid && pred.pixels()[i].iid == Some(iid)).map(|i| i as u32 % w).collect();
            let cut = (xs.iter().min().unwrap() + xs.iter().max().unwrap()).div_ceil(2);
            let new = fresh(sid);
            for (i, t) in pred.pixels_mut().iter_mut().enumerate() {
                if t.sid == sid && t.iid == Some(iid) && i as u32 % w >= cut {
                    t.iid = Some(new);
                }
            }
        }
    }
    if p.instance_merge {
        let all = instances(&pred);
        let pairs: Vec<((SceneId, InstanceId), (SceneId, InstanceId))> = all
            .iter()
            .flat_map(|a| all.iter().filter(move |b| b.0 == a.0 && b.1 > a.1).map(move |b| (*a, *b)))
            .collect();
        if !pairs.is_empty() {
            let (keep, gone) = *rng.pick(&pairs);
            for t in pred.pixels_mut() {
                if t.sid == gone.0 && t.iid == Some(gone.1) {
                    t.iid = Some(keep.1);
                }
            }
        }
    }

    if p.boundary_radius > 0 {
        let snapshot = pred.clone();
        let r = i64::from(p.boundary_radius);
        for y in 0..h {
            for x in 0..w {
                let here = snapshot.get(x, y).panoptic();
                let boundary = [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)].iter().any(|&(dx, dy)| {
                    let (nx, ny) = (i64::from(x) + dx, i64::from(y) + dy);
                    nx >= 0 && ny >= 0 && nx < i64::from(w) && ny < i64::from(h) && snapshot.get(nx as u32, ny as u32).panoptic() != here
                });
                if !boundary || !rng.chance(0.5) {
                    continue;
                }
                let dx = rng.below(2 * r as u64 + 1) as i64 - r;
                let dy = rng.below(2 * r as u64 + 1) as i64 - r;
                let nx = (i64::from(x) + dx).clamp(0, i64::from(w) - 1) as u32;
                let ny = (i64::from(y) + dy).clamp(0, i64::from(h) - 1) as u32;
                pred.set(x, y, snapshot.get(nx, ny));
            }
        }
    }

    if p.part_flip_rate > 0.0 {
        for t in pred.pixels_mut() {
            let Some(class) = spec.class(t.sid) else { continue };
            if !class.has_parts() || (class.is_things() && t.iid.is_none()) || !rng.chance(p.part_flip_rate) {
                continue;
            }
            let k = rng.below(class.parts.len() as u64 + 1) as usize;
            t.pid = if k == 0 { VOID_PID } else { class.parts[k - 1].pid };
        }
    }

    if p.void_rate > 0.0 {
        for t in pred.pixels_mut() {
            if rng.chance(p.void_rate) {
                *t = LabelTriple::VOID;
            }
        }
    }
    pred
}

/// Ground truth and perturbed prediction for a recipe; same recipe, same maps.
pub fn generate_scene(recipe: &SceneRecipe, spec: &DatasetSpec) -> Result<(LabelMap, LabelMap), HarnessError> {
    let mut rng = Rng::new(recipe.seed);
    let gt = generate_gt(recipe, spec, &mut rng)?;
    let roster: Vec<SceneId> = recipe.roster.iter().map(|e| e.sid).collect();
    let pred = perturb(&gt, &recipe.perturbation, &roster, spec, &mut rng);
    Ok((gt, pred))
}

/// A panoptic map and an independently perturbed ungrouped part prediction
/// of the same scene, for exercising the merge strategies.
pub fn random_merge_inputs(recipe: &SceneRecipe, spec: &DatasetSpec) -> Result<(LabelMap, PartPrediction), HarnessError> {
    let (gt, pred) = generate_scene(recipe, spec)?;
    let mut panoptic = pred;
    for t in panoptic.pixels_mut() {
        t.pid = VOID_PID;
    }
    let mut rng = Rng::new(recipe.seed.rotate_left(17) ^ 0xa11ce);
    let roster: Vec<SceneId> = recipe.roster.iter().map(|e| e.sid).collect();
    let part_view = perturb(&gt, &recipe.perturbation, &roster, spec, &mut rng);
    Ok((panoptic, PartPrediction::from_label_map(&part_view)))
}

/// Raw per-class tallies from the reference evaluator.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ReferenceCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub ignored_gt: u64,
    pub absorbed: u64,
    pub sum_iou: f64,
}

/// Reference tallies keyed by scene id.
pub type ReferenceTally = BTreeMap<SceneId, ReferenceCounts>;

/// How the reference evaluator scores a match.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReferenceMode {
    /// Part IOU for classes with parts, partless gt segments ignored.
    PartAware { universe: PartUniverse, require_parts: bool },
    /// Instance IOU everywhere, nothing ignored for lack of parts.
    Panoptic,
}

impl ReferenceMode {
    pub fn part_aware(options: &EvalOptions) -> Self {
        ReferenceMode::PartAware { universe: options.part_universe, require_parts: options.require_parts }
    }
}

fn ref_ignored(t: &LabelTriple, spec: &DatasetSpec) -> bool {
    match spec.class(t.sid) {
        None => true,
        Some(c) => !c.evaluate || (c.is_things() && t.iid.is_none()),
    }
}

fn ref_segments(map: &LabelMap, spec: &DatasetSpec) -> Vec<(SceneId, Option<InstanceId>)> {
    let set: BTreeSet<_> = map
        .pixels()
        .iter()
        .filter(|t| !ref_ignored(t, spec))
        .map(|t| (t.sid, t.iid))
        .collect();
    set.into_iter().collect()
}

#[derive(Clone, Copy, PartialEq)]
enum RefPart {
    Background,
    Part(PartId),
    Excluded,
    NoClass,
}

/// Mean part IOU of one pair by scanning the image once per part class.
fn ref_part_iou(
    gt: &LabelMap,
    pred: &LabelMap,
    g: (SceneId, Option<InstanceId>),
    p: (SceneId, Option<InstanceId>),
    spec: &DatasetSpec,
    universe: PartUniverse,
) -> f64 {
    let class_of = |x: usize| -> (RefPart, RefPart) {
        let (a, b) = (gt.pixels()[x], pred.pixels()[x]);
        let in_g = (a.sid, a.iid) == g && !ref_ignored(&a, spec);
        let in_p = (b.sid, b.iid) == p && !ref_ignored(&b, spec) && !ref_ignored(&a, spec);
        if !in_g && !in_p {
            return (RefPart::NoClass, RefPart::NoClass);
        }
        let gc = if !in_g {
            RefPart::Background
        } else if a.pid == 0 {
            RefPart::Excluded
        } else {
            RefPart::Part(a.pid)
        };
        let pc = if !in_p {
            RefPart::Background
        } else if b.pid == 0 {
            RefPart::NoClass
        } else {
            RefPart::Part(b.pid)
        };
        (gc, pc)
    };
    let mut candidates = vec![RefPart::Background];
    candidates.extend(spec.class(g.0).unwrap().parts.iter().map(|pc| RefPart::Part(pc.pid)));
    let mut terms = Vec::new();
    for c in candidates {
        let (mut inter, mut union) = (0u64, 0u64);
        for x in 0..gt.len() {
            let (gc, pc) = class_of(x);
            if gc == RefPart::Excluded || gc == RefPart::NoClass && pc == RefPart::NoClass {
                continue;
            }
            let (a, b) = (gc == c, pc == c);
            inter += u64::from(a && b);
            union += u64::from(a || b);
        }
        if union > 0 {
            terms.push(inter as f64 / union as f64);
        } else if universe == PartUniverse::All && c != RefPart::Background {
            terms.push(0.0);
        }
    }
    if terms.is_empty() {
        0.0
    } else {
        terms.iter().sum::<f64>() / terms.len() as f64
    }
}

/// Brute-force per-class tallies for one image pair.
pub fn reference_tally(gt: &LabelMap, pred: &LabelMap, spec: &DatasetSpec, mode: ReferenceMode) -> ReferenceTally {
    assert_eq!((gt.width(), gt.height()), (pred.width(), pred.height()), "dimension mismatch");
    let gsegs = ref_segments(gt, spec);
    let psegs = ref_segments(pred, spec);
    let n = gt.len();
    let count = |f: &dyn Fn(usize) -> bool| (0..n).filter(|&x| f(x)).count() as u64;
    let in_seg = |m: &LabelMap, x: usize, s: (SceneId, Option<InstanceId>)| {
        let t = m.pixels()[x];
        (t.sid, t.iid) == s && !ref_ignored(&t, spec)
    };
    let gt_ign = |x: usize| ref_ignored(&gt.pixels()[x], spec);

    let mut tally: ReferenceTally = BTreeMap::new();
    let mut pred_used = vec![false; psegs.len()];
    let mut pred_dropped = vec![false; psegs.len()];
    for &g in &gsegs {
        let has_parts = spec.has_parts(g.0);
        let labeled = count(&|x| in_seg(gt, x, g) && gt.pixels()[x].pid != 0) > 0;
        let ignore_g = matches!(mode, ReferenceMode::PartAware { require_parts: true, .. }) && has_parts && !labeled;
        let mut matched = None;
        for (j, &p) in psegs.iter().enumerate() {
            if p.0 != g.0 {
                continue;
            }
            let inter = count(&|x| in_seg(gt, x, g) && in_seg(pred, x, p));
            let ga = count(&|x| in_seg(gt, x, g));
            let pa = count(&|x| in_seg(pred, x, p) && !gt_ign(x));
            let union = ga + pa - inter;
            if union > 0 && inter as f64 / union as f64 > 0.5 {
                assert!(matched.is_none() && !pred_used[j], "segment matched twice");
                matched = Some((j, inter as f64 / union as f64));
            }
        }
        let e = tally.entry(g.0).or_default();
        match (ignore_g, matched) {
            (true, m) => {
                e.ignored_gt += 1;
                if let Some((j, _)) = m {
                    pred_used[j] = true;
                    pred_dropped[j] = true;
                }
            }
            (false, None) => e.fn_ += 1,
            (false, Some((j, iou))) => {
                pred_used[j] = true;
                e.tp += 1;
                e.sum_iou += match mode {
                    ReferenceMode::PartAware { universe, .. } if has_parts => {
                        ref_part_iou(gt, pred, g, psegs[j], spec, universe)
                    }
                    _ => iou,
                };
            }
        }
    }
    for (j, &p) in psegs.iter().enumerate() {
        if pred_used[j] {
            continue;
        }
        let area = count(&|x| in_seg(pred, x, p));
        let in_void = count(&|x| in_seg(pred, x, p) && gt_ign(x));
        let e = tally.entry(p.0).or_default();
        if in_void as f64 > 0.5 * area as f64 {
            e.absorbed += 1;
        } else {
            e.fp += 1;
        }
    }
    tally
}

/// Adds `b` into `a`.
pub fn reference_fold(a: &mut ReferenceTally, b: &ReferenceTally) {
    for (sid, c) in b {
        let e = a.entry(*sid).or_default();
        e.tp += c.tp;
        e.fp += c.fp;
        e.fn_ += c.fn_;
        e.ignored_gt += c.ignored_gt;
        e.absorbed += c.absorbed;
        e.sum_iou += c.sum_iou;
    }
}

/// Scores reference tallies, written out directly from the definitions.
pub fn reference_finalize(tally: &ReferenceTally, spec: &DatasetSpec) -> MetricBlock {
    let mut classes = Vec::new();
    for c in spec.scene_classes().iter().filter(|c| c.evaluate) {
        let k = tally.get(&c.sid).copied().unwrap_or_default();
        let defined = k.tp + k.fp + k.fn_ > 0;
        let (pq, sq, rq) = if defined {
            let denom = k.tp as f64 + k.fp as f64 / 2.0 + k.fn_ as f64 / 2.0;
            let sq = if k.tp > 0 { k.sum_iou / k.tp as f64 } else { 0.0 };
            (Some(k.sum_iou / denom), Some(sq), Some(k.tp as f64 / denom))
        } else {
            (None, None, None)
        };
        classes.push(ClassScore {
            sid: c.sid,
            name: c.name.clone(),
            kind: c.kind,
            has_parts: !c.parts.is_empty(),
            tp: k.tp,
            fp: k.fp,
            fn_: k.fn_,
            defined,
            pq,
            sq,
            rq,
        });
    }
    let mean = |keep: &dyn Fn(&ClassScore) -> bool| {
        let sel: Vec<&ClassScore> = classes.iter().filter(|c| c.defined && keep(c)).collect();
        let avg = |f: &dyn Fn(&ClassScore) -> f64| {
            (!sel.is_empty()).then(|| sel.iter().map(|c| f(c)).sum::<f64>() / sel.len() as f64)
        };
        Aggregate {
            pq: avg(&|c| c.pq.unwrap()),
            sq: avg(&|c| c.sq.unwrap()),
            rq: avg(&|c| c.rq.unwrap()),
            classes: sel.len(),
        }
    };
    let aggregates = Aggregates {
        all: mean(&|_| true),
        parts: mean(&|c| c.has_parts),
        no_parts: mean(&|c| !c.has_parts),
        things: mean(&|c| c.kind == ClassKind::Things),
        stuff: mean(&|c| c.kind == ClassKind::Stuff),
    };
    MetricBlock { classes, aggregates }
}

/// Brute-force scores for one image pair.
pub fn reference_evaluate(gt: &LabelMap, pred: &LabelMap, spec: &DatasetSpec, mode: ReferenceMode) -> MetricBlock {
    reference_finalize(&reference_tally(gt, pred, spec, mode), spec)
}

pub const FIXTURE_NAMES: [&str; 5] = ["boundary-confusion", "exact-half-iou", "void-heavy", "partless-gt", "grouped-pred"];

/// A machine-checkable expectation about a fixture.
#[derive(Debug, Clone, PartialEq)]
pub enum Fact {
    /// PartPQ matching counts of one class.
    Counts { sid: SceneId, tp: u64, fp: u64, fn_: u64, ignored_gt: u64, absorbed: u64 },
    /// PartPQ of a class.
    PartPq { sid: SceneId, value: f64 },
    /// The top-down merge of the fixture's inputs equals its gt.
    TopDownEqualsGt,
    /// PartPQ of the top-down merge exceeds the conservative merge's.
    TopDownBeatsConservative,
    /// The two merges differ on exactly these pixels.
    MergesDifferOn(Vec<usize>),
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub name: &'static str,
    pub spec: DatasetSpec,
    pub gt: LabelMap,
    pub pred: LabelMap,
    /// Merge inputs, for fixtures about merging.
    pub merge_inputs: Option<(LabelMap, PartPrediction)>,
    pub facts: Vec<Fact>,
}

const ROAD: SceneId = 7;
const SIDEWALK: SceneId = 8;
const PERSON: SceneId = 24;
const CAR: SceneId = 26;
const TORSO: PartId = 1;
const ARM: PartId = 3;
const CHASSIS: PartId = 1;
const WINDOW: PartId = 2;
const WHEEL: PartId = 3;

fn grid(w: u32, h: u32, f: impl Fn(u32, u32) -> LabelTriple) -> LabelMap {
    let px = (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).map(|(x, y)| f(x, y)).collect();
    LabelMap::new(w, h, px).expect("fixture dimensions")
}

fn in_box(x: u32, y: u32, x0: u32, y0: u32, x1: u32, y1: u32) -> bool {
    (x0..x1).contains(&x) && (y0..y1).contains(&y)
}

pub fn build_fixture(name: &str) -> Result<Fixture, HarnessError> {
    let spec = DatasetSpec::cityscapes_panoptic_parts();
    let road = LabelTriple::stuff(ROAD);
    let car = |iid| LabelTriple::thing(CAR, iid);
    let counts = |sid, tp, fp, fn_, ignored_gt, absorbed| Fact::Counts { sid, tp, fp, fn_, ignored_gt, absorbed };
    let fixture = match name {
        "exact-half-iou" => {
            // gt car {0,1,2}, pred car {1,2,3}: IOU 2/4; the backgrounds
            // disagree so nothing in the scene matches
            let sidewalk = LabelTriple::stuff(SIDEWALK);
            let gt = grid(4, 4, |x, y| if y == 0 && x < 3 { car(1).with_part(WHEEL) } else { road });
            let pred = grid(4, 4, |x, y| if y == 0 && x > 0 { car(1).with_part(WHEEL) } else { sidewalk });
            Fixture {
                name: "exact-half-iou",
                spec,
                gt,
                pred,
                merge_inputs: None,
                facts: vec![counts(CAR, 0, 1, 1, 0, 0), counts(ROAD, 0, 0, 1, 0, 0), counts(SIDEWALK, 0, 1, 0, 0, 0)],
            }
        }
        "partless-gt" => {
            let gt = grid(4, 4, |x, y| if y < 2 && x < 4 || y == 2 && x < 2 { car(1) } else { road });
            let pred = grid(4, 4, |x, y| if y < 2 && x < 4 || y == 2 && x < 1 { car(4).with_part(CHASSIS) } else { road });
            Fixture {
                name: "partless-gt",
                spec,
                gt,
                pred,
                merge_inputs: None,
                facts: vec![counts(CAR, 0, 0, 0, 1, 0)],
            }
        }
        "void-heavy" => {
            // top half void in gt; pred car 2 lies inside it
            let gt = grid(8, 8, |x, y| {
                if y < 4 {
                    LabelTriple::VOID
                } else if y >= 5 && x < 4 {
                    car(1).with_part(if y < 7 { WINDOW } else { WHEEL })
                } else {
                    road
                }
            });
            let pred = grid(8, 8, |x, y| {
                if y >= 5 && x < 4 {
                    car(1).with_part(if y < 7 { WINDOW } else { WHEEL })
                } else if y < 3 && x >= 4 || y == 4 && x == 7 {
                    car(2).with_part(CHASSIS)
                } else {
                    road
                }
            });
            Fixture {
                name: "void-heavy",
                spec,
                gt,
                pred,
                merge_inputs: None,
                facts: vec![
                    counts(CAR, 1, 0, 0, 0, 1),
                    counts(ROAD, 1, 0, 0, 0, 0),
                    Fact::PartPq { sid: CAR, value: 1.0 },
                ],
            }
        }
        "grouped-pred" => {
            let grouping = spec.grouping("grouped").expect("shipped grouping").clone();
            let person = |iid| LabelTriple::thing(PERSON, iid);
            let gt = grid(8, 4, |x, y| {
                if x < 4 && y < 3 {
                    car(1).with_part(if y < 2 { CHASSIS } else { WHEEL })
                } else if x >= 5 && y < 4 {
                    person(1).with_part(if y < 2 { TORSO } else { ARM })
                } else {
                    road
                }
            });
            let panoptic = grid(8, 4, |x, y| gt.get(x, y).panoptic());
            let values = gt
                .pixels()
                .iter()
                .map(|t| if t.pid == VOID_PID { 0 } else { grouping.gid_of(t.sid, t.pid).unwrap() })
                .collect();
            let parts = PartPrediction::grouped(8, 4, values, &grouping).expect("valid gids");
            Fixture {
                name: "grouped-pred",
                spec,
                pred: gt.clone(),
                gt,
                merge_inputs: Some((panoptic, parts)),
                facts: vec![
                    Fact::TopDownEqualsGt,
                    Fact::PartPq { sid: CAR, value: 1.0 },
                    Fact::PartPq { sid: PERSON, value: 1.0 },
                ],
            }
        }
        "boundary-confusion" => {
            // car and person 12x12 squares; the part model labels their
            // outer ring with the other class's parts
            let (w, h) = (32, 20);
            let person = |iid| LabelTriple::thing(PERSON, iid);
            let in_car = |x, y| in_box(x, y, 2, 4, 14, 16);
            let in_person = |x, y| in_box(x, y, 18, 4, 30, 16);
            let gt = grid(w, h, |x, y| {
                if in_car(x, y) {
                    car(1).with_part(if y < 10 { WINDOW } else { CHASSIS })
                } else if in_person(x, y) {
                    person(1).with_part(if y < 10 { TORSO } else { ARM })
                } else {
                    road
                }
            });
            let ring = |x, y| in_car(x, y) && !in_box(x, y, 3, 5, 13, 15) || in_person(x, y) && !in_box(x, y, 19, 5, 29, 15);
            let panoptic = grid(w, h, |x, y| gt.get(x, y).panoptic());
            let mut values = PartPrediction::from_label_map(&gt).values().to_vec();
            for y in 0..h {
                for x in 0..w {
                    if ring(x, y) {
                        values[(y * w + x) as usize] = if in_car(x, y) { PERSON * 100 + u16::from(ARM) } else { CAR * 100 + u16::from(CHASSIS) };
                    }
                }
            }
            let parts = PartPrediction::ungrouped(w, h, values, &spec).expect("valid part values");
            let ring_pixels = (0..w * h).filter(|&i| ring(i % w, i / w)).map(|i| i as usize).collect();
            let pred = merge_topdown(&panoptic, &parts, &spec).expect("consistent fixture");
            Fixture {
                name: "boundary-confusion",
                spec,
                gt,
                pred,
                merge_inputs: Some((panoptic, parts)),
                facts: vec![Fact::TopDownBeatsConservative, Fact::MergesDifferOn(ring_pixels)],
            }
        }
        other => return Err(HarnessError::UnknownFixture(other.to_string())),
    };
    Ok(fixture)
}

/// Checks every fact of a fixture with the fast evaluation path; returns
/// the first failing fact.
pub fn check_facts(f: &Fixture) -> Result<(), String> {
    let opts = EvalOptions::default();
    for fact in &f.facts {
        match fact {
            Fact::Counts { sid, tp, fp, fn_, ignored_gt, absorbed } => {
                let gt = extract_segments(&f.gt, &f.spec);
                let pred = extract_segments(&f.pred, &f.spec);
                let m = match_segments(&gt, &pred, &f.spec, opts.require_parts);
                let of_gt = |v: &[u32]| v.iter().filter(|&&i| gt.segments()[i as usize].sid == *sid).count() as u64;
                let of_pred = |v: &[u32]| v.iter().filter(|&&i| pred.segments()[i as usize].sid == *sid).count() as u64;
                let got = (
                    m.tp.iter().filter(|p| gt.segments()[p.gt as usize].sid == *sid).count() as u64,
                    of_pred(&m.fp),
                    of_gt(&m.fn_),
                    of_gt(&m.ignored_gt),
                    of_pred(&m.absorbed),
                );
                if got != (*tp, *fp, *fn_, *ignored_gt, *absorbed) {
                    return Err(format!("{}: {fact:?} but got (tp, fp, fn, ignored, absorbed) = {got:?}", f.name));
                }
            }
            Fact::PartPq { sid, value } => {
                let acc = evaluate_pair(&f.gt, &f.pred, &f.spec, &opts).map_err(|e| e.to_string())?;
                let got = finalize(&acc, &f.spec).class(*sid).and_then(|c| c.pq);
                if got != Some(*value) {
                    return Err(format!("{}: {fact:?} but got {got:?}", f.name));
                }
            }
            Fact::TopDownEqualsGt | Fact::TopDownBeatsConservative | Fact::MergesDifferOn(_) => {
                let (pan, parts) = f.merge_inputs.as_ref().ok_or_else(|| format!("{}: no merge inputs", f.name))?;
                let td = merge_topdown(pan, parts, &f.spec).map_err(|e| e.to_string())?;
                let cons = merge_conservative(pan, parts, &f.spec).map_err(|e| e.to_string())?;
                match fact {
                    Fact::TopDownEqualsGt if td != f.gt => return Err(format!("{}: top-down merge differs from gt", f.name)),
                    Fact::TopDownBeatsConservative => {
                        let score = |m: &LabelMap| -> Result<f64, String> {
                            let acc = evaluate_pair(&f.gt, m, &f.spec, &opts).map_err(|e| e.to_string())?;
                            Ok(finalize(&acc, &f.spec).aggregates.all.pq.unwrap_or(0.0))
                        };
                        let (a, b) = (score(&td)?, score(&cons)?);
                        if a <= b {
                            return Err(format!("{}: top-down {a} does not beat conservative {b}", f.name));
                        }
                    }
                    Fact::MergesDifferOn(expected) => {
                        let got: Vec<usize> = (0..td.len()).filter(|&i| td.pixels()[i] != cons.pixels()[i]).collect();
                        if &got != expected {
                            return Err(format!("{}: merges differ on {} pixels, expected {}", f.name, got.len(), expected.len()));
                        }
                    }
                    _ => {}
                }
            }
        }
    }
    Ok(())
}

/// Runs the generator validity check used by tests: both maps must be free
/// of violations.
pub fn scene_is_valid(gt: &LabelMap, pred: &LabelMap, spec: &DatasetSpec) -> bool {
    validate_map(gt, spec).is_empty() && validate_map(pred, spec).is_empty()
}

/// Applies a grouping to the part content of a map and back again through
/// the merge, for round-trip checks of grouped predictions.
pub fn grouped_view(map: &LabelMap, spec: &DatasetSpec, grouping_name: &str) -> Option<PartPrediction> {
    let grouping = spec.grouping(grouping_name).ok()?;
    remap_parts(&PartPrediction::from_label_map(map), grouping, RemapDirection::Group).ok()
}
