//! Per-pixel `(scene class, part, instance)` labels and the 2-D label map.

use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::spec::{DatasetSpec, PartId, SceneId, VOID_PID, VOID_SID};

pub type InstanceId = u16;
/// Largest instance id; 65535 is the planar "none" sentinel.
pub const MAX_IID: InstanceId = 65534;

/// The label of one pixel.
///
/// `pid == 0` means "no part" for classes without parts and "unlabeled part"
/// (part-void) for classes with parts. `iid == None` on a things class marks
/// a crowd region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct LabelTriple {
    pub sid: SceneId,
    pub iid: Option<InstanceId>,
    pub pid: PartId,
}

impl LabelTriple {
    pub const VOID: LabelTriple = LabelTriple { sid: VOID_SID, iid: None, pid: VOID_PID };

    pub const fn stuff(sid: SceneId) -> Self {
        Self { sid, iid: None, pid: VOID_PID }
    }

    pub const fn thing(sid: SceneId, iid: InstanceId) -> Self {
        Self { sid, iid: Some(iid), pid: VOID_PID }
    }

    pub const fn with_part(self, pid: PartId) -> Self {
        Self { pid, ..self }
    }

    pub const fn is_void(&self) -> bool {
        self.sid == VOID_SID
    }

    /// The panoptic part of the label: `(sid, iid)` with the part dropped.
    pub const fn panoptic(&self) -> Self {
        Self { pid: VOID_PID, ..*self }
    }
}

impl fmt::Display for LabelTriple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.iid {
            Some(iid) => write!(f, "({}, {}, {})", self.sid, self.pid, iid),
            None => write!(f, "({}, {}, -)", self.sid, self.pid),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MapError {
    #[error("label map must have nonzero dimensions, got {width}x{height}")]
    EmptyDimensions { width: u32, height: u32 },
    #[error("label map {width}x{height} needs {expected} pixels, got {actual}")]
    PixelCount { width: u32, height: u32, expected: usize, actual: usize },
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
}

/// Row-major grid of [`LabelTriple`]s.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    width: u32,
    height: u32,
    pixels: Vec<LabelTriple>,
}

impl LabelMap {
    pub fn new(width: u32, height: u32, pixels: Vec<LabelTriple>) -> Result<Self, MapError> {
        if width == 0 || height == 0 {
            return Err(MapError::EmptyDimensions { width, height });
        }
        let expected = width as usize * height as usize;
        if pixels.len() != expected {
            return Err(MapError::PixelCount { width, height, expected, actual: pixels.len() });
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: u32, height: u32, label: LabelTriple) -> Result<Self, MapError> {
        Self::new(width, height, vec![label; width as usize * height as usize])
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn pixels(&self) -> &[LabelTriple] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [LabelTriple] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<LabelTriple> {
        self.pixels
    }

    pub fn get(&self, x: u32, y: u32) -> LabelTriple {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, label: LabelTriple) {
        let w = self.width as usize;
        self.pixels[y as usize * w + x as usize] = label;
    }

    pub fn same_dimensions(&self, other: &LabelMap) -> Result<(), MapError> {
        if self.width != other.width || self.height != other.height {
            return Err(MapError::DimensionMismatch(self.width, self.height, other.width, other.height));
        }
        Ok(())
    }
}

/// Which label-combination rule a pixel breaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    UnknownSceneClass,
    InstanceOnStuff,
    PartOnClassWithoutParts,
    UnknownPart,
    LabelOnVoid,
    PartOnCrowd,
    Undecodable,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Rule::UnknownSceneClass => "unknown scene class",
            Rule::InstanceOnStuff => "instance on stuff",
            Rule::PartOnClassWithoutParts => "part on class without parts",
            Rule::UnknownPart => "part id not defined for its scene class",
            Rule::LabelOnVoid => "instance or part on void",
            Rule::PartOnCrowd => "part on crowd region",
            Rule::Undecodable => "undecodable value",
        })
    }
}

/// The stored value of an offending pixel, in whatever form it was read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RawPixel {
    Uid(u32),
    Planes { sem: u16, inst: u16, part: u16 },
    Triple(LabelTriple),
}

impl fmt::Display for RawPixel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RawPixel::Uid(uid) => write!(f, "uid {uid}"),
            RawPixel::Planes { sem, inst, part } => write!(f, "planes sem={sem} inst={inst} part={part}"),
            RawPixel::Triple(t) => write!(f, "label {t}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Violation {
    pub index: usize,
    pub value: RawPixel,
    pub rule: Rule,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "pixel {}: {}: {}", self.index, self.value, self.rule)
    }
}

/// Returns the first rule `t` breaks against `spec`, if any.
pub fn check_triple(t: &LabelTriple, spec: &DatasetSpec) -> Option<Rule> {
    if t.sid == VOID_SID {
        return (t.iid.is_some() || t.pid != VOID_PID).then_some(Rule::LabelOnVoid);
    }
    let Some(class) = spec.class(t.sid) else {
        return Some(Rule::UnknownSceneClass);
    };
    if t.iid.is_some() && !class.is_things() {
        return Some(Rule::InstanceOnStuff);
    }
    if t.pid != VOID_PID {
        if !class.has_parts() {
            return Some(Rule::PartOnClassWithoutParts);
        }
        if class.part(t.pid).is_none() {
            return Some(Rule::UnknownPart);
        }
        if class.is_things() && t.iid.is_none() {
            return Some(Rule::PartOnCrowd);
        }
    }
    None
}

/// Lists every pixel of `map` that is not one of the legal label combinations.
pub fn validate_map(map: &LabelMap, spec: &DatasetSpec) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut last_ok: Option<LabelTriple> = None;
    for (index, t) in map.pixels().iter().enumerate() {
        if last_ok == Some(*t) {
            continue;
        }
        match check_triple(t, spec) {
            Some(rule) => out.push(Violation { index, value: RawPixel::Triple(*t), rule }),
            None => last_ok = Some(*t),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legal_combinations() {
        let spec = DatasetSpec::cityscapes_panoptic_parts();
        let ok = [
            LabelTriple::VOID,
            LabelTriple::stuff(23),
            LabelTriple::thing(26, 3),
            LabelTriple::thing(26, 3).with_part(3),
            LabelTriple::thing(24, 0).with_part(0),
            LabelTriple::stuff(26), // crowd
        ];
        for t in ok {
            assert_eq!(check_triple(&t, &spec), None, "{t}");
        }
    }

    #[test]
    fn part_on_sky_and_instance_on_road() {
        let spec = DatasetSpec::cityscapes_panoptic_parts();
        let mut px = vec![LabelTriple::stuff(7); 16];
        px[5] = LabelTriple::stuff(23).with_part(1);
        let map = LabelMap::new(4, 4, px).unwrap();
        let v = validate_map(&map, &spec);
        assert_eq!(v.len(), 1);
        assert_eq!((v[0].index, v[0].rule), (5, Rule::PartOnClassWithoutParts));

        let mut px = vec![LabelTriple::stuff(23); 16];
        px[9] = LabelTriple::thing(7, 2);
        let v = validate_map(&LabelMap::new(4, 4, px).unwrap(), &spec);
        assert_eq!(v.len(), 1);
        assert_eq!((v[0].index, v[0].rule), (9, Rule::InstanceOnStuff));
        assert_eq!(v[0].rule.to_string(), "instance on stuff");
    }

    #[test]
    fn other_rules() {
        let spec = DatasetSpec::cityscapes_panoptic_parts();
        let cases = [
            (LabelTriple::stuff(99), Rule::UnknownSceneClass),
            (LabelTriple::thing(26, 1).with_part(6), Rule::UnknownPart),
            (LabelTriple::VOID.with_part(1), Rule::LabelOnVoid),
            (LabelTriple::stuff(26).with_part(1), Rule::PartOnCrowd),
        ];
        for (t, rule) in cases {
            assert_eq!(check_triple(&t, &spec), Some(rule), "{t}");
        }
    }

    #[test]
    fn map_construction_errors() {
        assert!(LabelMap::new(0, 3, vec![]).is_err());
        assert!(LabelMap::new(2, 2, vec![LabelTriple::VOID; 3]).is_err());
        let a = LabelMap::filled(2, 2, LabelTriple::VOID).unwrap();
        let b = LabelMap::filled(4, 1, LabelTriple::VOID).unwrap();
        assert!(a.same_dimensions(&b).is_err());
    }
}
