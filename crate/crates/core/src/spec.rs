//! Dataset specification: the scene-class universe, its stuff/things and
//! parts/no-parts partitions, per-class part vocabularies and part groupings.
//!
//! A [`DatasetSpec`] is immutable once validated and is shared by reference
//! across evaluation workers.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Scene class id. `0` is reserved for void.
pub type SceneId = u16;
/// Part id, scoped to its scene class. `0` is reserved for part-void.
pub type PartId = u8;
/// Group id inside a [`PartGrouping`]; groups are numbered from 1.
pub type GroupId = u16;

pub const VOID_SID: SceneId = 0;
pub const VOID_PID: PartId = 0;
/// Largest usable scene id; 65535 is the "none" sentinel of the planar codec.
pub const MAX_SID: SceneId = 65534;
/// Largest part id representable in the two packed decimal digits.
pub const MAX_PID: PartId = 99;

pub const CITYSCAPES_PANOPTIC_PARTS_JSON: &str = include_str!("../specs/cpp.json");
pub const PASCAL_PANOPTIC_PARTS_JSON: &str = include_str!("../specs/ppp.json");

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("malformed spec document: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid spec: {field}: {message}")]
    Invalid { field: String, message: String },
    #[error("unknown scene class id {0}")]
    UnknownSid(SceneId),
    #[error("unknown grouping {0:?}")]
    UnknownGrouping(String),
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> SpecError {
    SpecError::Invalid {
        field: field.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassKind {
    Stuff,
    Things,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartClass {
    pub pid: PartId,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneClass {
    pub sid: SceneId,
    pub name: String,
    pub kind: ClassKind,
    /// Classes with `evaluate = false` are ignore regions everywhere.
    #[serde(default = "default_true")]
    pub evaluate: bool,
    #[serde(default)]
    pub parts: Vec<PartClass>,
}

fn default_true() -> bool {
    true
}

impl SceneClass {
    pub fn is_things(&self) -> bool {
        self.kind == ClassKind::Things
    }

    pub fn has_parts(&self) -> bool {
        !self.parts.is_empty()
    }

    pub fn part(&self, pid: PartId) -> Option<&PartClass> {
        self.parts.iter().find(|p| p.pid == pid)
    }

    pub fn max_pid(&self) -> PartId {
        self.parts.iter().map(|p| p.pid).max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartGroup {
    pub gid: GroupId,
    pub name: String,
    /// `(sid, pid)` pairs collapsed into this group.
    pub members: Vec<(SceneId, PartId)>,
}

/// A many-to-one remap of `(sid, pid)` pairs onto shared part groups.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PartGrouping {
    pub name: String,
    pub groups: Vec<PartGroup>,
    #[serde(skip)]
    lookup: BTreeMap<(SceneId, PartId), GroupId>,
}

impl PartialEq for PartGrouping {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && self.groups == other.groups
    }
}

impl PartGrouping {
    /// Builds a grouping; totality is checked when it is added to a [`DatasetSpec`].
    pub fn new(name: impl Into<String>, mut groups: Vec<PartGroup>) -> Self {
        groups.sort_by_key(|g| g.gid);
        let mut grouping = Self { name: name.into(), groups, lookup: BTreeMap::new() };
        grouping.build_lookup();
        grouping
    }

    /// One group per `(sid, pid)` pair, numbered in spec order.
    pub fn identity(name: impl Into<String>, classes: &[SceneClass]) -> Self {
        let groups = classes
            .iter()
            .flat_map(|c| c.parts.iter().map(move |p| (c, p)))
            .enumerate()
            .map(|(i, (c, p))| PartGroup {
                gid: (i + 1) as GroupId,
                name: format!("{}-{}", c.name, p.name),
                members: vec![(c.sid, p.pid)],
            })
            .collect();
        Self::new(name, groups)
    }

    pub fn gid_of(&self, sid: SceneId, pid: PartId) -> Option<GroupId> {
        self.lookup.get(&(sid, pid)).copied()
    }

    pub fn group(&self, gid: GroupId) -> Option<&PartGroup> {
        // gids are contiguous from 1 after validation, but stay robust for
        // groupings constructed by hand.
        self.groups
            .get(usize::from(gid).wrapping_sub(1))
            .filter(|g| g.gid == gid)
            .or_else(|| self.groups.iter().find(|g| g.gid == gid))
    }

    /// Part ids of scene class `sid` that belong to group `gid`.
    pub fn members_for(&self, gid: GroupId, sid: SceneId) -> impl Iterator<Item = PartId> + '_ {
        self.group(gid)
            .into_iter()
            .flat_map(|g| g.members.iter())
            .filter(move |(s, _)| *s == sid)
            .map(|(_, p)| *p)
    }

    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    /// True when every group has exactly one member.
    pub fn is_identity(&self) -> bool {
        self.groups.iter().all(|g| g.members.len() == 1)
    }

    fn build_lookup(&mut self) {
        self.lookup = self
            .groups
            .iter()
            .flat_map(|g| g.members.iter().map(move |m| (*m, g.gid)))
            .collect();
    }
}

/// On-disk shape of a spec document.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct SpecDocument {
    name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    version: Option<String>,
    scene_classes: Vec<SceneClass>,
    #[serde(default)]
    groupings: Vec<PartGrouping>,
}

/// Subset memberships of one scene id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Membership<'a> {
    Void,
    Class {
        kind: ClassKind,
        has_parts: bool,
        parts: &'a [PartClass],
    },
}

const NO_CLASS: u32 = u32::MAX;

/// A validated class universe.
#[derive(Debug, Clone)]
pub struct DatasetSpec {
    name: String,
    version: Option<String>,
    scene_classes: Vec<SceneClass>,
    groupings: Vec<PartGrouping>,
    /// sid -> position in `scene_classes`.
    sid_index: Vec<u32>,
}

impl PartialEq for DatasetSpec {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.version == other.version
            && self.scene_classes == other.scene_classes
            && self.groupings == other.groupings
    }
}

impl DatasetSpec {
    /// Parses and validates a JSON spec document.
    pub fn from_json(text: &str) -> Result<Self, SpecError> {
        let doc: SpecDocument = serde_json::from_str(text)?;
        Self::build(doc.name, doc.version, doc.scene_classes, doc.groupings)
    }

    pub fn from_json_bytes(bytes: &[u8]) -> Result<Self, SpecError> {
        let doc: SpecDocument = serde_json::from_slice(bytes)?;
        Self::build(doc.name, doc.version, doc.scene_classes, doc.groupings)
    }

    /// Validates a spec assembled in code.
    pub fn new(
        name: impl Into<String>,
        scene_classes: Vec<SceneClass>,
        groupings: Vec<PartGrouping>,
    ) -> Result<Self, SpecError> {
        Self::build(name.into(), None, scene_classes, groupings)
    }

    pub fn cityscapes_panoptic_parts() -> Self {
        Self::from_json(CITYSCAPES_PANOPTIC_PARTS_JSON).expect("shipped CPP spec is valid")
    }

    pub fn pascal_panoptic_parts() -> Self {
        Self::from_json(PASCAL_PANOPTIC_PARTS_JSON).expect("shipped PPP spec is valid")
    }

    pub fn to_json(&self) -> String {
        let doc = SpecDocument {
            name: self.name.clone(),
            version: self.version.clone(),
            scene_classes: self.scene_classes.clone(),
            groupings: self.groupings.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("spec serializes")
    }

    fn build(
        name: String,
        version: Option<String>,
        scene_classes: Vec<SceneClass>,
        mut groupings: Vec<PartGrouping>,
    ) -> Result<Self, SpecError> {
        if scene_classes.is_empty() {
            return Err(invalid("scene_classes", "at least one scene class is required"));
        }
        let max_sid = scene_classes.iter().map(|c| c.sid).max().unwrap_or(0);
        let mut sid_index = vec![NO_CLASS; usize::from(max_sid) + 1];
        for (i, class) in scene_classes.iter().enumerate() {
            let field = format!("scene_classes[{i}]");
            if class.sid == VOID_SID {
                return Err(invalid(format!("{field}.sid"), "sid 0 is reserved for void"));
            }
            if class.sid > MAX_SID {
                return Err(invalid(
                    format!("{field}.sid"),
                    format!("sid {} exceeds {MAX_SID}", class.sid),
                ));
            }
            let slot = &mut sid_index[usize::from(class.sid)];
            if *slot != NO_CLASS {
                return Err(invalid(
                    format!("{field}.sid"),
                    format!("duplicate sid {}", class.sid),
                ));
            }
            *slot = i as u32;

            let mut pids = HashSet::new();
            let mut names = HashSet::new();
            for (j, part) in class.parts.iter().enumerate() {
                let pfield = format!("{field}.parts[{j}]");
                if part.pid == VOID_PID || part.pid > MAX_PID {
                    return Err(invalid(
                        format!("{pfield}.pid"),
                        format!("pid {} outside 1..={MAX_PID} (sid {})", part.pid, class.sid),
                    ));
                }
                if !pids.insert(part.pid) {
                    return Err(invalid(
                        format!("{pfield}.pid"),
                        format!("duplicate pid {} in sid {}", part.pid, class.sid),
                    ));
                }
                if !names.insert(part.name.as_str()) {
                    return Err(invalid(
                        format!("{pfield}.name"),
                        format!("duplicate part name {:?} in sid {}", part.name, class.sid),
                    ));
                }
            }
        }

        let domain: BTreeSet<(SceneId, PartId)> = scene_classes
            .iter()
            .flat_map(|c| c.parts.iter().map(move |p| (c.sid, p.pid)))
            .collect();
        let mut grouping_names = HashSet::new();
        for (gi, grouping) in groupings.iter_mut().enumerate() {
            let field = format!("groupings[{gi}]");
            if !grouping_names.insert(grouping.name.clone()) {
                return Err(invalid(
                    format!("{field}.name"),
                    format!("duplicate grouping name {:?}", grouping.name),
                ));
            }
            let gids: BTreeSet<GroupId> = grouping.groups.iter().map(|g| g.gid).collect();
            let n = grouping.groups.len();
            if gids.len() != n || gids.iter().copied().ne(1..=n as GroupId) {
                return Err(invalid(
                    format!("{field}.groups"),
                    format!("gids of grouping {:?} must be 1..={n} without repeats", grouping.name),
                ));
            }
            let mut seen = BTreeSet::new();
            for group in &grouping.groups {
                if group.members.is_empty() {
                    return Err(invalid(
                        format!("{field}.groups"),
                        format!("gid {} has no members", group.gid),
                    ));
                }
                for m in &group.members {
                    if !domain.contains(m) {
                        return Err(invalid(
                            format!("{field}.groups"),
                            format!("gid {} member ({}, {}) is not a defined part", group.gid, m.0, m.1),
                        ));
                    }
                    if !seen.insert(*m) {
                        return Err(invalid(
                            format!("{field}.groups"),
                            format!("pair ({}, {}) assigned to more than one group", m.0, m.1),
                        ));
                    }
                }
            }
            if let Some(missing) = domain.difference(&seen).next() {
                return Err(invalid(
                    format!("{field}.groups"),
                    format!(
                        "grouping {:?} is not total: ({}, {}) unmapped",
                        grouping.name, missing.0, missing.1
                    ),
                ));
            }
            grouping.groups.sort_by_key(|g| g.gid);
            grouping.build_lookup();
        }

        Ok(Self {
            name,
            version,
            scene_classes,
            groupings,
            sid_index,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn version(&self) -> Option<&str> {
        self.version.as_deref()
    }

    pub fn scene_classes(&self) -> &[SceneClass] {
        &self.scene_classes
    }

    pub fn groupings(&self) -> &[PartGrouping] {
        &self.groupings
    }

    pub fn grouping(&self, name: &str) -> Result<&PartGrouping, SpecError> {
        self.groupings
            .iter()
            .find(|g| g.name == name)
            .ok_or_else(|| SpecError::UnknownGrouping(name.to_string()))
    }

    /// Position of `sid` in [`scene_classes`](Self::scene_classes).
    #[inline]
    pub fn class_index(&self, sid: SceneId) -> Option<usize> {
        match self.sid_index.get(usize::from(sid)) {
            Some(&i) if i != NO_CLASS => Some(i as usize),
            _ => None,
        }
    }

    #[inline]
    pub fn class(&self, sid: SceneId) -> Option<&SceneClass> {
        self.class_index(sid).map(|i| &self.scene_classes[i])
    }

    pub fn max_sid(&self) -> SceneId {
        (self.sid_index.len() - 1) as SceneId
    }

    pub fn membership(&self, sid: SceneId) -> Result<Membership<'_>, SpecError> {
        if sid == VOID_SID {
            return Ok(Membership::Void);
        }
        let class = self.class(sid).ok_or(SpecError::UnknownSid(sid))?;
        Ok(Membership::Class {
            kind: class.kind,
            has_parts: class.has_parts(),
            parts: &class.parts,
        })
    }

    pub fn is_things(&self, sid: SceneId) -> bool {
        self.class(sid).is_some_and(SceneClass::is_things)
    }

    pub fn has_parts(&self, sid: SceneId) -> bool {
        self.class(sid).is_some_and(SceneClass::has_parts)
    }

    /// Every `(sid, pid)` pair of the part superset, in spec order.
    pub fn part_pairs(&self) -> impl Iterator<Item = (SceneId, PartId)> + '_ {
        self.scene_classes
            .iter()
            .flat_map(|c| c.parts.iter().map(move |p| (c.sid, p.pid)))
    }

    pub fn part_count(&self) -> usize {
        self.scene_classes.iter().map(|c| c.parts.len()).sum()
    }

    pub fn sids_with_parts(&self) -> impl Iterator<Item = SceneId> + '_ {
        self.scene_classes.iter().filter(|c| c.has_parts()).map(|c| c.sid)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stuff(sid: SceneId, name: &str) -> SceneClass {
        SceneClass {
            sid,
            name: name.into(),
            kind: ClassKind::Stuff,
            evaluate: true,
            parts: vec![],
        }
    }

    #[test]
    fn shipped_cpp_counts() {
        let spec = DatasetSpec::cityscapes_panoptic_parts();
        assert_eq!(spec.sids_with_parts().count(), 5);
        assert_eq!(spec.part_count(), 23);
        let person = spec.membership(24).unwrap();
        let Membership::Class { kind, has_parts, parts } = person else {
            panic!("person is a class")
        };
        assert_eq!(kind, ClassKind::Things);
        assert!(has_parts);
        let names: Vec<_> = parts.iter().map(|p| p.name.as_str()).collect();
        assert_eq!(names, ["torso", "head", "arm", "leg"]);
        assert_eq!(
            spec.membership(23).unwrap(),
            Membership::Class { kind: ClassKind::Stuff, has_parts: false, parts: &[] }
        );
        assert_eq!(spec.membership(0).unwrap(), Membership::Void);
        assert!(matches!(spec.membership(99), Err(SpecError::UnknownSid(99))));
    }

    #[test]
    fn shipped_ppp_counts() {
        let spec = DatasetSpec::pascal_panoptic_parts();
        let things = spec.scene_classes().iter().filter(|c| c.is_things()).count();
        let stuff = spec.scene_classes().len() - things;
        assert_eq!((things, stuff), (20, 80));
        assert_eq!(spec.part_count(), 194);
        assert_eq!(spec.sids_with_parts().count(), 16);
        assert_eq!(spec.version(), Some("0.1-transcribed"));
    }

    #[test]
    fn duplicate_sid_names_the_sid() {
        let err = DatasetSpec::new("t", vec![stuff(7, "a"), stuff(7, "b")], vec![]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("sid 7"), "{msg}");
        assert!(msg.contains("scene_classes[1].sid"), "{msg}");
    }

    #[test]
    fn rejects_void_and_bad_pids() {
        assert!(DatasetSpec::new("t", vec![stuff(0, "void")], vec![]).is_err());
        assert!(DatasetSpec::new("t", vec![], vec![]).is_err());
        let mut c = stuff(3, "x");
        c.parts = vec![PartClass { pid: 0, name: "p".into() }];
        let msg = DatasetSpec::new("t", vec![c.clone()], vec![]).unwrap_err().to_string();
        assert!(msg.contains("parts[0].pid"), "{msg}");
        c.parts = vec![
            PartClass { pid: 1, name: "p".into() },
            PartClass { pid: 2, name: "p".into() },
        ];
        assert!(DatasetSpec::new("t", vec![c], vec![]).is_err());
    }

    #[test]
    fn grouping_must_be_total() {
        let mut c = stuff(3, "x");
        c.parts = vec![
            PartClass { pid: 1, name: "a".into() },
            PartClass { pid: 2, name: "b".into() },
        ];
        let partial = PartGrouping {
            name: "g".into(),
            groups: vec![PartGroup { gid: 1, name: "a".into(), members: vec![(3, 1)] }],
            lookup: BTreeMap::new(),
        };
        let msg = DatasetSpec::new("t", vec![c.clone()], vec![partial]).unwrap_err().to_string();
        assert!(msg.contains("not total"), "{msg}");

        let gap = PartGrouping {
            name: "g".into(),
            groups: vec![
                PartGroup { gid: 1, name: "a".into(), members: vec![(3, 1)] },
                PartGroup { gid: 3, name: "b".into(), members: vec![(3, 2)] },
            ],
            lookup: BTreeMap::new(),
        };
        assert!(DatasetSpec::new("t", vec![c], vec![gap]).is_err());
    }

    #[test]
    fn malformed_json_is_parse_error() {
        assert!(matches!(DatasetSpec::from_json("{"), Err(SpecError::Parse(_))));
        assert!(matches!(
            DatasetSpec::from_json(r#"{"name":"x","scene_classes":[{"sid":1,"name":"a","kind":"blob"}]}"#),
            Err(SpecError::Parse(_))
        ));
    }

    #[test]
    fn json_round_trip() {
        for spec in [DatasetSpec::cityscapes_panoptic_parts(), DatasetSpec::pascal_panoptic_parts()] {
            let again = DatasetSpec::from_json(&spec.to_json()).unwrap();
            assert_eq!(spec, again);
        }
    }

    #[test]
    fn subsets_partition_every_class() {
        for spec in [DatasetSpec::cityscapes_panoptic_parts(), DatasetSpec::pascal_panoptic_parts()] {
            for c in spec.scene_classes() {
                let Membership::Class { kind, has_parts, .. } = spec.membership(c.sid).unwrap() else {
                    panic!()
                };
                // exactly one of stuff/things and exactly one of parts/no-parts
                assert_eq!(kind == ClassKind::Stuff, !c.is_things());
                assert_eq!(has_parts, !c.parts.is_empty());
            }
        }
    }

    #[test]
    fn groupings_are_total_by_enumeration() {
        let spec = DatasetSpec::cityscapes_panoptic_parts();
        for grouping in spec.groupings() {
            for (sid, pid) in spec.part_pairs() {
                let gid = grouping.gid_of(sid, pid).expect("total");
                assert!(grouping.members_for(gid, sid).any(|p| p == pid));
            }
        }
        let grouped = spec.grouping("grouped").unwrap();
        assert_eq!(grouped.group_count(), 9);
        assert!(!grouped.is_identity());
        assert!(spec.grouping("identity").unwrap().is_identity());
        assert_eq!(grouped.gid_of(26, 3), grouped.gid_of(28, 3));
    }
}
