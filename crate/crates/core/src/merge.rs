//! Merging panoptic predictions with part predictions, and part grouping.
//!
//! A part prediction stores one 16-bit value per pixel, `0` meaning
//! background. Ungrouped values are `sid·100 + pid` (`pid` may be 0 for a
//! scene class without a part); grouped values are group ids of a
//! [`PartGrouping`]. At merge time a group id is specialized to the one part
//! of the panoptic segment's class that belongs to the group.

use thiserror::Error;

use crate::codec::{decode_gray_png, encode_gray16_png, CodecError};
use crate::label::{LabelMap, LabelTriple, MapError};
use crate::spec::{DatasetSpec, GroupId, PartGrouping, PartId, SceneId, VOID_PID, VOID_SID};

pub const PART_BACKGROUND: u16 = 0;

#[derive(Debug, Error)]
pub enum MergeError {
    #[error(transparent)]
    Dimensions(#[from] MapError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("panoptic input carries part label {label} at pixel {index}")]
    PanopticHasParts { index: usize, label: LabelTriple },
    #[error("value {value} at pixel {index} looks like a grouped part id; pass a grouping")]
    GroupedWithoutGrouping { index: usize, value: u16 },
    #[error("part value {value} at pixel {index}: {reason}")]
    InvalidValue { index: usize, value: u16, reason: String },
    #[error("group {gid} has more than one member for scene class {sid}")]
    AmbiguousGroup { gid: GroupId, sid: SceneId },
    #[error("scene class {sid} part {pid} is not covered by grouping {grouping:?}")]
    Unmapped { sid: SceneId, pid: PartId, grouping: String },
    #[error("grouping {0:?} is not the identity")]
    NotIdentity(String),
    #[error("part prediction is already grouped")]
    AlreadyGrouped,
    #[error("part prediction has {actual} values for {width}x{height}")]
    ValueCount { width: u32, height: u32, actual: usize },
}

/// How the values of a [`PartPrediction`] are to be read.
#[derive(Debug, Clone, PartialEq)]
pub enum PartLabels {
    Ungrouped,
    Grouped(PartGrouping),
}

/// Per-pixel output of a part segmentation model.
#[derive(Debug, Clone, PartialEq)]
pub struct PartPrediction {
    width: u32,
    height: u32,
    labels: PartLabels,
    values: Vec<u16>,
}

pub fn ungrouped_value(sid: SceneId, pid: PartId) -> u16 {
    sid * 100 + u16::from(pid)
}

impl PartPrediction {
    fn checked(width: u32, height: u32, labels: PartLabels, values: Vec<u16>) -> Result<Self, MergeError> {
        if width == 0 || height == 0 {
            return Err(MapError::EmptyDimensions { width, height }.into());
        }
        if values.len() != width as usize * height as usize {
            return Err(MergeError::ValueCount { width, height, actual: values.len() });
        }
        Ok(Self { width, height, labels, values })
    }

    /// Ungrouped values, checked against `spec`.
    pub fn ungrouped(width: u32, height: u32, values: Vec<u16>, spec: &DatasetSpec) -> Result<Self, MergeError> {
        let mut last_ok = None;
        for (index, &value) in values.iter().enumerate() {
            if value == PART_BACKGROUND || last_ok == Some(value) {
                continue;
            }
            if value < 100 {
                return Err(MergeError::GroupedWithoutGrouping { index, value });
            }
            let (sid, pid) = (value / 100, (value % 100) as PartId);
            let bad = |reason: String| Err(MergeError::InvalidValue { index, value, reason });
            match spec.class(sid) {
                None => return bad(format!("unknown scene class {sid}")),
                Some(c) if pid != VOID_PID && c.part(pid).is_none() => {
                    return bad(format!("part {pid} is not defined for {}", c.name))
                }
                Some(_) => last_ok = Some(value),
            }
        }
        Self::checked(width, height, PartLabels::Ungrouped, values)
    }

    /// Group ids of `grouping`.
    pub fn grouped(width: u32, height: u32, values: Vec<u16>, grouping: &PartGrouping) -> Result<Self, MergeError> {
        for (index, &value) in values.iter().enumerate() {
            if value != PART_BACKGROUND && grouping.group(value).is_none() {
                return Err(MergeError::InvalidValue {
                    index,
                    value,
                    reason: format!("no group {value} in grouping {:?}", grouping.name),
                });
            }
        }
        Self::checked(width, height, PartLabels::Grouped(grouping.clone()), values)
    }

    /// Decodes a 16-bit part PNG; grouped when `grouping` is given.
    pub fn from_png(bytes: &[u8], spec: &DatasetSpec, grouping: Option<&PartGrouping>) -> Result<Self, MergeError> {
        let (w, h, values) = decode_gray_png(bytes)?;
        match grouping {
            Some(g) => Self::grouped(w, h, values, g),
            None => Self::ungrouped(w, h, values, spec),
        }
    }

    pub fn to_png(&self) -> Result<Vec<u8>, MergeError> {
        Ok(encode_gray16_png(self.width, self.height, &self.values)?)
    }

    /// The part content of a label map as an ungrouped prediction; void
    /// pixels become background.
    pub fn from_label_map(map: &LabelMap) -> Self {
        let values = map
            .pixels()
            .iter()
            .map(|t| if t.sid == VOID_SID { PART_BACKGROUND } else { ungrouped_value(t.sid, t.pid) })
            .collect();
        Self { width: map.width(), height: map.height(), labels: PartLabels::Ungrouped, values }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn labels(&self) -> &PartLabels {
        &self.labels
    }

    pub fn values(&self) -> &[u16] {
        &self.values
    }

    pub fn is_grouped(&self) -> bool {
        matches!(self.labels, PartLabels::Grouped(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    /// Keep the panoptic label; an incompatible part becomes part-void.
    TopDown,
    /// Void the whole pixel when the part disagrees with the panoptic class.
    Conservative,
}

enum Compat {
    Part(PartId),
    Incompatible,
}

fn compatibility(labels: &PartLabels, value: u16, sid: SceneId) -> Result<Compat, MergeError> {
    if value == PART_BACKGROUND {
        return Ok(Compat::Part(VOID_PID));
    }
    match labels {
        PartLabels::Ungrouped => Ok(if value / 100 == sid {
            Compat::Part((value % 100) as PartId)
        } else {
            Compat::Incompatible
        }),
        PartLabels::Grouped(g) => {
            let mut members = g.members_for(value, sid);
            match (members.next(), members.next()) {
                (None, _) => Ok(Compat::Incompatible),
                (Some(pid), None) => Ok(Compat::Part(pid)),
                (Some(_), Some(_)) => Err(MergeError::AmbiguousGroup { gid: value, sid }),
            }
        }
    }
}

/// Adds part predictions to a panoptic map. Classes without parts, void
/// and crowd pixels are copied unchanged.
pub fn merge(
    panoptic: &LabelMap,
    parts: &PartPrediction,
    spec: &DatasetSpec,
    strategy: Strategy,
) -> Result<LabelMap, MergeError> {
    if (panoptic.width(), panoptic.height()) != (parts.width, parts.height) {
        return Err(MapError::DimensionMismatch(panoptic.width(), panoptic.height(), parts.width, parts.height).into());
    }
    let mut out = Vec::with_capacity(panoptic.len());
    let mut cache: Option<(LabelTriple, u16, LabelTriple)> = None;
    for (index, (t, &v)) in panoptic.pixels().iter().zip(&parts.values).enumerate() {
        if let Some((ct, cv, merged)) = cache {
            if ct == *t && cv == v {
                out.push(merged);
                continue;
            }
        }
        if t.pid != VOID_PID {
            return Err(MergeError::PanopticHasParts { index, label: *t });
        }
        let merged = match spec.class(t.sid) {
            Some(c) if c.has_parts() && !(c.is_things() && t.iid.is_none()) => {
                match compatibility(&parts.labels, v, t.sid)? {
                    Compat::Part(pid) => t.with_part(pid),
                    Compat::Incompatible => match strategy {
                        Strategy::TopDown => *t,
                        Strategy::Conservative => LabelTriple::VOID,
                    },
                }
            }
            _ => *t,
        };
        cache = Some((*t, v, merged));
        out.push(merged);
    }
    Ok(LabelMap::new(panoptic.width(), panoptic.height(), out)?)
}

pub fn merge_topdown(panoptic: &LabelMap, parts: &PartPrediction, spec: &DatasetSpec) -> Result<LabelMap, MergeError> {
    merge(panoptic, parts, spec, Strategy::TopDown)
}

pub fn merge_conservative(
    panoptic: &LabelMap,
    parts: &PartPrediction,
    spec: &DatasetSpec,
) -> Result<LabelMap, MergeError> {
    merge(panoptic, parts, spec, Strategy::Conservative)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RemapDirection {
    /// Replace every `(sid, pid)` with its group id.
    Group,
    /// Require an identity grouping and return the input unchanged.
    IdentityCheck,
}

/// Applies a grouping to an ungrouped prediction. An identity grouping
/// leaves the prediction unchanged in either direction. Values naming a
/// scene class without a part become background.
pub fn remap_parts(
    pred: &PartPrediction,
    grouping: &PartGrouping,
    direction: RemapDirection,
) -> Result<PartPrediction, MergeError> {
    if pred.is_grouped() {
        return Err(MergeError::AlreadyGrouped);
    }
    if grouping.is_identity() {
        return Ok(pred.clone());
    }
    if direction == RemapDirection::IdentityCheck {
        return Err(MergeError::NotIdentity(grouping.name.clone()));
    }
    let mut values = Vec::with_capacity(pred.values.len());
    let mut cache: Option<(u16, u16)> = None;
    for &v in &pred.values {
        if let Some((cv, cg)) = cache {
            if cv == v {
                values.push(cg);
                continue;
            }
        }
        let (sid, pid) = (v / 100, (v % 100) as PartId);
        let g = if v == PART_BACKGROUND || pid == VOID_PID {
            PART_BACKGROUND
        } else {
            grouping
                .gid_of(sid, pid)
                .ok_or_else(|| MergeError::Unmapped { sid, pid, grouping: grouping.name.clone() })?
        };
        cache = Some((v, g));
        values.push(g);
    }
    Ok(PartPrediction {
        width: pred.width,
        height: pred.height,
        labels: PartLabels::Grouped(grouping.clone()),
        values,
    })
}
