//! Bit-exact label encodings and label-map file formats.
//!
//! Packed form: one decimal uid per pixel.
//!
//! | label                          | uid                                  |
//! |--------------------------------|--------------------------------------|
//! | void                           | `0`                                  |
//! | `(sid, -, -)`                  | `sid` (1–2 digits)                   |
//! | `(sid, -, iid)`                | `sid·1000 + iid` (4–5 digits)        |
//! | `(sid, pid, iid)`              | `sid·100000 + iid·100 + pid` (6–7)   |
//! | `(sid, pid, -)` stuff w/ parts | `sid·100000 + pid`                   |
//!
//! Packed maps are stored as 16-bit grayscale PNG when every uid fits in 16
//! bits, otherwise as a `.u32` sidecar: `width: u32 LE`, `height: u32 LE`,
//! then `width·height` little-endian `u32` uids in row-major order.
//!
//! Planar maps are three 16-bit grayscale PNGs `<stem>_sem.png`,
//! `<stem>_inst.png`, `<stem>_part.png`; 65535 means "none". They carry
//! scene ids above 99.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::label::{
    check_triple, InstanceId, LabelMap, LabelTriple, MapError, RawPixel, Rule, Violation,
};
use crate::spec::{ClassKind, DatasetSpec, PartId, SceneId, MAX_PID, VOID_PID, VOID_SID};

pub const PACKED_MAX_SID: SceneId = 99;
pub const PACKED_MAX_IID: InstanceId = 999;
pub const MAX_UID: u32 = 9_999_999;
pub const PLANAR_NONE: u16 = u16::MAX;
const SIDECAR_HEADER: usize = 8;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("scene id {0} exceeds the packed limit of 99; use the planar format")]
    SidOutOfRange(SceneId),
    #[error("instance id {0} exceeds the packed limit of 999")]
    IidOutOfRange(InstanceId),
    #[error("part id {0} exceeds 99")]
    PidOutOfRange(PartId),
    #[error("void label {0} carries an instance or part")]
    VoidWithLabel(LabelTriple),
    #[error("uid {uid}: {reason}")]
    InvalidUid { uid: u32, reason: &'static str },
    #[error("uid {uid} decodes to {triple}: {rule}")]
    InvalidLabel { uid: u32, triple: LabelTriple, rule: Rule },
    #[error("invalid label map: {0}")]
    Violation(Violation),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error("png decode: {0}")]
    Png(String),
    #[error("unsupported png layout: {0}")]
    PngLayout(String),
    #[error("u32 sidecar: {0}")]
    Sidecar(String),
    #[error("planar planes disagree in size: {0}")]
    PlaneDimensions(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {message}", dir.display())]
    Directory { dir: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CodecError + '_ {
    move |source| CodecError::Io { path: path.to_path_buf(), source }
}

/// Packs a label into its decimal uid.
pub fn encode_uid(t: &LabelTriple) -> Result<u32, CodecError> {
    if t.sid == VOID_SID {
        if t.iid.is_some() || t.pid != VOID_PID {
            return Err(CodecError::VoidWithLabel(*t));
        }
        return Ok(0);
    }
    if t.sid > PACKED_MAX_SID {
        return Err(CodecError::SidOutOfRange(t.sid));
    }
    if t.pid > MAX_PID {
        return Err(CodecError::PidOutOfRange(t.pid));
    }
    if let Some(iid) = t.iid {
        if iid > PACKED_MAX_IID {
            return Err(CodecError::IidOutOfRange(iid));
        }
    }
    let sid = u32::from(t.sid);
    Ok(match (t.iid, t.pid) {
        (None, VOID_PID) => sid,
        (Some(iid), VOID_PID) => sid * 1000 + u32::from(iid),
        (iid, pid) => sid * 100_000 + u32::from(iid.unwrap_or(0)) * 100 + u32::from(pid),
    })
}

/// Digit layout of a uid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UidForm {
    Void,
    Scene,
    Instance,
    Part,
}

/// Splits a uid by digit layout without consulting a spec. The instance
/// digits of the 6–7 digit form are always reported as `Some`.
pub fn split_uid(uid: u32) -> Result<(LabelTriple, UidForm), CodecError> {
    let bad = |reason| Err(CodecError::InvalidUid { uid, reason });
    match uid {
        0 => Ok((LabelTriple::VOID, UidForm::Void)),
        1..=99 => Ok((LabelTriple::stuff(uid as SceneId), UidForm::Scene)),
        100..=999 => bad("3-digit uids are not a valid layout"),
        1000..=99_999 => Ok((
            LabelTriple::thing((uid / 1000) as SceneId, (uid % 1000) as InstanceId),
            UidForm::Instance,
        )),
        100_000..=MAX_UID => {
            let pid = (uid % 100) as PartId;
            if pid == VOID_PID {
                return bad("part digits are 00 in the 6-7 digit layout");
            }
            let t = LabelTriple::thing((uid / 100_000) as SceneId, ((uid / 100) % 1000) as InstanceId)
                .with_part(pid);
            Ok((t, UidForm::Part))
        }
        _ => bad("uid exceeds 9999999"),
    }
}

/// Exact inverse of [`encode_uid`], validated against `spec`.
pub fn decode_uid(uid: u32, spec: &DatasetSpec) -> Result<LabelTriple, CodecError> {
    let (mut t, form) = split_uid(uid)?;
    let kind = spec.class(t.sid).map(|c| c.kind);
    if kind == Some(ClassKind::Stuff) {
        match (form, t.iid) {
            (UidForm::Part, Some(0)) => t.iid = None,
            (UidForm::Part | UidForm::Instance, Some(_)) => {
                return Err(CodecError::InvalidLabel { uid, triple: t, rule: Rule::InstanceOnStuff })
            }
            _ => {}
        }
    }
    match check_triple(&t, spec) {
        None => Ok(t),
        Some(rule) => Err(CodecError::InvalidLabel { uid, triple: t, rule }),
    }
}

/// Map storage layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MapFormat {
    Packed,
    Planar,
}

impl FromStr for MapFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "packed" | "packed-png" => Ok(MapFormat::Packed),
            "planar" | "planar-png" => Ok(MapFormat::Planar),
            other => Err(format!("unknown map format {other:?} (expected packed or planar)")),
        }
    }
}

impl fmt::Display for MapFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MapFormat::Packed => "packed",
            MapFormat::Planar => "planar",
        })
    }
}

/// A packed map as stored: raw uids, not yet decoded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedRaster {
    pub width: u32,
    pub height: u32,
    pub uids: Vec<u32>,
}

/// A planar map as stored: three raw planes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanarRaster {
    pub width: u32,
    pub height: u32,
    pub sem: Vec<u16>,
    pub inst: Vec<u16>,
    pub part: Vec<u16>,
}

/// Either stored layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Raster {
    Packed(PackedRaster),
    Planar(PlanarRaster),
}

/// Decodes pixels with a one-entry cache; label maps are mostly long runs.
fn decode_pixels<V: Copy + PartialEq>(
    values: impl Iterator<Item = V>,
    mut decode: impl FnMut(V) -> Result<LabelTriple, Rule>,
    raw: impl Fn(V) -> RawPixel,
    mut on_violation: impl FnMut(Violation) -> bool,
) -> Vec<LabelTriple> {
    let mut out = Vec::with_capacity(values.size_hint().0);
    let mut cache: Option<(V, LabelTriple)> = None;
    for (index, v) in values.enumerate() {
        if let Some((cv, ct)) = cache {
            if cv == v {
                out.push(ct);
                continue;
            }
        }
        match decode(v) {
            Ok(t) => {
                cache = Some((v, t));
                out.push(t);
            }
            Err(rule) => {
                if !on_violation(Violation { index, value: raw(v), rule }) {
                    break;
                }
                out.push(LabelTriple::VOID);
            }
        }
    }
    out
}

fn rule_of(err: CodecError) -> Rule {
    match err {
        CodecError::InvalidLabel { rule, .. } => rule,
        _ => Rule::Undecodable,
    }
}

impl PackedRaster {
    pub fn from_map(map: &LabelMap) -> Result<Self, CodecError> {
        let mut uids = Vec::with_capacity(map.len());
        let mut cache: Option<(LabelTriple, u32)> = None;
        for t in map.pixels() {
            let uid = match cache {
                Some((ct, cu)) if ct == *t => cu,
                _ => {
                    let u = encode_uid(t)?;
                    cache = Some((*t, u));
                    u
                }
            };
            uids.push(uid);
        }
        Ok(Self { width: map.width(), height: map.height(), uids })
    }

    fn check_len(&self) -> Result<(), CodecError> {
        let expected = self.width as usize * self.height as usize;
        if self.uids.len() != expected {
            return Err(MapError::PixelCount {
                width: self.width,
                height: self.height,
                expected,
                actual: self.uids.len(),
            }
            .into());
        }
        Ok(())
    }

    pub fn to_map(&self, spec: &DatasetSpec) -> Result<LabelMap, CodecError> {
        self.check_len()?;
        let mut first = None;
        let pixels = decode_pixels(
            self.uids.iter().copied(),
            |u| decode_uid(u, spec).map_err(rule_of),
            RawPixel::Uid,
            |v| {
                first = Some(v);
                false
            },
        );
        if let Some(v) = first {
            return Err(CodecError::Violation(v));
        }
        Ok(LabelMap::new(self.width, self.height, pixels)?)
    }

    /// Every undecodable or illegal pixel; never fails.
    pub fn violations(&self, spec: &DatasetSpec) -> Vec<Violation> {
        let mut out = Vec::new();
        decode_pixels(
            self.uids.iter().copied(),
            |u| decode_uid(u, spec).map_err(rule_of),
            RawPixel::Uid,
            |v| {
                out.push(v);
                true
            },
        );
        out
    }

    pub fn max_uid(&self) -> u32 {
        self.uids.iter().copied().max().unwrap_or(0)
    }
}

fn decode_planes(sem: u16, inst: u16, part: u16, spec: &DatasetSpec) -> Result<LabelTriple, Rule> {
    if sem == PLANAR_NONE || (part != PLANAR_NONE && part > u16::from(MAX_PID)) {
        return Err(Rule::Undecodable);
    }
    let t = LabelTriple {
        sid: sem,
        iid: (inst != PLANAR_NONE).then_some(inst),
        pid: if part == PLANAR_NONE { VOID_PID } else { part as PartId },
    };
    match check_triple(&t, spec) {
        None => Ok(t),
        Some(rule) => Err(rule),
    }
}

impl PlanarRaster {
    pub fn from_map(map: &LabelMap) -> Self {
        let n = map.len();
        let (mut sem, mut inst, mut part) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
        for t in map.pixels() {
            sem.push(t.sid);
            inst.push(t.iid.unwrap_or(PLANAR_NONE));
            part.push(if t.pid == VOID_PID { PLANAR_NONE } else { u16::from(t.pid) });
        }
        Self { width: map.width(), height: map.height(), sem, inst, part }
    }

    fn check_len(&self) -> Result<(), CodecError> {
        let expected = self.width as usize * self.height as usize;
        for (name, plane) in [("sem", &self.sem), ("inst", &self.inst), ("part", &self.part)] {
            if plane.len() != expected {
                return Err(CodecError::PlaneDimensions(format!(
                    "{name} plane has {} samples, expected {expected}",
                    plane.len()
                )));
            }
        }
        Ok(())
    }

    fn triples(&self) -> impl Iterator<Item = (u16, u16, u16)> + '_ {
        self.sem
            .iter()
            .zip(&self.inst)
            .zip(&self.part)
            .map(|((&s, &i), &p)| (s, i, p))
    }

    pub fn to_map(&self, spec: &DatasetSpec) -> Result<LabelMap, CodecError> {
        self.check_len()?;
        let mut first = None;
        let pixels = decode_pixels(
            self.triples(),
            |(s, i, p)| decode_planes(s, i, p, spec),
            |(sem, inst, part)| RawPixel::Planes { sem, inst, part },
            |v| {
                first = Some(v);
                false
            },
        );
        if let Some(v) = first {
            return Err(CodecError::Violation(v));
        }
        Ok(LabelMap::new(self.width, self.height, pixels)?)
    }

    pub fn violations(&self, spec: &DatasetSpec) -> Vec<Violation> {
        let mut out = Vec::new();
        decode_pixels(
            self.triples(),
            |(s, i, p)| decode_planes(s, i, p, spec),
            |(sem, inst, part)| RawPixel::Planes { sem, inst, part },
            |v| {
                out.push(v);
                true
            },
        );
        out
    }
}

impl Raster {
    pub fn to_map(&self, spec: &DatasetSpec) -> Result<LabelMap, CodecError> {
        match self {
            Raster::Packed(r) => r.to_map(spec),
            Raster::Planar(r) => r.to_map(spec),
        }
    }

    pub fn violations(&self, spec: &DatasetSpec) -> Vec<Violation> {
        match self {
            Raster::Packed(r) => r.violations(spec),
            Raster::Planar(r) => r.violations(spec),
        }
    }
}

/// Decodes a single-channel 8- or 16-bit PNG into samples.
pub fn decode_gray_png(bytes: &[u8]) -> Result<(u32, u32, Vec<u16>), CodecError> {
    let png_err = |e: png::DecodingError| CodecError::Png(e.to_string());
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(png_err)?;
    let (color, depth) = {
        let info = reader.info();
        (info.color_type, info.bit_depth)
    };
    if color != png::ColorType::Grayscale {
        return Err(CodecError::PngLayout(format!("expected grayscale, got {color:?}")));
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| CodecError::PngLayout("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let frame = reader.next_frame(&mut buf).map_err(png_err)?;
    let (w, h) = (frame.width, frame.height);
    let n = w as usize * h as usize;
    let samples: Vec<u16> = match depth {
        png::BitDepth::Sixteen => buf[..frame.buffer_size()]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect(),
        png::BitDepth::Eight => buf[..frame.buffer_size()].iter().map(|&b| u16::from(b)).collect(),
        other => return Err(CodecError::PngLayout(format!("unsupported bit depth {other:?}"))),
    };
    if samples.len() != n {
        return Err(CodecError::PngLayout(format!("expected {n} samples, decoded {}", samples.len())));
    }
    Ok((w, h, samples))
}

/// Encodes samples as a 16-bit grayscale PNG with fixed encoder settings.
pub fn encode_gray16_png(width: u32, height: u32, samples: &[u16]) -> Result<Vec<u8>, CodecError> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width, height);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Sixteen);
        enc.set_compression(png::Compression::Fast);
        let mut writer = enc.write_header().map_err(|e| CodecError::Png(e.to_string()))?;
        let data: Vec<u8> = samples.iter().flat_map(|s| s.to_be_bytes()).collect();
        writer.write_image_data(&data).map_err(|e| CodecError::Png(e.to_string()))?;
        writer.finish().map_err(|e| CodecError::Png(e.to_string()))?;
    }
    Ok(out)
}

pub fn encode_rgb8_png(width: u32, height: u32, rgb: &[u8]) -> Result<Vec<u8>, CodecError> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width, height);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        enc.set_compression(png::Compression::Fast);
        let mut writer = enc.write_header().map_err(|e| CodecError::Png(e.to_string()))?;
        writer.write_image_data(rgb).map_err(|e| CodecError::Png(e.to_string()))?;
        writer.finish().map_err(|e| CodecError::Png(e.to_string()))?;
    }
    Ok(out)
}

pub fn decode_packed_png(bytes: &[u8]) -> Result<PackedRaster, CodecError> {
    let (width, height, samples) = decode_gray_png(bytes)?;
    Ok(PackedRaster { width, height, uids: samples.into_iter().map(u32::from).collect() })
}

pub fn decode_u32_sidecar(bytes: &[u8]) -> Result<PackedRaster, CodecError> {
    if bytes.len() < SIDECAR_HEADER {
        return Err(CodecError::Sidecar(format!("{} bytes is shorter than the header", bytes.len())));
    }
    let width = u32::from_le_bytes(bytes[0..4].try_into().unwrap());
    let height = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if width == 0 || height == 0 {
        return Err(CodecError::Sidecar(format!("empty dimensions {width}x{height}")));
    }
    let body = &bytes[SIDECAR_HEADER..];
    let expected = (width as u64) * (height as u64) * 4;
    if body.len() as u64 != expected {
        return Err(CodecError::Sidecar(format!(
            "{width}x{height} needs {expected} payload bytes, found {}",
            body.len()
        )));
    }
    let uids = body.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(PackedRaster { width, height, uids })
}

pub fn encode_u32_sidecar(raster: &PackedRaster) -> Vec<u8> {
    let mut out = Vec::with_capacity(SIDECAR_HEADER + raster.uids.len() * 4);
    out.extend_from_slice(&raster.width.to_le_bytes());
    out.extend_from_slice(&raster.height.to_le_bytes());
    for uid in &raster.uids {
        out.extend_from_slice(&uid.to_le_bytes());
    }
    out
}

pub fn decode_planar_pngs(sem: &[u8], inst: &[u8], part: &[u8]) -> Result<PlanarRaster, CodecError> {
    let (w, h, sem) = decode_gray_png(sem)?;
    let (wi, hi, inst) = decode_gray_png(inst)?;
    let (wp, hp, part) = decode_gray_png(part)?;
    if (wi, hi) != (w, h) || (wp, hp) != (w, h) {
        return Err(CodecError::PlaneDimensions(format!(
            "semantic {w}x{h}, instance {wi}x{hi}, part {wp}x{hp}"
        )));
    }
    Ok(PlanarRaster { width: w, height: h, sem, inst, part })
}

/// Encoded bytes of a packed map: `("png", bytes)` or `("u32", bytes)`.
pub fn encode_packed(map: &LabelMap) -> Result<(&'static str, Vec<u8>), CodecError> {
    let raster = PackedRaster::from_map(map)?;
    if raster.max_uid() <= u32::from(u16::MAX) {
        let samples: Vec<u16> = raster.uids.iter().map(|&u| u as u16).collect();
        Ok(("png", encode_gray16_png(raster.width, raster.height, &samples)?))
    } else {
        Ok(("u32", encode_u32_sidecar(&raster)))
    }
}

/// Encoded bytes of the three planes `[sem, inst, part]`.
pub fn encode_planar(map: &LabelMap) -> Result<[Vec<u8>; 3], CodecError> {
    let r = PlanarRaster::from_map(map);
    Ok([
        encode_gray16_png(r.width, r.height, &r.sem)?,
        encode_gray16_png(r.width, r.height, &r.inst)?,
        encode_gray16_png(r.width, r.height, &r.part)?,
    ])
}

pub const PLANAR_SUFFIXES: [&str; 3] = ["_sem.png", "_inst.png", "_part.png"];

/// The three plane files of a planar stem path (`dir/stem`).
pub fn planar_paths(stem: &Path) -> [PathBuf; 3] {
    let base = stem.as_os_str().to_string_lossy().into_owned();
    PLANAR_SUFFIXES.map(|s| PathBuf::from(format!("{base}{s}")))
}

/// Accepts `dir/stem` or `dir/stem_sem.png` (or either sibling plane).
fn planar_stem(path: &Path) -> PathBuf {
    let s = path.as_os_str().to_string_lossy();
    for suffix in PLANAR_SUFFIXES {
        if let Some(stripped) = s.strip_suffix(suffix) {
            return PathBuf::from(stripped);
        }
    }
    path.to_path_buf()
}

fn read_file(path: &Path) -> Result<Vec<u8>, CodecError> {
    std::fs::read(path).map_err(io_err(path))
}

/// Reads a stored map without decoding its labels.
pub fn read_raster(path: &Path, format: MapFormat) -> Result<Raster, CodecError> {
    match format {
        MapFormat::Packed => {
            let bytes = read_file(path)?;
            let raster = if path.extension().is_some_and(|e| e == "u32") {
                decode_u32_sidecar(&bytes)?
            } else {
                decode_packed_png(&bytes)?
            };
            Ok(Raster::Packed(raster))
        }
        MapFormat::Planar => {
            let [s, i, p] = planar_paths(&planar_stem(path));
            let raster = decode_planar_pngs(&read_file(&s)?, &read_file(&i)?, &read_file(&p)?)?;
            Ok(Raster::Planar(raster))
        }
    }
}

/// Reads and decodes a label map, failing on the first illegal pixel.
pub fn read_label_map(path: &Path, format: MapFormat, spec: &DatasetSpec) -> Result<LabelMap, CodecError> {
    read_raster(path, format)?.to_map(spec)
}

/// Writes `map` under `stem` (a path without extension) and returns the files written.
pub fn write_label_map(stem: &Path, format: MapFormat, map: &LabelMap) -> Result<Vec<PathBuf>, CodecError> {
    match format {
        MapFormat::Packed => {
            let (ext, bytes) = encode_packed(map)?;
            let base = stem.as_os_str().to_string_lossy().into_owned();
            let path = PathBuf::from(format!("{base}.{ext}"));
            std::fs::write(&path, bytes).map_err(io_err(&path))?;
            Ok(vec![path])
        }
        MapFormat::Planar => {
            let planes = encode_planar(map)?;
            let paths = planar_paths(stem);
            for (path, bytes) in paths.iter().zip(planes) {
                std::fs::write(path, bytes).map_err(io_err(path))?;
            }
            Ok(paths.to_vec())
        }
    }
}

/// Maps every stem found in `dir` to the path [`read_raster`] expects.
pub fn list_maps(dir: &Path, format: MapFormat) -> Result<BTreeMap<String, PathBuf>, CodecError> {
    let entries = std::fs::read_dir(dir).map_err(io_err(dir))?;
    let mut out = BTreeMap::new();
    for entry in entries {
        let entry = entry.map_err(io_err(dir))?;
        if !entry.file_type().map_err(io_err(dir))?.is_file() {
            continue;
        }
        let name = entry.file_name().to_string_lossy().into_owned();
        let stem = match format {
            MapFormat::Packed if PLANAR_SUFFIXES.iter().any(|s| name.ends_with(s)) => None,
            MapFormat::Packed => name
                .strip_suffix(".png")
                .or_else(|| name.strip_suffix(".u32"))
                .map(str::to_string),
            MapFormat::Planar => name.strip_suffix(PLANAR_SUFFIXES[0]).map(str::to_string),
        };
        let Some(stem) = stem else { continue };
        let path = match format {
            MapFormat::Packed => entry.path(),
            MapFormat::Planar => dir.join(&stem),
        };
        if out.insert(stem.clone(), path).is_some() {
            return Err(CodecError::Directory {
                dir: dir.to_path_buf(),
                message: format!("stem {stem:?} is stored twice (.png and .u32)"),
            });
        }
    }
    Ok(out)
}
