//! Dataset manifest: domain types, JSON Lines load/save, invariant
//! validation, and deterministic subset sampling.
//!
//! A manifest file is UTF-8 JSON Lines. The first line is the header
//! `{"formatVersion":1,"imageRoot":"<path>"}`; every following line is one
//! record object.

use std::collections::BTreeMap;
use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instructions::check_hard_constraint;
use crate::maskops::RleMask;
use crate::projection::{CameraExtrinsics, CameraIntrinsics, ProjectionError};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("duplicate record id {0:?}")]
    DuplicateId(String),
    #[error("unsupported manifest format version {0}")]
    UnsupportedVersion(u32),
    #[error("missing header line")]
    MissingHeader,
    #[error("sample of {requested} exceeds {available} available records")]
    SampleTooLarge { requested: usize, available: usize },
}

/// Category name plus aliases, all lowercase and trimmed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoryLabel {
    name: String,
    aliases: Vec<String>,
}

impl CategoryLabel {
    pub fn new(
        name: impl Into<String>,
        aliases: impl IntoIterator<Item = String>,
    ) -> Result<Self, String> {
        let name = name.into();
        let aliases: Vec<String> = aliases.into_iter().collect();
        Self::check(&name, &aliases)?;
        Ok(CategoryLabel { name, aliases })
    }

    fn check(name: &str, aliases: &[String]) -> Result<(), String> {
        if name.is_empty() {
            return Err("category name is empty".into());
        }
        for s in std::iter::once(name).chain(aliases.iter().map(String::as_str)) {
            if s.trim() != s {
                return Err(format!("category token {s:?} has surrounding whitespace"));
            }
            if s.to_lowercase() != s {
                return Err(format!("category token {s:?} is not lowercase"));
            }
        }
        if aliases.iter().any(|a| a == name) {
            return Err(format!("aliases contain the category name {name:?}"));
        }
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn aliases(&self) -> &[String] {
        &self.aliases
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainTag {
    Wild,
    Robot,
    Ego,
    Simulation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, Default,
)]
#[serde(rename_all = "lowercase")]
pub enum ReasoningKind {
    #[default]
    None,
    Template,
    Easy,
    Hard,
}

/// Train/val membership plus the Table-4-style zero-shot and reasoning flags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct SplitTag {
    pub split: Split,
    pub zero_shot_category: bool,
    pub zero_shot_domain: bool,
    pub reasoning_kind: ReasoningKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InstructionKind {
    Template,
    Easy,
    Hard,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstructionSpec {
    pub kind: InstructionKind,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProvenanceTool {
    OriginalMask,
    Segmenter,
    GroundingSegmenter,
    PartGroundingSegmenter,
    Human,
    HumanSegmenter,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceTag {
    pub tool: ProvenanceTool,
    #[serde(default)]
    pub detail: String,
}

/// Camera parameters as stored in the manifest `camera` object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraSpec {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Row-major 4x4 camera-to-world transform.
    pub extrinsics: [f64; 16],
}

impl CameraSpec {
    pub fn intrinsics(&self) -> Result<CameraIntrinsics, ProjectionError> {
        CameraIntrinsics::new(self.fx, self.fy, self.cx, self.cy)
    }

    pub fn extrinsics(&self) -> Result<CameraExtrinsics, ProjectionError> {
        CameraExtrinsics::from_row_major(&self.extrinsics)
    }
}

/// One image/instruction/mask sample. Field names mirror the JSON Lines
/// record schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffordanceRecord {
    pub id: String,
    #[serde(rename = "image")]
    pub image_path: String,
    #[serde(rename = "depth", skip_serializing_if = "Option::is_none", default)]
    pub depth_path: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub camera: Option<CameraSpec>,
    pub category: String,
    #[serde(default)]
    pub aliases: Vec<String>,
    pub domain: DomainTag,
    pub split: Split,
    #[serde(rename = "zeroShotCategory", default)]
    pub zero_shot_category: bool,
    #[serde(rename = "zeroShotDomain", default)]
    pub zero_shot_domain: bool,
    #[serde(rename = "reasoningKind", default)]
    pub reasoning_kind: ReasoningKind,
    #[serde(rename = "instructionKind")]
    pub instruction_kind: InstructionKind,
    pub instruction: String,
    pub mask: RleMask,
    /// Absent until the annotation cascade has produced the mask.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub provenance: Option<ProvenanceTag>,
}

impl AffordanceRecord {
    pub fn category_label(&self) -> Result<CategoryLabel, String> {
        CategoryLabel::new(self.category.clone(), self.aliases.iter().cloned())
    }

    pub fn split_tag(&self) -> SplitTag {
        SplitTag {
            split: self.split,
            zero_shot_category: self.zero_shot_category,
            zero_shot_domain: self.zero_shot_domain,
            reasoning_kind: self.reasoning_kind,
        }
    }

    pub fn instruction_spec(&self) -> InstructionSpec {
        InstructionSpec {
            kind: self.instruction_kind,
            text: self.instruction.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    #[serde(rename = "formatVersion")]
    pub format_version: u32,
    #[serde(rename = "imageRoot")]
    pub image_root: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub header: ManifestHeader,
    pub records: Vec<AffordanceRecord>,
}

impl DatasetManifest {
    pub fn new(image_root: impl Into<String>) -> Self {
        DatasetManifest {
            header: ManifestHeader {
                format_version: FORMAT_VERSION,
                image_root: image_root.into(),
            },
            records: Vec::new(),
        }
    }
}

/// Parses a JSON Lines manifest, preserving record order. Blank lines are
/// rejected (every line must be a JSON object).
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest, ManifestError> {
    let text = fs::read_to_string(path)?;
    load_manifest_str(&text)
}

pub fn load_manifest_str(text: &str) -> Result<DatasetManifest, ManifestError> {
    let mut lines = text.lines().enumerate();
    let (_, header_line) = lines.next().ok_or(ManifestError::MissingHeader)?;
    let header: ManifestHeader =
        serde_json::from_str(header_line).map_err(|e| ManifestError::Parse {
            line: 1,
            reason: format!("bad header: {e}"),
        })?;
    if header.format_version != FORMAT_VERSION {
        return Err(ManifestError::UnsupportedVersion(header.format_version));
    }
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in lines {
        let rec: AffordanceRecord = serde_json::from_str(line).map_err(|e| ManifestError::Parse {
            line: i + 1,
            reason: e.to_string(),
        })?;
        if !seen.insert(rec.id.clone()) {
            return Err(ManifestError::DuplicateId(rec.id));
        }
        records.push(rec);
    }
    Ok(DatasetManifest { header, records })
}

pub fn manifest_to_string(m: &DatasetManifest) -> String {
    let mut out = serde_json::to_string(&m.header).expect("header serializes");
    out.push('\n');
    for rec in &m.records {
        out.push_str(&serde_json::to_string(rec).expect("record serializes"));
        out.push('\n');
    }
    out
}

/// Serializes via a temp file then renames, so readers never see a partial
/// manifest.
pub fn save_manifest(m: &DatasetManifest, path: impl AsRef<Path>) -> Result<(), ManifestError> {
    write_atomic(path.as_ref(), manifest_to_string(m).as_bytes())?;
    Ok(())
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let tmp = dir.join(format!(
        ".{}.tmp-{}",
        path.file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "out".into()),
        std::process::id()
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    #[serde(rename = "recordId", skip_serializing_if = "Option::is_none")]
    pub record_id: Option<String>,
    pub check: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, record_id: Option<&str>, check: &str, message: String) {
        self.violations.push(Violation {
            record_id: record_id.map(str::to_owned),
            check: check.to_string(),
            message,
        });
    }
}

/// Checks every type invariant; violations are data, not errors. Strict mode
/// additionally resolves files under `imageRoot`: existence, and the image
/// dimensions (header-only read) must match the mask size.
pub fn validate_manifest(m: &DatasetManifest, strict: bool) -> ValidationReport {
    let mut report = ValidationReport::default();
    if m.header.format_version != FORMAT_VERSION {
        report.push(
            None,
            "formatVersion",
            format!("formatVersion {} != {FORMAT_VERSION}", m.header.format_version),
        );
    }
    let mut seen = HashSet::new();
    for rec in &m.records {
        let id = Some(rec.id.as_str());
        if !seen.insert(&rec.id) {
            report.push(id, "uniqueId", format!("duplicate id {:?}", rec.id));
        }
        let category = match rec.category_label() {
            Ok(c) => Some(c),
            Err(e) => {
                report.push(id, "categoryLabel", e);
                None
            }
        };
        if rec.split == Split::Train && (rec.zero_shot_category || rec.zero_shot_domain) {
            report.push(
                id,
                "splitTag",
                "zero-shot flags set on a train-split record".into(),
            );
        }
        if rec.instruction.is_empty() {
            report.push(id, "instruction", "instruction text is empty".into());
        }
        if rec.instruction_kind == InstructionKind::Hard {
            if let Some(cat) = &category {
                if let Some(token) = check_hard_constraint(&rec.instruction, cat) {
                    report.push(
                        id,
                        "check_hard_constraint",
                        format!("hard instruction contains category token {token:?}"),
                    );
                }
            }
        }
        if let Err(e) = rec.mask.validate() {
            report.push(id, "maskRle", e.to_string());
        }
        if let Some(cam) = &rec.camera {
            if let Err(e) = cam.intrinsics() {
                report.push(id, "cameraIntrinsics", e.to_string());
            }
            if let Err(e) = cam.extrinsics() {
                report.push(id, "cameraExtrinsics", e.to_string());
            }
        }
        if strict {
            let root = PathBuf::from(&m.header.image_root);
            let img = root.join(&rec.image_path);
            if !img.is_file() {
                report.push(id, "fileExists", format!("image {} not found", img.display()));
            } else {
                match image::image_dimensions(&img) {
                    Ok((w, h)) => {
                        if (rec.mask.height(), rec.mask.width()) != (h, w) {
                            report.push(
                                id,
                                "maskImageSize",
                                format!(
                                    "mask size {}x{} != image size {}x{} (h x w)",
                                    rec.mask.height(),
                                    rec.mask.width(),
                                    h,
                                    w
                                ),
                            );
                        }
                    }
                    Err(e) => {
                        report.push(id, "imageReadable", format!("{}: {e}", img.display()))
                    }
                }
            }
            if let Some(depth) = &rec.depth_path {
                let d = root.join(depth);
                if !d.is_file() {
                    report.push(id, "fileExists", format!("depth {} not found", d.display()));
                }
            }
        }
    }
    report
}

/// SplitMix64: the sampling PRNG. Fixed here so subset selection reproduces
/// bit-for-bit across implementations.
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E3779B97F4A7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^ (z >> 31)
    }

    /// Uniform draw in [0, bound) via rejection of the biased tail.
    pub fn next_below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0);
        let zone = u64::MAX - (u64::MAX % bound);
        loop {
            let v = self.next_u64();
            if v < zone {
                return v % bound;
            }
        }
    }
}

/// Draws `n` records without replacement via a partial Fisher-Yates shuffle
/// over indices, then restores the original relative order. Deterministic in
/// (manifest, n, seed).
pub fn sample_subset(
    m: &DatasetManifest,
    n: usize,
    seed: u64,
) -> Result<DatasetManifest, ManifestError> {
    let len = m.records.len();
    if n > len {
        return Err(ManifestError::SampleTooLarge {
            requested: n,
            available: len,
        });
    }
    let mut rng = SplitMix64::new(seed);
    let mut idx: Vec<usize> = (0..len).collect();
    for i in 0..n {
        let j = i + rng.next_below((len - i) as u64) as usize;
        idx.swap(i, j);
    }
    let mut chosen: Vec<usize> = idx[..n].to_vec();
    chosen.sort_unstable();
    Ok(DatasetManifest {
        header: m.header.clone(),
        records: chosen.into_iter().map(|i| m.records[i].clone()).collect(),
    })
}

/// Per-category / per-domain / per-instruction-kind record counts.
#[derive(Debug, Default, Serialize)]
pub struct ManifestStats {
    pub records: usize,
    #[serde(rename = "perCategory")]
    pub per_category: BTreeMap<String, usize>,
    #[serde(rename = "perDomain")]
    pub per_domain: BTreeMap<String, usize>,
    #[serde(rename = "perInstructionKind")]
    pub per_instruction_kind: BTreeMap<String, usize>,
    #[serde(rename = "perSplit")]
    pub per_split: BTreeMap<String, usize>,
}

pub fn manifest_stats(m: &DatasetManifest) -> ManifestStats {
    let mut stats = ManifestStats {
        records: m.records.len(),
        ..Default::default()
    };
    for rec in &m.records {
        *stats.per_category.entry(rec.category.clone()).or_default() += 1;
        let domain = serde_json::to_value(rec.domain).unwrap();
        *stats
            .per_domain
            .entry(domain.as_str().unwrap().to_string())
            .or_default() += 1;
        let kind = serde_json::to_value(rec.instruction_kind).unwrap();
        *stats
            .per_instruction_kind
            .entry(kind.as_str().unwrap().to_string())
            .or_default() += 1;
        let split = serde_json::to_value(rec.split).unwrap();
        *stats
            .per_split
            .entry(split.as_str().unwrap().to_string())
            .or_default() += 1;
    }
    stats
}

#[cfg(test)]
pub(crate) mod test_fixtures {
    use super::*;

    /// A minimal valid record over an all-one h x w mask.
    pub fn record(id: &str, category: &str, h: u32, w: u32) -> AffordanceRecord {
        AffordanceRecord {
            id: id.to_string(),
            image_path: format!("{id}.png"),
            depth_path: None,
            camera: None,
            category: category.to_string(),
            aliases: vec![],
            domain: DomainTag::Wild,
            split: Split::Val,
            zero_shot_category: false,
            zero_shot_domain: false,
            reasoning_kind: ReasoningKind::None,
            instruction_kind: InstructionKind::Template,
            instruction: format!("Please segment the affordance map of {category} in this image"),
            mask: RleMask {
                size: (h, w),
                counts: vec![0, u64::from(h) * u64::from(w)],
            },
            provenance: Some(ProvenanceTag {
                tool: ProvenanceTool::OriginalMask,
                detail: String::new(),
            }),
        }
    }

    pub fn manifest_with(records: Vec<AffordanceRecord>) -> DatasetManifest {
        DatasetManifest {
            header: ManifestHeader {
                format_version: FORMAT_VERSION,
                image_root: ".".into(),
            },
            records,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::test_fixtures::{manifest_with, record};
    use super::*;

    const HEADER: &str = r#"{"formatVersion":1,"imageRoot":"data"}"#;

    #[test]
    fn load_header_only() {
        let m = load_manifest_str(HEADER).unwrap();
        assert_eq!(m.records.len(), 0);
        assert_eq!(m.header.image_root, "data");
    }

    #[test]
    fn load_one_record_field_by_field() {
        let line = r#"{"id":"r1","image":"img/r1.png","depth":"depth/r1.png","camera":{"fx":500.0,"fy":500.0,"cx":320.0,"cy":240.0,"extrinsics":[1,0,0,0,0,1,0,0,0,0,1,0,0,0,0,1]},"category":"mug","aliases":["cup"],"domain":"wild","split":"val","zeroShotCategory":false,"zeroShotDomain":false,"reasoningKind":"hard","instructionKind":"hard","instruction":"I need something to drink coffee","mask":{"size":[2,2],"counts":[0,4]},"provenance":{"tool":"original_mask","detail":""}}"#;
        let m = load_manifest_str(&format!("{HEADER}\n{line}\n")).unwrap();
        assert_eq!(m.records.len(), 1);
        let r = &m.records[0];
        assert_eq!(r.id, "r1");
        assert_eq!(r.image_path, "img/r1.png");
        assert_eq!(r.depth_path.as_deref(), Some("depth/r1.png"));
        assert_eq!(r.camera.as_ref().unwrap().fx, 500.0);
        assert_eq!(r.category, "mug");
        assert_eq!(r.aliases, vec!["cup"]);
        assert_eq!(r.domain, DomainTag::Wild);
        assert_eq!(r.split, Split::Val);
        assert_eq!(r.reasoning_kind, ReasoningKind::Hard);
        assert_eq!(r.instruction_kind, InstructionKind::Hard);
        assert_eq!(r.instruction, "I need something to drink coffee");
        assert_eq!(r.mask.size, (2, 2));
        assert_eq!(r.mask.counts, vec![0, 4]);
        assert_eq!(
            r.provenance.as_ref().unwrap().tool,
            ProvenanceTool::OriginalMask
        );
    }

    #[test]
    fn load_duplicate_id() {
        let rec = serde_json::to_string(&record("a", "mug", 2, 2)).unwrap();
        let err = load_manifest_str(&format!("{HEADER}\n{rec}\n{rec}\n")).unwrap_err();
        assert!(matches!(err, ManifestError::DuplicateId(id) if id == "a"));
    }

    #[test]
    fn load_unsupported_version() {
        let err = load_manifest_str(r#"{"formatVersion":2,"imageRoot":"d"}"#).unwrap_err();
        assert!(matches!(err, ManifestError::UnsupportedVersion(2)));
    }

    #[test]
    fn load_malformed_line_reports_line_number() {
        let err = load_manifest_str(&format!("{HEADER}\nnot json\n")).unwrap_err();
        assert!(matches!(err, ManifestError::Parse { line: 2, .. }));
    }

    #[test]
    fn save_load_round_trip() {
        let m = manifest_with(vec![
            record("a", "mug", 4, 4),
            record("b", "hammer", 4, 4),
            record("c", "knife", 4, 4),
        ]);
        let reloaded = load_manifest_str(&manifest_to_string(&m)).unwrap();
        assert_eq!(reloaded, m);
    }

    #[test]
    fn validate_clean_fixture() {
        let m = manifest_with(vec![
            record("a", "mug", 4, 4),
            record("b", "hammer", 4, 4),
            record("c", "knife", 4, 4),
        ]);
        assert!(validate_manifest(&m, false).is_clean());
    }

    #[test]
    fn validate_hard_instruction_with_category_name() {
        let mut rec = record("a", "mug", 4, 4);
        rec.instruction_kind = InstructionKind::Hard;
        rec.instruction = "Hand me the mug now".into();
        let report = validate_manifest(&manifest_with(vec![rec]), false);
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].check, "check_hard_constraint");
    }

    #[test]
    fn validate_bad_rle_sum() {
        let mut rec = record("a", "mug", 4, 4);
        rec.mask.counts = vec![3, 2]; // sum 5 != 16
        let report = validate_manifest(&manifest_with(vec![rec]), false);
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].check, "maskRle");
    }

    #[test]
    fn validate_zero_shot_on_train_split() {
        let mut rec = record("a", "mug", 4, 4);
        rec.split = Split::Train;
        rec.zero_shot_category = true;
        let report = validate_manifest(&manifest_with(vec![rec]), false);
        assert_eq!(report.violations[0].check, "splitTag");
    }

    #[test]
    fn strict_mode_checks_image_dimensions() {
        let dir = tempfile::tempdir().unwrap();
        // 20x20 image on disk, 10x10 mask in the record
        image::GrayImage::new(20, 20)
            .save(dir.path().join("a.png"))
            .unwrap();
        let mut rec = record("a", "mug", 10, 10);
        rec.image_path = "a.png".into();
        let mut m = manifest_with(vec![rec]);
        m.header.image_root = dir.path().to_string_lossy().into_owned();
        let report = validate_manifest(&m, true);
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].check, "maskImageSize");
        assert!(validate_manifest(&m, false).is_clean());
    }

    #[test]
    fn sample_full_and_empty() {
        let m = manifest_with(vec![record("a", "mug", 2, 2), record("b", "pen", 2, 2)]);
        let full = sample_subset(&m, 2, 42).unwrap();
        assert_eq!(full.records, m.records);
        let empty = sample_subset(&m, 0, 42).unwrap();
        assert!(empty.records.is_empty());
        assert_eq!(empty.header, m.header);
    }

    #[test]
    fn sample_too_large() {
        let m = manifest_with(vec![record("a", "mug", 2, 2)]);
        assert!(matches!(
            sample_subset(&m, 2, 0),
            Err(ManifestError::SampleTooLarge {
                requested: 2,
                available: 1
            })
        ));
    }

    #[test]
    fn sample_deterministic_and_order_preserving() {
        let records: Vec<_> = (0..100)
            .map(|i| record(&format!("r{i:03}"), "mug", 2, 2))
            .collect();
        let m = manifest_with(records);
        let s1 = sample_subset(&m, 10, 7).unwrap();
        let s2 = sample_subset(&m, 10, 7).unwrap();
        assert_eq!(manifest_to_string(&s1), manifest_to_string(&s2));
        assert_eq!(s1.records.len(), 10);
        // relative order preserved
        let ids: Vec<_> = s1.records.iter().map(|r| r.id.clone()).collect();
        let mut sorted = ids.clone();
        sorted.sort();
        assert_eq!(ids, sorted);
        // valid input stays valid
        assert!(validate_manifest(&s1, false).is_clean());
        // different seed picks a different subset (overwhelmingly likely)
        let s3 = sample_subset(&m, 10, 8).unwrap();
        assert_ne!(s1.records, s3.records);
    }

    #[test]
    fn stats_counts() {
        let m = manifest_with(vec![
            record("a", "mug", 2, 2),
            record("b", "mug", 2, 2),
            record("c", "pen", 2, 2),
        ]);
        let s = manifest_stats(&m);
        assert_eq!(s.records, 3);
        assert_eq!(s.per_category["mug"], 2);
        assert_eq!(s.per_category["pen"], 1);
        assert_eq!(s.per_domain["wild"], 3);
    }
}
