//! The five-tool annotation cascade: per-dataset tool planning, prioritized
//! execution with fallback, provenance recording, and the human-annotation
//! spool.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::manifest::{ProvenanceTag, ProvenanceTool};
use crate::maskops::{rasterize_box, rle_encode, BBox, Polygon, RleMask};

#[derive(Debug, Error)]
pub enum AnnotateError {
    #[error("backend unavailable for {0:?}")]
    BackendUnavailable(ToolId),
    #[error("backend error: {0}")]
    Backend(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// The five cascade tools, in priority order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ToolId {
    #[serde(rename = "T1_original")]
    T1Original,
    #[serde(rename = "T2_segmenter")]
    T2Segmenter,
    #[serde(rename = "T3_grounding_segmenter")]
    T3GroundingSegmenter,
    #[serde(rename = "T4_part_grounding_segmenter")]
    T4PartGroundingSegmenter,
    #[serde(rename = "T5_human")]
    T5Human,
}

impl ToolId {
    /// Provenance recorded for a mask won by this tool. Whether the human
    /// route used a segmenter is recorded by the spool consumer, so T5 maps
    /// to plain human here.
    pub fn provenance(&self, detail: impl Into<String>) -> ProvenanceTag {
        let tool = match self {
            ToolId::T1Original => ProvenanceTool::OriginalMask,
            ToolId::T2Segmenter => ProvenanceTool::Segmenter,
            ToolId::T3GroundingSegmenter => ProvenanceTool::GroundingSegmenter,
            ToolId::T4PartGroundingSegmenter => ProvenanceTool::PartGroundingSegmenter,
            ToolId::T5Human => ProvenanceTool::Human,
        };
        ProvenanceTag {
            tool,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum OutcomeStatus {
    Success,
    Failed,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToolOutcome {
    pub tool: ToolId,
    pub status: OutcomeStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mask: Option<RleMask>,
    pub note: String,
}

/// Ordered tool rules for one source dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolComposition {
    #[serde(rename = "datasetName")]
    pub dataset_name: String,
    pub rules: Vec<CompositionRule>,
    /// Applied when no rule covers the category.
    #[serde(rename = "defaultTools", default)]
    pub default_tools: Vec<ToolId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionRule {
    pub categories: Vec<String>,
    pub tools: Vec<ToolId>,
}

impl ToolComposition {
    pub fn tools_for(&self, category: &str) -> &[ToolId] {
        self.rules
            .iter()
            .find(|r| r.categories.iter().any(|c| c == category))
            .map(|r| r.tools.as_slice())
            .unwrap_or(&self.default_tools)
    }
}

/// One record to annotate, with whatever source inputs the dataset offers.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationTask {
    pub record_id: String,
    pub image_path: String,
    pub category: String,
    pub image_width: u32,
    pub image_height: u32,
    pub original_mask: Option<RleMask>,
    pub gt_box: Option<BBox>,
    pub instruction: Option<String>,
}

impl AnnotationTask {
    fn has_input_for(&self, tool: ToolId, part_vocabulary: &[String]) -> bool {
        match tool {
            ToolId::T1Original => self.original_mask.is_some(),
            ToolId::T2Segmenter => self.gt_box.is_some(),
            ToolId::T3GroundingSegmenter => self.instruction.is_some(),
            ToolId::T4PartGroundingSegmenter => {
                part_vocabulary.iter().any(|c| c == &self.category)
            }
            ToolId::T5Human => true,
        }
    }
}

/// Promptable segmentation service (box or polygon prompt in, mask out).
pub trait Segmenter: Sync {
    fn segment_box(&self, image_path: &str, bbox: &BBox) -> Result<RleMask, AnnotateError>;
    fn segment_polygon(&self, image_path: &str, polygon: &Polygon)
        -> Result<RleMask, AnnotateError>;
}

/// Text-conditioned box grounding service.
pub trait Grounder: Sync {
    fn ground(&self, image_path: &str, text: &str) -> Result<Vec<BBox>, AnnotateError>;
}

/// Part-level grounding service (category + part name in, boxes out).
pub trait PartGrounder: Sync {
    fn ground_part(
        &self,
        image_path: &str,
        category: &str,
        part: &str,
    ) -> Result<Vec<BBox>, AnnotateError>;
}

/// Append-only JSON Lines spool of tasks awaiting manual annotation. Appends
/// are serialized through one writer.
pub struct HumanQueue {
    path: PathBuf,
    file: Mutex<std::fs::File>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanTask {
    #[serde(rename = "recordId")]
    pub record_id: String,
    #[serde(rename = "imagePath")]
    pub image_path: String,
    pub category: String,
}

/// One resolved entry in the companion results file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanResult {
    #[serde(rename = "recordId")]
    pub record_id: String,
    pub mask: RleMask,
}

impl HumanQueue {
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, AnnotateError> {
        let path = path.into();
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(HumanQueue {
            path,
            file: Mutex::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn enqueue(&self, task: &HumanTask) -> Result<(), AnnotateError> {
        let mut line = serde_json::to_string(task).expect("task serializes");
        line.push('\n');
        let mut file = self.file.lock().expect("queue lock");
        file.write_all(line.as_bytes())?;
        file.flush()?;
        Ok(())
    }
}

/// Backends plus failure policy for one cascade run.
pub struct BackendSet<'a> {
    pub segmenter: Option<&'a dyn Segmenter>,
    pub grounder: Option<&'a dyn Grounder>,
    pub part_grounder: Option<&'a dyn PartGrounder>,
    pub human_queue: Option<&'a HumanQueue>,
    /// Categories the part-grounding backend was trained on.
    pub part_vocabulary: Vec<String>,
    /// Masks below this area count as tool failures.
    pub min_mask_area: u64,
    /// With no segmenter configured, box-prompted tools rasterize the box.
    pub degraded_box_fill: bool,
}

impl<'a> Default for BackendSet<'a> {
    fn default() -> Self {
        BackendSet {
            segmenter: None,
            grounder: None,
            part_grounder: None,
            human_queue: None,
            part_vocabulary: default_part_vocabulary(),
            min_mask_area: 25,
            degraded_box_fill: true,
        }
    }
}

pub fn default_part_vocabulary() -> Vec<String> {
    ["spoon", "mug", "screwdriver", "knife", "wrench"]
        .map(str::to_string)
        .to_vec()
}

/// Composition tool order for the task's category, filtered to tools whose
/// input preconditions hold. T5 is appended when the filtered list would
/// otherwise be empty, so planning always yields at least one tool.
pub fn plan_tools(
    task: &AnnotationTask,
    comp: &ToolComposition,
    part_vocabulary: &[String],
) -> Vec<ToolId> {
    let mut plan: Vec<ToolId> = comp
        .tools_for(&task.category)
        .iter()
        .copied()
        .filter(|t| task.has_input_for(*t, part_vocabulary))
        .collect();
    if plan.is_empty() {
        plan.push(ToolId::T5Human);
    }
    plan
}

/// Result of one cascade run.
#[derive(Debug)]
pub struct CascadeResult {
    /// The winning mask, absent when the task went to the human queue (or
    /// everything failed with no queue configured).
    pub final_mask: Option<RleMask>,
    pub provenance: Option<ProvenanceTag>,
    pub trace: Vec<ToolOutcome>,
    pub pending_human: Option<HumanTask>,
}

fn check_mask(mask: RleMask, min_area: u64) -> Result<RleMask, String> {
    if let Err(e) = mask.validate() {
        return Err(format!("backend returned invalid mask: {e}"));
    }
    let area = mask.area();
    if area == 0 {
        return Err("empty mask".into());
    }
    if area < min_area {
        return Err(format!("mask area {area} below minimum {min_area}"));
    }
    Ok(mask)
}

/// Invokes the planned tools strictly in order; the first success stops the
/// cascade. A T5 step enqueues the task for manual annotation and ends the
/// run without a mask.
pub fn run_cascade(
    task: &AnnotationTask,
    plan: &[ToolId],
    backends: &BackendSet,
) -> Result<CascadeResult, AnnotateError> {
    assert!(!plan.is_empty(), "plan must be non-empty");
    let mut trace = Vec::new();
    for &tool in plan {
        if tool == ToolId::T5Human {
            let human = HumanTask {
                record_id: task.record_id.clone(),
                image_path: task.image_path.clone(),
                category: task.category.clone(),
            };
            if let Some(queue) = backends.human_queue {
                queue.enqueue(&human)?;
            }
            trace.push(ToolOutcome {
                tool,
                status: OutcomeStatus::Skipped,
                mask: None,
                note: "pending human annotation".into(),
            });
            return Ok(CascadeResult {
                final_mask: None,
                provenance: None,
                trace,
                pending_human: Some(human),
            });
        }
        match try_tool(task, tool, backends) {
            Ok(mask) => {
                trace.push(ToolOutcome {
                    tool,
                    status: OutcomeStatus::Success,
                    mask: Some(mask.clone()),
                    note: String::new(),
                });
                return Ok(CascadeResult {
                    final_mask: Some(mask),
                    provenance: Some(tool.provenance("")),
                    trace,
                    pending_human: None,
                });
            }
            Err(note) => {
                trace.push(ToolOutcome {
                    tool,
                    status: OutcomeStatus::Failed,
                    mask: None,
                    note,
                });
            }
        }
    }
    Ok(CascadeResult {
        final_mask: None,
        provenance: None,
        trace,
        pending_human: None,
    })
}

fn segment_or_fill(
    task: &AnnotationTask,
    bbox: &BBox,
    backends: &BackendSet,
) -> Result<RleMask, String> {
    if let Some(seg) = backends.segmenter {
        return seg
            .segment_box(&task.image_path, bbox)
            .map_err(|e| e.to_string());
    }
    if backends.degraded_box_fill {
        return rasterize_box(bbox, task.image_width, task.image_height)
            .map(|m| rle_encode(&m))
            .map_err(|e| format!("degraded box fill: {e}"));
    }
    Err(format!("{:?}", AnnotateError::BackendUnavailable(ToolId::T2Segmenter)))
}

fn try_tool(task: &AnnotationTask, tool: ToolId, backends: &BackendSet) -> Result<RleMask, String> {
    let mask = match tool {
        ToolId::T1Original => task
            .original_mask
            .clone()
            .ok_or("no original mask available")?,
        ToolId::T2Segmenter => {
            let bbox = task.gt_box.as_ref().ok_or("no ground-truth box available")?;
            segment_or_fill(task, bbox, backends)?
        }
        ToolId::T3GroundingSegmenter => {
            let text = task
                .instruction
                .as_deref()
                .ok_or("no language instruction available")?;
            let grounder = backends
                .grounder
                .ok_or("grounding backend unavailable")?;
            let boxes = grounder
                .ground(&task.image_path, text)
                .map_err(|e| e.to_string())?;
            let bbox = boxes.first().ok_or("grounder returned no boxes")?;
            segment_or_fill(task, bbox, backends)?
        }
        ToolId::T4PartGroundingSegmenter => {
            let part_grounder = backends
                .part_grounder
                .ok_or("part-grounding backend unavailable")?;
            let boxes = part_grounder
                .ground_part(&task.image_path, &task.category, "handle")
                .map_err(|e| e.to_string())?;
            let bbox = boxes.first().ok_or("part grounder returned no boxes")?;
            segment_or_fill(task, bbox, backends)?
        }
        ToolId::T5Human => unreachable!("handled by run_cascade"),
    };
    check_mask(mask, backends.min_mask_area)
}

// ---------------------------------------------------------------------------
// HTTP backends over the wire protocol

#[derive(Serialize, Deserialize)]
pub struct GroundRequest {
    pub image: String,
    pub text: String,
}

#[derive(Serialize, Deserialize)]
pub struct GroundResponse {
    pub boxes: Vec<[u32; 4]>,
}

#[derive(Serialize, Deserialize)]
pub struct SegmentRequest {
    pub image: String,
    #[serde(rename = "box", skip_serializing_if = "Option::is_none")]
    pub bbox: Option<[u32; 4]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub polygon: Option<Vec<[f64; 2]>>,
}

#[derive(Serialize, Deserialize)]
pub struct SegmentResponse {
    pub mask: RleMask,
}

#[derive(Serialize, Deserialize)]
pub struct GroundPartRequest {
    pub image: String,
    pub category: String,
    pub part: String,
}

fn encode_image(path: &str) -> Result<String, AnnotateError> {
    use base64::Engine;
    let bytes = std::fs::read(path)?;
    Ok(base64::engine::general_purpose::STANDARD.encode(bytes))
}

fn boxes_from_wire(boxes: Vec<[u32; 4]>) -> Vec<BBox> {
    boxes
        .into_iter()
        .map(|[x0, y0, x1, y1]| BBox::new(x0, y0, x1, y1))
        .collect()
}

/// HTTP clients for the `/ground`, `/segment`, and `/ground_part` endpoints.
pub struct HttpBackend {
    client: reqwest::blocking::Client,
    base: String,
}

impl HttpBackend {
    pub fn new(base: impl Into<String>) -> Self {
        HttpBackend {
            client: reqwest::blocking::Client::new(),
            base: base.into().trim_end_matches('/').to_string(),
        }
    }

    fn post<Req: Serialize, Resp: for<'de> Deserialize<'de>>(
        &self,
        route: &str,
        req: &Req,
    ) -> Result<Resp, AnnotateError> {
        self.client
            .post(format!("{}{route}", self.base))
            .json(req)
            .send()
            .and_then(|r| r.error_for_status())
            .map_err(|e| AnnotateError::Backend(e.to_string()))?
            .json()
            .map_err(|e| AnnotateError::Backend(e.to_string()))
    }
}

impl Grounder for HttpBackend {
    fn ground(&self, image_path: &str, text: &str) -> Result<Vec<BBox>, AnnotateError> {
        let resp: GroundResponse = self.post(
            "/ground",
            &GroundRequest {
                image: encode_image(image_path)?,
                text: text.to_string(),
            },
        )?;
        Ok(boxes_from_wire(resp.boxes))
    }
}

impl Segmenter for HttpBackend {
    fn segment_box(&self, image_path: &str, bbox: &BBox) -> Result<RleMask, AnnotateError> {
        let resp: SegmentResponse = self.post(
            "/segment",
            &SegmentRequest {
                image: encode_image(image_path)?,
                bbox: Some([bbox.x0, bbox.y0, bbox.x1, bbox.y1]),
                polygon: None,
            },
        )?;
        Ok(resp.mask)
    }

    fn segment_polygon(
        &self,
        image_path: &str,
        polygon: &Polygon,
    ) -> Result<RleMask, AnnotateError> {
        let resp: SegmentResponse = self.post(
            "/segment",
            &SegmentRequest {
                image: encode_image(image_path)?,
                bbox: None,
                polygon: Some(polygon.vertices.iter().map(|&(x, y)| [x, y]).collect()),
            },
        )?;
        Ok(resp.mask)
    }
}

impl PartGrounder for HttpBackend {
    fn ground_part(
        &self,
        image_path: &str,
        category: &str,
        part: &str,
    ) -> Result<Vec<BBox>, AnnotateError> {
        let resp: GroundResponse = self.post(
            "/ground_part",
            &GroundPartRequest {
                image: encode_image(image_path)?,
                category: category.to_string(),
                part: part.to_string(),
            },
        )?;
        Ok(boxes_from_wire(resp.boxes))
    }
}

// ---------------------------------------------------------------------------
// Default per-dataset compositions

fn rule(categories: &[&str], tools: &[ToolId]) -> CompositionRule {
    CompositionRule {
        categories: categories.iter().map(|s| s.to_string()).collect(),
        tools: tools.to_vec(),
    }
}

const HANDAL_CATEGORIES: &[&str] = &[
    "strainer", "fixed joint plier", "hammer", "ladle", "whisk", "measuring cup",
    "locking plier", "power drill", "adjustable wrencher", "mug", "ratchet", "utensil",
    "combinational wrench", "pots pan", "spatula", "screwdriver", "slip joint plier",
];

const EGOOBJECTS_BOX_CATEGORIES: &[&str] = &[
    "alarm clock", "balloon", "blanket", "book", "bottle", "bowl", "box",
    "computer mouse", "doll", "envelope", "eraser", "flowerpot", "flying disc",
    "football", "game controller/pad", "glasses", "glove", "goggles", "lipstick",
    "necklace", "paper", "paper towel", "pen", "pencil", "pencil case", "perfume",
    "phone charger", "picture frame", "pillow", "plate", "post-it", "poster",
    "pottery", "remote control", "ring", "shirt", "shorts", "skateboard", "soap",
    "sock", "stapler", "sun hat", "sunglasses", "tablet computer", "teddy bear",
    "tennis ball", "toothpaste", "towel", "umbrella", "vase", "wallet", "watch",
];

const EGOOBJECTS_PART_CATEGORIES: &[&str] = &["spoon", "mug", "screwdriver", "knife", "wrench"];

const EGOOBJECTS_HUMAN_CATEGORIES: &[&str] = &[
    "microwave oven", "washing machine", "wok", "oven", "drawer", "teapot",
    "toothbrush", "wardrobe", "door", "jug", "refrigerator", "tap", "tennis racket",
    "spatula", "fork", "frying pan", "scissors", "hammer",
];

const GRASPNET_HUMAN_CATEGORIES: &[&str] = &["flat screwdriver", "power drill", "scissors", "mug"];

const RT1_HUMAN_CATEGORIES: &[&str] = &[
    "right fridge door", "bottom drawer", "left fridge door", "middle drawer", "top drawer",
];

const BRIDGE_PART_CATEGORIES: &[&str] = &["knife"];

const BRIDGE_HUMAN_CATEGORIES: &[&str] = &[
    "brush", "cutter", "drawer of box", "fork", "gripper", "hairbrush",
    "ice cream scoop", "kettle", "laddle", "microwave", "mug", "oven", "pot", "pan",
    "saucepan", "scissors", "scrub brush", "scrubber", "spatula", "spork", "teapot",
    "teal brush", "wok",
];

/// The stock per-dataset tool compositions. Users can serialize these to
/// JSON, edit them, and load their own.
pub fn default_compositions() -> Vec<ToolComposition> {
    use ToolId::*;
    vec![
        ToolComposition {
            dataset_name: "HANDAL".into(),
            rules: vec![rule(HANDAL_CATEGORIES, &[T1Original])],
            default_tools: vec![T1Original],
        },
        ToolComposition {
            dataset_name: "OpenX-RT1".into(),
            rules: vec![rule(RT1_HUMAN_CATEGORIES, &[T5Human])],
            default_tools: vec![T3GroundingSegmenter, T5Human],
        },
        ToolComposition {
            dataset_name: "OpenX-Bridge".into(),
            rules: vec![
                rule(BRIDGE_PART_CATEGORIES, &[T4PartGroundingSegmenter, T3GroundingSegmenter, T5Human]),
                rule(BRIDGE_HUMAN_CATEGORIES, &[T5Human]),
            ],
            default_tools: vec![T3GroundingSegmenter, T5Human],
        },
        ToolComposition {
            dataset_name: "EgoObjects".into(),
            rules: vec![
                rule(EGOOBJECTS_PART_CATEGORIES, &[T4PartGroundingSegmenter, T2Segmenter, T5Human]),
                rule(EGOOBJECTS_HUMAN_CATEGORIES, &[T5Human]),
                rule(EGOOBJECTS_BOX_CATEGORIES, &[T2Segmenter, T5Human]),
            ],
            default_tools: vec![T2Segmenter, T5Human],
        },
        ToolComposition {
            dataset_name: "GraspNet".into(),
            rules: vec![rule(GRASPNET_HUMAN_CATEGORIES, &[T5Human])],
            default_tools: vec![T1Original, T5Human],
        },
        ToolComposition {
            dataset_name: "RLBench".into(),
            rules: vec![],
            default_tools: vec![T5Human],
        },
    ]
}

pub fn load_compositions(path: impl AsRef<Path>) -> Result<Vec<ToolComposition>, AnnotateError> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| AnnotateError::Backend(format!("bad composition file: {e}")))
}
