//! Predictor boundary: query composition with the embodied system prompt,
//! the `<AFF>`/`<SEG>` mask-slot protocol, and the builtin baseline
//! predictors used by the evaluation harness.

use std::collections::HashMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::manifest::AffordanceRecord;
use crate::maskops::{rasterize_box, rle_encode, BBox, RleMask};

/// Every affordance query carries this system prompt.
pub const SYSTEM_PROMPT: &str = "You are an embodied robot.";

#[derive(Debug, Error)]
pub enum PredictError {
    #[error("response contains no mask token")]
    NoMaskToken,
    #[error("invalid response: {0}")]
    InvalidResponse(String),
    #[error("predictor backend: {0}")]
    Backend(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorQuery {
    #[serde(rename = "image")]
    pub image_path: String,
    #[serde(rename = "system")]
    pub system_prompt: String,
    pub instruction: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SlotToken {
    #[serde(rename = "AFF")]
    Aff,
    #[serde(rename = "SEG")]
    Seg,
}

impl SlotToken {
    pub fn literal(&self) -> &'static str {
        match self {
            SlotToken::Aff => "<AFF>",
            SlotToken::Seg => "<SEG>",
        }
    }
}

/// One decoded mask keyed to a special token occurrence in the response text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskSlot {
    pub token: SlotToken,
    pub position: usize,
    pub mask: RleMask,
}

/// Model output: response text plus the ordered mask slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorResponse {
    pub text: String,
    pub slots: Vec<MaskSlot>,
}

impl PredictorResponse {
    /// Positions strictly increasing; each slot's token literal appears in
    /// the text, in slot order.
    pub fn validate(&self) -> Result<(), PredictError> {
        let mut prev: Option<usize> = None;
        let mut cursor = 0usize;
        for slot in &self.slots {
            if let Some(p) = prev {
                if slot.position <= p {
                    return Err(PredictError::InvalidResponse(format!(
                        "slot positions not strictly increasing at {}",
                        slot.position
                    )));
                }
            }
            prev = Some(slot.position);
            match self.text[cursor..].find(slot.token.literal()) {
                Some(off) => cursor += off + slot.token.literal().len(),
                None => {
                    return Err(PredictError::InvalidResponse(format!(
                        "token {} missing from text in slot order",
                        slot.token.literal()
                    )))
                }
            }
        }
        Ok(())
    }
}

/// Builds the predictor query: the embodied system prompt plus the record's
/// instruction, verbatim.
pub fn compose_query(record: &AffordanceRecord) -> PredictorQuery {
    PredictorQuery {
        image_path: record.image_path.clone(),
        system_prompt: SYSTEM_PROMPT.to_string(),
        instruction: record.instruction.clone(),
    }
}

/// The first AFF slot wins; with no AFF slot, the first SEG slot.
pub fn select_mask(response: &PredictorResponse) -> Result<&RleMask, PredictError> {
    response
        .slots
        .iter()
        .find(|s| s.token == SlotToken::Aff)
        .or_else(|| response.slots.iter().find(|s| s.token == SlotToken::Seg))
        .map(|s| &s.mask)
        .ok_or(PredictError::NoMaskToken)
}

/// A mask predictor consumed by the evaluation harness. `concurrent` declares
/// whether the harness may invoke it from multiple threads at once.
pub trait MaskPredictor: Sync {
    fn predict(&self, query: &PredictorQuery) -> Result<PredictorResponse, PredictError>;

    fn concurrent(&self) -> bool {
        true
    }
}

/// Returns the ground-truth mask for each image path, in an AFF slot.
/// Harness sanity check: evaluating it must give gIoU = cIoU = 1.0.
pub struct OraclePredictor {
    masks: HashMap<String, RleMask>,
}

impl OraclePredictor {
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a AffordanceRecord>) -> Self {
        OraclePredictor {
            masks: records
                .into_iter()
                .map(|r| (r.image_path.clone(), r.mask.clone()))
                .collect(),
        }
    }
}

impl MaskPredictor for OraclePredictor {
    fn predict(&self, query: &PredictorQuery) -> Result<PredictorResponse, PredictError> {
        let mask = self
            .masks
            .get(&query.image_path)
            .ok_or_else(|| PredictError::Backend(format!("no oracle mask for {}", query.image_path)))?;
        Ok(PredictorResponse {
            text: "The affordance region is <AFF>.".into(),
            slots: vec![MaskSlot {
                token: SlotToken::Aff,
                position: 0,
                mask: mask.clone(),
            }],
        })
    }
}

/// Always answers with no mask slots, exercising the failure path.
pub struct EmptyPredictor;

impl MaskPredictor for EmptyPredictor {
    fn predict(&self, _query: &PredictorQuery) -> Result<PredictorResponse, PredictError> {
        Ok(PredictorResponse {
            text: "I cannot find the affordance region.".into(),
            slots: vec![],
        })
    }
}

/// Centered-box heuristic: a SEG slot with a centered box covering
/// `area_fraction` of the image. Image dimensions come from the file header.
pub struct CenterBoxPredictor {
    pub image_root: PathBuf,
    pub area_fraction: f64,
}

impl CenterBoxPredictor {
    pub fn new(image_root: impl Into<PathBuf>) -> Self {
        CenterBoxPredictor {
            image_root: image_root.into(),
            area_fraction: 0.25,
        }
    }
}

impl MaskPredictor for CenterBoxPredictor {
    fn predict(&self, query: &PredictorQuery) -> Result<PredictorResponse, PredictError> {
        let path = self.image_root.join(&query.image_path);
        let (w, h) =
            image::image_dimensions(&path).map_err(|e| PredictError::Backend(e.to_string()))?;
        let side = self.area_fraction.sqrt();
        let bw = ((f64::from(w) * side).round() as u32).clamp(1, w);
        let bh = ((f64::from(h) * side).round() as u32).clamp(1, h);
        let x0 = (w - bw) / 2;
        let y0 = (h - bh) / 2;
        let mask = rasterize_box(&BBox::new(x0, y0, x0 + bw, y0 + bh), w, h)
            .map_err(|e| PredictError::Backend(e.to_string()))?;
        Ok(PredictorResponse {
            text: "It is <SEG>.".into(),
            slots: vec![MaskSlot {
                token: SlotToken::Seg,
                position: 0,
                mask: rle_encode(&mask),
            }],
        })
    }
}

/// Remote VLM over the wire protocol:
/// `POST /predict {"image":b64,"system":s,"instruction":s}` returning a
/// [`PredictorResponse`] JSON body.
pub struct RemotePredictor {
    pub endpoint: String,
    pub image_root: PathBuf,
    client: reqwest::blocking::Client,
    concurrent: bool,
}

#[derive(Serialize)]
struct RemoteRequest<'a> {
    image: String,
    system: &'a str,
    instruction: &'a str,
}

impl RemotePredictor {
    pub fn new(endpoint: impl Into<String>, image_root: impl Into<PathBuf>, concurrent: bool) -> Self {
        RemotePredictor {
            endpoint: endpoint.into(),
            image_root: image_root.into(),
            client: reqwest::blocking::Client::new(),
            concurrent,
        }
    }
}

impl MaskPredictor for RemotePredictor {
    fn predict(&self, query: &PredictorQuery) -> Result<PredictorResponse, PredictError> {
        use base64::Engine;
        let bytes = std::fs::read(self.image_root.join(&query.image_path))
            .map_err(|e| PredictError::Backend(e.to_string()))?;
        let req = RemoteRequest {
            image: base64::engine::general_purpose::STANDARD.encode(bytes),
            system: &query.system_prompt,
            instruction: &query.instruction,
        };
        let resp: PredictorResponse = self
            .client
            .post(&self.endpoint)
            .json(&req)
            .send()
            .and_then(|r| r.error_for_status())
            .map_err(|e| PredictError::Backend(e.to_string()))?
            .json()
            .map_err(|e| PredictError::Backend(e.to_string()))?;
        resp.validate()?;
        Ok(resp)
    }

    fn concurrent(&self) -> bool {
        self.concurrent
    }
}

/// Brute-force restatement of the selection rule, kept for conformance
/// checks: scan for AFF in order, then scan for SEG in order.
pub fn select_mask_bruteforce(response: &PredictorResponse) -> Option<&RleMask> {
    for token in [SlotToken::Aff, SlotToken::Seg] {
        for slot in &response.slots {
            if slot.token == token {
                return Some(&slot.mask);
            }
        }
    }
    None
}
