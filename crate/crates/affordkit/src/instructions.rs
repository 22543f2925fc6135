//! Instruction generation: the fixed template, few-shot chat scaffolds for
//! easy/hard reasoning instructions, response parsing, and the hard-mode
//! category-name constraint.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::manifest::{CategoryLabel, InstructionKind, InstructionSpec};

#[derive(Debug, Error, PartialEq)]
pub enum InstructionError {
    #[error("response is missing marker {0:?}")]
    MarkerMissing(&'static str),
    #[error("hard constraint violated: instruction contains {0:?}")]
    HardConstraintViolated(String),
    #[error("instruction is empty after marker {0:?}")]
    EmptyInstruction(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReasoningMode {
    Easy,
    Hard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChatRole {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: ChatRole,
    pub content: String,
}

impl ChatMessage {
    fn new(role: ChatRole, content: &str) -> Self {
        ChatMessage {
            role,
            content: content.to_string(),
        }
    }
}

/// Few-shot chat scaffold sent to the external LLM. Byte-stable: no
/// timestamps, no randomness.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptScaffold {
    pub mode: ReasoningMode,
    pub messages: Vec<ChatMessage>,
}

const EASY_SYSTEM: &str = "You are a helpful assistant. Based on several words where the first is category name, please design an instruction <1> and instruction <2> in embodied scenes. The instruction <1> must include object category name itself. The instruction <2> must include object category name itself. The instruction <2> must belongs to embodied manipulation and give action if instruction <1> provides. The instruction <2> does not exceed 50 words.";

const HARD_SYSTEM: &str = "You are a helpful assistant. Based on several words where the first is category name, please design an instruction <1> and instruction <2> in embodied scenes. The instruction <1> must not include object category name itself. The instruction <2> must include object category name itself. The instruction <2> must belongs to embodied manipulation and give action if instruction <1> provides. The instruction <2> does not exceed 50 words.";

const EASY_SHOTS: [(&str, &str); 5] = [
    (
        "mug",
        "<1> I need a drink. Please find a mug to fill water. <2> The mug has a handle as affordance map. So the robot can hold its handle.",
    ),
    (
        "knife",
        "<1> Please give me a knife to cut apple. <2> The knife has a handle, and you can use its handle to cut apple.",
    ),
    (
        "hammer",
        "<1> What is the proper way to hold the hammer? <2> The correct method is to hold the hammer by its handle.",
    ),
    (
        "fork",
        "<1> Kindly pick up the fork. <2> You will be holding the fork handle.",
    ),
    (
        "screwdriver",
        "<1> I need a tool to tighten or loosen screws. <2> The screwdriver is here, hold its handle to turn and control screws.",
    ),
];

const HARD_SHOTS: [(&str, &str); 5] = [
    (
        "microwave, open",
        "<1> Heat up food quickly. <2> The microwave is closed, so it can be open to access the food inside.",
    ),
    (
        "knife",
        "<1> I want to cut a bread. <2> The knife has a handle, you can use its handle to cut bread.",
    ),
    (
        "computer mouse",
        "<1> Give me a tool to control the cursor on the screen. <2> The computer mouse is here. It has not handle, so you can grasp its whole body.",
    ),
    (
        "fork",
        "<1> Use to pierce and lift food. <2> The fork is here, and its handle can be grasped.",
    ),
    (
        "screwdriver",
        "<1> I need a tool to tighten or loosen screws. <2> The screwdriver is here, hold its handle to turn and control screws.",
    ),
];

/// `"Please segment the affordance map of <category_name> in this image"`.
pub fn build_template(category: &CategoryLabel) -> InstructionSpec {
    InstructionSpec {
        kind: InstructionKind::Template,
        text: format!(
            "Please segment the affordance map of {} in this image",
            category.name()
        ),
    }
}

/// Builds the few-shot scaffold: fixed system line and exemplar pairs, then
/// a final user message of the category name plus optional keywords joined
/// by `", "`.
pub fn build_reasoning_prompt(
    category: &CategoryLabel,
    keywords: Option<&str>,
    mode: ReasoningMode,
) -> PromptScaffold {
    let (system, shots) = match mode {
        ReasoningMode::Easy => (EASY_SYSTEM, &EASY_SHOTS),
        ReasoningMode::Hard => (HARD_SYSTEM, &HARD_SHOTS),
    };
    let mut messages = vec![ChatMessage::new(ChatRole::System, system)];
    for (user, assistant) in shots {
        messages.push(ChatMessage::new(ChatRole::User, user));
        messages.push(ChatMessage::new(ChatRole::Assistant, assistant));
    }
    let payload = match keywords {
        Some(kw) if !kw.is_empty() => format!("{}, {kw}", category.name()),
        _ => category.name().to_string(),
    };
    messages.push(ChatMessage {
        role: ChatRole::User,
        content: payload,
    });
    PromptScaffold { mode, messages }
}

/// Case-insensitive whole-word search for the category name and each alias.
/// Multi-word names match as contiguous word sequences. Returns the first
/// offending token, or `None` when the text passes.
pub fn check_hard_constraint(text: &str, category: &CategoryLabel) -> Option<String> {
    let words: Vec<String> = tokenize(text);
    for needle in std::iter::once(category.name())
        .chain(category.aliases().iter().map(String::as_str))
    {
        let needle_words = tokenize(needle);
        if needle_words.is_empty() {
            continue;
        }
        if words
            .windows(needle_words.len())
            .any(|w| w == needle_words.as_slice())
        {
            return Some(needle.to_string());
        }
    }
    None
}

fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Generated `<1>`/`<2>` pair from one LLM response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedInstructionPair {
    pub first: String,
    pub second: String,
    pub category: String,
    pub mode: ReasoningMode,
}

impl GeneratedInstructionPair {
    /// Renders back to the `<1> ... <2> ...` response shape.
    pub fn render(&self) -> String {
        format!("<1> {} <2> {}", self.first, self.second)
    }
}

/// Splits the response on the literal `<1>`/`<2>` markers and trims. Hard
/// mode additionally rejects a first instruction containing the category.
pub fn parse_llm_pair(
    response: &str,
    category: &CategoryLabel,
    mode: ReasoningMode,
) -> Result<GeneratedInstructionPair, InstructionError> {
    let after_1 = response
        .split_once("<1>")
        .ok_or(InstructionError::MarkerMissing("<1>"))?
        .1;
    let (first, second) = after_1
        .split_once("<2>")
        .ok_or(InstructionError::MarkerMissing("<2>"))?;
    let first = first.trim();
    let second = second.trim();
    if first.is_empty() {
        return Err(InstructionError::EmptyInstruction("<1>"));
    }
    if second.is_empty() {
        return Err(InstructionError::EmptyInstruction("<2>"));
    }
    if mode == ReasoningMode::Hard {
        if let Some(token) = check_hard_constraint(first, category) {
            return Err(InstructionError::HardConstraintViolated(token));
        }
    }
    Ok(GeneratedInstructionPair {
        first: first.to_string(),
        second: second.to_string(),
        category: category.name().to_string(),
        mode,
    })
}

/// Minimal chat-completion client: messages in, assistant text out.
pub trait ChatClient {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, String>;
}

/// Deterministic offline stub. Derives the category from the final user
/// message, so tests need neither network nor keys.
pub struct StubChatClient {
    pub mode: ReasoningMode,
}

impl ChatClient for StubChatClient {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, String> {
        let payload = messages
            .iter()
            .rev()
            .find(|m| m.role == ChatRole::User)
            .map(|m| m.content.as_str())
            .ok_or("no user message")?;
        let category = payload.split(',').next().unwrap_or(payload).trim();
        Ok(match self.mode {
            ReasoningMode::Easy => format!(
                "<1> Please find the {category} for me. <2> The {category} is here, hold it by its handle."
            ),
            ReasoningMode::Hard => format!(
                "<1> I need a tool for this task. <2> The {category} is here, hold it by its handle."
            ),
        })
    }
}

/// OpenAI-style chat completion endpoint; the key comes from the
/// `AFFORD_LLM_KEY` environment variable.
pub struct HttpChatClient {
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpChatClient {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        HttpChatClient {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key: std::env::var("AFFORD_LLM_KEY").ok(),
            client: reqwest::blocking::Client::new(),
        }
    }
}

impl ChatClient for HttpChatClient {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, String> {
        #[derive(Serialize)]
        struct Request<'a> {
            model: &'a str,
            messages: &'a [ChatMessage],
        }
        #[derive(Deserialize)]
        struct Choice {
            message: ChoiceMessage,
        }
        #[derive(Deserialize)]
        struct ChoiceMessage {
            content: String,
        }
        #[derive(Deserialize)]
        struct Response {
            choices: Vec<Choice>,
        }
        let mut req = self.client.post(&self.endpoint).json(&Request {
            model: &self.model,
            messages,
        });
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp: Response = req
            .send()
            .and_then(|r| r.error_for_status())
            .map_err(|e| e.to_string())?
            .json()
            .map_err(|e| e.to_string())?;
        resp.choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| "empty choices".into())
    }
}

/// Per-category outcome counts for a generation run.
#[derive(Debug, Default, Clone, Serialize)]
pub struct GenerationStats {
    pub generated: usize,
    pub discarded: usize,
    #[serde(rename = "perCategory")]
    pub per_category: std::collections::BTreeMap<String, usize>,
}

/// Generates one pair per (category, keywords) entry. Responses that fail to
/// parse or violate the hard constraint are discarded and counted, never
/// retried.
pub fn generate_instructions(
    categories: &[(CategoryLabel, Option<String>)],
    mode: ReasoningMode,
    client: &dyn ChatClient,
) -> (Vec<GeneratedInstructionPair>, GenerationStats) {
    let mut pairs = Vec::new();
    let mut stats = GenerationStats::default();
    let mut seen = std::collections::HashSet::new();
    for (category, keywords) in categories {
        let scaffold = build_reasoning_prompt(category, keywords.as_deref(), mode);
        match client
            .complete(&scaffold.messages)
            .map_err(|_| InstructionError::MarkerMissing("<1>"))
            .and_then(|text| parse_llm_pair(&text, category, mode))
        {
            Ok(pair) => {
                // exact-string dedup per (category, mode)
                if seen.insert((pair.category.clone(), pair.first.clone())) {
                    *stats
                        .per_category
                        .entry(pair.category.clone())
                        .or_default() += 1;
                    stats.generated += 1;
                    pairs.push(pair);
                } else {
                    stats.discarded += 1;
                }
            }
            Err(_) => stats.discarded += 1,
        }
    }
    (pairs, stats)
}
