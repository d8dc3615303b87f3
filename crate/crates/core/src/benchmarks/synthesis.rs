//! Building benchmark items with an external chat model.
//!
//! Outputs are review entries, never benchmark files: a person promotes the
//! `generated` entries after reading them.

use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{group_triplets, CriterionInstructions, InstructionSet, PairExample, ROBUSTNESS_SET_SIZE};
use crate::error::{Error, Result};

pub const MAX_ATTEMPTS: usize = 3;
pub const CHAT_API_KEY_ENV: &str = "INBEDDER_CHAT_API_KEY";

const MODIFY_EMOTION: &str = "Could you modify the emotion (one optimistic and one frustrating) of following utterance without changing the intent (\"[INTENT]\")?\n\"[TEXT]\"\nPlease output a JSON object containing keys \"optimistic\" and \"frustrating\", and no other things.";
const MODIFY_INTENT: &str = "Modify the intent of the above utterances (i.e. from \"[INTENT]\" to another one that you brainstormed. Usually by modifying the objects or actions) without changing the emotions. Same as before, output a JSON object containing keys \"optimistic\" and \"frustrating\", and no other things.";
const DISCRIMINATE: &str = "The following two sentences have similar surface forms:\n\n1. [SENTENCE1]\n2. [SENTENCE2]\n\nIn order to discriminate the two sentences, what question would you ask? (e.g. what is the subject of the sentence?) Please output a JSON object that contains the key \"question\".";
const NOT_DISCRIMINATE: &str = "Similar to the above, in order to make the answers to the two sentences immune to discrimination, what question would you ask? (e.g. what is the subject of the sentence?) Please output a JSON object that contains the key \"question\".";
const REWRITE_INSTRUCTION: &str = "A set of documents is clustered according to this instruction:\n\"[INSTRUCTION]\"\nWrite 10 new instructions that [KIND]. Please output a JSON object containing the key \"instructions\" whose value is a list of 10 strings, and no other things.";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: "user".into(),
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: "assistant".into(),
            content: content.into(),
        }
    }
}

pub trait ChatClient: Send + Sync {
    /// Returns the assistant's reply text.
    fn chat(&self, messages: &[ChatMessage]) -> Result<String>;
}

/// Chat-completions client: POST `{model, messages}` and read
/// `choices[0].message.content`.
pub struct HttpChatClient {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpChatClient {
    pub fn new(endpoint: &str, model: &str, api_key: Option<String>) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(300))
            .build()
            .map_err(|e| Error::Service(e.to_string()))?;
        Ok(Self {
            endpoint: endpoint.to_string(),
            model: model.to_string(),
            api_key,
            client,
        })
    }

    /// Reads the API key from `INBEDDER_CHAT_API_KEY`.
    pub fn from_env(endpoint: &str, model: &str) -> Result<Self> {
        Self::new(endpoint, model, std::env::var(CHAT_API_KEY_ENV).ok())
    }
}

impl ChatClient for HttpChatClient {
    fn chat(&self, messages: &[ChatMessage]) -> Result<String> {
        let mut req = self
            .client
            .post(&self.endpoint)
            .json(&json!({ "model": self.model, "messages": messages }));
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| Error::Service(e.to_string()))?;
        let status = resp.status();
        let body: Value = resp.json().map_err(|e| Error::Service(e.to_string()))?;
        if !status.is_success() {
            return Err(Error::Service(format!("{status}: {body}")));
        }
        body["choices"][0]["message"]["content"]
            .as_str()
            .map(String::from)
            .ok_or_else(|| Error::Service("response has no choices[0].message.content".into()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Recipe {
    IntentEmotion,
    InstructStsb,
    RobustnessInstructions,
}

impl FromStr for Recipe {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(Value::String(s.to_string()))
            .map_err(|_| Error::Usage(format!("unknown recipe {s:?} (intent-emotion, instruct-stsb, robustness-instructions)")))
    }
}

/// The first `{...}` span of a reply, parsed as a JSON object.
pub fn extract_json_object(reply: &str) -> Option<serde_json::Map<String, Value>> {
    let start = reply.find('{')?;
    let end = reply.rfind('}')?;
    if end < start {
        return None;
    }
    match serde_json::from_str(&reply[start..=end]) {
        Ok(Value::Object(m)) => Some(m),
        _ => None,
    }
}

fn string_fields(keys: &'static [&'static str]) -> impl Fn(&serde_json::Map<String, Value>) -> Option<Vec<String>> {
    move |m| {
        keys.iter()
            .map(|k| m.get(*k).and_then(Value::as_str).map(str::trim).filter(|s| !s.is_empty()).map(String::from))
            .collect()
    }
}

fn instruction_list(m: &serde_json::Map<String, Value>) -> Option<Vec<String>> {
    let list: Vec<String> = m
        .get("instructions")?
        .as_array()?
        .iter()
        .map(|v| v.as_str().map(str::trim).filter(|s| !s.is_empty()).map(String::from))
        .collect::<Option<_>>()?;
    (list.len() == ROBUSTNESS_SET_SIZE).then_some(list)
}

/// Sends `messages`, retrying malformed replies. Returns the raw reply and the parsed value.
pub fn ask<T, P>(client: &dyn ChatClient, messages: &[ChatMessage], parse: P) -> Result<(String, T)>
where
    P: Fn(&serde_json::Map<String, Value>) -> Option<T>,
{
    let mut last = String::new();
    for _ in 0..MAX_ATTEMPTS {
        let reply = client.chat(messages)?;
        if let Some(v) = extract_json_object(&reply).as_ref().and_then(&parse) {
            return Ok((reply, v));
        }
        last = reply;
    }
    Err(Error::UnparseableResponse {
        attempts: MAX_ATTEMPTS,
        last,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntentEmotionSeed {
    pub text: String,
    pub intent: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSeed {
    pub sentence1: String,
    pub sentence2: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionSeed {
    pub instruction: String,
}

/// Two emotion variants, then two intent-shifted variants, grouped into four triplets.
pub fn synthesize_intent_emotion(
    seed: &IntentEmotionSeed,
    client: &dyn ChatClient,
    instructions: &CriterionInstructions,
) -> Result<Vec<Value>> {
    let first = ChatMessage::user(MODIFY_EMOTION.replace("[INTENT]", &seed.intent).replace("[TEXT]", &seed.text));
    let (reply, v1) = ask(client, std::slice::from_ref(&first), string_fields(&["optimistic", "frustrating"]))?;
    let second = ChatMessage::user(MODIFY_INTENT.replace("[INTENT]", &seed.intent));
    let convo = [first, ChatMessage::assistant(reply), second];
    let (_, v2) = ask(client, &convo, string_fields(&["optimistic", "frustrating"]))?;
    let triplets = group_triplets(&v1[0], &v1[1], &v2[0], &v2[1], instructions)?;
    Ok(triplets.iter().map(|t| serde_json::to_value(t).expect("plain struct")).collect())
}

/// A discriminating question (rating 0) then a non-discriminating one (rating 1).
pub fn synthesize_instruct_stsb(seed: &PairSeed, client: &dyn ChatClient) -> Result<Vec<Value>> {
    let first = ChatMessage::user(
        DISCRIMINATE
            .replace("[SENTENCE1]", &seed.sentence1)
            .replace("[SENTENCE2]", &seed.sentence2),
    );
    let (reply, q1) = ask(client, std::slice::from_ref(&first), string_fields(&["question"]))?;
    let convo = [first, ChatMessage::assistant(reply), ChatMessage::user(NOT_DISCRIMINATE)];
    let (_, q2) = ask(client, &convo, string_fields(&["question"]))?;
    let pair = |instruction: &str, rating| PairExample {
        sentence1: seed.sentence1.clone(),
        sentence2: seed.sentence2.clone(),
        instruction: instruction.to_string(),
        rating,
    };
    Ok([pair(&q1[0], 0), pair(&q2[0], 1)]
        .iter()
        .map(|p| serde_json::to_value(p).expect("plain struct"))
        .collect())
}

pub fn synthesize_robustness_instructions(seed: &InstructionSeed, client: &dyn ChatClient) -> Result<Vec<Value>> {
    let mut out = serde_json::Map::new();
    for (set, kind) in [
        (InstructionSet::Correct, "ask for the same thing in different words"),
        (InstructionSet::Implicit, "ask for the same thing only indirectly, without naming it"),
        (InstructionSet::Incorrect, "ask about a different, unrelated property of the documents"),
    ] {
        let msg = ChatMessage::user(REWRITE_INSTRUCTION.replace("[INSTRUCTION]", &seed.instruction).replace("[KIND]", kind));
        let (_, list) = ask(client, &[msg], instruction_list)?;
        out.insert(serde_json::to_value(set).expect("enum").as_str().unwrap().to_string(), json!(list));
    }
    Ok(vec![json!({ "instructions": out })])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReviewStatus {
    Generated,
    Flagged,
}

/// One seed's outcome, written to the review file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReviewEntry {
    pub recipe: Recipe,
    pub seed: Value,
    pub status: ReviewStatus,
    pub items: Vec<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Runs `recipe` over raw seeds. Unparseable replies and malformed seeds are
/// flagged per item; service failures abort the run.
pub fn synthesize_benchmark_items(
    seeds: &[Value],
    client: &dyn ChatClient,
    recipe: Recipe,
    instructions: &CriterionInstructions,
) -> Result<Vec<ReviewEntry>> {
    let mut out = Vec::with_capacity(seeds.len());
    for seed in seeds {
        let result = match recipe {
            Recipe::IntentEmotion => serde_json::from_value(seed.clone())
                .map_err(Error::from)
                .and_then(|s| synthesize_intent_emotion(&s, client, instructions)),
            Recipe::InstructStsb => serde_json::from_value(seed.clone())
                .map_err(Error::from)
                .and_then(|s| synthesize_instruct_stsb(&s, client)),
            Recipe::RobustnessInstructions => serde_json::from_value(seed.clone())
                .map_err(Error::from)
                .and_then(|s| synthesize_robustness_instructions(&s, client)),
        };
        let entry = match result {
            Ok(items) => ReviewEntry {
                recipe,
                seed: seed.clone(),
                status: ReviewStatus::Generated,
                items,
                error: None,
            },
            Err(e @ (Error::Service(_) | Error::BackendUnreachable(_))) => return Err(e),
            Err(e) => ReviewEntry {
                recipe,
                seed: seed.clone(),
                status: ReviewStatus::Flagged,
                items: Vec::new(),
                error: Some(e.to_string()),
            },
        };
        out.push(entry);
    }
    Ok(out)
}

/// Items of the `generated` entries, in order.
pub fn promote(entries: &[ReviewEntry]) -> Vec<Value> {
    entries
        .iter()
        .filter(|e| e.status == ReviewStatus::Generated)
        .flat_map(|e| e.items.iter().cloned())
        .collect()
}
