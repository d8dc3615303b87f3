//! Prompt rendering, token-budget enforcement and span bookkeeping.

use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const INPUT_PLACEHOLDER: &str = "{input}";
pub const INSTRUCTION_PLACEHOLDER: &str = "{instruction}";

pub const DEFAULT_PATTERN: &str =
    "### Input:\n{input}\n\n### Instruction:\n{instruction}\n\n### Response:";

/// Prefix used with chat-tuned models to induce short answers.
pub const CHAT_PREFIX: &str =
    "Your task is to give an answer according to the instruction and input. Please keep your answer short.";

/// Joins the prefix and the pattern.
pub const PREFIX_SEPARATOR: &str = "\n\n";

pub const DEFAULT_TOKEN_BUDGET: usize = 512;

/// Section headers that may not occur inside benchmark texts.
pub const RESERVED_SEPARATORS: [&str; 3] = ["### Input:", "### Instruction:", "### Response:"];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pattern: String,
    prefix: Option<String>,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self {
            pattern: DEFAULT_PATTERN.to_string(),
            prefix: None,
        }
    }
}

impl PromptTemplate {
    pub fn new(pattern: impl Into<String>, prefix: Option<String>) -> Result<Self> {
        let pattern = pattern.into();
        for ph in [INPUT_PLACEHOLDER, INSTRUCTION_PLACEHOLDER] {
            let n = pattern.matches(ph).count();
            if n != 1 {
                return Err(Error::MalformedTemplate(format!(
                    "expected exactly one {ph}, found {n}"
                )));
            }
        }
        Ok(Self { pattern, prefix })
    }

    /// The default pattern preceded by the short-answer chat prefix.
    pub fn chat() -> Self {
        Self {
            pattern: DEFAULT_PATTERN.to_string(),
            prefix: Some(CHAT_PREFIX.to_string()),
        }
    }

    /// Parses a template file. An optional first line `PREFIX: <text>` sets the prefix;
    /// the remainder is the pattern.
    pub fn parse_file_contents(contents: &str) -> Result<Self> {
        let (prefix, pattern) = match contents.split_once('\n') {
            Some((first, rest)) if first.starts_with("PREFIX:") => {
                (Some(first["PREFIX:".len()..].trim().to_string()), rest)
            }
            _ if contents.starts_with("PREFIX:") => {
                return Err(Error::MalformedTemplate("PREFIX line without pattern".into()))
            }
            _ => (None, contents),
        };
        // Editors add a trailing newline; the response header must end the prompt.
        let pattern = pattern.strip_suffix('\n').unwrap_or(pattern);
        Self::new(pattern, prefix.filter(|p| !p.is_empty()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse_file_contents(&std::fs::read_to_string(path)?)
    }

    pub fn pattern(&self) -> &str {
        &self.pattern
    }

    pub fn prefix(&self) -> Option<&str> {
        self.prefix.as_deref()
    }

    /// Literal text that follows the last placeholder (the response header for the default).
    pub fn suffix(&self) -> &str {
        let i = self.pattern.find(INPUT_PLACEHOLDER).unwrap() + INPUT_PLACEHOLDER.len();
        let j = self.pattern.find(INSTRUCTION_PLACEHOLDER).unwrap() + INSTRUCTION_PLACEHOLDER.len();
        &self.pattern[i.max(j)..]
    }

    fn lead(&self) -> String {
        match &self.prefix {
            Some(p) => format!("{p}{PREFIX_SEPARATOR}"),
            None => String::new(),
        }
    }

    /// Recovers `(input, instruction)` from a prompt rendered with this template.
    pub fn parse(&self, text: &str) -> Option<(String, String)> {
        let body = text.strip_prefix(&self.lead())?;
        let i = self.pattern.find(INPUT_PLACEHOLDER)?;
        let j = self.pattern.find(INSTRUCTION_PLACEHOLDER)?;
        let input_first = i < j;
        let (first, second) = if input_first {
            (INPUT_PLACEHOLDER, INSTRUCTION_PLACEHOLDER)
        } else {
            (INSTRUCTION_PLACEHOLDER, INPUT_PLACEHOLDER)
        };
        let (head, rest) = self.pattern.split_once(first)?;
        let (mid, tail) = rest.split_once(second)?;
        let body = body.strip_prefix(head)?.strip_suffix(tail)?;
        let (a, b) = body.split_once(mid)?;
        if input_first {
            Some((a.to_string(), b.to_string()))
        } else {
            Some((b.to_string(), a.to_string()))
        }
    }
}

/// A fully rendered prompt with byte spans of its two variable parts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub text: String,
    pub instruction_span: Range<usize>,
    pub input_span: Range<usize>,
    pub token_budget: usize,
}

impl RenderedPrompt {
    pub fn input(&self) -> &str {
        &self.text[self.input_span.clone()]
    }

    pub fn instruction(&self) -> &str {
        &self.text[self.instruction_span.clone()]
    }

    pub fn with_budget(mut self, budget: usize) -> Self {
        self.token_budget = budget;
        self
    }

    fn replace_input(&self, new_input: &str) -> Self {
        let span = self.input_span.clone();
        let mut text = String::with_capacity(self.text.len());
        text.push_str(&self.text[..span.start]);
        text.push_str(new_input);
        text.push_str(&self.text[span.end..]);
        let shift = |r: &Range<usize>| {
            if r.start >= span.end {
                let d = span.len() as isize - new_input.len() as isize;
                (r.start as isize - d) as usize..(r.end as isize - d) as usize
            } else {
                r.clone()
            }
        };
        Self {
            instruction_span: shift(&self.instruction_span),
            input_span: span.start..span.start + new_input.len(),
            text,
            token_budget: self.token_budget,
        }
    }
}

pub fn render_prompt(input: &str, instruction: &str, template: &PromptTemplate) -> Result<RenderedPrompt> {
    if input.trim().is_empty() {
        return Err(Error::EmptyField("input"));
    }
    if instruction.trim().is_empty() {
        return Err(Error::EmptyField("instruction"));
    }
    let mut text = template.lead();
    let mut input_span = 0..0;
    let mut instruction_span = 0..0;
    let mut rest = template.pattern.as_str();
    while !rest.is_empty() {
        let next_in = rest.find(INPUT_PLACEHOLDER);
        let next_ins = rest.find(INSTRUCTION_PLACEHOLDER);
        let (pos, ph, value, is_input) = match (next_in, next_ins) {
            (Some(a), Some(b)) if a < b => (a, INPUT_PLACEHOLDER, input, true),
            (Some(a), None) => (a, INPUT_PLACEHOLDER, input, true),
            (_, Some(b)) => (b, INSTRUCTION_PLACEHOLDER, instruction, false),
            (None, None) => {
                text.push_str(rest);
                break;
            }
        };
        text.push_str(&rest[..pos]);
        let span = text.len()..text.len() + value.len();
        text.push_str(value);
        if is_input {
            input_span = span;
        } else {
            instruction_span = span;
        }
        rest = &rest[pos + ph.len()..];
    }
    Ok(RenderedPrompt {
        text,
        instruction_span,
        input_span,
        token_budget: DEFAULT_TOKEN_BUDGET,
    })
}

/// Shortens the input from the right until the whole prompt fits the token budget.
///
/// The instruction and the template text are never modified.
pub fn truncate_input<F>(prompt: &RenderedPrompt, token_len: F) -> Result<RenderedPrompt>
where
    F: Fn(&str) -> usize,
{
    try_truncate_input(prompt, |t| Ok(token_len(t)))
}

/// [`truncate_input`] with a fallible length callback (remote tokenizers).
pub fn try_truncate_input<F>(prompt: &RenderedPrompt, token_len: F) -> Result<RenderedPrompt>
where
    F: Fn(&str) -> Result<usize>,
{
    let budget = prompt.token_budget;
    if token_len(&prompt.text)? <= budget {
        return Ok(prompt.clone());
    }
    let bare = prompt.replace_input("");
    let needed = token_len(&bare.text)?;
    if needed > budget {
        return Err(Error::BudgetTooSmall { budget, needed });
    }

    let input = prompt.input();
    let boundaries: Vec<usize> = input
        .char_indices()
        .map(|(i, _)| i)
        .chain(std::iter::once(input.len()))
        .collect();
    let fits = |end: usize| -> Result<bool> { Ok(token_len(&prompt.replace_input(&input[..end]).text)? <= budget) };

    // Largest prefix that fits; boundaries[0] == 0 always fits.
    let (mut lo, mut hi) = (0usize, boundaries.len() - 1);
    while lo < hi {
        let mid = (lo + hi).div_ceil(2);
        if fits(boundaries[mid])? {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    // Tokenizers are not strictly monotone in prefix length; walk back if needed.
    while lo > 0 && !fits(boundaries[lo])? {
        lo -= 1;
    }
    Ok(prompt.replace_input(&input[..boundaries[lo]]))
}

/// Rejects texts that contain a reserved section header.
pub fn check_no_separators(text: &str) -> std::result::Result<(), String> {
    match RESERVED_SEPARATORS.iter().find(|s| text.contains(*s)) {
        Some(s) => Err(format!("text contains reserved separator {s:?}")),
        None => Ok(()),
    }
}

/// Whitespace token count, the fallback length function when no tokenizer is available.
pub fn whitespace_token_len(text: &str) -> usize {
    text.split_whitespace().count()
}
