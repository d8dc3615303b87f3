//! Training-corpus preparation: QA triplets with stopword-stripped answers.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::backend::DEFAULT_MASK_COUNT;
use crate::encoding::filter::normalize_token;
use crate::error::{Error, Result};
use crate::prompting::{render_prompt, PromptTemplate};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QATriplet {
    pub paragraph: String,
    pub question: String,
    pub answer: String,
}

impl QATriplet {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("paragraph", &self.paragraph), ("question", &self.question), ("answer", &self.answer)] {
            if v.trim().is_empty() {
                return Err(Error::EmptyField(name));
            }
        }
        Ok(())
    }
}

/// Drops stopword tokens; keeps the original when nothing would survive.
pub fn simplify_answer(answer: &str, stopwords: &BTreeSet<String>) -> Result<String> {
    if answer.trim().is_empty() {
        return Err(Error::EmptyAnswer);
    }
    let kept: Vec<&str> = answer
        .split_whitespace()
        .filter(|t| !stopwords.contains(&normalize_token(t)))
        .collect();
    if kept.is_empty() {
        return Ok(answer.to_string());
    }
    Ok(kept.join(" "))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub prompt: String,
    pub target: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlmExample {
    pub masked: String,
    pub targets: Vec<String>,
}

pub fn format_training_example(
    t: &QATriplet,
    template: &PromptTemplate,
    stopwords: &BTreeSet<String>,
) -> Result<TrainingExample> {
    t.validate()?;
    let prompt = render_prompt(&t.paragraph, &t.question, template)?;
    Ok(TrainingExample {
        prompt: prompt.text,
        target: simplify_answer(&t.answer, stopwords)?,
    })
}

/// Prompt followed by one mask per target token.
pub fn format_mlm_training_example<F>(
    t: &QATriplet,
    template: &PromptTemplate,
    stopwords: &BTreeSet<String>,
    mask_token: &str,
    tokenize: F,
) -> Result<MlmExample>
where
    F: Fn(&str) -> Vec<String>,
{
    if mask_token.is_empty() {
        return Err(Error::EmptyField("mask_token"));
    }
    let ex = format_training_example(t, template, stopwords)?;
    let targets = tokenize(&ex.target);
    Ok(MlmExample {
        masked: append_masks(&ex.prompt, mask_token, targets.len()),
        targets,
    })
}

/// The inference-time variant: always [`DEFAULT_MASK_COUNT`] masks.
pub fn format_mlm_inference_prompt(paragraph: &str, question: &str, template: &PromptTemplate, mask_token: &str) -> Result<String> {
    let prompt = render_prompt(paragraph, question, template)?;
    Ok(append_masks(&prompt.text, mask_token, DEFAULT_MASK_COUNT))
}

fn append_masks(prompt: &str, mask: &str, n: usize) -> String {
    let mut out = String::with_capacity(prompt.len() + n * mask.len());
    out.push_str(prompt);
    for _ in 0..n {
        out.push_str(mask);
    }
    out
}

pub fn whitespace_tokens(text: &str) -> Vec<String> {
    text.split_whitespace().map(String::from).collect()
}

/// Reads `{"paragraph","question","answer"}` lines; blank lines are skipped.
pub fn read_qa_jsonl<R: BufRead>(reader: R, path: &str) -> Result<Vec<QATriplet>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let dataset_err = |message: String| Error::Dataset {
            path: path.to_string(),
            line: i + 1,
            message,
        };
        let t: QATriplet = serde_json::from_str(&line).map_err(|e| dataset_err(e.to_string()))?;
        t.validate().map_err(|e| dataset_err(e.to_string()))?;
        out.push(t);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrepReport {
    pub examples: usize,
    pub mean_target_tokens: f64,
}

pub fn write_jsonl<W: Write, T: Serialize>(mut w: W, items: &[T]) -> Result<()> {
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn mean_target_tokens<'a, I: IntoIterator<Item = &'a str>>(targets: I) -> f64 {
    let (mut n, mut total) = (0usize, 0usize);
    for t in targets {
        n += 1;
        total += t.split_whitespace().count();
    }
    if n == 0 {
        0.0
    } else {
        total as f64 / n as f64
    }
}
