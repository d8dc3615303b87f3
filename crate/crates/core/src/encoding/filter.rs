//! Filtered `avg-gen`: drop generation rows linked to uninformative tokens.

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::aggregate::{check_available, first_sample_layer, gen_len, mean_rows};
use super::Method;
use crate::backend::GenerationRecord;
use crate::error::{Error, Result};
use crate::math::Embedding;

const DEFAULT_STOPWORDS: &str = include_str!("../../data/stopwords_en.txt");
const DEFAULT_PHRASES: &str = include_str!("../../data/phrases_en.txt");

/// The pinned 179-word English stopword list.
pub fn default_stopwords() -> BTreeSet<String> {
    DEFAULT_STOPWORDS.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect()
}

pub fn default_phrases() -> Vec<String> {
    DEFAULT_PHRASES.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect()
}

/// Lowercases, drops subword boundary markers and trims surrounding punctuation.
pub fn normalize_token(token: &str) -> String {
    let t = token.trim_start_matches(['\u{2581}', '\u{0120}', '\u{010A}']);
    let t = t.strip_prefix("##").unwrap_or(t);
    t.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase()
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterConfig {
    #[serde(default)]
    pub stopwords: BTreeSet<String>,
    #[serde(default)]
    pub phrases: Vec<String>,
    #[serde(default)]
    pub exclude_instruction_tokens: bool,
}

impl FilterConfig {
    /// Pinned stopwords, the shipped phrase list and instruction-token exclusion.
    pub fn english() -> Self {
        Self {
            stopwords: default_stopwords(),
            phrases: default_phrases(),
            exclude_instruction_tokens: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(w) = self.stopwords.iter().find(|w| w.to_lowercase() != **w) {
            return Err(Error::InvalidRequest(format!("stopword {w:?} is not lowercase")));
        }
        if self.phrases.iter().any(|p| normalized_words(p).is_empty()) {
            return Err(Error::InvalidRequest("filter phrases must be non-empty".into()));
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let cfg: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn is_empty(&self) -> bool {
        self.stopwords.is_empty() && self.phrases.is_empty() && !self.exclude_instruction_tokens
    }

    /// For each token, whether it should be excluded.
    pub fn excluded(&self, tokens: &[String], instruction: &str) -> Vec<bool> {
        let norm: Vec<String> = tokens.iter().map(|t| normalize_token(t)).collect();
        let instruction_words: HashSet<String> = if self.exclude_instruction_tokens {
            normalized_words(instruction).into_iter().collect()
        } else {
            HashSet::new()
        };
        let mut out: Vec<bool> = norm
            .iter()
            .map(|t| !t.is_empty() && (self.stopwords.contains(t) || instruction_words.contains(t)))
            .collect();
        for phrase in &self.phrases {
            let words = normalized_words(phrase);
            if words.is_empty() || words.len() > norm.len() {
                continue;
            }
            for start in 0..=norm.len() - words.len() {
                if norm[start..start + words.len()] == words[..] {
                    out[start..start + words.len()].iter_mut().for_each(|x| *x = true);
                }
            }
        }
        out
    }
}

fn normalized_words(text: &str) -> Vec<String> {
    text.split_whitespace().map(normalize_token).filter(|w| !w.is_empty()).collect()
}

/// `avg-gen` restricted to rows whose linked token survives the filter.
///
/// Row `N-1 + (j-1)` is linked to answer token `t_j`; the terminal row
/// `N+G-1` is linked to the last token. When every row is excluded the
/// unfiltered `avg-gen` is returned.
pub fn filtered_avg_gen(record: &GenerationRecord, layer: i64, filter: &FilterConfig, instruction: &str) -> Result<Embedding> {
    check_available(Method::AvgGen, record.architecture_mode)?;
    let m = first_sample_layer(record, layer)?;
    let g = gen_len(record)?;
    let n = record.prompt_len;
    if n == 0 {
        return Err(Error::DegenerateRecord("empty prompt".into()));
    }
    let tokens = &record.samples[0].tokens;
    let special = &record.special_token_positions[0];
    let excluded = filter.excluded(tokens, instruction);
    let linked = |row: usize| (row - (n - 1)).min(g - 1);

    let span = || (n - 1..=n + g - 1).filter(|r| !special.contains(r));
    let kept: Vec<usize> = span().filter(|&r| !excluded[linked(r)]).collect();
    if kept.is_empty() {
        return mean_rows(m, span(), "avg-gen");
    }
    mean_rows(m, kept, "filtered avg-gen")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{ArchitectureMode, GenerationSample, HiddenStates};
    use crate::encoding::aggregate::direct_aggregate;
    use std::collections::BTreeMap;

    fn record(prompt_rows: usize, tokens: &[&str]) -> GenerationRecord {
        let g = tokens.len();
        let rows: Vec<Vec<f32>> = (0..prompt_rows + g).map(|i| vec![i as f32, (i * i) as f32]).collect();
        GenerationRecord {
            prompt_len: prompt_rows,
            num_layers: 1,
            dim: 2,
            architecture_mode: ArchitectureMode::Causal,
            samples: vec![GenerationSample {
                tokens: tokens.iter().map(|s| s.to_string()).collect(),
                token_ids: (0..g as u32).collect(),
                text: tokens.join(" "),
                finished_with_eos: true,
            }],
            hidden: vec![BTreeMap::from([(1, HiddenStates::from_rows(&rows).unwrap())])],
            special_token_positions: vec![BTreeSet::new()],
        }
    }

    #[test]
    fn pinned_list_size() {
        assert_eq!(default_stopwords().len(), 179);
        assert_eq!(default_phrases(), vec!["Based on", "Sure", "The answer is"]);
        FilterConfig::english().validate().unwrap();
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize_token("The,"), "the");
        assert_eq!(normalize_token("\u{2581}Based"), "based");
        assert_eq!(normalize_token("\u{0120}On"), "on");
        assert_eq!(normalize_token("##ing"), "ing");
        assert_eq!(normalize_token("\"don't!\""), "don't");
        assert_eq!(normalize_token("..."), "");
    }

    #[test]
    fn single_surviving_row() {
        // N = 3, tokens Based/on/sports: rows 2 (Based), 3 (on), 4 (sports), terminal 5 (sports).
        let r = record(3, &["Based", "on", "sports"]);
        let filter = FilterConfig {
            stopwords: BTreeSet::from(["on".to_string()]),
            phrases: vec!["Based on".into()],
            exclude_instruction_tokens: false,
        };
        let e = filtered_avg_gen(&r, -1, &filter, "What topic?").unwrap();
        let m = &r.hidden[0][&1];
        let expect = [(m.row(4)[0] + m.row(5)[0]) as f64 / 2.0, (m.row(4)[1] + m.row(5)[1]) as f64 / 2.0];
        assert_eq!(e.values(), &expect);
    }

    #[test]
    fn single_surviving_row_without_terminal_duplicate() {
        // Only the first token survives: its row is N-1 alone.
        let r = record(2, &["sports", "the"]);
        let filter = FilterConfig {
            stopwords: BTreeSet::from(["the".to_string()]),
            ..FilterConfig::default()
        };
        let e = filtered_avg_gen(&r, -1, &filter, "q").unwrap();
        assert_eq!(e, Embedding::from_f32(r.hidden[0][&1].row(1)).unwrap());
    }

    #[test]
    fn empty_filter_is_identity() {
        let r = record(4, &["a", "b", "c"]);
        let e = filtered_avg_gen(&r, -1, &FilterConfig::default(), "a b c").unwrap();
        assert_eq!(e, direct_aggregate(&r, Method::AvgGen, -1).unwrap());
    }

    #[test]
    fn all_filtered_falls_back() {
        let r = record(4, &["the", "of", "a"]);
        let e = filtered_avg_gen(&r, -1, &FilterConfig::english(), "q").unwrap();
        assert_eq!(e, direct_aggregate(&r, Method::AvgGen, -1).unwrap());
    }

    #[test]
    fn instruction_tokens_excluded_when_enabled() {
        let r = record(2, &["topic", "sports"]);
        let mut f = FilterConfig {
            exclude_instruction_tokens: true,
            ..FilterConfig::default()
        };
        assert_eq!(f.excluded(&r.samples[0].tokens, "What is the topic?"), vec![true, false]);
        f.exclude_instruction_tokens = false;
        assert_eq!(f.excluded(&r.samples[0].tokens, "What is the topic?"), vec![false, false]);
    }

    #[test]
    fn validation() {
        let bad = FilterConfig {
            stopwords: BTreeSet::from(["The".to_string()]),
            ..FilterConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = FilterConfig {
            phrases: vec!["  ".into()],
            ..FilterConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
