//! Direct encodings: pooling a record's hidden states into one vector.
//!
//! With `N` prompt rows and `G` generation rows (0-based row `r` holds the
//! state at position `r + 1`):
//!
//! | method     | rows                      |
//! |------------|---------------------------|
//! | `avg-gen`  | mean of `N-1 ..= N+G-1`   |
//! | `avg-ppt`  | mean of `0 ..= N-2`       |
//! | `1st-gen`  | `N-1`                     |
//! | `last-gen` | `N+G-1`                   |
//! | `avg-all`  | mean of `0 ..= N+G-1`     |
//!
//! `avg-gen` deliberately includes row `N-1`, the state that predicts the
//! first answer token. Special-token rows are skipped in every mean.

use std::collections::BTreeSet;
use std::ops::RangeInclusive;

use super::Method;
use crate::backend::{resolve_layer, ArchitectureMode, GenerationRecord, HiddenStates};
use crate::error::{Error, Result};
use crate::math::{Embedding, MeanAccumulator};

/// Whether `method` is defined for models of the given architecture.
pub fn method_available(method: Method, mode: ArchitectureMode) -> bool {
    match mode {
        ArchitectureMode::Causal => true,
        // Encoder and decoder states live in different spaces.
        ArchitectureMode::EncoderDecoder => method != Method::AvgAll,
        // Mask rows are filled in one pass; there is no first or last step.
        ArchitectureMode::EncoderOnly => !matches!(method, Method::FirstGen | Method::LastGen),
    }
}

pub(crate) fn check_available(method: Method, mode: ArchitectureMode) -> Result<()> {
    if method_available(method, mode) {
        Ok(())
    } else {
        Err(Error::MethodUnavailableForMode {
            method: method.to_string(),
            mode: mode.to_string(),
        })
    }
}

/// Hidden matrix of the first sample at `layer` (negative indices count from the end).
pub(crate) fn first_sample_layer(record: &GenerationRecord, layer: i64) -> Result<&HiddenStates> {
    let resolved = resolve_layer(layer, record.num_layers)?;
    record
        .hidden
        .first()
        .and_then(|h| h.get(&resolved))
        .ok_or(Error::LayerMissing(layer))
}

pub(crate) fn gen_len(record: &GenerationRecord) -> Result<usize> {
    let g = record.samples.first().map_or(0, |s| s.n_gen());
    if g == 0 {
        return Err(Error::DegenerateRecord("no generated tokens".into()));
    }
    Ok(g)
}

pub(crate) fn mean_rows<I>(m: &HiddenStates, rows: I, what: &str) -> Result<Embedding>
where
    I: IntoIterator<Item = usize>,
{
    let mut acc = MeanAccumulator::new(m.dim());
    for r in rows {
        acc.push_f32(m.row(r));
    }
    match acc.finish() {
        Some(mean) => Embedding::new(mean),
        None => Err(Error::DegenerateRecord(format!("no rows left to average for {what}"))),
    }
}

fn non_special<'a>(
    range: RangeInclusive<usize>,
    special: &'a BTreeSet<usize>,
) -> impl Iterator<Item = usize> + 'a {
    range.filter(move |r| !special.contains(r))
}

/// Pools the first sample's hidden states at `layer` with one of the five direct methods.
pub fn direct_aggregate(record: &GenerationRecord, method: Method, layer: i64) -> Result<Embedding> {
    if method == Method::ReEnc {
        return Err(Error::InvalidRequest("re-enc is not a direct aggregation".into()));
    }
    check_available(method, record.architecture_mode)?;
    let m = first_sample_layer(record, layer)?;
    let n = record.prompt_len;
    let g = gen_len(record)?;
    if n == 0 {
        return Err(Error::DegenerateRecord("empty prompt".into()));
    }
    let empty = BTreeSet::new();
    let special = record.special_token_positions.first().unwrap_or(&empty);
    match method {
        Method::AvgGen => mean_rows(m, non_special(n - 1..=n + g - 1, special), "avg-gen"),
        Method::AvgPpt => {
            if n < 2 {
                return Err(Error::DegenerateRecord("avg-ppt needs at least two prompt tokens".into()));
            }
            mean_rows(m, non_special(0..=n - 2, special), "avg-ppt")
        }
        Method::FirstGen => Embedding::from_f32(m.row(n - 1)),
        Method::LastGen => Embedding::from_f32(m.row(n + g - 1)),
        Method::AvgAll => mean_rows(m, non_special(0..=n + g - 1, special), "avg-all"),
        Method::ReEnc => unreachable!(),
    }
}
