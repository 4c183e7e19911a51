// SPDX-License-Identifier: MIT OR Apache-2.0

//! Action extraction from free-text completions.
//!
//! Rule: take the last line that begins with `Action:` (case-insensitive,
//! leading whitespace allowed) and within it the last mention of the
//! scenario entity followed by an integer (`Button 2`, `slot machine 1`).
//! Entity mentions in the thought are ignored when an action line exists.
//! Without any action line the whole completion is scanned and the last
//! mention wins. Numbers are 1-based in text and 0-based in the result.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prompting::ScenarioKind;

static BUTTON: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\bbutton\s+([0-9]+)").unwrap());
static SLOT_MACHINE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\bslot\s+machine\s+([0-9]+)").unwrap());

const ACTION_PREFIX: &str = "action:";

/// A successfully parsed action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedAction {
    pub arm: usize,
    /// Byte range of the entity mention (`Button 2`) within the completion.
    pub span: (usize, usize),
}

fn entity_regex(scenario: ScenarioKind) -> &'static Regex {
    match scenario {
        ScenarioKind::Buttons => &BUTTON,
        ScenarioKind::SlotMachines => &SLOT_MACHINE,
    }
}

/// Byte range of the last line starting with `Action:`.
fn last_action_line(completion: &str) -> Option<(usize, usize)> {
    let mut found = None;
    let mut start = 0;
    for line in completion.split_inclusive('\n') {
        let body = line.trim_start();
        let is_action = body
            .get(..ACTION_PREFIX.len())
            .is_some_and(|p| p.eq_ignore_ascii_case(ACTION_PREFIX));
        if is_action {
            found = Some((start, start + line.len()));
        }
        start += line.len();
    }
    found
}

/// Extract the arm chosen by `completion`, or `None` if it is invalid.
pub fn parse_action(completion: &str, scenario: ScenarioKind, n_arms: usize) -> Option<ParsedAction> {
    let (lo, hi) = last_action_line(completion).unwrap_or((0, completion.len()));
    let caps = entity_regex(scenario).captures_iter(&completion[lo..hi]).last()?;
    let whole = caps.get(0)?;
    let n: usize = caps.get(1)?.as_str().parse().ok()?;
    if n == 0 || n > n_arms {
        return None;
    }
    Some(ParsedAction {
        arm: n - 1,
        span: (lo + whole.start(), lo + whole.end()),
    })
}

/// [`parse_action`] over raw bytes; malformed UTF-8 is an error.
pub fn parse_action_bytes(
    completion: &[u8],
    scenario: ScenarioKind,
    n_arms: usize,
) -> Result<Option<ParsedAction>> {
    let text = std::str::from_utf8(completion).map_err(|_| Error::InvalidUtf8)?;
    Ok(parse_action(text, scenario, n_arms))
}

/// Parsed arms of a batch, duplicates preserved in completion order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BatchParse {
    pub arms: Vec<usize>,
    pub n_invalid: usize,
}

pub fn parse_batch<S: AsRef<str>>(completions: &[S], scenario: ScenarioKind, n_arms: usize) -> BatchParse {
    let mut out = BatchParse::default();
    for c in completions {
        match parse_action(c.as_ref(), scenario, n_arms) {
            Some(p) => out.arms.push(p.arm),
            None => out.n_invalid += 1,
        }
    }
    out
}
